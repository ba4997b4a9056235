use arclab::harness::{
    ablation_rows, ablation_table, cosine_lr, generate, init_arc_state, init_velocity, train_arc, train_velocity,
    ExperimentConfig, PosttrainLog, RunDir, RunManifest, Sampler, Variant,
};
use arclab::evalkit::MetricReport;
use arclab::toydata::Prompt;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model.width = 16;
    cfg.model.hidden_layers = 3;
    cfg.model.head_width = 8;
    cfg.pretrain.iterations = 150;
    cfg.pretrain.batch_size = 64;
    cfg.pretrain.log_every = 50;
    cfg.pretrain.validate_every = 50;
    cfg.pretrain.validation_size = 256;
    cfg.posttrain.iterations = 12;
    cfg.posttrain.batch_size = 16;
    cfg.posttrain.log_every = 4;
    cfg.eval.samples_per_class = 48;
    cfg.eval.classifier.train_samples = 512;
    cfg.eval.classifier.epochs = 2;
    cfg.eval.measure_time = false;
    cfg
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(1e-3, 1e-5, 0, 100), 1e-3);
    assert!((cosine_lr(1e-3, 1e-5, 99, 100) - 1e-5).abs() < 1e-18);
    assert!((cosine_lr(1.0, 0.0, 50, 101) - 0.5).abs() < 1e-12);
    assert_eq!(cosine_lr(2.0, 0.0, 0, 1), 2.0);
    assert!((0..100).map(|i| cosine_lr(1.0, 0.0, i, 100)).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn zero_iterations_keep_the_initialization() {
    let mut cfg = tiny();
    cfg.pretrain.iterations = 0;
    let mut net = init_velocity(&cfg).unwrap();
    let before = net.clone();
    let log = train_velocity(&cfg, &mut net).unwrap();
    assert_eq!(net.params(), before.params());
    assert_eq!(log.validation.len(), 1);
}

#[test]
fn pretraining_lowers_validation_loss_and_replays() {
    let cfg = tiny();
    let mut a = init_velocity(&cfg).unwrap();
    let log = train_velocity(&cfg, &mut a).unwrap();
    assert!(log.final_validation().unwrap() < log.initial_validation().unwrap());
    assert_eq!(log.train.len(), 3);
    let mut b = init_velocity(&cfg).unwrap();
    train_velocity(&cfg, &mut b).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn posttraining_counts_updates_and_replays() {
    let cfg = tiny();
    let pre = init_velocity(&cfg).unwrap();
    let run = |variant| {
        let mut state = init_arc_state(&cfg, &pre).unwrap();
        let mut log = PosttrainLog::default();
        train_arc(&cfg, &mut state, variant, &mut log).unwrap();
        (state, log)
    };
    let (s1, log) = run(Variant::Arc);
    assert_eq!(log.counters.gen_updates, 12);
    assert_eq!(log.counters.disc_updates, 12);
    assert_eq!(log.counters.contrastive_evaluations, 12);
    assert_eq!(log.logged.len(), 3);
    let (s2, _) = run(Variant::Arc);
    assert_eq!(s1.gen.params(), s2.gen.params());
    assert_eq!(s1.disc.params(), s2.disc.params());
    assert_ne!(s1.gen.params(), pre.params());

    let (_, nc) = run(Variant::NoContrastive);
    assert_eq!(nc.counters.contrastive_evaluations, 0);
    assert_eq!(nc.counters.disc_updates, 12);
}

#[test]
fn extra_generator_steps_are_counted() {
    let mut cfg = tiny();
    cfg.posttrain.gen_steps_per_disc = 3;
    cfg.posttrain.iterations = 4;
    let pre = init_velocity(&cfg).unwrap();
    let mut state = init_arc_state(&cfg, &pre).unwrap();
    let mut log = PosttrainLog::default();
    train_arc(&cfg, &mut state, Variant::LeastSquares, &mut log).unwrap();
    assert_eq!((log.counters.gen_updates, log.counters.disc_updates), (12, 4));
}

#[test]
fn sampler_and_variant_names() {
    for s in [Sampler::Euler(50), Sampler::PingPong(8)] {
        assert_eq!(s.to_string().parse::<Sampler>().unwrap(), s);
    }
    assert_eq!(Sampler::PingPong(8).to_string(), "pingpong_8");
    for bad in ["euler", "euler_0", "heun_4", "pingpong_x"] {
        assert!(bad.parse::<Sampler>().is_err(), "{bad}");
    }
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("arc2".parse::<Variant>().is_err());
    let labels: Vec<&str> = ablation_rows().iter().map(|r| r.0).collect();
    assert_eq!(labels.len(), 7);
    assert!(labels.contains(&"arc@8") && labels.contains(&"least_squares@8"));
}

#[test]
fn generation_is_per_item_deterministic() {
    let cfg = tiny();
    let net = init_velocity(&cfg).unwrap();
    let prompts: Vec<Prompt> = (0..8).map(|i| Prompt::new(i % 4, 4).unwrap()).collect();
    for sampler in [Sampler::Euler(4), Sampler::PingPong(3)] {
        let a = generate(&net, &cfg, sampler, &prompts, 9).unwrap();
        let b = generate(&net, &cfg, sampler, &prompts[..5], 9).unwrap();
        assert_eq!(a.slice(ndarray::s![..5, ..]), b);
        assert_ne!(a, generate(&net, &cfg, sampler, &prompts, 10).unwrap());
    }
}

#[test]
fn ablation_table_writes_every_artifact() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    let mut manifest = RunManifest::begin(&run, "ablate", &cfg).unwrap();
    let reports = ablation_table(&cfg, &run, &mut manifest).unwrap();
    manifest.finish(&run, Ok(())).unwrap();
    assert_eq!(reports.len(), 7);
    for r in &reports {
        assert!(run.root().join(&r.samples).exists(), "{}", r.samples);
        assert!(run.root().join(&r.checkpoint).exists(), "{}", r.checkpoint);
        assert!((0.0..=1.0).contains(&r.adherence) && r.sw >= 0.0);
    }
    assert_eq!(MetricReport::read_csv(&run.file("metrics.csv")).unwrap(), reports);
    let m = RunManifest::read(&run.file("manifest.json")).unwrap();
    assert_eq!(m.status, "ok");
    assert_eq!(m.config_hash, cfg.hash());
    assert!(m.seeds.contains_key("posttrain-noise") && m.seeds.contains_key("eval-samples"));
    assert_eq!(m.checkpoints.len(), 2 + 2 * Variant::ALL.len());
    assert_eq!(ExperimentConfig::load(&run.file("config.toml")).unwrap(), cfg);
    assert!(run.file("pretrain_loss.csv").exists());
}
