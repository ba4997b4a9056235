//! Static SVG charts for metric tables. Output depends only on the input
//! files, so re-plotting the same CSV gives byte-identical SVGs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use arclab::evalkit::MetricReport;
use arclab::harness::ExperimentConfig;
use arclab::seeds::{derive, rng};
use arclab::toydata::{sample_balanced, LabeledBatch, Prompt};
use arclab::Error;
use log::{info, warn};
use ndarray::Array2;

use crate::{CliResult, Failure};

/// Points drawn per class and panel.
const MAX_POINTS: usize = 400;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

fn usage_error(message: String) -> Failure {
    Failure { code: 2, message }
}

fn io_error(path: &Path, source: std::io::Error) -> Failure {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

pub fn plot(metrics: &Path, out: &Path) -> CliResult {
    let text = fs::read_to_string(metrics).map_err(|e| io_error(metrics, e))?;
    let mut reports = Vec::new();
    if !text.trim().is_empty() {
        for rec in csv::Reader::from_reader(text.as_bytes()).deserialize::<MetricReport>() {
            reports.push(rec.map_err(|e| usage_error(format!("malformed metrics CSV {}: {e}", metrics.display())))?);
        }
    }
    if reports.is_empty() {
        warn!("{} has no rows; nothing to plot", metrics.display());
        return Ok(());
    }
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    for (name, _) in reports[0].values() {
        let values: Vec<(String, f64)> = reports
            .iter()
            .map(|r| (r.label.clone(), r.values().iter().find(|v| v.0 == name).expect("same keys").1))
            .collect();
        write(&out.join(format!("bar_{name}.svg")), &bar_chart(name, &values))?;
    }
    scatter_plots(metrics, &reports, out)
}

fn write(path: &Path, svg: &str) -> CliResult {
    fs::write(path, svg).map_err(|e| io_error(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bar_chart(metric: &str, values: &[(String, f64)]) -> String {
    let (w, h) = (720.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 120.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let finite: Vec<f64> = values.iter().map(|v| v.1).filter(|v| v.is_finite()).collect();
    let max = finite.iter().copied().fold(0.0, f64::max);
    let y_max = if max > 0.0 { max * 1.1 } else { 1.0 };
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, y_max) / y_max);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(metric));
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/>"##, w - right);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, yy + 4.0, tick(v));
    }
    let slot = plot_w / values.len() as f64;
    for (i, (label, v)) in values.iter().enumerate() {
        let x = left + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let cx = x + bw / 2.0;
        let color = PALETTE[i % PALETTE.len()];
        if v.is_finite() {
            let yy = y(*v);
            let _ = writeln!(s, r#"<rect x="{x:.2}" y="{yy:.2}" width="{bw:.2}" height="{:.2}" fill="{color}"/>"#, top + plot_h - yy);
            let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, yy - 4.0, tick(*v));
        } else {
            let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">n/a</text>"#, top + plot_h - 4.0);
        }
        let ly = top + plot_h + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-35 {cx:.2} {ly:.2})">{}</text>"#,
            escape(label)
        );
    }
    let _ = writeln!(s, r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#, top + plot_h, w - right, top + plot_h);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#, top + plot_h);
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.2e}")
    }
}

/// One SVG per class with a panel per table row: real points in grey,
/// generated points in colour.
fn scatter_plots(metrics: &Path, reports: &[MetricReport], out: &Path) -> CliResult {
    let base = metrics.parent().unwrap_or(Path::new("."));
    let cfg_path = base.join("config.toml");
    let cfg = if cfg_path.exists() {
        ExperimentConfig::load(&cfg_path)?
    } else {
        ExperimentConfig::default()
    };
    let spec = cfg.data.spec()?;
    if spec.dim() != 2 {
        warn!("scatter plots need 2-D samples; skipping");
        return Ok(());
    }
    let per_class = cfg.eval.samples_per_class.min(MAX_POINTS);
    let real = sample_balanced(&spec, per_class, &mut rng(derive(reports[0].seed, "eval-reference")))?;
    let generated: Vec<Option<LabeledBatch>> = reports
        .iter()
        .map(|r| {
            let path = base.join(&r.samples);
            match LabeledBatch::read_csv(&path, spec.num_classes()) {
                Ok(b) if b.dim() == 2 => Some(b),
                Ok(_) => {
                    warn!("{}: not 2-D; skipped", path.display());
                    None
                }
                Err(e) => {
                    warn!("samples for {} unavailable ({e}); panel left empty", r.label);
                    None
                }
            }
        })
        .collect();
    let lim = real.samples().iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1.15;
    for prompt in spec.prompts() {
        let svg = scatter(prompt, lim, &rows(&real, prompt), reports, &generated);
        write(&out.join(format!("scatter_class{}.svg", prompt.class_id())), &svg)?;
    }
    Ok(())
}

fn rows(batch: &LabeledBatch, prompt: Prompt) -> Array2<f64> {
    let picked: Vec<Vec<f64>> = batch.rows_for(prompt).into_iter().take(MAX_POINTS).collect();
    let n = picked.len();
    Array2::from_shape_vec((n, 2), picked.into_iter().flatten().collect()).expect("2-D rows")
}

fn scatter(
    prompt: Prompt,
    lim: f64,
    real: &Array2<f64>,
    reports: &[MetricReport],
    generated: &[Option<LabeledBatch>],
) -> String {
    let panel = 220.0;
    let gap = 30.0;
    let cols = reports.len().min(4);
    let grid_rows = reports.len().div_ceil(cols);
    let w = cols as f64 * (panel + gap) + gap;
    let h = grid_rows as f64 * (panel + gap + 20.0) + 50.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">class {}: generated vs real</text>"#,
        w / 2.0,
        prompt.class_id()
    );
    for (i, (report, batch)) in reports.iter().zip(generated).enumerate() {
        let x0 = gap + (i % cols) as f64 * (panel + gap);
        let y0 = 50.0 + (i / cols) as f64 * (panel + gap + 20.0);
        let map = |p: (f64, f64)| (x0 + panel * (p.0 + lim) / (2.0 * lim), y0 + 16.0 + panel * (lim - p.1) / (2.0 * lim));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, x0 + panel / 2.0, y0 + 10.0, escape(&report.label));
        let _ = writeln!(s, r##"<rect x="{x0:.2}" y="{:.2}" width="{panel}" height="{panel}" fill="none" stroke="#999"/>"##, y0 + 16.0);
        let mut dots = |pts: &Array2<f64>, fill: &str, opacity: f64| {
            for r in pts.rows() {
                if r[0].abs() > lim || r[1].abs() > lim {
                    continue;
                }
                let (cx, cy) = map((r[0], r[1]));
                let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="1.6" fill="{fill}" fill-opacity="{opacity}"/>"#);
            }
        };
        dots(real, "#888888", 0.45);
        if let Some(b) = batch {
            dots(&rows(b, prompt), PALETTE[i % PALETTE.len()], 0.8);
        }
    }
    s.push_str("</svg>\n");
    s
}
