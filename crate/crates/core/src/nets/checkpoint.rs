//! Checkpoint files: a `key = value` text manifest terminated by `end`,
//! followed by every tensor as little-endian `f32` in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::discriminator::{DiscTopology, Discriminator};
use super::params::NetParams;
use super::velocity::{Topology, VelocityNet};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "arclab-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Velocity(VelocityNet),
    Discriminator(Discriminator),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
}

impl PartialEq for VelocityNet {
    fn eq(&self, other: &Self) -> bool {
        self.topology() == other.topology() && self.params() == other.params()
    }
}

impl PartialEq for Discriminator {
    fn eq(&self, other: &Self) -> bool {
        self.topology() == other.topology() && self.params() == other.params()
    }
}

fn manifest(kind: &str, topo: &Topology, extra: &[(&str, String)], seed: u64, p: &NetParams) -> String {
    let mut m = format!("{MAGIC}\nformat_version = {FORMAT_VERSION}\nkind = {kind}\n");
    for (k, v) in [
        ("dim", topo.dim),
        ("classes", topo.classes),
        ("embed_dim", topo.embed_dim),
        ("time_freqs", topo.time_freqs),
        ("width", topo.width),
        ("hidden_layers", topo.hidden_layers),
    ] {
        m.push_str(&format!("{k} = {v}\n"));
    }
    for (k, v) in extra {
        m.push_str(&format!("{k} = {v}\n"));
    }
    m.push_str(&format!("seed = {seed}\n"));
    for s in p.specs() {
        let shape: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
        m.push_str(&format!("tensor = {} {}\n", s.name, shape.join("x")));
    }
    m.push_str("end\n");
    m
}

fn write(path: &Path, header: String, p: &NetParams) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes = header.into_bytes();
    bytes.reserve(p.len() * 4);
    for &v in p.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn save_velocity(net: &VelocityNet, seed: u64, path: &Path) -> Result<()> {
    let header = manifest("velocity", net.topology(), &[], seed, net.params());
    write(path, header, net.params())
}

pub fn save_discriminator(disc: &Discriminator, seed: u64, path: &Path) -> Result<()> {
    let t = disc.topology();
    let extra = [
        ("backbone_layers", t.backbone_layers.to_string()),
        ("head_width", t.head_width.to_string()),
        ("head_blocks", t.head_blocks.to_string()),
        ("prompt_embedding", "trained".to_string()),
    ];
    let header = manifest("discriminator", &t.source, &extra, seed, disc.params());
    write(path, header, disc.params())
}

/// Rounds every parameter through `f32`, matching what a save/load cycle
/// produces.
pub fn round_to_storage(p: &mut NetParams) {
    for v in p.data_mut() {
        *v = *v as f32 as f64;
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("manifest is not terminated by `end`".into()))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("manifest is not UTF-8".into()))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line.to_string());
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad("missing magic line".into()));
    }
    let mut kv = std::collections::BTreeMap::new();
    let mut tensors = Vec::new();
    for line in &lines[1..] {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| bad(format!("malformed manifest line {line:?}")))?;
        if k == "tensor" {
            let (name, shape) = v
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed tensor line {line:?}")))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| bad(format!("bad shape {shape:?}"))))
                .collect::<Result<_>>()?;
            tensors.push((name.to_string(), shape));
        } else {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<usize> {
        kv.get(k)
            .ok_or_else(|| bad(format!("missing key {k}")))?
            .parse()
            .map_err(|_| bad(format!("key {k} is not an integer")))
    };
    if get("format_version")? != FORMAT_VERSION as usize {
        return Err(bad(format!("unsupported format version {}", kv["format_version"])));
    }
    let seed: u64 = kv
        .get("seed")
        .ok_or_else(|| bad("missing key seed".into()))?
        .parse()
        .map_err(|_| bad("seed is not an integer".into()))?;
    let topo = Topology {
        dim: get("dim")?,
        classes: get("classes")?,
        embed_dim: get("embed_dim")?,
        time_freqs: get("time_freqs")?,
        width: get("width")?,
        hidden_layers: get("hidden_layers")?,
    };
    let kind = kv.get("kind").map(String::as_str).unwrap_or("");
    let (mut params, build): (NetParams, Box<dyn Fn(NetParams) -> Result<Network>>) = match kind {
        "velocity" => {
            let template = VelocityNet::zeros(topo).map_err(|e| bad(e.to_string()))?;
            (
                template.params().clone(),
                Box::new(move |p| VelocityNet::from_params(topo, p).map(Network::Velocity)),
            )
        }
        "discriminator" => {
            let dt = DiscTopology {
                source: topo,
                backbone_layers: get("backbone_layers")?,
                head_width: get("head_width")?,
                head_blocks: get("head_blocks")?,
            };
            let template = Discriminator::zeros(dt).map_err(|e| bad(e.to_string()))?;
            (
                template.params().clone(),
                Box::new(move |p| Discriminator::from_params(dt, p).map(Network::Discriminator)),
            )
        }
        other => return Err(bad(format!("unknown network kind {other:?}"))),
    };
    let expected: Vec<(String, Vec<usize>)> = params
        .specs()
        .iter()
        .map(|s| (s.name.clone(), s.shape.clone()))
        .collect();
    if expected != tensors {
        return Err(bad("tensor list does not match the declared topology".into()));
    }
    let blob = &bytes[pos..];
    if blob.len() != params.len() * 4 {
        return Err(bad(format!(
            "expected {} bytes of tensor data, found {}",
            params.len() * 4,
            blob.len()
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    params.load_values(values)?;
    let network = build(params).map_err(|e| bad(e.to_string()))?;
    Ok(Checkpoint { network, seed })
}

pub fn load_velocity(path: &Path) -> Result<(VelocityNet, u64)> {
    match load(path)? {
        Checkpoint {
            network: Network::Velocity(v),
            seed,
        } => Ok((v, seed)),
        _ => Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "expected a velocity network".into(),
        }),
    }
}

pub fn load_discriminator(path: &Path) -> Result<(Discriminator, u64)> {
    match load(path)? {
        Checkpoint {
            network: Network::Discriminator(d),
            seed,
        } => Ok((d, seed)),
        _ => Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "expected a discriminator".into(),
        }),
    }
}
