//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "LOPGPNCK"
//! version  u32      1
//! n_meta   u32
//!   key    u32 length + UTF-8 bytes
//!   value  u32 length + UTF-8 bytes
//! n_param  u32
//!   name   u32 length + UTF-8 bytes
//!   ndim   u32
//!   dims   ndim × u64
//!   values product(dims) × f64
//! ```
//!
//! Every integer and float is little-endian. Hyperparameters, the model
//! kind, dimensions, certainty budget and class priors live in the metadata
//! block; floats are written in shortest round-trip decimal form.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Hyperparameters, Model, ModelKind};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LOPGPNCK";
pub const VERSION: u32 = 1;

const RESERVED: [&str; 20] = [
    "kind",
    "n_features",
    "n_classes",
    "log_budget",
    "log_priors",
    "hp.hidden_dim",
    "hp.latent_dim",
    "hp.n_flows",
    "hp.entropy_weight",
    "hp.learning_rate",
    "hp.weight_decay",
    "hp.max_epochs",
    "hp.patience",
    "hp.grad_clip",
    "hp.teleport",
    "hp.iterations",
    "hp.sparsify_delta",
    "hp.certainty_budget",
    "hp.log_evidence_scale",
    "hp.max_log_evidence",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

fn hp_entries(hp: &Hyperparameters) -> Vec<(&'static str, String)> {
    vec![
        ("hp.hidden_dim", hp.hidden_dim.to_string()),
        ("hp.latent_dim", hp.latent_dim.to_string()),
        ("hp.n_flows", hp.n_flows.to_string()),
        ("hp.entropy_weight", hp.entropy_weight.to_string()),
        ("hp.learning_rate", hp.learning_rate.to_string()),
        ("hp.weight_decay", hp.weight_decay.to_string()),
        ("hp.max_epochs", hp.max_epochs.to_string()),
        ("hp.patience", hp.patience.to_string()),
        ("hp.grad_clip", hp.grad_clip.to_string()),
        ("hp.teleport", hp.teleport.to_string()),
        ("hp.iterations", hp.iterations.to_string()),
        ("hp.sparsify_delta", opt(hp.sparsify_delta)),
        ("hp.certainty_budget", opt(hp.certainty_budget)),
        ("hp.log_evidence_scale", opt(hp.log_evidence_scale)),
        ("hp.max_log_evidence", hp.max_log_evidence.to_string()),
    ]
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Serializes `model` to the byte layout above.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut meta: Vec<(String, String)> = vec![
        ("kind".into(), model.kind.name().into()),
        ("n_features".into(), model.n_features.to_string()),
        ("n_classes".into(), model.n_classes.to_string()),
        ("log_budget".into(), model.log_budget.to_string()),
        (
            "log_priors".into(),
            model.log_priors.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        ),
    ];
    meta.extend(hp_entries(&model.hp).into_iter().map(|(k, v)| (k.to_string(), v)));
    meta.extend(
        model
            .metadata
            .iter()
            .filter(|(k, _)| !RESERVED.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone())),
    );

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, meta.len() as u32);
    for (k, v) in &meta {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    put_u32(&mut out, model.parameters().len() as u32);
    for (name, t) in model.parameters() {
        put_str(&mut out, name);
        put_u32(&mut out, 2);
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

fn field<'m>(meta: &'m BTreeMap<String, String>, key: &str) -> Result<&'m str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key:?}")))
}

fn num<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = field(meta, key)?;
    v.parse()
        .map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {key:?}")))
}

fn opt_num(meta: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match field(meta, key)? {
        "none" => Ok(None),
        _ => num(meta, key).map(Some),
    }
}

/// Parses a checkpoint produced by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut meta = BTreeMap::new();
    for _ in 0..r.u32()? {
        let k = r.string()?;
        let v = r.string()?;
        meta.insert(k, v);
    }
    let mut params = Vec::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [n] => (1, n),
            [a, b] => (a, b),
            _ => return Err(Error::Checkpoint(format!("{name}: unsupported rank {ndim}"))),
        };
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l <= (bytes.len() - r.pos) / 8)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: truncated values")))?;
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push((name, Tensor::new(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let kind: ModelKind = field(&meta, "kind")?.parse()?;
    let hp = Hyperparameters {
        hidden_dim: num(&meta, "hp.hidden_dim")?,
        latent_dim: num(&meta, "hp.latent_dim")?,
        n_flows: num(&meta, "hp.n_flows")?,
        entropy_weight: num(&meta, "hp.entropy_weight")?,
        learning_rate: num(&meta, "hp.learning_rate")?,
        weight_decay: num(&meta, "hp.weight_decay")?,
        max_epochs: num(&meta, "hp.max_epochs")?,
        patience: num(&meta, "hp.patience")?,
        grad_clip: num(&meta, "hp.grad_clip")?,
        teleport: num(&meta, "hp.teleport")?,
        iterations: num(&meta, "hp.iterations")?,
        sparsify_delta: opt_num(&meta, "hp.sparsify_delta")?,
        certainty_budget: opt_num(&meta, "hp.certainty_budget")?,
        log_evidence_scale: opt_num(&meta, "hp.log_evidence_scale")?,
        max_log_evidence: num(&meta, "hp.max_log_evidence")?,
    };
    let log_priors = field(&meta, "log_priors")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("bad prior {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_features = num(&meta, "n_features")?;
    let n_classes = num(&meta, "n_classes")?;
    let log_budget = num(&meta, "log_budget")?;
    if log_priors.len() != n_classes {
        return Err(Error::Checkpoint("prior count does not match class count".into()));
    }
    let extra = meta
        .into_iter()
        .filter(|(k, _)| !RESERVED.contains(&k.as_str()))
        .collect();
    Ok(Model::from_parts(kind, hp, n_features, n_classes, log_budget, log_priors, extra, params))
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
