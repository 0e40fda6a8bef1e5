//! The black-box boundary: batches of images in, unit-norm embeddings out.
//!
//! Embedders are selected at runtime by a spec string and built through a
//! [`Registry`]:
//!
//! | spec                              | embedder                          |
//! |-----------------------------------|-----------------------------------|
//! | `toy:block-avg:g=8`               | [`BlockAvg`] (8×8 mean pooling)   |
//! | `toy:rand-proj:d=128,seed=7`      | [`RandProj`] (Gaussian projection)|
//! | `ext:cmd=<shell command>`         | [`ExternalEmbedder`] over stdio   |
//! | `ext:tcp=<host:port>`             | [`ExternalEmbedder`] over TCP     |

mod block_avg;
mod external;
pub mod protocol;
mod rand_proj;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{Embedding, Image, ImageDims};

pub use block_avg::BlockAvg;
pub use external::{ExternalEmbedder, ExternalOptions, ExternalTarget};
pub use rand_proj::RandProj;

/// A face-recognition model seen as an opaque function.
pub trait Embedder: Send + Sync {
    /// Canonical spec string that rebuilds this embedder.
    fn spec(&self) -> String;

    /// Raw (not necessarily normalized) feature vectors, one per image.
    fn features(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>>;

    /// Batch size callers should use when splitting work across workers.
    fn preferred_batch(&self) -> usize {
        16
    }

    /// Unit-norm embeddings, order-preserving. A zero feature vector is an
    /// error; see [`embed_lenient`] for callers that must tolerate it.
    fn embed(&self, batch: &[Image]) -> Result<Vec<Embedding>> {
        check_batch(batch)?;
        self.features(batch)?
            .into_iter()
            .map(Embedding::from_raw)
            .collect()
    }
}

pub(crate) fn check_batch(batch: &[Image]) -> Result<ImageDims> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Empty("embedding batch is empty".into()))?
        .dims();
    if let Some(bad) = batch.iter().find(|im| im.dims() != first) {
        return Err(Error::Dimension(format!(
            "batch mixes {:?} and {:?}",
            first,
            bad.dims()
        )));
    }
    Ok(first)
}

/// Like [`Embedder::embed`], but degenerate (all-zero) features yield `None`
/// instead of failing the batch.
pub fn embed_lenient(embedder: &dyn Embedder, batch: &[Image]) -> Result<Vec<Option<Embedding>>> {
    check_batch(batch)?;
    Ok(embedder
        .features(batch)?
        .into_iter()
        .map(|f| Embedding::from_raw(f).ok())
        .collect())
}

/// Cosine score where a missing (degenerate) embedding scores 0 against
/// everything.
pub fn lenient_score(a: Option<&Embedding>, b: Option<&Embedding>) -> Result<f64> {
    match (a, b) {
        (Some(a), Some(b)) => crate::types::cosine_similarity(a, b),
        _ => Ok(0.0),
    }
}

/// Key/value parameters of a toy embedder spec, e.g. `d=128,seed=7`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Params(BTreeMap<String, String>);

impl Params {
    pub fn parse(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                Error::config("embedder", format!("parameter `{item}` is not key=value"))
            })?;
            if map
                .insert(k.trim().to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::config(
                    "embedder",
                    format!("parameter `{k}` given twice"),
                ));
            }
        }
        Ok(Params(map))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::config(key, "is required"))
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::config(
                k.clone(),
                format!("is not a parameter (expected {})", allowed.join(", ")),
            )),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parsed embedder selector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbedderSpec {
    Toy { name: String, params: Params },
    External(ExternalTarget),
}

impl FromStr for EmbedderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("toy:") {
            let (name, params) = rest.split_once(':').unwrap_or((rest, ""));
            return Ok(EmbedderSpec::Toy {
                name: name.to_string(),
                params: Params::parse(params)?,
            });
        }
        if let Some(cmd) = s.strip_prefix("ext:cmd=") {
            if cmd.trim().is_empty() {
                return Err(Error::config("embedder", "ext:cmd needs a command"));
            }
            return Ok(EmbedderSpec::External(ExternalTarget::Command(
                cmd.to_string(),
            )));
        }
        if let Some(addr) = s.strip_prefix("ext:tcp=") {
            if addr.trim().is_empty() {
                return Err(Error::config("embedder", "ext:tcp needs host:port"));
            }
            return Ok(EmbedderSpec::External(ExternalTarget::Tcp(
                addr.to_string(),
            )));
        }
        Err(Error::config(
            "embedder",
            format!("`{s}` does not match toy:<name>:<params>, ext:cmd=<command> or ext:tcp=<host:port>"),
        ))
    }
}

impl fmt::Display for EmbedderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedderSpec::Toy { name, params } => write!(f, "toy:{name}:{params}"),
            EmbedderSpec::External(t) => t.fmt(f),
        }
    }
}

pub type Factory = fn(&Params, ImageDims) -> Result<Box<dyn Embedder>>;

/// Name → constructor table for in-process embedders.
pub struct Registry {
    toys: BTreeMap<&'static str, Factory>,
    external: ExternalOptions,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry {
            toys: BTreeMap::new(),
            external: ExternalOptions::default(),
        };
        r.register("block-avg", |p, dims| {
            p.reject_unknown(&["g"])?;
            Ok(Box::new(BlockAvg::new(p.require("g")?, dims)?))
        });
        r.register("rand-proj", |p, dims| {
            p.reject_unknown(&["d", "seed"])?;
            Ok(Box::new(RandProj::new(
                p.require("d")?,
                p.require("seed")?,
                dims,
            )?))
        });
        r
    }
}

impl Registry {
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.toys.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.toys.keys().copied()
    }

    pub fn with_external_options(mut self, opts: ExternalOptions) -> Self {
        self.external = opts;
        self
    }

    pub fn build(&self, spec: &EmbedderSpec, dims: ImageDims) -> Result<Box<dyn Embedder>> {
        match spec {
            EmbedderSpec::Toy { name, params } => {
                let factory = self.toys.get(name.as_str()).ok_or_else(|| Error::Unknown {
                    kind: "embedder",
                    name: name.clone(),
                    known: self.names().collect::<Vec<_>>().join(", "),
                })?;
                factory(params, dims)
            }
            EmbedderSpec::External(target) => Ok(Box::new(ExternalEmbedder::new(
                target.clone(),
                self.external.clone(),
            )?)),
        }
    }

    pub fn build_str(&self, spec: &str, dims: ImageDims) -> Result<Box<dyn Embedder>> {
        self.build(&spec.parse()?, dims)
    }
}

/// Builds `spec` with the default registry and embeds `batch`.
pub fn embed(spec: &str, batch: &[Image]) -> Result<Vec<Embedding>> {
    let dims = check_batch(batch)?;
    Registry::default().build_str(spec, dims)?.embed(batch)
}
