//! Saliency-map providers for evaluation, selected by name.
//!
//! | name          | maps                                                        |
//! |---------------|-------------------------------------------------------------|
//! | `corrrise`    | computed on the fly with [`explain_pair`]                   |
//! | `random`      | i.i.d. uniform [0, 1], seeded per pair, side and kind       |
//! | `center`      | fixed center prior (closer to the middle ranks first)       |
//! | `dir:<path>`  | `<path>/pair_{i:05}/{a,b}_{sim,dissim,signed}.pfm`          |

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corrrise::{explain_pair, ExplainConfig};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::io::load_pfm;
use crate::seed;
use crate::types::{Image, SaliencyMap};

/// Which part of a signed CorrRISE map is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// `S⁺`, evaluated on matching pairs.
    Similarity,
    /// `S⁻`, evaluated on non-matching pairs.
    Dissimilarity,
    /// The signed map itself.
    Signed,
}

impl MapKind {
    /// Suffix used in map file names.
    pub fn file_tag(self) -> &'static str {
        match self {
            MapKind::Similarity => "sim",
            MapKind::Dissimilarity => "dissim",
            MapKind::Signed => "signed",
        }
    }

    fn index(self) -> u64 {
        match self {
            MapKind::Similarity => 0,
            MapKind::Dissimilarity => 1,
            MapKind::Signed => 2,
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapKind::Similarity => "similarity",
            MapKind::Dissimilarity => "dissimilarity",
            MapKind::Signed => "signed",
        })
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity" | "sim" => Ok(MapKind::Similarity),
            "dissimilarity" | "dissim" => Ok(MapKind::Dissimilarity),
            "signed" => Ok(MapKind::Signed),
            _ => Err(Error::Unknown {
                kind: "map kind",
                name: s.to_string(),
                known: "similarity, dissimilarity, signed".into(),
            }),
        }
    }
}

/// One image pair as seen by a map source.
#[derive(Clone, Copy, Debug)]
pub struct PairRef<'p> {
    /// Position in the pair list; sources key files and seeds on it.
    pub index: usize,
    pub a: &'p Image,
    pub b: &'p Image,
    pub name_a: &'p str,
    pub name_b: &'p str,
}

pub trait MapSource: Send + Sync {
    fn name(&self) -> String;

    /// Maps for sides A and B of `pair`.
    fn pair_maps(&self, pair: &PairRef<'_>, kind: MapKind) -> Result<[SaliencyMap; 2]>;
}

pub struct CorrRiseSource<'e> {
    embedder: &'e dyn Embedder,
    config: ExplainConfig,
}

impl<'e> CorrRiseSource<'e> {
    pub fn new(embedder: &'e dyn Embedder, config: ExplainConfig) -> Self {
        CorrRiseSource { embedder, config }
    }
}

impl MapSource for CorrRiseSource<'_> {
    fn name(&self) -> String {
        "corrrise".into()
    }

    fn pair_maps(&self, pair: &PairRef<'_>, kind: MapKind) -> Result<[SaliencyMap; 2]> {
        let ex = explain_pair(pair.a, pair.b, self.embedder, &self.config)?;
        Ok(match kind {
            MapKind::Similarity => [ex.plus_a, ex.plus_b],
            MapKind::Dissimilarity => [ex.minus_a, ex.minus_b],
            MapKind::Signed => [ex.signed_a, ex.signed_b],
        })
    }
}

pub struct RandomSource {
    seed: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed }
    }

    pub fn map(
        &self,
        index: usize,
        side: usize,
        kind: MapKind,
        height: usize,
        width: usize,
    ) -> SaliencyMap {
        let stream = (index as u64) * 6 + kind.index() * 2 + side as u64;
        let mut rng = seed::stream(self.seed, "random-map", stream);
        let values = (0..height * width).map(|_| rng.random::<f32>()).collect();
        SaliencyMap {
            height,
            width,
            values,
        }
    }
}

impl MapSource for RandomSource {
    fn name(&self) -> String {
        "random".into()
    }

    fn pair_maps(&self, pair: &PairRef<'_>, kind: MapKind) -> Result<[SaliencyMap; 2]> {
        let (h, w) = (pair.a.height(), pair.a.width());
        Ok([
            self.map(pair.index, 0, kind, h, w),
            self.map(pair.index, 1, kind, h, w),
        ])
    }
}

/// Image-independent prior: value falls with squared distance from the
/// center.
pub struct CenterSource;

impl CenterSource {
    pub fn map(height: usize, width: usize) -> SaliencyMap {
        let (cy, cx) = ((height as f32 - 1.0) / 2.0, (width as f32 - 1.0) / 2.0);
        let scale = (cy * cy + cx * cx).max(1.0);
        let values = (0..height * width)
            .map(|i| {
                let (dy, dx) = ((i / width) as f32 - cy, (i % width) as f32 - cx);
                1.0 - (dy * dy + dx * dx) / scale
            })
            .collect();
        SaliencyMap {
            height,
            width,
            values,
        }
    }
}

impl MapSource for CenterSource {
    fn name(&self) -> String {
        "center".into()
    }

    fn pair_maps(&self, pair: &PairRef<'_>, _kind: MapKind) -> Result<[SaliencyMap; 2]> {
        let m = CenterSource::map(pair.a.height(), pair.a.width());
        Ok([m.clone(), m])
    }
}

/// Precomputed maps stored as PFM files.
pub struct DirSource {
    root: PathBuf,
}

impl DirSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirSource { root: root.into() }
    }

    pub fn path(&self, index: usize, side: usize, kind: MapKind) -> PathBuf {
        let s = if side == 0 { "a" } else { "b" };
        self.root
            .join(format!("pair_{index:05}"))
            .join(format!("{s}_{}.pfm", kind.file_tag()))
    }
}

impl MapSource for DirSource {
    fn name(&self) -> String {
        format!("dir:{}", self.root.display())
    }

    fn pair_maps(&self, pair: &PairRef<'_>, kind: MapKind) -> Result<[SaliencyMap; 2]> {
        let load = |side: usize, image: &str| {
            let path = self.path(pair.index, side, kind);
            if !path.exists() {
                return Err(Error::MissingMap(format!(
                    "image {image} (pair {}): expected {}",
                    pair.index,
                    path.display()
                )));
            }
            load_pfm(&path)
        };
        Ok([load(0, pair.name_a)?, load(1, pair.name_b)?])
    }
}

/// Adapter turning a closure into a source, for precomputed or oracle maps.
pub struct FnSource<F> {
    name: String,
    f: F,
}

impl<F> FnSource<F>
where
    F: Fn(&PairRef<'_>, MapKind) -> Result<[SaliencyMap; 2]> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnSource {
            name: name.into(),
            f,
        }
    }
}

impl<F> MapSource for FnSource<F>
where
    F: Fn(&PairRef<'_>, MapKind) -> Result<[SaliencyMap; 2]> + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn pair_maps(&self, pair: &PairRef<'_>, kind: MapKind) -> Result<[SaliencyMap; 2]> {
        (self.f)(pair, kind)
    }
}

/// What a source factory may draw on.
#[derive(Clone, Copy)]
pub struct SourceContext<'a> {
    pub embedder: &'a dyn Embedder,
    pub explain: ExplainConfig,
    /// Seed for sources with their own randomness.
    pub seed: u64,
}

pub type SourceFactory =
    for<'a> fn(Option<&str>, &SourceContext<'a>) -> Result<Box<dyn MapSource + 'a>>;

/// Name → factory table; a spec is `name` or `name:argument`.
pub struct SourceRegistry {
    factories: BTreeMap<&'static str, SourceFactory>,
}

impl Default for SourceRegistry {
    fn default() -> Self {
        let mut r = SourceRegistry {
            factories: BTreeMap::new(),
        };
        r.register("corrrise", |_, ctx| {
            Ok(Box::new(CorrRiseSource::new(ctx.embedder, ctx.explain)))
        });
        r.register("random", |_, ctx| Ok(Box::new(RandomSource::new(ctx.seed))));
        r.register("center", |_, _| Ok(Box::new(CenterSource)));
        r.register("dir", |arg, _| match arg {
            Some(p) if !p.is_empty() => Ok(Box::new(DirSource::new(p))),
            _ => Err(Error::config("maps", "dir needs a path, e.g. dir:maps/")),
        });
        r
    }
}

impl SourceRegistry {
    pub fn register(&mut self, name: &'static str, factory: SourceFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build<'a>(
        &self,
        spec: &str,
        ctx: &SourceContext<'a>,
    ) -> Result<Box<dyn MapSource + 'a>> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let factory = self.factories.get(name).ok_or_else(|| Error::Unknown {
            kind: "map source",
            name: name.to_string(),
            known: self.names().collect::<Vec<_>>().join(", "),
        })?;
        factory(arg, ctx)
    }
}
