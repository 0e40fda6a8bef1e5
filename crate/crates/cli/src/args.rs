use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use saliex::evaluation::Mode;
use saliex::saliency::MapKind;
use saliex::{ExplainConfig, ImageDims, MaskGenConfig, MaskType};
use serde::{Deserialize, Serialize};

fn parse<T: FromStr<Err = saliex::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: saliex::Error| e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "saliex",
    version,
    about = "Black-box saliency maps for face verification and identification"
)]
pub struct Cli {
    /// Parallel embedding workers (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    #[command(flatten)]
    Job(Job),
    /// Serve a built-in embedder over the wire protocol (stdio or TCP).
    ServeEmbedder(ServeArgs),
    /// Re-run a command from its run-manifest.json.
    Rerun(RerunArgs),
}

/// Commands that record a run manifest and can be re-run from it.
#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    /// Similarity and dissimilarity maps for one image pair.
    Explain(ExplainArgs),
    /// Rank a gallery against a probe and explain the top-K matches.
    Identify(IdentifyArgs),
    /// Deletion/insertion evaluation of saliency maps.
    #[command(subcommand)]
    Evaluate(EvaluateTask),
    /// Model-randomization sanity check.
    SanityCheck(SanityArgs),
    /// Write the synthetic planted-difference data set.
    MakeToyset(ToysetArgs),
}

/// CorrRISE settings shared by every command that computes maps.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MaskArgs {
    /// Embedder spec, e.g. toy:block-avg:g=8, toy:rand-proj:d=128,seed=7,
    /// ext:cmd=<shell command>, ext:tcp=<host:port>.
    #[arg(long, default_value = "toy:block-avg:g=8")]
    pub model: String,
    /// Number of masks N.
    #[arg(long, default_value_t = 1000)]
    pub masks: usize,
    /// Occluding patches per mask.
    #[arg(long, default_value_t = 10)]
    pub patches: usize,
    /// Patch side length in pixels.
    #[arg(long, default_value_t = 30)]
    pub patch_size: usize,
    #[arg(long, default_value = "binary", value_parser = parse::<MaskType>)]
    pub mask_type: MaskType,
    /// Root seed; every random stream is derived from it.
    #[arg(long, env = "SALIEX_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Masked images per embedder call.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Side length images are resized to.
    #[arg(long, default_value_t = 112)]
    pub size: usize,
}

impl MaskArgs {
    pub fn dims(&self) -> ImageDims {
        ImageDims::new(self.size, self.size, 3)
    }

    pub fn explain_config(&self) -> ExplainConfig {
        ExplainConfig {
            mask_config: MaskGenConfig {
                num_masks: self.masks,
                patches_per_mask: self.patches,
                patch_size: self.patch_size,
                mask_type: self.mask_type,
            },
            seed: self.seed,
            batch_size: self.batch,
            ..ExplainConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub image_a: PathBuf,
    #[arg(long)]
    pub image_b: PathBuf,
    #[command(flatten)]
    pub maps: MaskArgs,
    /// Add the counterpart-filled regularization term.
    #[arg(long)]
    pub regularize: bool,
    /// Skip regularization for pairs scoring at or above this threshold.
    #[arg(long, requires = "regularize")]
    pub regularize_threshold: Option<f64>,
    /// Overlay opacity.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub probe: PathBuf,
    /// `path<TAB>identity` per line.
    #[arg(long)]
    pub gallery_manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[command(flatten)]
    pub maps: MaskArgs,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Curve settings shared by both evaluation tasks.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CurveArgs {
    /// Map source: corrrise, random, center or dir:<path>.
    #[arg(long = "maps", default_value = "corrrise")]
    pub source: String,
    #[arg(long, default_value = "deletion", value_parser = parse::<Mode>)]
    pub mode: Mode,
    /// Number of fractions n.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Gaussian blur applied to maps before ranking (0 disables it).
    #[arg(long, default_value_t = 4.0)]
    pub sigma: f64,
    #[command(flatten)]
    pub maps: MaskArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum EvaluateTask {
    /// Verification accuracy curve over a pair list.
    Verification(VerificationArgs),
    /// Rank-N identification curve over probe and gallery manifests.
    Identification(IdentificationArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct VerificationArgs {
    /// `path_a<TAB>path_b<TAB>{1|0}` per line.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "similarity", value_parser = parse::<MapKind>)]
    pub which: MapKind,
    /// Fixed decision threshold; calibrated on the unmodified pairs when absent.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub curve: CurveArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationArgs {
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    /// Gallery matches whose probe maps are averaged.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// N of the Rank-N identification rate.
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[command(flatten)]
    pub curve: CurveArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SanityArgs {
    /// Pair list to run on; a toy set is generated when absent.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub subjects: usize,
    #[arg(long, default_value_t = 3)]
    pub images_per_subject: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Largest |gap| tolerated under the randomized model.
    #[arg(long, default_value_t = 0.02)]
    pub epsilon: f64,
    /// Smallest gap required under the structured model.
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Pooling grid of the structured model.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    /// Output dimension of the randomized model.
    #[arg(long, default_value_t = 128)]
    pub random_dim: usize,
    #[arg(long, default_value_t = 200)]
    pub masks: usize,
    #[arg(long, default_value_t = 10)]
    pub patches: usize,
    #[arg(long, default_value_t = 30)]
    pub patch_size: usize,
    #[arg(long, env = "SALIEX_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 112)]
    pub size: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ToysetArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    #[arg(long, default_value_t = 4)]
    pub images_per_subject: usize,
    #[arg(long, env = "SALIEX_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Built-in embedder spec (toy:...).
    #[arg(long, default_value = "toy:block-avg:g=8")]
    pub model: String,
    /// Listen on this TCP address instead of stdin/stdout.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    /// run-manifest.json written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
