use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use saliex::corrrise::{explain_identification, rank_gallery};
use saliex::embedder::{embed_lenient, lenient_score, protocol, ExternalOptions};
use saliex::evaluation::{
    accuracy_at, identification_metric, load_manifest, probe_maps, verification_metric,
    CurveOptions, EvalPair, Labelled, PairList, Threshold,
};
use saliex::io::{
    load_image, render_overlay, save_pfm, save_png, write_curve_csv, write_scores_csv,
};
use saliex::saliency::{MapKind, SourceContext, SourceRegistry};
use saliex::sanity::{sanity_check, SanityConfig};
use saliex::toyset::{ToySet, ToySetConfig};
use saliex::{
    explain_pair, Embedder, EmbedderSpec, ExplainConfig, Image, ImageDims, MaskGenConfig, Registry,
    SaliencyMap,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;

pub const MANIFEST: &str = "run-manifest.json";

/// Everything needed to repeat a run.
#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub workers: usize,
    pub job: Job,
}

impl Job {
    pub fn out_dir(&self) -> &Path {
        match self {
            Job::Explain(a) => &a.out_dir,
            Job::Identify(a) => &a.out_dir,
            Job::Evaluate(EvaluateTask::Verification(a)) => &a.curve.out_dir,
            Job::Evaluate(EvaluateTask::Identification(a)) => &a.curve.out_dir,
            Job::SanityCheck(a) => &a.out_dir,
            Job::MakeToyset(a) => &a.out_dir,
        }
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Job::Explain(a) => a.out_dir = dir,
            Job::Identify(a) => a.out_dir = dir,
            Job::Evaluate(EvaluateTask::Verification(a)) => a.curve.out_dir = dir,
            Job::Evaluate(EvaluateTask::Identification(a)) => a.curve.out_dir = dir,
            Job::SanityCheck(a) => a.out_dir = dir,
            Job::MakeToyset(a) => a.out_dir = dir,
        }
    }

    /// Makes input paths absolute so the manifest can be re-run from any
    /// working directory.
    fn absolutize(&mut self) -> Result<()> {
        let abs = |p: &mut PathBuf| -> Result<()> {
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
            Ok(())
        };
        match self {
            Job::Explain(a) => {
                abs(&mut a.image_a)?;
                abs(&mut a.image_b)
            }
            Job::Identify(a) => {
                abs(&mut a.probe)?;
                abs(&mut a.gallery_manifest)
            }
            Job::Evaluate(EvaluateTask::Verification(a)) => abs(&mut a.pairs),
            Job::Evaluate(EvaluateTask::Identification(a)) => {
                abs(&mut a.probes)?;
                abs(&mut a.gallery)
            }
            Job::SanityCheck(a) => a.pairs.as_mut().map_or(Ok(()), abs),
            Job::MakeToyset(_) => Ok(()),
        }
    }
}

pub fn run_job(mut job: Job, workers: usize) -> Result<()> {
    job.absolutize()?;
    let out = job.out_dir().to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = RunManifest {
        tool: "saliex".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        workers,
        job: job.clone(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    match &job {
        Job::Explain(a) => explain(a, workers),
        Job::Identify(a) => identify(a, workers),
        Job::Evaluate(EvaluateTask::Verification(a)) => evaluate_verification(a, workers),
        Job::Evaluate(EvaluateTask::Identification(a)) => evaluate_identification(a, workers),
        Job::SanityCheck(a) => sanity(a),
        Job::MakeToyset(a) => make_toyset(a),
    }
}

pub fn rerun(args: &RerunArgs, workers: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let mut manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.manifest.display()))?;
    if let Some(dir) = &args.out_dir {
        manifest.job.set_out_dir(dir.clone());
    }
    let workers = workers.unwrap_or(manifest.workers);
    crate::init_pool(workers)?;
    run_job(manifest.job, workers)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn registry(workers: usize) -> Registry {
    Registry::default().with_external_options(ExternalOptions {
        connections: workers.max(1),
        ..ExternalOptions::default()
    })
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

/// Output name stems for the two images; prefixed when the stems collide.
fn pair_names(a: &Path, b: &Path) -> (String, String) {
    let (na, nb) = (stem(a), stem(b));
    if na == nb {
        (format!("a_{na}"), format!("b_{nb}"))
    } else {
        (na, nb)
    }
}

/// `{name}_sim` and `{name}_dissim` as PFM plus overlay PNG.
fn write_maps(
    dir: &Path,
    name: &str,
    image: &Image,
    sim: &SaliencyMap,
    dissim: &SaliencyMap,
    alpha: f32,
) -> Result<()> {
    for (tag, map) in [("sim", sim), ("dissim", dissim)] {
        save_pfm(map, &dir.join(format!("{name}_{tag}.pfm")))?;
        save_png(
            &render_overlay(image, map, alpha)?,
            &dir.join(format!("{name}_{tag}.png")),
        )?;
    }
    Ok(())
}

fn explain(args: &ExplainArgs, workers: usize) -> Result<()> {
    let dims = args.maps.dims();
    let a = load_image(&args.image_a, dims)?;
    let b = load_image(&args.image_b, dims)?;
    let embedder = registry(workers).build_str(&args.maps.model, dims)?;
    let cfg = ExplainConfig {
        regularization: args.regularize,
        regularization_threshold: args.regularize_threshold,
        ..args.maps.explain_config()
    };
    let ex = explain_pair(&a, &b, embedder.as_ref(), &cfg)?;
    let (na, nb) = pair_names(&args.image_a, &args.image_b);
    write_maps(&args.out_dir, &na, &a, &ex.plus_a, &ex.minus_a, args.alpha)?;
    write_maps(&args.out_dir, &nb, &b, &ex.plus_b, &ex.minus_b, args.alpha)?;
    write_scores_csv(
        ex.scores_a.as_slice(),
        ex.scores_b.as_slice(),
        &args.out_dir.join("scores.csv"),
    )?;
    match ex.lambda {
        Some(l) => println!("score {:.6} (regularized, lambda {l:.6})", ex.score),
        None => println!("score {:.6}", ex.score),
    }
    Ok(())
}

fn load_labelled(manifest: &Path, dims: ImageDims) -> Result<Vec<Labelled>> {
    load_manifest(manifest)?
        .into_iter()
        .map(|e| {
            Ok(Labelled {
                image: load_image(&e.path, dims)?,
                identity: e.identity,
                name: display(&e.path),
            })
        })
        .collect()
}

fn identify(args: &IdentifyArgs, workers: usize) -> Result<()> {
    let dims = args.maps.dims();
    let probe = load_image(&args.probe, dims)?;
    let entries = load_manifest(&args.gallery_manifest)?;
    if entries.is_empty() {
        bail!(
            "gallery manifest {} has no entries",
            args.gallery_manifest.display()
        );
    }
    let gallery: Vec<(Image, String)> = entries
        .iter()
        .map(|e| Ok((load_image(&e.path, dims)?, e.identity.clone())))
        .collect::<Result<_>>()?;
    let embedder = registry(workers).build_str(&args.maps.model, dims)?;
    let images: Vec<Image> = gallery.iter().map(|(im, _)| im.clone()).collect();
    let gallery_emb = embed_lenient(embedder.as_ref(), &images)?;
    let probe_emb = embedder.embed(std::slice::from_ref(&probe))?.remove(0);
    let ranking = rank_gallery(&probe_emb, &gallery_emb)?;
    let mut csv = csv::Writer::from_path(args.out_dir.join("ranking.csv"))?;
    csv.write_record(["rank", "path", "identity", "score"])?;
    for m in &ranking {
        let e = &entries[m.index];
        csv.write_record([
            m.rank.to_string(),
            display(&e.path),
            e.identity.clone(),
            m.score.to_string(),
        ])?;
    }
    csv.flush()?;

    let ranked = explain_identification(
        &probe,
        &gallery,
        args.top_k,
        embedder.as_ref(),
        &args.maps.explain_config(),
    )?;
    for r in &ranked {
        let tag = format!("rank{:02}", r.rank);
        let ex = &r.explanation;
        write_maps(
            &args.out_dir,
            &format!("{tag}_probe"),
            &probe,
            &ex.plus_a,
            &ex.minus_a,
            args.alpha,
        )?;
        write_maps(
            &args.out_dir,
            &format!("{tag}_gallery"),
            &gallery[r.index].0,
            &ex.plus_b,
            &ex.minus_b,
            args.alpha,
        )?;
        println!(
            "{:>3} {:.6} {} {}",
            r.rank,
            r.score,
            r.identity,
            display(&entries[r.index].path)
        );
    }
    Ok(())
}

fn curve_options(c: &CurveArgs) -> CurveOptions {
    CurveOptions {
        steps: c.steps,
        sigma: c.sigma,
        mode: c.mode,
        batch_size: c.maps.batch,
    }
}

fn load_pairs(path: &Path, dims: ImageDims) -> Result<Vec<EvalPair>> {
    PairList::load(path)?
        .entries
        .into_iter()
        .map(|e| {
            Ok(EvalPair {
                a: load_image(&e.a, dims)?,
                b: load_image(&e.b, dims)?,
                matching: e.matching,
                name_a: display(&e.a),
                name_b: display(&e.b),
            })
        })
        .collect()
}

/// Accuracy of a user-supplied threshold on the unmodified pairs.
fn fixed_threshold(value: f64, pairs: &[EvalPair], embedder: &dyn Embedder) -> Result<Threshold> {
    let a: Vec<Image> = pairs.iter().map(|p| p.a.clone()).collect();
    let b: Vec<Image> = pairs.iter().map(|p| p.b.clone()).collect();
    let (ea, eb) = (embed_lenient(embedder, &a)?, embed_lenient(embedder, &b)?);
    let scored = ea
        .iter()
        .zip(&eb)
        .zip(pairs)
        .map(|((x, y), p)| Ok((lenient_score(x.as_ref(), y.as_ref())?, p.matching)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Threshold {
        value,
        accuracy: accuracy_at(&scored, value),
    })
}

fn evaluate_verification(args: &VerificationArgs, workers: usize) -> Result<()> {
    let c = &args.curve;
    let dims = c.maps.dims();
    let pairs = load_pairs(&args.pairs, dims)?;
    let embedder = registry(workers).build_str(&c.maps.model, dims)?;
    let ctx = SourceContext {
        embedder: embedder.as_ref(),
        explain: c.maps.explain_config(),
        seed: c.maps.seed,
    };
    let source = SourceRegistry::default().build(&c.source, &ctx)?;
    let threshold = args
        .threshold
        .map(|v| fixed_threshold(v, &pairs, embedder.as_ref()))
        .transpose()?;
    let report = verification_metric(
        &pairs,
        source.as_ref(),
        embedder.as_ref(),
        args.which,
        &curve_options(c),
        threshold,
    )?;
    write_curve_csv(&report.curve, &c.out_dir.join("curve.csv"))?;
    write_json(
        &c.out_dir.join("summary.json"),
        &json!({
            "mode": c.mode,
            "which": args.which,
            "n": c.steps,
            "sigma": c.sigma,
            "auc": report.curve.auc,
            "threshold": report.threshold.value,
            "threshold_accuracy": report.threshold.accuracy,
            "pairs": report.pairs,
            "maps": source.name(),
            "model": embedder.spec(),
        }),
    )?;
    println!(
        "{} {} auc {:.6} over {} pairs (threshold {:.6})",
        args.which, c.mode, report.curve.auc, report.pairs, report.threshold.value
    );
    Ok(())
}

fn evaluate_identification(args: &IdentificationArgs, workers: usize) -> Result<()> {
    let c = &args.curve;
    let dims = c.maps.dims();
    let probes = load_labelled(&args.probes, dims)?;
    let gallery = load_labelled(&args.gallery, dims)?;
    let embedder = registry(workers).build_str(&c.maps.model, dims)?;
    let ctx = SourceContext {
        embedder: embedder.as_ref(),
        explain: c.maps.explain_config(),
        seed: c.maps.seed,
    };
    let source = SourceRegistry::default().build(&c.source, &ctx)?;
    let maps = probe_maps(
        &probes,
        &gallery,
        args.top_k,
        source.as_ref(),
        embedder.as_ref(),
        c.maps.batch,
    )?;
    let report = identification_metric(
        &probes,
        &maps,
        &gallery,
        embedder.as_ref(),
        args.rank,
        &curve_options(c),
    )?;
    write_curve_csv(&report.curve, &c.out_dir.join("curve.csv"))?;
    write_json(
        &c.out_dir.join("summary.json"),
        &json!({
            "mode": c.mode,
            "which": MapKind::Signed,
            "n": c.steps,
            "sigma": c.sigma,
            "auc": report.curve.auc,
            "threshold": null,
            "rank_n": report.rank_n,
            "top_k": args.top_k,
            "probes": report.probes,
            "excluded": report.excluded,
            "maps": source.name(),
            "model": embedder.spec(),
        }),
    )?;
    println!(
        "rank-{} {} auc {:.6} over {} probes",
        report.rank_n, c.mode, report.curve.auc, report.probes
    );
    Ok(())
}

fn sanity(args: &SanityArgs) -> Result<()> {
    let dims = ImageDims::new(args.size, args.size, 3);
    let pairs = match &args.pairs {
        Some(p) => load_pairs(p, dims)?,
        None => ToySet::generate(ToySetConfig {
            subjects: args.subjects,
            images_per_subject: args.images_per_subject,
            dims,
            seed: args.seed,
            ..ToySetConfig::default()
        })?
        .eval_pairs(),
    };
    let cfg = SanityConfig {
        explain: ExplainConfig {
            mask_config: MaskGenConfig {
                num_masks: args.masks,
                patches_per_mask: args.patches,
                patch_size: args.patch_size,
                ..MaskGenConfig::default()
            },
            seed: args.seed,
            ..ExplainConfig::default()
        },
        trials: args.trials,
        seed: args.seed,
        epsilon: args.epsilon,
        margin: args.margin,
        grid: args.grid,
        random_dim: args.random_dim,
        ..SanityConfig::default()
    };
    let report = sanity_check(&pairs, &cfg)?;
    for t in &report.trials {
        println!(
            "trial {:>2}: structured gap {:+.4} (need > {}), randomized gap {:+.4} (need |gap| <= {}): {}",
            t.trial,
            t.structured.gap,
            args.margin,
            t.randomized.gap,
            args.epsilon,
            if t.passed { "PASS" } else { "FAIL" }
        );
    }
    write_json(&args.out_dir.join("sanity.json"), &report)?;
    let failed = report.trials.iter().filter(|t| !t.passed).count();
    if failed > 0 {
        bail!(
            "sanity check failed in {failed} of {} trials",
            report.trials.len()
        );
    }
    println!("sanity check passed in all {} trials", report.trials.len());
    Ok(())
}

fn make_toyset(args: &ToysetArgs) -> Result<()> {
    let set = ToySet::generate(ToySetConfig {
        subjects: args.subjects,
        images_per_subject: args.images_per_subject,
        seed: args.seed,
        ..ToySetConfig::default()
    })?;
    set.write_to(&args.out_dir)?;
    let matching = set.pairs.iter().filter(|p| p.matching).count();
    println!(
        "{} images, {} pairs ({matching} matching, {} planted) in {}",
        set.images.len(),
        set.pairs.len(),
        set.pairs.len() - matching,
        args.out_dir.display()
    );
    Ok(())
}

/// Answers wire-protocol requests with a built-in embedder, built once per
/// image shape.
fn serve_stream(spec: &EmbedderSpec, reader: &mut dyn Read, writer: &mut dyn Write) -> Result<()> {
    let registry = Registry::default();
    let mut models: HashMap<ImageDims, Box<dyn Embedder>> = HashMap::new();
    protocol::serve(reader, writer, |batch| {
        let dims = batch.first().ok_or("empty batch")?.dims();
        let model = match models.entry(dims) {
            Entry::Occupied(o) => o.into_mut(),
            Entry::Vacant(v) => v.insert(registry.build(spec, dims).map_err(|e| e.to_string())?),
        };
        let rows = model.features(batch).map_err(|e| e.to_string())?;
        Ok(rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v as f32).collect())
            .collect())
    })?;
    Ok(())
}

pub fn serve_embedder(args: &ServeArgs) -> Result<()> {
    let spec: EmbedderSpec = args.model.parse()?;
    if matches!(spec, EmbedderSpec::External(_)) {
        bail!(
            "serve-embedder serves built-in models only, got {}",
            args.model
        );
    }
    let Some(addr) = &args.listen else {
        let mut reader = BufReader::new(io::stdin().lock());
        let mut writer = BufWriter::new(io::stdout().lock());
        return serve_stream(&spec, &mut reader, &mut writer);
    };
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream
            .peer_addr()
            .map_or_else(|_| "?".into(), |a| a.to_string());
        info!("connection from {peer}");
        let spec = spec.clone();
        thread::spawn(move || {
            let result = stream
                .try_clone()
                .map_err(anyhow::Error::from)
                .and_then(|read_half| {
                    serve_stream(
                        &spec,
                        &mut BufReader::new(read_half),
                        &mut BufWriter::new(stream),
                    )
                });
            if let Err(e) = result {
                warn!("connection from {peer}: {e:#}");
            }
        });
    }
    Ok(())
}
