//! Command-line front end: `fit`, `sweep`, `explain` and `prototypes`.
//!
//! Every command prints exactly one JSON summary line on stdout; logs and
//! errors go to stderr. Exit status is 0 on success, 1 for invalid input
//! and 2 for internal failures.
//!
//! Feature-map archives hold an `acts` member laid out `n × c × h × w`,
//! optionally with `logits` (`n × K`) and `labels` (`n`). Head archives hold
//! `W` (`c × K`), `b` (`K`) and optionally a `class_names.txt` file with one
//! name per line. When `--head` is omitted the head is read from the
//! feature-map archive.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::explainer::{fit_explainer, load_explainer, ClassifierHead, Explainer, DEFAULT_PROTOTYPES};
use crate::fidelity::{sweep_classes, write_report, ClassTask, EvalBatch, ReportFormat, SweepConfig, DEFAULT_TOP_CANDIDATES};
use crate::reducers::{FitOptions, Method, NmfInit};
use crate::render::{
    blank_canvas, load_image, render_explanation, render_prototypes, score_map, write_atomic,
    ConceptPrototypes, RenderOptions, ScoredImage, DEFAULT_CANVAS, DEFAULT_THRESHOLD,
};
use crate::tensor::archive::read_archive_contents;
use crate::tensor::{to_channel_last, FeatureMapBatch};

pub const CLASS_NAMES_FILE: &str = "class_names.txt";
pub const DEFAULT_CONCEPTS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "ncav", version, about = "Concept-based explanations for CNN classifiers")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a reducer on feature maps and save the explainer archive.
    Fit(FitArgs),
    /// Measure fidelity over methods and concept counts.
    Sweep(SweepArgs),
    /// Explain one image with a score decomposition and overlays.
    Explain(ExplainArgs),
    /// Select and draw the top images for every concept.
    Prototypes(PrototypeArgs),
}

/// Settings shared by commands. Each may also come from the `--config` file;
/// flags take precedence.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON file with defaults for any of these settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for reducer initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target class, by name or index.
    #[arg(long)]
    pub class: Option<String>,
    /// Record wall-clock fit times in reports.
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// NMF initialization: random-uniform, nndsvd or from-kmeans.
    #[arg(long)]
    pub init: Option<NmfInit>,
    #[arg(long)]
    pub method: Option<Method>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Feature-map archive.
    #[arg(long)]
    pub acts: PathBuf,
    /// Head archive with `W` and `b`.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Number of concepts.
    #[arg(long)]
    pub cprime: Option<usize>,
    /// Layer the feature maps came from.
    #[arg(long)]
    pub layer: Option<String>,
    /// Output explainer archive.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Training feature maps.
    #[arg(long)]
    pub acts: PathBuf,
    /// Held-out feature maps with `logits`.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Comma-separated concept counts.
    #[arg(long, value_delimiter = ',')]
    pub cprime_list: Option<Vec<usize>>,
    /// Candidate classes for classification fidelity; 0 compares
    /// unrestricted argmaxes.
    #[arg(long)]
    pub top_candidates: Option<usize>,
    /// Write only this format; both by default.
    #[arg(long)]
    pub format: Option<ReportFormat>,
    /// Output directory for `report.json` and `report.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Explainer archive.
    #[arg(long)]
    pub explainer: PathBuf,
    /// Feature maps containing the image to explain.
    #[arg(long)]
    pub acts: PathBuf,
    /// Position of the image within `--acts`.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Source image for the instance overlays.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Feature maps to draw prototypes from.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Image list for `--dataset`, one path per line.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Prototypes per concept.
    #[arg(long)]
    pub prototypes: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PrototypeArgs {
    #[arg(long)]
    pub explainer: PathBuf,
    /// Dataset feature maps.
    #[arg(long)]
    pub acts: PathBuf,
    /// Image list, one path per line, in the order of `--acts`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub prototypes: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

/// Values from the config file, used where a flag is absent.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    seed: Option<u64>,
    class: Option<String>,
    max_iterations: Option<usize>,
    tolerance: Option<f64>,
    init: Option<NmfInit>,
    method: Option<Method>,
    cprime: Option<usize>,
    methods: Option<Vec<Method>>,
    cprime_list: Option<Vec<usize>>,
    top_candidates: Option<usize>,
    threshold: Option<f64>,
    prototypes: Option<usize>,
    format: Option<ReportFormat>,
    layer: Option<String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Common {
    fn merged(&self, file: &ConfigFile) -> Common {
        let f = file;
        Common {
            config: self.config.clone(),
            seed: self.seed.or(f.seed),
            class: self.class.clone().or_else(|| f.class.clone()),
            timings: self.timings,
            max_iterations: self.max_iterations.or(f.max_iterations),
            tolerance: self.tolerance.or(f.tolerance),
            init: self.init.or(f.init),
            method: self.method.or(f.method),
        }
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let defaults = FitOptions::default();
        let opts = FitOptions {
            max_iterations: self.max_iterations.unwrap_or(defaults.max_iterations),
            tolerance: self.tolerance.unwrap_or(defaults.tolerance),
            seed: self.seed.unwrap_or(defaults.seed),
            init: self.init.unwrap_or(defaults.init),
        };
        opts.validate()?;
        Ok(opts)
    }
}

/// Loaded feature maps plus whatever else their archive carries.
struct ActsArchive {
    maps: FeatureMapBatch,
    logits: Option<Array2<f64>>,
    labels: Option<Vec<usize>>,
    head: Option<ClassifierHead>,
}

fn load_head_parts(
    tensors: &crate::tensor::TensorMap,
    files: &std::collections::BTreeMap<String, Vec<u8>>,
) -> Result<ClassifierHead> {
    let names = files
        .get(CLASS_NAMES_FILE)
        .map(|bytes| {
            String::from_utf8_lossy(bytes)
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect::<Vec<_>>()
        });
    ClassifierHead::from_tensors(tensors.require("W")?, tensors.require("b")?, names)
}

fn load_acts(path: &Path) -> Result<ActsArchive> {
    let contents = read_archive_contents(path)?;
    let tensors = &contents.tensors;
    let maps = to_channel_last(tensors.require("acts")?)?;
    let logits = tensors.get("logits").map(|t| t.to_matrix()).transpose()?;
    let labels = tensors
        .get("labels")
        .map(|t| -> Result<Vec<usize>> {
            t.to_vector()?
                .into_iter()
                .map(|x| {
                    if x >= 0.0 && x.fract() == 0.0 {
                        Ok(x as usize)
                    } else {
                        Err(Error::InvalidArgument(format!("label {x} is not a class index")))
                    }
                })
                .collect()
        })
        .transpose()?;
    let head = if tensors.get("W").is_some() && tensors.get("b").is_some() {
        Some(load_head_parts(tensors, &contents.files)?)
    } else {
        None
    };
    Ok(ActsArchive {
        maps,
        logits,
        labels,
        head,
    })
}

fn load_head(path: Option<&Path>, acts: &ActsArchive) -> Result<ClassifierHead> {
    match path {
        Some(p) => {
            let contents = read_archive_contents(p)?;
            load_head_parts(&contents.tensors, &contents.files)
        }
        None => acts
            .head
            .clone()
            .ok_or_else(|| Error::MissingMember("W".into())),
    }
}

fn load_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

fn resolve_class(head: &ClassifierHead, class: Option<&str>) -> Result<Option<usize>> {
    class.map(|c| head.class_index(c)).transpose()
}

fn cmd_fit(args: &FitArgs, log: &mut dyn Write) -> Result<serde_json::Value> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let common = args.common.merged(&file);
    let method = common.method.unwrap_or(Method::Nmf);
    let c_prime = args.cprime.or(file.cprime).unwrap_or(DEFAULT_CONCEPTS);
    let opts = common.fit_options()?;
    let layer = args.layer.clone().or(file.layer).unwrap_or_default();

    let acts = load_acts(&args.acts)?;
    let head = load_head(args.head.as_deref(), &acts)?;
    let class = resolve_class(&head, common.class.as_deref())?;
    let _ = writeln!(
        log,
        "fitting {method} with {c_prime} concepts on {} images",
        acts.maps.n()
    );

    let started = Instant::now();
    let mut explainer = fit_explainer(&acts.maps, &head, c_prime, method, &opts)?.with_layer_name(layer);
    if let Some(k) = class {
        explainer = explainer.with_target_class(k);
    }
    let seconds = started.elapsed().as_secs_f64();
    let bytes = explainer.to_bytes()?;
    write_atomic(&args.out, &bytes)?;
    let stats = explainer.reducer().fit_stats();
    Ok(json!({
        "command": "fit",
        "method": method,
        "c_prime": c_prime,
        "objective": stats.objective,
        "iterations": stats.iterations,
        "seconds": seconds,
        "out": args.out,
    }))
}

fn cmd_sweep(args: &SweepArgs, log: &mut dyn Write) -> Result<serde_json::Value> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let common = args.common.merged(&file);
    let defaults = SweepConfig::default();
    let top = args
        .top_candidates
        .or(file.top_candidates)
        .unwrap_or(DEFAULT_TOP_CANDIDATES);
    let config = SweepConfig {
        methods: args
            .methods
            .clone()
            .or(file.methods)
            .or(common.method.map(|m| vec![m]))
            .unwrap_or(defaults.methods),
        concept_counts: args
            .cprime_list
            .clone()
            .or(file.cprime_list)
            .unwrap_or(defaults.concept_counts),
        options: common.fit_options()?,
        top_candidates: (top > 0).then_some(top),
        record_timings: common.timings,
    };

    let train = load_acts(&args.acts)?;
    let eval = load_acts(&args.eval)?;
    let head = load_head(args.head.as_deref(), &train)?;
    let class = resolve_class(&head, common.class.as_deref())?;
    let logits = match eval.logits {
        Some(l) => l,
        None => return Err(Error::MissingMember("logits".into())),
    };
    let labels = match (eval.labels, class) {
        (Some(l), _) => l,
        (None, Some(k)) => vec![k; eval.maps.n()],
        (None, None) => {
            let _ = writeln!(log, "no labels given; using the original model's predictions");
            logits
                .rows()
                .into_iter()
                .map(|r| {
                    (0..r.len()).fold(0, |best, i| if r[i] > r[best] { i } else { best })
                })
                .collect()
        }
    };
    let eval_batch = EvalBatch::new(eval.maps, logits, labels)?;
    let task = ClassTask {
        class_index: class.unwrap_or(0),
        train: train.maps,
        eval: eval_batch,
    };
    let _ = writeln!(
        log,
        "sweeping {} methods × {} concept counts",
        config.methods.len(),
        config.concept_counts.len()
    );
    let report = sweep_classes(&[task], &head, &config)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let formats = match args.format.or(file.format) {
        Some(f) => vec![f],
        None => vec![ReportFormat::Json, ReportFormat::Csv],
    };
    let mut written = Vec::new();
    for f in formats {
        let name = match f {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
        };
        let path = args.out.join(name);
        write_report(&report, &path, f)?;
        written.push(path);
    }
    Ok(json!({
        "command": "sweep",
        "cells": report.cells.len(),
        "files": written,
    }))
}

/// Score maps and images for the `m` prototypes of each concept.
fn collect_prototypes(
    explainer: &Explainer,
    dataset: &FeatureMapBatch,
    manifest: Option<&[PathBuf]>,
    m: usize,
) -> Result<Vec<ConceptPrototypes>> {
    if let Some(paths) = manifest {
        if paths.len() != dataset.n() {
            return Err(Error::InvalidArgument(format!(
                "manifest lists {} images but the archive holds {}",
                paths.len(),
                dataset.n()
            )));
        }
    }
    let position = explainer.position_scores(dataset)?;
    let (h, w) = (dataset.h(), dataset.w());
    let canvas = |_: usize| blank_canvas(DEFAULT_CANVAS.max(w as u32), DEFAULT_CANVAS.max(h as u32));
    (0..explainer.n_concepts())
        .map(|j| {
            let set = explainer.select_prototypes(dataset, j, m)?;
            let images = set
                .image_indices
                .iter()
                .map(|&i| {
                    let image = match manifest {
                        Some(paths) => load_image(&paths[i])?,
                        None => canvas(i),
                    };
                    Ok(ScoredImage {
                        image_index: i,
                        image,
                        score_map: score_map(&position, h, w, i, j)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ConceptPrototypes { set, images })
        })
        .collect()
}

fn render_options(threshold: Option<f64>, file: &ConfigFile) -> Result<RenderOptions> {
    let threshold = threshold.or(file.threshold).unwrap_or(DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    Ok(RenderOptions {
        threshold,
        ..RenderOptions::default()
    })
}

fn cmd_explain(args: &ExplainArgs, log: &mut dyn Write) -> Result<serde_json::Value> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let common = args.common.merged(&file);
    let options = render_options(args.threshold, &file)?;
    let m = args.prototypes.or(file.prototypes).unwrap_or(DEFAULT_PROTOTYPES);

    let explainer = load_explainer(&args.explainer)?;
    let acts = load_acts(&args.acts)?;
    if args.index >= acts.maps.n() {
        return Err(Error::InvalidArgument(format!(
            "index {} out of range for {} images",
            args.index,
            acts.maps.n()
        )));
    }
    let single = acts.maps.image(args.index)?;
    let class = match resolve_class(explainer.head(), common.class.as_deref())? {
        Some(k) => k,
        None => {
            let scores = explainer.head().predict(&single)?;
            let row = scores.row(0);
            (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
        }
    };
    let local = explainer.explain_local(&single, class)?;

    let (h, w) = (single.h(), single.w());
    let image = match &args.image {
        Some(p) => load_image(p)?,
        None => blank_canvas(DEFAULT_CANVAS.max(w as u32), DEFAULT_CANVAS.max(h as u32)),
    };
    let position = explainer.position_scores(&single)?;
    let instance_maps = (0..explainer.n_concepts())
        .map(|j| score_map(&position, h, w, 0, j))
        .collect::<Result<Vec<_>>>()?;

    let prototypes = match &args.dataset {
        Some(path) => {
            let dataset = load_acts(path)?;
            let manifest = args.manifest.as_deref().map(load_manifest).transpose()?;
            collect_prototypes(&explainer, &dataset.maps, manifest.as_deref(), m)?
        }
        None => (0..explainer.n_concepts())
            .map(|j| ConceptPrototypes {
                set: crate::explainer::PrototypeSet {
                    concept_index: j,
                    image_indices: Vec::new(),
                    scores: Vec::new(),
                },
                images: Vec::new(),
            })
            .collect(),
    };

    let _ = writeln!(log, "explaining class {} ({})", class, local.class_name);
    let files = render_explanation(&local, &image, &instance_maps, &prototypes, &args.out, &options)?;
    Ok(json!({
        "command": "explain",
        "class": class,
        "class_name": local.class_name,
        "exact_score": local.exact_score,
        "approx_score": local.approx_score,
        "files": files.count(),
        "out": args.out,
    }))
}

fn cmd_prototypes(args: &PrototypeArgs, log: &mut dyn Write) -> Result<serde_json::Value> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let options = render_options(args.threshold, &file)?;
    let m = args.prototypes.or(file.prototypes).unwrap_or(DEFAULT_PROTOTYPES);

    let explainer = load_explainer(&args.explainer)?;
    let acts = load_acts(&args.acts)?;
    let manifest = args.manifest.as_deref().map(load_manifest).transpose()?;
    let prototypes = collect_prototypes(&explainer, &acts.maps, manifest.as_deref(), m)?;
    let _ = writeln!(
        log,
        "drawing {m} prototypes for each of {} concepts",
        explainer.n_concepts()
    );
    let paths = render_prototypes(&prototypes, &args.out, &options)?;

    let sets: Vec<_> = prototypes.iter().map(|p| &p.set).collect();
    let listing = serde_json::to_string_pretty(&sets)?;
    write_atomic(&args.out.join("prototypes.json"), listing.as_bytes())?;
    Ok(json!({
        "command": "prototypes",
        "concepts": paths.len(),
        "files": paths.iter().map(Vec::len).sum::<usize>(),
        "out": args.out,
    }))
}

fn dispatch(cli: &Cli, log: &mut dyn Write) -> Result<serde_json::Value> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, log),
        Command::Sweep(a) => cmd_sweep(a, log),
        Command::Explain(a) => cmd_explain(a, log),
        Command::Prototypes(a) => cmd_prototypes(a, log),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, log: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(log, "{}", e.render());
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            let _ = writeln!(log, "error: --threads must be at least 1");
            return 1;
        }
        // a global pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli, log) {
        Ok(summary) => {
            let _ = writeln!(out, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            let _ = writeln!(out, "{}", json!({ "error": e.to_string() }));
            if e.is_input_error() {
                1
            } else {
                2
            }
        }
    }
}
