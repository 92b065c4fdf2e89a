//! Command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::container::{load_grid, load_params, save_grid, save_params};
use crate::decoder::{decoder_forward, toy_scenes, train_toy, LossPoint};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResults};
use crate::grid::{cell_of, decode_predictions, encode_labels};
use crate::labels::{read_labels, write_labels_file, LabelSet};
use crate::pipeline::{
    augment, count_table, extract_dots, slice_around_objects, slice_sequential, split_dataset, write_manifest,
    DotColorTable, Mosaic, TileRecord, SPLIT_NAMES,
};
use crate::raster::{read_raster, write_raster};
use crate::report::render_html;
use crate::store::{read_predictions, write_predictions_file, PredictionRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_WARNING: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "celldet", version, about = "Grid-cell LSTM detection toolkit")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a mosaic into tiles and write a tile manifest.
    Slice(SliceArgs),
    /// Write randomly transformed copies of a tile and its labels.
    Augment(AugmentArgs),
    /// Encode a label CSV into per-cell slot targets (JSON lines).
    Encode(EncodeArgs),
    /// Recover dot annotations from a dotted/plain image pair.
    ExtractDots(DotsArgs),
    /// Train the decoder on synthetic scenes.
    TrainToy(TrainArgs),
    /// Run a trained decoder over feature grids.
    Predict(PredictArgs),
    /// Score predictions against labels; writes results JSON and an HTML report.
    Evaluate(EvaluateArgs),
    /// Re-render the HTML report from a results file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub mosaic: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also write tile rasters and a tile label CSV here.
    #[arg(long)]
    pub tiles_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DotsArgs {
    #[arg(long)]
    pub dotted: Option<PathBuf>,
    #[arg(long)]
    pub plain: Option<PathBuf>,
    /// Label CSV of the recovered dots.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Feature-grid containers; repeatable.
    #[arg(long = "features")]
    pub features: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Defaults to the results path with an `.html` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// A finished command; warnings map to a nonzero exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Warning(String),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Ok => EXIT_OK,
            Outcome::Warning(_) => EXIT_WARNING,
        }
    }
}

fn pick(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone()).ok_or_else(|| {
        Error::config(format!(
            "missing path `{name}` (flag --{} or config key)",
            name.replace('_', "-")
        ))
    })
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::input(format!("{} has no usable file name", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Resolve the run configuration: file, then `--seed`.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run id over the parameters only, so relocating files keeps it stable.
fn run_id(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.mosaic = None;
    c.labels = None;
    c.manifest = None;
    c.tiles_dir = None;
    c.input = None;
    c.dotted = None;
    c.plain = None;
    c.params = None;
    c.features.clear();
    c.predictions = None;
    c.results = None;
    c.report = None;
    c.output = None;
    c.out_dir = None;
    c.dot_table = None;
    c.run_id()
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads must be >= 1"));
        }
        // A second initialisation in the same process is harmless to ignore.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Slice(a) => cmd_slice(&cfg, a),
        Command::Augment(a) => cmd_augment(&cfg, a),
        Command::Encode(a) => cmd_encode(&cfg, a),
        Command::ExtractDots(a) => cmd_extract_dots(&cfg, a),
        Command::TrainToy(a) => cmd_train_toy(&cfg, a),
        Command::Predict(a) => cmd_predict(&cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Report(a) => cmd_report(&cfg, a),
    }
}

fn check_inside(id: &str, anns: &[crate::ObjectAnnotation], w: usize, h: usize) -> Result<()> {
    for a in anns {
        if !(a.x >= 0.0 && a.x < w as f64 && a.y >= 0.0 && a.y < h as f64) {
            return Err(Error::input(format!(
                "{id}: annotation at ({}, {}) lies outside the {w}x{h} image",
                a.x, a.y
            )));
        }
    }
    Ok(())
}

pub fn cmd_slice(cfg: &RunConfig, a: SliceArgs) -> Result<Outcome> {
    let mosaic_path = pick(a.mosaic, &cfg.mosaic, "mosaic")?;
    let labels_path = pick(a.labels, &cfg.labels, "labels")?;
    let manifest = pick(a.manifest, &cfg.manifest, "manifest")?;
    let tiles_dir = a.tiles_dir.or_else(|| cfg.tiles_dir.clone());

    let raster = read_raster(&mosaic_path)?;
    let id = stem(&mosaic_path)?;
    let labels = read_labels(&labels_path)?;
    let anns = labels.get(&id).cloned().unwrap_or_default();
    check_inside(&id, &anns, raster.width, raster.height)?;
    let mosaic = Mosaic {
        id: id.clone(),
        width: raster.width,
        height: raster.height,
        annotations: anns,
    };
    let tiles = match cfg.slice_mode.as_str() {
        "around_objects" => slice_around_objects(&mosaic, cfg.tile_size)?,
        _ => slice_sequential(&mosaic, cfg.tile_size, cfg.stride, cfg.keep_empty)?,
    };

    // Split tile indices, then tag tiles in their original order.
    let idx: Vec<usize> = (0..tiles.len()).collect();
    let parts = split_dataset(&idx, cfg.split, cfg.seed)?;
    let mut split_of = vec![""; tiles.len()];
    for (part, name) in parts.iter().zip(SPLIT_NAMES) {
        for &i in part {
            split_of[i] = name;
        }
    }
    let records: Vec<TileRecord> = tiles
        .iter()
        .zip(&split_of)
        .map(|(t, s)| TileRecord::new(t, Some(s)))
        .collect();
    if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    write_manifest(&manifest, &records)?;

    if let Some(dir) = tiles_dir {
        make_dir(&dir)?;
        let mut tile_labels = LabelSet::new();
        for t in &tiles {
            let tid = t.tile_id();
            write_raster(&dir.join(format!("{tid}.png")), &t.render(&raster)?)?;
            if !t.annotations.is_empty() {
                tile_labels.insert(tid, t.annotations.clone());
            }
        }
        write_labels_file(&dir.join("labels.csv"), &tile_labels)?;
    }
    let attached: usize = tiles.iter().map(|t| t.annotations.len()).sum();
    println!(
        "tiles {} (train {}, dev {}, test {}); annotations {} attached {}",
        tiles.len(),
        parts[0].len(),
        parts[1].len(),
        parts[2].len(),
        mosaic.annotations.len(),
        attached
    );
    Ok(Outcome::Ok)
}

pub fn cmd_augment(cfg: &RunConfig, a: AugmentArgs) -> Result<Outcome> {
    let input = pick(a.input, &cfg.input, "input")?;
    let labels_path = pick(a.labels, &cfg.labels, "labels")?;
    let out_dir = pick(a.out_dir, &cfg.out_dir, "out_dir")?;
    let ranges = cfg.augment_ranges()?;
    let img = read_raster(&input)?;
    let id = stem(&input)?;
    let anns = read_labels(&labels_path)?.get(&id).cloned().unwrap_or_default();
    check_inside(&id, &anns, img.width, img.height)?;
    make_dir(&out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out_labels = LabelSet::new();
    let mut kept = 0;
    for i in 0..cfg.copies {
        let aug = augment(&img, &anns, &ranges, &mut rng)?;
        let cid = format!("{id}_aug{i}");
        write_raster(&out_dir.join(format!("{cid}.png")), &aug.image)?;
        kept += aug.annotations.len();
        if !aug.annotations.is_empty() {
            out_labels.insert(cid, aug.annotations);
        }
    }
    write_labels_file(&out_dir.join("labels.csv"), &out_labels)?;
    println!(
        "copies {}; annotations in {} out {}",
        cfg.copies,
        anns.len() * cfg.copies,
        kept
    );
    Ok(Outcome::Ok)
}

/// One present slot of an encoded image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSlot {
    pub row: usize,
    pub col: usize,
    pub slot: usize,
    pub class_id: usize,
    pub coords: Vec<f64>,
}

/// One line of `encode` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub image_id: String,
    /// Annotations beyond the per-cell slot cap.
    pub dropped: usize,
    pub slots: Vec<EncodedSlot>,
}

pub fn cmd_encode(cfg: &RunConfig, a: EncodeArgs) -> Result<Outcome> {
    let labels_path = pick(a.labels, &cfg.labels, "labels")?;
    let output = pick(a.output, &cfg.output, "output")?;
    let spec = cfg.grid_spec()?;
    let labels = read_labels(&labels_path)?;
    let mut w = create(&output)?;
    let mut total_dropped = 0;
    for (id, anns) in &labels {
        for ann in anns {
            cell_of(ann, &spec).map_err(|e| Error::input(format!("{id}: {e}")))?;
        }
        let (targets, dropped) = encode_labels(anns, &spec)?;
        total_dropped += dropped;
        let g = spec.grid_size;
        let k = spec.slots_per_cell;
        let slots = targets
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.present)
            .map(|(i, s)| EncodedSlot {
                row: i / (g * k),
                col: (i / k) % g,
                slot: i % k,
                class_id: s.class_id,
                coords: s.coords[..spec.coord_arity].to_vec(),
            })
            .collect();
        serde_json::to_writer(
            &mut w,
            &EncodedImage {
                image_id: id.clone(),
                dropped,
                slots,
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(&output, e))?;
    }
    w.flush().map_err(|e| Error::io(&output, e))?;
    println!("images {}; dropped over slot cap {}", labels.len(), total_dropped);
    Ok(Outcome::Ok)
}

pub fn cmd_extract_dots(cfg: &RunConfig, a: DotsArgs) -> Result<Outcome> {
    let dotted_path = pick(a.dotted, &cfg.dotted, "dotted")?;
    let plain_path = pick(a.plain, &cfg.plain, "plain")?;
    let output = pick(a.output, &cfg.output, "output")?;
    let table = match &cfg.dot_table {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<DotColorTable>(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => DotColorTable::sea_lion_defaults(),
    };
    table.validate()?;
    let dotted = read_raster(&dotted_path)?;
    let plain = read_raster(&plain_path)?;
    let found = extract_dots(&dotted, &plain, &table, &cfg.dot_params())?;
    let id = stem(&dotted_path)?;
    let names: Vec<String> = table.classes.iter().map(|c| c.name.clone()).collect();
    let census = count_table(&[("dots", &found.annotations)], &names, None)?;
    let mut labels = LabelSet::new();
    if !found.annotations.is_empty() {
        labels.insert(id, found.annotations.clone());
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    write_labels_file(&output, &labels)?;
    let counts_path = output.with_extension("counts.csv");
    census.write_csv(create(&counts_path)?)?;
    println!("dots {}; unclassified {}", found.annotations.len(), found.unclassified);
    Ok(Outcome::Ok)
}

fn write_loss_csv(path: &Path, curve: &[LossPoint]) -> Result<()> {
    let mut w = create(path)?;
    let mut text = String::from("step,l_o,l_r,l_c,total\n");
    for p in curve {
        text.push_str(&format!("{},{},{},{},{}\n", p.step, p.l_o, p.l_r, p.l_c, p.total));
    }
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Image id of batch entry `b` of the feature file `path`.
pub fn feature_image_id(path: &Path, b: usize) -> Result<String> {
    Ok(format!("{}#{b}", stem(path)?))
}

pub fn cmd_train_toy(cfg: &RunConfig, a: TrainArgs) -> Result<Outcome> {
    let out_dir = pick(a.out_dir, &cfg.out_dir, "out_dir")?;
    let scenes = toy_scenes(&cfg.toy_config()?)?;
    let (params, curve) = train_toy(&scenes.set, &cfg.train_config())?;
    make_dir(&out_dir)?;
    save_params(&out_dir.join("params.cdt"), &params)?;
    let features = out_dir.join("features.cdt");
    save_grid(&features, &scenes.set.features)?;
    write_loss_csv(&out_dir.join("loss.csv"), &curve)?;
    let mut labels = LabelSet::new();
    for (b, anns) in scenes.labels.iter().enumerate() {
        labels.insert(feature_image_id(&features, b)?, anns.clone());
    }
    write_labels_file(&out_dir.join("labels.csv"), &labels)?;
    let (first, last) = (curve[0].total, curve[curve.len() - 1].total);
    println!(
        "steps {}; loss {first:.6} -> {last:.6} ({:.2}% of initial)",
        curve.len() - 1,
        100.0 * last / first
    );
    Ok(Outcome::Ok)
}

pub fn cmd_predict(cfg: &RunConfig, a: PredictArgs) -> Result<Outcome> {
    let params_path = pick(a.params, &cfg.params, "params")?;
    let features = if a.features.is_empty() {
        cfg.features.clone()
    } else {
        a.features
    };
    if features.is_empty() {
        return Err(Error::config("missing path `features` (flag --features or config key)"));
    }
    let output = pick(a.output, &cfg.output, "output")?;
    let spec = cfg.grid_spec()?;
    let opts = cfg.decode_options()?;
    let params = load_params(&params_path)?;
    let pc = params.config();
    if pc.num_classes != spec.num_classes || pc.coord_arity != spec.coord_arity {
        return Err(Error::shape(format!(
            "params predict {} classes with {} coordinates; config expects {} and {}",
            pc.num_classes, pc.coord_arity, spec.num_classes, spec.coord_arity
        )));
    }
    let rid = run_id(cfg);
    let mut records = Vec::new();
    for path in &features {
        let grid = load_grid(path)?;
        if grid.height != spec.grid_size || grid.width != spec.grid_size {
            return Err(Error::shape(format!(
                "{} holds {}x{} grids; config grid_size is {}",
                path.display(),
                grid.height,
                grid.width,
                spec.grid_size
            )));
        }
        let pred = decoder_forward(&grid, &params, spec.slots_per_cell)?;
        for b in 0..grid.batch {
            let id = feature_image_id(path, b)?;
            for d in decode_predictions(&pred, b, &id, &spec, opts)? {
                records.push(PredictionRecord::new(&d, &cfg.model_tag, &rid));
            }
        }
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    write_predictions_file(&output, &records)?;
    println!("detections {}; run {rid}", records.len());
    Ok(Outcome::Ok)
}

fn write_report(path: &Path, results: &EvalResults) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(render_html("Evaluation report", results).as_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_evaluate(cfg: &RunConfig, a: EvaluateArgs) -> Result<Outcome> {
    let preds_path = pick(a.predictions, &cfg.predictions, "predictions")?;
    let labels_path = pick(a.labels, &cfg.labels, "labels")?;
    let results_path = pick(a.results, &cfg.results, "results")?;
    let report_path = a
        .report
        .or_else(|| cfg.report.clone())
        .unwrap_or_else(|| results_path.with_extension("html"));
    let ecfg = cfg.eval_config()?;
    let dets: Vec<_> = read_predictions(&preds_path)?
        .iter()
        .map(PredictionRecord::detection)
        .collect();
    let labels = read_labels(&labels_path)?;
    let results = evaluate(&dets, &labels, &ecfg)?;

    let mut w = create(&results_path)?;
    serde_json::to_writer_pretty(&mut w, &results)?;
    w.write_all(b"\n").map_err(|e| Error::io(&results_path, e))?;
    w.flush().map_err(|e| Error::io(&results_path, e))?;
    write_report(&report_path, &results)?;

    println!("mAP {:.4}; mean RMSE {:.4}", results.map, results.mean_rmse);
    for c in &results.classes {
        println!("  {}: AP {:.4} RMSE {:.4}", c.name, c.ap, c.rmse);
    }
    if !results.unknown_images.is_empty() || results.ignored_detections > 0 {
        let msg = format!(
            "excluded detections: {} unknown image ids ({}), {} out-of-range classes",
            results.unknown_images.len(),
            results.unknown_images.join(", "),
            results.ignored_detections
        );
        return Ok(Outcome::Warning(msg));
    }
    Ok(Outcome::Ok)
}

pub fn cmd_report(cfg: &RunConfig, a: ReportArgs) -> Result<Outcome> {
    let results_path = pick(a.results, &cfg.results, "results")?;
    let output = a
        .output
        .or_else(|| cfg.report.clone())
        .unwrap_or_else(|| results_path.with_extension("html"));
    let text = std::fs::read_to_string(&results_path).map_err(|e| Error::io(&results_path, e))?;
    let results: EvalResults = serde_json::from_str(&text)?;
    write_report(&output, &results)?;
    Ok(Outcome::Ok)
}
