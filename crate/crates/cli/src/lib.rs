//! Commands behind the `cycledance` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cycledance_core::data::{load_dataset, write_synthetic_dataset, Dataset, DatasetManifest, StyleDomain};
use cycledance_core::features::io::{read_audio_csv, read_motion_csv, write_motion_csv};
use cycledance_core::metrics::{evaluate, Direction, EvalDomain, MetricsReport, Passthrough, Transfer};
use cycledance_core::model::Ablation;
use cycledance_core::training::{TrainConfig, Trainer};
use cycledance_core::{Error, Result};
use serde::Serialize;

/// Seed of the shipped benchmark dataset and training runs.
pub const DEFAULT_SEED: u64 = 7;

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        io(parent, fs::create_dir_all(parent))?;
    }
    io(path, fs::write(path, text))
}

pub fn synth_data(out: &Path, seed: u64, clips: usize, seconds: f64, eval_clips: usize) -> Result<DatasetManifest> {
    write_synthetic_dataset(out, seed, clips, seconds, eval_clips)
}

pub fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_json(&io(p, fs::read_to_string(p))?).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: p.to_path_buf(),
                message: j.to_string(),
            },
            other => other,
        }),
        None => Ok(TrainConfig::default()),
    }
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub ablation: Ablation,
    pub out: &'a Path,
    pub epochs: Option<usize>,
    pub resume: Option<&'a Path>,
}

/// Trains one configuration, or continues a saved run with `resume`.
pub fn train(args: &TrainArgs) -> Result<Trainer> {
    let ds = load_dataset(args.data)?;
    let mut trainer = match args.resume {
        Some(dir) => {
            let t = load_checkpoint(dir)?;
            if t.ablation() != args.ablation {
                return Err(Error::invalid(format!(
                    "checkpoint {} was trained as {}, not {}",
                    dir.display(),
                    t.ablation(),
                    args.ablation
                )));
            }
            t
        }
        None => {
            let mut cfg = read_config(args.config)?;
            if let Some(e) = args.epochs {
                cfg.epochs = e;
            }
            Trainer::new(cfg, args.ablation, &ds.x, &ds.y)?
        }
    };
    trainer.train(&ds.x, &ds.y, Some(args.out))?;
    Ok(trainer)
}

/// Loads a checkpoint from either its own directory or a training output
/// directory holding `final/`.
pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let fin = path.join("final");
    if !path.join("manifest.json").exists() && fin.join("manifest.json").exists() {
        Trainer::load(&fin)
    } else {
        Trainer::load(path)
    }
}

/// Metadata written next to every transferred clip.
#[derive(Debug, Serialize)]
struct TransferInfo<'a> {
    config_hash: &'a str,
    direction: Direction,
    source: String,
    frames: usize,
}

pub struct TransferArgs<'a> {
    pub ckpt: Option<&'a Path>,
    pub input: &'a Path,
    pub music: Option<&'a Path>,
    pub direction: Direction,
    pub out: &'a Path,
    /// Uses the identity mapping instead of a trained generator.
    pub identity: bool,
}

pub fn transfer(args: &TransferArgs) -> Result<()> {
    let motion = read_motion_csv(args.input, "")?;
    let music = args.music.map(read_audio_csv).transpose()?;
    let (result, hash) = if args.identity {
        (Passthrough.transfer(&motion, music.as_ref(), args.direction)?, "identity".to_string())
    } else {
        let dir = args
            .ckpt
            .ok_or_else(|| Error::invalid("--ckpt is required unless --identity is given"))?;
        let t = load_checkpoint(dir)?;
        if t.model.generator(args.direction).uses_music() && music.is_none() {
            return Err(Error::invalid(format!(
                "the {} model needs music features; pass --music",
                t.ablation()
            )));
        }
        (
            t.model.transfer(&motion, music.as_ref(), args.direction)?,
            t.config_hash().to_string(),
        )
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        io(parent, fs::create_dir_all(parent))?;
    }
    write_motion_csv(args.out, &result)?;
    let info = TransferInfo {
        config_hash: &hash,
        direction: args.direction,
        source: args.input.display().to_string(),
        frames: result.n_frames(),
    };
    write_text(&sidecar(args.out), &serde_json::to_string_pretty(&info)?)
}

/// `clip.csv` → `clip.csv.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Held-out domains when the dataset has them, else the training domains.
pub fn eval_domains(ds: &Dataset) -> (&StyleDomain, &StyleDomain) {
    match (&ds.eval_x, &ds.eval_y) {
        (Some(x), Some(y)) => (x, y),
        _ => (&ds.x, &ds.y),
    }
}

/// MFD and PFD of `model` in both directions on a dataset's evaluation
/// clips.
pub fn evaluate_model(model: &dyn Transfer, ds: &Dataset, hash: &str, min_gap: usize) -> Result<MetricsReport> {
    let (x, y) = eval_domains(ds);
    let (px, py) = (x.pairs(), y.pairs());
    let ex = EvalDomain {
        label: &ds.x.name,
        clips: &px,
    };
    let ey = EvalDomain {
        label: &ds.y.name,
        clips: &py,
    };
    evaluate(model, &ex, &ey, &Direction::BOTH, hash, min_gap)
}

pub struct EvaluateArgs<'a> {
    pub ckpt: Option<&'a Path>,
    pub data: &'a Path,
    pub out: &'a Path,
    pub min_gap: usize,
    pub identity: bool,
}

pub fn evaluate_command(args: &EvaluateArgs) -> Result<MetricsReport> {
    let ds = load_dataset(args.data)?;
    let report = if args.identity {
        evaluate_model(&Passthrough, &ds, "identity", args.min_gap)?
    } else {
        let dir = args
            .ckpt
            .ok_or_else(|| Error::invalid("--ckpt is required unless --identity is given"))?;
        let t = load_checkpoint(dir)?;
        if t.step() == 0 {
            return Err(Error::invalid(format!("checkpoint {} has not been trained", dir.display())));
        }
        evaluate_model(&t.model, &ds, t.config_hash(), args.min_gap)?
    };
    write_text(args.out, &report.to_csv())?;
    Ok(report)
}

/// One trained configuration of an ablation run.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub seed: u64,
    pub config_hash: String,
    pub report: MetricsReport,
    pub seconds: f64,
}

pub struct AblateArgs<'a> {
    pub data: &'a Path,
    pub out: &'a Path,
    pub config: Option<&'a Path>,
    pub epochs: Option<usize>,
    pub ablations: &'a [Ablation],
}

/// Column order of the comparison table.
pub fn table_columns(x: &str, y: &str) -> Vec<(String, &'static str)> {
    let mut cols = Vec::new();
    for d in Direction::BOTH {
        for m in ["MFD", "PFD"] {
            cols.push((d.name(x, y), m));
        }
    }
    cols
}

/// `ablation.csv`: one row per configuration with MFD and PFD per
/// direction, plus its seed and config hash.
pub fn ablation_table(rows: &[AblationRow], x: &str, y: &str) -> String {
    let cols = table_columns(x, y);
    let mut s = String::from("config,seed,config_hash");
    for (d, m) in &cols {
        write!(s, ",{d}_{m}").unwrap();
    }
    s.push('\n');
    for r in rows {
        write!(s, "{},{},{}", r.ablation, r.seed, r.config_hash).unwrap();
        for (d, m) in &cols {
            let v = r.report.value(d, m).expect("report covers both directions");
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Trains and evaluates each configuration under `out/<name>/`, then writes
/// `ablation.csv`, `loss_curves.csv` and `reference.csv` (the untransferred
/// source clips scored the same way).
pub fn ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    let ds = load_dataset(args.data)?;
    let mut base = read_config(args.config)?;
    if let Some(e) = args.epochs {
        base.epochs = e;
    }
    let (xn, yn) = (ds.x.name.clone(), ds.y.name.clone());
    let mut rows = Vec::new();
    let mut curves = String::from("config,seed,step,loss_name,value\n");
    for &ablation in args.ablations {
        let dir = args.out.join(ablation.name());
        let started = std::time::Instant::now();
        let mut t = Trainer::new(base.clone(), ablation, &ds.x, &ds.y)?;
        t.train(&ds.x, &ds.y, Some(&dir))?;
        let seconds = started.elapsed().as_secs_f64();
        let report = evaluate_model(&t.model, &ds, t.config_hash(), 0)?;
        write_text(&dir.join("report.csv"), &report.to_csv())?;
        for r in t.history() {
            for (name, v) in r.entries() {
                writeln!(curves, "{ablation},{},{},{name},{v}", base.seed, r.step).unwrap();
            }
        }
        rows.push(AblationRow {
            ablation,
            seed: base.seed,
            config_hash: t.config_hash().to_string(),
            report,
            seconds,
        });
    }
    write_text(&args.out.join("ablation.csv"), &ablation_table(&rows, &xn, &yn))?;
    write_text(&args.out.join("loss_curves.csv"), &curves)?;
    let reference = evaluate_model(&Passthrough, &ds, "identity", 0)?;
    write_text(&args.out.join("reference.csv"), &reference.to_csv())?;
    Ok(rows)
}

/// Process exit status for an error: 3 for numeric failures, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

/// Single-line `error kind=<kind> reason=<message>` for an error.
pub fn error_line(e: &Error) -> String {
    let kind = if e.is_numeric() { "numeric" } else { "validation" };
    let reason: String = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error kind={kind} reason={reason}")
}
