//! The five subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use smd_core::backbone::BackboneConfig;
use smd_core::data::{render_split, split_configs, AugmentFlags, SceneConfig, Split};
use smd_core::field::HeadKind;
use smd_core::infer::{infer_grid, InferOptions};
use smd_core::metrics::{evaluate, ErrorReport};
use smd_core::model::{ModelConfig, SmdModel};
use smd_core::sampling::DisparityField;
use smd_core::train::{GtRes, SamplingKind, TrainConfig, Trainer};
use smd_core::{ExecMode, SmdError};

use crate::args::{Cli, Command, CompareArgs, EvalArgs, GenArgs, InferArgs, TrainArgs};
use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{load_split, parse_kv, read_sample, sample_dir, Manifest, SplitEntry};
use crate::fsutil::write_atomic;
use crate::{pfm, png};

pub fn run(cli: Cli) -> Result<()> {
    let mode = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, mode),
        Command::Train(a) => cmd_train(&a, mode),
        Command::Infer(a) => cmd_infer(&a, mode),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a, mode),
    }
}

pub fn cmd_gen(a: &GenArgs, mode: ExecMode) -> Result<()> {
    let template = SceneConfig {
        width: a.width,
        height: a.height,
        sr: a.sr,
        layers: a.layers,
        d_lo: a.d_lo,
        d_hi: a.d_hi,
        d_max: a.d_max,
        ..SceneConfig::default()
    };
    template.validate()?;
    if a.train == 0 || a.val == 0 || a.test == 0 {
        bail!(SmdError::Config("train, val and test need at least one scene each".into()));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = Manifest {
        master_seed: a.seed,
        scene: template,
        splits: Default::default(),
    };
    for (split, n) in [
        (Split::Train, a.train),
        (Split::Val, a.val),
        (Split::Test, a.test),
        (Split::TestOod, a.test_ood),
    ] {
        if n == 0 {
            continue;
        }
        let samples = render_split(&split_configs(&template, a.seed, split, n), mode)?;
        let mut entries = Vec::with_capacity(n);
        for (i, s) in samples.iter().enumerate() {
            crate::dataset::write_sample(&sample_dir(&a.out, split, i), s)?;
            entries.push(SplitEntry {
                dir: format!("{}/{i:04}", split.name()),
                seed: s.seed,
            });
        }
        manifest.splits.insert(split.name().to_string(), entries);
    }
    manifest.save(&a.out)?;
    eprintln!("wrote {} samples to {}", manifest.sample_count(), a.out.display());
    Ok(())
}

pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        model: ModelConfig {
            kind: HeadKind::parse(&a.head)?,
            backbone: BackboneConfig {
                base_channels: a.base_channels,
                feature_dim: a.feature_dim,
            },
            width_factor: a.width_factor,
            frequency: a.frequency,
        },
        points: a.points,
        crop: a.crop,
        epochs: a.epochs,
        steps_per_epoch: a.steps_per_epoch,
        lr: a.lr,
        sampling: SamplingKind::parse(&a.sampling, a.rho)?,
        gt_res: GtRes::parse(&a.gt_res)?,
        augment: if a.no_augment {
            AugmentFlags::default()
        } else {
            AugmentFlags {
                chromatic: true,
                hflip: true,
                vflip: true,
            }
        },
        seed: a.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{},{l}", i + 1).expect("string write");
    }
    s
}

pub fn cmd_train(a: &TrainArgs, mode: ExecMode) -> Result<()> {
    let cfg = train_config(a)?;
    let data = load_split(&a.data, Split::Train).with_context(|| format!("loading {}", a.data.display()))?;
    let d_max = data.first().map(|s| s.d_max).unwrap_or(1.0);
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let saved = TrainConfig {
                epochs: cfg.epochs,
                ..ck.train
            };
            if saved != cfg {
                bail!(SmdError::Checkpoint(format!(
                    "resume mismatch: {} was trained with different settings",
                    path.display()
                )));
            }
            if ck.d_max != d_max {
                bail!(SmdError::Checkpoint(format!("resume mismatch: d_max {} vs {d_max}", ck.d_max)));
            }
            Trainer::resume(cfg, ck.model, ck.adam, ck.losses)?
        }
        None => Trainer::new(cfg)?,
    };
    trainer.run(&data, mode, a.stop_after, |e, l| eprintln!("epoch {e} loss {l:.6}"))?;
    checkpoint::save(&a.out, &Checkpoint::from_trainer(&trainer, d_max))?;
    let log = a.loss_log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_atomic(&log, loss_csv(&trainer.losses).as_bytes())?;
    eprintln!("step {} written to {}", trainer.step_count(), a.out.display());
    Ok(())
}

/// Disparity in raw pixels as stored in a PFM file.
pub fn to_stored(pred: &DisparityField, d_max: f64) -> DisparityField {
    pred.map(|v| (v * d_max) as f32 as f64)
}

fn write_prediction(
    model: &SmdModel,
    input: &smd_core::backbone::StereoInput,
    d_max: f64,
    a: &InferArgs,
    out: &Path,
    mode: ExecMode,
) -> Result<()> {
    let point = model.kind == HeadKind::L1;
    let opts = InferOptions {
        batch_size: a.batch_size,
        uncertainty: !a.no_uncertainty && !point,
        aux: !a.no_png && model.kind == HeadKind::Bimodal,
    };
    let (w, h) = (input.width() * a.out_scale, input.height() * a.out_scale);
    let p = infer_grid(model, input, w, h, opts, mode)?;
    let disparity = p.disparity.map(|v| v * d_max);
    pfm::write(&out.join("disparity.pfm"), &disparity)?;
    // Entropy of the raw-pixel distribution.
    let uncertainty = p.entropy.map(|e| e.map(|v| v + d_max.ln()));
    if let Some(u) = &uncertainty {
        pfm::write(&out.join("uncertainty.pfm"), u)?;
    }
    if !a.no_png {
        let raw_range = |f: &DisparityField| png::colorize(f, 0.0, d_max);
        save_png(&out.join("disparity.png"), &raw_range(&disparity))?;
        if let Some(u) = &uncertainty {
            png::write_colormap(&out.join("uncertainty.png"), u)?;
        }
        if let Some(pi) = &p.pi {
            save_png(&out.join("pi.png"), &png::colorize(pi, 0.0, 1.0))?;
        }
        for (name, f) in [("mu1.png", &p.mu1), ("mu2.png", &p.mu2)] {
            if let Some(f) = f {
                save_png(&out.join(name), &raw_range(&f.map(|v| v * d_max)))?;
            }
        }
    }
    Ok(())
}

fn save_png(path: &Path, img: &image::RgbImage) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    write_atomic(path, buf.get_ref())?;
    Ok(())
}

pub fn cmd_infer(a: &InferArgs, mode: ExecMode) -> Result<()> {
    if a.out_scale == 0 {
        bail!(SmdError::Config("--out-scale must be at least 1".into()));
    }
    let ck = checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let jobs: Vec<(PathBuf, PathBuf)> = match (&a.sample, &a.split) {
        (Some(dir), None) => vec![(dir.clone(), a.out.clone())],
        (None, Some(split)) => {
            let split = Split::parse(split)?;
            Manifest::load(&a.data)?
                .entries(split)
                .iter()
                .map(|e| (a.data.join(&e.dir), a.out.join(&e.dir)))
                .collect()
        }
        _ => bail!(SmdError::Config("give either --sample or --split".into())),
    };
    for (src, dst) in &jobs {
        let s = read_sample(src).with_context(|| format!("reading {}", src.display()))?;
        write_prediction(&ck.model, &s.input(), s.d_max, a, dst, mode)?;
    }
    eprintln!("wrote {} prediction(s) to {}", jobs.len(), a.out.display());
    Ok(())
}

/// Ground truth of a sample directory, normalized, plus its `d_max`.
fn read_gt(dir: &Path) -> Result<(DisparityField, f64)> {
    let meta = dir.join("meta.txt");
    let kv = parse_kv(&fs::read_to_string(&meta).with_context(|| format!("reading {}", meta.display()))?)?;
    let d_max: f64 = kv
        .get("d_max")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| SmdError::Config(format!("{}: missing d_max", meta.display())))?;
    Ok((pfm::read(&dir.join("gt.pfm"))?.map(|v| v / d_max), d_max))
}

/// Scores a stored (raw-pixel) prediction.
pub fn score(stored: &DisparityField, gt: &DisparityField, d_max: f64) -> smd_core::Result<ErrorReport> {
    if (stored.width(), stored.height()) != (gt.width(), gt.height()) {
        return Err(SmdError::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            stored.width(),
            stored.height(),
            gt.width(),
            gt.height()
        )));
    }
    evaluate(&stored.map(|v| v / d_max), gt, d_max)
}

#[derive(Serialize)]
struct SampleResult {
    dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<ErrorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct EvalOutput {
    samples: Vec<SampleResult>,
    aggregate: ErrorReport,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(&path.with_extension("json"), text.as_bytes())?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let split = Split::parse(&a.split)?;
    let manifest = Manifest::load(&a.data)?;
    let mut samples = Vec::new();
    for e in manifest.entries(split) {
        let result = read_gt(&a.data.join(&e.dir)).and_then(|(gt, d_max)| {
            let pred = pfm::read(&a.pred.join(&e.dir).join("disparity.pfm")).context("reading prediction")?;
            Ok(score(&pred, &gt, d_max)?)
        });
        samples.push(match result {
            Ok(r) => SampleResult {
                dir: e.dir.clone(),
                report: Some(r),
                error: None,
            },
            Err(err) => {
                eprintln!("warning: {}: {err:#}", e.dir);
                SampleResult {
                    dir: e.dir.clone(),
                    report: None,
                    error: Some(format!("{err:#}")),
                }
            }
        });
    }
    let reports: Vec<ErrorReport> = samples.iter().filter_map(|s| s.report).collect();
    if reports.is_empty() {
        bail!(SmdError::Empty(format!("no sample of split '{}' could be evaluated", a.split)));
    }
    let aggregate = ErrorReport::aggregate(&reports);
    let mut text = String::new();
    for s in &samples {
        writeln!(text, "[{}]", s.dir)?;
        match (&s.report, &s.error) {
            (Some(r), _) => text.push_str(&r.to_kv()),
            (None, Some(e)) => writeln!(text, "error = {}", e.replace('\n', " "))?,
            _ => {}
        }
    }
    writeln!(text, "[aggregate]")?;
    text.push_str(&aggregate.to_kv());
    write_atomic(&a.out, text.as_bytes())?;
    write_json(&a.out, &EvalOutput { samples, aggregate })?;
    println!("{}", aggregate.to_kv().trim_end());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub checkpoint: String,
    pub head: HeadKind,
    pub report: ErrorReport,
}

/// Evaluates every checkpoint on `split` at ground-truth resolution, going
/// through the same raw-pixel storage precision as `infer` + `eval`.
pub fn compare_rows(a: &CompareArgs, mode: ExecMode) -> Result<Vec<CompareRow>> {
    let split = Split::parse(&a.split)?;
    let data = load_split(&a.data, split)?;
    if data.is_empty() {
        bail!(SmdError::Empty(format!("split '{}' has no samples", a.split)));
    }
    let opts = InferOptions {
        batch_size: a.batch_size,
        ..InferOptions::default()
    };
    let mut rows = Vec::new();
    for path in &a.checkpoints {
        let ck = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let mut reports = Vec::with_capacity(data.len());
        for s in &data {
            let p = infer_grid(&ck.model, &s.input(), s.gt.width(), s.gt.height(), opts, mode)?;
            reports.push(score(&to_stored(&p.disparity, s.d_max), &s.gt, s.d_max)?);
        }
        rows.push(CompareRow {
            checkpoint: path.display().to_string(),
            head: ck.model.kind,
            report: ErrorReport::aggregate(&reports),
        });
    }
    Ok(rows)
}

pub fn format_table(rows: &[CompareRow]) -> String {
    let mut t = format!(
        "{:<32} {:<9} {:>9} {:>9} {:>9} {:>9}\n",
        "checkpoint", "head", "SEE3", "SEE5", "EPE", "EPE>1px%"
    );
    for r in rows {
        writeln!(
            t,
            "{:<32} {:<9} {:>9.4} {:>9.4} {:>9.4} {:>9.2}",
            r.checkpoint,
            r.head.name(),
            r.report.see3_avg,
            r.report.see5_avg,
            r.report.epe_avg,
            r.report.epe_sigma1
        )
        .expect("string write");
    }
    t
}

pub fn cmd_compare(a: &CompareArgs, mode: ExecMode) -> Result<()> {
    let rows = compare_rows(a, mode)?;
    let table = format_table(&rows);
    write_atomic(&a.out, table.as_bytes())?;
    write_json(&a.out, &rows)?;
    print!("{table}");
    Ok(())
}

/// Error class for the single-line error prefix.
pub fn error_class(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<SmdError>() {
            return s.class();
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return "usage";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<image::ImageError>().is_some() {
            return "image";
        }
    }
    "internal"
}
