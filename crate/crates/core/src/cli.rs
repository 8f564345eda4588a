//! Command-line front end. Each subcommand is also callable as a library
//! function writing into an output directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::camera::disparity_to_depth;
use crate::config::ExperimentConfig;
use crate::error::{contract, Error, Result};
use crate::grid::{LabelGrid, Pixel};
use crate::io::{encode_pfm, encode_pgm_intensity, encode_pgm_labels, read_pfm, read_pgm, write_bytes};
use crate::metrics::{compute_metrics, compute_metrics_batch, metrics_csv, MetricSet};
use crate::optimizer::{background_accuracy, run_with, FatteningReport, LossTerms, OptConfig, OptState};
use crate::synth::{photometric_profile, profile_argmin, render_scene, StereoPair};
use crate::triplet::{LossMode, NegativeMode, TripletConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "depthtriplet", version, about = "Edge-fattening experiments on synthetic stereo scenes")]
pub struct Cli {
    /// Experiment config (TOML). The shipped default is used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `opt.snapshot_every`.
    #[arg(long, global = true)]
    pub snapshot_every: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the stereo pair and its ground truth.
    Synth,
    /// Photometric error against disparity for one left pixel.
    Profile {
        #[arg(long)]
        x: usize,
        #[arg(long)]
        y: usize,
    },
    /// Optimize the disparity map directly.
    Optimize,
    /// Score predicted depth maps against ground truth (PFM files, paired in order).
    Metrics {
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        /// Validity masks (PGM, non-zero = valid), one per pair. All pixels are valid when omitted.
        #[arg(long)]
        valid: Vec<PathBuf>,
    },
    /// Run a family of optimizations and tabulate their fattening.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepKind::Ablation)]
        kind: SweepKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    /// Triplet weight 0 against the configured weight.
    Paired,
    /// The isolated/min loss at each configured margin m′.
    Margin,
    /// Baseline, +min, +isolated and +both.
    Ablation,
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", out.display())))
}

fn scene(cfg: &ExperimentConfig) -> Result<StereoPair> {
    render_scene(&cfg.scene_spec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub band_width: u32,
    pub occluded_pixels: usize,
}

pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<SynthSummary> {
    let pair = scene(cfg)?;
    create_dir(out)?;
    write_bytes(&out.join("left.pgm"), &encode_pgm_intensity(&pair.left))?;
    write_bytes(&out.join("right.pgm"), &encode_pgm_intensity(&pair.right))?;
    write_bytes(&out.join("gt_disparity.pfm"), &encode_pfm(&pair.gt_disparity))?;
    write_bytes(&out.join("labels.pgm"), &encode_pgm_labels(&pair.labels)?)?;
    write_bytes(&out.join("occlusion.pgm"), &encode_pgm_labels(&pair.occlusion_mask)?)?;
    Ok(SynthSummary { band_width: pair.spec.band_width(), occluded_pixels: pair.occlusion_mask.count(1) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSummary {
    pub argmin: f64,
    pub gt: f64,
    pub curve: Vec<(f64, f64)>,
}

impl ProfileSummary {
    /// Argmin within half a pixel of the ground truth.
    pub fn matches(&self) -> bool {
        (self.argmin - self.gt).abs() <= 0.5
    }

    pub fn flag(&self) -> String {
        let verdict = if self.matches() { "MATCH" } else { "MISMATCH" };
        format!("argmin={}, gt={}, {verdict}", self.argmin, self.gt)
    }
}

pub fn cmd_profile(cfg: &ExperimentConfig, out: &Path, pixel: Pixel) -> Result<ProfileSummary> {
    let pair = scene(cfg)?;
    let p = &cfg.profile;
    let curve = photometric_profile(&pair, pixel, p.d_lo, p.d_hi, p.step, &cfg.photometric)?;
    let argmin = profile_argmin(&curve).expect("at least one candidate");
    create_dir(out)?;
    let mut csv = String::from("disparity,error\n");
    for (d, e) in &curve {
        writeln!(csv, "{d},{e}").unwrap();
    }
    fs::write(out.join(format!("profile_x{}_y{}.csv", pixel.x, pixel.y)), csv)?;
    Ok(ProfileSummary { argmin, gt: pair.gt_disparity.get(pixel.x, pixel.y), curve })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSummary {
    pub final_terms: LossTerms,
    pub fattening: FatteningReport,
    pub background_accuracy: f64,
    pub metrics: MetricSet,
}

fn depth_metrics(cfg: &ExperimentConfig, state: &OptState, pair: &StereoPair) -> Result<MetricSet> {
    let rig = cfg.rig()?;
    let pred = disparity_to_depth(&state.disparity, &rig)?;
    let gt = disparity_to_depth(&pair.gt_disparity, &rig)?;
    let valid = LabelGrid::filled(gt.height(), gt.width(), 1);
    compute_metrics(&pred, &gt, &valid, cfg.metrics.cap, cfg.metrics.median_scale)
}

fn optimize(cfg: &ExperimentConfig, opt: &OptConfig, pair: &StereoPair, snapshots: Option<&Path>) -> Result<(OptState, OptimizeSummary)> {
    let every = cfg.opt.snapshot_every;
    let (state, fattening) = run_with(pair, opt, |s| {
        if let Some(dir) = snapshots {
            if (every > 0 && s.step_index % every == 0) || s.step_index == opt.steps {
                write_bytes(&dir.join(format!("disparity_{:05}.pfm", s.step_index)), &encode_pfm(&s.disparity))?;
            }
        }
        Ok(())
    })?;
    let summary = OptimizeSummary {
        final_terms: state.loss_history().last().expect("at least one evaluation").terms,
        background_accuracy: background_accuracy(&state, pair),
        metrics: depth_metrics(cfg, &state, pair)?,
        fattening,
    };
    Ok((state, summary))
}

pub fn cmd_optimize(cfg: &ExperimentConfig, out: &Path) -> Result<OptimizeSummary> {
    let pair = scene(cfg)?;
    create_dir(out)?;
    let (state, summary) = optimize(cfg, &cfg.opt_config(), &pair, Some(out))?;

    let mut loss = String::from("step,total,pe,smooth,triplet\n");
    for r in state.loss_history() {
        let t = r.terms;
        writeln!(loss, "{},{},{},{},{}", r.step, t.total, t.pe, t.smooth, t.triplet).unwrap();
    }
    fs::write(out.join("loss.csv"), loss)?;

    let f = &summary.fattening;
    let mut fat = String::from("band_pixels,mean_band_disparity,fattened_fraction,mean_leak_width,background_within_half_px\n");
    writeln!(
        fat,
        "{},{},{},{},{}",
        f.band_pixels,
        f.mean_band_disparity,
        f.fattened_fraction,
        f.mean_leak_width(),
        summary.background_accuracy
    )
    .unwrap();
    fs::write(out.join("fattening.csv"), fat)?;

    let mut leak = String::from("row,leak_width\n");
    for (row, w) in &f.leak_widths {
        writeln!(leak, "{row},{w}").unwrap();
    }
    fs::write(out.join("leak_widths.csv"), leak)?;

    fs::write(out.join("metrics.csv"), metrics_csv(&[summary.metrics], &summary.metrics))?;
    Ok(summary)
}

pub fn cmd_metrics(
    cfg: &ExperimentConfig,
    out: &Path,
    preds: &[PathBuf],
    gts: &[PathBuf],
    valids: &[PathBuf],
) -> Result<(Vec<MetricSet>, MetricSet)> {
    if preds.len() != gts.len() || (!valids.is_empty() && valids.len() != preds.len()) {
        return contract("need one --gt (and optionally one --valid) per --pred");
    }
    let mut items = Vec::with_capacity(preds.len());
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        let pred = read_pfm(p)?;
        let gt = read_pfm(g)?;
        let valid = match valids.get(i) {
            Some(v) => read_pgm(v)?,
            None => LabelGrid::filled(gt.height(), gt.width(), 1),
        };
        items.push((pred, gt, valid));
    }
    let (per, mean) = compute_metrics_batch(&items, cfg.metrics.cap, cfg.metrics.median_scale)?;
    create_dir(out)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&per, &mean))?;
    Ok((per, mean))
}

/// The four rows of the ablation: the baseline triplet loss, each redesign
/// alone and both together. Hardest-negative variants use the larger margin.
pub fn ablation_variants(base: &TripletConfig) -> [(&'static str, TripletConfig); 4] {
    let with = |loss_mode, negative_mode, margin_m| TripletConfig { loss_mode, negative_mode, margin_m, ..*base };
    [
        ("baseline", with(LossMode::Baseline, NegativeMode::Mean, base.margin_m)),
        ("+min", with(LossMode::Baseline, NegativeMode::Min, base.margin_m_prime)),
        ("+isolated", with(LossMode::Isolated, NegativeMode::Mean, base.margin_m)),
        ("+both", with(LossMode::Isolated, NegativeMode::Min, base.margin_m)),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub opt: OptConfig,
    pub summary: OptimizeSummary,
}

impl SweepRow {
    /// Margin acting in the per-anchor term.
    pub fn margin(&self) -> f64 {
        match self.opt.triplet.loss_mode {
            LossMode::Baseline => self.opt.triplet.margin_m,
            LossMode::Isolated => self.opt.triplet.margin_m_prime,
        }
    }
}

pub fn sweep_configs(cfg: &ExperimentConfig, kind: SweepKind) -> Vec<(String, OptConfig)> {
    let base = cfg.opt_config();
    match kind {
        SweepKind::Paired => vec![
            ("lambda_t=0".to_string(), OptConfig { lambda_triplet: 0.0, ..base.clone() }),
            (format!("lambda_t={}", base.lambda_triplet), base),
        ],
        SweepKind::Margin => cfg
            .sweep
            .margins
            .iter()
            .map(|&m| {
                let triplet = TripletConfig {
                    loss_mode: LossMode::Isolated,
                    negative_mode: NegativeMode::Min,
                    margin_m_prime: m,
                    ..base.triplet
                };
                (format!("m'={m}"), OptConfig { triplet, ..base.clone() })
            })
            .collect(),
        SweepKind::Ablation => ablation_variants(&base.triplet)
            .into_iter()
            .map(|(label, triplet)| (label.to_string(), OptConfig { triplet, ..base.clone() }))
            .collect(),
    }
}

fn mode_name(t: &TripletConfig) -> (&'static str, &'static str) {
    let loss = match t.loss_mode {
        LossMode::Baseline => "baseline",
        LossMode::Isolated => "isolated",
    };
    let neg = match t.negative_mode {
        NegativeMode::Mean => "mean",
        NegativeMode::Min => "min",
    };
    (loss, neg)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, kind: SweepKind) -> Result<Vec<SweepRow>> {
    let pair = scene(cfg)?;
    create_dir(out)?;
    let mut rows = Vec::new();
    for (label, opt) in sweep_configs(cfg, kind) {
        let (_, summary) = optimize(cfg, &opt, &pair, None)?;
        rows.push(SweepRow { label, opt, summary });
    }
    let mut csv = String::from(
        "label,lambda_triplet,loss_mode,negative_mode,margin,fattened_fraction,mean_band_disparity,mean_leak_width,background_within_half_px,abs_rel,rmse,delta1\n",
    );
    for r in &rows {
        let (loss, neg) = mode_name(&r.opt.triplet);
        let s = &r.summary;
        writeln!(
            csv,
            "{},{},{loss},{neg},{},{},{},{},{},{},{},{}",
            r.label,
            r.opt.lambda_triplet,
            r.margin(),
            s.fattening.fattened_fraction,
            s.fattening.mean_band_disparity,
            s.fattening.mean_leak_width(),
            s.background_accuracy,
            s.metrics.abs_rel,
            s.metrics.rmse,
            s.metrics.delta1
        )
        .unwrap();
    }
    let name = match kind {
        SweepKind::Paired => "sweep_paired.csv",
        SweepKind::Margin => "sweep_margin.csv",
        SweepKind::Ablation => "sweep_ablation.csv",
    };
    fs::write(out.join(name), csv)?;
    Ok(rows)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Contract(_) => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Format { .. } | Error::Io(_) => EXIT_FAILURE,
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::shipped_default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(every) = cli.snapshot_every {
        cfg.opt.snapshot_every = every;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::Synth => {
            let s = cmd_synth(&cfg, &out)?;
            println!("band width: {} px ({} occluded pixels)", s.band_width, s.occluded_pixels);
        }
        Command::Profile { x, y } => {
            let s = cmd_profile(&cfg, &out, Pixel::new(x, y))?;
            println!("{}", s.flag());
        }
        Command::Optimize => {
            let s = cmd_optimize(&cfg, &out)?;
            let f = &s.fattening;
            println!(
                "loss {:.6}; fattened fraction {:.4} over {} band pixels; mean leak {:.2} px; background within 0.5 px {:.4}",
                s.final_terms.total,
                f.fattened_fraction,
                f.band_pixels,
                f.mean_leak_width(),
                s.background_accuracy
            );
        }
        Command::Metrics { pred, gt, valid } => {
            let (_, mean) = cmd_metrics(&cfg, &out, &pred, &gt, &valid)?;
            println!("{}\n{}", crate::metrics::CSV_HEADER, mean.csv_row());
        }
        Command::Sweep { kind } => {
            for r in cmd_sweep(&cfg, &out, kind)? {
                println!("{:<14} fattened {:.4}", r.label, r.summary.fattening.fattened_fraction);
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if let Error::Divergence { step, .. } = &e {
                eprintln!("error: {e} (last finite step: {})", step.saturating_sub(1));
            } else {
                eprintln!("error: {e}");
            }
            exit_code(&e)
        }
    }
}
