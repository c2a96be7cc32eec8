use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use deepsim::io::{
    load_model, mask_to_pgm, read_pfm, read_pgm, read_toml, save_model, write_pfm, write_pgm, PgmImage,
};
use deepsim::matcher::{run_pyramid, CostMode, PyramidConfig, SgmParams};
use deepsim::metrics::{
    disparity_errors, histogram_csv, joint_histogram_csv, joint_probability, roc_auc, roc_csv, MetricsReport,
    DEFAULT_BINS,
};
use deepsim::sampling::{derive_occlusion, DisparityGt, SampleSpec};
use deepsim::synth::{gen_synthetic, SyntheticSpec};
use deepsim::train::{scores_at, train_synthetic, ScoreKind, TrainConfig};
use deepsim::Error;

#[derive(Parser)]
#[command(name = "deepsim", version, about = "Learned-similarity stereo matching with a coarse-to-fine SGM pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Cos,
    Mlp,
    Ncc,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the synthetic sets described by a TOML config.
    Train {
        config: PathBuf,
        /// Model file to write.
        #[arg(long, default_value = "model.bin")]
        out: PathBuf,
        /// Training log (CSV); printed to stdout when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Estimate the disparity of a rectified pair (PGM or PFM images).
    Infer {
        left: PathBuf,
        right: PathBuf,
        /// Trained model; without it every level uses NCC.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "cos")]
        mode: Mode,
        /// Smallest full-resolution disparity searched.
        #[arg(long, allow_hyphen_values = true)]
        dmin: Option<i32>,
        /// Largest full-resolution disparity searched (default: width / 4).
        #[arg(long, allow_hyphen_values = true)]
        dmax: Option<i32>,
        /// Similarity map output (PFM).
        #[arg(long)]
        sim: Option<PathBuf>,
        /// Occlusion mask output (PGM).
        #[arg(long)]
        occ: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        subpixel: bool,
    },
    /// Compare a disparity map with ground truth; prints JSON.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        /// Occlusion mask (PGM); set pixels are excluded.
        #[arg(long)]
        occ: Option<PathBuf>,
    },
    /// Render a synthetic pair into left.pgm, right.pgm, disp.pfm and occ.pgm.
    GenSynth { spec: PathBuf, outdir: PathBuf },
    /// Matching / non-matching score distributions of a model on one pair.
    ReportScores {
        model: PathBuf,
        /// Directory holding left.pgm and right.pgm.
        pair: PathBuf,
        /// Ground-truth disparity (PFM).
        gt: PathBuf,
        #[arg(long)]
        beta1: f64,
        #[arg(long)]
        beta2: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "mlp")]
        mode: Mode,
        #[arg(long)]
        occ: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for histogram.csv, joint.csv and roc.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

type Result<T> = std::result::Result<T, Error>;

fn read_image(path: &Path) -> Result<Array2<f64>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        read_pfm(path)
    } else {
        Ok(read_pgm(path)?.normalized())
    }
}

fn read_mask(path: &Path) -> Result<Array2<bool>> {
    Ok(read_pgm(path)?.normalized().mapv(|v| v > 0.5))
}

fn ground_truth(disp: Array2<f64>, occ: Option<&Path>) -> Result<DisparityGt> {
    let valid = disp.mapv(f64::is_finite);
    let occluded = match occ {
        Some(p) => {
            let m = read_mask(p)?;
            if m.dim() != disp.dim() {
                return Err(Error::InvalidParam(format!("mask {:?} vs disparity {:?}", m.dim(), disp.dim())));
            }
            Array2::from_shape_fn(m.dim(), |i| m[i] && valid[i])
        }
        None => Array2::from_elem(disp.dim(), false),
    };
    let disp = Array2::from_shape_fn(disp.dim(), |i| if valid[i] { disp[i] } else { 0.0 });
    DisparityGt::new(disp, valid, occluded)
}

fn train(config: &Path, out: &Path, log: Option<&Path>) -> Result<()> {
    let mut cfg: TrainConfig = read_toml(config)?;
    cfg.apply_env()?;
    let result = train_synthetic(&cfg)?;
    save_model(out, &result.model)?;
    let csv = result.log.to_csv();
    match log {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn infer(
    left: &Path,
    right: &Path,
    model: Option<&Path>,
    out: &Path,
    mode: Mode,
    range: (Option<i32>, Option<i32>),
    sim: Option<&Path>,
    occ: Option<&Path>,
    tau: f64,
    subpixel: bool,
) -> Result<()> {
    let (l, r) = (read_image(left)?, read_image(right)?);
    let model = model.map(load_model).transpose()?;
    let (cost_mode, model) = match (mode, model.as_ref()) {
        (Mode::Ncc, _) | (_, None) => (CostMode::Ncc, None),
        (Mode::Cos, Some(m)) => (CostMode::Cosine, Some(m)),
        (Mode::Mlp, Some(m)) => (CostMode::Mlp, Some(m)),
    };
    if model.is_none() && mode != Mode::Ncc {
        eprintln!("note: no model given, matching with NCC only");
    }
    let w = l.ncols() as i32;
    let lo = range.0.unwrap_or(0);
    let hi = range.1.unwrap_or((w / 4).max(lo));
    let cfg = PyramidConfig {
        cost_mode,
        global_range: (lo, hi),
        tau,
        subpixel,
        ..PyramidConfig::default()
    };
    let result = run_pyramid(&l, &r, model, &cfg, &SgmParams::default())?;
    write_pfm(out, &result.disparity)?;
    if let Some(p) = sim {
        write_pfm(p, &result.similarity)?;
    }
    if let Some(p) = occ {
        write_pgm(p, &mask_to_pgm(&result.occlusion))?;
    }
    Ok(())
}

fn eval(pred: &Path, gt: &Path, occ: Option<&Path>) -> Result<()> {
    let pred = read_pfm(pred)?;
    let gt = ground_truth(read_pfm(gt)?, occ)?;
    let report = MetricsReport {
        disparity: Some(disparity_errors(&pred, &gt, true)?),
        ..MetricsReport::default()
    };
    println!("{}", report.to_json()?);
    Ok(())
}

fn gen_synth(spec: &Path, outdir: &Path) -> Result<()> {
    let spec: SyntheticSpec = read_toml(spec)?;
    let pair = gen_synthetic(&spec)?;
    std::fs::create_dir_all(outdir)?;
    write_pgm(outdir.join("left.pgm"), &PgmImage::from_unit(&pair.left, 16)?)?;
    write_pgm(outdir.join("right.pgm"), &PgmImage::from_unit(&pair.right, 16)?)?;
    write_pfm(outdir.join("disp.pfm"), &pair.gt.disparity)?;
    write_pgm(outdir.join("occ.pgm"), &mask_to_pgm(&pair.gt.occluded))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn report_scores(
    model: &Path,
    pair: &Path,
    gt: &Path,
    spec: SampleSpec,
    mode: Mode,
    occ: Option<&Path>,
    bins: usize,
    out_dir: &Path,
) -> Result<()> {
    let model = load_model(model)?;
    let left = read_image(&pair.join("left.pgm"))?;
    let right = read_image(&pair.join("right.pgm"))?;
    let mut gt = ground_truth(read_pfm(gt)?, occ)?;
    if occ.is_none() {
        gt.occluded = derive_occlusion(&gt.disparity, &gt.valid);
    }
    let kind = match mode {
        Mode::Mlp => ScoreKind::Mlp,
        Mode::Cos => ScoreKind::Cosine,
        Mode::Ncc => return Err(Error::InvalidParam("score reports need a learned similarity (mlp or cos)".into())),
    };
    let pair = deepsim::synth::StereoPair { left, right, gt };
    let sp = scores_at(&model, std::slice::from_ref(&pair), kind, &spec)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("histogram.csv"), histogram_csv(&sp, bins))?;
    std::fs::write(out_dir.join("joint.csv"), joint_histogram_csv(&joint_probability(&sp, bins)?.1))?;
    std::fs::write(out_dir.join("roc.csv"), roc_csv(&roc_auc(&sp)?.1))?;
    println!("{}", MetricsReport::from_scores(&sp, bins)?.to_json()?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, log } => train(&config, &out, log.as_deref()),
        Command::Infer {
            left,
            right,
            model,
            out,
            mode,
            dmin,
            dmax,
            sim,
            occ,
            tau,
            subpixel,
        } => infer(
            &left,
            &right,
            model.as_deref(),
            &out,
            mode,
            (dmin, dmax),
            sim.as_deref(),
            occ.as_deref(),
            tau,
            subpixel,
        ),
        Command::Eval { pred, gt, occ } => eval(&pred, &gt, occ.as_deref()),
        Command::GenSynth { spec, outdir } => gen_synth(&spec, &outdir),
        Command::ReportScores {
            model,
            pair,
            gt,
            beta1,
            beta2,
            alpha,
            mode,
            occ,
            bins,
            seed,
            out_dir,
        } => {
            let spec = SampleSpec::new(alpha, beta1, beta2, seed)?;
            report_scores(&model, &pair, &gt, spec, mode, occ.as_deref(), bins, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
