//! Phased triplet/BCE training with per-group learning rates.

use std::fmt::Write as _;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{MlpConfig, ModelParams, MsAffConfig, ParamGroup, SIZE_MULTIPLE};
use crate::error::{Error, Result};
use crate::losses::{bce_objective, triplet_objective, LossParams, Reduction};
use crate::matcher::image_features;
use crate::metrics::{joint_probability, ScorePairs, ScoreRange, DEFAULT_BINS};
use crate::sampling::{build_sample_set, gen_offsets, build_sample_set_with_offsets, SampleSpec};
use crate::synth::{DatasetSpec, StereoPair};
use crate::tensor::{Tape, Tensor};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "DEEPSIM_SEED";

/// Sampling used for hold-out separability scores.
pub const HOLDOUT_SAMPLING: (f64, f64, f64) = (0.0, 1.0, 4.0);

/// One sampling interval of the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    #[serde(default)]
    pub occlusion: bool,
}

impl Phase {
    pub fn new(alpha: f64, beta1: f64, beta2: f64, epochs: usize) -> Self {
        Self {
            alpha,
            beta1,
            beta2,
            epochs,
            occlusion: false,
        }
    }
}

/// Broad intervals with `alpha = 1`, then the tight ones with `alpha = 0`;
/// the last phase repeats the tightest interval with the occlusion terms.
pub fn default_schedule(epochs: usize) -> Vec<Phase> {
    let mut phases = vec![
        Phase::new(1.0, 2.0, 8.0, epochs),
        Phase::new(1.0, 2.0, 6.0, epochs),
        Phase::new(0.0, 1.0, 5.0, epochs),
        Phase::new(0.0, 1.0, 4.0, epochs),
        Phase::new(0.0, 1.0, 4.0, epochs),
    ];
    phases[4].occlusion = true;
    phases
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDivisors {
    pub encoder: f64,
    pub bottleneck: f64,
    pub decoder: f64,
    pub head: f64,
}

impl Default for LrDivisors {
    fn default() -> Self {
        Self {
            encoder: 1000.0,
            bottleneck: 100.0,
            decoder: 10.0,
            head: 1.0,
        }
    }
}

impl LrDivisors {
    pub fn of(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Bottleneck => self.bottleneck,
            ParamGroup::Decoder => self.decoder,
            ParamGroup::Head => self.head,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub features: usize,
    pub cam_ratio: usize,
    pub mlp_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            features: 8,
            cam_ratio: 4,
            mlp_hidden: vec![32, 32],
        }
    }
}

impl ModelConfig {
    pub fn init(&self, seed: u64) -> Result<ModelParams> {
        ModelParams::init(
            MsAffConfig {
                features: self.features,
                cam_ratio: self.cam_ratio,
            },
            MlpConfig {
                hidden: self.mlp_hidden.clone(),
            },
            seed,
        )
    }
}

/// Which similarity the hold-out separability scores measure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    #[default]
    Mlp,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_phases")]
    pub phases: Vec<Phase>,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default)]
    pub lr_divisors: LrDivisors,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Side of the square training crop; a multiple of 8.
    #[serde(default = "default_tile")]
    pub tile: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub holdout_score: ScoreKind,
    /// Synthetic training set, used when no pairs are supplied.
    #[serde(default)]
    pub data: Option<DatasetSpec>,
    /// Synthetic hold-out set for per-epoch separability.
    #[serde(default)]
    pub holdout: Option<DatasetSpec>,
}

fn default_phases() -> Vec<Phase> {
    default_schedule(50)
}

fn default_base_lr() -> f64 {
    0.001
}

fn default_momentum() -> f64 {
    0.9
}

fn default_margin() -> f64 {
    0.3
}

fn default_tile() -> usize {
    64
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phases: default_phases(),
            base_lr: default_base_lr(),
            lr_divisors: LrDivisors::default(),
            momentum: default_momentum(),
            margin: default_margin(),
            tile: default_tile(),
            seed: 0,
            model: ModelConfig::default(),
            holdout_score: ScoreKind::Mlp,
            data: None,
            holdout: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("at least one training phase is required".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            SampleSpec::new(p.alpha, p.beta1, p.beta2, 0)
                .map_err(|e| Error::Config(format!("phase {i}: {e}")))?;
            if p.epochs == 0 {
                return Err(Error::Config(format!("phase {i}: epochs must be > 0")));
            }
            if i > 0 {
                let q = &self.phases[i - 1];
                if p.beta1 > q.beta1 || p.beta2 - p.beta1 > q.beta2 - q.beta1 {
                    return Err(Error::Config(format!("phase {i}: sampling intervals may only tighten")));
                }
            }
        }
        let lr_ok = [self.lr_divisors.encoder, self.lr_divisors.bottleneck, self.lr_divisors.decoder, self.lr_divisors.head]
            .iter()
            .all(|d| *d > 0.0 && d.is_finite());
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) || !lr_ok {
            return Err(Error::Config("learning rates must be positive and finite".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.tile == 0 || !self.tile.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Config(format!("tile {} is not a positive multiple of {SIZE_MULTIPLE}", self.tile)));
        }
        self.loss_params(false).validate()
    }

    /// Replaces the seed with `DEEPSIM_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn group_lr(&self, group: ParamGroup) -> f64 {
        self.base_lr / self.lr_divisors.of(group)
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    fn loss_params(&self, occlusion: bool) -> LossParams {
        LossParams {
            margin: self.margin,
            reduction: Reduction::Mean,
            occlusion_term: occlusion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based, counted across phases.
    pub epoch: usize,
    pub phase: usize,
    pub loss_triplet: Option<f64>,
    pub loss_bce: Option<f64>,
    pub jp_holdout: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub header: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

impl TrainLog {
    pub const COLUMNS: &'static str = "epoch,phase,loss_triplet,loss_bce,jp_holdout";

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for h in &self.header {
            let _ = writeln!(out, "# {h}");
        }
        let _ = writeln!(out, "{}", Self::COLUMNS);
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.phase,
                cell(r.loss_triplet),
                cell(r.loss_bce),
                cell(r.jp_holdout)
            );
        }
        out
    }
}

fn log_header(cfg: &TrainConfig) -> Vec<String> {
    let mut h = vec![format!("base_lr {}", cfg.base_lr), format!("momentum {}", cfg.momentum)];
    for g in ParamGroup::ALL {
        h.push(format!("lr {} {}", g.name(), cfg.group_lr(g)));
    }
    for (i, p) in cfg.phases.iter().enumerate() {
        h.push(format!(
            "phase {i} alpha {} beta1 {} beta2 {} epochs {} occlusion {}",
            p.alpha, p.beta1, p.beta2, p.epochs, p.occlusion
        ));
    }
    h
}

pub struct TrainOutput {
    pub model: ModelParams,
    pub log: TrainLog,
}

fn tile_tensor(img: &Array2<f64>, y0: usize, x0: usize, t: usize) -> Result<Tensor> {
    let v: Vec<f64> = img.slice(s![y0..y0 + t, x0..x0 + t]).iter().copied().collect();
    Tensor::new(&[1, t, t], v)
}

/// Trains from scratch. Every epoch visits each pair once, in a fresh random
/// order, on a fresh random crop. Even steps minimize the triplet objective,
/// odd steps the BCE objective through the head. A non-finite loss or
/// parameter aborts with [`Error::Divergence`].
pub fn train(cfg: &TrainConfig, pairs: &[StereoPair], holdout: &[StereoPair]) -> Result<TrainOutput> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("training needs at least one pair".into()));
    }
    let mut model = cfg.model.init(cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7a1d);
    let mut velocity: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
    let lrs: Vec<f64> = model.params().iter().map(|p| cfg.group_lr(p.group)).collect();
    let mut log = TrainLog {
        header: log_header(cfg),
        ..TrainLog::default()
    };
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0usize;
    let mut epoch = 0usize;
    for (pi, phase) in cfg.phases.iter().enumerate() {
        let lp = cfg.loss_params(phase.occlusion);
        for _ in 0..phase.epochs {
            epoch += 1;
            order.shuffle(&mut rng);
            let (mut trip, mut bce) = (Vec::new(), Vec::new());
            for &i in &order {
                let pair = &pairs[i];
                let (h, w) = pair.left.dim();
                let t = cfg.tile.min(h / SIZE_MULTIPLE * SIZE_MULTIPLE).min(w / SIZE_MULTIPLE * SIZE_MULTIPLE);
                if t == 0 {
                    return Err(Error::InvalidParam(format!("pair {i} smaller than {SIZE_MULTIPLE} pixels")));
                }
                let y0 = rng.random_range(0..=h - t);
                let x0 = rng.random_range(0..=w - t);
                let spec = SampleSpec::new(phase.alpha, phase.beta1, phase.beta2, rng.random())?;
                let gt = pair.gt.crop(y0, x0, t, t);
                let (loss, grads) = {
                    let tape = Tape::new();
                    let bound = model.bind(&tape, true);
                    let fl = bound.extract_features(tape.constant(tile_tensor(&pair.left, y0, x0, t)?))?;
                    let fr = bound.extract_features(tape.constant(tile_tensor(&pair.right, y0, x0, t)?))?;
                    let set = build_sample_set(fl, fr, &gt, &spec)?;
                    let loss = if step.is_multiple_of(2) {
                        triplet_objective(&set, &lp)
                    } else {
                        bce_objective(&set, |l, r| bound.mlp(l, r), &lp)
                    };
                    let loss = match loss {
                        Ok(l) => l,
                        Err(Error::EmptySample(_)) => {
                            step += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let value = loss.item();
                    if !value.is_finite() {
                        return Err(Error::Divergence { step });
                    }
                    tape.backward(loss)?;
                    (value, bound.grads())
                };
                for ((p, v), (g, lr)) in model.params_mut().iter_mut().zip(&mut velocity).zip(grads.iter().zip(&lrs)) {
                    for ((w, vel), gv) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                        *vel = cfg.momentum * *vel + gv;
                        *w -= lr * *vel;
                    }
                }
                if !model.params().iter().all(|p| p.value.all_finite()) {
                    return Err(Error::Divergence { step });
                }
                if step.is_multiple_of(2) {
                    trip.push(loss);
                } else {
                    bce.push(loss);
                }
                log.step_losses.push(loss);
                step += 1;
            }
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let jp = if holdout.is_empty() {
                None
            } else {
                let sp = holdout_scores(&model, holdout, cfg.holdout_score, cfg.seed)?;
                Some(joint_probability(&sp, DEFAULT_BINS)?.0)
            };
            log.epochs.push(EpochRecord {
                epoch,
                phase: pi,
                loss_triplet: mean(&trip),
                loss_bce: mean(&bce),
                jp_holdout: jp,
            });
        }
    }
    Ok(TrainOutput { model, log })
}

/// Paired matching / non-matching scores on whole hold-out images with the
/// [`HOLDOUT_SAMPLING`] intervals, over non-occluded pixels.
pub fn holdout_scores(model: &ModelParams, pairs: &[StereoPair], kind: ScoreKind, seed: u64) -> Result<ScorePairs> {
    let (a, b1, b2) = HOLDOUT_SAMPLING;
    scores_at(model, pairs, kind, &SampleSpec::new(a, b1, b2, seed)?)
}

/// As [`holdout_scores`] with explicit sampling intervals. Pair `i` draws its
/// offsets with seed `spec.seed + i`.
pub fn scores_at(model: &ModelParams, pairs: &[StereoPair], kind: ScoreKind, spec: &SampleSpec) -> Result<ScorePairs> {
    let (mut s_pos, mut s_neg) = (Vec::new(), Vec::new());
    for (i, pair) in pairs.iter().enumerate() {
        let (h, w) = pair.left.dim();
        let fl = image_features(model, &pair.left)?;
        let fr = image_features(model, &pair.right)?;
        let f = fl.shape()[0];
        let spec_i = SampleSpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..*spec
        };
        let offsets = gen_offsets(&spec_i, h, w)?;
        let tape = Tape::new();
        let set = build_sample_set_with_offsets(tape.constant(fl), tape.constant(fr), &pair.gt, &offsets)?;
        let idx: Vec<usize> = set.y_pos.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j).collect();
        if idx.is_empty() {
            continue;
        }
        let cols = |v: crate::tensor::Var<'_>| -> Result<Tensor> {
            let g = v.reshape(&[f, h * w])?.gather_cols(&idx)?;
            let out = g.value().clone();
            Ok(out)
        };
        let (r, p, n) = (cols(set.x_ref)?, cols(set.x_pos)?, cols(set.x_neg)?);
        match kind {
            ScoreKind::Mlp => {
                s_pos.extend(model.mlp_scores(r.data(), p.data(), idx.len())?);
                s_neg.extend(model.mlp_scores(r.data(), n.data(), idx.len())?);
            }
            ScoreKind::Cosine => {
                let rv = tape.constant(r);
                s_pos.extend(rv.cosine(tape.constant(p))?.value().data().iter().map(|v| v.clamp(-1.0, 1.0)));
                s_neg.extend(rv.cosine(tape.constant(n))?.value().data().iter().map(|v| v.clamp(-1.0, 1.0)));
            }
        }
    }
    let range = match kind {
        ScoreKind::Mlp => ScoreRange::Unit,
        ScoreKind::Cosine => ScoreRange::Signed,
    };
    ScorePairs::paired(s_pos, s_neg, range)
}

/// Generates the configured synthetic sets and trains on them.
pub fn train_synthetic(cfg: &TrainConfig) -> Result<TrainOutput> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [data] section".into()))?;
    let pairs = data.generate()?;
    let holdout = match &cfg.holdout {
        Some(h) => h.generate()?,
        None => Vec::new(),
    };
    train(cfg, &pairs, &holdout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{encode_model, parse_toml};
    use crate::synth::{gen_synthetic, DisparityModel, SyntheticSpec};

    fn pair(size: usize, seed: u64) -> StereoPair {
        let spec = SyntheticSpec {
            noise_sigma: 0.02,
            ..SyntheticSpec::square(size, DisparityModel::RandomBlocks { min: 0, max: (size as i32 / 4 - 1).min(4), count: 2 }, seed)
        };
        gen_synthetic(&spec).unwrap()
    }

    fn tiny(phases: Vec<Phase>) -> TrainConfig {
        TrainConfig {
            phases,
            base_lr: 0.01,
            tile: 16,
            seed: 4,
            model: ModelConfig {
                features: 4,
                cam_ratio: 2,
                mlp_hidden: vec![8],
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_pair_overfits() {
        let cfg = TrainConfig {
            phases: vec![Phase::new(0.0, 1.0, 4.0, 200)],
            base_lr: 0.2,
            tile: 32,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &[pair(32, 7)], &[]).unwrap();
        assert_eq!(out.model.features(), 8);
        assert_eq!(out.log.step_losses.len(), 200);
        let triplet: Vec<f64> = out.log.step_losses.iter().step_by(2).copied().collect();
        let tail = triplet[triplet.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(triplet[0] >= 10.0 * tail, "first {} vs final {}", triplet[0], tail);
    }

    #[test]
    fn log_marks_phase_boundaries_and_group_rates() {
        let phases = vec![Phase::new(1.0, 2.0, 8.0, 2), Phase::new(0.0, 1.0, 4.0, 3)];
        let pairs = [pair(16, 1), pair(16, 2)];
        let out = train(&tiny(phases), &pairs, &[pair(16, 9)]).unwrap();
        let phase_of: Vec<usize> = out.log.epochs.iter().map(|r| r.phase).collect();
        assert_eq!(phase_of, vec![0, 0, 1, 1, 1]);
        assert_eq!(out.log.epochs.last().unwrap().epoch, 5);
        assert!(out.log.epochs.iter().all(|r| r.jp_holdout.is_some_and(|jp| (0.0..=100.0).contains(&jp))));
        let csv = out.log.to_csv();
        assert!(csv.contains("# lr encoder 0.00001\n"));
        assert!(csv.contains("# lr head 0.01\n"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 6);
        assert!(csv.contains("\n3,1,"));

        let paper = TrainConfig::default();
        assert!(log_header(&paper).contains(&"lr encoder 0.000001".to_string()));
    }

    #[test]
    fn fixed_seed_gives_identical_model_bytes() {
        let phases = vec![Phase::new(0.0, 1.0, 4.0, 2)];
        let pairs = [pair(24, 3), pair(24, 4)];
        let a = train(&tiny(phases.clone()), &pairs, &[]).unwrap();
        let b = train(&tiny(phases.clone()), &pairs, &[]).unwrap();
        assert_eq!(encode_model(&a.model), encode_model(&b.model));
        assert_eq!(a.log.step_losses, b.log.step_losses);
        let c = train(&TrainConfig { seed: 5, ..tiny(phases) }, &pairs, &[]).unwrap();
        assert_ne!(encode_model(&a.model), encode_model(&c.model));
    }

    #[test]
    fn runaway_updates_trip_the_divergence_guard() {
        let cfg = TrainConfig {
            base_lr: 1e300,
            lr_divisors: LrDivisors {
                encoder: 1.0,
                bottleneck: 1.0,
                decoder: 1.0,
                head: 1.0,
            },
            ..tiny(vec![Phase::new(0.0, 1.0, 4.0, 4)])
        };
        let err = train(&cfg, &[pair(16, 2)], &[]).err().unwrap();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ok = tiny(vec![Phase::new(1.0, 2.0, 8.0, 1), Phase::new(0.0, 1.0, 4.0, 1)]);
        assert!(ok.validate().is_ok());
        assert!(TrainConfig::default().validate().is_ok());
        let widening = tiny(vec![Phase::new(0.0, 1.0, 4.0, 1), Phase::new(0.0, 1.0, 6.0, 1)]);
        assert!(matches!(widening.validate(), Err(Error::Config(_))));
        let bad_interval = tiny(vec![Phase::new(1.0, 1.0, 4.0, 1)]);
        assert!(bad_interval.validate().is_err());
        let no_epochs = tiny(vec![Phase::new(0.0, 1.0, 4.0, 0)]);
        assert!(no_epochs.validate().is_err());
        assert!(TrainConfig { tile: 20, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { margin: 2.5, ..ok.clone() }.validate().is_err());
        assert!(train(&ok, &[], &[]).is_err());
    }

    #[test]
    fn default_schedule_tightens_and_ends_with_occlusion() {
        let s = default_schedule(50);
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|p| p.epochs == 50));
        assert_eq!(s.iter().filter(|p| p.occlusion).count(), 1);
        assert!(s.last().unwrap().occlusion);
        for w in s.windows(2) {
            assert!(w[1].beta1 <= w[0].beta1);
            assert!(w[1].beta2 - w[1].beta1 <= w[0].beta2 - w[0].beta1);
        }
        let last = s.last().unwrap();
        assert_eq!((last.alpha, last.beta1, last.beta2), HOLDOUT_SAMPLING);
    }

    #[test]
    fn toml_config_with_defaults() {
        let cfg: TrainConfig = parse_toml(
            "seed = 11\ntile = 32\n[lr_divisors]\nencoder = 1000.0\nbottleneck = 100.0\ndecoder = 10.0\nhead = 1.0\n\
             [[phases]]\nalpha = 0.0\nbeta1 = 1.0\nbeta2 = 4.0\nepochs = 3\nocclusion = true\n\
             [data]\ncount = 2\nsize = 32\nmin_disparity = 0\nmax_disparity = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.base_lr, 0.001);
        assert_eq!(cfg.phases.len(), 1);
        assert!(cfg.phases[0].occlusion);
        assert_eq!(cfg.data.as_ref().unwrap().count, 2);
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.group_lr(ParamGroup::Encoder), 1e-6);
        let empty: TrainConfig = parse_toml("").unwrap();
        assert_eq!(empty, TrainConfig::default());
        assert!(matches!(parse_toml::<TrainConfig>("tile = \"x\""), Err(Error::Parse { .. })));
    }

    #[test]
    fn seed_environment_override() {
        let mut cfg = TrainConfig::default();
        std::env::set_var(SEED_ENV, "77");
        let applied = cfg.apply_env();
        std::env::set_var(SEED_ENV, "not-a-number");
        let rejected = cfg.clone().apply_env();
        std::env::remove_var(SEED_ENV);
        applied.unwrap();
        assert_eq!(cfg.seed, 77);
        assert!(matches!(rejected, Err(Error::Config(_))));
    }

    #[test]
    fn holdout_scores_are_paired_and_ranged() {
        let model = tiny(vec![Phase::new(0.0, 1.0, 4.0, 1)]).model.init(2).unwrap();
        let pairs = [pair(20, 5)];
        let mlp = holdout_scores(&model, &pairs, ScoreKind::Mlp, 1).unwrap();
        assert!(mlp.paired);
        assert_eq!(mlp.s_pos.len(), mlp.s_neg.len());
        assert!(mlp.s_pos.iter().chain(&mlp.s_neg).all(|s| (0.0..=1.0).contains(s)));
        let cos = holdout_scores(&model, &pairs, ScoreKind::Cosine, 1).unwrap();
        assert_eq!(cos.s_pos.len(), mlp.s_pos.len());
        assert!(cos.s_pos.iter().all(|s| (-1.0..=1.0).contains(s)));
        // non-occluded pixels only
        let visible = pairs[0].gt.occluded.iter().filter(|&&o| !o).count();
        assert!(mlp.s_pos.len() <= visible);
    }
}
