//! Named experiments: baselines, sweeps, Monte-Carlo trials and their CSV
//! outputs.
//!
//! Every random stream is derived from the configured seed and the trial
//! index (plus the sweep index for channels), so the same trial sees the same
//! users, data split and noise under every baseline.

mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::bounds::{corollary_limit, d_value, estimate_params, lipschitz, solve_optimum, theorem2_bound, CorollaryForm};
use crate::channel::{sample_channels, AstarsState, EffectiveChannels};
use crate::error::{Error, Result};
use crate::fl::{
    gen_synthetic, load_mnist_idx, partition, train, Aggregator, Dataset, Descent, IdealAggregator, LinkSource,
    ModelKind, OtaAggregator, TrainHistory, TrainSetup,
};
use crate::ota::OtaLink;
use crate::rng::{derive_seed, stream, tag};
use crate::sca::{optimize, ScaProblem, TraceRow};
use crate::scenario::{assign_data, place_users, DataMode, SurfaceKind, SystemConfig};
use crate::C64;

pub use output::{fmt_f, load_manifest, manifest_text, write_outputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    NoiseFree,
    Astars,
    Pstars,
    DualRis,
    NoRis,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::NoiseFree,
        Baseline::Astars,
        Baseline::Pstars,
        Baseline::DualRis,
        Baseline::NoRis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::NoiseFree => "noise-free",
            Baseline::Astars => "astars",
            Baseline::Pstars => "pstars",
            Baseline::DualRis => "dual-ris",
            Baseline::NoRis => "no-ris",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == norm || b.name().replace('-', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

/// Transform the configuration into the one a baseline runs with.
pub fn apply_baseline(baseline: Baseline, cfg: &SystemConfig) -> SystemConfig {
    let mut c = cfg.clone();
    match baseline {
        Baseline::NoiseFree => {
            c.sigma_s2 = 0.0;
            c.sigma_02 = 0.0;
        }
        Baseline::Astars => {}
        Baseline::Pstars => {
            c.lambda_amp = 1.0;
            c.sigma_s2 = 0.0;
        }
        Baseline::DualRis => {
            c.surface = SurfaceKind::DualRis;
            c.lambda_amp = 1.0;
            c.sigma_s2 = 0.0;
        }
        Baseline::NoRis => {
            c.surface = SurfaceKind::Off;
            c.sigma_s2 = 0.0;
            c.tx_direct_gain = c.noris_pen;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    None,
    Q(Vec<usize>),
    Lambda(Vec<f64>),
}

impl Sweep {
    pub fn kind(&self) -> &'static str {
        match self {
            Sweep::None => "none",
            Sweep::Q(_) => "q",
            Sweep::Lambda(_) => "lambda",
        }
    }

    /// Sweep values as f64 (a single NaN when there is no sweep).
    pub fn values(&self) -> Vec<f64> {
        match self {
            Sweep::None => vec![f64::NAN],
            Sweep::Q(v) => v.iter().map(|q| *q as f64).collect(),
            Sweep::Lambda(v) => v.clone(),
        }
    }

    fn apply(&self, i: usize, cfg: &SystemConfig) -> SystemConfig {
        let mut c = cfg.clone();
        match self {
            Sweep::None => {}
            Sweep::Q(v) => c.q_elements = v[i],
            Sweep::Lambda(v) => c.lambda_amp = v[i],
        }
        c
    }

    fn validate(&self) -> Result<()> {
        match self {
            Sweep::Q(v) if v.is_empty() || v.contains(&0) => {
                Err(Error::Config("Q sweep must be non-empty with Q >= 1".into()))
            }
            Sweep::Lambda(v) if v.is_empty() || v.iter().any(|l| !(*l > 0.0)) => {
                Err(Error::Config("lambda sweep must be non-empty with lambda > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sweep::None => f.write_str("none"),
            Sweep::Q(v) => write!(f, "q:{}", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")),
            Sweep::Lambda(v) => write!(f, "lambda:{}", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")),
        }
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| Error::Config(format!("bad list entry `{x}`"))))
        .collect()
}

impl FromStr for Sweep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "none" => Ok(Sweep::None),
            Some(("q", v)) => Ok(Sweep::Q(parse_list(v)?)),
            Some(("lambda", v)) => Ok(Sweep::Lambda(parse_list(v)?)),
            _ => Err(Error::Config(format!("unknown sweep `{s}`"))),
        }
    }
}

pub fn descent_to_string(d: Descent) -> String {
    match d {
        Descent::Batch => "batch".into(),
        Descent::MiniBatch { batch_size, per_round } => format!("minibatch:{batch_size}:{per_round}"),
    }
}

/// "batch", "minibatch" (32 samples, one batch per round) or
/// "minibatch:<size>:<per_round>".
pub fn parse_descent(s: &str) -> Result<Descent> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("unknown descent `{s}`"));
    match parts.as_slice() {
        ["batch"] => Ok(Descent::Batch),
        ["minibatch"] => Ok(Descent::MiniBatch { batch_size: 32, per_round: 1 }),
        ["minibatch", b, i] => Ok(Descent::MiniBatch {
            batch_size: b.parse().map_err(|_| bad())?,
            per_round: i.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
    /// Gaussian blobs.
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        margin: f64,
    },
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataSource::Mnist { images, labels, limit } => load_mnist_idx(images, labels, *limit),
            DataSource::Synthetic {
                classes,
                dim,
                per_class,
                margin,
            } => gen_synthetic(*classes, *dim, *per_class, *margin, &mut stream(seed, &[tag::SYNTH])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    LogReg,
    TinyMlp { hidden: usize },
}

impl ModelChoice {
    pub fn kind(self, dim: usize, classes: usize, rho: f64) -> ModelKind {
        match self {
            ModelChoice::LogReg => ModelKind::LogReg { dim, classes, rho },
            ModelChoice::TinyMlp { hidden } => ModelKind::TinyMlp { dim, hidden, classes, rho },
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelChoice::LogReg => f.write_str("logreg"),
            ModelChoice::TinyMlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

impl FromStr for ModelChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "logreg" => Ok(ModelChoice::LogReg),
            None if s == "mlp" => Ok(ModelChoice::TinyMlp { hidden: 32 }),
            Some(("mlp", h)) => h
                .parse()
                .map(|hidden| ModelChoice::TinyMlp { hidden })
                .map_err(|_| Error::Config(format!("bad hidden size in `{s}`"))),
            _ => Err(Error::Config(format!("unknown model `{s}`"))),
        }
    }
}

/// Learning rate: the configured one, or 1/L of the training data (the
/// step the convergence analysis assumes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaRule {
    Config,
    InverseL,
}

impl fmt::Display for EtaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EtaRule::Config => "config",
            EtaRule::InverseL => "inverse-l",
        })
    }
}

impl FromStr for EtaRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "config" => Ok(EtaRule::Config),
            "inverse-l" => Ok(EtaRule::InverseL),
            _ => Err(Error::Config(format!("unknown eta rule `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub baseline: Baseline,
    pub data_mode: DataMode,
    pub descent: Descent,
    pub sweep: Sweep,
    pub trials: usize,
    pub out_dir: Option<PathBuf>,
    pub data: DataSource,
    pub model: ModelChoice,
    pub eta: EtaRule,
    /// Evaluate the convergence bound (convex models only).
    pub bounds: bool,
    pub corollary_form: CorollaryForm,
    pub test_frac: f64,
    /// Also write per-trial SCA iterate traces.
    pub traces: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "run".into(),
            baseline: Baseline::Astars,
            data_mode: DataMode::Set1,
            descent: Descent::Batch,
            sweep: Sweep::None,
            trials: 10,
            out_dir: None,
            data: DataSource::Synthetic {
                classes: 10,
                dim: 20,
                per_class: 100,
                margin: 3.0,
            },
            model: ModelChoice::LogReg,
            eta: EtaRule::Config,
            bounds: false,
            corollary_form: CorollaryForm::Printed,
            test_frac: 0.1,
            traces: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.test_frac) {
            return Err(Error::Config("test fraction must lie in [0, 1)".into()));
        }
        self.sweep.validate()
    }
}

/// Per-round optimality gap and bound of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBounds {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub upsilon: f64,
    pub corollary: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub history: TrainHistory,
    /// Final and initial SCA objective (NaN when no optimization ran).
    pub sca_obj: f64,
    pub sca_initial: f64,
    pub d: f64,
    pub eta: f64,
    pub bounds: Option<TrialBounds>,
    pub sca_trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub d_mean: f64,
    pub sca_obj_mean: f64,
    pub corollary_mean: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

impl PointSummary {
    fn from_trials(trials: &[TrialOutcome], failed: usize) -> Self {
        let col = |f: &dyn Fn(&TrialOutcome) -> f64| trials.iter().map(f).collect::<Vec<_>>();
        let (acc_mean, acc_std) = mean_std(&col(&|t| t.history.final_acc));
        let (loss_mean, loss_std) = mean_std(&col(&|t| t.history.final_loss));
        Self {
            trials_ok: trials.len(),
            trials_failed: failed,
            acc_mean,
            acc_std,
            loss_mean,
            loss_std,
            d_mean: mean_std(&col(&|t| t.d)).0,
            sca_obj_mean: mean_std(&col(&|t| t.sca_obj)).0,
            corollary_mean: mean_std(&col(&|t| t.bounds.as_ref().map_or(f64::NAN, |b| b.corollary))).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    /// Sweep value (NaN without a sweep).
    pub value: f64,
    pub cfg: SystemConfig,
    pub trials: Vec<TrialOutcome>,
    pub failures: Vec<(usize, String)>,
    pub summary: PointSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub spec: ExperimentSpec,
    pub cfg: SystemConfig,
    pub points: Vec<PointResult>,
    pub wall_clock_s: f64,
}

/// Run every trial of every sweep point; write outputs when `out_dir` is set.
pub fn run(spec: &ExperimentSpec, cfg: &SystemConfig) -> Result<RunOutput> {
    spec.validate()?;
    cfg.validate()?;
    let t0 = Instant::now();
    let pool = spec.data.load(cfg.seed)?;
    let base = apply_baseline(spec.baseline, cfg);
    let mut points = Vec::new();
    for (pi, value) in spec.sweep.values().into_iter().enumerate() {
        let pcfg = spec.sweep.apply(pi, &base);
        pcfg.validate()?;
        let results: Vec<Result<TrialOutcome>> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| run_trial(spec, &pcfg, &pool, trial, pi))
            .collect();
        let mut trials = Vec::new();
        let mut failures = Vec::new();
        for (trial, r) in results.into_iter().enumerate() {
            match r {
                Ok(t) => trials.push(t),
                Err(e) => {
                    log::warn!("trial {trial} at sweep point {pi} aborted: {e}");
                    failures.push((trial, e.to_string()));
                }
            }
        }
        let summary = PointSummary::from_trials(&trials, failures.len());
        points.push(PointResult {
            value,
            cfg: pcfg,
            trials,
            failures,
            summary,
        });
    }
    let out = RunOutput {
        spec: spec.clone(),
        cfg: cfg.clone(),
        points,
        wall_clock_s: t0.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &spec.out_dir {
        write_outputs(&out, dir)?;
    }
    Ok(out)
}

pub fn sweep_q(spec: &ExperimentSpec, cfg: &SystemConfig, qs: &[usize]) -> Result<RunOutput> {
    run(&ExperimentSpec { sweep: Sweep::Q(qs.to_vec()), ..spec.clone() }, cfg)
}

pub fn sweep_lambda(spec: &ExperimentSpec, cfg: &SystemConfig, lambdas: &[f64]) -> Result<RunOutput> {
    run(&ExperimentSpec { sweep: Sweep::Lambda(lambdas.to_vec()), ..spec.clone() }, cfg)
}

/// Surface and combiner used for a trial, plus the SCA record.
pub struct LinkDesign {
    pub stars: AstarsState,
    pub f: DVector<C64>,
    pub sca_obj: f64,
    pub sca_initial: f64,
    pub trace: Vec<TraceRow>,
}

/// Optimize (f, Θ) for the given channel and weights.
pub fn design_link(
    cfg: &SystemConfig,
    real: &crate::channel::ChannelRealization,
    k: &[f64],
    seed: u64,
) -> Result<LinkDesign> {
    let zeros = vec![0.0; cfg.q_elements];
    let template = AstarsState::for_config(cfg, &zeros, &zeros)?;
    let prob = ScaProblem::new(real, &template, k, cfg.grouping)?;
    let st = optimize(&prob, None, &cfg.sca, seed)?;
    Ok(LinkDesign {
        stars: st.surface(&template)?,
        f: st.f.clone(),
        sca_obj: st.obj,
        sca_initial: st.initial_obj,
        trace: st.trace,
    })
}

fn run_trial(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    pool: &Dataset,
    trial: usize,
    point: usize,
) -> Result<TrialOutcome> {
    let t = trial as u64;
    let p = point as u64;
    let geom = place_users(cfg, &mut stream(cfg.seed, &[tag::GEOMETRY, t]));
    let assign = assign_data(cfg, spec.data_mode, &mut stream(cfg.seed, &[tag::DATA_ASSIGN, t]));
    let part = partition(pool, &assign.k, spec.test_frac, &mut stream(cfg.seed, &[tag::PARTITION, t]))?;
    let k: Vec<f64> = part.k.iter().map(|&x| x as f64).collect();
    let real = sample_channels(cfg, &geom, &mut stream(cfg.seed, &[tag::CHANNEL, t, p]));

    let kind = spec.model.kind(pool.dim, pool.classes, cfg.rho_reg);
    let eta = match spec.eta {
        EtaRule::Config => cfg.eta_lr,
        EtaRule::InverseL => 1.0 / lipschitz(&kind, &part.locals)?,
    };
    let w0 = kind.init(&mut stream(cfg.seed, &[tag::MODEL_INIT, t]));
    let setup = TrainSetup {
        model: kind,
        w0,
        locals: &part.locals,
        test: &part.test,
        descent: spec.descent,
        eta,
        rounds: cfg.rounds,
    };

    let (mut history, design, d) = if spec.baseline == Baseline::NoiseFree {
        (train(&setup, &mut IdealAggregator)?, None, 0.0)
    } else {
        let design = design_link(cfg, &real, &k, derive_seed(cfg.seed, &[tag::SCA, t, p]))?;
        let eff = EffectiveChannels::build(&real, &design.stars);
        let d = d_value(cfg, &design.f, &design.stars, &eff, &k, real.d_sr)?;
        let links = if cfg.redraw_per_round {
            let (stars, f) = (design.stars.clone(), design.f.clone());
            let (geom, cfg) = (geom.clone(), cfg.clone());
            LinkSource::PerRound(Box::new(move |round| {
                let r = sample_channels(&cfg, &geom, &mut stream(cfg.seed, &[tag::CHANNEL, t, p, 1 + round as u64]));
                OtaLink::new(&cfg, &r, &stars, &f)
            }))
        } else {
            LinkSource::Fixed(OtaLink::new(cfg, &real, &design.stars, &design.f)?)
        };
        let mut agg = OtaAggregator {
            links,
            rng: stream(cfg.seed, &[tag::NOISE, t, p]),
        };
        let agg: &mut dyn Aggregator = &mut agg;
        (train(&setup, agg)?, Some(design), d)
    };

    let bounds = if spec.bounds && kind.is_convex() {
        let params = estimate_params(&kind, &part.locals)?;
        let (_, f_star) = solve_optimum(&kind, &part.locals, 1e-10)?;
        let gap0 = history.rows.first().map_or(f64::NAN, |r| r.loss) - f_star;
        let mut lhs = Vec::with_capacity(history.rows.len() + 1);
        let mut rhs = Vec::with_capacity(history.rows.len() + 1);
        let bound = |t: usize| theorem2_bound(t, &params, d, gap0).unwrap_or(f64::INFINITY);
        for row in history.rows.iter_mut() {
            row.bound_rhs = bound(row.round);
            lhs.push(row.loss - f_star);
            rhs.push(row.bound_rhs);
        }
        lhs.push(history.final_loss - f_star);
        rhs.push(bound(history.rows.len()));
        Some(TrialBounds {
            lhs,
            rhs,
            upsilon: params.upsilon(d),
            corollary: corollary_limit(&params, d, spec.corollary_form).unwrap_or(f64::NAN),
        })
    } else {
        None
    };

    let (sca_obj, sca_initial, sca_trace) = match design {
        Some(ds) => (ds.sca_obj, ds.sca_initial, ds.trace),
        None => (f64::NAN, f64::NAN, Vec::new()),
    };
    Ok(TrialOutcome {
        trial,
        history,
        sca_obj,
        sca_initial,
        d,
        eta,
        bounds,
        sca_trace,
    })
}

/// Convenience for callers that only have a path to the output directory.
pub fn run_into(spec: &ExperimentSpec, cfg: &SystemConfig, dir: &Path) -> Result<RunOutput> {
    run(&ExperimentSpec { out_dir: Some(dir.to_path_buf()), ..spec.clone() }, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SystemConfig {
        let mut c = SystemConfig::default();
        c.n_reflect = 3;
        c.m_transmit = 3;
        c.q_elements = 6;
        c.j_antennas = 3;
        c.rounds = 8;
        c.eta_lr = 0.2;
        c.sca.restarts = 1;
        c.sca.imax = 4;
        c
    }

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            trials: 2,
            data: DataSource::Synthetic {
                classes: 3,
                dim: 5,
                per_class: 40,
                margin: 3.0,
            },
            ..Default::default()
        }
    }

    #[test]
    fn baseline_transforms() {
        let c = SystemConfig::default();
        let p = apply_baseline(Baseline::Pstars, &c);
        assert_eq!((p.lambda_amp, p.sigma_s2), (1.0, 0.0));
        let s = AstarsState::for_config(&p, &[0.0; 30], &[0.0; 30]).unwrap();
        assert!(s.amp_n.iter().chain(&s.amp_m).all(|a| *a <= 1.0));
        let n = apply_baseline(Baseline::NoiseFree, &c);
        assert_eq!((n.sigma_s2, n.sigma_02), (0.0, 0.0));
        let r = apply_baseline(Baseline::NoRis, &c);
        assert_eq!(r.surface, SurfaceKind::Off);
        assert_eq!(r.tx_direct_gain, c.noris_pen);
        let d = apply_baseline(Baseline::DualRis, &c);
        assert_eq!(d.surface, SurfaceKind::DualRis);
        assert_eq!(apply_baseline(Baseline::Astars, &c), c);
        assert!("bogus".parse::<Baseline>().is_err());
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
        }
    }

    #[test]
    fn noris_channel_is_attenuated_direct_link() {
        let c = apply_baseline(Baseline::NoRis, &small_cfg());
        let g = place_users(&c, &mut stream(1, &[1]));
        let real = sample_channels(&c, &g, &mut stream(1, &[2]));
        let s = AstarsState::for_config(&c, &[0.3; 6], &[0.1; 6]).unwrap();
        let eff = EffectiveChannels::build(&real, &s);
        for phi in 0..real.users() {
            assert!((&eff.h[phi] - real.direct(phi)).norm() == 0.0);
        }
    }

    #[test]
    fn noise_free_has_zero_error_trace() {
        let spec = ExperimentSpec { baseline: Baseline::NoiseFree, ..small_spec() };
        let out = run(&spec, &small_cfg()).unwrap();
        for t in &out.points[0].trials {
            assert!(t.history.rows.iter().all(|r| r.e2_norm2 == 0.0 && r.closed_form == 0.0));
        }
    }

    #[test]
    fn aggregation_is_mean_of_finals() {
        let out = run(&small_spec(), &small_cfg()).unwrap();
        let p = &out.points[0];
        assert_eq!(p.summary.trials_ok, 2);
        let m = p.trials.iter().map(|t| t.history.final_acc).sum::<f64>() / 2.0;
        assert!((p.summary.acc_mean - m).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_q_runs() {
        let out = sweep_q(&ExperimentSpec { trials: 1, ..small_spec() }, &small_cfg(), &[1]).unwrap();
        assert_eq!(out.points[0].summary.trials_ok, 1);
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["none", "q:10,20,30,40", "lambda:5,10,15"] {
            assert_eq!(s.parse::<Sweep>().unwrap().to_string(), s);
        }
        assert!("q:".parse::<Sweep>().is_err());
        assert!(Sweep::Q(vec![]).validate().is_err());
        for s in ["batch", "minibatch:16:2"] {
            assert_eq!(descent_to_string(parse_descent(s).unwrap()), s);
        }
        for s in ["logreg", "mlp:8"] {
            assert_eq!(s.parse::<ModelChoice>().unwrap().to_string(), s);
        }
        assert!(ExperimentSpec { trials: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
