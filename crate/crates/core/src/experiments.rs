//! Config-driven experiments: Monte-Carlo runs of the switched LS estimator
//! against the error bounds, and Gramian-spectrum sweeps against the class
//! bounds. Everything here is `f64`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_bounds::{
    class_composed_bound, ls_bound, BoundVariant, ClassCertificate, ErrorBoundParams, ErrorBoundReport,
};
use crate::estimator::{partition, LsAccumulator};
use crate::gramian_bounds::{arbitrary_sandwich, average_upper, dwell_lower, dwell_upper, GramianBound};
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::signals::{self, AverageDwellParams, GenerationKnobs, SignalClass, SignalClassSpec, SwitchingSignal};
use crate::stability::{
    certify_average_dwell, find_stability_horizon, fit_decay_envelope_with, minimum_dwell_time,
    product_norm_extremes, AverageDwellCertificate, EnvelopeConstants, EnvelopeOptions, HorizonCertificate,
};
use crate::system::{mix64, NoiseFamily, NoiseSpec, SwitchedSystem, Trajectory};

/// The Fig.-1 experiment: `diag(0.5, 0.5)` and `diag(2, 2)` under windowed
/// average-dwell switching.
pub const FIG1_TOML: &str = include_str!("../presets/fig1.toml");
/// The Fig.-1 system alone.
pub const FIG1_SYSTEM_JSON: &str = include_str!("../presets/fig1.json");

/// Largest stability horizon searched when none is configured.
pub const DEFAULT_MAX_HORIZON: usize = 8;

const SIGNAL_SALT: u64 = 0x5349_474E_414C_5321;

fn default_replications() -> usize {
    1
}
fn default_delta() -> f64 {
    0.05
}
fn default_k() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    1.0
}
fn default_per_decade() -> usize {
    25
}
fn default_first_checkpoint() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub horizon: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Draw a fresh signal for every replication instead of sharing one.
    #[serde(default)]
    pub regenerate_signal: bool,
    pub system: SystemSection,
    pub signal: SignalSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub modes: Option<Vec<Matrix<f64>>>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Arbitrary,
    MinDwell,
    AverageDwell,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    pub class: SignalKind,
    /// Fixed signal CSV (`t,w_t`); it is validated against `class`.
    pub file: Option<PathBuf>,
    pub tau: Option<usize>,
    pub h: Option<usize>,
    pub tau_a: Option<f64>,
    pub n0: Option<usize>,
    pub lambda: Option<f64>,
    pub lambda_star: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub mode_weights: Option<Vec<f64>>,
    pub max_extra_dwell: Option<usize>,
    pub unstable_steps: Option<usize>,
}

impl SignalSection {
    pub fn of_kind(class: SignalKind) -> Self {
        Self {
            class,
            file: None,
            tau: None,
            h: None,
            tau_a: None,
            n0: None,
            lambda: None,
            lambda_star: None,
            lambda1: None,
            lambda2: None,
            c: None,
            mode_weights: None,
            max_extra_dwell: None,
            unstable_steps: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub x0: Option<Vec<f64>>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Gaussian,
            scale: 1.0,
            x0: None,
        }
    }
}

/// Which Gramian bound feeds the error bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundClass {
    /// Exact `tr(Gamma_{N_i})` of the realized signal.
    Exact,
    Arbitrary,
    MinDwell,
    Average,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default)]
    pub variant: BoundVariant,
    /// Defaults to the class matching the signal.
    pub class: Option<BoundClass>,
    pub rho: Option<f64>,
    pub lambda2: Option<f64>,
    /// Stability horizon for the arbitrary class; searched if unset.
    pub m: Option<usize>,
    #[serde(default = "default_per_decade")]
    pub checkpoints_per_decade: usize,
    #[serde(default = "default_first_checkpoint")]
    pub first_checkpoint: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            k: default_k(),
            variant: BoundVariant::Theorem1,
            class: None,
            rho: None,
            lambda2: None,
            m: None,
            checkpoints_per_decade: default_per_decade(),
            first_checkpoint: default_first_checkpoint(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn fig1() -> Self {
        Self::from_toml(FIG1_TOML, Path::new(".")).expect("the shipped preset parses")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.horizon < 2 {
            return Err(Error::invalid("horizon must be at least 2"));
        }
        if !(self.noise.scale > 0.0 && self.noise.scale.is_finite()) {
            return Err(Error::invalid("noise scale must be positive"));
        }
        if self.bounds.checkpoints_per_decade == 0 {
            return Err(Error::invalid("checkpoints_per_decade must be at least 1"));
        }
        match (&self.system.modes, &self.system.file) {
            (Some(_), Some(_)) => Err(Error::invalid("give either system.modes or system.file, not both")),
            (None, None) => Err(Error::invalid("the system needs modes or a file")),
            (None, Some(f)) if !self.resolve(f).exists() => {
                Err(Error::invalid(format!("system file {} does not exist", self.resolve(f).display())))
            }
            _ => match &self.signal.file {
                Some(f) if !self.resolve(f).exists() => {
                    Err(Error::invalid(format!("signal file {} does not exist", self.resolve(f).display())))
                }
                _ => Ok(()),
            },
        }
    }
}

/// A config with its system loaded and its stability certificates computed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: SwitchedSystem<f64>,
    pub class_spec: SignalClassSpec<f64>,
    pub bound_class: BoundClass,
    /// Shared signal (always set unless signals are regenerated).
    pub signal: Option<SwitchingSignal>,
    pub envelope: Option<EnvelopeConstants<f64>>,
    pub horizon_certificate: Option<HorizonCertificate<f64>>,
    pub average_certificate: Option<AverageDwellCertificate<f64>>,
    pub certificate: Option<ClassCertificate<f64>>,
    /// Hypotheses that fail for this experiment; attached to every bound.
    pub reasons: Vec<String>,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let system = match (&config.system.modes, &config.system.file) {
            (Some(m), _) => SwitchedSystem::new(m.clone())?,
            (None, Some(f)) => SwitchedSystem::load(&config.resolve(f))?,
            (None, None) => unreachable!("validated"),
        };
        let s = system.num_modes();
        let n = system.dim();
        if config.bounds.variant == BoundVariant::Theorem1 && n < 2 {
            return Err(Error::invalid("theorem1 needs n >= 2; set bounds.variant = \"corollary1\""));
        }
        if let Some(x0) = &config.noise.x0 {
            if x0.len() != n {
                return Err(Error::invalid(format!("x0 has dimension {}, expected {n}", x0.len())));
            }
        }
        let sig = &config.signal;
        let knobs = GenerationKnobs {
            mode_weights: sig.mode_weights.clone(),
            max_extra_dwell: sig.max_extra_dwell,
            unstable_steps: sig.unstable_steps,
        };
        let mut reasons = Vec::new();
        let mut envelope = None;
        let mut horizon_certificate = None;
        let mut average_certificate = None;

        let needs_envelope = matches!(sig.class, SignalKind::MinDwell | SignalKind::AverageDwell)
            || matches!(config.bounds.class, Some(BoundClass::MinDwell | BoundClass::Average));
        if needs_envelope {
            envelope = Some(fit_decay_envelope_with(
                &system,
                EnvelopeOptions {
                    rho: config.bounds.rho.or(sig.lambda1),
                    lambda2: config.bounds.lambda2.or(sig.lambda2),
                    max_power: None,
                },
            )?);
        }

        let class = match sig.class {
            SignalKind::Arbitrary => SignalClass::Arbitrary,
            SignalKind::MinDwell => {
                let env = envelope.as_ref().expect("fitted above");
                let (tau_star, _) = minimum_dwell_time(env, false)?;
                let tau = sig.tau.unwrap_or(tau_star);
                if tau < tau_star {
                    reasons.push(format!("dwell time {tau} is below the certified tau* = {tau_star}"));
                }
                SignalClass::MinDwell { tau }
            }
            SignalKind::AverageDwell => {
                let env = envelope.as_ref().expect("fitted above");
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| Error::invalid(format!("average_dwell signals need signal.{name}")))
                };
                let lambda = need(sig.lambda, "lambda")?;
                let params = AverageDwellParams {
                    tau_a: need(sig.tau_a, "tau_a")?,
                    n0: sig.n0.unwrap_or(0),
                    lambda,
                    lambda_star: sig.lambda_star.unwrap_or(lambda),
                    h: sig.h.ok_or_else(|| Error::invalid("average_dwell signals need signal.h"))?,
                    lambda1: sig.lambda1.unwrap_or(env.lambda1),
                    lambda2: sig.lambda2.unwrap_or(env.lambda2),
                    c: sig.c.unwrap_or(env.c_all),
                };
                let cert = certify_average_dwell(env, &params)?;
                if cert.case.is_none() {
                    reasons.push("no average-dwell stability case is certified".into());
                }
                reasons.extend(cert.reasons.iter().cloned());
                average_certificate = Some(cert);
                SignalClass::AverageDwell(params)
            }
        };
        let class_spec = SignalClassSpec::new(class, s).with_knobs(knobs);
        class_spec.validate()?;

        let bound_class = config.bounds.class.unwrap_or(match sig.class {
            SignalKind::Arbitrary => BoundClass::Arbitrary,
            SignalKind::MinDwell => BoundClass::MinDwell,
            SignalKind::AverageDwell => BoundClass::Average,
        });
        let certificate = match bound_class {
            BoundClass::Exact => None,
            BoundClass::Arbitrary => {
                let m = match config.bounds.m {
                    Some(m) => m,
                    None => match find_stability_horizon(&system, DEFAULT_MAX_HORIZON, false) {
                        Ok(Some(m)) => m,
                        Ok(None) | Err(Error::Resource(_)) => {
                            reasons.push("no stability horizon certified; using m = 1".into());
                            1
                        }
                        Err(e) => return Err(e),
                    },
                };
                let cert = product_norm_extremes(&system, m)?;
                if !cert.marginal() {
                    reasons.push(format!("a_max = {} exceeds 1 at m = {m}", cert.a_max));
                }
                horizon_certificate = Some(cert.clone());
                Some(ClassCertificate::Arbitrary(cert))
            }
            BoundClass::MinDwell => {
                let env = envelope.clone().ok_or_else(|| Error::invalid("min_dwell bounds need an envelope"))?;
                let (tau_star, _) = minimum_dwell_time(&env, false)?;
                if !env.all_stable() {
                    reasons.push("the dwell-time bound needs every mode stable".into());
                }
                if let SignalClass::MinDwell { tau } = class_spec.class {
                    if tau < tau_star {
                        reasons.push(format!("signal dwell time {tau} is below tau* = {tau_star}"));
                    }
                } else {
                    reasons.push("the signal is not generated with a dwell-time constraint".into());
                }
                Some(ClassCertificate::MinDwell { env, tau_star })
            }
            BoundClass::Average => match (&class_spec.class, &average_certificate) {
                (SignalClass::AverageDwell(params), Some(cert)) => Some(ClassCertificate::Average {
                    params: *params,
                    a: cert.a,
                }),
                _ => return Err(Error::invalid("average bounds need an average_dwell signal section")),
            },
        };
        if config.noise.x0.as_ref().is_some_and(|x| x.iter().any(|&v| v != 0.0)) {
            reasons.push("x0 is not zero".into());
        }

        let mut exp = Self {
            config,
            system,
            class_spec,
            bound_class,
            signal: None,
            envelope,
            horizon_certificate,
            average_certificate,
            certificate,
            reasons,
        };
        if let Some(f) = &exp.config.signal.file {
            let text = std::fs::read_to_string(exp.config.resolve(f))?;
            let signal = SwitchingSignal::from_csv(&text, Some(s))?;
            if signal.len() < exp.config.horizon {
                return Err(Error::invalid(format!(
                    "signal file has {} steps, the horizon needs {}",
                    signal.len(),
                    exp.config.horizon
                )));
            }
            let signal = signal.prefix(exp.config.horizon);
            let report = signals::validate(&signal, &exp.class_spec, &exp.system.stable_set());
            if let Some(v) = report.first_violation() {
                exp.reasons.push(format!("signal violates its class at t = {}: {}", v.at, v.message));
            }
            exp.signal = Some(signal);
        } else if !exp.config.regenerate_signal {
            exp.signal = Some(exp.generate_signal(exp.config.seed ^ SIGNAL_SALT)?);
        }
        Ok(exp)
    }

    fn generate_signal(&self, seed: u64) -> Result<SwitchingSignal> {
        signals::generate(&self.class_spec, self.config.horizon, seed, &self.system.stable_set())
    }

    /// Signal driving replication `rep`.
    pub fn signal_for(&self, rep: u64) -> Result<SwitchingSignal> {
        match &self.signal {
            Some(s) => Ok(s.clone()),
            None => self.generate_signal(self.config.seed ^ SIGNAL_SALT ^ mix64(rep)),
        }
    }

    pub fn noise_for(&self, rep: u64) -> NoiseSpec {
        NoiseSpec::new(self.config.noise.family, self.config.seed).for_replication(rep)
    }

    pub fn x0(&self) -> Vec<f64> {
        self.config.noise.x0.clone().unwrap_or_else(|| vec![0.0; self.system.dim()])
    }

    pub fn simulate(&self, rep: u64) -> Result<Trajectory<f64>> {
        let signal = self.signal_for(rep)?;
        crate::system::simulate(&self.system, &signal, &self.noise_for(rep), self.config.noise.scale, &self.x0())
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        checkpoints(
            self.config.bounds.first_checkpoint,
            self.config.horizon,
            self.config.bounds.checkpoints_per_decade,
        )
    }

    fn error_params(&self, count: usize, last_active: usize) -> ErrorBoundParams<f64> {
        ErrorBoundParams {
            n: self.system.dim(),
            delta: self.config.bounds.delta,
            k: self.config.bounds.k,
            count,
            last_active,
            variant: self.config.bounds.variant,
            num_modes: self.system.num_modes(),
        }
    }

    /// Per-mode error-bound reports for the data of the first `horizon`
    /// steps of `signal`; `None` for modes never active at `t >= 1`.
    /// Experiment-level hypothesis failures are attached to every report.
    pub fn error_reports(
        &self,
        signal: &SwitchingSignal,
        horizon: usize,
    ) -> Result<Vec<Option<ErrorBoundReport<f64>>>> {
        let sig = signal.prefix(horizon);
        let part = partition(&sig);
        let traces = match self.certificate {
            None => Some(gramian_traces(&self.system, &sig)?),
            Some(_) => None,
        };
        (0..self.system.num_modes())
            .map(|i| {
                let Some(last) = part.last_active(i) else {
                    return Ok(None);
                };
                let p = self.error_params(part.count(i), last);
                let mut report = match (&self.certificate, &traces) {
                    (Some(cert), _) => class_composed_bound(cert, &p)?,
                    (None, Some(tr)) => ls_bound(&p, tr[last])?,
                    (None, None) => unreachable!(),
                };
                if !self.reasons.is_empty() {
                    report.assumptions_ok = false;
                    report.reasons.extend(self.reasons.iter().cloned());
                }
                Ok(Some(report))
            })
            .collect()
    }

    /// Class upper bound on `lambda_max(Gamma_T)`, or `None` for exact bounds.
    pub fn class_gramian_bound(&self, t: usize) -> Result<Option<GramianBound<f64>>> {
        let Some(cert) = &self.certificate else {
            return Ok(None);
        };
        Ok(Some(cert.gramian_upper(t)?.with_reasons(self.reasons.iter().cloned())))
    }

    /// Error-bound value and burn-in verdict at each checkpoint for one
    /// signal, indexed `[mode][checkpoint]`.
    fn bound_table(&self, signal: &SwitchingSignal, checkpoints: &[usize]) -> Result<Vec<Vec<BoundCell>>> {
        let s = self.system.num_modes();
        let traces = match self.certificate {
            None => Some(gramian_traces(&self.system, signal)?),
            Some(_) => None,
        };
        let mut table = vec![Vec::with_capacity(checkpoints.len()); s];
        let mut counts = vec![0usize; s];
        let mut last = vec![0usize; s];
        let mut t_next = 1;
        for &cp in checkpoints {
            while t_next < cp {
                counts[signal[t_next]] += 1;
                last[signal[t_next]] = t_next;
                t_next += 1;
            }
            for i in 0..s {
                let cell = if counts[i] == 0 {
                    BoundCell::default()
                } else {
                    let p = self.error_params(counts[i], last[i]);
                    let report = match (&self.certificate, &traces) {
                        (Some(cert), _) => class_composed_bound(cert, &p)?,
                        (None, Some(tr)) => ls_bound(&p, tr[last[i]])?,
                        (None, None) => unreachable!(),
                    };
                    BoundCell {
                        count: counts[i],
                        bound: Some(report.bound),
                        required: Some(report.required_count),
                        burn_in_ok: report.burn_in_ok,
                        assumptions_ok: report.assumptions_ok && self.reasons.is_empty(),
                    }
                };
                table[i].push(cell);
            }
        }
        Ok(table)
    }
}

/// `tr(Gamma_T)` for `T = 0..=N` (index 0 unused and set to `n`).
fn gramian_traces(system: &SwitchedSystem<f64>, signal: &SwitchingSignal) -> Result<Vec<f64>> {
    let n = system.dim();
    let mut out = Vec::with_capacity(signal.len() + 1);
    out.push(n as f64);
    let mut gamma = Matrix::identity(n);
    out.push(gamma.trace());
    for t in 1..signal.len() {
        let a = system.mode(signal[t]);
        gamma = &(&(a * &gamma) * &a.transpose()) + &Matrix::identity(n);
        out.push(gamma.trace());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BoundCell {
    count: usize,
    bound: Option<f64>,
    required: Option<f64>,
    burn_in_ok: bool,
    assumptions_ok: bool,
}

/// Log-spaced integer checkpoints in `[first, last]`, at most `per_decade`
/// per decade, strictly increasing and always ending at `last`.
pub fn checkpoints(first: usize, last: usize, per_decade: usize) -> Vec<usize> {
    let first = first.clamp(2, last.max(2));
    let mut out = Vec::new();
    if last < first {
        return vec![last];
    }
    let lo = (first as f64).log10();
    let hi = (last as f64).log10();
    let steps = ((hi - lo) * per_decade as f64).floor() as usize;
    for k in 0..=steps {
        let v = 10f64.powf(lo + (hi - lo) * k as f64 / steps.max(1) as f64).round() as usize;
        let v = v.clamp(first, last);
        if out.last().is_none_or(|&p| v > p) {
            out.push(v);
        }
    }
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStatsRow {
    /// 1-based.
    pub mode: usize,
    pub t: usize,
    pub count: usize,
    pub err_max: Option<f64>,
    pub err_median: Option<f64>,
    pub err_mean: Option<f64>,
    pub bound: Option<f64>,
    pub required_count: Option<f64>,
    pub burn_in_ok: bool,
    pub assumptions_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub checkpoints: Vec<usize>,
    pub rows: Vec<ErrorStatsRow>,
    /// `errors[rep][mode][checkpoint]`.
    pub errors: Vec<Vec<Vec<Option<f64>>>>,
}

pub const MONTECARLO_HEADER: &str = "mode,t,count,err_max,err_median,err_mean,bound,burn_in_ok";
pub const TRAJECTORIES_HEADER: &str = "replication,mode,t,err";
pub const SWEEP_HEADER: &str = "T,lambda_min,lambda_max,bound_lower,bound_upper,assumptions_ok";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ErrorStats {
    pub fn rows_for(&self, mode: usize) -> impl Iterator<Item = &ErrorStatsRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{MONTECARLO_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.mode,
                r.t,
                r.count,
                opt(r.err_max),
                opt(r.err_median),
                opt(r.err_mean),
                opt(r.bound),
                r.burn_in_ok
            );
        }
        out
    }

    /// One row per replication, mode and checkpoint.
    pub fn trajectories_csv(&self) -> String {
        let mut out = format!("{TRAJECTORIES_HEADER}\n");
        for (rep, modes) in self.errors.iter().enumerate() {
            for (i, errs) in modes.iter().enumerate() {
                for (k, e) in errs.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{}", rep, i + 1, self.checkpoints[k], opt(*e));
                }
            }
        }
        out
    }

    /// Least-squares slope of `ln(err_median)` against `ln(count)` over rows
    /// of `mode` with at least `min_count` samples.
    pub fn median_slope(&self, mode: usize, min_count: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows_for(mode)
            .filter(|r| r.count >= min_count.max(1))
            .filter_map(|r| r.err_median.filter(|&e| e > 0.0).map(|e| ((r.count as f64).ln(), e.ln())))
            .collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

struct Replication {
    errors: Vec<Vec<Option<f64>>>,
    bounds: Option<Vec<Vec<BoundCell>>>,
}

fn run_replication(exp: &Experiment, rep: u64, cps: &[usize]) -> Result<Replication> {
    let tr = exp.simulate(rep)?;
    let s = exp.system.num_modes();
    let mut acc = LsAccumulator::new(s, exp.system.dim());
    let mut errors = vec![Vec::with_capacity(cps.len()); s];
    let mut done = 1;
    for &cp in cps {
        acc.extend(&tr.states, &tr.signal, done, cp);
        done = cp;
        for (i, row) in errors.iter_mut().enumerate() {
            row.push(acc.estimate(i).map(|e| (&e.estimate - exp.system.mode(i)).norm2()));
        }
    }
    let bounds = match exp.signal {
        Some(_) => None,
        None => Some(exp.bound_table(&tr.signal, cps)?),
    };
    Ok(Replication { errors, bounds })
}

/// Runs all replications (in parallel) and aggregates per mode and
/// checkpoint. The result depends only on the config.
pub fn run_monte_carlo(exp: &Experiment) -> Result<ErrorStats> {
    let cps = exp.checkpoints();
    let reps: Vec<Replication> = (0..exp.config.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(exp, r, &cps))
        .collect::<Result<_>>()?;

    // A shared signal has one bound table; regenerated signals are combined
    // conservatively (smallest count, largest bound).
    let shared = match &exp.signal {
        Some(sig) => Some(exp.bound_table(sig, &cps)?),
        None => None,
    };
    let s = exp.system.num_modes();
    let mut rows = Vec::with_capacity(s * cps.len());
    for i in 0..s {
        for (k, &t) in cps.iter().enumerate() {
            let cell = match &shared {
                Some(table) => table[i][k],
                None => reps
                    .iter()
                    .map(|r| r.bounds.as_ref().expect("per-replication bounds")[i][k])
                    .reduce(|a, b| BoundCell {
                        count: a.count.min(b.count),
                        bound: match (a.bound, b.bound) {
                            (Some(x), Some(y)) => Some(x.max(y)),
                            _ => None,
                        },
                        required: match (a.required, b.required) {
                            (Some(x), Some(y)) => Some(x.max(y)),
                            _ => None,
                        },
                        burn_in_ok: a.burn_in_ok && b.burn_in_ok,
                        assumptions_ok: a.assumptions_ok && b.assumptions_ok,
                    })
                    .unwrap_or_default(),
            };
            let mut errs: Vec<f64> = reps.iter().filter_map(|r| r.errors[i][k]).collect();
            errs.sort_by(f64::total_cmp);
            let stats = (!errs.is_empty()).then(|| {
                (
                    *errs.last().unwrap(),
                    median(&errs),
                    errs.iter().sum::<f64>() / errs.len() as f64,
                )
            });
            rows.push(ErrorStatsRow {
                mode: i + 1,
                t,
                count: cell.count,
                err_max: stats.map(|s| s.0),
                err_median: stats.map(|s| s.1),
                err_mean: stats.map(|s| s.2),
                bound: cell.bound,
                required_count: cell.required,
                burn_in_ok: cell.burn_in_ok,
                assumptions_ok: cell.assumptions_ok,
            });
        }
    }
    Ok(ErrorStats {
        checkpoints: cps,
        rows,
        errors: reps.into_iter().map(|r| r.errors).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub bound_lower: Option<f64>,
    pub bound_upper: Option<f64>,
    pub assumptions_ok: bool,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            r.lambda_min,
            r.lambda_max,
            opt(r.bound_lower),
            opt(r.bound_upper),
            r.assumptions_ok
        );
    }
    out
}

/// Multiples of `h` up to `40h` for average-dwell signals, otherwise
/// `1..=min(N, 200)`; always clipped to the horizon.
pub fn default_grid(exp: &Experiment) -> Vec<usize> {
    let n = exp.config.horizon;
    match &exp.class_spec.class {
        SignalClass::AverageDwell(p) => (1..=40).map(|j| j * p.h).take_while(|&t| t <= n).collect(),
        _ => (1..=n.min(200)).collect(),
    }
}

/// Exact spectrum of `Gamma_T` on the shared signal next to the class
/// bounds, one row per `T` in `grid`.
pub fn sweep_gramian(exp: &Experiment, grid: &[usize]) -> Result<Vec<SweepRow>> {
    let signal = exp
        .signal
        .as_ref()
        .ok_or_else(|| Error::invalid("the Gramian sweep needs a fixed signal (regenerate_signal = false)"))?;
    let max_t = grid.iter().copied().max().unwrap_or(0);
    if grid.contains(&0) || max_t > signal.len() {
        return Err(Error::invalid(format!(
            "sweep times must lie in 1..={}",
            signal.len()
        )));
    }
    let n = exp.system.dim();
    let sigma_min = exp.system.sigma_min();
    let mut gammas = Vec::with_capacity(max_t);
    let mut gamma = Matrix::identity(n);
    gammas.push(gamma.clone());
    for t in 1..max_t {
        let a = exp.system.mode(signal[t]);
        gamma = &(&(a * &gamma) * &a.transpose()) + &Matrix::identity(n);
        gammas.push(gamma.clone());
    }
    grid.iter()
        .map(|&t| {
            let g = &gammas[t - 1];
            let sym = &(g + &g.transpose()).scale(0.5);
            let eig = symmetric_eigenvalues(sym)?;
            let lambda_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let lambda_max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lower, upper) = match &exp.certificate {
                None => (dwell_lower(sigma_min, t, true)?, None),
                Some(ClassCertificate::Arbitrary(cert)) => {
                    let b = arbitrary_sandwich(cert, t)?;
                    (b.clone(), Some(b))
                }
                Some(ClassCertificate::MinDwell { env, tau_star }) => {
                    let a = env.c * env.rho.powi(*tau_star as i32);
                    (dwell_lower(sigma_min, t, true)?, Some(dwell_upper(env, *tau_star, a, t, false)?))
                }
                Some(ClassCertificate::Average { params, a }) => {
                    (dwell_lower(sigma_min, t, true)?, Some(average_upper(params, *a, t)?))
                }
            };
            let ok = exp.reasons.is_empty() && lower.assumptions_ok && upper.as_ref().is_none_or(|u| u.assumptions_ok);
            Ok(SweepRow {
                t,
                lambda_min,
                lambda_max,
                bound_lower: lower.lower,
                bound_upper: upper.and_then(|u| u.upper),
                assumptions_ok: ok,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_fig1(reps: usize, horizon: usize) -> Experiment {
        let mut cfg = ExperimentConfig::fig1();
        cfg.replications = reps;
        cfg.horizon = horizon;
        Experiment::prepare(cfg).unwrap()
    }

    #[test]
    fn preset_parses_and_certifies() {
        let exp = small_fig1(2, 500);
        assert!(exp.reasons.is_empty(), "{:?}", exp.reasons);
        let cert = exp.average_certificate.as_ref().unwrap();
        assert_eq!(cert.a, 1.0);
        assert!((cert.r - 1.0).abs() < 1e-12);
        assert_eq!(exp.envelope.as_ref().unwrap().c_all, 1.0);
        let sig = exp.signal.as_ref().unwrap();
        assert!(signals::validate(sig, &exp.class_spec, &exp.system.stable_set()).valid);
    }

    #[test]
    fn checkpoint_spacing() {
        let c = checkpoints(10, 50_000, 25);
        assert_eq!(c.first(), Some(&10));
        assert_eq!(c.last(), Some(&50_000));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        for d in 1..5 {
            let lo = 10usize.pow(d);
            assert!(c.iter().filter(|&&v| v >= lo && v < lo * 10).count() <= 25);
        }
        assert_eq!(checkpoints(10, 5, 25), vec![5]);
        assert_eq!(checkpoints(10, 10, 25), vec![10]);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_prefix_stable() {
        let a = run_monte_carlo(&small_fig1(3, 400)).unwrap();
        let b = run_monte_carlo(&small_fig1(3, 400)).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = run_monte_carlo(&small_fig1(6, 400)).unwrap();
        assert_eq!(&c.errors[..3], &a.errors[..]);
    }

    #[test]
    fn negligible_noise_recovers_exactly() {
        let text = r#"
            horizon = 300
            [system]
            modes = [[[0.9, 0.3], [-0.3, 0.9]], [[0.5, -0.4], [0.4, 0.5]]]
            [signal]
            class = "arbitrary"
            [noise]
            scale = 1e-14
            x0 = [1.0, 0.0]
        "#;
        let exp = Experiment::prepare(ExperimentConfig::from_toml(text, Path::new(".")).unwrap()).unwrap();
        assert_eq!(exp.reasons, vec!["x0 is not zero".to_string()]);
        let stats = run_monte_carlo(&exp).unwrap();
        for r in stats.rows.iter().filter(|r| r.count >= 2) {
            assert!(r.err_max.unwrap() <= 1e-8, "{r:?}");
        }
    }

    #[test]
    fn montecarlo_csv_schema() {
        let stats = run_monte_carlo(&small_fig1(2, 200)).unwrap();
        let csv = stats.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(MONTECARLO_HEADER));
        let cols = MONTECARLO_HEADER.split(',').count();
        assert!(lines.all(|l| l.split(',').count() == cols));
        assert_eq!(stats.rows.len(), 2 * stats.checkpoints.len());
    }

    #[test]
    fn sweep_bounds_hold_on_fig1() {
        let exp = small_fig1(1, 400);
        let rows = sweep_gramian(&exp, &default_grid(&exp)).unwrap();
        assert_eq!(rows.len(), 40);
        for r in &rows {
            assert!(r.assumptions_ok);
            assert!(r.lambda_max <= r.bound_upper.unwrap() * (1.0 + 1e-12));
            assert!(r.bound_lower.unwrap() <= r.lambda_min + 1e-9);
        }
        let t1 = sweep_gramian(&exp, &[1]).unwrap();
        assert_eq!((t1[0].lambda_min, t1[0].lambda_max), (1.0, 1.0));
    }

    #[test]
    fn arbitrary_single_mode_sandwich() {
        let text = r#"
            horizon = 50
            [system]
            modes = [[[0.6, 0.2], [0.0, 0.5]]]
            [signal]
            class = "arbitrary"
        "#;
        let exp = Experiment::prepare(ExperimentConfig::from_toml(text, Path::new(".")).unwrap()).unwrap();
        assert_eq!(exp.horizon_certificate.as_ref().unwrap().m, 1);
        for r in sweep_gramian(&exp, &default_grid(&exp)).unwrap() {
            assert!(r.assumptions_ok);
            assert!(r.bound_lower.unwrap() <= r.lambda_min + 1e-9);
            assert!(r.lambda_max <= r.bound_upper.unwrap() + 1e-9);
        }
    }

    #[test]
    fn config_errors() {
        let bad = |text: &str| ExperimentConfig::from_toml(text, Path::new(".")).unwrap_err();
        assert!(matches!(bad("horizon = 1\n[system]\nmodes=[[[0.5]]]\n[signal]\nclass='arbitrary'"), Error::InvalidInput(_)));
        assert!(matches!(bad("horizon = 10\nbogus = 1\n[system]\nmodes=[[[0.5]]]\n[signal]\nclass='arbitrary'"), Error::Parse(_)));
        assert!(matches!(bad("horizon = 10\n[system]\nfile='missing.json'\n[signal]\nclass='arbitrary'"), Error::InvalidInput(_)));
        let cfg = ExperimentConfig::from_toml("horizon = 10\n[system]\nmodes=[[[0.5]]]\n[signal]\nclass='arbitrary'", Path::new(".")).unwrap();
        assert!(Experiment::prepare(cfg).is_err());
    }
}
