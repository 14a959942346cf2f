//! High-probability bounds on the per-mode least-squares error
//! `||A_hat_i - A_i||_2`, their burn-in sample counts, and the versions
//! composed with a class-specific Gramian bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramian_bounds::{arbitrary_upper_simple, average_upper, dwell_upper, GramianBound};
use crate::scalar::Scalar;
use crate::signals::AverageDwellParams;
use crate::stability::{EnvelopeConstants, HorizonCertificate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundVariant {
    /// Requires `n >= 2`.
    #[default]
    Theorem1,
    /// Valid for every `n >= 1`.
    Corollary1,
}

impl std::str::FromStr for BoundVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "theorem1" => Ok(Self::Theorem1),
            "corollary1" => Ok(Self::Corollary1),
            other => Err(Error::invalid(format!(
                "unknown bound variant '{other}' (expected theorem1 or corollary1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBoundParams<T> {
    pub n: usize,
    pub delta: T,
    /// Constant in the first burn-in term `K (n + ln(2/delta))`.
    pub k: T,
    /// `|T_i|`.
    pub count: usize,
    /// Last step at which the mode is active.
    pub last_active: usize,
    pub variant: BoundVariant,
    /// Number of modes, for the uniform-over-modes probability.
    pub num_modes: usize,
}

impl<T: Scalar> ErrorBoundParams<T> {
    pub fn new(n: usize, delta: T, count: usize, last_active: usize) -> Self {
        Self {
            n,
            delta,
            k: T::one(),
            count,
            last_active,
            variant: BoundVariant::Theorem1,
            num_modes: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let quarter = T::of(0.25);
        if !(self.delta > T::zero() && self.delta < quarter) {
            return Err(Error::invalid(format!("delta = {} must lie in (0, 1/4)", self.delta)));
        }
        if !(self.k > T::zero()) || !self.k.is_finite() {
            return Err(Error::invalid(format!("K = {} must be positive", self.k)));
        }
        if self.n == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        if self.variant == BoundVariant::Theorem1 && self.n < 2 {
            return Err(Error::invalid("the theorem1 variant needs n >= 2; use corollary1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct ErrorBoundReport<T: Scalar> {
    pub variant: BoundVariant,
    pub class: String,
    pub n: usize,
    pub delta: T,
    #[serde(rename = "K")]
    pub k: T,
    pub count: usize,
    #[serde(rename = "N_i")]
    pub last_active: usize,
    pub gram_trace_upper: T,
    /// Where the trace bound came from: `exact` or a class bound kind.
    pub trace_source: String,
    pub required_count: T,
    pub burn_in_ok: bool,
    pub bound: T,
    /// Per-mode confidence `1 - 4 delta`.
    pub probability: T,
    /// Uniform over all modes: `1 - 4 s delta`.
    pub probability_uniform: T,
    pub assumptions_ok: bool,
    pub reasons: Vec<String>,
}

fn check_trace<T: Scalar>(n: usize, trace: T) -> Result<()> {
    let nn = T::of_usize(n);
    if !(trace >= nn * T::of(1.0 - 1e-12)) || !trace.is_finite() {
        return Err(Error::invalid(format!(
            "Gramian trace bound {trace} must be finite and at least n = {n}"
        )));
    }
    Ok(())
}

/// Burn-in count: the larger of `K (n + ln(2/delta))` and the log-trace term.
pub fn burn_in_threshold<T: Scalar>(p: &ErrorBoundParams<T>, gram_trace_upper: T) -> Result<T> {
    p.validate()?;
    check_trace(p.n, gram_trace_upper)?;
    let n = T::of_usize(p.n);
    let two = T::of(2.0);
    let five = T::of(5.0);
    let first = p.k * (n + (two / p.delta).ln());
    let excess = (gram_trace_upper - n).max(T::zero());
    let log_trace = T::of(64.0) * n * (excess + T::one()).ln();
    let confidence = match p.variant {
        BoundVariant::Theorem1 => T::of(128.0) * n * (five / p.delta).ln(),
        // ln(5^n / delta^{1 + n/2})
        BoundVariant::Corollary1 => {
            T::of(128.0) * (n * five.ln() - (T::one() + n / two) * p.delta.ln())
        }
    };
    Ok(first.max(log_trace + confidence))
}

/// Error bound for given `tr(Gamma_{N_i})` upper bound.
pub fn ls_bound<T: Scalar>(p: &ErrorBoundParams<T>, gram_trace_upper: T) -> Result<ErrorBoundReport<T>> {
    ls_bound_from(p, gram_trace_upper, "exact")
}

fn ls_bound_from<T: Scalar>(
    p: &ErrorBoundParams<T>,
    gram_trace_upper: T,
    source: &str,
) -> Result<ErrorBoundReport<T>> {
    let required = burn_in_threshold(p, gram_trace_upper)?;
    if p.count == 0 {
        return Err(Error::invalid("the mode has no samples (|T_i| = 0)"));
    }
    let n = T::of_usize(p.n);
    let half = T::of(0.5);
    let five = T::of(5.0);
    let log_trace = half * (T::of(4.0) * gram_trace_upper + T::one()).ln();
    let confidence = match p.variant {
        BoundVariant::Theorem1 => (five / p.delta).ln(),
        // ln(5 / delta^{1/n + 1/2})
        BoundVariant::Corollary1 => five.ln() - (T::one() / n + half) * p.delta.ln(),
    };
    let bound = (T::of(32.0) * n * (log_trace + confidence)).sqrt() / T::of_usize(p.count).sqrt();
    let four = T::of(4.0);
    Ok(ErrorBoundReport {
        variant: p.variant,
        class: "exact".into(),
        n: p.n,
        delta: p.delta,
        k: p.k,
        count: p.count,
        last_active: p.last_active,
        gram_trace_upper,
        trace_source: source.into(),
        required_count: required,
        burn_in_ok: T::of_usize(p.count) >= required,
        bound,
        probability: T::one() - four * p.delta,
        probability_uniform: T::one() - four * T::of_usize(p.num_modes.max(1)) * p.delta,
        assumptions_ok: true,
        reasons: Vec::new(),
    })
}

/// Stability certificate a composed bound is built on.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassCertificate<T: Scalar> {
    Arbitrary(HorizonCertificate<T>),
    MinDwell {
        env: EnvelopeConstants<T>,
        tau_star: usize,
    },
    Average {
        params: AverageDwellParams<T>,
        a: T,
    },
}

impl<T: Scalar> ClassCertificate<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Arbitrary(_) => "arbitrary",
            Self::MinDwell { .. } => "min_dwell",
            Self::Average { .. } => "average",
        }
    }

    /// Class upper bound on `lambda_max(Gamma_T)`.
    pub fn gramian_upper(&self, t: usize) -> Result<GramianBound<T>> {
        match self {
            Self::Arbitrary(cert) => {
                let b = arbitrary_upper_simple(cert.sigma_max, cert.m, t)?;
                Ok(if cert.marginal() {
                    b
                } else {
                    b.with_reasons([format!("a_max = {} exceeds 1", cert.a_max)])
                })
            }
            Self::MinDwell { env, tau_star } => {
                let a = env.c * env.rho.powi(*tau_star as i32);
                dwell_upper(env, *tau_star, a, t, false)
            }
            Self::Average { params, a } => average_upper(params, *a, t),
        }
    }
}

/// Error bound with `tr(Gamma_{N_i}) <= n * lambda_max` bound of the class.
pub fn class_composed_bound<T: Scalar>(
    class: &ClassCertificate<T>,
    p: &ErrorBoundParams<T>,
) -> Result<ErrorBoundReport<T>> {
    let gram = class.gramian_upper(p.last_active.max(1))?;
    let upper = gram
        .upper
        .ok_or_else(|| Error::invalid("class bound carries no upper value"))?;
    let trace = T::of_usize(p.n) * upper;
    let source = serde_json::to_value(gram.kind)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    let mut report = ls_bound_from(p, trace, &source)?;
    report.class = class.name().into();
    report.assumptions_ok = gram.assumptions_ok;
    report.reasons = gram.reasons;
    Ok(report)
}
