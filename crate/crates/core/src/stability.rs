//! Certificates for the stability hypotheses the Gramian bounds rest on:
//! product-norm extremes over all length-`m` mode products, decay envelopes
//! `||A_i^k|| <= c rho^k`, dwell-time constants and the average-dwell case
//! split.
//!
//! A missing certificate never proves instability; the conditions checked
//! here are sufficient only.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{powr, Scalar};
use crate::signals::AverageDwellParams;
use crate::system::SwitchedSystem;

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Upper limit on the power sweep that looks for the envelope cut-off.
pub const DEFAULT_MAX_POWER: usize = 100_000;

/// Extremes over every ordered product `A_{s_1} ... A_{s_m}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct HorizonCertificate<T: Scalar> {
    pub m: usize,
    /// Smallest `sigma_min` over all length-m products.
    pub a_min: T,
    /// Largest spectral norm over all length-m products.
    pub a_max: T,
    /// Per-mode extremes `min_i sigma_min(A_i)`, `max_i sigma_max(A_i)`.
    pub sigma_min: T,
    pub sigma_max: T,
    pub exhaustive: bool,
    pub products: u64,
}

impl<T: Scalar> HorizonCertificate<T> {
    /// `a_max <= 1`: marginal stability under arbitrary switching.
    pub fn marginal(&self) -> bool {
        self.a_max <= T::one()
    }

    /// `a_max < 1`: asymptotic stability under arbitrary switching.
    pub fn asymptotic(&self) -> bool {
        self.a_max < T::one()
    }
}

pub fn product_norm_extremes<T: Scalar>(system: &SwitchedSystem<T>, m: usize) -> Result<HorizonCertificate<T>> {
    product_norm_extremes_capped(system, m, DEFAULT_ENUMERATION_CAP)
}

/// Depth-first enumeration of all `s^m` products, each level reusing its
/// length-(k-1) prefix.
pub fn product_norm_extremes_capped<T: Scalar>(
    system: &SwitchedSystem<T>,
    m: usize,
    cap: u64,
) -> Result<HorizonCertificate<T>> {
    if m == 0 {
        return Err(Error::invalid("product length m must be at least 1"));
    }
    let s = system.num_modes() as u64;
    let total = u32::try_from(m)
        .ok()
        .and_then(|e| s.checked_pow(e))
        .filter(|&t| t <= cap)
        .ok_or_else(|| {
            Error::Resource(format!(
                "{s}^{m} products exceed the enumeration cap {cap}; try a smaller m"
            ))
        })?;

    struct Acc<T> {
        a_min: T,
        a_max: T,
    }
    fn descend<T: Scalar>(modes: &[Matrix<T>], prefix: &Matrix<T>, depth: usize, m: usize, acc: &mut Acc<T>) {
        if depth == m {
            let sv = prefix.singular_values();
            acc.a_max = acc.a_max.max(sv[0]);
            acc.a_min = acc.a_min.min(*sv.last().unwrap());
            return;
        }
        for a in modes {
            descend(modes, &(prefix * a), depth + 1, m, acc);
        }
    }

    let mut acc = Acc {
        a_min: T::infinity(),
        a_max: T::zero(),
    };
    for a in system.modes() {
        descend(system.modes(), a, 1, m, &mut acc);
    }
    Ok(HorizonCertificate {
        m,
        a_min: acc.a_min,
        a_max: acc.a_max,
        sigma_min: system.sigma_min(),
        sigma_max: system.sigma_max(),
        exhaustive: true,
        products: total,
    })
}

/// Smallest `m <= m_max` whose certificate has `a_max <= 1` (`< 1` when
/// `strict`).
pub fn find_stability_horizon<T: Scalar>(
    system: &SwitchedSystem<T>,
    m_max: usize,
    strict: bool,
) -> Result<Option<usize>> {
    if m_max == 0 {
        return Err(Error::invalid("m_max must be at least 1"));
    }
    for m in 1..=m_max {
        let cert = product_norm_extremes(system, m)?;
        if (strict && cert.asymptotic()) || (!strict && cert.marginal()) {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeClass {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct ModeEnvelope<T: Scalar> {
    /// 1-based mode index.
    pub mode: usize,
    pub class: ModeClass,
    /// Rate `q` in `||A^k|| <= constant * q^k`.
    pub rate: T,
    pub constant: T,
    /// First `k >= 1` with `||A^k|| <= q^k`; the envelope holds for all `k`
    /// by submultiplicativity beyond it.
    pub k_cut: usize,
}

/// Certified decay envelopes. Stable modes satisfy `||A_i^k|| <= c_i rho^k`
/// with `rho = lambda1`; unstable ones `||A_j^k|| <= C_j lambda2^k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct EnvelopeConstants<T: Scalar> {
    pub rho: T,
    /// `max` of the stable-mode constants (1 when there are none).
    pub c: T,
    pub per_mode: Vec<ModeEnvelope<T>>,
    pub lambda1: T,
    pub lambda2: T,
    /// `C = max_v C_v` over all modes.
    #[serde(rename = "C")]
    pub c_all: T,
    pub k_cut: usize,
}

impl<T: Scalar> EnvelopeConstants<T> {
    pub fn all_stable(&self) -> bool {
        self.per_mode.iter().all(|m| m.class == ModeClass::Stable)
    }

    /// Envelope value for mode `i` (0-based) at power `k`.
    pub fn envelope(&self, i: usize, k: usize) -> T {
        let m = &self.per_mode[i];
        m.constant * m.rate.powi(k as i32)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EnvelopeOptions<T> {
    pub rho: Option<T>,
    pub lambda2: Option<T>,
    pub max_power: Option<usize>,
}

/// Fits envelopes with `rho` defaulting to `(1 + max stable radius)/2` and
/// `lambda2` to the largest unstable spectral norm.
pub fn fit_decay_envelope<T: Scalar>(system: &SwitchedSystem<T>, rho: Option<T>) -> Result<EnvelopeConstants<T>> {
    fit_decay_envelope_with(
        system,
        EnvelopeOptions {
            rho,
            ..Default::default()
        },
    )
}

pub fn fit_decay_envelope_with<T: Scalar>(
    system: &SwitchedSystem<T>,
    opts: EnvelopeOptions<T>,
) -> Result<EnvelopeConstants<T>> {
    let (one, zero) = (T::one(), T::zero());
    let stable = system.stable_set();
    let unstable = system.unstable_set();
    for &i in &stable {
        if system.spectral_radius(i) >= one {
            return Err(Error::Classification(format!(
                "mode {} is classified stable with spectral radius {}",
                i + 1,
                system.spectral_radius(i)
            )));
        }
    }
    let max_stable_radius = stable
        .iter()
        .map(|&i| system.spectral_radius(i))
        .fold(zero, T::max);
    let rho = match opts.rho {
        Some(r) => {
            if !(r > zero && r < one) || (!stable.is_empty() && r < max_stable_radius) {
                return Err(Error::invalid(format!(
                    "rho = {r} must lie in (0, 1) and be at least the largest stable spectral radius {max_stable_radius}"
                )));
            }
            r
        }
        None if stable.is_empty() => T::of(0.5),
        None => (one + max_stable_radius) / T::of(2.0),
    };
    // A nilpotent-only system would put rho at 1/2 anyway; rho must stay positive.
    let rho = rho.max(T::epsilon());

    let max_unstable_radius = unstable
        .iter()
        .map(|&i| system.spectral_radius(i))
        .fold(zero, T::max);
    let lambda2 = match opts.lambda2 {
        Some(l) => {
            if !(l >= one) || l < max_unstable_radius {
                return Err(Error::invalid(format!(
                    "lambda2 = {l} must be >= 1 and >= the largest unstable spectral radius {max_unstable_radius}"
                )));
            }
            l
        }
        None => unstable
            .iter()
            .map(|&i| system.mode(i).norm2())
            .fold(one, T::max),
    };
    let max_power = opts.max_power.unwrap_or(DEFAULT_MAX_POWER);

    let mut per_mode = Vec::with_capacity(system.num_modes());
    for i in 0..system.num_modes() {
        let (class, rate) = if system.is_stable(i) {
            (ModeClass::Stable, rho)
        } else {
            (ModeClass::Unstable, lambda2)
        };
        let (constant, k_cut) = certify_rate(system.mode(i), rate, max_power).map_err(|e| match e {
            Error::Resource(msg) => Error::Resource(format!("mode {}: {msg}", i + 1)),
            other => other,
        })?;
        per_mode.push(ModeEnvelope {
            mode: i + 1,
            class,
            rate,
            constant,
            k_cut,
        });
    }
    let c = per_mode
        .iter()
        .filter(|m| m.class == ModeClass::Stable)
        .map(|m| m.constant)
        .fold(one, T::max);
    let c_all = per_mode.iter().map(|m| m.constant).fold(one, T::max);
    let k_cut = per_mode.iter().map(|m| m.k_cut).max().unwrap_or(1);
    Ok(EnvelopeConstants {
        rho,
        c,
        per_mode,
        lambda1: rho,
        lambda2,
        c_all,
        k_cut,
    })
}

/// Smallest `c >= 1` with `||A^k|| <= c q^k` for all `k >= 0`: sweep powers
/// up to the first `k_cut >= 1` with `||A^{k_cut}|| <= q^{k_cut}`, then any
/// larger `k = p k_cut + rem` is covered by submultiplicativity.
pub fn certify_rate<T: Scalar>(a: &Matrix<T>, q: T, max_power: usize) -> Result<(T, usize)> {
    let mut c = T::one();
    let mut power = Matrix::identity(a.rows());
    let mut qk = T::one();
    for k in 1..=max_power {
        power = &power * a;
        qk = qk * q;
        let norm = power.norm2();
        if !norm.is_finite() {
            break;
        }
        if norm <= qk {
            return Ok((c, k));
        }
        c = c.max(norm / qk);
        if !c.is_finite() {
            break;
        }
    }
    Err(Error::Resource(format!(
        "no k <= {max_power} with ||A^k|| <= {q}^k; choose a larger rate"
    )))
}

/// Smallest `tau*` with `c rho^tau* <= 1` (`< 1` when `strict`), and
/// `a = c rho^tau*`.
pub fn minimum_dwell_time<T: Scalar>(env: &EnvelopeConstants<T>, strict: bool) -> Result<(usize, T)> {
    minimum_dwell_time_for(env.c, env.rho, strict)
}

pub fn minimum_dwell_time_for<T: Scalar>(c: T, rho: T, strict: bool) -> Result<(usize, T)> {
    if !(c >= T::one()) || !(rho > T::zero() && rho < T::one()) {
        return Err(Error::invalid(format!("need c >= 1 and rho in (0, 1), got c = {c}, rho = {rho}")));
    }
    let mut a = c;
    let mut tau = 0;
    loop {
        tau += 1;
        a = a * rho;
        if (strict && a < T::one()) || (!strict && a <= T::one()) {
            return Ok((tau, a));
        }
    }
}

/// `r = (ln lambda2 - ln lambda*) / (ln lambda* - ln lambda1)`.
pub fn ratio_r<T: Scalar>(env: &EnvelopeConstants<T>, lambda_star: T) -> Result<T> {
    ratio_r_for(env.lambda1, env.lambda2, lambda_star)
}

pub fn ratio_r_for<T: Scalar>(lambda1: T, lambda2: T, lambda_star: T) -> Result<T> {
    if !(lambda_star > lambda1 && lambda_star <= lambda2) {
        return Err(Error::invalid(format!(
            "lambda* = {lambda_star} outside ({lambda1}, {lambda2}]"
        )));
    }
    Ok((lambda2.ln() - lambda_star.ln()) / (lambda_star.ln() - lambda1.ln()))
}

/// `tau_a* = ln C / (ln lambda - ln lambda*)`.
pub fn average_dwell_tau_star<T: Scalar>(env: &EnvelopeConstants<T>, lambda: T, lambda_star: T) -> Result<T> {
    average_dwell_tau_star_for(env.c_all, env.lambda1, lambda, lambda_star)
}

pub fn average_dwell_tau_star_for<T: Scalar>(c: T, lambda1: T, lambda: T, lambda_star: T) -> Result<T> {
    if c <= T::one() {
        return Err(Error::NotApplicable(
            "C = 1 imposes no average dwell time".into(),
        ));
    }
    if !(lambda1 < lambda_star && lambda_star < lambda && lambda < T::one()) {
        return Err(Error::invalid(format!(
            "need lambda1 < lambda* < lambda < 1, got {lambda1}, {lambda_star}, {lambda}"
        )));
    }
    Ok(c.ln() / (lambda.ln() - lambda_star.ln()))
}

/// Largest `N0` with `N0 ln C <= -h ln lambda` (strict: `<`). A ratio
/// within 1e-9 of an integer counts as attained exactly.
pub fn max_allowed_n0<T: Scalar>(h: usize, lambda: T, c: T, strict: bool) -> Result<usize> {
    if c <= T::one() {
        return Err(Error::NotApplicable("C = 1 leaves N0 unconstrained".into()));
    }
    if !(lambda > T::zero() && lambda < T::one()) || h == 0 {
        return Err(Error::invalid("need lambda in (0, 1) and h >= 1"));
    }
    let ratio = (-(h as f64) * lambda.as_f64().ln()) / c.as_f64().ln();
    let nearest = ratio.round();
    let n = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        if strict {
            nearest - 1.0
        } else {
            nearest
        }
    } else {
        ratio.floor()
    };
    Ok(n.max(0.0) as usize)
}

/// Which average-dwell stability case applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageDwellCase {
    /// `C = 1` and `lambda* <= 1`.
    UnitConstant,
    /// `C > 1` with `N0` and `tau_a` restricted.
    BoundedSwitching,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct AverageDwellCertificate<T: Scalar> {
    pub case: Option<AverageDwellCase>,
    /// Window contraction: `(lambda*)^h` for C = 1, `C^N0 lambda^h` otherwise.
    pub a: T,
    pub marginal: bool,
    pub asymptotic: bool,
    pub r: T,
    pub k_plus_max: usize,
    pub switch_budget: T,
    pub tau_a_star: Option<T>,
    pub n0_max: Option<usize>,
    pub reasons: Vec<String>,
}

/// Checks the class parameters against the fitted envelope and decides the
/// stability case.
pub fn certify_average_dwell<T: Scalar>(
    env: &EnvelopeConstants<T>,
    params: &AverageDwellParams<T>,
) -> Result<AverageDwellCertificate<T>> {
    params.validate()?;
    let one = T::one();
    let mut reasons = Vec::new();
    if params.lambda1 < env.lambda1 {
        reasons.push(format!(
            "lambda1 = {} is below the certified stable rate {}",
            params.lambda1, env.lambda1
        ));
    }
    if params.lambda2 < env.lambda2 {
        reasons.push(format!(
            "lambda2 = {} is below the certified unstable rate {}",
            params.lambda2, env.lambda2
        ));
    }
    if params.c < env.c_all {
        reasons.push(format!("C = {} is below the certified constant {}", params.c, env.c_all));
    }
    let h = params.h;
    let (case, a, tau_a_star, n0_max) = if params.c <= one {
        let a = params.lambda_star.powi(h as i32);
        let case = if params.lambda_star <= one {
            Some(AverageDwellCase::UnitConstant)
        } else {
            reasons.push(format!("lambda* = {} exceeds 1 with C = 1", params.lambda_star));
            None
        };
        (case, a, None, None)
    } else {
        let a = powr(params.c, T::of_usize(params.n0)) * params.lambda.powi(h as i32);
        let tau_star = average_dwell_tau_star_for(params.c, params.lambda1, params.lambda, params.lambda_star);
        let n0_max = max_allowed_n0(h, params.lambda, params.c, false).ok();
        let mut ok = true;
        match &tau_star {
            Ok(ts) if params.tau_a < *ts * T::of(1.0 - 1e-12) => {
                ok = false;
                reasons.push(format!("tau_a = {} is below tau_a* = {ts}", params.tau_a));
            }
            Ok(_) => {}
            Err(e) => {
                ok = false;
                reasons.push(e.to_string());
            }
        }
        match n0_max {
            Some(nm) if params.n0 > nm => {
                ok = false;
                reasons.push(format!("N0 = {} exceeds the largest admissible {nm}", params.n0));
            }
            None => ok = false,
            _ => {}
        }
        let case = ok.then_some(AverageDwellCase::BoundedSwitching);
        (case, a, tau_star.ok(), n0_max)
    };
    let certified = case.is_some() && reasons.is_empty();
    Ok(AverageDwellCertificate {
        case: if certified { case } else { None },
        a,
        marginal: certified && a <= one,
        asymptotic: certified && a < one,
        r: params.r(),
        k_plus_max: params.max_unstable_steps(h),
        switch_budget: params.switch_budget(),
        tau_a_star,
        n0_max,
        reasons,
    })
}
