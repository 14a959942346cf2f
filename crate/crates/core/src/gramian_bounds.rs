//! Closed-form spectral bounds on the Gramian `Gamma_T` for the three
//! switching classes. Every bound is returned as a [`GramianBound`]; broken
//! hypotheses are flagged in `assumptions_ok`/`reasons` rather than turned
//! into errors.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{geometric_sum, powr, Scalar};
use crate::signals::AverageDwellParams;
use crate::stability::{EnvelopeConstants, HorizonCertificate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    ArbitrarySandwich,
    ArbitrarySimple,
    DwellMarginal,
    DwellAsymptotic,
    DwellLower,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct GramianBound<T: Scalar> {
    pub kind: BoundKind,
    #[serde(rename = "T")]
    pub t: usize,
    pub lower: Option<T>,
    pub upper: Option<T>,
    pub inputs: BTreeMap<String, f64>,
    pub assumptions_ok: bool,
    pub reasons: Vec<String>,
}

impl<T: Scalar> GramianBound<T> {
    fn new(kind: BoundKind, t: usize) -> Self {
        Self {
            kind,
            t,
            lower: None,
            upper: None,
            inputs: BTreeMap::new(),
            assumptions_ok: true,
            reasons: Vec::new(),
        }
    }

    fn input(mut self, key: &str, v: impl Into<f64>) -> Self {
        self.inputs.insert(key.to_string(), v.into());
        self
    }

    fn flag(&mut self, reason: String) {
        self.assumptions_ok = false;
        self.reasons.push(reason);
    }

    /// Merges externally checked hypotheses into this report.
    pub fn with_reasons(mut self, reasons: impl IntoIterator<Item = String>) -> Self {
        for r in reasons {
            self.flag(r);
        }
        self
    }
}

fn check_t(t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    Ok(())
}

/// Two-sided bound for arbitrary switching with stability horizon `m`.
pub fn arbitrary_sandwich<T: Scalar>(cert: &HorizonCertificate<T>, t: usize) -> Result<GramianBound<T>> {
    check_t(t)?;
    let m = cert.m as i64;
    let blocks = ((t - 1) / cert.m) as i64;
    let two = T::of(2.0);
    let smin2 = cert.sigma_min.powf(two);
    let amin2 = cert.a_min.powf(two);
    let full_lower = geometric_sum(smin2, 0, m - 1) * geometric_sum(amin2, 0, blocks);
    let upper = geometric_sum(cert.sigma_max.powf(two), 0, m - 1) * geometric_sum(cert.a_max.powf(two), 0, blocks);
    // Only the T terms i = j m + b < T of the double sum belong to Gamma_T;
    // the full double sum overshoots lambda_min when m does not divide T.
    let whole = (t / cert.m) as i64;
    let rest = (t % cert.m) as i64;
    let lower = geometric_sum(smin2, 0, m - 1) * geometric_sum(amin2, 0, whole - 1)
        + amin2.powi(whole as i32) * geometric_sum(smin2, 0, rest - 1);
    let mut b = GramianBound::new(BoundKind::ArbitrarySandwich, t)
        .input("lower_full_sum", full_lower.as_f64())
        .input("m", cert.m as f64)
        .input("sigma_min", cert.sigma_min.as_f64())
        .input("sigma_max", cert.sigma_max.as_f64())
        .input("a_min", cert.a_min.as_f64())
        .input("a_max", cert.a_max.as_f64());
    b.lower = Some(lower);
    b.upper = Some(upper);
    if !cert.marginal() {
        b.flag(format!("a_max = {} exceeds 1", cert.a_max));
    }
    Ok(b)
}

/// `p = (1 - sigma_max^{2m}) / (1 - sigma_max^2)`.
pub fn horizon_factor<T: Scalar>(sigma_max: T, m: usize) -> Result<T> {
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    if m == 1 {
        return Ok(T::one());
    }
    if sigma_max == T::one() {
        return Err(Error::invalid(
            "sigma_max = 1 makes the simplified bound undefined; use the sandwich bound",
        ));
    }
    let s2 = sigma_max * sigma_max;
    Ok((T::one() - s2.powi(m as i32)) / (T::one() - s2))
}

/// Simplified upper bound `p (floor(T/m) + 1)`.
pub fn arbitrary_upper_simple<T: Scalar>(sigma_max: T, m: usize, t: usize) -> Result<GramianBound<T>> {
    check_t(t)?;
    let p = horizon_factor(sigma_max, m)?;
    let mut b = GramianBound::new(BoundKind::ArbitrarySimple, t)
        .input("sigma_max", sigma_max.as_f64())
        .input("m", m as f64)
        .input("p", p.as_f64());
    b.upper = Some(p * T::of_usize(t / m + 1));
    Ok(b)
}

/// Minimum-dwell upper bound; the marginal form needs `a <= 1`, the
/// asymptotic one `a < 1`.
pub fn dwell_upper<T: Scalar>(
    env: &EnvelopeConstants<T>,
    tau_star: usize,
    a: T,
    t: usize,
    asymptotic: bool,
) -> Result<GramianBound<T>> {
    dwell_upper_for(env.c, env.rho, tau_star, a, t, asymptotic).map(|b| {
        if env.all_stable() {
            b
        } else {
            b.with_reasons(["the dwell-time bound needs every mode stable".to_string()])
        }
    })
}

pub fn dwell_upper_for<T: Scalar>(
    c: T,
    rho: T,
    tau_star: usize,
    a: T,
    t: usize,
    asymptotic: bool,
) -> Result<GramianBound<T>> {
    check_t(t)?;
    let one = T::one();
    if tau_star == 0 {
        return Err(Error::invalid("tau* must be at least 1"));
    }
    if !(rho > T::zero() && rho < one) {
        return Err(Error::invalid(format!("rho = {rho} must lie in (0, 1)")));
    }
    if asymptotic && a >= one {
        return Err(Error::invalid(format!(
            "the asymptotic dwell bound needs a < 1, got a = {a}"
        )));
    }
    let c4 = c.powi(4);
    let rho2 = rho * rho;
    let (kind, upper) = if asymptotic {
        let windows = (t / tau_star) as i32;
        let tail = (one - a.powi(windows)) / (one - a);
        (BoundKind::DwellAsymptotic, one + c4 * rho2 * rho2 / (one - rho2) * (one + tail))
    } else {
        let ratio = T::of_usize(t) / T::of_usize(tau_star);
        (BoundKind::DwellMarginal, one + c4 * rho2 / (one - rho2) * (one + ratio))
    };
    let mut b = GramianBound::new(kind, t)
        .input("c", c.as_f64())
        .input("rho", rho.as_f64())
        .input("tau_star", tau_star as f64)
        .input("a", a.as_f64());
    b.upper = Some(upper);
    if a > one {
        b.flag(format!("a = {a} exceeds 1"));
    }
    let expected = c * rho.powi(tau_star as i32);
    if (expected - a).abs() > T::of(1e-9) * expected.max(one) {
        b.flag(format!("a = {a} differs from c rho^tau* = {expected}"));
    }
    Ok(b)
}

/// Lower bound on `lambda_min`: 1, or `1 + sum_{j=1}^{T-1} sigma_min^{2j}`
/// when `tight`.
pub fn dwell_lower<T: Scalar>(sigma_min: T, t: usize, tight: bool) -> Result<GramianBound<T>> {
    check_t(t)?;
    let lower = if tight {
        T::one() + geometric_sum(sigma_min * sigma_min, 1, t as i64 - 1)
    } else {
        T::one()
    };
    let mut b = GramianBound::new(BoundKind::DwellLower, t)
        .input("sigma_min", sigma_min.as_f64())
        .input("tight", if tight { 1.0 } else { 0.0 });
    b.lower = Some(lower);
    Ok(b)
}

/// Norm envelope of the last `i` steps of any average-dwell window.
pub fn envelope_f<T: Scalar>(i: usize, params: &AverageDwellParams<T>, a: T) -> Result<T> {
    let h = params.h;
    if i > h {
        return Err(Error::invalid(format!("f({i}) is defined only for 0 <= i <= h = {h}")));
    }
    if i == 0 {
        return Ok(T::one());
    }
    if i == h {
        return Ok(a);
    }
    let k_bar = params.max_unstable_steps(h);
    let c_pow = powr(params.c, params.switch_budget());
    Ok(if i <= k_bar {
        c_pow * params.lambda2.powi(i as i32)
    } else {
        c_pow * params.lambda2.powi(k_bar as i32) * params.lambda1.powi((i - k_bar) as i32)
    })
}

/// `g(b) = 1 + C^{2 Nbar_w} [ sum_{j=1}^{min(b-1, Kbar)} lambda2^{2j}
///   + lambda2^{2 Kbar} sum_{k=Kbar+1}^{min(b-1, h-1)} lambda1^{2(k - Kbar)} ]`,
/// with `g(0) = 0`.
pub fn cumulative_g<T: Scalar>(b: usize, params: &AverageDwellParams<T>) -> Result<T> {
    let h = params.h;
    if b > h {
        return Err(Error::invalid(format!("g({b}) is defined only for 0 <= b <= h = {h}")));
    }
    if b == 0 {
        return Ok(T::zero());
    }
    let k_bar = params.max_unstable_steps(h) as i64;
    let last = b as i64 - 1;
    let l2 = params.lambda2 * params.lambda2;
    let l1 = params.lambda1 * params.lambda1;
    let unstable = geometric_sum(l2, 1, last.min(k_bar));
    let stable = l2.powi(k_bar as i32) * geometric_sum(l1, 1, last.min(h as i64 - 1) - k_bar);
    let c2 = powr(params.c, T::of(2.0) * params.switch_budget());
    Ok(T::one() + c2 * (unstable + stable))
}

/// Average-dwell upper bound `g(k0) + g(h) f(k0)^2 floor(T/h)`.
pub fn average_upper<T: Scalar>(params: &AverageDwellParams<T>, a: T, t: usize) -> Result<GramianBound<T>> {
    check_t(t)?;
    params.validate()?;
    let h = params.h;
    let windows = t / h;
    let k0 = t - h * windows;
    let f = envelope_f(k0, params, a)?;
    let upper = cumulative_g(k0, params)? + cumulative_g(h, params)? * f * f * T::of_usize(windows);
    let mut b = GramianBound::new(BoundKind::Average, t)
        .input("h", h as f64)
        .input("tau_a", params.tau_a.as_f64())
        .input("N0", params.n0 as f64)
        .input("lambda", params.lambda.as_f64())
        .input("lambda_star", params.lambda_star.as_f64())
        .input("lambda1", params.lambda1.as_f64())
        .input("lambda2", params.lambda2.as_f64())
        .input("C", params.c.as_f64())
        .input("a", a.as_f64())
        .input("k0", k0 as f64)
        .input("K_plus", params.max_unstable_steps(h) as f64);
    b.upper = Some(upper);
    if a > T::one() {
        b.flag(format!("a = {a} exceeds 1"));
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cert(m: usize, smin: f64, smax: f64, amin: f64, amax: f64) -> HorizonCertificate<f64> {
        HorizonCertificate {
            m,
            a_min: amin,
            a_max: amax,
            sigma_min: smin,
            sigma_max: smax,
            exhaustive: true,
            products: 0,
        }
    }

    fn fig1_params(h: usize) -> AverageDwellParams<f64> {
        AverageDwellParams {
            tau_a: 5.0,
            n0: 0,
            lambda: 1.0,
            lambda_star: 1.0,
            h,
            lambda1: 0.5,
            lambda2: 2.0,
            c: 1.0,
        }
    }

    /// Literal double sum for the sandwich.
    fn sandwich_literal(c: &HorizonCertificate<f64>, t: usize, upper: bool) -> f64 {
        let (s, a) = if upper { (c.sigma_max, c.a_max) } else { (c.sigma_min, c.a_min) };
        let inner: f64 = (0..c.m).map(|i| s.powi(2 * i as i32)).sum();
        let outer: f64 = (0..=(t - 1) / c.m).map(|j| a.powi(2 * j as i32)).sum();
        inner * outer
    }

    #[test]
    fn sandwich_examples() {
        let b = arbitrary_sandwich(&cert(1, 0.0, 0.0, 0.0, 0.0), 5).unwrap();
        assert_eq!((b.lower, b.upper), (Some(1.0), Some(1.0)));
        let b = arbitrary_sandwich(&cert(1, 0.5, 1.0, 0.5, 1.0), 5).unwrap();
        assert_eq!(b.upper, Some(5.0));
        assert!(b.assumptions_ok);
        let c = cert(2, 0.5, 0.9, 0.25, 0.81);
        let b = arbitrary_sandwich(&c, 7).unwrap();
        assert!((b.inputs["lower_full_sum"] - sandwich_literal(&c, 7, false)).abs() < 1e-12);
        assert!((b.upper.unwrap() - sandwich_literal(&c, 7, true)).abs() < 1e-12);
        let per_term: f64 = (0..7).map(|i| 0.25_f64.powi(2 * (i / 2)) * 0.5_f64.powi(2 * (i % 2))).sum();
        assert!((b.lower.unwrap() - per_term).abs() < 1e-12);
        let even = arbitrary_sandwich(&c, 8).unwrap();
        assert!((even.lower.unwrap() - even.inputs["lower_full_sum"]).abs() < 1e-12);
        // Gamma_1 = I while the full double sum would claim 1 + sigma_min^2.
        assert_eq!(arbitrary_sandwich(&c, 1).unwrap().lower, Some(1.0));
        let b = arbitrary_sandwich(&cert(1, 0.5, 2.0, 0.5, 2.0), 3).unwrap();
        assert!(!b.assumptions_ok);
        assert!(arbitrary_sandwich(&c, 0).is_err());
    }

    #[test]
    fn simple_upper_examples() {
        let b = arbitrary_upper_simple(0.5, 2, 4).unwrap();
        assert_eq!(b.inputs["p"], 1.25);
        assert_eq!(b.upper, Some(3.75));
        assert_eq!(arbitrary_upper_simple(0.7, 1, 9).unwrap().upper, Some(10.0));
        assert_eq!(arbitrary_upper_simple(2.0, 1, 3).unwrap().upper, Some(4.0));
        assert!(matches!(arbitrary_upper_simple(1.0, 2, 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn dwell_upper_examples() {
        let b = dwell_upper_for(1.0_f64, 0.5, 1, 0.5, 10, false).unwrap();
        assert!((b.upper.unwrap() - 14.0 / 3.0).abs() < 1e-12);
        let b = dwell_upper_for(1.0_f64, 0.5, 3, 0.125, 3, false).unwrap();
        assert!((b.upper.unwrap() - (1.0 + 0.25 / 0.75 * 2.0)).abs() < 1e-12);
        let b = dwell_upper_for(2.0, 0.5, 2, 0.5, 8, true).unwrap();
        let want = 1.0 + 16.0 * (0.0625 / 0.75) * (1.0 + (1.0 - 0.5_f64.powi(4)) / 0.5);
        assert!((b.upper.unwrap() - want).abs() < 1e-12);
        assert!(b.assumptions_ok);
        assert!(dwell_upper_for(2.0, 0.5, 1, 1.0, 8, true).is_err());
        assert!(!dwell_upper_for(4.0, 0.5, 1, 2.0, 8, false).unwrap().assumptions_ok);
    }

    #[test]
    fn dwell_lower_examples() {
        assert_eq!(dwell_lower(0.9, 17, false).unwrap().lower, Some(1.0));
        assert_eq!(dwell_lower(0.0, 17, true).unwrap().lower, Some(1.0));
        assert_eq!(dwell_lower(0.5, 3, true).unwrap().lower, Some(1.3125));
    }

    #[test]
    fn envelope_f_examples() {
        let p = fig1_params(4);
        assert_eq!(envelope_f(0, &p, 0.7).unwrap(), 1.0);
        assert_eq!(envelope_f(4, &p, 0.7).unwrap(), 0.7);
        assert_eq!(envelope_f(2, &p, 1.0).unwrap(), 4.0);
        assert_eq!(envelope_f(3, &p, 1.0).unwrap(), 4.0 * 0.5);
        assert!(envelope_f(5, &p, 1.0).is_err());
    }

    #[test]
    fn cumulative_g_examples() {
        let p = fig1_params(4);
        assert_eq!(cumulative_g(0, &p).unwrap(), 0.0);
        assert_eq!(cumulative_g(1, &p).unwrap(), 1.0);
        assert_eq!(cumulative_g(3, &p).unwrap(), 21.0);
        assert_eq!(cumulative_g(4, &p).unwrap(), 21.0 + 16.0 * 0.25);
        assert!(cumulative_g(5, &p).is_err());
    }

    #[test]
    fn g_is_sum_of_squared_f() {
        for h in [4, 7, 10] {
            let p = fig1_params(h);
            for b in 1..=h {
                let literal: f64 = (0..b).map(|i| envelope_f(i, &p, 1.0).unwrap().powi(2)).sum();
                assert!((cumulative_g(b, &p).unwrap() - literal).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn average_upper_examples() {
        let p = fig1_params(10);
        let gh = cumulative_g(10, &p).unwrap();
        assert_eq!(average_upper(&p, 1.0, 10).unwrap().upper, Some(gh));
        assert_eq!(average_upper(&p, 1.0, 20).unwrap().upper, Some(2.0 * gh));
        let f2 = envelope_f(2, &p, 1.0).unwrap();
        let want = cumulative_g(2, &p).unwrap() + gh * f2 * f2;
        assert_eq!(average_upper(&p, 1.0, 12).unwrap().upper, Some(want));
        assert!(!average_upper(&p, 1.5, 12).unwrap().assumptions_ok);
    }

    #[test]
    fn average_upper_monotone_across_windows() {
        let p = fig1_params(10);
        let at = |t| average_upper(&p, 1.0, t).unwrap().upper.unwrap();
        for t in 1..=400 {
            assert!(at(t + 10) >= at(t) && at(t) >= 1.0, "T = {t}");
        }
        // Within a window the bound is not monotone: f(k0) peaks at k0 = Kbar.
        assert!(at(15) > at(16));
    }

    proptest! {
        #[test]
        fn bounds_dominate_one(smax in 0.0..3.0f64, m in 1usize..5, t in 1usize..200) {
            prop_assume!((smax - 1.0).abs() > 1e-6);
            let b = arbitrary_upper_simple(smax, m, t).unwrap();
            prop_assert!(b.upper.unwrap() >= 1.0);
        }

        #[test]
        fn dwell_bounds_dominate_one(c in 1.0..5.0f64, rho in 0.01..0.99f64, t in 1usize..300) {
            let (tau, a) = crate::stability::minimum_dwell_time_for(c, rho, false).unwrap();
            let m = dwell_upper_for(c, rho, tau, a, t, false).unwrap();
            prop_assert!(m.upper.unwrap() >= 1.0);
            if a < 1.0 {
                let s = dwell_upper_for(c, rho, tau, a, t, true).unwrap();
                prop_assert!(s.upper.unwrap() >= 1.0);
            }
        }
    }
}
