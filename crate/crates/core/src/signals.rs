//! Switching signals: arbitrary, minimum-dwell and windowed average-dwell
//! classes, with counters, a validator and constructive generators.
//!
//! Mode indices are 0-based in memory. Files and CLI output use 1-based
//! modes.
//!
//! A switch at step `u` (i.e. `w_u != w_{u-1}`) is attributed to the
//! interval that contains `u`, the first step of the new mode. Counts are
//! therefore additive over adjacent intervals.

use std::fmt::Write as _;
use std::ops::Index;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative slack on the real-valued window budgets so that e.g. a budget of
/// exactly 3 computed as 2.9999999999999996 still admits 3 switches.
const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchingSignal {
    values: Vec<usize>,
    num_modes: usize,
}

impl SwitchingSignal {
    pub fn new(values: Vec<usize>, num_modes: usize) -> Result<Self> {
        if num_modes == 0 {
            return Err(Error::invalid("a signal needs at least one mode"));
        }
        if let Some((t, &w)) = values.iter().enumerate().find(|(_, &w)| w >= num_modes) {
            return Err(Error::invalid(format!(
                "w_{t} = {} outside 1..={num_modes}",
                w + 1
            )));
        }
        Ok(Self { values, num_modes })
    }

    pub fn from_one_based(values: &[usize], num_modes: usize) -> Result<Self> {
        if values.contains(&0) {
            return Err(Error::invalid("1-based mode index 0"));
        }
        Self::new(values.iter().map(|w| w - 1).collect(), num_modes)
    }

    pub fn constant(mode: usize, len: usize, num_modes: usize) -> Result<Self> {
        Self::new(vec![mode; len], num_modes)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.values.iter().map(|w| w + 1).collect()
    }

    pub fn prefix(&self, len: usize) -> Self {
        Self {
            values: self.values[..len.min(self.len())].to_vec(),
            num_modes: self.num_modes,
        }
    }

    /// Maximal constant runs as `(start, length, mode)`.
    pub fn segments(&self) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for (t, &w) in self.values.iter().enumerate() {
            match out.last_mut() {
                Some(seg) if seg.2 == w => seg.1 += 1,
                _ => out.push((t, 1, w)),
            }
        }
        out
    }

    /// CSV with header `t,w_t`, modes 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,w_t\n");
        for (t, w) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{t},{}", w + 1);
        }
        out
    }

    pub fn from_csv(text: &str, num_modes: Option<usize>) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("t,w_t") => {}
            other => return Err(Error::Parse(format!("bad signal header {other:?}"))),
        }
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let (t, w) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("row {row}: expected `t,w_t`")))?;
            if t.trim().parse::<usize>().ok() != Some(row) {
                return Err(Error::Parse(format!("row {row}: time index out of order")));
            }
            let w: usize = w
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad mode `{w}`")))?;
            values.push(w);
        }
        let s = num_modes.unwrap_or_else(|| values.iter().copied().max().unwrap_or(1));
        Self::from_one_based(&values, s)
    }
}

impl Index<usize> for SwitchingSignal {
    type Output = usize;

    fn index(&self, t: usize) -> &usize {
        &self.values[t]
    }
}

fn check_interval(signal: &SwitchingSignal, t0: usize, t1: usize) -> Result<()> {
    if t1 < t0 || t1 > signal.len() {
        return Err(Error::invalid(format!(
            "interval [{t0}, {t1}) invalid for a signal of length {}",
            signal.len()
        )));
    }
    Ok(())
}

/// `N_w(t0, t1)`: switches whose new mode starts inside `[t0, t1)`.
pub fn count_switches(signal: &SwitchingSignal, t0: usize, t1: usize) -> Result<usize> {
    check_interval(signal, t0, t1)?;
    Ok((t0.max(1)..t1)
        .filter(|&u| signal[u] != signal[u - 1])
        .count())
}

/// `(K^-, K^+)`: steps in `[t0, t1)` spent in stable and unstable modes.
pub fn count_mode_steps(
    signal: &SwitchingSignal,
    stable_set: &[usize],
    t0: usize,
    t1: usize,
) -> Result<(usize, usize)> {
    check_interval(signal, t0, t1)?;
    let stable = (t0..t1).filter(|&t| stable_set.contains(&signal[t])).count();
    Ok((stable, t1 - t0 - stable))
}

/// Parameters of the windowed average-dwell class `S(tau_a, N0, lambda,
/// lambda*, h)` together with the envelope constants it refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct AverageDwellParams<T: Scalar> {
    pub tau_a: T,
    pub n0: usize,
    pub lambda: T,
    pub lambda_star: T,
    pub h: usize,
    pub lambda1: T,
    pub lambda2: T,
    /// Envelope constant `C = max_v C_v`.
    pub c: T,
}

impl<T: Scalar> AverageDwellParams<T> {
    pub fn validate(&self) -> Result<()> {
        let (one, zero) = (T::one(), T::zero());
        let bad = |m: &str| Err(Error::invalid(format!("average-dwell parameters: {m}")));
        if !(self.tau_a > zero) {
            return bad("tau_a must be positive");
        }
        if self.h == 0 {
            return bad("h must be a positive integer");
        }
        if !(self.lambda1 > zero && self.lambda1 < one) {
            return bad("lambda1 must lie in (0, 1)");
        }
        if !(self.lambda2 >= one) {
            return bad("lambda2 must be at least 1");
        }
        if !(self.c >= one) {
            return bad("C must be at least 1");
        }
        if !(self.lambda > self.lambda1 && self.lambda < self.lambda2) {
            return bad("lambda must lie in (lambda1, lambda2)");
        }
        if !(self.lambda_star > self.lambda1 && self.lambda_star <= self.lambda) {
            return bad("lambda* must lie in (lambda1, lambda]");
        }
        Ok(())
    }

    /// `r = (ln lambda2 - ln lambda*) / (ln lambda* - ln lambda1)`.
    pub fn r(&self) -> T {
        (self.lambda2.ln() - self.lambda_star.ln()) / (self.lambda_star.ln() - self.lambda1.ln())
    }

    /// Per-window switch budget `N0 + h / tau_a`.
    pub fn switch_budget(&self) -> T {
        T::of_usize(self.n0) + T::of_usize(self.h) / self.tau_a
    }

    /// Largest `K^+` a window of `len` steps admits: `len - K^+ >= r K^+`.
    /// For `len = h` this is `floor(h / (1 + r))`.
    pub fn max_unstable_steps(&self, len: usize) -> usize {
        let r = self.r();
        (0..=len)
            .rev()
            .find(|&k| unstable_condition_holds(len, k, r))
            .unwrap_or(0)
    }

    /// Integer switch cap for a window of `len <= h` steps; the trailing
    /// partial window gets the proportionally scaled budget.
    pub fn max_switches(&self, len: usize) -> usize {
        let scaled = self.switch_budget().as_f64() * len as f64 / self.h as f64;
        (scaled * (1.0 + BUDGET_SLACK) + BUDGET_SLACK).floor().max(0.0) as usize
    }
}

fn unstable_condition_holds<T: Scalar>(len: usize, k_plus: usize, r: T) -> bool {
    let lhs = (len - k_plus) as f64;
    let rhs = r.as_f64() * k_plus as f64;
    lhs >= rhs * (1.0 - BUDGET_SLACK)
}

/// The three signal classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum SignalClass<T: Scalar> {
    Arbitrary,
    MinDwell { tau: usize },
    AverageDwell(AverageDwellParams<T>),
}

/// Sampler knobs; each is ignored by the classes it does not apply to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationKnobs {
    /// Relative mode frequencies for arbitrary switching (uniform if unset).
    pub mode_weights: Option<Vec<f64>>,
    /// Min-dwell segments last `tau + U{0..=extra}` steps; default extra = tau.
    pub max_extra_dwell: Option<usize>,
    /// Fixed number of unstable steps per average-dwell window (clamped to
    /// the window budget); uniform over the admissible range if unset.
    pub unstable_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SignalClassSpec<T: Scalar> {
    pub class: SignalClass<T>,
    pub num_modes: usize,
    #[serde(default)]
    pub knobs: GenerationKnobs,
}

impl<T: Scalar> SignalClassSpec<T> {
    pub fn new(class: SignalClass<T>, num_modes: usize) -> Self {
        Self {
            class,
            num_modes,
            knobs: GenerationKnobs::default(),
        }
    }

    pub fn with_knobs(mut self, knobs: GenerationKnobs) -> Self {
        self.knobs = knobs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_modes == 0 {
            return Err(Error::invalid("signal class over zero modes"));
        }
        match &self.class {
            SignalClass::Arbitrary => {
                if let Some(w) = &self.knobs.mode_weights {
                    if w.len() != self.num_modes
                        || w.iter().any(|x| !(x.is_finite() && *x >= 0.0))
                        || w.iter().sum::<f64>() <= 0.0
                    {
                        return Err(Error::invalid(
                            "mode weights must be non-negative, finite, one per mode, not all zero",
                        ));
                    }
                }
                Ok(())
            }
            SignalClass::MinDwell { tau } if *tau == 0 => {
                Err(Error::invalid("dwell time must be at least 1"))
            }
            SignalClass::MinDwell { .. } => Ok(()),
            SignalClass::AverageDwell(p) => p.validate(),
        }
    }
}

/// Counts over one window `[start, start + len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowRecord {
    /// 1-based window index `j`.
    pub index: usize,
    pub start: usize,
    pub len: usize,
    pub k_minus: usize,
    pub k_plus: usize,
    pub switches: usize,
    /// `false` for the trailing partial window.
    pub full: bool,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentRecord {
    pub start: usize,
    pub len: usize,
    /// 1-based mode.
    pub mode: usize,
    pub trailing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub at: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    pub windows: Vec<WindowRecord>,
    pub segments: Vec<SegmentRecord>,
}

impl ValidationReport {
    fn new() -> Self {
        Self {
            valid: true,
            violations: Vec::new(),
            warnings: Vec::new(),
            windows: Vec::new(),
            segments: Vec::new(),
        }
    }

    fn violate(&mut self, at: usize, message: String) {
        self.valid = false;
        self.violations.push(Violation { at, message });
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

/// Checks class membership. Never fails; problems land in the report.
///
/// Min-dwell: every run except the trailing one must last at least `tau`.
/// Average-dwell: every full window `[(j-1)h, jh)` must satisfy
/// `K^- >= r K^+` and `N_w <= N0 + h/tau_a`; a trailing partial window is
/// checked with the switch budget scaled by `len/h` and any failure there is
/// only a warning, as is a signal shorter than one window.
pub fn validate<T: Scalar>(
    signal: &SwitchingSignal,
    spec: &SignalClassSpec<T>,
    stable_set: &[usize],
) -> ValidationReport {
    let mut report = ValidationReport::new();
    if signal.num_modes() != spec.num_modes {
        report.violate(
            0,
            format!(
                "signal has {} modes, class expects {}",
                signal.num_modes(),
                spec.num_modes
            ),
        );
        return report;
    }
    if let Err(e) = spec.validate() {
        report.violate(0, e.to_string());
        return report;
    }
    match &spec.class {
        SignalClass::Arbitrary => {}
        SignalClass::MinDwell { tau } => {
            let segs = signal.segments();
            let last = segs.len().saturating_sub(1);
            for (i, &(start, len, mode)) in segs.iter().enumerate() {
                let trailing = i == last;
                report.segments.push(SegmentRecord {
                    start,
                    len,
                    mode: mode + 1,
                    trailing,
                });
                if len < *tau {
                    if trailing {
                        report
                            .warnings
                            .push(format!("trailing segment at t = {start} lasts {len} < {tau}"));
                    } else {
                        report.violate(start, format!("segment at t = {start} lasts {len} < {tau}"));
                    }
                }
            }
        }
        SignalClass::AverageDwell(p) => {
            let r = p.r();
            let h = p.h;
            let n = signal.len();
            if n < h {
                report
                    .warnings
                    .push(format!("signal of length {n} holds no full window of length {h}"));
            }
            let mut j = 0;
            let mut start = 0;
            while start < n {
                j += 1;
                let len = h.min(n - start);
                let full = len == h;
                let (k_minus, k_plus) = count_mode_steps(signal, stable_set, start, start + len)
                    .expect("window within signal");
                let switches = count_switches(signal, start, start + len).expect("window within signal");
                let unstable_ok = unstable_condition_holds(len, k_plus, r);
                let switches_ok = switches <= p.max_switches(len);
                let ok = unstable_ok && switches_ok;
                report.windows.push(WindowRecord {
                    index: j,
                    start,
                    len,
                    k_minus,
                    k_plus,
                    switches,
                    full,
                    ok,
                });
                let mut problems = Vec::new();
                if !unstable_ok {
                    problems.push(format!("K^- = {k_minus} < r K^+ = {} * {k_plus}", r));
                }
                if !switches_ok {
                    problems.push(format!(
                        "{switches} switches exceed budget {}",
                        p.max_switches(len)
                    ));
                }
                for msg in problems {
                    let msg = format!("window {j} [{start}, {}): {msg}", start + len);
                    if full {
                        report.violate(start, msg);
                    } else {
                        report.warnings.push(format!("partial {msg}"));
                    }
                }
                start += len;
            }
        }
    }
    report
}

/// Draws a member of the class. The result always passes [`validate`].
pub fn generate<T: Scalar>(
    spec: &SignalClassSpec<T>,
    len: usize,
    seed: u64,
    stable_set: &[usize],
) -> Result<SwitchingSignal> {
    spec.validate()?;
    if len == 0 {
        return Err(Error::invalid("signal length must be at least 1"));
    }
    if let Some(&bad) = stable_set.iter().find(|&&i| i >= spec.num_modes) {
        return Err(Error::invalid(format!("stable mode {} outside the class", bad + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.num_modes;
    let values = match &spec.class {
        SignalClass::Arbitrary => arbitrary(&mut rng, spec, len),
        SignalClass::MinDwell { tau } => min_dwell(&mut rng, s, *tau, spec.knobs.max_extra_dwell, len),
        SignalClass::AverageDwell(p) => {
            average_dwell(&mut rng, p, s, stable_set, spec.knobs.unstable_steps, len)?
        }
    };
    let signal = SwitchingSignal::new(values, s)?;
    let report = validate(&signal, spec, stable_set);
    match report.first_violation() {
        None => Ok(signal),
        Some(v) => Err(Error::Infeasible(format!("generated signal violates the class: {}", v.message))),
    }
}

fn arbitrary<T: Scalar>(rng: &mut ChaCha8Rng, spec: &SignalClassSpec<T>, len: usize) -> Vec<usize> {
    let s = spec.num_modes;
    match &spec.knobs.mode_weights {
        None => (0..len).map(|_| rng.random_range(0..s)).collect(),
        Some(w) => {
            let total: f64 = w.iter().sum();
            (0..len)
                .map(|_| {
                    let mut u = rng.random::<f64>() * total;
                    for (i, &wi) in w.iter().enumerate() {
                        if u < wi {
                            return i;
                        }
                        u -= wi;
                    }
                    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
                })
                .collect()
        }
    }
}

fn min_dwell(rng: &mut ChaCha8Rng, s: usize, tau: usize, extra: Option<usize>, len: usize) -> Vec<usize> {
    let extra = extra.unwrap_or(tau);
    let mut out = Vec::with_capacity(len);
    let mut mode = rng.random_range(0..s);
    while out.len() < len {
        let dwell = tau + rng.random_range(0..=extra);
        let take = dwell.min(len - out.len());
        out.extend(std::iter::repeat_n(mode, take));
        if s > 1 {
            let next = rng.random_range(0..s - 1);
            mode = if next >= mode { next + 1 } else { next };
        }
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, pool: &[usize]) -> usize {
    pool[rng.random_range(0..pool.len())]
}

fn pick_other(rng: &mut ChaCha8Rng, pool: &[usize], avoid: usize) -> usize {
    let others: Vec<usize> = pool.iter().copied().filter(|&m| m != avoid).collect();
    if others.is_empty() {
        avoid
    } else {
        pick(rng, &others)
    }
}

/// Splits `total` into `parts` positive integers, uniformly over compositions.
fn composition(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    debug_assert!(parts >= 1 && parts <= total);
    let mut cuts: Vec<usize> = sample(rng, total - 1, parts - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

/// Per-window scheduler. Each window is built from alternating unstable
/// and stable runs (unstable first, ending stable) so the switch count is
/// known up front; windows without unstable time may hop between stable
/// modes instead.
fn average_dwell<T: Scalar>(
    rng: &mut ChaCha8Rng,
    p: &AverageDwellParams<T>,
    s: usize,
    stable_set: &[usize],
    fixed_unstable: Option<usize>,
    len: usize,
) -> Result<Vec<usize>> {
    let stable: Vec<usize> = (0..s).filter(|m| stable_set.contains(m)).collect();
    let unstable: Vec<usize> = (0..s).filter(|m| !stable_set.contains(m)).collect();
    if stable.is_empty() {
        return Err(Error::Infeasible(
            "no stable mode: K^- >= r K^+ cannot hold in any window".into(),
        ));
    }
    let mut out: Vec<usize> = Vec::with_capacity(len);
    while out.len() < len {
        let wlen = p.h.min(len - out.len());
        let budget = p.max_switches(wlen);
        let cap = if unstable.is_empty() { 0 } else { p.max_unstable_steps(wlen) };
        let prev = out.last().copied();
        let boundary = usize::from(prev.is_some());

        let mut u = match fixed_unstable {
            Some(k) => k.min(cap),
            None => rng.random_range(0..=cap),
        };
        let mut pairs = 0;
        if u > 0 {
            // q unstable/stable pairs cost 2q - 1 switches plus the boundary.
            let by_budget = (budget + 1).saturating_sub(boundary) / 2;
            pairs = u.min(wlen - u).min(by_budget);
            if pairs == 0 {
                u = 0;
            } else {
                pairs = rng.random_range(1..=pairs);
            }
        }

        if u > 0 {
            let u_runs = composition(rng, u, pairs);
            let s_runs = composition(rng, wlen - u, pairs);
            for (ul, sl) in u_runs.into_iter().zip(s_runs) {
                let um = pick(rng, &unstable);
                out.extend(std::iter::repeat_n(um, ul));
                let sm = pick(rng, &stable);
                out.extend(std::iter::repeat_n(sm, sl));
            }
        } else {
            let mut spare = budget;
            let first = match prev {
                Some(m) if spare == 0 || stable.len() == 1 || rng.random::<bool>() => m,
                Some(m) => {
                    let next = pick_other(rng, &stable, m);
                    spare -= usize::from(next != m);
                    next
                }
                None => pick(rng, &stable),
            };
            let hops = if stable.len() >= 2 {
                rng.random_range(0..=spare.min(wlen - 1))
            } else {
                0
            };
            let runs = composition(rng, wlen, hops + 1);
            let mut mode = first;
            for (i, rl) in runs.into_iter().enumerate() {
                if i > 0 {
                    mode = pick_other(rng, &stable, mode);
                }
                out.extend(std::iter::repeat_n(mode, rl));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(v: &[usize], s: usize) -> SwitchingSignal {
        SwitchingSignal::from_one_based(v, s).unwrap()
    }

    /// Two-mode, r = 1 class with `N0 + h/tau_a = budget`.
    pub(crate) fn fig1_params(h: usize, n0: usize, tau_a: f64) -> AverageDwellParams<f64> {
        AverageDwellParams {
            tau_a,
            n0,
            lambda: 1.0,
            lambda_star: 1.0,
            h,
            lambda1: 0.5,
            lambda2: 2.0,
            c: 1.0,
        }
    }

    #[test]
    fn count_switches_examples() {
        assert_eq!(count_switches(&sig(&[1, 1, 1, 1], 2), 0, 4).unwrap(), 0);
        assert_eq!(count_switches(&sig(&[1, 2, 1, 2], 2), 0, 4).unwrap(), 3);
        assert_eq!(count_switches(&sig(&[1, 1, 2, 2], 2), 1, 3).unwrap(), 1);
        assert_eq!(count_switches(&sig(&[1, 2], 2), 1, 1).unwrap(), 0);
        assert!(count_switches(&sig(&[1, 2], 2), 2, 1).is_err());
        assert!(count_switches(&sig(&[1, 2], 2), 0, 3).is_err());
    }

    #[test]
    fn count_mode_steps_examples() {
        assert_eq!(count_mode_steps(&sig(&[1, 1, 1], 2), &[0, 1], 0, 3).unwrap(), (3, 0));
        assert_eq!(count_mode_steps(&sig(&[1, 2, 1, 2], 2), &[0], 0, 4).unwrap(), (2, 2));
        assert_eq!(count_mode_steps(&sig(&[1, 2, 1, 2], 2), &[0], 2, 2).unwrap(), (0, 0));
        assert!(count_mode_steps(&sig(&[1, 2], 2), &[0], 2, 1).is_err());
    }

    #[test]
    fn validate_examples() {
        let any = sig(&[2, 1, 2, 2, 1], 2);
        assert!(validate(&any, &SignalClassSpec::<f64>::new(SignalClass::Arbitrary, 2), &[0]).valid);

        let s = sig(&[1, 1, 1, 2, 2, 2], 2);
        let tau3 = SignalClassSpec::<f64>::new(SignalClass::MinDwell { tau: 3 }, 2);
        assert!(validate(&s, &tau3, &[0, 1]).valid);
        let tau4 = SignalClassSpec::<f64>::new(SignalClass::MinDwell { tau: 4 }, 2);
        let rep = validate(&s, &tau4, &[0, 1]);
        assert!(!rep.valid);
        assert_eq!(rep.first_violation().unwrap().at, 0);
        assert_eq!(rep.warnings.len(), 1, "short trailing segment is a warning");

        let p = fig1_params(4, 2, 4.0);
        assert_eq!(p.r(), 1.0);
        assert_eq!(p.switch_budget(), 3.0);
        let spec = SignalClassSpec::new(SignalClass::AverageDwell(p), 2);
        let rep = validate(&sig(&[1, 2, 1, 2], 2), &spec, &[0]);
        assert!(rep.valid, "{rep:?}");
        let w = &rep.windows[0];
        assert_eq!((w.k_minus, w.k_plus, w.switches), (2, 2, 3));

        let rep = validate(&sig(&[1, 2, 2, 2], 2), &spec, &[0]);
        assert!(!rep.valid);
        let tight = SignalClassSpec::new(SignalClass::AverageDwell(fig1_params(4, 1, 4.0)), 2);
        assert!(!validate(&sig(&[1, 2, 1, 2], 2), &tight, &[0]).valid);
    }

    #[test]
    fn short_and_partial_windows_only_warn() {
        let spec = SignalClassSpec::new(SignalClass::AverageDwell(fig1_params(4, 0, 4.0)), 2);
        let rep = validate(&sig(&[2, 2], 2), &spec, &[0]);
        assert!(rep.valid);
        assert!(rep.warnings.len() >= 2);
        let rep = validate(&sig(&[2, 1, 1, 1, 2, 2], 2), &spec, &[0]);
        assert!(rep.valid, "{rep:?}");
        assert!(!rep.windows[1].full && !rep.windows[1].ok);
    }

    #[test]
    fn mismatched_modes_are_reported() {
        let spec = SignalClassSpec::<f64>::new(SignalClass::Arbitrary, 3);
        assert!(!validate(&sig(&[1, 2], 2), &spec, &[0]).valid);
    }

    #[test]
    fn generate_examples() {
        let one = SignalClassSpec::<f64>::new(SignalClass::Arbitrary, 1);
        let s = generate(&one, 10, 1, &[0]).unwrap();
        assert!(s.values().iter().all(|&w| w == 0));

        let md = SignalClassSpec::<f64>::new(SignalClass::MinDwell { tau: 5 }, 3);
        let s = generate(&md, 20, 2, &[0, 1, 2]).unwrap();
        let segs = s.segments();
        for &(_, l, _) in &segs[..segs.len() - 1] {
            assert!(l >= 5);
        }

        let p = fig1_params(10, 0, 5.0);
        let spec = SignalClassSpec::new(SignalClass::AverageDwell(p), 2);
        let s = generate(&spec, 200, 3, &[0]).unwrap();
        let rep = validate(&s, &spec, &[0]);
        assert!(rep.valid);
        for w in rep.windows.iter().filter(|w| w.full) {
            assert!(w.k_plus <= 5 && w.switches <= 2);
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = SignalClassSpec::new(SignalClass::AverageDwell(fig1_params(6, 1, 3.0)), 2);
        assert_eq!(generate(&spec, 100, 9, &[0]).unwrap(), generate(&spec, 100, 9, &[0]).unwrap());
        assert_ne!(generate(&spec, 100, 9, &[0]).unwrap(), generate(&spec, 100, 10, &[0]).unwrap());
    }

    #[test]
    fn infeasible_and_invalid_specs() {
        let spec = SignalClassSpec::new(SignalClass::AverageDwell(fig1_params(4, 0, 4.0)), 2);
        assert!(matches!(generate(&spec, 10, 0, &[]), Err(Error::Infeasible(_))));
        let bad = SignalClassSpec::<f64>::new(SignalClass::MinDwell { tau: 0 }, 2);
        assert!(generate(&bad, 10, 0, &[0]).is_err());
        let mut p = fig1_params(4, 0, 4.0);
        p.lambda_star = 0.4;
        let spec = SignalClassSpec::new(SignalClass::AverageDwell(p), 2);
        assert!(matches!(generate(&spec, 10, 0, &[0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn weighted_arbitrary_respects_zero_weight() {
        let spec = SignalClassSpec::<f64>::new(SignalClass::Arbitrary, 3).with_knobs(GenerationKnobs {
            mode_weights: Some(vec![1.0, 0.0, 3.0]),
            ..Default::default()
        });
        let s = generate(&spec, 500, 4, &[0]).unwrap();
        assert!(!s.values().contains(&1));
    }

    #[test]
    fn signal_csv_round_trip() {
        let s = sig(&[1, 3, 2], 3);
        assert_eq!(s.to_csv(), "t,w_t\n0,1\n1,3\n2,2\n");
        assert_eq!(SwitchingSignal::from_csv(&s.to_csv(), Some(3)).unwrap(), s);
        assert!(SwitchingSignal::from_csv("t,w_t\n1,1\n", None).is_err());
    }

    fn class_strategy() -> impl Strategy<Value = (SignalClassSpec<f64>, Vec<usize>)> {
        let arbitrary = (1..=4_usize).prop_map(|s| {
            (SignalClassSpec::new(SignalClass::Arbitrary, s), (0..s).collect::<Vec<_>>())
        });
        let dwell = (1..=4_usize, 1..=8_usize, 0..=4_usize).prop_map(|(s, tau, extra)| {
            let spec = SignalClassSpec::new(SignalClass::MinDwell { tau }, s).with_knobs(GenerationKnobs {
                max_extra_dwell: Some(extra),
                ..Default::default()
            });
            (spec, (0..s).collect())
        });
        let average = (
            2..=4_usize,
            1..=3_usize,
            1..=16_usize,
            0..=3_usize,
            0.5..20.0_f64,
            0.1..0.9_f64,
            1.0..4.0_f64,
            0.0..1.0_f64,
            proptest::option::of(0..8_usize),
        )
            .prop_map(|(s, n_stable, h, n0, tau_a, l1, l2, mix, fixed)| {
                let n_stable = n_stable.min(s);
                let lambda = l1 + (l2 - l1) * (0.05 + 0.9 * mix);
                let lambda_star = l1 + (lambda - l1) * (0.05 + 0.95 * mix);
                let p = AverageDwellParams {
                    tau_a,
                    n0,
                    lambda,
                    lambda_star,
                    h,
                    lambda1: l1,
                    lambda2: l2.max(1.0),
                    c: 1.0,
                };
                let spec = SignalClassSpec::new(SignalClass::AverageDwell(p), s).with_knobs(GenerationKnobs {
                    unstable_steps: fixed,
                    ..Default::default()
                });
                (spec, (0..n_stable).collect())
            });
        prop_oneof![arbitrary, dwell, average]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn generate_then_validate((spec, stable) in class_strategy(), len in 1..300_usize, seed in any::<u64>()) {
            prop_assume!(spec.validate().is_ok());
            let s = generate(&spec, len, seed, &stable).unwrap();
            prop_assert_eq!(s.len(), len);
            let rep = validate(&s, &spec, &stable);
            prop_assert!(rep.valid, "{:?}", rep.first_violation());
        }
    }

    proptest! {
        #[test]
        fn switch_counts_are_additive(v in prop::collection::vec(0..3_usize, 1..60), a in 0..60_usize, b in 0..60_usize) {
            let s = SwitchingSignal::new(v, 3).unwrap();
            let n = s.len();
            let (a, b) = (a.min(n), b.min(n));
            let (lo, mid) = (a.min(b), a.max(b));
            let whole = count_switches(&s, lo, n).unwrap();
            let split = count_switches(&s, lo, mid).unwrap() + count_switches(&s, mid, n).unwrap();
            prop_assert_eq!(whole, split);
        }

        #[test]
        fn r_equal_one_caps_unstable_steps(h in 1..30_usize, n0 in 0..4_usize, seed in any::<u64>()) {
            let p = fig1_params(h, n0, 3.0);
            let spec = SignalClassSpec::new(SignalClass::AverageDwell(p), 2);
            let s = generate(&spec, 5 * h, seed, &[0]).unwrap();
            for w in validate(&s, &spec, &[0]).windows.iter().filter(|w| w.full) {
                prop_assert!(w.k_plus <= h / 2);
            }
        }

        #[test]
        fn shortening_a_segment_breaks_min_dwell(tau in 2..8_usize, seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
            let spec = SignalClassSpec::<f64>::new(SignalClass::MinDwell { tau }, 2);
            let s = generate(&spec, 20 * tau, seed, &[0, 1]).unwrap();
            let segs = s.segments();
            prop_assume!(segs.len() >= 3);
            // Shorten an inner segment below tau by relabelling its tail with
            // the following mode.
            let (start, len, _) = segs[pick.index(segs.len() - 2)];
            let next_mode = s[start + len];
            let mut v = s.values().to_vec();
            for x in v.iter_mut().skip(start + tau - 1).take(len - tau + 1) {
                *x = next_mode;
            }
            let mutated = SwitchingSignal::new(v, 2).unwrap();
            prop_assert!(!validate(&mutated, &spec, &[0, 1]).valid);
        }
    }
}
