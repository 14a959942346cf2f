//! Switched least squares: per-mode fits of `x_{t+1} ~ A_i x_t` over the
//! steps `T_i = { t in 1..=N-1 : w_t = i }`.
//!
//! Step `t = 0` is never used as a regressor. With the usual `x_0 = 0` it
//! carries no information anyway.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{min_singular_value, pseudoinverse, rank, Matrix};
use crate::scalar::Scalar;
use crate::signals::SwitchingSignal;
use crate::system::{SwitchedSystem, Trajectory};

/// Active step sets `T_i`, 0-based mode index, times as in the trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModePartition {
    pub steps: Vec<Vec<usize>>,
}

impl ModePartition {
    pub fn count(&self, mode: usize) -> usize {
        self.steps[mode].len()
    }

    /// `N_i`, the last step mode `i` is active in.
    pub fn last_active(&self, mode: usize) -> Option<usize> {
        self.steps[mode].last().copied()
    }
}

pub fn partition(signal: &SwitchingSignal) -> ModePartition {
    let mut steps = vec![Vec::new(); signal.num_modes()];
    for t in 1..signal.len() {
        steps[signal[t]].push(t);
    }
    ModePartition { steps }
}

/// Running sums `sum x_{t+1} x_t^T` and `sum x_t x_t^T` for every mode.
#[derive(Debug, Clone)]
pub struct LsAccumulator<T: Scalar> {
    cross: Vec<Matrix<T>>,
    gram: Vec<Matrix<T>>,
    counts: Vec<usize>,
    last: Vec<Option<usize>>,
}

impl<T: Scalar> LsAccumulator<T> {
    pub fn new(num_modes: usize, n: usize) -> Self {
        Self {
            cross: vec![Matrix::zeros(n, n); num_modes],
            gram: vec![Matrix::zeros(n, n); num_modes],
            counts: vec![0; num_modes],
            last: vec![None; num_modes],
        }
    }

    /// Adds the pair `(x_t, x_{t+1})` observed under `mode` at step `t`.
    pub fn push(&mut self, t: usize, mode: usize, x: &[T], next: &[T]) {
        let n = x.len();
        let (cross, gram) = (&mut self.cross[mode], &mut self.gram[mode]);
        for i in 0..n {
            for j in 0..n {
                cross.set(i, j, cross.get(i, j) + next[i] * x[j]);
                gram.set(i, j, gram.get(i, j) + x[i] * x[j]);
            }
        }
        self.counts[mode] += 1;
        self.last[mode] = Some(t);
    }

    /// Feeds steps `from..to` of a trajectory, skipping `t = 0`.
    pub fn extend(&mut self, states: &[Vec<T>], signal: &SwitchingSignal, from: usize, to: usize) {
        for t in from.max(1)..to {
            self.push(t, signal[t], &states[t], &states[t + 1]);
        }
    }

    pub fn count(&self, mode: usize) -> usize {
        self.counts[mode]
    }

    pub fn last_active(&self, mode: usize) -> Option<usize> {
        self.last[mode]
    }

    /// `X_i = sum x_t x_t^T`.
    pub fn regressor(&self, mode: usize) -> &Matrix<T> {
        &self.gram[mode]
    }

    pub fn estimate(&self, mode: usize) -> Option<ModeEstimate<T>> {
        if self.counts[mode] == 0 {
            return None;
        }
        let x = &self.gram[mode];
        let estimate = &self.cross[mode] * &pseudoinverse(x, None);
        Some(ModeEstimate {
            mode: mode + 1,
            estimate,
            count: self.counts[mode],
            last_active: self.last[mode].unwrap_or(0),
            rank: rank(x),
            sigma_min_x: min_singular_value(x).unwrap_or_else(|_| T::zero()),
        })
    }

    pub fn estimates(&self) -> Result<ModeEstimates<T>> {
        let per_mode: Vec<_> = (0..self.counts.len()).map(|i| self.estimate(i)).collect();
        if per_mode.iter().all(Option::is_none) {
            return Err(Error::NoData("no mode is active at any step t >= 1".into()));
        }
        Ok(ModeEstimates { per_mode })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct ModeEstimate<T: Scalar> {
    /// 1-based.
    pub mode: usize,
    #[serde(rename = "matrix")]
    pub estimate: Matrix<T>,
    pub count: usize,
    #[serde(rename = "N_i")]
    pub last_active: usize,
    pub rank: usize,
    #[serde(rename = "sigma_min_X")]
    pub sigma_min_x: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeEstimates<T: Scalar> {
    pub per_mode: Vec<Option<ModeEstimate<T>>>,
}

impl<T: Scalar> ModeEstimates<T> {
    pub fn get(&self, mode: usize) -> Option<&ModeEstimate<T>> {
        self.per_mode.get(mode).and_then(Option::as_ref)
    }

    /// JSON array of `{mode, matrix, count, N_i, rank, sigma_min_X}` for the
    /// excited modes.
    pub fn to_json(&self) -> String {
        let present: Vec<_> = self.per_mode.iter().flatten().collect();
        serde_json::to_string_pretty(&present).expect("estimates serialize")
    }
}

pub fn fit<T: Scalar>(trajectory: &Trajectory<T>) -> Result<ModeEstimates<T>> {
    fit_states(&trajectory.states, &trajectory.signal)
}

/// Fits from `N + 1` states and the `N`-step signal that produced them.
pub fn fit_states<T: Scalar>(states: &[Vec<T>], signal: &SwitchingSignal) -> Result<ModeEstimates<T>> {
    if states.len() != signal.len() + 1 {
        return Err(Error::invalid(format!(
            "{} states do not match a signal of length {}",
            states.len(),
            signal.len()
        )));
    }
    let n = states.first().map_or(0, Vec::len);
    if n == 0 || states.iter().any(|x| x.len() != n) {
        return Err(Error::invalid("states must be non-empty vectors of equal dimension"));
    }
    let mut acc = LsAccumulator::new(signal.num_modes(), n);
    acc.extend(states, signal, 1, signal.len());
    acc.estimates()
}

/// `||A_hat_i - A_i||_2` per mode; `None` for unexcited modes.
pub fn error_norms<T: Scalar>(est: &ModeEstimates<T>, truth: &SwitchedSystem<T>) -> Result<Vec<Option<T>>> {
    if est.per_mode.len() != truth.num_modes() {
        return Err(Error::invalid(format!(
            "{} estimates for a system with {} modes",
            est.per_mode.len(),
            truth.num_modes()
        )));
    }
    est.per_mode
        .iter()
        .enumerate()
        .map(|(i, e)| match e {
            None => Ok(None),
            Some(e) if e.estimate.rows() != truth.dim() || e.estimate.cols() != truth.dim() => {
                Err(Error::invalid("estimate dimension does not match the system"))
            }
            Some(e) => Ok(Some((&e.estimate - truth.mode(i)).norm2())),
        })
        .collect()
}
