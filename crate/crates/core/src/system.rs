//! Switched linear systems `x_{t+1} = A_{w_t} x_t + sigma_e e_t`, trajectory
//! simulation and the exact Gramian.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;
use crate::signals::SwitchingSignal;

/// Ordered modes `A_1..A_s` sharing one state dimension. A mode is stable
/// when its spectral radius is strictly below one.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSystem<T: Scalar> {
    modes: Vec<Matrix<T>>,
    stable: Vec<bool>,
    radii: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct SystemFile<T: Scalar> {
    modes: Vec<Matrix<T>>,
}

impl<T: Scalar> SwitchedSystem<T> {
    pub fn new(modes: Vec<Matrix<T>>) -> Result<Self> {
        let Some(first) = modes.first() else {
            return Err(Error::invalid("a switched system needs at least one mode"));
        };
        let n = first.rows();
        for (i, a) in modes.iter().enumerate() {
            if !a.is_square() || a.rows() != n {
                return Err(Error::invalid(format!(
                    "mode {} is {}x{}, expected {n}x{n}",
                    i + 1,
                    a.rows(),
                    a.cols()
                )));
            }
        }
        let radii = modes
            .iter()
            .map(linalg::spectral_radius)
            .collect::<Result<Vec<_>>>()?;
        let stable = radii.iter().map(|&r| r < T::one()).collect();
        Ok(Self { modes, stable, radii })
    }

    /// Builds the system and checks a caller-supplied stable set (0-based
    /// mode indices) against the computed spectral radii.
    pub fn with_classification(modes: Vec<Matrix<T>>, stable_set: &[usize]) -> Result<Self> {
        let sys = Self::new(modes)?;
        for i in 0..sys.num_modes() {
            let claimed = stable_set.contains(&i);
            if claimed != sys.stable[i] {
                return Err(Error::Classification(format!(
                    "mode {} has spectral radius {} but was declared {}",
                    i + 1,
                    sys.radii[i],
                    if claimed { "stable" } else { "unstable" }
                )));
            }
        }
        Ok(sys)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SystemFile<T> =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("system file: {e}")))?;
        Self::new(file.modes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SystemFile {
            modes: self.modes.clone(),
        })
        .expect("matrices serialize")
    }

    pub fn dim(&self) -> usize {
        self.modes[0].rows()
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, i: usize) -> &Matrix<T> {
        &self.modes[i]
    }

    pub fn modes(&self) -> &[Matrix<T>] {
        &self.modes
    }

    pub fn is_stable(&self, i: usize) -> bool {
        self.stable[i]
    }

    pub fn spectral_radius(&self, i: usize) -> T {
        self.radii[i]
    }

    /// 0-based indices of the stable modes.
    pub fn stable_set(&self) -> Vec<usize> {
        (0..self.num_modes()).filter(|&i| self.stable[i]).collect()
    }

    pub fn unstable_set(&self) -> Vec<usize> {
        (0..self.num_modes()).filter(|&i| !self.stable[i]).collect()
    }

    /// Largest `sigma_max(A_i)` over all modes.
    pub fn sigma_max(&self) -> T {
        self.modes.iter().map(Matrix::norm2).fold(T::zero(), T::max)
    }

    /// Smallest `sigma_min(A_i)` over all modes.
    pub fn sigma_min(&self) -> T {
        self.modes
            .iter()
            .map(|a| *a.singular_values().last().unwrap())
            .fold(T::infinity(), T::min)
    }

    fn check_signal(&self, signal: &SwitchingSignal) -> Result<()> {
        if signal.num_modes() != self.num_modes() {
            return Err(Error::invalid(format!(
                "signal is over {} modes, system has {}",
                signal.num_modes(),
                self.num_modes()
            )));
        }
        Ok(())
    }

    /// `A_(j) A_(j-1) ... A_(k)`, the identity when `j < k`.
    pub fn transition_product(&self, signal: &SwitchingSignal, j: isize, k: isize) -> Result<Matrix<T>> {
        self.check_signal(signal)?;
        if j < k {
            return Ok(Matrix::identity(self.dim()));
        }
        if k < 0 || j as usize >= signal.len() {
            return Err(Error::invalid(format!(
                "product indices ({j}:{k}) outside signal of length {}",
                signal.len()
            )));
        }
        let mut p = self.modes[signal[k as usize]].clone();
        for t in (k + 1)..=j {
            p = &self.modes[signal[t as usize]] * &p;
        }
        Ok(p)
    }

    /// Gramian `Gamma_T` with its extreme eigenvalues, by the recursion
    /// `Gamma_{t+1} = A_(t) Gamma_t A_(t)^T + I`, `Gamma_1 = I`.
    pub fn gramian(&self, signal: &SwitchingSignal, horizon: usize) -> Result<GramianSpectrum<T>> {
        let seq = self.gramian_sequence(signal, horizon)?;
        GramianSpectrum::from_matrix(seq.into_iter().last().expect("horizon >= 1"))
    }

    /// `Gamma_1, ..., Gamma_T`.
    pub fn gramian_sequence(&self, signal: &SwitchingSignal, horizon: usize) -> Result<Vec<Matrix<T>>> {
        self.check_signal(signal)?;
        if horizon == 0 || horizon > signal.len() {
            return Err(Error::invalid(format!(
                "Gramian horizon {horizon} outside 1..={}",
                signal.len()
            )));
        }
        let n = self.dim();
        let eye = Matrix::identity(n);
        let mut out = Vec::with_capacity(horizon);
        let mut g = eye.clone();
        out.push(g.clone());
        for t in 1..horizon {
            let a = &self.modes[signal[t]];
            g = &(&(a * &g) * &a.transpose()) + &eye;
            out.push(g.clone());
        }
        Ok(out)
    }
}

/// A Gramian together with its extreme eigenvalues.
#[derive(Debug, Clone)]
pub struct GramianSpectrum<T: Scalar> {
    pub matrix: Matrix<T>,
    pub lambda_min: T,
    pub lambda_max: T,
}

impl<T: Scalar> GramianSpectrum<T> {
    pub fn from_matrix(matrix: Matrix<T>) -> Result<Self> {
        let sym = (&matrix + &matrix.transpose()).scale(T::of(0.5));
        let ev = linalg::symmetric_eigenvalues(&sym)?;
        Ok(Self {
            lambda_min: ev[0],
            lambda_max: *ev.last().unwrap(),
            matrix,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    /// Standard normal.
    #[default]
    Gaussian,
    /// +-1 with equal probability.
    Rademacher,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    Uniform,
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "rademacher" => Ok(Self::Rademacher),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::invalid(format!("unknown noise family `{other}`"))),
        }
    }
}

/// Unit-variance, variance-proxy-one noise source. A run is determined by
/// `(seed, replication)`; see [`stream_seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub seed: u64,
}

/// SplitMix64 finalizer, used to spread replication indices over seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the independent stream for one replication.
pub fn stream_seed(seed: u64, replication: u64) -> u64 {
    seed ^ mix64(replication)
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, seed: u64) -> Self {
        Self { family, seed }
    }

    /// Noise settings for replication `r`.
    pub fn for_replication(&self, r: u64) -> Self {
        Self {
            family: self.family,
            seed: stream_seed(self.seed, r),
        }
    }

    /// `steps` draws of an `n`-vector.
    pub fn draw<T: Scalar>(&self, steps: usize, n: usize) -> Vec<Vec<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let sqrt3 = 3.0_f64.sqrt();
        (0..steps)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let v: f64 = match self.family {
                            NoiseFamily::Gaussian => StandardNormal.sample(&mut rng),
                            NoiseFamily::Rademacher => {
                                if rng.random::<bool>() {
                                    1.0
                                } else {
                                    -1.0
                                }
                            }
                            NoiseFamily::Uniform => rng.random_range(-sqrt3..=sqrt3),
                        };
                        T::of(v)
                    })
                    .collect()
            })
            .collect()
    }
}

/// States `x_0..x_N` produced by a signal and a noise sequence.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub states: Vec<Vec<T>>,
    pub signal: SwitchingSignal,
    /// Unscaled draws `e_0..e_{N-1}`.
    pub noise: Vec<Vec<T>>,
    pub noise_scale: T,
}

impl<T: Scalar> Trajectory<T> {
    /// Propagates `x_{t+1} = A_{w_t} x_t + scale * e_t` from `x0`.
    pub fn from_noise(
        system: &SwitchedSystem<T>,
        signal: &SwitchingSignal,
        noise: Vec<Vec<T>>,
        noise_scale: T,
        x0: &[T],
    ) -> Result<Self> {
        system.check_signal(signal)?;
        let n = system.dim();
        if x0.len() != n {
            return Err(Error::invalid(format!("x0 has dimension {}, expected {n}", x0.len())));
        }
        if noise.len() != signal.len() || noise.iter().any(|e| e.len() != n) {
            return Err(Error::invalid("noise must hold one n-vector per signal step"));
        }
        if !(noise_scale >= T::zero()) {
            return Err(Error::invalid("noise scale must be non-negative"));
        }
        let mut states = Vec::with_capacity(signal.len() + 1);
        states.push(x0.to_vec());
        for (t, e) in noise.iter().enumerate() {
            let mut next = system.modes[signal[t]].mul_vec(&states[t]);
            for (x, &ei) in next.iter_mut().zip(e) {
                *x = *x + noise_scale * ei;
            }
            states.push(next);
        }
        Ok(Self {
            states,
            signal: signal.clone(),
            noise,
            noise_scale,
        })
    }

    /// Horizon `N` (number of transitions).
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Largest deviation from `x_{t+1} = A_{w_t} x_t + scale * e_t`.
    pub fn reconstruction_error(&self, system: &SwitchedSystem<T>) -> T {
        let mut worst = T::zero();
        for t in 0..self.len() {
            let pred = system.modes[self.signal[t]].mul_vec(&self.states[t]);
            for i in 0..self.dim() {
                let r = self.states[t + 1][i] - (pred[i] + self.noise_scale * self.noise[t][i]);
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    /// CSV with header `t,w_t,x_1,...,x_n`, one row per state; modes are
    /// written 1-based and the final row leaves `w_t` empty.
    pub fn to_csv(&self) -> String {
        states_to_csv(&self.states, &self.signal)
    }
}

pub fn states_to_csv<T: Scalar>(states: &[Vec<T>], signal: &SwitchingSignal) -> String {
    let n = states.first().map_or(0, Vec::len);
    let mut out = String::from("t,w_t");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    out.push('\n');
    for (t, x) in states.iter().enumerate() {
        let _ = write!(out, "{t},");
        if t < signal.len() {
            let _ = write!(out, "{}", signal[t] + 1);
        }
        for v in x {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses the trajectory CSV back into `(states, signal)`. `num_modes`
/// defaults to the largest mode index present.
pub fn states_from_csv<T: Scalar>(
    text: &str,
    num_modes: Option<usize>,
) -> Result<(Vec<Vec<T>>, SwitchingSignal)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty trajectory file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "t" || cols[1] != "w_t" {
        return Err(Error::Parse(format!("bad trajectory header `{header}`")));
    }
    let n = cols.len() - 2;
    let mut states = Vec::new();
    let mut modes = Vec::new();
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != n + 2 {
            return Err(Error::Parse(format!("row {row}: expected {} fields", n + 2)));
        }
        if !f[1].is_empty() {
            let w: usize = f[1]
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad mode `{}`", f[1])))?;
            if w == 0 {
                return Err(Error::Parse(format!("row {row}: modes are 1-based")));
            }
            if modes.len() != row {
                return Err(Error::Parse(format!("row {row}: mode after an empty mode cell")));
            }
            modes.push(w - 1);
        }
        let x = f[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map(T::of)
                    .map_err(|_| Error::Parse(format!("row {row}: bad number `{s}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        states.push(x);
    }
    if states.len() != modes.len() + 1 {
        return Err(Error::Parse("expected exactly one final row without a mode".into()));
    }
    let s = num_modes.unwrap_or_else(|| modes.iter().max().map_or(1, |m| m + 1));
    Ok((states, SwitchingSignal::new(modes, s)?))
}

/// Draws noise from `spec` and propagates.
pub fn simulate<T: Scalar>(
    system: &SwitchedSystem<T>,
    signal: &SwitchingSignal,
    noise: &NoiseSpec,
    noise_scale: T,
    x0: &[T],
) -> Result<Trajectory<T>> {
    if !(noise_scale > T::zero()) {
        return Err(Error::invalid("noise scale must be positive"));
    }
    let draws = noise.draw(signal.len(), system.dim());
    Trajectory::from_noise(system, signal, draws, noise_scale, x0)
}

/// Noise-free propagation from `x0`.
pub fn simulate_noiseless<T: Scalar>(
    system: &SwitchedSystem<T>,
    signal: &SwitchingSignal,
    x0: &[T],
) -> Result<Trajectory<T>> {
    let zeros = vec![vec![T::zero(); system.dim()]; signal.len()];
    Trajectory::from_noise(system, signal, zeros, T::zero(), x0)
}

pub fn load_system<T: Scalar>(path: &Path) -> Result<SwitchedSystem<T>> {
    SwitchedSystem::load(path)
}

/// Two-mode example system: `A_1 = diag(0.5, 0.5)` (stable) and
/// `A_2 = diag(2, 2)` (unstable).
pub fn fig1_system<T: Scalar>() -> SwitchedSystem<T> {
    SwitchedSystem::new(vec![
        Matrix::from_diag(&[T::of(0.5), T::of(0.5)]),
        Matrix::from_diag(&[T::of(2.0), T::of(2.0)]),
    ])
    .expect("valid example system")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[usize], s: usize) -> SwitchingSignal {
        SwitchingSignal::from_one_based(v, s).unwrap()
    }

    fn half() -> SwitchedSystem<f64> {
        SwitchedSystem::new(vec![Matrix::from_diag(&[0.5, 0.5])]).unwrap()
    }

    #[test]
    fn classification() {
        let sys = fig1_system::<f64>();
        assert_eq!(sys.stable_set(), vec![0]);
        assert_eq!(sys.unstable_set(), vec![1]);
        assert!(SwitchedSystem::with_classification(sys.modes().to_vec(), &[0]).is_ok());
        assert!(matches!(
            SwitchedSystem::with_classification(sys.modes().to_vec(), &[0, 1]),
            Err(Error::Classification(_))
        ));
    }

    #[test]
    fn rejects_mismatched_modes() {
        let r = SwitchedSystem::new(vec![Matrix::<f64>::identity(2), Matrix::identity(3)]);
        assert!(r.is_err());
        assert!(SwitchedSystem::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn transition_product_examples() {
        let sys = half();
        let s = sig(&[1, 1, 1], 1);
        assert_eq!(sys.transition_product(&s, 1, 2).unwrap(), Matrix::identity(2));
        assert_eq!(sys.transition_product(&s, -1, 0).unwrap(), Matrix::identity(2));
        let p = sys.transition_product(&s, 2, 0).unwrap();
        assert!(p.max_abs_diff(&Matrix::from_diag(&[0.125, 0.125])) < 1e-15);

        let fig = fig1_system::<f64>();
        let p = fig.transition_product(&sig(&[1, 2], 2), 1, 0).unwrap();
        assert!(p.max_abs_diff(&Matrix::identity(2)) < 1e-15);
        assert!(fig.transition_product(&sig(&[1, 2], 2), 2, 0).is_err());
    }

    #[test]
    fn simulate_examples() {
        let sys = half();
        let tr = simulate_noiseless(&sys, &sig(&[1, 1], 1), &[1.0, 0.0]).unwrap();
        assert_eq!(tr.states, vec![vec![1.0, 0.0], vec![0.5, 0.0], vec![0.25, 0.0]]);

        let fig = fig1_system::<f64>();
        let tr = simulate_noiseless(&fig, &sig(&[1, 2], 2), &[1.0, 1.0]).unwrap();
        assert_eq!(tr.states, vec![vec![1.0, 1.0], vec![0.5, 0.5], vec![1.0, 1.0]]);

        let tr = simulate_noiseless(&fig, &sig(&[1, 2, 2, 1], 2), &[0.0, 0.0]).unwrap();
        assert!(tr.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn simulate_is_reproducible_and_exact() {
        let fig = fig1_system::<f64>();
        let s = sig(&[1, 2, 1, 1, 2, 1, 1, 1], 2);
        for family in [NoiseFamily::Gaussian, NoiseFamily::Rademacher, NoiseFamily::Uniform] {
            let spec = NoiseSpec::new(family, 7);
            let a = simulate(&fig, &s, &spec, 0.3, &[0.0, 0.0]).unwrap();
            let b = simulate(&fig, &s, &spec, 0.3, &[0.0, 0.0]).unwrap();
            assert_eq!(a.states, b.states);
            assert_eq!(a.reconstruction_error(&fig), 0.0);
        }
        let spec = NoiseSpec::new(NoiseFamily::Gaussian, 7);
        assert!(simulate(&fig, &s, &spec, 1.0, &[0.0]).is_err());
        assert!(simulate(&fig, &s, &spec, 0.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn noise_families_have_unit_variance() {
        for family in [NoiseFamily::Gaussian, NoiseFamily::Rademacher, NoiseFamily::Uniform] {
            let d: Vec<Vec<f64>> = NoiseSpec::new(family, 3).draw(40_000, 1);
            let mean = d.iter().map(|v| v[0]).sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / d.len() as f64;
            assert!(mean.abs() < 0.03, "{family:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.04, "{family:?} var {var}");
        }
        let d: Vec<Vec<f64>> = NoiseSpec::new(NoiseFamily::Rademacher, 1).draw(100, 2);
        assert!(d.iter().flatten().all(|v| v.abs() == 1.0));
        let d: Vec<Vec<f64>> = NoiseSpec::new(NoiseFamily::Uniform, 1).draw(1000, 2);
        assert!(d.iter().flatten().all(|v| v.abs() <= 3.0_f64.sqrt()));
    }

    #[test]
    fn replication_streams_differ() {
        let spec = NoiseSpec::new(NoiseFamily::Gaussian, 11);
        let a: Vec<Vec<f64>> = spec.for_replication(0).draw(4, 2);
        let b: Vec<Vec<f64>> = spec.for_replication(1).draw(4, 2);
        assert_ne!(a, b);
        assert_eq!(a, spec.for_replication(0).draw::<f64>(4, 2));
    }

    #[test]
    fn gramian_examples() {
        let fig = fig1_system::<f64>();
        let g = fig.gramian(&sig(&[1, 2, 1], 2), 1).unwrap();
        assert_eq!(g.matrix, Matrix::identity(2));
        assert_eq!((g.lambda_min, g.lambda_max), (1.0, 1.0));

        let g = half().gramian(&sig(&[1, 1, 1], 1), 3).unwrap();
        assert!(g.matrix.max_abs_diff(&Matrix::from_diag(&[1.3125, 1.3125])) < 1e-15);

        assert!(fig.gramian(&sig(&[1, 2], 2), 3).is_err());
        assert!(fig.gramian(&sig(&[1, 2], 2), 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let fig = fig1_system::<f64>();
        let s = sig(&[1, 2, 2], 2);
        let tr = simulate(&fig, &s, &NoiseSpec::new(NoiseFamily::Gaussian, 1), 1.0, &[0.0, 0.0]).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,w_t,x_1,x_2\n0,1,"));
        assert!(csv.lines().last().unwrap().starts_with("3,,"));
        let (states, back) = states_from_csv::<f64>(&csv, Some(2)).unwrap();
        assert_eq!(states, tr.states);
        assert_eq!(back, s);
        assert!(states_from_csv::<f64>("t,x\n", None).is_err());
    }

    #[test]
    fn system_json_round_trip() {
        let fig = fig1_system::<f64>();
        let back = SwitchedSystem::<f64>::from_json(&fig.to_json()).unwrap();
        assert_eq!(back, fig);
        assert!(SwitchedSystem::<f64>::from_json("{\"modes\": [[[1, 2]]]}").is_err());
    }
}
