use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, to_string_pretty as pretty, Value};

use switchid::error_bounds::{ls_bound, BoundVariant, ErrorBoundParams};
use switchid::experiments::{
    default_grid, run_monte_carlo, sweep_gramian, sweep_to_csv, Experiment, ExperimentConfig,
};
use switchid::signals::AverageDwellParams;
use switchid::stability::{
    certify_average_dwell, find_stability_horizon, fit_decay_envelope_with, minimum_dwell_time,
    product_norm_extremes_capped, EnvelopeOptions, DEFAULT_ENUMERATION_CAP,
};
use switchid::system::states_from_csv;
use switchid::{error_norms, fit_states, Error, SwitchedSystem};

const SEED_ENV: &str = "SWITCHID_SEED";

#[derive(Parser)]
#[command(
    name = "switchid",
    version,
    about = "Simulate switched linear systems, identify them by least squares and check the finite-sample bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one replication of an experiment and write the trajectory CSV.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Replication index selecting the noise stream.
        #[arg(long, default_value_t = 0)]
        replication: u64,
        /// Also write the switching signal as `t,w_t` CSV.
        #[arg(long)]
        signal_out: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Fit per-mode least-squares estimates to a trajectory CSV.
    Estimate {
        /// Trajectory CSV with header `t,w_t,x_1,...,x_n`.
        #[arg(long)]
        trajectory: PathBuf,
        /// True system (JSON); adds the spectral-norm error of every estimate.
        #[arg(long)]
        system: Option<PathBuf>,
        /// Number of modes when the file does not visit the last one.
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Evaluate error and Gramian bounds, either for an experiment or
    /// directly from a trace bound.
    Bounds(BoundsArgs),
    /// Exact Gramian spectrum against the class bounds on the shared signal.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Comma-separated horizons; defaults to the class grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo run writing montecarlo.csv, trajectories.csv and summary.json.
    Montecarlo {
        #[command(flatten)]
        source: Source,
        /// Output directory; defaults to the config's output_dir or `.`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Stability certificate for a switching class.
    Certify(CertifyArgs),
}

#[derive(Args)]
struct Source {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Overrides the config seed and SWITCHID_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig1,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    source: Source,
    /// Horizon at which the experiment bounds are evaluated (default: N).
    #[arg(long = "at")]
    at: Option<usize>,
    /// Replication whose signal is used when signals are regenerated.
    #[arg(long, default_value_t = 0)]
    replication: u64,
    /// Direct mode: upper bound on tr(Gamma_{N_i}).
    #[arg(long, requires_all = ["n", "count"])]
    trace: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    last_active: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long = "k", default_value_t = 1.0)]
    k: f64,
    #[arg(long, default_value = "theorem1")]
    variant: BoundVariant,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CertClass {
    Arbitrary,
    MinDwell,
    Average,
}

#[derive(Args)]
struct CertifyArgs {
    /// System JSON `{"modes": [...]}`; otherwise taken from the experiment.
    #[arg(long)]
    system: Option<PathBuf>,
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum)]
    class: CertClass,
    /// Stability horizon; searched up to --m-max if unset.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 8)]
    m_max: usize,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: u64,
    /// Stable decay rate; defaults to (1 + largest stable radius) / 2.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Require strict contraction (a < 1).
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 10)]
    h: usize,
    #[arg(long, default_value_t = 5.0)]
    tau_a: f64,
    #[arg(long, default_value_t = 0)]
    n0: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Defaults to --lambda.
    #[arg(long)]
    lambda_star: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Source {
    fn is_set(&self) -> bool {
        self.config.is_some() || self.preset.is_some()
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(Preset::Fig1)) => ExperimentConfig::fig1(),
            (None, None) => return Err(Error::InvalidInput("give --config <file> or --preset fig1".into()).into()),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{SEED_ENV} = `{v}` is not an unsigned integer")))?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn experiment(&self) -> Result<Experiment> {
        Ok(Experiment::prepare(self.load()?)?)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            let written = stdout.write_all(text.as_bytes()).and_then(|()| {
                if text.ends_with('\n') {
                    Ok(())
                } else {
                    stdout.write_all(b"\n")
                }
            });
            match written {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                other => Ok(other?),
            }
        }
    }
}

fn simulate(source: &Source, replication: u64, signal_out: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let exp = source.experiment()?;
    let tr = exp.simulate(replication)?;
    if let Some(p) = signal_out {
        fs::write(p, tr.signal.to_csv()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    emit(out, &tr.to_csv())
}

fn estimate(trajectory: &Path, system: Option<&Path>, modes: Option<usize>, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(trajectory).with_context(|| format!("cannot read {}", trajectory.display()))?;
    let truth = system.map(SwitchedSystem::<f64>::load).transpose()?;
    let modes = modes.or(truth.as_ref().map(SwitchedSystem::num_modes));
    let (states, signal) = states_from_csv::<f64>(&text, modes)?;
    let est = fit_states(&states, &signal)?;
    let mut doc: Value = serde_json::from_str(&est.to_json())?;
    if let Some(sys) = &truth {
        let errs = error_norms(&est, sys)?;
        for item in doc.as_array_mut().into_iter().flatten() {
            let mode = item["mode"].as_u64().unwrap_or(0) as usize;
            if let Some(Some(e)) = errs.get(mode.wrapping_sub(1)) {
                item["error"] = json!(e);
            }
        }
    }
    emit(out, &pretty(&doc)?)
}

fn bounds(a: &BoundsArgs) -> Result<()> {
    if let Some(trace) = a.trace {
        let (n, count) = (a.n.expect("required by clap"), a.count.expect("required by clap"));
        let p = ErrorBoundParams {
            k: a.k,
            variant: a.variant,
            ..ErrorBoundParams::new(n, a.delta, count, a.last_active.unwrap_or(count))
        };
        return emit(a.out.as_deref(), &pretty(&ls_bound(&p, trace)?)?);
    }
    if !a.source.is_set() {
        bail!(Error::InvalidInput(
            "give --trace with --n and --count, or an experiment via --config/--preset".into()
        ));
    }
    let exp = a.source.experiment()?;
    let signal = exp.signal_for(a.replication)?;
    let t = a.at.unwrap_or(exp.config.horizon);
    if t == 0 || t > signal.len() {
        bail!(Error::InvalidInput(format!("--at must lie in 1..={}", signal.len())));
    }
    let doc = json!({
        "T": t,
        "bound_class": exp.bound_class,
        "gramian": exp.class_gramian_bound(t)?,
        "errors": exp.error_reports(&signal, t)?,
        "assumptions_ok": exp.reasons.is_empty(),
        "reasons": exp.reasons,
    });
    emit(a.out.as_deref(), &pretty(&doc)?)
}

fn sweep(source: &Source, grid: Option<&[usize]>, out: Option<&Path>) -> Result<()> {
    let exp = source.experiment()?;
    let grid = grid.map_or_else(|| default_grid(&exp), <[usize]>::to_vec);
    let rows = sweep_gramian(&exp, &grid)?;
    emit(out, &sweep_to_csv(&rows))
}

fn montecarlo(source: &Source, out_dir: Option<&Path>) -> Result<()> {
    let exp = source.experiment()?;
    let dir = match (out_dir, &exp.config.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => exp.config.resolve(d),
        (None, None) => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let stats = run_monte_carlo(&exp)?;
    let s = exp.system.num_modes();
    let summary = json!({
        "seed": exp.config.seed,
        "horizon": exp.config.horizon,
        "replications": exp.config.replications,
        "bound_class": exp.bound_class,
        "variant": exp.config.bounds.variant,
        "delta": exp.config.bounds.delta,
        "K": exp.config.bounds.k,
        "checkpoints": stats.checkpoints,
        "assumptions_ok": stats.rows.iter().all(|r| r.assumptions_ok || r.bound.is_none()),
        "reasons": exp.reasons,
        "median_slope": (1..=s).map(|m| stats.median_slope(m, 100)).collect::<Vec<_>>(),
    });
    let files = [
        ("montecarlo.csv", stats.to_csv()),
        ("trajectories.csv", stats.trajectories_csv()),
        ("summary.json", pretty(&summary)?),
    ];
    for (name, body) in &files {
        let p = dir.join(name);
        fs::write(&p, body).with_context(|| format!("cannot write {}", p.display()))?;
        eprintln!("wrote {}", p.display());
    }
    if !exp.reasons.is_empty() {
        eprintln!("warning: bounds are outside their hypotheses: {}", exp.reasons.join("; "));
    }
    Ok(())
}

fn certify(a: &CertifyArgs) -> Result<()> {
    let system = match (&a.system, a.source.is_set()) {
        (Some(p), _) => SwitchedSystem::<f64>::load(p)?,
        (None, true) => a.source.experiment()?.system,
        (None, false) => bail!(Error::InvalidInput("give --system <file> or --config/--preset".into())),
    };
    let summary = json!({
        "n": system.dim(),
        "modes": system.num_modes(),
        "stable": system.stable_set().iter().map(|i| i + 1).collect::<Vec<_>>(),
        "spectral_radii": (0..system.num_modes()).map(|i| system.spectral_radius(i)).collect::<Vec<_>>(),
    });
    let envelope = || {
        fit_decay_envelope_with(
            &system,
            EnvelopeOptions {
                rho: a.rho,
                lambda2: a.lambda2,
                max_power: None,
            },
        )
    };
    let doc = match a.class {
        CertClass::Arbitrary => {
            let m = match a.m {
                Some(m) => m,
                None => find_stability_horizon(&system, a.m_max, a.strict)?
                    .ok_or_else(|| Error::Infeasible(format!("no stability horizon m <= {}", a.m_max)))?,
            };
            let cert = product_norm_extremes_capped(&system, m, a.cap)?;
            json!({ "class": "arbitrary", "system": summary, "certificate": cert,
                    "marginal": cert.marginal(), "asymptotic": cert.asymptotic() })
        }
        CertClass::MinDwell => {
            let env = envelope()?;
            let (tau_star, a_val) = minimum_dwell_time(&env, a.strict)?;
            json!({ "class": "min_dwell", "system": summary, "envelope": env,
                    "tau_star": tau_star, "a": a_val, "all_stable": env.all_stable() })
        }
        CertClass::Average => {
            let env = envelope()?;
            let params = AverageDwellParams {
                tau_a: a.tau_a,
                n0: a.n0,
                lambda: a.lambda,
                lambda_star: a.lambda_star.unwrap_or(a.lambda),
                h: a.h,
                lambda1: env.lambda1,
                lambda2: env.lambda2,
                c: env.c_all,
            };
            let cert = certify_average_dwell(&env, &params)?;
            json!({ "class": "average", "system": summary, "envelope": env,
                    "params": params, "C": env.c_all, "certificate": cert })
        }
    };
    emit(a.out.as_deref(), &pretty(&doc)?)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate {
            source,
            replication,
            signal_out,
            out,
        } => simulate(source, *replication, signal_out.as_deref(), out.as_deref()),
        Command::Estimate {
            trajectory,
            system,
            modes,
            out,
        } => estimate(trajectory, system.as_deref(), *modes, out.as_deref()),
        Command::Bounds(a) => bounds(a),
        Command::Sweep { source, grid, out } => sweep(source, grid.as_deref(), out.as_deref()),
        Command::Montecarlo { source, out_dir } => montecarlo(source, out_dir.as_deref()),
        Command::Certify(a) => certify(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Infeasible(_) | Error::Resource(_) | Error::NotApplicable(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(64) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
