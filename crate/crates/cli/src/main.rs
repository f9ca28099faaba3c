//! `clgv`: command-line front end for Coulomb-gas Langevin experiments.
//!
//! Exit codes: 0 success, 2 invalid input or failed validation, 3
//! numerical failure or failed verification, 4 I/O or file-format error.

mod jobs;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use clgv::config::{parse_config, KernelName, PotentialName, RunConfig};
use clgv::integrators::Scheme;
use clgv::{Error, Result};
use jobs::{
    DiagnoseJob, InputKind, InspectJob, Job, SampleHmcJob, SimulateJob, VerifyAssumptionJob,
    VerifyLemmaJob, VerifyLyapunovJob,
};

#[derive(Parser)]
#[command(
    name = "clgv",
    version,
    about = "Langevin dynamics and sampling for Coulomb gases"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the kinetic Langevin dynamics and write a trajectory CSV.
    Simulate(SimulateArgs),
    /// Sample the Gibbs measure with Hamiltonian Monte Carlo.
    SampleHmc(HmcArgs),
    /// Fit drift constants for the Lyapunov function and test them out of sample.
    VerifyLyapunov(LyapunovArgs),
    /// Check the pair-interaction lower bound on random configurations.
    VerifyLemma(LemmaArgs),
    /// Check the confining potential's growth conditions on a ball.
    VerifyAssumption(AssumptionArgs),
    /// Summarize a trajectory or chain CSV.
    Diagnose(DiagnoseArgs),
    /// Print the header and summary of a checkpoint file.
    CheckpointInspect(InspectArgs),
    /// Re-run the job recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Default)]
struct SystemArgs {
    /// TOML run configuration; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of particles.
    #[arg(long)]
    n: Option<usize>,
    /// Spatial dimension.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Manifest path (default: first output path + `.manifest.json`).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl SystemArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(&fs::read_to_string(path)?)?,
            None => RunConfig::new(
                self.n.unwrap_or(4),
                self.d.unwrap_or(2),
                self.gamma.unwrap_or(1.0),
                self.beta.unwrap_or(1.0),
            ),
        };
        if let Some(n) = self.n {
            cfg.system.n = n;
        }
        if let Some(d) = self.d {
            if d != cfg.system.d && self.config.is_some() {
                cfg.kernel.family = if d == 1 {
                    KernelName::Log1d
                } else {
                    KernelName::Coulomb
                };
            }
            cfg.system.d = d;
        }
        if let Some(g) = self.gamma {
            cfg.system.gamma = g;
        }
        if let Some(b) = self.beta {
            cfg.system.beta = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.integrator.seed = cfg.seed;
        cfg.sampler.seed = cfg.seed;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    EulerMaruyama,
    Baoab,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    dt: Option<f64>,
    /// Collision guard fraction.
    #[arg(long)]
    eta: Option<f64>,
    /// Stop when log W exceeds this value.
    #[arg(long)]
    w_cap: Option<f64>,
    /// Final time.
    #[arg(long = "T", default_value_t = 1.0)]
    t_end: f64,
    /// Write every `stride`-th step.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Trajectory CSV.
    #[arg(long)]
    out: PathBuf,
    /// Binary checkpoint of the final state and RNG.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// JSON run summary with the event log.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Ginibre,
}

#[derive(Args)]
struct HmcArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Recorded iterations.
    #[arg(long)]
    steps: Option<usize>,
    /// Leapfrog step size.
    #[arg(long)]
    dt: Option<f64>,
    /// Leapfrog steps per proposal.
    #[arg(long = "L")]
    leapfrog: Option<usize>,
    /// Burn-in iterations.
    #[arg(long)]
    burn: Option<usize>,
    /// Momentum refresh weight in (0, 1].
    #[arg(long)]
    refresh: Option<f64>,
    /// Random-matrix regime: d = 2, V = |q|²/2, β = N·β̃.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long, default_value_t = 2.0)]
    beta_tilde: f64,
    /// Chain CSV.
    #[arg(long)]
    out: PathBuf,
    /// JSON summary.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct LyapunovArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, default_value_t = 10_000)]
    train: usize,
    #[arg(long, default_value_t = 10_000)]
    test: usize,
    /// JSON report (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 2)]
    n_min: usize,
    #[arg(long, default_value_t = 8)]
    n_max: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-configuration CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct AssumptionArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, value_enum)]
    potential: Option<PotentialArg>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    radius: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PotentialArg {
    Quadratic,
    DoubleWell,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long, conflicts_with = "chain", required_unless_present = "chain")]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Inverse temperature for the equipartition target.
    #[arg(long)]
    beta: Option<f64>,
    /// Floor of the W decay fit, in log W units.
    #[arg(long)]
    log_floor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    burn: usize,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// JSON summary.
    #[arg(long)]
    out: PathBuf,
    /// Radial histogram CSV (two-dimensional inputs).
    #[arg(long)]
    hist: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write outputs (and the new manifest) into this directory instead.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tool: String,
    cli_version: String,
    core_version: String,
    job: Job,
}

fn build(command: Command) -> Result<(Job, Option<PathBuf>)> {
    Ok(match command {
        Command::Simulate(a) => {
            let mut cfg = a.system.resolve()?;
            let ic = &mut cfg.integrator;
            if let Some(s) = a.scheme {
                ic.scheme = match s {
                    SchemeArg::EulerMaruyama => Scheme::EulerMaruyama,
                    SchemeArg::Baoab => Scheme::Baoab,
                };
            }
            ic.dt = a.dt.unwrap_or(ic.dt);
            ic.eta = a.eta.unwrap_or(ic.eta);
            ic.w_cap_log = a.w_cap.or(ic.w_cap_log);
            cfg.validate()?;
            if !(a.t_end >= 0.0 && a.t_end.is_finite()) {
                return Err(Error::Validation {
                    field: "T".into(),
                    message: format!("must be finite and non-negative, got {}", a.t_end),
                });
            }
            let job = SimulateJob {
                csv: a.out,
                checkpoint: a.checkpoint.or_else(|| cfg.output.checkpoint.clone()),
                report: a.report.or_else(|| cfg.output.report.clone()),
                resume: a.resume,
                t_end: a.t_end,
                stride: a.stride.max(1),
                config: cfg,
            };
            (Job::Simulate(job), a.system.manifest)
        }
        Command::SampleHmc(a) => {
            let mut cfg = match a.preset {
                Some(Preset::Ginibre) => {
                    let n = a.system.n.unwrap_or(64);
                    let mut cfg = RunConfig::new(n, 2, 1.0, n as f64 * a.beta_tilde);
                    cfg.potential.form = PotentialName::Quadratic;
                    cfg.potential.omega = 0.5;
                    cfg.initial.scale = 0.5;
                    let seed = a.system.seed.unwrap_or(0);
                    cfg.seed = seed;
                    cfg.integrator.seed = seed;
                    cfg.sampler.seed = seed;
                    cfg
                }
                None => a.system.resolve()?,
            };
            let s = &mut cfg.sampler;
            s.n_samples = a.steps.unwrap_or(s.n_samples);
            s.leapfrog_dt = a.dt.unwrap_or(s.leapfrog_dt);
            s.leapfrog_steps = a.leapfrog.unwrap_or(s.leapfrog_steps);
            s.burn_in = a.burn.unwrap_or(s.burn_in);
            s.momentum_refresh = a.refresh.unwrap_or(s.momentum_refresh);
            cfg.validate()?;
            let job = SampleHmcJob {
                csv: a.out,
                report: a.report.or_else(|| cfg.output.report.clone()),
                config: cfg,
            };
            (Job::SampleHmc(job), a.system.manifest)
        }
        Command::VerifyLyapunov(a) => {
            let cfg = a.system.resolve()?;
            cfg.validate()?;
            let job = VerifyLyapunovJob {
                train: a.train,
                test: a.test,
                report: a.out.or_else(|| cfg.output.report.clone()),
                config: cfg,
            };
            (Job::VerifyLyapunov(job), a.system.manifest)
        }
        Command::VerifyLemma(a) => (
            Job::VerifyLemma(VerifyLemmaJob {
                samples: a.samples,
                n_min: a.n_min,
                n_max: a.n_max,
                dims: a.dims,
                seed: a.seed,
                csv: a.out,
            }),
            a.manifest,
        ),
        Command::VerifyAssumption(a) => {
            let mut cfg = a.system.resolve()?;
            if let Some(p) = a.potential {
                cfg.potential.form = match p {
                    PotentialArg::Quadratic => PotentialName::Quadratic,
                    PotentialArg::DoubleWell => PotentialName::DoubleWell,
                };
            }
            cfg.potential.omega = a.omega.unwrap_or(cfg.potential.omega);
            cfg.validate()?;
            let job = VerifyAssumptionJob {
                radius: a.radius,
                samples: a.samples,
                report: a.out,
                config: cfg,
            };
            (Job::VerifyAssumption(job), a.system.manifest)
        }
        Command::Diagnose(a) => {
            let (kind, input) = match (a.trajectory, a.chain) {
                (Some(t), _) => (InputKind::Trajectory, t),
                (None, Some(c)) => (InputKind::Chain, c),
                (None, None) => unreachable!("clap requires one input"),
            };
            let job = DiagnoseJob {
                kind,
                input,
                beta: a.beta,
                log_floor: a.log_floor,
                burn: a.burn,
                bins: a.bins,
                report: a.out,
                histogram: a.hist,
            };
            (Job::Diagnose(job), a.manifest)
        }
        Command::CheckpointInspect(a) => (
            Job::CheckpointInspect(InspectJob { path: a.path }),
            a.manifest,
        ),
        Command::Replay(a) => {
            let text = fs::read_to_string(&a.manifest)?;
            let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            let mut job = manifest.job;
            let mut target = None;
            if let Some(dir) = &a.out_dir {
                for p in job.outputs_mut() {
                    *p = dir.join(p.file_name().unwrap_or(p.as_os_str()));
                }
                target = job.default_manifest();
            }
            (job, target)
        }
    })
}

fn write_manifest(path: &Path, job: &Job) -> Result<()> {
    let manifest = Manifest {
        tool: "clgv".into(),
        cli_version: env!("CARGO_PKG_VERSION").into(),
        core_version: clgv::VERSION.into(),
        job: job.clone(),
    };
    let value = serde_json::to_value(&manifest).expect("manifest serializes");
    jobs::write_json(Some(path), &value)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if e.is_validation() {
        2
    } else {
        4
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let is_replay = matches!(cli.command, Command::Replay(_));
    let result = build(cli.command).and_then(|(mut job, manifest)| {
        let manifest = match (manifest, is_replay) {
            (Some(m), _) => Some(m),
            (None, false) => job.default_manifest(),
            (None, true) => None,
        };
        if let Some(path) = &manifest {
            write_manifest(path, &job)?;
        }
        job.run()
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
