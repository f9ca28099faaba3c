//! Fully resolved units of work. A job is what a subcommand runs and what
//! its manifest stores, so replaying a manifest runs the identical job.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use clgv::config::RunConfig;
use clgv::diagnostics::{
    batch_means, disk_radius_estimate, equipartition_stat, fit_exponential_rate, pooled_radii,
    radial_law_distance, ObservableSeries, RadialReference,
};
use clgv::integrators::{simulate_with_rng, step_count, EventKind, Interrupted, TrajectoryRecord};
use clgv::io::{
    decode_checkpoint, read_chain_csv, read_checkpoint, read_trajectory_csv, write_chain_csv,
    write_checkpoint, write_trajectory_csv,
};
use clgv::lyapunov::{
    check_drift_bound, fit_drift_constants, lemma_check, validate_params, StateSampler,
};
use clgv::rng::StreamRng;
use clgv::samplers::hmc_chain;
use clgv::{Error, Result};

/// Outcome of a job that ran to completion: `Ok(false)` means a
/// verification ran but did not pass.
pub type Verdict = Result<bool>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Simulate(SimulateJob),
    SampleHmc(SampleHmcJob),
    VerifyLyapunov(VerifyLyapunovJob),
    VerifyLemma(VerifyLemmaJob),
    VerifyAssumption(VerifyAssumptionJob),
    Diagnose(DiagnoseJob),
    CheckpointInspect(InspectJob),
}

impl Job {
    pub fn run(&self) -> Verdict {
        match self {
            Job::Simulate(j) => j.run(),
            Job::SampleHmc(j) => j.run(),
            Job::VerifyLyapunov(j) => j.run(),
            Job::VerifyLemma(j) => j.run(),
            Job::VerifyAssumption(j) => j.run(),
            Job::Diagnose(j) => j.run(),
            Job::CheckpointInspect(j) => j.run(),
        }
    }

    /// Paths the job writes, excluding the manifest.
    pub fn outputs_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut out: Vec<&mut PathBuf> = Vec::new();
        match self {
            Job::Simulate(j) => {
                out.push(&mut j.csv);
                out.extend(j.checkpoint.as_mut());
                out.extend(j.report.as_mut());
            }
            Job::SampleHmc(j) => {
                out.push(&mut j.csv);
                out.extend(j.report.as_mut());
            }
            Job::VerifyLyapunov(j) => out.extend(j.report.as_mut()),
            Job::VerifyLemma(j) => out.push(&mut j.csv),
            Job::VerifyAssumption(j) => out.extend(j.report.as_mut()),
            Job::Diagnose(j) => {
                out.push(&mut j.report);
                out.extend(j.histogram.as_mut());
            }
            Job::CheckpointInspect(_) => {}
        }
        out
    }

    /// Default manifest location: next to the first output.
    pub fn default_manifest(&mut self) -> Option<PathBuf> {
        self.outputs_mut().first().map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn to_json<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("value serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateJob {
    pub config: RunConfig,
    pub t_end: f64,
    pub stride: usize,
    pub csv: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Start from this checkpoint's state and RNG instead of the config.
    pub resume: Option<PathBuf>,
}

impl SimulateJob {
    fn run(&self) -> Verdict {
        let cfg = &self.config;
        let params = cfg.system_params()?;
        let (initial, mut rng) = match &self.resume {
            Some(path) => read_checkpoint(path)?,
            None => (cfg.initial_state()?, StreamRng::new(cfg.integrator.seed, 0)),
        };
        if initial.n() != params.n || initial.dim() != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.n * params.dim,
                found: initial.q.len(),
            });
        }
        let result = simulate_with_rng(
            &params,
            &cfg.lyapunov,
            &cfg.integrator,
            &initial,
            self.t_end,
            self.stride,
            &mut rng,
        );
        let (record, failure) = match result {
            Ok(r) => (r, None),
            Err(Interrupted { error, record }) => (*record, Some(error)),
        };
        let mut w = create(&self.csv)?;
        write_trajectory_csv(&mut w, &record)?;
        w.flush()?;
        if let Some(path) = &self.checkpoint {
            write_checkpoint(path, &record.final_state, &rng)?;
        }
        if let Some(path) = &self.report {
            write_json(Some(path), &self.summary(&record, failure.as_ref()))?;
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(true),
        }
    }

    fn summary(&self, record: &TrajectoryRecord, failure: Option<&Error>) -> Value {
        let count = |f: fn(&EventKind) -> bool| record.events.iter().filter(|e| f(&e.kind)).count();
        let finite = record
            .energy
            .iter()
            .chain(&record.log_w)
            .chain(&record.final_state.q)
            .chain(&record.final_state.p)
            .all(|x| x.is_finite());
        json!({
            "steps_planned": step_count(self.t_end, self.config.integrator.dt),
            "steps_completed": record.len().saturating_sub(1),
            "final_time": record.times.last(),
            "halving_steps": count(|k| matches!(k, EventKind::Halving { .. })),
            "cap_hits": count(|k| matches!(k, EventKind::CapHit { .. })),
            "step_failures": count(|k| matches!(k, EventKind::StepFailure { .. })),
            "min_distance": record.min_dist.iter().copied().fold(f64::INFINITY, f64::min),
            "all_finite": finite,
            "interrupted": failure.map(|e| e.to_string()),
            "events": to_json(&record.events),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleHmcJob {
    pub config: RunConfig,
    pub csv: PathBuf,
    pub report: Option<PathBuf>,
}

impl SampleHmcJob {
    fn run(&self) -> Verdict {
        let cfg = &self.config;
        let params = cfg.system_params()?;
        let q0 = cfg.initial_state()?.q;
        let chain = hmc_chain(&params, &cfg.sampler, &q0)?;
        let mut w = create(&self.csv)?;
        write_chain_csv(&mut w, &chain)?;
        w.flush()?;
        if let Some(path) = &self.report {
            let ep = equipartition_stat(&chain)?;
            let report = json!({
                "samples": chain.positions.len(),
                "acceptance_rate": chain.acceptance_rate(),
                "mean_acceptance_probability": chain.mean_acceptance_probability(params.beta),
                "collision_rejections": chain.collision_rejections,
                "equipartition": {
                    "mean": ep.mean,
                    "std_error": ep.std_error,
                    "target": 1.0 / params.beta,
                },
            });
            write_json(Some(path), &report)?;
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyLyapunovJob {
    pub config: RunConfig,
    pub train: usize,
    pub test: usize,
    pub report: Option<PathBuf>,
}

impl VerifyLyapunovJob {
    fn run(&self) -> Verdict {
        let cfg = &self.config;
        let params = cfg.system_params()?;
        let ac = params
            .potential
            .constants
            .clone()
            .ok_or(Error::MissingConstants("potential has no stored constants"))?;
        let validation = validate_params(&params, &cfg.lyapunov, &ac);
        let mut report = json!({
            "system": to_json(&cfg.system),
            "lyapunov": to_json(&cfg.lyapunov),
            "validation": to_json(&validation),
        });
        if !validation.passed() {
            report["passed"] = json!(false);
            write_json(self.report.as_deref(), &report)?;
            let failed = validation
                .conditions
                .iter()
                .find(|c| !c.passed)
                .expect("a failed condition");
            return Err(Error::Validation {
                field: "lyapunov".into(),
                message: format!("condition {} fails: {}", failed.name, failed.expression),
            });
        }
        let sampler = StateSampler::new(params.n, params.dim);
        let train = sampler.sample_many(self.train, &mut StreamRng::new(cfg.seed, 1));
        let test = sampler.sample_many(self.test, &mut StreamRng::new(cfg.seed, 2));
        let fit = fit_drift_constants(&params, &cfg.lyapunov, &train)?;
        let check = check_drift_bound(&params, &cfg.lyapunov, &fit.bound, &test)?;
        report["fit"] = to_json(&fit.bound);
        report["fit_diagnostics"] = to_json(&fit.diagnostics);
        report["test"] = to_json(&check);
        report["passed"] = json!(check.passed());
        write_json(self.report.as_deref(), &report)?;
        Ok(check.passed())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyLemmaJob {
    pub samples: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub csv: PathBuf,
}

impl VerifyLemmaJob {
    fn run(&self) -> Verdict {
        if self.n_min < 2 || self.n_max < self.n_min {
            return Err(Error::Validation {
                field: "n_min".into(),
                message: format!(
                    "need 2 <= n_min <= n_max, got {}..{}",
                    self.n_min, self.n_max
                ),
            });
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Validation {
                field: "dims".into(),
                message: "need at least one positive dimension".into(),
            });
        }
        let mut rng = StreamRng::new(self.seed, 0);
        let ns = self.n_max - self.n_min + 1;
        let mut w = csv::Writer::from_writer(create(&self.csv)?);
        let csv_err = |e: csv::Error| Error::Io(e.into());
        w.write_record(["N", "d", "J", "rhs", "slack", "relative_slack", "passed"])
            .map_err(csv_err)?;
        let (mut failures, mut worst) = (0usize, f64::INFINITY);
        for k in 0..self.samples {
            let n = self.n_min + k % ns;
            let d = self.dims[(k / ns) % self.dims.len()];
            let state = StateSampler::new(n, d).sample(&mut rng);
            let c = lemma_check(&state, d as f64)?;
            failures += usize::from(!c.passed);
            worst = worst.min(c.relative_slack());
            w.write_record([
                n.to_string(),
                d.to_string(),
                c.j.to_string(),
                c.rhs.to_string(),
                c.slack.to_string(),
                c.relative_slack().to_string(),
                u8::from(c.passed).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        write_json(
            None,
            &json!({ "tested": self.samples, "failures": failures, "min_relative_slack": worst }),
        )?;
        Ok(failures == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyAssumptionJob {
    pub config: RunConfig,
    pub radius: f64,
    pub samples: usize,
    pub report: Option<PathBuf>,
}

impl VerifyAssumptionJob {
    fn run(&self) -> Verdict {
        let potential = self.config.potential()?;
        let report =
            potential.verify_assumption(self.config.system.d, self.radius, self.samples)?;
        let mut value = to_json(&report);
        value["passed"] = json!(report.all_passed());
        write_json(self.report.as_deref(), &value)?;
        if !report.all_passed() {
            return Err(Error::Validation {
                field: "potential.constants".into(),
                message: "growth conditions fail at sampled points".into(),
            });
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Trajectory,
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseJob {
    pub kind: InputKind,
    pub input: PathBuf,
    pub beta: Option<f64>,
    /// Floor for the `W` decay fit, in `log W` units.
    pub log_floor: Option<f64>,
    /// Leading rows to discard.
    pub burn: usize,
    pub bins: usize,
    pub report: PathBuf,
    pub histogram: Option<PathBuf>,
}

impl DiagnoseJob {
    fn run(&self) -> Verdict {
        let file = File::open(&self.input)?;
        let (n, dim, positions, mut report) = match self.kind {
            InputKind::Trajectory => {
                let t = read_trajectory_csv(file)?;
                let skip = self.burn.min(t.times.len());
                let states = &t.states[skip..];
                let mut report = json!({
                    "source": "trajectory",
                    "rows": states.len(),
                    "min_distance": t.min_dist[skip..].iter().copied().fold(f64::INFINITY, f64::min),
                    "mean_energy": mean(&t.energy[skip..]),
                    "w_decay": self.w_decay(&t.times[skip..], &t.log_w[skip..]),
                });
                if states.len() >= 2 {
                    let ep = equipartition_stat(states)?;
                    report["equipartition"] = json!({
                        "mean": ep.mean,
                        "std_error": ep.std_error,
                        "target": self.beta.map(|b| 1.0 / b),
                    });
                }
                let positions = states.iter().map(|s| s.q.clone()).collect();
                (t.n, t.dim, positions, report)
            }
            InputKind::Chain => {
                let c = read_chain_csv(file)?;
                let skip = self.burn.min(c.positions.len());
                let report = json!({
                    "source": "chain",
                    "rows": c.positions.len() - skip,
                    "acceptance_rate": mean(&c.accepted[skip..].iter().map(|&a| f64::from(u8::from(a))).collect::<Vec<_>>()),
                    "mean_energy": mean(&c.energy[skip..]),
                });
                (c.n, c.dim, c.positions[skip..].to_vec(), report)
            }
        };
        report["N"] = json!(n);
        report["d"] = json!(dim);
        let sq: Vec<f64> = positions
            .iter()
            .map(|q| q.iter().map(|x| x * x).sum::<f64>())
            .collect();
        if let Ok(e) = batch_means(&sq) {
            report["mean_q_squared"] = json!({ "mean": e.mean, "std_error": e.std_error });
        }
        if dim == 2 && n * positions.len() >= 100 {
            let distance = radial_law_distance(&positions, dim, RadialReference::UniformDisk)?;
            let mut radii = pooled_radii(&positions, dim);
            radii.sort_by(f64::total_cmp);
            let radius = disk_radius_estimate(&radii);
            report["radial_law"] = json!({ "distance": distance, "radius_estimate": radius });
            if let Some(path) = &self.histogram {
                write_radial_histogram(path, &radii, radius, self.bins.max(1))?;
            }
        }
        write_json(Some(&self.report), &report)?;
        Ok(true)
    }

    fn w_decay(&self, times: &[f64], log_w: &[f64]) -> Value {
        let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = log_w.iter().map(|l| (l - m).exp()).collect();
        let floor = self.log_floor.map_or(0.0, |f| (f - m).exp());
        let fit = ObservableSeries::new("W", times.to_vec(), values)
            .and_then(|s| fit_exponential_rate(&s, floor));
        match fit {
            Ok(f) => json!({
                "lambda_hat": f.rate,
                "log_amplitude": f.log_amplitude + m,
                "r_squared": f.r_squared,
                "fit_start_time": times[f.start],
                "log_floor": self.log_floor,
            }),
            Err(e) => json!({ "error": e.to_string(), "log_floor": self.log_floor }),
        }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Columns `r_lo,r_hi,count,empirical_cdf,reference_cdf` in radius units
/// rescaled by the disk-radius estimate.
fn write_radial_histogram(path: &Path, sorted: &[f64], radius: f64, bins: usize) -> Result<()> {
    let scale = if radius > 0.0 { radius } else { 1.0 };
    let top = (sorted.last().copied().unwrap_or(0.0) / scale).max(1.0);
    let mut w = create(path)?;
    writeln!(w, "r_lo,r_hi,count,empirical_cdf,reference_cdf")?;
    let mut seen = 0usize;
    for b in 0..bins {
        let (lo, hi) = (
            top * b as f64 / bins as f64,
            top * (b + 1) as f64 / bins as f64,
        );
        let upto = if b + 1 == bins {
            sorted.len()
        } else {
            sorted.partition_point(|r| r / scale < hi)
        };
        let count = upto - seen;
        seen = upto;
        let cdf = seen as f64 / sorted.len() as f64;
        writeln!(w, "{lo},{hi},{count},{cdf},{}", (hi * hi).min(1.0))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectJob {
    pub path: PathBuf,
}

impl InspectJob {
    fn run(&self) -> Verdict {
        let bytes = fs::read(&self.path)?;
        let (state, rng) = decode_checkpoint(&bytes)?;
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let min = state.min_pair_distance();
        write_json(
            None,
            &json!({
                "bytes": bytes.len(),
                "version": char::from(bytes[4]).to_string(),
                "N": state.n(),
                "d": state.dim(),
                "q_norm": norm(&state.q),
                "p_norm": norm(&state.p),
                "min_pair_distance": min.is_finite().then_some(min),
                "rng_state_bytes": rng.to_bytes().len(),
            }),
        )?;
        Ok(true)
    }
}
