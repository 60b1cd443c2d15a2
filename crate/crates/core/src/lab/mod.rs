//! Experiment harness: generate → attack → invert → recover → score, over
//! many independent trials.

mod config;
mod report;

pub use config::{
    ExperimentConfig, Family, GuidanceArm, InversionMode, LatentShape, ReportOptions, SolverSection,
    WatermarkConfig, CONFIG_SCHEMA, DEFAULT_ETA,
};
pub use report::{
    read_distances, read_trials, render_histogram, write_distances, write_trials, ConfigReport, ExperimentReport,
    ExtractionSummary, TrialRecord, UNRELIABLE_FAILURE_RATE,
};

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::attacks::{apply_attack, AttackSpec};
use crate::error::{Error, Result};
use crate::grid::{sample_gaussian, LatentGrid, RngStream};
use crate::model::{Condition, MixtureModel};
use crate::solvers::{
    ddim_invert_exact, ddim_invert_naive, ddim_sample, dpmpp_invert, dpmpp_sample, rf_invert_implicit,
    rf_invert_naive, rf_sample, roundtrip_nmse, Guided, Inversion, SolverConfig, TimeGrid, Trace,
};
use crate::stats::Label;
use crate::watermark::Watermark;

// Stream purposes; the trial index occupies the high bits of the stream id.
const STREAM_NOISE: u64 = 1;
const STREAM_LABEL: u64 = 2;
const STREAM_ADVERSARY: u64 = 3;
const STREAM_ATTACK: u64 = 0x100;

/// Stream id for `(trial, purpose)`.
pub fn trial_stream(trial: usize, purpose: u64) -> u64 {
    ((trial as u64) << 16) | purpose
}

/// A validated config with its model, watermark and time grid built.
#[derive(Debug)]
pub struct Lab {
    config: ExperimentConfig,
    model: MixtureModel,
    watermark: Watermark,
    solver: SolverConfig,
    grid: TimeGrid,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.build_model()?;
        model
            .check_experiment_ready()
            .map_err(|e| Error::Config(e.to_string()))?;
        let watermark = config.build_watermark()?;
        let solver = config.solver.resolve()?;
        let grid = match config.solver.family {
            Family::Rf => TimeGrid::uniform_rf(solver.steps)?,
            Family::Ddim => TimeGrid::uniform_ddim(&model, solver.steps)?,
        };
        Ok(Self {
            config,
            model,
            watermark,
            solver,
            grid,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &MixtureModel {
        &self.model
    }

    pub fn watermark(&self) -> &Watermark {
        &self.watermark
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn guided(&self, condition: Condition) -> Guided<'_> {
        Guided::new(&self.model, condition, self.solver.guidance_scale)
    }

    /// Samples `x_0` from `x_T` under `exact(k)` with guidance.
    pub fn generate(&self, x_t: &LatentGrid, k: usize, trace: Trace<'_>) -> Result<LatentGrid> {
        let p = self.guided(Condition::Exact { k });
        match (self.config.solver.family, self.config.solver.inversion()) {
            (Family::Rf, _) => rf_sample(&p, &self.grid, x_t, trace),
            (Family::Ddim, InversionMode::Dpmpp2) => dpmpp_sample(&p, &self.grid, x_t, trace),
            (Family::Ddim, _) => ddim_sample(&p, &self.grid, x_t, trace),
        }
    }

    /// Inverts `x_0` with the configured mode under `condition`.
    pub fn invert(&self, x0: &LatentGrid, condition: Condition, trace: Trace<'_>) -> Result<Inversion> {
        let p = self.guided(condition);
        let g = &self.grid;
        match self.config.solver.inversion() {
            InversionMode::Naive => match self.config.solver.family {
                Family::Rf => rf_invert_naive(&p, g, x0, trace),
                Family::Ddim => ddim_invert_naive(&p, g, x0, trace),
            },
            InversionMode::Implicit => rf_invert_implicit(&p, g, x0, &self.solver, trace),
            InversionMode::Exact => ddim_invert_exact(&p, g, x0, &self.solver, trace),
            InversionMode::Dpmpp2 => dpmpp_invert(&p, g, x0, trace),
        }
    }

    /// Inversion condition for an arm, given the generating component.
    pub fn arm_condition(&self, arm: GuidanceArm, k: usize, trial: usize) -> Condition {
        match arm {
            GuidanceArm::Matched => Condition::Exact { k },
            GuidanceArm::Null => Condition::Null,
            GuidanceArm::Perturbed { eta } => Condition::Perturbed { k, eta },
            GuidanceArm::Adversarial => {
                let n = self.model.len();
                if n < 2 {
                    return Condition::Null;
                }
                let mut rng = RngStream::new(self.config.global_seed, trial_stream(trial, STREAM_ADVERSARY));
                Condition::Exact {
                    k: (k + 1 + rng.index(n - 1)) % n,
                }
            }
        }
    }

    /// Component drawn from the prior for a trial.
    pub fn trial_component(&self, trial: usize) -> usize {
        let mut rng = RngStream::new(self.config.global_seed, trial_stream(trial, STREAM_LABEL));
        let u = rng.uniform();
        let mut acc = 0.0;
        let comps = self.model.components();
        for (k, c) in comps.iter().enumerate() {
            acc += c.prior;
            if u < acc {
                return k;
            }
        }
        comps.len() - 1
    }

    pub fn trial_noise(&self, trial: usize) -> Result<LatentGrid> {
        let (c, h, w) = self.config.shape()?;
        sample_gaussian(
            &mut RngStream::new(self.config.global_seed, trial_stream(trial, STREAM_NOISE)),
            c,
            h,
            w,
        )
    }

    fn attack_rng(&self, spec: &AttackSpec, trial: usize, attack_index: usize, arm: Label) -> RngStream {
        let arm_bit = match arm {
            Label::Watermarked => 0,
            Label::Clean => 1,
        };
        let seed = self.config.global_seed ^ spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        RngStream::new(
            seed,
            trial_stream(trial, STREAM_ATTACK + 2 * attack_index as u64 + arm_bit),
        )
    }

    /// All rows of one trial, ordered by attack, then guidance, then arm.
    /// Numerical failures become failed rows; other errors propagate.
    pub fn run_trial(&self, trial: usize) -> Result<Vec<TrialRecord>> {
        let k = self.trial_component(trial);
        let x_t = self.trial_noise(trial)?;
        let x_w = self.watermark.embed(&x_t)?;
        let gen_w = numerical_as_none(self.generate(&x_w, k, None).map(Some))?;
        let gen_c = numerical_as_none(self.generate(&x_t, k, None).map(Some))?;
        let mut rows = Vec::new();
        for (ai, attack) in self.config.attacks.iter().enumerate() {
            for arm_cfg in &self.config.guidance {
                let cond = self.arm_condition(*arm_cfg, k, trial);
                for (label, start, x0) in [(Label::Watermarked, &x_w, &gen_w), (Label::Clean, &x_t, &gen_c)] {
                    let outcome = x0.as_ref().map(|x0| -> Result<_> {
                        let mut rng = self.attack_rng(attack, trial, ai, label);
                        let attacked = apply_attack(x0, attack, &mut rng)?;
                        let inv = self.invert(&attacked, cond, None)?;
                        let metrics = self.watermark.score(&inv.latent)?;
                        let rt = roundtrip_nmse(&inv.latent, start)?;
                        Ok((metrics, rt, inv.converged))
                    });
                    let outcome = numerical_as_none(outcome.transpose())?;
                    let base = TrialRecord {
                        trial,
                        arm: label,
                        attack: attack.tag().to_string(),
                        guidance: arm_cfg.tag().to_string(),
                        mean_l1: None,
                        nmae: None,
                        nmse: None,
                        roundtrip_nmse: None,
                        fp_converged: false,
                    };
                    rows.push(match outcome {
                        Some((m, rt, conv)) => TrialRecord {
                            mean_l1: Some(m.mean_l1),
                            nmae: Some(m.nmae),
                            nmse: Some(m.nmse),
                            roundtrip_nmse: Some(rt),
                            fp_converged: conv,
                            ..base
                        },
                        None => base,
                    });
                }
            }
        }
        Ok(rows)
    }

    /// Runs every trial on `workers` threads (0 = all cores). The output is
    /// identical for any worker count.
    pub fn run(&self, workers: usize) -> Result<Vec<TrialRecord>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let per_trial: Vec<Result<Vec<TrialRecord>>> =
            pool.install(|| (0..self.config.trials).into_par_iter().map(|t| self.run_trial(t)).collect());
        let mut rows = Vec::new();
        for r in per_trial {
            rows.extend(r?);
        }
        rows.sort_by_key(|r| r.trial);
        Ok(rows)
    }
}

/// `Ok(None)` for numerical failures, which become failed rows.
fn numerical_as_none<T>(r: Result<Option<T>>) -> Result<Option<T>> {
    match r {
        Err(e) if e.is_numerical() => Ok(None),
        other => other,
    }
}

/// Paths of the artifacts written by [`run_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub trials_csv: PathBuf,
    pub histogram_csv: PathBuf,
    pub report_md: PathBuf,
    pub report_json: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            trials_csv: dir.join("trials.csv"),
            histogram_csv: dir.join("histogram.csv"),
            report_md: dir.join("report.md"),
            report_json: dir.join("report.json"),
        }
    }
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<TrialRecord>,
    pub report: ExperimentReport,
    pub artifacts: Artifacts,
}

/// Runs a full experiment and writes `trials.csv`, `histogram.csv`,
/// `report.md` and `report.json` into the config's output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let lab = Lab::new(config.clone())?;
    let records = lab.run(config.workers)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let artifacts = Artifacts::in_dir(dir);
    write_trials(&artifacts.trials_csv, &records)?;
    let report = write_reports(&records, &config.report, &artifacts)?;
    Ok(ExperimentOutcome {
        records,
        report,
        artifacts,
    })
}

/// Builds the report from trial rows and writes the markdown, JSON and
/// histogram files.
pub fn write_reports(records: &[TrialRecord], opts: &ReportOptions, artifacts: &Artifacts) -> Result<ExperimentReport> {
    let report = ExperimentReport::from_records(records, opts)?;
    fs::write(&artifacts.report_md, report.to_markdown())?;
    fs::write(&artifacts.report_json, serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(&artifacts.histogram_csv, render_histogram(records, opts.histogram_bins)?)?;
    Ok(report)
}
