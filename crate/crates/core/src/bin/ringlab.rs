use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ringlab::attacks::{apply_attack, AttackSpec, DEFAULT_BLUR_RADIUS, DEFAULT_BLUR_SIGMA, DEFAULT_NOISE_SIGMA};
use ringlab::grid::{read_latent, write_latent};
use ringlab::lab::{
    read_distances, read_trials, run_experiment, write_reports, Artifacts, ExperimentConfig, GuidanceArm, Lab,
    DEFAULT_ETA,
};
use ringlab::stats::DetectionReport;
use ringlab::watermark::Watermark;
use ringlab::{LatentGrid, RngStream};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Tree-ring watermark lab on analytic mixture models.
#[derive(Parser, Debug)]
#[command(name = "ringlab", version)]
struct Cli {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Directory receiving one RLT1 file per solver step.
    #[arg(long, global = true)]
    dump_trajectory: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes the ring key into a latent and saves the key next to the output.
    Embed {
        input: PathBuf,
    },
    /// Samples a latent from seeded noise (or from --input).
    Generate {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Trial whose noise and component are used.
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Overrides the trial's mixture component.
        #[arg(long)]
        component: Option<usize>,
        /// Embeds the configured watermark before sampling.
        #[arg(long)]
        watermark: bool,
        /// Also writes the starting noise here.
        #[arg(long)]
        save_noise: Option<PathBuf>,
    },
    /// Applies blur or additive noise to a latent.
    Attack {
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: AttackArg,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        kernel_radius: Option<usize>,
    },
    /// Inverts a generated latent back to noise with the configured mode.
    Invert {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ArmArg::Matched)]
        guidance: ArmArg,
        /// Component the sample was generated from.
        #[arg(long, default_value_t = 0)]
        component: usize,
        #[arg(long, default_value_t = DEFAULT_ETA)]
        eta: f64,
        /// Trial index, used to draw the adversarial condition.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Scores a recovered latent against a key and prints the metrics.
    Recover {
        input: PathBuf,
        /// Key stem written by `embed`; the configured key otherwise.
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Detection statistics from two distance CSVs.
    Detect {
        watermarked: PathBuf,
        clean: PathBuf,
    },
    /// Runs the full multi-trial experiment.
    Experiment,
    /// Rebuilds the reports from a trials CSV.
    Report {
        trials: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackArg {
    None,
    Blur,
    Noise,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArmArg {
    Matched,
    Null,
    Perturbed,
    Adversarial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<ringlab::Error>() {
        Some(inner) if inner.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.global_seed = s;
    }
    Ok(cfg)
}

fn out_path(cli: &Cli, fallback: impl FnOnce() -> PathBuf) -> PathBuf {
    cli.out.clone().unwrap_or_else(fallback)
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn dump(dir: Option<&Path>, trace: &[LatentGrid]) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, g) in trace.iter().enumerate() {
        write_latent(dir.join(format!("step_{i:04}.rlt")), g)?;
    }
    println!("trajectory: {} states in {}", trace.len(), dir.display());
    Ok(())
}

/// Watermark from the config's settings, sized to `x`.
fn watermark_for(cfg: &ExperimentConfig, x: &LatentGrid) -> Result<Watermark> {
    let w = &cfg.watermark;
    if w.channel >= x.channels() {
        bail!(ringlab::Error::Config(format!(
            "watermark channel {} but the latent has {} channels",
            w.channel,
            x.channels()
        )));
    }
    Ok(Watermark::generate(x.height(), x.width(), w.radius, w.channel, w.key_seed, w.pattern)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let dump_dir = cli.dump_trajectory.as_deref();
    match &cli.command {
        Command::Embed { input } => {
            let x = read_latent(input)?;
            let wm = watermark_for(&cfg, &x)?;
            let out = out_path(&cli, || with_suffix(input, ".wm.rlt"));
            write_latent(&out, &wm.embed(&x)?)?;
            wm.save(&out)?;
            println!("watermarked latent: {}", out.display());
        }
        Command::Generate {
            input,
            trial,
            component,
            watermark,
            save_noise,
        } => {
            let lab = Lab::new(cfg)?;
            let mut x_t = match input {
                Some(p) => read_latent(p)?,
                None => lab.trial_noise(*trial)?,
            };
            if *watermark {
                x_t = lab.watermark().embed(&x_t)?;
            }
            let k = component.unwrap_or_else(|| lab.trial_component(*trial));
            if k >= lab.model().len() {
                bail!(ringlab::Error::Config(format!("component {k} out of range")));
            }
            if let Some(p) = save_noise {
                write_latent(p, &x_t)?;
            }
            let mut trace = Vec::new();
            let x0 = lab.generate(&x_t, k, dump_dir.map(|_| &mut trace))?;
            dump(dump_dir, &trace)?;
            let out = out_path(&cli, || PathBuf::from("sample.rlt"));
            write_latent(&out, &x0)?;
            println!("component {k}; sample: {}", out.display());
        }
        Command::Attack {
            input,
            kind,
            sigma,
            kernel_radius,
        } => {
            let mut spec = match kind {
                AttackArg::None => AttackSpec::NONE,
                AttackArg::Blur => AttackSpec::blur(
                    sigma.unwrap_or(DEFAULT_BLUR_SIGMA),
                    kernel_radius.unwrap_or(DEFAULT_BLUR_RADIUS),
                ),
                AttackArg::Noise => AttackSpec::noise(sigma.unwrap_or(DEFAULT_NOISE_SIGMA)),
            };
            spec.seed = cli.seed.unwrap_or(0);
            spec.validate()?;
            let x = read_latent(input)?;
            let y = apply_attack(&x, &spec, &mut RngStream::new(cfg.global_seed, spec.seed))?;
            let out = out_path(&cli, || with_suffix(input, &format!(".{}.rlt", spec.tag())));
            write_latent(&out, &y)?;
            println!("attacked latent: {}", out.display());
        }
        Command::Invert {
            input,
            guidance,
            component,
            eta,
            trial,
        } => {
            let lab = Lab::new(cfg)?;
            if *component >= lab.model().len() {
                bail!(ringlab::Error::Config(format!("component {component} out of range")));
            }
            let arm = match guidance {
                ArmArg::Matched => GuidanceArm::Matched,
                ArmArg::Null => GuidanceArm::Null,
                ArmArg::Perturbed => GuidanceArm::Perturbed { eta: *eta },
                ArmArg::Adversarial => GuidanceArm::Adversarial,
            };
            let x0 = read_latent(input)?;
            let cond = lab.arm_condition(arm, *component, *trial);
            let mut trace = Vec::new();
            let inv = lab.invert(&x0, cond, dump_dir.map(|_| &mut trace))?;
            dump(dump_dir, &trace)?;
            let out = out_path(&cli, || with_suffix(input, ".inv.rlt"));
            write_latent(&out, &inv.latent)?;
            println!(
                "converged: {} (unconverged steps {}, max residual {:e}); latent: {}",
                inv.converged,
                inv.unconverged_steps,
                inv.max_residual,
                out.display()
            );
        }
        Command::Recover { input, key } => {
            let x = read_latent(input)?;
            let wm = match key {
                Some(stem) => Watermark::load(stem)?,
                None => watermark_for(&cfg, &x)?,
            };
            let m = wm.score(&x)?;
            println!("mean_l1 = {}", m.mean_l1);
            println!("nmae = {}", m.nmae);
            println!("nmse = {}", m.nmse);
        }
        Command::Detect { watermarked, clean } => {
            let wm = read_distances(watermarked)?;
            let cl = read_distances(clean)?;
            let r = DetectionReport::compute(&wm, &cl, &cfg.report.fpr_levels, cfg.report.kld_bins)?;
            println!("auc = {}", r.auc);
            for p in &r.tpr_at {
                println!("tpr@fpr={} = {} (threshold {})", p.fpr, p.tpr, p.threshold);
            }
            println!("skld = {}", r.skld);
            if let Some(out) = &cli.out {
                fs::write(out, serde_json::to_string_pretty(&r)? + "\n")
                    .with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::Experiment => {
            let mut cfg = cfg;
            if let Some(out) = &cli.out {
                cfg.output_dir = out.clone();
            }
            let outcome = run_experiment(&cfg)?;
            for c in &outcome.report.configs {
                let auc = c.detection.as_ref().map_or(f64::NAN, |d| d.auc);
                println!("{} / {}: auc = {auc}", c.attack, c.guidance);
            }
            if outcome.report.unreliable {
                println!("warning: more than 10% of rows failed");
            }
            println!("report: {}", outcome.artifacts.report_md.display());
        }
        Command::Report { trials } => {
            let records = read_trials(trials)?;
            let dir = out_path(&cli, || trials.parent().map(Path::to_path_buf).unwrap_or_default());
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let artifacts = Artifacts::in_dir(&dir);
            write_reports(&records, &cfg.report, &artifacts)?;
            println!("report: {}", artifacts.report_md.display());
        }
    }
    Ok(())
}
