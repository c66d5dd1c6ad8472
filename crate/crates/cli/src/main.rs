//! `expdesign` — design, simulate, identify and certify exploration experiments, and
//! reproduce the parameter studies.
//!
//! Exit codes: 0 when every guarantee of the run holds, 1 when the run completed but a
//! guarantee failed, 2 on errors (configuration, I/O, numerical failure).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use expdesign_core::design::DesignRecord;
use expdesign_core::experiment::{
    design_stage, execute_pipeline, experiment_stage, prepare, run_study, write_csv, write_run_artifacts, write_trajectory_csv,
    ExperimentConfig, Metadata, STUDY_NAMES,
};
use expdesign_core::plant::{disturbance_energy, Trajectory};
use expdesign_core::setmem::{build_regressors, goal_value, nonfalsified_set, posterior_error_certificate};
use expdesign_core::Error;

#[derive(Parser, Debug)]
#[command(name = "expdesign", version, about = "Minimum-energy robust exploration-input design with set-membership identification")]
struct Cli {
    /// Experiment configuration (TOML with `schema_version`); defaults to the benchmark setting.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: `output_dir` from the config, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the exploration design; writes design.toml and report.txt.
    Design,
    /// Apply a design to the nonlinear plant; writes trajectory.csv.
    Simulate {
        /// Design record to apply (computed from the config when omitted).
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Identify the non-falsified parameter set from a trajectory CSV; writes ellipsoid.toml.
    Identify {
        /// Trajectory CSV (`k,x1..xn,u1..um,w1..wn`).
        #[arg(long)]
        data: PathBuf,
    },
    /// Compute the design and certify it on samples of the prior set.
    Certify {
        /// Number of prior samples (overrides `certify_samples`).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run the whole pipeline: design, certify, simulate, identify.
    Run,
    /// Reproduce a parameter study; writes <name>.csv and <name>.svg.
    Study {
        /// One of energy-vs-gammaw, posterior-vs-D0, targeted-vs-naive, sensitivity-theta0, energy-vs-Ddes.
        name: String,
        /// Trials per sweep point (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn verdict(ok: bool) -> ExitCode {
    println!("guarantees: {}", if ok { "all hold" } else { "NOT all hold" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", ExperimentConfig::default().to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    let mut cfg = load_config(cli)?;
    let out = out_dir(cli, &cfg);
    match &cli.command {
        Command::DefaultConfig => unreachable!("handled above"),
        Command::Design | Command::Certify { .. } => {
            if let Command::Certify { samples: Some(n) } = cli.command {
                cfg.certify_samples = n;
            }
            let setup = prepare(&cfg)?;
            let d = design_stage(&setup)?;
            let design_path = out.join("design.toml");
            write(&design_path, &d.design.to_toml()?)?;
            let c = &d.certification;
            let text = format!(
                "config hash      {}\ngamma_e          {:.6e}\ninput energy     {:.6e}\niterations       {}\nconverged        {}\ncap scale        {}\ncertification    {} ({} samples checked, {} skipped, worst margins {:.3e} {:.3e} {:.3e})\ndesign time      {:.1} s\ndesign record    {}\n",
                cfg.hash(),
                d.design.gamma_e,
                d.design.energy(),
                d.design.iterations,
                d.design.converged,
                d.cap_scale,
                if c.passed { "passed" } else { "FAILED" },
                c.samples_checked,
                c.samples_skipped,
                c.worst_margins[0],
                c.worst_margins[1],
                c.worst_margins[2],
                d.seconds,
                design_path.display()
            );
            write(&out.join("report.txt"), &text)?;
            print!("{text}");
            Ok(verdict(d.certified()))
        }
        Command::Simulate { design } => {
            let setup = prepare(&cfg)?;
            let spec = match design {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                    DesignRecord::from_toml(&text)?.to_spec(cfg.horizon)?
                }
                None => design_stage(&setup)?.design.spec,
            };
            let id = experiment_stage(&setup, &spec)?;
            let path = out.join("trajectory.csv");
            std::fs::create_dir_all(&out).map_err(|e| Error::Config(e.to_string()))?;
            write_trajectory_csv(&path, &id.trajectory, &Metadata::for_config(&cfg, 1))?;
            let energy = disturbance_energy(&id.trajectory);
            println!("trajectory       {}", path.display());
            println!("input energy     {:.6e}", spec.energy());
            println!("disturbance      {:.6e} (bound {:.6e})", energy, setup.gamma_w);
            Ok(verdict(energy <= setup.gamma_w * (1.0 + 1e-9) + 1e-9))
        }
        Command::Identify { data } => {
            let setup = prepare(&cfg)?;
            let text = std::fs::read_to_string(data).map_err(|e| Error::Config(format!("cannot read {}: {e}", data.display())))?;
            let traj = Trajectory::read_csv(&text)?;
            let reg = build_regressors(&traj).map_err(|e| e.in_stage("identify"))?;
            let ell = nonfalsified_set(&reg, setup.gamma_w).map_err(|e| e.in_stage("identify"))?;
            let gp = posterior_error_certificate(&ell);
            let truth = setup.truth.theta();
            let inside = ell.contains(&truth)?;
            let goal = gp <= 1.0 / cfg.d_des;
            let ell_path = out.join("ellipsoid.toml");
            write(&ell_path, &ell.to_record())?;
            let summary = out.join("identify.csv");
            let row = vec![
                format!("{:e}", ell.radius),
                format!("{gp:e}"),
                format!("{:e}", 1.0 / cfg.d_des),
                goal.to_string(),
                inside.to_string(),
                format!("{:e}", goal_value(&truth, &ell.center, &setup.d_des, setup.truth.nx())?),
            ];
            write_csv(
                &summary,
                &Metadata::for_config(&cfg, 1).with("data", data.display().to_string()),
                &["G", "gp_norm", "goal_bound", "goal_satisfied", "theta_in_set", "true_goal_value"],
                &[row],
            )?;
            println!("ellipsoid        {}", ell_path.display());
            println!("G                {:.6e}", ell.radius);
            println!("||G P||          {gp:.6e} (goal {:.6e})", 1.0 / cfg.d_des);
            println!("theta_tr in set  {inside}");
            Ok(verdict(goal && inside))
        }
        Command::Run => {
            let mut r = execute_pipeline(&cfg)?;
            write_run_artifacts(&mut r, &out)?;
            println!("{}", r.report);
            Ok(verdict(r.report.all_guarantees_hold()))
        }
        Command::Study { name, trials } => {
            if !STUDY_NAMES.contains(&name.as_str()) {
                return Err(Error::UnknownStudy(name.clone()));
            }
            if let Some(t) = trials {
                cfg.study.trials = *t;
                cfg.study.sweep_trials = *t;
            }
            let r = run_study(name, &cfg, Some(&out))?;
            for rec in &r.records {
                println!(
                    "point {:>2} trial {:>2}: gamma_e^2 = {:.4e}  ||GP|| = {:.4e}{}{}",
                    rec.point,
                    rec.trial,
                    rec.energy(),
                    rec.gp_norm,
                    rec.gp_ratio().map(|x| format!("  ratio = {x:.3}")).unwrap_or_default(),
                    rec.error.as_ref().map(|e| format!("  error: {e}")).unwrap_or_default()
                );
            }
            for p in [&r.csv_path, &r.svg_path, &r.summary_csv_path].into_iter().flatten() {
                println!("wrote {}", p.display());
            }
            Ok(verdict(r.all_guarantees_hold()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
