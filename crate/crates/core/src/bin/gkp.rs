use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gkp_core::harness::{self, presets, ExperimentConfig, ExperimentKind, Params};
use gkp_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gkp", version, about = "GKP code simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by --config.
    Run(RunFlags),
    /// Run a named preset (see list-presets).
    Preset {
        name: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the preset catalog.
    ListPresets,
    /// Print a preset as TOML.
    ShowPreset { name: String },
    Wigner(RunFlags),
    FidelityScan(RunFlags),
    HomodyneMisid(RunFlags),
    PhaseEst(RunFlags),
    Prep(RunFlags),
    Compile(RunFlags),
    ShiftEc(RunFlags),
    SurfaceThreshold(RunFlags),
    HybridCheck(RunFlags),
}

fn apply(mut cfg: ExperimentConfig, flags: &RunFlags) -> Result<ExperimentConfig> {
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(t) = flags.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &flags.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn for_kind(kind: ExperimentKind, flags: &RunFlags) -> Result<ExperimentConfig> {
    let cfg = match &flags.config {
        Some(p) => {
            let cfg = ExperimentConfig::from_file(p)?;
            if cfg.experiment != kind {
                return Err(Error::config("experiment", format!("config is for `{}`, not `{}`", cfg.experiment.as_str(), kind.as_str())));
            }
            cfg
        }
        None => {
            let seed = flags.seed.ok_or_else(|| Error::config("seed", "required: pass --seed or a --config with `seed`"))?;
            let mut cfg = ExperimentConfig::new(Params::default_for(kind), seed);
            cfg.output.dir = PathBuf::from("out").join(kind.as_str());
            cfg
        }
    };
    apply(cfg, flags)
}

fn execute(cfg: &ExperimentConfig) -> Result<()> {
    log::info!("running {} (config {})", cfg.experiment.as_str(), &cfg.hash()[..12]);
    let outcome = harness::run(cfg)?;
    let m = &outcome.manifest;
    for o in &m.outputs {
        println!("{}  {}", &o.sha256[..16], cfg.output.dir.join(&o.path).display());
    }
    println!("manifest: {} ({} outputs, {:.1} s, {} threads)", cfg.output.dir.join("manifest.json").display(), m.outputs.len(), m.wall_time_s, m.threads);
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main_inner(cli: Cli) -> Result<()> {
    let kind_cmd = |k: ExperimentKind, f: &RunFlags| -> Result<()> { execute(&for_kind(k, f)?) };
    match &cli.command {
        Command::Run(flags) => {
            let path = flags.config.as_ref().ok_or_else(|| Error::config("--config", "required for `run`"))?;
            execute(&apply(ExperimentConfig::from_file(path)?, flags)?)
        }
        Command::Preset { name, flags } => {
            let p = presets::find(name).ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))?;
            let mut cfg = p.config;
            if let Some(path) = &flags.config {
                cfg = ExperimentConfig::from_file(path)?;
            }
            execute(&apply(cfg, flags)?)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_file(config)?;
            println!("ok: {} experiment, seed {}, config hash {}", cfg.experiment.as_str(), cfg.seed, cfg.hash());
            Ok(())
        }
        Command::ListPresets => {
            for p in presets::catalog() {
                println!("{:<18} {:<18} {}", p.name, p.config.experiment.as_str(), p.description);
            }
            Ok(())
        }
        Command::ShowPreset { name } => {
            let p = presets::find(name).ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))?;
            print!("{}", p.config.to_toml());
            Ok(())
        }
        Command::Wigner(f) => kind_cmd(ExperimentKind::Wigner, f),
        Command::FidelityScan(f) => kind_cmd(ExperimentKind::FidelityScan, f),
        Command::HomodyneMisid(f) => kind_cmd(ExperimentKind::HomodyneMisid, f),
        Command::PhaseEst(f) => kind_cmd(ExperimentKind::PhaseEst, f),
        Command::Prep(f) => kind_cmd(ExperimentKind::Prep, f),
        Command::Compile(f) => kind_cmd(ExperimentKind::Compile, f),
        Command::ShiftEc(f) => kind_cmd(ExperimentKind::ShiftEc, f),
        Command::SurfaceThreshold(f) => kind_cmd(ExperimentKind::SurfaceThreshold, f),
        Command::HybridCheck(f) => kind_cmd(ExperimentKind::HybridCheck, f),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
