use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pharmatimeline::lexicon::bundled;
use pharmatimeline::pipeline::{run_pipeline, run_stages, score_worksheet, RunConfig, Stage};
use pharmatimeline::synth::{generate, SynthSpec};
use pharmatimeline::Error;

#[derive(Parser)]
#[command(
    name = "pharmatimeline",
    version,
    about = "ADR prevalence from dated clinical text"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Count post-index ADRs only while the study drug is active.
    #[arg(long)]
    strict_attribution: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    OxfordCalibration,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and a matching config.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Use a built-in spec instead of the config's `[synth]` table.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Mentions and daily events.
    Extract(Common),
    /// Medication episodes.
    Episodes(Common),
    /// Cohort and bucketed ADR events.
    Adr(Common),
    /// Stratified prevalence table.
    Prevalence(Common),
    /// Chi-square tests per trust and combined.
    Stats(Common),
    /// Compare trust-total prevalence with SIDER ranges.
    CompareSider(Common),
    /// Write a validation worksheet, or score a filled one.
    ValidateSample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        score: Option<PathBuf>,
    },
    /// Full pipeline with manifest.
    Run(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) => 3,
        Error::Schema { .. } | Error::Parse { .. } => 4,
        Error::EmptyCohort(_) => 5,
        Error::Invariant(_) => 6,
        Error::Config(_) | Error::InvalidRate { .. } | Error::AmbiguousAlias { .. } => 7,
        _ => 1,
    }
}

fn load_config(common: &Common) -> pharmatimeline::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            base_dir: PathBuf::from("."),
            ..RunConfig::default()
        },
    };
    if let Some(out) = &common.out {
        cfg.output_dir = std::path::absolute(out).unwrap_or_else(|_| out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.strict_attribution {
        cfg.strict_attribution = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage(common: &Common, stage: Stage) -> pharmatimeline::Result<()> {
    let cfg = load_config(common)?;
    let bundle = run_stages(&cfg, stage)?;
    for w in &bundle.manifest.warnings {
        log::warn!("{w}");
    }
    let dir = cfg.output_path();
    let mut keep = bundle.clone();
    keep.files
        .retain(|(name, _)| stage.outputs().contains(&name.as_str()));
    keep.write_to(&dir, false)?;
    for (name, _) in &keep.files {
        println!("{}", dir.join(name).display());
    }
    Ok(())
}

fn synth(common: &Common, preset: Option<Preset>) -> pharmatimeline::Result<()> {
    let base = load_config(common)?;
    let mut spec = match preset {
        Some(Preset::Default) => SynthSpec::default(),
        Some(Preset::OxfordCalibration) => SynthSpec::oxford_calibration(),
        None => base.synth.clone(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
    let ades = match &base.inputs.ades {
        Some(p) => pharmatimeline::lexicon::AdeLexicon::load(&base.resolve(p))?,
        None => bundled::ades(),
    };
    let corpus = generate(&spec, &ades)?;
    corpus.write_to(&dir)?;
    let run_cfg = RunConfig {
        seed: spec.seed,
        output_dir: "report".into(),
        synth: spec,
        ..RunConfig::default()
    };
    let cfg_path = dir.join("pharmatimeline.toml");
    std::fs::write(&cfg_path, run_cfg.to_toml()).map_err(|e| io_error(&cfg_path, e))?;
    println!(
        "{} patients ({} qualifying), {} documents -> {}",
        corpus.patients.len(),
        corpus.qualifying_count(),
        corpus.documents.len(),
        dir.display()
    );
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn dispatch(cli: Cli) -> pharmatimeline::Result<()> {
    match cli.command {
        Command::Synth { common, preset } => synth(&common, preset),
        Command::Extract(c) => stage(&c, Stage::Extract),
        Command::Episodes(c) => stage(&c, Stage::Episodes),
        Command::Adr(c) => stage(&c, Stage::Adr),
        Command::Prevalence(c) => stage(&c, Stage::Prevalence),
        Command::Stats(c) => stage(&c, Stage::Stats),
        Command::CompareSider(c) => stage(&c, Stage::CompareSider),
        Command::ValidateSample { common, score } => match score {
            Some(sheet) => {
                let m = score_worksheet(&sheet)?;
                println!(
                    "{}",
                    serde_json::to_string_pretty(&m).expect("metrics serialize")
                );
                Ok(())
            }
            None => stage(&common, Stage::ValidateSample),
        },
        Command::Run(c) => {
            let cfg = load_config(&c)?;
            let bundle = run_pipeline(&cfg)?;
            for w in &bundle.manifest.warnings {
                log::warn!("{w}");
            }
            let dir = cfg.output_path();
            println!(
                "cohort {} patients; report written to {}",
                bundle.cohort.len(),
                dir.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PHARMATIMELINE_LOG", "warn"))
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
