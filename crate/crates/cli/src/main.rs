//! `dystan`: preprocessing, synthetic data, cross-validated training,
//! ablation sweeps and report rendering.

mod data;
mod manifest;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use dystan::dataset::SynthConfig;
use dystan::model::Variant;

use run::RunConfig;

#[derive(Parser)]
#[command(name = "dystan", version, about = "Joint sedentary-activity and social-context recognition from IMU windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| format!("expected one of full, nsn, nb, na, cs, cbg; got `{s}`"))
}

#[derive(clap::Args)]
struct RunFlags {
    /// JSON run config with every field present; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Train folds concurrently.
    #[arg(long)]
    parallel_folds: bool,
    /// Keep each participant's windows inside one fold.
    #[arg(long)]
    group_by_participant: bool,
}

impl RunFlags {
    /// Config file (or defaults) with the flags applied on top.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.train.seed = self.seed;
        cfg.cv.parallel_folds |= self.parallel_folds;
        cfg.cv.group_by_participant |= self.group_by_participant;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Condition raw recordings into a window cache.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Keep sedentary OTHER windows in the cache.
        #[arg(long)]
        keep_other: bool,
    },
    /// Write a synthetic dual-label window cache.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Windows per joint class.
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        noise: f64,
        #[arg(long)]
        coupling: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Cross-validated training of one model variant.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        model: Variant,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Train the ablation variants on shared splits and tabulate them.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Variants to compare.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_value = "full,nsn,nb,na")]
        models: Vec<Variant>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Render a finished run from its artifacts.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { input, output, keep_other } => data::preprocess(&input, &output, keep_other),
        Command::Synth { out, per_class, noise, coupling, seed } => {
            let cfg = SynthConfig { samples_per_joint_class: per_class, noise_std: noise, coupling, seed };
            data::synth(&cfg, &out)
        }
        Command::Train { data, model, out, run } => {
            let mut cfg = run.resolve()?;
            cfg.model.variant = model;
            run::train(&data, &cfg, &out, "train").map(drop)
        }
        Command::Ablate { data, out, models, run } => run::ablate(&data, &run.resolve()?, &out, &models).map(drop),
        Command::Report { run, format } => {
            let artifacts = report::load_run(&run)?;
            match format {
                Format::Csv => print!("{}", report::render_csv(&artifacts)),
                Format::Text => print!("{}", report::render_text(&artifacts)),
            }
            Ok(())
        }
    }
}

/// Usage line of the subcommand named in `args`, or of the whole tool.
fn usage(args: &[String]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match args.get(1).and_then(|name| cmd.find_subcommand_mut(name)) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            eprintln!("\n{}", usage(&args));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<dystan::Error>().map_or(2, |d| d.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
