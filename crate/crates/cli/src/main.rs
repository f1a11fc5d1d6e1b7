mod commands;

use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use commands::{CampaignArgs, GenArgs, MetricsArgs, ServeLabelerArgs, ServeStubArgs, StudyArgs};

#[derive(Parser)]
#[command(name = "capsynth", version, about = "Text CAPTCHA synthesis, evaluation and active-learning campaigns")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a labeled imitation dataset from a scheme.
    Gen(GenArgs),
    /// Print the scheme config of a built-in scheme (`1`..`12` or `weibo`).
    Preset {
        name: String,
    },
    /// Compare real, imitation and synthetic populations group by group.
    Metrics(MetricsArgs),
    /// Train and test a recognizer on each mechanism-study preset.
    Study(StudyArgs),
    /// Run an active transfer-learning campaign.
    Campaign(CampaignArgs),
    /// Serve the labeling service.
    ServeLabeler(ServeLabelerArgs),
    /// Serve the built-in stub adapter over the adapter protocol.
    ServeStub(ServeStubArgs),
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_env("CAPSYNTH_LOG").unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Preset { name } => commands::preset(&name),
        Command::Metrics(a) => commands::metrics(a),
        Command::Study(a) => commands::study(a),
        Command::Campaign(a) => commands::campaign(a),
        Command::ServeLabeler(a) => commands::serve_labeler(a),
        Command::ServeStub(a) => commands::serve_stub(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
