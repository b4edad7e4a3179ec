use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lungsed_cli::{
    cmd_evaluate, cmd_info, cmd_interpret, cmd_predict, cmd_synth, cmd_train, CliError, EvaluateArgs, InfoArgs,
    InterpretArgs, PredictArgs, SynthArgs, TrainArgs,
};

/// Lung sound event detection with a multi-branch dilated convolution network.
#[derive(Debug, Parser)]
#[command(name = "lungsed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Train a model on a corpus manifest.
    Train(TrainArgs),
    /// Per-window probabilities and events for WAV files.
    Predict(PredictArgs),
    /// Event-level PPv, Se and F1 of predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Input attribution and branch conductance for one window.
    Interpret(InterpretArgs),
    /// Architecture summary of a checkpoint.
    Info(InfoArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => {
            let o = cmd_synth(&a)?;
            println!("{} recordings, manifest {}", o.recordings, o.manifest.display());
            println!("sha256 {}", o.digest);
        }
        Command::Train(a) => {
            let o = cmd_train(&a)?;
            println!(
                "checkpoint {} (epoch {} of {})",
                o.checkpoint.display(),
                o.history.selected_epoch,
                o.history.epochs.len()
            );
        }
        Command::Predict(a) => {
            for r in cmd_predict(&a)? {
                println!("{}: {} windows, {} events", r.recording_id, r.windows.len(), r.events.len());
            }
        }
        Command::Evaluate(a) => {
            let m = cmd_evaluate(&a)?.aggregate;
            println!(
                "tp {} fp {} fn {} ppv {:.4} se {:.4} f1 {:.4}",
                m.tp, m.fp, m.fn_, m.ppv, m.se, m.f1
            );
        }
        Command::Interpret(a) => {
            let r = cmd_interpret(&a)?;
            println!(
                "{} window {}: probability {:.4}, {} salient cells{}",
                r.recording_id,
                r.window_index,
                r.probability,
                r.salient.len(),
                if r.negligible { " (attributions negligible)" } else { "" }
            );
        }
        Command::Info(a) => {
            let info = cmd_info(&a)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&info).expect("info serializes"));
            } else {
                print!("{info}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
