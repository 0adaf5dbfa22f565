use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fieldshift_cli::commands::{self, ReconInput, Run};
use fieldshift_cli::CliError;

#[derive(Parser)]
#[command(
    name = "fieldshift",
    version,
    about = "Field-strength transfer MRI reconstruction pipeline"
)]
struct Cli {
    /// JSON run configuration; defaults to the run directory's snapshot.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Global seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Continue training stages from their checkpoints and skip finished reconstructions.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic 1.5T/0.5T dataset.
    GenData,
    /// Train the 1.5T to 0.5T transport map.
    TrainTeacher,
    /// Push the 1.5T training images through the teacher.
    GenPairs,
    /// Train the joint score network (or the single-image baseline).
    TrainStudent {
        #[arg(long)]
        baseline: bool,
    },
    /// Reconstruct 1.5T images from 0.5T k-space.
    Reconstruct {
        #[arg(long, default_value = "meta")]
        method: String,
        /// Acceleration factor; defaults to every factor in the configuration.
        #[arg(long)]
        acceleration: Option<f64>,
        /// Saved acquisition directory to reconstruct instead of the test set.
        #[arg(long, conflicts_with = "image")]
        input: Option<PathBuf>,
        /// 0.5T image (.npy) to acquire and reconstruct instead of the test set.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Draw unconditional samples from the joint score network.
    SamplePrior {
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Check the transport existence and uniqueness claims on generated instances.
    VerifyTheorem,
    /// Score every reconstruction against the 1.5T references.
    Eval,
    /// Summarize the run as markdown.
    Report,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let run = Run::open(&cli.out, cli.config.as_deref(), cli.seed, cli.resume)?;
    match cli.command {
        Command::GenData => commands::gen_data(&run),
        Command::TrainTeacher => commands::train_teacher_stage(&run),
        Command::GenPairs => commands::gen_pairs_stage(&run),
        Command::TrainStudent { baseline } => commands::train_student_stage(&run, baseline),
        Command::Reconstruct {
            method,
            acceleration,
            input,
            image,
        } => {
            let input = match (input, image) {
                (Some(dir), _) => ReconInput::Acquisition(dir),
                (None, Some(file)) => ReconInput::Image(file, acceleration.unwrap_or(1.0)),
                (None, None) => ReconInput::TestSet(
                    acceleration.map_or_else(|| run.config.mri.accelerations.clone(), |r| vec![r]),
                ),
            };
            commands::reconstruct(&run, &method, input)
        }
        Command::SamplePrior { count } => commands::sample_prior_stage(&run, count),
        Command::VerifyTheorem => commands::verify_theorem_stage(&run),
        Command::Eval => commands::eval_stage(&run),
        Command::Report => commands::report_stage(&run),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
