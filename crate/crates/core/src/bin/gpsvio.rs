use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gpsvio::cli;
use gpsvio::error::Error;
use gpsvio::evaluation::Alignment;

#[derive(Parser)]
#[command(
    name = "gpsvio",
    version,
    about = "GPS-aided visual-inertial odometry with online yaw calibration"
)]
struct Args {
    /// Configuration file (`key=value` lines or JSON).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set sim.seed=3`.
    #[arg(short, long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate sensor streams and groundtruth into the output directory.
    Simulate,
    /// Run the filter on streams written by `simulate`.
    Run {
        /// Directory holding the stream files.
        input: PathBuf,
    },
    /// Run the filter once per initial yaw error.
    Sweep,
    /// Observability rank along the trajectory or for a file of states.
    Observability {
        #[arg(long)]
        states: Option<PathBuf>,
    },
    /// Absolute trajectory error of an estimate against groundtruth.
    Eval {
        estimate: PathBuf,
        groundtruth: PathBuf,
        #[arg(long, value_enum, default_value_t = Align::None)]
        align: Align,
        /// Calibration trace to score against `--psi-true-deg`.
        #[arg(long, requires = "psi_true_deg")]
        calib: Option<PathBuf>,
        #[arg(long)]
        psi_true_deg: Option<f64>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Align {
    None,
    Yaw,
    Se3,
}

fn run(args: Args) -> Result<(), Error> {
    let cfg = cli::load_config(args.config.as_deref(), &args.set)?;
    match args.command {
        Command::Simulate => {
            let s = cli::cmd_simulate(&cfg)?;
            println!(
                "{}: {} imu, {} frames, {} observations, {} gps",
                s.dir.display(),
                s.imu_samples,
                s.frames,
                s.observations,
                s.gps_fixes
            );
        }
        Command::Run { input } => {
            let s = cli::cmd_run(&cfg, &input)?;
            let st = &s.output.stats;
            println!(
                "{}: {} records, gps {} accepted / {} rejected / {} deferred",
                s.dir.display(),
                s.output.records.len(),
                st.gps_accepted,
                st.gps_rejected,
                st.gps_deferred
            );
            if let Some(r) = s.output.records.last() {
                println!(
                    "final psi {:.4} deg, sigma {:.4} deg",
                    r.psi.to_degrees(),
                    r.var_psi.max(0.0).sqrt().to_degrees()
                );
            }
        }
        Command::Sweep => {
            println!("initial_deg  final_deg  sigma_deg  converged_s");
            for r in cli::cmd_sweep(&cfg)? {
                if r.diverged {
                    println!("{:>11.1}  diverged", r.initial_error.to_degrees());
                    continue;
                }
                let conv = r.convergence_time.map_or("never".to_string(), |t| format!("{t:.1}"));
                println!(
                    "{:>11.1}  {:>9.3}  {:>9.3}  {:>11}",
                    r.initial_error.to_degrees(),
                    r.final_error.to_degrees(),
                    r.final_sigma.to_degrees(),
                    conv
                );
            }
        }
        Command::Observability { states } => {
            let rows = cli::cmd_observability(&cfg, states.as_deref())?;
            for r in &rows {
                let d = &r.report;
                println!(
                    "t {:7.2}  rank {:2}  null {}  translation_null {}  psi_observable {}  |v_h| {:.3}",
                    r.t, d.rank, d.null_dim, d.translation_null, d.psi_observable, d.horizontal_speed
                );
            }
        }
        Command::Eval {
            estimate,
            groundtruth,
            align,
            calib,
            psi_true_deg,
            out,
        } => {
            let alignment = match align {
                Align::None => Alignment::None,
                Align::Yaw => Alignment::YawTranslation,
                Align::Se3 => Alignment::Se3,
            };
            let calib = calib.as_deref().zip(psi_true_deg.map(f64::to_radians));
            let report = cli::cmd_eval(&estimate, &groundtruth, alignment, calib)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(path) = out {
                gpsvio::io::write_text(&path, &text)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
