use clap::{Parser, Subcommand};
use drp_core::experiment::{run_experiment, run_synth, run_theory, ExperimentError};
use drp_core::priors::protocol::{serve_peer, Fault, PeerBehavior};
use std::io::{self, BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Restoration-prior solver for linear inverse problems.
///
/// Log verbosity is read from DRP_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "drp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one or more experiment configs and write their run directories.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Number of configs solved concurrently.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
    },
    /// Write a synthetic image corpus.
    Synth { spec: PathBuf },
    /// Check the convergence theory on a config's analytic prior.
    Theory { config: PathBuf },
    /// Serve the test restorer on stdin/stdout. Without options it echoes
    /// every tensor back bit for bit.
    ProtocolEcho {
        /// Reply with `scale * s + offset` (f32 arithmetic) instead.
        #[arg(long, allow_negative_numbers = true)]
        scale: Option<f32>,
        #[arg(long, allow_negative_numbers = true)]
        offset: Option<f32>,
        /// Misbehave instead: wrong-shape, bad-magic, truncate, crash,
        /// error-status, hang or bad-handshake.
        #[arg(long)]
        fault: Option<Fault>,
    },
}

fn report(context: &str, err: &ExperimentError) -> u8 {
    eprintln!("drp: {context}: {err}");
    err.exit_code() as u8
}

fn run_all(configs: &[PathBuf], jobs: usize) -> u8 {
    let next = AtomicUsize::new(0);
    let codes = Mutex::new(vec![0u8; configs.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = configs.get(i) else { break };
                let code = match run_experiment(path) {
                    Ok(summary) => {
                        println!(
                            "{}: {} iterations, psnr {:.2} -> {:.2} dB",
                            path.display(),
                            summary.iterations,
                            summary.input_psnr,
                            summary.output_psnr
                        );
                        0
                    }
                    Err(e) => report(&path.display().to_string(), &e),
                };
                codes.lock().expect("no panics while held")[i] = code;
            });
        }
    });
    // the first failing config, in command-line order, decides the exit code
    let codes = codes.into_inner().expect("no panics while held");
    codes.into_iter().find(|&c| c != 0).unwrap_or(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRP_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { configs, jobs } => run_all(&configs, jobs as usize),
        Command::Synth { spec } => match run_synth(&spec) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                0
            }
            Err(e) => report(&spec.display().to_string(), &e),
        },
        Command::Theory { config } => match run_theory(&config) {
            Ok(r) => {
                println!("{}", r.to_json());
                0
            }
            Err(e) => report(&config.display().to_string(), &e),
        },
        Command::ProtocolEcho { scale, offset, fault } => {
            let behavior = match (fault, scale, offset) {
                (Some(f), _, _) => PeerBehavior::Faulty(f),
                (None, None, None) => PeerBehavior::Echo,
                (None, scale, offset) => PeerBehavior::Affine {
                    scale: scale.unwrap_or(1.0),
                    offset: offset.unwrap_or(0.0),
                },
            };
            let mut reader = BufReader::new(io::stdin().lock());
            let mut writer = BufWriter::new(io::stdout().lock());
            match serve_peer(&mut reader, &mut writer, behavior) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("drp: protocol-echo: {e}");
                    5
                }
            }
        }
    };
    ExitCode::from(code)
}
