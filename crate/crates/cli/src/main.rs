use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pqn_core::chsh::{linear_grid, sweep_angular_difference, write_sweep_csv, SweepConfig};
use pqn_core::compensation::{compensate_unitary, ControllerSetting, OptimizerOptions};
use pqn_core::polarization::{random_unitary, werner_mix};
use pqn_core::tomography::{simulate_tomography, tomography_linear_inversion, write_tomography_csv};
use pqn_net::client::{new_session_id, KioskClient};
use pqn_net::log::{read_log, LogFilter};
use pqn_net::{Config, NetError, SourceOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "pqn", version, about = "Polarization-entanglement network nodes and simulations")]
struct Cli {
    /// TOML configuration file; falls back to $PQN_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the source-lab daemon until interrupted.
    SourceNode,
    /// Run the closet waveplate daemon until interrupted.
    ClosetNode,
    /// Run the kiosk gateway until interrupted.
    Gateway,
    /// Submit one CHSH session through the gateway and print the result.
    Run {
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        #[arg(long = "a-prime", allow_negative_numbers = true)]
        a_prime: f64,
        #[arg(long)]
        integration: Option<f64>,
    },
    /// Simulated S against the analyzer angle difference.
    Sweep {
        #[arg(long)]
        v: f64,
        #[arg(long, default_value_t = 91)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Azimuth drift of every wavelength channel.
    DriftTrace {
        #[arg(long)]
        hours: f64,
        #[arg(long, default_value_t = 60.0)]
        sample_s: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune the controller against a random fiber rotation.
    Compensate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulated two-qubit tomography of the source.
    Tomography {
        #[arg(long, default_value_t = 36)]
        settings: usize,
        #[arg(long, default_value_t = 10.0)]
        dwell: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the entries of a results log, one JSON object per line.
    ReplayLog {
        path: PathBuf,
        #[arg(long)]
        live: Option<bool>,
        #[arg(long)]
        session: Option<u64>,
    },
}

enum Failure {
    Config(String),
    Network(String),
    Convergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Network(_) => 3,
            Failure::Convergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Network(m) | Failure::Convergence(m) => m,
        }
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Config(_) | NetError::Core(_) => Failure::Config(e.to_string()),
            _ => Failure::Network(e.to_string()),
        }
    }
}

impl From<pqn_core::Error> for Failure {
    fn from(e: pqn_core::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

async fn until_interrupted(handle: pqn_net::DaemonHandle) -> Result<(), Failure> {
    tracing::info!(addr = %handle.local_addr(), "listening");
    tokio::signal::ctrl_c().await.map_err(|e| Failure::Network(e.to_string()))?;
    drop(handle);
    Ok(())
}

async fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = Config::load(cli.config.as_deref())?;
    cfg.validate()?;
    match cli.command {
        Command::SourceNode => until_interrupted(pqn_net::spawn_source(&cfg, SourceOptions::default()).await?).await,
        Command::ClosetNode => until_interrupted(pqn_net::spawn_closet(&cfg).await?).await,
        Command::Gateway => until_interrupted(pqn_net::spawn_gateway(&cfg).await?).await,
        Command::Run { a, a_prime, integration } => {
            let mut client = KioskClient::connect(cfg.kiosk.listen_addr, &cfg.nodes.token).await?;
            let sid = new_session_id();
            let integration = integration.unwrap_or(cfg.source.integration_s);
            let result = client
                .run_chsh(a, a_prime, integration, sid, |step, of| eprintln!("step {step}/{of}"))
                .await?;
            println!("{}", serde_json::to_string(&json!({ "session_id": sid, "result": result })).expect("serializable"));
            Ok(())
        }
        Command::Sweep { v, steps, out } => {
            let mut source = cfg.source_config();
            source.visibility = v;
            let sweep = SweepConfig {
                source,
                transmission: cfg.fiber_channel()?.transmission(),
                integration_s: cfg.source.integration_s,
                seed: cfg.kiosk.sweep_seed,
            };
            let points = sweep_angular_difference(&sweep, &linear_grid(-90.0, 90.0, steps))?;
            write_sweep_csv(create(&out)?, &points)?;
            Ok(())
        }
        Command::DriftTrace { hours, sample_s, out } => {
            let mut ch = cfg.fiber_channel()?;
            let trace = ch.drift_trace(hours, sample_s)?;
            pqn_core::channel::write_drift_csv(create(&out)?, &trace)?;
            Ok(())
        }
        Command::Compensate { seed } => {
            let fiber = random_unitary(&mut ChaCha8Rng::seed_from_u64(seed));
            let opts = OptimizerOptions { seed, ..OptimizerOptions::default() };
            let report = compensate_unitary(&fiber, &cfg.source_config(), ControllerSetting::ZERO, &opts)?;
            println!("{}", serde_json::to_string(&report).expect("serializable"));
            if report.converged {
                Ok(())
            } else {
                Err(Failure::Convergence(format!("objective {:.3e} above tolerance", report.objective_value)))
            }
        }
        Command::Tomography { settings, dwell, seed, out } => {
            if settings != 36 {
                return Err(Failure::Config(format!("only the 36-setting scheme is supported, got {settings}")));
            }
            let src = cfg.source_config();
            src.validate()?;
            let state = werner_mix(&src.target_state, src.visibility)?;
            let records = simulate_tomography(&state, src.pair_rate_cps, dwell, &mut ChaCha8Rng::seed_from_u64(seed));
            write_tomography_csv(create(&out)?, &records)?;
            let t = tomography_linear_inversion(&records, &src.target_state, false)?;
            println!(
                "{}",
                json!({ "fidelity": t.fidelity_to_target, "min_eigenvalue": t.min_eigenvalue, "settings": t.settings_used })
            );
            Ok(())
        }
        Command::ReplayLog { path, live, session } => {
            let filter = LogFilter { live, session_id: session };
            for e in read_log(&path, &filter)? {
                println!("{}", serde_json::to_string(&e).expect("serializable"));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match rt.block_on(execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
