//! Simulation engine owned by the source-lab daemon. It holds the fiber
//! channel, compensator and count RNG, and is driven only through messages.

use chrono::Utc;
use pqn_core::channel::{delivered_state, FiberChannel};
use pqn_core::compensation::{compensator_unitary, optimize_compensation, ControllerSetting, OptimizerOptions};
use pqn_core::counting::{simulate_counts, CountRecord, DetectionModel, SourceConfig};
use pqn_core::{AnalyzerSetting, LocalUnitary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::sync::{mpsc, oneshot};

use crate::config::Config;
use crate::error::{NetError, NetResult};
use crate::protocol::ErrorCode;

enum PhysicsCmd {
    Arm { signal: AnalyzerSetting, idler: AnalyzerSetting },
    Count { duration_s: f64, reply: oneshot::Sender<Result<CountRecord, String>> },
}

#[derive(Clone)]
pub struct PhysicsHandle(mpsc::Sender<PhysicsCmd>);

fn gone() -> NetError {
    NetError::remote(ErrorCode::Internal, "simulation engine stopped")
}

impl PhysicsHandle {
    /// Tells the engine which analyzer settings the next count uses.
    pub async fn arm(&self, signal: AnalyzerSetting, idler: AnalyzerSetting) -> NetResult<()> {
        self.0.send(PhysicsCmd::Arm { signal, idler }).await.map_err(|_| gone())
    }

    pub async fn count(&self, duration_s: f64) -> NetResult<CountRecord> {
        let (tx, rx) = oneshot::channel();
        self.0.send(PhysicsCmd::Count { duration_s, reply: tx }).await.map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?.map_err(|e| NetError::remote(ErrorCode::NodeFailed, e))
    }
}

pub struct Physics {
    src: SourceConfig,
    channel: FiberChannel,
    compensator: LocalUnitary,
    model: DetectionModel,
    rng: ChaCha8Rng,
    armed: Option<(AnalyzerSetting, AnalyzerSetting)>,
}

impl Physics {
    /// Applies any configured pre-drift, then tunes the compensator once if
    /// asked to.
    pub fn from_config(cfg: &Config) -> NetResult<Self> {
        let src = cfg.source_config();
        let mut channel = cfg.fiber_channel()?;
        channel.advance_drift(cfg.channel.pre_drift_hr * 3600.0)?;
        let compensator = if cfg.source.compensate_on_start {
            let opts = OptimizerOptions { seed: cfg.source.seed, ..OptimizerOptions::default() };
            let report = optimize_compensation(&channel, &src, ControllerSetting::ZERO, &opts)?;
            if !report.converged {
                tracing::warn!(objective = report.objective_value, "compensation did not converge");
            }
            compensator_unitary(&report.setting)
        } else {
            LocalUnitary::identity()
        };
        Ok(Physics {
            model: cfg.detection_model()?,
            src,
            channel,
            compensator,
            rng: ChaCha8Rng::seed_from_u64(cfg.source.seed),
            armed: None,
        })
    }

    fn count(&mut self, duration_s: f64) -> Result<CountRecord, String> {
        let (signal, idler) = self.armed.ok_or("count requested before analyzers were set")?;
        let state = delivered_state(&self.src, &self.channel, &self.compensator).map_err(|e| e.to_string())?;
        let record = simulate_counts(&state, signal, idler, duration_s, &self.model, Utc::now(), &mut self.rng)
            .map_err(|e| e.to_string())?;
        self.channel.advance_drift(duration_s).map_err(|e| e.to_string())?;
        Ok(record)
    }

    /// Returns the handle and the engine's event loop.
    pub fn start(mut self) -> (PhysicsHandle, impl std::future::Future<Output = ()> + Send) {
        let (tx, mut rx) = mpsc::channel(16);
        let run = async move {
            while let Some(cmd) = rx.recv().await {
                match cmd {
                    PhysicsCmd::Arm { signal, idler } => self.armed = Some((signal, idler)),
                    PhysicsCmd::Count { duration_s, reply } => {
                        let _ = reply.send(self.count(duration_s));
                    }
                }
            }
        };
        (PhysicsHandle(tx), run)
    }
}
