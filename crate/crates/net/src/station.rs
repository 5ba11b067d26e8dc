//! Simulated public analyzer station behind the gateway: a visitor turns the
//! wheel, the four photoresistors are sampled, and the reconstructed angle is
//! attached to each FRAME once calibration is complete.

use pqn_core::analyzer::{normalize, simulate_frame, update_calibration, CalibrationState, Estimator, StationModel};
use pqn_core::AngleDeg;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::config::KioskSection;
use crate::protocol::{CalibrateAction, ErrorCode, ProtocolMessage};

/// Estimator used for the angle attached to frames.
pub const FRAME_ESTIMATOR: Estimator = Estimator::FullFrame;

pub struct Station {
    model: StationModel,
    cal: CalibrationState,
    calibrating: bool,
    wheel_deg: f64,
    wheel_speed: f64,
    rng: ChaCha8Rng,
}

impl Station {
    pub fn new(k: &KioskSection) -> Self {
        let model = StationModel { adc_bits: k.adc_bits, ..StationModel::default() }.with_noise_fraction(k.noise_fraction);
        Station {
            model,
            cal: CalibrationState::default(),
            calibrating: false,
            wheel_deg: 0.0,
            wheel_speed: k.wheel_deg_per_s,
            rng: ChaCha8Rng::seed_from_u64(k.sweep_seed),
        }
    }

    /// Advances the wheel by `dt_s` and samples one FRAME.
    pub fn sample(&mut self, dt_s: f64) -> Option<ProtocolMessage> {
        self.wheel_deg = (self.wheel_deg + self.wheel_speed * dt_s).rem_euclid(360.0);
        let frame = match simulate_frame(AngleDeg::new(self.wheel_deg), &self.model, &mut self.rng) {
            Ok(f) => f,
            Err(e) => {
                tracing::warn!(error = %e, "station sample failed");
                return None;
            }
        };
        if self.calibrating {
            self.cal = update_calibration(&self.cal, &frame);
        }
        let angle_deg = if self.cal.is_ready() {
            normalize(&self.cal, &frame).ok().map(|p| p.angle(FRAME_ESTIMATOR).degrees())
        } else {
            None
        };
        Some(ProtocolMessage::Frame { frame, angle_deg })
    }

    pub fn calibrate(&mut self, action: CalibrateAction) -> ProtocolMessage {
        match action {
            CalibrateAction::Reset => {
                self.cal.reset();
                self.calibrating = true;
                ProtocolMessage::Calibrate { action: CalibrateAction::Reset }
            }
            CalibrateAction::Done => {
                self.calibrating = false;
                if self.cal.is_ready() {
                    ProtocolMessage::Calibrate { action: CalibrateAction::Done }
                } else {
                    ProtocolMessage::error(ErrorCode::Rejected, "calibration incomplete: turn the wheel a full circle")
                }
            }
        }
    }

    /// Event loop: samples at `hz` (none when 0) and serves calibration
    /// commands.
    pub async fn run(
        mut self,
        hz: f64,
        frames: broadcast::Sender<ProtocolMessage>,
        mut cmds: mpsc::Receiver<(CalibrateAction, oneshot::Sender<ProtocolMessage>)>,
    ) {
        let period = (hz > 0.0).then(|| std::time::Duration::from_secs_f64(1.0 / hz));
        let mut ticker = tokio::time::interval(period.unwrap_or(std::time::Duration::from_secs(3600)));
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                _ = ticker.tick(), if period.is_some() => {
                    let dt = period.map_or(0.0, |p| p.as_secs_f64());
                    if let Some(m) = self.sample(dt) {
                        let _ = frames.send(m);
                    }
                }
                cmd = cmds.recv() => match cmd {
                    Some((action, reply)) => {
                        let _ = reply.send(self.calibrate(action));
                    }
                    None => break,
                },
            }
        }
    }
}
