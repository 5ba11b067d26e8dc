//! TOML configuration with `[source]`, `[channel]`, `[nodes]` and `[kiosk]`
//! sections. Every key is optional.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use pqn_core::channel::{DriftParams, FiberChannel};
use pqn_core::counting::{DetectionModel, SourceConfig};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, NetResult};
use crate::motion::MotionModel;

pub const CONFIG_ENV: &str = "PQN_CONFIG";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub source: SourceSection,
    pub channel: ChannelSection,
    pub nodes: NodesSection,
    pub kiosk: KioskSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    /// Coincidences per second with both arms detected in the lab. It is not
    /// known whether the published figure was taken through the deployed
    /// loop; the network path multiplies it by the link transmission.
    pub pair_rate_cps: f64,
    pub heralding_efficiency: f64,
    pub visibility: f64,
    pub integration_s: f64,
    pub seed: u64,
    pub log_path: PathBuf,
    pub compensate_on_start: bool,
    /// Adds accidental coincidences with this window when set, seconds.
    pub accidental_window_s: Option<f64>,
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            pair_rate_cps: 3000.0,
            heralding_efficiency: 0.05,
            visibility: 0.884,
            integration_s: 10.0,
            seed: 1,
            log_path: PathBuf::from("pqn-results.jsonl"),
            compensate_on_start: true,
            accidental_window_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub loss_db: f64,
    pub wavelengths_nm: Vec<f64>,
    pub drift_bound_deg_per_hr: f64,
    pub drift_rate_sd_deg_per_hr: f64,
    pub drift_relaxation_hr: f64,
    pub ellipticity_sd_deg: f64,
    pub ellipticity_bound_deg: f64,
    pub seed: u64,
    /// Drift accumulated before the source node starts, hours.
    pub pre_drift_hr: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let p = DriftParams::default();
        ChannelSection {
            loss_db: FiberChannel::DEFAULT_LOSS_DB,
            wavelengths_nm: FiberChannel::DEFAULT_WAVELENGTHS_NM.to_vec(),
            drift_bound_deg_per_hr: FiberChannel::DEFAULT_DRIFT_BOUND,
            drift_rate_sd_deg_per_hr: p.rate_sd_deg_per_hr,
            drift_relaxation_hr: p.rate_relaxation_hr,
            ellipticity_sd_deg: p.ellipticity_sd_deg,
            ellipticity_bound_deg: p.ellipticity_bound_deg,
            seed: 7,
            pre_drift_hr: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodesSection {
    pub source_addr: SocketAddr,
    pub closet_addr: SocketAddr,
    /// Shared token checked in HELLO. Plain TCP on a trusted network; there
    /// is no transport security.
    pub token: String,
    pub step_timeout_s: f64,
    pub motion_speed_deg_per_s: f64,
    pub settle_s: f64,
    /// Multiplies every simulated wait before sleeping; 0 runs at full speed
    /// while keeping simulated exposure times.
    pub time_scale: f64,
}

impl Default for NodesSection {
    fn default() -> Self {
        let m = MotionModel::default();
        NodesSection {
            source_addr: "127.0.0.1:7401".parse().expect("literal address"),
            closet_addr: "127.0.0.1:7402".parse().expect("literal address"),
            token: "pqn-local".into(),
            step_timeout_s: 30.0,
            motion_speed_deg_per_s: m.speed_deg_per_s,
            settle_s: m.settle_s,
            time_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KioskSection {
    pub listen_addr: SocketAddr,
    /// FRAME samples per second; 0 disables the stream.
    pub frame_hz: f64,
    pub log_path: PathBuf,
    /// Stored sweep for fallback mode; computed at startup when absent.
    pub sweep_csv: Option<PathBuf>,
    pub sweep_seed: u64,
    /// Simulated visitor turning the wheel, deg/s.
    pub wheel_deg_per_s: f64,
    pub adc_bits: u32,
    /// Read noise as a fraction of ADC full scale.
    pub noise_fraction: f64,
}

impl Default for KioskSection {
    fn default() -> Self {
        KioskSection {
            listen_addr: "127.0.0.1:7400".parse().expect("literal address"),
            frame_hz: 20.0,
            log_path: PathBuf::from("pqn-fallback.jsonl"),
            sweep_csv: None,
            sweep_seed: 5,
            wheel_deg_per_s: 15.0,
            adc_bits: 10,
            noise_fraction: 0.0,
        }
    }
}

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Config(msg.into())
}

impl Config {
    pub fn from_toml(text: &str) -> NetResult<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> NetResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Explicit path, else `$PQN_CONFIG`, else built-in defaults.
    pub fn load(path: Option<&Path>) -> NetResult<Self> {
        match path {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::from_file(Path::new(&p)),
                None => Ok(Config::default()),
            },
        }
    }

    pub fn validate(&self) -> NetResult<()> {
        self.source_config().validate().map_err(|e| bad(e.to_string()))?;
        self.fiber_channel()?;
        let s = &self.source;
        if !(s.integration_s > 0.0 && s.integration_s.is_finite()) {
            return Err(bad("source.integration_s must be positive"));
        }
        if let Some(w) = s.accidental_window_s {
            if !(w > 0.0) {
                return Err(bad("source.accidental_window_s must be positive"));
            }
        }
        let c = &self.channel;
        if !(c.pre_drift_hr >= 0.0) {
            return Err(bad("channel.pre_drift_hr must be non-negative"));
        }
        if !(c.drift_relaxation_hr > 0.0 && c.drift_rate_sd_deg_per_hr >= 0.0) {
            return Err(bad("channel drift parameters out of range"));
        }
        if !(c.ellipticity_sd_deg >= 0.0 && c.ellipticity_bound_deg >= 0.0) {
            return Err(bad("channel ellipticity parameters out of range"));
        }
        let n = &self.nodes;
        if !(n.step_timeout_s > 0.0) {
            return Err(bad("nodes.step_timeout_s must be positive"));
        }
        if !(n.motion_speed_deg_per_s > 0.0 && n.settle_s >= 0.0) {
            return Err(bad("nodes motion parameters out of range"));
        }
        if !(n.time_scale >= 0.0 && n.time_scale.is_finite()) {
            return Err(bad("nodes.time_scale must be non-negative"));
        }
        let k = &self.kiosk;
        if !(k.frame_hz >= 0.0 && k.frame_hz <= 1000.0) {
            return Err(bad("kiosk.frame_hz must be within [0, 1000]"));
        }
        if !(1..=16).contains(&k.adc_bits) {
            return Err(bad("kiosk.adc_bits must be within 1..=16"));
        }
        if !(k.noise_fraction >= 0.0 && k.wheel_deg_per_s.is_finite()) {
            return Err(bad("kiosk station parameters out of range"));
        }
        Ok(())
    }

    pub fn source_config(&self) -> SourceConfig {
        SourceConfig {
            pair_rate_cps: self.source.pair_rate_cps,
            heralding_efficiency: self.source.heralding_efficiency,
            visibility: self.source.visibility,
            ..SourceConfig::default()
        }
    }

    pub fn drift_params(&self) -> DriftParams {
        let c = &self.channel;
        DriftParams {
            rate_sd_deg_per_hr: c.drift_rate_sd_deg_per_hr,
            rate_relaxation_hr: c.drift_relaxation_hr,
            ellipticity_sd_deg: c.ellipticity_sd_deg,
            ellipticity_bound_deg: c.ellipticity_bound_deg,
            ..DriftParams::default()
        }
    }

    pub fn fiber_channel(&self) -> NetResult<FiberChannel> {
        let c = &self.channel;
        let ch = FiberChannel::new(c.loss_db, &c.wavelengths_nm, c.drift_bound_deg_per_hr, c.seed)
            .map_err(|e| bad(e.to_string()))?;
        Ok(ch.with_params(self.drift_params()))
    }

    pub fn detection_model(&self) -> NetResult<DetectionModel> {
        let m = DetectionModel::deployed(&self.source_config(), self.fiber_channel()?.transmission());
        Ok(match self.source.accidental_window_s {
            Some(w) => m.with_accidentals(w),
            None => m,
        })
    }

    pub fn motion_model(&self) -> MotionModel {
        MotionModel { speed_deg_per_s: self.nodes.motion_speed_deg_per_s, settle_s: self.nodes.settle_s }
    }

    /// Configuration suited to loopback tests: ephemeral ports, no sleeps,
    /// no frame stream, logs under `dir`.
    pub fn loopback(dir: &Path) -> Self {
        let mut cfg = Config::default();
        let any: SocketAddr = "127.0.0.1:0".parse().expect("literal address");
        cfg.nodes.source_addr = any;
        cfg.nodes.closet_addr = any;
        cfg.kiosk.listen_addr = any;
        cfg.nodes.time_scale = 0.0;
        cfg.kiosk.frame_hz = 0.0;
        cfg.source.log_path = dir.join("results.jsonl");
        cfg.kiosk.log_path = dir.join("fallback.jsonl");
        cfg
    }
}
