//! Source rates and Poisson coincidence counting.

use chrono::{DateTime, Utc};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{make_psi_plus, projection_probability, AnalyzerSetting, Port, TwoQubitState};

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    /// Coincidence rate with both arms detected locally, counts/s. Whether the
    /// lab figure was taken through the deployed loop is not known; the
    /// network path multiplies this by the link transmission.
    pub pair_rate_cps: f64,
    pub heralding_efficiency: f64,
    /// Werner visibility of the emitted state.
    pub visibility: f64,
    pub target_state: TwoQubitState,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pair_rate_cps: 3000.0,
            heralding_efficiency: 0.05,
            visibility: 0.884,
            target_state: make_psi_plus(),
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate_cps > 0.0) {
            return Err(Error::Domain("pair rate must be positive".into()));
        }
        if !(self.heralding_efficiency > 0.0 && self.heralding_efficiency <= 1.0) {
            return Err(Error::Domain("heralding efficiency must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::Domain("visibility must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// How commanded signal-analyzer angles map onto the photon's frame.
///
/// On the deployed path the library analyzer sees the polarization through
/// one extra coordinate reflection, so a commanded angle `a` projects onto
/// linear polarization `−a`. With the +22.5° offset rule this gives
/// E(a, b) = −v·cos 2(b − a), which is what makes the violation peak at an
/// angular difference of 45°.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalFrame {
    Direct,
    Mirrored,
}

impl SignalFrame {
    pub fn physical(self, commanded: &AnalyzerSetting) -> AnalyzerSetting {
        match self {
            SignalFrame::Direct => *commanded,
            SignalFrame::Mirrored => AnalyzerSetting { angle: -commanded.angle, port: commanded.port },
        }
    }
}

/// Everything needed to turn Born-rule probabilities into count means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionModel {
    pub pair_rate_cps: f64,
    pub heralding_efficiency: f64,
    /// Signal-arm transmission (1 for a local measurement).
    pub transmission: f64,
    pub signal_frame: SignalFrame,
    /// Coincidence window for accidental pairs; `None` disables accidentals.
    pub accidental_window_s: Option<f64>,
}

impl DetectionModel {
    pub const DEFAULT_WINDOW_S: f64 = 1e-9;

    /// Signal photon through the deployed loop to the library analyzer.
    pub fn deployed(src: &SourceConfig, transmission: f64) -> Self {
        DetectionModel {
            pair_rate_cps: src.pair_rate_cps,
            heralding_efficiency: src.heralding_efficiency,
            transmission,
            signal_frame: SignalFrame::Mirrored,
            accidental_window_s: None,
        }
    }

    /// Both photons analyzed in the source lab.
    pub fn local(src: &SourceConfig) -> Self {
        DetectionModel {
            pair_rate_cps: src.pair_rate_cps,
            heralding_efficiency: src.heralding_efficiency,
            transmission: 1.0,
            signal_frame: SignalFrame::Direct,
            accidental_window_s: None,
        }
    }

    pub fn with_accidentals(mut self, window_s: f64) -> Self {
        self.accidental_window_s = Some(window_s);
        self
    }

    /// Born-rule probability of the commanded outcome.
    pub fn outcome_probability(&self, state: &TwoQubitState, signal: &AnalyzerSetting, idler: &AnalyzerSetting) -> f64 {
        projection_probability(state, &self.signal_frame.physical(signal), idler)
    }

    /// Expected (coincidences, singles_signal, singles_idler) rates in counts/s.
    pub fn expected_rates(&self, state: &TwoQubitState, signal: &AnalyzerSetting, idler: &AnalyzerSetting) -> (f64, f64, f64) {
        let p = self.outcome_probability(state, signal, idler);
        let flip = |s: &AnalyzerSetting| AnalyzerSetting {
            angle: s.angle,
            port: if s.port == Port::Transmitted { Port::Reflected } else { Port::Transmitted },
        };
        // marginal port probabilities
        let p_s = p + self.outcome_probability(state, signal, &flip(idler));
        let p_i = p + self.outcome_probability(state, &flip(signal), idler);
        let emitted = self.pair_rate_cps / self.heralding_efficiency;
        let singles_s = emitted * self.transmission * p_s;
        let singles_i = emitted * p_i;
        let mut coinc = self.pair_rate_cps * self.transmission * p;
        if let Some(window) = self.accidental_window_s {
            coinc += singles_s * singles_i * window;
        }
        (coinc, singles_s, singles_i)
    }
}

/// Raw output of one timed coincidence measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub signal_setting: AnalyzerSetting,
    pub idler_setting: AnalyzerSetting,
    pub duration_s: f64,
    pub coincidences: u64,
    pub singles_signal: u64,
    pub singles_idler: u64,
    pub wall_time: DateTime<Utc>,
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive mean");
    let x: f64 = d.sample(rng);
    x as u64
}

/// Draws one Poisson count record for the given settings.
pub fn simulate_counts<R: Rng + ?Sized>(
    state: &TwoQubitState,
    signal_setting: AnalyzerSetting,
    idler_setting: AnalyzerSetting,
    duration_s: f64,
    model: &DetectionModel,
    wall_time: DateTime<Utc>,
    rng: &mut R,
) -> Result<CountRecord> {
    if !(duration_s > 0.0) {
        return Err(Error::Domain(format!("duration {duration_s} s must be positive")));
    }
    let (c, s, i) = model.expected_rates(state, &signal_setting, &idler_setting);
    // fixed draw order keeps records reproducible
    let coincidences = poisson(c * duration_s, rng);
    let singles_signal = poisson(s * duration_s, rng);
    let singles_idler = poisson(i * duration_s, rng);
    Ok(CountRecord {
        signal_setting,
        idler_setting,
        duration_s,
        coincidences,
        singles_signal,
        singles_idler,
        wall_time,
    })
}

/// Record holding the rounded expected counts, with no sampling noise.
pub fn expected_counts(
    state: &TwoQubitState,
    signal_setting: AnalyzerSetting,
    idler_setting: AnalyzerSetting,
    duration_s: f64,
    model: &DetectionModel,
    wall_time: DateTime<Utc>,
) -> Result<CountRecord> {
    if !(duration_s > 0.0) {
        return Err(Error::Domain(format!("duration {duration_s} s must be positive")));
    }
    let (c, s, i) = model.expected_rates(state, &signal_setting, &idler_setting);
    Ok(CountRecord {
        signal_setting,
        idler_setting,
        duration_s,
        coincidences: (c * duration_s).round() as u64,
        singles_signal: (s * duration_s).round() as u64,
        singles_idler: (i * duration_s).round() as u64,
        wall_time,
    })
}
