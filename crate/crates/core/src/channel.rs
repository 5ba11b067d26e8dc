//! Deployed-fiber model: loss plus a slowly drifting polarization unitary per
//! wavelength channel.
//!
//! Each channel carries an azimuth angle driven by a bounded rate. The rate is
//! a mean-reverting random walk reflected at ±`drift_rate_bound_deg_per_hr`,
//! so the azimuth can never move faster than the bound. A small bounded
//! ellipticity jitter rides on top. Everything is seeded per channel so a
//! given seed and `dt` sequence reproduces the same trace bit for bit.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::counting::SourceConfig;
use crate::error::{Error, Result};
use crate::polarization::{apply_local, rotation_rad, werner_mix, Jones, LocalUnitary, TwoQubitState};

/// Fraction of power surviving `loss_db` of attenuation.
pub fn transmission(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return Err(Error::Domain(format!("loss {loss_db} dB must be non-negative")));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    /// Stationary standard deviation of the azimuth rate, deg/hr.
    pub rate_sd_deg_per_hr: f64,
    /// Relaxation time of the rate, hours.
    pub rate_relaxation_hr: f64,
    /// Stationary standard deviation of the ellipticity jitter, degrees.
    pub ellipticity_sd_deg: f64,
    pub ellipticity_bound_deg: f64,
    /// Longest internal integration step, seconds.
    pub max_step_s: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            rate_sd_deg_per_hr: 0.5,
            rate_relaxation_hr: 2.0,
            ellipticity_sd_deg: 0.5,
            ellipticity_bound_deg: 2.0,
            max_step_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftState {
    pub wavelength_nm: f64,
    /// Accumulated (unwrapped) azimuth rotation, degrees.
    pub azimuth_deg: f64,
    pub rate_deg_per_hr: f64,
    pub ellipticity_deg: f64,
    rng: ChaCha8Rng,
}

impl DriftState {
    fn new(wavelength_nm: f64, seed: u64, index: u64) -> Self {
        // SplitMix-style stream separation
        let stream = seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        DriftState {
            wavelength_nm,
            azimuth_deg: 0.0,
            rate_deg_per_hr: 0.0,
            ellipticity_deg: 0.0,
            rng: ChaCha8Rng::seed_from_u64(stream),
        }
    }

    /// R(azimuth) · diag(e^{−iε/2}, e^{iε/2}); an H input leaves at exactly
    /// the azimuth angle.
    pub fn unitary(&self) -> LocalUnitary {
        let half = self.ellipticity_deg.to_radians() / 2.0;
        let w = Jones::new(
            num_complex::Complex64::from_polar(1.0, -half),
            0.0.into(),
            0.0.into(),
            num_complex::Complex64::from_polar(1.0, half),
        );
        LocalUnitary::from_product(rotation_rad(self.azimuth_deg.to_radians()).matrix() * w)
    }

    fn step(&mut self, h_hr: f64, bound: f64, p: &DriftParams) {
        let n1: f64 = StandardNormal.sample(&mut self.rng);
        let n2: f64 = StandardNormal.sample(&mut self.rng);
        if bound <= 0.0 {
            return;
        }
        let tau = p.rate_relaxation_hr;
        let decay = (-h_hr / tau).exp();
        let kick = p.rate_sd_deg_per_hr * (1.0 - decay * decay).sqrt();
        let mut rate = self.rate_deg_per_hr * decay + kick * n1;
        rate = reflect(rate, bound);
        self.rate_deg_per_hr = rate;
        self.azimuth_deg += rate * h_hr;

        let e_decay = (-h_hr / tau).exp();
        let e_kick = p.ellipticity_sd_deg * (1.0 - e_decay * e_decay).sqrt();
        self.ellipticity_deg = (self.ellipticity_deg * e_decay + e_kick * n2)
            .clamp(-p.ellipticity_bound_deg, p.ellipticity_bound_deg);
    }
}

/// Folds `x` back into [−b, b] by mirror reflection at the walls.
fn reflect(x: f64, b: f64) -> f64 {
    let period = 4.0 * b;
    let mut y = (x + b).rem_euclid(period);
    if y > 2.0 * b {
        y = period - y;
    }
    (y - b).clamp(-b, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberChannel {
    pub loss_db: f64,
    pub drift_rate_bound_deg_per_hr: f64,
    pub rng_seed: u64,
    pub params: DriftParams,
    elapsed_s: f64,
    channels: Vec<DriftState>,
}

impl FiberChannel {
    pub const DEFAULT_LOSS_DB: f64 = 12.0;
    pub const DEFAULT_WAVELENGTHS_NM: [f64; 3] = [1555.0, 1560.0, 1565.0];
    pub const DEFAULT_DRIFT_BOUND: f64 = 2.0;

    pub fn new(loss_db: f64, wavelengths_nm: &[f64], drift_rate_bound_deg_per_hr: f64, rng_seed: u64) -> Result<Self> {
        if !(loss_db >= 0.0) {
            return Err(Error::Domain(format!("loss {loss_db} dB must be non-negative")));
        }
        if wavelengths_nm.is_empty() {
            return Err(Error::Domain("at least one wavelength channel is required".into()));
        }
        if !(drift_rate_bound_deg_per_hr >= 0.0) {
            return Err(Error::Domain("drift bound must be non-negative".into()));
        }
        let channels = wavelengths_nm
            .iter()
            .enumerate()
            .map(|(k, &w)| DriftState::new(w, rng_seed, k as u64))
            .collect();
        Ok(FiberChannel {
            loss_db,
            drift_rate_bound_deg_per_hr,
            rng_seed,
            params: DriftParams::default(),
            elapsed_s: 0.0,
            channels,
        })
    }

    /// 12 dB, three channels around 1560 nm, 2°/hr bound.
    pub fn deployed(rng_seed: u64) -> Self {
        Self::new(Self::DEFAULT_LOSS_DB, &Self::DEFAULT_WAVELENGTHS_NM, Self::DEFAULT_DRIFT_BOUND, rng_seed)
            .expect("defaults are valid")
    }

    pub fn with_params(mut self, params: DriftParams) -> Self {
        self.params = params;
        self
    }

    pub fn transmission(&self) -> f64 {
        transmission(self.loss_db).expect("validated at construction")
    }

    pub fn elapsed_s(&self) -> f64 {
        self.elapsed_s
    }

    pub fn wavelengths_nm(&self) -> impl Iterator<Item = f64> + '_ {
        self.channels.iter().map(|c| c.wavelength_nm)
    }

    pub fn drift_states(&self) -> &[DriftState] {
        &self.channels
    }

    /// Channel used for count simulation: the one closest to the list centre.
    pub fn center_wavelength_nm(&self) -> f64 {
        self.channels[self.channels.len() / 2].wavelength_nm
    }

    fn state(&self, wavelength_nm: f64) -> Result<&DriftState> {
        self.channels
            .iter()
            .find(|c| (c.wavelength_nm - wavelength_nm).abs() < 1e-9)
            .ok_or(Error::UnknownWavelength(wavelength_nm))
    }

    pub fn azimuth_deg(&self, wavelength_nm: f64) -> Result<f64> {
        Ok(self.state(wavelength_nm)?.azimuth_deg)
    }

    /// Advances every channel by `dt_s` seconds of drift.
    pub fn advance_drift(&mut self, dt_s: f64) -> Result<()> {
        if !(dt_s >= 0.0) {
            return Err(Error::Domain(format!("dt {dt_s} s must be non-negative")));
        }
        if dt_s == 0.0 {
            return Ok(());
        }
        let steps = (dt_s / self.params.max_step_s).ceil().max(1.0) as usize;
        let h_hr = dt_s / steps as f64 / 3600.0;
        for ch in &mut self.channels {
            for _ in 0..steps {
                ch.step(h_hr, self.drift_rate_bound_deg_per_hr, &self.params);
            }
        }
        self.elapsed_s += dt_s;
        Ok(())
    }

    pub fn channel_unitary(&self, wavelength_nm: f64) -> Result<LocalUnitary> {
        Ok(self.state(wavelength_nm)?.unitary())
    }

    pub fn center_unitary(&self) -> LocalUnitary {
        self.channels[self.channels.len() / 2].unitary()
    }

    /// Records (time_s, wavelength_nm, azimuth_deg) every `sample_s` for `hours`.
    pub fn drift_trace(&mut self, hours: f64, sample_s: f64) -> Result<Vec<DriftSample>> {
        if !(hours >= 0.0) || !(sample_s > 0.0) {
            return Err(Error::Domain("trace length and sampling must be positive".into()));
        }
        let samples = (hours * 3600.0 / sample_s).round() as usize;
        let mut out = Vec::with_capacity((samples + 1) * self.channels.len());
        let t0 = self.elapsed_s;
        for k in 0..=samples {
            if k > 0 {
                self.advance_drift(sample_s)?;
            }
            for ch in &self.channels {
                out.push(DriftSample {
                    time_s: t0 + k as f64 * sample_s,
                    wavelength_nm: ch.wavelength_nm,
                    azimuth_deg: ch.azimuth_deg,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSample {
    pub time_s: f64,
    pub wavelength_nm: f64,
    pub azimuth_deg: f64,
}

pub fn write_drift_csv<W: Write>(out: W, trace: &[DriftSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in trace {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

/// Azimuth of the output polarization for horizontal input, in (−90, 90].
pub fn output_azimuth_deg(u: &LocalUnitary) -> f64 {
    let out = u.apply(&crate::polarization::kets::h());
    let s1 = out[0].norm_sqr() - out[1].norm_sqr();
    let s2 = 2.0 * (out[0].conj() * out[1]).re;
    crate::angle::normalize(0.5 * s2.atan2(s1).to_degrees())
}

/// Werner-mixed source state after the fiber and then the compensator act on
/// the signal photon.
pub fn delivered_state(src: &SourceConfig, ch: &FiberChannel, comp: &LocalUnitary) -> Result<TwoQubitState> {
    delivered_through(src, &ch.center_unitary(), comp)
}

pub fn delivered_through(src: &SourceConfig, fiber: &LocalUnitary, comp: &LocalUnitary) -> Result<TwoQubitState> {
    let mixed = werner_mix(&src.target_state, src.visibility)?;
    Ok(apply_local(&mixed, &comp.compose(fiber), &LocalUnitary::identity()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angle::AngleDeg;
    use crate::polarization::{kets, make_psi_plus};

    #[test]
    fn transmission_values() {
        assert_eq!(transmission(0.0).unwrap(), 1.0);
        assert!((transmission(12.0).unwrap() - 0.0631).abs() < 1e-4);
        assert!((transmission(3.0103).unwrap() - 0.5).abs() < 1e-4);
        assert!(transmission(-1.0).is_err());
        assert!(transmission(f64::NAN).is_err());
        let mut prev = 1.0;
        for k in 1..100 {
            let t = transmission(k as f64 * 0.5).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn reflect_stays_in_bounds() {
        assert_eq!(reflect(0.5, 2.0), 0.5);
        assert!((reflect(2.5, 2.0) - 1.5).abs() < 1e-12);
        assert!((reflect(-2.5, 2.0) + 1.5).abs() < 1e-12);
        assert!((reflect(7.0, 2.0) - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_dt_is_noop() {
        let mut ch = FiberChannel::deployed(4);
        ch.advance_drift(100.0).unwrap();
        let before = ch.clone();
        ch.advance_drift(0.0).unwrap();
        assert_eq!(ch, before);
        assert!(ch.advance_drift(-1.0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut a = FiberChannel::deployed(77);
        let mut b = FiberChannel::deployed(77);
        for dt in [10.0, 3600.0, 0.5, 7200.0] {
            a.advance_drift(dt).unwrap();
            b.advance_drift(dt).unwrap();
        }
        assert_eq!(a, b);
        let mut c = FiberChannel::deployed(78);
        c.advance_drift(10.0 + 3600.0 + 0.5 + 7200.0).unwrap();
        assert_ne!(a.drift_states()[0].azimuth_deg, c.drift_states()[0].azimuth_deg);
    }

    #[test]
    fn eighteen_hour_envelope() {
        let mut ch = FiberChannel::deployed(9);
        let trace = ch.drift_trace(18.0, 60.0).unwrap();
        for s in &trace {
            assert!(s.azimuth_deg.abs() <= 36.0 + 1e-9);
        }
    }

    #[test]
    fn channel_unitary_lookup() {
        let mut ch = FiberChannel::deployed(5);
        let fresh = ch.channel_unitary(1560.0).unwrap();
        assert!(fresh.phase_insensitive_distance(&LocalUnitary::identity()) < 1e-15);
        assert!(matches!(ch.channel_unitary(1310.0), Err(Error::UnknownWavelength(_))));
        ch.advance_drift(3600.0).unwrap();
        let u1 = ch.channel_unitary(1555.0).unwrap();
        let u2 = ch.channel_unitary(1565.0).unwrap();
        assert!(u1.phase_insensitive_distance(&u2) > 0.0);
        assert!(u1.unitarity_defect() < 1e-12);
        assert!(u2.unitarity_defect() < 1e-12);
    }

    #[test]
    fn azimuth_readout_matches_unitary() {
        let mut ch = FiberChannel::deployed(21);
        for _ in 0..10 {
            ch.advance_drift(1800.0).unwrap();
            for st in ch.drift_states() {
                let measured = output_azimuth_deg(&st.unitary());
                let tracked = AngleDeg::new(st.azimuth_deg);
                assert!(tracked.distance(AngleDeg::new(measured)) < 1e-9);
            }
        }
    }

    #[test]
    fn delivered_state_cases() {
        let src = SourceConfig { visibility: 1.0, ..SourceConfig::default() };
        let id = LocalUnitary::identity();
        let ch = FiberChannel::deployed(1);
        assert!(delivered_state(&src, &ch, &id).unwrap().distance(&make_psi_plus()) < 1e-12);
        let fiber = LocalUnitary::rotation(AngleDeg::new(30.0));
        let comp = LocalUnitary::rotation(AngleDeg::new(-30.0));
        let rho = delivered_through(&src, &fiber, &comp).unwrap();
        assert!(rho.distance(&make_psi_plus()) < 1e-12);
        assert!(rho.ket_probability(&kets::h(), &kets::h()) < 1e-15);
    }

    #[test]
    fn csv_export_columns() {
        let mut ch = FiberChannel::deployed(2);
        let trace = ch.drift_trace(0.1, 60.0).unwrap();
        let mut buf = Vec::new();
        write_drift_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_s,wavelength_nm,azimuth_deg\n"));
        assert_eq!(text.lines().count(), 1 + trace.len());
    }
}
