//! Public basis-selection station: a four-way H/V/D/A split read out by
//! photoresistors through a 10-bit ADC, min/max calibration, and
//! reconstruction of the user's linear-polarization angle.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::angle::{normalize as canonical, AngleDeg};
use crate::error::{Error, Result};

pub const CHANNEL_NAMES: [&str; 4] = ["h", "v", "d", "a"];
/// Transmission axis of each photoresistor path, degrees.
pub const CHANNEL_AXES_DEG: [f64; 4] = [0.0, 90.0, 45.0, -45.0];

/// One ADC sample of the four photoresistors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerFrame {
    pub r_h: u16,
    pub r_v: u16,
    pub r_d: u16,
    pub r_a: u16,
}

impl AnalyzerFrame {
    pub fn readings(&self) -> [u16; 4] {
        [self.r_h, self.r_v, self.r_d, self.r_a]
    }

    fn from_readings(r: [u16; 4]) -> Self {
        AnalyzerFrame { r_h: r[0], r_v: r[1], r_d: r[2], r_a: r[3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationModel {
    /// Peak signal per channel above ambient, ADC units.
    pub gains: [f64; 4],
    pub ambient: f64,
    /// Gaussian read noise, ADC units.
    pub noise_sd: f64,
    pub adc_bits: u32,
}

impl Default for StationModel {
    fn default() -> Self {
        StationModel { gains: [950.0; 4], ambient: 30.0, noise_sd: 0.0, adc_bits: 10 }
    }
}

impl StationModel {
    pub fn adc_max(&self) -> f64 {
        ((1u32 << self.adc_bits) - 1) as f64
    }

    /// Read noise as a fraction of ADC full scale.
    pub fn with_noise_fraction(mut self, fraction: f64) -> Self {
        self.noise_sd = fraction * self.adc_max();
        self
    }
}

/// r_x = clip(gain_x·cos²(θ − θ_x) + ambient + N(0, σ)), rounded to the ADC grid.
pub fn simulate_frame<R: Rng + ?Sized>(theta: AngleDeg, model: &StationModel, rng: &mut R) -> Result<AnalyzerFrame> {
    if model.gains.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::Domain("channel gains must be positive".into()));
    }
    let noise = if model.noise_sd > 0.0 {
        Some(Normal::new(0.0, model.noise_sd).map_err(|e| Error::Domain(e.to_string()))?)
    } else {
        None
    };
    let max = model.adc_max();
    let readings = std::array::from_fn(|k| {
        let malus = (theta.radians() - CHANNEL_AXES_DEG[k].to_radians()).cos().powi(2);
        let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
        (model.gains[k] * malus + model.ambient + n).round().clamp(0.0, max) as u16
    });
    Ok(AnalyzerFrame::from_readings(readings))
}

/// Running per-channel extremes seen while the user turns the waveplate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub min: Option<[u16; 4]>,
    pub max: Option<[u16; 4]>,
}

impl CalibrationState {
    pub fn reset(&mut self) {
        *self = CalibrationState::default();
    }

    pub fn is_ready(&self) -> bool {
        matches!((self.min, self.max), (Some(lo), Some(hi)) if lo.iter().zip(hi).all(|(l, h)| h > *l))
    }
}

pub fn update_calibration(cal: &CalibrationState, frame: &AnalyzerFrame) -> CalibrationState {
    let r = frame.readings();
    let min = match cal.min {
        Some(m) => std::array::from_fn(|k| m[k].min(r[k])),
        None => r,
    };
    let max = match cal.max {
        Some(m) => std::array::from_fn(|k| m[k].max(r[k])),
        None => r,
    };
    CalibrationState { min: Some(min), max: Some(max) }
}

/// Min/max-normalized channel intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub p_h: f64,
    pub p_v: f64,
    pub p_d: f64,
    pub p_a: f64,
}

pub fn normalize(cal: &CalibrationState, frame: &AnalyzerFrame) -> Result<Normalized> {
    let (Some(lo), Some(hi)) = (cal.min, cal.max) else {
        return Err(Error::CalibrationRequired(CHANNEL_NAMES[0]));
    };
    let r = frame.readings();
    let mut p = [0.0; 4];
    for k in 0..4 {
        if hi[k] <= lo[k] {
            return Err(Error::CalibrationRequired(CHANNEL_NAMES[k]));
        }
        p[k] = ((r[k] as f64 - lo[k] as f64) / (hi[k] as f64 - lo[k] as f64)).clamp(0.0, 1.0);
    }
    Ok(Normalized { p_h: p[0], p_v: p[1], p_d: p[2], p_a: p[3] })
}

/// θ = sign(P_d − P_a)·arccos(√P_h), in degrees.
///
/// The result is only defined modulo 180°. At the ±90° ambiguity
/// (P_h = 0, P_d = P_a) the sign tie goes to +, giving +90°.
pub fn reconstruct_angle(p_h: f64, p_d: f64, p_a: f64) -> AngleDeg {
    let magnitude = p_h.clamp(0.0, 1.0).sqrt().acos().to_degrees();
    let sign = if p_d < p_a { -1.0 } else { 1.0 };
    AngleDeg::new(sign * magnitude)
}

/// Half-angle estimate ½·atan2(P_d − P_a, P_h − P_v) from all four channels.
///
/// Identical to [`reconstruct_angle`] on noiseless frames, but its error
/// scales linearly with read noise everywhere, whereas arccos(√P_h) has
/// square-root sensitivity near 0° and ±90°.
pub fn full_frame_angle(p: &Normalized) -> AngleDeg {
    let s2 = p.p_d - p.p_a;
    let c2 = p.p_h - p.p_v;
    if s2 == 0.0 && c2 == 0.0 {
        return AngleDeg::ZERO;
    }
    AngleDeg::new(canonical(0.5 * s2.atan2(c2).to_degrees()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// [`reconstruct_angle`] on (P_h, P_d, P_a).
    SignArccos,
    /// [`full_frame_angle`].
    FullFrame,
}

impl Normalized {
    pub fn angle(&self, estimator: Estimator) -> AngleDeg {
        match estimator {
            Estimator::SignArccos => reconstruct_angle(self.p_h, self.p_d, self.p_a),
            Estimator::FullFrame => full_frame_angle(self),
        }
    }
}

/// Calibration from one full half-turn of the waveplate at 1° steps.
pub fn calibrate_sweep<R: Rng + ?Sized>(model: &StationModel, rng: &mut R) -> Result<CalibrationState> {
    let mut cal = CalibrationState::default();
    for k in 0..=180 {
        let frame = simulate_frame(AngleDeg::new(k as f64), model, rng)?;
        cal = update_calibration(&cal, &frame);
    }
    Ok(cal)
}

/// Calibrates on a full sweep, then reports the worst angular error over
/// `theta_grid` with one fresh frame per grid point.
pub fn round_trip_error<R: Rng + ?Sized>(
    theta_grid: &[f64],
    model: &StationModel,
    estimator: Estimator,
    rng: &mut R,
) -> Result<f64> {
    let cal = calibrate_sweep(model, rng)?;
    let mut worst = 0.0f64;
    for &theta in theta_grid {
        let truth = AngleDeg::new(theta);
        let frame = simulate_frame(truth, model, rng)?;
        let got = normalize(&cal, &frame)?.angle(estimator);
        worst = worst.max(got.distance(truth));
    }
    Ok(worst)
}

/// θ ∈ (−90°, 90°) at 1° spacing, excluding the endpoints.
pub fn open_degree_grid() -> Vec<f64> {
    (-89..=89).map(f64::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ideal() -> StationModel {
        StationModel { gains: [1023.0; 4], ambient: 0.0, noise_sd: 0.0, adc_bits: 10 }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn malus_frames() {
        let f = simulate_frame(AngleDeg::ZERO, &ideal(), &mut rng()).unwrap();
        assert_eq!(f.r_h, 1023);
        assert_eq!(f.r_v, 0);
        assert_eq!(f.r_d, f.r_a);
        let f = simulate_frame(AngleDeg::new(45.0), &ideal(), &mut rng()).unwrap();
        assert_eq!(f.r_a, 0);
        assert_eq!(f.r_d, 1023);
        assert_eq!(f.r_h, f.r_v);
    }

    #[test]
    fn frames_reproducible() {
        let m = StationModel::default().with_noise_fraction(0.01);
        let a = simulate_frame(AngleDeg::new(12.0), &m, &mut rng()).unwrap();
        let b = simulate_frame(AngleDeg::new(12.0), &m, &mut rng()).unwrap();
        assert_eq!(a, b);
        let bad = StationModel { gains: [1.0, 0.0, 1.0, 1.0], ..m };
        assert!(simulate_frame(AngleDeg::ZERO, &bad, &mut rng()).is_err());
    }

    #[test]
    fn calibration_updates() {
        let f = simulate_frame(AngleDeg::new(20.0), &StationModel::default(), &mut rng()).unwrap();
        let cal = update_calibration(&CalibrationState::default(), &f);
        assert_eq!(cal.min, Some(f.readings()));
        assert_eq!(cal.max, Some(f.readings()));
        assert!(!cal.is_ready());
        assert_eq!(update_calibration(&cal, &f), cal);

        let m = StationModel::default();
        let cal = calibrate_sweep(&m, &mut rng()).unwrap();
        assert!(cal.is_ready());
        for k in 0..4 {
            assert!((cal.min.unwrap()[k] as f64 - m.ambient).abs() <= 1.0);
            assert!((cal.max.unwrap()[k] as f64 - (m.gains[k] + m.ambient)).abs() <= 1.0);
        }
    }

    #[test]
    fn normalization_bounds_and_errors() {
        let m = StationModel::default();
        let cal = calibrate_sweep(&m, &mut rng()).unwrap();
        let lo = AnalyzerFrame::from_readings(cal.min.unwrap());
        let hi = AnalyzerFrame::from_readings(cal.max.unwrap());
        let p = normalize(&cal, &lo).unwrap();
        assert_eq!([p.p_h, p.p_v, p.p_d, p.p_a], [0.0; 4]);
        let p = normalize(&cal, &hi).unwrap();
        assert_eq!([p.p_h, p.p_v, p.p_d, p.p_a], [1.0; 4]);

        let f = simulate_frame(AngleDeg::new(30.0), &m, &mut rng()).unwrap();
        let p = normalize(&cal, &f).unwrap();
        assert!((p.p_h - 0.75).abs() < 2.0 / 950.0);

        assert!(matches!(normalize(&CalibrationState::default(), &f), Err(Error::CalibrationRequired(_))));
        let single = update_calibration(&CalibrationState::default(), &f);
        assert!(matches!(normalize(&single, &f), Err(Error::CalibrationRequired("h"))));
    }

    #[test]
    fn noisy_mid_sweep_within_three_sigma() {
        let m = StationModel::default().with_noise_fraction(0.01);
        let mut r = rng();
        let cal = calibrate_sweep(&StationModel::default(), &mut r).unwrap();
        let sigma = m.noise_sd / 950.0;
        for _ in 0..50 {
            let f = simulate_frame(AngleDeg::new(30.0), &m, &mut r).unwrap();
            let p = normalize(&cal, &f).unwrap();
            assert!((p.p_h - 0.75).abs() < 3.5 * sigma + 1e-3);
        }
    }

    #[test]
    fn reconstruct_examples() {
        assert_eq!(reconstruct_angle(1.0, 0.5, 0.5).degrees(), 0.0);
        assert!((reconstruct_angle(0.5, 1.0, 0.0).degrees() - 45.0).abs() < 1e-12);
        assert!((reconstruct_angle(0.75, 0.1, 0.9).degrees() + 30.0).abs() < 1e-9);
        assert_eq!(reconstruct_angle(0.0, 0.5, 0.5).degrees(), 90.0);
        // overshoot clipped before the root
        assert_eq!(reconstruct_angle(1.05, 0.5, 0.5).degrees(), 0.0);
        assert_eq!(reconstruct_angle(-0.02, 0.5, 0.5).degrees(), 90.0);
    }

    #[test]
    fn estimators_agree_on_noiseless_frames() {
        for k in -89..=90 {
            let theta = AngleDeg::new(k as f64);
            let (s, c) = (theta.radians().sin(), theta.radians().cos());
            let p = Normalized {
                p_h: c * c,
                p_v: s * s,
                p_d: (theta.radians() - std::f64::consts::FRAC_PI_4).cos().powi(2),
                p_a: (theta.radians() + std::f64::consts::FRAC_PI_4).cos().powi(2),
            };
            let a = p.angle(Estimator::SignArccos);
            let b = p.angle(Estimator::FullFrame);
            assert!(a.distance(theta) < 1e-6, "{k}: {a}");
            assert!(b.distance(theta) < 1e-9, "{k}: {b}");
        }
    }

    #[test]
    fn noiseless_round_trip() {
        let m = StationModel::default();
        let err = round_trip_error(&open_degree_grid(), &m, Estimator::FullFrame, &mut rng()).unwrap();
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn boundary_maps_to_canonical() {
        assert_eq!(AngleDeg::new(-90.0), AngleDeg::new(90.0));
        let m = ideal();
        let mut r = rng();
        let cal = calibrate_sweep(&m, &mut r).unwrap();
        for theta in [-90.0, 90.0] {
            let f = simulate_frame(AngleDeg::new(theta), &m, &mut r).unwrap();
            let p = normalize(&cal, &f).unwrap();
            assert_eq!(p.angle(Estimator::SignArccos).degrees(), 90.0);
            assert!(p.angle(Estimator::FullFrame).distance(AngleDeg::new(90.0)) < 0.1);
        }
    }

    #[test]
    fn sign_tracks_sin_two_theta() {
        let m = ideal();
        let mut r = rng();
        let cal = calibrate_sweep(&m, &mut r).unwrap();
        for k in -89..=89 {
            if k == 0 {
                continue;
            }
            let theta = AngleDeg::new(k as f64);
            let p = normalize(&cal, &simulate_frame(theta, &m, &mut r).unwrap()).unwrap();
            assert_eq!((p.p_d - p.p_a).signum(), (2.0 * theta.radians()).sin().signum(), "{k}");
        }
    }

    #[test]
    fn monotone_on_first_quadrant() {
        let m = StationModel::default();
        let mut r = rng();
        let cal = calibrate_sweep(&m, &mut r).unwrap();
        let mut prev = f64::MIN;
        for k in 1..90 {
            let f = simulate_frame(AngleDeg::new(k as f64), &m, &mut r).unwrap();
            let a = normalize(&cal, &f).unwrap().angle(Estimator::FullFrame).degrees();
            assert!(a > prev, "{k}: {a} <= {prev}");
            prev = a;
        }
    }

    proptest! {
        #[test]
        fn normalized_always_in_unit_interval(theta in -90.0f64..90.0, ambient in 0.0f64..300.0, seed in 0u64..1000) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let cal = calibrate_sweep(&StationModel::default(), &mut r).unwrap();
            let shifted = StationModel { ambient, ..StationModel::default() }.with_noise_fraction(0.02);
            let f = simulate_frame(AngleDeg::new(theta), &shifted, &mut r).unwrap();
            let p = normalize(&cal, &f).unwrap();
            for x in [p.p_h, p.p_v, p.p_d, p.p_a] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
