//! CHSH analysis: settings derivation, correlation estimates with Poisson
//! error propagation, and angular-difference sweeps.
//!
//! The source-lab analyzer angles are the library angles plus 22.5°:
//! b = a + 22.5°, b′ = a′ + 22.5°. Measurements run in the fixed order
//! (a,b), (a,b′), (a′,b), (a′,b′), and inside each pair the port
//! combinations ++, +−, −+, −−, with transmitted counted as "+".
//!
//! Sign convention: the deployed signal path mirrors the library angle (see
//! [`SignalFrame`](crate::counting::SignalFrame)), so
//! E(a,b) = −v·cos 2(b − a) and
//! |S| = |E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)| = √2·v·(1 + sin 2δ)
//! with δ = a′ − a.

use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::angle::AngleDeg;
use crate::counting::{expected_counts, simulate_counts, CountRecord, DetectionModel, SourceConfig};
use crate::error::{Error, Result};
use crate::polarization::{werner_mix, AnalyzerSetting, Port, TwoQubitState};

pub const LOOMIS_OFFSET_DEG: f64 = 22.5;

/// Port combinations in measurement order.
pub const PORT_COMBOS: [(Port, Port); 4] = [
    (Port::Transmitted, Port::Transmitted),
    (Port::Transmitted, Port::Reflected),
    (Port::Reflected, Port::Transmitted),
    (Port::Reflected, Port::Reflected),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a: AngleDeg,
    pub a_prime: AngleDeg,
    pub b: AngleDeg,
    pub b_prime: AngleDeg,
    pub delta: AngleDeg,
}

pub fn settings_from_user(a: AngleDeg, a_prime: AngleDeg) -> ChshSettings {
    let offset = AngleDeg::new(LOOMIS_OFFSET_DEG);
    ChshSettings {
        a,
        a_prime,
        b: a + offset,
        b_prime: a_prime + offset,
        delta: a_prime - a,
    }
}

impl ChshSettings {
    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.a_prime.is_finite()
    }

    /// (library, source-lab) angle pairs in measurement order.
    pub fn angle_pairs(&self) -> [(AngleDeg, AngleDeg); 4] {
        [(self.a, self.b), (self.a, self.b_prime), (self.a_prime, self.b), (self.a_prime, self.b_prime)]
    }

    /// The 16 (signal, idler) analyzer settings in measurement order.
    pub fn measurement_plan(&self) -> Vec<(AnalyzerSetting, AnalyzerSetting)> {
        self.angle_pairs()
            .iter()
            .flat_map(|&(sa, ia)| PORT_COMBOS.map(|(ps, pi)| (AnalyzerSetting::new(sa, ps), AnalyzerSetting::new(ia, pi))))
            .collect()
    }
}

/// The 16 count records of one CHSH run, stored in measurement order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMatrix {
    settings: ChshSettings,
    records: Vec<CountRecord>,
}

impl MeasurementMatrix {
    /// Assigns each record to the plan slot whose projectors it matches.
    /// Records are taken greedily, so repeated angle pairs (δ = 0) fill in
    /// arrival order.
    pub fn from_records(settings: ChshSettings, records: Vec<CountRecord>) -> Result<Self> {
        if records.len() != 16 {
            return Err(Error::Structural(format!("expected 16 records, got {}", records.len())));
        }
        let mut pool: Vec<Option<CountRecord>> = records.into_iter().map(Some).collect();
        let mut ordered = Vec::with_capacity(16);
        for (k, (s, i)) in settings.measurement_plan().iter().enumerate() {
            let slot = pool.iter_mut().find(|r| {
                r.as_ref()
                    .is_some_and(|r| r.signal_setting.same_projector(s) && r.idler_setting.same_projector(i))
            });
            match slot.and_then(Option::take) {
                Some(r) => ordered.push(r),
                None => {
                    return Err(Error::Structural(format!(
                        "no record for step {} (signal {}, idler {})",
                        k + 1,
                        s.projected_angle(),
                        i.projected_angle()
                    )))
                }
            }
        }
        Ok(MeasurementMatrix { settings, records: ordered })
    }

    pub fn settings(&self) -> &ChshSettings {
        &self.settings
    }

    pub fn records(&self) -> &[CountRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<CountRecord> {
        self.records
    }

    /// Coincidences (n++, n+−, n−+, n−−) for angle pair `pair`.
    pub fn pair_counts(&self, pair: usize) -> [u64; 4] {
        std::array::from_fn(|k| self.records[pair * 4 + k].coincidences)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ETerm {
    pub e: f64,
    pub sigma: f64,
}

/// E = (n++ + n−− − n+− − n−+)/T with Poisson-propagated σ_E.
pub fn correlation_from_counts(n_pp: u64, n_pm: u64, n_mp: u64, n_mm: u64) -> Result<ETerm> {
    let same = (n_pp + n_mm) as f64;
    let diff = (n_pm + n_mp) as f64;
    let total = same + diff;
    if total == 0.0 {
        return Err(Error::InsufficientData("no coincidences in correlation term".into()));
    }
    let e = (same - diff) / total;
    let var = ((1.0 - e).powi(2) * same + (1.0 + e).powi(2) * diff) / (total * total);
    Ok(ETerm { e, sigma: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    /// |S|.
    pub s_value: f64,
    pub sigma_s: f64,
    /// E(a,b), E(a,b′), E(a′,b), E(a′,b′).
    pub e_terms: [ETerm; 4],
    pub settings: ChshSettings,
    pub live: bool,
    pub wall_time: DateTime<Utc>,
}

impl ChshResult {
    pub fn violates_local_realism(&self) -> bool {
        self.s_value > 2.0
    }

    /// Equality on everything but the wall-clock stamp.
    pub fn same_measurement(&self, other: &ChshResult) -> bool {
        self.s_value == other.s_value
            && self.sigma_s == other.sigma_s
            && self.e_terms == other.e_terms
            && self.settings == other.settings
            && self.live == other.live
    }
}

const CHSH_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];

pub fn chsh_from_matrix(m: &MeasurementMatrix, wall_time: DateTime<Utc>) -> Result<ChshResult> {
    if m.records.len() != 16 {
        return Err(Error::Structural("incomplete measurement matrix".into()));
    }
    let mut e_terms = [ETerm { e: 0.0, sigma: 0.0 }; 4];
    for (k, term) in e_terms.iter_mut().enumerate() {
        let [pp, pm, mp, mm] = m.pair_counts(k);
        *term = correlation_from_counts(pp, pm, mp, mm)?;
    }
    let s: f64 = e_terms.iter().zip(CHSH_SIGNS).map(|(t, sign)| sign * t.e).sum();
    let var: f64 = e_terms.iter().map(|t| t.sigma * t.sigma).sum();
    Ok(ChshResult {
        s_value: s.abs(),
        sigma_s: var.sqrt(),
        e_terms,
        settings: m.settings,
        live: true,
        wall_time,
    })
}

/// Noiseless |S| = √2·v·(1 + sin 2δ).
pub fn chsh_ideal(v: f64, delta: AngleDeg) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("visibility {v} outside [0, 1]")));
    }
    Ok(std::f64::consts::SQRT_2 * v * (1.0 + (2.0 * delta.radians()).sin()))
}

/// Runs the 16 measurements with Poisson noise.
pub fn simulate_matrix<R: Rng + ?Sized>(
    state: &TwoQubitState,
    settings: &ChshSettings,
    model: &DetectionModel,
    integration_s: f64,
    start: DateTime<Utc>,
    rng: &mut R,
) -> Result<MeasurementMatrix> {
    let step = chrono::Duration::milliseconds((integration_s * 1000.0) as i64);
    let records = settings
        .measurement_plan()
        .into_iter()
        .enumerate()
        .map(|(k, (s, i))| simulate_counts(state, s, i, integration_s, model, start + step * k as i32, rng))
        .collect::<Result<Vec<_>>>()?;
    MeasurementMatrix::from_records(*settings, records)
}

/// The 16 measurements with rounded expected counts at `exposure_s`.
pub fn expected_matrix(
    state: &TwoQubitState,
    settings: &ChshSettings,
    model: &DetectionModel,
    exposure_s: f64,
    at: DateTime<Utc>,
) -> Result<MeasurementMatrix> {
    let records = settings
        .measurement_plan()
        .into_iter()
        .map(|(s, i)| expected_counts(state, s, i, exposure_s, model, at))
        .collect::<Result<Vec<_>>>()?;
    MeasurementMatrix::from_records(*settings, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta_deg: f64,
    pub s_value: f64,
    pub sigma_s: f64,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub source: SourceConfig,
    pub transmission: f64,
    pub integration_s: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            source: SourceConfig::default(),
            transmission: crate::channel::transmission(crate::channel::FiberChannel::DEFAULT_LOSS_DB)
                .expect("default loss is valid"),
            integration_s: 10.0,
            seed: 0,
        }
    }
}

/// Simulated CHSH (a = 0°, a′ = δ) for each grid point, each with its own
/// rng stream derived from the seed and the grid index.
pub fn sweep_angular_difference(cfg: &SweepConfig, delta_grid: &[f64]) -> Result<Vec<SweepPoint>> {
    use rand::SeedableRng;
    if delta_grid.is_empty() {
        return Err(Error::Domain("sweep grid is empty".into()));
    }
    cfg.source.validate()?;
    let state = werner_mix(&cfg.source.target_state, cfg.source.visibility)?;
    let model = DetectionModel::deployed(&cfg.source, cfg.transmission);
    let t0 = DateTime::<Utc>::UNIX_EPOCH;
    delta_grid
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64 + 1);
            let settings = settings_from_user(AngleDeg::ZERO, AngleDeg::new(delta));
            let m = simulate_matrix(&state, &settings, &model, cfg.integration_s, t0, &mut rng)?;
            let r = chsh_from_matrix(&m, t0)?;
            Ok(SweepPoint { delta_deg: delta, s_value: r.s_value, sigma_s: r.sigma_s })
        })
        .collect()
}

/// Evenly spaced grid over [lo, hi] with `steps` points.
pub fn linear_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

pub fn write_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Stored S-versus-δ curve used when no live measurement is possible.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn new(mut points: Vec<SweepPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Unavailable);
        }
        points.sort_by(|a, b| a.delta_deg.total_cmp(&b.delta_deg));
        Ok(SweepTable { points })
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.points
    }

    /// Linear interpolation in δ, clamped to the table ends.
    pub fn lookup(&self, delta_deg: f64) -> SweepPoint {
        let pts = &self.points;
        if delta_deg <= pts[0].delta_deg {
            return SweepPoint { delta_deg, ..pts[0] };
        }
        let last = pts[pts.len() - 1];
        if delta_deg >= last.delta_deg {
            return SweepPoint { delta_deg, ..last };
        }
        let hi = pts.partition_point(|p| p.delta_deg < delta_deg);
        let (p0, p1) = (pts[hi - 1], pts[hi]);
        let span = p1.delta_deg - p0.delta_deg;
        let w = if span > 0.0 { (delta_deg - p0.delta_deg) / span } else { 0.0 };
        SweepPoint {
            delta_deg,
            s_value: p0.s_value + w * (p1.s_value - p0.s_value),
            sigma_s: p0.sigma_s + w * (p1.sigma_s - p0.sigma_s),
        }
    }
}
