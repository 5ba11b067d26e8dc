//! Two-qubit state tomography by linear inversion over the overcomplete
//! {H,V,D,A,R,L}⊗{H,V,D,A,R,L} projector set.

use std::io::Write;

use nalgebra::SymmetricEigen;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::counting::SourceConfig;
use crate::error::{Error, Result};
use crate::polarization::{fidelity, kets, kron, werner_mix, Density, Jones, Ket2, TwoQubitState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TomoState {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl TomoState {
    pub const ALL: [TomoState; 6] = [TomoState::H, TomoState::V, TomoState::D, TomoState::A, TomoState::R, TomoState::L];

    pub fn ket(self) -> Ket2 {
        match self {
            TomoState::H => kets::h(),
            TomoState::V => kets::v(),
            TomoState::D => kets::d(),
            TomoState::A => kets::a(),
            TomoState::R => kets::r(),
            TomoState::L => kets::l(),
        }
    }

    /// Pauli axis index (1 = X via D/A, 2 = Y via R/L, 3 = Z via H/V) and the
    /// eigenvalue sign of this state.
    fn axis(self) -> (usize, f64) {
        match self {
            TomoState::D => (1, 1.0),
            TomoState::A => (1, -1.0),
            TomoState::R => (2, 1.0),
            TomoState::L => (2, -1.0),
            TomoState::H => (3, 1.0),
            TomoState::V => (3, -1.0),
        }
    }
}

/// Counts (or exact probabilities) recorded for one projector pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TomoCount {
    pub signal: TomoState,
    pub idler: TomoState,
    pub counts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyResult {
    /// Linear-inversion estimate; may have small negative eigenvalues unless
    /// clipping was requested.
    pub rho_hat: TwoQubitState,
    pub fidelity_to_target: f64,
    pub settings_used: usize,
    pub min_eigenvalue: f64,
    pub clipped: bool,
}

impl TomographyResult {
    pub fn is_physical(&self) -> bool {
        self.min_eigenvalue >= -1e-9
    }
}

fn pauli(k: usize) -> Jones {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match k {
        0 => Jones::identity(),
        1 => Jones::new(z, one, one, z),
        2 => Jones::new(z, -i, i, z),
        _ => Jones::new(one, z, z, -one),
    }
}

/// Reconstructs ρ from the 36 projector records and scores it against
/// `target`. With `clip`, negative eigenvalues are removed by projecting onto
/// the closest physical state.
pub fn tomography_linear_inversion(records: &[TomoCount], target: &TwoQubitState, clip: bool) -> Result<TomographyResult> {
    // counts[s][i] indexed by TomoState order
    let mut table = [[None::<f64>; 6]; 6];
    for r in records {
        let (si, ii) = (r.signal as usize, r.idler as usize);
        if table[si][ii].is_some() {
            return Err(Error::Structural(format!("duplicate record for {:?}{:?}", r.signal, r.idler)));
        }
        if !(r.counts >= 0.0) {
            return Err(Error::Domain("negative count".into()));
        }
        table[si][ii] = Some(r.counts);
    }
    for s in TomoState::ALL {
        for i in TomoState::ALL {
            if table[s as usize][i as usize].is_none() {
                return Err(Error::Structural(format!("missing setting {s:?}{i:?}")));
            }
        }
    }

    // stokes[j][k] = ⟨σ_j ⊗ σ_k⟩
    let mut stokes = [[0.0f64; 4]; 4];
    stokes[0][0] = 1.0;
    let mut marg_s = [0.0f64; 4];
    let mut marg_i = [0.0f64; 4];
    for js in 1..4 {
        for ki in 1..4 {
            let group: Vec<(f64, f64, f64)> = TomoState::ALL
                .iter()
                .filter(|s| s.axis().0 == js)
                .flat_map(|&s| {
                    TomoState::ALL
                        .iter()
                        .filter(move |i| i.axis().0 == ki)
                        .map(move |&i| (s.axis().1, i.axis().1, table[s as usize][i as usize].unwrap()))
                })
                .collect();
            let total: f64 = group.iter().map(|g| g.2).sum();
            if total <= 0.0 {
                return Err(Error::InsufficientData(format!("no counts in basis pair ({js}, {ki})")));
            }
            stokes[js][ki] = group.iter().map(|(a, b, n)| a * b * n).sum::<f64>() / total;
            marg_s[js] += group.iter().map(|(a, _, n)| a * n).sum::<f64>() / total / 3.0;
            marg_i[ki] += group.iter().map(|(_, b, n)| b * n).sum::<f64>() / total / 3.0;
        }
    }
    for k in 1..4 {
        stokes[k][0] = marg_s[k];
        stokes[0][k] = marg_i[k];
    }

    let mut rho = Density::zeros();
    for (j, row) in stokes.iter().enumerate() {
        for (k, &sjk) in row.iter().enumerate() {
            rho += kron(&pauli(j), &pauli(k)) * C64::new(sjk / 4.0, 0.0);
        }
    }
    let tr = rho.trace();
    rho /= tr;
    let raw = TwoQubitState::from_density_unchecked(rho);
    let min_eigenvalue = raw.min_eigenvalue();
    let (rho_hat, clipped) = if clip && min_eigenvalue < 0.0 {
        (closest_physical(&raw), true)
    } else {
        (raw, false)
    };
    let fidelity_to_target = fidelity(&rho_hat, target)?;
    Ok(TomographyResult {
        min_eigenvalue: rho_hat.min_eigenvalue(),
        rho_hat,
        fidelity_to_target,
        settings_used: 36,
        clipped,
    })
}

/// Closest density operator in Frobenius norm to a unit-trace Hermitian
/// matrix: negative eigenvalue weight is zeroed and spread evenly over the
/// remaining ones.
pub fn closest_physical(rho: &TwoQubitState) -> TwoQubitState {
    let m = rho.density();
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut lam: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut acc = 0.0;
    let mut keep = lam.len();
    while keep > 0 {
        let k = keep - 1;
        if lam[k] + acc / keep as f64 >= 0.0 {
            break;
        }
        acc += lam[k];
        lam[k] = 0.0;
        keep -= 1;
    }
    for l in lam.iter_mut().take(keep) {
        *l += acc / keep as f64;
    }
    let mut out = Density::zeros();
    for (pos, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * C64::new(lam[pos], 0.0);
    }
    TwoQubitState::from_density_unchecked(out)
}

/// Exact Born-rule probabilities of all 36 projector pairs.
pub fn exact_probabilities(state: &TwoQubitState) -> Vec<TomoCount> {
    TomoState::ALL
        .iter()
        .flat_map(|&s| {
            TomoState::ALL.map(|i| TomoCount { signal: s, idler: i, counts: state.ket_probability(&s.ket(), &i.ket()) })
        })
        .collect()
}

/// Poisson counts with mean `pair_rate_cps · P · dwell_s` per projector pair.
pub fn simulate_tomography<R: Rng + ?Sized>(state: &TwoQubitState, pair_rate_cps: f64, dwell_s: f64, rng: &mut R) -> Vec<TomoCount> {
    exact_probabilities(state)
        .into_iter()
        .map(|mut t| {
            let mean = pair_rate_cps * dwell_s * t.counts;
            t.counts = if mean > 0.0 { Poisson::new(mean).unwrap().sample(rng) } else { 0.0 };
            t
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelitySchedule {
    pub interval_s: f64,
    pub duration_s: f64,
    /// Integration time for each of the 36 settings.
    pub dwell_s: f64,
    /// `false` feeds exact probabilities instead of Poisson counts.
    pub noisy: bool,
}

impl Default for FidelitySchedule {
    fn default() -> Self {
        FidelitySchedule { interval_s: 1800.0, duration_s: 20.0 * 3600.0, dwell_s: 10.0, noisy: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityPoint {
    pub time_s: f64,
    pub fidelity: f64,
}

/// Repeated tomography of the local source (no fiber in the path).
pub fn fidelity_series(schedule: &FidelitySchedule, src: &SourceConfig, seed: u64) -> Result<Vec<FidelityPoint>> {
    src.validate()?;
    if !(schedule.interval_s > 0.0) || !(schedule.duration_s >= 0.0) {
        return Err(Error::Domain("schedule must have positive interval".into()));
    }
    let state = werner_mix(&src.target_state, src.visibility)?;
    let n = (schedule.duration_s / schedule.interval_s + 1e-9).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let records = if schedule.noisy {
                simulate_tomography(&state, src.pair_rate_cps, schedule.dwell_s, &mut rng)
            } else {
                exact_probabilities(&state)
            };
            let t = tomography_linear_inversion(&records, &src.target_state, false)?;
            Ok(FidelityPoint { time_s: k as f64 * schedule.interval_s, fidelity: t.fidelity_to_target })
        })
        .collect()
}

pub fn write_fidelity_csv<W: Write>(out: W, points: &[FidelityPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn write_tomography_csv<W: Write>(out: W, records: &[TomoCount]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}
