//! Polarization-drift compensation.
//!
//! A quarter–half–quarter paddle controller is tuned so that, after the
//! fiber, the HH and DA coincidence probabilities of the delivered state are
//! minimal. The search is derivative-free: each paddle is first scanned
//! coarsely and refined by golden-section search, then golden-section line
//! searches continue along a direction set that absorbs each sweep's net
//! displacement. Up to eight random restarts are tried if a start stalls
//! above tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angle::AngleDeg;
use crate::channel::{delivered_through, FiberChannel};
use crate::counting::SourceConfig;
use crate::error::Result;
use crate::polarization::{
    projection_probability, retarder_rad, AnalyzerSetting, LocalUnitary, TwoQubitState, WaveplateKind,
};

/// Paddle angles of a quarter–half–quarter fiber controller, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSetting {
    pub paddles_deg: [f64; 3],
}

impl ControllerSetting {
    pub const ZERO: ControllerSetting = ControllerSetting { paddles_deg: [0.0; 3] };

    pub fn new(q1: f64, h: f64, q2: f64) -> Self {
        ControllerSetting { paddles_deg: [q1, h, q2] }
    }

    /// Largest per-paddle change, accounting for the 180° paddle period.
    pub fn max_change(&self, other: &ControllerSetting) -> f64 {
        self.paddles_deg
            .iter()
            .zip(other.paddles_deg)
            .map(|(a, b)| AngleDeg::new(a - b).degrees().abs())
            .fold(0.0, f64::max)
    }
}

/// Q(θ₁)·H(θ₂)·Q(θ₃).
pub fn compensator_unitary(s: &ControllerSetting) -> LocalUnitary {
    let [q1, h, q2] = s.paddles_deg.map(f64::to_radians);
    let m = retarder_rad(WaveplateKind::Quarter, q1).matrix()
        * retarder_rad(WaveplateKind::Half, h).matrix()
        * retarder_rad(WaveplateKind::Quarter, q2).matrix();
    LocalUnitary::from_product(m)
}

/// P(HH) + P(DA) of the delivered state.
pub fn objective(rho: &TwoQubitState) -> f64 {
    let h = AnalyzerSetting::transmitted(0.0);
    let d = AnalyzerSetting::transmitted(45.0);
    let a = AnalyzerSetting::transmitted(-45.0);
    projection_probability(rho, &h, &h) + projection_probability(rho, &d, &a)
}

/// Analytic minimum of [`objective`] for a Werner state of visibility `v`.
pub fn mixedness_floor(v: f64) -> f64 {
    (1.0 - v) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    HV,
    DA,
}

/// Fringe contrast (C_max − C_min)/(C_max + C_min) of the coincidence
/// probability with the signal analyzer parked on H (or D) while the idler
/// analyzer sweeps a full turn.
///
/// The swept probability is c₀ + c₁cos2θ + c₂sin2θ, so four samples fix the
/// extremes exactly.
pub fn visibility(rho: &TwoQubitState, basis: Basis) -> f64 {
    let park = match basis {
        Basis::HV => 0.0,
        Basis::DA => 45.0,
    };
    let s = AnalyzerSetting::transmitted(park);
    let p = |t: f64| projection_probability(rho, &s, &AnalyzerSetting::transmitted(t));
    let (p0, p45, p90, p135) = (p(0.0), p(45.0), p(90.0), p(135.0));
    let c0 = (p0 + p90) / 2.0;
    let amp = ((p0 - p90).powi(2) + (p45 - p135).powi(2)).sqrt() / 2.0;
    let (max, min) = (c0 + amp, (c0 - amp).max(0.0));
    if max + min <= 0.0 {
        0.0
    } else {
        ((max - min) / (max + min)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Target objective above the mixedness floor, probability units.
    pub tol: f64,
    pub max_evaluations: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { tol: 1e-6, max_evaluations: 10_000, max_restarts: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationReport {
    pub setting: ControllerSetting,
    pub objective_value: f64,
    /// Completed coordinate sweeps over all starts.
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub visibility_hv: f64,
    pub visibility_da: f64,
    pub floor: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
struct SearchOutcome {
    x: [f64; 3],
    f: f64,
    sweeps: usize,
}

struct Budget {
    used: usize,
    limit: usize,
}

impl Budget {
    fn left(&self) -> bool {
        self.used < self.limit
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden<F: FnMut(f64) -> f64>(f: &mut F, mut lo: f64, mut hi: f64, tol: f64, budget: &mut Budget) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    budget.used += 2;
    while hi - lo > tol && budget.left() {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        budget.used += 1;
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Line minimum of `g` on [−w, w], widening while the minimum sits at an edge.
fn bracketed<G: FnMut(f64) -> f64>(g: &mut G, mut w: f64, budget: &mut Budget) -> (f64, f64) {
    loop {
        let (t, v) = golden(g, -w, w, (w * 1e-9).max(1e-12), budget);
        if t.abs() < 0.9 * w || w >= 90.0 || !budget.left() {
            return (t, v);
        }
        w = (w * 4.0).min(90.0);
    }
}

/// Minimizes `f` over three periodic angles (degrees) from `start`.
///
/// The first sweep scans each paddle coarsely over its 180° period; later
/// sweeps line-search along a direction set that is updated with each
/// sweep's net displacement, so correlated valleys are followed directly.
fn coordinate_descent<F: FnMut(&[f64; 3]) -> f64>(f: &mut F, start: [f64; 3], target: f64, budget: &mut Budget) -> SearchOutcome {
    const SCAN: usize = 12;
    let mut x = start;
    let mut fx = f(&x);
    budget.used += 1;
    for k in 0..3 {
        let mut best = (x[k], fx);
        for j in 1..SCAN {
            let mut y = x;
            y[k] = x[k] + 180.0 * j as f64 / SCAN as f64;
            let v = f(&y);
            if v < best.1 {
                best = (y[k], v);
            }
        }
        budget.used += SCAN - 1;
        let step = 180.0 / SCAN as f64;
        let mut line = |t: f64| {
            let mut y = x;
            y[k] = best.0 + t;
            f(&y)
        };
        let (t, v) = golden(&mut line, -step, step, 1e-9, budget);
        if v < fx {
            x[k] = best.0 + t;
            fx = v;
        }
    }
    let mut sweeps = 1;
    let mut dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut width = [5.0f64; 3];
    let mut slow = 0;
    while fx > target && budget.left() {
        let before = x;
        let f_before = fx;
        let mut biggest = (0, 0.0);
        for (k, d) in dirs.iter().enumerate() {
            let mut line = |t: f64| f(&[x[0] + t * d[0], x[1] + t * d[1], x[2] + t * d[2]]);
            let (t, v) = bracketed(&mut line, width[k], budget);
            if v < fx {
                if fx - v > biggest.1 {
                    biggest = (k, fx - v);
                }
                x = [x[0] + t * d[0], x[1] + t * d[1], x[2] + t * d[2]];
                fx = v;
                width[k] = (4.0 * t.abs()).clamp(1e-7, 45.0);
            } else {
                width[k] = (width[k] * 0.5).max(1e-7);
            }
        }
        sweeps += 1;

        let d = [x[0] - before[0], x[1] - before[1], x[2] - before[2]];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if len > 0.0 && budget.left() {
            let u = d.map(|c| c / len);
            let mut along = |t: f64| f(&[x[0] + t * u[0], x[1] + t * u[1], x[2] + t * u[2]]);
            let (t, v) = bracketed(&mut along, len, budget);
            if v < fx {
                x = [x[0] + t * u[0], x[1] + t * u[1], x[2] + t * u[2]];
                fx = v;
            }
            dirs[biggest.0] = dirs[2];
            dirs[2] = u;
            width[biggest.0] = width[2];
            width[2] = (len + t.abs()).clamp(1e-7, 45.0);
        }
        // a start that keeps shaving off only a sliver per sweep is abandoned
        if f_before - fx < 0.05 * (f_before - target) {
            slow += 1;
        } else {
            slow = 0;
        }
        if slow >= 4 || len == 0.0 {
            break;
        }
    }
    SearchOutcome { x: x.map(|a| AngleDeg::new(a).degrees()), f: fx, sweeps }
}

struct MultiStart {
    best: SearchOutcome,
    restarts: usize,
    sweeps: usize,
    evaluations: usize,
}

fn multistart<F: FnMut(&[f64; 3]) -> f64>(mut f: F, init: [f64; 3], target: f64, opts: &OptimizerOptions) -> MultiStart {
    let mut budget = Budget { used: 0, limit: opts.max_evaluations };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = coordinate_descent(&mut f, init, target, &mut budget);
    let mut sweeps = best.sweeps;
    let mut restarts = 0;
    while best.f > target && restarts < opts.max_restarts && budget.left() {
        restarts += 1;
        let start: [f64; 3] = std::array::from_fn(|_| rng.random_range(-90.0..90.0));
        let out = coordinate_descent(&mut f, start, target, &mut budget);
        sweeps += out.sweeps;
        // strict comparison keeps the lowest restart index on ties
        if out.f < best.f {
            best = out;
        }
    }
    MultiStart { best, restarts, sweeps, evaluations: budget.used }
}

/// Tunes the controller against the centre wavelength of `ch`. Running out of
/// budget above `floor + tol` yields a report with `converged == false`.
pub fn optimize_compensation(
    ch: &FiberChannel,
    src: &SourceConfig,
    init: ControllerSetting,
    opts: &OptimizerOptions,
) -> Result<CompensationReport> {
    compensate_unitary(&ch.center_unitary(), src, init, opts)
}

pub fn compensate_unitary(
    fiber: &LocalUnitary,
    src: &SourceConfig,
    init: ControllerSetting,
    opts: &OptimizerOptions,
) -> Result<CompensationReport> {
    if !(opts.tol > 0.0) {
        return Err(crate::Error::Domain("tolerance must be positive".into()));
    }
    src.validate()?;
    // probe once so state errors surface before the search
    delivered_through(src, fiber, &LocalUnitary::identity())?;
    let floor = mixedness_floor(src.visibility);
    let target = floor + opts.tol;
    let eval = |x: &[f64; 3]| {
        let comp = compensator_unitary(&ControllerSetting { paddles_deg: *x });
        objective(&delivered_through(src, fiber, &comp).expect("validated source"))
    };
    let run = multistart(eval, init.paddles_deg, target, opts);
    let setting = ControllerSetting { paddles_deg: run.best.x };
    let rho = delivered_through(src, fiber, &compensator_unitary(&setting))?;
    Ok(CompensationReport {
        setting,
        objective_value: run.best.f,
        iterations: run.sweeps,
        evaluations: run.evaluations,
        restarts: run.restarts,
        visibility_hv: visibility(&rho, Basis::HV),
        visibility_da: visibility(&rho, Basis::DA),
        floor,
        converged: run.best.f <= target,
    })
}

/// Controller setting whose operator matches `target` up to global phase.
/// Returns the setting and the remaining phase-insensitive distance.
pub fn fit_unitary(target: &LocalUnitary, init: ControllerSetting, opts: &OptimizerOptions) -> (ControllerSetting, f64) {
    let eval = |x: &[f64; 3]| {
        let u = compensator_unitary(&ControllerSetting { paddles_deg: *x });
        u.phase_insensitive_distance(target).powi(2)
    };
    let run = multistart(eval, init.paddles_deg, opts.tol * opts.tol, opts);
    let setting = ControllerSetting { paddles_deg: run.best.x };
    let dist = compensator_unitary(&setting).phase_insensitive_distance(target);
    (setting, dist)
}
