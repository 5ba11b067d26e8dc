//! Simulated rotation-mount timing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub speed_deg_per_s: f64,
    pub settle_s: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        MotionModel { speed_deg_per_s: 25.0, settle_s: 0.3 }
    }
}

/// Shortest rotation between two mount positions, degrees in [0, 180].
pub fn shortest_distance(from_deg: f64, to_deg: f64) -> f64 {
    let d = (to_deg - from_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Seconds to move and settle.
pub fn waveplate_motion(model: &MotionModel, from_deg: f64, to_deg: f64) -> f64 {
    shortest_distance(from_deg, to_deg) / model.speed_deg_per_s + model.settle_s
}

/// The position equivalent to `target` modulo 180° that is closest to
/// `current`. Analyzer projectors repeat every 180°.
pub fn nearest_equivalent(current_deg: f64, target_deg: f64) -> f64 {
    let k = ((current_deg - target_deg) / 180.0).round();
    target_deg + 180.0 * k
}
