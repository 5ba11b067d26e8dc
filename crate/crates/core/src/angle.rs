//! Linear-polarization angles in degrees.
//!
//! A linear polarization is only defined modulo 180°, so every angle is kept
//! in the canonical half-open range (−90°, +90°].

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct AngleDeg(f64);

impl AngleDeg {
    pub const ZERO: AngleDeg = AngleDeg(0.0);

    /// Canonicalizes `deg` into (−90, +90]. Non-finite input is kept as is so
    /// callers can reject it.
    pub fn new(deg: f64) -> Self {
        AngleDeg(normalize(deg))
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// Smallest absolute difference between two polarization angles, in [0, 90].
    pub fn distance(self, other: AngleDeg) -> f64 {
        AngleDeg::new(self.0 - other.0).0.abs()
    }
}

pub fn normalize(deg: f64) -> f64 {
    if !deg.is_finite() {
        return deg;
    }
    let mut r = deg.rem_euclid(180.0);
    if r > 90.0 {
        r -= 180.0;
    }
    // rem_euclid can hand back exactly 180.0 for tiny negative inputs
    if r <= -90.0 {
        r += 180.0;
    }
    r
}

impl From<f64> for AngleDeg {
    fn from(deg: f64) -> Self {
        AngleDeg::new(deg)
    }
}

impl From<AngleDeg> for f64 {
    fn from(a: AngleDeg) -> f64 {
        a.0
    }
}

impl Add for AngleDeg {
    type Output = AngleDeg;
    fn add(self, rhs: AngleDeg) -> AngleDeg {
        AngleDeg::new(self.0 + rhs.0)
    }
}

impl Sub for AngleDeg {
    type Output = AngleDeg;
    fn sub(self, rhs: AngleDeg) -> AngleDeg {
        AngleDeg::new(self.0 - rhs.0)
    }
}

impl Neg for AngleDeg {
    type Output = AngleDeg;
    fn neg(self) -> AngleDeg {
        AngleDeg::new(-self.0)
    }
}

impl fmt::Display for AngleDeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}°", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_range_edges() {
        assert_eq!(AngleDeg::new(90.0).degrees(), 90.0);
        assert_eq!(AngleDeg::new(-90.0).degrees(), 90.0);
        assert_eq!(AngleDeg::new(180.0).degrees(), 0.0);
        assert_eq!(AngleDeg::new(135.0).degrees(), -45.0);
        assert_eq!(AngleDeg::new(-135.0).degrees(), 45.0);
        assert!(AngleDeg::new(f64::NAN).degrees().is_nan());
    }

    #[test]
    fn distance_wraps() {
        assert!((AngleDeg::new(89.0).distance(AngleDeg::new(-89.0)) - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn half_turn_periodic(x in -1e4f64..1e4) {
            let a = AngleDeg::new(x).degrees();
            let b = AngleDeg::new(x + 180.0).degrees();
            prop_assert!((a - b).abs() < 1e-9 || (a - b).abs() > 179.9);
            prop_assert!(a > -90.0 && a <= 90.0);
        }

        #[test]
        fn idempotent(x in -1e4f64..1e4) {
            let a = AngleDeg::new(x);
            prop_assert_eq!(AngleDeg::new(a.degrees()), a);
        }
    }
}
