//! Replayed results shown when the live network is unavailable.

use chrono::Utc;
use pqn_core::chsh::{settings_from_user, ChshResult, ETerm, SweepTable};
use pqn_core::{AngleDeg, Error, Result};

/// Looks up the stored sweep at δ = a′ − a. The stored curve carries only S
/// and σ_S, so the four correlation terms are reported as S split evenly
/// with the CHSH signs, each with σ_S/2.
pub fn fallback_result(a: AngleDeg, a_prime: AngleDeg, table: Option<&SweepTable>) -> Result<ChshResult> {
    let table = table.ok_or(Error::Unavailable)?;
    if !(a.is_finite() && a_prime.is_finite()) {
        return Err(Error::Domain("angles must be finite".into()));
    }
    let settings = settings_from_user(a, a_prime);
    let p = table.lookup(settings.delta.degrees());
    let quarter = p.s_value / 4.0;
    let term = |sign: f64| ETerm { e: sign * quarter, sigma: p.sigma_s / 2.0 };
    Ok(ChshResult {
        s_value: p.s_value,
        sigma_s: p.sigma_s,
        e_terms: [term(1.0), term(-1.0), term(1.0), term(1.0)],
        settings,
        live: false,
        wall_time: Utc::now(),
    })
}
