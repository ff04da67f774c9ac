use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{secs_to_millis, Rhythm};

/// Per-field first-order relaxation time constants, in seconds.
///
/// Systolic and diastolic pressure share one constant so relaxation keeps
/// `bp_dia <= bp_sys`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConstants {
    pub heart_rate: f64,
    pub spo2: f64,
    pub etco2: f64,
    pub bp: f64,
    pub resp_rate: f64,
}

impl Default for TimeConstants {
    fn default() -> Self {
        TimeConstants { heart_rate: 5.0, spo2: 30.0, etco2: 10.0, bp: 8.0, resp_rate: 5.0 }
    }
}

impl TimeConstants {
    pub fn all(&self) -> [(&'static str, f64); 5] {
        [
            ("heart_rate", self.heart_rate),
            ("spo2", self.spo2),
            ("etco2", self.etco2),
            ("bp", self.bp),
            ("resp_rate", self.resp_rate),
        ]
    }

    pub fn max(&self) -> f64 {
        self.all().iter().map(|(_, v)| *v).fold(0.0, f64::max)
    }
}

/// Piecewise-linear compression-rate quality map: zero at or below
/// `zero_below`, ramps to 1.0 at `plateau_low`, stays 1.0 through
/// `plateau_high`, ramps back to zero at `zero_above`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CprBand {
    pub zero_below: f64,
    pub plateau_low: f64,
    pub plateau_high: f64,
    pub zero_above: f64,
}

impl Default for CprBand {
    fn default() -> Self {
        CprBand { zero_below: 60.0, plateau_low: 100.0, plateau_high: 120.0, zero_above: 160.0 }
    }
}

/// Tunable constants of the patient model. Durations are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysioParams {
    pub vitals_time_constant: TimeConstants,
    /// Untreated time in a rhythm before it degrades (VF to asystole,
    /// pulseless VT to VF).
    pub deterioration_timeout: BTreeMap<Rhythm, f64>,
    pub shock_success_base: f64,
    pub shock_success_cpr_bonus: f64,
    /// Added to the shock success base once amiodarone has been given.
    pub amiodarone_shock_bonus: f64,
    pub rosc_rearrest_timeout: f64,
    pub epi_effect_window: f64,
    /// ROSC hazard per minute for asystole/PEA while epinephrine is active
    /// and CPR fraction is adequate.
    pub epi_rosc_rate_per_min: f64,
    pub rosc_cpr_fraction_min: f64,
    pub cpr_window: f64,
    pub cpr_band: CprBand,
}

impl Default for PhysioParams {
    fn default() -> Self {
        PhysioParams {
            vitals_time_constant: TimeConstants::default(),
            deterioration_timeout: BTreeMap::from([
                (Rhythm::VentricularFibrillation, 300.0),
                (Rhythm::PulselessVTach, 120.0),
            ]),
            shock_success_base: 0.3,
            shock_success_cpr_bonus: 0.5,
            amiodarone_shock_bonus: 0.1,
            rosc_rearrest_timeout: 180.0,
            epi_effect_window: 180.0,
            epi_rosc_rate_per_min: 1.0,
            rosc_cpr_fraction_min: 0.6,
            cpr_window: 60.0,
            cpr_band: CprBand::default(),
        }
    }
}

impl PhysioParams {
    pub fn deterioration_ms(&self, rhythm: Rhythm) -> Option<u64> {
        self.deterioration_timeout.get(&rhythm).map(|s| secs_to_millis(*s))
    }

    pub fn cpr_window_ms(&self) -> u64 {
        secs_to_millis(self.cpr_window)
    }

    pub fn rearrest_ms(&self) -> u64 {
        secs_to_millis(self.rosc_rearrest_timeout)
    }

    pub fn epi_window_ms(&self) -> u64 {
        secs_to_millis(self.epi_effect_window)
    }

    /// Human-readable invariant violations, as `(field path, message)`.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (name, p) in [
            ("shock_success_base", self.shock_success_base),
            ("shock_success_cpr_bonus", self.shock_success_cpr_bonus),
            ("amiodarone_shock_bonus", self.amiodarone_shock_bonus),
            ("rosc_cpr_fraction_min", self.rosc_cpr_fraction_min),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push((name.to_string(), format!("probability {p} outside [0, 1]")));
            }
        }
        for (name, tau) in self.vitals_time_constant.all() {
            if !(tau > 0.0 && tau.is_finite()) {
                out.push((format!("vitals_time_constant.{name}"), format!("time constant {tau} must be > 0")));
            }
        }
        for (rhythm, secs) in &self.deterioration_timeout {
            if !(*secs > 0.0 && secs.is_finite()) {
                out.push((format!("deterioration_timeout.{rhythm}"), format!("timeout {secs} must be > 0")));
            }
            if !matches!(rhythm, Rhythm::VentricularFibrillation | Rhythm::PulselessVTach) {
                out.push((format!("deterioration_timeout.{rhythm}"), "rhythm has no deterioration target".into()));
            }
        }
        for (name, secs) in [
            ("rosc_rearrest_timeout", self.rosc_rearrest_timeout),
            ("epi_effect_window", self.epi_effect_window),
            ("cpr_window", self.cpr_window),
        ] {
            if !(secs > 0.0 && secs.is_finite()) {
                out.push((name.to_string(), format!("duration {secs} must be > 0")));
            }
        }
        if !(self.epi_rosc_rate_per_min >= 0.0 && self.epi_rosc_rate_per_min.is_finite()) {
            out.push(("epi_rosc_rate_per_min".into(), "rate must be finite and >= 0".into()));
        }
        let b = &self.cpr_band;
        if !(b.zero_below < b.plateau_low && b.plateau_low <= b.plateau_high && b.plateau_high < b.zero_above) {
            out.push(("cpr_band".into(), "band edges must satisfy zero_below < plateau_low <= plateau_high < zero_above".into()));
        }
        out
    }
}
