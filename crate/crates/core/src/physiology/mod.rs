//! Non-linear patient model.
//!
//! The rhythm state machine reacts to interventions, timers and seeded
//! randomness. Vitals relax exponentially toward rhythm-dependent targets
//! that CPR and ventilation modulate.
//!
//! Randomness is drawn at exactly two sites, one unit draw per opportunity:
//! a shock delivered to a shockable rhythm with pads attached and the
//! defibrillator charged, and each step spent in asystole/PEA while
//! epinephrine is active and the CPR fraction is adequate.

mod params;
mod prng;
mod state;

use thiserror::Error;

pub use params::{CprBand, PhysioParams, TimeConstants};
pub use prng::{FixedDraws, Prng, UnitSource};
pub use state::{
    cpr_fraction_at, AirwayDevice, CompressionInterval, DrugDose, PatientState, AMIODARONE,
    DEFAULT_COMPRESSION_RATE, EPINEPHRINE,
};

use crate::model::{ActionKind, RejectReason, Rhythm, SimTime, StateTransition, TransitionCause, Vitals};

/// End-tidal CO2 reached by ideal-quality CPR during arrest (mmHg).
pub const CPR_ETCO2: f64 = 20.0;
/// Systolic pressure generated by ideal-quality CPR (mmHg).
pub const CPR_BP_SYS: f64 = 80.0;
/// Diastolic pressure generated by ideal-quality CPR (mmHg).
pub const CPR_BP_DIA: f64 = 25.0;
/// SpO2 target increase while ventilated (percentage points, capped at 100).
pub const VENTILATION_SPO2_BONUS: f64 = 30.0;
/// Assisted breaths per minute while ventilated in arrest.
pub const VENTILATION_RATE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysioError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("action invalid: {0}")]
    ActionInvalid(RejectReason),
}

/// New patient state and vitals plus the transitions that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub patient: PatientState,
    pub vitals: Vitals,
    pub transitions: Vec<StateTransition>,
}

/// Target vitals for a rhythm with no CPR or ventilation.
pub fn rhythm_profile(rhythm: Rhythm) -> Vitals {
    let (heart_rate, spo2, etco2, bp_sys, bp_dia, resp_rate) = match rhythm {
        Rhythm::VentricularFibrillation => (0.0, 60.0, 8.0, 0.0, 0.0, 0.0),
        Rhythm::PulselessVTach => (180.0, 60.0, 8.0, 0.0, 0.0, 0.0),
        Rhythm::Asystole => (0.0, 55.0, 0.0, 0.0, 0.0, 0.0),
        Rhythm::PEA => (40.0, 55.0, 5.0, 0.0, 0.0, 0.0),
        Rhythm::SinusROSC => (96.0, 94.0, 38.0, 112.0, 68.0, 14.0),
    };
    Vitals { heart_rate, spo2, etco2, bp_sys, bp_dia, resp_rate }
}

/// Compression quality for a rate, using the default 100-120/min plateau.
pub fn cpr_quality(rate: f64) -> Result<f64, PhysioError> {
    cpr_quality_in(&CprBand::default(), rate)
}

pub fn cpr_quality_in(band: &CprBand, rate: f64) -> Result<f64, PhysioError> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(PhysioError::Domain(format!("compression rate {rate} must be finite and >= 0")));
    }
    let q = if rate <= band.zero_below || rate >= band.zero_above {
        0.0
    } else if rate < band.plateau_low {
        (rate - band.zero_below) / (band.plateau_low - band.zero_below)
    } else if rate <= band.plateau_high {
        1.0
    } else {
        (band.zero_above - rate) / (band.zero_above - band.plateau_high)
    };
    Ok(q)
}

/// Vitals the patient relaxes toward in its current condition.
pub fn effective_target(patient: &PatientState, params: &PhysioParams) -> Vitals {
    let mut target = rhythm_profile(patient.rhythm);
    if patient.compressions_active && patient.rhythm.is_arrest() {
        let q = cpr_quality_in(&params.cpr_band, patient.compression_rate).unwrap_or(0.0);
        target.etco2 = target.etco2.max(CPR_ETCO2 * q);
        target.bp_sys = target.bp_sys.max(CPR_BP_SYS * q);
        target.bp_dia = target.bp_dia.max(CPR_BP_DIA * q);
    }
    if patient.ventilating {
        target.spo2 = (target.spo2 + VENTILATION_SPO2_BONUS).min(100.0);
        if patient.rhythm.is_arrest() {
            target.resp_rate = target.resp_rate.max(VENTILATION_RATE);
        }
    }
    target
}

/// Exact first-order relaxation of every field over `dt_ms` toward `target`.
pub fn relax(current: &Vitals, target: &Vitals, dt_ms: u64, tau: &TimeConstants) -> Vitals {
    let field = |v: f64, t: f64, tau_s: f64| t + (v - t) * (-(dt_ms as f64) / (tau_s * 1000.0)).exp();
    let bp_sys = field(current.bp_sys, target.bp_sys, tau.bp).max(0.0);
    Vitals {
        heart_rate: field(current.heart_rate, target.heart_rate, tau.heart_rate).max(0.0),
        spo2: field(current.spo2, target.spo2, tau.spo2).clamp(0.0, 100.0),
        etco2: field(current.etco2, target.etco2, tau.etco2).max(0.0),
        bp_sys,
        bp_dia: field(current.bp_dia, target.bp_dia, tau.bp).clamp(0.0, bp_sys),
        resp_rate: field(current.resp_rate, target.resp_rate, tau.resp_rate).max(0.0),
    }
}

fn transition(patient: &mut PatientState, to: Rhythm, cause: TransitionCause) -> StateTransition {
    let from = patient.rhythm;
    patient.rhythm = to;
    patient.time_in_state = SimTime::ZERO;
    StateTransition { from, to, cause }
}

fn positive(value: f64) -> Result<f64, PhysioError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(PhysioError::ActionInvalid(RejectReason::BadParameter))
    }
}

/// Applies a role-validated action at `now`.
///
/// Shocking a non-shockable rhythm is allowed and recorded; it never
/// converts the rhythm and takes no draw.
pub fn apply_action(
    patient: &PatientState,
    vitals: &Vitals,
    action: &ActionKind,
    now: SimTime,
    rng: &mut impl UnitSource,
    params: &PhysioParams,
) -> Result<Outcome, PhysioError> {
    let mut p = patient.clone();
    p.refresh_cpr_fraction(now, params.cpr_window_ms());
    let mut transitions = Vec::new();

    match action {
        ActionKind::AttachPads => p.pads_attached = true,
        ActionKind::StartCompressions => p.start_compressions(now),
        ActionKind::StopCompressions => p.stop_compressions(now),
        ActionKind::SetCompressionRate { rate } => {
            if !(rate.is_finite() && *rate >= 0.0) {
                return Err(PhysioError::ActionInvalid(RejectReason::BadParameter));
            }
            p.compression_rate = *rate;
        }
        ActionKind::ChargeDefibrillator { energy } => p.defib_charged_energy = Some(positive(*energy)?),
        ActionKind::DeliverShock => {
            if p.defib_charged_energy.is_none() {
                return Err(PhysioError::ActionInvalid(RejectReason::NotCharged));
            }
            if !p.pads_attached {
                return Err(PhysioError::ActionInvalid(RejectReason::NoPads));
            }
            p.defib_charged_energy = None;
            p.shock_count += 1;
            if p.rhythm.is_shockable() {
                let base = params.shock_success_base
                    + if p.has_received(AMIODARONE) { params.amiodarone_shock_bonus } else { 0.0 };
                let chance = (base + params.shock_success_cpr_bonus * p.cpr_fraction).clamp(0.0, 1.0);
                if rng.next_unit() < chance {
                    transitions.push(transition(&mut p, Rhythm::SinusROSC, TransitionCause::Shock));
                }
            }
        }
        ActionKind::InsertOralAirway => {
            if p.airway == AirwayDevice::None {
                p.airway = AirwayDevice::OralAirway;
            }
        }
        ActionKind::BagValveMaskVentilate => p.ventilating = true,
        ActionKind::Intubate => {
            p.airway = AirwayDevice::Intubated;
            p.ventilating = true;
        }
        ActionKind::ObtainIvAccess => p.iv_access = true,
        ActionKind::AdministerDrug { drug, dose_mg } => {
            if drug.is_empty() {
                return Err(PhysioError::ActionInvalid(RejectReason::BadParameter));
            }
            let dose_mg = positive(*dose_mg)?;
            p.drug_history.push(DrugDose { drug: drug.clone(), dose_mg, time: now });
        }
        ActionKind::PushFluids { ml } => {
            positive(*ml)?;
        }
        ActionKind::CheckResponsiveness
        | ActionKind::CallForHelp
        | ActionKind::CheckPulse
        | ActionKind::CheckRhythm
        | ActionKind::AttachMonitor
        | ActionKind::ClearPatient
        | ActionKind::Auscultate
        | ActionKind::OrderEkg
        | ActionKind::OrderXray
        | ActionKind::AnnounceRhythm => {}
    }

    Ok(Outcome { patient: p, vitals: *vitals, transitions })
}

/// Advances the patient by `dt_ms`, ending at `now`.
///
/// Order within a step: advance `time_in_state` and the CPR fraction, relax
/// vitals toward the pre-step target, then evaluate the rhythm timers
/// (deterioration, drug-driven ROSC draw, re-arrest). `dt_ms == 0` is the
/// identity and emits nothing.
pub fn step(
    patient: &PatientState,
    vitals: &Vitals,
    dt_ms: u64,
    now: SimTime,
    rng: &mut impl UnitSource,
    params: &PhysioParams,
) -> Outcome {
    if dt_ms == 0 {
        return Outcome { patient: patient.clone(), vitals: *vitals, transitions: Vec::new() };
    }
    let mut p = patient.clone();
    p.time_in_state += dt_ms;
    p.refresh_cpr_fraction(now, params.cpr_window_ms());

    let target = effective_target(patient, params);
    let v = relax(vitals, &target, dt_ms, &params.vitals_time_constant);

    let mut transitions = Vec::new();
    match p.rhythm {
        Rhythm::VentricularFibrillation | Rhythm::PulselessVTach => {
            if let Some(limit) = params.deterioration_ms(p.rhythm) {
                if p.time_in_state.millis() >= limit {
                    let to = match p.rhythm {
                        Rhythm::VentricularFibrillation => Rhythm::Asystole,
                        _ => Rhythm::VentricularFibrillation,
                    };
                    transitions.push(transition(&mut p, to, TransitionCause::Deterioration));
                }
            }
        }
        Rhythm::Asystole | Rhythm::PEA => {
            let epi_active = p
                .last_dose(EPINEPHRINE)
                .is_some_and(|d| d.time <= now && now.since(d.time) <= params.epi_window_ms());
            if epi_active && p.cpr_fraction >= params.rosc_cpr_fraction_min && params.epi_rosc_rate_per_min > 0.0 {
                let chance = 1.0 - (-params.epi_rosc_rate_per_min * dt_ms as f64 / 60_000.0).exp();
                if rng.next_unit() < chance {
                    transitions.push(transition(&mut p, Rhythm::SinusROSC, TransitionCause::DrugResponse));
                }
            }
        }
        Rhythm::SinusROSC => {
            if !p.airway_supported() && p.time_in_state.millis() >= params.rearrest_ms() {
                transitions.push(transition(&mut p, Rhythm::VentricularFibrillation, TransitionCause::ReArrest));
            }
        }
    }

    Outcome { patient: p, vitals: v, transitions }
}

/// Forces a rhythm (scripted events). Returns `None` when already in it.
pub fn force_rhythm(patient: &mut PatientState, to: Rhythm) -> Option<StateTransition> {
    (patient.rhythm != to).then(|| transition(patient, to, TransitionCause::Scripted))
}
