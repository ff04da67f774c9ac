use serde::{Deserialize, Serialize};

use crate::model::{canonical_f64, Rhythm, SimTime};

pub const EPINEPHRINE: &str = "epinephrine";
pub const AMIODARONE: &str = "amiodarone";

/// Compression rate assumed until a trainee sets one.
pub const DEFAULT_COMPRESSION_RATE: f64 = 110.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AirwayDevice {
    None,
    OralAirway,
    Intubated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugDose {
    pub drug: String,
    #[serde(serialize_with = "canonical_f64")]
    pub dose_mg: f64,
    pub time: SimTime,
}

/// One contiguous run of chest compressions; `end` is `None` while ongoing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionInterval {
    pub start: SimTime,
    pub end: Option<SimTime>,
}

/// The patient's dynamic clinical condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    pub rhythm: Rhythm,
    pub time_in_state: SimTime,
    pub pads_attached: bool,
    pub iv_access: bool,
    pub airway: AirwayDevice,
    /// Set once bag-mask ventilation or intubation has been performed.
    pub ventilating: bool,
    pub compressions_active: bool,
    #[serde(serialize_with = "canonical_f64")]
    pub compression_rate: f64,
    #[serde(serialize_with = "canonical_f64")]
    pub cpr_fraction: f64,
    pub shock_count: u32,
    pub defib_charged_energy: Option<f64>,
    pub drug_history: Vec<DrugDose>,
    /// Compression runs overlapping the trailing CPR window, plus the most
    /// recent run even when older.
    pub compression_log: Vec<CompressionInterval>,
}

impl PatientState {
    pub fn initial(rhythm: Rhythm) -> Self {
        PatientState {
            rhythm,
            time_in_state: SimTime::ZERO,
            pads_attached: false,
            iv_access: false,
            airway: AirwayDevice::None,
            ventilating: false,
            compressions_active: false,
            compression_rate: DEFAULT_COMPRESSION_RATE,
            cpr_fraction: 0.0,
            shock_count: 0,
            defib_charged_energy: None,
            drug_history: Vec::new(),
            compression_log: Vec::new(),
        }
    }

    pub fn airway_supported(&self) -> bool {
        self.ventilating || self.airway != AirwayDevice::None
    }

    pub fn last_dose(&self, drug: &str) -> Option<&DrugDose> {
        self.drug_history.iter().rev().find(|d| d.drug == drug)
    }

    pub fn has_received(&self, drug: &str) -> bool {
        self.drug_history.iter().any(|d| d.drug == drug)
    }

    /// When compressions last stopped, if they are not running.
    pub fn compressions_stopped_at(&self) -> Option<SimTime> {
        match self.compression_log.last() {
            Some(CompressionInterval { end: Some(end), .. }) if !self.compressions_active => Some(*end),
            _ => None,
        }
    }

    pub(crate) fn start_compressions(&mut self, now: SimTime) {
        if !self.compressions_active {
            self.compressions_active = true;
            self.compression_log.push(CompressionInterval { start: now, end: None });
        }
    }

    pub(crate) fn stop_compressions(&mut self, now: SimTime) {
        if self.compressions_active {
            self.compressions_active = false;
            if let Some(last) = self.compression_log.last_mut() {
                last.end = Some(now);
            }
        }
    }

    /// Recomputes `cpr_fraction` at `now` and drops runs that can no longer
    /// overlap the window.
    pub(crate) fn refresh_cpr_fraction(&mut self, now: SimTime, window_ms: u64) {
        self.cpr_fraction = cpr_fraction_at(&self.compression_log, now, window_ms);
        let window_start = now.millis().saturating_sub(window_ms);
        let keep_from = self
            .compression_log
            .iter()
            .position(|iv| iv.end.is_none_or(|e| e.millis() > window_start))
            .unwrap_or(self.compression_log.len())
            .min(self.compression_log.len().saturating_sub(1));
        self.compression_log.drain(..keep_from);
    }
}

/// Fraction of the trailing window `[now - window, now]` covered by
/// compressions. Before a full window has elapsed the denominator is the
/// elapsed time; at time zero the fraction is zero.
pub fn cpr_fraction_at(log: &[CompressionInterval], now: SimTime, window_ms: u64) -> f64 {
    let t = now.millis();
    let lo = t.saturating_sub(window_ms);
    let span = t - lo;
    if span == 0 {
        return 0.0;
    }
    let covered: u64 = log
        .iter()
        .map(|iv| {
            let end = iv.end.map_or(t, |e| e.millis().min(t));
            end.saturating_sub(iv.start.millis().max(lo))
        })
        .sum();
    (covered as f64 / span as f64).clamp(0.0, 1.0)
}
