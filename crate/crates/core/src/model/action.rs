use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::clinical::{canonical_f64, named_enum, UnknownName};

named_enum! {
    /// Parameter-free name of every action in the catalog.
    pub enum ActionName {
        CheckResponsiveness,
        CallForHelp,
        CheckPulse,
        CheckRhythm,
        AttachMonitor,
        AttachPads,
        StartCompressions,
        StopCompressions,
        SetCompressionRate,
        ChargeDefibrillator,
        DeliverShock,
        ClearPatient,
        InsertOralAirway,
        BagValveMaskVentilate,
        Intubate,
        ObtainIvAccess,
        AdministerDrug,
        PushFluids,
        Auscultate,
        OrderEkg,
        OrderXray,
        AnnounceRhythm,
    }
}

/// A medical action with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ActionKind {
    CheckResponsiveness,
    CallForHelp,
    CheckPulse,
    CheckRhythm,
    AttachMonitor,
    AttachPads,
    StartCompressions,
    StopCompressions,
    SetCompressionRate {
        /// Compressions per minute.
        #[serde(serialize_with = "canonical_f64")]
        rate: f64,
    },
    ChargeDefibrillator {
        /// Joules.
        #[serde(serialize_with = "canonical_f64")]
        energy: f64,
    },
    DeliverShock,
    ClearPatient,
    InsertOralAirway,
    BagValveMaskVentilate,
    Intubate,
    ObtainIvAccess,
    AdministerDrug {
        drug: String,
        #[serde(serialize_with = "canonical_f64")]
        dose_mg: f64,
    },
    PushFluids {
        #[serde(serialize_with = "canonical_f64")]
        ml: f64,
    },
    Auscultate,
    OrderEkg,
    OrderXray,
    AnnounceRhythm,
}

impl ActionKind {
    pub fn name(&self) -> ActionName {
        use ActionKind as K;
        match self {
            K::CheckResponsiveness => ActionName::CheckResponsiveness,
            K::CallForHelp => ActionName::CallForHelp,
            K::CheckPulse => ActionName::CheckPulse,
            K::CheckRhythm => ActionName::CheckRhythm,
            K::AttachMonitor => ActionName::AttachMonitor,
            K::AttachPads => ActionName::AttachPads,
            K::StartCompressions => ActionName::StartCompressions,
            K::StopCompressions => ActionName::StopCompressions,
            K::SetCompressionRate { .. } => ActionName::SetCompressionRate,
            K::ChargeDefibrillator { .. } => ActionName::ChargeDefibrillator,
            K::DeliverShock => ActionName::DeliverShock,
            K::ClearPatient => ActionName::ClearPatient,
            K::InsertOralAirway => ActionName::InsertOralAirway,
            K::BagValveMaskVentilate => ActionName::BagValveMaskVentilate,
            K::Intubate => ActionName::Intubate,
            K::ObtainIvAccess => ActionName::ObtainIvAccess,
            K::AdministerDrug { .. } => ActionName::AdministerDrug,
            K::PushFluids { .. } => ActionName::PushFluids,
            K::Auscultate => ActionName::Auscultate,
            K::OrderEkg => ActionName::OrderEkg,
            K::OrderXray => ActionName::OrderXray,
            K::AnnounceRhythm => ActionName::AnnounceRhythm,
        }
    }

    /// Number of parameters this action carries.
    pub fn arity(&self) -> usize {
        self.name().arity()
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        match self {
            ActionKind::SetCompressionRate { rate } if !rate.is_finite() => Some("rate"),
            ActionKind::ChargeDefibrillator { energy } if !energy.is_finite() => Some("energy"),
            ActionKind::AdministerDrug { dose_mg, .. } if !dose_mg.is_finite() => Some("dose_mg"),
            ActionKind::PushFluids { ml } if !ml.is_finite() => Some("ml"),
            _ => None,
        }
    }

    pub fn drug(&self) -> Option<&str> {
        match self {
            ActionKind::AdministerDrug { drug, .. } => Some(drug),
            _ => None,
        }
    }
}

impl ActionName {
    pub fn arity(self) -> usize {
        match self {
            ActionName::AdministerDrug => 2,
            ActionName::SetCompressionRate | ActionName::ChargeDefibrillator | ActionName::PushFluids => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionKind::SetCompressionRate { rate } => write!(f, "SetCompressionRate({rate}/min)"),
            ActionKind::ChargeDefibrillator { energy } => write!(f, "ChargeDefibrillator({energy} J)"),
            ActionKind::AdministerDrug { drug, dose_mg } => write!(f, "AdministerDrug({drug} {dose_mg} mg)"),
            ActionKind::PushFluids { ml } => write!(f, "PushFluids({ml} ml)"),
            other => f.write_str(other.name().as_str()),
        }
    }
}

/// Matches actions by name, optionally narrowed to one drug.
///
/// Written as `DeliverShock` or `AdministerDrug:epinephrine` in documents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionPattern {
    pub name: ActionName,
    pub drug: Option<String>,
}

impl ActionPattern {
    pub fn new(name: ActionName) -> Self {
        ActionPattern { name, drug: None }
    }

    pub fn drug(drug: impl Into<String>) -> Self {
        ActionPattern { name: ActionName::AdministerDrug, drug: Some(drug.into()) }
    }

    pub fn matches(&self, action: &ActionKind) -> bool {
        if action.name() != self.name {
            return false;
        }
        match (&self.drug, action.drug()) {
            (None, _) => true,
            (Some(want), Some(got)) => want == got,
            (Some(_), None) => false,
        }
    }
}

impl fmt::Display for ActionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.drug {
            Some(drug) => write!(f, "{}:{}", self.name, drug),
            None => f.write_str(self.name.as_str()),
        }
    }
}

impl FromStr for ActionPattern {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, drug) = match s.split_once(':') {
            Some((name, drug)) => (name, Some(drug)),
            None => (s, None),
        };
        let name: ActionName = name.parse()?;
        match drug {
            Some(d) if name == ActionName::AdministerDrug && !d.is_empty() => {
                Ok(ActionPattern { name, drug: Some(d.to_string()) })
            }
            Some(_) => Err(UnknownName { what: "ActionPattern", token: s.to_string() }),
            None => Ok(ActionPattern::new(name)),
        }
    }
}

impl From<ActionName> for ActionPattern {
    fn from(name: ActionName) -> Self {
        ActionPattern::new(name)
    }
}

impl Serialize for ActionPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActionPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}
