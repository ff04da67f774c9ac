use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Declares a fieldless enum with a fixed name table, `ALL`, `as_str` and `FromStr`.
macro_rules! named_enum {
    (
        $(#[$meta:meta])*
        $vis:vis enum $name:ident { $($(#[$vmeta:meta])* $variant:ident),+ $(,)? }
    ) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        $(#[$meta])*
        $vis enum $name { $($(#[$vmeta])* $variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub const fn as_str(self) -> &'static str {
                match self { $($name::$variant => stringify!($variant)),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownName;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($variant) => Ok($name::$variant),)+
                    other => Err(UnknownName { what: stringify!($name), token: other.to_string() }),
                }
            }
        }
    };
}

pub(crate) use named_enum;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {what} `{token}`")]
pub struct UnknownName {
    pub what: &'static str,
    pub token: String,
}

named_enum! {
    /// Participant role. The four trainee roles are fixed; spectators observe only.
    pub enum Role {
        TeamLeader,
        Compressor,
        Airway,
        DefibMeds,
        Spectator,
    }
}

impl Role {
    pub const TRAINEES: [Role; 4] = [Role::TeamLeader, Role::Compressor, Role::Airway, Role::DefibMeds];

    pub fn is_trainee(self) -> bool {
        self != Role::Spectator
    }
}

named_enum! {
    /// Cardiac rhythm driving the patient state machine.
    pub enum Rhythm {
        VentricularFibrillation,
        PulselessVTach,
        Asystole,
        PEA,
        SinusROSC,
    }
}

impl Rhythm {
    /// VF and pulseless VT respond to defibrillation.
    pub fn is_shockable(self) -> bool {
        matches!(self, Rhythm::VentricularFibrillation | Rhythm::PulselessVTach)
    }

    /// Every rhythm except ROSC is a cardiac-arrest rhythm.
    pub fn is_arrest(self) -> bool {
        self != Rhythm::SinusROSC
    }
}

/// Monitored vital signs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vitals {
    #[serde(serialize_with = "canonical_f64")]
    pub heart_rate: f64,
    #[serde(serialize_with = "canonical_f64")]
    pub spo2: f64,
    #[serde(serialize_with = "canonical_f64")]
    pub etco2: f64,
    #[serde(serialize_with = "canonical_f64")]
    pub bp_sys: f64,
    #[serde(serialize_with = "canonical_f64")]
    pub bp_dia: f64,
    #[serde(serialize_with = "canonical_f64")]
    pub resp_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VitalsError {
    #[error("vitals field `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("vitals field `{0}` is negative")]
    Negative(&'static str),
    #[error("spo2 {0} exceeds 100")]
    Spo2Range(f64),
    #[error("diastolic pressure {dia} exceeds systolic {sys}")]
    Pressure { sys: f64, dia: f64 },
}

impl Vitals {
    pub const FIELDS: [&'static str; 6] = ["heart_rate", "spo2", "etco2", "bp_sys", "bp_dia", "resp_rate"];

    pub fn fields(&self) -> [f64; 6] {
        [self.heart_rate, self.spo2, self.etco2, self.bp_sys, self.bp_dia, self.resp_rate]
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::FIELDS
            .iter()
            .zip(self.fields())
            .find(|(_, v)| !v.is_finite())
            .map(|(name, _)| *name)
    }

    pub fn validate(&self) -> Result<(), VitalsError> {
        if let Some(field) = self.first_non_finite() {
            return Err(VitalsError::NonFinite(field));
        }
        if let Some((name, _)) = Self::FIELDS.iter().zip(self.fields()).find(|(_, v)| *v < 0.0) {
            return Err(VitalsError::Negative(name));
        }
        if self.spo2 > 100.0 {
            return Err(VitalsError::Spo2Range(self.spo2));
        }
        if self.bp_dia > self.bp_sys {
            return Err(VitalsError::Pressure { sys: self.bp_sys, dia: self.bp_dia });
        }
        Ok(())
    }
}

/// Serializes `-0.0` as `0.0` so structurally equal values encode identically.
pub(crate) fn canonical_f64<S: serde::Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.serialize_f64(if *value == 0.0 { 0.0 } else { *value })
}
