//! Unit conversions. Internally all frequencies are angular (rad/s) and all
//! times are in seconds.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Unit system a configuration is written in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Frequencies in Hz (cyclic), times in seconds.
    Hz,
    /// Angular frequencies in rad/s, times in seconds.
    #[default]
    RadS,
    /// Frequencies in units of the reference Rabi frequency Ω₁, times in Rabi
    /// cycles 2π/Ω₁. Internally Ω₁ = 1 rad/s.
    Omega1Units,
}

impl Units {
    pub fn frequency_to_rad_s(self, v: f64) -> f64 {
        match self {
            Units::Hz => TAU * v,
            Units::RadS | Units::Omega1Units => v,
        }
    }

    pub fn frequency_from_rad_s(self, v: f64) -> f64 {
        match self {
            Units::Hz => v / TAU,
            Units::RadS | Units::Omega1Units => v,
        }
    }

    pub fn time_to_s(self, v: f64) -> f64 {
        match self {
            Units::Omega1Units => TAU * v,
            _ => v,
        }
    }

    pub fn time_from_s(self, v: f64) -> f64 {
        match self {
            Units::Omega1Units => v / TAU,
            _ => v,
        }
    }
}

/// Gyromagnetic ratios in rad/s/T.
pub const GAMMA_ELECTRON: f64 = TAU * 28.024e9;
pub const GAMMA_PROTON: f64 = TAU * 42.577e6;
pub const GAMMA_P31: f64 = TAU * 17.235e6;

pub const MU0: f64 = 1.256_637_062_12e-6;
pub const HBAR: f64 = 1.054_571_817e-34;
