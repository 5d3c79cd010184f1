//! Dimensional formulas and the π-group exponent procedure.
//!
//! A quantity's dimension is a vector of integer exponents over mass, length,
//! time and temperature. Its π group is found by cancelling temperature with
//! `T_s`, then time with `ṁ_I`, then mass with `ρ`, and finally length with
//! `D`.

use std::fmt;
use std::ops::{Div, Mul};

use serde::{Deserialize, Serialize};

/// Exponents of `[M, L, t, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Dim(pub [i32; 4]);

impl Dim {
    pub const NONE: Dim = Dim([0, 0, 0, 0]);
    pub const MASS: Dim = Dim([1, 0, 0, 0]);
    pub const LENGTH: Dim = Dim([0, 1, 0, 0]);
    pub const TIME: Dim = Dim([0, 0, 1, 0]);
    pub const TEMPERATURE: Dim = Dim([0, 0, 0, 1]);

    pub fn pow(self, n: i32) -> Dim {
        Dim(self.0.map(|e| e * n))
    }

    pub fn is_dimensionless(self) -> bool {
        self == Dim::NONE
    }
}

impl Mul for Dim {
    type Output = Dim;
    fn mul(self, rhs: Dim) -> Dim {
        Dim(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl Div for Dim {
    type Output = Dim;
    fn div(self, rhs: Dim) -> Dim {
        Dim(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = ["M", "L", "t", "T"];
        let parts: Vec<String> = self
            .0
            .iter()
            .zip(names)
            .filter(|(e, _)| **e != 0)
            .map(|(e, n)| if *e == 1 { n.to_string() } else { format!("{n}^{e}") })
            .collect();
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("·"))
        }
    }
}

pub mod dims {
    use super::Dim;

    pub const DENSITY: Dim = Dim([1, -3, 0, 0]);
    pub const MASS_FLOW: Dim = Dim([1, 0, -1, 0]);
    pub const TEMPERATURE: Dim = Dim::TEMPERATURE;
    pub const LENGTH: Dim = Dim::LENGTH;
    pub const TIME: Dim = Dim::TIME;
    pub const VOLUME: Dim = Dim([0, 3, 0, 0]);
    pub const PRESSURE: Dim = Dim([1, -1, -2, 0]);
    pub const POWER: Dim = Dim([1, 2, -3, 0]);
    /// hA [W/K]
    pub const CONDUCTANCE: Dim = Dim([1, 2, -3, -1]);
    /// c_p [J/(kg·K)]
    pub const SPECIFIC_HEAT: Dim = Dim([0, 2, -2, -1]);
    /// ρc_pV [J/K]
    pub const HEAT_CAPACITY: Dim = Dim([1, 2, -2, -1]);
    /// k in ΔP = k(ṁ/A)² [m³/kg]
    pub const LOSS_COEFF: Dim = Dim([-1, 3, 0, 0]);
}

/// Exponents `[a, b, c, d]` such that `x · ρ^a ṁ_I^b T_s^c D^d` is dimensionless.
pub fn pi_exponents(x: Dim) -> [i32; 4] {
    let [m, l, t, k] = x.0;
    // Temperature first, then time through ṁ_I, mass through ρ, length through D.
    let c = -k;
    let b = t;
    let m_left = m + b;
    let a = -m_left;
    let l_left = l - 3 * a;
    let d = -l_left;
    [a, b, c, d]
}

/// Dimension of `ρ^a ṁ_I^b T_s^c D^d`.
pub fn base_dim(e: [i32; 4]) -> Dim {
    dims::DENSITY.pow(e[0])
        * dims::MASS_FLOW.pow(e[1])
        * dims::TEMPERATURE.pow(e[2])
        * dims::LENGTH.pow(e[3])
}

/// A named group in the audit.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAudit {
    pub name: &'static str,
    pub dim: Dim,
    pub exponents: [i32; 4],
    pub residual: Dim,
}

/// Run the exponent procedure on every grouped model variable and report the
/// leftover dimension (all should be `1`).
pub fn audit_groups() -> Vec<GroupAudit> {
    use dims::*;
    let entries: [(&'static str, Dim); 11] = [
        ("t*", TIME),
        ("T*", TEMPERATURE),
        // ṁ/(ρV)
        ("pi1", MASS_FLOW / (DENSITY * VOLUME)),
        // hA/(ρc_pV)·ΔT
        ("pi2", CONDUCTANCE / (DENSITY * SPECIFIC_HEAT * VOLUME) * TEMPERATURE),
        ("pi3", PRESSURE),
        ("pi4", HEAT_CAPACITY),
        ("pi5", POWER),
        ("pi6", POWER),
        ("k_loss", LOSS_COEFF),
        ("hA", CONDUCTANCE),
        ("c_p", SPECIFIC_HEAT),
    ];
    entries
        .into_iter()
        .map(|(name, dim)| {
            let exponents = pi_exponents(dim);
            GroupAudit {
                name,
                dim,
                exponents,
                residual: dim * base_dim(exponents),
            }
        })
        .collect()
}
