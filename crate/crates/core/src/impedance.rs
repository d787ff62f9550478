//! Master-side Cartesian impedance: the operator feels the slave tracking
//! error as a spring and the master's own velocity as viscous drag.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("impedance gains must be positive (stiffness = {stiffness}, viscosity = {viscosity})")]
pub struct ImpedanceError {
    pub stiffness: f64,
    pub viscosity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceConfig {
    /// `η_f`, N per length unit.
    pub stiffness: f64,
    /// `η_V`, N·s per length unit.
    pub viscosity: f64,
}

impl ImpedanceConfig {
    pub fn new(stiffness: f64, viscosity: f64) -> Result<Self, ImpedanceError> {
        let cfg = Self { stiffness, viscosity };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ImpedanceError> {
        if self.stiffness > 0.0 && self.viscosity > 0.0 && self.stiffness.is_finite() && self.viscosity.is_finite() {
            Ok(())
        } else {
            Err(ImpedanceError { stiffness: self.stiffness, viscosity: self.viscosity })
        }
    }
}

/// Force on the master, in the master base frame (N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ReflectedForce(pub Vector3<f64>);

impl ReflectedForce {
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// `Γ = −η_f t̃ − η_V ṫ`, with `t̃` the slave translation error seen from the
/// master and `ṫ` the master linear velocity.
pub fn master_force(error: &Vector3<f64>, master_velocity: &Vector3<f64>, cfg: &ImpedanceConfig) -> ReflectedForce {
    ReflectedForce(-error * cfg.stiffness - master_velocity * cfg.viscosity)
}
