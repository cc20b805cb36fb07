//! Domain shift: a perturbed copy of a configuration that plays the role of
//! the "real" system.
//!
//! | preset   | mass | damping | max force | sensor bias |
//! |----------|------|---------|-----------|-------------|
//! | `none`   | 1.0  | 1.0     | 1.0       | 0.0         |
//! | `mild`   | 1.3  | 1.5     | 0.85      | 0.03        |
//! | `strong` | 1.6  | 2.0     | 0.7       | 0.08        |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::EnvConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub mass: f64,
    pub damping: f64,
    pub max_force: f64,
    /// Added to every sensor dimension (velocity and position).
    pub sensor_bias: f64,
}

impl ShiftSpec {
    pub const NONE: ShiftSpec = ShiftSpec { mass: 1.0, damping: 1.0, max_force: 1.0, sensor_bias: 0.0 };
    pub const MILD: ShiftSpec = ShiftSpec { mass: 1.3, damping: 1.5, max_force: 0.85, sensor_bias: 0.03 };
    pub const STRONG: ShiftSpec = ShiftSpec { mass: 1.6, damping: 2.0, max_force: 0.7, sensor_bias: 0.08 };

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::NONE),
            "mild" => Ok(Self::MILD),
            "strong" => Ok(Self::STRONG),
            other => Err(Error::Config(format!("unknown shift preset {other:?} (none | mild | strong)"))),
        }
    }

    /// Shifted copy of `cfg`; the input is left untouched.
    pub fn apply(&self, cfg: &EnvConfig) -> Result<EnvConfig> {
        for (name, m) in [("mass", self.mass), ("damping", self.damping), ("max_force", self.max_force)] {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("shift multiplier {name} must be > 0, got {m}")));
            }
        }
        if !self.sensor_bias.is_finite() {
            return Err(Error::Config("sensor bias must be finite".into()));
        }
        let mut out = cfg.clone();
        out.mass *= self.mass;
        out.damping *= self.damping;
        out.max_force *= self.max_force;
        if self.sensor_bias != 0.0 {
            let layout = cfg.kind.layout();
            let d = cfg.obs_dim();
            if out.obs_bias.is_empty() {
                out.obs_bias = vec![0.0; d];
            }
            for (i, b) in out.obs_bias.iter_mut().enumerate() {
                if layout.is_sensor(i) {
                    *b += self.sensor_bias;
                }
            }
        }
        Ok(out)
    }
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self::NONE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{step, EnvState, StepNoise};

    #[test]
    fn identity_shift_is_a_no_op() {
        let cfg = EnvConfig::point_mass();
        assert_eq!(ShiftSpec::NONE.apply(&cfg).unwrap(), cfg);
    }

    #[test]
    fn heavier_mass_slows_response() {
        let mut cfg = EnvConfig::point_mass();
        cfg.obs_noise_std.clear();
        let shifted = ShiftSpec { mass: 1.3, ..ShiftSpec::NONE }.apply(&cfg).unwrap();
        let s = EnvState {
            position: vec![0.0, 0.0],
            velocity: vec![0.0, 0.0],
            command: vec![0.0, 0.0],
            prev_action: vec![0.0, 0.0],
            step: 0,
        };
        let z = StepNoise::zeros(cfg.kind);
        let v0 = step(&s, &[1.0, 0.0], &cfg, &z).unwrap().state.velocity[0];
        let v1 = step(&s, &[1.0, 0.0], &shifted, &z).unwrap().state.velocity[0];
        assert!((v1 - v0 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn bad_multiplier_is_a_config_error() {
        let cfg = EnvConfig::point_mass();
        let bad = ShiftSpec { damping: 0.0, ..ShiftSpec::MILD };
        assert!(matches!(bad.apply(&cfg), Err(Error::Config(_))));
        assert!(ShiftSpec::preset("wild").is_err());
    }

    #[test]
    fn bias_touches_only_sensors() {
        let cfg = EnvConfig::point_mass();
        let s = ShiftSpec::MILD.apply(&cfg).unwrap();
        assert_eq!(s.obs_bias, vec![0.03, 0.03, 0.0, 0.0, 0.03, 0.03, 0.0, 0.0]);
        assert!(cfg.obs_bias.is_empty());
    }
}
