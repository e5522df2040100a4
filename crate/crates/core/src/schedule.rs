use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectified-flow schedule `alpha_t = 1 - t`, `sigma_t = t`, restricted to
/// `[t_min, 1]` because the conditional score divides by `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_min: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { t_min: 1e-3 }
    }
}

impl Schedule {
    pub fn new(t_min: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(Error::param("t_min must lie in (0, 1)"));
        }
        Ok(Schedule { t_min })
    }

    #[inline]
    pub fn alpha(&self, t: f64) -> f64 {
        1.0 - t
    }

    #[inline]
    pub fn sigma(&self, t: f64) -> f64 {
        t
    }

    /// Accepts `t` in `[t_min, 1]`.
    pub fn check(&self, t: f64) -> Result<()> {
        if t >= self.t_min && t <= 1.0 {
            Ok(())
        } else {
            Err(Error::Schedule { t, t_min: self.t_min })
        }
    }
}
