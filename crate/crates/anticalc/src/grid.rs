//! Uniform time grid on [0, T].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::GridTooCoarse(steps));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::OutOfRange {
                name: "horizon",
                value: horizon,
                constraint: "0 < T < inf",
            });
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    /// Unit-horizon grid; panics only for fewer than two steps.
    pub fn unit(steps: usize) -> Self {
        Self::new(1.0, steps).expect("unit grid requires at least two steps")
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.dt.sqrt()
    }

    /// i-th grid point; `point(steps) == horizon` exactly.
    pub fn point(&self, i: usize) -> f64 {
        self.horizon * (i as f64 / self.steps as f64)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.point(i)).collect()
    }

    /// Index of the grid point nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let raw = (t / self.dt).round();
        (raw.max(0.0) as usize).min(self.steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_is_exact() {
        for n in 2..=128 {
            let g = TimeGrid::unit(n);
            assert_eq!(g.point(n), 1.0);
            assert_eq!(g.point(0), 0.0);
            assert!((g.dt() * n as f64 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_degenerate() {
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 8).is_err());
        assert!(TimeGrid::new(f64::NAN, 8).is_err());
    }
}
