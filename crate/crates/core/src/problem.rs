//! Geometry and vortex data shared by every stage.

use crate::error::{Error, Result};
use crate::green::{GreenEvaluator, Mat2, VortexPotential};
use crate::grid::{Grid, GridField};
use crate::torus::{Torus, Vec2};
use std::f64::consts::PI;

/// Torus, Green evaluator and the two vortex potentials u₀,₁, u₀,₂.
#[derive(Debug, Clone)]
pub struct Problem {
    pub torus: Torus,
    pub green: GreenEvaluator,
    pub u0: [VortexPotential; 2],
}

impl Problem {
    /// Vortex coordinates are Cartesian in the rescaled torus.
    pub fn new(green: GreenEvaluator, v1: &[Vec2], v2: &[Vec2]) -> Result<Self> {
        let torus = green.torus.clone();
        let u0 = [VortexPotential::new(&torus, v1)?, VortexPotential::new(&torus, v2)?];
        Ok(Problem { torus, green, u0 })
    }

    /// k with N₁ = N₂ = 2k.
    pub fn k(&self) -> Result<usize> {
        let (n1, n2) = (self.u0[0].count(), self.u0[1].count());
        if n1 != n2 || n1 % 2 != 0 {
            return Err(Error::Config(format!(
                "bubbling needs N1 = N2 = 2k vortices, got N1 = {n1}, N2 = {n2} (vortices.species1/species2)"
            )));
        }
        Ok(n1 / 2)
    }

    /// Right side 4πN/|Ω| of the system, equal to 8kπ.
    pub fn flux(&self) -> f64 {
        4.0 * PI * self.u0[0].count() as f64
    }

    pub fn u0(&self, i: usize, x: Vec2) -> Result<f64> {
        self.u0[i].value(&self.green, x)
    }

    pub fn u0_grad(&self, i: usize, x: Vec2) -> Result<Vec2> {
        self.u0[i].grad(&self.green, x)
    }

    pub fn u0_hess(&self, i: usize, x: Vec2) -> Result<Mat2> {
        self.u0[i].hess(&self.green, x)
    }

    pub fn vortex_distance(&self, x: Vec2) -> f64 {
        self.u0[0].distance(&self.torus, x).min(self.u0[1].distance(&self.torus, x))
    }

    /// Same data with both species swapped.
    pub fn swapped(&self) -> Problem {
        Problem {
            torus: self.torus.clone(),
            green: self.green.clone(),
            u0: [self.u0[1].clone(), self.u0[0].clone()],
        }
    }
}

/// A grid with u₀ sampled on it.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: Grid,
    pub u0: [GridField; 2],
}

impl Discretization {
    pub fn new(problem: &Problem, n: usize) -> Result<Self> {
        let grid = Grid::new(problem.torus.clone(), n)?;
        let u0 = [
            problem.u0[0].sample(&problem.green, &grid)?,
            problem.u0[1].sample(&problem.green, &grid)?,
        ];
        Ok(Discretization { grid, u0 })
    }
}

/// Shift applied to all input points when a vortex would sit on a grid node.
pub fn off_grid_shift(torus: &Torus, n: usize, vortices: &[Vec2]) -> Vec2 {
    let on_node = vortices.iter().any(|v| {
        let f = torus.to_frac(*v);
        let a = f[0] * n as f64;
        let b = f[1] * n as f64;
        (a - a.round()).abs() < 1e-9 && (b - b.round()).abs() < 1e-9
    });
    if on_node {
        torus.to_cart([0.5 / n as f64, 0.5 / n as f64])
    } else {
        [0.0, 0.0]
    }
}
