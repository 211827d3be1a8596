//! TOML run configuration and the shipped presets.

use crate::diagnostics::CertificateOptions;
use crate::error::{Error, Result};
use crate::green::GreenEvaluator;
use crate::problem::{off_grid_shift, Discretization, Problem};
use crate::reduction::{DsqOptions, SearchOptions, Tolerances};
use crate::solver::SweepOptions;
use crate::torus::{add, Torus, Vec2};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusSpec {
    /// Lattice vectors before rescaling to unit area.
    pub a1: Vec2,
    pub a2: Vec2,
}

/// Vortex positions in fractional coordinates of the lattice basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VortexSpec {
    pub species1: Vec<Vec2>,
    pub species2: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    /// Target accuracy of the Ewald sums.
    pub green_accuracy: f64,
    /// Shift every input point by half a cell when a vortex sits on a node.
    pub avoid_nodes: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n: 256, green_accuracy: 1e-15, avoid_nodes: true }
    }
}

/// Single-ε commands (`approx`, `solve`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSpec {
    pub eps: f64,
}

impl Default for SolveSpec {
    fn default() -> Self {
        SolveSpec { eps: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinopsSpec {
    pub mus: Vec<f64>,
    pub probes: usize,
    pub seed: u64,
}

impl Default for LinopsSpec {
    fn default() -> Self {
        LinopsSpec { mus: vec![20.0, 40.0, 80.0, 160.0], probes: 3, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub torus: TorusSpec,
    pub vortices: VortexSpec,
    #[serde(default)]
    pub grid: GridSpec,
    /// Seed centers in fractional coordinates; empty means search only.
    #[serde(default)]
    pub centers: Vec<Vec2>,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub dsq: DsqOptions,
    #[serde(default)]
    pub solve: SolveSpec,
    #[serde(default)]
    pub linops: LinopsSpec,
    #[serde(default)]
    pub sweep: SweepOptions,
    #[serde(default)]
    pub certificate: CertificateOptions,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_name() -> String {
    "run".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Problem data with all points in Cartesian coordinates of the rescaled torus.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: Problem,
    pub centers: Vec<Vec2>,
    /// Cartesian shift applied to every input point.
    pub shift: Vec2,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n;
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::Config(format!("grid.n = {n} must be a power of two, at least 16")));
        }
        if !(self.grid.green_accuracy > 0.0 && self.grid.green_accuracy < 1e-3) {
            return Err(Error::Config(format!(
                "grid.green_accuracy = {} must lie in (0, 1e-3)",
                self.grid.green_accuracy
            )));
        }
        for (field, list) in [("vortices.species1", &self.vortices.species1), ("vortices.species2", &self.vortices.species2)] {
            if list.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!("{field} contains a non-finite coordinate")));
            }
        }
        if self.centers.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("centers contains a non-finite coordinate".into()));
        }
        if !(self.solve.eps > 0.0) {
            return Err(Error::Config(format!("solve.eps = {} must be positive", self.solve.eps)));
        }
        if self.linops.mus.iter().any(|m| !(*m > 1.0)) {
            return Err(Error::Config("linops.mus entries must exceed 1".into()));
        }
        if !(self.sweep.alpha > 0.0 && self.sweep.alpha < 1.0) {
            return Err(Error::Config(format!("sweep.alpha = {} must lie in (0, 1)", self.sweep.alpha)));
        }
        self.sweep.validate()
    }

    /// Rejects vortex counts outside N₁ = N₂ = 2k and a seed of the wrong size.
    pub fn require_bubbling(&self) -> Result<usize> {
        let (n1, n2) = (self.vortices.species1.len(), self.vortices.species2.len());
        if n1 != n2 {
            return Err(Error::Config(format!(
                "bubbling commands need N1 = N2, but vortices.species1 has {n1} points and vortices.species2 has {n2}"
            )));
        }
        if n1 == 0 || n1 % 2 != 0 {
            return Err(Error::Config(format!(
                "bubbling commands need N1 = N2 = 2k with k ≥ 1, got N1 = N2 = {n1} (vortices.species1)"
            )));
        }
        let k = n1 / 2;
        if !self.centers.is_empty() && self.centers.len() != k {
            return Err(Error::Config(format!(
                "centers lists {} points but the vortex data give k = {k}",
                self.centers.len()
            )));
        }
        Ok(k)
    }

    /// Seed centers, required by the commands that build bubbles.
    pub fn require_centers(&self) -> Result<usize> {
        let k = self.require_bubbling()?;
        if self.centers.is_empty() {
            return Err(Error::Config(format!("centers must list k = {k} seed points for this command")));
        }
        Ok(k)
    }

    pub fn torus(&self) -> Result<Torus> {
        Torus::new(self.torus.a1, self.torus.a2).map_err(|e| Error::Config(format!("torus: {e}")))
    }

    pub fn setup(&self) -> Result<Setup> {
        let t = self.torus()?;
        let cart = |v: &[Vec2]| -> Vec<Vec2> { v.iter().map(|f| t.to_cart(*f)).collect() };
        let (v1, v2) = (cart(&self.vortices.species1), cart(&self.vortices.species2));
        let shift = if self.grid.avoid_nodes {
            let all: Vec<Vec2> = v1.iter().chain(&v2).copied().collect();
            off_grid_shift(&t, self.grid.n, &all)
        } else {
            [0.0, 0.0]
        };
        let mv = |v: &[Vec2]| -> Vec<Vec2> { v.iter().map(|x| t.wrap(add(*x, shift))).collect() };
        let ev = GreenEvaluator::new(t.clone(), self.grid.green_accuracy)?;
        let problem = Problem::new(ev, &mv(&v1), &mv(&v2))?;
        let centers = mv(&cart(&self.centers));
        Ok(Setup { problem, centers, shift })
    }

    pub fn discretize(&self, setup: &Setup) -> Result<Discretization> {
        Discretization::new(&setup.problem, self.grid.n)
    }
}

pub const PRESETS: [&str; 3] = ["square-k1", "rectangle", "square-k2"];

/// Built-in configurations.
///
/// `square-k1`: both vortex pairs at the cell center, bubble at the corner.
/// `rectangle`: 1×2 torus, both vortex pairs at (0.3, 0.3), bubble at the
/// maximum of G(·, p).
/// `square-k2`: vortices at 0, (½,½), (¼,0), (¾,½) with centers (⅛,½), (⅝,0).
pub fn preset(name: &str) -> Result<RunConfig> {
    let base = |name: &str, a2: Vec2, vort: Vec<Vec2>, centers: Vec<Vec2>| RunConfig {
        name: name.into(),
        torus: TorusSpec { a1: [1.0, 0.0], a2 },
        vortices: VortexSpec { species1: vort.clone(), species2: vort },
        grid: GridSpec::default(),
        centers,
        search: SearchOptions::default(),
        tolerances: Tolerances::default(),
        dsq: DsqOptions::default(),
        solve: SolveSpec::default(),
        linops: LinopsSpec::default(),
        sweep: SweepOptions::default(),
        certificate: CertificateOptions::default(),
        output: PathBuf::from("out").join(name),
    };
    let cfg = match name {
        "square-k1" => base(name, [0.0, 1.0], vec![[0.5, 0.5]; 2], vec![[0.0, 0.0]]),
        "rectangle" => base(name, [0.0, 2.0], vec![[0.3, 0.3]; 2], vec![[0.8, 0.8]]),
        "square-k2" => {
            let mut c = base(
                name,
                [0.0, 1.0],
                vec![[0.0, 0.0], [0.5, 0.5], [0.25, 0.0], [0.75, 0.5]],
                vec![[0.125, 0.5], [0.625, 0.0]],
            );
            c.sweep.eps0 = 0.0025;
            c.sweep.steps = 6;
            c.solve.eps = 0.0025;
            c
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}', expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
