//! Named boundary-value scenarios for lattice maps and seeded synthetic point
//! scenes with closed-form energy oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covering_engine::ThetaOracle;
use crate::grid_core::{DiscretizedMap, Initializer};
use crate::linalg::norm;
use crate::minimizer::unit_ball_problem;
use crate::{Error, Result};

/// Boundary data of a lattice scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Constant,
    Radial,
    Cylindrical,
    Geodesic,
}

impl BoundaryKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Constant => "constant",
            BoundaryKind::Radial => "radial",
            BoundaryKind::Cylindrical => "cylindrical",
            BoundaryKind::Geodesic => "geodesic",
        }
    }

    /// Target sphere dimension plus one, for a domain of dimension `m`.
    pub fn target_dim(self, m: usize) -> usize {
        match self {
            BoundaryKind::Radial => m,
            BoundaryKind::Cylindrical => 2,
            BoundaryKind::Constant | BoundaryKind::Geodesic => 3,
        }
    }

    pub fn initializer(self, m: usize) -> Initializer {
        match self {
            BoundaryKind::Constant => {
                let mut value = vec![0.0; self.target_dim(m)];
                value[0] = 1.0;
                Initializer::Constant { value }
            }
            BoundaryKind::Radial => Initializer::Radial,
            BoundaryKind::Cylindrical => Initializer::Cylindrical,
            BoundaryKind::Geodesic => Initializer::Geodesic {
                axis: 0,
                rate: 1.0,
                phase: 0.0,
            },
        }
    }
}

/// Boundary kind and exponent of a lattice scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: BoundaryKind,
    pub p: f64,
}

impl Scenario {
    /// `"<kind>"` or `"<kind>-p<exponent>"`, e.g. `radial-p2.5`.
    pub fn name(&self) -> String {
        if self.kind == BoundaryKind::Constant {
            return "constant".into();
        }
        format!("{}-p{}", self.kind.name(), self.p)
    }

    /// Parses a scenario name. A bare kind takes its exponent from `p`; a name
    /// with an exponent must agree with `p` when both are given.
    pub fn parse(name: &str, p: Option<f64>) -> Result<Self> {
        let (kind_name, embedded) = match name.split_once("-p") {
            Some((k, e)) => {
                let e: f64 = e
                    .parse()
                    .map_err(|_| Error::Config(format!("scenario '{name}': bad exponent '{e}'")))?;
                (k, Some(e))
            }
            None => (name, None),
        };
        let kind = match kind_name {
            "constant" => BoundaryKind::Constant,
            "radial" => BoundaryKind::Radial,
            "cylindrical" => BoundaryKind::Cylindrical,
            "geodesic" => BoundaryKind::Geodesic,
            other => return Err(Error::Config(format!("unknown scenario kind '{other}'"))),
        };
        let p = match (embedded, p) {
            (Some(a), Some(b)) if (a - b).abs() > 1e-12 => {
                return Err(Error::Config(format!(
                    "scenario '{name}' has exponent {a} but p = {b}"
                )))
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(Error::Config(format!("scenario '{name}' needs p"))),
        };
        Ok(Self { kind, p })
    }

    /// Map on the cube of half width `reach` with data fixed outside the unit ball.
    pub fn build(&self, m: usize, spacing: f64, reach: f64) -> Result<DiscretizedMap> {
        unit_ball_problem(m, spacing, reach, self.kind.target_dim(m), self.p, &self.kind.initializer(m))
    }
}

/// The six lattice scenarios every diagnostic is exercised on.
pub fn suite() -> Vec<Scenario> {
    use BoundaryKind::*;
    vec![
        Scenario { kind: Constant, p: 2.0 },
        Scenario { kind: Radial, p: 2.0 },
        Scenario { kind: Radial, p: 2.5 },
        Scenario { kind: Cylindrical, p: 1.5 },
        Scenario { kind: Geodesic, p: 1.5 },
        Scenario { kind: Geodesic, p: 2.5 },
    ]
}

/// Shape of a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Segment `[-0.6, 0.6] e_1`; stratum dimension 1.
    Segment,
    /// Square `[-0.5, 0.5]^2 x {0}`; stratum dimension 2.
    PlanePatch,
    /// The origin; stratum dimension 0.
    Cluster,
}

impl SceneKind {
    pub fn stratum_dim(self) -> usize {
        match self {
            SceneKind::Segment => 1,
            SceneKind::PlanePatch => 2,
            SceneKind::Cluster => 0,
        }
    }

    /// Distance from `y` in R^3 to the ideal set.
    pub fn distance(self, y: &[f64]) -> f64 {
        let clamp = |v: f64, a: f64| v.clamp(-a, a);
        match self {
            SceneKind::Segment => {
                let c = [clamp(y[0], 0.6), 0.0, 0.0];
                crate::linalg::dist(y, &c)
            }
            SceneKind::PlanePatch => {
                let c = [clamp(y[0], 0.5), clamp(y[1], 0.5), 0.0];
                crate::linalg::dist(y, &c)
            }
            SceneKind::Cluster => norm(y),
        }
    }

    pub fn all() -> [SceneKind; 3] {
        [SceneKind::Segment, SceneKind::PlanePatch, SceneKind::Cluster]
    }
}

/// `theta(y, s) = A / (1 + (d(y)/s)^2)` with `d` the distance to the ideal set;
/// nondecreasing in `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneOracle {
    pub kind: SceneKind,
    pub amplitude: f64,
}

impl ThetaOracle for SceneOracle {
    fn dim(&self) -> usize {
        3
    }

    fn theta(&self, y: &[f64], s: f64) -> Result<f64> {
        if y.len() != 3 {
            return Err(Error::DimensionMismatch("scene oracle lives in R^3".into()));
        }
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {s}")));
        }
        let t = self.kind.distance(y) / s;
        Ok(self.amplitude / (1.0 + t * t))
    }
}

/// Seeded sample of a synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub seed: u64,
    pub points: Vec<Vec<f64>>,
    pub oracle: SceneOracle,
}

/// Points spread over the ideal set with Gaussian jitter of size `jitter`, plus
/// `outliers` uniform points of `B(0, 0.9)`.
pub fn synthetic_scene(kind: SceneKind, seed: u64, count: usize, jitter: f64, outliers: usize) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count + outliers);
    for _ in 0..count {
        let base: [f64; 3] = match kind {
            SceneKind::Segment => [rng.gen_range(-0.6..=0.6), 0.0, 0.0],
            SceneKind::PlanePatch => [rng.gen_range(-0.5..=0.5), rng.gen_range(-0.5..=0.5), 0.0],
            SceneKind::Cluster => [0.0; 3],
        };
        let y: Vec<f64> = base
            .iter()
            .map(|b| {
                let z: f64 = rng.sample(StandardNormal);
                b + jitter * z
            })
            .collect();
        points.push(y);
    }
    while points.len() < count + outliers {
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.9..0.9)).collect();
        if norm(&y) < 0.9 {
            points.push(y);
        }
    }
    SyntheticScene {
        kind,
        seed,
        points,
        oracle: SceneOracle { kind, amplitude: 1.0 },
    }
}

/// Default sample used by the structural tests: 120 points with jitter 1e-5 and
/// 12 outliers.
pub fn standard_scene(kind: SceneKind, seed: u64) -> SyntheticScene {
    synthetic_scene(kind, seed, 120, 1e-5, 12)
}
