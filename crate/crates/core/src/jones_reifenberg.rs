//! Weighted atomic measures, second moments, Jones beta numbers and the discrete
//! Reifenberg condition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::linalg::{dist, dist_sq, dot, sym_eigen, JACOBI_TOL};
use crate::span_geometry::AffinePlane;
use crate::{Error, Result};

/// Finite sum of weighted Dirac masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPointMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl WeightedPointMeasure {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("measure in R^0".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} atoms but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch(format!("atom {i} is not in R^{dim}")));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weight {i} = {} is not a finite nonnegative number",
                weights[i]
            )));
        }
        Ok(Self { dim, points, weights })
    }

    /// Unit weight on every point.
    pub fn unit(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(dim, points, vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Indices of the atoms in the open ball `B(x, r)`.
    pub fn in_ball(&self, x: &[f64], r: f64) -> Vec<usize> {
        let r2 = r * r;
        (0..self.len())
            .filter(|&i| dist_sq(&self.points[i], x) < r2)
            .collect()
    }

    pub fn mass_in_ball(&self, x: &[f64], r: f64) -> f64 {
        self.in_ball(x, r).iter().map(|&i| self.weights[i]).sum()
    }

    /// Push-forward under `y -> rotation * y + shift` (rotation row-major).
    pub fn transformed(&self, rotation: &[f64], shift: &[f64]) -> Self {
        let m = self.dim;
        let points = self
            .points
            .iter()
            .map(|y| {
                (0..m)
                    .map(|i| (0..m).map(|j| rotation[i * m + j] * y[j]).sum::<f64>() + shift[i])
                    .collect()
            })
            .collect();
        Self { dim: m, points, weights: self.weights.clone() }
    }

    /// Smallest distance between two distinct atoms, `None` for fewer than two.
    pub fn min_separation(&self) -> Option<f64> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let best = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut b = f64::INFINITY;
                for j in i + 1..n {
                    b = b.min(dist_sq(&self.points[i], &self.points[j]));
                }
                b
            })
            .reduce(|| f64::INFINITY, f64::min);
        Some(best.sqrt())
    }
}

/// Mass, center of mass and second moment of a measure restricted to a ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentData {
    pub mass: f64,
    pub center_of_mass: Vec<f64>,
    /// Row-major `m x m` matrix `sum w (y - c)(y - c)^T`, not normalized by mass.
    pub second_moment: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
}

impl MomentData {
    /// `max_i |Q v_i - lambda_i v_i|`.
    pub fn eigen_residual(&self) -> f64 {
        let m = self.center_of_mass.len();
        let mut worst = 0.0f64;
        for (lam, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            let mut r2 = 0.0;
            for i in 0..m {
                let qv: f64 = (0..m).map(|j| self.second_moment[i * m + j] * v[j]).sum();
                r2 += (qv - lam * v[i]).powi(2);
            }
            worst = worst.max(r2.sqrt());
        }
        worst
    }
}

fn moments_of(points: &[&[f64]], weights: &[f64], m: usize) -> Option<MomentData> {
    let mass: f64 = weights.iter().sum();
    if !(mass > 0.0) {
        return None;
    }
    let mut c = vec![0.0; m];
    for (y, w) in points.iter().zip(weights) {
        for a in 0..m {
            c[a] += w * y[a];
        }
    }
    for v in &mut c {
        *v /= mass;
    }
    let mut q = vec![0.0; m * m];
    for (y, w) in points.iter().zip(weights) {
        for a in 0..m {
            let da = y[a] - c[a];
            for b in a..m {
                q[a * m + b] += w * da * (y[b] - c[b]);
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            q[a * m + b] = q[b * m + a];
        }
    }
    let eig = sym_eigen(&q, m);
    let eigenvectors = (0..m).map(|j| eig.vector(j)).collect();
    Some(MomentData {
        mass,
        center_of_mass: c,
        second_moment: q,
        eigenvalues: eig.values,
        eigenvectors,
    })
}

/// Moments of `mu` restricted to the open ball `B(x, r)`.
pub fn moments(mu: &WeightedPointMeasure, x: &[f64], r: f64) -> Result<MomentData> {
    check_ball(mu, x, r)?;
    let idx = mu.in_ball(x, r);
    let pts: Vec<&[f64]> = idx.iter().map(|&i| mu.points[i].as_slice()).collect();
    let w: Vec<f64> = idx.iter().map(|&i| mu.weights[i]).collect();
    moments_of(&pts, &w, mu.dim).ok_or_else(|| {
        Error::NotAdmissible(format!("measure has no mass in B({x:?}, {r})"))
    })
}

fn check_ball(mu: &WeightedPointMeasure, x: &[f64], r: f64) -> Result<()> {
    if x.len() != mu.dim {
        return Err(Error::DimensionMismatch(format!(
            "ball center in R^{} for a measure in R^{}",
            x.len(),
            mu.dim
        )));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("ball radius must be positive, got {r}")));
    }
    Ok(())
}

/// Agreement required between the rescaled and unscaled evaluations of beta,
/// relative to the trace of the rescaled second moment.
pub const BETA_PATH_TOL: f64 = 1e-10;

/// Jones number of a measure at one ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaNumber {
    pub beta: f64,
    pub beta_sq: f64,
    /// `None` when the ball carries no mass.
    pub plane: Option<AffinePlane>,
    pub mass: f64,
}

/// Sum of the eigenvalues past the `k` largest. Eigenvalues below the solver
/// accuracy `JACOBI_TOL * trace` count as zero.
fn tail_sum(values: &[f64], k: usize) -> f64 {
    let trace: f64 = values.iter().map(|v| v.abs()).sum();
    let floor = JACOBI_TOL * trace;
    values.iter().skip(k).filter(|v| **v > floor).sum()
}

/// `beta^k_mu(x, r)` from the eigenvalues of the second moment.
///
/// Evaluated twice: on the blow-up `mu_hat(A) = r^-k mu(x + rA)` in the unit ball,
/// and as `r^(-k-2) sum_{j>k} lambda_j` with unscaled distances. The two values
/// must agree within `BETA_PATH_TOL`.
pub fn beta_eig(mu: &WeightedPointMeasure, x: &[f64], r: f64, k: usize) -> Result<BetaNumber> {
    check_ball(mu, x, r)?;
    let m = mu.dim;
    if k > m {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds ambient dimension {m}")));
    }
    let idx = mu.in_ball(x, r);
    let pts: Vec<&[f64]> = idx.iter().map(|&i| mu.points[i].as_slice()).collect();
    let w: Vec<f64> = idx.iter().map(|&i| mu.weights[i]).collect();
    let Some(direct) = moments_of(&pts, &w, m) else {
        return Ok(BetaNumber { beta: 0.0, beta_sq: 0.0, plane: None, mass: 0.0 });
    };

    let scale = r.powi(-(k as i32));
    let hat_pts: Vec<Vec<f64>> = pts
        .iter()
        .map(|y| y.iter().zip(x).map(|(a, b)| (a - b) / r).collect())
        .collect();
    let hat_refs: Vec<&[f64]> = hat_pts.iter().map(|v| v.as_slice()).collect();
    let hat_w: Vec<f64> = w.iter().map(|v| v * scale).collect();
    let rescaled = moments_of(&hat_refs, &hat_w, m).expect("positive mass survives rescaling");

    let sq_rescaled = tail_sum(&rescaled.eigenvalues, k);
    let sq_direct = scale / (r * r) * tail_sum(&direct.eigenvalues, k);
    let trace: f64 = rescaled.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if (sq_rescaled - sq_direct).abs() > BETA_PATH_TOL * trace.max(1.0) {
        return Err(Error::Assertion(format!(
            "beta evaluations disagree at x = {x:?}, r = {r}: {sq_rescaled:e} vs {sq_direct:e}"
        )));
    }
    let plane = AffinePlane::spanned_by(direct.center_of_mass.clone(), &direct.eigenvectors[..k]);
    Ok(BetaNumber {
        beta: sq_rescaled.sqrt(),
        beta_sq: sq_rescaled,
        plane: Some(plane),
        mass: direct.mass,
    })
}

pub const BRUTE_MAX_DIM: usize = 3;
pub const BRUTE_MAX_ATOMS: usize = 200;
const BRUTE_BASE_GRID: usize = 21;
const BRUTE_ANGLE_STEP: f64 = PI / 180.0;
const BRUTE_STARTS: usize = 8;

/// Result of the direct search over affine planes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BruteForceFit {
    pub beta_sq: f64,
    pub beta: f64,
    pub plane: Option<AffinePlane>,
}

#[derive(Clone, Copy, PartialEq)]
enum PlaneShape {
    /// Fit a single point.
    Point,
    /// Codimension one, parametrized by the unit normal.
    Normal,
    /// A line in R^3, parametrized by its direction.
    Direction,
}

fn unit_from_angles(m: usize, a: &[f64]) -> Vec<f64> {
    match m {
        2 => vec![a[0].cos(), a[0].sin()],
        3 => vec![a[0].sin() * a[1].cos(), a[0].sin() * a[1].sin(), a[0].cos()],
        _ => unreachable!("orientations only in R^2 and R^3"),
    }
}

fn angle_count(m: usize) -> usize {
    m - 1
}

/// Unit vectors on a half circle (m = 2) or hemisphere (m = 3) spaced by one
/// degree, as angle tuples.
fn orientation_grid(m: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    match m {
        2 => {
            for i in 0..180 {
                out.push(vec![i as f64 * BRUTE_ANGLE_STEP]);
            }
        }
        3 => {
            for i in 0..=90 {
                let polar = i as f64 * BRUTE_ANGLE_STEP;
                let full = if i == 90 { 180.0 } else { 360.0 };
                let n = if i == 0 {
                    1
                } else {
                    ((full * polar.sin()).round() as usize).max(1)
                };
                for j in 0..n {
                    out.push(vec![polar, j as f64 * (full / n as f64).to_radians()]);
                }
            }
        }
        _ => {}
    }
    out
}

fn base_grid(m: usize) -> Vec<Vec<f64>> {
    let n = BRUTE_BASE_GRID;
    let step = 2.0 / (n - 1) as f64;
    let total = n.pow(m as u32);
    let mut out = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut b = vec![0.0; m];
        for a in (0..m).rev() {
            b[a] = -1.0 + (rem % n) as f64 * step;
            rem /= n;
        }
        if dot(&b, &b) <= 1.0 + 1e-12 {
            out.push(b);
        }
    }
    out
}

fn plane_cost(shape: PlaneShape, pts: &[Vec<f64>], w: &[f64], u: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (y, wi) in pts.iter().zip(w) {
        let d: Vec<f64> = y.iter().zip(b).map(|(a, c)| a - c).collect();
        let d2 = match shape {
            PlaneShape::Point => dot(&d, &d),
            PlaneShape::Normal => dot(&d, u).powi(2),
            PlaneShape::Direction => (dot(&d, &d) - dot(&d, u).powi(2)).max(0.0),
        };
        s += wi * d2;
    }
    s
}

/// Minimizes `f` by the Nelder-Mead simplex method, restarting once from the
/// converged vertex.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], steps: &[f64]) -> (Vec<f64>, f64) {
    let mut best = (x0.to_vec(), f(x0));
    for round in 0..3 {
        let shrink = 0.1f64.powi(round);
        let scaled: Vec<f64> = steps.iter().map(|s| s * shrink).collect();
        best = nelder_mead_run(f, &best.0, &scaled);
    }
    best
}

fn nelder_mead_run<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], steps: &[f64]) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = f(&x);
        simplex.push((x, v));
    }
    for _ in 0..20_000 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let fb = simplex[0].1;
        let fw = simplex[n].1;
        let size = simplex[1..]
            .iter()
            .fold(0.0f64, |a, (x, _)| a.max(dist(x, &simplex[0].0)));
        if fw - fb <= 1e-16 + 1e-14 * fb.abs() && size < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j]))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < fw {
            let x = along(-0.5);
            let v = f(&x);
            (x, v)
        } else {
            let x = along(0.5);
            let v = f(&x);
            (x, v)
        };
        if fc < fw.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = item.0.iter().zip(&x0).map(|(a, b)| b + 0.5 * (a - b)).collect();
            let v = f(&x);
            *item = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// `beta^k_mu(x, r)` by direct search over affine `k`-planes: a grid of base
/// points in the unit ball crossed with a one-degree orientation grid, then
/// Nelder-Mead refinement from the best grid candidates. Only for `m <= 3` and
/// at most `BRUTE_MAX_ATOMS` atoms in the ball.
pub fn beta_bruteforce(mu: &WeightedPointMeasure, x: &[f64], r: f64, k: usize) -> Result<BruteForceFit> {
    check_ball(mu, x, r)?;
    let m = mu.dim;
    if m > BRUTE_MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "brute-force beta supports m <= {BRUTE_MAX_DIM}, got {m}"
        )));
    }
    if k > m {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds ambient dimension {m}")));
    }
    let idx = mu.in_ball(x, r);
    if idx.len() > BRUTE_MAX_ATOMS {
        return Err(Error::InvalidParameter(format!(
            "brute-force beta supports at most {BRUTE_MAX_ATOMS} atoms per ball, got {}",
            idx.len()
        )));
    }
    let scale = r.powi(-(k as i32));
    let pts: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| mu.points[i].iter().zip(x).map(|(a, b)| (a - b) / r).collect())
        .collect();
    let w: Vec<f64> = idx.iter().map(|&i| mu.weights[i] * scale).collect();
    let mass: f64 = w.iter().sum();
    if idx.is_empty() || !(mass > 0.0) {
        return Ok(BruteForceFit { beta_sq: 0.0, beta: 0.0, plane: None });
    }
    if k == m {
        return Ok(BruteForceFit {
            beta_sq: 0.0,
            beta: 0.0,
            plane: Some(AffinePlane::spanned_by(x.to_vec(), &crate::linalg::complete_basis(&[], m))),
        });
    }
    let shape = if k == 0 {
        PlaneShape::Point
    } else if k + 1 == m {
        PlaneShape::Normal
    } else {
        PlaneShape::Direction
    };

    // moments entering the expanded cost
    let s2: f64 = pts.iter().zip(&w).map(|(y, wi)| wi * dot(y, y)).sum();
    let mut s1 = vec![0.0; m];
    for (y, wi) in pts.iter().zip(&w) {
        for a in 0..m {
            s1[a] += wi * y[a];
        }
    }
    let bases = base_grid(m);
    let orientations = if shape == PlaneShape::Point {
        vec![Vec::new()]
    } else {
        orientation_grid(m)
    };

    let mut candidates: Vec<(f64, usize, usize)> = orientations
        .par_iter()
        .enumerate()
        .map(|(oi, angles)| {
            let u = if shape == PlaneShape::Point {
                vec![0.0; m]
            } else {
                unit_from_angles(m, angles)
            };
            let proj: Vec<f64> = pts.iter().map(|y| dot(y, &u)).collect();
            let a1: f64 = proj.iter().zip(&w).map(|(p, wi)| wi * p).sum();
            let a2: f64 = proj.iter().zip(&w).map(|(p, wi)| wi * p * p).sum();
            let mut best = (f64::INFINITY, oi, 0usize);
            for (bi, b) in bases.iter().enumerate() {
                let c = dot(b, &u);
                let cost = match shape {
                    PlaneShape::Point => s2 - 2.0 * dot(b, &s1) + mass * dot(b, b),
                    PlaneShape::Normal => a2 - 2.0 * c * a1 + mass * c * c,
                    PlaneShape::Direction => {
                        s2 - 2.0 * dot(b, &s1) + mass * dot(b, b)
                            - (a2 - 2.0 * c * a1 + mass * c * c)
                    }
                };
                if cost < best.0 {
                    best = (cost, oi, bi);
                }
            }
            best
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates.truncate(BRUTE_STARTS);

    let na = if shape == PlaneShape::Point { 0 } else { angle_count(m) };
    let objective = |v: &[f64]| -> f64 {
        let u = if shape == PlaneShape::Point {
            vec![0.0; m]
        } else {
            unit_from_angles(m, &v[..na])
        };
        plane_cost(shape, &pts, &w, &u, &v[na..])
    };
    let mut steps = vec![BRUTE_ANGLE_STEP; na];
    steps.extend(std::iter::repeat(0.05).take(m));

    let mut best: Option<(Vec<f64>, f64)> = None;
    for (_, oi, bi) in &candidates {
        let mut start = orientations[*oi].clone();
        start.extend_from_slice(&bases[*bi]);
        let (v, val) = nelder_mead(&objective, &start, &steps);
        if best.as_ref().map_or(true, |b| val < b.1) {
            best = Some((v, val));
        }
    }
    let (v, val) = best.expect("at least one candidate");
    let beta_sq = val.max(0.0);

    let base: Vec<f64> = v[na..].iter().zip(x).map(|(b, xi)| xi + r * b).collect();
    let directions: Vec<Vec<f64>> = match shape {
        PlaneShape::Point => Vec::new(),
        PlaneShape::Direction => vec![unit_from_angles(m, &v[..na])],
        PlaneShape::Normal => {
            let n = unit_from_angles(m, &v[..na]);
            let mut full = crate::linalg::complete_basis(&[n], m);
            full.remove(0);
            full
        }
    };
    Ok(BruteForceFit {
        beta_sq,
        beta: beta_sq.sqrt(),
        plane: Some(AffinePlane::spanned_by(base, &directions)),
    })
}

/// Family a covering ball belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallTag {
    /// Good ball of the first covering, created at the given step.
    G(usize),
    E,
    D,
    W,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
    pub tag: BallTag,
}

/// Relative slack in the disjointness check, so touching balls built by
/// floating-point arithmetic are not reported as overlapping.
pub const DISJOINT_RTOL: f64 = 1e-12;

/// Which disjointness a family promises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disjointness {
    None,
    /// Balls shrunk by a factor five are pairwise disjoint.
    Fifth,
    Full,
}

impl Disjointness {
    /// Minimal center distance for two balls of radii `r1`, `r2`.
    pub fn required(self, r1: f64, r2: f64) -> f64 {
        match self {
            Disjointness::None => 0.0,
            Disjointness::Fifth => (r1 + r2) / 5.0,
            Disjointness::Full => r1 + r2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
    pub disjointness: Disjointness,
}

impl BallFamily {
    pub fn new(balls: Vec<Ball>, disjointness: Disjointness) -> Self {
        Self { balls, disjointness }
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    /// First pair (in index order) closer than the flag allows.
    pub fn check_disjointness(&self) -> Result<()> {
        if self.disjointness == Disjointness::None {
            return Ok(());
        }
        let n = self.balls.len();
        let hit = (0..n)
            .into_par_iter()
            .filter_map(|i| {
                let a = &self.balls[i];
                (i + 1..n).find_map(|j| {
                    let b = &self.balls[j];
                    let d = dist(&a.center, &b.center);
                    let need = self.disjointness.required(a.radius, b.radius);
                    (d < need * (1.0 - DISJOINT_RTOL)).then_some((i, j, d, need))
                })
            })
            .min_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        match hit {
            Some((first, second, distance, required)) => Err(Error::Overlap {
                first,
                second,
                distance,
                required,
            }),
            None => Ok(()),
        }
    }

    /// Whether `y` lies in some (open) ball of the family.
    pub fn covers(&self, y: &[f64]) -> bool {
        self.balls.iter().any(|b| dist(&b.center, y) < b.radius)
    }
}

/// Atoms at the ball centers with weights `r^k`, after checking the family's
/// disjointness flag.
pub fn measure_from_balls(family: &BallFamily, dim: usize, k: usize) -> Result<WeightedPointMeasure> {
    family.check_disjointness()?;
    let points = family.balls.iter().map(|b| b.center.clone()).collect();
    let weights = family.balls.iter().map(|b| b.radius.powi(k as i32)).collect();
    WeightedPointMeasure::new(dim, points, weights)
}

/// `sum r^k` over the family.
pub fn packing_bound(family: &BallFamily, k: usize) -> f64 {
    family.balls.iter().map(|b| b.radius.powi(k as i32)).sum()
}

/// One query ball of the Reifenberg test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReifenbergEntry {
    /// Atom used as the query center.
    pub atom: usize,
    pub tau: f64,
    /// `sum_{y in B(w, tau)} w_y sum_{s_j <= tau} beta^2(y, s_j) ln 5`.
    pub value: f64,
    /// `value / (delta tau^k)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReifenbergReport {
    pub k: usize,
    pub delta: f64,
    pub region_center: Vec<f64>,
    pub region_radius: f64,
    /// Scales `r 5^-j` from the region radius down to the atom separation.
    pub scales: Vec<f64>,
    pub separation: Option<f64>,
    /// `beta_sq[i][j] = beta^2(atom i, scales[j])`.
    pub beta_sq: Vec<Vec<f64>>,
    /// Discretized `int_0^r beta^2 ds/s` per atom at the region radius.
    pub atom_integrals: Vec<f64>,
    pub entries: Vec<ReifenbergEntry>,
    pub worst_ratio: f64,
    pub worst_entry: Option<usize>,
    pub pass: bool,
}

/// Scale ladder `r, r/5, r/25, ...` kept while `>= floor`.
pub fn scale_ladder(r: f64, floor: Option<f64>) -> Vec<f64> {
    let mut out = vec![r];
    if let Some(f) = floor {
        let mut s = r / 5.0;
        while s >= f && out.len() < 64 {
            out.push(s);
            s /= 5.0;
        }
    }
    out
}

/// Discrete Reifenberg condition on `B(center, radius)` for the measure `mu`.
/// Passes when every query ball has ratio at most one.
pub fn reifenberg_check(
    mu: &WeightedPointMeasure,
    k: usize,
    delta: f64,
    center: &[f64],
    radius: f64,
) -> Result<ReifenbergReport> {
    check_ball(mu, center, radius)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if k > mu.dim {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds ambient dimension {}",
            mu.dim
        )));
    }
    let slack = 1e-12 * radius.max(1.0);
    if let Some(i) = mu.points.iter().position(|y| dist(y, center) > radius + slack) {
        return Err(Error::InvalidParameter(format!(
            "atom {i} lies outside the region B({center:?}, {radius})"
        )));
    }
    let separation = mu.min_separation();
    let scales = scale_ladder(radius, separation);
    let ln5 = 5f64.ln();

    let beta_sq: Vec<Vec<f64>> = mu
        .points
        .par_iter()
        .map(|y| {
            scales
                .iter()
                .map(|&s| beta_eig(mu, y, s, k).map(|b| b.beta_sq))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // cumulative[i][j] = sum over scales s_l <= scales[j] (l >= j)
    let cumulative: Vec<Vec<f64>> = beta_sq
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            let mut out = vec![0.0; row.len()];
            for j in (0..row.len()).rev() {
                acc += row[j] * ln5;
                out[j] = acc;
            }
            out
        })
        .collect();
    let atom_integrals: Vec<f64> = cumulative.iter().map(|c| c[0]).collect();

    let entries: Vec<ReifenbergEntry> = (0..mu.len())
        .into_par_iter()
        .flat_map_iter(|a| {
            let cumulative = &cumulative;
            scales.iter().enumerate().map(move |(j, &tau)| {
                let t2 = tau * tau;
                let mut value = 0.0;
                for (i, y) in mu.points.iter().enumerate() {
                    if dist_sq(y, &mu.points[a]) < t2 {
                        value += mu.weights[i] * cumulative[i][j];
                    }
                }
                ReifenbergEntry {
                    atom: a,
                    tau,
                    value,
                    ratio: value / (delta * tau.powi(k as i32)),
                }
            })
        })
        .collect();
    let mut worst_ratio = 0.0;
    let mut worst_entry = None;
    for (i, e) in entries.iter().enumerate() {
        if e.ratio > worst_ratio {
            worst_ratio = e.ratio;
            worst_entry = Some(i);
        }
    }
    Ok(ReifenbergReport {
        k,
        delta,
        region_center: center.to_vec(),
        region_radius: radius,
        scales,
        separation,
        beta_sq,
        atom_integrals,
        entries,
        worst_ratio,
        worst_entry,
        pass: worst_ratio <= 1.0,
    })
}

/// A detected point with the two normalized energies defining its pinching.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PinchingSample {
    pub point: Vec<f64>,
    /// `theta(y, 5 r_bar)`.
    pub theta_outer: f64,
    /// `theta(y, r_min)`.
    pub theta_inner: f64,
}

impl PinchingSample {
    pub fn pinching(&self) -> f64 {
        self.theta_outer - self.theta_inner
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectifiabilityReport {
    pub total: usize,
    /// Points with pinching above the threshold.
    pub high_pinching: Vec<usize>,
    /// The rest; these carry the unit-weight measure.
    pub low_pinching: Vec<usize>,
    pub high_fraction: f64,
    pub pinching: Vec<f64>,
    /// `None` when no point has low pinching.
    pub reifenberg: Option<ReifenbergReport>,
    pub pass: bool,
}

/// Splits detected points by pinching `> delta` and runs the Reifenberg test
/// with constant `delta_r` on the unit-weight measure of the low-pinching part.
pub fn rectifiability_diagnostic(
    samples: &[PinchingSample],
    delta: f64,
    k: usize,
    delta_r: f64,
    center: &[f64],
    radius: f64,
) -> Result<RectifiabilityReport> {
    let pinching: Vec<f64> = samples.iter().map(|s| s.pinching()).collect();
    let (high, low): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| pinching[i] > delta);
    let reifenberg = if low.is_empty() {
        None
    } else {
        let pts = low.iter().map(|&i| samples[i].point.clone()).collect();
        let mu = WeightedPointMeasure::unit(center.len(), pts)?;
        Some(reifenberg_check(&mu, k, delta_r, center, radius)?)
    };
    let pass = reifenberg.as_ref().map_or(true, |r| r.pass);
    Ok(RectifiabilityReport {
        total: samples.len(),
        high_fraction: if samples.is_empty() {
            0.0
        } else {
            high.len() as f64 / samples.len() as f64
        },
        high_pinching: high,
        low_pinching: low,
        pinching,
        reifenberg,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> WeightedPointMeasure {
        let pts = vec![
            vec![0.5, 0.5],
            vec![-0.5, 0.5],
            vec![0.5, -0.5],
            vec![-0.5, -0.5],
        ];
        WeightedPointMeasure::unit(2, pts).unwrap()
    }

    #[test]
    fn moments_examples() {
        let mu = WeightedPointMeasure::unit(3, vec![vec![0.5, 0.0, 0.0], vec![-0.5, 0.0, 0.0]]).unwrap();
        let md = moments(&mu, &[0.0; 3], 1.0).unwrap();
        assert!(md.center_of_mass.iter().all(|c| c.abs() < 1e-15));
        assert!((md.eigenvalues[0] - 0.5).abs() < 1e-15);
        assert!((md.second_moment[0] - 0.5).abs() < 1e-15);
        assert!(md.eigenvalues[1].abs() < 1e-15);

        let md = moments(&square(), &[0.0, 0.0], 1.0).unwrap();
        assert!((md.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((md.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert!(md.second_moment[1].abs() < 1e-15);
        assert!(md.eigen_residual() <= 1e-9 * (1.0 + md.eigenvalues[0]));

        let single = WeightedPointMeasure::new(2, vec![vec![0.3, -0.2]], vec![7.0]).unwrap();
        let md = moments(&single, &[0.0, 0.0], 1.0).unwrap();
        assert!(md.eigenvalues.iter().all(|l| *l == 0.0));
        assert!(moments(&single, &[5.0, 5.0], 1.0).is_err());
    }

    #[test]
    fn beta_examples() {
        let line = WeightedPointMeasure::unit(
            3,
            (0..7).map(|i| vec![0.1 * i as f64 - 0.3, 0.2 * i as f64 - 0.6, 0.05]).collect(),
        )
        .unwrap();
        let b = beta_eig(&line, &[0.0, 0.0, 0.05], 1.0, 1).unwrap();
        assert!(b.beta < 1e-7);
        let plane = b.plane.unwrap();
        assert!(line.points().iter().all(|y| plane.dist(y) < 1e-12));

        let b = beta_eig(&square(), &[0.0, 0.0], 1.0, 1).unwrap();
        assert!((b.beta_sq - 1.0).abs() < 1e-13);

        let half = WeightedPointMeasure::new(
            2,
            square().points().iter().map(|y| y.iter().map(|v| v / 2.0).collect()).collect(),
            vec![0.5; 4],
        )
        .unwrap();
        let c = beta_eig(&half, &[0.0, 0.0], 0.5, 1).unwrap();
        assert!((c.beta_sq - b.beta_sq).abs() < 1e-10);

        let empty = beta_eig(&square(), &[9.0, 9.0], 1.0, 1).unwrap();
        assert_eq!(empty.beta, 0.0);
        assert!(empty.plane.is_none());
    }

    #[test]
    fn bruteforce_matches_known_values() {
        let b = beta_bruteforce(&square(), &[0.0, 0.0], 1.0, 1).unwrap();
        assert!((b.beta_sq - 1.0).abs() < 1e-4, "{}", b.beta_sq);
        let line = WeightedPointMeasure::unit(
            3,
            (0..5).map(|i| vec![0.1 * i as f64, -0.05 * i as f64, 0.2]).collect(),
        )
        .unwrap();
        let b = beta_bruteforce(&line, &[0.2, 0.0, 0.0], 0.9, 1).unwrap();
        assert!(b.beta_sq < 1e-8, "{}", b.beta_sq);
        let big = WeightedPointMeasure::unit(1, vec![vec![0.0]; 10]).unwrap();
        assert!(beta_bruteforce(&big, &[0.0], 1.0, 0).is_ok());
        let four = WeightedPointMeasure::unit(4, vec![vec![0.0; 4]]).unwrap();
        assert!(beta_bruteforce(&four, &[0.0; 4], 1.0, 1).is_err());
    }

    #[test]
    fn ball_family_measure() {
        let single = BallFamily::new(
            vec![Ball { center: vec![0.0; 3], radius: 0.2, tag: BallTag::Generic }],
            Disjointness::Full,
        );
        let mu = measure_from_balls(&single, 3, 2).unwrap();
        assert!((mu.total_mass() - 0.04).abs() < 1e-15);

        let overlap = BallFamily::new(
            vec![
                Ball { center: vec![0.0, 0.0], radius: 0.1, tag: BallTag::Generic },
                Ball { center: vec![0.05, 0.0], radius: 0.1, tag: BallTag::Generic },
            ],
            Disjointness::Full,
        );
        match measure_from_balls(&overlap, 2, 1) {
            Err(Error::Overlap { first: 0, second: 1, .. }) => {}
            other => panic!("expected overlap error, got {other:?}"),
        }

        let s = 0.01;
        let n = 40;
        let chain = BallFamily::new(
            (0..n)
                .map(|i| Ball { center: vec![2.0 * s * i as f64, 0.0], radius: s, tag: BallTag::E })
                .collect(),
            Disjointness::Full,
        );
        let mu = measure_from_balls(&chain, 2, 1).unwrap();
        assert!((mu.total_mass() - n as f64 * s).abs() < 1e-12);
        assert!((packing_bound(&chain, 1) - n as f64 * s).abs() < 1e-12);
        assert_eq!(packing_bound(&BallFamily::new(vec![], Disjointness::None), 1), 0.0);
    }

    #[test]
    fn reifenberg_trivial_cases() {
        let line = WeightedPointMeasure::unit(
            2,
            (0..21).map(|i| vec![-0.5 + 0.05 * i as f64, 0.1]).collect(),
        )
        .unwrap();
        let rep = reifenberg_check(&line, 1, 1e-2, &[0.0, 0.0], 1.0).unwrap();
        assert!(rep.pass);
        assert!(rep.worst_ratio < 1e-20);
        assert!(rep.scales.len() >= 2);

        let single = WeightedPointMeasure::unit(2, vec![vec![0.1, 0.1]]).unwrap();
        let rep = reifenberg_check(&single, 1, 1e-2, &[0.0, 0.0], 1.0).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.worst_ratio, 0.0);

        let outside = WeightedPointMeasure::unit(2, vec![vec![3.0, 0.0]]).unwrap();
        assert!(reifenberg_check(&outside, 1, 1e-2, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn rectifiability_splits_by_pinching() {
        let mut samples: Vec<PinchingSample> = (0..20)
            .map(|i| PinchingSample {
                point: vec![-0.5 + 0.05 * i as f64, 0.0],
                theta_outer: 1.0,
                theta_inner: 1.0,
            })
            .collect();
        let rep = rectifiability_diagnostic(&samples, 1e-3, 1, 1e-2, &[0.0, 0.0], 1.0).unwrap();
        assert!(rep.high_pinching.is_empty());
        assert!(rep.pass);

        for j in 0..3 {
            samples.push(PinchingSample {
                point: vec![0.0, 0.6 + 0.01 * j as f64],
                theta_outer: 1.0,
                theta_inner: 0.5,
            });
        }
        let rep = rectifiability_diagnostic(&samples, 0.1, 1, 1e-2, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(rep.high_pinching, vec![20, 21, 22]);
        assert!(rep.pass);
        assert!((rep.high_fraction - 3.0 / 23.0).abs() < 1e-15);
    }
}
