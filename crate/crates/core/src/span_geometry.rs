//! Affine planes, rho-general position, greedy effective spans and fattenings.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

use crate::linalg::{complete_basis, dot, orthogonalize, sub, sym_eigen};
use crate::{Error, Result};

/// Tolerance on the Gram matrix of a plane frame.
pub const FRAME_TOL: f64 = 1e-12;

/// Relative norm under which a Gram-Schmidt residual counts as zero.
const RESIDUAL_FLOOR: f64 = 1e-14;

/// Affine plane `base + span(frame)` with an orthonormal frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePlane {
    base: Vec<f64>,
    frame: Vec<Vec<f64>>,
}

impl AffinePlane {
    /// Checks that `frame` is orthonormal within `FRAME_TOL`.
    pub fn new(base: Vec<f64>, frame: Vec<Vec<f64>>) -> Result<Self> {
        let m = base.len();
        if m == 0 {
            return Err(Error::InvalidParameter("plane in R^0".into()));
        }
        if frame.len() > m {
            return Err(Error::DimensionMismatch(format!(
                "{} frame vectors in R^{m}",
                frame.len()
            )));
        }
        for (i, a) in frame.iter().enumerate() {
            if a.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "frame vector {i} has length {}, expected {m}",
                    a.len()
                )));
            }
            for (j, b) in frame.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                let g = dot(a, b);
                if (g - target).abs() > FRAME_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "frame Gram entry ({i},{j}) = {g:e}"
                    )));
                }
            }
        }
        Ok(Self { base, frame })
    }

    /// Plane through `base` spanned by arbitrary (possibly dependent) directions.
    /// Directions that are numerically dependent on earlier ones are dropped.
    pub fn spanned_by(base: Vec<f64>, directions: &[Vec<f64>]) -> Self {
        let mut frame: Vec<Vec<f64>> = Vec::new();
        for d in directions {
            let scale = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let (r, rn) = orthogonalize(d, &frame);
            if rn > RESIDUAL_FLOOR * scale.max(1.0) && rn > 0.0 {
                frame.push(r.iter().map(|x| x / rn).collect());
            }
        }
        Self { base, frame }
    }

    /// The single point `base` as a 0-plane.
    pub fn point(base: Vec<f64>) -> Self {
        Self { base, frame: Vec::new() }
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn frame(&self) -> &[Vec<f64>] {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.frame.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    /// Orthogonal projection of `y` onto the plane.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let d = sub(y, &self.base);
        let mut out = self.base.clone();
        for v in &self.frame {
            let c = dot(&d, v);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += c * vi;
            }
        }
        out
    }

    pub fn dist_sq(&self, y: &[f64]) -> f64 {
        let d = sub(y, &self.base);
        let (_, rn) = orthogonalize(&d, &self.frame);
        rn * rn
    }

    pub fn dist(&self, y: &[f64]) -> f64 {
        self.dist_sq(y).sqrt()
    }

    pub fn contains_within(&self, y: &[f64], rho: f64) -> bool {
        self.dist(y) <= rho
    }

    /// Same plane completed to dimension `k` with coordinate directions, or cut
    /// down to its first `k` frame vectors when `k` is smaller.
    pub fn with_dim(&self, k: usize) -> Self {
        let m = self.ambient_dim();
        let k = k.min(m);
        let frame = if k <= self.dim() {
            self.frame[..k].to_vec()
        } else {
            let mut f = complete_basis(&self.frame, m);
            f.truncate(k);
            f
        };
        Self { base: self.base.clone(), frame }
    }

    /// Image under `y -> rotation * y + shift` (rotation row-major `m x m`).
    pub fn transformed(&self, rotation: &[f64], shift: &[f64]) -> Self {
        let m = self.ambient_dim();
        let apply = |v: &[f64]| -> Vec<f64> {
            (0..m)
                .map(|i| (0..m).map(|j| rotation[i * m + j] * v[j]).sum())
                .collect()
        };
        let mut base = apply(&self.base);
        for (b, s) in base.iter_mut().zip(shift) {
            *b += s;
        }
        let frame = self.frame.iter().map(|v| apply(v)).collect();
        Self { base, frame }
    }
}

/// Largest principal angle between the direction spaces of two planes of the same
/// dimension, in radians.
pub fn max_principal_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let k = a.len();
    if b.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "principal angles between a {k}-frame and a {}-frame",
            b.len()
        )));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let mut c = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            c[i * k + j] = dot(&a[i], &b[j]);
        }
    }
    let mut cct = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            cct[i * k + j] = (0..k).map(|l| c[i * k + l] * c[j * k + l]).sum();
        }
    }
    let eig = sym_eigen(&cct, k);
    let smin = eig.values[k - 1].clamp(0.0, 1.0).sqrt();
    Ok(smin.acos())
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// `true` iff each `x_j` lies at distance `>= rho` from the plane through `x_0`
/// spanned by the earlier offsets.
pub fn general_position(points: &[Vec<f64>], rho: f64) -> Result<bool> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let Some(x0) = points.first() else {
        return Ok(true);
    };
    let mut frame: Vec<Vec<f64>> = Vec::new();
    for x in &points[1..] {
        if x.len() != x0.len() {
            return Err(Error::DimensionMismatch("points of mixed dimension".into()));
        }
        let (r, rn) = orthogonalize(&sub(x, x0), &frame);
        if !(rn >= rho) {
            return Ok(false);
        }
        frame.push(r.iter().map(|v| v / rn).collect());
    }
    Ok(true)
}

/// Outcome of the greedy farthest-point selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanSelection {
    /// Indices into the input, in selection order.
    pub selected: Vec<usize>,
    /// Plane through the selected points (dimension `selected.len() - 1`).
    pub plane: AffinePlane,
    /// Distance of the farthest input point from `plane`.
    pub residual: f64,
}

impl SpanSelection {
    /// Whether `k + 1` points in `rho`-general position were found.
    pub fn spans(&self, k: usize) -> bool {
        self.selected.len() == k + 1
    }
}

/// Greedy farthest-point selection of at most `k + 1` points. The first point is
/// the lexicographically smallest; each later point is the one farthest from the
/// current span, ties going to the lexicographically smaller point. Selection
/// stops once `k + 1` points are chosen or the farthest distance drops below `rho`.
///
/// When fewer than `k + 1` points are selected every input point is within
/// `rho` of the returned plane.
pub fn greedy_span(points: &[Vec<f64>], rho: f64, k: usize) -> Result<Option<SpanSelection>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    if points.is_empty() {
        return Ok(None);
    }
    let m = points[0].len();
    if points.iter().any(|p| p.len() != m) {
        return Err(Error::DimensionMismatch("points of mixed dimension".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));

    let first = order[0];
    let x0 = points[first].clone();
    let mut selected = vec![first];
    let mut frame: Vec<Vec<f64>> = Vec::new();
    let offsets: Vec<Vec<f64>> = points.iter().map(|p| sub(p, &x0)).collect();
    // squared distance of every point to the current span, updated incrementally
    let mut d2: Vec<f64> = offsets.iter().map(|o| dot(o, o)).collect();

    let farthest = |d2: &[f64]| -> (usize, f64) {
        let mut best = order[0];
        let mut bd = -1.0;
        for &i in &order {
            if d2[i] > bd {
                bd = d2[i];
                best = i;
            }
        }
        (best, bd.max(0.0).sqrt())
    };

    loop {
        let (j, dj) = farthest(&d2);
        if selected.len() == k + 1 || selected.len() > m || dj < rho {
            let plane = AffinePlane { base: x0, frame };
            // recompute the residual from scratch to avoid drift in `d2`
            let residual = points.iter().fold(0.0f64, |a, p| a.max(plane.dist(p)));
            return Ok(Some(SpanSelection { selected, plane, residual }));
        }
        let (r, rn) = orthogonalize(&offsets[j], &frame);
        let v: Vec<f64> = r.iter().map(|x| x / rn).collect();
        for (i, o) in offsets.iter().enumerate() {
            let c = dot(o, &v);
            d2[i] = (d2[i] - c * c).max(0.0);
        }
        d2[j] = 0.0;
        frame.push(v);
        selected.push(j);
    }
}

/// Plane spanned by `k + 1` points of the set in `rho`-general position, found
/// greedily; `None` when the greedy selection stops early.
pub fn effective_span(points: &[Vec<f64>], rho: f64, k: usize) -> Result<Option<AffinePlane>> {
    Ok(greedy_span(points, rho, k)?
        .filter(|s| s.spans(k))
        .map(|s| s.plane))
}

/// Splits `points` by `dist(y, plane) <= rho`; returns indices.
pub fn fattening_test(plane: &AffinePlane, rho: f64, points: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for (i, y) in points.iter().enumerate() {
        if plane.dist(y) <= rho {
            inside.push(i);
        } else {
            outside.push(i);
        }
    }
    (inside, outside)
}
