//! Regular lattices, sphere-valued node maps and their discrete gradients.
//!
//! A [`GridDomain`] is the cube `[-n h, n h]^m` sampled at spacing `h`, with nodes
//! stored row-major (axis 0 slowest). A [`DiscretizedMap`] stores one unit vector of
//! `R^N` per node. Gradients use central differences in the interior and one-sided
//! differences on the lattice faces; energies use midpoint quadrature with cell
//! volume `h^m`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 4;

/// Chunk length for deterministic parallel reductions: partial sums are formed over
/// fixed index blocks and added in block order, independent of the thread count.
pub(crate) const REDUCE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    dim: usize,
    spacing: f64,
    half_nodes: usize,
}

impl GridDomain {
    /// Lattice covering `[-half_extent, half_extent]^dim`. The half extent is rounded
    /// up to a whole number of cells.
    pub fn new(dim: usize, spacing: f64, half_extent: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidParameter(format!(
                "domain dimension must be in 1..=4, got {dim}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lattice spacing must be positive, got {spacing}"
            )));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "half extent must be positive, got {half_extent}"
            )));
        }
        let half_nodes = (half_extent / spacing - 1e-9).ceil().max(1.0) as usize;
        Self::from_half_nodes(dim, spacing, half_nodes)
    }

    pub fn from_half_nodes(dim: usize, spacing: f64, half_nodes: usize) -> Result<Self> {
        if half_nodes < 1 {
            return Err(Error::InvalidParameter(
                "lattice needs at least three nodes per axis".into(),
            ));
        }
        let per_axis = 2 * half_nodes + 1;
        let total = (per_axis as f64).powi(dim as i32);
        if total > 4.0e8 {
            return Err(Error::InvalidParameter(format!(
                "lattice with {total:.0} nodes is too large"
            )));
        }
        Ok(Self {
            dim,
            spacing,
            half_nodes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn half_nodes(&self) -> usize {
        self.half_nodes
    }

    pub fn nodes_per_axis(&self) -> usize {
        2 * self.half_nodes + 1
    }

    /// Half width `n h` of the sampled cube.
    pub fn half_width(&self) -> f64 {
        self.half_nodes as f64 * self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn strides(&self) -> [usize; MAX_DIM] {
        let n = self.nodes_per_axis();
        let mut s = [0usize; MAX_DIM];
        let mut acc = 1;
        for a in (0..self.dim).rev() {
            s[a] = acc;
            acc *= n;
        }
        s
    }

    pub fn multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let n = self.nodes_per_axis();
        let mut out = [0usize; MAX_DIM];
        let mut rest = idx;
        for a in (0..self.dim).rev() {
            out[a] = rest % n;
            rest /= n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let n = self.nodes_per_axis();
        multi[..self.dim].iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn coord_of_axis_index(&self, i: usize) -> f64 {
        (i as f64 - self.half_nodes as f64) * self.spacing
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let mi = self.multi_index(idx);
        (0..self.dim).map(|a| self.coord_of_axis_index(mi[a])).collect()
    }

    /// Nearest node to `x`, or `None` when `x` lies outside the sampled cube by more
    /// than half a cell.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let n = self.nodes_per_axis() as i64;
        let mut multi = [0usize; MAX_DIM];
        for a in 0..self.dim {
            let i = (x[a] / self.spacing).round() as i64 + self.half_nodes as i64;
            if i < 0 || i >= n {
                return None;
            }
            multi[a] = i as usize;
        }
        Some(self.flat_index(&multi))
    }

    pub fn is_face_node(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        let last = self.nodes_per_axis() - 1;
        (0..self.dim).any(|a| mi[a] == 0 || mi[a] == last)
    }

    /// True when the closed ball lies inside the sampled cube.
    pub fn contains_ball(&self, center: &[f64], radius: f64) -> bool {
        let hw = self.half_width() * (1.0 + 1e-12);
        center.len() == self.dim && center.iter().all(|c| c.abs() + radius <= hw)
    }

    /// Distance from `x` to the nearest lattice face.
    pub fn distance_to_faces(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|c| self.half_width() - c.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Calls `f(node, offset, |offset|)` for every node with `|x_node - center| <= radius`,
    /// where `offset = x_node - center`. Nodes outside the lattice are skipped.
    pub fn for_each_in_ball<F: FnMut(usize, &[f64], f64)>(
        &self,
        center: &[f64],
        radius: f64,
        mut f: F,
    ) {
        let (lo, hi) = self.box_ranges(center, radius);
        let strides = self.strides();
        let r2 = radius * radius;
        let mut mi = lo;
        let mut off = [0.0; MAX_DIM];
        if (0..self.dim).any(|a| lo[a] > hi[a]) {
            return;
        }
        loop {
            let mut d2 = 0.0;
            let mut idx = 0;
            for a in 0..self.dim {
                off[a] = self.coord_of_axis_index(mi[a]) - center[a];
                d2 += off[a] * off[a];
                idx += mi[a] * strides[a];
            }
            if d2 <= r2 {
                f(idx, &off[..self.dim], d2.sqrt());
            }
            let mut a = self.dim;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                if mi[a] < hi[a] {
                    mi[a] += 1;
                    break;
                }
                mi[a] = lo[a];
            }
        }
    }

    /// Node indices in the ball, in lattice order.
    pub fn nodes_in_ball(&self, center: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in_ball(center, radius, |i, _, _| out.push(i));
        out
    }

    fn box_ranges(&self, center: &[f64], radius: f64) -> ([usize; MAX_DIM], [usize; MAX_DIM]) {
        let mut lo = [0usize; MAX_DIM];
        let mut hi = [0usize; MAX_DIM];
        let last = self.nodes_per_axis() as i64 - 1;
        for a in 0..self.dim {
            let l = ((center[a] - radius) / self.spacing).ceil() as i64 + self.half_nodes as i64;
            let h = ((center[a] + radius) / self.spacing).floor() as i64 + self.half_nodes as i64;
            let l = l.clamp(0, last + 1);
            let h = h.clamp(-1, last);
            if h < l {
                lo[a] = 1;
                hi[a] = 0;
            } else {
                lo[a] = l as usize;
                hi[a] = h as usize;
            }
        }
        (lo, hi)
    }
}

/// How node values are initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initializer {
    /// The same unit vector everywhere (normalized on construction).
    Constant { value: Vec<f64> },
    /// `x / |x|`; needs `N = m`.
    Radial,
    /// `(x_1, x_2) / |(x_1, x_2)|`; needs `N = 2` and `m >= 2`.
    Cylindrical,
    /// Constant-speed great circle along one axis:
    /// `(cos(rate x_axis + phase), sin(rate x_axis + phase), 0, ...)`.
    Geodesic { axis: usize, rate: f64, phase: f64 },
    /// Independent uniform points of the sphere from a seeded stream.
    Random { seed: u64 },
}

/// Sphere-valued samples on a lattice together with the boundary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedMap {
    domain: GridDomain,
    target_dim: usize,
    p: f64,
    values: Vec<f64>,
    fixed: Vec<bool>,
    singular: Vec<usize>,
}

/// Builds a map on `domain` with values in `S^{target_dim - 1}`. Lattice-face nodes are
/// fixed; nodes where an analytic initializer is undefined get `e_1` and are
/// recorded as singular.
pub fn build_map(
    domain: &GridDomain,
    target_dim: usize,
    p: f64,
    init: &Initializer,
) -> Result<DiscretizedMap> {
    if target_dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "target dimension must be at least 2, got {target_dim}"
        )));
    }
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "exponent p must be finite and > 1, got {p}"
        )));
    }
    let m = domain.dim();
    let h = domain.spacing();
    let count = domain.node_count();
    let mut values = vec![0.0; count * target_dim];
    let mut singular = Vec::new();
    match init {
        Initializer::Constant { value } => {
            if value.len() != target_dim {
                return Err(Error::DimensionMismatch(format!(
                    "constant value has {} components, target needs {target_dim}",
                    value.len()
                )));
            }
            let n = crate::linalg::norm(value);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidParameter(
                    "constant value must be a nonzero finite vector".into(),
                ));
            }
            for chunk in values.chunks_mut(target_dim) {
                for (c, v) in chunk.iter_mut().zip(value) {
                    *c = v / n;
                }
            }
        }
        Initializer::Radial => {
            if target_dim != m {
                return Err(Error::DimensionMismatch(format!(
                    "radial map needs target dimension {m}, got {target_dim}"
                )));
            }
            for idx in 0..count {
                let x = domain.coords(idx);
                let r = crate::linalg::norm(&x);
                let out = &mut values[idx * target_dim..(idx + 1) * target_dim];
                if r < 0.5 * h {
                    out[0] = 1.0;
                    singular.push(idx);
                } else {
                    for (o, xi) in out.iter_mut().zip(&x) {
                        *o = xi / r;
                    }
                }
            }
        }
        Initializer::Cylindrical => {
            if target_dim != 2 || m < 2 {
                return Err(Error::DimensionMismatch(format!(
                    "cylindrical map needs target dimension 2 and m >= 2, got N = {target_dim}, m = {m}"
                )));
            }
            for idx in 0..count {
                let x = domain.coords(idx);
                let r = x[0].hypot(x[1]);
                let out = &mut values[idx * 2..idx * 2 + 2];
                if r < 0.5 * h {
                    out[0] = 1.0;
                    singular.push(idx);
                } else {
                    out[0] = x[0] / r;
                    out[1] = x[1] / r;
                }
            }
        }
        Initializer::Geodesic { axis, rate, phase } => {
            if *axis >= m {
                return Err(Error::InvalidParameter(format!(
                    "geodesic axis {axis} out of range for m = {m}"
                )));
            }
            for idx in 0..count {
                let t = rate * domain.coords(idx)[*axis] + phase;
                values[idx * target_dim] = t.cos();
                values[idx * target_dim + 1] = t.sin();
            }
        }
        Initializer::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for chunk in values.chunks_mut(target_dim) {
                loop {
                    for c in chunk.iter_mut() {
                        *c = StandardNormal.sample(&mut rng);
                    }
                    let n = crate::linalg::norm(chunk);
                    if n > 1e-12 {
                        chunk.iter_mut().for_each(|c| *c /= n);
                        break;
                    }
                }
            }
        }
    }
    let fixed = (0..count).map(|i| domain.is_face_node(i)).collect();
    Ok(DiscretizedMap {
        domain: domain.clone(),
        target_dim,
        p,
        values,
        fixed,
        singular,
    })
}

impl DiscretizedMap {
    /// Assembles a map from raw parts, renormalizing nothing. Used by snapshot loading.
    pub fn from_parts(
        domain: GridDomain,
        target_dim: usize,
        p: f64,
        values: Vec<f64>,
        fixed: Vec<bool>,
        singular: Vec<usize>,
    ) -> Result<Self> {
        let count = domain.node_count();
        if values.len() != count * target_dim || fixed.len() != count {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values and {count} mask entries, got {} and {}",
                count * target_dim,
                values.len(),
                fixed.len()
            )));
        }
        if singular.iter().any(|&i| i >= count) {
            return Err(Error::DimensionMismatch("singular node out of range".into()));
        }
        Ok(Self {
            domain,
            target_dim,
            p,
            values,
            fixed,
            singular,
        })
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.target_dim..(idx + 1) * self.target_dim]
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed
    }

    pub fn singular_nodes(&self) -> &[usize] {
        &self.singular
    }

    pub fn free_count(&self) -> usize {
        self.fixed.iter().filter(|f| !**f).count()
    }

    /// Additionally fixes every node with `|x| >= radius`.
    pub fn fix_outside(&mut self, radius: f64) {
        for idx in 0..self.domain.node_count() {
            if crate::linalg::norm(&self.domain.coords(idx)) >= radius {
                self.fixed[idx] = true;
            }
        }
    }

    /// Adds tangent Gaussian noise of size `amplitude` to free nodes and renormalizes.
    pub fn perturb(&mut self, amplitude: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.target_dim;
        for idx in 0..self.domain.node_count() {
            if self.fixed[idx] {
                continue;
            }
            let v = &mut self.values[idx * n..(idx + 1) * n];
            let noise: Vec<f64> = (0..n)
                .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); amplitude * z })
                .collect();
            for (vi, ni) in v.iter_mut().zip(&noise) {
                *vi += ni;
            }
            let nv = crate::linalg::norm(v);
            v.iter_mut().for_each(|c| *c /= nv);
        }
    }

    /// Largest deviation `| |u| - 1 |` over all nodes.
    pub fn max_norm_defect(&self) -> f64 {
        self.values
            .chunks(self.target_dim)
            .map(|c| (crate::linalg::norm(c) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Writes the `m x N` difference quotient matrix of node `idx` into `out`
/// (row `a` holds `d_a u`).
pub(crate) fn node_gradient(
    domain: &GridDomain,
    strides: &[usize; MAX_DIM],
    values: &[f64],
    target_dim: usize,
    idx: usize,
    out: &mut [f64],
) {
    let h = domain.spacing();
    let last = domain.nodes_per_axis() - 1;
    let mi = domain.multi_index(idx);
    let n = target_dim;
    for a in 0..domain.dim() {
        let s = strides[a];
        let row = &mut out[a * n..(a + 1) * n];
        let (lo, hi, scale) = if mi[a] == 0 {
            (idx, idx + s, 1.0 / h)
        } else if mi[a] == last {
            (idx - s, idx, 1.0 / h)
        } else {
            (idx - s, idx + s, 0.5 / h)
        };
        for j in 0..n {
            row[j] = (values[hi * n + j] - values[lo * n + j]) * scale;
        }
    }
}

/// Difference quotients and derived densities of a map.
#[derive(Debug, Clone)]
pub struct GradientField {
    domain: GridDomain,
    target_dim: usize,
    p: f64,
    data: Vec<f64>,
    norm_sq: Vec<f64>,
    density: Vec<f64>,
}

pub fn gradient(map: &DiscretizedMap) -> GradientField {
    let domain = map.domain.clone();
    let m = domain.dim();
    let n = map.target_dim;
    let row = m * n;
    let strides = domain.strides();
    let mut data = vec![0.0; domain.node_count() * row];
    data.par_chunks_mut(row).enumerate().for_each(|(idx, out)| {
        node_gradient(&domain, &strides, &map.values, n, idx, out);
    });
    let norm_sq: Vec<f64> = data
        .par_chunks(row)
        .map(|g| g.iter().map(|x| x * x).sum())
        .collect();
    let half_p = 0.5 * map.p;
    let density = norm_sq.par_iter().map(|s: &f64| s.powf(half_p)).collect();
    GradientField {
        domain,
        target_dim: n,
        p: map.p,
        data,
        norm_sq,
        density,
    }
}

impl GradientField {
    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// The `m x N` gradient at a node, row `a` holding `d_a u`.
    pub fn at(&self, idx: usize) -> &[f64] {
        let row = self.domain.dim() * self.target_dim;
        &self.data[idx * row..(idx + 1) * row]
    }

    pub fn norm_sq(&self, idx: usize) -> f64 {
        self.norm_sq[idx]
    }

    /// `|grad u|` at a node.
    pub fn norm(&self, idx: usize) -> f64 {
        self.norm_sq[idx].sqrt()
    }

    /// `|grad u|^p` at a node.
    pub fn density(&self, idx: usize) -> f64 {
        self.density[idx]
    }

    pub fn densities(&self) -> &[f64] {
        &self.density
    }
}

/// Integration region for energies.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Whole,
    Ball { center: Vec<f64>, radius: f64 },
}

fn check_ball(domain: &GridDomain, center: &[f64], radius: f64) -> Result<()> {
    if center.len() != domain.dim() {
        return Err(Error::DimensionMismatch(format!(
            "center has {} coordinates, domain dimension is {}",
            center.len(),
            domain.dim()
        )));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if !domain.contains_ball(center, radius) {
        return Err(Error::NotAdmissible(format!(
            "ball of radius {radius} around {center:?} leaves the lattice (half width {})",
            domain.half_width()
        )));
    }
    Ok(())
}

pub(crate) fn ordered_sum(values: &[f64]) -> f64 {
    let partial: Vec<f64> = values
        .par_chunks(REDUCE_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partial.iter().sum()
}

/// Midpoint-rule p-energy `sum |grad u|^p h^m` over the nodes of `region`.
pub fn total_energy(field: &GradientField, region: &Region) -> Result<f64> {
    let vol = field.domain.cell_volume();
    match region {
        Region::Whole => Ok(ordered_sum(&field.density) * vol),
        Region::Ball { center, radius } => {
            check_ball(&field.domain, center, *radius)?;
            let mut acc = 0.0;
            field
                .domain
                .for_each_in_ball(center, *radius, |i, _, _| acc += field.density[i]);
            Ok(acc * vol)
        }
    }
}

/// Convenience wrapper computing the gradient first.
pub fn map_energy(map: &DiscretizedMap, region: &Region) -> Result<f64> {
    total_energy(&gradient(map), region)
}

/// Rescaled map `y -> u(x + r y)` sampled on a lattice of spacing `h / r` and half
/// extent `half_extent`, using the nearest source node. When `x` is a lattice node
/// the sampled nodes coincide with source nodes exactly.
pub fn blow_up(map: &DiscretizedMap, x: &[f64], r: f64, half_extent: f64) -> Result<DiscretizedMap> {
    let src = &map.domain;
    if x.len() != src.dim() {
        return Err(Error::DimensionMismatch(format!(
            "center has {} coordinates, domain dimension is {}",
            x.len(),
            src.dim()
        )));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {r}")));
    }
    let out_domain = GridDomain::new(src.dim(), src.spacing() / r, half_extent)?;
    let reach = out_domain.half_width() * r;
    let slack = 0.5 * src.spacing();
    if x.iter().any(|c| c.abs() + reach > src.half_width() + slack) {
        return Err(Error::NotAdmissible(format!(
            "blow-up window of radius {reach} around {x:?} leaves the lattice"
        )));
    }
    let n = map.target_dim;
    let count = out_domain.node_count();
    let mut values = vec![0.0; count * n];
    let mut source_of = vec![0usize; count];
    for idx in 0..count {
        let y = out_domain.coords(idx);
        let pt: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| xi + r * yi).collect();
        let s = src.nearest_node(&pt).ok_or_else(|| {
            Error::NotAdmissible(format!("resampled point {pt:?} has no source node"))
        })?;
        source_of[idx] = s;
        values[idx * n..(idx + 1) * n].copy_from_slice(map.value(s));
    }
    let fixed = (0..count).map(|i| out_domain.is_face_node(i)).collect();
    let singular_src: std::collections::BTreeSet<usize> = map.singular.iter().copied().collect();
    let singular = (0..count)
        .filter(|i| singular_src.contains(&source_of[*i]))
        .collect();
    Ok(DiscretizedMap {
        domain: out_domain,
        target_dim: n,
        p: map.p,
        values,
        fixed,
        singular,
    })
}

/// `sum (sum_i |<grad u, v_i>|^2)^{p/2} h^m` for an orthonormal frame `{v_i}` of `R^m`.
pub fn directional_energy(field: &GradientField, frame: &[Vec<f64>], region: &Region) -> Result<f64> {
    let m = field.domain.dim();
    if frame.iter().any(|v| v.len() != m) {
        return Err(Error::DimensionMismatch("frame vectors must live in R^m".into()));
    }
    let n = field.target_dim;
    let half_p = 0.5 * field.p;
    let node_value = |idx: usize| -> f64 {
        let g = field.at(idx);
        let mut s = 0.0;
        for v in frame {
            for j in 0..n {
                let mut c = 0.0;
                for a in 0..m {
                    c += v[a] * g[a * n + j];
                }
                s += c * c;
            }
        }
        s.powf(half_p)
    };
    let vol = field.domain.cell_volume();
    match region {
        Region::Whole => {
            let vals: Vec<f64> = (0..field.domain.node_count())
                .into_par_iter()
                .map(node_value)
                .collect();
            Ok(ordered_sum(&vals) * vol)
        }
        Region::Ball { center, radius } => {
            check_ball(&field.domain, center, *radius)?;
            let mut acc = 0.0;
            field
                .domain
                .for_each_in_ball(center, *radius, |i, _, _| acc += node_value(i));
            Ok(acc * vol)
        }
    }
}
