//! Projected gradient descent for the discrete p-energy and Euler-Lagrange diagnostics.
//!
//! The descent differentiates the exact lattice energy `sum (|grad u|^2 + eps^2)^{p/2} h^m`
//! with respect to the free node values, projects onto the tangent space of the
//! sphere and renormalizes. Steps are accepted only when the unregularized energy
//! does not increase; otherwise the step is halved.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy_monitor::CutoffProfile;
use crate::error::{Error, Result};
use crate::grid_core::{node_gradient, ordered_sum, DiscretizedMap, GridDomain, REDUCE_CHUNK};
use crate::linalg::{dot, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescentSchedule {
    /// Initial step, in units of `h^2`.
    pub initial_step: f64,
    /// Factor applied to the step after an accepted iteration.
    pub growth: f64,
    pub max_step: f64,
    pub max_iterations: usize,
    /// Stop once the relative energy decrease of an iteration falls below this.
    pub tolerance: f64,
    pub max_backtracks: usize,
    pub eps_reg: f64,
}

impl Default for DescentSchedule {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            growth: 1.1,
            max_step: 1.0,
            max_iterations: 200,
            tolerance: 1e-7,
            max_backtracks: 20,
            eps_reg: 1e-8,
        }
    }
}

impl DescentSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("descent schedule: {what}")));
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return bad("growth must be at least 1");
        }
        if !(self.max_step >= self.initial_step && self.max_step.is_finite()) {
            return bad("max_step must be at least initial_step");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return bad("tolerance must lie in (0, 1)");
        }
        if !(self.eps_reg > 0.0 && self.eps_reg.is_finite()) {
            return bad("eps_reg must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative decrease fell below the tolerance.
    Converged,
    /// No backtracked step changed the energy beyond rounding.
    Stalled,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct MinimizeReport {
    pub map: DiscretizedMap,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub log: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl MinimizeReport {
    pub fn converged(&self) -> bool {
        self.stop != StopReason::IterationCap
    }
}

/// Unregularized lattice energy `sum |grad u|^p h^m`.
pub fn lattice_energy(map: &DiscretizedMap) -> f64 {
    let domain = map.domain();
    let n = map.target_dim();
    let m = domain.dim();
    let strides = domain.strides();
    let half_p = 0.5 * map.p();
    let count = domain.node_count();
    let partial: Vec<f64> = (0..count.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; m * n];
            let mut acc = 0.0;
            for idx in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(count) {
                node_gradient(domain, &strides, map.values(), n, idx, &mut g);
                let s: f64 = g.iter().map(|x| x * x).sum();
                acc += s.powf(half_p);
            }
            acc
        })
        .collect();
    partial.iter().sum::<f64>() * domain.cell_volume()
}

/// Flux `p (|g|^2 + eps^2)^{(p-2)/2} g` at every node.
fn fluxes(map: &DiscretizedMap, eps: f64) -> Vec<f64> {
    let domain = map.domain();
    let n = map.target_dim();
    let row = domain.dim() * n;
    let strides = domain.strides();
    let p = map.p();
    let eps2 = eps * eps;
    let mut out = vec![0.0; domain.node_count() * row];
    out.par_chunks_mut(row).enumerate().for_each(|(idx, f)| {
        node_gradient(domain, &strides, map.values(), n, idx, f);
        let s: f64 = f.iter().map(|x| x * x).sum();
        let w = p * (s + eps2).powf(0.5 * p - 1.0);
        f.iter_mut().for_each(|x| *x *= w);
    });
    out
}

/// Derivative of the regularized energy with respect to the value at each free node,
/// divided by `h^m` and projected to the tangent space. Fixed nodes get zero.
fn tangent_gradient(map: &DiscretizedMap, eps: f64) -> Vec<f64> {
    let domain = map.domain();
    let n = map.target_dim();
    let m = domain.dim();
    let row = m * n;
    let flux = fluxes(map, eps);
    let strides = domain.strides();
    let h = domain.spacing();
    let last = domain.nodes_per_axis() - 1;
    let mut out = vec![0.0; domain.node_count() * n];
    out.par_chunks_mut(n).enumerate().for_each(|(j, gj)| {
        if map.fixed_mask()[j] {
            return;
        }
        let mi = domain.multi_index(j);
        let mut add = |i: usize, a: usize, c: f64| {
            let f = &flux[i * row + a * n..i * row + (a + 1) * n];
            for (g, fv) in gj.iter_mut().zip(f) {
                *g += c * fv;
            }
        };
        for a in 0..m {
            let s = strides[a];
            let t = mi[a];
            if t >= 1 {
                let c = if t - 1 == 0 { 1.0 / h } else { 0.5 / h };
                add(j - s, a, c);
            }
            if t < last {
                let c = if t + 1 == last { -1.0 / h } else { -0.5 / h };
                add(j + s, a, c);
            }
            if t == 0 {
                add(j, a, -1.0 / h);
            } else if t == last {
                add(j, a, 1.0 / h);
            }
        }
        let u = map.value(j);
        let c = dot(gj, u);
        for (g, uv) in gj.iter_mut().zip(u) {
            *g -= c * uv;
        }
    });
    out
}

fn apply_step(map: &DiscretizedMap, grad: &[f64], step: f64) -> DiscretizedMap {
    let mut next = map.clone();
    let n = map.target_dim();
    let scale = step * map.domain().spacing().powi(2);
    let fixed = map.fixed_mask().to_vec();
    next.values_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, v)| {
            if fixed[j] {
                return;
            }
            for (vi, gi) in v.iter_mut().zip(&grad[j * n..(j + 1) * n]) {
                *vi -= scale * gi;
            }
            let nv = norm(v);
            v.iter_mut().for_each(|x| *x /= nv);
        });
    next
}

/// Minimizes the p-energy over the free nodes of `map`, keeping fixed nodes intact.
pub fn minimize(map: &DiscretizedMap, schedule: &DescentSchedule) -> Result<MinimizeReport> {
    schedule.validate()?;
    if map.free_count() == 0 {
        return Err(Error::InvalidParameter("map has no free nodes".into()));
    }
    let mut current = map.clone();
    let initial_energy = lattice_energy(&current);
    let mut energy = initial_energy;
    let mut step = schedule.initial_step;
    let mut log = Vec::new();
    let mut stop = StopReason::IterationCap;
    for iteration in 1..=schedule.max_iterations {
        let grad = tangent_gradient(&current, schedule.eps_reg);
        let mut trial_step = step;
        let mut accepted = None;
        let mut last_trial = energy;
        for backtracks in 0..=schedule.max_backtracks {
            let trial = apply_step(&current, &grad, trial_step);
            let e = lattice_energy(&trial);
            last_trial = e;
            if e <= energy {
                accepted = Some((trial, e, backtracks));
                break;
            }
            trial_step *= 0.5;
        }
        let Some((next, e, backtracks)) = accepted else {
            if last_trial - energy <= 1e-12 * energy.abs().max(f64::MIN_POSITIVE) {
                stop = StopReason::Stalled;
                break;
            }
            return Err(Error::Diverged {
                iteration,
                before: energy,
                after: last_trial,
                backtracks: schedule.max_backtracks,
            });
        };
        log.push(IterationRecord {
            iteration,
            energy: e,
            step: trial_step,
            backtracks,
        });
        let decrease = if energy > 0.0 { (energy - e) / energy } else { 0.0 };
        current = next;
        energy = e;
        if decrease < schedule.tolerance {
            stop = StopReason::Converged;
            break;
        }
        step = (trial_step * schedule.growth).min(schedule.max_step);
    }
    Ok(MinimizeReport {
        map: current,
        initial_energy,
        final_energy: energy,
        log,
        stop,
    })
}

/// Which nodes enter the residual report.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOptions {
    /// Minimum distance to singular nodes and lattice faces; `None` means `10 h`.
    pub margin: Option<f64>,
    /// Keep only nodes with `inner <= |x| <= outer`.
    pub shell: Option<(f64, f64)>,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            margin: None,
            shell: None,
        }
    }
}

/// Both sides of `div(|grad u|^{p-2} grad u) = -|grad u|^p u` at admissible nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub nodes: Vec<usize>,
    /// `N` components per node.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub max_residual: f64,
    pub mean_residual: f64,
}

impl ResidualReport {
    pub fn residual_norm(&self, i: usize, n: usize) -> f64 {
        let l = &self.lhs[i * n..(i + 1) * n];
        let r = &self.rhs[i * n..(i + 1) * n];
        l.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

fn admissible_nodes(map: &DiscretizedMap, opts: &ResidualOptions) -> Vec<usize> {
    let domain = map.domain();
    let margin = opts.margin.unwrap_or(10.0 * domain.spacing());
    let mut excluded = vec![false; domain.node_count()];
    for &s in map.singular_nodes() {
        let c = domain.coords(s);
        domain.for_each_in_ball(&c, margin * (1.0 - 1e-12), |i, _, _| excluded[i] = true);
    }
    (0..domain.node_count())
        .filter(|&i| {
            if excluded[i] {
                return false;
            }
            let x = domain.coords(i);
            if domain.distance_to_faces(&x) < margin - 1e-12 {
                return false;
            }
            match opts.shell {
                Some((lo, hi)) => {
                    let r = norm(&x);
                    r >= lo && r <= hi
                }
                None => true,
            }
        })
        .collect()
}

/// Evaluates the Euler-Lagrange equation with centered differences. At `p = 2` the
/// left side is the wide-stencil Laplacian.
pub fn el_residual(map: &DiscretizedMap, opts: &ResidualOptions) -> Result<ResidualReport> {
    let nodes = admissible_nodes(map, opts);
    if nodes.is_empty() {
        return Err(Error::NotAdmissible("no node satisfies the residual margins".into()));
    }
    let p = map.p();
    let laplace = p == 2.0;
    residual_on(map, nodes, if laplace { LhsForm::Laplacian } else { LhsForm::Divergence })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LhsForm {
    Divergence,
    Laplacian,
}

/// Residual on the given nodes with an explicit choice of left-hand side.
pub fn residual_on(map: &DiscretizedMap, nodes: Vec<usize>, form: LhsForm) -> Result<ResidualReport> {
    let domain = map.domain();
    let n = map.target_dim();
    let m = domain.dim();
    let strides = domain.strides();
    let last = domain.nodes_per_axis() - 1;
    let h = domain.spacing();
    let p = map.p();
    for &j in &nodes {
        let mi = domain.multi_index(j);
        if (0..m).any(|a| mi[a] < 2 || mi[a] + 2 > last) {
            return Err(Error::NotAdmissible(format!(
                "node {j} is too close to the lattice faces for centered stencils"
            )));
        }
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = nodes
        .par_iter()
        .map(|&j| {
            let mut g = vec![0.0; m * n];
            let mut lhs = vec![0.0; n];
            match form {
                LhsForm::Laplacian => {
                    let u = map.value(j);
                    for a in 0..m {
                        let s = strides[a];
                        let up = map.value(j + 2 * s);
                        let dn = map.value(j - 2 * s);
                        for c in 0..n {
                            lhs[c] += (up[c] - 2.0 * u[c] + dn[c]) / (4.0 * h * h);
                        }
                    }
                }
                LhsForm::Divergence => {
                    for a in 0..m {
                        let s = strides[a];
                        for (sign, i) in [(1.0, j + s), (-1.0, j - s)] {
                            node_gradient(domain, &strides, map.values(), n, i, &mut g);
                            let ns: f64 = g.iter().map(|x| x * x).sum();
                            let w = if ns > 0.0 { ns.powf(0.5 * p - 1.0) } else { 0.0 };
                            for c in 0..n {
                                lhs[c] += sign * w * g[a * n + c] / (2.0 * h);
                            }
                        }
                    }
                }
            }
            node_gradient(domain, &strides, map.values(), n, j, &mut g);
            let ns: f64 = g.iter().map(|x| x * x).sum();
            let dens = ns.powf(0.5 * p);
            let rhs: Vec<f64> = map.value(j).iter().map(|u| -dens * u).collect();
            (lhs, rhs)
        })
        .collect();
    let mut lhs = Vec::with_capacity(nodes.len() * n);
    let mut rhs = Vec::with_capacity(nodes.len() * n);
    for (l, r) in rows {
        lhs.extend(l);
        rhs.extend(r);
    }
    let mut report = ResidualReport {
        nodes,
        lhs,
        rhs,
        max_residual: 0.0,
        mean_residual: 0.0,
    };
    let res: Vec<f64> = (0..report.nodes.len()).map(|i| report.residual_norm(i, n)).collect();
    report.max_residual = res.iter().copied().fold(0.0, f64::max);
    report.mean_residual = res.iter().sum::<f64>() / res.len() as f64;
    Ok(report)
}

/// Compactly supported test vector fields for the stationarity defect.
#[derive(Debug, Clone, PartialEq)]
pub enum TestField {
    /// `X(y) = psi(|y - c| / r) (y - c)`
    RadialBump { center: Vec<f64>, scale: f64, cutoff: CutoffProfile },
    /// `X(y) = (1 - |y - c|^2 / a^2)^3 e_axis` inside `B(c, a)`
    CoordinateBump { center: Vec<f64>, radius: f64, axis: usize },
}

impl TestField {
    fn support(&self) -> (&[f64], f64) {
        match self {
            TestField::RadialBump { center, scale, cutoff } => (center, scale * cutoff.t_b()),
            TestField::CoordinateBump { center, radius, .. } => (center, *radius),
        }
    }
}

/// `int |grad u|^{p-2} sum_{i,k} [p <d_i u, d_k u> - |grad u|^2 delta_ik] d_i X^k`.
pub fn stationarity_defect(map: &DiscretizedMap, field: &TestField) -> Result<f64> {
    let domain = map.domain();
    let (center, reach) = field.support();
    if center.len() != domain.dim() {
        return Err(Error::DimensionMismatch("test field center has wrong dimension".into()));
    }
    if !domain.contains_ball(center, reach) {
        return Err(Error::NotAdmissible(format!(
            "test field support B({center:?}, {reach}) leaves the lattice"
        )));
    }
    let n = map.target_dim();
    let m = domain.dim();
    let strides = domain.strides();
    let p = map.p();
    let nodes = domain.nodes_in_ball(center, reach);
    let vals: Vec<f64> = nodes
        .par_iter()
        .map(|&j| {
            let mut g = vec![0.0; m * n];
            node_gradient(domain, &strides, map.values(), n, j, &mut g);
            let ns: f64 = g.iter().map(|x| x * x).sum();
            if ns == 0.0 {
                return 0.0;
            }
            let x = domain.coords(j);
            let off: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
            let rho = norm(&off);
            let mut dir = vec![0.0; n];
            let (contracted, div) = match field {
                TestField::RadialBump { scale, cutoff, .. } => {
                    let t = rho / scale;
                    let psi = cutoff.value(t);
                    let dpsi = cutoff.derivative(t);
                    let mut dr2 = 0.0;
                    if rho > 0.0 {
                        for c in 0..n {
                            let v: f64 = (0..m).map(|a| off[a] * g[a * n + c]).sum::<f64>() / rho;
                            dr2 += v * v;
                        }
                    }
                    (t * dpsi * dr2 + psi * ns, t * dpsi + m as f64 * psi)
                }
                TestField::CoordinateBump { radius, axis, .. } => {
                    let t2 = rho * rho / (radius * radius);
                    if t2 >= 1.0 {
                        return 0.0;
                    }
                    // d_i X^k = -6 (1 - t^2)^2 (y - c)_i / a^2 on the axis component
                    let w = -6.0 * (1.0 - t2).powi(2) / (radius * radius);
                    for c in 0..n {
                        dir[c] = (0..m).map(|a| off[a] * g[a * n + c]).sum::<f64>();
                    }
                    let contracted = w * dot(&dir, &g[axis * n..(axis + 1) * n]);
                    (contracted, w * off[*axis])
                }
            };
            ns.powf(0.5 * p - 1.0) * (p * contracted - ns * div)
        })
        .collect();
    Ok(ordered_sum(&vals) * domain.cell_volume())
}

/// Lattice used by tests and the CLI for boundary-value problems on the unit ball:
/// the cube of half width `reach` with every node outside `B(0, 1)` fixed.
pub fn unit_ball_problem(
    dim: usize,
    spacing: f64,
    reach: f64,
    target_dim: usize,
    p: f64,
    init: &crate::grid_core::Initializer,
) -> Result<DiscretizedMap> {
    let domain = GridDomain::new(dim, spacing, reach)?;
    let mut map = crate::grid_core::build_map(&domain, target_dim, p, init)?;
    map.fix_outside(1.0);
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy_monitor::make_cutoff;
    use crate::grid_core::{build_map, Initializer};

    fn small_random(p: f64, seed: u64) -> DiscretizedMap {
        let d = GridDomain::new(2, 0.1, 0.6).unwrap();
        build_map(&d, 3, p, &Initializer::Random { seed }).unwrap()
    }

    #[test]
    fn gradient_matches_finite_difference_of_energy() {
        // adjoint stencil against a direct perturbation, including face neighbours
        let map = small_random(2.5, 3);
        let eps = 1e-8;
        let grad = tangent_gradient(&map, eps);
        let d = map.domain();
        let n = map.target_dim();
        let vol = d.cell_volume();
        for &j in &[d.nearest_node(&[0.0, 0.0]).unwrap(), d.nearest_node(&[0.5, -0.5]).unwrap()] {
            // perturb along a tangent direction
            let u = map.value(j).to_vec();
            let mut t = vec![0.3, -0.2, 0.9];
            let c = dot(&t, &u);
            t.iter_mut().zip(&u).for_each(|(ti, ui)| *ti -= c * ui);
            let e = 1e-6;
            let mut plus = map.clone();
            let mut minus = map.clone();
            for c in 0..n {
                plus.values_mut()[j * n + c] += e * t[c];
                minus.values_mut()[j * n + c] -= e * t[c];
            }
            let fd = (lattice_energy(&plus) - lattice_energy(&minus)) / (2.0 * e) / vol;
            let an = dot(&grad[j * n..(j + 1) * n], &t);
            assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "node {j}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn descent_decreases_energy_and_keeps_constraints() {
        for seed in 0..3 {
            let map = small_random(2.0, seed);
            let schedule = DescentSchedule { max_iterations: 40, ..Default::default() };
            let rep = minimize(&map, &schedule).unwrap();
            assert!(rep.final_energy < rep.initial_energy);
            let mut prev = rep.initial_energy;
            for r in &rep.log {
                assert!(r.energy <= prev);
                prev = r.energy;
            }
            assert!(rep.map.max_norm_defect() < 1e-12);
            for (i, f) in map.fixed_mask().iter().enumerate() {
                if *f {
                    assert_eq!(rep.map.value(i), map.value(i));
                }
            }
        }
    }

    #[test]
    fn constant_map_is_a_fixed_point() {
        let d = GridDomain::new(2, 0.1, 0.5).unwrap();
        let map = build_map(&d, 3, 2.0, &Initializer::Constant { value: vec![0.0, 1.0, 0.0] }).unwrap();
        let rep = minimize(&map, &DescentSchedule::default()).unwrap();
        assert_eq!(rep.final_energy, 0.0);
        assert_eq!(rep.map.values(), map.values());
    }

    #[test]
    fn schedule_validation() {
        let bad = DescentSchedule { tolerance: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DescentSchedule { growth: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn laplacian_and_divergence_paths_agree_at_p2() {
        let d = GridDomain::new(3, 0.05, 1.0).unwrap();
        let map = build_map(&d, 3, 2.0, &Initializer::Radial).unwrap();
        let nodes = admissible_nodes(&map, &ResidualOptions { margin: None, shell: Some((0.3, 0.6)) });
        let a = residual_on(&map, nodes.clone(), LhsForm::Laplacian).unwrap();
        let b = residual_on(&map, nodes, LhsForm::Divergence).unwrap();
        for (x, y) in a.lhs.iter().zip(&b.lhs) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn geodesic_satisfies_el_equation() {
        // a constant-speed great circle along x_1 is p-harmonic for every p
        let d = GridDomain::new(2, 0.02, 1.0).unwrap();
        let map = build_map(&d, 2, 1.7, &Initializer::Geodesic { axis: 0, rate: 1.5, phase: 0.2 }).unwrap();
        let rep = el_residual(&map, &ResidualOptions::default()).unwrap();
        let scale = 1.5f64.powf(1.7);
        assert!(rep.max_residual < 1e-3 * scale, "{}", rep.max_residual);
    }

    #[test]
    fn stationarity_defect_vanishes_for_geodesic() {
        let d = GridDomain::new(2, 0.02, 1.0).unwrap();
        let map = build_map(&d, 2, 2.5, &Initializer::Geodesic { axis: 0, rate: 1.0, phase: 0.0 }).unwrap();
        let field = TestField::CoordinateBump { center: vec![0.1, 0.0], radius: 0.5, axis: 0 };
        let scale = crate::grid_core::map_energy(&map, &crate::grid_core::Region::Ball { center: vec![0.1, 0.0], radius: 0.5 }).unwrap();
        assert!(stationarity_defect(&map, &field).unwrap().abs() < 1e-4 * scale);
        let psi = make_cutoff(3.5, 4.0, 0.1).unwrap();
        let field = TestField::RadialBump { center: vec![0.0, 0.0], scale: 0.2, cutoff: psi };
        assert!(stationarity_defect(&map, &field).unwrap().abs() < 1e-3 * scale);
    }

    #[test]
    fn stationarity_defect_rejects_outside_support() {
        let map = small_random(2.0, 1);
        let field = TestField::CoordinateBump { center: vec![0.5, 0.0], radius: 0.5, axis: 0 };
        assert!(stationarity_defect(&map, &field).is_err());
    }
}
