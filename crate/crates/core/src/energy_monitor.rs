//! Normalized energy, its radial derivative, invariance defects and strata.
//!
//! The normalized energy of a map at `(x, r)` is
//! `theta(x, r) = r^{p-m} int psi(|y - x| / r) |grad u|^p dy`, with a cutoff `psi` that
//! is linear near the origin and vanishes beyond `t_b`. For stationary maps it is
//! nondecreasing in `r`, with derivative
//! `-p r^{p-m-2} int |y-x| psi'(|y-x|/r) |grad u|^{p-2} |d_r u|^2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_core::{gradient, DiscretizedMap, GradientField, GridDomain};
use crate::linalg::{complete_basis, dot, sym_eigen};

/// C^1 cutoff: `psi(t) = 1 - sigma t` on `[0, t_a]`, a cubic Hermite segment on
/// `[t_a, t_b]` reaching zero with zero slope, and `0` beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    t_a: f64,
    t_b: f64,
    xi: f64,
    /// `psi(t_a)`
    knee: f64,
    /// `-psi'` on `[0, t_a]`
    slope: f64,
}

/// Builds the cutoff for breakpoints `2 < t_a < t_b` and slope floor `xi`.
pub fn make_cutoff(t_a: f64, t_b: f64, xi: f64) -> Result<CutoffProfile> {
    if !(t_a.is_finite() && t_b.is_finite() && xi.is_finite()) {
        return Err(Error::InvalidParameter("cutoff parameters must be finite".into()));
    }
    if t_a <= 2.0 {
        return Err(Error::InvalidParameter(format!(
            "cutoff breakpoint t_a must exceed 2, got {t_a}"
        )));
    }
    if t_b <= t_a {
        return Err(Error::InvalidParameter(format!(
            "cutoff needs t_a < t_b, got t_a = {t_a}, t_b = {t_b}"
        )));
    }
    if xi <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "slope floor xi must be positive, got {xi}"
        )));
    }
    let w = t_b - t_a;
    let floor = w / (3.0 * t_a + w);
    let mut knee = w / (w + 1.5 * t_a);
    let mut slope = (1.0 - knee) / t_a;
    if slope < xi {
        knee = 1.0 - xi * t_a;
        slope = xi;
        if knee <= floor {
            return Err(Error::InvalidParameter(format!(
                "slope floor xi = {xi} is too steep for breakpoints ({t_a}, {t_b}): \
                 a monotone C^1 tail needs 1 - xi t_a > {floor}"
            )));
        }
    }
    Ok(CutoffProfile {
        t_a,
        t_b,
        xi,
        knee,
        slope,
    })
}

impl CutoffProfile {
    pub fn t_a(&self) -> f64 {
        self.t_a
    }

    pub fn t_b(&self) -> f64 {
        self.t_b
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn knee(&self) -> f64 {
        self.knee
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        if t <= self.t_a {
            1.0 - self.slope * t.max(0.0)
        } else if t >= self.t_b {
            0.0
        } else {
            let w = self.t_b - self.t_a;
            let s = (t - self.t_a) / w;
            let h00 = (2.0 * s - 3.0) * s * s + 1.0;
            let h10 = ((s - 2.0) * s + 1.0) * s;
            self.knee * h00 - w * self.slope * h10
        }
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        if t <= self.t_a {
            -self.slope
        } else if t >= self.t_b {
            0.0
        } else {
            let w = self.t_b - self.t_a;
            let s = (t - self.t_a) / w;
            let d00 = 6.0 * s * (s - 1.0);
            let d10 = (3.0 * s - 4.0) * s + 1.0;
            (self.knee * d00 - w * self.slope * d10) / w
        }
    }

    /// Closed form of `Psi(t) = int_0^t tau^alpha psi'(tau) d tau`, `alpha > -1`.
    pub fn weighted_integral(&self, alpha: f64) -> Result<WeightedIntegral> {
        if alpha <= -1.0 {
            return Err(Error::InvalidParameter(format!(
                "weighted cutoff integral diverges for exponent {alpha} <= -1"
            )));
        }
        let w = self.t_b - self.t_a;
        // psi' on the tail, as c2 s^2 + c1 s + c0 in s = (t - t_a)/w
        let c2 = (6.0 * self.knee - 3.0 * w * self.slope) / w;
        let c1 = (-6.0 * self.knee + 4.0 * w * self.slope) / w;
        let c0 = -self.slope;
        // re-expand in powers of t
        let ta = self.t_a;
        let d2 = c2 / (w * w);
        let d1 = -2.0 * ta * c2 / (w * w) + c1 / w;
        let d0 = ta * ta * c2 / (w * w) - ta * c1 / w + c0;
        let mut out = WeightedIntegral {
            alpha,
            profile: *self,
            tail: [d0, d1, d2],
            at_ta: 0.0,
            at_tb: 0.0,
        };
        out.at_ta = -self.slope * ta.powf(alpha + 1.0) / (alpha + 1.0);
        out.at_tb = out.at_ta + out.tail_antiderivative(self.t_b) - out.tail_antiderivative(ta);
        Ok(out)
    }
}

/// `Psi(t) = int_0^t tau^alpha psi'(tau) d tau` for a fixed cutoff and exponent.
#[derive(Debug, Clone, Copy)]
pub struct WeightedIntegral {
    alpha: f64,
    profile: CutoffProfile,
    tail: [f64; 3],
    at_ta: f64,
    at_tb: f64,
}

impl WeightedIntegral {
    fn tail_antiderivative(&self, t: f64) -> f64 {
        let a = self.alpha;
        let [d0, d1, d2] = self.tail;
        d0 * t.powf(a + 1.0) / (a + 1.0)
            + d1 * t.powf(a + 2.0) / (a + 2.0)
            + d2 * t.powf(a + 3.0) / (a + 3.0)
    }

    pub fn value(&self, t: f64) -> f64 {
        let pr = &self.profile;
        if t <= 0.0 {
            0.0
        } else if t <= pr.t_a {
            -pr.slope * t.powf(self.alpha + 1.0) / (self.alpha + 1.0)
        } else if t >= pr.t_b {
            self.at_tb
        } else {
            self.at_ta + self.tail_antiderivative(t) - self.tail_antiderivative(pr.t_a)
        }
    }
}

/// Scale ladder and threshold of a stratum query: `x` belongs to the `k`-th stratum
/// when no ball `B(x, s)` on the ladder is `(eta, k+1)`-invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumQuery {
    pub k: usize,
    pub eta: f64,
    pub scales: Vec<f64>,
}

impl StratumQuery {
    /// Ladder `r, 5r, 25r, ...` capped at `top`.
    pub fn new(k: usize, eta: f64, r: f64, top: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if !(r.is_finite() && r > 0.0 && top >= r) {
            return Err(Error::InvalidParameter(format!(
                "stratum ladder needs 0 < r <= top, got r = {r}, top = {top}"
            )));
        }
        let mut scales = Vec::new();
        let mut s = r;
        while s <= top * (1.0 + 1e-12) {
            scales.push(s);
            s *= 5.0;
        }
        Ok(Self { k, eta, scales })
    }
}

/// `theta` samples along a radius ladder, with a centered difference of `theta`
/// and the monotonicity right-hand side at each radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub theta: Vec<f64>,
    pub dtheta_dr: Vec<f64>,
    pub mf_rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pinching {
    /// `theta(x, r) - theta(x, s)`
    pub direct: f64,
    /// The same difference written as an integral of the radial energy.
    pub radial_form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceDefect {
    /// `r^{p-m} int_{B(x,r)} |grad_L u|^p` at the best plane found.
    pub value: f64,
    /// Orthonormal basis of the minimizing `k`-plane.
    pub frame: Vec<Vec<f64>>,
    /// Value at the spectral seed, before rotations.
    pub seed_value: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchedSets {
    /// Indices into the input points with `theta(y, lambda r) > E - delta`.
    pub high: Vec<usize>,
    /// Indices with `theta(y, r) - theta(y, lambda r) < delta`.
    pub pinched: Vec<usize>,
    /// Whether `theta(y, r) <= E` held for every point in the ball.
    pub ceiling_holds: bool,
}

pub const GIVENS_MAX_SWEEPS: usize = 100;
pub const GIVENS_STALL: f64 = 1e-10;

/// Normalized-energy oracle over a fixed map. The gradient is computed once.
#[derive(Debug, Clone)]
pub struct EnergyMonitor {
    field: GradientField,
    psi: CutoffProfile,
}

impl EnergyMonitor {
    pub fn new(map: &DiscretizedMap, psi: CutoffProfile) -> Self {
        Self {
            field: gradient(map),
            psi,
        }
    }

    pub fn from_field(field: GradientField, psi: CutoffProfile) -> Self {
        Self { field, psi }
    }

    pub fn field(&self) -> &GradientField {
        &self.field
    }

    pub fn domain(&self) -> &GridDomain {
        self.field.domain()
    }

    pub fn cutoff(&self) -> &CutoffProfile {
        &self.psi
    }

    pub fn p(&self) -> f64 {
        self.field.p()
    }

    pub fn dim(&self) -> usize {
        self.field.domain().dim()
    }

    /// Largest radius `r` with `B(x, t_b r)` inside the lattice.
    pub fn max_radius(&self, x: &[f64]) -> f64 {
        self.domain().distance_to_faces(x) / self.psi.t_b
    }

    fn check(&self, x: &[f64], reach: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, domain dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        if !(reach.is_finite() && reach > 0.0) {
            return Err(Error::InvalidParameter(format!("radius must be positive, got {reach}")));
        }
        if !self.domain().contains_ball(x, reach) {
            return Err(Error::NotAdmissible(format!(
                "ball of radius {reach} around {x:?} leaves the lattice (half width {})",
                self.domain().half_width()
            )));
        }
        Ok(())
    }

    pub fn theta(&self, x: &[f64], r: f64) -> Result<f64> {
        self.check(x, self.psi.t_b * r)?;
        let inv_r = 1.0 / r;
        let mut acc = 0.0;
        self.domain().for_each_in_ball(x, self.psi.t_b * r, |i, _, rho| {
            acc += self.psi.value(rho * inv_r) * self.field.density(i);
        });
        Ok(acc * self.domain().cell_volume() * r.powf(self.p() - self.dim() as f64))
    }

    fn radial_density(&self, idx: usize, offset: &[f64], rho: f64) -> f64 {
        // |grad u|^{p-2} |d_r u|^2 with d_r = (offset/rho) . grad
        let n = self.field.target_dim();
        let g = self.field.at(idx);
        let mut dr2 = 0.0;
        for j in 0..n {
            let mut c = 0.0;
            for (a, o) in offset.iter().enumerate() {
                c += o * g[a * n + j];
            }
            dr2 += c * c;
        }
        dr2 /= rho * rho;
        let ns = self.field.norm_sq(idx);
        if ns == 0.0 {
            return 0.0;
        }
        ns.powf(0.5 * self.p() - 1.0) * dr2
    }

    /// Right-hand side of the monotonicity identity at `(x, r)`.
    pub fn mf_rhs(&self, x: &[f64], r: f64) -> Result<f64> {
        self.check(x, self.psi.t_b * r)?;
        let inv_r = 1.0 / r;
        let mut acc = 0.0;
        self.domain().for_each_in_ball(x, self.psi.t_b * r, |i, off, rho| {
            if rho > 0.0 {
                acc += rho * self.psi.derivative(rho * inv_r) * self.radial_density(i, off, rho);
            }
        });
        let p = self.p();
        Ok(-p * r.powf(p - self.dim() as f64 - 2.0) * acc * self.domain().cell_volume())
    }

    /// `theta(x, r) - theta(x, s)` for `s < r`, directly and through the radial-energy
    /// integral `p int [Psi(rho/r) - Psi(rho/s)] rho^{p-m} |grad u|^{p-2} |d_r u|^2`
    /// with `Psi(t) = int_0^t tau^{m-p} psi'(tau)`.
    pub fn pinching(&self, x: &[f64], r: f64, s: f64) -> Result<Pinching> {
        if !(s > 0.0 && s < r) {
            return Err(Error::InvalidParameter(format!(
                "pinching needs 0 < s < r, got s = {s}, r = {r}"
            )));
        }
        let direct = self.theta(x, r)? - self.theta(x, s)?;
        let p = self.p();
        let m = self.dim() as f64;
        let big_psi = self.psi.weighted_integral(m - p)?;
        let mut acc = 0.0;
        self.domain().for_each_in_ball(x, self.psi.t_b * r, |i, off, rho| {
            if rho > 0.0 {
                let w = big_psi.value(rho / r) - big_psi.value(rho / s);
                acc += w * rho.powf(p - m) * self.radial_density(i, off, rho);
            }
        });
        Ok(Pinching {
            direct,
            radial_form: p * acc * self.domain().cell_volume(),
        })
    }

    /// `int_{B(x, radius)} |grad u|^{p-2} |d_r u|^2`; vanishes for maps that are
    /// homogeneous about `x`.
    pub fn radial_energy(&self, x: &[f64], radius: f64) -> Result<f64> {
        self.check(x, radius)?;
        let mut acc = 0.0;
        self.domain().for_each_in_ball(x, radius, |i, off, rho| {
            if rho > 0.0 {
                acc += self.radial_density(i, off, rho);
            }
        });
        Ok(acc * self.domain().cell_volume())
    }

    /// Samples `theta` along `radii`, with a centered difference of step `dr`.
    pub fn profile(&self, x: &[f64], radii: &[f64], dr: f64) -> Result<EnergyProfile> {
        let mut out = EnergyProfile {
            center: x.to_vec(),
            radii: radii.to_vec(),
            theta: Vec::with_capacity(radii.len()),
            dtheta_dr: Vec::with_capacity(radii.len()),
            mf_rhs: Vec::with_capacity(radii.len()),
        };
        for &r in radii {
            if dr <= 0.0 || dr >= r {
                return Err(Error::InvalidParameter(format!(
                    "difference step must lie in (0, r), got {dr} at r = {r}"
                )));
            }
            out.theta.push(self.theta(x, r)?);
            let up = self.theta(x, r + dr)?;
            let down = self.theta(x, r - dr)?;
            out.dtheta_dr.push((up - down) / (2.0 * dr));
            out.mf_rhs.push(self.mf_rhs(x, r)?);
        }
        Ok(out)
    }

    /// `r^{p-m}` times the integral of `|grad_L u|^p` over `B(x, r)`, minimized over
    /// `k`-planes `L`. Seeded by the eigenvectors of `int <d_a u, d_b u>` for the `k`
    /// smallest eigenvalues and refined by Givens sweeps.
    pub fn invariance_defect(&self, x: &[f64], r: f64, k: usize) -> Result<InvarianceDefect> {
        let m = self.dim();
        if k == 0 || k > m {
            return Err(Error::InvalidParameter(format!(
                "invariance plane dimension must be in 1..={m}, got {k}"
            )));
        }
        self.check(x, r)?;
        let n = self.field.target_dim();
        let nodes = self.domain().nodes_in_ball(x, r);
        let grads: Vec<&[f64]> = nodes.iter().map(|&i| self.field.at(i)).collect();
        let mut gram = vec![0.0; m * m];
        for g in &grads {
            for a in 0..m {
                for b in 0..m {
                    gram[a * m + b] += dot(&g[a * n..(a + 1) * n], &g[b * n..(b + 1) * n]);
                }
            }
        }
        let eig = sym_eigen(&gram, m);
        // smallest k eigenvalues first, then the complement
        let mut basis: Vec<Vec<f64>> = (0..m).rev().map(|j| eig.vector(j)).collect();
        basis = complete_basis(&basis, m);
        let scale = r.powf(self.p() - m as f64) * self.domain().cell_volume();
        let objective = PlaneObjective {
            grads: &grads,
            m,
            n,
            half_p: 0.5 * self.p(),
        };
        let seed = objective.eval(&basis[..k]);
        let mut current = seed;
        let mut sweeps = 0;
        if k < m {
            while sweeps < GIVENS_MAX_SWEEPS {
                sweeps += 1;
                let before = current;
                for i in 0..k {
                    for j in k..m {
                        if let Some((phi, val)) = objective.best_rotation(&basis, k, i, j, current) {
                            let (c, s) = (phi.cos(), phi.sin());
                            let qi = basis[i].clone();
                            let qj = basis[j].clone();
                            for a in 0..m {
                                basis[i][a] = c * qi[a] + s * qj[a];
                                basis[j][a] = -s * qi[a] + c * qj[a];
                            }
                            current = val;
                        }
                    }
                }
                if before - current <= GIVENS_STALL * before.max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        Ok(InvarianceDefect {
            value: current * scale,
            frame: basis[..k].to_vec(),
            seed_value: seed * scale,
            sweeps,
        })
    }

    /// Whether `x` belongs to the stratum described by `query`.
    pub fn stratum_membership(&self, query: &StratumQuery, x: &[f64]) -> Result<bool> {
        let m = self.dim();
        if query.k > m {
            return Err(Error::InvalidParameter(format!(
                "stratum index {} exceeds domain dimension {m}",
                query.k
            )));
        }
        if query.k == m {
            return Ok(true);
        }
        for &s in &query.scales {
            if self.invariance_defect(x, s, query.k + 1)?.value < query.eta {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// High-energy set `H` and pinched set `K` of `points` inside `B(x, r)`.
    pub fn pinched_sets(
        &self,
        points: &[Vec<f64>],
        x: &[f64],
        r: f64,
        ceiling: f64,
        delta: f64,
        lambda: f64,
    ) -> Result<PinchedSets> {
        if !(lambda > 0.0 && lambda < 1.0 && delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pinched sets need 0 < lambda < 1 and delta > 0, got lambda = {lambda}, delta = {delta}"
            )));
        }
        let inside: Vec<usize> = (0..points.len())
            .filter(|&i| crate::linalg::dist(&points[i], x) < r)
            .collect();
        let values: Vec<(f64, f64)> = inside
            .par_iter()
            .map(|&i| Ok((self.theta(&points[i], r)?, self.theta(&points[i], lambda * r)?)))
            .collect::<Result<_>>()?;
        let mut out = PinchedSets {
            high: Vec::new(),
            pinched: Vec::new(),
            ceiling_holds: true,
        };
        for (&i, &(big, small)) in inside.iter().zip(&values) {
            if small > ceiling - delta {
                out.high.push(i);
            }
            if big - small < delta {
                out.pinched.push(i);
            }
            if big > ceiling {
                out.ceiling_holds = false;
            }
        }
        if out.ceiling_holds && out.high.iter().any(|i| out.pinched.binary_search(i).is_err()) {
            return Err(Error::Covering(
                "high-energy set escaped the pinched set under the energy ceiling".into(),
            ));
        }
        Ok(out)
    }

    /// Points with `theta(x, r) >= eps0`.
    pub fn detect_singular(&self, points: &[Vec<f64>], eps0: f64, r: f64) -> Result<Vec<Vec<f64>>> {
        let flags: Vec<bool> = points
            .par_iter()
            .map(|x| Ok(self.theta(x, r)? >= eps0))
            .collect::<Result<_>>()?;
        Ok(points
            .iter()
            .zip(flags)
            .filter(|(_, f)| *f)
            .map(|(x, _)| x.clone())
            .collect())
    }

    /// First dyadic radius `r 2^{-i}`, `i >= 1`, not below `floor r`, at which
    /// `theta(x, s) - theta(x, s/2) < eta`.
    pub fn homogeneity_radius(&self, x: &[f64], r: f64, floor: f64, eta: f64) -> Result<Option<f64>> {
        let mut s = 0.5 * r;
        while s >= floor * r {
            if self.theta(x, s)? - self.theta(x, 0.5 * s)? < eta {
                return Ok(Some(s));
            }
            s *= 0.5;
        }
        Ok(None)
    }
}

/// Lattice nodes of `domain` inside `B(center, radius)`, thinned to every `stride`-th
/// node along each axis.
pub fn query_grid(domain: &GridDomain, center: &[f64], radius: f64, stride: usize) -> Vec<Vec<f64>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    domain.for_each_in_ball(center, radius, |i, _, _| {
        let mi = domain.multi_index(i);
        if (0..domain.dim()).all(|a| (mi[a] as i64 - domain.half_nodes() as i64) % stride as i64 == 0) {
            out.push(domain.coords(i));
        }
    });
    out
}

struct PlaneObjective<'a> {
    grads: &'a [&'a [f64]],
    m: usize,
    n: usize,
    half_p: f64,
}

impl PlaneObjective<'_> {
    fn apply(&self, g: &[f64], v: &[f64], out: &mut [f64]) {
        for j in 0..self.n {
            let mut c = 0.0;
            for a in 0..self.m {
                c += v[a] * g[a * self.n + j];
            }
            out[j] = c;
        }
    }

    fn eval(&self, frame: &[Vec<f64>]) -> f64 {
        let mut buf = vec![0.0; self.n];
        let mut acc = 0.0;
        for g in self.grads {
            let mut s = 0.0;
            for v in frame {
                self.apply(g, v, &mut buf);
                s += buf.iter().map(|c| c * c).sum::<f64>();
            }
            acc += s.powf(self.half_p);
        }
        acc
    }

    /// Best angle for rotating basis vector `i` (inside the plane) towards `j`
    /// (outside). Returns `None` when no angle improves on `current`.
    fn best_rotation(
        &self,
        basis: &[Vec<f64>],
        k: usize,
        i: usize,
        j: usize,
        current: f64,
    ) -> Option<(f64, f64)> {
        let mut coeffs = Vec::with_capacity(self.grads.len());
        let mut bi = vec![0.0; self.n];
        let mut bj = vec![0.0; self.n];
        let mut bl = vec![0.0; self.n];
        for g in self.grads {
            let mut rest = 0.0;
            for (l, v) in basis[..k].iter().enumerate() {
                if l != i {
                    self.apply(g, v, &mut bl);
                    rest += bl.iter().map(|c| c * c).sum::<f64>();
                }
            }
            self.apply(g, &basis[i], &mut bi);
            self.apply(g, &basis[j], &mut bj);
            coeffs.push([rest, dot(&bi, &bi), dot(&bi, &bj), dot(&bj, &bj)]);
        }
        let f = |phi: f64| -> f64 {
            let (s, c) = phi.sin_cos();
            coeffs
                .iter()
                .map(|[rest, aa, ab, bb]| {
                    (rest + c * c * aa + 2.0 * s * c * ab + s * s * bb).max(0.0).powf(self.half_p)
                })
                .sum()
        };
        const SCAN: usize = 36;
        let step = std::f64::consts::PI / SCAN as f64;
        let mut best = (0.0, f(0.0));
        for t in 1..SCAN {
            let phi = -0.5 * std::f64::consts::PI + t as f64 * step;
            let v = f(phi);
            if v < best.1 {
                best = (phi, v);
            }
        }
        // golden-section refinement on the bracket around the best scan point
        let (mut lo, mut hi) = (best.0 - step, best.0 + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        while hi - lo > 1e-12 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = f(x2);
            }
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm < best.1 {
            best = (mid, fm);
        }
        if best.1 < current && best.0 != 0.0 {
            Some(best)
        } else {
            None
        }
    }
}
