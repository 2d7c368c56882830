//! Covering constructions on finite point samples driven by a normalized-energy
//! oracle, and Minkowski-content estimates.
//!
//! All coverings share one engine. Balls are processed in decreasing radius:
//! the requests produced by refining the balls of one radius are placed before any
//! ball of that radius is analysed, so every live ball is at least as large as the
//! ball being placed. A new ball of radius `R` is centered within `0.6 R` of a
//! point that no live ball contains, which keeps the fifths of all live balls
//! pairwise disjoint.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use crate::energy_monitor::{query_grid, EnergyMonitor, StratumQuery};
use crate::jones_reifenberg::{
    measure_from_balls, packing_bound, reifenberg_check, Ball, BallFamily, BallTag, Disjointness,
};
use crate::linalg::{dist, norm};
use crate::span_geometry::{greedy_span, AffinePlane};
use crate::{Error, Result};

/// Shrink factor of the energy-drop scale.
pub const LAMBDA: f64 = 0.2;

/// A new ball is centered on the guiding plane when the point is this close to it,
/// relative to the ball radius.
const SNAP: f64 = 0.6;

/// Normalized energy `theta(y, s)` in covering coordinates.
pub trait ThetaOracle: Sync {
    fn dim(&self) -> usize;
    fn theta(&self, y: &[f64], s: f64) -> Result<f64>;
}

/// `theta` equal to a constant.
#[derive(Debug, Clone)]
pub struct ConstantOracle {
    pub dim: usize,
    pub value: f64,
}

impl ThetaOracle for ConstantOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn theta(&self, _y: &[f64], _s: f64) -> Result<f64> {
        Ok(self.value)
    }
}

/// Oracle backed by a lattice map. Covering coordinates `y'` correspond to
/// `center + scale * y'`; scales are rescaled the same way and clamped from below
/// at `floor` (in map units), under which the lattice does not resolve `theta`.
pub struct MapOracle<'a> {
    monitor: &'a EnergyMonitor,
    center: Vec<f64>,
    scale: f64,
    floor: f64,
    cache: Mutex<HashMap<(Vec<u64>, u64), f64>>,
}

impl<'a> MapOracle<'a> {
    pub fn new(monitor: &'a EnergyMonitor, center: Vec<f64>, scale: f64, floor: f64) -> Result<Self> {
        if center.len() != monitor.dim() {
            return Err(Error::DimensionMismatch("covering frame center".into()));
        }
        if !(scale > 0.0 && floor >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "covering frame needs scale > 0 and floor >= 0, got {scale}, {floor}"
            )));
        }
        Ok(Self {
            monitor,
            center,
            scale,
            floor,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn to_world(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.center).map(|(a, c)| c + self.scale * a).collect()
    }

    pub fn to_frame(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(a, c)| (a - c) / self.scale).collect()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

impl ThetaOracle for MapOracle<'_> {
    fn dim(&self) -> usize {
        self.monitor.dim()
    }

    fn theta(&self, y: &[f64], s: f64) -> Result<f64> {
        let key = (y.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.to_bits());
        if let Some(v) = self.cache.lock().expect("oracle cache").get(&key) {
            return Ok(*v);
        }
        let x = self.to_world(y);
        let v = self.monitor.theta(&x, (self.scale * s).max(self.floor))?;
        self.cache.lock().expect("oracle cache").insert(key, v);
        Ok(v)
    }
}

/// Constants of the runtime bound checks. None of them are fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoveringBounds {
    /// Packing constant of the first covering.
    pub c_i: f64,
    /// Packing constant of one drop round.
    pub c_ii: f64,
    /// Factor in front of `c_ii` in the stratum bound.
    pub c_round: f64,
    /// Wild balls per good ball, in units of `rho^-(k-1)`.
    pub c_fat: f64,
    pub k1: f64,
    pub k2: f64,
    /// Width, relative to the ball radius, of the fattening that should contain
    /// the sample around the spanned plane in the spanning case.
    pub rho_1: f64,
    /// Reifenberg constant of the post-hoc audit.
    pub delta_r: f64,
}

impl Default for CoveringBounds {
    fn default() -> Self {
        Self {
            c_i: 40.0,
            c_ii: 40.0,
            c_round: 1.0,
            c_fat: 10.0,
            k1: 40.0,
            k2: 10.0,
            rho_1: 0.5,
            delta_r: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringParams {
    /// `5^-kappa`, `kappa >= 1`.
    pub rho: f64,
    /// Target radius; a power of 1/5 not above `rho`.
    pub radius: f64,
    pub k: usize,
    /// Slack of the lower energy bound at ball centers.
    pub gamma: f64,
    /// Energy drop per round.
    pub delta: f64,
    pub delta0: f64,
    /// Energy ceiling `E`.
    pub energy_ceiling: f64,
    /// Global energy bound `Lambda`.
    pub energy_bound: f64,
    pub eta: f64,
    #[serde(default)]
    pub bounds: CoveringBounds,
}

fn power_of_five(x: f64) -> Option<i32> {
    if !(x > 0.0 && x <= 1.0) {
        return None;
    }
    let e = -(x.ln() / 5f64.ln());
    let n = e.round();
    ((e - n).abs() < 1e-9).then_some(n as i32)
}

impl CoveringParams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParameter(format!("covering parameters: {what}")));
        match power_of_five(self.rho) {
            Some(n) if n >= 1 => {}
            _ => return bad(format!("rho = {} is not 5^-kappa with kappa >= 1", self.rho)),
        }
        match power_of_five(self.radius) {
            Some(_) if self.radius <= self.rho * (1.0 + 1e-12) => {}
            _ => {
                return bad(format!(
                    "radius = {} must be a power of 1/5 not above rho = {}",
                    self.radius, self.rho
                ))
            }
        }
        if self.k > dim {
            return bad(format!("k = {} exceeds dimension {dim}", self.k));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("delta0", self.delta0),
            ("eta", self.eta),
            ("energy_bound", self.energy_bound),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.energy_ceiling.is_finite() && self.energy_ceiling <= self.energy_bound) {
            return bad(format!(
                "energy_ceiling = {} must not exceed energy_bound = {}",
                self.energy_ceiling, self.energy_bound
            ));
        }
        Ok(())
    }

    /// `ceil(Lambda / delta) + 1`.
    pub fn round_cap(&self) -> usize {
        (self.energy_bound / self.delta).ceil() as usize + 1
    }

    fn ceiling(&self, round: usize) -> f64 {
        self.energy_ceiling - round as f64 * self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveringMode {
    First,
    Second,
    Stratum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallStatus {
    /// Still to be analysed.
    Pending,
    Final,
    /// Refined into smaller balls.
    Replaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Item,
    Wild,
    Drop,
}

/// Point assigned to a ball, with the drop round it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub point: usize,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropWitness {
    /// Carried point with the largest `theta(y, r/5)`.
    pub point: usize,
    pub theta: f64,
    /// `E - delta` for the ball.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub tag: BallTag,
    pub status: BallStatus,
    pub step: usize,
    pub parent: Option<usize>,
    pub round: usize,
    /// Plane the ball's high-energy set was fitted to (dimension `k - 1` for good
    /// balls, `k` for spanning balls).
    pub plane: Option<AffinePlane>,
    pub carried: Vec<Ticket>,
    /// Points carried by a drop ball that are not part of its drop condition.
    pub passengers: Vec<Ticket>,
    pub drop_witness: Option<DropWitness>,
    kind: Kind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unverifiable,
}

/// Tally of one named runtime check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionSummary {
    pub name: String,
    pub pass: usize,
    pub fail: usize,
    pub unverifiable: usize,
    /// First few failure descriptions.
    pub failures: Vec<String>,
}

const MAX_LOGGED_FAILURES: usize = 20;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AssertionLog {
    entries: BTreeMap<String, AssertionSummary>,
}

impl AssertionLog {
    pub fn record(&mut self, name: &str, verdict: Verdict, detail: impl FnOnce() -> String) {
        let e = self.entries.entry(name.to_string()).or_insert_with(|| AssertionSummary {
            name: name.to_string(),
            pass: 0,
            fail: 0,
            unverifiable: 0,
            failures: Vec::new(),
        });
        match verdict {
            Verdict::Pass => e.pass += 1,
            Verdict::Fail => {
                e.fail += 1;
                if e.failures.len() < MAX_LOGGED_FAILURES {
                    e.failures.push(detail());
                }
            }
            Verdict::Unverifiable => {
                e.unverifiable += 1;
                if e.failures.len() < MAX_LOGGED_FAILURES {
                    e.failures.push(detail());
                }
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&AssertionSummary> {
        self.entries.get(name)
    }

    pub fn summaries(&self) -> impl Iterator<Item = &AssertionSummary> {
        self.entries.values()
    }
}

pub mod checks {
    pub const CENTER_ENERGY: &str = "center_energy_lower_bound";
    pub const GOOD_FATTENING: &str = "good_ball_high_set_in_fattening";
    pub const SPAN_FATTENING: &str = "sample_near_spanned_plane";
    pub const WILD_BUDGET: &str = "wild_balls_per_good_ball";
    pub const FIRST_PACKING: &str = "first_covering_packing";
    pub const SECOND_PACKING: &str = "second_covering_packing";
    pub const WILD_STEP: &str = "wild_mass_per_step";
    pub const STRATUM_PACKING: &str = "stratum_covering_packing";
    pub const REIFENBERG_AUDIT: &str = "center_measure_reifenberg";
}

/// Sums of `r^k` over the final balls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilySums {
    pub good: f64,
    pub e: f64,
    pub drop: f64,
    pub wild: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoveringState {
    pub mode: CoveringMode,
    pub params: CoveringParams,
    pub dim: usize,
    pub point_count: usize,
    /// Every ball ever created, including replaced ones; `parent` indexes here.
    pub balls: Vec<CoveringBall>,
    pub log: AssertionLog,
    pub rounds: usize,
    pub sums: FamilySums,
    /// Worst ratio of the post-hoc Reifenberg audit of the center measure.
    pub reifenberg_worst_ratio: Option<f64>,
}

impl CoveringState {
    pub fn final_balls(&self) -> impl Iterator<Item = (usize, &CoveringBall)> {
        self.balls
            .iter()
            .enumerate()
            .filter(|(_, b)| b.status == BallStatus::Final)
    }

    /// The final balls as a fifth-disjoint family.
    pub fn family(&self) -> BallFamily {
        BallFamily::new(
            self.final_balls()
                .map(|(_, b)| Ball {
                    center: b.center.clone(),
                    radius: b.radius,
                    tag: b.tag,
                })
                .collect(),
            Disjointness::Fifth,
        )
    }

    pub fn sum_rk(&self) -> f64 {
        self.sums.total
    }

    pub fn count(&self, tag: fn(&BallTag) -> bool) -> usize {
        self.final_balls().filter(|(_, b)| tag(&b.tag)).count()
    }

    /// Indices of sample points outside every final ball.
    pub fn uncovered(&self, points: &[Vec<f64>]) -> Vec<usize> {
        let fam = self.family();
        (0..points.len()).filter(|&i| !fam.covers(&points[i])).collect()
    }
}

struct Request {
    ticket: Ticket,
    radius: f64,
    kind: Kind,
    plane: Option<usize>,
    parent: usize,
    step: usize,
}

enum Decision {
    Final(BallTag, Option<AffinePlane>),
    Replace {
        plane: Option<AffinePlane>,
        requests: Vec<Request>,
        wild: usize,
    },
}

struct Engine<'a, O: ThetaOracle + ?Sized> {
    oracle: &'a O,
    points: &'a [Vec<f64>],
    params: &'a CoveringParams,
    mode: CoveringMode,
    balls: Vec<CoveringBall>,
    /// Planes referenced by requests, indexed by the ball that produced them.
    planes: HashMap<usize, AffinePlane>,
    log: AssertionLog,
    max_round: usize,
}

impl<'a, O: ThetaOracle + ?Sized> Engine<'a, O> {
    fn new(oracle: &'a O, points: &'a [Vec<f64>], params: &'a CoveringParams, mode: CoveringMode) -> Result<Self> {
        let m = oracle.dim();
        params.validate(m)?;
        if let Some(i) = points.iter().position(|p| p.len() != m) {
            return Err(Error::DimensionMismatch(format!("sample point {i} is not in R^{m}")));
        }
        if let Some(i) = points.iter().position(|p| !(norm(p) < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "sample point {i} lies outside the open unit ball"
            )));
        }
        Ok(Self {
            oracle,
            points,
            params,
            mode,
            balls: Vec::new(),
            planes: HashMap::new(),
            log: AssertionLog::default(),
            max_round: 0,
        })
    }

    fn is_target(&self, radius: f64) -> bool {
        radius <= self.params.radius * (1.0 + 1e-9)
    }

    fn child_radius(&self, r: f64) -> f64 {
        r.max(self.params.radius)
    }

    /// `theta(y, r/5) < E - delta` for the given round.
    fn drop_holds(&self, point: usize, radius: f64, round: usize) -> Result<(bool, f64)> {
        let t = self.oracle.theta(&self.points[point], LAMBDA * radius)?;
        Ok((t < self.params.ceiling(round) - self.params.delta, t))
    }

    fn run(mut self) -> Result<CoveringState> {
        if self.points.is_empty() {
            return self.finish();
        }
        let m = self.oracle.dim();
        let root = CoveringBall {
            center: vec![0.0; m],
            radius: 1.0,
            tag: BallTag::Generic,
            status: BallStatus::Pending,
            step: 0,
            parent: None,
            round: 0,
            plane: None,
            carried: (0..self.points.len()).map(|point| Ticket { point, round: 0 }).collect(),
            passengers: Vec::new(),
            drop_witness: None,
            kind: Kind::Item,
        };
        self.balls.push(root);
        let mut pending = vec![0usize];
        let mut requests: Vec<Request> = Vec::new();
        loop {
            if !pending.is_empty() {
                self.process(&pending, &mut requests)?;
            }
            if requests.is_empty() {
                break;
            }
            let radius = requests.iter().fold(0.0f64, |a, q| a.max(q.radius));
            let (batch, rest): (Vec<Request>, Vec<Request>) =
                requests.into_iter().partition(|q| q.radius == radius);
            requests = rest;
            pending = self.place(batch)?;
        }
        self.finish()
    }

    fn process(&mut self, pending: &[usize], requests: &mut Vec<Request>) -> Result<()> {
        let decisions: Vec<Decision> = pending
            .par_iter()
            .map(|&b| self.decide(b))
            .collect::<Result<_>>()?;
        for (&b, d) in pending.iter().zip(decisions) {
            match d {
                Decision::Final(tag, plane) => {
                    let ball = &mut self.balls[b];
                    ball.status = BallStatus::Final;
                    ball.tag = tag;
                    if plane.is_some() {
                        ball.plane = plane;
                    }
                }
                Decision::Replace { plane, requests: reqs, wild } => {
                    if let Some(pl) = plane {
                        self.planes.insert(b, pl.clone());
                        self.balls[b].plane = Some(pl);
                    }
                    self.balls[b].status = BallStatus::Replaced;
                    if self.balls[b].kind != Kind::Drop && self.mode != CoveringMode::First {
                        let k = self.params.k;
                        if k >= 1 && wild > 0 {
                            let budget = self.params.bounds.c_fat * self.params.rho.powi(-(k as i32 - 1));
                            let v = if wild as f64 <= budget { Verdict::Pass } else { Verdict::Fail };
                            self.log.record(checks::WILD_BUDGET, v, || {
                                format!("ball {b}: {wild} wild requests, budget {budget}")
                            });
                        }
                    }
                    requests.extend(reqs);
                }
            }
        }
        Ok(())
    }

    fn decide(&self, b: usize) -> Result<Decision> {
        let ball = &self.balls[b];
        let p = self.params;
        if ball.kind == Kind::Drop {
            // drop ball in the stratum covering: restart one round lower at r/5
            let child = self.child_radius(LAMBDA * ball.radius);
            let mut reqs = Vec::new();
            for t in &ball.carried {
                let round = ball.round + 1;
                if round >= p.round_cap() {
                    return Err(Error::Covering(format!(
                        "round cap {} exceeded at ball {b}",
                        p.round_cap()
                    )));
                }
                reqs.push(self.request(Ticket { point: t.point, round }, child, Kind::Item, None, b));
            }
            for t in &ball.passengers {
                reqs.push(self.request(*t, child, Kind::Item, None, b));
            }
            return Ok(Decision::Replace { plane: None, requests: reqs, wild: 0 });
        }
        if self.is_target(ball.radius) {
            return Ok(Decision::Final(BallTag::E, None));
        }
        let round = ball.carried.iter().map(|t| t.round).min().unwrap_or(ball.round);
        let ceiling = p.ceiling(round);
        let r = ball.radius;
        let scale = p.rho * r * LAMBDA;
        let inside: Vec<usize> = (0..self.points.len())
            .filter(|&i| dist(&self.points[i], &ball.center) < r)
            .collect();
        let mut high = Vec::new();
        for &i in &inside {
            if self.oracle.theta(&self.points[i], scale)? > ceiling - p.delta {
                high.push(i);
            }
        }
        let high_pts: Vec<Vec<f64>> = high.iter().map(|&i| self.points[i].clone()).collect();
        let selection = greedy_span(&high_pts, scale, p.k)?;
        let child = self.child_radius(p.rho * r);

        if let Some(sel) = selection.as_ref().filter(|s| s.spans(p.k)) {
            let plane = sel.plane.clone();
            let reqs = ball
                .carried
                .iter()
                .map(|t| self.request(Ticket { point: t.point, round }, child, Kind::Item, Some(b), b))
                .collect();
            return Ok(Decision::Replace { plane: Some(plane), requests: reqs, wild: 0 });
        }

        // high set lies near a (k-1)-plane
        let plane = match (&selection, p.k) {
            (_, 0) => None,
            (Some(sel), k) => Some(sel.plane.with_dim(k - 1)),
            (None, k) => Some(AffinePlane::point(ball.center.clone()).with_dim(k - 1)),
        };
        if self.mode == CoveringMode::First {
            return Ok(Decision::Final(BallTag::G(ball.step), plane));
        }
        let high_set: std::collections::HashSet<usize> = high.iter().copied().collect();
        let mut reqs = Vec::new();
        let mut wild = 0;
        for t in &ball.carried {
            let t = Ticket { point: t.point, round };
            if high_set.contains(&t.point) {
                wild += 1;
                reqs.push(self.request(t, child, Kind::Wild, Some(b), b));
            } else {
                reqs.push(self.request(t, child, Kind::Drop, None, b));
            }
        }
        // wild requests are placed first so that they are centered near the plane
        reqs.sort_by_key(|q| q.kind != Kind::Wild);
        Ok(Decision::Replace { plane, requests: reqs, wild })
    }

    fn request(&self, ticket: Ticket, radius: f64, kind: Kind, plane: Option<usize>, parent: usize) -> Request {
        Request {
            ticket,
            radius,
            kind,
            plane,
            parent,
            step: self.balls[parent].step + 1,
        }
    }

    /// Places one radius worth of requests; returns the new pending balls.
    fn place(&mut self, batch: Vec<Request>) -> Result<Vec<usize>> {
        let first_new = self.balls.len();
        for q in batch {
            let y = &self.points[q.ticket.point];
            let contains = |ball: &CoveringBall| {
                ball.status != BallStatus::Replaced && dist(&ball.center, y) < ball.radius
            };
            // same-kind ball of this placement round
            let mut target: Option<(usize, bool)> = None;
            for i in first_new..self.balls.len() {
                let ball = &self.balls[i];
                if ball.kind != q.kind || !contains(ball) {
                    continue;
                }
                if q.kind == Kind::Drop {
                    let (ok, _) = self.drop_holds(q.ticket.point, ball.radius, ball.round)?;
                    if !ok {
                        continue;
                    }
                }
                target = Some((i, true));
                break;
            }
            if target.is_none() {
                // any pending ball carries it along; a final ball covers it
                let mut covering = None;
                for (i, ball) in self.balls.iter().enumerate() {
                    if !contains(ball) {
                        continue;
                    }
                    if ball.status == BallStatus::Pending {
                        target = Some((i, false));
                        break;
                    }
                    if covering.is_none() {
                        covering = Some(i);
                    }
                }
                if target.is_none() && covering.is_some() {
                    continue;
                }
            }
            match target {
                Some((i, true)) => self.balls[i].carried.push(q.ticket),
                Some((i, false)) => {
                    if self.balls[i].kind == Kind::Drop {
                        self.balls[i].passengers.push(q.ticket);
                    } else {
                        self.balls[i].carried.push(q.ticket);
                    }
                }
                None => self.create(q)?,
            }
        }
        let created: Vec<usize> = (first_new..self.balls.len()).collect();
        for &i in &created {
            self.verify_drop(i)?;
        }
        Ok(created
            .into_iter()
            .filter(|&i| self.balls[i].status == BallStatus::Pending)
            .collect())
    }

    fn create(&mut self, q: Request) -> Result<()> {
        let y = self.points[q.ticket.point].clone();
        let r = q.radius;
        let mut kind = q.kind;
        if kind == Kind::Drop && !self.drop_holds(q.ticket.point, r, q.ticket.round)?.0 {
            kind = Kind::Wild;
        }
        let center = match q.plane.and_then(|b| self.planes.get(&b)) {
            Some(pl) if pl.dist(&y) <= SNAP * r => pl.project(&y),
            _ => y,
        };
        for (i, other) in self.balls.iter().enumerate() {
            if other.status == BallStatus::Replaced {
                continue;
            }
            let d = dist(&other.center, &center);
            let need = (other.radius + r) / 5.0;
            if d < need * (1.0 - 1e-12) {
                return Err(Error::Overlap {
                    first: i,
                    second: self.balls.len(),
                    distance: d,
                    required: need,
                });
            }
        }
        let status = match kind {
            Kind::Drop if self.mode != CoveringMode::Stratum || self.is_target(r) => BallStatus::Final,
            _ => BallStatus::Pending,
        };
        let tag = match kind {
            Kind::Drop => BallTag::D,
            Kind::Wild => BallTag::W,
            Kind::Item => BallTag::Generic,
        };
        self.max_round = self.max_round.max(q.ticket.round);
        self.balls.push(CoveringBall {
            center,
            radius: r,
            tag,
            status,
            step: q.step,
            parent: Some(q.parent),
            round: q.ticket.round,
            plane: None,
            carried: vec![q.ticket],
            passengers: Vec::new(),
            drop_witness: None,
            kind,
        });
        Ok(())
    }

    /// Rechecks the drop condition of a drop ball on every carried point.
    fn verify_drop(&mut self, i: usize) -> Result<()> {
        if self.balls[i].kind != Kind::Drop {
            return Ok(());
        }
        let (radius, round) = (self.balls[i].radius, self.balls[i].round);
        let mut witness: Option<DropWitness> = None;
        let bound = self.params.ceiling(round) - self.params.delta;
        for t in self.balls[i].carried.clone() {
            let (ok, theta) = self.drop_holds(t.point, radius, round)?;
            if !ok {
                return Err(Error::Covering(format!(
                    "drop ball {i} (radius {radius}): theta(y_{}, r/5) = {theta} >= {bound}",
                    t.point
                )));
            }
            if witness.as_ref().map_or(true, |w| theta > w.theta) {
                witness = Some(DropWitness { point: t.point, theta, bound });
            }
        }
        self.balls[i].drop_witness = witness;
        Ok(())
    }

    fn finish(mut self) -> Result<CoveringState> {
        let p = self.params;
        let k = p.k;
        // final geometry checks
        let fam = BallFamily::new(
            self.balls
                .iter()
                .filter(|b| b.status == BallStatus::Final)
                .map(|b| Ball { center: b.center.clone(), radius: b.radius, tag: b.tag })
                .collect(),
            Disjointness::Fifth,
        );
        fam.check_disjointness()?;
        if let Some(i) = (0..self.points.len()).find(|&i| !fam.covers(&self.points[i])) {
            return Err(Error::Covering(format!("sample point {i} is not covered")));
        }
        if let Some((i, _)) = self
            .balls
            .iter()
            .enumerate()
            .find(|(_, b)| b.status == BallStatus::Pending || (b.status == BallStatus::Final && b.tag == BallTag::W))
        {
            return Err(Error::Covering(format!("wild or pending ball {i} left at termination")));
        }
        if let Some((i, _)) = self
            .balls
            .iter()
            .enumerate()
            .find(|(_, b)| b.status == BallStatus::Final && b.radius < p.radius * (1.0 - 1e-9))
        {
            return Err(Error::Covering(format!("final ball {i} is smaller than the target radius")));
        }
        for i in 0..self.balls.len() {
            if self.balls[i].status == BallStatus::Final {
                self.verify_drop(i)?;
            }
        }

        // lower energy bound at the centers of non-drop balls
        let probes: Vec<(usize, Vec<f64>, f64, f64)> = self
            .balls
            .iter()
            .enumerate()
            .filter(|(_, b)| b.parent.is_some() && b.kind != Kind::Drop)
            .map(|(i, b)| (i, b.center.clone(), b.radius, p.ceiling(b.round)))
            .collect();
        let values: Vec<Result<f64>> = probes
            .par_iter()
            .map(|(_, c, r, _)| self.oracle.theta(c, LAMBDA * r))
            .collect();
        for ((i, _, _, e), v) in probes.iter().zip(values) {
            match v {
                Ok(t) => {
                    let verdict = if t > e - p.gamma { Verdict::Pass } else { Verdict::Fail };
                    self.log.record(checks::CENTER_ENERGY, verdict, || {
                        format!("ball {i}: theta = {t}, needs > {}", e - p.gamma)
                    });
                }
                Err(err) => self.log.record(checks::CENTER_ENERGY, Verdict::Unverifiable, || {
                    format!("ball {i}: {err}")
                }),
            }
        }
        self.audit_planes();

        let mut sums = FamilySums::default();
        for b in self.balls.iter().filter(|b| b.status == BallStatus::Final) {
            let w = b.radius.powi(k as i32);
            match b.tag {
                BallTag::G(_) => sums.good += w,
                BallTag::E => sums.e += w,
                BallTag::D => sums.drop += w,
                BallTag::W => sums.wild += w,
                BallTag::Generic => {}
            }
            sums.total += w;
        }
        debug_assert!((sums.total - packing_bound(&fam, k)).abs() <= 1e-12 * sums.total.max(1.0));
        let b = &p.bounds;
        match self.mode {
            CoveringMode::First => {
                let v = if sums.total <= b.c_i { Verdict::Pass } else { Verdict::Fail };
                self.log.record(checks::FIRST_PACKING, v, || format!("sum r^k = {} > C_I = {}", sums.total, b.c_i));
            }
            CoveringMode::Second => {
                let steps = self.balls.iter().map(|b| b.step).max().unwrap_or(0);
                let geo: f64 = (0..=steps).map(|j| (b.k2 * p.rho).powi(j as i32)).sum();
                let bound = b.k1 * geo;
                let ed = sums.e + sums.drop;
                let v = if ed <= bound { Verdict::Pass } else { Verdict::Fail };
                self.log.record(checks::SECOND_PACKING, v, || format!("sum over E and D = {ed} > {bound}"));
                let mut per_step: BTreeMap<usize, f64> = BTreeMap::new();
                for ball in self.balls.iter().filter(|b| b.kind == Kind::Wild) {
                    *per_step.entry(ball.step).or_default() += ball.radius.powi(k as i32);
                }
                for (h, s) in per_step {
                    let bound = (b.k2 * p.rho).powi(h as i32);
                    let v = if s <= bound { Verdict::Pass } else { Verdict::Fail };
                    self.log.record(checks::WILD_STEP, v, || format!("step {h}: wild sum {s} > {bound}"));
                }
            }
            CoveringMode::Stratum => {
                let bound = (b.c_round * b.c_ii).powi((p.energy_bound / p.delta).ceil() as i32);
                let v = if sums.total <= bound { Verdict::Pass } else { Verdict::Fail };
                self.log.record(checks::STRATUM_PACKING, v, || format!("sum r^k = {} > {bound}", sums.total));
            }
        }
        let reifenberg_worst_ratio = if fam.is_empty() {
            None
        } else {
            let mu = measure_from_balls(&fam, self.oracle.dim(), k)?;
            let reach = fam.balls.iter().fold(0.0f64, |a, b| a.max(norm(&b.center)));
            let rep = reifenberg_check(&mu, k, b.delta_r, &vec![0.0; self.oracle.dim()], reach.max(p.radius))?;
            let v = if rep.pass { Verdict::Pass } else { Verdict::Fail };
            self.log.record(checks::REIFENBERG_AUDIT, v, || format!("worst ratio {}", rep.worst_ratio));
            Some(rep.worst_ratio)
        };

        Ok(CoveringState {
            mode: self.mode,
            params: p.clone(),
            dim: self.oracle.dim(),
            point_count: self.points.len(),
            balls: self.balls,
            log: self.log,
            rounds: self.max_round,
            sums,
            reifenberg_worst_ratio,
        })
    }

    /// Plane checks for every analysed ball: good balls keep their high set in
    /// the fattening of their plane, spanning balls keep the sample near theirs.
    fn audit_planes(&mut self) {
        let p = self.params;
        let mut records = Vec::new();
        for (i, b) in self.balls.iter().enumerate() {
            if b.kind == Kind::Drop || self.is_target(b.radius) || b.status == BallStatus::Pending {
                continue;
            }
            let inside: Vec<usize> = (0..self.points.len())
                .filter(|&j| dist(&self.points[j], &b.center) < b.radius)
                .collect();
            let spanning = self.planes.contains_key(&i) && b.plane.as_ref().map_or(false, |pl| pl.dim() == p.k);
            let Some(plane) = b.plane.as_ref() else {
                continue;
            };
            if spanning {
                let width = p.bounds.rho_1 * b.radius;
                let worst = inside.iter().fold(0.0f64, |a, &j| a.max(plane.dist(&self.points[j])));
                let v = if worst <= width { Verdict::Pass } else { Verdict::Fail };
                records.push((checks::SPAN_FATTENING, v, format!("ball {i}: distance {worst} > {width}")));
            } else {
                let scale = p.rho * b.radius * LAMBDA;
                let round = b.carried.iter().map(|t| t.round).min().unwrap_or(b.round);
                let mut worst: f64 = 0.0;
                let mut unverifiable = false;
                for &j in &inside {
                    match self.oracle.theta(&self.points[j], scale) {
                        Ok(t) if t > p.ceiling(round) - p.delta => {
                            worst = worst.max(plane.dist(&self.points[j]));
                        }
                        Ok(_) => {}
                        Err(_) => unverifiable = true,
                    }
                }
                let v = if unverifiable {
                    Verdict::Unverifiable
                } else if worst <= scale * (1.0 + 1e-12) {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                };
                records.push((checks::GOOD_FATTENING, v, format!("ball {i}: distance {worst} > {scale}")));
            }
        }
        for (name, v, msg) in records {
            self.log.record(name, v, || msg);
        }
    }
}

/// First covering: balls whose high-energy set spans a `k`-plane are refined
/// by a factor `rho`; the others are kept as good balls.
pub fn first_covering<O: ThetaOracle + ?Sized>(
    points: &[Vec<f64>],
    oracle: &O,
    params: &CoveringParams,
) -> Result<CoveringState> {
    Engine::new(oracle, points, params, CoveringMode::First)?.run()
}

/// Second covering: every good ball of the first covering is split into wild
/// balls around its high-energy set, refined further, and drop balls.
///
/// Refinement restarts from the unit ball so that all balls of one radius are
/// placed together; `first` must come from the same sample and parameters.
pub fn second_covering<O: ThetaOracle + ?Sized>(
    points: &[Vec<f64>],
    oracle: &O,
    params: &CoveringParams,
    first: &CoveringState,
) -> Result<CoveringState> {
    if first.mode != CoveringMode::First || first.point_count != points.len() || &first.params != params {
        return Err(Error::Covering(
            "second covering needs the first covering of the same sample and parameters".into(),
        ));
    }
    Engine::new(oracle, points, params, CoveringMode::Second)?.run()
}

/// Covering in which drop balls restart one energy round lower at a fifth of
/// their radius, until only balls of the target radius remain.
pub fn stratum_covering_points<O: ThetaOracle + ?Sized>(
    points: &[Vec<f64>],
    oracle: &O,
    params: &CoveringParams,
) -> Result<CoveringState> {
    Engine::new(oracle, points, params, CoveringMode::Stratum)?.run()
}

/// Where the stratum sample is taken and how covering coordinates map to the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringFrame {
    pub center: Vec<f64>,
    /// Lattice length of one covering unit.
    pub scale: f64,
    /// Query grid stride in lattice nodes.
    pub stride: usize,
    /// Smallest scale, in lattice spacings, at which `theta` is evaluated.
    pub floor_spacings: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumCovering {
    /// Stratum sample in lattice coordinates.
    pub sample: Vec<Vec<f64>>,
    /// Same points in covering coordinates.
    pub sample_frame: Vec<Vec<f64>>,
    pub state: CoveringState,
    /// Final balls in lattice coordinates.
    pub family: BallFamily,
    pub sum_rk: f64,
}

/// `max theta(y, 1)` over the sample, the default energy bound.
pub fn sample_energy_bound<O: ThetaOracle + ?Sized>(oracle: &O, points: &[Vec<f64>]) -> Result<f64> {
    let vals: Vec<f64> = points
        .par_iter()
        .map(|y| oracle.theta(y, 1.0))
        .collect::<Result<_>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Nodes of the query grid in the covering ball that belong to the stratum.
pub fn stratum_sample(monitor: &EnergyMonitor, query: &StratumQuery, frame: &CoveringFrame) -> Result<Vec<Vec<f64>>> {
    let grid = query_grid(monitor.domain(), &frame.center, frame.scale, frame.stride);
    let grid: Vec<Vec<f64>> = grid
        .into_iter()
        .filter(|x| dist(x, &frame.center) < frame.scale * (1.0 - 1e-12))
        .collect();
    let flags: Vec<bool> = grid
        .par_iter()
        .map(|x| monitor.stratum_membership(query, x))
        .collect::<Result<_>>()?;
    Ok(grid.into_iter().zip(flags).filter(|(_, f)| *f).map(|(x, _)| x).collect())
}

/// Stratum sample of a map followed by the drop-round covering of it.
pub fn stratum_covering(
    monitor: &EnergyMonitor,
    query: &StratumQuery,
    params: &CoveringParams,
    frame: &CoveringFrame,
) -> Result<StratumCovering> {
    let sample = stratum_sample(monitor, query, frame)?;
    let floor = frame.floor_spacings * monitor.domain().spacing();
    let oracle = MapOracle::new(monitor, frame.center.clone(), frame.scale, floor)?;
    let sample_frame: Vec<Vec<f64>> = sample.iter().map(|x| oracle.to_frame(x)).collect();
    let state = stratum_covering_points(&sample_frame, &oracle, params)?;
    let family = BallFamily::new(
        state
            .final_balls()
            .map(|(_, b)| Ball {
                center: oracle.to_world(&b.center),
                radius: b.radius * frame.scale,
                tag: b.tag,
            })
            .collect(),
        Disjointness::Fifth,
    );
    let sum_rk = state.sum_rk();
    Ok(StratumCovering { sample, sample_frame, state, family, sum_rk })
}

/// One row of a Minkowski table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinkowskiRow {
    pub radius: f64,
    pub volume: f64,
    /// `volume / r^(m-k)`.
    pub ratio: f64,
}

/// `Vol(B_r(S) ∩ B(0,1))` by counting cells of a lattice of spacing `spacing`
/// on `[-1, 1]^m` whose centers lie within `r` of `S` and inside the unit ball.
pub fn minkowski_estimate(
    set: &[Vec<f64>],
    dim: usize,
    k: usize,
    radii: &[f64],
    spacing: f64,
) -> Result<Vec<MinkowskiRow>> {
    if !(spacing > 0.0) || dim == 0 || k > dim {
        return Err(Error::InvalidParameter(format!(
            "minkowski estimate needs spacing > 0 and k <= m, got {spacing}, {k}, {dim}"
        )));
    }
    if let Some(r) = radii.iter().find(|&&r| r < 2.0 * spacing * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "radius {r} is below twice the counting spacing {spacing}"
        )));
    }
    if set.iter().any(|y| y.len() != dim) {
        return Err(Error::DimensionMismatch("set points".into()));
    }
    let n = (2.0 / spacing).round() as usize;
    let cell_center = |i: usize| -1.0 + (i as f64 + 0.5) * spacing;
    let total = n.pow(dim as u32);
    let vol = spacing.powi(dim as i32);
    radii
        .iter()
        .map(|&r| {
            let mut marked = vec![false; total];
            for y in set {
                let lo: Vec<usize> = y
                    .iter()
                    .map(|v| (((v - r + 1.0) / spacing).floor().max(0.0)) as usize)
                    .collect();
                let hi: Vec<usize> = y
                    .iter()
                    .map(|v| ((((v + r + 1.0) / spacing).ceil()) as usize).min(n))
                    .collect();
                let mut idx = lo.clone();
                'cells: loop {
                    let mut d2 = 0.0;
                    let mut c2 = 0.0;
                    let mut flat = 0;
                    for a in 0..dim {
                        let c = cell_center(idx[a]);
                        d2 += (c - y[a]) * (c - y[a]);
                        c2 += c * c;
                        flat = flat * n + idx[a];
                    }
                    if d2 <= r * r && c2 < 1.0 {
                        marked[flat] = true;
                    }
                    for a in (0..dim).rev() {
                        idx[a] += 1;
                        if idx[a] < hi[a] {
                            continue 'cells;
                        }
                        idx[a] = lo[a];
                    }
                    break;
                }
            }
            let volume = marked.iter().filter(|&&m| m).count() as f64 * vol;
            Ok(MinkowskiRow {
                radius: r,
                volume,
                ratio: volume / r.powi((dim - k) as i32),
            })
        })
        .collect()
}
