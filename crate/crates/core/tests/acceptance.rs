//! Acceptance run: one PASS/FAIL line per criterion. Tolerances are pinned below.
//!
//! Run with `cargo test --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qstrat::cli_reporting::{detect, RunConfig};
use qstrat::covering_engine::{
    first_covering, minkowski_estimate, second_covering, stratum_covering, stratum_covering_points,
    CoveringParams, CoveringState, ThetaOracle, LAMBDA,
};
use qstrat::energy_monitor::{make_cutoff, CutoffProfile, EnergyMonitor};
use qstrat::grid_core::{blow_up, build_map, DiscretizedMap, GridDomain, Initializer};
use qstrat::jones_reifenberg::{
    beta_bruteforce, beta_eig, reifenberg_check, BallTag, WeightedPointMeasure,
};
use qstrat::linalg::{dist, norm};
use qstrat::minimizer::{el_residual, minimize, DescentSchedule, ResidualOptions};
use qstrat::scenes::{standard_scene, suite, BoundaryKind, SceneKind, Scenario};

// criterion 1
const EL_TOL_COARSE: f64 = 0.10;
const EL_TOL_FINE: f64 = 0.055;
const EL_MIN_RATE: f64 = 0.9;
// criterion 2
const MONO_LADDER: [f64; 5] = [0.04, 0.07, 0.1, 0.14, 0.2];
const MONO_SLACK: f64 = 1e-4;
const MONO_POINTS_PER_MAP: usize = 10;
// criterion 3
const MF_TOL: f64 = 0.05;
const MF_DR: f64 = 0.01;
// criterion 4
const BLOWUP_TOL: f64 = 0.02;
// criterion 5
const BETA_TOL: f64 = 1e-4;
// criterion 6
const FIT_C: f64 = 0.1;
const FIT_R: f64 = 0.05;
const FIT_SIGMA: f64 = 2.0;
const FIT_RBAR: f64 = 1.0;
const FIT_ETA: f64 = 0.5;
// criterion 7
const PLANE_RATIO_TOL: f64 = 1e-10;
const FILL_GROWTH: f64 = 2.0;
// criterion 9: frozen from the first green run; a run may exceed them by 5%.
const PACKING_SLACK: f64 = 1.05;
const FROZEN_SUMS: &[(&str, f64)] = &[
    ("cluster/first", 13.0),
    ("cluster/second", 13.0),
    ("cluster/stratum", 13.0),
    ("planepatch/first", 0.613696),
    ("planepatch/second", 0.019507),
    ("planepatch/stratum", 0.000338),
    ("segment/first", 2.7536),
    ("segment/second", 0.648),
    ("segment/stratum", 0.1872),
    ("cylindrical/map", 12.96),
    ("radial/map", 14.0),
];
// criterion 10
const MINKOWSKI_FLATNESS: f64 = 4.0;

const SPACING: f64 = 0.02;
const REACH: f64 = 1.0;
const ITERATIONS: usize = 60;

struct Verdict {
    pass: bool,
    detail: String,
}

type Check = fn() -> Result<Verdict, String>;

fn schedule() -> DescentSchedule {
    DescentSchedule { max_iterations: ITERATIONS, ..Default::default() }
}

fn psi() -> CutoffProfile {
    make_cutoff(3.5, 4.0, 0.1).expect("default cutoff")
}

fn err(e: qstrat::Error) -> String {
    e.to_string()
}

/// Minimized suite maps, computed once per run.
fn minimized(sc: Scenario) -> Result<Arc<DiscretizedMap>, String> {
    static CACHE: OnceLock<Mutex<BTreeMap<String, Arc<DiscretizedMap>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    let key = sc.name();
    if let Some(m) = cache.lock().unwrap().get(&key) {
        return Ok(m.clone());
    }
    let map = sc.build(3, SPACING, REACH).map_err(err)?;
    let rep = minimize(&map, &schedule()).map_err(err)?;
    let m = Arc::new(rep.map);
    cache.lock().unwrap().insert(key, m.clone());
    Ok(m)
}

fn config(name: &str) -> Result<RunConfig, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    let cfg = RunConfig::from_path(&path).map_err(err)?;
    cfg.validate().map_err(err)?;
    if cfg.grid.spacing != SPACING || cfg.grid.reach != REACH || cfg.descent != schedule() {
        return Err(format!("{name}.toml no longer matches the acceptance lattice"));
    }
    Ok(cfg)
}

fn config_map(cfg: &RunConfig) -> Result<(Arc<DiscretizedMap>, EnergyMonitor), String> {
    let map = minimized(cfg.scenario().map_err(err)?)?;
    let mon = EnergyMonitor::new(&map, cfg.cutoff().map_err(err)?);
    Ok((map, mon))
}

fn ball_point(rng: &mut ChaCha8Rng, radius: f64) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-radius..radius)).collect();
        if norm(&y) < radius {
            return y;
        }
    }
}

fn el_error(p: f64, h: f64) -> Result<f64, String> {
    let domain = GridDomain::new(3, h, 0.8 + 12.0 * h).map_err(err)?;
    let map = build_map(&domain, 3, p, &Initializer::Radial).map_err(err)?;
    let rep = el_residual(&map, &ResidualOptions { margin: None, shell: Some((0.3, 0.8)) }).map_err(err)?;
    let c = 2f64.powf(0.5 * p);
    let mut worst = 0.0f64;
    for (i, &node) in rep.nodes.iter().enumerate() {
        let x = domain.coords(node);
        let r = norm(&x);
        let exact: Vec<f64> = x.iter().map(|v| -c * r.powf(-1.0 - p) * v).collect();
        let scale = norm(&exact);
        for side in [&rep.lhs, &rep.rhs] {
            let d = dist(&side[3 * i..3 * i + 3], &exact);
            worst = worst.max(d / scale);
        }
    }
    Ok(worst)
}

fn c1_euler_lagrange() -> Result<Verdict, String> {
    let mut pass = true;
    let mut parts = vec![];
    for p in [1.5, 2.0, 2.5] {
        let coarse = el_error(p, 0.02)?;
        let fine = el_error(p, 0.01)?;
        let rate = (coarse / fine).log2();
        pass &= coarse <= EL_TOL_COARSE && fine <= EL_TOL_FINE && rate >= EL_MIN_RATE;
        parts.push(format!("p={p}: {coarse:.4}/{fine:.4} rate {rate:.2}"));
    }
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn c2_monotonicity() -> Result<Verdict, String> {
    let psi = psi();
    let mut samples = 0;
    let mut violations = vec![];
    let mut worst = f64::NEG_INFINITY;
    for (s, sc) in suite().into_iter().enumerate() {
        let map = minimized(sc)?;
        let mon = EnergyMonitor::new(&map, psi);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + s as u64);
        for _ in 0..MONO_POINTS_PER_MAP {
            let x = ball_point(&mut rng, 0.18);
            let th: Vec<f64> = MONO_LADDER.iter().map(|&r| mon.theta(&x, r)).collect::<Result<_, _>>().map_err(err)?;
            for w in th.windows(2) {
                let drop = w[0] - w[1];
                worst = worst.max(drop / (1.0 + w[0]));
                if drop > MONO_SLACK * (1.0 + w[0]) {
                    violations.push(format!("{} at {x:.3?}", sc.name()));
                }
            }
            samples += 1;
        }
    }
    Ok(Verdict {
        pass: violations.is_empty() && samples >= 50,
        detail: format!(
            "{samples} samples, worst relative decrease {worst:.2e}, violations {}",
            if violations.is_empty() { "none".into() } else { violations.join(", ") }
        ),
    })
}

fn c3_mf_identity() -> Result<Verdict, String> {
    let psi = psi();
    let points = [[0.0, 0.0, 0.0], [0.05, 0.03, -0.02], [-0.1, 0.04, 0.06], [0.02, -0.12, 0.05]];
    let radii = [0.1, 0.15, 0.2];
    let mut worst = 0.0f64;
    let mut samples = 0;
    for p in [1.5, 2.5] {
        let map = minimized(Scenario { kind: BoundaryKind::Geodesic, p })?;
        let mon = EnergyMonitor::new(&map, psi);
        for x in &points {
            let prof = mon.profile(x, &radii, MF_DR).map_err(err)?;
            for (fd, rhs) in prof.dtheta_dr.iter().zip(&prof.mf_rhs) {
                worst = worst.max((fd - rhs).abs() / rhs.abs());
                samples += 1;
            }
        }
    }
    Ok(Verdict {
        pass: worst <= MF_TOL && samples >= 10,
        detail: format!("{samples} samples, worst relative error {worst:.4}"),
    })
}

fn c4_scale_invariance() -> Result<Verdict, String> {
    let psi = psi();
    let mut worst = 0.0f64;
    let mut samples = 0;
    for (s, sc) in suite().into_iter().enumerate() {
        if sc.kind == BoundaryKind::Constant {
            continue;
        }
        let map = minimized(sc)?;
        let mon = EnergyMonitor::new(&map, psi);
        let mut rng = ChaCha8Rng::seed_from_u64(400 + s as u64);
        for _ in 0..3 {
            let x = ball_point(&mut rng, 0.15);
            let r = rng.gen_range(0.1..0.2);
            let direct = mon.theta(&x, r).map_err(err)?;
            let blown = blow_up(&map, &x, r, psi.t_b() + 0.2).map_err(err)?;
            let scaled = EnergyMonitor::new(&blown, psi).theta(&[0.0; 3], 1.0).map_err(err)?;
            worst = worst.max((scaled - direct).abs() / direct.abs().max(1e-12));
            samples += 1;
        }
    }
    Ok(Verdict {
        pass: worst <= BLOWUP_TOL && samples >= 10,
        detail: format!("{samples} samples, worst relative error {worst:.4}"),
    })
}

fn c5_beta_oracle() -> Result<Verdict, String> {
    let mut worst = 0.0f64;
    let mut bad = vec![];
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = rng.gen_range(1..=6);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| ball_point(&mut rng, 1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let mu = WeightedPointMeasure::new(3, pts, w).map_err(err)?;
        let k = 1 + (seed % 2) as usize;
        let eig = beta_eig(&mu, &[0.0; 3], 1.0, k).map_err(err)?;
        let brute = beta_bruteforce(&mu, &[0.0; 3], 1.0, k).map_err(err)?;
        let d = (eig.beta_sq - brute.beta_sq).abs() / (1.0 + eig.beta_sq);
        worst = worst.max(d);
        if d > BETA_TOL {
            bad.push(seed);
        }
    }
    Ok(Verdict {
        pass: bad.is_empty(),
        detail: format!("50 measures, worst |d beta^2|/(1+beta^2) = {worst:.2e}, failing seeds {bad:?}"),
    })
}

fn c6_beta_pinching() -> Result<Verdict, String> {
    let cfg = config("cylindrical")?;
    let (_, mon) = config_map(&cfg)?;
    let k = cfg.stratum.k;
    let mut ratios = vec![];
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tries = 0;
        let x = loop {
            let x = vec![rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.3..0.3)];
            if mon.invariance_defect(&x, FIT_RBAR * FIT_R, k + 1).map_err(err)?.value >= FIT_ETA {
                break x;
            }
            tries += 1;
            if tries > 1000 {
                return Err(format!("seed {seed}: no center with invariance defect >= {FIT_ETA}"));
            }
        };
        let n = rng.gen_range(6..=16);
        let mut ys = vec![];
        while ys.len() < n {
            let y: Vec<f64> = (0..3).map(|a| x[a] + rng.gen_range(-FIT_R..FIT_R)).collect();
            if dist(&y, &x) < FIT_R {
                ys.push(y);
            }
        }
        let mu = WeightedPointMeasure::unit(3, ys.clone()).map_err(err)?;
        let b = beta_eig(&mu, &x, FIT_R, k).map_err(err)?;
        let mut pinch = 0.0;
        for y in &ys {
            pinch += mon.theta(y, FIT_SIGMA * FIT_R).map_err(err)? - mon.theta(y, FIT_R).map_err(err)?;
        }
        pinch *= FIT_R.powi(-(k as i32));
        ratios.push(if pinch > 0.0 { b.beta_sq / pinch } else { f64::INFINITY });
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(Verdict {
        pass: worst <= FIT_C,
        detail: format!("C_fit = {FIT_C}, worst beta^2 / pinching = {worst:.4} over 10 sets"),
    })
}

fn plane_points(rng: &mut ChaCha8Rng, k: usize, count: usize) -> Vec<Vec<f64>> {
    // random orthonormal k-frame through a point near the origin
    let mut frame: Vec<Vec<f64>> = vec![];
    while frame.len() < k {
        let mut v = ball_point(rng, 1.0);
        for f in &frame {
            let d: f64 = v.iter().zip(f).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(f).for_each(|(a, b)| *a -= d * b);
        }
        let n = norm(&v);
        if n > 0.1 {
            frame.push(v.iter().map(|a| a / n).collect());
        }
    }
    let base = ball_point(rng, 0.05);
    let mut out = vec![];
    while out.len() < count {
        let c: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let y: Vec<f64> = (0..3)
            .map(|a| base[a] + (0..k).map(|j| c[j] * frame[j][a]).sum::<f64>())
            .collect();
        if norm(&y) < 0.95 {
            out.push(y);
        }
    }
    out
}

/// `(k+1)`-dimensional grid of spacing `eps` in `B(0, 0.5)`, weights `eps^k`.
fn filling_measure(k: usize, eps: f64) -> Result<WeightedPointMeasure, String> {
    let n = (0.5 / eps).floor() as i64;
    let mut pts = vec![];
    let mut idx = vec![-n; k + 1];
    loop {
        let mut y = vec![0.0; 3];
        for (a, i) in idx.iter().enumerate() {
            y[a] = *i as f64 * eps;
        }
        if norm(&y) < 0.5 {
            pts.push(y);
        }
        let mut a = 0;
        while a <= k {
            idx[a] += 1;
            if idx[a] <= n {
                break;
            }
            idx[a] = -n;
            a += 1;
        }
        if a > k {
            break;
        }
    }
    let w = vec![eps.powi(k as i32); pts.len()];
    WeightedPointMeasure::new(3, pts, w).map_err(err)
}

fn c7_reifenberg() -> Result<Verdict, String> {
    let mut pass = true;
    let mut parts = vec![];
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut worst_flat = 0.0f64;
    for k in [1usize, 2] {
        for _ in 0..5 {
            let mu = WeightedPointMeasure::unit(3, plane_points(&mut rng, k, 40)).map_err(err)?;
            let rep = reifenberg_check(&mu, k, 0.01, &[0.0; 3], 1.0).map_err(err)?;
            worst_flat = worst_flat.max(rep.worst_ratio);
        }
    }
    pass &= worst_flat <= PLANE_RATIO_TOL;
    parts.push(format!("plane-supported worst ratio {worst_flat:.1e}"));
    for k in [0usize, 1] {
        let mut ratios = vec![];
        for eps in [0.1, 0.05, 0.025, 0.0125] {
            let mu = filling_measure(k, eps)?;
            ratios.push(reifenberg_check(&mu, k, 0.01, &[0.0; 3], 0.5).map_err(err)?.worst_ratio);
        }
        let growth: Vec<f64> = ratios.windows(2).map(|w| w[1] / w[0]).collect();
        pass &= growth.iter().all(|g| *g >= FILL_GROWTH);
        parts.push(format!(
            "k={k} filling growth {}",
            growth.iter().map(|g| format!("{g:.2}")).collect::<Vec<_>>().join("/")
        ));
    }
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn scene_params(kind: SceneKind) -> CoveringParams {
    CoveringParams {
        rho: 0.2,
        radius: 0.0016,
        k: kind.stratum_dim(),
        gamma: 0.5,
        delta: 0.1,
        delta0: 0.1,
        energy_ceiling: 1.0,
        energy_bound: 1.0,
        eta: 0.1,
        bounds: Default::default(),
    }
}

/// Rechecks a finished covering from its public fields only.
fn recheck<O: ThetaOracle + ?Sized>(
    st: &CoveringState,
    points: &[Vec<f64>],
    oracle: &O,
    p: &CoveringParams,
) -> Result<usize, String> {
    let fin: Vec<_> = st.final_balls().map(|(_, b)| b).collect();
    for (i, a) in fin.iter().enumerate() {
        for b in &fin[i + 1..] {
            let d = dist(&a.center, &b.center);
            if d < (a.radius + b.radius) / 5.0 * (1.0 - 1e-12) {
                return Err(format!("balls at {:?} and {:?} overlap after shrinking", a.center, b.center));
            }
        }
        if a.radius < p.radius * (1.0 - 1e-9) {
            return Err(format!("final radius {} below {}", a.radius, p.radius));
        }
        if a.tag == BallTag::W {
            return Err("wild ball left at termination".into());
        }
    }
    if let Some(y) = points.iter().find(|y| !fin.iter().any(|b| dist(&b.center, y) < b.radius)) {
        return Err(format!("point {y:?} is not covered"));
    }
    let mut drops = 0;
    for b in fin.iter().filter(|b| b.tag == BallTag::D) {
        let bound = p.energy_ceiling - (b.round as f64 + 1.0) * p.delta;
        for t in &b.carried {
            let th = oracle.theta(&points[t.point], LAMBDA * b.radius).map_err(err)?;
            if th >= bound {
                return Err(format!("drop ball at {:?}: theta {th} >= {bound}", b.center));
            }
        }
        drops += 1;
    }
    Ok(drops)
}

fn mode_name(i: usize) -> &'static str {
    ["first", "second", "stratum"][i]
}

/// `(label, sum r^k)` of every family of the structural suite.
fn scene_families() -> Result<(Vec<(String, f64)>, usize, usize), String> {
    let mut sums = vec![];
    let mut families = 0;
    let mut drops = 0;
    for kind in SceneKind::all() {
        for seed in 0..10u64 {
            let sc = standard_scene(kind, seed);
            let p = scene_params(kind);
            let first = first_covering(&sc.points, &sc.oracle, &p).map_err(err)?;
            let second = second_covering(&sc.points, &sc.oracle, &p, &first).map_err(err)?;
            let strat = stratum_covering_points(&sc.points, &sc.oracle, &p).map_err(err)?;
            for (i, st) in [&first, &second, &strat].into_iter().enumerate() {
                drops += recheck(st, &sc.points, &sc.oracle, &p)
                    .map_err(|e| format!("{kind:?} seed {seed} {}: {e}", mode_name(i)))?;
                families += 1;
                sums.push((format!("{kind:?}/{}", mode_name(i)).to_lowercase(), st.sum_rk()));
            }
        }
    }
    Ok((sums, families, drops))
}

fn c8_covering_structure() -> Result<Verdict, String> {
    match scene_families() {
        Ok((_, families, drops)) => Ok(Verdict {
            pass: true,
            detail: format!("{families} families rechecked, {drops} drop balls verified"),
        }),
        Err(e) => Ok(Verdict { pass: false, detail: e }),
    }
}

fn map_family(name: &str) -> Result<f64, String> {
    let cfg = config(name)?;
    let (_, mon) = config_map(&cfg)?;
    let q = cfg.query().map_err(err)?;
    let cov = stratum_covering(&mon, &q, &cfg.covering_params(), &cfg.frame()).map_err(err)?;
    Ok(cov.sum_rk)
}

fn c9_packing() -> Result<Verdict, String> {
    let (scene, _, _) = scene_families()?;
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for (label, s) in scene {
        let e = worst.entry(label).or_insert(0.0);
        *e = e.max(s);
    }
    for name in ["cylindrical", "radial"] {
        worst.insert(format!("{name}/map"), map_family(name)?);
    }
    let frozen: BTreeMap<&str, f64> = FROZEN_SUMS.iter().cloned().collect();
    let mut pass = true;
    let mut parts = vec![];
    for (label, s) in &worst {
        match frozen.get(label.as_str()) {
            Some(f) => {
                let ok = *s <= PACKING_SLACK * f;
                pass &= ok;
                if !ok {
                    parts.push(format!("{label} {s:.6} > {f:.6}"));
                }
            }
            None => {
                pass = false;
                parts.push(format!("{label} = {s:.6} has no frozen constant"));
            }
        }
    }
    if pass {
        parts.push(format!("{} families within {PACKING_SLACK} x frozen", worst.len()));
    }
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn c10_minkowski() -> Result<Verdict, String> {
    let mut pass = true;
    let mut parts = vec![];
    for name in ["cylindrical", "radial"] {
        let cfg = config(name)?;
        let (_, mon) = config_map(&cfg)?;
        let set = detect(&mon, &cfg).map_err(err)?;
        let a = &cfg.analysis;
        let rows = minkowski_estimate(&set, 3, cfg.stratum.k, &a.minkowski_radii, a.minkowski_spacing).map_err(err)?;
        let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        let flat = hi / lo;
        pass &= !set.is_empty() && lo > 0.0 && flat <= MINKOWSKI_FLATNESS;
        parts.push(format!("{name}: {} points, flatness {flat:.3}", set.len()));
    }
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn c11_detected_in_stratum() -> Result<Verdict, String> {
    let mut pass = true;
    let mut parts = vec![];
    for name in ["cylindrical", "radial"] {
        let cfg = config(name)?;
        let (_, mon) = config_map(&cfg)?;
        let q = cfg.query().map_err(err)?;
        let set = detect(&mon, &cfg).map_err(err)?;
        let mut members = 0;
        for x in &set {
            if mon.stratum_membership(&q, x).map_err(err)? {
                members += 1;
            }
        }
        pass &= !set.is_empty() && members == set.len();
        parts.push(format!("{name}: {members}/{} members (eta {})", set.len(), cfg.stratum.eta));
    }
    Ok(Verdict { pass, detail: parts.join("; ") })
}

const SMALL_CONFIG: &str = r#"
scenario = "cylindrical"
p = 1.5
seed = 3
output_dir = "unused"

[grid]
dim = 3
target_dim = 2
spacing = 0.04
reach = 1.0
perturbation = 0.01

[cutoff]
t_a = 3.5
t_b = 4.0
xi = 0.1

[descent]
initial_step = 0.05
growth = 1.1
max_step = 1.0
max_iterations = 15
tolerance = 1e-7
max_backtracks = 20
eps_reg = 1e-8

[stratum]
k = 1
eta = 0.5
radius = 0.04
top = 0.1

[covering]
rho = 0.2
radius = 0.04
gamma = 5.0
delta = 5.0
delta0 = 0.1
energy_ceiling = 52.0
energy_bound = 52.0
frame_scale = 0.5
stride = 1
floor_spacings = 0.5

[constants]
eps0 = 18.0
detect_radius = 0.02
c_r = 10.0
delta_r = 0.01
c_i = 40.0
c_ii = 40.0

[analysis]
detect_region = 0.5
detect_stride = 1
theta_points = [[0.0, 0.0, 0.0], [0.2, 0.1, 0.0]]
theta_radii = [0.05, 0.1]
beta_radius = 0.05
beta_sigma = 2.0
beta_rbar = 1.0
audit_radius = 0.02
audit_floor = 0.01
audit_pinching = 30.0
minkowski_radii = [0.2, 0.1]
minkowski_spacing = 0.025
"#;

fn run_all(config: &Path, out: &Path, threads: usize) -> Result<BTreeMap<String, Vec<u8>>, String> {
    for cmd in ["solve", "theta", "strata", "beta", "cover", "audit", "report"] {
        let status = Command::new(env!("CARGO_BIN_EXE_qstrat"))
            .arg(cmd)
            .arg("-c")
            .arg(config)
            .arg("-o")
            .arg(out)
            .arg("--threads")
            .arg(threads.to_string())
            .arg("-q")
            .stderr(Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        let code = status.code().unwrap_or(-1);
        if code != 0 && !(cmd == "solve" && code == 2) {
            return Err(format!("{cmd} exited with {code}"));
        }
    }
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(out).map_err(|e| e.to_string())? {
        let path: PathBuf = entry.map_err(|e| e.to_string())?.path();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), bytes);
    }
    Ok(files)
}

fn c12_determinism() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL_CONFIG).map_err(|e| e.to_string())?;
    let mut reference: Option<BTreeMap<String, Vec<u8>>> = None;
    let mut runs = 0;
    for threads in [1usize, 4] {
        for run in 0..3 {
            let out = dir.path().join(format!("t{threads}-{run}"));
            let files = run_all(&cfg, &out, threads)?;
            runs += 1;
            match &reference {
                None => reference = Some(files),
                Some(r) => {
                    if r.keys().ne(files.keys()) {
                        return Ok(Verdict { pass: false, detail: format!("run {runs}: different file set") });
                    }
                    if let Some(name) = r.keys().find(|k| r[*k] != files[*k]) {
                        return Ok(Verdict {
                            pass: false,
                            detail: format!("{name} differs ({threads} threads, run {run})"),
                        });
                    }
                }
            }
        }
    }
    let n = reference.map_or(0, |r| r.len());
    Ok(Verdict { pass: n > 0, detail: format!("{runs} runs, {n} files byte-identical") })
}

fn main() {
    // libtest-style flags passed by `cargo test` are ignored
    let checks: [(&str, Check); 12] = [
        ("euler-lagrange closed form", c1_euler_lagrange),
        ("monotonicity on the suite", c2_monotonicity),
        ("monotonicity identity", c3_mf_identity),
        ("scale invariance", c4_scale_invariance),
        ("beta oracle equivalence", c5_beta_oracle),
        ("beta vs pinching, uniform constant", c6_beta_pinching),
        ("reifenberg discrimination", c7_reifenberg),
        ("covering structure", c8_covering_structure),
        ("packing regression", c9_packing),
        ("minkowski flatness", c10_minkowski),
        ("detected set inside stratum", c11_detected_in_stratum),
        ("determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let t = Instant::now();
        let v = f().unwrap_or_else(|e| Verdict { pass: false, detail: format!("error: {e}") });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
