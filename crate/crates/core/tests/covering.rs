use qstrat::covering_engine::{
    first_covering, second_covering, stratum_covering_points, CoveringParams, CoveringState, ThetaOracle, LAMBDA,
};
use qstrat::jones_reifenberg::BallTag;
use qstrat::scenes::{standard_scene, synthetic_scene, SceneKind};

fn params(k: usize, rho: f64) -> CoveringParams {
    CoveringParams {
        rho,
        radius: 0.0016,
        k,
        gamma: 0.5,
        delta: 0.1,
        delta0: 0.1,
        energy_ceiling: 1.0,
        energy_bound: 1.0,
        eta: 0.1,
        bounds: Default::default(),
    }
}

fn second(kind: SceneKind, seed: u64, outliers: usize, rho: f64) -> CoveringState {
    let sc = synthetic_scene(kind, seed, 120, 1e-5, outliers);
    let p = params(kind.stratum_dim(), rho);
    let first = first_covering(&sc.points, &sc.oracle, &p).unwrap();
    second_covering(&sc.points, &sc.oracle, &p, &first).unwrap()
}

fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(0.0, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (hi - lo) / mean
}

#[test]
fn second_covering_sums_are_seed_stable() {
    for kind in SceneKind::all() {
        let sums: Vec<f64> = (0..10).map(|seed| second(kind, seed, 0, 0.2).sum_rk()).collect();
        assert!(spread(&sums) <= 0.25, "{kind:?}: {sums:?}");
    }
}

#[test]
fn rho_choices_agree_within_factor_two() {
    for seed in 0..3 {
        let coarse = second(SceneKind::Segment, seed, 0, 0.2);
        let fine = second(SceneKind::Segment, seed, 0, 0.04);
        for st in [&coarse, &fine] {
            assert_eq!(st.count(|t| *t == BallTag::W), 0);
        }
        let ratio = coarse.sum_rk() / fine.sum_rk();
        assert!((0.5..=2.0).contains(&ratio), "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn drop_balls_of_the_segment_scene_drop() {
    let sc = standard_scene(SceneKind::Segment, 4);
    let p = params(1, 0.2);
    let first = first_covering(&sc.points, &sc.oracle, &p).unwrap();
    let st = second_covering(&sc.points, &sc.oracle, &p, &first).unwrap();
    let mut checked = 0;
    for (_, b) in st.final_balls().filter(|(_, b)| b.tag == BallTag::D) {
        let w = b.drop_witness.as_ref().expect("drop balls carry a witness");
        let bound = p.energy_ceiling - (b.round as f64 + 1.0) * p.delta;
        assert_eq!(w.bound, bound);
        for t in &b.carried {
            assert!(sc.oracle.theta(&sc.points[t.point], LAMBDA * b.radius).unwrap() < bound);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn constant_oracle_never_drops() {
    let pts = vec![vec![0.3, 0.3, 0.0], vec![0.3001, 0.3, 0.0]];
    let oracle = qstrat::covering_engine::ConstantOracle { dim: 3, value: 1.0 };
    let p = params(1, 0.2);
    let first = first_covering(&pts, &oracle, &p).unwrap();
    let st = second_covering(&pts, &oracle, &p, &first).unwrap();
    assert_eq!(st.count(|t| *t == BallTag::D), 0);
    assert_eq!(st.count(|t| *t == BallTag::W), 0);
    assert!(st.uncovered(&pts).is_empty());
}

#[test]
fn stratum_covering_restarts_drop_balls_one_round_lower() {
    let sc = standard_scene(SceneKind::Segment, 2);
    let p = params(1, 0.2);
    let st = stratum_covering_points(&sc.points, &sc.oracle, &p).unwrap();
    assert!(st.rounds <= p.round_cap());
    for (_, b) in st.final_balls() {
        assert!(b.radius >= p.radius * (1.0 - 1e-9));
        assert_ne!(b.tag, BallTag::W);
    }
    assert!(st.uncovered(&sc.points).is_empty());
}
