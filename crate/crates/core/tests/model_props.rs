use proptest::prelude::*;
use trafficlab::dist::Distribution;
use trafficlab::grammar::{simulate, GrammarSpec, GrammarState};
use trafficlab::jam::{flow_density, jam_growth_rate, road_capacity, CarGeometry, Headway};
use trafficlab::pointfield::{sample_alternating, sample_poisson, sample_stationary_renewal, Window};
use trafficlab::road::{mean_speed_obstacles, mm1_queue_distribution, ObstacleRoadSpec, TandemSpec};
use trafficlab::rng::seeded;
use trafficlab::startup::{simulate_startup_a, simulate_startup_b, simulate_velocity_flow, ThresholdSpec, VelocityFlowSpec};

fn gap_law() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (0.2f64..5.0).prop_map(|r| Distribution::exponential(r).unwrap()),
        (0.1f64..3.0).prop_map(|d| Distribution::deterministic(d).unwrap()),
        (0.0f64..1.0, 0.1f64..2.0).prop_map(|(lo, w)| Distribution::uniform(lo, lo + w).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn configurations_strictly_increasing(
        rho in 0.0f64..5.0,
        g in gap_law(),
        h in gap_law(),
        lo in -50.0f64..50.0,
        len in 0.1f64..60.0,
        seed in any::<u64>(),
    ) {
        let w = Window::new(lo, lo + len).unwrap();
        let mut rng = seeded(seed);
        for c in [
            sample_poisson(rho, w, &mut rng).unwrap(),
            sample_stationary_renewal(&g, w, &mut rng).unwrap(),
            sample_alternating(&g, &h, w, &mut rng).unwrap(),
        ] {
            prop_assert!(c.positions().windows(2).all(|p| p[0] < p[1]));
            prop_assert!(c.positions().iter().all(|x| w.contains(*x)));
        }
        let a = sample_stationary_renewal(&g, w, &mut seeded(seed)).unwrap();
        let b = sample_stationary_renewal(&g, w, &mut seeded(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn grammar_conserves_cars(
        body in proptest::collection::vec(0u8..3, 1..25),
        rates in proptest::collection::vec(0.0f64..2.0, 5),
        seed in any::<u64>(),
    ) {
        let mut word: String = body.iter().map(|d| char::from(b'0' + d)).collect();
        word.push('1');
        let spec = GrammarSpec::new(rates[0], rates[1], rates[2], rates[3], rates[4]).unwrap();
        let init = GrammarState::free(&word, 0).unwrap();
        let c0 = init.counts();
        let times: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let tr = simulate(&init, &spec, 10.0, &times, &mut seeded(seed)).unwrap();
        prop_assert!(tr.events.windows(2).all(|e| e[0].time < e[1].time));
        for snap in &tr.snapshots {
            let st = GrammarState::free(&snap.word, 0).unwrap();
            prop_assert_eq!(st.counts()[1], c0[1]);
            prop_assert_eq!(st.counts()[2], c0[2]);
            prop_assert_ne!(st.symbol(1), 0);
        }
    }

    #[test]
    fn jam_rate_monotone(d in 0.1f64..5.0, d0 in 0.1f64..2.0, extra in 0.1f64..5.0, v in 0.1f64..5.0, bump in 0.01f64..0.5) {
        let rate = |d0: f64, dp: f64| {
            let g = CarGeometry::new(d, d0, Headway::constant(dp), 1).unwrap();
            jam_growth_rate(&g, v).unwrap()
        };
        let dp = d0 + extra;
        let base = rate(d0, dp);
        prop_assert!(base > 0.0);
        prop_assert!(rate(d0 + bump.min(extra / 2.0), dp) > base);
        prop_assert!(rate(d0, dp + bump) < base);
    }

    #[test]
    fn capacity_is_local_max(d in 0.5f64..5.0, d0 in 0.2f64..2.0, k in 0.1f64..2.0, v_hi in 1.0f64..40.0) {
        // headway d0 + k v^2: current v / (d + d0 + k v^2) peaks inside (0, v_hi) or at v_hi
        let points: Vec<(f64, f64)> = (0..=50).map(|j| {
            let u = v_hi * j as f64 / 50.0;
            (u, d0 + k * u * u)
        }).collect();
        let g = CarGeometry::new(d, d0, Headway::Table { points }, 1).unwrap();
        let (cap, v) = road_capacity(&g, 0.0, v_hi).unwrap();
        let step = v_hi / 10_000.0;
        for u in [v - step, v + step] {
            if (0.0..=v_hi).contains(&u) {
                prop_assert!(u * flow_density(&g, u) <= cap + 1e-12);
            }
        }
    }

    #[test]
    fn obstacle_speed_decreasing(lambda in 0.01f64..2.0, mq in 0.1f64..3.0, factor in 1.01f64..2.0) {
        let spec = |lambda: f64, q: Distribution| ObstacleRoadSpec { lambda, q, f: Distribution::Never, v: 1.0 };
        let base = mean_speed_obstacles(&spec(lambda, Distribution::deterministic(mq).unwrap())).unwrap();
        prop_assert!(mean_speed_obstacles(&spec(lambda * factor, Distribution::deterministic(mq).unwrap())).unwrap() < base);
        prop_assert!(mean_speed_obstacles(&spec(lambda, Distribution::deterministic(mq * factor).unwrap())).unwrap() < base);
        // same mean, larger second moment
        let spread = Distribution::uniform(0.0, 2.0 * mq).unwrap();
        prop_assert!(mean_speed_obstacles(&spec(lambda, spread)).unwrap() < base);
    }

    #[test]
    fn mm1_law_sums_to_one(lambda1 in 0.0f64..0.99, mu in 0.5f64..2.0) {
        let spec = TandemSpec { lambda1: lambda1 * mu, lambda2: 0.5, mu, v1: 1.0, v2: 0.0 };
        let law = mm1_queue_distribution(&spec).unwrap();
        prop_assert!((law.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn startup_trajectories_ordered(seed in any::<u64>(), len in 5.0f64..80.0) {
        let tr = simulate_startup_a(0.5, Window::new(-len, 0.0).unwrap(), 1e7, &mut seeded(seed)).unwrap();
        prop_assert!(tr.all_started);
        prop_assert!(tr.free_flow_gaps.iter().all(|g| *g >= 0.0));
        for i in 0..tr.initial_positions.len() {
            let moved = tr.final_start_positions[i] - tr.initial_positions[i];
            prop_assert!(moved >= 0.0);
            prop_assert!(moved <= tr.final_start_times[i] + 1e-9);
        }
    }

    #[test]
    fn threshold_model_gaps_nonnegative(seed in any::<u64>(), d_eff in 0.1f64..3.0) {
        let spec = ThresholdSpec { rho: 1.0, v: 1.0, d_eff, n_cars: 20 };
        let s = simulate_startup_b(&spec, 1e4, &mut seeded(seed)).unwrap();
        for k in 0..20 {
            if s.final_start[k].is_finite() {
                prop_assert!(s.first_start[k] <= s.final_start[k]);
                prop_assert!(s.distance_to_lead[k] >= 0.0);
            }
        }
        prop_assert!(s.distance_to_lead.windows(2).all(|w| !w[1].is_finite() || w[1] >= w[0]));
    }

    #[test]
    fn flow_speeds_within_bounds(seed in any::<u64>(), lambda in prop_oneof![Just(0.0), 0.1f64..5.0, Just(f64::INFINITY)]) {
        let spec = VelocityFlowSpec { n_cars: 8, v_a: 1.0, v_b: 2.0, q_ab: 0.5, q_ba: 0.5, c1: 0.5, c2: 3.0, lambda_overtake: lambda, rho0: 2.0 };
        let times: Vec<f64> = (1..=5).map(|k| 2.0 * k as f64).collect();
        let tr = simulate_velocity_flow(&spec, 10.0, &times, &mut seeded(seed)).unwrap();
        for s in &tr.snapshots {
            prop_assert!(s.velocities.iter().all(|v| *v > spec.c1 && *v < spec.c2));
            prop_assert!(s.contact_speeds_equal());
            if lambda == 0.0 {
                prop_assert_eq!(&s.order, &(0..8).collect::<Vec<_>>());
            }
        }
    }
}

#[test]
fn poisson_window_counts_uncorrelated() {
    let mut rng = seeded(91);
    let w = Window::new(0.0, 3.0).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..10_000 {
        let c = sample_poisson(2.0, w, &mut rng).unwrap();
        a.push(c.count_in(0.0, 1.2) as f64);
        b.push(c.count_in(1.2, 3.0) as f64);
    }
    let r = trafficlab::stats::correlation(&a, &b);
    assert!(r.abs() < 3.0 / 100.0, "corr {r}");
}
