use proptest::prelude::*;
use trafficlab::critical::{
    finite_joint_law, h_of_z, saddle_point_finite, z0_limit, LimitMeasure, LoadProfile,
};
use trafficlab::qnet::{enumerate_states, partition_function};

fn atomic_measure() -> impl Strategy<Value = LimitMeasure> {
    proptest::collection::vec((0.0f64..=1.0, 0.1f64..1.0), 1..5).prop_map(|raw| {
        let total: f64 = raw.iter().map(|a| a.1).sum();
        let mut atoms: Vec<(f64, f64)> = raw.iter().map(|&(r, m)| (r, m / total)).collect();
        // masses must sum to 1 within 1e-12
        let drift = 1.0 - atoms.iter().map(|a| a.1).sum::<f64>();
        atoms[0].1 += drift;
        LimitMeasure::new(atoms, vec![]).unwrap()
    })
}

proptest! {
    #[test]
    fn h_is_monotone(measure in atomic_measure(), a in 0.0f64..0.999, b in 0.0f64..0.999) {
        let (z1, z2) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(z2 - z1 > 1e-9);
        let (h1, h2) = (h_of_z(&measure, z1).unwrap(), h_of_z(&measure, z2).unwrap());
        if measure.is_dirac_zero() {
            prop_assert_eq!(h1, h2);
        } else if measure.atoms.iter().any(|&(r, m)| r > 0.0 && m > 0.0) {
            prop_assert!(h1 < h2, "{} !< {}", h1, h2);
        }
    }

    #[test]
    fn grand_partition_coefficients(
        loads in proptest::collection::vec(0.05f64..1.0, 1..=6),
        m in 0u32..=12,
    ) {
        // coefficients of prod (1 - z r_i)^-1, multiplied out factor by factor
        let mut series = vec![0.0f64; m as usize + 1];
        series[0] = 1.0;
        for &r in &loads {
            let mut next = vec![0.0; series.len()];
            for (k, c) in series.iter().enumerate() {
                for j in 0..series.len() - k {
                    next[k + j] += c * r.powi(j as i32);
                }
            }
            series = next;
        }
        for (k, coeff) in series.iter().enumerate() {
            let z = partition_function(&loads, k as u32).unwrap();
            prop_assert!((z - coeff).abs() <= 1e-12 * coeff.max(1e-300), "m = {}: {} vs {}", k, z, coeff);
        }
    }

    #[test]
    fn joint_law_matches_enumeration(
        loads in proptest::collection::vec(0.1f64..1.0, 2..=4),
        m in 0u32..=8,
        k in 1usize..=2,
    ) {
        let n = loads.len();
        let k = k.min(n - 1);
        let states = enumerate_states(n, m);
        let weight = |s: &[u32]| s.iter().zip(&loads).map(|(a, r)| r.powi(*a as i32)).product::<f64>();
        let z: f64 = states.iter().map(|s| weight(s)).sum();
        let mut seen = std::collections::BTreeMap::<Vec<u32>, f64>::new();
        for s in &states {
            *seen.entry(s[..k].to_vec()).or_default() += weight(s) / z;
        }
        for (head, p) in &seen {
            let lib = finite_joint_law(&loads, m, head).unwrap();
            prop_assert!((lib - p).abs() < 1e-10, "{:?}: {} vs {}", head, lib, p);
        }
    }
}

#[test]
fn saddle_point_approaches_limit() {
    let measure = LimitMeasure::new(vec![(0.5, 0.5), (1.0, 0.5)], vec![]).unwrap();
    let lambda = 1.0 / 3.0;
    let limit = z0_limit(&measure, lambda).unwrap();
    let mut z_err = Vec::new();
    let mut f_err = Vec::new();
    for n in [50usize, 100, 200, 400] {
        let profile = LoadProfile::replicate(&measure, n, lambda).unwrap();
        let z = saddle_point_finite(&profile).unwrap();
        z_err.push((z - limit).abs());
        let free = profile.log_z_exact() / n as f64;
        f_err.push((free - profile.s(z)).abs());
    }
    assert!(z_err.windows(2).all(|w| w[1] <= w[0]) && z_err[3] < z_err[0] / 4.0, "{z_err:?}");
    assert!(f_err.windows(2).all(|w| w[1] < w[0]), "{f_err:?}");
    assert!(f_err[3] < 0.01);
}
