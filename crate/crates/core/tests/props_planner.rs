mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use beliefnav::navgrid::GridCell;
use beliefnav::planner::{anneal_plan, astar_distance, astar_path, brute_force_plan, plan_cost, AnnealConfig, PlanningInstance};

use common::{dijkstra, BoolGrid};

/// `W = sum_i D_i * P_obs(pi_i)` written out directly.
fn expected_cost(inst: &PlanningInstance, perm: &[usize]) -> f64 {
    let mut d = 0.0;
    let mut w = 0.0;
    let mut prev = 0;
    for &i in perm {
        d += inst.matrix[prev][i + 1];
        w += d * inst.frontiers[i].p_obs;
        prev = i + 1;
    }
    w
}

fn instance(n: usize, seed: u64) -> PlanningInstance {
    PlanningInstance::random_euclidean(n, 20.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn small_grid() -> impl Strategy<Value = BoolGrid> {
    (4i32..12, 4i32..12).prop_flat_map(|(w, h)| {
        proptest::collection::vec(proptest::bool::weighted(0.75), (w * h) as usize)
            .prop_map(move |free| BoolGrid { w, h, free, res: 0.25 })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_cost_matches_definition(n in 1usize..9, seed in any::<u64>()) {
        let inst = instance(n, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let got = plan_cost(&inst, &perm).unwrap();
        prop_assert!((got - expected_cost(&inst, &perm)).abs() < 1e-9);
    }

    #[test]
    fn brute_force_is_a_lower_bound(n in 1usize..7, seed in any::<u64>()) {
        let inst = instance(n, seed);
        let best = brute_force_plan(&inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            prop_assert!(best.cost <= expected_cost(&inst, &perm) + 1e-9);
        }
    }

    #[test]
    fn anneal_returns_a_permutation_no_better_than_optimal(n in 1usize..8, seed in any::<u64>()) {
        let inst = instance(n, seed);
        let cfg = AnnealConfig { rng_seed: seed, ..AnnealConfig::default() };
        let sa = anneal_plan(&inst, &cfg, None).unwrap();
        let mut sorted = sa.permutation.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!((sa.cost - expected_cost(&inst, &sa.permutation)).abs() < 1e-9);
        prop_assert!(sa.cost >= brute_force_plan(&inst).unwrap().cost - 1e-9);
        prop_assert_eq!(anneal_plan(&inst, &cfg, None).unwrap(), sa);
    }

    #[test]
    fn warm_start_never_hurts(n in 2usize..8, seed in any::<u64>()) {
        let inst = instance(n, seed);
        let warm = brute_force_plan(&inst).unwrap();
        let cfg = AnnealConfig { rng_seed: seed, ..AnnealConfig::default() };
        let sa = anneal_plan(&inst, &cfg, Some(&warm.permutation)).unwrap();
        prop_assert!(sa.cost <= warm.cost + 1e-9);
    }

    #[test]
    fn astar_agrees_with_dijkstra(g in small_grid(), picks in proptest::collection::vec((0usize..1000, 0usize..1000), 4)) {
        let free: Vec<(i32, i32)> = (0..g.h).flat_map(|y| (0..g.w).map(move |x| (x, y))).filter(|&(x, y)| g.is_free(x, y)).collect();
        prop_assume!(!free.is_empty());
        for (i, j) in picks {
            let a = free[i % free.len()];
            let b = free[j % free.len()];
            let ca = GridCell::new(a.0, a.1);
            let cb = GridCell::new(b.0, b.1);
            let d = astar_distance(&g, ca, cb).unwrap();
            prop_assert_eq!(d, dijkstra(&g, a, b));
            prop_assert_eq!(d, astar_distance(&g, cb, ca).unwrap());
            if let Some((_, path)) = astar_path(&g, ca, cb).unwrap() {
                prop_assert_eq!(path[0], ca);
                prop_assert_eq!(*path.last().unwrap(), cb);
                for w in path.windows(2) {
                    let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
                    prop_assert!(dx.abs() <= 1 && dy.abs() <= 1 && (dx, dy) != (0, 0));
                    prop_assert!(g.is_free(w[1].x, w[1].y));
                    if dx != 0 && dy != 0 {
                        prop_assert!(g.is_free(w[0].x + dx, w[0].y) && g.is_free(w[0].x, w[0].y + dy));
                    }
                }
            }
        }
    }
}
