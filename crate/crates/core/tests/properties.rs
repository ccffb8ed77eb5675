use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use swarmlead::first_order::{
    metric_first, metric_weight_for, rate_mu, reset_first, tracking_errors_first, FirstOrderGains,
    SwarmStateFirstOrder,
};
use swarmlead::graph::{build_topology, ground, ground_all, GraphModel, TopologySpec};
use swarmlead::harness::verify::{grounding_residuals, interlacing_violation};
use swarmlead::linalg::{kron_apply, kron_identity};
use swarmlead::reference::EstimateField;
use swarmlead::second_order::{check_pl_definite, SecondOrderGains};
use swarmlead::selection::{
    candidate_set, cost_first, handoff_messages, select, Strategy, TieBreak,
};

fn graph(n: usize, p: f64, seed: u64) -> GraphModel {
    build_topology(&TopologySpec::random(n, p, seed)).unwrap()
}

fn state(n: usize, d: usize, k_u: f64, values: &[f64]) -> SwarmStateFirstOrder {
    let nd = n * d;
    let take = |offset: usize| DVector::from_fn(nd, |i, _| values[(offset + i) % values.len()]);
    SwarmStateFirstOrder {
        positions: take(0),
        estimates: EstimateField::new(take(nd), k_u, d),
        formation: take(2 * nd).map(|x| x * 0.3),
    }
}

fn auto_gains(g: &GraphModel) -> FirstOrderGains {
    let lambda = ground_all(g).unwrap().iter().map(|s| s.lambda2()).fold(f64::INFINITY, f64::min);
    FirstOrderGains::new(5.0, 2.5, metric_weight_for(lambda, 5.0, 2.5, 0.05))
}

fn explicit_kron(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n * d, n * d, |r, c| if r % d == c % d { m[(r / d, c / d)] } else { 0.0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grounding_identities_hold(n in 2usize..16, p in 0.2f64..0.9, seed in any::<u64>(), leader in 0usize..16) {
        let g = graph(n, p, seed);
        let s = ground(&g, leader % n).unwrap();
        let r = grounding_residuals(&s).unwrap();
        prop_assert!(r.holds(), "{r:?}");
        prop_assert!(interlacing_violation(&g, &s).unwrap() <= 1e-9);
        prop_assert!(s.reduced_matrix() == &s.reduced_matrix().transpose());
    }

    #[test]
    fn kron_apply_matches_dense_product(n in 1usize..7, d in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let x = DVector::from_fn(n * d, |_, _| rng.random_range(-1.0..1.0));
        let dense = explicit_kron(&m, d);
        prop_assert!((kron_apply(&m, &x, d) - &dense * &x).norm() < 1e-12);
        prop_assert!((kron_identity(&m, d) - dense).norm() < 1e-15);
    }

    #[test]
    fn reset_zeroes_leader_blocks_and_leaves_input_untouched(
        n in 2usize..10, d in 1usize..4, seed in any::<u64>(), leader in 0usize..10,
        values in prop::collection::vec(-3.0f64..3.0, 7..40),
        u in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let g = graph(n, 0.5, seed);
        let gains = auto_gains(&g);
        let leader = leader % n;
        let u_r = &u[..d];
        let before = state(n, d, gains.k_u, &values);
        let copy = before.clone();
        let (after, e) = reset_first(&before, &g, leader, u_r, &gains).unwrap();
        prop_assert_eq!(&before, &copy);
        for v in [&e.formation_error, &e.velocity_error, &e.estimation_error] {
            prop_assert!(v.rows(leader * d, d).iter().all(|&x| x == 0.0));
        }
        prop_assert_eq!(after.estimates.agent(leader), u_r);
        prop_assert_eq!(&after.positions, &before.positions);

        // The masked errors are exactly the errors of the new state under the new leader.
        let s = ground(&g, leader).unwrap();
        let direct = tracking_errors_first(&after, &g, &s, &gains, u_r).unwrap();
        let (a, b) = (metric_first(&e, &gains), metric_first(&direct, &gains));
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn reset_never_increases_the_metric_of_the_same_vectors(
        n in 2usize..10, seed in any::<u64>(), leader in 0usize..10,
        values in prop::collection::vec(-3.0f64..3.0, 7..40),
    ) {
        let d = 2;
        let g = graph(n, 0.5, seed);
        let gains = auto_gains(&g);
        let leader = leader % n;
        let u_r = [0.3, -0.7];
        let st = state(n, d, gains.k_u, &values);
        let (_, masked) = reset_first(&st, &g, leader, &u_r, &gains).unwrap();
        let s = ground(&g, leader).unwrap();
        let unmasked = tracking_errors_first(&st, &g, &s, &gains, &u_r).unwrap();
        // Same anchor, same estimates before clamping; only the masking differs.
        let mut raw = unmasked.clone();
        raw.velocity_error = &unmasked.estimation_error + &unmasked.coupling;
        prop_assert!(metric_first(&masked, &gains) <= metric_first(&raw, &gains) + 1e-12);
    }

    #[test]
    fn cost_evaluation_is_pure_and_global_dominates_local(
        n in 3usize..10, seed in any::<u64>(), current in 0usize..10,
        values in prop::collection::vec(-3.0f64..3.0, 7..40),
    ) {
        let d = 3;
        let g = graph(n, 0.4, seed);
        let gains = auto_gains(&g);
        let spectra = ground_all(&g).unwrap();
        let current = current % n;
        let st = state(n, d, gains.k_u, &values);
        let copy = st.clone();
        let u_r = [0.1, 0.2, -0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cost = |m: usize| cost_first(m, &st, &g, &spectra[m], &gains, &u_r, 0.05);
        let local = select(Strategy::Local, current, &g, TieBreak::LowestIndex, &mut rng, &mut cost).unwrap();
        let global = select(Strategy::Global, current, &g, TieBreak::LowestIndex, &mut rng, &mut cost).unwrap();
        prop_assert_eq!(&st, &copy);
        prop_assert!(candidate_set(&g, Strategy::Local, current).contains(&local.leader));
        let lc = local.table.unwrap().min_cost().unwrap();
        let gc = global.table.unwrap().min_cost().unwrap();
        prop_assert!(gc <= lc);
    }

    #[test]
    fn handoff_message_count(n in 2usize..12, seed in any::<u64>(), old in 0usize..12, pick in 0usize..12) {
        let g = graph(n, 0.4, seed);
        let old = old % n;
        let candidates = candidate_set(&g, Strategy::Local, old);
        let new = candidates[pick % candidates.len()];
        let msgs = handoff_messages(0, &g, old, new, 3, &candidates).unwrap();
        let expected = 2 * g.degree(old) + if new == old { 1 } else { 2 };
        prop_assert_eq!(msgs.len(), expected);
    }

    #[test]
    fn decay_rate_increases_with_connectivity(a in 0.05f64..3.0, b in 0.05f64..3.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        let gains = FirstOrderGains::new(5.0, 2.5, metric_weight_for(lo, 5.0, 2.5, 0.05));
        prop_assert!(rate_mu(lo, &gains).unwrap() < rate_mu(hi, &gains).unwrap());
    }

    #[test]
    fn sufficient_weights_give_a_definite_metric(
        n in 2usize..12, seed in any::<u64>(), k_n1 in 0.1f64..4.0, frac in 0.01f64..0.99, k_n3 in 0.001f64..3.0,
    ) {
        let g = graph(n, 0.4, seed);
        let lambda_n = *g.laplacian_spectrum().unwrap().last().unwrap();
        let gains = SecondOrderGains::unit(0.5, k_n1, frac * k_n1 / lambda_n.sqrt(), k_n3);
        let check = check_pl_definite(&g, &gains).unwrap();
        prop_assert!(check.sufficient_condition);
        prop_assert!(check.definite && check.min_eigenvalue > 0.0);
    }
}
