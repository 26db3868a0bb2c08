use proptest::prelude::*;
use voter_core::analysis::tv_distance;
use voter_core::meeting::{identity_check, meeting_moments_dense, meeting_tail};
use voter_core::rng::stream;
use voter_core::stats::ks_two_sample;
use voter_core::voter::{EventMode, VoterModel};
use voter_core::{zoo, Kernel, PairLaw};

/// A directed cycle (irreducible by construction) plus random extra rates.
fn random_kernel() -> impl Strategy<Value = Kernel> {
    (3usize..8)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(0.1f64..3.0, n),
                proptest::collection::vec((0..n, 0..n, 0.05f64..2.0), 0..2 * n),
            )
        })
        .prop_map(|(n, ring, extra)| {
            let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|x| (x, (x + 1) % n, ring[x])).collect();
            entries.extend(extra.into_iter().filter(|(x, y, _)| x != y));
            Kernel::from_rates(n, &entries).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stationary_law_balances(k in random_kernel()) {
        prop_assert!((k.pi().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(k.pi().iter().all(|&p| p > 0.0));
        prop_assert!(k.balance_residual() < 1e-10);
    }

    #[test]
    fn text_round_trip(k in random_kernel()) {
        let back = Kernel::from_text(&k.to_text()).unwrap();
        prop_assert_eq!(back.entries(), k.entries());
        prop_assert_eq!(back.pi(), k.pi());
    }

    #[test]
    fn meeting_identities_hold(k in random_kernel()) {
        let sol = meeting_moments_dense(&k).unwrap();
        let id = identity_check(&k, &sol);
        prop_assert!(id.mvv_residual < 1e-8);
        prop_assert!(id.muu_residual < 1e-8);
        prop_assert!(id.lower_bound_ok);
        prop_assert!(sol.mvv_second >= sol.mvv_mean * sol.mvv_mean * (1.0 - 1e-10));
    }

    #[test]
    fn tails_are_nonincreasing(k in random_kernel()) {
        let times: Vec<f64> = (0..12).map(|i| 0.25 * i as f64).collect();
        for law in [PairLaw::Product, PairLaw::Edge] {
            let tail = meeting_tail(&k, law, &times).unwrap();
            prop_assert!(tail.iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p)));
            prop_assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn tv_distance_is_nonincreasing(k in random_kernel()) {
        let d: Vec<f64> = (0..8).map(|i| tv_distance(&k, 0.3 * i as f64).unwrap()).collect();
        prop_assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }
}

#[test]
fn event_modes_share_the_density_law() {
    let kernel = zoo::random_regular_perm(16, 4, 2).unwrap().0;
    let grid = [0.5, 1.0];
    let sample = |mode: EventMode| -> Vec<Vec<f64>> {
        let model = VoterModel::new(&kernel, mode);
        let mut out = vec![Vec::new(); grid.len()];
        for i in 0..1500 {
            let mut rng = stream(77, &format!("{mode:?}"), i);
            let t = model.run(0.5, 4.0, 1.0, &grid, &mut rng).unwrap();
            for (slot, s) in out.iter_mut().zip(&t.samples) {
                slot.push(s.p1);
            }
        }
        out
    };
    let plain = sample(EventMode::Plain);
    let discordant = sample(EventMode::Discordant);
    for (a, b) in plain.iter().zip(&discordant) {
        let ks = ks_two_sample(a, b).unwrap();
        assert!(ks.passes_01(), "KS {} on effective size {}", ks.statistic, ks.effective_size);
    }
}
