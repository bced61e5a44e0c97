use pole_core::consensus::pow::{sample_trials, success_probability, target_from_probability};
use pole_core::experiments::{ExperimentReport, Summary};
use pole_core::hash::Hash256;
use pole_core::ledger::{merkle_root, ommer_reward, ommer_reward_units, referral_bonus_units};
use pole_core::nn::{argmax, softmax};
use pole_core::rng;
use pole_core::sml::generate_sml;
use pole_core::time::SimTime;
use proptest::prelude::*;

proptest! {
    #[test]
    fn summary_bounds(xs in prop::collection::vec(0.0f64..1e4, 1..60)) {
        let s = Summary::from_series(&xs);
        prop_assert_eq!(s.count, xs.len());
        prop_assert!(s.min <= s.mean + 1e-9 && s.mean <= s.max + 1e-9);
        prop_assert!(s.variance >= 0.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 17.0).collect();
        let t = Summary::from_series(&shifted);
        prop_assert!((t.variance - s.variance).abs() <= 1e-6 * s.variance.max(1.0));
    }

    #[test]
    fn reports_stay_consistent(a in prop::collection::vec(0.1f64..10.0, 1..30),
                               b in prop::collection::vec(0.1f64..10.0, 1..30)) {
        let mut r = ExperimentReport::new("p");
        r.add_block_times("a", a);
        r.add_block_times("b", b.clone());
        r.add_block_times("a", b);
        prop_assert!(r.is_consistent());
    }

    #[test]
    fn merkle_root_commits_to_every_leaf(
        leaves in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..16), 1..20),
        pick in any::<prop::sample::Index>(),
    ) {
        let root = merkle_root(&leaves).unwrap();
        prop_assert_eq!(root, merkle_root(&leaves).unwrap());
        let mut changed = leaves.clone();
        let i = pick.index(changed.len());
        changed[i].push(0xAA);
        prop_assert_ne!(root, merkle_root(&changed).unwrap());
    }

    #[test]
    fn ommer_reward_shrinks_with_age_and_count(reward in 1u64..1_000_000_000, winner_height in 6u64..1000,
                                               gap in 1u64..6, count in 1u32..5) {
        let units = ommer_reward_units(reward, winner_height, winner_height - gap, count).unwrap();
        let exact = ommer_reward(reward as f64, winner_height, winner_height - gap, count).unwrap();
        prop_assert!(units as f64 <= exact && exact - (units as f64) < 1.0);
        if gap < 5 {
            prop_assert!(ommer_reward_units(reward, winner_height, winner_height - gap - 1, count).unwrap() <= units);
        }
        prop_assert!(ommer_reward_units(reward, winner_height, winner_height - gap, count + 1).unwrap() <= units);
        prop_assert!(referral_bonus_units(reward) <= reward);
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(argmax(&p), argmax(&logits));
    }

    #[test]
    fn sml_rows_are_k_bit(seed in any::<u64>(), dim in 1usize..40, queries in 1usize..40, bits in 1u32..5) {
        let h = Hash256::random(&mut rng::seeded(seed));
        let sml = generate_sml(&h, dim, queries, bits).unwrap();
        prop_assert_eq!(sml.rows().count(), queries);
        prop_assert!(sml.rows().all(|r| r.len() == dim && r.iter().all(|&w| w < 1 << bits)));
    }

    #[test]
    fn sim_time_round_trips_microseconds(us in 0u64..1_000_000_000_000) {
        let t = SimTime(us);
        prop_assert_eq!(SimTime::from_secs_f64(t.as_secs_f64()), t);
    }

    #[test]
    fn pow_target_probability_round_trips(exp in 1u32..40) {
        let p = 2f64.powi(-(exp as i32));
        let back = success_probability(&target_from_probability(p));
        prop_assert!((back - p).abs() <= 1e-9 * p);
        let mut r = rng::seeded(exp as u64);
        prop_assert!(sample_trials(p, &mut r) >= 1);
    }
}
