use dyadic_osc::construction_blocks::{building_block, delta_j};
use dyadic_osc::divdiff::sigma_stats;
use dyadic_osc::dyadic::{locate_dyadic, whitney, DyadicInterval, DyadicRational};
use dyadic_osc::entropy_dim::{besicovitch_count, entropy_phi, lemma32_bound, mass_measure};
use dyadic_osc::holder_functions::{martingale_function, Affine, Weierstrass};
use dyadic_osc::martingale::{
    check_cancellation, from_function, summation_by_parts_check, BetaSum, Martingale, RandomGrowth, RandomSigns,
};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use proptest::prelude::*;

fn dyadic() -> impl Strategy<Value = DyadicRational> {
    (any::<i64>(), 0u32..80).prop_map(|(n, e)| DyadicRational::new(n, e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn digit_is_floor_parity(x in dyadic(), k in 0u32..100) {
        let want = DyadicRational::new(x.floor_scaled(k), 0).numerator().mod_floor(&BigInt::from(2)) == BigInt::from(1);
        prop_assert_eq!(x.digit(k), want);
    }

    #[test]
    fn located_interval_contains_point(x in dyadic(), n in 0u32..60) {
        let y = x.fract();
        let i = locate_dyadic(&y, n);
        prop_assert!(i.contains(&y));
        prop_assert_eq!(i.level(), n);
    }

    #[test]
    fn whitney_pieces_tile_the_interval(a in 0u64..1 << 20, b in 1u64..1 << 20) {
        let x = DyadicRational::new(a, 20);
        let h = DyadicRational::new(b, 20);
        let w = whitney(&x, &h, 40).unwrap();
        prop_assert_eq!(w.total_length(), h);
        prop_assert!(w.max_rank_multiplicity() <= 2);
    }

    #[test]
    fn block_haar_sum_is_closed_form(j in 0usize..5, level in 0u32..8, idx in 0u64..256, beta in 0.1f64..0.9, bits in any::<u32>()) {
        let idx = idx % (1u64 << level);
        let b = building_block(delta_j(j), DyadicInterval::new(level, idx), beta).unwrap();
        prop_assert!(b.checks.ok);
        prop_assert_eq!(b.integral_coefficient(), num_rational::BigRational::from_integer(0.into()));
        let depth = level + b.m + 2;
        let x = DyadicRational::new(bits as u64 % (1u64 << depth.min(40)), depth.min(40));
        let mut sum = BetaSum::zero();
        for k in 0..b.m {
            sum = sum.add(&b.difference_exact(k, &x));
        }
        prop_assert_eq!(sum, b.value_exact(&x));
    }

    #[test]
    fn random_martingales_cancel(seed in any::<u64>(), beta in 0.05f64..0.95) {
        prop_assert_eq!(check_cancellation(&RandomSigns { seed }, 8).max_violation, 0.0);
        let t = RandomGrowth { seed, beta, scale: 1.0 };
        prop_assert!(check_cancellation(&t, 8).max_violation < 1e-12);
        prop_assert!(summation_by_parts_check(&t, beta, 8) < 1e-10);
    }

    #[test]
    fn product_bound_on_feasible_inputs(eta in 0.01f64..0.99, raw in prop::collection::vec(-1.0f64..=1.0, 1..50)) {
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let xs: Vec<f64> = if mean >= eta {
            raw
        } else {
            let t = ((eta - mean) / (1.0 - mean) * (1.0 + 1e-12) + 1e-15).min(1.0);
            raw.iter().map(|x| (x + t * (1.0 - x)).min(1.0)).collect()
        };
        let r = lemma32_bound(&xs, eta).unwrap();
        prop_assert!(r.hypothesis);
        prop_assert_eq!(r.holds, Some(true));
    }

    #[test]
    fn mass_children_add_up(seed in any::<u64>(), eta in 0.05f64..0.95, path in any::<u16>()) {
        let mu = mass_measure(RandomSigns { seed }, eta).unwrap();
        let i = DyadicInterval::new(16, path as u64).ancestor(10);
        let parent = mu.mass(&i).unwrap();
        let kids = &mu.mass(&i.lower()).unwrap() + &mu.mass(&i.upper()).unwrap();
        prop_assert_eq!(parent, kids);
    }

    #[test]
    fn counts_match_enumeration(n in 1u64..14, eta in 0.0f64..1.0) {
        let brute = (0u64..1 << n).filter(|i| 2.0 * i.count_ones() as f64 - n as f64 >= eta * n as f64).count();
        prop_assert_eq!(besicovitch_count(n, eta).unwrap(), BigUint::from(brute));
    }

    #[test]
    fn entropy_decreases(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        prop_assert!(entropy_phi(lo).unwrap() > entropy_phi(hi).unwrap());
    }

    #[test]
    fn scale_events_partition(seed in any::<u64>(), delta in -2.0f64..2.0, c in -2.0f64..2.0) {
        prop_assume!(delta >= -c);
        let w = Weierstrass::new(2.0, 0.5, 1e-10).unwrap();
        let s = sigma_stats(&w, 0.5, &DyadicRational::one(), 1e-4, &[(delta, c)], 256, seed).unwrap();
        let e = &s.events[0];
        prop_assert!((e.above + e.middle + e.below - s.total).abs() < 1e-12);
        prop_assert!(e.above >= 0.0 && e.middle >= 0.0 && e.below >= 0.0);
    }

    #[test]
    fn overlapping_thresholds_are_rejected(delta in -2.0f64..2.0, c in -2.0f64..2.0) {
        prop_assume!(delta < -c);
        let w = Weierstrass::new(2.0, 0.5, 1e-10).unwrap();
        prop_assert!(sigma_stats(&w, 0.5, &DyadicRational::one(), 1e-4, &[(delta, c)], 16, 0).is_err());
    }

    #[test]
    fn induced_function_round_trips(seed in any::<u64>()) {
        // signs martingale with S_0 = 0 so the induced function is periodic
        let s = dyadic_osc::martingale::FnMartingale::new(move |i: &DyadicInterval| {
            if i.level() == 0 { 0.0 } else { RandomSigns { seed }.value(i) - RandomSigns { seed }.value(&DyadicInterval::unit()) }
        });
        let f = martingale_function(&s, 0.5).unwrap().with_depth(10);
        let back = from_function(&f, 10);
        for i in DyadicInterval::level_iter(7) {
            prop_assert_eq!(back.value(&i), s.value(&i));
        }
    }

    #[test]
    fn affine_slope_is_recovered(c in -4.0f64..4.0, slope in -4.0f64..4.0, level in 0u32..12, idx in any::<u16>()) {
        let f = Affine::new(c, slope, 0.5);
        let i = DyadicInterval::new(level, idx as u64 % (1u64 << level));
        let v = from_function(f, 16).value(&i);
        prop_assert!((v - slope).abs() <= 1e-9 * (1.0 + slope.abs()) * (level as f64).exp2());
    }
}
