mod common;

use chrono::NaiveDate;
use common::metric_oracles::{self, daily_mean, daily_proportion, indicator_series, known, random_matched, weekday_means};
use common::rel_close;
use proptest::prelude::*;
use pulsemon_core::ingest::{AggregateDaily, Post};
use pulsemon_core::metrics::{
    aggregate_values, compute_baseline, daily_values, relative_difference, relative_series, BaselineMode, DateRange,
    Metric,
};
use pulsemon_core::MatchResult;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TZ: chrono_tz::Tz = chrono_tz::Europe::Vienna;

fn refs(rows: &[(Post, MatchResult)]) -> Vec<(&Post, &MatchResult)> {
    rows.iter().map(|(p, m)| (p, m)).collect()
}

fn day(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

#[test]
fn daily_values_match_group_by_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let rows = random_matched(&mut rng, 1000, 45);
        for cat in metric_oracles::CATS {
            for (metric, oracle) in [
                (Metric::MeanPostFrequency, daily_mean(&rows, cat, TZ)),
                (Metric::ProportionMatching, daily_proportion(&rows, cat, TZ)),
            ] {
                let got = daily_values(&refs(&rows), &known(), cat, metric, TZ).unwrap();
                assert_eq!(got.len(), oracle.len());
                for d in &got {
                    let (v, n) = oracle[&d.date];
                    assert!(rel_close(d.value, v, 1e-12), "{cat} {metric} {}: {} vs {v}", d.date, d.value);
                    assert_eq!(d.n_posts, n);
                }
            }
        }
    }
}

#[test]
fn baseline_matches_weekday_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let year = DateRange::new(day(2019, 1, 1), day(2019, 12, 31)).unwrap();
    for _ in 0..50 {
        let values: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..0.2)).collect();
        let mut h = indicator_series(day(2018, 12, 10), &values);
        // gaps are allowed
        h.retain(|_| rng.gen_bool(0.9));
        let b = compute_baseline(&h, year, BaselineMode::Weekday).unwrap();
        let oracle = weekday_means(&h, year);
        for (w, pair) in b.weekday_means.into_iter().zip(oracle).enumerate() {
            match pair {
                (Some(a), Some(o)) => assert!(rel_close(a, o, 1e-12), "weekday {w}: {a} vs {o}"),
                (a, o) => assert_eq!(a, o),
            }
        }
    }
}

#[test]
fn aggregate_month_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let rows: Vec<AggregateDaily> = day(2020, 3, 1)
        .iter_days()
        .take(31)
        .flat_map(|d| {
            let total: u64 = rng.gen_range(0..5000);
            metric_oracles::CATS
                .iter()
                .map(|c| AggregateDaily {
                    date: d,
                    category: c.to_string(),
                    posts_total: total,
                    posts_matching: if total == 0 { 0 } else { rng.gen_range(0..=total) },
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let got = aggregate_values(&rows);
    let expected: Vec<_> = rows.iter().filter(|r| r.posts_total > 0).collect();
    assert_eq!(got.len(), expected.len());
    for r in expected {
        let d = got.iter().find(|d| d.date == r.date && d.category == r.category).unwrap();
        assert_eq!(d.value, r.posts_matching as f64 / r.posts_total as f64);
        assert_eq!(d.n_posts, r.posts_total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shift_moves_baseline_by_k(
        values in prop::collection::vec(0i64..4096, 7..120),
        k in -2048i64..2048,
    ) {
        // multiples of 1/1024 with a power-of-two day count per weekday keep
        // every step exact
        let n = values.len() / 7 * 7;
        let n = 7 * (1usize << (usize::BITS - 1 - (n / 7).leading_zeros()));
        let vals: Vec<f64> = values.iter().cycle().take(n).map(|&v| v as f64 / 1024.0).collect();
        let kf = k as f64 / 1024.0;
        let start = day(2019, 1, 7);
        let period = DateRange::new(start, start + chrono::Duration::days(n as i64 - 1)).unwrap();
        let base = compute_baseline(&indicator_series(start, &vals), period, BaselineMode::Weekday).unwrap();
        let shifted: Vec<f64> = vals.iter().map(|v| v + kf).collect();
        let moved = compute_baseline(&indicator_series(start, &shifted), period, BaselineMode::Weekday).unwrap();
        for w in 0..7 {
            prop_assert_eq!(moved.weekday_means[w].unwrap(), base.weekday_means[w].unwrap() + kf);
        }
    }

    #[test]
    fn shift_moves_baseline_by_k_real_values(
        vals in prop::collection::vec(0.0f64..1.0, 7..400),
        k in -0.5f64..0.5,
    ) {
        let start = day(2019, 1, 1);
        let period = DateRange::new(start, start + chrono::Duration::days(vals.len() as i64 - 1)).unwrap();
        for mode in [BaselineMode::Weekday, BaselineMode::Global] {
            let base = compute_baseline(&indicator_series(start, &vals), period, mode).unwrap();
            let shifted: Vec<f64> = vals.iter().map(|v| v + k).collect();
            let moved = compute_baseline(&indicator_series(start, &shifted), period, mode).unwrap();
            for w in 0..7 {
                let (a, b) = (moved.weekday_means[w].unwrap(), base.weekday_means[w].unwrap() + k);
                prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn relative_sign(v in 0.0f64..10.0, b in 1e-9f64..10.0, same in proptest::bool::ANY) {
        let v = if same { b } else { v };
        let r = relative_difference(v, b).unwrap();
        prop_assert_eq!(r > 0.0, v > b);
        prop_assert_eq!(r == 0.0, v == b);
        prop_assert_eq!(r < 0.0, v < b);
    }

    #[test]
    fn relative_sign_adjacent_floats(b in 1e-6f64..10.0, up in proptest::bool::ANY) {
        let v = if up { f64::from_bits(b.to_bits() + 1) } else { f64::from_bits(b.to_bits() - 1) };
        let r = relative_difference(v, b).unwrap();
        prop_assert_eq!(r > 0.0, up);
        prop_assert!(r != 0.0);
    }

    #[test]
    fn indicator_bounds_and_permutation(seed in any::<u64>(), n in 0usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_matched(&mut rng, n, 10);
        let mut shuffled = refs(&rows);
        shuffled.shuffle(&mut rng);
        for cat in metric_oracles::CATS {
            for metric in [Metric::MeanPostFrequency, Metric::ProportionMatching] {
                let a = daily_values(&refs(&rows), &known(), cat, metric, TZ).unwrap();
                let b = daily_values(&shuffled, &known(), cat, metric, TZ).unwrap();
                prop_assert_eq!(&a, &b);
                for d in &a {
                    prop_assert!((0.0..=1.0).contains(&d.value));
                    prop_assert!(d.n_posts > 0);
                }
            }
        }
    }

    #[test]
    fn baseline_zero_never_yields_a_number(v in 0.0f64..1.0) {
        let start = day(2019, 1, 7);
        let period = DateRange::new(start, start + chrono::Duration::days(6)).unwrap();
        let base = compute_baseline(&indicator_series(start, &[0.0; 7]), period, BaselineMode::Weekday).unwrap();
        let s = relative_series(&indicator_series(day(2020, 3, 16), &[v; 7]), &base);
        prop_assert_eq!(s.points.len(), 7);
        for p in &s.points {
            prop_assert!(p.rel_pct.is_none());
        }
    }
}
