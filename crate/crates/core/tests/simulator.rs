mod common;

use chrono::Weekday;
use common::*;
use leadprice::choice::{fit_mle, BucketScheme, FitConfig, MnlParams};
use leadprice::features::FeatureValue;
use leadprice::pricer::ObjectiveConfig;
use leadprice::quotelog::write_log;
use leadprice::simulator::{
    ab_compare, brier_score, evaluate_models, generate_quotes, scenarios, ChoicePredictor,
    CostPlus, FeatureGenerator, FixedPrices, NaiveBaseline, RandomExploration,
};
use rand::Rng;

#[test]
fn choice_frequencies_match_planted_probabilities() {
    let params = MnlParams::uniform([0.5, -0.04, 0.1], 0.10, 0.05, single_bucket(7)).unwrap();
    let prices = vec![10.0, 11.0, 9.0, 12.0, 12.0, 10.0, 8.0];
    let truth = flat_truth(params, Weekday::Sun, 5.0, 0.0);
    let log = generate_quotes(&truth, 100_000, &FixedPrices(prices.clone()), 9).unwrap();
    let probs = oracle_probabilities(
        [0.5, -0.04, 0.1],
        0.10,
        0.05,
        &prices,
        Weekday::Sun,
        &[true; 7],
    );
    let n = log.quotes as f64;
    for (i, &p) in probs.iter().enumerate() {
        let count = log.rows.iter().filter(|r| r.choice.chosen == i).count() as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        assert!(
            (count - n * p).abs() < 3.0 * sd,
            "option {i}: {count} vs {}",
            n * p
        );
    }
}

#[test]
fn same_seed_gives_byte_identical_logs() {
    let truth = scenarios::with_windows(7);
    let emit = |seed| {
        let log = generate_quotes(&truth, 2_000, &CostPlus { markup: 6.0 }, seed).unwrap();
        let mut out = Vec::new();
        write_log(&log.rows, &mut out).unwrap();
        out
    };
    assert_eq!(emit(42), emit(42));
    assert_ne!(emit(42), emit(43));
}

#[test]
fn counters_match_rows() {
    let log = generate_quotes(
        &scenarios::reference_effect(14),
        5_000,
        &CostPlus { markup: 5.0 },
        1,
    )
    .unwrap();
    assert_eq!(log.quotes, log.rows.len());
    assert_eq!(
        log.conversions,
        log.rows.iter().filter(|r| r.choice.chosen > 0).count()
    );
    assert_eq!(
        log.cancellations,
        log.rows.iter().filter(|r| r.canceled).count()
    );
    assert!(log.rows.iter().all(|r| !r.canceled || r.choice.chosen > 0));
    assert!(log.rows.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
}

#[test]
fn constant_features_route_to_one_segment() {
    let mut truth = scenarios::two_segment(7);
    for (name, generator) in truth.features.iter_mut() {
        if name == "business" {
            *generator = FeatureGenerator::Constant {
                value: FeatureValue::Num(1.0),
            };
        }
    }
    let log = generate_quotes(&truth, 3_000, &CostPlus { markup: 5.0 }, 2).unwrap();
    assert!(log.segments.iter().all(|&s| s == log.segments[0]));
}

#[test]
fn negative_prices_are_rejected() {
    let truth = scenarios::reference_effect(3);
    assert!(generate_quotes(&truth, 10, &FixedPrices(vec![5.0, -0.01, 5.0]), 0).is_err());
    assert!(generate_quotes(&truth, 0, &CostPlus { markup: 1.0 }, 0).is_err());
}

#[test]
fn brier_by_hand_and_by_summation() {
    assert_eq!(brier_score(&[vec![0.0, 0.0, 1.0]], &[2]).unwrap(), 0.0);
    assert!((brier_score(&[vec![0.5, 0.5]], &[1]).unwrap() - 0.5).abs() < 1e-15);
    assert!(brier_score(&[vec![0.3, 0.3]], &[0]).is_err());

    let mut r = rng(8);
    let mut preds = Vec::new();
    let mut outcomes = Vec::new();
    for _ in 0..500 {
        let raw: Vec<f64> = (0..5).map(|_| r.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        preds.push(raw.iter().map(|v| v / total).collect::<Vec<_>>());
        outcomes.push(r.random_range(0..5));
    }
    let mut sum = 0.0;
    for (p, &y) in preds.iter().zip(&outcomes) {
        for (i, pi) in p.iter().enumerate() {
            let hit = if i == y { 1.0 } else { 0.0 };
            sum += (pi - hit) * (pi - hit);
        }
    }
    let want = sum / preds.len() as f64;
    let got = brier_score(&preds, &outcomes).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!((0.0..=2.0).contains(&got));
}

#[test]
fn naive_baseline_with_one_option_is_binary_entropy() {
    let params = MnlParams::uniform([0.0; 3], 0.05, 0.0, single_bucket(1)).unwrap();
    let truth = flat_truth(params, Weekday::Mon, 5.0, 0.0);
    let log = generate_quotes(&truth, 4_000, &FixedPrices(vec![10.0]), 3).unwrap();
    let naive = NaiveBaseline::fit(&log.rows).unwrap();
    let report = evaluate_models(&log.rows, &[("naive", &naive as &dyn ChoicePredictor)]).unwrap();
    let n = log.rows.len() as f64;
    let q = log.conversions as f64 / n;
    let entropy = -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
    assert!(
        (report[0].nll - n * entropy).abs() < 1e-8 * n,
        "{} vs {}",
        report[0].nll,
        n * entropy
    );
}

#[test]
fn planted_model_beats_the_comparators() {
    let truth = scenarios::two_segment(7);
    let scheme = BucketScheme::for_horizon(7);
    let plain = FitConfig {
        reference_effects: false,
        ..FitConfig::default()
    };
    let mut wins = 0;
    for seed in 0..20 {
        let explore = RandomExploration {
            low: 0.0,
            high: 30.0,
            seed,
        };
        let log = generate_quotes(&truth, 6_000, &explore, 500 + seed).unwrap();
        let (train, holdout) = log.rows.split_at(3_000);
        let pooled: Vec<_> = train.iter().map(|r| r.choice.clone()).collect();
        let vanilla = fit_mle(&pooled, &scheme, &plain).unwrap().params;
        let naive = NaiveBaseline::fit(train).unwrap();
        let models: [(&str, &dyn ChoicePredictor); 3] = [
            ("truth", &truth.tree),
            ("vanilla", &vanilla),
            ("naive", &naive),
        ];
        let reports = evaluate_models(holdout, &models).unwrap();
        for r in &reports {
            assert!(r.nll >= 0.0 && (0.0..=2.0).contains(&r.brier));
        }
        if reports[1..]
            .iter()
            .all(|r| reports[0].nll < r.nll && reports[0].brier < r.brier)
        {
            wins += 1;
        }
    }
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn identical_arms_do_not_differ() {
    let truth = scenarios::reference_effect(7);
    let policy = CostPlus { markup: 6.0 };
    let objective = ObjectiveConfig::default();
    for seed in 0..5 {
        let report = ab_compare(&truth, &policy, &policy, 20_000, 0.5, seed, &objective).unwrap();
        assert!(
            report.difference.abs() < 3.0 * report.std_error,
            "{report:?}"
        );
    }
}

#[test]
fn split_follows_the_requested_fraction() {
    let truth = scenarios::reference_effect(3);
    let (a, b) = (CostPlus { markup: 4.0 }, CostPlus { markup: 8.0 });
    let n = 40_000;
    let report = ab_compare(&truth, &a, &b, n, 0.25, 6, &ObjectiveConfig::default()).unwrap();
    let expected = 0.25 * n as f64;
    let sd = (n as f64 * 0.25 * 0.75).sqrt();
    assert!((report.arm_a.quotes as f64 - expected).abs() < 3.0 * sd);
    assert_eq!(report.arm_a.quotes + report.arm_b.quotes, n);
    for split in [0.0, 1.0, -0.2, f64::NAN] {
        assert!(ab_compare(&truth, &a, &b, 100, split, 6, &ObjectiveConfig::default()).is_err());
    }
}
