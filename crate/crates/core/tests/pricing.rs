mod common;

use chrono::{TimeZone, Utc, Weekday};
use common::*;
use leadprice::artifact::{ModelArtifact, ARTIFACT_SCHEMA_VERSION};
use leadprice::calendar::LeadTimeCalendar;
use leadprice::choice::MnlParams;
use leadprice::engine::{QuoteEngine, QuoteRequest};
use leadprice::features::{FeatureSchema, FeatureVector};
use leadprice::mst::SegmentationTree;
use leadprice::predictors::{CancellationModel, CostTable, NoCancellation, SegmentedCancellation};
use leadprice::pricer::{
    evaluate_objective, optimize_two_param, policy_prices, GridConfig, Guardrails, ObjectiveConfig,
    PricingPolicy, PricingProblem,
};
use leadprice::simulator::{generate_quotes, realized_objective, FixedPrices};
use rand::Rng;

fn objective(alpha: f64) -> ObjectiveConfig {
    ObjectiveConfig {
        alpha,
        ..ObjectiveConfig::default()
    }
}

#[test]
fn expected_objective_matches_simulation() {
    let params = MnlParams::uniform([0.4, -0.03, 0.2], 0.12, 0.06, single_bucket(7)).unwrap();
    let prices = vec![14.5, 12.0, 16.25, 13.0, 15.0, 11.75, 18.0];
    let cancel = 0.15;
    for alpha in [0.0, 0.5, 1.0] {
        let truth = flat_truth(params.clone(), Weekday::Wed, 8.0, cancel);
        let cal = LeadTimeCalendar::new(Weekday::Wed, 7).unwrap();
        let expected = evaluate_objective(
            &prices,
            &FeatureVector::new(),
            &params,
            &[8.0; 7],
            &CancellationModel::Constant { rate: cancel },
            &cal,
            objective(alpha),
        )
        .unwrap();
        let log = generate_quotes(&truth, 100_000, &FixedPrices(prices.clone()), 77).unwrap();
        let values: Vec<f64> = log
            .rows
            .iter()
            .map(|r| realized_objective(r, &objective(alpha)))
            .collect();
        let (mean, se) = mean_se(&values);
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "alpha {alpha}: {mean} ± {se} vs {expected}"
        );
    }
}

#[test]
fn objective_by_hand() {
    let cal = LeadTimeCalendar::new(Weekday::Sun, 7).unwrap();
    let params = MnlParams::uniform([0.0; 3], 0.10, 0.05, single_bucket(7)).unwrap();
    let p = [10.0, 11.0, 9.0, 12.0, 12.0, 10.0, 8.0];
    let c = [6.0, 6.0, 5.0, 7.0, 7.0, 6.0, 4.0];
    let probs = oracle_probabilities([0.0; 3], 0.10, 0.05, &p, Weekday::Sun, &[true; 7]);
    for alpha in [0.0, 0.3, 1.0] {
        let want: f64 = (0..7)
            .map(|k| probs[k + 1] * ((1.0 - alpha) * (p[k] - c[k]) + alpha * c[k]) * 0.9)
            .sum();
        let got = evaluate_objective(
            &p,
            &FeatureVector::new(),
            &params,
            &c,
            &CancellationModel::Constant { rate: 0.1 },
            &cal,
            objective(alpha),
        )
        .unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

fn random_problem_parts(seed: u64, n: usize) -> (MnlParams<f64>, LeadTimeCalendar, Vec<f64>) {
    let mut r = rng(seed);
    let params = MnlParams::new(
        [
            r.random_range(-0.5..1.0),
            r.random_range(-0.05..0.0),
            r.random_range(-0.5..0.5),
        ],
        vec![r.random_range(0.05..0.3)],
        vec![r.random_range(0.0..0.2)],
        single_bucket(n),
    )
    .unwrap();
    let cal = LeadTimeCalendar::new(WEEK[r.random_range(0..7)], n).unwrap();
    let costs = (0..n).map(|_| r.random_range(2.0..10.0)).collect();
    (params, cal, costs)
}

#[test]
fn refinement_never_loses_to_the_coarse_grid() {
    for seed in 0..20 {
        let (params, cal, costs) = random_problem_parts(seed, 5);
        let x = FeatureVector::new();
        let problem =
            PricingProblem::new(&x, &params, &costs, &NoCancellation, &cal, objective(0.0))
                .unwrap();
        let guard = Guardrails::uniform(5, 0.0, 40.0).unwrap();
        let coarse = optimize_two_param(
            &problem,
            &guard,
            &GridConfig {
                refine_factor: 1,
                ..GridConfig::default()
            },
        )
        .unwrap();
        let fine = optimize_two_param(&problem, &guard, &GridConfig::default()).unwrap();
        assert!(fine.objective >= coarse.objective);
        let step = 40.0 / 40.0;
        let slack = step * costs.len() as f64;
        assert!(fine.objective <= coarse.objective + slack);
    }
}

#[test]
fn wider_guardrails_never_hurt() {
    for seed in 0..20 {
        let (params, cal, costs) = random_problem_parts(100 + seed, 4);
        let x = FeatureVector::new();
        let problem =
            PricingProblem::new(&x, &params, &costs, &NoCancellation, &cal, objective(0.0))
                .unwrap();
        let mut previous = f64::NEG_INFINITY;
        for ceiling in [15.0, 25.0, 40.0, 80.0] {
            let guard = Guardrails::uniform(4, 0.0, ceiling).unwrap();
            let grid = GridConfig {
                min_price_range: Some((0.0, 80.0)),
                markup_range: Some((-20.0, 80.0)),
                ..GridConfig::default()
            };
            let opt = optimize_two_param(&problem, &guard, &grid).unwrap();
            assert!(opt.objective >= previous - 1e-12);
            previous = opt.objective;
        }
    }
}

#[test]
fn pricing_below_cost_hurts_profit() {
    let (params, cal, costs) = random_problem_parts(7, 4);
    let x = FeatureVector::new();
    let problem =
        PricingProblem::new(&x, &params, &costs, &NoCancellation, &cal, objective(0.0)).unwrap();
    let opt = optimize_two_param(
        &problem,
        &Guardrails::uniform(4, 0.0, 60.0).unwrap(),
        &GridConfig::default(),
    )
    .unwrap();
    for k in 0..4 {
        let mut below = opt.prices.clone();
        below[k] = costs[k] - 1.0;
        assert!(problem.objective(&below).unwrap() < opt.objective);
    }
}

fn toy_artifact(floor: f64, ceiling: f64) -> ModelArtifact {
    let t = Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap();
    ModelArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        trained_at: t,
        window_start: t,
        window_end: t,
        subsample_fraction: 1.0,
        seed: 0,
        training_rows: 0,
        feature_schema: FeatureSchema::new(Vec::new()),
        tree: SegmentationTree::single(
            MnlParams::uniform([0.0; 3], 0.10, 0.05, single_bucket(7)).unwrap(),
        ),
        cancellation: SegmentedCancellation::global_only(CancellationModel::Constant { rate: 0.1 }),
        second_level: None,
        guardrails: Guardrails::uniform(7, floor, ceiling).unwrap(),
        objective: ObjectiveConfig::default(),
        grid: GridConfig::default(),
        costs: CostTable::constant(6.0, 7),
    }
}

#[test]
fn engine_quote_is_the_policy_at_its_reported_parameters() {
    let artifact = toy_artifact(0.0, 50.0);
    let engine = QuoteEngine::new(artifact.clone(), "toy".into()).unwrap();
    let costs_cents = vec![600, 650, 500, 700, 700, 600, 450];
    let response = engine
        .quote(&QuoteRequest {
            features: FeatureVector::new(),
            start_day: Weekday::Sun,
            available: None,
            costs: Some(costs_cents.clone()),
            second_level: false,
            window_costs: None,
        })
        .unwrap();
    let cal = LeadTimeCalendar::new(Weekday::Sun, 7).unwrap();
    let costs: Vec<f64> = costs_cents.iter().map(|&c| c as f64 / 100.0).collect();
    let hand = policy_prices(
        &PricingPolicy {
            min_price: response.min_price,
            markup: response.markup,
        },
        &costs,
        artifact.tree.segments()[0],
        &cal,
        &artifact.guardrails,
    )
    .unwrap();
    let hand_cents: Vec<i64> = hand.iter().map(|p| (p * 100.0).round() as i64).collect();
    assert_eq!(response.prices, hand_cents);
    assert_eq!(response.segment, 0);
    assert_eq!(response.model_version, "toy");
}

#[test]
fn degenerate_guardrails_fix_every_price() {
    let engine = QuoteEngine::new(toy_artifact(12.34, 12.34), "g".into()).unwrap();
    for start in WEEK {
        let response = engine
            .quote(&QuoteRequest {
                features: FeatureVector::new(),
                start_day: start,
                available: Some(vec![true, false, true, true, true, false, true]),
                costs: None,
                second_level: false,
                window_costs: None,
            })
            .unwrap();
        assert_eq!(response.prices, vec![1234; 7]);
    }
}
