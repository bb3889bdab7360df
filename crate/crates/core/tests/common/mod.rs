//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use chrono::{TimeZone, Utc, Weekday};
use leadprice::calendar::LeadTimeCalendar;
use leadprice::choice::{BucketMap, BucketScheme, ChoiceObservation, MnlParams};
use leadprice::features::{FeatureValue, FeatureVector};
use leadprice::mst::SegmentationTree;
use leadprice::predictors::{CancellationModel, CostTable};
use leadprice::simulator::{CalendarGenerator, FeatureGenerator, GroundTruth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const WEEK: [Weekday; 7] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
    Weekday::Sun,
];

pub fn is_weekend(start: Weekday, k: usize) -> bool {
    (start.num_days_from_monday() as usize + k) % 7 >= 5
}

/// Reference prices by explicit enumeration: for each available weekday,
/// find the previous and next available weekday by scanning and take the
/// minimum of the three; weekends share the minimum available weekend price.
pub fn oracle_reference(prices: &[f64], start: Weekday, available: &[bool]) -> Vec<f64> {
    let n = prices.len();
    let weekday = |k: usize| available[k] && !is_weekend(start, k);
    let mut weekend_min = f64::INFINITY;
    for k in 0..n {
        if available[k] && is_weekend(start, k) {
            weekend_min = weekend_min.min(prices[k]);
        }
    }
    (0..n)
        .map(|k| {
            if !available[k] {
                return prices[k];
            }
            if is_weekend(start, k) {
                return weekend_min;
            }
            let mut window = vec![prices[k]];
            if let Some(prev) = (0..k).rev().find(|&j| weekday(j)) {
                window.push(prices[prev]);
            }
            if let Some(next) = (k + 1..n).find(|&j| weekday(j)) {
                window.push(prices[next]);
            }
            window.into_iter().fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// MNL probabilities with one `beta`/`gamma` for every option, written out
/// directly: `exp(u_i) / (1 + sum_k exp(u_k))`.
pub fn oracle_probabilities(
    trend: [f64; 3],
    beta: f64,
    gamma: f64,
    prices: &[f64],
    start: Weekday,
    available: &[bool],
) -> Vec<f64> {
    let r = oracle_reference(prices, start, available);
    let weights: Vec<f64> = (0..prices.len())
        .map(|k| {
            if !available[k] {
                return 0.0;
            }
            let i = (k + 1) as f64;
            let u = trend[0] * i + trend[1] * i * i + trend[2] * i.sqrt()
                - beta * prices[k]
                - gamma * (prices[k] - r[k]);
            u.exp()
        })
        .collect();
    let total = 1.0 + weights.iter().sum::<f64>();
    std::iter::once(1.0 / total)
        .chain(weights.iter().map(|w| w / total))
        .collect()
}

pub fn random_calendar(rng: &mut ChaCha8Rng, n: usize, unavailable: f64) -> LeadTimeCalendar {
    let start = WEEK[rng.random_range(0..7)];
    let mut available: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= unavailable).collect();
    if !available.iter().any(|&a| a) {
        available[0] = true;
    }
    LeadTimeCalendar::with_availability(start, available).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, scheme: BucketScheme) -> MnlParams<f64> {
    let b = scheme.num_buckets();
    MnlParams::new(
        [
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.5..0.5),
        ],
        (0..b).map(|_| rng.random_range(0.02..0.3)).collect(),
        (0..b).map(|_| rng.random_range(0.0..0.2)).collect(),
        scheme,
    )
    .unwrap()
}

pub fn sample_choice(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap()
}

/// Observations with random calendars and prices, choices drawn from `params`.
pub fn random_observations(
    rng: &mut ChaCha8Rng,
    params: &MnlParams<f64>,
    n_options: usize,
    rows: usize,
) -> Vec<ChoiceObservation<f64>> {
    (0..rows)
        .map(|_| {
            let cal = random_calendar(rng, n_options, 0.1);
            let prices: Vec<f64> = (0..n_options)
                .map(|_| rng.random_range(5.0..40.0))
                .collect();
            let probs = leadprice::choice::probabilities_at_prices(params, &prices, &cal).unwrap();
            let y = sample_choice(rng, &probs);
            ChoiceObservation::new(cal, prices, y).unwrap()
        })
        .collect()
}

pub fn single_bucket(n: usize) -> BucketScheme {
    BucketScheme::Fixed(BucketMap::single(n))
}

/// A single-segment truth with constant features, fixed calendar and costs.
pub fn flat_truth(params: MnlParams<f64>, start: Weekday, cost: f64, cancel: f64) -> GroundTruth {
    let n = match &params.buckets {
        BucketScheme::Fixed(m) => m.num_options(),
        BucketScheme::WeekdayRuns { .. } => 7,
    };
    GroundTruth {
        tree: SegmentationTree::single(params),
        features: vec![(
            "segment".into(),
            FeatureGenerator::Constant {
                value: FeatureValue::Num(1.0),
            },
        )],
        calendar: CalendarGenerator {
            num_options: n,
            unavailable_prob: 0.0,
            start_day: Some(start),
        },
        costs: CostTable::constant(cost, n),
        cancellation: CancellationModel::Constant { rate: cancel },
        second_level: None,
        start_time: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        quote_interval_secs: 60,
    }
}

pub fn features(pairs: &[(&str, FeatureValue)]) -> FeatureVector {
    let mut x = FeatureVector::new();
    for (k, v) in pairs {
        x.insert(k, v.clone());
    }
    x
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
