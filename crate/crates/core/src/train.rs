//! Training run: time window, exploration subsample, segmentation tree,
//! cancellation models and the optional window model, packed into an artifact.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::artifact::{ModelArtifact, SecondLevelModel, ARTIFACT_SCHEMA_VERSION};
use crate::choice::{probabilities_at_prices, BucketScheme, FitConfig};
use crate::dataset::{subsample, TrainingSet};
use crate::error::{Error, Result};
use crate::mst::{fit_tree, SegmentationTree, TreeHyperparams};
use crate::predictors::{
    CancelFeatures, CancelRow, CancellationModel, CostTable, SegmentedCancellation,
    CANCEL_RATE_CLIP,
};
use crate::pricer::{GridConfig, Guardrails, ObjectiveConfig};
use crate::second_level::{
    fit_window_model, impute_clicks, SecondLevelObservation, UnconvertedQuote, WindowCatalog,
    WindowFitConfig, WindowGrid,
};
use crate::simulator::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondLevelTrainConfig {
    pub catalog: WindowCatalog,
    pub fit: WindowFitConfig<f64>,
    pub grid: WindowGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub window_weeks: u32,
    /// Defaults to the latest timestamp in the data.
    pub window_end: Option<DateTime<Utc>>,
    pub subsample_fraction: f64,
    pub seed: u64,
    pub tree: TreeHyperparams,
    pub buckets: BucketScheme,
    pub fit: FitConfig<f64>,
    pub cancel_features: CancelFeatures,
    /// Bookings a segment needs for its own cancellation model.
    pub cancel_min_rows: usize,
    pub second_level: Option<SecondLevelTrainConfig>,
    pub guardrails: Guardrails<f64>,
    pub objective: ObjectiveConfig,
    pub grid: GridConfig,
}

impl TrainConfig {
    pub fn new(guardrails: Guardrails<f64>) -> Self {
        Self {
            window_weeks: 8,
            window_end: None,
            subsample_fraction: 0.5,
            seed: 0,
            tree: TreeHyperparams::default(),
            buckets: BucketScheme::default(),
            fit: FitConfig::default(),
            cancel_features: CancelFeatures::intercept_only(),
            cancel_min_rows: 500,
            second_level: None,
            guardrails,
            objective: ObjectiveConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

const SUBSAMPLE_STREAM: u64 = 10;
const IMPUTE_STREAM: u64 = 11;

pub fn train(
    data: &TrainingSet<f64>,
    costs: CostTable,
    config: &TrainConfig,
) -> Result<ModelArtifact> {
    if config.window_weeks == 0 {
        return Err(Error::invalid("training window must be at least one week"));
    }
    if !(6..=12).contains(&config.window_weeks) {
        log::warn!(
            "training window of {} weeks is outside 6-12",
            config.window_weeks
        );
    }
    let end = match config.window_end {
        Some(t) => t,
        None => data
            .rows
            .iter()
            .map(|r| r.timestamp)
            .max()
            .ok_or(Error::Empty("training data"))?,
    };
    let start = end - Duration::weeks(i64::from(config.window_weeks));
    let windowed = data.window(start, end + Duration::nanoseconds(1));
    let needed = config.tree.min_leaf_samples.max(1);
    if windowed.len() < needed {
        return Err(Error::InsufficientRows {
            needed,
            found: windowed.len(),
        });
    }
    let sample = subsample(
        &windowed,
        config.subsample_fraction,
        derive_seed(config.seed, SUBSAMPLE_STREAM),
    )?;
    if sample.len() < needed {
        return Err(Error::InsufficientRows {
            needed,
            found: sample.len(),
        });
    }

    let tree = fit_tree(&sample, &config.tree, &config.buckets, &config.fit)?;
    let cancellation = fit_cancellation_models(&sample, &tree, config)?;
    let second_level = config
        .second_level
        .as_ref()
        .map(|sl| fit_second_level(&sample, &tree, sl, derive_seed(config.seed, IMPUTE_STREAM)))
        .transpose()?;

    let artifact = ModelArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        trained_at: end,
        window_start: start,
        window_end: end,
        subsample_fraction: config.subsample_fraction,
        seed: config.seed,
        training_rows: sample.len(),
        feature_schema: sample.schema.clone(),
        tree,
        cancellation,
        second_level,
        guardrails: config.guardrails.clone(),
        objective: config.objective,
        grid: config.grid.clone(),
        costs,
    };
    artifact.validate()?;
    Ok(artifact)
}

fn fit_cancellation_models(
    data: &TrainingSet<f64>,
    tree: &SegmentationTree<f64>,
    config: &TrainConfig,
) -> Result<SegmentedCancellation> {
    let rows: Vec<(usize, CancelRow<'_>)> = data
        .rows
        .iter()
        .filter(|r| r.choice.chosen > 0)
        .map(|r| {
            (
                tree.route(&r.features).0,
                CancelRow {
                    features: &r.features,
                    option: r.choice.chosen,
                    canceled: r.canceled,
                },
            )
        })
        .collect();
    if rows.is_empty() {
        log::warn!("no bookings in the training sample; assuming the minimum cancellation rate");
        return Ok(SegmentedCancellation::global_only(
            CancellationModel::Constant {
                rate: CANCEL_RATE_CLIP,
            },
        ));
    }
    SegmentedCancellation::fit(&rows, &config.cancel_features, config.cancel_min_rows)
}

fn fit_second_level(
    data: &TrainingSet<f64>,
    tree: &SegmentationTree<f64>,
    config: &SecondLevelTrainConfig,
    seed: u64,
) -> Result<SecondLevelModel> {
    let m = config.catalog.len();
    let encoding = &config.fit.encoding;
    let mut observed = Vec::new();
    let mut surcharge_sum = vec![0.0; m];
    let mut surcharge_n = 0usize;
    let mut prices_by_row: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for (idx, row) in data.rows.iter().enumerate() {
        let Some(sl) = &row.second_level else {
            continue;
        };
        for ws in sl.windows.iter().filter(|w| !w.is_empty()) {
            if ws.len() != m {
                return Err(Error::LengthMismatch {
                    what: "logged windows",
                    expected: m,
                    found: ws.len(),
                });
            }
            let low = ws.iter().map(|w| w.cost).fold(f64::INFINITY, f64::min);
            for (s, w) in surcharge_sum.iter_mut().zip(ws) {
                *s += w.cost - low;
            }
            surcharge_n += 1;
        }
        let chosen = row.choice.chosen;
        if chosen > 0 && sl.chosen_window > 0 {
            observed.push(SecondLevelObservation {
                features: encoding.encode(&row.features, chosen),
                prices: sl.windows[chosen - 1].iter().map(|w| w.price).collect(),
                chosen_window: sl.chosen_window,
                imputed: false,
            });
        } else if chosen == 0 {
            prices_by_row.push((
                idx,
                sl.windows
                    .iter()
                    .map(|ws| ws.iter().map(|w| w.price).collect())
                    .collect(),
            ));
        }
    }
    if surcharge_n == 0 {
        return Err(Error::Empty("logged windows"));
    }
    let quotes: Vec<UnconvertedQuote<'_, f64>> = prices_by_row
        .iter()
        .map(|(idx, windows)| {
            let row = &data.rows[*idx];
            let params = tree.route(&row.features).1;
            Ok(UnconvertedQuote {
                features: &row.features,
                base_probs: probabilities_at_prices(
                    params,
                    &row.choice.prices,
                    &row.choice.calendar,
                )?,
                window_prices: windows,
            })
        })
        .collect::<Result<_>>()?;
    let imputed = impute_clicks(&quotes, encoding, seed)?;
    let observed_rows = observed.len();
    let imputed_rows = imputed.rows.len();
    let mut rows = observed;
    rows.extend(imputed.rows);
    let fit = fit_window_model(&rows, &config.fit)?;
    Ok(SecondLevelModel {
        catalog: config.catalog.clone(),
        params: fit.params,
        surcharge: surcharge_sum
            .iter()
            .map(|s| s / surcharge_n as f64)
            .collect(),
        grid: config.grid.clone(),
        observed_rows,
        imputed_rows,
        dropped_rows: imputed.dropped,
    })
}
