//! In-memory training rows built from quote logs.

use chrono::{DateTime, Utc};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::choice::ChoiceObservation;
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureVector};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WindowOffer<T> {
    pub price: T,
    pub cost: T,
}

/// Time-window detail logged with a quote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LoggedSecondLevel<T> {
    /// Lead time the customer opened; unknown for unconverted quotes.
    pub clicked: Option<usize>,
    /// `windows[i - 1]` holds the window offers of lead time `i` (empty when
    /// not logged for that lead time).
    pub windows: Vec<Vec<WindowOffer<T>>>,
    /// 0 for no purchase, otherwise the 1-based window.
    pub chosen_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainingRow<T> {
    pub quote_id: String,
    pub timestamp: DateTime<Utc>,
    pub features: FeatureVector,
    pub choice: ChoiceObservation<T>,
    pub costs: Vec<T>,
    pub canceled: bool,
    pub second_level: Option<LoggedSecondLevel<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet<T> {
    pub schema: FeatureSchema,
    pub rows: Vec<TrainingRow<T>>,
}

impl<T: Scalar> TrainingSet<T> {
    /// Builds a set, inferring the feature schema from the rows.
    pub fn new(rows: Vec<TrainingRow<T>>) -> Result<Self> {
        let schema = FeatureSchema::infer(rows.iter().map(|r| &r.features))?;
        Ok(Self { schema, rows })
    }

    pub fn with_schema(schema: FeatureSchema, rows: Vec<TrainingRow<T>>) -> Self {
        Self { schema, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = &ChoiceObservation<T>> {
        self.rows.iter().map(|r| &r.choice)
    }

    /// Rows with `start <= timestamp < end`.
    pub fn window(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| r.timestamp >= start && r.timestamp < end)
                .cloned()
                .collect(),
        }
    }

    /// Random split into (train, holdout) with `fraction` of rows held out.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid(format!(
                "holdout fraction {fraction} not in (0, 1)"
            )));
        }
        let n = self.rows.len();
        let k = ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hold = vec![false; n];
        for i in sample(&mut rng, n, k.min(n)).into_iter() {
            hold[i] = true;
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (row, h) in self.rows.iter().zip(hold) {
            if h {
                b.push(row.clone());
            } else {
                a.push(row.clone());
            }
        }
        Ok((
            Self::with_schema(self.schema.clone(), a),
            Self::with_schema(self.schema.clone(), b),
        ))
    }
}

/// Uniform sample without replacement of `ceil(fraction * N)` rows, kept in
/// their original order.
pub fn subsample<T: Scalar>(
    data: &TrainingSet<T>,
    fraction: f64,
    seed: u64,
) -> Result<TrainingSet<T>> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "subsample fraction {fraction} not in (0, 1]"
        )));
    }
    let n = data.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    if k == n {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(TrainingSet::with_schema(
        data.schema.clone(),
        picked.into_iter().map(|i| data.rows[i].clone()).collect(),
    ))
}
