//! Auxiliary predictors the pricing objective needs: expected cost per option
//! and the probability that a booking on a given option is canceled.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::calendar::LeadTimeCalendar;
use crate::error::{Error, Result};
use crate::features::{FeatureValue, FeatureVector};
use crate::optim::{self, Bounds, Evaluation, NewtonConfig, SmoothObjective};
use crate::scalar::Scalar;

/// Per-lead-time cost curves looked up by the values of a few key features.
///
/// CSV layout: one column per key feature, then `cost_1..cost_L` in major
/// currency units. A row whose key columns are all `*` is the default curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub key_features: Vec<String>,
    pub default_curve: Vec<f64>,
    pub curves: BTreeMap<String, Vec<f64>>,
}

const KEY_SEPARATOR: &str = "|";

impl CostTable {
    pub fn constant(cost: f64, num_options: usize) -> Self {
        Self {
            key_features: Vec::new(),
            default_curve: vec![cost; num_options],
            curves: BTreeMap::new(),
        }
    }

    pub fn new(key_features: Vec<String>, default_curve: Vec<f64>) -> Result<Self> {
        check_curve(&default_curve)?;
        Ok(Self {
            key_features,
            default_curve,
            curves: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, key: &[&str], curve: Vec<f64>) -> Result<()> {
        if key.len() != self.key_features.len() {
            return Err(Error::LengthMismatch {
                what: "cost table key",
                expected: self.key_features.len(),
                found: key.len(),
            });
        }
        check_curve(&curve)?;
        self.curves.insert(key.join(KEY_SEPARATOR), curve);
        Ok(())
    }

    fn key_of(&self, x: &FeatureVector) -> String {
        self.key_features
            .iter()
            .map(|f| x.get(f).key())
            .collect::<Vec<_>>()
            .join(KEY_SEPARATOR)
    }

    /// Curve for `x`, falling back to the default curve.
    pub fn curve(&self, x: &FeatureVector) -> &[f64] {
        if self.key_features.is_empty() {
            return &self.default_curve;
        }
        let key = self.key_of(x);
        match self.curves.get(&key) {
            Some(c) => c,
            None => {
                log::debug!("no cost curve for key {key:?}; using default");
                &self.default_curve
            }
        }
    }

    /// Expected cost of every option on `calendar`.
    pub fn expected_costs<T: Scalar>(
        &self,
        x: &FeatureVector,
        calendar: &LeadTimeCalendar,
    ) -> Result<Vec<T>> {
        let curve = self.curve(x);
        let n = calendar.num_options();
        if curve.len() < n {
            return Err(Error::LengthMismatch {
                what: "cost curve",
                expected: n,
                found: curve.len(),
            });
        }
        Ok(curve[..n].iter().map(|&c| T::lit(c)).collect())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let first_cost = headers
            .iter()
            .position(|h| h.starts_with("cost_"))
            .ok_or_else(|| Error::invalid("cost table needs cost_1.. columns"))?;
        for (k, h) in headers.iter().enumerate().skip(first_cost) {
            if h != format!("cost_{}", k - first_cost + 1) {
                return Err(Error::invalid(format!(
                    "unexpected cost table column {h:?}"
                )));
            }
        }
        let key_features: Vec<String> = headers.iter().take(first_cost).map(String::from).collect();
        let mut default_curve = None;
        let mut curves = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let key: Vec<&str> = record.iter().take(first_cost).collect();
            let curve = record
                .iter()
                .skip(first_cost)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad cost value {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            check_curve(&curve)?;
            if key.iter().all(|k| *k == "*") {
                default_curve = Some(curve);
            } else {
                curves.insert(key.join(KEY_SEPARATOR), curve);
            }
        }
        let default_curve =
            default_curve.ok_or_else(|| Error::invalid("cost table has no default (*) row"))?;
        Ok(Self {
            key_features,
            default_curve,
            curves,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let width = self.default_curve.len();
        let mut header: Vec<String> = self.key_features.clone();
        header.extend((1..=width).map(|i| format!("cost_{i}")));
        w.write_record(&header)?;
        let mut row: Vec<String> = vec!["*".to_string(); self.key_features.len()];
        row.extend(self.default_curve.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
        for (key, curve) in &self.curves {
            let mut row: Vec<String> = if self.key_features.is_empty() {
                Vec::new()
            } else {
                key.split(KEY_SEPARATOR).map(String::from).collect()
            };
            row.extend(curve.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_curve(curve: &[f64]) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::Empty("cost curve"));
    }
    if curve.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid("costs must be finite and nonnegative"));
    }
    Ok(())
}

/// Probability that a booking on 1-based `option` is canceled, given the quote.
/// Prices never enter.
pub trait CancelPredictor: Sync {
    fn cancel_probability(&self, x: &FeatureVector, option: usize) -> f64;

    fn execute_probability(&self, x: &FeatureVector, option: usize) -> f64 {
        1.0 - self.cancel_probability(x, option)
    }
}

/// A predictor for "cancellations never happen".
pub struct NoCancellation;

impl CancelPredictor for NoCancellation {
    fn cancel_probability(&self, _x: &FeatureVector, _option: usize) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionEncoding {
    /// The chosen option does not enter.
    None,
    /// The 1-based option index as one numeric column.
    Linear,
    /// Indicators for options `2..=num_options` (option 1 is the baseline).
    OneHot { num_options: usize },
}

/// Which quote features and how the chosen option enter the logistic model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CancelFeatures {
    pub numeric: Vec<String>,
    /// Categorical features and their levels; the first level is the baseline.
    pub categorical: Vec<(String, Vec<String>)>,
    pub option: OptionEncoding,
}

impl CancelFeatures {
    pub fn intercept_only() -> Self {
        Self {
            numeric: Vec::new(),
            categorical: Vec::new(),
            option: OptionEncoding::None,
        }
    }

    pub fn width(&self) -> usize {
        1 + self.numeric.len()
            + self
                .categorical
                .iter()
                .map(|(_, lv)| lv.len().saturating_sub(1))
                .sum::<usize>()
            + match self.option {
                OptionEncoding::None => 0,
                OptionEncoding::Linear => 1,
                OptionEncoding::OneHot { num_options } => num_options.saturating_sub(1),
            }
    }

    /// Design row: intercept, numeric values (missing as 0), categorical
    /// indicators, option encoding.
    pub fn encode(&self, x: &FeatureVector, option: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.width());
        row.push(1.0);
        for name in &self.numeric {
            row.push(
                x.get(name)
                    .as_num()
                    .filter(|v| v.is_finite())
                    .unwrap_or(0.0),
            );
        }
        for (name, levels) in &self.categorical {
            let value = x.get(name).as_cat();
            row.extend(
                levels
                    .iter()
                    .skip(1)
                    .map(|l| f64::from(value == Some(l.as_str()))),
            );
        }
        match self.option {
            OptionEncoding::None => {}
            OptionEncoding::Linear => row.push(option as f64),
            OptionEncoding::OneHot { num_options } => {
                row.extend((2..=num_options).map(|o| f64::from(o == option)));
            }
        }
        row
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CancellationModel {
    Constant {
        rate: f64,
    },
    Logistic {
        features: CancelFeatures,
        coefficients: Vec<f64>,
        /// Absent where the information matrix is singular.
        std_errors: Vec<Option<f64>>,
    },
}

impl CancelPredictor for CancellationModel {
    fn cancel_probability(&self, x: &FeatureVector, option: usize) -> f64 {
        match self {
            CancellationModel::Constant { rate } => *rate,
            CancellationModel::Logistic {
                features,
                coefficients,
                ..
            } => {
                let z: f64 = features
                    .encode(x, option)
                    .iter()
                    .zip(coefficients)
                    .map(|(a, b)| a * b)
                    .sum();
                sigmoid(z)
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One booking for cancellation fitting.
#[derive(Clone, Debug)]
pub struct CancelRow<'a> {
    pub features: &'a FeatureVector,
    pub option: usize,
    pub canceled: bool,
}

pub const CANCEL_L2: f64 = 1e-4;
pub const CANCEL_RATE_CLIP: f64 = 1e-4;

struct PenalizedLogistic {
    design: Vec<Vec<f64>>,
    labels: Vec<f64>,
    l2: f64,
}

impl SmoothObjective<f64> for PenalizedLogistic {
    fn dim(&self) -> usize {
        self.design.first().map_or(0, |r| r.len())
    }

    fn evaluate(&self, w: &[f64], with_hessian: bool) -> Result<Evaluation<f64>> {
        let d = w.len();
        let mut value = 0.0;
        let mut gradient = vec![0.0; d];
        let mut hessian = vec![0.0; if with_hessian { d * d } else { 0 }];
        for (row, &y) in self.design.iter().zip(&self.labels) {
            let z: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            // log(1 + e^z) - y z
            value += if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            } - y * z;
            let p = sigmoid(z);
            for a in 0..d {
                gradient[a] += (p - y) * row[a];
            }
            if with_hessian {
                let s = p * (1.0 - p);
                for a in 0..d {
                    for b in 0..d {
                        hessian[a * d + b] += s * row[a] * row[b];
                    }
                }
            }
        }
        // the intercept is not penalized
        for a in 1..d {
            value += 0.5 * self.l2 * w[a] * w[a];
            gradient[a] += self.l2 * w[a];
            if with_hessian {
                hessian[a * d + a] += self.l2;
            }
        }
        Ok(Evaluation {
            value,
            gradient,
            hessian: with_hessian.then_some(hessian),
        })
    }
}

/// L2-penalized logistic regression of the cancel flag.
///
/// With a single class present the model is the empirical rate clipped to
/// `[1e-4, 1 - 1e-4]`.
pub fn fit_cancellation(
    rows: &[CancelRow<'_>],
    features: &CancelFeatures,
) -> Result<CancellationModel> {
    if rows.is_empty() {
        return Err(Error::Empty("cancellation rows"));
    }
    let canceled = rows.iter().filter(|r| r.canceled).count();
    if canceled == 0 || canceled == rows.len() {
        let rate =
            (canceled as f64 / rows.len() as f64).clamp(CANCEL_RATE_CLIP, 1.0 - CANCEL_RATE_CLIP);
        return Ok(CancellationModel::Constant { rate });
    }
    let objective = PenalizedLogistic {
        design: rows
            .iter()
            .map(|r| features.encode(r.features, r.option))
            .collect(),
        labels: rows
            .iter()
            .map(|r| f64::from(u8::from(r.canceled)))
            .collect(),
        l2: CANCEL_L2,
    };
    let d = features.width();
    let min = optim::minimize(
        &objective,
        &vec![0.0; d],
        &Bounds::unbounded(d),
        NewtonConfig {
            tolerance: 1e-8,
            max_iterations: 200,
        },
    )?;
    let std_errors = optim::inverse_diagonal(&min.hessian, d)
        .into_iter()
        .map(|v| Some(v.sqrt()).filter(|s| s.is_finite()))
        .collect();
    Ok(CancellationModel::Logistic {
        features: features.clone(),
        coefficients: min.x,
        std_errors,
    })
}

/// Categorical levels observed in `rows`, sorted, for the named features.
pub fn categorical_levels<'a>(
    rows: impl IntoIterator<Item = &'a FeatureVector>,
    names: &[String],
) -> Vec<(String, Vec<String>)> {
    let mut levels: Vec<std::collections::BTreeSet<String>> = vec![Default::default(); names.len()];
    for x in rows {
        for (k, name) in names.iter().enumerate() {
            if let FeatureValue::Cat(s) = x.get(name) {
                levels[k].insert(s.clone());
            }
        }
    }
    names
        .iter()
        .cloned()
        .zip(levels.into_iter().map(|s| s.into_iter().collect()))
        .collect()
}

/// Per-segment cancellation models with a global fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentedCancellation {
    pub global: CancellationModel,
    pub segments: BTreeMap<usize, CancellationModel>,
}

impl SegmentedCancellation {
    pub fn global_only(model: CancellationModel) -> Self {
        Self {
            global: model,
            segments: BTreeMap::new(),
        }
    }

    /// Fits a global model and one per segment that has at least `min_rows`
    /// bookings with both outcomes present.
    pub fn fit(
        rows: &[(usize, CancelRow<'_>)],
        features: &CancelFeatures,
        min_rows: usize,
    ) -> Result<Self> {
        let all: Vec<CancelRow<'_>> = rows.iter().map(|(_, r)| r.clone()).collect();
        let global = fit_cancellation(&all, features)?;
        let mut by_segment: BTreeMap<usize, Vec<CancelRow<'_>>> = BTreeMap::new();
        for (s, r) in rows {
            by_segment.entry(*s).or_default().push(r.clone());
        }
        let mut segments = BTreeMap::new();
        for (s, seg_rows) in by_segment {
            let canceled = seg_rows.iter().filter(|r| r.canceled).count();
            if seg_rows.len() >= min_rows && canceled > 0 && canceled < seg_rows.len() {
                segments.insert(s, fit_cancellation(&seg_rows, features)?);
            }
        }
        Ok(Self { global, segments })
    }

    pub fn for_segment(&self, segment: usize) -> &CancellationModel {
        self.segments.get(&segment).unwrap_or(&self.global)
    }
}
