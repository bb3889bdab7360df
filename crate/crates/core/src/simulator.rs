//! Synthetic marketplace with planted models: quotes, choices, cancellations
//! and window selections, plus evaluation metrics and A/B comparisons.

use chrono::{DateTime, Duration, Utc, Weekday};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::calendar::{weekday_from_monday, LeadTimeCalendar};
use crate::choice::{probabilities_at_prices, ChoiceObservation, MnlParams};
use crate::dataset::{LoggedSecondLevel, TrainingRow, WindowOffer};
use crate::error::{Error, Result};
use crate::features::{FeatureValue, FeatureVector};
use crate::mst::SegmentationTree;
use crate::optim::{self, Bounds, Evaluation, NewtonConfig, SmoothObjective};
use crate::predictors::{sigmoid, CancelPredictor, CancellationModel, CostTable};
use crate::pricer::{linspace, Guardrails, ObjectiveConfig};
use crate::second_level::{window_probabilities, WindowCatalog, WindowMnlParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureGenerator {
    Bernoulli {
        p: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Categorical {
        levels: Vec<String>,
        weights: Vec<f64>,
    },
    Constant {
        value: FeatureValue,
    },
}

impl FeatureGenerator {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<FeatureValue> {
        Ok(match self {
            FeatureGenerator::Bernoulli { p } => {
                FeatureValue::Num(f64::from(u8::from(rng.random::<f64>() < *p)))
            }
            FeatureGenerator::Uniform { low, high } => {
                FeatureValue::Num(low + (high - low) * rng.random::<f64>())
            }
            FeatureGenerator::Categorical { levels, weights } => {
                let dist = WeightedIndex::new(weights)
                    .map_err(|e| Error::invalid(format!("categorical weights: {e}")))?;
                FeatureValue::Cat(levels[dist.sample(rng)].clone())
            }
            FeatureGenerator::Constant { value } => value.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalendarGenerator {
    pub num_options: usize,
    /// Probability that an option is not offered.
    pub unavailable_prob: f64,
    /// Fixed start day; uniform over the week when absent.
    pub start_day: Option<Weekday>,
}

impl CalendarGenerator {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<LeadTimeCalendar> {
        let start = match self.start_day {
            Some(d) => d,
            None => weekday_from_monday(rng.random_range(0..7)),
        };
        let mut available: Vec<bool> = (0..self.num_options)
            .map(|_| rng.random::<f64>() >= self.unavailable_prob)
            .collect();
        if !available.iter().any(|&a| a) {
            let k = rng.random_range(0..self.num_options);
            available[k] = true;
        }
        LeadTimeCalendar::with_availability(start, available)
    }
}

/// Planted window choice; window `j` costs `c_i + surcharge_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSecondLevel {
    pub catalog: WindowCatalog,
    pub params: WindowMnlParams<f64>,
    pub surcharge: Vec<f64>,
}

impl PlantedSecondLevel {
    pub fn window_costs(&self, costs: &[f64]) -> Vec<Vec<f64>> {
        costs
            .iter()
            .map(|&c| self.surcharge.iter().map(|&s| c + s).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tree: SegmentationTree<f64>,
    pub features: Vec<(String, FeatureGenerator)>,
    pub calendar: CalendarGenerator,
    pub costs: CostTable,
    pub cancellation: CancellationModel,
    pub second_level: Option<PlantedSecondLevel>,
    pub start_time: DateTime<Utc>,
    pub quote_interval_secs: i64,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        for params in self.tree.segments() {
            params.check_bounds()?;
        }
        if let Some(s) = &self.second_level {
            s.params.check()?;
            if s.surcharge.len() != s.catalog.len() || s.params.num_windows() != s.catalog.len() {
                return Err(Error::invalid("planted windows disagree with the catalog"));
            }
        }
        Ok(())
    }

    pub fn num_options(&self) -> usize {
        self.calendar.num_options
    }
}

/// Everything a pricing policy sees for one quote. Money is in currency units.
pub struct QuoteContext<'a> {
    pub index: u64,
    pub features: &'a FeatureVector,
    pub calendar: &'a LeadTimeCalendar,
    pub costs: &'a [f64],
    /// `window_costs[i - 1][j - 1]`, present when windows are offered.
    pub window_costs: Option<&'a [Vec<f64>]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PricedQuote {
    pub prices: Vec<f64>,
    pub windows: Option<Vec<Vec<f64>>>,
}

pub trait QuotePricer: Sync {
    fn price(&self, ctx: &QuoteContext<'_>) -> Result<PricedQuote>;
}

pub struct FixedPrices(pub Vec<f64>);

impl QuotePricer for FixedPrices {
    fn price(&self, ctx: &QuoteContext<'_>) -> Result<PricedQuote> {
        if self.0.len() != ctx.costs.len() {
            return Err(Error::LengthMismatch {
                what: "fixed prices",
                expected: ctx.costs.len(),
                found: self.0.len(),
            });
        }
        Ok(PricedQuote {
            prices: self.0.clone(),
            windows: None,
        })
    }
}

pub struct CostPlus {
    pub markup: f64,
}

impl QuotePricer for CostPlus {
    fn price(&self, ctx: &QuoteContext<'_>) -> Result<PricedQuote> {
        Ok(PricedQuote {
            prices: ctx.costs.iter().map(|c| c + self.markup).collect(),
            windows: None,
        })
    }
}

/// Cost plus a markup drawn uniformly from `[low, high]` per option.
pub struct RandomExploration {
    pub low: f64,
    pub high: f64,
    pub seed: u64,
}

impl QuotePricer for RandomExploration {
    fn price(&self, ctx: &QuoteContext<'_>) -> Result<PricedQuote> {
        let mut rng = stream(self.seed, ctx.index);
        Ok(PricedQuote {
            prices: ctx
                .costs
                .iter()
                .map(|c| (c + rng.random_range(self.low..=self.high)).max(0.0))
                .collect(),
            windows: None,
        })
    }
}

/// Per-option price search against a per-option conversion curve
/// `sigmoid(a_i - b_i p)` fitted without substitution or reference effects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegacyPricer {
    pub curves: Vec<(f64, f64)>,
    pub guardrails: Guardrails<f64>,
    pub grid_points: usize,
    pub objective: ObjectiveConfig,
}

struct BinaryLogistic<'a> {
    rows: &'a [(f64, bool)],
}

impl SmoothObjective<f64> for BinaryLogistic<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, theta: &[f64], with_hessian: bool) -> Result<Evaluation<f64>> {
        let mut value = 0.0;
        let mut g = [0.0; 2];
        let mut h = [0.0; 4];
        for &(p, y) in self.rows {
            let f = [1.0, -p];
            let z = theta[0] + theta[1] * f[1];
            let s = sigmoid(z);
            value += if y { -log_sigmoid(z) } else { -log_sigmoid(-z) };
            let r = s - f64::from(u8::from(y));
            for a in 0..2 {
                g[a] += r * f[a];
                for b in 0..2 {
                    h[a * 2 + b] += s * (1.0 - s) * f[a] * f[b];
                }
            }
        }
        Ok(Evaluation {
            value,
            gradient: g.to_vec(),
            hessian: with_hessian.then(|| h.to_vec()),
        })
    }
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

impl LegacyPricer {
    /// Fits one curve per option from logged quotes where the option was offered.
    pub fn fit(
        rows: &[TrainingRow<f64>],
        guardrails: Guardrails<f64>,
        grid_points: usize,
        objective: ObjectiveConfig,
    ) -> Result<Self> {
        let l = guardrails.len();
        let mut curves = Vec::with_capacity(l);
        for k in 0..l {
            let data: Vec<(f64, bool)> = rows
                .iter()
                .filter(|r| r.choice.num_options() == l && r.choice.calendar.availability()[k])
                .map(|r| (r.choice.prices[k], r.choice.chosen == k + 1))
                .collect();
            let hits = data.iter().filter(|d| d.1).count();
            if hits == 0 || hits == data.len() {
                return Err(Error::Unidentifiable {
                    reason: format!("legacy curve for option {} has a single outcome", k + 1),
                    buckets: Vec::new(),
                });
            }
            let mut bounds = Bounds::unbounded(2);
            bounds.lower[1] = 1e-6;
            let min = optim::minimize(
                &BinaryLogistic { rows: &data },
                &[0.0, 1e-6],
                &bounds,
                NewtonConfig {
                    tolerance: 1e-8,
                    max_iterations: 200,
                },
            )?;
            curves.push((min.x[0], min.x[1]));
        }
        Ok(Self {
            curves,
            guardrails,
            grid_points,
            objective,
        })
    }
}

impl QuotePricer for LegacyPricer {
    fn price(&self, ctx: &QuoteContext<'_>) -> Result<PricedQuote> {
        if ctx.costs.len() != self.curves.len() {
            return Err(Error::LengthMismatch {
                what: "legacy options",
                expected: self.curves.len(),
                found: ctx.costs.len(),
            });
        }
        let prices = (0..self.curves.len())
            .map(|k| {
                let (a, b) = self.curves[k];
                let grid = linspace(
                    self.guardrails.floor[k],
                    self.guardrails.ceiling[k],
                    self.grid_points,
                );
                let value =
                    |p: f64| sigmoid(a - b * p) * self.objective.booking_value(p, ctx.costs[k]);
                grid.into_iter()
                    .fold((f64::NEG_INFINITY, 0.0), |(bv, bp), p| {
                        let v = value(p);
                        if v > bv {
                            (v, p)
                        } else {
                            (bv, bp)
                        }
                    })
                    .1
            })
            .collect();
        Ok(PricedQuote {
            prices,
            windows: None,
        })
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for a named purpose under one master seed.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    splitmix64(master ^ splitmix64(label))
}

/// The random stream of quote `index`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

const QUOTE_STREAM: u64 = 1;
const ARM_STREAM: u64 = 2;

pub fn to_cents(amount: f64) -> i64 {
    (amount * 100.0).round() as i64
}

pub fn from_cents(cents: i64) -> f64 {
    cents as f64 / 100.0
}

fn round_money(amount: f64) -> f64 {
    from_cents(to_cents(amount))
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Simulates quote `index` under `pricer`.
pub fn simulate_quote(
    truth: &GroundTruth,
    index: u64,
    seed: u64,
    pricer: &dyn QuotePricer,
) -> Result<(TrainingRow<f64>, usize)> {
    let mut rng = stream(derive_seed(seed, QUOTE_STREAM), index);
    let mut features = FeatureVector::new();
    for (name, generator) in &truth.features {
        features.insert(name, generator.sample(&mut rng)?);
    }
    let calendar = truth.calendar.sample(&mut rng)?;
    let costs: Vec<f64> = truth
        .costs
        .expected_costs::<f64>(&features, &calendar)?
        .into_iter()
        .map(round_money)
        .collect();
    let window_costs: Option<Vec<Vec<f64>>> = truth.second_level.as_ref().map(|s| {
        s.window_costs(&costs)
            .into_iter()
            .map(|row| row.into_iter().map(round_money).collect())
            .collect()
    });
    let quoted = pricer.price(&QuoteContext {
        index,
        features: &features,
        calendar: &calendar,
        costs: &costs,
        window_costs: window_costs.as_deref(),
    })?;
    if quoted.prices.len() != costs.len() {
        return Err(Error::LengthMismatch {
            what: "quoted prices",
            expected: costs.len(),
            found: quoted.prices.len(),
        });
    }
    if quoted.prices.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid(
            "pricing policy returned a negative or non-finite price",
        ));
    }
    let prices: Vec<f64> = quoted.prices.iter().map(|&p| round_money(p)).collect();
    let (segment, params) = truth.tree.route(&features);
    let probs = probabilities_at_prices(params, &prices, &calendar)?;
    let mut chosen = sample_index(&probs, rng.random::<f64>());

    let mut second_level = None;
    if let (Some(planted), Some(wc)) = (&truth.second_level, &window_costs) {
        let window_prices: Vec<Vec<f64>> = match &quoted.windows {
            Some(w) => w
                .iter()
                .map(|row| row.iter().map(|&p| round_money(p)).collect())
                .collect(),
            None => prices
                .iter()
                .map(|&p| {
                    planted
                        .surcharge
                        .iter()
                        .map(|&s| round_money(p + s))
                        .collect()
                })
                .collect(),
        };
        let windows: Vec<Vec<WindowOffer<f64>>> = (0..prices.len())
            .map(|k| {
                if calendar.availability()[k] {
                    window_prices[k]
                        .iter()
                        .zip(&wc[k])
                        .map(|(&price, &cost)| WindowOffer { price, cost })
                        .collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        let mut chosen_window = 0;
        if chosen > 0 {
            let x = planted.params.encoding.encode(&features, chosen);
            let wp = window_probabilities(&planted.params, &x, &window_prices[chosen - 1])?;
            chosen_window = sample_index(&wp, rng.random::<f64>());
            if chosen_window == 0 {
                chosen = 0;
            }
        }
        second_level = Some(LoggedSecondLevel {
            clicked: (chosen > 0).then_some(chosen),
            windows,
            chosen_window,
        });
    }
    let canceled = chosen > 0
        && rng.random::<f64>() < truth.cancellation.cancel_probability(&features, chosen);

    let row = TrainingRow {
        quote_id: format!("q{index:09}"),
        timestamp: truth.start_time + Duration::seconds(truth.quote_interval_secs * index as i64),
        features,
        choice: ChoiceObservation::new(calendar, prices, chosen)?,
        costs,
        canceled,
        second_level,
    };
    Ok((row, segment))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimLog {
    pub rows: Vec<TrainingRow<f64>>,
    /// Planted segment of each row.
    pub segments: Vec<usize>,
    pub quotes: usize,
    pub conversions: usize,
    pub cancellations: usize,
}

impl SimLog {
    fn from_rows(rows: Vec<TrainingRow<f64>>, segments: Vec<usize>) -> Self {
        let conversions = rows.iter().filter(|r| r.choice.chosen > 0).count();
        let cancellations = rows.iter().filter(|r| r.canceled).count();
        Self {
            quotes: rows.len(),
            rows,
            segments,
            conversions,
            cancellations,
        }
    }
}

/// `n` quotes, one random stream per quote; identical for identical inputs.
pub fn generate_quotes(
    truth: &GroundTruth,
    n: usize,
    pricer: &dyn QuotePricer,
    seed: u64,
) -> Result<SimLog> {
    if n == 0 {
        return Err(Error::Empty("quote count"));
    }
    truth.validate()?;
    let out: Vec<(TrainingRow<f64>, usize)> = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_quote(truth, i, seed, pricer))
        .collect::<Result<_>>()?;
    let (rows, segments) = out.into_iter().unzip();
    Ok(SimLog::from_rows(rows, segments))
}

/// Realized generalized objective of one logged quote: the booking value of
/// the purchased option (or window) unless canceled.
pub fn realized_objective(row: &TrainingRow<f64>, objective: &ObjectiveConfig) -> f64 {
    let i = row.choice.chosen;
    if i == 0 || (objective.include_cancellation && row.canceled) {
        return 0.0;
    }
    if let Some(sl) = &row.second_level {
        if sl.chosen_window > 0 {
            let w = sl.windows[i - 1][sl.chosen_window - 1];
            return objective.booking_value(w.price, w.cost);
        }
    }
    objective.booking_value(row.choice.prices[i - 1], row.costs[i - 1])
}

/// Mean over rows of `sum_i (P_i - 1{Y = i})^2`.
pub fn brier_score(predicted: &[Vec<f64>], outcomes: &[usize]) -> Result<f64> {
    if predicted.len() != outcomes.len() {
        return Err(Error::LengthMismatch {
            what: "outcomes",
            expected: predicted.len(),
            found: outcomes.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let mut total = 0.0;
    for (row, (p, &y)) in predicted.iter().zip(outcomes).enumerate() {
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "row {row} is not a probability distribution"
            )));
        }
        if y >= p.len() {
            return Err(Error::IndexOutOfRange {
                index: y,
                len: p.len(),
            });
        }
        total += p
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let d = v - f64::from(u8::from(k == y));
                d * d
            })
            .sum::<f64>();
    }
    Ok(total / predicted.len() as f64)
}

/// A model of `[P(Y = 0), ..., P(Y = L)]` for a logged quote.
pub trait ChoicePredictor: Sync {
    fn predict(&self, row: &TrainingRow<f64>) -> Result<Vec<f64>>;
}

impl ChoicePredictor for MnlParams<f64> {
    fn predict(&self, row: &TrainingRow<f64>) -> Result<Vec<f64>> {
        probabilities_at_prices(self, &row.choice.prices, &row.choice.calendar)
    }
}

impl ChoicePredictor for SegmentationTree<f64> {
    fn predict(&self, row: &TrainingRow<f64>) -> Result<Vec<f64>> {
        self.route(&row.features).1.predict(row)
    }
}

/// Historical conversion frequency of each lead time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveBaseline {
    pub rates: Vec<f64>,
}

impl NaiveBaseline {
    /// Options never chosen get half a count so predictions stay positive.
    pub fn fit(rows: &[TrainingRow<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("training rows"))?;
        let l = first.choice.num_options();
        let mut counts = vec![0usize; l];
        for r in rows {
            if r.choice.num_options() != l {
                return Err(Error::LengthMismatch {
                    what: "options",
                    expected: l,
                    found: r.choice.num_options(),
                });
            }
            if r.choice.chosen > 0 {
                counts[r.choice.chosen - 1] += 1;
            }
        }
        let n = rows.len() as f64;
        Ok(Self {
            rates: counts
                .iter()
                .map(|&c| if c == 0 { 0.5 / n } else { c as f64 / n })
                .collect(),
        })
    }
}

impl ChoicePredictor for NaiveBaseline {
    fn predict(&self, row: &TrainingRow<f64>) -> Result<Vec<f64>> {
        let avail = row.choice.calendar.availability();
        if avail.len() != self.rates.len() {
            return Err(Error::LengthMismatch {
                what: "options",
                expected: self.rates.len(),
                found: avail.len(),
            });
        }
        let mut p: Vec<f64> = std::iter::once(0.0)
            .chain(
                self.rates
                    .iter()
                    .zip(avail)
                    .map(|(&r, &a)| if a { r } else { 0.0 }),
            )
            .collect();
        let buy: f64 = p[1..].iter().sum();
        if buy >= 1.0 {
            p[1..].iter_mut().for_each(|v| *v /= buy + 1e-12);
        }
        p[0] = 1.0 - p[1..].iter().sum::<f64>();
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub rows: usize,
    /// Summed negative log-likelihood.
    pub nll: f64,
    pub brier: f64,
    /// Observed share of quotes converting on each lead time.
    pub conversion_rates: Vec<f64>,
}

pub fn evaluate_models(
    holdout: &[TrainingRow<f64>],
    models: &[(&str, &dyn ChoicePredictor)],
) -> Result<Vec<MetricsReport>> {
    if holdout.is_empty() {
        return Err(Error::Empty("holdout"));
    }
    let l = holdout[0].choice.num_options();
    let mut conv = vec![0.0; l];
    for r in holdout {
        if r.choice.chosen > 0 && r.choice.chosen <= l {
            conv[r.choice.chosen - 1] += 1.0;
        }
    }
    conv.iter_mut().for_each(|c| *c /= holdout.len() as f64);
    let outcomes: Vec<usize> = holdout.iter().map(|r| r.choice.chosen).collect();
    models
        .iter()
        .map(|(name, model)| {
            let preds: Vec<Vec<f64>> = holdout
                .par_iter()
                .map(|r| model.predict(r))
                .collect::<Result<_>>()?;
            let nll = preds
                .iter()
                .zip(&outcomes)
                .map(|(p, &y)| -p[y].ln())
                .sum::<f64>();
            Ok(MetricsReport {
                name: name.to_string(),
                rows: holdout.len(),
                nll,
                brier: brier_score(&preds, &outcomes)?,
                conversion_rates: conv.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub quotes: usize,
    pub conversions: usize,
    pub cancellations: usize,
    pub mean_objective: f64,
    pub std_dev: f64,
}

impl ArmReport {
    fn from_values(rows: &[&TrainingRow<f64>], values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            quotes: values.len(),
            conversions: rows.iter().filter(|r| r.choice.chosen > 0).count(),
            cancellations: rows.iter().filter(|r| r.canceled).count(),
            mean_objective: mean,
            std_dev: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbReport {
    pub arm_a: ArmReport,
    pub arm_b: ArmReport,
    /// `mean_b - mean_a`.
    pub difference: f64,
    pub std_error: f64,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    /// Two-sided Welch p-value.
    pub p_value: f64,
}

/// Welch's unequal-variance t-test of `mean(b) - mean(a)`.
pub fn welch_test(a: &ArmReport, b: &ArmReport) -> Result<(f64, f64, f64, f64, f64)> {
    if a.quotes < 2 || b.quotes < 2 {
        return Err(Error::Empty("A/B arm"));
    }
    let va = a.std_dev.powi(2) / a.quotes as f64;
    let vb = b.std_dev.powi(2) / b.quotes as f64;
    let diff = b.mean_objective - a.mean_objective;
    let se = (va + vb).sqrt();
    if se == 0.0 {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        return Ok((
            diff,
            0.0,
            if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            },
            f64::INFINITY,
            p,
        ));
    }
    let t = diff / se;
    let dof = (va + vb).powi(2)
        / (va.powi(2) / (a.quotes as f64 - 1.0) + vb.powi(2) / (b.quotes as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::invalid(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((diff, se, t, dof, p))
}

/// Randomizes each quote into arm A with probability `split`, otherwise B.
/// A quote's features and random draws do not depend on its arm.
pub fn ab_compare(
    truth: &GroundTruth,
    policy_a: &dyn QuotePricer,
    policy_b: &dyn QuotePricer,
    n: usize,
    split: f64,
    seed: u64,
    objective: &ObjectiveConfig,
) -> Result<AbReport> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::invalid(format!("split {split} not in (0, 1)")));
    }
    if n == 0 {
        return Err(Error::Empty("quote count"));
    }
    truth.validate()?;
    let arm_seed = derive_seed(seed, ARM_STREAM);
    let rows: Vec<(bool, TrainingRow<f64>)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let in_a = stream(arm_seed, i).random::<f64>() < split;
            let pricer = if in_a { policy_a } else { policy_b };
            simulate_quote(truth, i, seed, pricer).map(|(row, _)| (in_a, row))
        })
        .collect::<Result<_>>()?;
    let (a_rows, b_rows): (Vec<_>, Vec<_>) = rows.iter().partition(|(a, _)| *a);
    if a_rows.is_empty() || b_rows.is_empty() {
        return Err(Error::Empty("A/B arm"));
    }
    let arm = |rows: &[&(bool, TrainingRow<f64>)]| {
        let r: Vec<&TrainingRow<f64>> = rows.iter().map(|(_, r)| r).collect();
        let v: Vec<f64> = r
            .iter()
            .map(|row| realized_objective(row, objective))
            .collect();
        ArmReport::from_values(&r, &v)
    };
    let arm_a = arm(&a_rows);
    let arm_b = arm(&b_rows);
    let (difference, std_error, t_statistic, degrees_of_freedom, p_value) =
        welch_test(&arm_a, &arm_b)?;
    Ok(AbReport {
        arm_a,
        arm_b,
        difference,
        std_error,
        t_statistic,
        degrees_of_freedom,
        p_value,
    })
}

/// Ready-made ground truths.
pub mod scenarios {
    use super::*;
    use crate::choice::BucketScheme;
    use crate::mst::Predicate;
    use crate::predictors::{CancelFeatures, OptionEncoding};
    use crate::second_level::WindowEncoding;
    use chrono::TimeZone;

    fn epoch() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0)
            .single()
            .expect("valid date")
    }

    fn costs(l: usize) -> CostTable {
        let mut table = CostTable::new(
            vec!["region".into()],
            (0..l).map(|k| 20.0 - 0.5 * k as f64).collect(),
        )
        .expect("valid default curve");
        for (region, base) in [("north", 20.0), ("south", 24.0), ("west", 18.0)] {
            table
                .insert(&[region], (0..l).map(|k| base - 0.5 * k as f64).collect())
                .expect("valid curve");
        }
        table
    }

    fn features() -> Vec<(String, FeatureGenerator)> {
        vec![
            ("business".into(), FeatureGenerator::Bernoulli { p: 0.5 }),
            (
                "region".into(),
                FeatureGenerator::Categorical {
                    levels: vec!["north".into(), "south".into(), "west".into()],
                    weights: vec![0.4, 0.35, 0.25],
                },
            ),
            (
                "distance".into(),
                FeatureGenerator::Uniform {
                    low: 1.0,
                    high: 50.0,
                },
            ),
        ]
    }

    fn cancellation() -> CancellationModel {
        CancellationModel::Logistic {
            features: CancelFeatures {
                numeric: vec!["business".into()],
                categorical: Vec::new(),
                option: OptionEncoding::Linear,
            },
            coefficients: vec![-2.5, -0.5, 0.05],
            std_errors: vec![None; 3],
        }
    }

    /// One segment with strong reference effects.
    pub fn reference_effect(num_options: usize) -> GroundTruth {
        let params = MnlParams::uniform(
            [0.6, -0.05, 0.0],
            0.10,
            0.08,
            BucketScheme::for_horizon(num_options),
        )
        .expect("valid planted parameters");
        GroundTruth {
            tree: SegmentationTree::single(params),
            features: features(),
            calendar: CalendarGenerator {
                num_options,
                unavailable_prob: 0.1,
                start_day: None,
            },
            costs: costs(num_options),
            cancellation: cancellation(),
            second_level: None,
            start_time: epoch(),
            quote_interval_secs: 30,
        }
    }

    /// Two segments split on the binary `business` feature.
    pub fn two_segment(num_options: usize) -> GroundTruth {
        let left = MnlParams::uniform(
            [0.5, -0.04, 0.0],
            0.05,
            0.05,
            BucketScheme::for_horizon(num_options),
        )
        .expect("valid");
        let right = MnlParams::uniform(
            [0.9, -0.05, 0.0],
            0.20,
            0.05,
            BucketScheme::for_horizon(num_options),
        )
        .expect("valid");
        GroundTruth {
            tree: SegmentationTree::stump("business", Predicate::AtMost(0.5), left, right),
            ..reference_effect(num_options)
        }
    }

    /// [`reference_effect`] with eight 3-hour windows per day.
    pub fn with_windows(num_options: usize) -> GroundTruth {
        let catalog = WindowCatalog::uniform(3).expect("sanctioned width");
        let m = catalog.len();
        let params = WindowMnlParams::new(
            vec![1.5; m],
            0.15,
            vec![-0.02],
            -0.05,
            WindowEncoding::default(),
        )
        .expect("valid planted window model");
        GroundTruth {
            second_level: Some(PlantedSecondLevel {
                surcharge: (0..m).map(|j| [0.0, 1.0, 2.0, 3.0][j % 4]).collect(),
                catalog,
                params,
            }),
            ..reference_effect(num_options)
        }
    }
}
