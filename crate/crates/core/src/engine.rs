//! Quote pricing against a loaded artifact. Shared by the CLI, the HTTP
//! service and the simulator.

use std::path::Path;

use chrono::Weekday;
use serde::{Deserialize, Serialize};

use crate::artifact::ModelArtifact;
use crate::calendar::LeadTimeCalendar;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::pricer::{optimize_two_param, PricingProblem};
use crate::second_level::price_windows;
use crate::simulator::{from_cents, to_cents, PricedQuote, QuoteContext, QuotePricer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuoteRequest {
    pub features: FeatureVector,
    pub start_day: Weekday,
    /// Defaults to every option offered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available: Option<Vec<bool>>,
    /// Cost per option in cents; defaults to the artifact's cost table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<i64>>,
    #[serde(default)]
    pub second_level: bool,
    /// `window_costs[i - 1][j - 1]` in cents; defaults to the option cost plus
    /// the model's window surcharges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_costs: Option<Vec<Vec<i64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuoteResponse {
    /// Price per option in cents.
    pub prices: Vec<i64>,
    pub segment: usize,
    pub model_version: String,
    pub min_price: f64,
    pub markup: f64,
    pub expected_objective: f64,
    /// Window prices in cents per lead time; empty for options not offered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<Vec<i64>>>,
}

/// Prices in currency units, rounded to cents.
#[derive(Clone, Debug, PartialEq)]
pub struct EnginePrices {
    pub segment: usize,
    pub prices: Vec<f64>,
    pub min_price: f64,
    pub markup: f64,
    pub objective: f64,
    pub windows: Option<Vec<Vec<f64>>>,
}

pub struct QuoteEngine {
    artifact: ModelArtifact,
    version: String,
}

fn round_money(v: f64) -> f64 {
    from_cents(to_cents(v))
}

impl QuoteEngine {
    pub fn new(artifact: ModelArtifact, version: String) -> Result<Self> {
        artifact.validate()?;
        Ok(Self { artifact, version })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (artifact, version) = ModelArtifact::load(path)?;
        Self::new(artifact, version)
    }

    pub fn artifact(&self) -> &ModelArtifact {
        &self.artifact
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn num_options(&self) -> usize {
        self.artifact.guardrails.len()
    }

    /// Routes, optimizes the two-parameter policy and, when `window_costs` is
    /// given and the artifact has a window model, prices every window.
    pub fn price(
        &self,
        x: &FeatureVector,
        calendar: &LeadTimeCalendar,
        costs: &[f64],
        window_costs: Option<&[Vec<f64>]>,
    ) -> Result<EnginePrices> {
        let a = &self.artifact;
        a.feature_schema.check(x)?;
        if calendar.num_options() != a.guardrails.len() {
            return Err(Error::LengthMismatch {
                what: "calendar options",
                expected: a.guardrails.len(),
                found: calendar.num_options(),
            });
        }
        let windows_model = window_costs.and(a.second_level.as_ref());
        let first_costs: Vec<f64> = match (windows_model, window_costs) {
            (Some(_), Some(wc)) => {
                if wc.len() != costs.len() || wc.iter().any(|w| w.is_empty()) {
                    return Err(Error::invalid("window costs must cover every option"));
                }
                wc.iter()
                    .map(|w| w.iter().copied().fold(f64::INFINITY, f64::min))
                    .collect()
            }
            _ => costs.to_vec(),
        };
        let (segment, params) = a.tree.route(x);
        let cancel = a.cancellation.for_segment(segment);
        let problem = PricingProblem::new(x, params, &first_costs, cancel, calendar, a.objective)?;
        let opt = optimize_two_param(&problem, &a.guardrails, &a.grid)?;
        let prices: Vec<f64> = opt.prices.iter().map(|&p| round_money(p)).collect();

        let windows = match (windows_model, window_costs) {
            (Some(model), Some(wc)) => Some(
                (0..prices.len())
                    .map(|k| {
                        if !calendar.availability()[k] {
                            return Ok(Vec::new());
                        }
                        if wc[k].len() != model.catalog.len() {
                            return Err(Error::LengthMismatch {
                                what: "window costs",
                                expected: model.catalog.len(),
                                found: wc[k].len(),
                            });
                        }
                        let xw = model.params.encoding.encode(x, k + 1);
                        let priced = price_windows(
                            prices[k],
                            &wc[k],
                            &model.params,
                            &xw,
                            a.guardrails.ceiling[k],
                            &model.grid,
                        )?;
                        Ok(priced.prices.into_iter().map(round_money).collect())
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(EnginePrices {
            segment,
            prices,
            min_price: opt.policy.min_price,
            markup: opt.policy.markup,
            objective: opt.objective,
            windows,
        })
    }

    pub fn quote(&self, request: &QuoteRequest) -> Result<QuoteResponse> {
        let n = self.num_options();
        let available = request.available.clone().unwrap_or_else(|| vec![true; n]);
        let calendar = LeadTimeCalendar::with_availability(request.start_day, available)?;
        let cents_to_money = |v: &[i64]| -> Result<Vec<f64>> {
            v.iter()
                .map(|&c| {
                    if c < 0 {
                        Err(Error::invalid("costs must be non-negative"))
                    } else {
                        Ok(from_cents(c))
                    }
                })
                .collect()
        };
        let costs = match &request.costs {
            Some(c) => cents_to_money(c)?,
            None => self
                .artifact
                .costs
                .expected_costs(&request.features, &calendar)?,
        };
        let window_costs: Option<Vec<Vec<f64>>> =
            match (&self.artifact.second_level, request.second_level) {
                (_, false) => None,
                (None, true) => return Err(Error::invalid("artifact has no second-level model")),
                (Some(model), true) => Some(match &request.window_costs {
                    Some(wc) => wc
                        .iter()
                        .map(|w| cents_to_money(w))
                        .collect::<Result<_>>()?,
                    None => model
                        .window_costs(&costs)
                        .into_iter()
                        .map(|w| w.into_iter().map(round_money).collect())
                        .collect(),
                }),
            };
        let priced = self.price(
            &request.features,
            &calendar,
            &costs,
            window_costs.as_deref(),
        )?;
        Ok(QuoteResponse {
            prices: priced.prices.iter().map(|&p| to_cents(p)).collect(),
            segment: priced.segment,
            model_version: self.version.clone(),
            min_price: priced.min_price,
            markup: priced.markup,
            expected_objective: priced.objective,
            windows: priced.windows.map(|w| {
                w.iter()
                    .map(|row| row.iter().map(|&p| to_cents(p)).collect())
                    .collect()
            }),
        })
    }
}

impl QuotePricer for QuoteEngine {
    fn price(&self, ctx: &QuoteContext<'_>) -> Result<PricedQuote> {
        let priced = QuoteEngine::price(
            self,
            ctx.features,
            ctx.calendar,
            ctx.costs,
            ctx.window_costs,
        )?;
        Ok(PricedQuote {
            prices: priced.prices,
            windows: priced.windows,
        })
    }
}
