//! Expected-objective evaluation and the two-parameter price policy.
//!
//! Every option is priced at `max(m1, c_i + 1/(beta_i + gamma_i) + m2)` and
//! then clipped to its guardrails; `(m1, m2)` is found by grid search.

use serde::{Deserialize, Serialize};

use crate::calendar::{reference_prices, LeadTimeCalendar};
use crate::choice::{softmax_with_outside, utilities_with_map, BucketMap, MnlParams};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::predictors::CancelPredictor;
use crate::scalar::{ordered_sum, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Reference prices follow the candidate prices.
    #[default]
    Recompute,
    /// Reference prices are computed once from the cost-plus prices
    /// `c_i + 1/(beta_i + gamma_i)` and held fixed.
    FrozenAtCostPlus,
}

/// Mixture weight `alpha`: 0 is profit, 0.5 revenue (scaled by one half), 1
/// cost-weighted conversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub include_cancellation: bool,
    #[serde(default)]
    pub reference: ReferenceMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            include_cancellation: true,
            reference: ReferenceMode::Recompute,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha {} not in [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Per-booking value `(1 - alpha)(p - c) + alpha c`.
    pub fn booking_value<T: Scalar>(&self, price: T, cost: T) -> T {
        let a = T::lit(self.alpha);
        (T::one() - a) * (price - cost) + a * cost
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Guardrails<T> {
    pub floor: Vec<T>,
    pub ceiling: Vec<T>,
}

impl<T: Scalar> Guardrails<T> {
    pub fn new(floor: Vec<T>, ceiling: Vec<T>) -> Result<Self> {
        if floor.len() != ceiling.len() {
            return Err(Error::LengthMismatch {
                what: "guardrail ceiling",
                expected: floor.len(),
                found: ceiling.len(),
            });
        }
        for (f, c) in floor.iter().zip(&ceiling) {
            if f.is_nan() || c.is_nan() || *f < T::zero() || f > c {
                return Err(Error::invalid("guardrails need 0 <= floor <= ceiling"));
            }
        }
        Ok(Self { floor, ceiling })
    }

    pub fn uniform(num_options: usize, floor: T, ceiling: T) -> Result<Self> {
        Self::new(vec![floor; num_options], vec![ceiling; num_options])
    }

    pub fn len(&self) -> usize {
        self.floor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.floor.is_empty()
    }

    pub fn clip(&self, k: usize, price: T) -> T {
        price.max(self.floor[k]).min(self.ceiling[k])
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.floor.len() != n {
            return Err(Error::LengthMismatch {
                what: "guardrails",
                expected: n,
                found: self.floor.len(),
            });
        }
        Ok(())
    }
}

/// Minimum price `m1` and markup `m2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PricingPolicy<T> {
    pub min_price: T,
    pub markup: T,
}

fn markup_offsets<T: Scalar>(params: &MnlParams<T>, map: &BucketMap) -> Result<Vec<T>> {
    map.as_slice()
        .iter()
        .map(|&b| {
            let s = params.beta[b] + params.gamma[b];
            if !(s > T::zero()) {
                return Err(Error::invalid(format!(
                    "beta + gamma must be positive in bucket {b}"
                )));
            }
            Ok(T::one() / s)
        })
        .collect()
}

/// Prices the policy assigns on `calendar`, clipped to the guardrails.
pub fn policy_prices<T: Scalar>(
    policy: &PricingPolicy<T>,
    costs: &[T],
    params: &MnlParams<T>,
    calendar: &LeadTimeCalendar,
    guardrails: &Guardrails<T>,
) -> Result<Vec<T>> {
    let map = params.buckets.resolve(calendar)?;
    let offsets = markup_offsets(params, &map)?;
    check_costs(costs, calendar.num_options())?;
    guardrails.check_len(costs.len())?;
    Ok(apply_policy(policy, costs, &offsets, guardrails))
}

fn apply_policy<T: Scalar>(
    policy: &PricingPolicy<T>,
    costs: &[T],
    offsets: &[T],
    guardrails: &Guardrails<T>,
) -> Vec<T> {
    costs
        .iter()
        .zip(offsets)
        .enumerate()
        .map(|(k, (&c, &o))| guardrails.clip(k, policy.min_price.max(c + o + policy.markup)))
        .collect()
}

fn check_costs<T: Scalar>(costs: &[T], n: usize) -> Result<()> {
    if costs.len() != n {
        return Err(Error::LengthMismatch {
            what: "costs",
            expected: n,
            found: costs.len(),
        });
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("costs"));
    }
    Ok(())
}

/// The objective of one quote with everything but the prices fixed.
pub struct PricingProblem<'a, T> {
    calendar: &'a LeadTimeCalendar,
    params: &'a MnlParams<T>,
    map: BucketMap,
    offsets: Vec<T>,
    costs: Vec<T>,
    execute: Vec<T>,
    config: ObjectiveConfig,
    frozen_reference: Option<Vec<T>>,
}

impl<'a, T: Scalar> PricingProblem<'a, T> {
    pub fn new(
        x: &FeatureVector,
        params: &'a MnlParams<T>,
        costs: &[T],
        cancel: &dyn CancelPredictor,
        calendar: &'a LeadTimeCalendar,
        config: ObjectiveConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = calendar.num_options();
        check_costs(costs, n)?;
        let map = params.buckets.resolve(calendar)?;
        let offsets = markup_offsets(params, &map)?;
        let execute = (1..=n)
            .map(|i| {
                if config.include_cancellation {
                    T::lit(cancel.execute_probability(x, i).clamp(0.0, 1.0))
                } else {
                    T::one()
                }
            })
            .collect();
        let frozen_reference = match config.reference {
            ReferenceMode::Recompute => None,
            ReferenceMode::FrozenAtCostPlus => {
                let anchor: Vec<T> = costs
                    .iter()
                    .zip(&offsets)
                    .map(|(&c, &o)| (c + o).max(T::zero()))
                    .collect();
                Some(reference_prices(&anchor, calendar)?)
            }
        };
        Ok(Self {
            calendar,
            params,
            map,
            offsets,
            costs: costs.to_vec(),
            execute,
            config,
            frozen_reference,
        })
    }

    pub fn num_options(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[T] {
        &self.costs
    }

    pub fn calendar(&self) -> &LeadTimeCalendar {
        self.calendar
    }

    /// `1 / (beta + gamma)` of every option's bucket.
    pub fn markup_offsets(&self) -> &[T] {
        &self.offsets
    }

    pub fn probabilities(&self, prices: &[T]) -> Result<Vec<T>> {
        if prices.len() != self.num_options() {
            return Err(Error::LengthMismatch {
                what: "prices",
                expected: self.num_options(),
                found: prices.len(),
            });
        }
        let computed;
        let reference = match &self.frozen_reference {
            Some(r) => r,
            None => {
                computed = reference_prices(prices, self.calendar)?;
                &computed
            }
        };
        let u = utilities_with_map(
            self.params,
            &self.map,
            prices,
            reference,
            self.calendar.availability(),
        );
        softmax_with_outside(&u)
    }

    /// `sum_i P(Y = i) * ((1 - alpha)(p_i - c_i) + alpha c_i) * P(Z = 0 | x, i)`.
    pub fn objective(&self, prices: &[T]) -> Result<T> {
        let probs = self.probabilities(prices)?;
        Ok(ordered_sum((0..prices.len()).map(|k| {
            probs[k + 1] * self.config.booking_value(prices[k], self.costs[k]) * self.execute[k]
        })))
    }

    pub fn policy_prices(&self, policy: &PricingPolicy<T>, guardrails: &Guardrails<T>) -> Vec<T> {
        apply_policy(policy, &self.costs, &self.offsets, guardrails)
    }
}

/// Evaluates the expected objective at `prices` (no guardrails applied).
pub fn evaluate_objective<T: Scalar>(
    prices: &[T],
    x: &FeatureVector,
    params: &MnlParams<T>,
    costs: &[T],
    cancel: &dyn CancelPredictor,
    calendar: &LeadTimeCalendar,
    config: ObjectiveConfig,
) -> Result<T> {
    PricingProblem::new(x, params, costs, cancel, calendar, config)?.objective(prices)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub min_price_points: usize,
    pub markup_points: usize,
    /// Refinement pass at this many times the coarse resolution around the
    /// incumbent; 0 or 1 disables it.
    pub refine_factor: usize,
    /// Defaults to `[0, max ceiling]`.
    pub min_price_range: Option<(f64, f64)>,
    /// Defaults to `[-1/min(beta + gamma), max ceiling]`.
    pub markup_range: Option<(f64, f64)>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            min_price_points: 41,
            markup_points: 41,
            refine_factor: 4,
            min_price_range: None,
            markup_range: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PolicyOptimum<T> {
    pub policy: PricingPolicy<T>,
    pub prices: Vec<T>,
    pub objective: T,
    pub evaluations: usize,
}

pub fn linspace<T: Scalar>(lo: T, hi: T, points: usize) -> Vec<T> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * T::of_usize(k) / T::of_usize(n - 1)
                }
            })
            .collect(),
    }
}

/// Keeps the best `(objective, m1, m2)`; ties go to the lexicographically
/// smallest `(m1, m2)`.
struct Incumbent<T> {
    best: Option<(T, PricingPolicy<T>, Vec<T>)>,
    evaluations: usize,
}

impl<T: Scalar> Incumbent<T> {
    fn offer(&mut self, value: T, policy: PricingPolicy<T>, prices: Vec<T>) {
        self.evaluations += 1;
        if !value.is_finite() {
            return;
        }
        let better = match &self.best {
            None => true,
            Some((v, p, _)) => {
                value > *v
                    || (value == *v
                        && (policy.min_price < p.min_price
                            || (policy.min_price == p.min_price && policy.markup < p.markup)))
            }
        };
        if better {
            self.best = Some((value, policy, prices));
        }
    }
}

/// Grid search over `(m1, m2)`, followed by one finer pass around the best
/// coarse cell.
pub fn optimize_two_param<T: Scalar>(
    problem: &PricingProblem<'_, T>,
    guardrails: &Guardrails<T>,
    grid: &GridConfig,
) -> Result<PolicyOptimum<T>> {
    guardrails.check_len(problem.num_options())?;
    if grid.min_price_points == 0 || grid.markup_points == 0 {
        return Err(Error::Empty("pricing grid"));
    }
    let top = guardrails.ceiling.iter().fold(T::zero(), |m, &c| m.max(c));
    let needs_top = grid.min_price_range.is_none() || grid.markup_range.is_none();
    if needs_top && !top.is_finite() {
        return Err(Error::invalid("default grid ranges need finite ceilings"));
    }
    let (m1_lo, m1_hi) = grid
        .min_price_range
        .map(|(a, b)| (T::lit(a), T::lit(b)))
        .unwrap_or((T::zero(), top));
    let max_offset = problem.offsets.iter().fold(T::zero(), |m, &o| m.max(o));
    let (m2_lo, m2_hi) = grid
        .markup_range
        .map(|(a, b)| (T::lit(a), T::lit(b)))
        .unwrap_or((-max_offset, top));
    if m1_lo > m1_hi || m2_lo > m2_hi {
        return Err(Error::invalid("empty pricing grid range"));
    }

    let m1_grid = linspace(m1_lo, m1_hi, grid.min_price_points);
    let m2_grid = linspace(m2_lo, m2_hi, grid.markup_points);
    let mut incumbent = Incumbent {
        best: None,
        evaluations: 0,
    };
    let visit = |m1: T, m2: T, inc: &mut Incumbent<T>| -> Result<()> {
        let policy = PricingPolicy {
            min_price: m1,
            markup: m2,
        };
        let prices = problem.policy_prices(&policy, guardrails);
        let value = problem.objective(&prices)?;
        inc.offer(value, policy, prices);
        Ok(())
    };
    for &m1 in &m1_grid {
        for &m2 in &m2_grid {
            visit(m1, m2, &mut incumbent)?;
        }
    }

    if grid.refine_factor > 1 {
        if let Some((_, p, _)) = incumbent.best.clone() {
            let step = |lo: T, hi: T, n: usize| {
                if n > 1 {
                    (hi - lo) / T::of_usize(n - 1)
                } else {
                    T::zero()
                }
            };
            let s1 = step(m1_lo, m1_hi, grid.min_price_points);
            let s2 = step(m2_lo, m2_hi, grid.markup_points);
            let f = grid.refine_factor;
            let fine = |center: T, s: T, lo: T, hi: T| -> Vec<T> {
                if s == T::zero() {
                    return vec![center];
                }
                let mut v: Vec<T> = (0..=2 * f)
                    .map(|j| {
                        let offset = T::of_usize(j) - T::of_usize(f);
                        (center + s * offset / T::of_usize(f)).max(lo).min(hi)
                    })
                    .collect();
                v.dedup();
                v
            };
            for m1 in fine(p.min_price, s1, m1_lo, m1_hi) {
                for m2 in fine(p.markup, s2, m2_lo, m2_hi) {
                    visit(m1, m2, &mut incumbent)?;
                }
            }
        }
    }

    let evaluations = incumbent.evaluations;
    let (objective, policy, prices) = incumbent
        .best
        .ok_or_else(|| Error::NonFinite("objective on every grid point"))?;
    Ok(PolicyOptimum {
        policy,
        prices,
        objective,
        evaluations,
    })
}
