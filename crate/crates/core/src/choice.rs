//! Multinomial logit over lead-time options with local reference-price effects.
//!
//! The utility of offered option `i` (1-based) is
//! `a1*i + a2*i^2 + a3*sqrt(i) - beta[b(i)]*p_i - gamma[b(i)]*(p_i - r_i)`,
//! where `b(i)` is the option's price bucket. The outside option has utility 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{reference_prices, DayClass, LeadTimeCalendar};
use crate::error::{Error, Result};
use crate::optim::{self, Bounds, Evaluation, NewtonConfig, SmoothObjective};
use crate::scalar::{ordered_sum, Scalar};

/// Price bucket of every option (0-based buckets, indexed by 0-based option).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketMap {
    bucket_of: Vec<usize>,
    num_buckets: usize,
}

impl BucketMap {
    pub fn new(bucket_of: Vec<usize>) -> Result<Self> {
        if bucket_of.is_empty() {
            return Err(Error::Empty("bucket map"));
        }
        let num_buckets = bucket_of.iter().max().map_or(0, |m| m + 1);
        if num_buckets > bucket_of.len() {
            return Err(Error::invalid(format!(
                "{num_buckets} buckets for {} options",
                bucket_of.len()
            )));
        }
        Ok(Self {
            bucket_of,
            num_buckets,
        })
    }

    /// Every option shares one bucket.
    pub fn single(num_options: usize) -> Self {
        Self {
            bucket_of: vec![0; num_options.max(1)],
            num_buckets: 1,
        }
    }

    /// One bucket per option.
    pub fn per_option(num_options: usize) -> Self {
        Self {
            bucket_of: (0..num_options.max(1)).collect(),
            num_buckets: num_options.max(1),
        }
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn num_options(&self) -> usize {
        self.bucket_of.len()
    }

    /// Bucket of 1-based `option`.
    pub fn bucket(&self, option: usize) -> Result<usize> {
        if option == 0 || option > self.bucket_of.len() {
            return Err(Error::IndexOutOfRange {
                index: option,
                len: self.bucket_of.len(),
            });
        }
        Ok(self.bucket_of[option - 1])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.bucket_of
    }
}

/// How options are assigned to price buckets on a given calendar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketScheme {
    /// The same assignment regardless of day of week.
    Fixed(BucketMap),
    /// Weekdays in calendar order fill `runs[0]`, then `runs[1]`, ... buckets;
    /// the remaining weekdays share the next bucket and all weekend days the
    /// last one. `runs = [3, 3]` on a 14-day horizon gives the
    /// 3/3/4-weekday + weekend split.
    WeekdayRuns { runs: Vec<usize> },
}

impl Default for BucketScheme {
    fn default() -> Self {
        BucketScheme::WeekdayRuns { runs: vec![3, 3] }
    }
}

impl BucketScheme {
    /// Weekday runs of three, at most two of them, chosen so that every
    /// weekday bucket is populated on a horizon of `num_options` days
    /// whatever the start day. Fourteen days gives the default scheme.
    pub fn for_horizon(num_options: usize) -> Self {
        let min_weekdays = (0..7)
            .map(|start| (0..num_options).filter(|k| (start + k) % 7 < 5).count())
            .min()
            .unwrap_or(0);
        let mut runs = Vec::new();
        while runs.len() < 2 && 3 * (runs.len() + 1) < min_weekdays {
            runs.push(3);
        }
        BucketScheme::WeekdayRuns { runs }
    }

    pub fn num_buckets(&self) -> usize {
        match self {
            BucketScheme::Fixed(map) => map.num_buckets(),
            BucketScheme::WeekdayRuns { runs } => runs.len() + 2,
        }
    }

    pub fn resolve(&self, calendar: &LeadTimeCalendar) -> Result<BucketMap> {
        match self {
            BucketScheme::Fixed(map) => {
                if map.num_options() != calendar.num_options() {
                    return Err(Error::LengthMismatch {
                        what: "bucket map",
                        expected: calendar.num_options(),
                        found: map.num_options(),
                    });
                }
                Ok(map.clone())
            }
            BucketScheme::WeekdayRuns { runs } => {
                let weekend_bucket = runs.len() + 1;
                let mut seen = 0usize;
                let bucket_of = (0..calendar.num_options())
                    .map(|k| match calendar.class_at(k) {
                        DayClass::Weekend => weekend_bucket,
                        DayClass::Weekday => {
                            let mut acc = 0;
                            let mut bucket = runs.len();
                            for (b, &len) in runs.iter().enumerate() {
                                acc += len;
                                if seen < acc {
                                    bucket = b;
                                    break;
                                }
                            }
                            seen += 1;
                            bucket
                        }
                    })
                    .collect();
                Ok(BucketMap {
                    bucket_of,
                    num_buckets: runs.len() + 2,
                })
            }
        }
    }
}

/// Coefficients of one market segment's choice model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MnlParams<T> {
    /// Lead-time trend coefficients on `i`, `i^2` and `sqrt(i)`.
    pub trend: [T; 3],
    /// Price sensitivity per bucket.
    pub beta: Vec<T>,
    /// Reference-price sensitivity per bucket.
    pub gamma: Vec<T>,
    pub buckets: BucketScheme,
}

impl<T: Scalar> MnlParams<T> {
    pub fn new(trend: [T; 3], beta: Vec<T>, gamma: Vec<T>, buckets: BucketScheme) -> Result<Self> {
        let b = buckets.num_buckets();
        for (what, v) in [("beta", &beta), ("gamma", &gamma)] {
            if v.len() != b {
                return Err(Error::LengthMismatch {
                    what,
                    expected: b,
                    found: v.len(),
                });
            }
        }
        if trend
            .iter()
            .chain(&beta)
            .chain(&gamma)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("choice model parameters"));
        }
        Ok(Self {
            trend,
            beta,
            gamma,
            buckets,
        })
    }

    /// Same `beta` and `gamma` in every bucket.
    pub fn uniform(trend: [T; 3], beta: T, gamma: T, buckets: BucketScheme) -> Result<Self> {
        let b = buckets.num_buckets();
        Self::new(trend, vec![beta; b], vec![gamma; b], buckets)
    }

    pub fn zeros(buckets: BucketScheme) -> Self {
        let b = buckets.num_buckets();
        Self {
            trend: [T::zero(); 3],
            beta: vec![T::zero(); b],
            gamma: vec![T::zero(); b],
            buckets,
        }
    }

    pub fn num_buckets(&self) -> usize {
        self.beta.len()
    }

    /// Checks the bounds a fitted model satisfies: `beta > 0`, `gamma >= 0`.
    pub fn check_bounds(&self) -> Result<()> {
        if self.beta.iter().any(|&b| !(b > T::zero())) {
            return Err(Error::invalid("beta must be positive in every bucket"));
        }
        if self.gamma.iter().any(|&g| g < T::zero()) {
            return Err(Error::invalid("gamma must be nonnegative in every bucket"));
        }
        Ok(())
    }

    /// Parameter vector `(a1, a2, a3, beta_0.., gamma_0..)`.
    pub fn to_vector(&self) -> Vec<T> {
        let mut v = self.trend.to_vec();
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.gamma);
        v
    }

    pub fn from_vector(theta: &[T], buckets: BucketScheme) -> Result<Self> {
        let b = buckets.num_buckets();
        if theta.len() != 3 + 2 * b {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: 3 + 2 * b,
                found: theta.len(),
            });
        }
        Self::new(
            [theta[0], theta[1], theta[2]],
            theta[3..3 + b].to_vec(),
            theta[3 + b..].to_vec(),
            buckets,
        )
    }

    /// Trend part of the utility for 1-based `option`.
    pub fn trend_utility(&self, option: usize) -> T {
        let i = T::of_usize(option);
        self.trend[0] * i + self.trend[1] * i * i + self.trend[2] * i.sqrt()
    }
}

/// One logged choice: what was offered at which prices, and what was picked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ChoiceObservation<T> {
    pub calendar: LeadTimeCalendar,
    pub prices: Vec<T>,
    pub reference: Vec<T>,
    /// 0 for no purchase, otherwise the 1-based option.
    pub chosen: usize,
}

impl<T: Scalar> ChoiceObservation<T> {
    /// Builds an observation, deriving reference prices from the offered prices.
    pub fn new(calendar: LeadTimeCalendar, prices: Vec<T>, chosen: usize) -> Result<Self> {
        let reference = reference_prices(&prices, &calendar)?;
        let obs = Self {
            calendar,
            prices,
            reference,
            chosen,
        };
        obs.validate(0)?;
        Ok(obs)
    }

    pub fn num_options(&self) -> usize {
        self.calendar.num_options()
    }

    pub(crate) fn validate(&self, row: usize) -> Result<()> {
        let n = self.calendar.num_options();
        check_lengths(n, &self.prices, &self.reference)?;
        if self.chosen > n || (self.chosen > 0 && !self.calendar.availability()[self.chosen - 1]) {
            return Err(Error::ChosenNotOffered {
                row,
                chosen: self.chosen,
            });
        }
        Ok(())
    }
}

fn check_lengths<T>(n: usize, prices: &[T], reference: &[T]) -> Result<()> {
    if prices.len() != n {
        return Err(Error::LengthMismatch {
            what: "prices",
            expected: n,
            found: prices.len(),
        });
    }
    if reference.len() != n {
        return Err(Error::LengthMismatch {
            what: "reference prices",
            expected: n,
            found: reference.len(),
        });
    }
    Ok(())
}

/// Utility of every option; unavailable options get negative infinity.
pub fn utilities<T: Scalar>(
    params: &MnlParams<T>,
    prices: &[T],
    reference: &[T],
    calendar: &LeadTimeCalendar,
) -> Result<Vec<T>> {
    check_lengths(calendar.num_options(), prices, reference)?;
    let map = params.buckets.resolve(calendar)?;
    Ok(utilities_with_map(
        params,
        &map,
        prices,
        reference,
        calendar.availability(),
    ))
}

pub(crate) fn utilities_with_map<T: Scalar>(
    params: &MnlParams<T>,
    map: &BucketMap,
    prices: &[T],
    reference: &[T],
    available: &[bool],
) -> Vec<T> {
    (0..prices.len())
        .map(|k| {
            if !available[k] {
                return T::neg_infinity();
            }
            let b = map.bucket_of[k];
            params.trend_utility(k + 1)
                - params.beta[b] * prices[k]
                - params.gamma[b] * (prices[k] - reference[k])
        })
        .collect()
}

/// Softmax over `utilities` plus an outside option of utility 0, returned with
/// the outside option first. Entries equal to negative infinity are treated as
/// not offered and get probability exactly 0.
pub fn softmax_with_outside<T: Scalar>(utilities: &[T]) -> Result<Vec<T>> {
    let mut shift = T::zero();
    for &u in utilities {
        if u.is_nan() || u == T::infinity() {
            return Err(Error::NonFinite("utilities"));
        }
        if u > shift {
            shift = u;
        }
    }
    let mut out = Vec::with_capacity(utilities.len() + 1);
    out.push((-shift).exp());
    for &u in utilities {
        out.push(if u == T::neg_infinity() {
            T::zero()
        } else {
            (u - shift).exp()
        });
    }
    let total = ordered_sum(out.iter().copied());
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// `P(Y = i)` for `i = 0..=L`, index 0 being no purchase.
pub fn choice_probabilities<T: Scalar>(
    params: &MnlParams<T>,
    prices: &[T],
    reference: &[T],
    calendar: &LeadTimeCalendar,
) -> Result<Vec<T>> {
    softmax_with_outside(&utilities(params, prices, reference, calendar)?)
}

/// Choice probabilities with reference prices derived from `prices`.
pub fn probabilities_at_prices<T: Scalar>(
    params: &MnlParams<T>,
    prices: &[T],
    calendar: &LeadTimeCalendar,
) -> Result<Vec<T>> {
    let reference = reference_prices(prices, calendar)?;
    choice_probabilities(params, prices, &reference, calendar)
}

pub fn negative_log_likelihood<T: Scalar>(
    params: &MnlParams<T>,
    data: &[ChoiceObservation<T>],
) -> Result<T> {
    let likelihood = MnlLikelihood::new(data, &params.buckets, true)?;
    Ok(likelihood
        .evaluate_parts(&params.to_vector(), false, false)?
        .value)
}

/// Gradient of the negative log-likelihood in the order of
/// [`MnlParams::to_vector`]. Reference prices are data, not functions of the
/// parameters.
pub fn nll_gradient<T: Scalar>(
    params: &MnlParams<T>,
    data: &[ChoiceObservation<T>],
) -> Result<Vec<T>> {
    let likelihood = MnlLikelihood::new(data, &params.buckets, true)?;
    Ok(likelihood
        .evaluate_parts(&params.to_vector(), true, false)?
        .gradient)
}

/// Negative log-likelihood of a dataset as a function of the parameter vector.
pub struct MnlLikelihood<'a, T> {
    data: Vec<&'a ChoiceObservation<T>>,
    maps: Vec<BucketMap>,
    num_buckets: usize,
}

const CHUNK: usize = 512;

impl<'a, T: Scalar> MnlLikelihood<'a, T> {
    pub fn new(
        data: impl IntoIterator<Item = &'a ChoiceObservation<T>>,
        scheme: &BucketScheme,
        validate: bool,
    ) -> Result<Self> {
        let data: Vec<_> = data.into_iter().collect();
        if data.is_empty() {
            return Err(Error::Empty("choice observations"));
        }
        let maps = data
            .iter()
            .enumerate()
            .map(|(row, obs)| {
                if validate {
                    obs.validate(row)?;
                }
                scheme.resolve(&obs.calendar)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            data,
            maps,
            num_buckets: scheme.num_buckets(),
        })
    }

    pub fn dim_for(num_buckets: usize) -> usize {
        3 + 2 * num_buckets
    }

    fn chunk_terms(
        &self,
        range: std::ops::Range<usize>,
        theta: &[T],
        grad: bool,
        hess: bool,
    ) -> Evaluation<T> {
        let d = Self::dim_for(self.num_buckets);
        let nb = self.num_buckets;
        let mut value = T::zero();
        let mut gradient = vec![T::zero(); if grad || hess { d } else { 0 }];
        let mut hessian = vec![T::zero(); if hess { d * d } else { 0 }];
        let mut u = Vec::new();
        let mut mean = vec![T::zero(); d];

        for n in range {
            let obs = self.data[n];
            let map = &self.maps[n];
            let avail = obs.calendar.availability();
            u.clear();
            let mut shift = T::zero();
            for k in 0..obs.prices.len() {
                if !avail[k] {
                    u.push(T::neg_infinity());
                    continue;
                }
                let i = T::of_usize(k + 1);
                let b = map.bucket_of[k];
                let v = theta[0] * i + theta[1] * i * i + theta[2] * i.sqrt()
                    - theta[3 + b] * obs.prices[k]
                    - theta[3 + nb + b] * (obs.prices[k] - obs.reference[k]);
                if v > shift {
                    shift = v;
                }
                u.push(v);
            }
            let mut z = (-shift).exp();
            for &v in &u {
                if v != T::neg_infinity() {
                    z += (v - shift).exp();
                }
            }
            let log_z = shift + z.ln();
            let chosen_u = if obs.chosen == 0 {
                T::zero()
            } else {
                u[obs.chosen - 1]
            };
            value += log_z - chosen_u;

            if !(grad || hess) {
                continue;
            }
            for m in mean.iter_mut() {
                *m = T::zero();
            }
            for k in 0..u.len() {
                if !avail[k] {
                    continue;
                }
                let p = (u[k] - log_z).exp();
                let f = features(k, map.bucket_of[k], nb, obs.prices[k], obs.reference[k]);
                for &(a, fa) in &f {
                    mean[a] += p * fa;
                }
                if hess {
                    for &(a, fa) in &f {
                        for &(b, fb) in &f {
                            hessian[a * d + b] += p * fa * fb;
                        }
                    }
                }
            }
            for a in 0..d {
                gradient[a] += mean[a];
            }
            if obs.chosen > 0 {
                let k = obs.chosen - 1;
                for (a, fa) in features(k, map.bucket_of[k], nb, obs.prices[k], obs.reference[k]) {
                    gradient[a] -= fa;
                }
            }
            if hess {
                for a in 0..d {
                    for b in 0..d {
                        hessian[a * d + b] -= mean[a] * mean[b];
                    }
                }
            }
        }
        Evaluation {
            value,
            gradient,
            hessian: if hess { Some(hessian) } else { None },
        }
    }

    pub fn evaluate_parts(&self, theta: &[T], grad: bool, hess: bool) -> Result<Evaluation<T>> {
        let d = Self::dim_for(self.num_buckets);
        if theta.len() != d {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: d,
                found: theta.len(),
            });
        }
        let ranges: Vec<_> = (0..self.data.len())
            .step_by(CHUNK)
            .map(|s| s..(s + CHUNK).min(self.data.len()))
            .collect();
        let parts: Vec<Evaluation<T>> = if ranges.len() > 1 {
            ranges
                .into_par_iter()
                .map(|r| self.chunk_terms(r, theta, grad, hess))
                .collect()
        } else {
            ranges
                .into_iter()
                .map(|r| self.chunk_terms(r, theta, grad, hess))
                .collect()
        };
        let mut total = Evaluation {
            value: T::zero(),
            gradient: vec![T::zero(); if grad || hess { d } else { 0 }],
            hessian: if hess {
                Some(vec![T::zero(); d * d])
            } else {
                None
            },
        };
        for part in parts {
            total.value += part.value;
            for (t, g) in total.gradient.iter_mut().zip(&part.gradient) {
                *t += *g;
            }
            if let (Some(th), Some(ph)) = (total.hessian.as_mut(), part.hessian.as_ref()) {
                for (t, h) in th.iter_mut().zip(ph) {
                    *t += *h;
                }
            }
        }
        if !total.value.is_finite() {
            return Err(Error::NonFinite("negative log-likelihood"));
        }
        Ok(total)
    }
}

/// Nonzero entries of the utility's feature vector for 0-based option `k`.
#[inline]
fn features<T: Scalar>(
    k: usize,
    bucket: usize,
    nb: usize,
    price: T,
    reference: T,
) -> [(usize, T); 5] {
    let i = T::of_usize(k + 1);
    [
        (0, i),
        (1, i * i),
        (2, i.sqrt()),
        (3 + bucket, -price),
        (3 + nb + bucket, -(price - reference)),
    ]
}

impl<T: Scalar> SmoothObjective<T> for MnlLikelihood<'_, T> {
    fn dim(&self) -> usize {
        Self::dim_for(self.num_buckets)
    }

    fn evaluate(&self, x: &[T], with_hessian: bool) -> Result<Evaluation<T>> {
        self.evaluate_parts(x, true, with_hessian)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FitConfig<T> {
    /// Projected-gradient infinity norm at which the fit stops.
    pub tolerance: T,
    pub max_iterations: usize,
    /// Lower bound on every `beta`.
    pub beta_floor: T,
    /// When false, `gamma` is pinned at 0 (a plain MNL).
    pub reference_effects: bool,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            tolerance: T::lit(1e-6),
            max_iterations: 500,
            beta_floor: T::lit(1e-4),
            reference_effects: true,
        }
    }
}

impl<T: Scalar> FitConfig<T> {
    /// Looser settings used to rank candidate splits.
    pub fn screening() -> Self {
        Self {
            tolerance: T::lit(1e-4),
            max_iterations: 100,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MnlFit<T> {
    pub params: MnlParams<T>,
    pub nll: T,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: T,
    /// Square roots of the inverse-Hessian diagonal, in parameter-vector order.
    pub std_errors: Vec<T>,
}

pub fn fit_mle<T: Scalar>(
    data: &[ChoiceObservation<T>],
    buckets: &BucketScheme,
    config: &FitConfig<T>,
) -> Result<MnlFit<T>> {
    fit_mle_from(data, buckets, config, None)
}

/// Maximum-likelihood fit, optionally warm-started from `start`.
pub fn fit_mle_from<T: Scalar>(
    data: &[ChoiceObservation<T>],
    buckets: &BucketScheme,
    config: &FitConfig<T>,
    start: Option<&MnlParams<T>>,
) -> Result<MnlFit<T>> {
    fit_mle_refs(data.iter(), buckets, config, start)
}

/// [`fit_mle_from`] over borrowed observations, e.g. one side of a candidate split.
pub fn fit_mle_refs<'a, T: Scalar>(
    data: impl IntoIterator<Item = &'a ChoiceObservation<T>>,
    buckets: &BucketScheme,
    config: &FitConfig<T>,
    start: Option<&MnlParams<T>>,
) -> Result<MnlFit<T>> {
    let likelihood = MnlLikelihood::new(data, buckets, true)?;
    check_identifiable(&likelihood.data, &likelihood.maps, buckets.num_buckets())?;

    let nb = buckets.num_buckets();
    let d = MnlLikelihood::<T>::dim_for(nb);
    let mut bounds = Bounds::unbounded(d);
    for b in 0..nb {
        bounds.lower[3 + b] = config.beta_floor;
        bounds.lower[3 + nb + b] = T::zero();
        if !config.reference_effects {
            bounds.upper[3 + nb + b] = T::zero();
        }
    }
    let mut x0 = match start {
        Some(p) if p.buckets == *buckets => p.to_vector(),
        _ => vec![T::zero(); d],
    };
    bounds.project(&mut x0);

    let min = optim::minimize(
        &likelihood,
        &x0,
        &bounds,
        NewtonConfig {
            tolerance: config.tolerance,
            max_iterations: config.max_iterations,
        },
    )?;
    if !min.converged {
        log::warn!(
            "choice model fit stopped after {} iterations with projected gradient {}",
            min.iterations,
            min.projected_gradient_norm
        );
    }
    let params = MnlParams::from_vector(&min.x, buckets.clone())?;
    check_bounded(&likelihood.data, &likelihood.maps, &params)?;
    let std_errors = optim::inverse_diagonal(&min.hessian, d)
        .into_iter()
        .map(|v| if v >= T::zero() { v.sqrt() } else { T::nan() })
        .collect();
    Ok(MnlFit {
        params,
        nll: min.value,
        iterations: min.iterations,
        converged: min.converged,
        gradient_norm: min.projected_gradient_norm,
        std_errors,
    })
}

fn check_identifiable<T: Scalar>(
    data: &[&ChoiceObservation<T>],
    maps: &[BucketMap],
    nb: usize,
) -> Result<()> {
    if data.iter().all(|o| o.chosen == 0) {
        return Err(Error::Unidentifiable {
            reason: "no purchases".into(),
            buckets: (0..nb).collect(),
        });
    }
    let mut first: Vec<Option<T>> = vec![None; nb];
    let mut varies = vec![false; nb];
    for (obs, map) in data.iter().zip(maps) {
        for k in 0..obs.prices.len() {
            if !obs.calendar.availability()[k] {
                continue;
            }
            let b = map.bucket_of[k];
            match first[b] {
                None => first[b] = Some(obs.prices[k]),
                Some(p) if p != obs.prices[k] => varies[b] = true,
                _ => {}
            }
        }
    }
    let bad: Vec<usize> = (0..nb).filter(|&b| !varies[b]).collect();
    if !bad.is_empty() {
        return Err(Error::Unidentifiable {
            reason: "no price variation".into(),
            buckets: bad,
        });
    }
    Ok(())
}

/// Largest utility term, in nats, a fitted model may attribute to any one
/// component on its own training rows.
pub const MAX_UTILITY_TERM: f64 = 50.0;

/// Rejects fits that ran off towards infinity (quasi-separated data): a
/// price, reference or trend term exceeding [`MAX_UTILITY_TERM`] on a
/// training row.
fn check_bounded<T: Scalar>(
    data: &[&ChoiceObservation<T>],
    maps: &[BucketMap],
    params: &MnlParams<T>,
) -> Result<()> {
    let limit = T::lit(MAX_UTILITY_TERM);
    let nb = params.beta.len();
    let mut price = vec![T::zero(); nb];
    let mut reference = vec![T::zero(); nb];
    let mut trend = T::zero();
    for (obs, map) in data.iter().zip(maps) {
        for k in 0..obs.prices.len() {
            if !obs.calendar.availability()[k] {
                continue;
            }
            let b = map.bucket_of[k];
            price[b] = price[b].max((params.beta[b] * obs.prices[k]).abs());
            reference[b] =
                reference[b].max((params.gamma[b] * (obs.prices[k] - obs.reference[k])).abs());
            trend = trend.max(params.trend_utility(k + 1).abs());
        }
    }
    let bad: Vec<usize> = (0..nb)
        .filter(|&b| price[b] > limit || reference[b] > limit || trend > limit)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Unidentifiable {
            reason: "estimates diverge (quasi-separated data)".into(),
            buckets: bad,
        });
    }
    Ok(())
}
