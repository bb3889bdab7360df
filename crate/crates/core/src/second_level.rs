//! Time-window choice within a clicked lead time.
//!
//! Window `j` of lead time `i` has utility
//! `alpha_j - beta p_ij + gamma' x_i + delta j`, against an outside option of
//! utility 0. The features `x_i` are selected numeric quote features plus the
//! lead time `i` itself.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::softmax_with_outside;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::optim::{self, Bounds, Evaluation, NewtonConfig, SmoothObjective};
use crate::pricer::linspace;
use crate::scalar::{ordered_sum, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_hour: u32,
    pub length_hours: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCatalog {
    windows: Vec<Window>,
}

impl WindowCatalog {
    /// Equal windows covering the day; `length_hours` must be 2, 3, 4 or 6.
    pub fn uniform(length_hours: u32) -> Result<Self> {
        if ![2, 3, 4, 6].contains(&length_hours) {
            return Err(Error::invalid(format!(
                "window length {length_hours}h is not one of 2, 3, 4, 6"
            )));
        }
        Ok(Self {
            windows: (0..24 / length_hours)
                .map(|k| Window {
                    start_hour: k * length_hours,
                    length_hours,
                })
                .collect(),
        })
    }

    /// Declared windows, ordered by start hour.
    pub fn custom(mut windows: Vec<Window>) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Empty("window catalog"));
        }
        if windows
            .iter()
            .any(|w| w.length_hours == 0 || w.start_hour + w.length_hours > 24)
        {
            return Err(Error::invalid("windows must lie within one day"));
        }
        windows.sort_by_key(|w| (w.start_hour, w.length_hours));
        Ok(Self { windows })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }
}

/// Which quote features enter `gamma' x`; the lead time always comes first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEncoding {
    pub numeric: Vec<String>,
}

impl WindowEncoding {
    pub fn width(&self) -> usize {
        1 + self.numeric.len()
    }

    /// `[i, x_1, ...]`; missing numeric features encode as 0.
    pub fn encode<T: Scalar>(&self, x: &FeatureVector, lead_time: usize) -> Vec<T> {
        std::iter::once(T::of_usize(lead_time))
            .chain(
                self.numeric
                    .iter()
                    .map(|name| T::lit(x.get(name).as_num().unwrap_or(0.0))),
            )
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptMode {
    /// One shared intercept plus the `delta j` trend.
    #[default]
    Common,
    /// An intercept per window; `delta` is fixed at 0.
    PerWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WindowMnlParams<T> {
    /// One entry per window.
    pub alpha: Vec<T>,
    pub beta: T,
    pub gamma: Vec<T>,
    pub delta: T,
    pub encoding: WindowEncoding,
}

impl<T: Scalar> WindowMnlParams<T> {
    pub fn new(
        alpha: Vec<T>,
        beta: T,
        gamma: Vec<T>,
        delta: T,
        encoding: WindowEncoding,
    ) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            gamma,
            delta,
            encoding,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::Empty("window intercepts"));
        }
        if self.gamma.len() != self.encoding.width() {
            return Err(Error::LengthMismatch {
                what: "window gamma",
                expected: self.encoding.width(),
                found: self.gamma.len(),
            });
        }
        let all = self
            .alpha
            .iter()
            .chain(&self.gamma)
            .chain([&self.beta, &self.delta]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window parameters"));
        }
        if !(self.beta > T::zero()) {
            return Err(Error::invalid("window beta must be positive"));
        }
        Ok(())
    }

    pub fn num_windows(&self) -> usize {
        self.alpha.len()
    }

    pub fn utilities(&self, x: &[T], prices: &[T]) -> Result<Vec<T>> {
        if prices.len() != self.num_windows() {
            return Err(Error::LengthMismatch {
                what: "window prices",
                expected: self.num_windows(),
                found: prices.len(),
            });
        }
        if x.len() != self.gamma.len() {
            return Err(Error::LengthMismatch {
                what: "window features",
                expected: self.gamma.len(),
                found: x.len(),
            });
        }
        let shift = ordered_sum(self.gamma.iter().zip(x).map(|(&g, &v)| g * v));
        Ok(prices
            .iter()
            .enumerate()
            .map(|(k, &p)| self.alpha[k] - self.beta * p + shift + self.delta * T::of_usize(k + 1))
            .collect())
    }
}

/// `[P(no purchase), P(window 1), ..., P(window M)]`.
pub fn window_probabilities<T: Scalar>(
    params: &WindowMnlParams<T>,
    x: &[T],
    prices: &[T],
) -> Result<Vec<T>> {
    if prices.iter().any(|&p| p.is_nan() || p < T::zero()) {
        return Err(Error::invalid("window prices must be non-negative"));
    }
    softmax_with_outside(&params.utilities(x, prices)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SecondLevelObservation<T> {
    /// Encoded features, see [`WindowEncoding::encode`].
    pub features: Vec<T>,
    pub prices: Vec<T>,
    /// 0 for no purchase, otherwise the 1-based window.
    pub chosen_window: usize,
    pub imputed: bool,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    num_alpha: usize,
    has_delta: bool,
    width: usize,
}

impl Layout {
    fn beta(&self) -> usize {
        self.num_alpha
    }

    fn gamma(&self) -> usize {
        self.num_alpha + 1 + usize::from(self.has_delta)
    }

    fn dim(&self) -> usize {
        self.gamma() + self.width
    }

    fn alpha_index(&self, k: usize) -> usize {
        if self.num_alpha == 1 {
            0
        } else {
            k
        }
    }

    /// Dense feature vector of 0-based window `k`.
    fn features<T: Scalar>(&self, k: usize, price: T, x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        out[self.alpha_index(k)] = T::one();
        out[self.beta()] = -price;
        if self.has_delta {
            out[self.num_alpha + 1] = T::of_usize(k + 1);
        }
        out[self.gamma()..].copy_from_slice(x);
    }

    fn params<T: Scalar>(
        &self,
        theta: &[T],
        m: usize,
        encoding: &WindowEncoding,
    ) -> Result<WindowMnlParams<T>> {
        let alpha = if self.num_alpha == 1 {
            vec![theta[0]; m]
        } else {
            theta[..m].to_vec()
        };
        let delta = if self.has_delta {
            theta[self.num_alpha + 1]
        } else {
            T::zero()
        };
        WindowMnlParams::new(
            alpha,
            theta[self.beta()],
            theta[self.gamma()..].to_vec(),
            delta,
            encoding.clone(),
        )
    }
}

const CHUNK: usize = 512;

struct WindowLikelihood<'a, T> {
    rows: &'a [SecondLevelObservation<T>],
    layout: Layout,
}

impl<T: Scalar> WindowLikelihood<'_, T> {
    fn chunk(&self, range: std::ops::Range<usize>, theta: &[T], hess: bool) -> Evaluation<T> {
        let d = self.layout.dim();
        let mut value = T::zero();
        let mut gradient = vec![T::zero(); d];
        let mut hessian = if hess {
            Some(vec![T::zero(); d * d])
        } else {
            None
        };
        let mut f = vec![T::zero(); d];
        let mut mean = vec![T::zero(); d];
        for row in &self.rows[range] {
            let m = row.prices.len();
            let mut u = Vec::with_capacity(m);
            let mut feats = Vec::with_capacity(m);
            for k in 0..m {
                self.layout
                    .features(k, row.prices[k], &row.features, &mut f);
                u.push(ordered_sum(f.iter().zip(theta).map(|(&a, &b)| a * b)));
                feats.push(f.clone());
            }
            let Ok(probs) = softmax_with_outside(&u) else {
                value = T::nan();
                continue;
            };
            let chosen_p = probs[row.chosen_window];
            value -= chosen_p.ln();
            mean.iter_mut().for_each(|v| *v = T::zero());
            for (k, fk) in feats.iter().enumerate() {
                let p = probs[k + 1];
                for (mv, &fv) in mean.iter_mut().zip(fk) {
                    *mv += p * fv;
                }
                if let Some(h) = hessian.as_mut() {
                    for a in 0..d {
                        if fk[a] == T::zero() {
                            continue;
                        }
                        for b in 0..d {
                            h[a * d + b] += p * fk[a] * fk[b];
                        }
                    }
                }
            }
            for (g, &mv) in gradient.iter_mut().zip(&mean) {
                *g += mv;
            }
            if row.chosen_window > 0 {
                for (g, &fv) in gradient.iter_mut().zip(&feats[row.chosen_window - 1]) {
                    *g -= fv;
                }
            }
            if let Some(h) = hessian.as_mut() {
                for a in 0..d {
                    for b in 0..d {
                        h[a * d + b] -= mean[a] * mean[b];
                    }
                }
            }
        }
        Evaluation {
            value,
            gradient,
            hessian,
        }
    }
}

impl<T: Scalar> SmoothObjective<T> for WindowLikelihood<'_, T> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn evaluate(&self, theta: &[T], with_hessian: bool) -> Result<Evaluation<T>> {
        let n = self.rows.len();
        let ranges: Vec<_> = (0..n)
            .step_by(CHUNK)
            .map(|s| s..(s + CHUNK).min(n))
            .collect();
        let parts: Vec<Evaluation<T>> = ranges
            .into_par_iter()
            .map(|r| self.chunk(r, theta, with_hessian))
            .collect();
        let d = self.layout.dim();
        let mut total = Evaluation {
            value: T::zero(),
            gradient: vec![T::zero(); d],
            hessian: if with_hessian {
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
            return Err(Error::NonFinite("window negative log-likelihood"));
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WindowFitConfig<T> {
    pub mode: InterceptMode,
    pub encoding: WindowEncoding,
    pub tolerance: T,
    pub max_iterations: usize,
    pub beta_floor: T,
}

impl<T: Scalar> Default for WindowFitConfig<T> {
    fn default() -> Self {
        Self {
            mode: InterceptMode::Common,
            encoding: WindowEncoding::default(),
            tolerance: T::lit(1e-6),
            max_iterations: 500,
            beta_floor: T::lit(1e-4),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WindowFit<T> {
    pub params: WindowMnlParams<T>,
    pub nll: T,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: T,
    pub std_errors: Vec<T>,
}

/// Negative log-likelihood of `rows` under `params`.
pub fn window_nll<T: Scalar>(
    params: &WindowMnlParams<T>,
    rows: &[SecondLevelObservation<T>],
) -> Result<T> {
    let mut total = Vec::with_capacity(rows.len());
    for row in rows {
        let probs = window_probabilities(params, &row.features, &row.prices)?;
        total.push(-probs[row.chosen_window].ln());
    }
    Ok(ordered_sum(total))
}

pub fn fit_window_model<T: Scalar>(
    rows: &[SecondLevelObservation<T>],
    config: &WindowFitConfig<T>,
) -> Result<WindowFit<T>> {
    let first = rows.first().ok_or(Error::Empty("second-level rows"))?;
    let m = first.prices.len();
    if m == 0 {
        return Err(Error::Empty("window set"));
    }
    let width = config.encoding.width();
    for (r, row) in rows.iter().enumerate() {
        if row.prices.len() != m {
            return Err(Error::LengthMismatch {
                what: "window prices",
                expected: m,
                found: row.prices.len(),
            });
        }
        if row.features.len() != width {
            return Err(Error::LengthMismatch {
                what: "window features",
                expected: width,
                found: row.features.len(),
            });
        }
        if row.chosen_window > m {
            return Err(Error::ChosenNotOffered {
                row: r,
                chosen: row.chosen_window,
            });
        }
        if row
            .prices
            .iter()
            .chain(&row.features)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("second-level row"));
        }
    }
    if rows.iter().all(|r| r.chosen_window == 0) {
        return Err(Error::Unidentifiable {
            reason: "no window purchases".into(),
            buckets: Vec::new(),
        });
    }
    let p0 = first.prices[0];
    if rows.iter().all(|r| r.prices.iter().all(|&p| p == p0)) {
        return Err(Error::Unidentifiable {
            reason: "no window price variation".into(),
            buckets: Vec::new(),
        });
    }

    let layout = Layout {
        num_alpha: match config.mode {
            InterceptMode::Common => 1,
            InterceptMode::PerWindow => m,
        },
        has_delta: config.mode == InterceptMode::Common,
        width,
    };
    let likelihood = WindowLikelihood { rows, layout };
    let d = layout.dim();
    let mut bounds = Bounds::unbounded(d);
    bounds.lower[layout.beta()] = config.beta_floor;
    let mut x0 = vec![T::zero(); d];
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
            "window model fit stopped after {} iterations with projected gradient {}",
            min.iterations,
            min.projected_gradient_norm
        );
    }
    let std_errors = optim::inverse_diagonal(&min.hessian, d)
        .into_iter()
        .map(|v| if v >= T::zero() { v.sqrt() } else { T::nan() })
        .collect();
    Ok(WindowFit {
        params: layout.params(&min.x, m, &config.encoding)?,
        nll: min.value,
        iterations: min.iterations,
        converged: min.converged,
        gradient_norm: min.projected_gradient_norm,
        std_errors,
    })
}

/// An unconverted quote awaiting a sampled click.
#[derive(Clone, Debug)]
pub struct UnconvertedQuote<'a, T> {
    pub features: &'a FeatureVector,
    /// First-level `[P(Y = 0), ..., P(Y = L)]` at the logged prices.
    pub base_probs: Vec<T>,
    /// `window_prices[i - 1]`: logged window prices of lead time `i`, empty
    /// when not logged.
    pub window_prices: &'a [Vec<T>],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Imputation<T> {
    pub rows: Vec<SecondLevelObservation<T>>,
    /// Index into the input of each produced row.
    pub source: Vec<usize>,
    /// Quotes without purchase mass on a lead time with logged windows.
    pub dropped: usize,
}

/// Samples a clicked lead time `i` for each unconverted quote with
/// probability `P(Y = i) / (1 - P(Y = 0))`, restricted to lead times whose
/// windows were logged.
pub fn impute_clicks<T: Scalar>(
    quotes: &[UnconvertedQuote<'_, T>],
    encoding: &WindowEncoding,
    seed: u64,
) -> Result<Imputation<T>> {
    let sampled: Vec<Option<usize>> = quotes
        .par_iter()
        .enumerate()
        .map(|(idx, q)| {
            let weights: Vec<f64> = (1..q.base_probs.len())
                .map(|i| {
                    let logged = q.window_prices.get(i - 1).is_some_and(|w| !w.is_empty());
                    if logged {
                        q.base_probs[i].as_f64().max(0.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let dist = WeightedIndex::new(&weights).ok()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            Some(dist.sample(&mut rng) + 1)
        })
        .collect();
    let mut out = Imputation {
        rows: Vec::new(),
        source: Vec::new(),
        dropped: 0,
    };
    for (idx, (q, pick)) in quotes.iter().zip(sampled).enumerate() {
        match pick {
            Some(i) => {
                out.rows.push(SecondLevelObservation {
                    features: encoding.encode(q.features, i),
                    prices: q.window_prices[i - 1].clone(),
                    chosen_window: 0,
                    imputed: true,
                });
                out.source.push(idx);
            }
            None => out.dropped += 1,
        }
    }
    if out.dropped > 0 {
        log::warn!(
            "{} unconverted quotes had no purchase mass and were dropped",
            out.dropped
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub points: usize,
    /// Refinement resolution multiplier around the incumbent; 0 or 1 disables it.
    pub refine_factor: usize,
}

impl Default for WindowGrid {
    fn default() -> Self {
        Self {
            points: 101,
            refine_factor: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WindowPricing<T> {
    pub prices: Vec<T>,
    pub markup: T,
    /// `sum_j (p_j - c_j) P(Y2 = j)` at the returned prices.
    pub objective: T,
}

/// Conditional second-level objective `sum_j (p_j - c_j) P(Y2 = j)`.
pub fn window_objective<T: Scalar>(
    params: &WindowMnlParams<T>,
    x: &[T],
    prices: &[T],
    costs: &[T],
) -> Result<T> {
    let probs = window_probabilities(params, x, prices)?;
    Ok(ordered_sum(
        prices
            .iter()
            .zip(costs)
            .enumerate()
            .map(|(k, (&p, &c))| (p - c) * probs[k + 1]),
    ))
}

/// Prices the windows of one lead time: every cheapest-cost window gets
/// exactly `first_level_price`, the others `max(first_level_price,
/// min(c_j + m3, ceiling))` with `m3` found by 1-D grid search.
pub fn price_windows<T: Scalar>(
    first_level_price: T,
    costs: &[T],
    params: &WindowMnlParams<T>,
    x: &[T],
    ceiling: T,
    grid: &WindowGrid,
) -> Result<WindowPricing<T>> {
    if costs.is_empty() {
        return Err(Error::Empty("window set"));
    }
    if grid.points == 0 {
        return Err(Error::Empty("window markup grid"));
    }
    if costs.iter().any(|c| !c.is_finite()) || !first_level_price.is_finite() {
        return Err(Error::NonFinite("window costs"));
    }
    let min_cost = costs.iter().fold(T::infinity(), |m, &c| m.min(c));
    let pinned: Vec<bool> = costs.iter().map(|&c| c == min_cost).collect();
    let assign = |m3: T| -> Vec<T> {
        costs
            .iter()
            .zip(&pinned)
            .map(|(&c, &pin)| {
                if pin {
                    first_level_price
                } else {
                    first_level_price.max((c + m3).min(ceiling))
                }
            })
            .collect()
    };
    if pinned.iter().all(|&p| p) {
        let prices = assign(T::zero());
        let objective = window_objective(params, x, &prices, costs)?;
        return Ok(WindowPricing {
            prices,
            markup: T::zero(),
            objective,
        });
    }
    if !ceiling.is_finite() {
        return Err(Error::invalid("window pricing needs a finite ceiling"));
    }
    let hi = (ceiling - min_cost).max(T::zero());
    let mut best: Option<(T, T, Vec<T>)> = None;
    let consider = |m3: T, best: &mut Option<(T, T, Vec<T>)>| -> Result<()> {
        let prices = assign(m3);
        let v = window_objective(params, x, &prices, costs)?;
        let better = match best.as_ref() {
            None => true,
            Some((bv, bm, _)) => v > *bv || (v == *bv && m3 < *bm),
        };
        if better {
            *best = Some((v, m3, prices));
        }
        Ok(())
    };
    let coarse = linspace(T::zero(), hi, grid.points);
    for &m3 in &coarse {
        consider(m3, &mut best)?;
    }
    if grid.refine_factor > 1 && grid.points > 1 {
        let step = hi / T::of_usize(grid.points - 1);
        let center = best.as_ref().map(|b| b.1).unwrap_or(T::zero());
        let f = grid.refine_factor;
        for j in 0..=2 * f {
            let offset = T::of_usize(j) - T::of_usize(f);
            consider(
                (center + step * offset / T::of_usize(f))
                    .max(T::zero())
                    .min(hi),
                &mut best,
            )?;
        }
    }
    let (objective, markup, prices) = best.expect("non-empty grid");
    Ok(WindowPricing {
        prices,
        markup,
        objective,
    })
}

/// `P(Y1 = i) / sum_k P(Y1 = k)` over purchase options `i = 1..L`.
pub fn purchase_weights<T: Scalar>(base_probs: &[T]) -> Result<Vec<T>> {
    if base_probs.len() < 2 {
        return Err(Error::Empty("purchase options"));
    }
    let mass = ordered_sum(base_probs[1..].iter().copied());
    if !(mass > T::zero()) {
        return Err(Error::invalid("no purchase probability mass"));
    }
    Ok(base_probs[1..].iter().map(|&p| p / mass).collect())
}

/// `sum_i w_i sum_j (p_ij - c_ij) P(Y2 = j | x, i)` with purchase weights
/// `w_i`; lead times with zero weight may carry empty window vectors.
pub fn combined_objective<T: Scalar>(
    base_probs: &[T],
    params: &WindowMnlParams<T>,
    features: &[Vec<T>],
    prices: &[Vec<T>],
    costs: &[Vec<T>],
) -> Result<T> {
    let weights = purchase_weights(base_probs)?;
    let l = weights.len();
    for (what, n) in [
        ("window features", features.len()),
        ("window prices", prices.len()),
        ("window costs", costs.len()),
    ] {
        if n != l {
            return Err(Error::LengthMismatch {
                what,
                expected: l,
                found: n,
            });
        }
    }
    let mut terms = Vec::with_capacity(l);
    for k in 0..l {
        if weights[k] == T::zero() {
            continue;
        }
        terms.push(weights[k] * window_objective(params, &features[k], &prices[k], &costs[k])?);
    }
    Ok(ordered_sum(terms))
}
