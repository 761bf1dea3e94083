//! Additive forecasting model: `y = g(t) + s(t) + h(t) + β·X(t) + ε`.
//!
//! Fitting works in scaled units: time maps onto `[0, 1]` over the training
//! span and `y` is divided by `max |y|`. Seasonal terms use absolute time in
//! days, so periods are stated in days.
//!
//! The objective is a MAP estimate under Laplace priors on the changepoint
//! deltas and Gaussian priors on seasonal, holiday and regressor coefficients:
//!
//! ```text
//! ½‖ŷ − y‖² + σ²/τ_δ ‖δ‖₁ + σ²/2 Σ β_j²/τ_j²
//! ```
//!
//! where `σ` is the observation noise. Unless fixed in the configuration, `σ`
//! is re-estimated from the residuals between solves until it settles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::{fourier_into, make_changepoints, Holiday, MS_PER_DAY};
use super::linalg::{dot, Cholesky, Matrix};
use super::solver::{lasso_quadratic, proximal_gradient, SmoothObjective, SolverOptions};
use super::trend::{Growth, LogisticGradient, TrendParams};
use super::ForecastError;
use crate::scalar::Scalar;
use crate::series::TimeSeries;

/// Lower bound on the estimated noise level, in scaled units.
const SIGMA_FLOOR: f64 = 1e-3;
const MAX_SIGMA_ROUNDS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendType {
    #[default]
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonalityMode {
    #[default]
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seasonality {
    pub name: String,
    /// Period in days.
    pub period: f64,
    pub fourier_order: usize,
}

impl Seasonality {
    pub fn new(name: impl Into<String>, period: f64, fourier_order: usize) -> Self {
        Self { name: name.into(), period, fourier_order }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub trend_type: TrendType,
    /// Saturation level in data units; required for logistic trends.
    pub capacity: Option<f64>,
    pub n_changepoints: usize,
    pub changepoint_range: f64,
    pub changepoint_prior_scale: f64,
    pub seasonalities: Vec<Seasonality>,
    pub seasonality_prior_scale: f64,
    pub seasonality_mode: SeasonalityMode,
    pub holidays: Vec<Holiday>,
    pub holidays_prior_scale: f64,
    pub regressors: Vec<String>,
    pub regressor_prior_scale: f64,
    /// Fixes the noise level (scaled units) instead of estimating it.
    pub observation_sigma: Option<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            trend_type: TrendType::Linear,
            capacity: None,
            n_changepoints: 25,
            changepoint_range: 0.8,
            changepoint_prior_scale: 0.05,
            seasonalities: vec![
                Seasonality::new("yearly", 365.25, 10),
                Seasonality::new("weekly", 7.0, 3),
                Seasonality::new("daily", 1.0, 4),
            ],
            seasonality_prior_scale: 10.0,
            seasonality_mode: SeasonalityMode::Additive,
            holidays: Vec::new(),
            holidays_prior_scale: 10.0,
            regressors: Vec::new(),
            regressor_prior_scale: 10.0,
            observation_sigma: None,
            max_iterations: 10_000,
            tolerance: 1e-10,
        }
    }
}

impl ModelConfig {
    /// Default configuration without any seasonality.
    pub fn bare() -> Self {
        Self { seasonalities: Vec::new(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let err = |m: String| Err(ForecastError::Config(m));
        if self.trend_type == TrendType::Logistic {
            match self.capacity {
                None => return err("logistic trend requires a capacity".into()),
                Some(c) if !(c > 0.0 && c.is_finite()) => return err(format!("capacity must be > 0, got {c}")),
                _ => {}
            }
        }
        if !(self.changepoint_range > 0.0 && self.changepoint_range <= 1.0) {
            return err(format!("changepoint_range must lie in (0, 1], got {}", self.changepoint_range));
        }
        for (name, v) in [
            ("changepoint_prior_scale", self.changepoint_prior_scale),
            ("seasonality_prior_scale", self.seasonality_prior_scale),
            ("holidays_prior_scale", self.holidays_prior_scale),
            ("regressor_prior_scale", self.regressor_prior_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be > 0, got {v}"));
            }
        }
        for s in &self.seasonalities {
            if !(s.period > 0.0 && s.period.is_finite()) {
                return err(format!("seasonality {:?}: period must be > 0", s.name));
            }
            if s.fourier_order == 0 {
                return err(format!("seasonality {:?}: fourier_order must be >= 1", s.name));
            }
        }
        for h in &self.holidays {
            if h.lower_window > 0 || h.upper_window < 0 {
                return err(format!("holiday {:?}: windows must satisfy lower <= 0 <= upper", h.name));
            }
        }
        if let Some(s) = self.observation_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return err(format!("observation_sigma must be > 0, got {s}"));
            }
        }
        if self.max_iterations == 0 || !(self.tolerance >= 0.0) {
            return err("solver limits must be positive".into());
        }
        Ok(())
    }

    fn feature_count(&self) -> usize {
        self.seasonalities.iter().map(|s| 2 * s.fourier_order).sum::<usize>() + self.holidays.len() + self.regressors.len()
    }
}

/// Affine maps between data units and the units the model was fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Scaling<T> {
    pub t_start_ms: i64,
    /// Training span in milliseconds; scaled time is `(ms - t_start_ms) / t_scale_ms`.
    pub t_scale_ms: i64,
    pub y_scale: T,
}

impl<T: Scalar> Scaling<T> {
    pub fn time(&self, ms: i64) -> T {
        T::of((ms - self.t_start_ms) as f64 / self.t_scale_ms as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SeasonalCoeffs<T> {
    pub name: String,
    /// `[a_1, b_1, …, a_K, b_K]` for cosine/sine pairs, scaled units.
    pub coeffs: Vec<T>,
}

/// Fitted parameters. Coefficients are in scaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ForecastModel<T> {
    pub config: ModelConfig,
    pub k: T,
    pub m: T,
    pub changepoints: Vec<T>,
    pub deltas: Vec<T>,
    pub seasonal_coeffs: Vec<SeasonalCoeffs<T>>,
    pub holiday_effects: Vec<T>,
    pub regressor_coeffs: Vec<T>,
    /// `(mean, std)` used to standardise each regressor.
    pub regressor_standardization: Vec<(T, T)>,
    pub scaling: Scaling<T>,
    /// Observation noise in scaled units.
    pub sigma_obs: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FitResult<T> {
    pub model: ForecastModel<T>,
    /// `y - yhat` at each defined training point, data units.
    pub residuals: Vec<T>,
    pub in_sample_rmse: T,
    pub iterations: usize,
    pub converged: bool,
}

/// One row of [`ForecastModel::predict`], all in data units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow<T> {
    pub ds: i64,
    pub yhat: T,
    pub trend: T,
    pub seasonal: T,
    pub holiday: T,
    pub regressor: T,
}

/// Feature layout: seasonal columns, then holidays, then regressors.
#[derive(Debug, Clone, Copy)]
struct Layout {
    seasonal: usize,
    holidays: usize,
    regressors: usize,
}

impl Layout {
    fn of(config: &ModelConfig) -> Self {
        Self {
            seasonal: config.seasonalities.iter().map(|s| 2 * s.fourier_order).sum(),
            holidays: config.holidays.len(),
            regressors: config.regressors.len(),
        }
    }

    fn total(&self) -> usize {
        self.seasonal + self.holidays + self.regressors
    }
}

fn feature_row<T: Scalar>(config: &ModelConfig, standardization: &[(T, T)], ds: i64, reg: &[T], out: &mut Vec<T>) {
    out.clear();
    let days = T::of(ds as f64 / MS_PER_DAY as f64);
    for s in &config.seasonalities {
        fourier_into(days, T::of(s.period), s.fourier_order, out);
    }
    for h in &config.holidays {
        out.push(if h.is_active(ds) { T::one() } else { T::zero() });
    }
    for (x, (mean, std)) in reg.iter().zip(standardization) {
        out.push((*x - *mean) / *std);
    }
}

fn regressor_matrix<T: Scalar>(
    names: &[String],
    values: &BTreeMap<String, Vec<T>>,
    len: usize,
) -> Result<Vec<Vec<T>>, ForecastError> {
    names
        .iter()
        .map(|name| match values.get(name) {
            Some(v) if v.len() == len && v.iter().all(|x| x.is_finite()) => Ok(v.clone()),
            _ => Err(ForecastError::MissingRegressor(name.clone())),
        })
        .collect()
}

/// The penalised objective for one training set, in scaled units.
///
/// Parameters are laid out as `[k, m, δ_1..δ_S, β_1..β_q]` with `β` covering
/// seasonal, holiday and regressor columns in that order.
#[derive(Debug, Clone)]
pub struct FitProblem<T> {
    config: ModelConfig,
    scaling: Scaling<T>,
    t: Vec<T>,
    y: Vec<T>,
    features: Matrix<T>,
    ridge: Vec<T>,
    changepoints: Vec<T>,
    capacity: Option<T>,
    standardization: Vec<(T, T)>,
    sigma2: T,
}

impl<T: Scalar> FitProblem<T> {
    pub fn new(
        config: &ModelConfig,
        train: &TimeSeries<T>,
        regressors: &BTreeMap<String, Vec<T>>,
    ) -> Result<Self, ForecastError> {
        config.validate()?;
        let reg_columns = regressor_matrix(&config.regressors, regressors, train.len())?;
        let mut ds = Vec::new();
        let mut y_raw = Vec::new();
        let mut kept = Vec::new();
        for (i, (ts, v)) in train.iter().enumerate() {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(ForecastError::Config(format!("non-finite observation at {ts}")));
                }
                ds.push(ts);
                y_raw.push(v);
                kept.push(i);
            }
        }
        if ds.len() < 2 {
            return Err(ForecastError::TooShort { needed: 2, got: ds.len() });
        }
        let (t0, t1) = (ds[0], ds[ds.len() - 1]);
        if t1 <= t0 {
            return Err(ForecastError::DegenerateTime);
        }
        if let (TrendType::Logistic, Some(cap)) = (config.trend_type, config.capacity) {
            if let Some(v) = y_raw.iter().find(|v| v.as_f64() > cap) {
                return Err(ForecastError::CapacityExceeded { value: v.as_f64(), capacity: cap });
            }
        }
        let max_abs = y_raw.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        let y_scale = if max_abs > T::zero() { max_abs } else { T::one() };
        let scaling = Scaling { t_start_ms: t0, t_scale_ms: t1 - t0, y_scale };

        let standardization: Vec<(T, T)> = reg_columns
            .iter()
            .map(|col| {
                let xs: Vec<T> = kept.iter().map(|&i| col[i]).collect();
                let (mean, std) = super::pipeline::mean_std(&xs);
                (mean, if std > T::zero() { std } else { T::one() })
            })
            .collect();

        let layout = Layout::of(config);
        let q = layout.total();
        let mut features = Matrix::zeros(ds.len(), q);
        let mut row = Vec::with_capacity(q);
        let mut reg_row = vec![T::zero(); reg_columns.len()];
        for (r, (&ts, &i)) in ds.iter().zip(&kept).enumerate() {
            for (slot, col) in reg_row.iter_mut().zip(&reg_columns) {
                *slot = col[i];
            }
            feature_row(config, &standardization, ts, &reg_row, &mut row);
            features.row_mut(r).copy_from_slice(&row);
        }
        let inv_sq = |s: f64| T::of(1.0 / (s * s));
        let mut ridge = vec![inv_sq(config.seasonality_prior_scale); layout.seasonal];
        ridge.extend(std::iter::repeat_n(inv_sq(config.holidays_prior_scale), layout.holidays));
        ridge.extend(std::iter::repeat_n(inv_sq(config.regressor_prior_scale), layout.regressors));

        let n_cp = config.n_changepoints.min(ds.len() - 1);
        let t: Vec<T> = ds.iter().map(|&d| scaling.time(d)).collect();
        let changepoints = make_changepoints(T::zero(), T::one(), n_cp, T::of(config.changepoint_range));
        let capacity = match config.trend_type {
            TrendType::Logistic => config.capacity.map(|c| T::of(c) / y_scale),
            TrendType::Linear => None,
        };
        let sigma2 = config.observation_sigma.map_or(T::one(), |s| T::of(s * s));
        Ok(Self {
            config: config.clone(),
            scaling,
            t,
            y: y_raw.into_iter().map(|v| v / y_scale).collect(),
            features,
            ridge,
            changepoints,
            capacity,
            standardization,
            sigma2,
        })
    }

    pub fn n_params(&self) -> usize {
        2 + self.changepoints.len() + self.features.cols()
    }

    pub fn n_changepoints(&self) -> usize {
        self.changepoints.len()
    }

    /// Observation count after dropping missing values.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    pub fn set_sigma2(&mut self, sigma2: T) {
        self.sigma2 = sigma2;
    }

    /// Weight on the changepoint L1 term.
    pub fn l1_weight(&self) -> T {
        self.sigma2 / T::of(self.config.changepoint_prior_scale)
    }

    fn delta_range(&self) -> std::ops::Range<usize> {
        2..2 + self.changepoints.len()
    }

    fn trend_values(&self, theta: &[T]) -> Vec<T> {
        let deltas = &theta[self.delta_range()];
        match self.capacity {
            Some(cap) => {
                let g = LogisticGradient::new(cap, theta[0], theta[1], &self.changepoints, deltas);
                self.t.iter().map(|&t| g.eval(t)).collect()
            }
            None => {
                let tp = TrendParams::linear(theta[0], theta[1]).with_changepoints(self.changepoints.clone(), deltas.to_vec());
                self.t.iter().map(|&t| tp.eval(t)).collect()
            }
        }
    }

    fn multiplicative(&self) -> bool {
        self.config.seasonality_mode == SeasonalityMode::Multiplicative
    }

    /// Scaled-unit predictions at the training points.
    pub fn fitted(&self, theta: &[T]) -> Vec<T> {
        let beta = &theta[2 + self.changepoints.len()..];
        let xb = self.features.mul_vec(beta);
        let g = self.trend_values(theta);
        g.iter()
            .zip(&xb)
            .map(|(&g, &x)| if self.multiplicative() { g * (T::one() + x) } else { g + x })
            .collect()
    }

    fn ridge_term(&self, beta: &[T]) -> T {
        T::of(0.5) * self.sigma2 * beta.iter().zip(&self.ridge).map(|(&b, &w)| w * b * b).sum::<T>()
    }

    /// Full penalised objective including the L1 term.
    pub fn objective(&self, theta: &[T]) -> T {
        self.value(theta) + self.l1_weight() * theta[self.delta_range()].iter().map(|d| d.abs()).sum::<T>()
    }

    fn rss(&self, theta: &[T]) -> T {
        self.fitted(theta).iter().zip(&self.y).map(|(&f, &y)| (f - y) * (f - y)).sum()
    }

    /// Unpenalised-by-trend starting point.
    pub fn initial_params(&self) -> Vec<T> {
        let mut theta = vec![T::zero(); self.n_params()];
        let n = self.y.len();
        let (t0, t1) = (self.t[0], self.t[n - 1]);
        let (y0, y1) = (self.y[0], self.y[n - 1]);
        match self.capacity {
            None => {
                let k = (y1 - y0) / (t1 - t0);
                theta[0] = k;
                theta[1] = y0 - k * t0;
            }
            Some(cap) => {
                let lo = T::of(1e-3);
                let logit = |y: T| {
                    let r = (y / cap).max(lo).min(T::one() - lo);
                    (r / (T::one() - r)).ln()
                };
                let (l0, l1) = (logit(y0), logit(y1));
                let mut k = (l1 - l0) / (t1 - t0);
                if k.abs() < T::of(1e-2) {
                    k = T::of(1e-2);
                }
                theta[0] = k;
                theta[1] = t0 - l0 / k;
            }
        }
        theta
    }

    /// Closed-form solve of the linear additive case: the unpenalised block
    /// `[k, m, β]` is eliminated exactly and the L1 problem runs on `δ` alone.
    fn solve_linear_additive(&self, gram: &Matrix<T>, xty: &[T], start: &[T]) -> Result<(Vec<T>, usize, bool), ForecastError> {
        let s = self.changepoints.len();
        let q = self.features.cols();
        // Design columns ordered [t, 1, F | A].
        let u: Vec<usize> = (0..2 + q).collect();
        let d: Vec<usize> = (2 + q..2 + q + s).collect();
        let mut h_uu = gram.select(&u, &u);
        for (j, &w) in self.ridge.iter().enumerate() {
            let v = h_uu.get(2 + j, 2 + j) + self.sigma2 * w;
            h_uu.set(2 + j, 2 + j, v);
        }
        let chol = Cholesky::new(&h_uu)
            .ok_or_else(|| ForecastError::Numerical("trend/seasonal block is singular".into()))?;
        let c_u: Vec<T> = u.iter().map(|&i| xty[i]).collect();
        let c_d: Vec<T> = d.iter().map(|&i| xty[i]).collect();
        let h_ud = gram.select(&u, &d);
        let z: Vec<Vec<T>> = (0..s).map(|j| chol.solve(&h_ud.column(j))).collect();
        let mut g = gram.select(&d, &d);
        for a in 0..s {
            for b in 0..s {
                let v = g.get(a, b) - dot(&h_ud.column(a), &z[b]);
                g.set(a, b, v);
            }
        }
        let b: Vec<T> = (0..s).map(|j| c_d[j] - dot(&z[j], &c_u)).collect();
        let opts = SolverOptions { max_iterations: self.config.max_iterations, tolerance: self.config.tolerance };
        let report = lasso_quadratic(&g, &b, self.l1_weight(), &start[self.delta_range()], opts);
        let delta = report.x;
        let rhs: Vec<T> = (0..u.len()).map(|i| c_u[i] - (0..s).map(|j| h_ud.get(i, j) * delta[j]).sum::<T>()).collect();
        let uhat = chol.solve(&rhs);
        let mut theta = vec![T::zero(); self.n_params()];
        theta[0] = uhat[0];
        theta[1] = uhat[1];
        theta[2..2 + s].copy_from_slice(&delta);
        theta[2 + s..].copy_from_slice(&uhat[2..]);
        Ok((theta, report.iterations, report.converged))
    }

    fn design_gram(&self) -> (Matrix<T>, Vec<T>) {
        let n = self.y.len();
        let q = self.features.cols();
        let s = self.changepoints.len();
        let mut x = Matrix::zeros(n, 2 + q + s);
        for i in 0..n {
            let row = x.row_mut(i);
            row[0] = self.t[i];
            row[1] = T::one();
            row[2..2 + q].copy_from_slice(self.features.row(i));
            for (j, &c) in self.changepoints.iter().enumerate() {
                row[2 + q + j] = (self.t[i] - c).max(T::zero());
            }
        }
        (x.gram(), x.t_mul_vec(&self.y))
    }

    fn solve_general(&self, start: &[T]) -> (Vec<T>, usize, bool) {
        let opts = SolverOptions { max_iterations: self.config.max_iterations, tolerance: self.config.tolerance };
        let r = proximal_gradient(self, self.delta_range(), self.l1_weight(), start, opts);
        (r.x, r.iterations, r.converged)
    }

    /// Minimises the objective, re-estimating `σ` between solves unless it is fixed.
    pub fn solve(&mut self) -> Result<(Vec<T>, usize, bool), ForecastError> {
        let closed_form = self.capacity.is_none() && !self.multiplicative();
        let gram = closed_form.then(|| self.design_gram());
        let n = T::of_usize(self.y.len());
        let floor = T::of(SIGMA_FLOOR * SIGMA_FLOOR);
        let estimate = self.config.observation_sigma.is_none();
        if estimate {
            let mean = self.y.iter().copied().sum::<T>() / n;
            let var = self.y.iter().map(|&y| (y - mean) * (y - mean)).sum::<T>() / n;
            self.sigma2 = var.max(floor);
        }
        let mut theta = self.initial_params();
        let mut iterations = 0;
        let mut converged;
        for _ in 0..MAX_SIGMA_ROUNDS {
            let (next, it, ok) = match &gram {
                Some((g, c)) => self.solve_linear_additive(g, c, &theta)?,
                None => self.solve_general(&theta),
            };
            theta = next;
            iterations += it;
            converged = ok;
            if !estimate {
                return Ok((theta, iterations, converged));
            }
            let sigma2 = (self.rss(&theta) / n).max(floor);
            let change = (sigma2 - self.sigma2).abs() / self.sigma2;
            self.sigma2 = sigma2;
            if change < T::of(1e-4) {
                break;
            }
        }
        // Final solve at the settled noise level.
        let (theta, it, ok) = match &gram {
            Some((g, c)) => self.solve_linear_additive(g, c, &theta)?,
            None => self.solve_general(&theta),
        };
        converged = ok;
        Ok((theta, iterations + it, converged))
    }

    /// Packs scaled-unit parameters into a model.
    pub fn into_model(&self, theta: &[T]) -> ForecastModel<T> {
        let s = self.changepoints.len();
        let beta = &theta[2 + s..];
        let mut seasonal_coeffs = Vec::new();
        let mut offset = 0;
        for season in &self.config.seasonalities {
            let w = 2 * season.fourier_order;
            seasonal_coeffs.push(SeasonalCoeffs { name: season.name.clone(), coeffs: beta[offset..offset + w].to_vec() });
            offset += w;
        }
        let h = self.config.holidays.len();
        ForecastModel {
            config: self.config.clone(),
            k: theta[0],
            m: theta[1],
            changepoints: self.changepoints.clone(),
            deltas: theta[2..2 + s].to_vec(),
            seasonal_coeffs,
            holiday_effects: beta[offset..offset + h].to_vec(),
            regressor_coeffs: beta[offset + h..].to_vec(),
            regressor_standardization: self.standardization.clone(),
            scaling: self.scaling,
            sigma_obs: self.sigma2.sqrt(),
        }
    }
}

impl<T: Scalar> SmoothObjective<T> for FitProblem<T> {
    /// `½ Σ r² + ridge`, without the L1 term.
    fn value(&self, theta: &[T]) -> T {
        let beta = &theta[2 + self.changepoints.len()..];
        T::of(0.5) * self.rss(theta) + self.ridge_term(beta)
    }

    fn value_and_gradient(&self, theta: &[T]) -> (T, Vec<T>) {
        let s = self.changepoints.len();
        let q = self.features.cols();
        let beta = &theta[2 + s..];
        let deltas = &theta[2..2 + s];
        let xb = self.features.mul_vec(beta);
        let mult = self.multiplicative();
        let logistic = self.capacity.map(|cap| LogisticGradient::new(cap, theta[0], theta[1], &self.changepoints, deltas));
        let linear = TrendParams::linear(theta[0], theta[1]).with_changepoints(self.changepoints.clone(), deltas.to_vec());
        let mut grad = vec![T::zero(); 2 + s + q];
        let mut rss = T::zero();
        for i in 0..self.y.len() {
            let t = self.t[i];
            let g = match &logistic {
                Some(lg) => lg.eval(t),
                None => linear.eval(t),
            };
            let yhat = if mult { g * (T::one() + xb[i]) } else { g + xb[i] };
            let r = yhat - self.y[i];
            rss = rss + r * r;
            let dg = if mult { r * (T::one() + xb[i]) } else { r };
            match &logistic {
                Some(lg) => {
                    lg.eval_accumulate(t, dg, &mut grad[..2 + s]);
                }
                None => {
                    grad[0] = grad[0] + dg * t;
                    grad[1] = grad[1] + dg;
                    for (j, &c) in self.changepoints.iter().enumerate() {
                        if t >= c {
                            grad[2 + j] = grad[2 + j] + dg * (t - c);
                        }
                    }
                }
            }
            let db = if mult { r * g } else { r };
            for (slot, &f) in grad[2 + s..].iter_mut().zip(self.features.row(i)) {
                *slot = *slot + db * f;
            }
        }
        for ((slot, &b), &w) in grad[2 + s..].iter_mut().zip(beta).zip(&self.ridge) {
            *slot = *slot + self.sigma2 * w * b;
        }
        (T::of(0.5) * rss + self.ridge_term(beta), grad)
    }
}

/// Fits the model to the defined points of `train`.
///
/// `regressors` maps each configured regressor name to values aligned with `train`.
pub fn fit<T: Scalar>(
    config: &ModelConfig,
    train: &TimeSeries<T>,
    regressors: &BTreeMap<String, Vec<T>>,
) -> Result<FitResult<T>, ForecastError> {
    let mut problem = FitProblem::new(config, train, regressors)?;
    let (theta, iterations, converged) = problem.solve()?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::Numerical("fit produced non-finite parameters".into()));
    }
    let y_scale = problem.scaling.y_scale;
    let fitted = problem.fitted(&theta);
    let residuals: Vec<T> = problem.y.iter().zip(&fitted).map(|(&y, &f)| (y - f) * y_scale).collect();
    let n = T::of_usize(residuals.len());
    let in_sample_rmse = (residuals.iter().map(|&r| r * r).sum::<T>() / n).sqrt();
    Ok(FitResult { model: problem.into_model(&theta), residuals, in_sample_rmse, iterations, converged })
}

impl<T: Scalar> ForecastModel<T> {
    pub fn trend_params(&self) -> TrendParams<T> {
        let growth = match (self.config.trend_type, self.config.capacity) {
            (TrendType::Logistic, Some(c)) => Growth::Logistic { capacity: T::of(c) / self.scaling.y_scale },
            _ => Growth::Linear,
        };
        TrendParams { growth, k: self.k, m: self.m, changepoints: self.changepoints.clone(), deltas: self.deltas.clone() }
    }

    /// Trend at `ds` in data units.
    pub fn trend_at(&self, ds: i64) -> T {
        self.trend_params().eval(self.scaling.time(ds)) * self.scaling.y_scale
    }

    fn beta(&self) -> Vec<T> {
        let mut beta: Vec<T> = self.seasonal_coeffs.iter().flat_map(|s| s.coeffs.iter().copied()).collect();
        beta.extend(&self.holiday_effects);
        beta.extend(&self.regressor_coeffs);
        beta
    }

    /// Seasonal coefficients of `name`; data units in additive mode, relative in multiplicative mode.
    pub fn seasonal_coefficients(&self, name: &str) -> Option<Vec<T>> {
        let scale = self.component_scale();
        self.seasonal_coeffs.iter().find(|s| s.name == name).map(|s| s.coeffs.iter().map(|&c| c * scale).collect())
    }

    /// Holiday effect κ of `name`; data units in additive mode, relative in multiplicative mode.
    pub fn holiday_effect(&self, name: &str) -> Option<T> {
        let scale = self.component_scale();
        self.config.holidays.iter().position(|h| h.name == name).map(|i| self.holiday_effects[i] * scale)
    }

    fn component_scale(&self) -> T {
        match self.config.seasonality_mode {
            SeasonalityMode::Additive => self.scaling.y_scale,
            SeasonalityMode::Multiplicative => T::one(),
        }
    }

    /// Evaluates the model at `times`. `regressors` must hold one value per time
    /// for every configured regressor.
    pub fn predict(&self, times: &[i64], regressors: &BTreeMap<String, Vec<T>>) -> Result<Vec<PredictionRow<T>>, ForecastError> {
        let reg_columns = regressor_matrix(&self.config.regressors, regressors, times.len())?;
        let layout = Layout::of(&self.config);
        debug_assert_eq!(layout.total(), self.config.feature_count());
        let beta = self.beta();
        let trend = self.trend_params();
        let ys = self.scaling.y_scale;
        let mut row = Vec::with_capacity(layout.total());
        let mut reg_row = vec![T::zero(); reg_columns.len()];
        let mut out = Vec::with_capacity(times.len());
        for (i, &ds) in times.iter().enumerate() {
            for (slot, col) in reg_row.iter_mut().zip(&reg_columns) {
                *slot = col[i];
            }
            feature_row(&self.config, &self.regressor_standardization, ds, &reg_row, &mut row);
            let part = |range: std::ops::Range<usize>| dot(&row[range.clone()], &beta[range]);
            let s = part(0..layout.seasonal);
            let h = part(layout.seasonal..layout.seasonal + layout.holidays);
            let x = part(layout.seasonal + layout.holidays..layout.total());
            let g = trend.eval(self.scaling.time(ds));
            let r = match self.config.seasonality_mode {
                SeasonalityMode::Additive => {
                    let (trend, seasonal, holiday, regressor) = (g * ys, s * ys, h * ys, x * ys);
                    PredictionRow { ds, yhat: trend + seasonal + holiday + regressor, trend, seasonal, holiday, regressor }
                }
                SeasonalityMode::Multiplicative => {
                    let gs = g * ys;
                    PredictionRow {
                        ds,
                        yhat: gs * (T::one() + s + h + x),
                        trend: gs,
                        seasonal: gs * s,
                        holiday: gs * h,
                        regressor: gs * x,
                    }
                }
            };
            out.push(r);
        }
        Ok(out)
    }

    /// `count` evenly spaced times after the end of the training span.
    pub fn future_times(&self, count: usize, step_ms: i64) -> Vec<i64> {
        let end = self.scaling.t_start_ms + self.scaling.t_scale_ms;
        (1..=count as i64).map(|i| end + i * step_ms).collect()
    }
}
