//! Current- and future-environment inference.
//!
//! Both regressors map a window of mature g-values at a score plus a
//! chargeback-rate signal to the g-value of a later period. The default
//! model class is ridge regression on standardised features
//! `[rate, g(t−gap), …, g(t−gap−W+1), t]`, fitted separately for each of the
//! five g-functions and each score band. Scores in a band share parameters.
//!
//! `gap` is the distance from the newest feature table to the target period.
//! At decision time in period `t` the newest mature table is `t−L−1`, so the
//! current-environment model uses `gap = L+1` and the future-environment
//! model (target `t+l`) uses `gap = L+l+1`. Training pairs are built with
//! the same gap, so training and querying see identical feature layouts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::GTrajectory;
use crate::model::{CostParams, GCell, GTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    /// Number of mature tables per feature vector.
    pub window: usize,
    pub ridge: f64,
    /// Score bands sharing one set of parameters.
    pub bands: u32,
    /// Include the target period index as a feature.
    pub trend: bool,
    /// Give every score its own intercept (within-score demeaning), so
    /// score levels come from that score's whole history rather than from
    /// the band's shared slope on noisy lagged values.
    pub score_effects: bool,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self { window: 8, ridge: 1e-3, bands: 20, trend: false, score_effects: true }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.bands == 0 {
            return Err(Error::Config("regressor window and bands must be positive".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Config("regressor ridge must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Which environment the regressor describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InferenceRole {
    Current,
    Future,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LinearModel {
    mean: Vec<f64>,
    /// Zero marks a constant feature that carries no weight.
    scale: Vec<f64>,
    weights: Vec<f64>,
    intercept: f64,
}

impl LinearModel {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut y = self.intercept;
        for j in 0..x.len() {
            if self.scale[j] > 0.0 {
                y += self.weights[j] * (x[j] - self.mean[j]) / self.scale[j];
            }
        }
        y
    }

    /// Prediction at `x` split as `(value, slope on feature 0)`, so the
    /// prediction at `x[0] + d` is `value + slope·d`.
    fn affine_in_first(&self, x: &[f64]) -> (f64, f64) {
        let slope = if self.scale[0] > 0.0 { self.weights[0] / self.scale[0] } else { 0.0 };
        (self.predict(x), slope)
    }

    fn fit(rows: &[f64], targets: &[f64], dim: usize, ridge: f64) -> Self {
        let n = targets.len();
        let nf = n as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.chunks_exact(dim) {
            for j in 0..dim {
                mean[j] += r[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut scale = vec![0.0; dim];
        for r in rows.chunks_exact(dim) {
            for j in 0..dim {
                let d = r[j] - mean[j];
                scale[j] += d * d;
            }
        }
        for j in 0..dim {
            let sd = libm::sqrt(scale[j] / nf);
            scale[j] = if sd > 1e-12 * (1.0 + libm::fabs(mean[j])) { sd } else { 0.0 };
        }
        let intercept = targets.iter().sum::<f64>() / nf;
        let active: Vec<usize> = (0..dim).filter(|&j| scale[j] > 0.0).collect();
        let mut weights = vec![0.0; dim];
        if !active.is_empty() {
            let k = active.len();
            let mut gram = DMatrix::<f64>::zeros(k, k);
            let mut rhs = DVector::<f64>::zeros(k);
            let mut z = vec![0.0; k];
            for (r, &y) in rows.chunks_exact(dim).zip(targets) {
                for (a, &j) in active.iter().enumerate() {
                    z[a] = (r[j] - mean[j]) / scale[j];
                }
                let yc = y - intercept;
                for a in 0..k {
                    rhs[a] += z[a] * yc;
                    for b in a..k {
                        gram[(a, b)] += z[a] * z[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    gram[(a, b)] = gram[(b, a)];
                }
                gram[(a, a)] += ridge;
            }
            let solved = match gram.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => gram.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(k)),
            };
            for (a, &j) in active.iter().enumerate() {
                weights[j] = solved[a];
            }
        }
        Self { mean, scale, weights, intercept }
    }
}

/// Fitted (or empty) environment regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRegressor {
    pub config: RegressorConfig,
    pub role: InferenceRole,
    pub gap: u32,
    max_score: u32,
    bands: u32,
    /// `models[band][g]`.
    models: Vec<[LinearModel; 5]>,
    /// Per-score means `[g] = (target mean, feature means)` when score
    /// effects are on.
    offsets: Vec<[(f64, Vec<f64>); 5]>,
    /// Range of the training signals; queries are clamped into it.
    signal_range: (f64, f64),
    /// Newest period whose table or rate signal entered training.
    pub trained_through: Option<u32>,
}

fn band_of(score: u32, bands: u32, max_score: u32) -> usize {
    ((u64::from(score) * u64::from(bands)) / (u64::from(max_score) + 1)) as usize
}

fn signal_at(signals: &[(u32, f64)], period: u32) -> Option<f64> {
    signals.iter().rev().find(|(p, _)| *p == period).map(|(_, v)| *v)
}

impl EnvRegressor {
    /// An unfitted regressor; inference fails until [`EnvRegressor::fit`] succeeds.
    pub fn unfitted(config: RegressorConfig, role: InferenceRole, gap: u32) -> Self {
        Self {
            config,
            role,
            gap,
            max_score: 0,
            bands: 0,
            models: Vec::new(),
            offsets: Vec::new(),
            signal_range: (0.0, 0.0),
            trained_through: None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        !self.models.is_empty()
    }

    pub fn dim(&self) -> usize {
        1 + self.config.window + usize::from(self.config.trend)
    }

    fn features(&self, traj: &GTrajectory, target: u32, rate: f64, g: usize, score: u32, out: &mut Vec<f64>) -> bool {
        out.clear();
        out.push(rate);
        for k in 0..self.config.window as u32 {
            let Some(p) = target.checked_sub(self.gap + k) else { return false };
            let Some(t) = traj.get(p) else { return false };
            out.push(t.cells()[score as usize].to_array()[g]);
        }
        if self.config.trend {
            out.push(f64::from(target));
        }
        true
    }

    /// Fits on every target period of `traj` that has a signal and a full
    /// window of tables `gap` periods earlier.
    ///
    /// `signals` pairs each target period with its rate signal.
    pub fn fit(
        config: RegressorConfig,
        role: InferenceRole,
        gap: u32,
        traj: &GTrajectory,
        signals: &[(u32, f64)],
    ) -> Result<Self> {
        config.validate()?;
        if gap == 0 {
            return Err(Error::Config("regressor gap must be positive".into()));
        }
        let mut r = Self::unfitted(config, role, gap);
        let needed = config.window + gap as usize;
        let max_score = traj.max_score().ok_or(Error::NotEnoughHistory { needed, available: 0 })?;
        let targets: Vec<(u32, f64)> = traj
            .tables()
            .iter()
            .filter_map(|t| {
                let rate = signal_at(signals, t.period)?;
                let oldest = t.period.checked_sub(gap + config.window as u32 - 1)?;
                (oldest..=t.period - gap).all(|p| traj.get(p).is_some()).then_some((t.period, rate))
            })
            .collect();
        if targets.is_empty() {
            return Err(Error::NotEnoughHistory { needed: needed + 1, available: traj.len() });
        }
        let bands = config.bands.min(max_score + 1);
        r.max_score = max_score;
        r.bands = bands;
        let dim = r.dim();
        let mut band_scores: Vec<Vec<u32>> = vec![Vec::new(); bands as usize];
        for s in 0..=max_score {
            band_scores[band_of(s, bands, max_score)].push(s);
        }
        let effects = config.score_effects;
        let mut x = Vec::with_capacity(dim);
        let mut models = Vec::with_capacity(bands as usize);
        let empty = || (0.0, Vec::new());
        let mut offsets: Vec<[(f64, Vec<f64>); 5]> = if effects {
            (0..=max_score).map(|_| [empty(), empty(), empty(), empty(), empty()]).collect()
        } else {
            Vec::new()
        };
        for scores in &band_scores {
            let mut band_models = Vec::with_capacity(5);
            for g in 0..5 {
                let mut rows = Vec::with_capacity(scores.len() * targets.len() * dim);
                let mut ys = Vec::with_capacity(scores.len() * targets.len());
                for &s in scores {
                    let (first_row, first_y) = (rows.len(), ys.len());
                    for &(p, rate) in &targets {
                        let table = traj.get(p).expect("target in trajectory");
                        if r.features(traj, p, rate, g, s, &mut x) {
                            rows.extend_from_slice(&x);
                            ys.push(table.cells()[s as usize].to_array()[g]);
                        }
                    }
                    let n = ys.len() - first_y;
                    if effects && n > 0 {
                        let nf = n as f64;
                        let y_mean = ys[first_y..].iter().sum::<f64>() / nf;
                        let mut x_mean = vec![0.0; dim];
                        for row in rows[first_row..].chunks_exact(dim) {
                            for j in 0..dim {
                                x_mean[j] += row[j] / nf;
                            }
                        }
                        for y in &mut ys[first_y..] {
                            *y -= y_mean;
                        }
                        for row in rows[first_row..].chunks_exact_mut(dim) {
                            for j in 0..dim {
                                row[j] -= x_mean[j];
                            }
                        }
                        offsets[s as usize][g] = (y_mean, x_mean);
                    }
                }
                band_models.push(LinearModel::fit(&rows, &ys, dim, config.ridge));
            }
            models.push(band_models.try_into().expect("five g-functions"));
        }
        r.offsets = offsets;
        r.models = models;
        r.trained_through = targets.iter().map(|t| t.0).max();
        r.signal_range = targets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.1), hi.max(t.1)));
        Ok(r)
    }

    /// Rate-independent part and rate slope of every cell for the period
    /// `gap` after the newest table of `traj`.
    pub fn rate_response(&self, traj: &GTrajectory) -> Result<RateResponse> {
        if !self.is_fitted() {
            return Err(Error::Unfitted);
        }
        let last = traj.last_period().ok_or(Error::NotEnoughHistory { needed: self.config.window, available: 0 })?;
        if traj.max_score() != Some(self.max_score) {
            return Err(Error::Config(format!("trajectory support differs from fitted support {}", self.max_score)));
        }
        let target = last + self.gap;
        let mut x = Vec::with_capacity(self.dim());
        let mut cells = Vec::with_capacity(self.max_score as usize + 1);
        for s in 0..=self.max_score {
            let band = &self.models[band_of(s, self.bands, self.max_score)];
            let mut base = [0.0; 5];
            let mut slope = [0.0; 5];
            for g in 0..5 {
                if !self.features(traj, target, 0.0, g, s, &mut x) {
                    return Err(Error::NotEnoughHistory { needed: self.config.window, available: traj.len() });
                }
                let level = match self.offsets.get(s as usize) {
                    Some(o) if !o[g].1.is_empty() => {
                        let (y_mean, x_mean) = &o[g];
                        x.iter_mut().zip(x_mean).for_each(|(v, m)| *v -= m);
                        *y_mean
                    }
                    _ => 0.0,
                };
                let (b, k) = band[g].affine_in_first(&x);
                (base[g], slope[g]) = (level + b, k);
            }
            cells.push(AffineCell { base, slope });
        }
        Ok(RateResponse { period: target, cells, rate_bounds: Some(self.signal_range) })
    }

    pub fn infer(&self, traj: &GTrajectory, rate: f64) -> Result<GTable> {
        Ok(self.rate_response(traj)?.table(rate))
    }
}

pub fn fit_cei(
    config: RegressorConfig,
    traj: &GTrajectory,
    pcb_history: &[(u32, f64)],
    costs: &CostParams,
) -> Result<EnvRegressor> {
    EnvRegressor::fit(config, InferenceRole::Current, costs.maturity_horizon + 1, traj, pcb_history)
}

pub fn fit_fei(
    config: RegressorConfig,
    traj: &GTrajectory,
    mature_cb_history: &[(u32, f64)],
    costs: &CostParams,
) -> Result<EnvRegressor> {
    EnvRegressor::fit(
        config,
        InferenceRole::Future,
        costs.maturity_horizon + costs.partial_lag + 1,
        traj,
        mature_cb_history,
    )
}

/// Current-period table given the lag-l partially mature chargeback rate.
pub fn infer_current(r: &EnvRegressor, traj: &GTrajectory, rho_pcb_lag: f64) -> Result<GTable> {
    r.infer(traj, rho_pcb_lag)
}

/// Table `l` periods ahead given a hypothesised current chargeback rate.
pub fn infer_future(r: &EnvRegressor, traj: &GTrajectory, rho_cb_estimate: f64) -> Result<GTable> {
    r.infer(traj, rho_cb_estimate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCell {
    pub base: [f64; 5],
    pub slope: [f64; 5],
}

/// A fitted regressor evaluated on a fixed trajectory: each cell is affine
/// in the rate signal before clamping and projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResponse {
    pub period: u32,
    cells: Vec<AffineCell>,
    /// Rates outside these bounds are clamped: the models are linear and
    /// are not trusted beyond the signals they were fitted on.
    pub rate_bounds: Option<(f64, f64)>,
}

impl RateResponse {
    /// A response that ignores the rate and returns `table` everywhere.
    pub fn constant(table: &GTable) -> Self {
        Self {
            period: table.period,
            cells: table.cells().iter().map(|c| AffineCell { base: c.to_array(), slope: [0.0; 5] }).collect(),
            rate_bounds: None,
        }
    }

    /// A response built cell by cell, one per score `0..=max_score`.
    pub fn from_cells(period: u32, cells: Vec<AffineCell>, rate_bounds: Option<(f64, f64)>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Model("rate response needs at least one cell".into()));
        }
        if let Some((lo, hi)) = rate_bounds {
            if !(lo <= hi) {
                return Err(Error::Model(format!("rate bounds {lo}..{hi} are not ordered")));
            }
        }
        Ok(Self { period, cells, rate_bounds })
    }

    pub fn max_score(&self) -> u32 {
        (self.cells.len() - 1) as u32
    }

    pub fn affine(&self, score: u32) -> &AffineCell {
        &self.cells[score as usize]
    }

    #[inline]
    pub fn cell(&self, score: u32, rate: f64) -> GCell {
        let a = &self.cells[score as usize];
        let rate = match self.rate_bounds {
            Some((lo, hi)) => rate.clamp(lo, hi),
            None => rate,
        };
        let mut v = [0.0; 5];
        for g in 0..5 {
            v[g] = a.base[g] + a.slope[g] * rate;
        }
        GCell::from_array(v).project_coherent()
    }

    pub fn table(&self, rate: f64) -> GTable {
        let cells = (0..self.cells.len() as u32).map(|s| self.cell(s, rate)).collect();
        GTable::from_cells(self.period, cells).expect("non-empty support")
    }

    /// True when no cell responds to the rate.
    pub fn is_rate_free(&self) -> bool {
        self.cells.iter().all(|c| c.slope.iter().all(|&b| b == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_gtable;

    fn law(rate: f64) -> GCell {
        GCell {
            auth_legit: 0.9 - 0.5 * rate,
            auth_fraud: 0.01 + 0.5 * rate,
            review_legit: 0.45 - 0.25 * rate,
            review_fraud: 0.005 + 0.1 * rate,
            auth: 0.91,
        }
    }

    fn rates(n: u32) -> Vec<(u32, f64)> {
        // Deterministic scatter over [0, 0.06].
        (0..n).map(|p| (p, 0.06 * f64::from((p * 37 + 11) % 23) / 22.0)).collect()
    }

    fn synthetic(n: u32, max_score: u32) -> (GTrajectory, Vec<(u32, f64)>) {
        let sig = rates(n);
        let tables = sig.iter().map(|&(p, r)| GTable::constant(max_score, p, law(r))).collect();
        (GTrajectory::from_tables(tables).unwrap(), sig)
    }

    fn cfg() -> RegressorConfig {
        RegressorConfig { window: 3, bands: 4, ..RegressorConfig::default() }
    }

    #[test]
    fn constant_trajectory_is_reproduced() {
        let c = law(0.02);
        let traj = GTrajectory::from_tables((0..12).map(|p| GTable::constant(9, p, c)).collect()).unwrap();
        let sig: Vec<(u32, f64)> = (0..12).map(|p| (p, 0.01)).collect();
        let r = EnvRegressor::fit(cfg(), InferenceRole::Current, 1, &traj, &sig).unwrap();
        let g = r.infer(&traj, 0.01).unwrap();
        for cell in g.cells() {
            for (a, b) in cell.to_array().iter().zip(c.to_array()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(g.period, 12);
    }

    #[test]
    fn linear_law_is_recovered() {
        let (traj, sig) = synthetic(30, 19);
        for gap in [1, 3] {
            let r = EnvRegressor::fit(cfg(), InferenceRole::Current, gap, &traj, &sig).unwrap();
            let g = r.infer(&traj, 0.04).unwrap();
            for cell in g.cells() {
                assert!((cell.auth_fraud - 0.03).abs() < 1e-6, "{}", cell.auth_fraud);
                for (a, b) in cell.to_array().iter().zip(law(0.04).to_array()) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn short_trajectory_errors() {
        let (traj, sig) = synthetic(3, 9);
        let err = EnvRegressor::fit(cfg(), InferenceRole::Current, 1, &traj, &sig).unwrap_err();
        assert!(matches!(err, Error::NotEnoughHistory { .. }));
    }

    #[test]
    fn unfitted_inference_errors() {
        let (traj, _) = synthetic(10, 9);
        let r = EnvRegressor::unfitted(cfg(), InferenceRole::Future, 1);
        assert_eq!(r.infer(&traj, 0.0).unwrap_err(), Error::Unfitted);
    }

    #[test]
    fn role_wrappers_use_horizon_gaps() {
        let costs = CostParams { maturity_horizon: 3, partial_lag: 1, ..CostParams::default() };
        let (traj, sig) = synthetic(30, 9);
        let cei = fit_cei(cfg(), &traj, &sig, &costs).unwrap();
        let fei = fit_fei(cfg(), &traj, &sig, &costs).unwrap();
        assert_eq!((cei.gap, fei.gap), (4, 5));
        assert_eq!(infer_current(&cei, &traj, 0.0).unwrap().period, 33);
        assert_eq!(infer_future(&fei, &traj, 0.0).unwrap().period, 34);
        for rho in [0.0, 0.01, 0.05, 0.2] {
            assert!(validate_gtable(&infer_future(&fei, &traj, rho).unwrap()).is_empty());
        }
    }

    #[test]
    fn knot_reproduces_training_target() {
        let (traj, sig) = synthetic(30, 9);
        let r = EnvRegressor::fit(cfg(), InferenceRole::Future, 2, &traj, &sig).unwrap();
        let short = GTrajectory::from_tables(traj.tables()[..28].to_vec()).unwrap();
        // Target period 29 was a training target with signal sig[29].
        let g = r.infer(&short, sig[29].1).unwrap();
        let want = traj.get(29).unwrap();
        for (a, b) in g.cells().iter().zip(want.cells()) {
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn monotone_law_gives_monotone_predictions() {
        let (traj, sig) = synthetic(30, 9);
        let r = EnvRegressor::fit(cfg(), InferenceRole::Future, 2, &traj, &sig).unwrap();
        let resp = r.rate_response(&traj).unwrap();
        let mut prev = resp.table(0.0);
        for i in 1..=20 {
            let next = resp.table(f64::from(i) * 0.005);
            for (a, b) in prev.cells().iter().zip(next.cells()) {
                assert!(b.auth_legit <= a.auth_legit + 1e-12);
                assert!(b.review_legit <= a.review_legit + 1e-12);
                assert!(b.auth <= a.auth + 1e-12);
            }
            prev = next;
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let (traj, sig) = synthetic(20, 9);
        let a = EnvRegressor::fit(cfg(), InferenceRole::Current, 1, &traj, &sig).unwrap();
        let b = EnvRegressor::fit(cfg(), InferenceRole::Current, 1, &traj, &sig).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.infer(&traj, 0.03).unwrap(), b.infer(&traj, 0.03).unwrap());
    }

    #[test]
    fn queries_outside_training_rates_are_clamped() {
        let (traj, sig) = synthetic(30, 9);
        let r = EnvRegressor::fit(cfg(), InferenceRole::Current, 1, &traj, &sig).unwrap();
        let resp = r.rate_response(&traj).unwrap();
        let (lo, hi) = resp.rate_bounds.unwrap();
        assert!(lo < hi);
        assert_eq!(resp.table(hi + 0.5), resp.table(hi));
        assert_eq!(resp.table(lo - 0.5), resp.table(lo));
        assert!(RateResponse::from_cells(0, Vec::new(), None).is_err());
        assert!(RateResponse::from_cells(0, vec![AffineCell { base: [0.0; 5], slope: [0.0; 5] }], Some((1.0, 0.0))).is_err());
    }
}
