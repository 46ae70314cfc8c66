//! Random couplings and Monte Carlo ensembles.
//!
//! Every trial draws from its own ChaCha stream selected by the trial index,
//! so results do not depend on scheduling or on the number of workers.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adiabatic::DEFAULT_THETA;
use crate::error::{Error, Result};
use crate::ideal::{effective_gap, peak_value, IdealProbe};
use crate::model::{largest_singular_value, svd_decompose, ModelSpec, SuperradiantDecomposition, DEFAULT_RANK_TOL};
use crate::output::fmt_num;
use crate::thermo::{find_peaks, log_grid, qfi_curve, Component, Peak, QfiCurve, QfiSettings};

/// Draws used to estimate the ensemble-average normalization constant.
pub const CALIBRATION_DRAWS: usize = 2000;
/// Master seed of the calibration ensemble.
pub const CALIBRATION_SEED: u64 = 0x5eed_ca1b;

/// Deterministic generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Each draw is rescaled so its own largest singular value is `g`.
    #[default]
    PerSample,
    /// Every draw is divided by the ensemble mean of the largest singular value.
    EnsembleAverage,
}

/// Complex normal matrix with `E|z|² = 1`.
pub fn raw_ginibre<R: Rng>(d_g: usize, d_e: usize, rng: &mut R) -> DMatrix<Complex64> {
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");
    DMatrix::from_fn(d_g, d_e, |_, _| Complex64::new(normal.sample(rng), normal.sample(rng)))
}

fn calibration_cache() -> &'static Mutex<HashMap<(usize, usize), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Mean largest singular value of raw `d_g × d_e` Ginibre matrices (cached).
pub fn calibration_constant(d_g: usize, d_e: usize) -> f64 {
    if let Some(&c) = calibration_cache().lock().expect("calibration cache").get(&(d_g, d_e)) {
        return c;
    }
    let seed = CALIBRATION_SEED ^ ((d_g as u64) << 32) ^ d_e as u64;
    let sum: f64 = (0..CALIBRATION_DRAWS)
        .into_par_iter()
        .map(|i| largest_singular_value(&raw_ginibre(d_g, d_e, &mut stream_rng(seed, i as u64))))
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let c = sum / CALIBRATION_DRAWS as f64;
    calibration_cache().lock().expect("calibration cache").insert((d_g, d_e), c);
    c
}

/// Large-dimension edge of the largest Wishart eigenvalue, `(√m + √n)²`.
pub fn wishart_edge(d_g: usize, d_e: usize) -> f64 {
    ((d_g as f64).sqrt() + (d_e as f64).sqrt()).powi(2)
}

/// Ginibre coupling scaled to strength `g` under `normalization`.
pub fn sample_ginibre_with<R: Rng>(
    d_g: usize,
    d_e: usize,
    g: f64,
    normalization: Normalization,
    rng: &mut R,
) -> DMatrix<Complex64> {
    let raw = raw_ginibre(d_g, d_e, rng);
    let scale = match normalization {
        Normalization::PerSample => largest_singular_value(&raw),
        Normalization::EnsembleAverage => calibration_constant(d_g, d_e),
    };
    raw.map(|z| z * (g / scale))
}

pub fn sample_ginibre(d_g: usize, d_e: usize, g: f64, normalization: Normalization, seed: u64) -> Result<DMatrix<Complex64>> {
    if d_g == 0 || d_e == 0 {
        return Err(Error::InvalidParameter("coupling dimensions must be at least 1".into()));
    }
    Ok(sample_ginibre_with(d_g, d_e, g, normalization, &mut stream_rng(seed, 0)))
}

/// Independent uniform detunings on `[-1, 1]`.
pub fn sample_detunings_with<R: Rng>(d_g: usize, d_e: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let g = (0..d_g).map(|_| u.sample(rng)).collect();
    let e = (0..d_e).map(|_| u.sample(rng)).collect();
    (g, e)
}

pub fn sample_detunings(d_g: usize, d_e: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    sample_detunings_with(d_g, d_e, &mut stream_rng(seed, 0))
}

/// Most likely ordered eigenvalues of a Wishart matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WishartModes {
    pub m: usize,
    pub n_dim: usize,
    pub beta_sym: f64,
    pub alpha: f64,
    /// Zeros of `L_m^α`, decreasing.
    pub x: Vec<f64>,
}

impl WishartModes {
    /// Singular-value profile `λ_k = g √(X_k / X_1)`.
    pub fn profile(&self, g: f64) -> Vec<f64> {
        let x1 = self.x[0];
        if !(x1 > 0.0) {
            // a single mode pinned at the origin carries the whole coupling
            return std::iter::once(g).chain(std::iter::repeat(0.0)).take(self.x.len()).collect();
        }
        self.x.iter().map(|&x| g * (x.max(0.0) / x1).sqrt()).collect()
    }

    /// `X_k / X_1`.
    pub fn ratios(&self) -> Vec<f64> {
        self.x.iter().map(|&x| x / self.x[0]).collect()
    }

    /// `Σ_{j≠k} 1/(x_k - x_j) + (α + 1)/(2 x_k) - 1/2` for every nonzero mode.
    pub fn stieltjes_residuals(&self) -> Vec<f64> {
        let a = self.alpha;
        self.x
            .iter()
            .enumerate()
            .filter(|(_, &xk)| xk > 0.0)
            .map(|(k, &xk)| {
                let s: f64 = self.x.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, &xj)| 1.0 / (xk - xj)).sum();
                s + (a + 1.0) / (2.0 * xk) - 0.5
            })
            .collect()
    }
}

/// Zeros of `L_m^{α'}` with `α' = n_dim - m - 2/β`, by the Golub–Welsch construction.
pub fn laguerre_wishart_modes(m: usize, n_dim: usize, beta_sym: f64) -> Result<WishartModes> {
    if m == 0 || m > n_dim {
        return Err(Error::InvalidParameter(format!("need 1 <= m <= n, got m={m}, n={n_dim}")));
    }
    if ![1.0, 2.0, 4.0].contains(&beta_sym) {
        return Err(Error::InvalidParameter(format!("ensemble symmetry must be 1, 2 or 4, got {beta_sym}")));
    }
    let alpha = n_dim as f64 - m as f64 - 2.0 / beta_sym;
    if alpha < -1.0 {
        return Err(Error::InvalidParameter(format!("Laguerre parameter {alpha} is below -1")));
    }
    let jac = DMatrix::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            2.0 * i as f64 + alpha + 1.0
        } else if i.abs_diff(j) == 1 {
            let k = i.max(j) as f64;
            (k * (k + alpha)).max(0.0).sqrt()
        } else {
            0.0
        }
    });
    let mut x: Vec<f64> = jac.symmetric_eigenvalues().iter().copied().collect();
    for xk in x.iter_mut() {
        *xk = newton_polish(m, alpha, *xk);
    }
    x.sort_by(|a, b| b.total_cmp(a));
    Ok(WishartModes { m, n_dim, beta_sym, alpha, x })
}

fn newton_polish(m: usize, alpha: f64, x0: f64) -> f64 {
    if x0.abs() < 1e-12 && alpha == -1.0 {
        return 0.0;
    }
    let mut x = x0;
    for _ in 0..4 {
        let p = crate::adiabatic::laguerre(m, alpha, x);
        let dp = -crate::adiabatic::laguerre(m - 1, alpha + 1.0, x);
        if dp == 0.0 {
            break;
        }
        let step = p / dp;
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Monte Carlo ordered-eigenvalue ratios `X_k / X_1` of complex Wishart matrices.
pub fn sample_wishart_ratios(m: usize, n_dim: usize, draws: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..draws)
        .into_par_iter()
        .map(|i| {
            let gmat = raw_ginibre(m, n_dim, &mut stream_rng(seed, i as u64));
            let w = &gmat * gmat.adjoint();
            let mut ev: Vec<f64> = w.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            ev.iter().map(|&e| e / ev[0]).collect()
        })
        .collect()
}

/// Per-mode histogram of sampled ratios on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioHistogram {
    pub bin_width: f64,
    /// `counts[k][b]` for mode `k`.
    pub counts: Vec<Vec<u64>>,
}

impl RatioHistogram {
    pub fn new(samples: &[Vec<f64>], bin_width: f64) -> Self {
        let bins = (1.0 / bin_width).round() as usize;
        let modes = samples.first().map_or(0, Vec::len);
        let mut counts = vec![vec![0u64; bins]; modes];
        for s in samples {
            for (k, &r) in s.iter().enumerate() {
                counts[k][Self::bin_of(r, bin_width, bins)] += 1;
            }
        }
        RatioHistogram { bin_width, counts }
    }

    fn bin_of(r: f64, w: f64, bins: usize) -> usize {
        ((r / w).floor().max(0.0) as usize).min(bins - 1)
    }

    pub fn bin_index(&self, r: f64) -> usize {
        Self::bin_of(r, self.bin_width, self.counts.first().map_or(1, Vec::len))
    }

    /// Most populated bin of each mode.
    pub fn peak_bins(&self) -> Vec<usize> {
        self.counts
            .iter()
            .map(|c| c.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).map_or(0, |(i, _)| i))
            .collect()
    }

    /// CSV with columns `k,bin_lo,bin_hi,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,bin_lo,bin_hi,count")?;
        for (k, c) in self.counts.iter().enumerate() {
            for (b, n) in c.iter().enumerate() {
                let lo = b as f64 * self.bin_width;
                writeln!(out, "{},{},{},{}", k + 1, fmt_num(lo), fmt_num(lo + self.bin_width), n)?;
            }
        }
        Ok(())
    }
}

/// Bright profile held fixed while dark states are appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarkSaturatedProfile {
    pub d_g: usize,
    pub dark: usize,
    /// Square-ensemble modal profile, length `d_g`, with `λ_1 = g`.
    pub lambda: Vec<f64>,
}

impl DarkSaturatedProfile {
    pub fn d_e(&self) -> usize {
        self.d_g + self.dark
    }

    /// Model with diagonal coupling and no intraband spread, plus its decomposition.
    pub fn model(&self, omega_a: f64) -> Result<(ModelSpec, SuperradiantDecomposition)> {
        profile_model(&self.lambda, self.d_g, self.d_e(), omega_a, 0.0)
    }
}

/// Model whose coupling is `diag(λ)` padded to `d_g × d_e`, with zero detunings.
pub fn profile_model(
    lambda: &[f64],
    d_g: usize,
    d_e: usize,
    omega_a: f64,
    epsilon: f64,
) -> Result<(ModelSpec, SuperradiantDecomposition)> {
    let mut coupling = DMatrix::zeros(d_g, d_e);
    for (k, &l) in lambda.iter().enumerate() {
        coupling[(k, k)] = Complex64::new(l, 0.0);
    }
    let model = ModelSpec::new(1.0, omega_a, epsilon, vec![0.0; d_g], vec![0.0; d_e], coupling)?;
    let decomp = SuperradiantDecomposition::from_profile(lambda, d_g, d_e, DEFAULT_RANK_TOL)?;
    Ok((model, decomp))
}

pub fn dark_saturated_couplings(d_g: usize, dark: usize, g: f64) -> Result<DarkSaturatedProfile> {
    let modes = laguerre_wishart_modes(d_g, d_g, 2.0)?;
    Ok(DarkSaturatedProfile { d_g, dark, lambda: modes.profile(g) })
}

/// Log-spaced temperature grid description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub log10_min: f64,
    pub log10_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { log10_min: -3.0, log10_max: 0.5, points: 400 }
    }
}

impl GridSpec {
    pub fn temperatures(&self) -> Result<Vec<f64>> {
        log_grid(self.log10_min, self.log10_max, self.points)
    }
}

/// Raster geometry over `(log10 T, log10 F)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub t_bins: usize,
    pub f_bins: usize,
    pub log10_f_min: f64,
    pub log10_f_max: f64,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec { t_bins: 300, f_bins: 200, log10_f_min: -2.0, log10_f_max: 8.0 }
    }
}

fn default_theta() -> usize {
    DEFAULT_THETA
}

fn default_window() -> usize {
    3
}

/// Parameters of a Monte Carlo ensemble run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub d_g: usize,
    pub d_e: usize,
    pub g: f64,
    pub omega_a: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub normalization: Normalization,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_theta")]
    pub theta: usize,
    #[serde(default)]
    pub heatmap: HeatmapSpec,
    #[serde(default = "default_window")]
    pub peak_window: usize,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("ensemble needs at least one trial".into()));
        }
        if !(self.g > 0.0) {
            return Err(Error::InvalidParameter(format!("coupling scale must be positive, got {}", self.g)));
        }
        if self.d_g == 0 || self.d_e == 0 {
            return Err(Error::InvalidParameter("band sizes must be at least 1".into()));
        }
        if self.heatmap.t_bins == 0 || self.heatmap.f_bins == 0 || !(self.heatmap.log10_f_max > self.heatmap.log10_f_min) {
            return Err(Error::InvalidParameter("heatmap needs positive bin counts and an increasing range".into()));
        }
        if !(self.omega_a >= 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter("omega_a and epsilon must be non-negative".into()));
        }
        self.grid.temperatures().map(|_| ())
    }
}

/// Integer count raster; `counts[t * f_bins + f]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    pub t_bins: usize,
    pub f_bins: usize,
    pub counts: Vec<u64>,
}

impl Heatmap {
    pub fn new(t_bins: usize, f_bins: usize) -> Self {
        Heatmap { t_bins, f_bins, counts: vec![0; t_bins * f_bins] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, t: usize, f: usize) -> u64 {
        self.counts[t * self.f_bins + f]
    }

    /// CSV with columns `t_bin,f_bin,count`, nonzero cells only.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t_bin,f_bin,count")?;
        for t in 0..self.t_bins {
            for f in 0..self.f_bins {
                let c = self.get(t, f);
                if c > 0 {
                    writeln!(out, "{t},{f},{c}")?;
                }
            }
        }
        Ok(())
    }
}

/// Cells touched by one curve, each at most once.
///
/// The polyline `(log10 T, log10 F)` is clipped to every column; all rows
/// between the lowest and highest value inside the column are marked.
/// Non-positive values sit below the raster.
pub fn rasterize_curve(temperatures: &[f64], values: &[f64], spec: &HeatmapSpec) -> Vec<(usize, usize)> {
    let n = temperatures.len().min(values.len());
    if n == 0 {
        return Vec::new();
    }
    let xs: Vec<f64> = temperatures[..n].iter().map(|t| t.log10()).collect();
    let ys: Vec<f64> = values[..n].iter().map(|&v| if v > 0.0 { v.log10() } else { f64::NEG_INFINITY }).collect();
    let (x_lo, x_hi) = (xs[0], xs[n - 1]);
    let col_w = (x_hi - x_lo) / spec.t_bins as f64;
    let row_h = (spec.log10_f_max - spec.log10_f_min) / spec.f_bins as f64;
    let interp = |x: f64| -> f64 {
        let i = match xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => return ys[i],
            Err(i) => i,
        };
        if i == 0 {
            return ys[0];
        }
        if i >= n {
            return ys[n - 1];
        }
        let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
        if !y0.is_finite() || !y1.is_finite() {
            return f64::NEG_INFINITY;
        }
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    };
    let mut cells = Vec::new();
    if n == 1 || !(col_w > 0.0) {
        return cells;
    }
    let mut vi = 0;
    for c in 0..spec.t_bins {
        let a = x_lo + col_w * c as f64;
        let b = if c + 1 == spec.t_bins { x_hi } else { x_lo + col_w * (c + 1) as f64 };
        let mut lo = interp(a).min(interp(b));
        let mut hi = interp(a).max(interp(b));
        while vi < n && xs[vi] < a {
            vi += 1;
        }
        let mut j = vi;
        while j < n && xs[j] <= b {
            lo = lo.min(ys[j]);
            hi = hi.max(ys[j]);
            j += 1;
        }
        // a segment rising from a non-positive value enters from below
        if (vi > 0 && !ys[vi - 1].is_finite()) || (j < n && !ys[j].is_finite()) {
            lo = f64::NEG_INFINITY;
        }
        if !hi.is_finite() || hi < spec.log10_f_min || lo > spec.log10_f_max {
            continue;
        }
        let r0 = if lo <= spec.log10_f_min { 0 } else { ((lo - spec.log10_f_min) / row_h).floor() as usize };
        let r1 = if hi >= spec.log10_f_max { spec.f_bins - 1 } else { ((hi - spec.log10_f_min) / row_h).floor() as usize };
        for r in r0..=r1.min(spec.f_bins - 1) {
            cells.push((c, r));
        }
    }
    cells
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPeaks {
    pub trial: usize,
    pub peaks: Vec<Peak>,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub trial: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub heatmap: Heatmap,
    /// `log10 T` column edges.
    pub t_edges: Vec<f64>,
    /// `log10 F` row edges.
    pub f_edges: Vec<f64>,
    pub typical_curve: QfiCurve,
    pub trials: Vec<TrialPeaks>,
    pub exclusions: Vec<Exclusion>,
    pub calibration: Option<f64>,
    pub wishart_edge: f64,
    /// Per-trial total curves, kept when requested.
    pub curves: Option<Vec<Vec<f64>>>,
}

impl EnsembleResult {
    /// CSV with columns `trial,peak_index,T_star,F_star`.
    pub fn write_peaks_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "trial,peak_index,T_star,F_star")?;
        for t in &self.trials {
            for (i, p) in t.peaks.iter().enumerate() {
                writeln!(out, "{},{},{},{}", t.trial, i, fmt_num(p.temperature), fmt_num(p.value))?;
            }
        }
        Ok(())
    }

    /// Highest-temperature peak of every successful trial.
    pub fn high_t_peaks(&self) -> Vec<Peak> {
        self.trials.iter().filter_map(|t| t.peaks.last().copied()).collect()
    }
}

/// Disorder-free reference: modal singular values of the sampled shape and zero detunings.
pub fn typical_curve(spec: &EnsembleSpec, temperatures: &[f64]) -> Result<QfiCurve> {
    let r = spec.d_g.min(spec.d_e);
    let modes = laguerre_wishart_modes(r, spec.d_g.max(spec.d_e), 2.0)?;
    let (model, decomp) = profile_model(&modes.profile(spec.g), spec.d_g, spec.d_e, spec.omega_a, spec.epsilon)?;
    qfi_curve(&decomp, &model, temperatures, &QfiSettings::with_theta(spec.theta))
}

fn run_trial(spec: &EnsembleSpec, temperatures: &[f64], trial: usize) -> Result<QfiCurve> {
    let mut rng = stream_rng(spec.master_seed, trial as u64);
    let coupling = sample_ginibre_with(spec.d_g, spec.d_e, spec.g, spec.normalization, &mut rng);
    let (dg, de) = sample_detunings_with(spec.d_g, spec.d_e, &mut rng);
    let model = ModelSpec::new(1.0, spec.omega_a, spec.epsilon, dg, de, coupling)?;
    let decomp = svd_decompose(&model, DEFAULT_RANK_TOL)?;
    qfi_curve(&decomp, &model, temperatures, &QfiSettings::with_theta(spec.theta))
}

/// Run all trials, rasterize their total QFI curves and collect peaks.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleResult> {
    run_ensemble_with(spec, false)
}

/// As [`run_ensemble`], optionally keeping every trial's total curve.
pub fn run_ensemble_with(spec: &EnsembleSpec, keep_curves: bool) -> Result<EnsembleResult> {
    spec.validate()?;
    let temps = spec.grid.temperatures()?;
    let calibration = match spec.normalization {
        Normalization::EnsembleAverage => Some(calibration_constant(spec.d_g, spec.d_e)),
        Normalization::PerSample => None,
    };
    let outcomes: Vec<(usize, Result<QfiCurve>)> =
        (0..spec.trials).into_par_iter().map(|t| (t, run_trial(spec, &temps, t))).collect();

    let mut heatmap = Heatmap::new(spec.heatmap.t_bins, spec.heatmap.f_bins);
    let mut trials = Vec::new();
    let mut exclusions = Vec::new();
    let mut curves = keep_curves.then(Vec::new);
    for (t, outcome) in outcomes {
        match outcome {
            Ok(curve) => {
                let cells = rasterize_curve(&curve.temperatures, &curve.total, &spec.heatmap);
                for &(c, r) in &cells {
                    heatmap.counts[c * spec.heatmap.f_bins + r] += 1;
                }
                let peaks = find_peaks(&curve.temperatures, &curve.total, spec.peak_window);
                trials.push(TrialPeaks { trial: t, peaks, cells: cells.len() });
                if let Some(all) = curves.as_mut() {
                    all.push(curve.total);
                }
            }
            Err(e) => exclusions.push(Exclusion { trial: t, reason: e.to_string() }),
        }
    }
    let x_lo = temps[0].log10();
    let x_hi = temps[temps.len() - 1].log10();
    let t_edges = (0..=spec.heatmap.t_bins).map(|i| x_lo + (x_hi - x_lo) * i as f64 / spec.heatmap.t_bins as f64).collect();
    let h = &spec.heatmap;
    let f_edges = (0..=h.f_bins).map(|i| h.log10_f_min + (h.log10_f_max - h.log10_f_min) * i as f64 / h.f_bins as f64).collect();
    Ok(EnsembleResult {
        heatmap,
        t_edges,
        f_edges,
        typical_curve: typical_curve(spec, &temps)?,
        trials,
        exclusions,
        calibration,
        wishart_edge: wishart_edge(spec.d_g, spec.d_e),
        curves,
    })
}

/// Interquartile range of `log10 F` across trials, averaged over grid points
/// with `log10 T` in `[log10_lo, log10_hi]`.
pub fn curve_dispersion(temperatures: &[f64], curves: &[Vec<f64>], log10_lo: f64, log10_hi: f64) -> f64 {
    let mut acc = 0.0;
    let mut count = 0;
    for (i, t) in temperatures.iter().enumerate() {
        let lt = t.log10();
        if lt < log10_lo || lt > log10_hi {
            continue;
        }
        let mut col: Vec<f64> = curves.iter().map(|c| c[i].max(f64::MIN_POSITIVE).log10()).collect();
        col.sort_by(f64::total_cmp);
        acc += quantile(&col, 0.75) - quantile(&col, 0.25);
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        acc / count as f64
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// One row of the dark-saturation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRatioRow {
    pub d_g: usize,
    pub dark: usize,
    pub g: f64,
    pub dark_count: usize,
    pub t_star_bd: Option<f64>,
    pub f_star_bd: Option<f64>,
    pub e_eff: Option<f64>,
    pub f_star_ideal: Option<f64>,
    pub ratio: Option<f64>,
}

/// Peak bright–dark QFI against the matched ideal probe for each dark count.
pub fn peak_ratio_scan(d_g: usize, dark_counts: &[usize], g: f64, omega_a: f64, temperatures: &[f64]) -> Result<Vec<PeakRatioRow>> {
    if dark_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("dark counts must be strictly increasing".into()));
    }
    dark_counts
        .iter()
        .map(|&dark| {
            let profile = dark_saturated_couplings(d_g, dark, g)?;
            let (model, decomp) = profile.model(omega_a)?;
            let curve = qfi_curve(&decomp, &model, temperatures, &QfiSettings::default())?;
            let peak = curve.peaks(Component::BrightDark, 3).into_iter().max_by(|a, b| a.value.total_cmp(&b.value));
            let dark_count = decomp.dark_count();
            let mut row = PeakRatioRow {
                d_g,
                dark,
                g,
                dark_count,
                t_star_bd: None,
                f_star_bd: None,
                e_eff: None,
                f_star_ideal: None,
                ratio: None,
            };
            if let (Some(p), true) = (peak, dark_count > 0) {
                let e_eff = effective_gap(p.temperature, dark_count as f64);
                let (_, f_ideal) = peak_value(&IdealProbe::new(e_eff, dark_count)?);
                row.t_star_bd = Some(p.temperature);
                row.f_star_bd = Some(p.value);
                row.e_eff = Some(e_eff);
                row.f_star_ideal = Some(f_ideal);
                row.ratio = Some(p.value / f_ideal);
            }
            Ok(row)
        })
        .collect()
}

/// CSV with columns `D_g,D,g,dark_count,T_star_bd,F_star_bd,E_eff,F_star_ideal,ratio`.
pub fn write_peak_ratio_csv<W: Write>(rows: &[PeakRatioRow], mut out: W) -> Result<()> {
    writeln!(out, "D_g,D,g,dark_count,T_star_bd,F_star_bd,E_eff,F_star_ideal,ratio")?;
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.d_g,
            r.dark,
            fmt_num(r.g),
            r.dark_count,
            opt(r.t_star_bd),
            opt(r.f_star_bd),
            opt(r.e_eff),
            opt(r.f_star_ideal),
            opt(r.ratio)
        )?;
    }
    Ok(())
}
