//! Thermal quantum Fisher information from the adiabatic spectrum.
//!
//! Each bright doublet contributes `z = 2 e^{βγ} cosh(βΓ)` to the partition
//! function and each dark level `(N - M) e^{βγ_D}`. Weights are handled in the
//! log domain and variances are accumulated about the weighted mean, so the
//! evaluation needs no overflow guards beyond the extended-precision fallback.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{bright_level_count, overlap_table, DEFAULT_THETA};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, SuperradiantDecomposition};
use crate::output::fmt_num;
use crate::scalar::{Extended, Real};

/// Below this temperature (units of ω_f) standard mode switches to extended precision.
pub const EXTENDED_BELOW_T: f64 = 3e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionMode {
    /// `f64`, with extended precision at very low temperature or on overflow.
    #[default]
    Standard,
    /// Extended precision at every point.
    Extended,
}

impl std::str::FromStr for PrecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(PrecisionMode::Standard),
            "extended" => Ok(PrecisionMode::Extended),
            other => Err(Error::InvalidParameter(format!("unknown precision mode '{other}'"))),
        }
    }
}

/// Evaluation settings for [`qfi_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QfiSettings {
    pub theta: usize,
    pub precision: PrecisionMode,
    /// Constant added to every retained energy.
    pub energy_offset: f64,
}

impl Default for QfiSettings {
    fn default() -> Self {
        QfiSettings { theta: DEFAULT_THETA, precision: PrecisionMode::Standard, energy_offset: 0.0 }
    }
}

impl QfiSettings {
    pub fn with_theta(theta: usize) -> Self {
        QfiSettings { theta, ..Default::default() }
    }
}

/// Component split of the QFI: intra-level part and bright/dark block variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfiComponents {
    pub s1: Vec<f64>,
    pub bb: Vec<f64>,
    pub bd: Vec<f64>,
    pub dd: Vec<f64>,
}

/// QFI sampled on a temperature grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfiCurve {
    pub temperatures: Vec<f64>,
    pub total: Vec<f64>,
    /// Absent for curves computed from a bare spectrum.
    pub components: Option<QfiComponents>,
    pub theta: Option<usize>,
    pub precision: PrecisionMode,
    /// Points that were evaluated in extended precision.
    pub extended_points: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Total,
    S1,
    BrightBright,
    BrightDark,
    DarkDark,
}

impl QfiCurve {
    pub fn series(&self, which: Component) -> Option<&[f64]> {
        match which {
            Component::Total => Some(&self.total),
            Component::S1 => self.components.as_ref().map(|c| c.s1.as_slice()),
            Component::BrightBright => self.components.as_ref().map(|c| c.bb.as_slice()),
            Component::BrightDark => self.components.as_ref().map(|c| c.bd.as_slice()),
            Component::DarkDark => self.components.as_ref().map(|c| c.dd.as_slice()),
        }
    }

    /// Interior maxima of one series; see [`find_peaks`].
    pub fn peaks(&self, which: Component, window: usize) -> Vec<Peak> {
        self.series(which).map(|v| find_peaks(&self.temperatures, v, window)).unwrap_or_default()
    }

    /// CSV with columns `T,F_total,F_s1,F_bb,F_bd,F_dd`; absent components are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "T,F_total,F_s1,F_bb,F_bd,F_dd")?;
        for i in 0..self.temperatures.len() {
            let comps = match &self.components {
                Some(c) => format!("{},{},{},{}", fmt_num(c.s1[i]), fmt_num(c.bb[i]), fmt_num(c.bd[i]), fmt_num(c.dd[i])),
                None => ",,,".to_string(),
            };
            writeln!(out, "{},{},{}", fmt_num(self.temperatures[i]), fmt_num(self.total[i]), comps)?;
        }
        Ok(())
    }
}

/// `(γ_B, Γ_B)` of bright doublet `k` (1-based) at oscillator index `n`.
pub fn gamma_terms(decomp: &SuperradiantDecomposition, model: &ModelSpec, n: usize, k: usize) -> Result<(f64, f64)> {
    if k == 0 || k > decomp.m() {
        return Err(Error::DoubletIndex { k, m: decomp.m() });
    }
    let lam = decomp.lambda[k - 1];
    let w = model.omega_f;
    let gamma = lam * lam / w - 0.5 * decomp.delta_plus[k - 1] - w * n as f64;
    let ov: f64 = overlap_table::<f64>(n, lam, w)[n];
    Ok((gamma, 0.5 * (model.omega_a + decomp.delta_minus[k - 1]) * ov))
}

/// `γ_D = -(n ω_f + ω_a p / 2)`.
pub fn gamma_dark(decomp: &SuperradiantDecomposition, model: &ModelSpec, n: usize) -> f64 {
    -(n as f64 * model.omega_f + 0.5 * model.omega_a * decomp.p())
}

/// Retained `γ`/`Γ` terms in scalar type `R`.
#[derive(Debug, Clone)]
struct BlockTerms<R> {
    bright: Vec<(R, R)>,
    dark: Vec<R>,
    dark_log_mult: R,
    // f64 shadows used to skip negligible weights
    bright_f64: Vec<(f64, f64)>,
    dark_f64: Vec<f64>,
}

/// Relative weights below `e^{-cutoff}` are skipped; only extended types skip anything.
fn weight_cutoff<R: Real>() -> f64 {
    if R::DIGITS > f64::DIGITS {
        700.0
    } else {
        f64::INFINITY
    }
}

fn block_terms<R: Real>(decomp: &SuperradiantDecomposition, model: &ModelSpec, settings: &QfiSettings) -> BlockTerms<R> {
    let w = model.omega_f;
    let offset = R::from_f64(settings.energy_offset);
    let mut bright = Vec::new();
    for k in 1..=decomp.m() {
        let count = bright_level_count(decomp, model, settings.theta, k);
        if count == 0 {
            continue;
        }
        let lam = decomp.lambda[k - 1];
        let ov = overlap_table::<R>(count - 1, lam, w);
        let amp = R::from_f64(0.5 * (model.omega_a + decomp.delta_minus[k - 1]));
        let lam_r = R::from_f64(lam);
        let base = lam_r.square() / R::from_f64(w) - R::from_f64(0.5 * decomp.delta_plus[k - 1]);
        for (n, o) in ov.into_iter().enumerate() {
            let gamma = base.clone() - R::from_f64(w * n as f64) - offset.clone();
            bright.push((gamma, amp.clone() * o));
        }
    }
    let mut dark = Vec::new();
    let mult = decomp.dark_count();
    if mult > 0 {
        for n in 0..=settings.theta {
            dark.push(R::from_f64(gamma_dark(decomp, model, n)) - offset.clone());
        }
    }
    let dark_log_mult = if mult > 0 { R::from_usize(mult).ln() } else { R::zero() };
    let bright_f64 = bright.iter().map(|(g, s)| (g.to_f64(), s.to_f64())).collect();
    let dark_f64 = dark.iter().map(R::to_f64).collect();
    BlockTerms { bright, dark, dark_log_mult, bright_f64, dark_f64 }
}

/// QFI and its components at one temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QfiPoint {
    pub total: f64,
    pub s1: f64,
    pub bb: f64,
    pub bd: f64,
    pub dd: f64,
}

impl QfiPoint {
    fn is_finite(&self) -> bool {
        [self.total, self.s1, self.bb, self.bd, self.dd].iter().all(|v| v.is_finite())
    }
}

struct Entry<R> {
    log_w: R,
    xp: R,
    xpp: R,
}

fn weighted_mean_var<R: Real>(entries: &[Entry<R>], shift: &R) -> (R, R, R, R) {
    // returns (Z, Σ w x'', mean x', variance of x') with weights e^{log_w - shift}
    let mut z = R::zero();
    let mut s1 = R::zero();
    let mut s3 = R::zero();
    let ws: Vec<R> = entries.iter().map(|e| (e.log_w.clone() - shift.clone()).exp()).collect();
    for (e, w) in entries.iter().zip(&ws) {
        z = z + w.clone();
        s1 = s1 + w.clone() * e.xpp.clone();
        s3 = s3 + w.clone() * e.xp.clone();
    }
    if z == R::zero() {
        return (z, s1, R::zero(), R::zero());
    }
    let mean = s3 / z.clone();
    let mut var = R::zero();
    for (e, w) in entries.iter().zip(&ws) {
        let d = e.xp.clone() - mean.clone();
        var = var + w.clone() * d.square();
    }
    (z.clone(), s1, mean, var / z)
}

fn evaluate_point<R: Real>(terms: &BlockTerms<R>, temperature: f64) -> QfiPoint {
    let beta = R::one() / R::from_f64(temperature);
    let two = R::from_f64(2.0);
    let ln2 = two.ln();
    let four = R::from_f64(4.0);

    let b = 1.0 / temperature;
    let dark_ln = if terms.dark.is_empty() { 0.0 } else { terms.dark_log_mult.to_f64() };
    let approx_b: Vec<f64> = terms.bright_f64.iter().map(|(g, s)| b * (g + s.abs())).collect();
    let approx_d: Vec<f64> = terms.dark_f64.iter().map(|g| b * g + dark_ln).collect();
    let top = approx_b.iter().chain(&approx_d).copied().fold(f64::NEG_INFINITY, f64::max);
    let keep = |a: f64| top - a <= weight_cutoff::<R>();

    let bright: Vec<Entry<R>> = terms
        .bright
        .iter()
        .zip(&approx_b)
        .filter(|(_, a)| keep(**a))
        .map(|((gamma, split), _)| {
            let a = (beta.clone() * split.clone()).abs();
            let e = (-(a.clone() + a.clone())).exp();
            let one_e = R::one() + e.clone();
            let tanh = (R::one() - e.clone()) / one_e.clone();
            let sech2 = four.clone() * e / one_e.square();
            let ln_cosh = a + (one_e / two.clone()).ln();
            Entry {
                log_w: beta.clone() * gamma.clone() + ln2.clone() + ln_cosh,
                xp: gamma.clone() + split.abs() * tanh,
                xpp: split.square() * sech2,
            }
        })
        .collect();
    let dark: Vec<Entry<R>> = terms
        .dark
        .iter()
        .zip(&approx_d)
        .filter(|(_, a)| keep(**a))
        .map(|(gamma, _)| Entry {
            log_w: beta.clone() * gamma.clone() + terms.dark_log_mult.clone(),
            xp: gamma.clone(),
            xpp: R::zero(),
        })
        .collect();

    let mut shift: Option<R> = None;
    for e in bright.iter().chain(dark.iter()) {
        shift = Some(match shift {
            Some(s) => s.max_of(e.log_w.clone()),
            None => e.log_w.clone(),
        });
    }
    let Some(shift) = shift else {
        return QfiPoint { total: 0.0, s1: 0.0, bb: 0.0, bd: 0.0, dd: 0.0 };
    };

    let (zb, s1b, mb, vb) = weighted_mean_var(&bright, &shift);
    let (zd, _, md, vd) = weighted_mean_var(&dark, &shift);
    let z = zb.clone() + zd.clone();
    let b4 = beta.square().square();

    let all: Vec<Entry<R>> = bright.into_iter().chain(dark).collect();
    let (_, _, _, v_all) = weighted_mean_var(&all, &shift);

    let fb = zb.clone() / z.clone();
    let fd = zd.clone() / z.clone();
    let s1 = b4.clone() * s1b / z.clone();
    let total = s1.clone() + b4.clone() * v_all;
    let bb = b4.clone() * fb.square() * vb.clone();
    let dd = b4.clone() * fd.square() * vd.clone();
    let bd = b4 * fb * fd * (vb + vd + (mb - md).square());
    QfiPoint { total: total.to_f64(), s1: s1.to_f64(), bb: bb.to_f64(), bd: bd.to_f64(), dd: dd.to_f64() }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("temperature grid is empty".into()));
    }
    if let Some(&t) = grid.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::NonPositiveTemperature(t));
    }
    Ok(())
}

/// Adiabatic-approximation QFI over a temperature grid.
pub fn qfi_curve(
    decomp: &SuperradiantDecomposition,
    model: &ModelSpec,
    temperatures: &[f64],
    settings: &QfiSettings,
) -> Result<QfiCurve> {
    validate_grid(temperatures)?;
    let t_unit: Vec<f64> = temperatures.to_vec();
    let std_terms = block_terms::<f64>(decomp, model, settings);
    let needs_ext = |t: f64| settings.precision == PrecisionMode::Extended || t < EXTENDED_BELOW_T * model.omega_f;
    let ext_terms = std::sync::OnceLock::new();

    let points: Vec<(QfiPoint, bool)> = t_unit
        .par_iter()
        .map(|&t| {
            if !needs_ext(t) {
                let p = evaluate_point(&std_terms, t);
                if p.is_finite() {
                    return (p, false);
                }
            }
            let terms = ext_terms.get_or_init(|| block_terms::<Extended>(decomp, model, settings));
            (evaluate_point(terms, t), true)
        })
        .collect();

    if let Some((p, _)) = points.iter().find(|(p, _)| !p.is_finite()) {
        return Err(Error::Numerical(format!("non-finite QFI value {p:?}")));
    }

    Ok(QfiCurve {
        temperatures: t_unit,
        total: points.iter().map(|(p, _)| p.total).collect(),
        components: Some(QfiComponents {
            s1: points.iter().map(|(p, _)| p.s1).collect(),
            bb: points.iter().map(|(p, _)| p.bb).collect(),
            bd: points.iter().map(|(p, _)| p.bd).collect(),
            dd: points.iter().map(|(p, _)| p.dd).collect(),
        }),
        theta: Some(settings.theta),
        precision: settings.precision,
        extended_points: points.iter().map(|(_, e)| *e).collect(),
    })
}

/// Largest relative deviation of `total` from the sum of its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub max_rel_deviation: f64,
    pub worst_index: usize,
}

pub fn qfi_components_consistency(curve: &QfiCurve) -> Option<ConsistencyReport> {
    let c = curve.components.as_ref()?;
    let mut report = ConsistencyReport { max_rel_deviation: 0.0, worst_index: 0 };
    for i in 0..curve.total.len() {
        let sum = c.s1[i] + c.bb[i] + c.bd[i] + c.dd[i];
        let scale = curve.total[i].abs().max(f64::MIN_POSITIVE);
        let dev = if curve.total[i] == 0.0 && sum == 0.0 { 0.0 } else { (curve.total[i] - sum).abs() / scale };
        if dev > report.max_rel_deviation {
            report = ConsistencyReport { max_rel_deviation: dev, worst_index: i };
        }
    }
    Some(report)
}

/// QFI of a spectrum given as `(energy, multiplicity)` pairs, evaluated in `R`.
pub fn spectrum_qfi<R: Real>(levels: &[(R, usize)], temperature: f64) -> Result<f64> {
    validate_grid(&[temperature])?;
    if levels.is_empty() {
        return Ok(0.0);
    }
    let beta = R::one() / R::from_f64(temperature);
    let e_min = levels.iter().map(|(e, _)| e.clone()).fold(levels[0].0.clone(), R::min_of);
    let cutoff = weight_cutoff::<R>();
    let entries: Vec<Entry<R>> = levels
        .iter()
        .filter(|(e, m)| *m > 0 && ((e.clone() - e_min.clone()).to_f64() / temperature) < cutoff)
        .map(|(e, m)| Entry {
            log_w: -(beta.clone() * (e.clone() - e_min.clone())) + R::from_usize(*m).ln(),
            xp: e_min.clone() - e.clone(),
            xpp: R::zero(),
        })
        .collect();
    let (_, _, _, var) = weighted_mean_var(&entries, &R::zero());
    let b4 = beta.square().square();
    Ok((b4 * var).to_f64())
}

/// Two-level QFI `δ²/(4T⁴) sech²(δ/2T)`.
pub fn tls_qfi(delta: f64, temperature: f64) -> f64 {
    let u = delta / (2.0 * temperature);
    let sech = 1.0 / u.cosh();
    delta * delta / (4.0 * temperature.powi(4)) * sech * sech
}

/// Root of `u tanh u = 2`: the optimal `δ / 2T` of a two-level probe.
pub fn tls_peak_argument() -> f64 {
    let f = |u: f64| u * u.tanh() - 2.0;
    let (mut lo, mut hi) = (1.0f64, 4.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Constant `C` of the optimal two-level trace `F* = C / T²`.
pub fn tls_trace_constant() -> f64 {
    let u = tls_peak_argument();
    let s = 1.0 / u.cosh();
    u * u * s * s
}

/// Peak QFI of a two-level probe optimally gapped for temperature `T`.
pub fn tls_peak_trace(temperature: f64) -> f64 {
    tls_trace_constant() / (temperature * temperature)
}

/// An interior maximum located by parabolic interpolation in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub temperature: f64,
    pub value: f64,
    pub index: usize,
}

/// Interior local maxima of `values` sampled at `temperatures` (ascending).
///
/// A grid point is a peak when it is the largest value within `window` points
/// on either side and strictly exceeds its left neighbour. The location is
/// refined by a parabola through `log F` against `log T`.
pub fn find_peaks(temperatures: &[f64], values: &[f64], window: usize) -> Vec<Peak> {
    let n = values.len().min(temperatures.len());
    let w = window.max(1);
    let mut peaks = Vec::new();
    if n < 3 {
        return peaks;
    }
    for i in 1..n - 1 {
        let v = values[i];
        if !(v > 0.0) || !(v > values[i - 1]) || v < values[i + 1] {
            continue;
        }
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(n - 1);
        if (lo..=hi).any(|j| values[j] > v) {
            continue;
        }
        if values[i + 1] == v && peaks.last().is_some_and(|p: &Peak| p.index + 1 == i) {
            continue;
        }
        peaks.push(refine_peak(temperatures, values, i));
    }
    peaks
}

fn refine_peak(t: &[f64], f: &[f64], i: usize) -> Peak {
    let (fa, fb, fc) = (f[i - 1], f[i], f[i + 1]);
    if !(fa > 0.0 && fc > 0.0) {
        return Peak { temperature: t[i], value: fb, index: i };
    }
    let (xa, xb, xc) = (t[i - 1].ln(), t[i].ln(), t[i + 1].ln());
    let (ya, yb, yc) = (fa.ln(), fb.ln(), fc.ln());
    let d1 = (yb - ya) / (xb - xa);
    let d2 = (yc - yb) / (xc - xb);
    let curv = (d2 - d1) / (xc - xa);
    if !(curv < 0.0) {
        return Peak { temperature: t[i], value: fb, index: i };
    }
    // parabola y = yb + d*(x - xb) + curv*(x - xa)(x - xb)
    let x_star = 0.5 * (xa + xb) - d1 / (2.0 * curv);
    let x_star = x_star.clamp(xa, xc);
    let y_star = ya + d1 * (x_star - xa) + curv * (x_star - xa) * (x_star - xb);
    Peak { temperature: x_star.exp(), value: y_star.exp(), index: i }
}

/// `points` temperatures spaced evenly in `log10` over `[10^lo, 10^hi]`.
pub fn log_grid(log10_lo: f64, log10_hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(log10_hi > log10_lo) {
        return Err(Error::InvalidParameter(format!(
            "log grid needs at least two points and an increasing range, got {points} over [{log10_lo}, {log10_hi}]"
        )));
    }
    let step = (log10_hi - log10_lo) / (points - 1) as f64;
    Ok((0..points).map(|i| 10f64.powf(log10_lo + step * i as f64)).collect())
}

/// Default grid: 400 points over `log10 T ∈ [-3, 0.5]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(-3.0, 0.5, 400).expect("static grid parameters")
}
