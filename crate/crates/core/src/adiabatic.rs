//! Adiabatic-approximation spectrum: displaced-oscillator ladders with
//! Laguerre-suppressed doublet splittings plus degenerate dark ladders.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, SuperradiantDecomposition};
use crate::output::fmt_num;
use crate::scalar::{Extended, Real};

/// Default dark-manifold truncation index.
pub const DEFAULT_THETA: usize = 5;

/// Above this argument the splitting factor is evaluated in extended precision.
pub const EXTENDED_OVERLAP_THRESHOLD: f64 = 60.0;

/// Generalized Laguerre polynomial `L_n^α(x)` by upward recurrence.
pub fn laguerre<R: Real>(n: usize, alpha: R, x: R) -> R {
    let mut prev = R::one();
    if n == 0 {
        return prev;
    }
    let mut cur = R::one() + alpha.clone() - x.clone();
    for k in 1..n {
        let kf = R::from_usize(k);
        let next = ((kf.clone() + kf.clone() + R::one() + alpha.clone() - x.clone()) * cur.clone()
            - (kf.clone() + alpha.clone()) * prev)
            / (kf + R::one());
        prev = cur;
        cur = next;
    }
    cur
}

/// `e^{-x/2} L_n(x)` for `n = 0..=n_max`, computed in `R`.
fn damped_laguerre_table<R: Real>(n_max: usize, x: R) -> Vec<R> {
    let damp = (-x.half()).exp();
    let mut out = Vec::with_capacity(n_max + 1);
    let mut prev = R::one();
    out.push(damp.clone());
    if n_max == 0 {
        return out;
    }
    let mut cur = R::one() - x.clone();
    out.push(damp.clone() * cur.clone());
    for k in 1..n_max {
        let kf = R::from_usize(k);
        let next = ((kf.clone() + kf.clone() + R::one() - x.clone()) * cur.clone() - kf.clone() * prev) / (kf + R::one());
        prev = cur;
        cur = next;
        out.push(damp.clone() * cur.clone());
    }
    out
}

/// Displaced-oscillator overlaps `e^{-2λ²/ω_f²} L_n(4λ²/ω_f²)` for `n = 0..=n_max`.
///
/// Large displacements are evaluated in [`Extended`] and rounded to `R`.
pub fn overlap_table<R: Real>(n_max: usize, lambda: f64, omega_f: f64) -> Vec<R> {
    let x = 4.0 * lambda * lambda / (omega_f * omega_f);
    if x > EXTENDED_OVERLAP_THRESHOLD || R::DIGITS > f64::DIGITS {
        let xe = Extended::from(4.0) * Extended::from(lambda).square() / Extended::from(omega_f).square();
        damped_laguerre_table::<Extended>(n_max, xe).iter().map(R::from_extended).collect()
    } else {
        damped_laguerre_table::<f64>(n_max, x).into_iter().map(R::from_f64).collect()
    }
}

/// Overlap `⟨n_k^-|n_k^+⟩ = e^{-2λ²/ω_f²} L_n(4λ²/ω_f²)`.
pub fn displaced_overlap(n: usize, lambda_k: f64, omega_f: f64) -> f64 {
    overlap_table::<f64>(n, lambda_k, omega_f)[n]
}

fn check_doublet(decomp: &SuperradiantDecomposition, k: usize) -> Result<()> {
    if k == 0 || k > decomp.m() {
        return Err(Error::DoubletIndex { k, m: decomp.m() });
    }
    Ok(())
}

/// Branch energies `(Λ_{k+}^n, Λ_{k-}^n)` of bright doublet `k` (1-based).
pub fn bright_energies(
    decomp: &SuperradiantDecomposition,
    model: &ModelSpec,
    n: usize,
    k: usize,
) -> Result<(f64, f64)> {
    check_doublet(decomp, k)?;
    let w = model.omega_f;
    let lam = decomp.lambda[k - 1];
    let base = w * (n as f64 - lam * lam / (w * w)) + 0.5 * (model.omega_a + decomp.delta_plus[k - 1]);
    let half_split = 0.5 * (model.omega_a + decomp.delta_minus[k - 1]) * displaced_overlap(n, lam, w);
    Ok((base + half_split, base - half_split))
}

/// Energy `n ω_f + (ω_a/2)(1 + p)` of the degenerate dark level at index `n`.
pub fn dark_energy(decomp: &SuperradiantDecomposition, model: &ModelSpec, n: usize) -> Result<f64> {
    if decomp.dark_count() == 0 {
        return Err(Error::NoDarkStates);
    }
    Ok(n as f64 * model.omega_f + 0.5 * model.omega_a * (1.0 + decomp.p()))
}

/// Truncation threshold `ζ(Θ, k) = λ_k²/ω_f² + ω_a p/(2ω_f) + Θ`.
pub fn zeta(decomp: &SuperradiantDecomposition, model: &ModelSpec, theta: usize, k: usize) -> f64 {
    let lam = decomp.lambda[k - 1] / model.omega_f;
    lam * lam + model.omega_a * decomp.p() / (2.0 * model.omega_f) + theta as f64
}

/// Number of bright oscillator indices `n ≥ 0` with `n ≤ ζ(Θ, k)`.
pub fn bright_level_count(decomp: &SuperradiantDecomposition, model: &ModelSpec, theta: usize, k: usize) -> usize {
    let z = zeta(decomp, model, theta, k);
    if z < 0.0 {
        0
    } else {
        z.floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LevelKind {
    BrightPlus,
    BrightMinus,
    Dark,
}

impl LevelKind {
    pub fn label(self) -> &'static str {
        match self {
            LevelKind::BrightPlus => "bright_plus",
            LevelKind::BrightMinus => "bright_minus",
            LevelKind::Dark => "dark",
        }
    }
}

/// One adiabatic level. `k` is the 1-based doublet index, or 0 for dark levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaLevel {
    pub kind: LevelKind,
    pub k: usize,
    pub n: usize,
    pub energy: f64,
    pub multiplicity: usize,
}

/// Energy-ordered truncated adiabatic spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticSpectrum {
    pub levels: Vec<AaLevel>,
    pub theta: usize,
}

impl AdiabaticSpectrum {
    pub fn total_multiplicity(&self) -> usize {
        self.levels.iter().map(|l| l.multiplicity).sum()
    }

    /// Energies with multiplicities expanded, ascending.
    pub fn expanded_energies(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|l| std::iter::repeat(l.energy).take(l.multiplicity)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind,k,n,energy,multiplicity")?;
        for l in &self.levels {
            writeln!(out, "{},{},{},{},{}", l.kind.label(), l.k, l.n, fmt_num(l.energy), l.multiplicity)?;
        }
        Ok(())
    }
}

/// All levels admitted by the `ζ(Θ, k)` rule, sorted by energy.
pub fn aa_spectrum(decomp: &SuperradiantDecomposition, model: &ModelSpec, theta: usize) -> AdiabaticSpectrum {
    let w = model.omega_f;
    let mut levels = Vec::new();
    for k in 1..=decomp.m() {
        let count = bright_level_count(decomp, model, theta, k);
        if count == 0 {
            continue;
        }
        let lam = decomp.lambda[k - 1];
        let overlaps = overlap_table::<f64>(count - 1, lam, w);
        let offset = 0.5 * (model.omega_a + decomp.delta_plus[k - 1]) - lam * lam / w;
        let amp = 0.5 * (model.omega_a + decomp.delta_minus[k - 1]);
        for (n, ov) in overlaps.iter().enumerate() {
            let base = w * n as f64 + offset;
            for (kind, sign) in [(LevelKind::BrightPlus, 1.0), (LevelKind::BrightMinus, -1.0)] {
                levels.push(AaLevel { kind, k, n, energy: base + sign * amp * ov, multiplicity: 1 });
            }
        }
    }
    let dark = decomp.dark_count();
    if dark > 0 {
        for n in 0..=theta {
            let energy = n as f64 * w + 0.5 * model.omega_a * (1.0 + decomp.p());
            levels.push(AaLevel { kind: LevelKind::Dark, k: 0, n, energy, multiplicity: dark });
        }
    }
    levels.sort_by(|a, b| {
        a.energy
            .total_cmp(&b.energy)
            .then(a.kind.cmp(&b.kind))
            .then(a.k.cmp(&b.k))
            .then(a.n.cmp(&b.n))
    });
    AdiabaticSpectrum { levels, theta }
}

/// Lowest `count` energies of the spectrum with multiplicities expanded.
pub fn lowest_energies(spectrum: &AdiabaticSpectrum, count: usize) -> Vec<f64> {
    let mut e = spectrum.expanded_energies();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    e.truncate(count);
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{svd_decompose, DEFAULT_RANK_TOL};
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    fn qrm(g: f64, omega_a: f64) -> (ModelSpec, SuperradiantDecomposition) {
        let m = ModelSpec::new(1.0, omega_a, 0.0, vec![0.0], vec![0.0], DMatrix::from_element(1, 1, Complex64::new(g, 0.0)))
            .unwrap();
        let d = svd_decompose(&m, DEFAULT_RANK_TOL).unwrap();
        (m, d)
    }

    #[test]
    fn laguerre_low_orders() {
        assert_eq!(laguerre(0, 0.3, 7.0), 1.0);
        assert_eq!(laguerre(1, 0.0, 1.0), 0.0);
        let x = 2.0f64;
        assert!((laguerre(2, 0.0, x) - (x * x - 4.0 * x + 2.0) / 2.0).abs() < 1e-15);
        assert!((laguerre(2, 0.0, 2.0) + 1.0).abs() < 1e-15);
        // L_2^1(x) = (x² - 6x + 6)/2
        assert!((laguerre(2, 1.0, 0.5) - (0.25 - 3.0 + 6.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn overlap_closed_forms() {
        for n in 0..10 {
            assert_eq!(displaced_overlap(n, 0.0, 1.0), 1.0);
        }
        assert!((displaced_overlap(0, 0.5, 1.0) - (-0.5f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn extended_path_agrees_with_standard_near_threshold() {
        let lam = (EXTENDED_OVERLAP_THRESHOLD / 4.0).sqrt() * 0.999;
        let std: Vec<f64> = overlap_table(8, lam, 1.0);
        let ext: Vec<Extended> = overlap_table(8, lam, 1.0);
        for (a, b) in std.iter().zip(&ext) {
            assert!((a - b.to_f64()).abs() < 1e-12);
        }
    }

    #[test]
    fn free_doublet() {
        let (m, d) = qrm(0.0, 0.2);
        assert_eq!(d.m(), 0);
        let (m1, d1) = qrm(1e-300, 0.2);
        let (p, q) = bright_energies(&d1, &m1, 0, 1).unwrap();
        assert!((p - 0.2).abs() < 1e-15 && q.abs() < 1e-15);
        assert!(matches!(bright_energies(&d, &m, 0, 1), Err(Error::DoubletIndex { .. })));
    }

    #[test]
    fn strong_coupling_doublets_close() {
        let (m, d) = qrm(5.0, 0.2);
        let (p, q) = bright_energies(&d, &m, 0, 1).unwrap();
        assert!((p - q).abs() < 1e-20);
        let (p0, _) = bright_energies(&d, &m, 0, 1).unwrap();
        let (p1, _) = bright_energies(&d, &m, 1, 1).unwrap();
        assert!((p1 - p0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dark_energies() {
        let m = ModelSpec::new(1.0, 0.2, 0.0, vec![0.0], vec![0.0, 0.0], DMatrix::from_element(1, 2, Complex64::new(0.5, 0.0)))
            .unwrap();
        let d = svd_decompose(&m, DEFAULT_RANK_TOL).unwrap();
        assert!((dark_energy(&d, &m, 0).unwrap() - 0.2).abs() < 1e-15);
        assert!((dark_energy(&d, &m, 3).unwrap() - 3.2).abs() < 1e-15);
        let m2 = ModelSpec::new(1.0, 0.2, 0.0, vec![0.0, 0.0], vec![0.0], DMatrix::from_element(2, 1, Complex64::new(0.5, 0.0)))
            .unwrap();
        let d2 = svd_decompose(&m2, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(dark_energy(&d2, &m2, 4).unwrap(), 4.0);
        let (m3, d3) = qrm(0.5, 0.2);
        assert!(matches!(dark_energy(&d3, &m3, 0), Err(Error::NoDarkStates)));
    }

    #[test]
    fn truncation_counts() {
        let (m, d) = qrm(1e-300, 0.2);
        assert!((zeta(&d, &m, 5, 1) - 5.1).abs() < 1e-12);
        assert_eq!(bright_level_count(&d, &m, 5, 1), 6);
        let (m, d) = qrm(5.0, 0.2);
        assert!((zeta(&d, &m, 0, 1) - 25.1).abs() < 1e-12);
        assert_eq!(bright_level_count(&d, &m, 0, 1), 26);
        let s = aa_spectrum(&d, &m, 0);
        assert_eq!(s.levels.len(), 52);
        assert!(s.levels.windows(2).all(|w| w[0].energy <= w[1].energy));
    }

    #[test]
    fn csv_header_and_rows() {
        let (m, d) = qrm(0.3, 0.2);
        let s = aa_spectrum(&d, &m, 1);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("kind,k,n,energy,multiplicity"));
        assert_eq!(lines.count(), s.levels.len());
        assert!(!text.contains('\r'));
    }
}
