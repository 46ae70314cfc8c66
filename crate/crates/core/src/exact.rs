//! Brute-force oracle: the full Hamiltonian in a Fock-truncated product basis.
//!
//! The Hamiltonian commutes with the parity `(-1)^{a†a} ⊗ (+1 on g, -1 on e)`,
//! so it is diagonalized in two sectors. In extended precision the lowest
//! eigenpairs of each sector are polished by residual correction, which
//! resolves doublet splittings far below `f64` resolution.

use nalgebra::{DMatrix, DVector};
use num_complex::{Complex, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{largest_singular_value, ModelSpec};
use crate::output::fmt_num;
use crate::scalar::{Extended, Real};
use crate::thermo::{spectrum_qfi, PrecisionMode, QfiCurve, EXTENDED_BELOW_T};

/// Ground-energy tolerance (units of ω_f) accepted by the cutoff search.
pub const CUTOFF_TOLERANCE: f64 = 1e-8;
/// Cutoff increment used by the cutoff search.
pub const CUTOFF_STEP: usize = 5;
/// Hard ceiling on the Fock cutoff.
pub const MAX_CUTOFF: usize = 1000;
/// Eigenvalues polished per parity sector in extended precision.
pub const DEFAULT_REFINED_PER_SECTOR: usize = 8;

/// Dense Hamiltonian in the basis `{g_1..g_Dg, e_1..e_De} ⊗ {|0⟩..|n_max⟩}`.
#[derive(Debug, Clone)]
pub struct TruncatedHamiltonian {
    pub n_max: usize,
    pub matrix: DMatrix<Complex64>,
}

impl TruncatedHamiltonian {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    /// `‖H - H†‖ / ‖H‖` in the Frobenius norm.
    pub fn hermiticity_defect(&self) -> f64 {
        let norm = self.matrix.norm();
        if norm == 0.0 {
            return 0.0;
        }
        (&self.matrix - self.matrix.adjoint()).norm() / norm
    }
}

fn atom_energy(model: &ModelSpec, a: usize) -> f64 {
    let dg = model.d_g();
    if a < dg {
        model.epsilon * model.delta_g[a]
    } else {
        model.omega_a + model.epsilon * model.delta_e[a - dg]
    }
}

fn check_cutoff(n_max: usize) -> Result<()> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("Fock cutoff must be at least 1".into()));
    }
    Ok(())
}

/// Full Hamiltonian with Fock states `0..=n_max`.
pub fn build_hamiltonian(model: &ModelSpec, n_max: usize) -> Result<TruncatedHamiltonian> {
    check_cutoff(n_max)?;
    let (dg, de) = (model.d_g(), model.d_e());
    let nf = n_max + 1;
    let dim = (dg + de) * nf;
    let idx = |a: usize, n: usize| a * nf + n;
    let mut h = DMatrix::<Complex64>::zeros(dim, dim);
    for a in 0..dg + de {
        let ea = atom_energy(model, a);
        for n in 0..nf {
            h[(idx(a, n), idx(a, n))] = Complex64::new(model.omega_f * n as f64 + ea, 0.0);
        }
    }
    for i in 0..dg {
        for j in 0..de {
            let lam = model.coupling[(i, j)];
            for n in 0..n_max {
                let s = ((n + 1) as f64).sqrt();
                for (ng, ne) in [(n, n + 1), (n + 1, n)] {
                    let r = idx(i, ng);
                    let c = idx(dg + j, ne);
                    h[(r, c)] += lam * s;
                    h[(c, r)] += lam.conj() * s;
                }
            }
        }
    }
    Ok(TruncatedHamiltonian { n_max, matrix: h })
}

/// One parity sector as a sparse Hermitian matrix.
#[derive(Debug, Clone)]
struct Sector {
    dim: usize,
    // (row, col, value) with both triangles present
    entries: Vec<(usize, usize, Complex64)>,
    // Fock index of each basis state, for the extended rebuild
    fock: Vec<usize>,
    atom: Vec<usize>,
}

fn build_sector(model: &ModelSpec, n_max: usize, parity: usize) -> Sector {
    let (dg, de) = (model.d_g(), model.d_e());
    let mut atom = Vec::new();
    let mut fock = Vec::new();
    let mut start = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        start.push(atom.len());
        let atoms = if n % 2 == parity { 0..dg } else { dg..dg + de };
        for a in atoms {
            atom.push(a);
            fock.push(n);
        }
    }
    let dim = atom.len();
    let mut entries = Vec::new();
    for s in 0..dim {
        entries.push((s, s, Complex64::new(model.omega_f * fock[s] as f64 + atom_energy(model, atom[s]), 0.0)));
    }
    for n in 0..n_max {
        let sq = ((n + 1) as f64).sqrt();
        let (lo, hi) = (start[n], start[n + 1]);
        let lo_end = hi;
        let hi_end = if n + 2 <= n_max { start[n + 2] } else { dim };
        for r in lo..lo_end {
            for c in hi..hi_end {
                let (g, e) = if atom[r] < dg { (atom[r], atom[c] - dg) } else { (atom[c], atom[r] - dg) };
                let lam = model.coupling[(g, e)];
                // ⟨g n_g| H |e n_e⟩ = Λ √max(n_g, n_e)
                let (row_g, col_e) = if atom[r] < dg { (r, c) } else { (c, r) };
                let v = lam * sq;
                entries.push((row_g, col_e, v));
                entries.push((col_e, row_g, v.conj()));
            }
        }
    }
    Sector { dim, entries, fock, atom }
}

impl Sector {
    fn dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }
}

type CExt = Complex<Extended>;

fn ext_entries(model: &ModelSpec, sector: &Sector) -> Vec<Vec<(usize, CExt)>> {
    let dg = model.d_g();
    let mut rows: Vec<Vec<(usize, CExt)>> = vec![Vec::new(); sector.dim];
    for s in 0..sector.dim {
        let a = sector.atom[s];
        let ea = if a < dg {
            Extended::from(model.epsilon) * Extended::from(model.delta_g[a])
        } else {
            Extended::from(model.omega_a) + Extended::from(model.epsilon) * Extended::from(model.delta_e[a - dg])
        };
        let d = Extended::from(model.omega_f) * Extended::from(sector.fock[s] as f64) + ea;
        rows[s].push((s, Complex::new(d, Extended::from(0.0))));
    }
    for &(r, c, _) in &sector.entries {
        if r == c {
            continue;
        }
        let (g, e) = if sector.atom[r] < dg { (sector.atom[r], sector.atom[c] - dg) } else { (sector.atom[c], sector.atom[r] - dg) };
        let lam = model.coupling[(g, e)];
        let n = sector.fock[r].max(sector.fock[c]);
        let sq = Real::sqrt(&Extended::from(n as f64));
        let mut v = Complex::new(Extended::from(lam.re) * sq.clone(), Extended::from(lam.im) * sq);
        if sector.atom[r] >= dg {
            v = v.conj();
        }
        rows[r].push((c, v));
    }
    rows
}

fn ext_matvec(rows: &[Vec<(usize, CExt)>], v: &[CExt]) -> Vec<CExt> {
    rows.iter()
        .map(|row| {
            let mut acc = Complex::new(Extended::from(0.0), Extended::from(0.0));
            for (c, h) in row {
                acc = acc + h.clone() * v[*c].clone();
            }
            acc
        })
        .collect()
}

fn ext_dot_re(a: &[CExt], b: &[CExt]) -> Extended {
    let mut acc = Extended::from(0.0);
    for (x, y) in a.iter().zip(b) {
        acc = acc + (x.re.clone() * y.re.clone() + x.im.clone() * y.im.clone());
    }
    acc
}

/// Polish eigenpair `idx` of a sector by repeated residual correction.
fn polish(
    rows: &[Vec<(usize, CExt)>],
    q: &DMatrix<Complex64>,
    evals: &DVector<f64>,
    idx: usize,
) -> Extended {
    let dim = q.nrows();
    let mut v: Vec<CExt> = (0..dim).map(|i| Complex::new(Extended::from(q[(i, idx)].re), Extended::from(q[(i, idx)].im))).collect();
    let mut theta = Extended::from(evals[idx]);
    for _ in 0..6 {
        let hv = ext_matvec(rows, &v);
        let norm2 = ext_dot_re(&v, &v);
        theta = ext_dot_re(&v, &hv) / norm2.clone();
        let r: Vec<CExt> = hv
            .iter()
            .zip(&v)
            .map(|(h, x)| Complex::new(h.re.clone() - theta.clone() * x.re.clone(), h.im.clone() - theta.clone() * x.im.clone()))
            .collect();
        let r64 = DVector::from_iterator(dim, r.iter().map(|z| Complex64::new(z.re.to_f64(), z.im.to_f64())));
        let rnorm = r64.norm() / norm2.to_f64().sqrt();
        if rnorm < 1e-52 * evals.amax().max(1.0) {
            break;
        }
        let t64 = theta.to_f64();
        let mut c = q.adjoint() * &r64;
        for j in 0..dim {
            let gap = evals[j] - t64;
            c[j] = if j == idx || gap == 0.0 { Complex64::new(0.0, 0.0) } else { -c[j] / gap };
        }
        let delta = q * c;
        for i in 0..dim {
            v[i] = Complex::new(v[i].re.clone() + Extended::from(delta[i].re), v[i].im.clone() + Extended::from(delta[i].im));
        }
    }
    theta
}

/// Settings for the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactSettings {
    /// Fixed Fock cutoff; `None` runs the cutoff search.
    pub n_max: Option<usize>,
    pub precision: PrecisionMode,
    pub refined_per_sector: usize,
}

impl Default for ExactSettings {
    fn default() -> Self {
        ExactSettings { n_max: None, precision: PrecisionMode::Standard, refined_per_sector: DEFAULT_REFINED_PER_SECTOR }
    }
}

/// Eigenvalues of the truncated Hamiltonian, ascending.
#[derive(Debug, Clone)]
pub struct ExactSpectrum {
    pub n_max: usize,
    pub energies: Vec<f64>,
    /// Present when eigenvalues were polished in extended precision; same order as `energies`.
    pub refined: Option<Vec<Extended>>,
}

impl ExactSpectrum {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,energy")?;
        for (i, e) in self.energies.iter().enumerate() {
            writeln!(out, "{i},{}", fmt_num(*e))?;
        }
        Ok(())
    }

    /// Smallest gap between consecutive eigenvalues among the lowest `count`.
    pub fn min_spacing(&self, count: usize) -> f64 {
        self.energies.iter().take(count).collect::<Vec<_>>().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

fn sector_eigen(model: &ModelSpec, n_max: usize, parity: usize) -> Result<(Sector, DMatrix<Complex64>, DVector<f64>)> {
    let sector = build_sector(model, n_max, parity);
    let dense = sector.dense();
    let eig = nalgebra::linalg::SymmetricEigen::try_new(dense, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("Hermitian eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..sector.dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let evals = DVector::from_iterator(sector.dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut q = DMatrix::zeros(sector.dim, sector.dim);
    for (dst, &src) in order.iter().enumerate() {
        q.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((sector, q, evals))
}

/// All eigenvalues at a fixed cutoff.
///
/// With `refine > 0` the lowest `refine` eigenvalues of each parity sector are
/// also polished in extended precision.
pub fn exact_spectrum_refined(model: &ModelSpec, n_max: usize, refine: usize) -> Result<ExactSpectrum> {
    check_cutoff(n_max)?;
    let sectors: Vec<Result<(Vec<f64>, Option<Vec<Extended>>)>> = (0..2usize)
        .into_par_iter()
        .map(|parity| {
            let (sector, q, evals) = sector_eigen(model, n_max, parity)?;
            let plain: Vec<f64> = evals.iter().copied().collect();
            if refine == 0 {
                return Ok((plain, None));
            }
            let rows = ext_entries(model, &sector);
            let k = refine.min(sector.dim);
            let mut ext: Vec<Extended> = (0..k).into_par_iter().map(|i| polish(&rows, &q, &evals, i)).collect();
            ext.extend(plain[k..].iter().map(|&e| Extended::from(e)));
            Ok((plain, Some(ext)))
        })
        .collect();
    let mut energies = Vec::new();
    let mut refined: Option<Vec<Extended>> = if refine > 0 { Some(Vec::new()) } else { None };
    for s in sectors {
        let (plain, ext) = s?;
        energies.extend(plain);
        if let (Some(all), Some(ext)) = (refined.as_mut(), ext) {
            all.extend(ext);
        }
    }
    if let Some(all) = refined.as_mut() {
        let mut pairs: Vec<(f64, Extended)> = all.drain(..).map(|e| (e.to_f64(), e)).collect();
        pairs.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        energies = pairs.iter().map(|p| p.0).collect();
        *all = pairs.into_iter().map(|p| p.1).collect();
    } else {
        energies.sort_by(f64::total_cmp);
    }
    Ok(ExactSpectrum { n_max, energies, refined })
}

/// All eigenvalues at a fixed cutoff in standard precision.
pub fn exact_spectrum(model: &ModelSpec, n_max: usize) -> Result<Vec<f64>> {
    Ok(exact_spectrum_refined(model, n_max, 0)?.energies)
}

/// Initial cutoff `max(25, ⌈4 (λ_1/ω_f)² + 10⌉)`.
pub fn initial_cutoff(model: &ModelSpec) -> usize {
    let g = largest_singular_value(&model.coupling) / model.omega_f;
    25usize.max((4.0 * g * g + 10.0).ceil() as usize)
}

fn ground_energy(model: &ModelSpec, n_max: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for parity in 0..2 {
        let (_, _, evals) = sector_eigen(model, n_max, parity)?;
        best = best.min(evals[0]);
    }
    Ok(best)
}

/// Smallest cutoff on the search ladder whose ground energy moves by at most
/// [`CUTOFF_TOLERANCE`] when the cutoff grows by [`CUTOFF_STEP`].
pub fn converged_cutoff(model: &ModelSpec) -> Result<usize> {
    let mut n = initial_cutoff(model);
    if n > MAX_CUTOFF {
        return Err(Error::NotConverged(format!("coupling needs a Fock cutoff beyond {MAX_CUTOFF}")));
    }
    let mut e = ground_energy(model, n)?;
    while n + CUTOFF_STEP <= MAX_CUTOFF {
        let e_next = ground_energy(model, n + CUTOFF_STEP)?;
        if (e_next - e).abs() <= CUTOFF_TOLERANCE * model.omega_f {
            return Ok(n);
        }
        n += CUTOFF_STEP;
        e = e_next;
    }
    Err(Error::NotConverged(format!("ground energy still moving at Fock cutoff {MAX_CUTOFF}")))
}

/// Exact thermal QFI from the truncated spectrum (total only).
///
/// Standard mode uses `f64` eigenvalues except below [`EXTENDED_BELOW_T`] or
/// when the low-lying spectrum is near-degenerate, where the polished
/// extended-precision eigenvalues take over.
pub fn exact_qfi(model: &ModelSpec, temperatures: &[f64], settings: &ExactSettings) -> Result<(QfiCurve, usize)> {
    let n_max = match settings.n_max {
        Some(n) => n,
        None => converged_cutoff(model)?,
    };
    let spec = exact_spectrum_refined(model, n_max, settings.refined_per_sector)?;
    let near_degenerate = spec.min_spacing(2 * settings.refined_per_sector + 1) < 1e-9 * model.omega_f;
    let use_ext = |t: f64| {
        spec.refined.is_some()
            && (settings.precision == PrecisionMode::Extended || near_degenerate || t < EXTENDED_BELOW_T * model.omega_f)
    };
    let plain: Vec<(f64, usize)> = spec.energies.iter().map(|&e| (e, 1)).collect();
    let ext: Vec<(Extended, usize)> = spec.refined.as_ref().map(|r| r.iter().map(|e| (e.clone(), 1)).collect()).unwrap_or_default();
    let points: Vec<Result<(f64, bool)>> = temperatures
        .par_iter()
        .map(|&t| {
            if use_ext(t) {
                Ok((spectrum_qfi(&ext, t)?, true))
            } else {
                Ok((spectrum_qfi(&plain, t)?, false))
            }
        })
        .collect();
    let points: Vec<(f64, bool)> = points.into_iter().collect::<Result<_>>()?;
    Ok((
        QfiCurve {
            temperatures: temperatures.to_vec(),
            total: points.iter().map(|p| p.0).collect(),
            components: None,
            theta: None,
            precision: settings.precision,
            extended_points: points.iter().map(|p| p.1).collect(),
        },
        n_max,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermo::tls_qfi;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn qrm(g: f64, omega_a: f64) -> ModelSpec {
        ModelSpec::new(1.0, omega_a, 0.0, vec![0.0], vec![0.0], DMatrix::from_element(1, 1, c(g))).unwrap()
    }

    #[test]
    fn decoupled_spectrum() {
        let e = exact_spectrum(&qrm(0.0, 0.2), 2).unwrap();
        let want = [0.0, 0.2, 1.0, 1.2, 2.0, 2.2];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn matrix_is_hermitian_with_expected_size() {
        let a = DMatrix::from_fn(2, 4, |i, j| Complex64::new(0.1 * (i + j) as f64, 0.05 * (i as f64 - j as f64)));
        let m = ModelSpec::new(1.0, 0.2, 0.02, vec![-1.0, 1.0], vec![-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0], a).unwrap();
        let h = build_hamiltonian(&m, 25).unwrap();
        assert_eq!(h.dimension(), 156);
        assert!(h.hermiticity_defect() <= 1e-12);
    }

    #[test]
    fn sectors_reproduce_full_diagonalization() {
        let a = DMatrix::from_fn(2, 3, |i, j| Complex64::new(0.3 + 0.1 * i as f64, 0.2 * j as f64 - 0.1));
        let m = ModelSpec::new(1.0, 0.3, 0.05, vec![-1.0, 0.5], vec![-0.2, 0.1, 1.0], a).unwrap();
        let h = build_hamiltonian(&m, 12).unwrap();
        let mut full: Vec<f64> = h.matrix.symmetric_eigenvalues().iter().copied().collect();
        full.sort_by(f64::total_cmp);
        let sec = exact_spectrum(&m, 12).unwrap();
        assert_eq!(full.len(), sec.len());
        for (a, b) in full.iter().zip(&sec) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn polishing_keeps_f64_values() {
        let m = qrm(0.7, 0.2);
        let s = exact_spectrum_refined(&m, 30, 4).unwrap();
        let r = s.refined.as_ref().unwrap();
        for (a, b) in s.energies.iter().zip(r) {
            assert!((a - b.to_f64()).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_coupling_doublet_is_degenerate_in_f64() {
        let m = qrm(5.0, 0.2);
        let s = exact_spectrum_refined(&m, 130, 2).unwrap();
        let r = s.refined.as_ref().unwrap();
        let split = (r[1].clone() - r[0].clone()).to_f64();
        assert!((split / (0.2 * (-50f64).exp()) - 1.0).abs() < 1e-2, "{split:e}");
    }

    #[test]
    fn cutoff_search_starts_from_coupling() {
        assert_eq!(initial_cutoff(&qrm(0.5, 0.2)), 25);
        assert_eq!(initial_cutoff(&qrm(5.0, 0.2)), 110);
        let n = converged_cutoff(&qrm(0.8, 0.2)).unwrap();
        assert!(n >= 25);
    }

    #[test]
    fn decoupled_qfi_is_two_level_at_low_temperature() {
        let m = qrm(0.0, 0.3);
        let s = ExactSettings { n_max: Some(20), ..Default::default() };
        let (curve, _) = exact_qfi(&m, &[0.01, 0.02], &s).unwrap();
        for (i, &t) in curve.temperatures.iter().enumerate() {
            let want = tls_qfi(0.3, t);
            assert!((curve.total[i] - want).abs() <= 1e-10 * want);
        }
        assert!(curve.components.is_none());
    }

    #[test]
    fn spectrum_csv_layout() {
        let s = exact_spectrum_refined(&qrm(0.2, 0.2), 3, 0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,energy\n0,"));
        assert_eq!(text.lines().count(), 9);
    }
}
