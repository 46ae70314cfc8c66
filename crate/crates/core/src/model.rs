//! Physical parameters and the superradiant (SVD) basis of the coupling matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative threshold below which a singular value counts as dark.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Validated parameters of the multilevel quantum Rabi model.
///
/// Energies share one unit; `omega_f` sets the scale. Detunings are
/// dimensionless and multiplied by `epsilon`. `coupling[(i, j)]` couples
/// ground level `i` to excited level `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub omega_f: f64,
    pub omega_a: f64,
    pub epsilon: f64,
    pub delta_g: Vec<f64>,
    pub delta_e: Vec<f64>,
    pub coupling: DMatrix<Complex64>,
}

impl ModelSpec {
    pub fn new(
        omega_f: f64,
        omega_a: f64,
        epsilon: f64,
        delta_g: Vec<f64>,
        delta_e: Vec<f64>,
        coupling: DMatrix<Complex64>,
    ) -> Result<Self> {
        if !(omega_f > 0.0) || !omega_f.is_finite() {
            return Err(Error::InvalidParameter(format!("omega_f must be positive, got {omega_f}")));
        }
        if !(omega_a >= 0.0) || !omega_a.is_finite() {
            return Err(Error::InvalidParameter(format!("omega_a must be non-negative, got {omega_a}")));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be non-negative, got {epsilon}")));
        }
        if delta_g.is_empty() || delta_e.is_empty() {
            return Err(Error::ShapeMismatch("both bands need at least one level".into()));
        }
        for &d in delta_g.iter().chain(delta_e.iter()) {
            if !(-1.0..=1.0).contains(&d) {
                return Err(Error::DetuningOutOfRange(d));
            }
        }
        if coupling.nrows() != delta_g.len() || coupling.ncols() != delta_e.len() {
            return Err(Error::ShapeMismatch(format!(
                "coupling is {}x{} but bands have D_g={} and D_e={}",
                coupling.nrows(),
                coupling.ncols(),
                delta_g.len(),
                delta_e.len()
            )));
        }
        if coupling.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("coupling contains non-finite entries".into()));
        }
        Ok(ModelSpec { omega_f, omega_a, epsilon, delta_g, delta_e, coupling })
    }

    pub fn d_g(&self) -> usize {
        self.delta_g.len()
    }

    pub fn d_e(&self) -> usize {
        self.delta_e.len()
    }

    /// Same model with every coupling element multiplied by `scale`.
    pub fn with_coupling_scale(&self, scale: f64) -> ModelSpec {
        ModelSpec { coupling: self.coupling.map(|z| z * scale), ..self.clone() }
    }

    /// Same model with the coupling rescaled so its largest singular value is `g`.
    ///
    /// A zero coupling matrix stays zero.
    pub fn with_largest_singular_value(&self, g: f64) -> ModelSpec {
        let s1 = largest_singular_value(&self.coupling);
        if s1 == 0.0 {
            return self.clone();
        }
        self.with_coupling_scale(g / s1)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: ModelFile = serde_json::from_str(s)?;
        raw.try_into()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    /// Same model expressed in units where `omega_f = 1`.
    pub fn in_cavity_units(&self) -> ModelSpec {
        let w = self.omega_f;
        ModelSpec {
            omega_f: 1.0,
            omega_a: self.omega_a / w,
            epsilon: self.epsilon / w,
            delta_g: self.delta_g.clone(),
            delta_e: self.delta_e.clone(),
            coupling: self.coupling.map(|z| z / w),
        }
    }
}

/// On-disk model document. Coupling elements are `[re, im]` pairs, one array per row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default = "one")]
    pub omega_f: f64,
    pub omega_a: f64,
    pub epsilon: f64,
    pub delta_g: Vec<f64>,
    pub delta_e: Vec<f64>,
    pub coupling: Vec<Vec<[f64; 2]>>,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<ModelFile> for ModelSpec {
    type Error = Error;

    fn try_from(raw: ModelFile) -> Result<Self> {
        let rows = raw.coupling.len();
        let cols = raw.coupling.first().map_or(0, Vec::len);
        if raw.coupling.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("coupling rows have different lengths".into()));
        }
        let coupling = DMatrix::from_fn(rows, cols, |i, j| {
            let [re, im] = raw.coupling[i][j];
            Complex64::new(re, im)
        });
        ModelSpec::new(raw.omega_f, raw.omega_a, raw.epsilon, raw.delta_g, raw.delta_e, coupling)
    }
}

impl From<&ModelSpec> for ModelFile {
    fn from(m: &ModelSpec) -> Self {
        let coupling = (0..m.coupling.nrows())
            .map(|i| (0..m.coupling.ncols()).map(|j| [m.coupling[(i, j)].re, m.coupling[(i, j)].im]).collect())
            .collect();
        ModelFile {
            omega_f: m.omega_f,
            omega_a: m.omega_a,
            epsilon: m.epsilon,
            delta_g: m.delta_g.clone(),
            delta_e: m.delta_e.clone(),
            coupling,
        }
    }
}

/// Which band holds the excess (dark) states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExcessBand {
    /// `D_e > D_g`, or the balanced case (treated like `p = +1`).
    Excited,
    /// `D_g > D_e`.
    Ground,
}

impl ExcessBand {
    /// The sign `p` entering the dark energies.
    pub fn sign(self) -> f64 {
        match self {
            ExcessBand::Excited => 1.0,
            ExcessBand::Ground => -1.0,
        }
    }
}

/// Coupling matrix in the superradiant basis, `Λ = U diag(λ) V†`.
///
/// Only the first `min(D_g, D_e)` columns of `U` and `V` are stored; the full
/// unitaries are completed on request by [`full_u`](Self::full_u) and
/// [`full_v`](Self::full_v). Downstream energies depend only on the multiset
/// of singular values and the averaged detunings, so the order of tied
/// singular values is whatever the factorization returned.
#[derive(Debug, Clone)]
pub struct SuperradiantDecomposition {
    pub u_thin: DMatrix<Complex64>,
    pub v_thin: DMatrix<Complex64>,
    /// All `min(D_g, D_e)` singular values, nonincreasing.
    pub singular_values: Vec<f64>,
    /// Bright singular values `λ_1 ≥ … ≥ λ_M`.
    pub lambda: Vec<f64>,
    pub d_g: usize,
    pub d_e: usize,
    pub excess: ExcessBand,
    pub delta_e_avg: Vec<f64>,
    pub delta_g_avg: Vec<f64>,
    pub delta_plus: Vec<f64>,
    pub delta_minus: Vec<f64>,
}

impl SuperradiantDecomposition {
    /// Bright rank `M`.
    pub fn m(&self) -> usize {
        self.lambda.len()
    }

    /// `N = max(D_g, D_e)`.
    pub fn n(&self) -> usize {
        self.d_g.max(self.d_e)
    }

    pub fn dark_count(&self) -> usize {
        self.n() - self.m()
    }

    pub fn p(&self) -> f64 {
        self.excess.sign()
    }

    pub fn full_u(&self) -> DMatrix<Complex64> {
        complete_unitary(&self.u_thin)
    }

    pub fn full_v(&self) -> DMatrix<Complex64> {
        complete_unitary(&self.v_thin)
    }

    /// Decomposition with canonical superradiant vectors and vanishing detunings.
    ///
    /// `singular_values` may be in any order and may contain zeros; values at
    /// or below `rank_tol · max` are dark.
    pub fn from_profile(singular_values: &[f64], d_g: usize, d_e: usize, rank_tol: f64) -> Result<Self> {
        let r = d_g.min(d_e);
        if singular_values.len() != r {
            return Err(Error::ShapeMismatch(format!(
                "{} singular values for a {d_g}x{d_e} coupling",
                singular_values.len()
            )));
        }
        if singular_values.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("singular values must be finite and non-negative".into()));
        }
        let mut sv = singular_values.to_vec();
        sv.sort_by(|a, b| b.total_cmp(a));
        let s1 = sv.first().copied().unwrap_or(0.0);
        let m = if s1 > 0.0 { sv.iter().take_while(|&&s| s > rank_tol * s1).count() } else { 0 };
        let one = Complex64::new(1.0, 0.0);
        Ok(SuperradiantDecomposition {
            u_thin: DMatrix::from_fn(d_g, r, |i, k| if i == k { one } else { Complex64::new(0.0, 0.0) }),
            v_thin: DMatrix::from_fn(d_e, r, |j, k| if j == k { one } else { Complex64::new(0.0, 0.0) }),
            lambda: sv[..m].to_vec(),
            singular_values: sv,
            d_g,
            d_e,
            excess: if d_g > d_e { ExcessBand::Ground } else { ExcessBand::Excited },
            delta_e_avg: vec![0.0; m],
            delta_g_avg: vec![0.0; m],
            delta_plus: vec![0.0; m],
            delta_minus: vec![0.0; m],
        })
    }

    /// `U diag(σ) V†` over all stored singular values.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let r = self.singular_values.len();
        let mut us = self.u_thin.clone();
        for k in 0..r {
            let s = self.singular_values[k];
            us.column_mut(k).scale_mut(s);
        }
        us * self.v_thin.adjoint()
    }

    /// Phase gauge transform: `U[:, k] → e^{iφ} U[:, k]`, `V[:, k] → e^{iφ} V[:, k]`.
    pub fn with_column_phase(&self, k: usize, phase: f64) -> Self {
        let z = Complex64::from_polar(1.0, phase);
        let mut out = self.clone();
        for i in 0..out.u_thin.nrows() {
            out.u_thin[(i, k)] *= z;
        }
        for j in 0..out.v_thin.nrows() {
            out.v_thin[(j, k)] *= z;
        }
        out
    }
}

/// Largest singular value of a complex matrix.
pub fn largest_singular_value(a: &DMatrix<Complex64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    // Gram matrix on the short side keeps this cheap for very wide shapes.
    let gram = if a.nrows() <= a.ncols() { a * a.adjoint() } else { a.adjoint() * a };
    let eig = gram.symmetric_eigenvalues();
    eig.iter().cloned().fold(0.0f64, f64::max).max(0.0).sqrt()
}

/// Singular value decomposition into the superradiant basis.
///
/// A singular value counts as bright when it exceeds `rank_tol · σ_1`.
pub fn svd_decompose(model: &ModelSpec, rank_tol: f64) -> Result<SuperradiantDecomposition> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidParameter(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
    }
    let (d_g, d_e) = (model.d_g(), model.d_e());
    let r = d_g.min(d_e);
    let svd = model.coupling.clone().try_svd(true, true, f64::EPSILON, 10_000).ok_or_else(|| {
        Error::Numerical("singular value decomposition did not converge".into())
    })?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD returned no left vectors".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD returned no right vectors".into()))?;
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u_thin = DMatrix::zeros(d_g, r);
    let mut v_thin = DMatrix::zeros(d_e, r);
    let mut singular_values = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        u_thin.set_column(dst, &u.column(src));
        for j in 0..d_e {
            v_thin[(j, dst)] = v_t[(src, j)].conj();
        }
        singular_values.push(sv[src].max(0.0));
    }

    let s1 = singular_values.first().copied().unwrap_or(0.0);
    let m = if s1 > 0.0 { singular_values.iter().take_while(|&&s| s > rank_tol * s1).count() } else { 0 };
    let lambda = singular_values[..m].to_vec();
    let excess = if d_g > d_e { ExcessBand::Ground } else { ExcessBand::Excited };

    let mut decomp = SuperradiantDecomposition {
        u_thin,
        v_thin,
        singular_values,
        lambda,
        d_g,
        d_e,
        excess,
        delta_e_avg: Vec::new(),
        delta_g_avg: Vec::new(),
        delta_plus: Vec::new(),
        delta_minus: Vec::new(),
    };
    let avg = averaged_detunings(&decomp, model);
    decomp.delta_e_avg = avg.excited;
    decomp.delta_g_avg = avg.ground;
    decomp.delta_plus = avg.plus;
    decomp.delta_minus = avg.minus;
    Ok(decomp)
}

/// Per-doublet detunings weighted by the superradiant amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDetunings {
    pub excited: Vec<f64>,
    pub ground: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

/// `Δ_k^e = ε Σ_j δ_j^e |V_jk|²`, `Δ_k^g = ε Σ_i δ_i^g |U_ik|²`, `Δ_k^± = Δ_k^e ± Δ_k^g`.
pub fn averaged_detunings(decomp: &SuperradiantDecomposition, model: &ModelSpec) -> AveragedDetunings {
    let m = decomp.m();
    let eps = model.epsilon;
    let excited: Vec<f64> = (0..m)
        .map(|k| eps * (0..decomp.d_e).map(|j| model.delta_e[j] * decomp.v_thin[(j, k)].norm_sqr()).sum::<f64>())
        .collect();
    let ground: Vec<f64> = (0..m)
        .map(|k| eps * (0..decomp.d_g).map(|i| model.delta_g[i] * decomp.u_thin[(i, k)].norm_sqr()).sum::<f64>())
        .collect();
    let plus = excited.iter().zip(&ground).map(|(e, g)| e + g).collect();
    let minus = excited.iter().zip(&ground).map(|(e, g)| e - g).collect();
    AveragedDetunings { excited, ground, plus, minus }
}

/// Extend orthonormal columns to a full unitary by Gram–Schmidt against the canonical basis.
fn complete_unitary(thin: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = thin.nrows();
    let mut cols: Vec<nalgebra::DVector<Complex64>> = (0..thin.ncols()).map(|k| thin.column(k).into_owned()).collect();
    let mut e = 0;
    while cols.len() < n && e < n {
        let mut v = nalgebra::DVector::<Complex64>::zeros(n);
        v[e] = Complex64::new(1.0, 0.0);
        // two passes of classical Gram-Schmidt
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dotc(&v);
                v -= c * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / Complex64::new(norm, 0.0));
        }
        e += 1;
    }
    DMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn reference_like(coupling: DMatrix<Complex64>) -> Result<ModelSpec> {
        ModelSpec::new(1.0, 0.2, 0.02, vec![-1.0, 1.0], vec![-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0], coupling)
    }

    #[test]
    fn builds_reference_shape() {
        let m = reference_like(DMatrix::from_element(2, 4, c(0.3))).unwrap();
        assert_eq!((m.d_g(), m.d_e()), (2, 4));
    }

    #[test]
    fn rejects_out_of_range_detuning() {
        let err = ModelSpec::new(1.0, 0.2, 0.02, vec![0.0], vec![1.5], DMatrix::from_element(1, 1, c(0.1)));
        assert!(matches!(err, Err(Error::DetuningOutOfRange(d)) if d == 1.5));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let err = ModelSpec::new(1.0, 0.2, 0.02, vec![-1.0, 1.0], vec![-1.0, 0.0, 1.0], DMatrix::from_element(2, 4, c(0.1)));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn rejects_nonpositive_cavity_frequency() {
        for w in [0.0, -1.0, f64::NAN] {
            let err = ModelSpec::new(w, 0.2, 0.0, vec![0.0], vec![0.0], DMatrix::from_element(1, 1, c(0.1)));
            assert!(matches!(err, Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn scalar_coupling() {
        let m = ModelSpec::new(1.0, 0.2, 0.0, vec![0.0], vec![0.0], DMatrix::from_element(1, 1, c(0.7))).unwrap();
        let d = svd_decompose(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(d.m(), 1);
        assert!((d.lambda[0] - 0.7).abs() < 1e-15);
        assert_eq!(d.dark_count(), 0);
        assert!((d.full_u()[(0, 0)].norm() - 1.0).abs() < 1e-15);
        assert!((d.full_v()[(0, 0)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_coupling() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 0)] = c(1.0);
        a[(1, 1)] = c(2.0);
        let m = ModelSpec::new(1.0, 0.2, 0.0, vec![0.0, 0.0], vec![0.0, 0.0], a).unwrap();
        let d = svd_decompose(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(d.m(), 2);
        assert!((d.lambda[0] - 2.0).abs() < 1e-14 && (d.lambda[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_coupling_is_all_dark() {
        let m = reference_like(DMatrix::zeros(2, 4)).unwrap();
        let d = svd_decompose(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(d.m(), 0);
        assert_eq!(d.n(), 4);
        assert_eq!(d.dark_count(), 4);
        assert_eq!(d.p(), 1.0);
    }

    #[test]
    fn more_ground_than_excited_sets_negative_sign() {
        let m = ModelSpec::new(1.0, 0.2, 0.0, vec![0.0; 3], vec![0.0], DMatrix::from_element(3, 1, c(0.2))).unwrap();
        let d = svd_decompose(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(d.p(), -1.0);
        assert_eq!(d.dark_count(), 2);
    }

    #[test]
    fn identity_right_vectors_give_bare_detunings() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 0)] = c(3.0);
        a[(1, 1)] = c(1.0);
        let m = ModelSpec::new(1.0, 0.2, 0.05, vec![0.5, -0.25], vec![-1.0, 0.4], a).unwrap();
        let d = svd_decompose(&m, DEFAULT_RANK_TOL).unwrap();
        assert!((d.delta_e_avg[0] - 0.05 * -1.0).abs() < 1e-15);
        assert!((d.delta_e_avg[1] - 0.05 * 0.4).abs() < 1e-15);
        assert!((d.delta_g_avg[0] - 0.05 * 0.5).abs() < 1e-15);
        assert!((d.delta_plus[1] - (0.02 - 0.0125)).abs() < 1e-15);
    }

    #[test]
    fn zero_spread_and_uniform_detunings() {
        let a = DMatrix::from_fn(2, 4, |i, j| Complex64::new((i + 2 * j) as f64 * 0.1 + 0.05, 0.03 * j as f64));
        let zero = ModelSpec::new(1.0, 0.2, 0.0, vec![-1.0, 1.0], vec![-1.0, -0.3, 0.3, 1.0], a.clone()).unwrap();
        let d = svd_decompose(&zero, DEFAULT_RANK_TOL).unwrap();
        assert!(d.delta_plus.iter().chain(&d.delta_minus).all(|&x| x == 0.0));

        let flat = ModelSpec::new(1.0, 0.2, 0.07, vec![-1.0, 1.0], vec![1.0; 4], a).unwrap();
        let d = svd_decompose(&flat, DEFAULT_RANK_TOL).unwrap();
        for &x in &d.delta_e_avg {
            assert!((x - 0.07).abs() < 1e-14);
        }
    }

    #[test]
    fn json_round_trip_and_units() {
        let a = DMatrix::from_fn(2, 4, |i, j| Complex64::new(i as f64 - 0.5 * j as f64, 0.1 * (i + j) as f64));
        let m = ModelSpec::new(2.0, 0.4, 0.04, vec![-1.0, 1.0], vec![-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0], a).unwrap();
        let back = ModelSpec::from_json_str(&m.to_json_string().unwrap()).unwrap();
        assert_eq!(back, m);
        let u = m.in_cavity_units();
        assert_eq!(u.omega_f, 1.0);
        assert!((u.omega_a - 0.2).abs() < 1e-15);
        assert!((u.coupling[(1, 3)].im - 0.2).abs() < 1e-15);
    }

    #[test]
    fn json_defaults_cavity_frequency_to_one() {
        let s = r#"{"omega_a":0.2,"epsilon":0.0,"delta_g":[0],"delta_e":[0],"coupling":[[[0.5,0.0]]]}"#;
        let m = ModelSpec::from_json_str(s).unwrap();
        assert_eq!(m.omega_f, 1.0);
        assert_eq!(m.coupling[(0, 0)], c(0.5));
    }

    #[test]
    fn rescaling_to_target_singular_value() {
        let a = DMatrix::from_fn(2, 4, |i, j| Complex64::new(1.0 + i as f64, j as f64 - 1.5));
        let m = reference_like(a).unwrap().with_largest_singular_value(0.8);
        assert!((largest_singular_value(&m.coupling) - 0.8).abs() < 1e-12);
        let d = svd_decompose(&m, DEFAULT_RANK_TOL).unwrap();
        assert!((d.lambda[0] - 0.8).abs() < 1e-12);
    }
}
