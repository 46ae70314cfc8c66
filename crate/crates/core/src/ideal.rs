//! Ideal thermometer: one ground state and a `D`-fold degenerate excited level.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::fmt_num;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealProbe {
    pub gap: f64,
    pub degeneracy: f64,
}

impl IdealProbe {
    pub fn new(gap: f64, degeneracy: usize) -> Result<Self> {
        if !(gap > 0.0) || !gap.is_finite() {
            return Err(Error::InvalidParameter(format!("ideal probe gap must be positive, got {gap}")));
        }
        if degeneracy == 0 {
            return Err(Error::InvalidParameter("ideal probe degeneracy must be at least 1".into()));
        }
        Ok(IdealProbe { gap, degeneracy: degeneracy as f64 })
    }
}

/// `F = x⁴ eˣ D / (E² (D + eˣ)²)` with `x = E/T`.
pub fn ideal_qfi(probe: &IdealProbe, temperature: f64) -> f64 {
    let x = probe.gap / temperature;
    let d = probe.degeneracy;
    let em = (-x).exp();
    // same expression divided through by e^{2x}
    x.powi(4) * d * em / (probe.gap * probe.gap * (d * em + 1.0).powi(2))
}

/// Root `x > 4` of `x = ln(D(x + 4)/(x - 4))`, by bisection to `1e-13`.
pub fn solve_stationarity(degeneracy: f64) -> f64 {
    let f = |x: f64| x - (degeneracy * (x + 4.0) / (x - 4.0)).ln();
    let mut lo = 4.0 + 1e-9;
    let mut hi = degeneracy.ln() + 30.0;
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `(T*, F*)` of the probe.
pub fn peak_value(probe: &IdealProbe) -> (f64, f64) {
    let t = probe.gap / solve_stationarity(probe.degeneracy);
    (t, ideal_qfi(probe, t))
}

/// Exact peak value against the large-`D` estimate `(ln D)⁴ / (4E²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakScaling {
    pub exact: f64,
    pub approx: f64,
    pub ratio: f64,
}

pub fn peak_scaling_check(degeneracy: usize, gap: f64) -> Result<PeakScaling> {
    let probe = IdealProbe::new(gap, degeneracy)?;
    let (_, exact) = peak_value(&probe);
    let approx = (degeneracy as f64).ln().powi(4) / (4.0 * gap * gap);
    Ok(PeakScaling { exact, approx, ratio: exact / approx })
}

/// Gap that places the ideal peak at `t_star`: `E = x*(D) T*`.
pub fn effective_gap(t_star: f64, degeneracy: f64) -> f64 {
    solve_stationarity(degeneracy) * t_star
}

/// Full width at half maximum of the peak in `log10 T`.
pub fn fwhm_log10(probe: &IdealProbe) -> f64 {
    let (t_star, f_star) = peak_value(probe);
    let half = 0.5 * f_star;
    let g = |lt: f64| ideal_qfi(probe, 10f64.powf(lt)) - half;
    let c = t_star.log10();
    let edge = |dir: f64| {
        let (mut a, mut b) = (c, c + dir * 4.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if g(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    edge(1.0) - edge(-1.0)
}

/// One row of the ideal-probe table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealRow {
    pub degeneracy: usize,
    pub x_star: f64,
    pub t_star: f64,
    pub f_star: f64,
    pub gap: f64,
}

pub fn ideal_table(degeneracies: &[usize], gap: f64) -> Result<Vec<IdealRow>> {
    degeneracies
        .iter()
        .map(|&d| {
            let probe = IdealProbe::new(gap, d)?;
            let (t_star, f_star) = peak_value(&probe);
            Ok(IdealRow { degeneracy: d, x_star: solve_stationarity(d as f64), t_star, f_star, gap })
        })
        .collect()
}

/// CSV with columns `D,x_star,T_star,F_star,E_eff`.
pub fn write_ideal_csv<W: Write>(rows: &[IdealRow], mut out: W) -> Result<()> {
    writeln!(out, "D,x_star,T_star,F_star,E_eff")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.degeneracy, fmt_num(r.x_star), fmt_num(r.t_star), fmt_num(r.f_star), fmt_num(r.gap))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermo::tls_qfi;

    #[test]
    fn single_excited_state_is_two_level() {
        let p = IdealProbe::new(0.7, 1).unwrap();
        for &t in &[0.01, 0.1, 1.0, 10.0] {
            let a = ideal_qfi(&p, t);
            let b = tls_qfi(0.7, t);
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
    }

    #[test]
    fn limits_vanish() {
        let p = IdealProbe::new(1.0, 10).unwrap();
        assert!(ideal_qfi(&p, 1e-3) < 1e-100);
        assert!(ideal_qfi(&p, 1e4) < 1e-10);
    }

    #[test]
    fn stationarity_roots() {
        let x1 = solve_stationarity(1.0);
        assert!((x1 - 4.13068).abs() < 1e-4);
        for d in [1.0, 7.0, 1000.0, 1e6] {
            let x = solve_stationarity(d);
            assert!((x - (d * (x + 4.0) / (x - 4.0)).ln()).abs() <= 1e-10);
        }
        let x = solve_stationarity(1000.0);
        assert!((x - 8.01).abs() < 0.05, "{x}");
        let r = solve_stationarity(1e6) / 1e6f64.ln();
        assert!((1.0..=1.4).contains(&r));
    }

    #[test]
    fn peak_grows_with_degeneracy() {
        let mut last = 0.0;
        for d in [1, 10, 100, 1000, 10000] {
            let (_, f) = peak_value(&IdealProbe::new(1.0, d).unwrap());
            assert!(f > last);
            last = f;
        }
        let (t, f) = peak_value(&IdealProbe::new(1.0, 1).unwrap());
        assert!((f * t * t - 0.265622).abs() < 1e-5);
        assert!((t - 1.0 / 4.13068).abs() < 1e-5);
    }

    #[test]
    fn effective_gap_examples() {
        assert!((effective_gap(1.0, 1.0) - 4.13068).abs() < 1e-4);
        assert!((effective_gap(0.2, 50.0) * 2.0 - effective_gap(0.4, 50.0)).abs() < 1e-14);
    }

    #[test]
    fn width_narrows_with_degeneracy() {
        let w1 = fwhm_log10(&IdealProbe::new(1.0, 1).unwrap());
        let w2 = fwhm_log10(&IdealProbe::new(1.0, 1000).unwrap());
        assert!(w2 < w1);
    }

    #[test]
    fn invalid_probes() {
        assert!(IdealProbe::new(0.0, 1).is_err());
        assert!(IdealProbe::new(1.0, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = ideal_table(&[1, 50], 1.0).unwrap();
        let mut buf = Vec::new();
        write_ideal_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("D,x_star,T_star,F_star,E_eff\n1,"));
        assert_eq!(text.lines().count(), 3);
    }
}
