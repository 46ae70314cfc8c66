use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mqrm::adiabatic::{aa_spectrum, AdiabaticSpectrum};
use mqrm::ensemble::{
    laguerre_wishart_modes, peak_ratio_scan, run_ensemble, sample_wishart_ratios, write_peak_ratio_csv, EnsembleSpec,
    RatioHistogram,
};
use mqrm::exact::{converged_cutoff, exact_qfi, exact_spectrum_refined, ExactSettings, ExactSpectrum};
use mqrm::ideal::{ideal_qfi, ideal_table, write_ideal_csv, IdealProbe};
use mqrm::model::DEFAULT_RANK_TOL;
use mqrm::output::fmt_num;
use mqrm::thermo::tls_peak_trace;
use mqrm::{svd_decompose, qfi_curve, PrecisionMode, QfiSettings};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{model_spec, ExactConfig, IdealConfig, PeakRatioConfig, QfiConfig, SpectrumConfig, WishartConfig};
use crate::CliError;

/// Files written and extra facts recorded by one command.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub outputs: Vec<String>,
    pub extra: serde_json::Map<String, Value>,
}

pub struct OutDir {
    root: PathBuf,
    record: RunRecord,
}

impl OutDir {
    pub fn new(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf(), record: RunRecord::default() })
    }

    pub fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> mqrm::Result<()>) -> Result<(), CliError> {
        let path = self.root.join(name);
        let file = File::create(&path).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.record.outputs.push(name.to_string());
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.record.extra.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn finish(self) -> RunRecord {
        self.record
    }
}

fn exact_csv(spec: &ExactSpectrum, w: &mut dyn Write) -> mqrm::Result<()> {
    spec.write_csv(w)
}

fn aa_csv(spec: &AdiabaticSpectrum, limit: Option<usize>, w: &mut dyn Write) -> mqrm::Result<()> {
    match limit {
        Some(n) => {
            let mut s = spec.clone();
            let mut seen = 0;
            s.levels.retain(|l| {
                let keep = seen < n;
                seen += l.multiplicity;
                keep
            });
            s.write_csv(w)
        }
        None => spec.write_csv(w),
    }
}

pub fn spectrum(cfg: &SpectrumConfig, model: &mqrm::model::ModelFile, out: &mut OutDir) -> Result<(), CliError> {
    if cfg.g_values.is_empty() {
        return Err(CliError::Config("the coupling sweep is empty".into()));
    }
    if cfg.g_values.iter().any(|g| !(*g >= 0.0)) {
        return Err(CliError::Config("sweep couplings must be non-negative".into()));
    }
    let base = model_spec(model)?;
    let mut cutoffs = Vec::new();
    for (i, &g) in cfg.g_values.iter().enumerate() {
        let m = base.with_largest_singular_value(g);
        let d = svd_decompose(&m, DEFAULT_RANK_TOL)?;
        let aa = aa_spectrum(&d, &m, cfg.theta);
        let n_max = match cfg.n_max {
            Some(n) => n,
            None => converged_cutoff(&m)?,
        };
        cutoffs.push(n_max);
        let mut ex = exact_spectrum_refined(&m, n_max, 0)?;
        if let Some(n) = cfg.levels {
            ex.energies.truncate(n);
        }
        out.write(&format!("aa_{i:03}.csv"), |w| aa_csv(&aa, cfg.levels, w))?;
        out.write(&format!("exact_{i:03}.csv"), |w| exact_csv(&ex, w))?;
    }
    out.write("sweep.csv", |w| {
        writeln!(w, "point,g,n_max")?;
        for (i, (g, n)) in cfg.g_values.iter().zip(&cutoffs).enumerate() {
            writeln!(w, "{i},{},{n}", fmt_num(*g))?;
        }
        Ok(())
    })?;
    out.note("exact_n_max", &cutoffs);
    Ok(())
}

/// Append columns to a CSV body produced by a module writer.
fn with_columns(base: &[u8], names: &[&str], columns: &[Vec<f64>]) -> String {
    let text = String::from_utf8_lossy(base);
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        out.push_str(line);
        if i == 0 {
            for n in names {
                out.push(',');
                out.push_str(n);
            }
        } else {
            for c in columns {
                out.push(',');
                out.push_str(&fmt_num(c[i - 1]));
            }
        }
        out.push('\n');
    }
    out
}

pub fn qfi(cfg: &QfiConfig, model: &mqrm::model::ModelFile, out: &mut OutDir) -> Result<(), CliError> {
    let mut m = model_spec(model)?;
    if let Some(g) = cfg.g {
        m = m.with_largest_singular_value(g);
    }
    let temps = cfg.grid.temperatures()?;
    let d = svd_decompose(&m, DEFAULT_RANK_TOL)?;
    let settings = QfiSettings { theta: cfg.theta, precision: cfg.precision, energy_offset: 0.0 };
    let curve = qfi_curve(&d, &m, &temps, &settings)?;
    let mut names = Vec::new();
    let mut columns = Vec::new();
    if cfg.with_exact {
        let es = ExactSettings { n_max: cfg.exact_n_max, precision: cfg.precision, ..Default::default() };
        let (ex, n_max) = exact_qfi(&m, &temps, &es)?;
        out.note("exact_n_max", n_max);
        names.push("F_exact");
        columns.push(ex.total);
    }
    if cfg.tls_trace {
        names.push("F_tls_trace");
        columns.push(temps.iter().map(|&t| tls_peak_trace(t)).collect());
    }
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    let body = with_columns(&buf, &names, &columns);
    out.write("qfi.csv", |w| Ok(w.write_all(body.as_bytes())?))?;
    out.note("extended_points", curve.extended_points.iter().filter(|&&x| x).count());
    out.note("peaks", curve.peaks(mqrm::thermo::Component::Total, 3));
    Ok(())
}

pub fn exact(cfg: &ExactConfig, model: &mqrm::model::ModelFile, out: &mut OutDir) -> Result<(), CliError> {
    let mut m = model_spec(model)?;
    if let Some(g) = cfg.g {
        m = m.with_largest_singular_value(g);
    }
    let n_max = match cfg.n_max {
        Some(n) => n,
        None => converged_cutoff(&m)?,
    };
    let spec = exact_spectrum_refined(&m, n_max, 0)?;
    out.write("exact_spectrum.csv", |w| exact_csv(&spec, w))?;
    out.note("n_max", n_max);
    if let Some(grid) = &cfg.grid {
        let temps = grid.temperatures()?;
        let es = ExactSettings { n_max: Some(n_max), precision: cfg.precision, ..Default::default() };
        let (curve, _) = exact_qfi(&m, &temps, &es)?;
        out.write("exact_qfi.csv", |w| curve.write_csv(w))?;
    }
    Ok(())
}

pub fn ideal(cfg: &IdealConfig, out: &mut OutDir) -> Result<(), CliError> {
    if cfg.degeneracies.is_empty() {
        return Err(CliError::Config("no degeneracies given".into()));
    }
    let rows = ideal_table(&cfg.degeneracies, cfg.gap)?;
    out.write("ideal.csv", |w| write_ideal_csv(&rows, w))?;
    let temps = cfg.grid.temperatures()?;
    let probes = cfg.degeneracies.iter().map(|&d| IdealProbe::new(cfg.gap, d)).collect::<mqrm::Result<Vec<_>>>()?;
    out.write("ideal_curves.csv", |w| {
        writeln!(w, "T,D,F")?;
        for p in &probes {
            for &t in &temps {
                writeln!(w, "{},{},{}", fmt_num(t), p.degeneracy, fmt_num(ideal_qfi(p, t)))?;
            }
        }
        Ok(())
    })
}

pub fn wishart(cfg: &WishartConfig, out: &mut OutDir) -> Result<(), CliError> {
    let modes = laguerre_wishart_modes(cfg.m, cfg.n, cfg.beta)?;
    if cfg.trials > 0 && cfg.beta != 2.0 {
        return Err(CliError::Config("Monte Carlo sampling is available for the complex ensemble (beta = 2) only".into()));
    }
    if !(cfg.bin_width > 0.0 && cfg.bin_width <= 1.0) {
        return Err(CliError::Config(format!("bin width must lie in (0, 1], got {}", cfg.bin_width)));
    }
    let residuals = modes.stieltjes_residuals();
    out.write("wishart_modes.csv", |w| {
        writeln!(w, "k,x,ratio,stieltjes_residual")?;
        let mut r = residuals.iter();
        for (k, (&x, ratio)) in modes.x.iter().zip(modes.ratios()).enumerate() {
            let res = if x > 0.0 { r.next().map(|v| fmt_num(*v)).unwrap_or_default() } else { String::new() };
            writeln!(w, "{},{},{},{}", k + 1, fmt_num(x), fmt_num(ratio), res)?;
        }
        Ok(())
    })?;
    out.note("alpha", modes.alpha);
    if cfg.trials > 0 {
        let hist = RatioHistogram::new(&sample_wishart_ratios(cfg.m, cfg.n, cfg.trials, cfg.seed), cfg.bin_width);
        out.write("wishart_histogram.csv", |w| hist.write_csv(w))?;
        let predicted: Vec<usize> = modes.ratios().iter().map(|&r| hist.bin_index(r)).collect();
        out.note("histogram_peak_bins", hist.peak_bins());
        out.note("modal_bins", predicted);
    }
    Ok(())
}

pub fn ensemble(spec: &EnsembleSpec, out: &mut OutDir) -> Result<(), CliError> {
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let r = run_ensemble(spec)?;
    out.write("heatmap.csv", |w| r.heatmap.write_csv(w))?;
    out.write("heatmap_edges.csv", |w| {
        writeln!(w, "axis,index,edge")?;
        for (i, e) in r.t_edges.iter().enumerate() {
            writeln!(w, "log10_T,{i},{}", fmt_num(*e))?;
        }
        for (i, e) in r.f_edges.iter().enumerate() {
            writeln!(w, "log10_F,{i},{}", fmt_num(*e))?;
        }
        Ok(())
    })?;
    out.write("typical_curve.csv", |w| r.typical_curve.write_csv(w))?;
    out.write("peaks.csv", |w| r.write_peaks_csv(w))?;
    out.note("exclusions", &r.exclusions);
    out.note("excluded", r.exclusions.len());
    out.note("calibration", r.calibration);
    out.note("wishart_edge", r.wishart_edge);
    Ok(())
}

pub fn peak_ratio(cfg: &PeakRatioConfig, out: &mut OutDir) -> Result<(), CliError> {
    if cfg.couplings.is_empty() || cfg.dark_counts.is_empty() {
        return Err(CliError::Config("peak-ratio needs at least one coupling and one dark count".into()));
    }
    let temps = cfg.grid.temperatures()?;
    let mut rows = Vec::new();
    for &g in &cfg.couplings {
        rows.extend(peak_ratio_scan(cfg.d_g, &cfg.dark_counts, g, cfg.omega_a, &temps)?);
    }
    let flagged: Vec<Value> =
        rows.iter().filter(|r| r.ratio.is_none()).map(|r| json!({"g": r.g, "dark": r.dark})).collect();
    out.write("peak_ratio.csv", |w| write_peak_ratio_csv(&rows, w))?;
    out.note("flagged_rows", flagged);
    Ok(())
}

pub fn precision_override(current: PrecisionMode, flag: Option<PrecisionMode>) -> PrecisionMode {
    flag.unwrap_or(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appended_columns_line_up() {
        let body = with_columns(b"T,F\n1,2\n3,4\n", &["X"], &[vec![0.5, 0.25]]);
        assert_eq!(body, "T,F,X\n1,2,5.0000000000000000e-1\n3,4,2.5000000000000000e-1\n");
        assert_eq!(with_columns(b"T\n1\n", &[], &[]), "T\n1\n");
    }

    #[test]
    fn precision_flag_overrides_config() {
        assert_eq!(precision_override(PrecisionMode::Standard, Some(PrecisionMode::Extended)), PrecisionMode::Extended);
        assert_eq!(precision_override(PrecisionMode::Extended, None), PrecisionMode::Extended);
    }
}
