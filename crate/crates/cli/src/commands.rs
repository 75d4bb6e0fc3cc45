//! The six CLI verbs. Each returns the artifacts it would write.

use crate::output::{to_json, Artifact, Format, Provenance};
use crate::{CliError, Scenario};
use polent_core::algebra::DensityMatrixJson;
use polent_core::detection::{
    expected_rates_with, projection, read_records, sample_counts, write_records, CountRecord, ExpectedRates, RateOptions,
};
use polent_core::device::{biphoton_weights, fringe_scan, output_state, BiphotonWeights, DeviceError, FringeFit, Wavelengths};
use polent_core::fwm::{conversion_spectrum, Mode};
use polent_core::metrics::MetricReport;
use polent_core::tomography::{error_bars, mle_reconstruct, subtract_accidentals, BootstrapReport, FitReport};
use polent_core::{ratio_to_db, DensityMatrix4};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

/// Emitted two-photon state, or `None` when the pump generates no pairs.
pub fn device_state(s: &Scenario) -> Result<Option<DensityMatrix4>, CliError> {
    match output_state(&s.layout, &s.pump, &s.filter) {
        Ok(rho) => Ok(Some(rho)),
        Err(DeviceError::Degenerate) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
pub struct StateOutput {
    pub provenance: Provenance,
    pub scenario: String,
    pub weights: BiphotonWeights,
    pub pairs_per_pulse: f64,
    pub density_matrix: DensityMatrixJson,
    pub metrics: MetricReport,
}

pub fn run_state(s: &Scenario) -> Result<StateOutput, CliError> {
    s.validate()?;
    let rho = device_state(s)?.ok_or(CliError::Model(DeviceError::Degenerate.to_string()))?;
    Ok(StateOutput {
        provenance: Provenance::new(s, "state"),
        scenario: s.name.clone(),
        weights: biphoton_weights(&s.layout, &s.pump, &s.filter),
        pairs_per_pulse: s.pairs_per_pulse(),
        metrics: MetricReport::compute(&rho, &s.target_ket()),
        density_matrix: rho.into(),
    })
}

pub fn cmd_state(s: &Scenario, format: Format) -> Result<Vec<Artifact>, CliError> {
    let out = run_state(s)?;
    Ok(match format {
        Format::Json => vec![Artifact::new("state.json", to_json(&out))],
        Format::Csv => {
            let mut csv = out.provenance.csv_header();
            csv.push_str("quantity,value\n");
            for (name, v) in out.metrics.named_values() {
                let _ = writeln!(csv, "{name},{v}");
            }
            let _ = writeln!(csv, "w_te,{}", out.weights.w_te);
            let _ = writeln!(csv, "w_tm,{}", out.weights.w_tm);
            let _ = writeln!(csv, "phi_rad,{}", out.weights.phi_rad);
            let _ = writeln!(csv, "pairs_per_pulse,{}", out.pairs_per_pulse);
            for (k, [re, im]) in out.density_matrix.data.iter().enumerate() {
                let _ = writeln!(csv, "rho_{}{}_re,{re}", k / 4, k % 4);
                let _ = writeln!(csv, "rho_{}{}_im,{im}", k / 4, k % 4);
            }
            vec![Artifact::new("state.csv", csv)]
        }
    })
}

/// Expected rates for every configured projection setting.
pub fn setting_rates(s: &Scenario) -> Result<Vec<(String, ExpectedRates)>, CliError> {
    let set = s.projector_set()?;
    let state = device_state(s)?;
    let pairs = if state.is_some() { s.pairs_per_pulse() } else { 0.0 };
    let rho = state.unwrap_or_else(DensityMatrix4::maximally_mixed);
    let opts = RateOptions { multi_pair: s.source.multi_pair };
    Ok(set
        .settings()
        .iter()
        .map(|setting| {
            let proj = projection(&rho, setting);
            let rates = expected_rates_with(
                pairs,
                &proj,
                &s.channels.signal,
                &s.channels.idler,
                &s.detectors.signal,
                &s.detectors.idler,
                opts,
            );
            (setting.label.clone(), rates)
        })
        .collect())
}

/// Sampled count records, one per setting, `duration_s` each.
pub fn simulate_counts(s: &Scenario) -> Result<Vec<CountRecord>, CliError> {
    s.validate()?;
    let seed = s.require_seed()?;
    setting_rates(s)?
        .iter()
        .map(|(label, rates)| sample_counts(rates, s.duration_s, seed, label).map_err(CliError::from))
        .collect()
}

pub fn records_csv(records: &[CountRecord], provenance: &Provenance) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write_records(&mut buf, &provenance.comment_lines(), records)?;
    String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
}

pub fn parse_records(text: &str) -> Result<Vec<CountRecord>, CliError> {
    let records = read_records(text.as_bytes())?;
    if records.is_empty() {
        return Err(CliError::Io("count CSV holds no records".into()));
    }
    Ok(records)
}

#[derive(Serialize)]
struct CountsOutput<'a> {
    provenance: Provenance,
    records: &'a [CountRecord],
}

pub fn cmd_counts(s: &Scenario, format: Format) -> Result<Vec<Artifact>, CliError> {
    let records = simulate_counts(s)?;
    let provenance = Provenance::new(s, "counts");
    Ok(match format {
        Format::Csv => vec![Artifact::new("counts.csv", records_csv(&records, &provenance)?)],
        Format::Json => vec![Artifact::new("counts.json", to_json(&CountsOutput { provenance, records: &records }))],
    })
}

#[derive(Serialize)]
pub struct TomoOutput {
    pub provenance: Provenance,
    pub scenario: String,
    pub subtract_accidentals: bool,
    pub fit: FitReport,
    pub reconstructed: DensityMatrixJson,
    pub metrics: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_bars: Option<BootstrapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_state: Option<DensityMatrixJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_metrics: Option<MetricReport>,
    pub records: Vec<CountRecord>,
}

/// MLE reconstruction of `records`, with bootstrap error bars when the
/// scenario asks for replicas.
pub fn run_tomo(s: &Scenario, records: Vec<CountRecord>, subtract: bool) -> Result<TomoOutput, CliError> {
    s.validate()?;
    let set = s.projector_set()?;
    let (used, clipped) = if subtract {
        let sub = subtract_accidentals(&records);
        let n = sub.clipped_count();
        (sub.records, n)
    } else {
        (records.clone(), 0)
    };
    let mut result = mle_reconstruct(&used, &set, &s.tomography.mle)?;
    result.report.clipped = clipped;
    let target = s.target_ket();
    let error_bars = if s.tomography.bootstrap_replicas > 0 {
        let seed = s.require_seed()?;
        Some(error_bars(&used, &set, &s.tomography.mle, s.tomography.bootstrap_replicas, seed, &target)?)
    } else {
        None
    };
    let truth = device_state(s)?;
    Ok(TomoOutput {
        provenance: Provenance::new(s, if subtract { "tomo --subtract-accidentals" } else { "tomo" }),
        scenario: s.name.clone(),
        subtract_accidentals: subtract,
        metrics: MetricReport::compute(&result.rho, &target),
        reconstructed: result.rho.into(),
        fit: result.report,
        error_bars,
        true_metrics: truth.as_ref().map(|t| MetricReport::compute(t, &target)),
        true_state: truth.map(Into::into),
        records,
    })
}

pub fn cmd_tomo(s: &Scenario, records: Vec<CountRecord>, subtract: bool, format: Format) -> Result<Vec<Artifact>, CliError> {
    let out = run_tomo(s, records, subtract)?;
    Ok(match format {
        Format::Json => vec![Artifact::new("tomo.json", to_json(&out))],
        Format::Csv => {
            let mut csv = out.provenance.csv_header();
            csv.push_str("quantity,value,std\n");
            let spread = |name: &str| {
                out.error_bars.as_ref().and_then(|b| match name {
                    "fully_entangled_fraction" => Some(b.fully_entangled_fraction.std),
                    "fidelity_to_target" => Some(b.fidelity_to_target.std),
                    "concurrence" => Some(b.concurrence.std),
                    "purity" => Some(b.purity.std),
                    _ => None,
                })
            };
            for (name, v) in out.metrics.named_values() {
                let std = spread(name).map(|x| x.to_string()).unwrap_or_default();
                let _ = writeln!(csv, "{name},{v},{std}");
            }
            let _ = writeln!(csv, "loglik,{},", out.fit.loglik);
            let _ = writeln!(csv, "iterations,{},", out.fit.iterations);
            let _ = writeln!(csv, "clipped,{},", out.fit.clipped);
            let _ = writeln!(csv, "condition_number,{},", out.fit.condition_number);
            for (k, [re, im]) in out.reconstructed.data.iter().enumerate() {
                let _ = writeln!(csv, "rho_{}{}_re,{re},", k / 4, k % 4);
                let _ = writeln!(csv, "rho_{}{}_im,{im},", k / 4, k % 4);
            }
            vec![Artifact::new("tomo.csv", csv)]
        }
    })
}

pub fn cmd_fwm(s: &Scenario) -> Result<Vec<Artifact>, CliError> {
    s.validate()?;
    let det = s.detunings_nm();
    let te = conversion_spectrum(&s.fwm.waveguide, s.pump.wavelength_nm, s.fwm.peak_power_mw, &det, Mode::Te);
    let tm = conversion_spectrum(&s.fwm.waveguide, s.pump.wavelength_nm, s.fwm.peak_power_mw, &det, Mode::Tm);
    let te_peak = te.iter().map(|p| p.eta).fold(0.0, f64::max);
    let provenance = Provenance::new(s, "fwm");
    let render = |points: &[polent_core::fwm::SpectrumPoint]| {
        let mut csv = provenance.csv_header();
        csv.push_str("detuning_nm,eta,eta_db_rel_te_peak\n");
        for p in points {
            let _ = writeln!(csv, "{},{},{}", p.detuning_nm, p.eta, ratio_to_db(p.eta / te_peak));
        }
        csv
    };
    Ok(vec![Artifact::new("fwm_te.csv", render(&te)), Artifact::new("fwm_tm.csv", render(&tm))])
}

#[derive(Serialize)]
pub struct FringeOutput {
    pub provenance: Provenance,
    pub wavelength_nm: f64,
    pub fit: FringeFit,
}

pub fn run_fringe(s: &Scenario, wavelength_nm: Option<f64>) -> Result<(FringeOutput, Vec<(f64, f64)>), CliError> {
    s.validate()?;
    let lambda = wavelength_nm.unwrap_or(s.pump.wavelength_nm);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CliError::Config(vec![format!("wavelength_nm must be positive, got {lambda}")]));
    }
    let w = Wavelengths::new(&s.pump, &s.filter);
    let scan = fringe_scan(&s.layout, &w, &s.fringe.input, &s.fringe_angles(), &s.fringe_probe(lambda))?;
    let points = scan.angles_deg.iter().copied().zip(scan.transmittance.iter().copied()).collect();
    Ok((FringeOutput { provenance: Provenance::new(s, "fringe"), wavelength_nm: lambda, fit: scan.fit }, points))
}

pub fn cmd_fringe(s: &Scenario, wavelength_nm: Option<f64>) -> Result<Vec<Artifact>, CliError> {
    let (out, points) = run_fringe(s, wavelength_nm)?;
    let mut csv = out.provenance.csv_header();
    let _ = writeln!(csv, "# wavelength_nm = {}", out.wavelength_nm);
    let _ = writeln!(csv, "# theta_out_deg = {}", out.fit.theta_out_deg);
    let _ = writeln!(csv, "# visibility = {}", out.fit.visibility);
    csv.push_str("analyzer_deg,transmittance\n");
    for (a, t) in points {
        let _ = writeln!(csv, "{a},{t}");
    }
    Ok(vec![Artifact::new("fringe.csv", csv), Artifact::new("fringe_fit.json", to_json(&out))])
}

/// Device-state metrics at each value of a numeric scenario parameter.
pub fn run_sweep(s: &Scenario, parameter: &str, values: &[f64]) -> Result<Vec<(f64, MetricReport)>, CliError> {
    s.validate()?;
    if values.is_empty() {
        return Err(CliError::Config(vec![format!("sweep '{parameter}': empty value list")]));
    }
    values
        .par_iter()
        .map(|&v| {
            let point = s.with_parameter(parameter, v)?;
            let rho = device_state(&point)?
                .ok_or_else(|| CliError::Model(format!("sweep '{parameter}' = {v}: {}", DeviceError::Degenerate)))?;
            Ok((v, MetricReport::compute(&rho, &point.target_ket())))
        })
        .collect()
}

pub fn cmd_sweep(s: &Scenario, parameter: Option<&str>, values: Option<&[f64]>) -> Result<Vec<Artifact>, CliError> {
    let parameter = parameter
        .map(str::to_string)
        .or_else(|| s.sweep.as_ref().map(|sw| sw.parameter.clone()))
        .ok_or_else(|| CliError::Config(vec!["sweep needs --param or a [sweep] table".into()]))?;
    let values = values
        .map(<[f64]>::to_vec)
        .or_else(|| s.sweep.as_ref().map(|sw| sw.values.clone()))
        .ok_or_else(|| CliError::Config(vec!["sweep needs --values or a [sweep] table".into()]))?;
    let rows = run_sweep(s, &parameter, &values)?;
    let mut csv = Provenance::new(s, "sweep").csv_header();
    csv.push_str("parameter,value,metric,metric_value\n");
    for (v, report) in rows {
        for (name, m) in report.named_values() {
            let _ = writeln!(csv, "{parameter},{v},{name},{m}");
        }
    }
    Ok(vec![Artifact::new("sweep.csv", csv)])
}
