//! The chip as an ordered chain of polarization elements:
//! input SSC → SWW1 → SPR → SWW2 → output SSC.
//!
//! Pairs are generated only by the TE pump component of each silicon-wire
//! waveguide (SWW). Pair amplitudes scale linearly with the local TE pump
//! power, so pair rates scale quadratically. Pairs from SWW1 are turned by
//! the rotator (SPR) and attenuated through SWW2; pairs from SWW2 are
//! generated by the pump component the rotator turned into TE. For a
//! diagonal pump and identical waveguides both branches carry the same
//! factor (μ_TM μ_SPR)² and the output stays balanced.
//!
//! The branch amplitudes add coherently with relative phase ϕ. Each photon
//! then passes a phase-damping channel (spectral averaging of birefringent
//! beating across its filter window) and the output SSC rotation.

use crate::algebra::{
    rotator_matrix, tensor, tensor_ket, AlgebraError, DensityMatrix4, JonesVector, Operator2, TwoPhotonKet, C64,
};
use crate::{bandwidth_nm_to_hz, db_to_transmittance};
use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("no pairs are generated (zero TE pump power in both waveguides)")]
    Degenerate,
    #[error("fringe scan needs at least 2 analyzer angles, got {0}")]
    TooFewAngles(usize),
    #[error("fringe fit is degenerate (angles do not determine a cos² curve)")]
    FitDegenerate,
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Spot-size converter at a chip facet. Rotations are parasitic polarization
/// rotations at the pump, signal and idler wavelengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SscSpec {
    pub rotation_pump_deg: f64,
    pub rotation_signal_deg: f64,
    pub rotation_idler_deg: f64,
    pub coupling_loss_db: f64,
}

impl SscSpec {
    pub fn ideal() -> Self {
        Self { rotation_pump_deg: 0.0, rotation_signal_deg: 0.0, rotation_idler_deg: 0.0, coupling_loss_db: 0.0 }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (key, v) in [
            ("rotation_pump_deg", self.rotation_pump_deg),
            ("rotation_signal_deg", self.rotation_signal_deg),
            ("rotation_idler_deg", self.rotation_idler_deg),
        ] {
            if !v.is_finite() {
                out.push(format!("{prefix}.{key} must be finite"));
            }
        }
        if !(self.coupling_loss_db >= 0.0 && self.coupling_loss_db.is_finite()) {
            out.push(format!("{prefix}.coupling_loss_db must be >= 0, got {}", self.coupling_loss_db));
        }
        out
    }

    /// Rotation at `lambda_nm`, piecewise-linear through the three
    /// characterized wavelengths and held constant outside them.
    pub fn rotation_deg(&self, lambda_nm: f64, w: &Wavelengths) -> f64 {
        let mut pts = [
            (w.signal_nm, self.rotation_signal_deg),
            (w.pump_nm, self.rotation_pump_deg),
            (w.idler_nm, self.rotation_idler_deg),
        ];
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if lambda_nm <= pts[0].0 {
            return pts[0].1;
        }
        if lambda_nm >= pts[2].0 {
            return pts[2].1;
        }
        for pair in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
            if lambda_nm <= x1 {
                if x1 - x0 <= 0.0 {
                    return y1;
                }
                return y0 + (y1 - y0) * (lambda_nm - x0) / (x1 - x0);
            }
        }
        pts[2].1
    }
}

/// Silicon-wire waveguide section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwwSpec {
    pub length_mm: f64,
    pub alpha_te_db_per_cm: f64,
    pub alpha_tm_db_per_cm: f64,
    pub pmd_ps_per_mm: f64,
    /// TE-mode nonlinear coefficient.
    pub gamma_per_w_m: f64,
}

impl SwwSpec {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.length_mm > 0.0 && self.length_mm.is_finite()) {
            out.push(format!("{prefix}.length_mm must be > 0, got {}", self.length_mm));
        }
        for (key, v) in [
            ("alpha_te_db_per_cm", self.alpha_te_db_per_cm),
            ("alpha_tm_db_per_cm", self.alpha_tm_db_per_cm),
            ("pmd_ps_per_mm", self.pmd_ps_per_mm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("{prefix}.{key} must be >= 0, got {v}"));
            }
        }
        if !(self.gamma_per_w_m > 0.0 && self.gamma_per_w_m.is_finite()) {
            out.push(format!("{prefix}.gamma_per_w_m must be > 0, got {}", self.gamma_per_w_m));
        }
        out
    }

    pub fn transmittance_te(&self) -> f64 {
        db_to_transmittance(self.alpha_te_db_per_cm * self.length_mm * 0.1)
    }

    pub fn transmittance_tm(&self) -> f64 {
        db_to_transmittance(self.alpha_tm_db_per_cm * self.length_mm * 0.1)
    }

    /// Field-amplitude transfer matrix diag(√μ_TE, √μ_TM).
    pub fn amplitude_operator(&self) -> Operator2 {
        Operator2::diagonal(C64::from(self.transmittance_te().sqrt()), C64::from(self.transmittance_tm().sqrt()))
    }

    /// L_eff = (1 − e^{−αL})/α for the TE pump, in metres.
    pub fn effective_length_te_m(&self) -> f64 {
        effective_length_m(self.alpha_te_db_per_cm, self.length_mm)
    }

    /// TE/TM group delay accumulated over the section, ps.
    pub fn pmd_delay_ps(&self) -> f64 {
        self.pmd_ps_per_mm * self.length_mm
    }
}

fn effective_length_m(alpha_db_per_cm: f64, length_mm: f64) -> f64 {
    let l_m = length_mm * 1e-3;
    let alpha_per_m = alpha_db_per_cm * std::f64::consts::LN_10 / 10.0 * 100.0;
    if alpha_per_m * l_m < 1e-12 {
        return l_m;
    }
    (1.0 - (-alpha_per_m * l_m).exp()) / alpha_per_m
}

/// Silicon polarization rotator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SprSpec {
    pub theta_deg_at_pump: f64,
    pub dispersion_deg_per_nm: f64,
    pub insertion_loss_db: f64,
}

impl SprSpec {
    pub fn ideal() -> Self {
        Self { theta_deg_at_pump: 90.0, dispersion_deg_per_nm: 0.0, insertion_loss_db: 0.0 }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !self.theta_deg_at_pump.is_finite() || !self.dispersion_deg_per_nm.is_finite() {
            out.push(format!("{prefix}: rotation parameters must be finite"));
        }
        if !(self.insertion_loss_db >= 0.0 && self.insertion_loss_db.is_finite()) {
            out.push(format!("{prefix}.insertion_loss_db must be >= 0, got {}", self.insertion_loss_db));
        }
        out
    }

    /// θ(λ) = θ(λ_p) + (dθ/dλ)(λ − λ_p).
    pub fn theta_deg(&self, lambda_nm: f64, pump_nm: f64) -> f64 {
        self.theta_deg_at_pump + self.dispersion_deg_per_nm * (lambda_nm - pump_nm)
    }

    pub fn transmittance(&self) -> f64 {
        db_to_transmittance(self.insertion_loss_db)
    }

    pub fn amplitude_operator(&self, lambda_nm: f64, pump_nm: f64) -> Operator2 {
        rotator_matrix(self.theta_deg(lambda_nm, pump_nm)).scaled(self.transmittance().sqrt())
    }
}

/// The full element chain. Without an SPR the two waveguides form one
/// straight reference waveguide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipLayout {
    pub input_ssc: SscSpec,
    pub sww1: SwwSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spr: Option<SprSpec>,
    pub sww2: SwwSpec,
    pub output_ssc: SscSpec,
    /// Length difference SWW1 − SWW2.
    pub delta_l_um: f64,
    /// Phase-mismatch index that converts ΔL into ϕ.
    #[serde(default)]
    pub delta_n_pm: f64,
    /// Explicit ϕ; takes precedence over the ΔL-derived value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_rad: Option<f64>,
    /// Effective TE/TM delay whose averaging over each photon's filter
    /// window dephases that photon. Zero disables dephasing.
    #[serde(default)]
    pub dephasing_delay_ps: f64,
}

impl ChipLayout {
    /// Lossless, rotation-free chain with a perfect 90° rotator.
    pub fn ideal(sww_length_mm: f64, gamma_per_w_m: f64) -> Self {
        let sww = SwwSpec {
            length_mm: sww_length_mm,
            alpha_te_db_per_cm: 0.0,
            alpha_tm_db_per_cm: 0.0,
            pmd_ps_per_mm: 0.0,
            gamma_per_w_m,
        };
        Self {
            input_ssc: SscSpec::ideal(),
            sww1: sww.clone(),
            spr: Some(SprSpec::ideal()),
            sww2: sww,
            output_ssc: SscSpec::ideal(),
            delta_l_um: 0.0,
            delta_n_pm: 0.0,
            phi_rad: None,
            dephasing_delay_ps: 0.0,
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.input_ssc.violations(&format!("{prefix}.input_ssc")));
        out.extend(self.sww1.violations(&format!("{prefix}.sww1")));
        if let Some(spr) = &self.spr {
            out.extend(spr.violations(&format!("{prefix}.spr")));
        }
        out.extend(self.sww2.violations(&format!("{prefix}.sww2")));
        out.extend(self.output_ssc.violations(&format!("{prefix}.output_ssc")));
        if !(self.delta_l_um.abs() < 1000.0) {
            out.push(format!("{prefix}.delta_l_um must satisfy |ΔL| < 1000, got {}", self.delta_l_um));
        }
        if !self.delta_n_pm.is_finite() {
            out.push(format!("{prefix}.delta_n_pm must be finite"));
        }
        if let Some(phi) = self.phi_rad {
            if !phi.is_finite() {
                out.push(format!("{prefix}.phi_rad must be finite"));
            }
        }
        if !(self.dephasing_delay_ps >= 0.0 && self.dephasing_delay_ps.is_finite()) {
            out.push(format!("{prefix}.dephasing_delay_ps must be >= 0, got {}", self.dephasing_delay_ps));
        }
        out
    }

    /// ϕ = 2π Δn_pm ΔL / λ̄ unless overridden.
    pub fn phi_rad(&self, mean_wavelength_nm: f64) -> f64 {
        self.phi_rad
            .unwrap_or_else(|| 2.0 * PI * self.delta_n_pm * self.delta_l_um * 1e3 / mean_wavelength_nm)
    }
}

/// Pump pulse train launched into the first waveguide. `peak_power_mw` is
/// the power coupled into the chip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpField {
    pub wavelength_nm: f64,
    pub peak_power_mw: f64,
    pub pulse_width_ps: f64,
    pub rep_rate_mhz: f64,
    pub polarization: JonesVector,
}

impl PumpField {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (key, v) in [
            ("wavelength_nm", self.wavelength_nm),
            ("pulse_width_ps", self.pulse_width_ps),
            ("rep_rate_mhz", self.rep_rate_mhz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{prefix}.{key} must be > 0, got {v}"));
            }
        }
        // Zero power is allowed: it is the dark-count-only scenario.
        if !(self.peak_power_mw >= 0.0 && self.peak_power_mw.is_finite()) {
            out.push(format!("{prefix}.peak_power_mw must be >= 0, got {}", self.peak_power_mw));
        }
        if !self.polarization.is_unit() {
            out.push(format!("{prefix}.polarization must be unit norm, got {}", self.polarization.norm()));
        }
        out
    }

    /// Transform-limited FWHM bandwidth of a Gaussian pulse, GHz.
    pub fn bandwidth_ghz(&self) -> f64 {
        0.441 / self.pulse_width_ps * 1e3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterShape {
    Rectangular,
    Gaussian,
}

/// WDM filter channels for signal and idler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub signal_center_nm: f64,
    pub idler_center_nm: f64,
    pub bandwidth_nm: f64,
    pub shape: FilterShape,
}

/// Maximum asymmetry of the channel centres about the pump before a
/// warning is raised, nm.
pub const FILTER_SYMMETRY_TOL_NM: f64 = 0.1;

impl FilterSpec {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (key, v) in [
            ("signal_center_nm", self.signal_center_nm),
            ("idler_center_nm", self.idler_center_nm),
            ("bandwidth_nm", self.bandwidth_nm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{prefix}.{key} must be > 0, got {v}"));
            }
        }
        out
    }

    pub fn warnings(&self, pump_nm: f64) -> Vec<String> {
        let asym = ((self.signal_center_nm + self.idler_center_nm) / 2.0 - pump_nm).abs();
        if asym > FILTER_SYMMETRY_TOL_NM + 1e-9 {
            vec![format!("filter centres are {asym:.3} nm off symmetric about the pump")]
        } else {
            Vec::new()
        }
    }

    pub fn mean_center_nm(&self) -> f64 {
        (self.signal_center_nm + self.idler_center_nm) / 2.0
    }

    pub fn bandwidth_hz(&self, center_nm: f64) -> f64 {
        bandwidth_nm_to_hz(self.bandwidth_nm, center_nm)
    }
}

/// Pump, signal and idler wavelengths of one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wavelengths {
    pub pump_nm: f64,
    pub signal_nm: f64,
    pub idler_nm: f64,
}

impl Wavelengths {
    pub fn new(pump: &PumpField, filter: &FilterSpec) -> Self {
        Self { pump_nm: pump.wavelength_nm, signal_nm: filter.signal_center_nm, idler_nm: filter.idler_center_nm }
    }
}

/// Pump state after one element.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PumpStage {
    pub element: &'static str,
    pub power_te_mw: f64,
    pub power_tm_mw: f64,
    /// Field amplitude in √mW.
    #[serde(skip)]
    pub field: JonesVector,
}

impl PumpStage {
    fn new(element: &'static str, field: JonesVector) -> Self {
        Self { element, power_te_mw: field.power_te(), power_tm_mw: field.power_tm(), field }
    }

    pub fn total_mw(&self) -> f64 {
        self.power_te_mw + self.power_tm_mw
    }
}

/// Pump field after each element: input, input_ssc, sww1, spr, sww2,
/// output_ssc. The last stage includes the output coupling loss.
pub fn propagate_pump(layout: &ChipLayout, pump: &PumpField) -> Vec<PumpStage> {
    let lp = pump.wavelength_nm;
    let launched = JonesVector(pump.polarization.0 * C64::from(pump.peak_power_mw.sqrt()));
    let mut stages = vec![PumpStage::new("input", launched)];

    let after_ssc = rotator_matrix(layout.input_ssc.rotation_pump_deg).apply(&launched);
    stages.push(PumpStage::new("input_ssc", after_ssc));

    let after_sww1 = layout.sww1.amplitude_operator().apply(&after_ssc);
    stages.push(PumpStage::new("sww1", after_sww1));

    let after_spr = match &layout.spr {
        Some(spr) => spr.amplitude_operator(lp, lp).apply(&after_sww1),
        None => after_sww1,
    };
    stages.push(PumpStage::new("spr", after_spr));

    let after_sww2 = layout.sww2.amplitude_operator().apply(&after_spr);
    stages.push(PumpStage::new("sww2", after_sww2));

    let out_coupling = db_to_transmittance(layout.output_ssc.coupling_loss_db).sqrt();
    let after_out = rotator_matrix(layout.output_ssc.rotation_pump_deg).scaled(out_coupling).apply(&after_sww2);
    stages.push(PumpStage::new("output_ssc", after_out));
    stages
}

/// Unnormalized two-photon amplitudes of the two generation branches at the
/// SWW2 output, in units of γ·P·L_eff (dimensionless).
#[derive(Clone, Debug)]
struct Emission {
    sww1_branch: Vector4<C64>,
    sww2_branch: Vector4<C64>,
    phi_rad: f64,
}

impl Emission {
    fn total(&self) -> Vector4<C64> {
        self.sww1_branch + self.sww2_branch
    }
}

fn emission(layout: &ChipLayout, pump: &PumpField, w: &Wavelengths) -> Emission {
    let stages = propagate_pump(layout, pump);
    let te_into_sww1_w = stages[1].power_te_mw * 1e-3;
    let te_into_sww2_w = stages[3].power_te_mw * 1e-3;

    let a1 = layout.sww1.gamma_per_w_m * te_into_sww1_w * layout.sww1.effective_length_te_m();
    let a2 = layout.sww2.gamma_per_w_m * te_into_sww2_w * layout.sww2.effective_length_te_m();

    let te = JonesVector::h();
    let sww2_loss = layout.sww2.amplitude_operator();
    let mean_nm = (w.signal_nm + w.idler_nm) / 2.0;
    let (signal_op, idler_op, phi) = match &layout.spr {
        Some(spr) => (
            spr.amplitude_operator(w.signal_nm, w.pump_nm).compose(&sww2_loss),
            spr.amplitude_operator(w.idler_nm, w.pump_nm).compose(&sww2_loss),
            layout.phi_rad(mean_nm),
        ),
        // A straight waveguide: both halves emit phase-matched TE pairs.
        None => (sww2_loss, sww2_loss, 0.0),
    };
    let branch1 = tensor_ket(&signal_op.apply(&te), &idler_op.apply(&te)) * C64::from_polar(a1, -phi);
    let branch2 = tensor_ket(&te, &te) * C64::from(a2);
    Emission { sww1_branch: branch1, sww2_branch: branch2, phi_rad: phi }
}

/// Relative pair weights of the two generation branches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BiphotonWeights {
    /// Pairs generated in SWW2 (emitted as TE,TE), normalized.
    pub w_te: f64,
    /// Pairs generated in SWW1 that survive the SPR and SWW2, normalized.
    pub w_tm: f64,
    pub phi_rad: f64,
    /// Unnormalized sum of both branch weights, in (γ P L_eff)² units.
    pub total: f64,
    pub degenerate: bool,
}

pub fn biphoton_weights(layout: &ChipLayout, pump: &PumpField, filter: &FilterSpec) -> BiphotonWeights {
    let e = emission(layout, pump, &Wavelengths::new(pump, filter));
    let tm = e.sww1_branch.norm_squared();
    let te = e.sww2_branch.norm_squared();
    let total = tm + te;
    if !(total > 0.0) {
        return BiphotonWeights { w_te: 0.0, w_tm: 0.0, phi_rad: e.phi_rad, total: 0.0, degenerate: true };
    }
    BiphotonWeights { w_te: te / total, w_tm: tm / total, phi_rad: e.phi_rad, total, degenerate: false }
}

/// Pairs per pulse emitted at the chip end for a normalized pair-creation
/// efficiency (pairs/pulse/GHz/W²/cm²) referenced to SWW1's γ.
pub fn emitted_pairs_per_pulse(layout: &ChipLayout, pump: &PumpField, filter: &FilterSpec, normalized_eff: f64) -> f64 {
    let e = emission(layout, pump, &Wavelengths::new(pump, filter));
    let gamma = layout.sww1.gamma_per_w_m;
    // (γ P L[m])² → (P L[cm])².
    let w2_cm2 = e.total().norm_squared() * 1e4 / (gamma * gamma);
    let bandwidth_ghz = filter.bandwidth_hz(filter.mean_center_nm()) * 1e-9;
    normalized_eff * bandwidth_ghz * w2_cm2
}

/// Coherence retained after averaging e^{i2πfτ} over a filter window of
/// bandwidth `bandwidth_hz` (FWHM for the Gaussian shape).
pub fn dephasing_for_delay(delay_ps: f64, bandwidth_hz: f64, shape: FilterShape) -> f64 {
    let x = bandwidth_hz * delay_ps * 1e-12;
    match shape {
        FilterShape::Rectangular => {
            let arg = PI * x;
            if arg.abs() < 1e-8 {
                1.0
            } else {
                (arg.sin() / arg).abs()
            }
        }
        FilterShape::Gaussian => {
            let sigma = 1.0 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
            (-2.0 * PI * PI * sigma * sigma * x * x).exp()
        }
    }
}

/// Dephasing factor for a PMD delay `pmd × length` averaged over the filter
/// window (bandwidth evaluated at the mean channel wavelength).
pub fn dephasing_factor(pmd_ps_per_mm: f64, length_mm: f64, filter: &FilterSpec) -> f64 {
    dephasing_for_delay(pmd_ps_per_mm * length_mm, filter.bandwidth_hz(filter.mean_center_nm()), filter.shape)
}

/// Applies independent phase damping to each photon: element (j, k) is
/// scaled by `d_s` if the signal polarization differs and by `d_i` if the
/// idler polarization differs.
pub fn dephase_photons(m: &Matrix4<C64>, d_signal: f64, d_idler: f64) -> Matrix4<C64> {
    Matrix4::from_fn(|j, k| {
        let mut f = 1.0;
        if (j >> 1) != (k >> 1) {
            f *= d_signal;
        }
        if (j & 1) != (k & 1) {
            f *= d_idler;
        }
        m[(j, k)] * f
    })
}

/// Per-photon dephasing factors for the layout's effective delay.
pub fn photon_dephasing(layout: &ChipLayout, filter: &FilterSpec) -> (f64, f64) {
    let tau = layout.dephasing_delay_ps;
    (
        dephasing_for_delay(tau, filter.bandwidth_hz(filter.signal_center_nm), filter.shape),
        dephasing_for_delay(tau, filter.bandwidth_hz(filter.idler_center_nm), filter.shape),
    )
}

/// The emitted two-photon polarization state.
pub fn output_state(layout: &ChipLayout, pump: &PumpField, filter: &FilterSpec) -> Result<DensityMatrix4, DeviceError> {
    let w = Wavelengths::new(pump, filter);
    let e = emission(layout, pump, &w);
    let psi = e.total();
    if !(psi.norm_squared() > 0.0) {
        return Err(DeviceError::Degenerate);
    }
    let ket = TwoPhotonKet::new(psi)?;
    let pure = ket.amplitudes() * ket.amplitudes().adjoint();
    let (ds, di) = photon_dephasing(layout, filter);
    let dephased = dephase_photons(&pure, ds, di);
    let out = tensor(
        &rotator_matrix(layout.output_ssc.rotation_deg(w.signal_nm, &w)),
        &rotator_matrix(layout.output_ssc.rotation_deg(w.idler_nm, &w)),
    );
    Ok(DensityMatrix4::from_psd(out.0 * dephased * out.0.adjoint())?)
}

/// Group-delay walk-off |ΔL| × PMD, in femtoseconds.
pub fn walk_off(delta_l_um: f64, pmd_ps_per_mm: f64) -> f64 {
    // μm × ps/mm = 1e-3 ps = 1 fs.
    delta_l_um.abs() * pmd_ps_per_mm
}

/// Light source and analyzer used for a transmission fringe measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeProbe {
    pub wavelength_nm: f64,
    pub bandwidth_ghz: f64,
    pub shape: FilterShape,
    /// Polarizer extinction ratio; `None` is an ideal analyzer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer_extinction_db: Option<f64>,
}

/// Least-squares fit of T(θ) = B + A cos²(θ − θ_out).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FringeFit {
    pub theta_out_deg: f64,
    pub visibility: f64,
    pub offset: f64,
    pub amplitude: f64,
    pub rms_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FringeScan {
    pub angles_deg: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub fit: FringeFit,
}

fn dephase_coherency(j: &Matrix2<C64>, d: f64) -> Matrix2<C64> {
    let mut out = *j;
    out[(0, 1)] *= d;
    out[(1, 0)] *= d;
    out
}

fn through(op: &Operator2, j: &Matrix2<C64>) -> Matrix2<C64> {
    op.0 * j * op.0.adjoint()
}

/// Coherency matrix of a classical probe after the full chain. Each
/// waveguide section dephases TE/TM coherence by averaging its PMD delay
/// over the probe bandwidth; the mean birefringent phase is taken as zero.
pub fn chain_coherency(layout: &ChipLayout, w: &Wavelengths, input: &JonesVector, probe: &FringeProbe) -> Matrix2<C64> {
    let lambda = probe.wavelength_nm;
    let bw = probe.bandwidth_ghz * 1e9;
    let mut j = input.0 * input.0.adjoint();
    j = through(&rotator_matrix(layout.input_ssc.rotation_deg(lambda, w)), &j);
    j = through(&layout.sww1.amplitude_operator(), &j);
    j = dephase_coherency(&j, dephasing_for_delay(layout.sww1.pmd_delay_ps(), bw, probe.shape));
    if let Some(spr) = &layout.spr {
        j = through(&spr.amplitude_operator(lambda, w.pump_nm), &j);
    }
    j = through(&layout.sww2.amplitude_operator(), &j);
    j = dephase_coherency(&j, dephasing_for_delay(layout.sww2.pmd_delay_ps(), bw, probe.shape));
    through(&rotator_matrix(layout.output_ssc.rotation_deg(lambda, w)), &j)
}

/// Transmittance through an output polarizer at each analyzer angle, with
/// the fitted fringe parameters.
pub fn fringe_scan(
    layout: &ChipLayout,
    w: &Wavelengths,
    input: &JonesVector,
    analyzer_angles_deg: &[f64],
    probe: &FringeProbe,
) -> Result<FringeScan, DeviceError> {
    if analyzer_angles_deg.len() < 2 {
        return Err(DeviceError::TooFewAngles(analyzer_angles_deg.len()));
    }
    let input = input.normalized()?;
    let j = chain_coherency(layout, w, &input, probe);
    let leak = probe.analyzer_extinction_db.map(db_to_transmittance).unwrap_or(0.0);
    let transmittance: Vec<f64> = analyzer_angles_deg
        .iter()
        .map(|&theta| {
            let pass = JonesVector::linear(theta).0;
            let block = JonesVector::linear(theta + 90.0).0;
            pass.dotc(&(j * pass)).re + leak * block.dotc(&(j * block)).re
        })
        .collect();
    let fit = fit_fringe(analyzer_angles_deg, &transmittance)?;
    Ok(FringeScan { angles_deg: analyzer_angles_deg.to_vec(), transmittance, fit })
}

/// Fits T = a₀ + a₁ cos 2θ + a₂ sin 2θ by linear least squares.
pub fn fit_fringe(angles_deg: &[f64], transmittance: &[f64]) -> Result<FringeFit, DeviceError> {
    if angles_deg.len() < 2 || angles_deg.len() != transmittance.len() {
        return Err(DeviceError::TooFewAngles(angles_deg.len().min(transmittance.len())));
    }
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (&theta, &t) in angles_deg.iter().zip(transmittance) {
        let x = 2.0 * theta.to_radians();
        let row = Vector3::new(1.0, x.cos(), x.sin());
        normal += row * row.transpose();
        rhs += row * t;
    }
    let scale = normal.amax().max(1e-300);
    if normal.determinant().abs() <= 1e-10 * scale.powi(3) {
        return Err(DeviceError::FitDegenerate);
    }
    let coef = normal.lu().solve(&rhs).ok_or(DeviceError::FitDegenerate)?;
    let (a0, a1, a2) = (coef[0], coef[1], coef[2]);
    let r = (a1 * a1 + a2 * a2).sqrt();
    let mut theta_out = 0.5 * a2.atan2(a1).to_degrees();
    if theta_out <= -90.0 {
        theta_out += 180.0;
    }
    let rms = (angles_deg
        .iter()
        .zip(transmittance)
        .map(|(&theta, &t)| {
            let x = 2.0 * theta.to_radians();
            let model = a0 + a1 * x.cos() + a2 * x.sin();
            (t - model).powi(2)
        })
        .sum::<f64>()
        / angles_deg.len() as f64)
        .sqrt();
    Ok(FringeFit {
        theta_out_deg: theta_out,
        visibility: if a0 > 0.0 { r / a0 } else { 0.0 },
        offset: a0 - r,
        amplitude: 2.0 * r,
        rms_residual: rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::state_to_density;
    use proptest::prelude::*;

    fn pump(pol: JonesVector) -> PumpField {
        PumpField { wavelength_nm: 1551.1, peak_power_mw: 128.0, pulse_width_ps: 80.0, rep_rate_mhz: 100.0, polarization: pol }
    }

    fn filter() -> FilterSpec {
        FilterSpec { signal_center_nm: 1546.4, idler_center_nm: 1556.0, bandwidth_nm: 0.14, shape: FilterShape::Rectangular }
    }

    fn lossy_layout(mu_tm: f64, mu_spr: f64) -> ChipLayout {
        let mut l = ChipLayout::ideal(1.5, 150.0);
        let tm_db_per_cm = -10.0 * mu_tm.log10() / 0.15;
        for sww in [&mut l.sww1, &mut l.sww2] {
            sww.alpha_te_db_per_cm = 2.2;
            sww.alpha_tm_db_per_cm = tm_db_per_cm;
        }
        l.spr.as_mut().unwrap().insertion_loss_db = -10.0 * mu_spr.log10();
        l
    }

    #[test]
    fn lossless_diagonal_pump_is_balanced_until_rotator() {
        let l = ChipLayout::ideal(1.5, 150.0);
        let stages = propagate_pump(&l, &pump(JonesVector::d()));
        for s in &stages {
            assert!((s.power_te_mw - s.power_tm_mw).abs() < 1e-12, "{s:?}");
            assert!((s.total_mw() - 128.0).abs() < 1e-10);
        }
    }

    #[test]
    fn te_pump_becomes_tm_after_ideal_rotator() {
        let l = ChipLayout::ideal(1.5, 150.0);
        let stages = propagate_pump(&l, &pump(JonesVector::h()));
        assert!(stages[3].power_te_mw < 1e-20);
        assert!((stages[3].power_tm_mw - 128.0).abs() < 1e-10);
    }

    #[test]
    fn pump_tm_scaled_by_waveguide_and_rotator_loss() {
        // 1.7 dB/cm over 0.3 cm ≈ 0.51 dB (μ_TM ≈ 0.89), 1 dB rotator (μ_SPR ≈ 0.79).
        let mut l = ChipLayout::ideal(3.0, 150.0);
        l.sww1.alpha_tm_db_per_cm = 1.7;
        l.spr.as_mut().unwrap().insertion_loss_db = 1.0;
        let stages = propagate_pump(&l, &pump(JonesVector::v()));
        let factor = stages[3].power_te_mw / stages[0].power_tm_mw;
        let mu_tm = 10f64.powf(-0.051);
        let mu_spr = 10f64.powf(-0.1);
        assert!((factor - mu_tm * mu_spr).abs() < 1e-12);
        assert!((factor - 0.70).abs() < 0.01, "{factor}");
    }

    #[test]
    fn stage_powers_never_increase() {
        let mut l = lossy_layout(0.8, 0.7);
        l.input_ssc.rotation_pump_deg = -3.0;
        l.output_ssc.coupling_loss_db = 2.0;
        let stages = propagate_pump(&l, &pump(JonesVector::linear(30.0)));
        for pair in stages.windows(2) {
            assert!(pair[1].total_mw() <= pair[0].total_mw() + 1e-12);
        }
    }

    #[test]
    fn weights_cases() {
        let w = biphoton_weights(&ChipLayout::ideal(1.5, 150.0), &pump(JonesVector::d()), &filter());
        assert!((w.w_te - 0.5).abs() < 1e-12 && (w.w_tm - 0.5).abs() < 1e-12);
        assert_eq!(w.phi_rad, 0.0);

        let w = biphoton_weights(&lossy_layout(0.5, 0.8), &pump(JonesVector::d()), &filter());
        assert!((w.w_te / w.w_tm - 1.0).abs() < 1e-12);

        let w = biphoton_weights(&ChipLayout::ideal(1.5, 150.0), &pump(JonesVector::h()), &filter());
        assert!(w.w_te.abs() < 1e-12 && (w.w_tm - 1.0).abs() < 1e-12);

        let mut dark = pump(JonesVector::d());
        dark.peak_power_mw = 0.0;
        let w = biphoton_weights(&ChipLayout::ideal(1.5, 150.0), &dark, &filter());
        assert!(w.degenerate && w.w_te == 0.0 && w.w_tm == 0.0);
        assert_eq!(output_state(&ChipLayout::ideal(1.5, 150.0), &dark, &filter()), Err(DeviceError::Degenerate));
    }

    #[test]
    fn loss_product_enters_both_branches_squared() {
        // Pair weight of each branch relative to lossless: (μ_TM μ_SPR)².
        let mut lossless = lossy_layout(1.0, 1.0);
        lossless.sww1.alpha_te_db_per_cm = 2.2;
        let base = biphoton_weights(&lossless, &pump(JonesVector::d()), &filter()).total;
        let lossy = biphoton_weights(&lossy_layout(0.5, 0.8), &pump(JonesVector::d()), &filter()).total;
        assert!((lossy / base - 0.4f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn pair_generation_is_quadratic_in_pump_power() {
        let l = ChipLayout::ideal(1.5, 150.0);
        let mut p = pump(JonesVector::d());
        let a = biphoton_weights(&l, &p, &filter()).total;
        p.peak_power_mw *= 2.0;
        let b = biphoton_weights(&l, &p, &filter()).total;
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn loss_balance_holds_for_any_losses(mu_tm in 0.01f64..=1.0, mu_spr in 0.01f64..=1.0) {
            let w = biphoton_weights(&lossy_layout(mu_tm, mu_spr), &pump(JonesVector::d()), &filter());
            prop_assert!((w.w_te - w.w_tm).abs() < 1e-12);
        }

        #[test]
        fn output_state_always_valid(
            rot_in in -20.0f64..20.0, rot_s in -20.0f64..20.0, rot_i in -20.0f64..20.0,
            theta in 60.0f64..100.0, tau in 0.0f64..60.0, dl in -900.0f64..900.0, dn in 0.0f64..0.5,
        ) {
            let mut l = lossy_layout(0.7, 0.6);
            l.input_ssc.rotation_pump_deg = rot_in;
            l.output_ssc.rotation_signal_deg = rot_s;
            l.output_ssc.rotation_idler_deg = rot_i;
            l.spr.as_mut().unwrap().theta_deg_at_pump = theta;
            l.spr.as_mut().unwrap().dispersion_deg_per_nm = 0.2;
            l.dephasing_delay_ps = tau;
            l.delta_l_um = dl;
            l.delta_n_pm = dn;
            prop_assert!(output_state(&l, &pump(JonesVector::d()), &filter()).is_ok());
        }
    }

    #[test]
    fn ideal_device_emits_entangled_state() {
        let mut l = ChipLayout::ideal(1.5, 150.0);
        l.phi_rad = Some(0.4);
        let rho = output_state(&l, &pump(JonesVector::d()), &filter()).unwrap();
        let target = TwoPhotonKet::entangled(0.4);
        let f = rho.expectation(target.amplitudes());
        assert!((f - 1.0).abs() < 1e-10, "{f}");
    }

    #[test]
    fn phase_from_length_difference() {
        let mut l = ChipLayout::ideal(1.5, 150.0);
        l.delta_l_um = 0.5;
        l.delta_n_pm = 0.1;
        let mean = filter().mean_center_nm();
        let phi = l.phi_rad(mean);
        assert!((phi - 2.0 * PI * 0.1 * 500.0 / mean).abs() < 1e-12);
        let rho = output_state(&l, &pump(JonesVector::d()), &filter()).unwrap();
        let expected = state_to_density(&TwoPhotonKet::entangled(phi)).unwrap();
        assert!(rho.max_abs_diff(expected.matrix()) < 1e-10);
        l.phi_rad = Some(1.0);
        assert_eq!(l.phi_rad(mean), 1.0);
    }

    #[test]
    fn reference_waveguide_with_output_rotation() {
        let mut l = ChipLayout::ideal(1.5, 150.0);
        l.spr = None;
        l.output_ssc.rotation_signal_deg = -6.0;
        l.output_ssc.rotation_idler_deg = -6.0;
        let rho = output_state(&l, &pump(JonesVector::h()), &filter()).unwrap();
        let (s, c) = 6f64.to_radians().sin_cos();
        let expected = [c.powi(4), c * c * s * s, c * c * s * s, s.powi(4)];
        let pops = rho.populations();
        for k in 0..4 {
            assert!((pops[k] - expected[k]).abs() < 1e-12);
        }
        assert!((pops[0] - 0.978).abs() < 5e-4);
        assert!((pops[1] - 0.0108).abs() < 1e-4);
        assert!((pops[3] - 1.2e-4).abs() < 1e-5);
    }

    #[test]
    fn dephasing_cases() {
        let f = filter();
        assert_eq!(dephasing_for_delay(10.0, 0.0, FilterShape::Rectangular), 1.0);
        assert_eq!(dephasing_for_delay(10.0, 0.0, FilterShape::Gaussian), 1.0);
        // B·τ = 1 → first sinc null.
        assert!(dephasing_for_delay(1e12 / 18e9, 18e9, FilterShape::Rectangular) < 1e-12);
        let mut last = 1.0;
        for k in 0..=100 {
            let d = dephasing_for_delay(k as f64 * 0.555, 18e9, FilterShape::Rectangular);
            assert!(d <= last + 1e-15);
            last = d;
        }
        let b = f.bandwidth_hz(f.mean_center_nm());
        assert!((b - 17.5e9).abs() < 0.2e9, "{b}");
        assert!((dephasing_factor(5.0, 1.5, &f) - dephasing_for_delay(7.5, b, FilterShape::Rectangular)).abs() < 1e-15);
    }

    #[test]
    fn dephasing_scales_corner_coherence() {
        let mut l = ChipLayout::ideal(1.5, 150.0);
        l.dephasing_delay_ps = 12.0;
        let (ds, di) = photon_dephasing(&l, &filter());
        let rho = output_state(&l, &pump(JonesVector::d()), &filter()).unwrap();
        assert!((rho.element(0, 3).norm() - 0.5 * ds * di).abs() < 1e-12);
    }

    #[test]
    fn walk_off_cases() {
        assert_eq!(walk_off(1.0, 5.0), 5.0);
        assert!(walk_off(1.0, 5.0) < 10.0);
        assert_eq!(walk_off(0.0, 123.0), 0.0);
        assert_eq!(walk_off(-1000.0, 5.0), 5000.0);
    }

    fn probe(wavelength_nm: f64) -> FringeProbe {
        FringeProbe { wavelength_nm, bandwidth_ghz: 5.5, shape: FilterShape::Gaussian, analyzer_extinction_db: None }
    }

    fn angle_grid() -> Vec<f64> {
        (0..36).map(|k| k as f64 * 5.0).collect()
    }

    #[test]
    fn pure_linear_output_has_unit_visibility() {
        let l = ChipLayout::ideal(1.5, 150.0);
        let w = Wavelengths::new(&pump(JonesVector::h()), &filter());
        let scan = fringe_scan(&l, &w, &JonesVector::h(), &angle_grid(), &probe(1551.1)).unwrap();
        assert!((scan.fit.visibility - 1.0).abs() < 1e-12);
        assert!((scan.fit.theta_out_deg - 90.0).abs() < 1e-9 || (scan.fit.theta_out_deg + 90.0).abs() < 1e-9);
    }

    #[test]
    fn fringe_follows_rotator_angle() {
        let mut l = ChipLayout::ideal(1.5, 150.0);
        l.spr.as_mut().unwrap().theta_deg_at_pump = 86.7;
        let w = Wavelengths::new(&pump(JonesVector::h()), &filter());
        let scan = fringe_scan(&l, &w, &JonesVector::h(), &angle_grid(), &probe(1551.1)).unwrap();
        assert!((scan.fit.theta_out_deg - 86.7).abs() < 1e-9);
        assert!((scan.fit.visibility - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dephasing_lowers_visibility() {
        let mut l = ChipLayout::ideal(1.5, 150.0);
        l.spr.as_mut().unwrap().theta_deg_at_pump = 60.0;
        l.sww2.pmd_ps_per_mm = 5.0;
        let w = Wavelengths::new(&pump(JonesVector::h()), &filter());
        let mut p = probe(1551.1);
        p.bandwidth_ghz = 50.0;
        let scan = fringe_scan(&l, &w, &JonesVector::h(), &angle_grid(), &p).unwrap();
        assert!(scan.fit.visibility < 0.99, "{}", scan.fit.visibility);
    }

    #[test]
    fn finite_extinction_caps_visibility() {
        let l = ChipLayout::ideal(1.5, 150.0);
        let w = Wavelengths::new(&pump(JonesVector::h()), &filter());
        let mut p = probe(1551.1);
        p.analyzer_extinction_db = Some(20.0);
        let scan = fringe_scan(&l, &w, &JonesVector::h(), &angle_grid(), &p).unwrap();
        assert!((scan.fit.visibility - 0.99 / 1.01).abs() < 1e-12);
    }

    #[test]
    fn fringe_errors() {
        let l = ChipLayout::ideal(1.5, 150.0);
        let w = Wavelengths::new(&pump(JonesVector::h()), &filter());
        assert_eq!(fringe_scan(&l, &w, &JonesVector::h(), &[10.0], &probe(1551.1)), Err(DeviceError::TooFewAngles(1)));
        assert_eq!(
            fringe_scan(&l, &w, &JonesVector::h(), &[10.0, 190.0], &probe(1551.1)),
            Err(DeviceError::FitDegenerate)
        );
    }

    #[test]
    fn ssc_rotation_interpolates() {
        let ssc = SscSpec { rotation_pump_deg: -0.2, rotation_signal_deg: -5.5, rotation_idler_deg: -4.95, coupling_loss_db: 2.0 };
        let w = Wavelengths { pump_nm: 1551.1, signal_nm: 1546.4, idler_nm: 1556.0 };
        assert!((ssc.rotation_deg(1546.4, &w) + 5.5).abs() < 1e-12);
        assert!((ssc.rotation_deg(1551.1, &w) + 0.2).abs() < 1e-12);
        assert_eq!(ssc.rotation_deg(1560.0, &w), -4.95);
        assert_eq!(ssc.rotation_deg(1500.0, &w), -5.5);
        let mid = ssc.rotation_deg((1546.4 + 1551.1) / 2.0, &w);
        assert!((mid - (-2.85)).abs() < 1e-12);
    }

    #[test]
    fn spr_dispersion() {
        let spr = SprSpec { theta_deg_at_pump: 86.7, dispersion_deg_per_nm: 0.2, insertion_loss_db: 1.0 };
        assert!((spr.theta_deg(1546.4, 1551.1) - 85.76).abs() < 1e-12);
        assert!((spr.theta_deg(1556.0, 1551.1) - 87.68).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let mut l = ChipLayout::ideal(1.5, 150.0);
        assert!(l.violations("layout").is_empty());
        l.delta_l_um = 1000.0;
        l.sww2.length_mm = 0.0;
        l.output_ssc.coupling_loss_db = -1.0;
        assert_eq!(l.violations("layout").len(), 3);
        let mut p = pump(JonesVector::d());
        p.polarization = JonesVector::new(C64::from(1.0), C64::from(1.0));
        p.rep_rate_mhz = 0.0;
        assert_eq!(p.violations("pump").len(), 2);
        assert!(filter().warnings(1551.1).is_empty());
        assert_eq!(filter().warnings(1552.0).len(), 1);
    }
}
