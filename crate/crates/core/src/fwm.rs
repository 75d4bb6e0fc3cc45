//! Four-wave-mixing efficiency of a silicon-wire waveguide, TE vs TM.

use crate::SPEED_OF_LIGHT;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Guided polarization mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Te,
    Tm,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Te => "te",
            Mode::Tm => "tm",
        }
    }
}

/// Material and modal parameters of the nonlinear waveguide. Effective
/// areas and group-velocity dispersion come from a mode solver and are
/// configuration inputs here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearWaveguide {
    pub n2_m2_per_w: f64,
    pub aeff_te_um2: f64,
    pub aeff_tm_um2: f64,
    pub beta2_te_ps2_per_m: f64,
    pub beta2_tm_ps2_per_m: f64,
    pub length_mm: f64,
}

impl NonlinearWaveguide {
    /// Hard violations; an inverted TE/TM area ordering is only a warning
    /// (see [`NonlinearWaveguide::warnings`]).
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("n2_m2_per_w", self.n2_m2_per_w),
            ("aeff_te_um2", self.aeff_te_um2),
            ("aeff_tm_um2", self.aeff_tm_um2),
            ("length_mm", self.length_mm),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                out.push(format!("{prefix}.{key} must be positive, got {value}"));
            }
        }
        for (key, value) in [("beta2_te_ps2_per_m", self.beta2_te_ps2_per_m), ("beta2_tm_ps2_per_m", self.beta2_tm_ps2_per_m)] {
            if !value.is_finite() {
                out.push(format!("{prefix}.{key} must be finite"));
            }
        }
        out
    }

    pub fn warnings(&self) -> Vec<String> {
        if self.aeff_te_um2 >= self.aeff_tm_um2 {
            vec![format!(
                "aeff_te_um2 ({}) >= aeff_tm_um2 ({}): TE is normally the more confined mode",
                self.aeff_te_um2, self.aeff_tm_um2
            )]
        } else {
            Vec::new()
        }
    }

    pub fn aeff_um2(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Te => self.aeff_te_um2,
            Mode::Tm => self.aeff_tm_um2,
        }
    }

    pub fn beta2_ps2_per_m(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Te => self.beta2_te_ps2_per_m,
            Mode::Tm => self.beta2_tm_ps2_per_m,
        }
    }

    pub fn gamma_per_w_m(&self, mode: Mode, lambda_p_nm: f64) -> f64 {
        nonlinear_coefficient(self.n2_m2_per_w, lambda_p_nm, self.aeff_um2(mode))
    }
}

/// γ = 2π n₂ / (λ_p A_eff), in 1/(W·m).
pub fn nonlinear_coefficient(n2_m2_per_w: f64, lambda_p_nm: f64, aeff_um2: f64) -> f64 {
    2.0 * PI * n2_m2_per_w / (lambda_p_nm * 1e-9 * aeff_um2 * 1e-12)
}

/// η = (γ P L)², with P in mW and L in mm.
pub fn fwm_efficiency(gamma_per_w_m: f64, p_peak_mw: f64, length_mm: f64) -> f64 {
    let x = gamma_per_w_m * p_peak_mw * 1e-3 * length_mm * 1e-3;
    x * x
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Angular pump–signal detuning in rad/ps for a wavelength detuning.
pub fn angular_detuning_rad_per_ps(detuning_nm: f64, lambda_p_nm: f64) -> f64 {
    let lp = lambda_p_nm * 1e-9;
    2.0 * PI * SPEED_OF_LIGHT * detuning_nm * 1e-9 / (lp * lp) * 1e-12
}

/// Nonlinear phase mismatch κ = β₂Ω² + 2γP in 1/m.
pub fn phase_mismatch_per_m(beta2_ps2_per_m: f64, gamma_per_w_m: f64, p_peak_mw: f64, detuning_nm: f64, lambda_p_nm: f64) -> f64 {
    let omega = angular_detuning_rad_per_ps(detuning_nm, lambda_p_nm);
    beta2_ps2_per_m * omega * omega + 2.0 * gamma_per_w_m * p_peak_mw * 1e-3
}

/// One point of a conversion spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectrumPoint {
    pub detuning_nm: f64,
    pub eta: f64,
}

/// Idler-to-signal conversion efficiency versus pump–signal detuning:
/// η(Δ) = η₀ · sinc²(κ(Δ)L/2) / sinc²(κ(0)L/2), so η(0) equals
/// [`fwm_efficiency`] exactly.
///
/// Detunings are expected within ±40 nm of the pump.
pub fn conversion_spectrum(wg: &NonlinearWaveguide, lambda_p_nm: f64, p_peak_mw: f64, detuning_nm: &[f64], mode: Mode) -> Vec<SpectrumPoint> {
    let gamma = wg.gamma_per_w_m(mode, lambda_p_nm);
    let beta2 = wg.beta2_ps2_per_m(mode);
    let eta0 = fwm_efficiency(gamma, p_peak_mw, wg.length_mm);
    let half_l = wg.length_mm * 1e-3 / 2.0;
    let reference = sinc(phase_mismatch_per_m(beta2, gamma, p_peak_mw, 0.0, lambda_p_nm) * half_l).powi(2);
    detuning_nm
        .par_iter()
        .map(|&d| {
            let kappa = phase_mismatch_per_m(beta2, gamma, p_peak_mw, d, lambda_p_nm);
            SpectrumPoint { detuning_nm: d, eta: eta0 * sinc(kappa * half_l).powi(2) / reference }
        })
        .collect()
}

/// Detuning (nm, positive) at which κL = 2π, i.e. the first spectral null.
/// `None` when β₂ is zero or has the wrong sign to reach it.
pub fn first_null_detuning_nm(wg: &NonlinearWaveguide, lambda_p_nm: f64, p_peak_mw: f64, mode: Mode) -> Option<f64> {
    let gamma = wg.gamma_per_w_m(mode, lambda_p_nm);
    let beta2 = wg.beta2_ps2_per_m(mode);
    let target = 2.0 * PI / (wg.length_mm * 1e-3) - 2.0 * gamma * p_peak_mw * 1e-3;
    let omega2 = target / beta2;
    if !(omega2.is_finite() && omega2 > 0.0) {
        return None;
    }
    let per_nm = angular_detuning_rad_per_ps(1.0, lambda_p_nm);
    Some(omega2.sqrt() / per_nm)
}

/// Pairs per pulse from a normalized pair-creation efficiency
/// (pairs/pulse/GHz/W²/cm²): rate = eff · B · P² · L².
pub fn pair_rate_per_pulse(normalized_eff: f64, p_peak_mw: f64, length_mm: f64, bandwidth_ghz: f64) -> f64 {
    let p_w = p_peak_mw * 1e-3;
    let l_cm = length_mm * 0.1;
    normalized_eff * bandwidth_ghz * p_w * p_w * l_cm * l_cm
}
