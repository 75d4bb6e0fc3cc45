//! Scenario configuration: TOML schema, bundled presets and validation.

use crate::CliError;
use polent_core::algebra::TwoPhotonKet;
use polent_core::detection::{ChannelSpec, DetectorSpec, ProjectionSetting};
use polent_core::device::{ChipLayout, FilterShape, FilterSpec, FringeProbe, PumpField};
use polent_core::fwm::NonlinearWaveguide;
use polent_core::tomography::{default_projector_set, MleOptions, ProjectorSet, DEFAULT_LABELS};
use polent_core::JonesVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: [(&str, &str); 3] = [
    ("paper-repro-ent", include_str!("../presets/paper-repro-ent.toml")),
    ("paper-repro-ref", include_str!("../presets/paper-repro-ref.toml")),
    ("ideal", include_str!("../presets/ideal.toml")),
];

/// Signal and idler values of one kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair<T> {
    pub signal: T,
    pub idler: T,
}

/// How pairs per pulse at the chip end are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Normalized efficiency, pairs/pulse/GHz/W²/cm².
    pub pair_creation_eff: f64,
    /// Measured value; overrides the efficiency-based estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_per_pulse: Option<f64>,
    #[serde(default)]
    pub multi_pair: bool,
}

/// Fidelity target: the layout's entangled state, or a product state named
/// by a two-letter label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    Entangled,
    Product(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySpec {
    /// "standard" or "custom" (then `labels` is used).
    pub projector_set: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub mle: MleOptions,
    pub bootstrap_replicas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwmSpec {
    pub waveguide: NonlinearWaveguide,
    pub peak_power_mw: f64,
    pub detuning_min_nm: f64,
    pub detuning_max_nm: f64,
    pub detuning_step_nm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeSpec {
    pub input: JonesVector,
    pub angle_start_deg: f64,
    pub angle_stop_deg: f64,
    pub angle_step_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer_extinction_db: Option<f64>,
    /// Probe source spectral shape; the bandwidth follows the probe
    /// wavelength (pump pulse or filter channel).
    pub probe_shape: FilterShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub duration_s: f64,
    pub target: Target,
    pub pump: PumpField,
    pub filter: FilterSpec,
    pub layout: ChipLayout,
    pub source: SourceSpec,
    pub detectors: Pair<DetectorSpec>,
    pub channels: Pair<ChannelSpec>,
    pub tomography: TomographySpec,
    pub fwm: FwmSpec,
    pub fringe: FringeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| CliError::Config(vec![format!("{origin}: {}", e.to_string().trim_end())]))?;
        Ok(scenario)
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let text = PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::Config(vec![format!("unknown preset '{name}' (available: {})", names.join(", "))])
        })?;
        Self::parse(text, &format!("preset {name}"))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Every violation of the schema invariants; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!("schema_version must be {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            out.push(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        if let Target::Product(label) = &self.target {
            if ProjectionSetting::from_label(label).is_err() {
                out.push(format!("target.product: unknown label '{label}'"));
            }
        }
        out.extend(self.pump.violations("pump"));
        out.extend(self.filter.violations("filter"));
        out.extend(self.layout.violations("layout"));
        if !(self.source.pair_creation_eff >= 0.0 && self.source.pair_creation_eff.is_finite()) {
            out.push(format!("source.pair_creation_eff must be >= 0, got {}", self.source.pair_creation_eff));
        }
        if let Some(p) = self.source.pairs_per_pulse {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("source.pairs_per_pulse must be in [0, 1], got {p}"));
            }
        }
        out.extend(self.detectors.signal.violations("detectors.signal"));
        out.extend(self.detectors.idler.violations("detectors.idler"));
        out.extend(self.channels.signal.violations("channels.signal"));
        out.extend(self.channels.idler.violations("channels.idler"));
        out.extend(self.tomography.mle.violations("tomography.mle"));
        match self.tomography.projector_set.as_str() {
            "standard" => {}
            "custom" => match &self.tomography.labels {
                Some(labels) => {
                    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
                    if let Err(e) = ProjectorSet::from_labels(&refs) {
                        out.push(format!("tomography.labels: {e}"));
                    }
                }
                None => out.push("tomography.labels is required for projector_set = \"custom\"".into()),
            },
            other => out.push(format!("tomography.projector_set must be \"standard\" or \"custom\", got '{other}'")),
        }
        if self.tomography.bootstrap_replicas != 0 && self.tomography.bootstrap_replicas < polent_core::tomography::MIN_BOOTSTRAP {
            out.push(format!(
                "tomography.bootstrap_replicas must be 0 or >= {}, got {}",
                polent_core::tomography::MIN_BOOTSTRAP,
                self.tomography.bootstrap_replicas
            ));
        }
        out.extend(self.fwm.waveguide.violations("fwm.waveguide"));
        if !(self.fwm.detuning_step_nm > 0.0) || !(self.fwm.detuning_max_nm >= self.fwm.detuning_min_nm) {
            out.push("fwm: need detuning_step_nm > 0 and detuning_max_nm >= detuning_min_nm".into());
        }
        if !(self.fringe.angle_step_deg > 0.0) || !(self.fringe.angle_stop_deg > self.fringe.angle_start_deg) {
            out.push("fringe: need angle_step_deg > 0 and angle_stop_deg > angle_start_deg".into());
        }
        if !self.fringe.input.is_unit() {
            out.push("fringe.input must be unit norm".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                out.push("sweep.values must not be empty".into());
            }
        }
        out
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = self.filter.warnings(self.pump.wavelength_nm);
        w.extend(self.fwm.waveguide.warnings());
        w
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(v))
        }
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Config(vec!["seed is required for sampling commands (set `seed` or pass --seed)".into()]))
    }

    pub fn projector_set(&self) -> Result<ProjectorSet, CliError> {
        match (&self.tomography.projector_set[..], &self.tomography.labels) {
            ("custom", Some(labels)) => {
                let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
                ProjectorSet::from_labels(&refs).map_err(|e| CliError::Config(vec![format!("tomography.labels: {e}")]))
            }
            _ => Ok(default_projector_set()),
        }
    }

    pub fn projector_labels(&self) -> Vec<String> {
        match &self.tomography.labels {
            Some(l) if self.tomography.projector_set == "custom" => l.clone(),
            _ => DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn target_ket(&self) -> TwoPhotonKet {
        match &self.target {
            Target::Entangled => TwoPhotonKet::entangled(self.layout.phi_rad(self.filter.mean_center_nm())),
            Target::Product(label) => {
                let s = ProjectionSetting::from_label(label).expect("validated label");
                TwoPhotonKet::product(&s.projector_s, &s.projector_i).expect("unit projectors")
            }
        }
    }

    /// Pairs per pulse at the chip end.
    pub fn pairs_per_pulse(&self) -> f64 {
        self.source.pairs_per_pulse.unwrap_or_else(|| {
            polent_core::device::emitted_pairs_per_pulse(&self.layout, &self.pump, &self.filter, self.source.pair_creation_eff)
        })
    }

    /// Probe for a fringe scan at `lambda_nm`: the pump pulse spectrum at
    /// the pump wavelength, the filter channel elsewhere.
    pub fn fringe_probe(&self, lambda_nm: f64) -> FringeProbe {
        let bandwidth_ghz = if (lambda_nm - self.pump.wavelength_nm).abs() < 1e-9 {
            self.pump.bandwidth_ghz()
        } else {
            self.filter.bandwidth_hz(lambda_nm) * 1e-9
        };
        FringeProbe {
            wavelength_nm: lambda_nm,
            bandwidth_ghz,
            shape: self.fringe.probe_shape,
            analyzer_extinction_db: self.fringe.analyzer_extinction_db,
        }
    }

    pub fn fringe_angles(&self) -> Vec<f64> {
        let f = &self.fringe;
        let n = ((f.angle_stop_deg - f.angle_start_deg) / f.angle_step_deg + 1e-9).floor() as usize;
        (0..=n).map(|k| f.angle_start_deg + k as f64 * f.angle_step_deg).collect()
    }

    pub fn detunings_nm(&self) -> Vec<f64> {
        let f = &self.fwm;
        let n = ((f.detuning_max_nm - f.detuning_min_nm) / f.detuning_step_nm + 1e-9).floor() as usize;
        (0..=n).map(|k| f.detuning_min_nm + k as f64 * f.detuning_step_nm).collect()
    }

    /// Canonical JSON form; hashed for provenance.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Returns a copy with the numeric value at dotted `path` replaced.
    pub fn with_parameter(&self, path: &str, value: f64) -> Result<Self, CliError> {
        let mut root = serde_json::to_value(self).expect("scenario serializes");
        let mut node = &mut root;
        for key in path.split('.') {
            node = node
                .get_mut(key)
                .ok_or_else(|| CliError::Config(vec![format!("sweep parameter '{path}': no key '{key}'")]))?;
        }
        if !node.is_number() {
            return Err(CliError::Config(vec![format!("sweep parameter '{path}' is not numeric")]));
        }
        *node = serde_json::json!(value);
        let out: Scenario = serde_json::from_value(root).map_err(|e| CliError::Config(vec![format!("sweep parameter '{path}': {e}")]))?;
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load_and_validate() {
        for (name, _) in PRESETS {
            let s = Scenario::preset(name).unwrap();
            assert!(s.violations().is_empty(), "{name}: {:?}", s.violations());
            assert_eq!(s.name, name);
        }
        assert_eq!(Scenario::preset("paper-repro-ent").unwrap().pump.peak_power_mw, 128.0);
        assert_eq!(Scenario::preset("paper-repro-ref").unwrap().pump.peak_power_mw, 69.0);
    }

    #[test]
    fn unknown_key_is_rejected_with_context() {
        let text = PRESETS[2].1.replace("duration_s =", "bogus_key = 1\nduration_s =");
        match Scenario::parse(&text, "x.toml") {
            Err(CliError::Config(msgs)) => assert!(msgs[0].contains("bogus_key"), "{msgs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let mut s = Scenario::preset("ideal").unwrap();
        s.duration_s = -1.0;
        s.pump.rep_rate_mhz = 0.0;
        s.layout.delta_l_um = 5000.0;
        assert_eq!(s.violations().len(), 3);
    }

    #[test]
    fn seed_requirement() {
        let mut s = Scenario::preset("ideal").unwrap();
        s.seed = None;
        assert!(matches!(s.require_seed(), Err(CliError::Config(_))));
    }

    #[test]
    fn parameter_override() {
        let s = Scenario::preset("paper-repro-ent").unwrap();
        let t = s.with_parameter("layout.spr.insertion_loss_db", 3.0).unwrap();
        assert_eq!(t.layout.spr.as_ref().unwrap().insertion_loss_db, 3.0);
        assert!(s.with_parameter("layout.nope", 1.0).is_err());
        assert!(s.with_parameter("name", 1.0).is_err());
    }

    #[test]
    fn grids() {
        let s = Scenario::preset("ideal").unwrap();
        let a = s.fringe_angles();
        assert_eq!(a.first(), Some(&s.fringe.angle_start_deg));
        assert!(a.len() >= 3);
        assert!(s.detunings_nm().iter().any(|&d| d.abs() < 1e-12));
    }
}
