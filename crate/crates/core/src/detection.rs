//! Gated single-photon detection: singles, coincidences, accidentals, CAR
//! and seeded Poisson count generation per projection setting.

use crate::algebra::{tensor_ket, AlgebraError, DensityMatrix4, JonesVector};
use crate::db_to_transmittance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("CAR is undefined for a record with zero accidentals")]
    UndefinedCar,
    #[error("target CAR {target} is above the zero-noise CAR {max}")]
    UnachievableCar { target: f64, max: f64 },
    #[error("duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("count CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Gated InGaAs-type single-photon detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub quantum_eff: f64,
    pub gate_width_ns: f64,
    pub dark_per_gate: f64,
    pub dead_time_us: f64,
    pub gate_rate_mhz: f64,
}

impl DetectorSpec {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (key, v) in [("quantum_eff", self.quantum_eff), ("dark_per_gate", self.dark_per_gate)] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{prefix}.{key} must be in [0, 1], got {v}"));
            }
        }
        for (key, v) in [("gate_width_ns", self.gate_width_ns), ("gate_rate_mhz", self.gate_rate_mhz)] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{prefix}.{key} must be > 0, got {v}"));
            }
        }
        if !(self.dead_time_us >= 0.0 && self.dead_time_us.is_finite()) {
            out.push(format!("{prefix}.dead_time_us must be >= 0, got {}", self.dead_time_us));
        }
        out
    }
}

/// Everything between the chip facet and one detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub collection_loss_db: f64,
    #[serde(default)]
    pub noise_singles_per_gate: f64,
}

impl ChannelSpec {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.collection_loss_db >= 0.0 && self.collection_loss_db.is_finite()) {
            out.push(format!("{prefix}.collection_loss_db must be >= 0, got {}", self.collection_loss_db));
        }
        if !(0.0..1.0).contains(&self.noise_singles_per_gate) {
            out.push(format!("{prefix}.noise_singles_per_gate must be in [0, 1), got {}", self.noise_singles_per_gate));
        }
        out
    }

    /// Collection transmittance times detector efficiency.
    pub fn detection_efficiency(&self, det: &DetectorSpec) -> f64 {
        db_to_transmittance(self.collection_loss_db) * det.quantum_eff
    }

    pub fn with_extra_loss(&self, extra_db: f64) -> Self {
        Self { collection_loss_db: self.collection_loss_db + extra_db, ..self.clone() }
    }

    pub fn with_noise(&self, noise: f64) -> Self {
        Self { noise_singles_per_gate: noise, ..self.clone() }
    }
}

/// Signal/idler projector pair, e.g. "DR".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSetting {
    pub label: String,
    pub projector_s: JonesVector,
    pub projector_i: JonesVector,
}

impl ProjectionSetting {
    /// Builds a setting from a two-letter label over H, V, D, A, R, L.
    pub fn from_label(label: &str) -> Result<Self, AlgebraError> {
        let chars: Vec<char> = label.chars().collect();
        if chars.len() != 2 {
            return Err(AlgebraError::UnknownLabel(label.to_string()));
        }
        Ok(Self {
            label: label.to_string(),
            projector_s: JonesVector::from_label(chars[0])?,
            projector_i: JonesVector::from_label(chars[1])?,
        })
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !self.projector_s.is_unit() || !self.projector_i.is_unit() {
            out.push(format!("{prefix} ({}): projectors must be unit norm", self.label));
        }
        out
    }
}

/// Joint and marginal pass probabilities of one projection setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub joint: f64,
    pub marginal_s: f64,
    pub marginal_i: f64,
}

impl Projection {
    /// Every photon passes: the no-analyzer case.
    pub fn open() -> Self {
        Self { joint: 1.0, marginal_s: 1.0, marginal_i: 1.0 }
    }
}

/// ⟨s⊗i|ρ|s⊗i⟩, clamped to [0, 1].
pub fn projection_probability(rho: &DensityMatrix4, setting: &ProjectionSetting) -> f64 {
    rho.expectation(&tensor_ket(&setting.projector_s, &setting.projector_i)).clamp(0.0, 1.0)
}

fn single_side(reduced: &nalgebra::Matrix2<crate::algebra::C64>, v: &JonesVector) -> f64 {
    v.0.dotc(&(reduced * v.0)).re.clamp(0.0, 1.0)
}

pub fn projection(rho: &DensityMatrix4, setting: &ProjectionSetting) -> Projection {
    Projection {
        joint: projection_probability(rho, setting),
        marginal_s: single_side(&rho.reduced(0), &setting.projector_s),
        marginal_i: single_side(&rho.reduced(1), &setting.projector_i),
    }
}

/// Options of the rate model beyond the defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    /// Adds the two-pair accidental term (pairs/pulse)² η_s η_i.
    #[serde(default)]
    pub multi_pair: bool,
}

/// Count rates after dead-time correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpectedRates {
    /// Measured coincidences: true pairs plus accidentals.
    pub coincidence_hz: f64,
    pub true_coincidence_hz: f64,
    pub accidental_hz: f64,
    pub singles_s_hz: f64,
    pub singles_i_hz: f64,
}

impl ExpectedRates {
    pub fn zero() -> Self {
        Self { coincidence_hz: 0.0, true_coincidence_hz: 0.0, accidental_hz: 0.0, singles_s_hz: 0.0, singles_i_hz: 0.0 }
    }

    pub fn car(&self) -> f64 {
        self.coincidence_hz / self.accidental_hz
    }
}

pub fn expected_rates(
    pair_per_pulse: f64,
    proj: &Projection,
    ch_s: &ChannelSpec,
    ch_i: &ChannelSpec,
    det_s: &DetectorSpec,
    det_i: &DetectorSpec,
) -> ExpectedRates {
    expected_rates_with(pair_per_pulse, proj, ch_s, ch_i, det_s, det_i, RateOptions::default())
}

/// Per-gate probabilities scaled by the common gate rate. Dead time is
/// non-paralyzable: each detector is live a fraction 1/(1 + R τ) of the time.
pub fn expected_rates_with(
    pair_per_pulse: f64,
    proj: &Projection,
    ch_s: &ChannelSpec,
    ch_i: &ChannelSpec,
    det_s: &DetectorSpec,
    det_i: &DetectorSpec,
    opts: RateOptions,
) -> ExpectedRates {
    let eta_s = ch_s.detection_efficiency(det_s);
    let eta_i = ch_i.detection_efficiency(det_i);
    let gate_hz = det_s.gate_rate_mhz.min(det_i.gate_rate_mhz) * 1e6;

    let s_s = pair_per_pulse * proj.marginal_s * eta_s + det_s.dark_per_gate + ch_s.noise_singles_per_gate;
    let s_i = pair_per_pulse * proj.marginal_i * eta_i + det_i.dark_per_gate + ch_i.noise_singles_per_gate;
    let true_cc = pair_per_pulse * proj.joint * eta_s * eta_i;
    let mut acc = s_s * s_i;
    if opts.multi_pair {
        acc += pair_per_pulse * pair_per_pulse * proj.marginal_s * proj.marginal_i * eta_s * eta_i;
    }

    let raw_s = s_s * gate_hz;
    let raw_i = s_i * gate_hz;
    let live_s = 1.0 / (1.0 + raw_s * det_s.dead_time_us * 1e-6);
    let live_i = 1.0 / (1.0 + raw_i * det_i.dead_time_us * 1e-6);
    let live = live_s * live_i;
    ExpectedRates {
        coincidence_hz: (true_cc + acc) * gate_hz * live,
        true_coincidence_hz: true_cc * gate_hz * live,
        accidental_hz: acc * gate_hz * live,
        singles_s_hz: raw_s * live_s,
        singles_i_hz: raw_i * live_i,
    }
}

/// Counts of one projection setting over one exposure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub label: String,
    pub singles_s: u64,
    pub singles_i: u64,
    pub coincidences: u64,
    pub accidentals: u64,
    pub duration_s: f64,
}

pub fn car(record: &CountRecord) -> Result<f64, DetectionError> {
    if record.accidentals == 0 {
        return Err(DetectionError::UndefinedCar);
    }
    Ok(record.coincidences as f64 / record.accidentals as f64)
}

/// 64-bit FNV-1a; the RNG stream id of a setting label.
pub fn label_stream(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic generator for (seed, stream).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One Poisson draw; a zero (or non-positive) mean yields 0.
pub fn poisson_draw(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => 0,
    }
}

/// Independent Poisson draws with mean rate × duration. The RNG stream is
/// the FNV-1a hash of `label`, so settings sampled with one seed are
/// mutually independent and order-insensitive.
pub fn sample_counts(rates: &ExpectedRates, duration_s: f64, seed: u64, label: &str) -> Result<CountRecord, DetectionError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(DetectionError::InvalidDuration(duration_s));
    }
    let mut rng = stream_rng(seed, label_stream(label));
    Ok(CountRecord {
        label: label.to_string(),
        singles_s: poisson_draw(&mut rng, rates.singles_s_hz * duration_s),
        singles_i: poisson_draw(&mut rng, rates.singles_i_hz * duration_s),
        coincidences: poisson_draw(&mut rng, rates.coincidence_hz * duration_s),
        accidentals: poisson_draw(&mut rng, rates.accidental_hz * duration_s),
        duration_s,
    })
}

/// Uncorrelated noise singles per gate (applied equally to both channels)
/// that bring the CAR of `proj` down to `target_car`. Bisection to 1e-3
/// relative in the noise level.
pub fn calibrate_noise_singles(
    target_car: f64,
    pair_per_pulse: f64,
    proj: &Projection,
    ch_s: &ChannelSpec,
    ch_i: &ChannelSpec,
    det_s: &DetectorSpec,
    det_i: &DetectorSpec,
) -> Result<f64, DetectionError> {
    let car_at = |noise: f64| {
        expected_rates(pair_per_pulse, proj, &ch_s.with_noise(noise), &ch_i.with_noise(noise), det_s, det_i).car()
    };
    let max = car_at(0.0);
    if !(target_car <= max) {
        return Err(DetectionError::UnachievableCar { target: target_car, max });
    }
    if (max - target_car).abs() <= 1e-12 * max {
        return Ok(0.0);
    }
    let mut hi = 1e-9;
    while car_at(hi) > target_car {
        hi *= 2.0;
        if hi >= 1.0 {
            return Ok(1.0);
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        if car_at(mid) > target_car {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Writes records as CSV (label, singles_s, singles_i, coincidences,
/// accidentals, duration_s), preceded by `#` comment lines.
pub fn write_records<W: Write>(mut out: W, comments: &[String], records: &[CountRecord]) -> Result<(), DetectionError> {
    for c in comments {
        writeln!(out, "# {c}").map_err(csv::Error::from)?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads records written by [`write_records`]; `#` lines are skipped.
pub fn read_records<R: Read>(input: R) -> Result<Vec<CountRecord>, DetectionError> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        let rec: CountRecord = rec?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{state_to_density, TwoPhotonKet};

    fn detector() -> DetectorSpec {
        DetectorSpec { quantum_eff: 0.2, gate_width_ns: 1.0, dark_per_gate: 1e-5, dead_time_us: 5.0, gate_rate_mhz: 100.0 }
    }

    fn channel() -> ChannelSpec {
        ChannelSpec { collection_loss_db: 8.0, noise_singles_per_gate: 0.0 }
    }

    fn bell() -> DensityMatrix4 {
        state_to_density(&TwoPhotonKet::phi_plus()).unwrap()
    }

    fn p(label: &str) -> f64 {
        projection_probability(&bell(), &ProjectionSetting::from_label(label).unwrap())
    }

    #[test]
    fn bell_projection_cases() {
        assert!((p("HH") - 0.5).abs() < 1e-12);
        assert!(p("HV").abs() < 1e-12);
        assert!((p("DD") - 0.5).abs() < 1e-12);
        assert!((p("RL") - 0.5).abs() < 1e-12);
        assert!(p("RR").abs() < 1e-12);
    }

    #[test]
    fn orthonormal_basis_sums_to_one() {
        let rho = DensityMatrix4::werner(0.6).unwrap();
        for basis in [["HH", "HV", "VH", "VV"], ["DD", "DA", "AD", "AA"], ["RD", "RA", "LD", "LA"]] {
            let sum: f64 = basis.iter().map(|l| projection_probability(&rho, &ProjectionSetting::from_label(l).unwrap())).sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn paper_coincidence_rate() {
        // 1.1e-3 pairs/pulse × 1e8 gates/s × (−15 dB)² ≈ 110 Hz.
        let r = expected_rates(1.1e-3, &Projection::open(), &channel(), &channel(), &detector(), &detector());
        let eta = db_to_transmittance(8.0) * 0.2;
        assert!((eta - db_to_transmittance(14.99)).abs() < 1e-4);
        let mut no_dead = detector();
        no_dead.dead_time_us = 0.0;
        let raw = expected_rates(1.1e-3, &Projection::open(), &channel(), &channel(), &no_dead, &no_dead);
        assert!((raw.true_coincidence_hz - 1.1e-3 * 1e8 * eta * eta).abs() < 1e-9);
        assert!((raw.true_coincidence_hz - 110.5).abs() < 0.1, "{}", raw.true_coincidence_hz);
        for hz in [raw.true_coincidence_hz, r.true_coincidence_hz, r.coincidence_hz] {
            assert!((hz / 103.9 - 1.0).abs() < 0.1, "{hz}");
        }
    }

    #[test]
    fn zero_pairs_leaves_dark_counts() {
        let r = expected_rates(0.0, &Projection::open(), &channel(), &channel(), &detector(), &detector());
        assert_eq!(r.true_coincidence_hz, 0.0);
        let dark_hz = 1e-5 * 1e8;
        assert!((r.singles_s_hz - dark_hz / (1.0 + dark_hz * 5e-6)).abs() < 1e-9);
    }

    #[test]
    fn car_falls_with_pair_rate() {
        // Pair-derived singles only, so accidentals are quadratic in the pair rate.
        let mut det = detector();
        det.dark_per_gate = 0.0;
        let mut last = f64::INFINITY;
        for k in 1..=40 {
            let r = expected_rates(k as f64 * 1e-4, &Projection::open(), &channel(), &channel(), &det, &det);
            assert!(r.car() < last);
            last = r.car();
        }
    }

    #[test]
    fn coincidences_linear_without_dead_time() {
        let mut det = detector();
        det.dead_time_us = 0.0;
        let a = expected_rates(1e-3, &Projection::open(), &channel(), &channel(), &det, &det);
        let b = expected_rates(3e-3, &Projection::open(), &channel(), &channel(), &det, &det);
        assert!((b.true_coincidence_hz / a.true_coincidence_hz - 3.0).abs() < 1e-12);
    }

    #[test]
    fn multi_pair_term_is_small_at_paper_rates() {
        let base = expected_rates(1.1e-3, &Projection::open(), &channel(), &channel(), &detector(), &detector());
        let mp = expected_rates_with(1.1e-3, &Projection::open(), &channel(), &channel(), &detector(), &detector(), RateOptions { multi_pair: true });
        assert!(mp.accidental_hz > base.accidental_hz);
        // Relative to the coincidence rate the extra term is ~pair/pulse.
        assert!((mp.accidental_hz - base.accidental_hz) / base.coincidence_hz <= 1.2e-3);
    }

    #[test]
    fn car_cases() {
        let rec = |c, a| CountRecord { label: "HH".into(), singles_s: 0, singles_i: 0, coincidences: c, accidentals: a, duration_s: 60.0 };
        assert_eq!(car(&rec(7, 7)).unwrap(), 1.0);
        assert!((car(&rec(6234, 114)).unwrap() - 54.7).abs() < 0.05);
        assert!(matches!(car(&rec(5, 0)), Err(DetectionError::UndefinedCar)));
    }

    #[test]
    fn sampling_is_deterministic_and_zero_safe() {
        let r = expected_rates(1.1e-3, &Projection::open(), &channel(), &channel(), &detector(), &detector());
        let a = sample_counts(&r, 60.0, 9, "HH").unwrap();
        let b = sample_counts(&r, 60.0, 9, "HH").unwrap();
        assert_eq!(a, b);
        assert_ne!(sample_counts(&r, 60.0, 9, "HV").unwrap(), a);
        let z = sample_counts(&ExpectedRates::zero(), 60.0, 9, "HH").unwrap();
        assert_eq!((z.singles_s, z.singles_i, z.coincidences, z.accidentals), (0, 0, 0, 0));
        assert!(sample_counts(&r, 0.0, 1, "HH").is_err());
    }

    #[test]
    fn sample_mean_matches() {
        let rates = ExpectedRates { coincidence_hz: 1e4, ..ExpectedRates::zero() };
        let n = 1000;
        let mean = (0..n).map(|s| sample_counts(&rates, 1.0, s, "HH").unwrap().coincidences as f64).sum::<f64>() / n as f64;
        assert!((mean - 1e4).abs() < 5.0 * 100.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn calibration_cases() {
        let proj = Projection::open();
        let (c, d) = (channel(), detector());
        let max = expected_rates(1.1e-3, &proj, &c, &c, &d, &d).car();
        assert!(calibrate_noise_singles(max, 1.1e-3, &proj, &c, &c, &d, &d).unwrap() < 1e-8);
        assert!(matches!(
            calibrate_noise_singles(max * 1.1, 1.1e-3, &proj, &c, &c, &d, &d),
            Err(DetectionError::UnachievableCar { .. })
        ));
        let n55 = calibrate_noise_singles(54.7, 1.1e-3, &proj, &c, &c, &d, &d).unwrap();
        assert!(n55 > 3e-5 && n55 < 3e-4, "{n55}");
        let got = expected_rates(1.1e-3, &proj, &c.with_noise(n55), &c.with_noise(n55), &d, &d).car();
        assert!((got / 54.7 - 1.0).abs() < 1e-3);
        let n40 = calibrate_noise_singles(40.0, 1.1e-3, &proj, &c, &c, &d, &d).unwrap();
        assert!(n40 > n55);
    }

    #[test]
    fn csv_round_trip() {
        let r = expected_rates(1.1e-3, &Projection::open(), &channel(), &channel(), &detector(), &detector());
        let recs: Vec<CountRecord> = ["HH", "DR"].iter().map(|l| sample_counts(&r, 120.0, 3, l).unwrap()).collect();
        let mut buf = Vec::new();
        write_records(&mut buf, &["seed = 3".to_string()], &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed = 3\nlabel,singles_s,singles_i,coincidences,accidentals,duration_s\n"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
        assert!(read_records("label,singles_s\nHH,x\n".as_bytes()).is_err());
    }
}
