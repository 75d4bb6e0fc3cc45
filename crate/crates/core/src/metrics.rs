//! Entanglement and quality metrics on two-photon density matrices.

use crate::algebra::{hermitian_eigen, psd_sqrt};
use crate::algebra::{magic_basis_transform, sigma_y_sigma_y, DensityMatrix4, TwoPhotonKet, C64};
use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// tr ρ².
pub fn purity(rho: &DensityMatrix4) -> f64 {
    let m = rho.matrix();
    (m * m).trace().re
}

/// |ρ₀₃| + |ρ₃₀|: the TE,TE/TM,TM corner coherence, 1 for a Bell state.
pub fn off_diagonal_coherence(rho: &DensityMatrix4) -> f64 {
    rho.element(0, 3).norm() + rho.element(3, 0).norm()
}

/// ⟨target|ρ|target⟩.
pub fn fidelity(rho: &DensityMatrix4, target: &TwoPhotonKet) -> f64 {
    rho.expectation(target.amplitudes())
}

/// Uhlmann fidelity (tr √(√ρ σ √ρ))² between two mixed states.
pub fn state_fidelity(rho: &DensityMatrix4, sigma: &DensityMatrix4) -> f64 {
    let r = psd_sqrt(rho.matrix());
    let inner = psd_sqrt(&(r * sigma.matrix() * r));
    inner.trace().re.powi(2)
}

/// Closed form: largest eigenvalue of Re(M†ρM) in the magic basis.
pub fn fully_entangled_fraction(rho: &DensityMatrix4) -> f64 {
    let re = magic_basis_transform(rho).map(|z| z.re);
    let sym = (re + re.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

/// Rz(α)·Ry(β)·Rz(γ).
fn euler_unitary(a: f64, b: f64, g: f64) -> Matrix2<C64> {
    let (sb, cb) = (b / 2.0).sin_cos();
    let ea = C64::from_polar(1.0, -a / 2.0);
    let eg = C64::from_polar(1.0, -g / 2.0);
    Matrix2::new(
        ea * eg * cb,
        -(ea * eg.conj()) * sb,
        ea.conj() * eg * sb,
        ea.conj() * eg.conj() * cb,
    )
}

/// (U_s ⊗ U_i)|Φ⁺⟩ with Φ⁺ = (|00⟩ + |11⟩)/√2.
fn rotated_bell(us: &Matrix2<C64>, ui: &Matrix2<C64>) -> Vector4<C64> {
    Vector4::from_fn(|idx, _| {
        let (a, b) = (idx >> 1, idx & 1);
        (us[(a, 0)] * ui[(b, 0)] + us[(a, 1)] * ui[(b, 1)]) * FRAC_1_SQRT_2
    })
}

fn overlap_at(m: &Matrix4<C64>, angles: &[f64; 6]) -> f64 {
    let us = euler_unitary(angles[0], angles[1], angles[2]);
    let ui = euler_unitary(angles[3], angles[4], angles[5]);
    let psi = rotated_bell(&us, &ui);
    psi.dotc(&(m * psi)).re
}

const REFINE_STARTS: usize = 4;

/// Direct maximization of ⟨Ψ|ρ|Ψ⟩ over Ψ = (U_s⊗U_i)|Φ⁺⟩, each local
/// unitary given by three Euler angles. A `grid_density`⁶ grid is scanned in
/// parallel, then the best few cells are refined by compass search for up
/// to `refine_iters` iterations. Always a lower bound on the true value.
pub fn fef_bruteforce(rho: &DensityMatrix4, grid_density: usize, refine_iters: usize) -> f64 {
    let n = grid_density.max(2);
    let m = *rho.matrix();
    let step = [2.0 * PI / n as f64, PI / (n - 1) as f64, 2.0 * PI / n as f64];
    let axis = |k: usize, i: usize| if k == 1 { i as f64 * step[1] } else { i as f64 * step[0] };
    let triples: Vec<([f64; 3], Matrix2<C64>)> = (0..n * n * n)
        .map(|t| {
            let angles = [axis(0, t / (n * n)), axis(1, (t / n) % n), axis(2, t % n)];
            (angles, euler_unitary(angles[0], angles[1], angles[2]))
        })
        .collect();

    let mut best: Vec<(f64, usize, usize)> = (0..triples.len())
        .into_par_iter()
        .flat_map_iter(|s| {
            let us = triples[s].1;
            let triples = &triples;
            (0..triples.len()).map(move |i| {
                let psi = rotated_bell(&us, &triples[i].1);
                (psi.dotc(&(m * psi)).re, s, i)
            })
        })
        .collect();
    let k = REFINE_STARTS.min(best.len());
    best.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0));
    best.truncate(k);

    best.par_iter()
        .map(|&(value, s, i)| {
            let (a, b) = (triples[s].0, triples[i].0);
            let mut x = [a[0], a[1], a[2], b[0], b[1], b[2]];
            let mut fx = value;
            let mut h = step[0] / 2.0;
            for _ in 0..refine_iters {
                if h < 1e-10 {
                    break;
                }
                let mut improved = false;
                for dim in 0..6 {
                    for sign in [1.0, -1.0] {
                        let mut y = x;
                        y[dim] += sign * h;
                        let fy = overlap_at(&m, &y);
                        if fy > fx {
                            x = y;
                            fx = fy;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    h /= 2.0;
                }
            }
            fx
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Wootters concurrence max(0, λ₁ − λ₂ − λ₃ − λ₄), with λᵢ the descending
/// square roots of the eigenvalues of √ρ ρ̃ √ρ, ρ̃ = (σ_y⊗σ_y) ρ* (σ_y⊗σ_y).
/// This Hermitian form has the same spectrum as ρρ̃.
pub fn concurrence(rho: &DensityMatrix4) -> f64 {
    let m = rho.matrix();
    let yy = sigma_y_sigma_y();
    let flipped = yy * m.map(|z| z.conj()) * yy;
    let root = psd_sqrt(m);
    let r = root * flipped * root;
    let eig = hermitian_eigen(&r);
    let l: Vec<f64> = eig.values.iter().rev().map(|v| v.max(0.0).sqrt()).collect();
    (l[0] - l[1] - l[2] - l[3]).max(0.0)
}

/// True iff fef > 1/√2, the threshold above which CHSH can be violated.
pub fn chsh_witness(fef: f64) -> bool {
    fef > FRAC_1_SQRT_2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub purity: f64,
    pub fidelity_to_target: f64,
    pub fully_entangled_fraction: f64,
    pub concurrence: f64,
    pub off_diagonal_coherence: f64,
    pub chsh_witness: bool,
}

impl MetricReport {
    /// All real fields are clamped to [0, 1] to absorb round-off.
    pub fn compute(rho: &DensityMatrix4, target: &TwoPhotonKet) -> Self {
        let clamp = |x: f64| x.clamp(0.0, 1.0);
        let fef = clamp(fully_entangled_fraction(rho));
        Self {
            purity: clamp(purity(rho)),
            fidelity_to_target: clamp(fidelity(rho, target)),
            fully_entangled_fraction: fef,
            concurrence: clamp(concurrence(rho)),
            off_diagonal_coherence: clamp(off_diagonal_coherence(rho)),
            chsh_witness: chsh_witness(fef),
        }
    }

    /// Named real-valued fields, in serialization order.
    pub fn named_values(&self) -> [(&'static str, f64); 6] {
        [
            ("purity", self.purity),
            ("fidelity_to_target", self.fidelity_to_target),
            ("fully_entangled_fraction", self.fully_entangled_fraction),
            ("concurrence", self.concurrence),
            ("off_diagonal_coherence", self.off_diagonal_coherence),
            ("chsh_witness", if self.chsh_witness { 1.0 } else { 0.0 }),
        ]
    }
}
