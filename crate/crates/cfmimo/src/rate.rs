//! Effective channel composition and SINR / sum-rate evaluation, both as
//! plain numbers and as differentiable tape expressions.

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::numerics::tape::{CVar, Tape, Var};
use crate::numerics::{herm_inner, ComplexMatrix};

/// Joint transmit/reflect design: per-BS beamformers `w[bs][user]` (M x 1)
/// and the IRS reflection vector `v` (L x 1, unit-modulus entries).
#[derive(Debug, Clone)]
pub struct BeamformingSolution {
    pub w: Vec<Vec<ComplexMatrix>>,
    pub v: ComplexMatrix,
}

impl BeamformingSolution {
    /// Check the power budget and unit-modulus constraints.
    pub fn validate(&self, p_max_linear: f64) -> Result<()> {
        for (i, per_user) in self.w.iter().enumerate() {
            let power: f64 = per_user.iter().map(|w| w.norm_sqr()).sum();
            if power > p_max_linear + 1e-9 {
                return Err(Error::Infeasible(format!(
                    "BS {i} transmit power {power:.6e} exceeds budget {p_max_linear:.6e}"
                )));
            }
        }
        for l in 0..self.v.rows() {
            let m = self.v.get(l, 0).norm();
            if (m - 1.0).abs() > 1e-9 {
                return Err(Error::Infeasible(format!(
                    "reflection coefficient {l} has modulus {m}"
                )));
            }
        }
        Ok(())
    }

    /// Stacked beamformer of user `k` across all BSs (IM x 1).
    pub fn stacked_w(&self, k: usize) -> ComplexMatrix {
        let blocks: Vec<&ComplexMatrix> = self.w.iter().map(|per_user| &per_user[k]).collect();
        ComplexMatrix::stack_rows(&blocks)
    }
}

/// Effective channel from BS `i` to user `k`: the direct link plus the
/// IRS-reflected cascade, `h = d + G^H diag(v) f`.
pub fn effective_channel(
    real: &ChannelRealization,
    v: &ComplexMatrix,
    i: usize,
    k: usize,
) -> ComplexMatrix {
    let reflected = real.irs_user[k].scale_rows(v); // diag(v) f
    let through_irs = real.bs_irs[i]
        .hermitian()
        .matmul(&reflected)
        .expect("L x M channel against L x 1 reflection");
    real.direct[i][k].add(&through_irs)
}

/// Effective channels of a `(realization, v)` pair, computed once and shared
/// by every evaluation that uses the same reflection vector. Rebuild it
/// whenever `v` changes.
#[derive(Debug, Clone)]
pub struct EffectiveChannels {
    /// `per_bs[i][k]` is the M x 1 channel from BS i to user k.
    pub per_bs: Vec<Vec<ComplexMatrix>>,
    /// `stacked[k]` is the IM x 1 channel of user k across all BSs.
    pub stacked: Vec<ComplexMatrix>,
}

impl EffectiveChannels {
    pub fn compute(real: &ChannelRealization, v: &ComplexMatrix) -> Self {
        let bs_count = real.direct.len();
        let user_count = real.irs_user.len();
        let per_bs: Vec<Vec<ComplexMatrix>> = (0..bs_count)
            .map(|i| {
                (0..user_count)
                    .map(|k| effective_channel(real, v, i, k))
                    .collect()
            })
            .collect();
        let stacked = (0..user_count)
            .map(|k| {
                let blocks: Vec<&ComplexMatrix> = per_bs.iter().map(|row| &row[k]).collect();
                ComplexMatrix::stack_rows(&blocks)
            })
            .collect();
        Self { per_bs, stacked }
    }

    pub fn bs_count(&self) -> usize {
        self.per_bs.len()
    }

    pub fn user_count(&self) -> usize {
        self.stacked.len()
    }

    /// The M x K matrix of BS `i`'s effective channels (columns per user).
    pub fn local_matrix(&self, i: usize) -> ComplexMatrix {
        let m = self.per_bs[i][0].rows();
        let k_count = self.per_bs[i].len();
        let mut out = ComplexMatrix::zeros(m, k_count);
        for (k, h) in self.per_bs[i].iter().enumerate() {
            out.set_col(k, h);
        }
        out
    }

    /// The IM x K matrix of stacked effective channels.
    pub fn stacked_matrix(&self) -> ComplexMatrix {
        let rows = self.stacked[0].rows();
        let mut out = ComplexMatrix::zeros(rows, self.stacked.len());
        for (k, h) in self.stacked.iter().enumerate() {
            out.set_col(k, h);
        }
        out
    }
}

/// SINR and achievable rate (bit/s/Hz) of user `k` given precomputed
/// effective channels.
pub fn sinr_and_rate_with(
    eff: &EffectiveChannels,
    sol: &BeamformingSolution,
    k: usize,
    noise_linear: f64,
) -> (f64, f64) {
    let h_k = &eff.stacked[k];
    let desired = herm_inner(h_k, &sol.stacked_w(k)).norm_sqr();
    let mut interference = 0.0;
    for other in 0..eff.user_count() {
        if other == k {
            continue;
        }
        interference += herm_inner(h_k, &sol.stacked_w(other)).norm_sqr();
    }
    let sinr = desired / (interference + noise_linear);
    (sinr, (1.0 + sinr).log2())
}

/// SINR and rate of user `k`, composing effective channels on the fly.
pub fn sinr_and_rate(
    real: &ChannelRealization,
    sol: &BeamformingSolution,
    k: usize,
    noise_linear: f64,
) -> (f64, f64) {
    let eff = EffectiveChannels::compute(real, &sol.v);
    sinr_and_rate_with(&eff, sol, k, noise_linear)
}

/// Network sum rate in bit/s/Hz.
pub fn sum_rate(real: &ChannelRealization, sol: &BeamformingSolution, noise_linear: f64) -> f64 {
    let eff = EffectiveChannels::compute(real, &sol.v);
    sum_rate_with(&eff, sol, noise_linear)
}

pub fn sum_rate_with(
    eff: &EffectiveChannels,
    sol: &BeamformingSolution,
    noise_linear: f64,
) -> f64 {
    (0..eff.user_count())
        .map(|k| sinr_and_rate_with(eff, sol, k, noise_linear).1)
        .sum()
}

/// The numerator term `A_k = h_k^H w_k` and denominator term
/// `B_k = noise + sum_{k'} |h_k^H w_{k'}|^2` (the sum includes `k' = k`).
pub fn a_b_terms(
    real: &ChannelRealization,
    sol: &BeamformingSolution,
    k: usize,
    noise_linear: f64,
) -> (Complex64, f64) {
    let eff = EffectiveChannels::compute(real, &sol.v);
    a_b_terms_with(&eff, sol, k, noise_linear)
}

pub fn a_b_terms_with(
    eff: &EffectiveChannels,
    sol: &BeamformingSolution,
    k: usize,
    noise_linear: f64,
) -> (Complex64, f64) {
    let h_k = &eff.stacked[k];
    let a = herm_inner(h_k, &sol.stacked_w(k));
    let mut b = noise_linear;
    for other in 0..eff.user_count() {
        b += herm_inner(h_k, &sol.stacked_w(other)).norm_sqr();
    }
    (a, b)
}

/// Beamforming output living on a tape: `w[bs][user]` complex M x 1
/// variables plus the reflection vector `v`.
#[derive(Debug, Clone)]
pub struct TapeSolution {
    pub w: Vec<Vec<CVar>>,
    pub v: CVar,
}

/// Differentiable sum rate (bit/s/Hz) of a tape-valued solution against a
/// fixed channel realization.
pub fn sum_rate_on_tape(
    tape: &mut Tape,
    real: &ChannelRealization,
    sol: &TapeSolution,
    noise_linear: f64,
) -> Var {
    let bs_count = real.direct.len();
    let user_count = real.irs_user.len();

    // Effective channels as tape expressions of v.
    let mut h: Vec<Vec<CVar>> = Vec::with_capacity(bs_count);
    for i in 0..bs_count {
        let g_h = tape.cleaf(&real.bs_irs[i].hermitian());
        let mut row = Vec::with_capacity(user_count);
        for k in 0..user_count {
            let f_k = tape.cleaf(&real.irs_user[k]);
            let reflected = tape.cmul_elem(sol.v, f_k); // diag(v) f
            let through = tape.cmatmul(g_h, reflected);
            let d = tape.cleaf(&real.direct[i][k]);
            row.push(tape.cadd(d, through));
        }
        h.push(row);
    }

    // s[k][k'] = h_k^H w_k' accumulated over BSs.
    let mut rates = Vec::with_capacity(user_count);
    for k in 0..user_count {
        let mut cross: Vec<CVar> = Vec::with_capacity(user_count);
        for target in 0..user_count {
            let mut acc: Option<CVar> = None;
            for i in 0..bs_count {
                let term = tape.cdot(h[i][k], sol.w[i][target]);
                acc = Some(match acc {
                    None => term,
                    Some(prev) => tape.cadd(prev, term),
                });
            }
            cross.push(acc.expect("at least one BS"));
        }
        let desired = tape.csq_mag(cross[k]);
        let mut interference = tape.leaf_scalar(noise_linear);
        for (other, s) in cross.iter().enumerate() {
            if other == k {
                continue;
            }
            let p = tape.csq_mag(*s);
            interference = tape.add(interference, p);
        }
        let sinr = tape.div(desired, interference);
        let one_plus = tape.add_const(sinr, 1.0);
        rates.push(tape.log2(one_plus));
    }
    tape.sum_vars(&rates)
}
