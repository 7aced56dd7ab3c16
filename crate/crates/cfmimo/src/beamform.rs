//! Benchmark beamformers and the normalization layers shared with the GNN
//! output heads.

use num_complex::Complex64;

use crate::channel::{SimRng, SystemConfig};
use crate::error::{Error, Result};
use crate::numerics::solve::hermitian_solve_pinv;
use crate::numerics::tape::{CVar, Tape, Var};
use crate::numerics::{ComplexMatrix, RealTensor};
use crate::rate::{BeamformingSolution, EffectiveChannels};

/// Centralized zero-forcing on the stacked effective channels.
#[derive(Debug, Clone)]
pub struct GlobalZf {
    /// Raw pseudo-inverse `H (H^H H)^{-1}`, IM x K.
    pub raw: ComplexMatrix,
    /// Per-(BS, user) unit-norm direction blocks.
    pub directions: Vec<Vec<ComplexMatrix>>,
}

/// Compute the global ZF precoder and split it into per-BS unit-norm
/// direction vectors. Requires `IM >= K` and a full-rank stacked channel.
pub fn global_zf(eff: &EffectiveChannels, antennas_per_bs: usize) -> Result<GlobalZf> {
    let h = eff.stacked_matrix();
    let raw = hermitian_solve_pinv(&h)?;
    let bs_count = eff.bs_count();
    let user_count = eff.user_count();
    let mut directions = Vec::with_capacity(bs_count);
    for i in 0..bs_count {
        let mut row = Vec::with_capacity(user_count);
        for k in 0..user_count {
            let block = raw.col(k).row_block(i * antennas_per_bs, antennas_per_bs);
            let norm = block.frobenius_norm();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!(
                    "zero ZF block for BS {i}, user {k}"
                )));
            }
            row.push(block.scale(1.0 / norm));
        }
        directions.push(row);
    }
    Ok(GlobalZf { raw, directions })
}

/// Equal-power global ZF benchmark: each raw ZF column is normalized as a
/// whole (which preserves the interference nulling) and all users get the
/// same power, chosen as large as the per-BS budgets allow.
pub fn global_zf_equal_power(
    eff: &EffectiveChannels,
    cfg: &SystemConfig,
    v: &ComplexMatrix,
) -> Result<BeamformingSolution> {
    let h = eff.stacked_matrix();
    let raw = hermitian_solve_pinv(&h)?;
    let m = cfg.antennas_per_bs;
    let user_count = eff.user_count();
    let bs_count = eff.bs_count();

    // Unit-norm stacked columns keep H^H W diagonal.
    let mut unit_cols = Vec::with_capacity(user_count);
    for k in 0..user_count {
        let col = raw.col(k);
        let norm = col.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("zero ZF column for user {k}")));
        }
        unit_cols.push(col.scale(1.0 / norm));
    }

    // Largest per-user power that keeps every BS within its budget.
    let mut max_bs_load: f64 = 0.0;
    for i in 0..bs_count {
        let load: f64 = unit_cols
            .iter()
            .map(|col| col.row_block(i * m, m).norm_sqr())
            .sum();
        max_bs_load = max_bs_load.max(load);
    }
    let per_user_power = cfg.p_max_linear() / max_bs_load;
    let amp = per_user_power.sqrt();

    let w = (0..bs_count)
        .map(|i| {
            (0..user_count)
                .map(|k| unit_cols[k].row_block(i * m, m).scale(amp))
                .collect()
        })
        .collect();
    Ok(BeamformingSolution { w, v: v.clone() })
}

/// Scale unit-norm directions so each user gets `P_max / K` from every BS;
/// per-BS transmit power is then exactly `P_max`.
pub fn equal_power_solution(
    directions: &[Vec<ComplexMatrix>],
    cfg: &SystemConfig,
    v: &ComplexMatrix,
) -> BeamformingSolution {
    let amp = (cfg.p_max_linear() / cfg.user_count as f64).sqrt();
    let w = directions
        .iter()
        .map(|per_user| per_user.iter().map(|d| d.scale(amp)).collect())
        .collect();
    BeamformingSolution { w, v: v.clone() }
}

/// Zero-forcing from BS `i`'s own M x K channel block. Requires `M >= K`;
/// smaller arrays are reported as infeasible and the method is skipped.
pub fn local_zf(eff: &EffectiveChannels, i: usize) -> Result<Vec<ComplexMatrix>> {
    let local = eff.local_matrix(i);
    if local.rows() < local.cols() {
        return Err(Error::Infeasible(format!(
            "local ZF needs M >= K, got M = {}, K = {}",
            local.rows(),
            local.cols()
        )));
    }
    let raw = hermitian_solve_pinv(&local)?;
    let mut directions = Vec::with_capacity(raw.cols());
    for k in 0..raw.cols() {
        let col = raw.col(k);
        let norm = col.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!(
                "zero local ZF column for user {k}"
            )));
        }
        directions.push(col.scale(1.0 / norm));
    }
    Ok(directions)
}

/// Matched-filter directions: each beam aligns with its own channel.
pub fn mrt(eff: &EffectiveChannels) -> Result<Vec<Vec<ComplexMatrix>>> {
    let mut out = Vec::with_capacity(eff.bs_count());
    for (i, row) in eff.per_bs.iter().enumerate() {
        let mut per_user = Vec::with_capacity(row.len());
        for (k, h) in row.iter().enumerate() {
            let norm = h.frobenius_norm();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!(
                    "zero channel for BS {i}, user {k}"
                )));
            }
            per_user.push(h.scale(1.0 / norm));
        }
        out.push(per_user);
    }
    Ok(out)
}

/// Reflection vector with i.i.d. phases uniform on [0, 2*pi).
pub fn random_irs_phases(elements: usize, rng: &mut SimRng) -> ComplexMatrix {
    ComplexMatrix::from_fn(elements, 1, |_, _| {
        let theta = rng.phase();
        Complex64::new(theta.cos(), theta.sin())
    })
}

/// Scale an M x K beamforming matrix onto the power budget:
/// `W = sqrt(P_max) * W'' / ||W''||_F`, so that `Tr(W W^H) = P_max`.
pub fn normalize_bs_power(raw: &ComplexMatrix, p_max_linear: f64) -> Result<ComplexMatrix> {
    let norm = raw.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("all-zero beamforming matrix".into()));
    }
    Ok(raw.scale(p_max_linear.sqrt() / norm))
}

/// Map a 2L-long real vector onto unit-modulus reflection coefficients:
/// `v_l = (x_l + j x_{l+L}) / sqrt(x_l^2 + x_{l+L}^2)`.
pub fn normalize_unit_modulus(raw: &RealTensor) -> Result<ComplexMatrix> {
    let n = raw.len();
    assert_eq!(n % 2, 0, "unit-modulus input length must be even");
    let l = n / 2;
    let mut out = ComplexMatrix::zeros(l, 1);
    for e in 0..l {
        let re = raw.data()[e];
        let im = raw.data()[e + l];
        let mag = (re * re + im * im).sqrt();
        if mag == 0.0 {
            return Err(Error::Degenerate(format!(
                "zero real/imaginary pair at element {e}"
            )));
        }
        out.set(e, 0, Complex64::new(re / mag, im / mag));
    }
    Ok(out)
}

/// Tape version of [`normalize_bs_power`]; `raw` is a complex M x K variable.
pub fn normalize_bs_power_on_tape(tape: &mut Tape, raw: CVar, p_max_linear: f64) -> CVar {
    let re_sq = tape.mul(raw.re, raw.re);
    let im_sq = tape.mul(raw.im, raw.im);
    let re_sum = tape.sum_elems(re_sq);
    let im_sum = tape.sum_elems(im_sq);
    let total = tape.add(re_sum, im_sum);
    let norm = tape.sqrt(total);
    let re_div = tape.div_scalar(raw.re, norm);
    let im_div = tape.div_scalar(raw.im, norm);
    let amp = p_max_linear.sqrt();
    CVar {
        re: tape.scale(re_div, amp),
        im: tape.scale(im_div, amp),
    }
}

/// Tape version of [`normalize_unit_modulus`]; `raw` is a 2L x 1 variable
/// already split into its first and second halves.
pub fn normalize_unit_modulus_on_tape(tape: &mut Tape, re_half: Var, im_half: Var) -> CVar {
    let re_sq = tape.mul(re_half, re_half);
    let im_sq = tape.mul(im_half, im_half);
    let sum = tape.add(re_sq, im_sq);
    let mag = tape.sqrt(sum);
    CVar {
        re: tape.div(re_half, mag),
        im: tape.div(im_half, mag),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_realization, SimRng, SystemConfig};
    use crate::numerics::herm_inner;

    fn cfg_with(i: usize, m: usize, k: usize, l: usize) -> SystemConfig {
        let base = SystemConfig::default();
        SystemConfig {
            bs_count: i,
            antennas_per_bs: m,
            user_count: k,
            irs_elements: l,
            bs_positions: base.bs_positions[..i].to_vec(),
            ..base
        }
    }

    fn effective(cfg: &SystemConfig, seed: u64) -> (EffectiveChannels, ComplexMatrix) {
        let mut rng = SimRng::from_seed(seed);
        let real = sample_realization(cfg, &mut rng);
        let v = random_irs_phases(cfg.irs_elements, &mut rng);
        (EffectiveChannels::compute(&real, &v), v)
    }

    #[test]
    fn global_zf_nulls_cross_terms() {
        let cfg = cfg_with(2, 4, 3, 4); // IM = 8 >= K = 3
        let (eff, v) = effective(&cfg, 21);
        let sol = global_zf_equal_power(&eff, &cfg, &v).unwrap();
        for k in 0..3 {
            for other in 0..3 {
                if k == other {
                    continue;
                }
                let cross = herm_inner(&eff.stacked[k], &sol.stacked_w(other)).norm();
                let scale = eff.stacked[k].frobenius_norm() * sol.stacked_w(other).frobenius_norm();
                assert!(cross / scale < 1e-8, "leak {k}->{other}: {}", cross / scale);
            }
        }
    }

    #[test]
    fn global_zf_identity_channel() {
        // Stacked H = I (IM = K): the raw precoder is the identity and each
        // block normalizes to a unit vector.
        let identity = ComplexMatrix::identity(4);
        let eff = EffectiveChannels {
            per_bs: vec![(0..4).map(|k| identity.col(k)).collect()],
            stacked: (0..4).map(|k| identity.col(k)).collect(),
        };
        let zf = global_zf(&eff, 4).unwrap();
        assert!(zf.raw.max_abs_diff(&identity) < 1e-12);
        for k in 0..4 {
            let dir = &zf.directions[0][k];
            assert!((dir.frobenius_norm() - 1.0).abs() < 1e-12);
            assert!(dir.max_abs_diff(&identity.col(k)) < 1e-12);
        }
    }

    #[test]
    fn global_zf_single_user_is_matched_filter_per_block() {
        // K = 1: the ZF column is proportional to the channel itself.
        let cfg = cfg_with(2, 3, 1, 4);
        let (eff, _) = effective(&cfg, 22);
        let zf = global_zf(&eff, cfg.antennas_per_bs).unwrap();
        for i in 0..2 {
            let h = &eff.per_bs[i][0];
            let alignment =
                herm_inner(h, &zf.directions[i][0]).norm() / h.frobenius_norm();
            assert!((alignment - 1.0).abs() < 1e-10, "BS {i}: {alignment}");
        }
    }

    #[test]
    fn global_zf_budget_binds_on_loaded_bs() {
        let cfg = cfg_with(3, 4, 3, 4);
        let (eff, v) = effective(&cfg, 23);
        let sol = global_zf_equal_power(&eff, &cfg, &v).unwrap();
        let p_max = cfg.p_max_linear();
        let mut max_power: f64 = 0.0;
        for per_user in &sol.w {
            let p: f64 = per_user.iter().map(|w| w.norm_sqr()).sum();
            assert!(p <= p_max * (1.0 + 1e-12));
            max_power = max_power.max(p);
        }
        assert!((max_power - p_max).abs() / p_max < 1e-12);
        // Equal per-user power.
        let p0: f64 = (0..3).map(|i| sol.w[i][0].norm_sqr()).sum();
        for k in 1..3 {
            let pk: f64 = (0..3).map(|i| sol.w[i][k].norm_sqr()).sum();
            assert!((pk - p0).abs() / p0 < 1e-12);
        }
    }

    #[test]
    fn equal_power_splits_budget_exactly() {
        let cfg = cfg_with(2, 4, 4, 4);
        let (eff, v) = effective(&cfg, 24);
        let directions = mrt(&eff).unwrap();
        let sol = equal_power_solution(&directions, &cfg, &v);
        let p_max = cfg.p_max_linear();
        for per_user in &sol.w {
            for w in per_user {
                assert!((w.norm_sqr() - p_max / 4.0).abs() < 1e-12 * p_max);
            }
            let total: f64 = per_user.iter().map(|w| w.norm_sqr()).sum();
            assert!((total - p_max).abs() < 1e-12 * p_max);
        }
        sol.validate(p_max).unwrap();
    }

    #[test]
    fn local_zf_nulls_local_cross_terms() {
        let cfg = cfg_with(2, 4, 2, 4);
        let (eff, _) = effective(&cfg, 25);
        for i in 0..2 {
            let dirs = local_zf(&eff, i).unwrap();
            for k in 0..2 {
                for other in 0..2 {
                    if k == other {
                        continue;
                    }
                    let cross = herm_inner(&eff.per_bs[i][k], &dirs[other]).norm();
                    assert!(cross < 1e-10, "BS {i} leak {k}->{other}: {cross}");
                }
            }
        }
    }

    #[test]
    fn local_zf_single_bs_matches_global() {
        let cfg = cfg_with(1, 4, 2, 4);
        let (eff, _) = effective(&cfg, 26);
        let global = global_zf(&eff, cfg.antennas_per_bs).unwrap();
        let local = local_zf(&eff, 0).unwrap();
        for k in 0..2 {
            assert!(global.directions[0][k].max_abs_diff(&local[k]) < 1e-10);
        }
    }

    #[test]
    fn local_zf_infeasible_when_undersized() {
        let cfg = cfg_with(2, 2, 3, 4);
        let (eff, _) = effective(&cfg, 27);
        assert!(matches!(local_zf(&eff, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn mrt_single_antenna_scalar_channel() {
        // M = 1 with a real positive channel: the direction is exactly 1.
        let eff = EffectiveChannels {
            per_bs: vec![vec![ComplexMatrix::from_fn(1, 1, |_, _| {
                Complex64::new(3.5, 0.0)
            })]],
            stacked: vec![ComplexMatrix::from_fn(1, 1, |_, _| Complex64::new(3.5, 0.0))],
        };
        let dirs = mrt(&eff).unwrap();
        assert!((dirs[0][0].get(0, 0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn mrt_directions_unit_norm_and_k1_collinear_with_zf() {
        let cfg = cfg_with(2, 4, 1, 4);
        let (eff, _) = effective(&cfg, 28);
        let dirs = mrt(&eff).unwrap();
        for per_user in &dirs {
            for d in per_user {
                assert!((d.frobenius_norm() - 1.0).abs() < 1e-12);
            }
        }
        // K = 1: MRT and local ZF directions agree up to a phase.
        for i in 0..2 {
            let zf = local_zf(&eff, i).unwrap();
            let overlap = herm_inner(&dirs[i][0], &zf[0]).norm();
            assert!((overlap - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn random_phases_unit_modulus_and_reproducible() {
        let mut rng = SimRng::from_seed(31);
        let v = random_irs_phases(64, &mut rng);
        for l in 0..64 {
            assert!((v.get(l, 0).norm() - 1.0).abs() < 1e-12);
        }
        let again = random_irs_phases(64, &mut SimRng::from_seed(31));
        assert_eq!(v, random_irs_phases(64, &mut SimRng::from_seed(31)));
        assert!(v.max_abs_diff(&again) < 1e-15);
    }

    #[test]
    fn random_phase_mean_is_small() {
        let mut rng = SimRng::from_seed(32);
        let mut acc = Complex64::new(0.0, 0.0);
        let n = 100_000;
        for _ in 0..n {
            let theta = rng.phase();
            acc += Complex64::new(theta.cos(), theta.sin());
        }
        assert!((acc / n as f64).norm() < 0.02);
    }

    #[test]
    fn power_normalization_hits_budget() {
        let mut rng = SimRng::from_seed(33);
        let raw = ComplexMatrix::from_fn(4, 3, |_, _| rng.complex_normal());
        // Unit Frobenius norm with unit budget stays unchanged.
        let unit = raw.scale(1.0 / raw.frobenius_norm());
        let out = normalize_bs_power(&unit, 1.0).unwrap();
        assert!(out.max_abs_diff(&unit) < 1e-12);
        // Any input lands exactly on the budget.
        let p_max = 0.7;
        let out = normalize_bs_power(&raw, p_max).unwrap();
        assert!((out.norm_sqr() - p_max).abs() < 1e-12);
        // Scale invariance.
        let out7 = normalize_bs_power(&raw.scale(7.0), p_max).unwrap();
        assert!(out.max_abs_diff(&out7) < 1e-12);
        // Degenerate input.
        assert!(normalize_bs_power(&ComplexMatrix::zeros(2, 2), 1.0).is_err());
    }

    #[test]
    fn unit_modulus_normalization() {
        let v = normalize_unit_modulus(&RealTensor::column(vec![1.0, 0.0])).unwrap();
        assert!((v.get(0, 0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let v = normalize_unit_modulus(&RealTensor::column(vec![1.0, 1.0])).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v.get(0, 0) - Complex64::new(s, s)).norm() < 1e-15);

        let mut rng = SimRng::from_seed(34);
        let raw = RealTensor::column((0..16).map(|_| rng.standard_normal()).collect());
        let v = normalize_unit_modulus(&raw).unwrap();
        for l in 0..8 {
            assert!((v.get(l, 0).norm() - 1.0).abs() < 1e-12);
        }
        assert!(normalize_unit_modulus(&RealTensor::column(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn tape_normalizations_match_plain_and_gradcheck() {
        let mut rng = SimRng::from_seed(35);
        let raw = ComplexMatrix::from_fn(3, 2, |_, _| rng.complex_normal());
        let p_max = 0.5;
        let plain = normalize_bs_power(&raw, p_max).unwrap();

        let mut tape = Tape::new();
        let traw = tape.cleaf(&raw);
        let out = normalize_bs_power_on_tape(&mut tape, traw, p_max);
        assert!(tape.cvalue(out).max_abs_diff(&plain) < 1e-12);

        // Gradient of a scalar probe against finite differences.
        let probe_re = tape.sum_elems(out.re);
        let probe_im = tape.sum_elems(out.im);
        let probe = tape.add(probe_re, probe_im);
        tape.backward(probe).unwrap();
        let h = 1e-6;
        for (r, c) in [(0usize, 0usize), (2, 1)] {
            let mut plus = raw.clone();
            let mut z = plus.get(r, c);
            z.re += h;
            plus.set(r, c, z);
            let mut minus = raw.clone();
            let mut z = minus.get(r, c);
            z.re -= h;
            minus.set(r, c, z);
            let f = |m: &ComplexMatrix| {
                let n = normalize_bs_power(m, p_max).unwrap();
                n.re().sum() + n.im().sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let analytic = tape.adjoint(traw.re).get(r, c);
            assert!(
                (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-9) < 1e-5,
                "entry ({r},{c}): fd {fd} vs analytic {analytic}"
            );
        }

        // Unit-modulus layer on the tape.
        let raw2 = RealTensor::column((0..8).map(|_| rng.standard_normal()).collect());
        let plain_v = normalize_unit_modulus(&raw2).unwrap();
        let mut tape = Tape::new();
        let re = tape.leaf(RealTensor::column(raw2.data()[..4].to_vec()));
        let im = tape.leaf(RealTensor::column(raw2.data()[4..].to_vec()));
        let v = normalize_unit_modulus_on_tape(&mut tape, re, im);
        assert!(tape.cvalue(v).max_abs_diff(&plain_v) < 1e-12);

        let probe_re = tape.sum_elems(v.re);
        let probe_im = tape.sum_elems(v.im);
        let probe = tape.add(probe_re, probe_im);
        tape.backward(probe).unwrap();
        let h = 1e-6;
        for idx in [0usize, 3] {
            let mut plus = raw2.clone();
            plus.data_mut()[idx] += h;
            let mut minus = raw2.clone();
            minus.data_mut()[idx] -= h;
            let f = |t: &RealTensor| {
                let n = normalize_unit_modulus(t).unwrap();
                n.re().sum() + n.im().sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let analytic = tape.adjoint(re).data()[idx];
            assert!(
                (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-9) < 1e-5,
                "slot {idx}: fd {fd} vs analytic {analytic}"
            );
        }
    }
}
