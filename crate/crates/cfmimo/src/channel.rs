//! Geometric channel model: distance-based path loss, Rayleigh direct links,
//! and Rician IRS links with array-response line-of-sight components.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;

/// 3-D coordinate in meters.
pub type Point3 = [f64; 3];

/// Seedable deterministic random source (ChaCha8). The same seed always
/// reproduces the same stream on every platform.
#[derive(Debug, Clone)]
pub struct SimRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a parallel trial: seed = base seed XOR index.
    pub fn fork(&self, index: u64) -> Self {
        Self::from_seed(self.seed ^ index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Circularly symmetric complex Gaussian with unit variance, CN(0, 1).
    pub fn complex_normal(&mut self) -> Complex64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Complex64::new(s * self.standard_normal(), s * self.standard_normal())
    }

    /// Uniform phase in [0, 2*pi).
    pub fn phase(&mut self) -> f64 {
        self.uniform(0.0, 2.0 * std::f64::consts::PI)
    }
}

/// Axis-aligned user drop region in the z = 0 plane.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UserRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

/// Scenario geometry and radio parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SystemConfig {
    /// Number of cooperating base stations.
    pub bs_count: usize,
    /// Antennas per base station (uniform linear array along the x-axis).
    pub antennas_per_bs: usize,
    /// Number of single-antenna users.
    pub user_count: usize,
    /// Reflecting elements of the IRS (a perfect square; the panel is a
    /// uniform square array in the yz-plane).
    pub irs_elements: usize,
    /// Per-BS transmit power budget in dBm.
    pub p_max_dbm: f64,
    /// Noise power in dBm.
    pub noise_dbm: f64,
    /// Rician factor of the IRS-assisted links.
    pub rician_kappa: f64,
    /// Path-loss exponent of the BS-user links.
    pub alpha_bs_user: f64,
    /// Path-loss exponent of the BS-IRS links.
    pub alpha_bs_irs: f64,
    /// Path-loss exponent of the IRS-user links.
    pub alpha_irs_user: f64,
    /// Path loss in dB at the reference distance.
    pub beta0_db: f64,
    /// Reference distance in meters.
    pub reference_distance_m: f64,
    /// IRS element spacing as a fraction of the carrier wavelength.
    pub irs_spacing_wavelengths: f64,
    /// BS antenna spacing as a fraction of the carrier wavelength.
    pub bs_spacing_wavelengths: f64,
    pub bs_positions: Vec<Point3>,
    pub irs_position: Point3,
    pub user_region: UserRegion,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let s3 = 3.0f64.sqrt();
        Self {
            bs_count: 3,
            antennas_per_bs: 4,
            user_count: 3,
            irs_elements: 100,
            p_max_dbm: 15.0,
            noise_dbm: -90.0,
            rician_kappa: 10.0,
            alpha_bs_user: 3.75,
            alpha_bs_irs: 2.2,
            alpha_irs_user: 2.2,
            beta0_db: -30.0,
            reference_distance_m: 1.0,
            irs_spacing_wavelengths: 0.5,
            bs_spacing_wavelengths: 0.5,
            bs_positions: vec![
                [120.0, 0.0, 10.0],
                [60.0, -60.0 * s3, 10.0],
                [60.0, 60.0 * s3, 10.0],
            ],
            irs_position: [0.0, 0.0, 10.0],
            user_region: UserRegion {
                x: [0.0, 20.0],
                y: [-20.0, 20.0],
            },
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bs_count == 0 || self.antennas_per_bs == 0 || self.user_count == 0 {
            return Err(Error::Config("counts must be >= 1".into()));
        }
        let side = (self.irs_elements as f64).sqrt().round() as usize;
        if self.irs_elements == 0 || side * side != self.irs_elements {
            return Err(Error::Config(format!(
                "irs_elements = {} is not a perfect square",
                self.irs_elements
            )));
        }
        if !self.p_max_dbm.is_finite() || !self.noise_dbm.is_finite() {
            return Err(Error::Config("powers must be finite".into()));
        }
        if self.alpha_bs_user <= 0.0 || self.alpha_bs_irs <= 0.0 || self.alpha_irs_user <= 0.0 {
            return Err(Error::Config("path-loss exponents must be > 0".into()));
        }
        if self.rician_kappa < 0.0 {
            return Err(Error::Config("rician_kappa must be >= 0".into()));
        }
        if self.bs_positions.len() != self.bs_count {
            return Err(Error::Config(format!(
                "bs_positions has {} entries for {} BSs",
                self.bs_positions.len(),
                self.bs_count
            )));
        }
        if self.reference_distance_m <= 0.0 {
            return Err(Error::Config("reference_distance_m must be > 0".into()));
        }
        Ok(())
    }

    /// Per-BS power budget in Watts.
    pub fn p_max_linear(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    /// Noise power in Watts.
    pub fn noise_linear(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// One draw of all channels in the network.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Direct BS-user channels, indexed `[bs][user]`, each M x 1.
    pub direct: Vec<Vec<ComplexMatrix>>,
    /// BS-IRS channels, indexed `[bs]`, each L x M.
    pub bs_irs: Vec<ComplexMatrix>,
    /// IRS-user channels, indexed `[user]`, each L x 1.
    pub irs_user: Vec<ComplexMatrix>,
    /// Cascaded channels `diag(f_k) G_i`, indexed `[bs][user]`, each L x M.
    pub cascaded: Vec<Vec<ComplexMatrix>>,
    pub user_positions: Vec<Point3>,
}

/// Which array's orientation convention the angle pair feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    /// IRS panel in the yz-plane.
    IrsYzPlane,
    /// BS linear array along the x-axis.
    BsXAxis,
}

/// Large-scale path loss in dB at link distance `d_m`.
pub fn path_loss_db(d_m: f64, alpha: f64, cfg: &SystemConfig) -> Result<f64> {
    if d_m <= 0.0 {
        return Err(Error::Domain(format!("non-positive distance {d_m}")));
    }
    Ok(cfg.beta0_db - 10.0 * alpha * (d_m / cfg.reference_distance_m).log10())
}

/// Amplitude scale corresponding to a dB power gain.
fn amplitude_from_db(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Azimuth/elevation of the direction from `from` to `to`.
///
/// Elevation is measured from the xy-plane (`asin(u_z)`), azimuth from the
/// +x axis (`atan2(u_y, u_x)`); the same geometric convention serves both
/// array kinds.
pub fn angles_between(from: Point3, to: Point3, _kind: ArrayKind) -> Result<(f64, f64)> {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if norm == 0.0 {
        return Err(Error::Domain("coincident endpoints".into()));
    }
    let u = [d[0] / norm, d[1] / norm, d[2] / norm];
    Ok((u[1].atan2(u[0]), u[2].asin()))
}

fn distance(a: Point3, b: Point3) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn unit_phasor(phase: f64) -> Complex64 {
    Complex64::new(phase.cos(), phase.sin())
}

/// Array response of the square IRS panel: vertical and horizontal factors
/// combined by a Kronecker product, phase increments `2*pi*spacing*sin(el)`
/// and `2*pi*spacing*sin(az)*cos(el)`.
pub fn array_response_irs(
    azimuth: f64,
    elevation: f64,
    elements: usize,
    spacing: f64,
) -> Result<ComplexMatrix> {
    let side = (elements as f64).sqrt().round() as usize;
    if side * side != elements {
        return Err(Error::Shape(format!(
            "IRS element count {elements} is not a perfect square"
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let vertical_step = two_pi * spacing * elevation.sin();
    let horizontal_step = two_pi * spacing * azimuth.sin() * elevation.cos();
    let mut out = ComplexMatrix::zeros(elements, 1);
    for p in 0..side {
        let az_component = unit_phasor(vertical_step * p as f64);
        for q in 0..side {
            let ax_component = unit_phasor(horizontal_step * q as f64);
            out.set(p * side + q, 0, az_component * ax_component);
        }
    }
    Ok(out)
}

/// Array response of a BS uniform linear array: entries
/// `exp(j*2*pi*spacing*m*cos(az)*cos(el))`.
pub fn array_response_bs(
    azimuth: f64,
    elevation: f64,
    antennas: usize,
    spacing: f64,
) -> ComplexMatrix {
    let step = 2.0 * std::f64::consts::PI * spacing * azimuth.cos() * elevation.cos();
    ComplexMatrix::from_fn(antennas, 1, |m, _| unit_phasor(step * m as f64))
}

/// Draw a full channel realization: user positions, Rayleigh direct links,
/// and Rician IRS links scaled by their distance-based path gains.
pub fn sample_realization(cfg: &SystemConfig, rng: &mut SimRng) -> ChannelRealization {
    let (i_count, m, k_count, l) = (
        cfg.bs_count,
        cfg.antennas_per_bs,
        cfg.user_count,
        cfg.irs_elements,
    );
    let kappa = cfg.rician_kappa;
    let los_scale = (kappa / (1.0 + kappa)).sqrt();
    let nlos_scale = (1.0 / (1.0 + kappa)).sqrt();

    let user_positions: Vec<Point3> = (0..k_count)
        .map(|_| {
            [
                rng.uniform(cfg.user_region.x[0], cfg.user_region.x[1]),
                rng.uniform(cfg.user_region.y[0], cfg.user_region.y[1]),
                0.0,
            ]
        })
        .collect();

    // Direct BS-user links: i.i.d. CN(0,1) scaled by the path-loss amplitude.
    let direct: Vec<Vec<ComplexMatrix>> = (0..i_count)
        .map(|i| {
            (0..k_count)
                .map(|k| {
                    let d = distance(cfg.bs_positions[i], user_positions[k]);
                    let amp = amplitude_from_db(
                        path_loss_db(d, cfg.alpha_bs_user, cfg).expect("positive distance"),
                    );
                    ComplexMatrix::from_fn(m, 1, |_, _| amp * rng.complex_normal())
                })
                .collect()
        })
        .collect();

    // BS-IRS links: Rician with a rank-1 LOS outer product.
    let bs_irs: Vec<ComplexMatrix> = (0..i_count)
        .map(|i| {
            let (az_irs, el_irs) =
                angles_between(cfg.irs_position, cfg.bs_positions[i], ArrayKind::IrsYzPlane)
                    .expect("distinct BS/IRS positions");
            let (az_bs, el_bs) =
                angles_between(cfg.bs_positions[i], cfg.irs_position, ArrayKind::BsXAxis)
                    .expect("distinct BS/IRS positions");
            let a = array_response_irs(az_irs, el_irs, l, cfg.irs_spacing_wavelengths)
                .expect("validated element count");
            let b = array_response_bs(az_bs, el_bs, m, cfg.bs_spacing_wavelengths);
            let los = a.matmul(&b.hermitian()).expect("outer product");
            let nlos = ComplexMatrix::from_fn(l, m, |_, _| rng.complex_normal());
            let small_scale = los.scale(los_scale).add(&nlos.scale(nlos_scale));

            let d = distance(cfg.bs_positions[i], cfg.irs_position);
            let amp = amplitude_from_db(
                path_loss_db(d, cfg.alpha_bs_irs, cfg).expect("positive distance"),
            );
            small_scale.scale(amp)
        })
        .collect();

    // IRS-user links: Rician with an array-response LOS vector.
    let irs_user: Vec<ComplexMatrix> = (0..k_count)
        .map(|k| {
            let (az, el) =
                angles_between(cfg.irs_position, user_positions[k], ArrayKind::IrsYzPlane)
                    .expect("users below the IRS");
            let a = array_response_irs(az, el, l, cfg.irs_spacing_wavelengths)
                .expect("validated element count");
            let nlos = ComplexMatrix::from_fn(l, 1, |_, _| rng.complex_normal());
            let small_scale = a.scale(los_scale).add(&nlos.scale(nlos_scale));

            let d = distance(cfg.irs_position, user_positions[k]);
            let amp = amplitude_from_db(
                path_loss_db(d, cfg.alpha_irs_user, cfg).expect("positive distance"),
            );
            small_scale.scale(amp)
        })
        .collect();

    let cascaded: Vec<Vec<ComplexMatrix>> = (0..i_count)
        .map(|i| {
            (0..k_count)
                .map(|k| bs_irs[i].scale_rows(&irs_user[k]))
                .collect()
        })
        .collect();

    ChannelRealization {
        direct,
        bs_irs,
        irs_user,
        cascaded,
        user_positions,
    }
}
