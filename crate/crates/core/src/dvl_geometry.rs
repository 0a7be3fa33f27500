//! DVL beam geometry, the beam-to-velocity transform, the beam error model,
//! and least-squares velocity recovery.
//!
//! The DVL transmits four slanted beams in a Janus "x" configuration: every
//! beam shares a pitch angle `theta` off the vertical and the yaw angles are
//! spread 90 degrees apart starting at 45. Beam `i` measures the projection of
//! the DVL-frame velocity onto its unit direction.

use nalgebra::{Matrix3, Matrix4x3, Vector3, Vector4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Beam directions and derived transforms for a 4-beam Janus DVL.
#[derive(Debug, Clone)]
pub struct BeamGeometry {
    pub pitch_theta: f64,
    pub yaw_psi: [f64; 4],
    /// Unit direction of each beam, rows of `t` in beam order 1..4.
    pub directions: [Vector3<f64>; 4],
    /// Beam-to-velocity transform: `v_beam = t * v_dvl`.
    pub t: Matrix4x3<f64>,
    /// Fixed DVL-frame to body-frame alignment.
    pub c_d_to_b: Matrix3<f64>,
}

/// Default yaw set: `psi_i = (i-1)*90 + 45` degrees.
pub fn default_yaw_offsets() -> [f64; 4] {
    [45.0, 135.0, 225.0, 315.0].map(|d: f64| d.to_radians())
}

/// Builds the geometry for a pitch angle `theta` (radians, `0 < theta < 90deg`).
pub fn build_beam_geometry(
    theta: f64,
    psi_offsets: Option<[f64; 4]>,
    c_d_to_b: Option<Matrix3<f64>>,
) -> Result<BeamGeometry> {
    if !(theta > 0.0 && theta < std::f64::consts::FRAC_PI_2) || !theta.is_finite() {
        return Err(Error::InvalidGeometry(format!(
            "beam pitch must lie in (0, 90) degrees, got {} rad (T would be rank-deficient)",
            theta
        )));
    }
    let psi = psi_offsets.unwrap_or_else(default_yaw_offsets);
    let c = c_d_to_b.unwrap_or_else(Matrix3::identity);
    let ctc = c.transpose() * c;
    if (ctc - Matrix3::identity()).norm() > 1e-9 || (c.determinant() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidGeometry(
            "DVL-to-body alignment must be a proper rotation".into(),
        ));
    }

    let mut directions = [Vector3::zeros(); 4];
    let mut t = Matrix4x3::zeros();
    for i in 0..4 {
        let d = Vector3::new(
            psi[i].cos() * theta.sin(),
            psi[i].sin() * theta.sin(),
            theta.cos(),
        );
        directions[i] = d;
        t.set_row(i, &d.transpose());
    }

    let geom = BeamGeometry {
        pitch_theta: theta,
        yaw_psi: psi,
        directions,
        t,
        c_d_to_b: c,
    };
    // custom yaw sets can still collapse T below rank 3
    if (geom.t.transpose() * geom.t).determinant().abs() < 1e-12 {
        return Err(Error::InvalidGeometry(
            "beam set does not span velocity space (rank(T) < 3)".into(),
        ));
    }
    Ok(geom)
}

impl BeamGeometry {
    /// `v_beam = T v_dvl`.
    pub fn project_velocity_to_beams(&self, v_dvl: &Vector3<f64>) -> Vector4<f64> {
        self.t * v_dvl
    }

    /// Beam-to-velocity transform referred to the body frame:
    /// `v_beam = T C_b_to_d v_body = t_body v_body`.
    pub fn t_body(&self) -> Matrix4x3<f64> {
        self.t * self.c_d_to_b.transpose()
    }

    /// Least-squares velocity from all four beams:
    /// `v_hat = (T' T)^-1 T' y`.
    pub fn ls_velocity(&self, beams: &Vector4<f64>) -> Result<Vector3<f64>> {
        let tt = self.t.transpose() * self.t;
        let chol = tt
            .cholesky()
            .ok_or_else(|| Error::EstimationFailure("normal equations singular".into()))?;
        Ok(chol.solve(&(self.t.transpose() * beams)))
    }

    /// Least-squares velocity from a subset of at least three beams
    /// (0-based indices). Used by the LC path when exactly three beams hold
    /// bottom lock.
    pub fn ls_velocity_subset(&self, beams: &Vector4<f64>, indices: &[usize]) -> Result<Vector3<f64>> {
        if indices.len() < 3 {
            return Err(Error::EstimationFailure(format!(
                "need at least 3 beams for velocity recovery, got {}",
                indices.len()
            )));
        }
        let mut tt = Matrix3::zeros();
        let mut ty = Vector3::zeros();
        for &i in indices {
            let b = self.directions[i];
            tt += b * b.transpose();
            ty += b * beams[i];
        }
        let chol = tt
            .cholesky()
            .ok_or_else(|| Error::EstimationFailure("beam subset rank-deficient".into()))?;
        Ok(chol.solve(&ty))
    }

    /// `v_body = C_d_to_b v_dvl`.
    pub fn dvl_to_body(&self, v_dvl: &Vector3<f64>) -> Vector3<f64> {
        self.c_d_to_b * v_dvl
    }

    /// `v_dvl = C_d_to_b' v_body`.
    pub fn body_to_dvl(&self, v_body: &Vector3<f64>) -> Vector3<f64> {
        self.c_d_to_b.transpose() * v_body
    }
}

/// Deterministic DVL beam error model: `y = T [v (1 + s)] + b + n`.
#[derive(Debug, Clone)]
pub struct DvlErrorModel {
    /// Per-beam bias, m/s.
    pub bias: Vector4<f64>,
    /// Per-axis scale factor applied to the DVL-frame velocity.
    pub scale: Vector3<f64>,
    /// Per-beam white noise standard deviation, m/s.
    pub noise_std: Vector4<f64>,
    pub rng_seed: u64,
}

impl DvlErrorModel {
    pub fn new(bias: Vector4<f64>, scale: Vector3<f64>, noise_std: Vector4<f64>, rng_seed: u64) -> Result<Self> {
        if noise_std.iter().any(|&s| s < 0.0) {
            return Err(Error::Contract("DVL noise std must be non-negative".into()));
        }
        if scale.iter().any(|&s| s <= -1.0) {
            return Err(Error::Contract("DVL scale factor must exceed -1".into()));
        }
        Ok(Self { bias, scale, noise_std, rng_seed })
    }

    /// Shared scalar noise std on every beam.
    pub fn with_shared_noise(bias: Vector4<f64>, scale: Vector3<f64>, noise_std: f64, rng_seed: u64) -> Result<Self> {
        Self::new(bias, scale, Vector4::repeat(noise_std), rng_seed)
    }

    /// Error-free model (passthrough).
    pub fn ideal() -> Self {
        Self {
            bias: Vector4::zeros(),
            scale: Vector3::zeros(),
            noise_std: Vector4::zeros(),
            rng_seed: 0,
        }
    }
}

/// Stateful corruptor: successive calls advance the seeded noise stream.
#[derive(Debug, Clone)]
pub struct DvlCorruptor {
    model: DvlErrorModel,
    rng: ChaCha8Rng,
}

impl DvlCorruptor {
    pub fn new(model: DvlErrorModel) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
        Self { model, rng }
    }

    /// One noisy beam sample from the true DVL-frame velocity.
    pub fn corrupt_beams(&mut self, geom: &BeamGeometry, v_dvl: &Vector3<f64>) -> Vector4<f64> {
        let scaled = v_dvl.component_mul(&(Vector3::repeat(1.0) + self.model.scale));
        let mut y = geom.project_velocity_to_beams(&scaled) + self.model.bias;
        for i in 0..4 {
            y[i] += self.model.noise_std[i] * standard_normal(&mut self.rng);
        }
        y
    }
}

// Box-Muller keeps the draw count per sample fixed, so streams stay aligned
// across parameter changes.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One DVL epoch: four beam velocities and a per-beam validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DvlSample {
    pub t: f64,
    pub beams: Vector4<f64>,
    pub valid: [bool; 4],
}

impl DvlSample {
    pub fn all_valid(t: f64, beams: Vector4<f64>) -> Self {
        Self { t, beams, valid: [true; 4] }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// 0-based indices of the valid beams, in beam order.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..4).filter(|&i| self.valid[i]).collect()
    }

    /// Values of the valid beams, in beam order.
    pub fn valid_beams(&self) -> Vec<f64> {
        self.valid_indices().iter().map(|&i| self.beams[i]).collect()
    }
}
