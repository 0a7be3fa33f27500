//! 12-state error-state EKF for INS/DVL fusion.
//!
//! Error vector, stacked order: `[dv_n, eps, dba, dbg]`. Velocity error
//! couples to the accelerometer bias through `C_b^n`, attitude error to the
//! gyro bias through `-C_b^n`. The bottom six rows of `F` are zero (the biases
//! are random walks), which makes `F` nilpotent: `F^3 = 0`.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use crate::dvl_geometry::BeamGeometry;
use crate::error::{Error, Result};
use crate::strapdown::NavState;

pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec12 = SVector<f64, 12>;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Error state, stacked order `[dv_n, eps, dba, dbg]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    pub dv_n: Vector3<f64>,
    pub eps: Vector3<f64>,
    pub dba: Vector3<f64>,
    pub dbg: Vector3<f64>,
}

impl ErrorState {
    pub fn zero() -> Self {
        Self {
            dv_n: Vector3::zeros(),
            eps: Vector3::zeros(),
            dba: Vector3::zeros(),
            dbg: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vec12) -> Self {
        Self {
            dv_n: v.fixed_rows::<3>(0).into(),
            eps: v.fixed_rows::<3>(3).into(),
            dba: v.fixed_rows::<3>(6).into(),
            dbg: v.fixed_rows::<3>(9).into(),
        }
    }

    pub fn to_vector(&self) -> Vec12 {
        let mut v = Vec12::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.dv_n);
        v.fixed_rows_mut::<3>(3).copy_from(&self.eps);
        v.fixed_rows_mut::<3>(6).copy_from(&self.dba);
        v.fixed_rows_mut::<3>(9).copy_from(&self.dbg);
        v
    }
}

/// Continuous-time process noise densities, order `[n_a, n_g, n_ab, n_gb]`.
///
/// White noise stds are densities (`unit/sqrt(Hz)`); bias walks are
/// `unit/sqrt(s)`. A per-sample std at rate `f` converts by dividing by
/// `sqrt(f)`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseConfig {
    pub accel_noise_std: f64,
    pub gyro_noise_std: f64,
    pub accel_bias_walk_std: f64,
    pub gyro_bias_walk_std: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.accel_noise_std,
            self.gyro_noise_std,
            self.accel_bias_walk_std,
            self.gyro_bias_walk_std,
        ];
        if all.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::Contract("noise stds must be non-negative".into()));
        }
        Ok(())
    }

    /// Continuous Q = E[n n'] as a diagonal 12x12.
    pub fn continuous_q(&self) -> Mat12 {
        let mut q = Mat12::zeros();
        let d = [
            self.accel_noise_std,
            self.gyro_noise_std,
            self.accel_bias_walk_std,
            self.gyro_bias_walk_std,
        ];
        for (blk, s) in d.iter().enumerate() {
            for i in 0..3 {
                q[(3 * blk + i, 3 * blk + i)] = s * s;
            }
        }
        q
    }
}

/// Default initial covariance: sigma_v = 0.1 m/s, sigma_eps = 1 deg,
/// sigma_ba = 2 mg, sigma_bg = 0.1 deg/h.
pub fn default_initial_p() -> Mat12 {
    let sv = 0.1f64;
    let se = 1f64.to_radians();
    let sba = 2e-3 * 9.80665;
    let sbg = 0.1f64.to_radians() / 3600.0;
    let mut p = Mat12::zeros();
    for i in 0..3 {
        p[(i, i)] = sv * sv;
        p[(3 + i, 3 + i)] = se * se;
        p[(6 + i, 6 + i)] = sba * sba;
        p[(9 + i, 9 + i)] = sbg * sbg;
    }
    p
}

/// Covariance, pending error estimate, and the filter tuning knobs.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub p: Mat12,
    pub dx: ErrorState,
    pub noise: NoiseConfig,
    /// Truncation order of the transition-matrix power series.
    pub trans_order: usize,
    /// Variance multiplier on R entries that stem from regressed beams.
    pub regressed_r_inflation: f64,
}

impl FilterState {
    pub fn new(p0: Mat12, noise: NoiseConfig) -> Self {
        Self {
            p: p0,
            dx: ErrorState::zero(),
            noise,
            trans_order: 2,
            regressed_r_inflation: 1.0,
        }
    }
}

/// System matrix for the current attitude and nav-frame specific force.
pub fn build_f(state: &NavState, f_n: &Vector3<f64>) -> Mat12 {
    let c = state.c_b_n();
    let mut f = Mat12::zeros();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(f_n));
    f.fixed_view_mut::<3, 3>(0, 6).copy_from(&c);
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-c));
    f
}

/// Noise distribution matrix, standard pairing: velocity rows take the
/// accelerometer noise, attitude rows the gyro noise.
pub fn build_g(state: &NavState) -> Mat12 {
    let c = state.c_b_n();
    let mut g = Mat12::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&c);
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-c));
    g.fixed_view_mut::<3, 3>(6, 6).copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(9, 9).copy_from(&Matrix3::identity());
    g
}

/// Truncated power series `Phi = sum_r F^r tau^r / r!`. Order 3 is exact for
/// this F (nilpotency).
pub fn transition_matrix(f: &Mat12, tau: f64, order: usize) -> Mat12 {
    assert!(order >= 1, "series order must be at least 1");
    assert!(tau > 0.0, "tau must be positive");
    let mut phi = Mat12::identity();
    let mut term = Mat12::identity();
    for r in 1..=order {
        term = (term * f) * (tau / r as f64);
        phi += term;
    }
    phi
}

/// Trapezoidal discretization
/// `Qd = 0.5 (Phi G Q G' + G Q G' Phi') dt`, symmetrized.
pub fn discretize_q(phi: &Mat12, g: &Mat12, qc: &Mat12, dt: f64) -> Mat12 {
    assert!(dt > 0.0, "dt must be positive");
    let gqg = g * qc * g.transpose();
    let q = (phi * gqg + gqg * phi.transpose()) * (0.5 * dt);
    symmetrize(&q)
}

pub fn symmetrize(m: &Mat12) -> Mat12 {
    (m + m.transpose()) * 0.5
}

fn ensure_psd(p: &Mat12, what: &str) -> Result<()> {
    // Cholesky of P + tol I certifies min eigenvalue >= -tol
    let shifted = p + Mat12::identity() * 1e-9;
    if shifted.cholesky().is_none() {
        return Err(Error::Numerical(format!("covariance lost positive semidefiniteness in {what}")));
    }
    Ok(())
}

/// Prediction: zero the error state and propagate the covariance.
pub fn predict(fs: &mut FilterState, phi: &Mat12, qd: &Mat12) -> Result<()> {
    fs.dx = ErrorState::zero();
    fs.p = symmetrize(&(phi * fs.p * phi.transpose() + qd));
    ensure_psd(&fs.p, "predict")
}

/// LC measurement matrix `[C_n^b, -C_n^b [v^n x], 0, 0]`.
pub fn build_h_lc(state: &NavState) -> DMatrix<f64> {
    let cnb = state.c_n_b();
    let vblock = -cnb * skew(&state.vel_n);
    let mut h = DMatrix::zeros(3, 12);
    h.view_mut((0, 0), (3, 3)).copy_from(&cnb);
    h.view_mut((0, 3), (3, 3)).copy_from(&vblock);
    h
}

/// TC measurement matrix: one row per requested beam (0-based indices),
/// `b_i' C_n^b` blocks with the DVL-to-body alignment folded in.
pub fn build_h_tc(state: &NavState, geom: &BeamGeometry, beam_indices: &[usize]) -> Result<DMatrix<f64>> {
    if beam_indices.is_empty() {
        return Err(Error::Contract("TC update needs at least one beam".into()));
    }
    let t_body = geom.t_body();
    let h_lc = build_h_lc(state);
    let mut h = DMatrix::zeros(beam_indices.len(), 12);
    for (r, &i) in beam_indices.iter().enumerate() {
        let b: nalgebra::RowVector3<f64> = t_body.row(i).into();
        let row = b * h_lc.view((0, 0), (3, 12));
        h.row_mut(r).copy_from(&row);
    }
    Ok(h)
}

/// LC innovation `dz = C_n^b v_hat^n - v_b_dvl`.
pub fn lc_innovation(state: &NavState, v_b_dvl: &Vector3<f64>) -> Vector3<f64> {
    state.c_n_b() * state.vel_n - v_b_dvl
}

/// TC innovation: per-beam predicted beam velocity minus measured beam value,
/// stacked in index order.
pub fn tc_innovation(
    state: &NavState,
    geom: &BeamGeometry,
    beams: &nalgebra::Vector4<f64>,
    beam_indices: &[usize],
) -> Result<DVector<f64>> {
    if beam_indices.is_empty() {
        return Err(Error::Contract("TC innovation needs at least one beam".into()));
    }
    let t_body = geom.t_body();
    let v_b_pred = state.c_n_b() * state.vel_n;
    let mut dz = DVector::zeros(beam_indices.len());
    for (r, &i) in beam_indices.iter().enumerate() {
        let pred = t_body.row(i).transpose().dot(&v_b_pred);
        dz[r] = pred - beams[i];
    }
    Ok(dz)
}

/// Result of a measurement update: innovation covariance and the normalized
/// innovation squared for consistency monitoring.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub s: DMatrix<f64>,
    pub nis: f64,
}

/// Kalman update. Stores the posterior error estimate and covariance in `fs`.
pub fn update(
    fs: &mut FilterState,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    innovation: &DVector<f64>,
) -> Result<UpdateOutcome> {
    let m = h.nrows();
    if r.nrows() != m || r.ncols() != m || innovation.len() != m {
        return Err(Error::Contract("update dimensions disagree".into()));
    }
    let p = DMatrix::from_fn(12, 12, |i, j| fs.p[(i, j)]);
    let s = h * &p * h.transpose() + r;
    let s_chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::UpdateRejected("innovation covariance singular".into()))?;
    let s_inv = s_chol.inverse();
    let k = &p * h.transpose() * &s_inv;

    let dx_vec = &k * innovation;
    let ikh = DMatrix::<f64>::identity(12, 12) - &k * h;
    let p_post = &ikh * &p;

    let nis = (innovation.transpose() * &s_inv * innovation)[(0, 0)];

    let mut p12 = Mat12::zeros();
    for i in 0..12 {
        for j in 0..12 {
            p12[(i, j)] = p_post[(i, j)];
        }
    }
    fs.p = symmetrize(&p12);
    ensure_psd(&fs.p, "update")?;
    let mut dx = Vec12::zeros();
    for i in 0..12 {
        dx[i] = dx_vec[i];
    }
    fs.dx = ErrorState::from_vector(&dx);
    Ok(UpdateOutcome { s, nis })
}

/// Two-sided 95% chi-square acceptance band (2.5% and 97.5% quantiles).
pub fn chi2_95_band(dof: usize) -> (f64, f64) {
    match dof {
        1 => (0.000982069, 5.02389),
        2 => (0.0506356, 7.37776),
        3 => (0.215795, 9.34840),
        4 => (0.484419, 11.1433),
        _ => panic!("unsupported dof {dof}"),
    }
}
