//! Strapdown INS mechanization in a flat-Earth local NED frame.
//!
//! Attitude is stored as a unit quaternion (body to nav) and exposed as
//! `C_b^n` where the filter needs it. Earth rotation and transport rate are
//! neglected; gravity is a constant NED vector.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::ekf::ErrorState;
use crate::error::{Error, Result};

/// Standard gravity, NED down component.
pub const GRAVITY: f64 = 9.80665;

pub fn gravity_n() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, GRAVITY)
}

/// Full navigation solution plus the current sensor bias estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub t: f64,
    /// Position, meters NED.
    pub pos_n: Vector3<f64>,
    /// Velocity, m/s NED.
    pub vel_n: Vector3<f64>,
    /// Attitude body -> nav.
    pub att: UnitQuaternion<f64>,
    pub accel_bias_hat: Vector3<f64>,
    pub gyro_bias_hat: Vector3<f64>,
}

impl NavState {
    pub fn new(t: f64, pos_n: Vector3<f64>, vel_n: Vector3<f64>, att: UnitQuaternion<f64>) -> Self {
        Self {
            t,
            pos_n,
            vel_n,
            att,
            accel_bias_hat: Vector3::zeros(),
            gyro_bias_hat: Vector3::zeros(),
        }
    }

    pub fn c_b_n(&self) -> Matrix3<f64> {
        self.att.to_rotation_matrix().into_inner()
    }

    pub fn c_n_b(&self) -> Matrix3<f64> {
        self.c_b_n().transpose()
    }

    /// (roll, pitch, yaw) in radians.
    pub fn rpy(&self) -> (f64, f64, f64) {
        self.att.euler_angles()
    }
}

/// One IMU epoch: specific force and angular rate in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub specific_force_b: Vector3<f64>,
    pub angular_rate_b: Vector3<f64>,
}

/// Propagates the navigation state over one IMU interval.
///
/// Bias-compensated rates are used; position integrates the pre-update
/// velocity plus the half-acceleration term, which makes the double
/// integration trapezoidal in velocity.
pub fn propagate(
    state: &NavState,
    imu: &ImuSample,
    dt: f64,
    gravity: &Vector3<f64>,
) -> Result<NavState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::Contract(format!("propagate dt must be in (0, 0.1] s, got {dt}")));
    }
    let f_b = imu.specific_force_b - state.accel_bias_hat;
    let w_b = imu.angular_rate_b - state.gyro_bias_hat;

    let a_n = state.c_b_n() * f_b + gravity;
    let vel = state.vel_n + a_n * dt;
    let pos = state.pos_n + state.vel_n * dt + a_n * (0.5 * dt * dt);

    let dq = UnitQuaternion::from_scaled_axis(w_b * dt);
    let att = UnitQuaternion::new_normalize((state.att * dq).into_inner());

    Ok(NavState {
        t: state.t + dt,
        pos_n: pos,
        vel_n: vel,
        att,
        accel_bias_hat: state.accel_bias_hat,
        gyro_bias_hat: state.gyro_bias_hat,
    })
}

/// Closed-loop feedback of the posterior error estimate into the full state.
///
/// Returns the corrected state and a flag that is set when the misalignment
/// magnitude exceeds 0.5 rad, violating the small-angle assumption behind the
/// measurement linearization. The caller must reset the filter error state to
/// zero afterwards.
pub fn apply_error_correction(state: &NavState, dx: &ErrorState) -> (NavState, bool) {
    let large_misalignment = dx.eps.norm() > 0.5;
    // estimate = (I - [eps x]) truth, so de-erroring rotates by +eps
    let att = UnitQuaternion::from_scaled_axis(dx.eps) * state.att;
    (
        NavState {
            t: state.t,
            pos_n: state.pos_n,
            vel_n: state.vel_n - dx.dv_n,
            att: UnitQuaternion::new_normalize(att.into_inner()),
            accel_bias_hat: state.accel_bias_hat + dx.dba,
            gyro_bias_hat: state.gyro_bias_hat + dx.dbg,
        },
        large_misalignment,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn level_state() -> NavState {
        NavState::new(0.0, Vector3::zeros(), Vector3::zeros(), UnitQuaternion::identity())
    }

    #[test]
    fn stationary_force_cancellation() {
        let g = gravity_n();
        let mut s = level_state();
        let imu = ImuSample {
            t: 0.0,
            specific_force_b: -g,
            angular_rate_b: Vector3::zeros(),
        };
        for _ in 0..100 {
            s = propagate(&s, &imu, 0.01, &g).unwrap();
            assert!(s.vel_n.norm() < 1e-12);
            assert!(s.pos_n.norm() < 1e-12);
        }
    }

    #[test]
    fn pure_rotation_heading() {
        let g = gravity_n();
        let mut s = level_state();
        let imu = ImuSample {
            t: 0.0,
            specific_force_b: Vector3::zeros(),
            angular_rate_b: Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
        };
        for _ in 0..100 {
            s = propagate(&s, &imu, 0.01, &g).unwrap();
        }
        let (_, _, yaw) = s.rpy();
        assert_abs_diff_eq!(yaw.to_degrees(), 90.0, epsilon = 0.01);
    }

    #[test]
    fn constant_acceleration_kinematics() {
        let g = gravity_n();
        let mut s = level_state();
        // f^n = [1,0,0] on top of gravity cancellation, level attitude
        let imu = ImuSample {
            t: 0.0,
            specific_force_b: Vector3::new(1.0, 0.0, 0.0) - g,
            angular_rate_b: Vector3::zeros(),
        };
        for _ in 0..1000 {
            s = propagate(&s, &imu, 0.01, &g).unwrap();
        }
        assert!((s.vel_n - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-6);
        assert!((s.pos_n - Vector3::new(50.0, 0.0, 0.0)).norm() < 1e-3);
    }

    #[test]
    fn quaternion_norm_stays_unit() {
        let g = gravity_n();
        let mut s = level_state();
        let imu = ImuSample {
            t: 0.0,
            specific_force_b: Vector3::new(0.1, -0.2, -9.7),
            angular_rate_b: Vector3::new(0.03, -0.01, 0.2),
        };
        for _ in 0..10_000 {
            s = propagate(&s, &imu, 0.01, &g).unwrap();
            assert!((s.att.into_inner().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn propagate_is_deterministic() {
        let g = gravity_n();
        let imu = ImuSample {
            t: 0.0,
            specific_force_b: Vector3::new(0.3, 0.1, -9.8),
            angular_rate_b: Vector3::new(0.01, 0.02, 0.03),
        };
        let a = propagate(&level_state(), &imu, 0.01, &g).unwrap();
        let b = propagate(&level_state(), &imu, 0.01, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_dt_rejected() {
        let g = gravity_n();
        let imu = ImuSample {
            t: 0.0,
            specific_force_b: Vector3::zeros(),
            angular_rate_b: Vector3::zeros(),
        };
        assert!(propagate(&level_state(), &imu, 0.0, &g).is_err());
        assert!(propagate(&level_state(), &imu, -0.01, &g).is_err());
        assert!(propagate(&level_state(), &imu, 0.2, &g).is_err());
    }

    #[test]
    fn zero_correction_is_identity() {
        let s = level_state();
        let (c, warn) = apply_error_correction(&s, &ErrorState::zero());
        assert_eq!(c, s);
        assert!(!warn);
    }

    #[test]
    fn velocity_correction_sign() {
        let mut s = level_state();
        s.vel_n = Vector3::new(1.0, 2.0, 3.0);
        let dx = ErrorState {
            dv_n: Vector3::new(0.1, 0.0, 0.0),
            ..ErrorState::zero()
        };
        let (c, _) = apply_error_correction(&s, &dx);
        assert_eq!(c.vel_n, Vector3::new(0.9, 2.0, 3.0));
    }

    #[test]
    fn small_angle_attitude_correction() {
        let s = NavState::new(
            0.0,
            Vector3::zeros(),
            Vector3::zeros(),
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7),
        );
        let eps = Vector3::new(0.0, 0.0, 0.01);
        let dx = ErrorState { eps, ..ErrorState::zero() };
        let (c, warn) = apply_error_correction(&s, &dx);
        assert!(!warn);
        // first-order: C_n^b_new ~ C_n^b_old (I - [eps x])
        let skew = Matrix3::new(
            0.0, -eps[2], eps[1],
            eps[2], 0.0, -eps[0],
            -eps[1], eps[0], 0.0,
        );
        let expect = s.c_n_b() * (Matrix3::identity() - skew);
        assert!((c.c_n_b() - expect).norm() < 1e-4);
    }

    #[test]
    fn large_misalignment_flagged() {
        let dx = ErrorState {
            eps: Vector3::new(0.6, 0.0, 0.0),
            ..ErrorState::zero()
        };
        let (_, warn) = apply_error_correction(&level_state(), &dx);
        assert!(warn);
    }
}
