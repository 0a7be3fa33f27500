//! Ground-truth trajectory generation and sensor synthesis.
//!
//! Truth attitude is integrated with the same quaternion recursion the
//! strapdown mechanization uses, and the synthesized specific force is the
//! exact inverse of that mechanization, so a noise-free, bias-free IMU stream
//! fed back through `strapdown::propagate` reproduces the truth velocity.

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dvl_geometry::{
    build_beam_geometry, standard_normal, BeamGeometry, DvlCorruptor, DvlErrorModel, DvlSample,
};
use crate::error::{Error, Result};
use crate::regressor::MissingPattern;
use crate::strapdown::{gravity_n, ImuSample, NavState};

/// Maximum commanded speed, m/s.
pub const MAX_SPEED: f64 = 4.0;
/// Speed ramp limit between legs, m/s^2.
const ACCEL_LIMIT: f64 = 0.5;
/// Pitch slew limit, rad/s.
const PITCH_RATE_LIMIT: f64 = 5.0f64.to_radians();

/// One trajectory leg. Speed is the commanded forward speed; transitions ramp
/// at a fixed acceleration limit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LegKind {
    /// Level flight, pitch ramps back to zero.
    Straight,
    /// Level turn at a constant yaw rate (degrees per second).
    Turn { yaw_rate_dps: f64 },
    /// Ramp to and hold a pitch angle (degrees, positive nose-down dive uses
    /// a negative pitch here per NED convention).
    Dive { pitch_deg: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Leg {
    #[serde(flatten)]
    pub kind: LegKind,
    pub duration: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectorySpec {
    pub legs: Vec<Leg>,
    #[serde(default)]
    pub init_yaw_deg: f64,
    #[serde(default)]
    pub init_pos: [f64; 3],
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.legs.is_empty() {
            return Err(Error::Contract("trajectory needs at least one leg".into()));
        }
        for leg in &self.legs {
            if leg.duration <= 0.0 {
                return Err(Error::Contract("leg durations must be positive".into()));
            }
            if !(0.0..=MAX_SPEED).contains(&leg.speed) {
                return Err(Error::Contract(format!(
                    "leg speed {} outside the operating envelope [0, {MAX_SPEED}] m/s",
                    leg.speed
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.legs.iter().map(|l| l.duration).sum()
    }
}

/// Truth at one IMU epoch plus the commanded body rate and nav-frame
/// acceleration over the following interval.
#[derive(Debug, Clone)]
pub struct TruthSample {
    pub state: NavState,
    pub omega_b: Vector3<f64>,
    pub accel_n: Vector3<f64>,
}

/// Kinematically consistent truth at `rate_hz`. Velocity is the trapezoidal
/// derivative of position; attitude follows the commanded turn and dive rates.
pub fn generate_truth(spec: &TrajectorySpec, rate_hz: f64) -> Result<Vec<TruthSample>> {
    spec.validate()?;
    let dt = 1.0 / rate_hz;
    let n_steps = (spec.total_duration() * rate_hz).round() as usize;

    let mut att = UnitQuaternion::from_euler_angles(0.0, 0.0, spec.init_yaw_deg.to_radians());
    let mut pos = Vector3::new(spec.init_pos[0], spec.init_pos[1], spec.init_pos[2]);
    let mut speed = spec.legs[0].speed;
    let mut vel = att * Vector3::new(speed, 0.0, 0.0);

    let leg_starts: Vec<f64> = spec
        .legs
        .iter()
        .scan(0.0, |acc, l| {
            let s = *acc;
            *acc += l.duration;
            Some(s)
        })
        .collect();

    let mut out: Vec<TruthSample> = Vec::with_capacity(n_steps + 1);
    out.push(TruthSample {
        state: NavState::new(0.0, pos, vel, att),
        omega_b: Vector3::zeros(),
        accel_n: Vector3::zeros(),
    });

    for k in 0..n_steps {
        let t = k as f64 * dt;
        let li = leg_starts
            .iter()
            .rposition(|&s| t >= s - 1e-9)
            .unwrap_or(0);
        let leg = &spec.legs[li];

        let (_, pitch, _) = att.euler_angles();
        let (yaw_rate, target_pitch) = match leg.kind {
            LegKind::Straight => (0.0, 0.0),
            LegKind::Turn { yaw_rate_dps } => (yaw_rate_dps.to_radians(), 0.0),
            LegKind::Dive { pitch_deg } => (0.0, pitch_deg.to_radians()),
        };
        let pitch_rate =
            (target_pitch - pitch).clamp(-PITCH_RATE_LIMIT * dt, PITCH_RATE_LIMIT * dt) / dt;
        // euler rates -> body rates at zero roll
        let omega_b = Vector3::new(
            -yaw_rate * pitch.sin(),
            pitch_rate,
            yaw_rate * pitch.cos(),
        );
        let dspeed = (leg.speed - speed).clamp(-ACCEL_LIMIT * dt, ACCEL_LIMIT * dt);

        let att_next = UnitQuaternion::new_normalize(
            (att * UnitQuaternion::from_scaled_axis(omega_b * dt)).into_inner(),
        );
        speed += dspeed;
        let vel_next = att_next * Vector3::new(speed, 0.0, 0.0);
        let accel_n = (vel_next - vel) / dt;
        pos += (vel + vel_next) * (0.5 * dt);

        out[k].omega_b = omega_b;
        out[k].accel_n = accel_n;
        att = att_next;
        vel = vel_next;
        out.push(TruthSample {
            state: NavState::new((k + 1) as f64 * dt, pos, vel, att),
            omega_b: Vector3::zeros(),
            accel_n: Vector3::zeros(),
        });
    }
    Ok(out)
}

/// IMU corruption: static biases, white noise, and bias random walks.
#[derive(Debug, Clone)]
pub struct ImuErrorModel {
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    /// Per-sample white noise std at the IMU rate, m/s^2.
    pub accel_noise_std: f64,
    /// Per-sample white noise std at the IMU rate, rad/s.
    pub gyro_noise_std: f64,
    /// Bias random walk, (m/s^2)/sqrt(s).
    pub accel_bias_walk_std: f64,
    /// Bias random walk, (rad/s)/sqrt(s).
    pub gyro_bias_walk_std: f64,
    pub rng_seed: u64,
}

impl ImuErrorModel {
    /// FOG-grade defaults: 0.1 mg accelerometer bias, 0.05 deg/h gyro bias,
    /// small white noise, negligible walks.
    pub fn fog_grade(rng_seed: u64) -> Self {
        Self {
            accel_bias: Vector3::repeat(0.1e-3 * 9.80665),
            gyro_bias: Vector3::repeat(0.05f64.to_radians() / 3600.0),
            accel_noise_std: 2e-3,
            gyro_noise_std: 1e-5,
            accel_bias_walk_std: 1e-6,
            gyro_bias_walk_std: 1e-9,
            rng_seed,
        }
    }

    pub fn ideal() -> Self {
        Self {
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_noise_std: 0.0,
            gyro_noise_std: 0.0,
            accel_bias_walk_std: 0.0,
            gyro_bias_walk_std: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.accel_noise_std,
            self.gyro_noise_std,
            self.accel_bias_walk_std,
            self.gyro_bias_walk_std,
        ];
        if stds.iter().any(|&s| s < 0.0) {
            return Err(Error::Contract("IMU noise stds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Inverse mechanization plus the configured error model.
pub fn synthesize_imu(truth: &[TruthSample], model: &ImuErrorModel) -> Result<Vec<ImuSample>> {
    model.validate()?;
    if truth.len() < 2 {
        return Err(Error::Contract("need at least two truth epochs".into()));
    }
    let g = gravity_n();
    let dt = truth[1].state.t - truth[0].state.t;
    let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
    let mut ab = model.accel_bias;
    let mut gb = model.gyro_bias;
    let sqrt_dt = dt.sqrt();
    let mut out = Vec::with_capacity(truth.len() - 1);
    for s in &truth[..truth.len() - 1] {
        let f_clean = s.state.c_n_b() * (s.accel_n - g);
        let noise_f = Vector3::from_fn(|_, _| standard_normal(&mut rng) * model.accel_noise_std);
        let noise_w = Vector3::from_fn(|_, _| standard_normal(&mut rng) * model.gyro_noise_std);
        out.push(ImuSample {
            t: s.state.t,
            specific_force_b: f_clean + ab + noise_f,
            angular_rate_b: s.omega_b + gb + noise_w,
        });
        ab += Vector3::from_fn(|_, _| standard_normal(&mut rng) * model.accel_bias_walk_std * sqrt_dt);
        gb += Vector3::from_fn(|_, _| standard_normal(&mut rng) * model.gyro_bias_walk_std * sqrt_dt);
    }
    Ok(out)
}

/// Samples the truth body velocity at the DVL epochs and corrupts it through
/// the beam error model. Every beam comes back valid.
pub fn synthesize_dvl(
    truth: &[TruthSample],
    geom: &BeamGeometry,
    err: &DvlErrorModel,
    dvl_rate_hz: f64,
    imu_rate_hz: f64,
) -> Result<Vec<DvlSample>> {
    let stride = (imu_rate_hz / dvl_rate_hz).round() as usize;
    if stride == 0 || (imu_rate_hz / dvl_rate_hz).fract().abs() > 1e-9 {
        return Err(Error::Contract("IMU rate must be an integer multiple of the DVL rate".into()));
    }
    let mut corruptor = DvlCorruptor::new(err.clone());
    let mut out = Vec::new();
    let mut k = stride;
    while k < truth.len() {
        let s = &truth[k];
        let v_b = s.state.c_n_b() * s.state.vel_n;
        let v_dvl = geom.body_to_dvl(&v_b);
        out.push(DvlSample::all_valid(s.state.t, corruptor.corrupt_beams(geom, &v_dvl)));
        k += stride;
    }
    Ok(out)
}

/// A scripted window of partial beam availability.
#[derive(Debug, Clone)]
pub struct OutageWindow {
    pub start: f64,
    pub duration: f64,
    pub pattern: MissingPattern,
}

impl OutageWindow {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start - 1e-9 && t < self.end() - 1e-9
    }
}

/// Clears the validity mask inside each window and withholds the masked beam
/// values (they are overwritten with NaN, not merely flagged).
pub fn apply_outages(samples: &[DvlSample], windows: &[OutageWindow]) -> Result<Vec<DvlSample>> {
    let mut sorted: Vec<&OutageWindow> = windows.iter().collect();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end() {
            return Err(Error::Contract("outage windows must not overlap".into()));
        }
    }
    if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        for w in windows {
            if w.start < first.t - 1.0 || w.end() > last.t + 1e-9 {
                return Err(Error::Contract("outage window lies outside the run".into()));
            }
        }
    }
    let mut out = samples.to_vec();
    for s in &mut out {
        if let Some(w) = windows.iter().find(|w| w.contains(s.t)) {
            s.valid = w.pattern.mask();
            for &i in w.pattern.missing_indices() {
                s.beams[i] = f64::NAN;
            }
        }
    }
    Ok(out)
}

/// Serializable scenario definition. Beam numbers in `missing_beams` are
/// 1-based, matching the beam naming everywhere in the docs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_imu_rate")]
    pub imu_rate_hz: f64,
    #[serde(default = "default_dvl_rate")]
    pub dvl_rate_hz: f64,
    #[serde(default = "default_theta")]
    pub theta_deg: f64,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub imu: ImuErrorConfig,
    #[serde(default)]
    pub dvl: DvlErrorConfig,
    #[serde(default)]
    pub outages: Vec<OutageConfig>,
}

fn default_imu_rate() -> f64 {
    100.0
}
fn default_dvl_rate() -> f64 {
    1.0
}
fn default_theta() -> f64 {
    20.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImuErrorConfig {
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub accel_noise_std: f64,
    pub gyro_noise_std: f64,
    #[serde(default)]
    pub accel_bias_walk_std: f64,
    #[serde(default)]
    pub gyro_bias_walk_std: f64,
}

impl Default for ImuErrorConfig {
    fn default() -> Self {
        let m = ImuErrorModel::fog_grade(0);
        Self {
            accel_bias: m.accel_bias.into(),
            gyro_bias: m.gyro_bias.into(),
            accel_noise_std: m.accel_noise_std,
            gyro_noise_std: m.gyro_noise_std,
            accel_bias_walk_std: m.accel_bias_walk_std,
            gyro_bias_walk_std: m.gyro_bias_walk_std,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DvlErrorConfig {
    pub bias: f64,
    pub noise_std: f64,
    #[serde(default)]
    pub scale: [f64; 3],
}

impl Default for DvlErrorConfig {
    fn default() -> Self {
        // experiment values: 0.01 m/s bias, 0.042 m/s beam noise, no scale
        Self { bias: 0.01, noise_std: 0.042, scale: [0.0; 3] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutageConfig {
    pub start: f64,
    #[serde(default = "default_outage_duration")]
    pub duration: f64,
    /// 1-based beam numbers.
    pub missing_beams: Vec<usize>,
}

fn default_outage_duration() -> f64 {
    30.0
}

impl OutageConfig {
    pub fn window(&self) -> Result<OutageWindow> {
        if self.missing_beams.iter().any(|&b| b == 0 || b > 4) {
            return Err(Error::Config("missing_beams entries must be 1..4".into()));
        }
        Ok(OutageWindow {
            start: self.start,
            duration: self.duration,
            pattern: MissingPattern::new(self.missing_beams.iter().map(|&b| b - 1).collect())?,
        })
    }
}

impl ScenarioConfig {
    pub fn geometry(&self) -> Result<BeamGeometry> {
        build_beam_geometry(self.theta_deg.to_radians(), None, None)
    }

    pub fn imu_model(&self) -> ImuErrorModel {
        ImuErrorModel {
            accel_bias: self.imu.accel_bias.into(),
            gyro_bias: self.imu.gyro_bias.into(),
            accel_noise_std: self.imu.accel_noise_std,
            gyro_noise_std: self.imu.gyro_noise_std,
            accel_bias_walk_std: self.imu.accel_bias_walk_std,
            gyro_bias_walk_std: self.imu.gyro_bias_walk_std,
            rng_seed: self.seed.wrapping_mul(2).wrapping_add(1),
        }
    }

    pub fn dvl_model(&self) -> Result<DvlErrorModel> {
        DvlErrorModel::with_shared_noise(
            Vector4::repeat(self.dvl.bias),
            Vector3::new(self.dvl.scale[0], self.dvl.scale[1], self.dvl.scale[2]),
            self.dvl.noise_std,
            self.seed.wrapping_mul(2).wrapping_add(2),
        )
    }

    pub fn outage_windows(&self) -> Result<Vec<OutageWindow>> {
        self.outages.iter().map(|o| o.window()).collect()
    }
}

/// The full time-stamped record of one simulated run.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub truth: Vec<TruthSample>,
    pub imu: Vec<ImuSample>,
    pub dvl: Vec<DvlSample>,
    pub imu_rate_hz: f64,
    pub dvl_rate_hz: f64,
}

/// Runs the whole generator chain for one scenario.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RunLog> {
    let geom = cfg.geometry()?;
    let truth = generate_truth(&cfg.trajectory, cfg.imu_rate_hz)?;
    let imu = synthesize_imu(&truth, &cfg.imu_model())?;
    let dvl = synthesize_dvl(&truth, &geom, &cfg.dvl_model()?, cfg.dvl_rate_hz, cfg.imu_rate_hz)?;
    let dvl = apply_outages(&dvl, &cfg.outage_windows()?)?;
    Ok(RunLog {
        truth,
        imu,
        dvl,
        imu_rate_hz: cfg.imu_rate_hz,
        dvl_rate_hz: cfg.dvl_rate_hz,
    })
}
