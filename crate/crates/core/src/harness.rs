//! Fusion loop: strapdown propagation, EKF prediction, and the per-strategy
//! DVL update logic, including beam completion for partial epochs.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};

use crate::dvl_geometry::{BeamGeometry, DvlSample};
use crate::ekf::{
    self, build_f, build_g, build_h_lc, build_h_tc, default_initial_p, discretize_q,
    lc_innovation, tc_innovation, transition_matrix, FilterState, Mat12, NoiseConfig,
};
use crate::error::{Error, Result};
use crate::regressor::{average_estimate, complete_beams, MissingPattern, RegressorInput, RegressorModel};
use crate::sim::{ImuErrorConfig, RunLog, ScenarioConfig, TruthSample};
use crate::strapdown::{apply_error_correction, gravity_n, propagate, NavState};

/// The six fusion variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionStrategyKind {
    /// LC update only when at least 3 beams allow a least-squares velocity.
    BaselineLc,
    /// TC update with whatever beams are valid.
    BaselineTc,
    /// Missing beams filled with the past-window per-beam mean, then LC.
    AverageLc,
    /// Missing beams filled with the past-window per-beam mean, then TC.
    AverageTc,
    /// Missing beams regressed by the network, then LC.
    Hnlc,
    /// Missing beams regressed by the network, then TC.
    Hntc,
}

impl FusionStrategyKind {
    pub const ALL: [FusionStrategyKind; 6] = [
        FusionStrategyKind::BaselineLc,
        FusionStrategyKind::BaselineTc,
        FusionStrategyKind::AverageLc,
        FusionStrategyKind::AverageTc,
        FusionStrategyKind::Hnlc,
        FusionStrategyKind::Hntc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionStrategyKind::BaselineLc => "baseline_lc",
            FusionStrategyKind::BaselineTc => "baseline_tc",
            FusionStrategyKind::AverageLc => "average_lc",
            FusionStrategyKind::AverageTc => "average_tc",
            FusionStrategyKind::Hnlc => "hnlc",
            FusionStrategyKind::Hntc => "hntc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }

    pub fn is_loosely_coupled(&self) -> bool {
        matches!(
            self,
            FusionStrategyKind::BaselineLc | FusionStrategyKind::AverageLc | FusionStrategyKind::Hnlc
        )
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, FusionStrategyKind::Hnlc | FusionStrategyKind::Hntc)
    }
}

/// A strategy plus, for the hybrid-neural ones, the trained regressor.
#[derive(Debug, Clone)]
pub struct FusionStrategy {
    pub kind: FusionStrategyKind,
    pub model: Option<RegressorModel>,
}

impl FusionStrategy {
    pub fn new(kind: FusionStrategyKind, model: Option<RegressorModel>) -> Result<Self> {
        if kind.needs_model() && model.is_none() {
            return Err(Error::Config(format!("strategy {} needs a trained model", kind.as_str())));
        }
        Ok(Self { kind, model })
    }
}

/// Filter tuning. Noise stds are continuous densities; per-sample values at a
/// rate `f` divide by `sqrt(f)` on the way in.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub noise: NoiseConfig,
    pub initial_p: Mat12,
    /// Per-beam measurement noise std, m/s.
    pub beam_noise_std: f64,
    pub trans_order: usize,
    /// Variance multiplier on R entries of completed (non-measured) beams.
    pub regressed_r_inflation: f64,
}

impl FilterConfig {
    pub fn new(noise: NoiseConfig, beam_noise_std: f64) -> Self {
        Self {
            noise,
            initial_p: default_initial_p(),
            beam_noise_std,
            trans_order: 2,
            regressed_r_inflation: 1.0,
        }
    }

    /// Derives a consistent tuning from the scenario's own error models. The
    /// initial bias covariance is widened to cover the configured biases, so
    /// the filter is never told its sensors are better than they are.
    pub fn from_scenario(cfg: &ScenarioConfig) -> Self {
        let mut out = Self::new(
            noise_config_from_imu(&cfg.imu, cfg.imu_rate_hz),
            cfg.dvl.noise_std.max(1e-4),
        );
        for i in 0..3 {
            let sba = (2e-3 * 9.80665f64).max(1.5 * cfg.imu.accel_bias[i].abs());
            out.initial_p[(6 + i, 6 + i)] = sba * sba;
            let sbg = (0.1f64.to_radians() / 3600.0).max(1.5 * cfg.imu.gyro_bias[i].abs());
            out.initial_p[(9 + i, 9 + i)] = sbg * sbg;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.beam_noise_std <= 0.0 {
            return Err(Error::Config("beam_noise_std must be positive".into()));
        }
        if self.trans_order == 0 {
            return Err(Error::Config("trans_order must be at least 1".into()));
        }
        if self.regressed_r_inflation < 1.0 {
            return Err(Error::Config("regressed_r_inflation must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-sample IMU stds become continuous densities by dividing by sqrt(rate);
/// the bias walks are already densities.
pub fn noise_config_from_imu(imu: &ImuErrorConfig, rate_hz: f64) -> NoiseConfig {
    let s = rate_hz.sqrt();
    NoiseConfig {
        accel_noise_std: imu.accel_noise_std / s,
        gyro_noise_std: imu.gyro_noise_std / s,
        accel_bias_walk_std: imu.accel_bias_walk_std,
        gyro_bias_walk_std: imu.gyro_bias_walk_std,
    }
}

/// What happened at a DVL epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    /// All four beams measured.
    Full,
    /// Baseline fallback using only the measured subset.
    Subset,
    /// Missing beams filled with the past-window mean.
    Average,
    /// Missing beams filled by the network.
    Regressed,
    /// Not enough information; the epoch ran open loop.
    Skipped,
}

impl UpdateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateKind::Full => "full",
            UpdateKind::Subset => "subset",
            UpdateKind::Average => "average",
            UpdateKind::Regressed => "regressed",
            UpdateKind::Skipped => "skipped",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            UpdateKind::Full,
            UpdateKind::Subset,
            UpdateKind::Average,
            UpdateKind::Regressed,
            UpdateKind::Skipped,
        ]
        .iter()
        .copied()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown update kind '{s}'")))
    }
}

/// One output row, written at every DVL epoch.
#[derive(Debug, Clone)]
pub struct OutputRecord {
    pub t: f64,
    pub vel_n: Vector3<f64>,
    /// roll, pitch, yaw in radians.
    pub rpy: (f64, f64, f64),
    pub pos_n: Vector3<f64>,
    /// Velocity-error covariance diagonal.
    pub pv_diag: Vector3<f64>,
    /// NaN when the epoch had no update.
    pub nis: f64,
    pub update_kind: UpdateKind,
}

impl OutputRecord {
    fn at(state: &NavState, p: &Mat12, nis: f64, kind: UpdateKind) -> Self {
        Self {
            t: state.t,
            vel_n: state.vel_n,
            rpy: state.rpy(),
            pos_n: state.pos_n,
            pv_diag: Vector3::new(p[(0, 0)], p[(1, 1)], p[(2, 2)]),
            nis,
            update_kind: kind,
        }
    }
}

/// Full run result: one record per DVL epoch plus the dense estimate history
/// (entry `k` is the estimate at IMU epoch `k`, index-aligned with the truth).
#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub records: Vec<OutputRecord>,
    pub nav: Vec<NavState>,
    /// DVL epochs whose misalignment correction exceeded the small-angle bound.
    pub large_corrections: usize,
}

struct BeamBuffer {
    epochs: VecDeque<[f64; 4]>,
}

impl BeamBuffer {
    fn new() -> Self {
        Self { epochs: VecDeque::with_capacity(6) }
    }

    fn push(&mut self, beams: &Vector4<f64>) {
        if self.epochs.len() == 5 {
            self.epochs.pop_front();
        }
        self.epochs.push_back([beams[0], beams[1], beams[2], beams[3]]);
    }

    /// Oldest-first window of the latest `n` epochs, if available.
    fn window(&self, n: usize) -> Option<Vec<[f64; 4]>> {
        if self.epochs.len() < n {
            return None;
        }
        Some(self.epochs.iter().skip(self.epochs.len() - n).copied().collect())
    }
}

fn pseudo_inverse_rows(t: &nalgebra::Matrix4x3<f64>, _geom: &BeamGeometry) -> Result<Matrix3<f64>> {
    (t.transpose() * t)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("beam geometry became rank deficient".into()))
}

/// LC measurement covariance: propagates the per-beam variances through the
/// least-squares solve and the DVL-to-body rotation. `inflation` applies to
/// the listed beam indices.
fn r_lc(
    geom: &BeamGeometry,
    sigma: f64,
    inflated: &[usize],
    inflation: f64,
) -> Result<DMatrix<f64>> {
    let tt_inv = pseudo_inverse_rows(&geom.t, geom)?;
    let t_pinv = tt_inv * geom.t.transpose(); // 3x4
    let mut r_beam = nalgebra::Matrix4::zeros();
    for i in 0..4 {
        let f = if inflated.contains(&i) { inflation } else { 1.0 };
        r_beam[(i, i)] = sigma * sigma * f;
    }
    let r_d = t_pinv * r_beam * t_pinv.transpose();
    let r_b = geom.c_d_to_b * r_d * geom.c_d_to_b.transpose();
    Ok(DMatrix::from_fn(3, 3, |i, j| r_b[(i, j)]))
}

/// LC covariance for a measured beam subset (no completion involved).
fn r_lc_subset(geom: &BeamGeometry, sigma: f64, indices: &[usize]) -> Result<DMatrix<f64>> {
    let mut ts = nalgebra::DMatrix::zeros(indices.len(), 3);
    for (r, &i) in indices.iter().enumerate() {
        for c in 0..3 {
            ts[(r, c)] = geom.t[(i, c)];
        }
    }
    let tt = ts.transpose() * &ts;
    let tt_inv = tt
        .try_inverse()
        .ok_or_else(|| Error::Numerical("subset beam geometry is rank deficient".into()))?;
    let r_d = tt_inv * sigma * sigma;
    let c = geom.c_d_to_b;
    let cdm = DMatrix::from_fn(3, 3, |i, j| c[(i, j)]);
    Ok(&cdm * r_d * cdm.transpose())
}

/// TC covariance: diagonal per-beam, inflated on completed beams.
fn r_tc(sigma: f64, indices: &[usize], inflated: &[usize], inflation: f64) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(indices.len(), indices.len());
    for (row, &i) in indices.iter().enumerate() {
        let f = if inflated.contains(&i) { inflation } else { 1.0 };
        r[(row, row)] = sigma * sigma * f;
    }
    r
}

enum Completion {
    Full(Vector4<f64>),
    Completed { beams: Vector4<f64>, filled: Vec<usize>, kind: UpdateKind },
    Partial(Vec<usize>),
}

/// Decides what measurement the strategy can form at this epoch.
fn complete_epoch(
    strategy: &FusionStrategy,
    sample: &DvlSample,
    buffer: &BeamBuffer,
) -> Result<Completion> {
    let valid = sample.valid_indices();
    if valid.len() == 4 {
        return Ok(Completion::Full(sample.beams));
    }
    let missing: Vec<usize> = (0..4).filter(|i| !sample.valid[*i]).collect();
    let fillable = matches!(missing.len(), 2 | 3);

    match strategy.kind {
        FusionStrategyKind::BaselineLc | FusionStrategyKind::BaselineTc => {
            Ok(Completion::Partial(valid))
        }
        FusionStrategyKind::AverageLc | FusionStrategyKind::AverageTc => {
            if !fillable {
                return Ok(Completion::Partial(valid));
            }
            let pattern = MissingPattern::new(missing.clone())?;
            match buffer.window(pattern.window_len()) {
                Some(past) => {
                    let input = RegressorInput::new(past, sample.valid_beams(), &pattern)?;
                    let est = average_estimate(&input, &pattern);
                    let beams = complete_beams(&pattern, &input.partial, &est)?;
                    Ok(Completion::Completed { beams, filled: missing, kind: UpdateKind::Average })
                }
                None => Ok(Completion::Partial(valid)),
            }
        }
        FusionStrategyKind::Hnlc | FusionStrategyKind::Hntc => {
            let model = strategy.model.as_ref().expect("checked at construction");
            let pattern = MissingPattern::new(missing.clone())?;
            if !fillable || pattern.k() != model.k {
                return Ok(Completion::Partial(valid));
            }
            match buffer.window(pattern.window_len()) {
                Some(past) => {
                    let input = RegressorInput::new(past, sample.valid_beams(), &pattern)?;
                    let est = model.forward(&input)?;
                    let beams =
                        complete_beams(&pattern, &input.partial, est.as_slice())?;
                    Ok(Completion::Completed { beams, filled: missing, kind: UpdateKind::Regressed })
                }
                None => Ok(Completion::Partial(valid)),
            }
        }
    }
}

/// Runs one strategy over one simulated log.
pub fn run_fusion(
    log: &RunLog,
    geom: &BeamGeometry,
    strategy: &FusionStrategy,
    cfg: &FilterConfig,
    init: &NavState,
) -> Result<FusionOutput> {
    cfg.validate()?;
    if strategy.kind.needs_model() && strategy.model.is_none() {
        return Err(Error::Config(format!(
            "strategy {} needs a trained model",
            strategy.kind.as_str()
        )));
    }
    let dt = 1.0 / log.imu_rate_hz;
    let g = gravity_n();
    let qc = cfg.noise.continuous_q();

    let mut fs = FilterState::new(cfg.initial_p, cfg.noise.clone());
    fs.trans_order = cfg.trans_order;
    fs.regressed_r_inflation = cfg.regressed_r_inflation;

    let mut nav = init.clone();
    let mut history = Vec::with_capacity(log.imu.len() + 1);
    history.push(nav.clone());
    let mut records = Vec::new();
    let mut buffer = BeamBuffer::new();
    let mut dvl_iter = log.dvl.iter().peekable();
    let mut large_corrections = 0usize;

    for imu in &log.imu {
        let f_n = nav.c_b_n() * (imu.specific_force_b - nav.accel_bias_hat);
        let f = build_f(&nav, &f_n);
        let gmat = build_g(&nav);
        let phi = transition_matrix(&f, dt, fs.trans_order);
        let qd = discretize_q(&phi, &gmat, &qc, dt);
        ekf::predict(&mut fs, &phi, &qd)?;
        nav = propagate(&nav, imu, dt, &g)?;

        let due = dvl_iter
            .peek()
            .map(|s| s.t <= nav.t + 1e-6)
            .unwrap_or(false);
        if due {
            let sample = dvl_iter.next().unwrap();
            let (nis, kind) = process_dvl_epoch(
                &mut fs,
                &mut nav,
                geom,
                strategy,
                cfg,
                sample,
                &mut buffer,
                &mut large_corrections,
            )?;
            records.push(OutputRecord::at(&nav, &fs.p, nis, kind));
        }
        history.push(nav.clone());
    }

    Ok(FusionOutput { records, nav: history, large_corrections })
}

#[allow(clippy::too_many_arguments)]
fn process_dvl_epoch(
    fs: &mut FilterState,
    nav: &mut NavState,
    geom: &BeamGeometry,
    strategy: &FusionStrategy,
    cfg: &FilterConfig,
    sample: &DvlSample,
    buffer: &mut BeamBuffer,
    large_corrections: &mut usize,
) -> Result<(f64, UpdateKind)> {
    let lc = strategy.kind.is_loosely_coupled();
    let sigma = cfg.beam_noise_std;
    let infl = cfg.regressed_r_inflation;

    let completion = complete_epoch(strategy, sample, buffer)?;
    let outcome = match completion {
        Completion::Full(beams) => {
            buffer.push(&beams);
            Some(apply_beams(fs, nav, geom, &beams, &[], sigma, infl, lc, UpdateKind::Full)?)
        }
        Completion::Completed { beams, filled, kind } => {
            buffer.push(&beams);
            Some(apply_beams(fs, nav, geom, &beams, &filled, sigma, infl, lc, kind)?)
        }
        Completion::Partial(valid) => {
            if lc {
                if valid.len() >= 3 {
                    // subset least squares still recovers the full velocity
                    let v_d = geom.ls_velocity_subset(&sample.beams, &valid)?;
                    let v_b = geom.dvl_to_body(&v_d);
                    let h = build_h_lc(nav);
                    let r = r_lc_subset(geom, sigma, &valid)?;
                    let dz = lc_innovation(nav, &v_b);
                    let innov = DVector::from_column_slice(dz.as_slice());
                    let out = ekf::update(fs, &h, &r, &innov)?;
                    Some((out.nis, UpdateKind::Subset))
                } else {
                    None
                }
            } else if !valid.is_empty() {
                let h = build_h_tc(nav, geom, &valid)?;
                let r = r_tc(sigma, &valid, &[], infl);
                let innov = tc_innovation(nav, geom, &sample.beams, &valid)?;
                let out = ekf::update(fs, &h, &r, &innov)?;
                Some((out.nis, UpdateKind::Subset))
            } else {
                None
            }
        }
    };

    match outcome {
        Some((nis, kind)) => {
            let (corrected, warn) = apply_error_correction(nav, &fs.dx);
            *nav = corrected;
            fs.dx = crate::ekf::ErrorState::zero();
            if warn {
                *large_corrections += 1;
            }
            Ok((nis, kind))
        }
        None => Ok((f64::NAN, UpdateKind::Skipped)),
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_beams(
    fs: &mut FilterState,
    nav: &NavState,
    geom: &BeamGeometry,
    beams: &Vector4<f64>,
    filled: &[usize],
    sigma: f64,
    inflation: f64,
    lc: bool,
    kind: UpdateKind,
) -> Result<(f64, UpdateKind)> {
    let all = [0usize, 1, 2, 3];
    if lc {
        let v_d = geom.ls_velocity(beams)?;
        let v_b = geom.dvl_to_body(&v_d);
        let h = build_h_lc(nav);
        let r = r_lc(geom, sigma, filled, inflation)?;
        let dz = lc_innovation(nav, &v_b);
        let innov = DVector::from_column_slice(dz.as_slice());
        let out = ekf::update(fs, &h, &r, &innov)?;
        Ok((out.nis, kind))
    } else {
        let h = build_h_tc(nav, geom, &all)?;
        let r = r_tc(sigma, &all, filled, inflation);
        let innov = tc_innovation(nav, geom, beams, &all)?;
        let out = ekf::update(fs, &h, &r, &innov)?;
        Ok((out.nis, kind))
    }
}

/// VRMSE between the dense estimate history and the index-aligned truth over
/// `[t0, t1]`.
pub fn vrmse_over_window(
    nav: &[NavState],
    truth: &[TruthSample],
    t0: f64,
    t1: f64,
) -> Result<f64> {
    if nav.len() != truth.len() {
        return Err(Error::Contract(format!(
            "history length {} does not match truth length {}",
            nav.len(),
            truth.len()
        )));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (n, t) in nav.iter().zip(truth) {
        if t.state.t >= t0 - 1e-9 && t.state.t <= t1 + 1e-9 {
            a.push(t.state.vel_n);
            b.push(n.vel_n);
        }
    }
    crate::metrics::vrmse(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, DvlErrorConfig, Leg, LegKind, OutageConfig, TrajectorySpec};

    fn scenario(outages: Vec<OutageConfig>, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            name: "harness".into(),
            seed,
            imu_rate_hz: 100.0,
            dvl_rate_hz: 1.0,
            theta_deg: 20.0,
            trajectory: TrajectorySpec {
                legs: vec![
                    Leg { kind: LegKind::Straight, duration: 40.0, speed: 2.0 },
                    Leg { kind: LegKind::Turn { yaw_rate_dps: 6.0 }, duration: 40.0, speed: 2.0 },
                    Leg { kind: LegKind::Straight, duration: 40.0, speed: 2.0 },
                ],
                init_yaw_deg: 0.0,
                init_pos: [0.0; 3],
            },
            imu: ImuErrorConfig::default(),
            dvl: DvlErrorConfig::default(),
            outages,
        }
    }

    fn run(cfg: &ScenarioConfig, kind: FusionStrategyKind) -> (FusionOutput, RunLog) {
        let log = simulate(cfg).unwrap();
        let geom = cfg.geometry().unwrap();
        let fc = FilterConfig::from_scenario(cfg);
        let strategy = FusionStrategy::new(kind, None).unwrap();
        let out = run_fusion(&log, &geom, &strategy, &fc, &log.truth[0].state).unwrap();
        (out, log)
    }

    #[test]
    fn full_availability_tracks_truth() {
        let cfg = scenario(vec![], 7);
        for kind in [FusionStrategyKind::BaselineLc, FusionStrategyKind::BaselineTc] {
            let (out, log) = run(&cfg, kind);
            assert_eq!(out.records.len(), 120);
            assert!(out.records.iter().all(|r| r.update_kind == UpdateKind::Full));
            let v = vrmse_over_window(&out.nav, &log.truth, 20.0, 120.0).unwrap();
            assert!(v < 0.05, "{} vrmse {v}", kind.as_str());
            assert_eq!(out.large_corrections, 0);
        }
    }

    #[test]
    fn covariance_reported_and_bounded() {
        let cfg = scenario(vec![], 3);
        let (out, _) = run(&cfg, FusionStrategyKind::BaselineTc);
        for r in &out.records {
            assert!(r.pv_diag.iter().all(|&p| p > 0.0 && p < 1.0));
            assert!(r.nis.is_finite() && r.nis > 0.0);
        }
    }

    #[test]
    fn baseline_lc_skips_two_missing() {
        let cfg = scenario(
            vec![OutageConfig { start: 50.0, duration: 30.0, missing_beams: vec![1, 3] }],
            11,
        );
        let (out, log) = run(&cfg, FusionStrategyKind::BaselineLc);
        let skipped: Vec<_> = out
            .records
            .iter()
            .filter(|r| r.update_kind == UpdateKind::Skipped)
            .collect();
        assert_eq!(skipped.len(), 30);
        assert!(skipped.iter().all(|r| r.nis.is_nan()));
        // pure-inertial drift across the outage
        let v_in = vrmse_over_window(&out.nav, &log.truth, 50.0, 80.0).unwrap();
        let v_pre = vrmse_over_window(&out.nav, &log.truth, 10.0, 50.0).unwrap();
        assert!(v_in > v_pre, "drift {v_in} should exceed tracking {v_pre}");
    }

    #[test]
    fn baseline_tc_uses_subset_rows() {
        let cfg = scenario(
            vec![OutageConfig { start: 50.0, duration: 30.0, missing_beams: vec![1, 3] }],
            11,
        );
        let (out, log) = run(&cfg, FusionStrategyKind::BaselineTc);
        let subset = out
            .records
            .iter()
            .filter(|r| r.update_kind == UpdateKind::Subset)
            .count();
        assert_eq!(subset, 30);
        // two beams still observe two velocity directions; drift stays bounded
        let v_in = vrmse_over_window(&out.nav, &log.truth, 50.0, 80.0).unwrap();
        assert!(v_in < 1.0, "tc subset vrmse {v_in}");
        let (lc_out, _) = {
            let log2 = simulate(&cfg).unwrap();
            let geom = cfg.geometry().unwrap();
            let fc = FilterConfig::from_scenario(&cfg);
            let s = FusionStrategy::new(FusionStrategyKind::BaselineLc, None).unwrap();
            (run_fusion(&log2, &geom, &s, &fc, &log2.truth[0].state).unwrap(), log2)
        };
        let v_lc = vrmse_over_window(&lc_out.nav, &log.truth, 50.0, 80.0).unwrap();
        assert!(v_in < v_lc, "tc {v_in} should beat lc {v_lc}");
    }

    #[test]
    fn average_strategies_fill_missing_beams() {
        let cfg = scenario(
            vec![OutageConfig { start: 50.0, duration: 30.0, missing_beams: vec![1, 3] }],
            13,
        );
        for kind in [FusionStrategyKind::AverageLc, FusionStrategyKind::AverageTc] {
            let (out, log) = run(&cfg, kind);
            let filled = out
                .records
                .iter()
                .filter(|r| r.update_kind == UpdateKind::Average)
                .count();
            assert_eq!(filled, 30, "{}", kind.as_str());
            let v_in = vrmse_over_window(&out.nav, &log.truth, 50.0, 80.0).unwrap();
            assert!(v_in < 0.5, "{} vrmse {v_in}", kind.as_str());
        }
    }

    #[test]
    fn average_falls_back_without_history() {
        // outage right at the start: fewer than N=3 buffered epochs
        let cfg = scenario(
            vec![OutageConfig { start: 1.0, duration: 30.0, missing_beams: vec![1, 3] }],
            17,
        );
        let (out, _) = run(&cfg, FusionStrategyKind::AverageLc);
        let first_kinds: Vec<UpdateKind> =
            out.records.iter().take(4).map(|r| r.update_kind).collect();
        // epoch t=1 falls inside the window with an empty buffer -> skip
        assert_eq!(first_kinds[0], UpdateKind::Skipped);
    }

    #[test]
    fn hn_requires_model() {
        assert!(FusionStrategy::new(FusionStrategyKind::Hnlc, None).is_err());
        assert!(FusionStrategy::new(FusionStrategyKind::BaselineLc, None).is_ok());
    }

    #[test]
    fn hn_runs_with_zeroed_model_and_falls_back_on_mismatched_k() {
        let cfg = scenario(
            vec![OutageConfig { start: 50.0, duration: 30.0, missing_beams: vec![1, 3, 4] }],
            19,
        );
        let log = simulate(&cfg).unwrap();
        let geom = cfg.geometry().unwrap();
        let fc = FilterConfig::from_scenario(&cfg);

        // k = 2 model on a 3-missing outage: falls back to baseline handling
        let model2 = RegressorModel::zeroed(
            &MissingPattern::two_missing(),
            crate::regressor::OutputActivation::Linear,
        );
        let s = FusionStrategy::new(FusionStrategyKind::Hntc, Some(model2)).unwrap();
        let out = run_fusion(&log, &geom, &s, &fc, &log.truth[0].state).unwrap();
        assert!(out.records.iter().any(|r| r.update_kind == UpdateKind::Subset));
        assert!(out.records.iter().all(|r| r.update_kind != UpdateKind::Regressed));

        // matching k = 3 model regresses all outage epochs
        let model3 = RegressorModel::zeroed(
            &MissingPattern::three_missing(),
            crate::regressor::OutputActivation::Linear,
        );
        let s = FusionStrategy::new(FusionStrategyKind::Hntc, Some(model3)).unwrap();
        let out = run_fusion(&log, &geom, &s, &fc, &log.truth[0].state).unwrap();
        let regressed = out
            .records
            .iter()
            .filter(|r| r.update_kind == UpdateKind::Regressed)
            .count();
        assert_eq!(regressed, 30);
    }

    #[test]
    fn r_matrices_match_uniform_formulas() {
        let cfg = scenario(vec![], 1);
        let geom = cfg.geometry().unwrap();
        let sigma = 0.042;
        // uniform LC R = sigma^2 C (T'T)^-1 C'
        let r = r_lc(&geom, sigma, &[], 1.0).unwrap();
        let tt_inv = (geom.t.transpose() * geom.t).try_inverse().unwrap();
        let expect = geom.c_d_to_b * tt_inv * geom.c_d_to_b.transpose() * sigma * sigma;
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[(i, j)] - expect[(i, j)]).abs() < 1e-12);
            }
        }
        // inflating every beam scales R linearly
        let r4 = r_lc(&geom, sigma, &[0, 1, 2, 3], 4.0).unwrap();
        for i in 0..3 {
            assert!((r4[(i, i)] - 4.0 * r[(i, i)]).abs() < 1e-12);
        }
        // TC diagonal with selective inflation
        let rtc = r_tc(sigma, &[0, 1, 2, 3], &[0, 2], 9.0);
        assert!((rtc[(0, 0)] - 9.0 * sigma * sigma).abs() < 1e-15);
        assert!((rtc[(1, 1)] - sigma * sigma).abs() < 1e-15);
    }

    #[test]
    fn fusion_is_deterministic() {
        let cfg = scenario(
            vec![OutageConfig { start: 50.0, duration: 30.0, missing_beams: vec![1, 3] }],
            23,
        );
        let (a, _) = run(&cfg, FusionStrategyKind::AverageTc);
        let (b, _) = run(&cfg, FusionStrategyKind::AverageTc);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.vel_n, y.vel_n);
            assert!(x.nis == y.nis || (x.nis.is_nan() && y.nis.is_nan()));
        }
    }

    #[test]
    fn strategy_and_kind_string_round_trip() {
        for kind in FusionStrategyKind::ALL {
            assert_eq!(FusionStrategyKind::parse(kind.as_str()).unwrap(), kind);
        }
        assert!(FusionStrategyKind::parse("nope").is_err());
        for k in [
            UpdateKind::Full,
            UpdateKind::Subset,
            UpdateKind::Average,
            UpdateKind::Regressed,
            UpdateKind::Skipped,
        ] {
            assert_eq!(UpdateKind::parse(k.as_str()).unwrap(), k);
        }
    }
}
