//! `beamfuse` command-line tool: simulate scenarios, train beam regressors,
//! run the fusion filter, and evaluate the results.
//!
//! Exit codes: 0 on success, 2 on configuration/input errors, 3 on numerical
//! failures during estimation or training.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector4;

use beamfuse::error::Error as CoreError;
use beamfuse::harness::{run_fusion, FilterConfig, FusionStrategy, FusionStrategyKind};
use beamfuse::io;
use beamfuse::metrics::{vrte, EvaluationReport, ReportRow};
use beamfuse::regressor::{
    build_dataset, train, MissingPattern, OutputActivation, RegressorModel, TrainConfig,
};
use beamfuse::sim::simulate;
use beamfuse::strapdown::NavState;

#[derive(Parser)]
#[command(name = "beamfuse", version, about = "INS/DVL fusion under limited beam availability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate truth, IMU, and DVL CSV logs from a scenario JSON.
    Simulate(SimulateArgs),
    /// Train a missing-beam regressor on full-availability DVL logs.
    Train(TrainArgs),
    /// Run one fusion strategy over IMU and DVL logs.
    Fuse(FuseArgs),
    /// Score one or more filter outputs against the truth.
    Evaluate(EvaluateArgs),
    /// Merge a filter output with the truth into one plot-friendly CSV.
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON path.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for truth.csv, imu.csv, and dvl.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// DVL CSV logs; only full-availability epochs are windowed.
    #[arg(long, required = true, num_args = 1..)]
    dvl: Vec<PathBuf>,
    /// Missing-beam pattern: `two` (beams 1 and 3) or `three` (all but beam 2).
    #[arg(long)]
    pattern: String,
    /// Output model JSON path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clamp the output layer at zero instead of leaving it linear.
    #[arg(long)]
    relu_output: bool,
    /// Optional CSV dump of the per-epoch training loss.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Scenario JSON; supplies the rates, geometry, and filter tuning.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    imu: PathBuf,
    #[arg(long)]
    dvl: PathBuf,
    /// Truth CSV; the first row initializes the navigation state.
    #[arg(long)]
    truth: PathBuf,
    /// baseline_lc | baseline_tc | average_lc | average_tc | hnlc | hntc
    #[arg(long)]
    strategy: String,
    /// Trained model JSON (required for hnlc/hntc).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Variance multiplier for completed-beam measurement noise.
    #[arg(long, default_value_t = 1.0)]
    regressed_r_inflation: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    /// Filter outputs as `label=path`, repeatable.
    #[arg(long, required = true, num_args = 1..)]
    output: Vec<String>,
    /// Label whose VRMSE anchors the VRTE column.
    #[arg(long)]
    reference: Option<String>,
    /// Scenario name recorded in the report rows.
    #[arg(long, default_value = "scenario")]
    scenario_name: String,
    /// Pattern tag recorded in the report rows.
    #[arg(long, default_value = "-")]
    pattern: String,
    /// Restrict scoring to `t >= start`.
    #[arg(long)]
    start: Option<f64>,
    /// Restrict scoring to `t <= end`.
    #[arg(long)]
    end: Option<f64>,
    /// Report JSON path; the text table always goes to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlotdataArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Plotdata(a) => cmd_plotdata(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &CoreError) -> u8 {
    match e {
        CoreError::Numerical(_)
        | CoreError::EstimationFailure(_)
        | CoreError::UpdateRejected(_)
        | CoreError::TrainingDiverged { .. }
        | CoreError::UndefinedMetric(_) => 3,
        _ => 2,
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CoreError> {
    let cfg = io::read_scenario_json(&args.scenario)?;
    let log = simulate(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let states: Vec<NavState> = log.truth.iter().map(|s| s.state.clone()).collect();
    io::write_truth_csv(&args.out_dir.join("truth.csv"), &states)?;
    io::write_imu_csv(&args.out_dir.join("imu.csv"), &log.imu)?;
    io::write_dvl_csv(&args.out_dir.join("dvl.csv"), &log.dvl)?;
    println!(
        "wrote {} truth rows, {} IMU rows, {} DVL rows to {}",
        states.len(),
        log.imu.len(),
        log.dvl.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn parse_pattern(s: &str) -> Result<MissingPattern, CoreError> {
    match s {
        "two" => Ok(MissingPattern::two_missing()),
        "three" => Ok(MissingPattern::three_missing()),
        other => Err(CoreError::Config(format!("pattern must be `two` or `three`, got '{other}'"))),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CoreError> {
    let pattern = parse_pattern(&args.pattern)?;
    let mut dataset = Vec::new();
    for path in &args.dvl {
        let samples = io::read_dvl_csv(path)?;
        // window only contiguous full-availability stretches
        let mut run: Vec<Vector4<f64>> = Vec::new();
        let flush = |run: &mut Vec<Vector4<f64>>, dataset: &mut Vec<_>| -> Result<(), CoreError> {
            if run.len() > pattern.window_len() {
                dataset.extend(build_dataset(run, &pattern)?);
            }
            run.clear();
            Ok(())
        };
        for s in &samples {
            if s.valid == [true; 4] {
                run.push(s.beams);
            } else {
                flush(&mut run, &mut dataset)?;
            }
        }
        flush(&mut run, &mut dataset)?;
    }
    if dataset.is_empty() {
        return Err(CoreError::Config("no full-availability windows found in the DVL logs".into()));
    }

    let activation = if args.relu_output { OutputActivation::Relu } else { OutputActivation::Linear };
    let model = RegressorModel::init(&pattern, activation, args.seed);
    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        shuffle_seed: args.seed.wrapping_add(1),
        ..TrainConfig::default()
    };
    let (trained, curve) = train(&model, &dataset, &cfg)?;
    trained.save(&args.out)?;
    if let Some(path) = &args.loss_curve {
        // epoch 0 is the pre-training loss
        let mut text = String::from("epoch,loss\n");
        for (i, l) in curve.iter().enumerate() {
            text.push_str(&format!("{},{}\n", i, l));
        }
        std::fs::write(path, text)?;
    }
    println!(
        "trained k = {} model on {} examples, final loss {:.6e}, saved to {}",
        trained.k,
        dataset.len(),
        curve.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<(), CoreError> {
    let cfg = io::read_scenario_json(&args.scenario)?;
    let geom = cfg.geometry()?;
    let imu = io::read_imu_csv(&args.imu)?;
    let dvl = io::read_dvl_csv(&args.dvl)?;
    let truth = io::read_truth_csv(&args.truth)?;
    if truth.is_empty() || imu.is_empty() {
        return Err(CoreError::Config("truth and IMU logs must not be empty".into()));
    }

    let kind = FusionStrategyKind::parse(&args.strategy)?;
    let model = match &args.model {
        Some(p) => Some(RegressorModel::load(p)?),
        None => None,
    };
    let strategy = FusionStrategy::new(kind, model)?;

    let mut fc = FilterConfig::from_scenario(&cfg);
    fc.regressed_r_inflation = args.regressed_r_inflation;

    let log = beamfuse::sim::RunLog {
        truth: vec![],
        imu,
        dvl,
        imu_rate_hz: cfg.imu_rate_hz,
        dvl_rate_hz: cfg.dvl_rate_hz,
    };
    let out = run_fusion(&log, &geom, &strategy, &fc, &truth[0])?;
    io::write_output_csv(&args.out, &out.records)?;
    if out.large_corrections > 0 {
        eprintln!(
            "warning: {} updates exceeded the small-angle correction bound",
            out.large_corrections
        );
    }
    println!("wrote {} filter epochs to {}", out.records.len(), args.out.display());
    Ok(())
}

/// Pairs each output record with the truth row closest in time.
fn paired_velocities(
    truth: &[NavState],
    records: &[beamfuse::OutputRecord],
    start: Option<f64>,
    end: Option<f64>,
) -> Result<(Vec<nalgebra::Vector3<f64>>, Vec<nalgebra::Vector3<f64>>), CoreError> {
    let mut t_vel = Vec::new();
    let mut e_vel = Vec::new();
    let mut ti = 0usize;
    for r in records {
        if start.map(|s| r.t < s).unwrap_or(false) || end.map(|e| r.t > e).unwrap_or(false) {
            continue;
        }
        while ti + 1 < truth.len()
            && (truth[ti + 1].t - r.t).abs() <= (truth[ti].t - r.t).abs()
        {
            ti += 1;
        }
        if (truth[ti].t - r.t).abs() > 0.5 {
            return Err(CoreError::Config(format!(
                "no truth row near output epoch t = {}",
                r.t
            )));
        }
        t_vel.push(truth[ti].vel_n);
        e_vel.push(r.vel_n);
    }
    Ok((t_vel, e_vel))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CoreError> {
    let truth = io::read_truth_csv(&args.truth)?;
    let mut labeled: Vec<(String, f64)> = Vec::new();
    for spec in &args.output {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("--output expects label=path, got '{spec}'")))?;
        let records = io::read_output_csv(std::path::Path::new(path))?;
        let (t_vel, e_vel) = paired_velocities(&truth, &records, args.start, args.end)?;
        labeled.push((label.to_string(), beamfuse::vrmse(&t_vel, &e_vel)?));
    }

    let reference_vrmse = match &args.reference {
        Some(r) => Some(
            labeled
                .iter()
                .find(|(l, _)| l == r)
                .map(|(_, v)| *v)
                .ok_or_else(|| CoreError::Config(format!("reference '{r}' not among the outputs")))?,
        ),
        None => None,
    };

    let mut rows = Vec::new();
    for (label, v) in &labeled {
        let is_ref = args.reference.as_deref() == Some(label.as_str());
        let vrte_col = match reference_vrmse {
            Some(rv) if !is_ref => Some(vrte(*v, rv)?),
            _ => None,
        };
        rows.push(ReportRow {
            scenario: args.scenario_name.clone(),
            pattern: args.pattern.clone(),
            strategy: label.clone(),
            vrmse: *v,
            vrte_vs_reference: vrte_col,
            reference: args.reference.clone().filter(|_| !is_ref),
        });
    }
    let report = EvaluationReport { rows };
    print!("{}", report.to_table());
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json()?)?;
    }
    Ok(())
}

fn cmd_plotdata(args: PlotdataArgs) -> Result<(), CoreError> {
    let truth = io::read_truth_csv(&args.truth)?;
    let records = io::read_output_csv(&args.output)?;
    let mut text = String::from(
        "t,vN_est,vE_est,vD_est,vN_true,vE_true,vD_true,errN,errE,errD,sigN,sigE,sigD,nis,update_kind\n",
    );
    let mut ti = 0usize;
    for r in &records {
        while ti + 1 < truth.len() && (truth[ti + 1].t - r.t).abs() <= (truth[ti].t - r.t).abs() {
            ti += 1;
        }
        if (truth[ti].t - r.t).abs() > 0.5 {
            return Err(CoreError::Config(format!("no truth row near output epoch t = {}", r.t)));
        }
        let tv = truth[ti].vel_n;
        let err = r.vel_n - tv;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.vel_n[0],
            r.vel_n[1],
            r.vel_n[2],
            tv[0],
            tv[1],
            tv[2],
            err[0],
            err[1],
            err[2],
            r.pv_diag[0].sqrt(),
            r.pv_diag[1].sqrt(),
            r.pv_diag[2].sqrt(),
            r.nis,
            r.update_kind.as_str()
        ));
    }
    std::fs::write(&args.out, text)?;
    println!("wrote {} plot rows to {}", records.len(), args.out.display());
    Ok(())
}
