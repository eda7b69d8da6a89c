//! Seeded Monte-Carlo experiment execution and CSV emission.
//!
//! Every trial derives its random streams from `(seed, domain, indices)`, so
//! results are byte-identical across runs and worker counts; workers only
//! change the execution schedule. Records are buffered and written in trial
//! order.

use crate::config::{
    CalibrateConfig, ExperimentConfig, ExportConfig, ScatterConfig, Scenario, Strategy,
    SweepConfig,
};
use beamalign::calibration::{
    calibrate, CalibrationRunConfig, CalibrationState, CompensationShaper,
    EnsembleStream,
};
use beamalign::channel::{
    export_channels, generate_los_channel, generate_nlos_channel, import_channels,
    ChannelEnsembleConfig, PathChannel,
};
use beamalign::impairments::{impaired_channel, sample_profile, ImpairmentProfile};
use beamalign::matrix::CMatrix;
use beamalign::neural::{
    load_checkpoint, los_sampler, qssr_net_search, save_checkpoint, train, NetPair, TrainConfig,
};
use beamalign::rng::{domain, RngStream};
use beamalign::search::{
    binary_search, evaluate, evaluate_with, exhaustive_search, oracle_alignment, qssr_search,
    AlignmentResult,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Channel(#[from] beamalign::channel::ChannelError),
    #[error(transparent)]
    Search(#[from] beamalign::search::SearchError),
    #[error(transparent)]
    Neural(#[from] beamalign::neural::NeuralError),
    #[error(transparent)]
    Impairment(#[from] beamalign::impairments::ImpairmentError),
    #[error(transparent)]
    Calibration(#[from] beamalign::calibration::CalibrationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Run independent jobs over a small worker pool; the result vector is in
/// job order regardless of scheduling.
fn run_jobs<T: Send>(
    n_jobs: usize,
    workers: usize,
    job: impl Fn(usize) -> Result<T, RunnerError> + Sync,
) -> Result<Vec<T>, RunnerError> {
    if workers <= 1 {
        return (0..n_jobs).map(&job).collect();
    }
    let slots: Vec<Mutex<Option<Result<T, RunnerError>>>> =
        (0..n_jobs).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n_jobs.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n_jobs {
                    break;
                }
                let result = job(i);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("job executed"))
        .collect()
}

/// Channel source shared by all experiment commands.
enum ChannelSource {
    Generated {
        config: ChannelEnsembleConfig,
        nlos: bool,
    },
    Imported(Vec<PathChannel>),
}

impl ChannelSource {
    fn build(
        scenario: Scenario,
        n_tx: usize,
        n_rx: usize,
        seed: u64,
        channel_file: Option<&Path>,
    ) -> Result<Self, RunnerError> {
        match scenario {
            Scenario::Los => Ok(Self::Generated {
                config: ChannelEnsembleConfig::los_default(n_tx, n_rx, seed),
                nlos: false,
            }),
            Scenario::Nlos => Ok(Self::Generated {
                config: ChannelEnsembleConfig::nlos_default(n_tx, n_rx, seed),
                nlos: true,
            }),
            Scenario::Imported => {
                let path = channel_file.expect("validated by config");
                let channels = import_channels(path)?;
                if channels.is_empty() {
                    return Err(RunnerError::Invalid(format!(
                        "{}: no channels in file",
                        path.display()
                    )));
                }
                let (file_rx, file_tx) = (channels[0].n_rx, channels[0].n_tx);
                if file_tx != n_tx || file_rx != n_rx {
                    return Err(RunnerError::Invalid(format!(
                        "channel file is {file_rx}x{file_tx}, config wants {n_rx}x{n_tx}"
                    )));
                }
                Ok(Self::Imported(channels))
            }
        }
    }

    fn channel(&self, trial: u64) -> PathChannel {
        match self {
            Self::Generated { config, nlos } => {
                let mut rng = RngStream::derived(config.seed, &[domain::CHANNEL, trial]);
                if *nlos {
                    generate_nlos_channel(config, &mut rng)
                } else {
                    generate_los_channel(config, &mut rng)
                }
            }
            Self::Imported(channels) => channels[trial as usize % channels.len()].clone(),
        }
    }

    fn with_size(&self, n_tx: usize) -> Self {
        match self {
            Self::Generated { config, nlos } => Self::Generated {
                config: ChannelEnsembleConfig {
                    n_tx,
                    ..*config
                },
                nlos: *nlos,
            },
            Self::Imported(_) => unreachable!("sweeps reject imported scenarios"),
        }
    }
}

fn impairment_profiles(
    settings: &crate::config::ImpairmentSettings,
    base_seed: u64,
    n_tx: usize,
    n_rx: usize,
) -> (ImpairmentProfile, ImpairmentProfile) {
    let seed = settings.seed.unwrap_or(base_seed);
    let mut tx_rng = RngStream::derived(seed, &[domain::IMPAIRMENT, 0]);
    let mut rx_rng = RngStream::derived(seed, &[domain::IMPAIRMENT, 1]);
    let tx = sample_profile(
        n_tx,
        settings.sigma_d_wavelengths,
        settings.sigma_p_radians,
        settings.truncate,
        &mut tx_rng,
    );
    let rx = sample_profile(
        n_rx,
        settings.sigma_d_wavelengths,
        settings.sigma_p_radians,
        settings.truncate,
        &mut rx_rng,
    );
    (tx, rx)
}

fn snr_to_std(snr_db: f64, pilots: u32) -> f64 {
    beamalign::channel::effective_noise_std(snr_db, pilots)
}

/// Outcome of one (strategy, snr, trial) cell.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: u64,
    pub strategy: Strategy,
    pub snr_db: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub power_linear: f64,
    pub meas_count: usize,
    pub phi_hat: f64,
    pub theta_hat: f64,
    pub phi_true: Option<f64>,
    pub theta_true: Option<f64>,
    pub flags: String,
}

fn flags_of(result: &AlignmentResult) -> String {
    let mut flags = Vec::new();
    if result.tx_boundary_aux {
        flags.push("tx_boundary_aux");
    }
    if result.rx_boundary_aux {
        flags.push("rx_boundary_aux");
    }
    if result.tx_degenerate {
        flags.push("tx_degenerate_layer");
    }
    if result.rx_degenerate {
        flags.push("rx_degenerate_layer");
    }
    flags.join(";")
}

struct TrialContext<'a> {
    strategy: Strategy,
    snr_db: f64,
    pilots: u32,
    noise_path: [u64; 4],
    seed: u64,
    channel: &'a PathChannel,
    effective: &'a CMatrix,
    nets: Option<&'a NetPair>,
    cal_state: Option<&'a CalibrationState>,
}

fn execute_trial(ctx: &TrialContext) -> Result<(AlignmentResult, f64), RunnerError> {
    let mut rng = RngStream::derived(ctx.seed, &ctx.noise_path);
    let sigma = snr_to_std(ctx.snr_db, ctx.pilots);
    let result = match ctx.strategy {
        Strategy::Exhaustive => exhaustive_search(ctx.effective, sigma, &mut rng)?,
        Strategy::Binary => binary_search(ctx.effective, sigma, &mut rng)?,
        Strategy::Qssr => qssr_search(ctx.effective, sigma, &mut rng)?,
        Strategy::QssrNet => {
            qssr_net_search(ctx.effective, sigma, &mut rng, None, ctx.nets.unwrap())?
        }
        Strategy::QssrNetImpair => {
            let shaper = CompensationShaper {
                state: ctx.cal_state.unwrap(),
            };
            qssr_net_search(ctx.effective, sigma, &mut rng, Some(&shaper), ctx.nets.unwrap())?
        }
        Strategy::Oracle => oracle_alignment(ctx.channel)?,
    };
    let power = match ctx.strategy {
        Strategy::QssrNetImpair => {
            let shaper = CompensationShaper {
                state: ctx.cal_state.unwrap(),
            };
            evaluate_with(&result, ctx.effective, &shaper)
        }
        _ => evaluate(&result, ctx.effective),
    };
    Ok((result, power))
}

fn strategy_id(strategy: Strategy) -> u64 {
    match strategy {
        Strategy::Exhaustive => 1,
        Strategy::Binary => 2,
        Strategy::Qssr => 3,
        Strategy::QssrNet => 4,
        Strategy::QssrNetImpair => 5,
        Strategy::Oracle => 6,
    }
}

fn load_networks(
    strategies: &[Strategy],
    checkpoint: Option<&Path>,
) -> Result<Option<NetPair>, RunnerError> {
    if !strategies.iter().any(|s| s.needs_network()) {
        return Ok(None);
    }
    let path = checkpoint.ok_or_else(|| {
        RunnerError::Invalid("strategy set needs a trained network; pass --checkpoint".into())
    })?;
    let (state, _, _) = load_checkpoint(path)?;
    Ok(Some(state.nets))
}

/// Calibration pass for the compensated strategy: one run per evaluation SNR
/// unless the config pins a calibration SNR.
fn calibration_states(
    cfg: &ExperimentConfig,
    nets: &NetPair,
    tx_profile: &ImpairmentProfile,
    rx_profile: &ImpairmentProfile,
) -> Result<Vec<CalibrationState>, RunnerError> {
    let settings = cfg.calibration.as_ref().expect("validated by config");
    let mut states = Vec::with_capacity(cfg.snr_grid_db.len());
    for (snr_index, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let run = CalibrationRunConfig {
            epochs: settings.epochs,
            step_size: settings.step_size,
            update_period: settings.update_period,
            snr_db: settings.snr_db.unwrap_or(snr_db),
            pilots_per_measurement: cfg.pilots_per_measurement,
            fresh_channel_per_epoch: settings.fresh_channel_per_epoch,
        };
        let ensemble = match cfg.scenario {
            Scenario::Nlos => ChannelEnsembleConfig::nlos_default(cfg.n_tx, cfg.n_rx, cfg.seed),
            _ => ChannelEnsembleConfig::los_default(cfg.n_tx, cfg.n_rx, cfg.seed),
        };
        let mut stream = EnsembleStream { config: ensemble };
        let estimator_tx = beamalign::neural::NetEstimator(&nets.tx);
        let estimator = PairEstimator {
            tx: estimator_tx,
            rx: beamalign::neural::NetEstimator(&nets.rx),
        };
        let (state, _) = calibrate(
            CalibrationState::new(cfg.n_tx, cfg.n_rx),
            &estimator,
            &mut stream,
            Some(tx_profile),
            Some(rx_profile),
            &run,
            cfg.seed.wrapping_add(snr_index as u64),
        )?;
        states.push(state);
    }
    Ok(states)
}

/// Routes each side's scan to the matching network.
pub struct PairEstimator<'a> {
    pub tx: beamalign::neural::NetEstimator<'a>,
    pub rx: beamalign::neural::NetEstimator<'a>,
}

impl beamalign::search::AngleEstimator for PairEstimator<'_> {
    fn estimate(&self, scan: &beamalign::search::SideScan) -> beamalign::NormalizedAngle {
        use beamalign::search::AngleEstimator;
        match scan.side {
            beamalign::search::Side::Tx => self.tx.estimate(scan),
            beamalign::search::Side::Rx => self.rx.estimate(scan),
        }
    }
}

fn format_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v}")).unwrap_or_default()
}

pub const TRIAL_HEADER: &str =
    "trial,strategy,snr_db,n_tx,n_rx,power_linear,meas_count,phi_hat,theta_hat,phi_true,theta_true,flags";
pub const SUMMARY_HEADER: &str = "strategy,snr_db,n_tx,n_rx,trials,mean_power_db";

fn trial_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96 + 128);
    out.push_str(TRIAL_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.strategy.name(),
            r.snr_db,
            r.n_tx,
            r.n_rx,
            r.power_linear,
            r.meas_count,
            r.phi_hat,
            r.theta_hat,
            format_opt(r.phi_true),
            format_opt(r.theta_true),
            r.flags
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub snr_db: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub trials: usize,
    pub mean_power_db: f64,
}

/// dB of the mean linear power (never the mean of per-trial dB values).
pub fn mean_power_db(powers: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in powers {
        total += p;
        count += 1;
    }
    (count, 10.0 * (total / count as f64).log10())
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.strategy.name(),
            r.snr_db,
            r.n_tx,
            r.n_rx,
            r.trials,
            r.mean_power_db
        )
        .unwrap();
    }
    out
}

pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}_summary.csv"))
}

pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Full experiment: every (strategy, snr, trial) cell, trials paired across
/// strategies and SNRs through shared channel substreams.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    workers: usize,
) -> Result<ExperimentOutput, RunnerError> {
    let source = ChannelSource::build(
        cfg.scenario,
        cfg.n_tx,
        cfg.n_rx,
        cfg.seed,
        cfg.channel_file.as_deref(),
    )?;
    let nets = load_networks(&cfg.strategies, checkpoint)?;
    let profiles = cfg
        .impairments
        .as_ref()
        .map(|s| impairment_profiles(s, cfg.seed, cfg.n_tx, cfg.n_rx));
    let cal_states = match (
        cfg.strategies.contains(&Strategy::QssrNetImpair),
        &profiles,
        &nets,
    ) {
        (true, Some((tx, rx)), Some(nets)) => Some(calibration_states(cfg, nets, tx, rx)?),
        _ => None,
    };

    let n_strategies = cfg.strategies.len();
    let n_snrs = cfg.snr_grid_db.len();
    let n_jobs = n_strategies * n_snrs * cfg.n_trials;
    let records = run_jobs(n_jobs, workers, |job| {
        let s_index = job / (n_snrs * cfg.n_trials);
        let rest = job % (n_snrs * cfg.n_trials);
        let snr_index = rest / cfg.n_trials;
        let trial = (rest % cfg.n_trials) as u64;
        let strategy = cfg.strategies[s_index];
        let snr_db = cfg.snr_grid_db[snr_index];

        let channel = source.channel(trial);
        let effective = match &profiles {
            Some((tx, rx)) => impaired_channel(&channel, tx, rx)?,
            None => channel.matrix.clone(),
        };
        let ctx = TrialContext {
            strategy,
            snr_db,
            pilots: cfg.pilots_per_measurement,
            noise_path: [domain::NOISE, strategy_id(strategy), snr_index as u64, trial],
            seed: cfg.seed,
            channel: &channel,
            effective: &effective,
            nets: nets.as_ref(),
            cal_state: cal_states.as_ref().map(|s| &s[snr_index]),
        };
        let (result, power) = execute_trial(&ctx)?;
        Ok(TrialRecord {
            trial,
            strategy,
            snr_db,
            n_tx: cfg.n_tx,
            n_rx: cfg.n_rx,
            power_linear: power,
            meas_count: result.measurement_count,
            phi_hat: result.tx_angle.value(),
            theta_hat: result.rx_angle.value(),
            phi_true: channel.dominant_path().map(|p| p.aod.value()),
            theta_true: channel.dominant_path().map(|p| p.aoa.value()),
            flags: flags_of(&result),
        })
    })?;

    let mut summary = Vec::with_capacity(n_strategies * n_snrs);
    for (s_index, &strategy) in cfg.strategies.iter().enumerate() {
        for (snr_index, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
            let base = s_index * n_snrs * cfg.n_trials + snr_index * cfg.n_trials;
            let (trials, db) =
                mean_power_db(records[base..base + cfg.n_trials].iter().map(|r| r.power_linear));
            summary.push(SummaryRow {
                strategy,
                snr_db,
                n_tx: cfg.n_tx,
                n_rx: cfg.n_rx,
                trials,
                mean_power_db: db,
            });
        }
    }
    Ok(ExperimentOutput { records, summary })
}

pub fn write_experiment(out: &Path, output: &ExperimentOutput) -> Result<(), RunnerError> {
    std::fs::write(out, trial_csv(&output.records))?;
    std::fs::write(summary_path(out), summary_csv(&output.summary))?;
    Ok(())
}

/// Received power vs transmit aperture at fixed SNR.
pub fn run_antenna_sweep(
    cfg: &SweepConfig,
    checkpoint: Option<&Path>,
    workers: usize,
) -> Result<Vec<SummaryRow>, RunnerError> {
    let nets = load_networks(&cfg.strategies, checkpoint)?;
    let base_source = ChannelSource::build(cfg.scenario, 4, cfg.n_rx, cfg.seed, None)?;
    let mut rows = Vec::new();
    for (t_index, &n_tx) in cfg.n_tx_list.iter().enumerate() {
        let source = base_source.with_size(n_tx);
        let records = run_jobs(cfg.strategies.len() * cfg.n_trials, workers, |job| {
            let s_index = job / cfg.n_trials;
            let trial = (job % cfg.n_trials) as u64;
            let strategy = cfg.strategies[s_index];
            let channel = source.channel(trial);
            let ctx = TrialContext {
                strategy,
                snr_db: cfg.snr_db,
                pilots: cfg.pilots_per_measurement,
                noise_path: [
                    domain::NOISE,
                    strategy_id(strategy),
                    t_index as u64,
                    trial,
                ],
                seed: cfg.seed,
                channel: &channel,
                effective: &channel.matrix,
                nets: nets.as_ref(),
                cal_state: None,
            };
            let (_, power) = execute_trial(&ctx)?;
            Ok(power)
        })?;
        for (s_index, &strategy) in cfg.strategies.iter().enumerate() {
            let base = s_index * cfg.n_trials;
            let (trials, db) =
                mean_power_db(records[base..base + cfg.n_trials].iter().copied());
            rows.push(SummaryRow {
                strategy,
                snr_db: cfg.snr_db,
                n_tx,
                n_rx: cfg.n_rx,
                trials,
                mean_power_db: db,
            });
        }
    }
    Ok(rows)
}

pub fn write_summary(out: &Path, rows: &[SummaryRow]) -> Result<(), RunnerError> {
    std::fs::write(out, summary_csv(rows))?;
    Ok(())
}

pub const SCATTER_HEADER: &str = "trial,strategy,snr_db,theta_true,theta_hat,phi_true,phi_hat";

/// True-vs-predicted angle pairs at one SNR.
pub fn run_error_scatter(
    cfg: &ScatterConfig,
    checkpoint: Option<&Path>,
    workers: usize,
) -> Result<String, RunnerError> {
    let source = ChannelSource::build(cfg.scenario, cfg.n_tx, cfg.n_rx, cfg.seed, None)?;
    let nets = load_networks(&cfg.strategies, checkpoint)?;
    let rows = run_jobs(cfg.strategies.len() * cfg.n_trials, workers, |job| {
        let s_index = job / cfg.n_trials;
        let trial = (job % cfg.n_trials) as u64;
        let strategy = cfg.strategies[s_index];
        let channel = source.channel(trial);
        let ctx = TrialContext {
            strategy,
            snr_db: cfg.snr_db,
            pilots: cfg.pilots_per_measurement,
            noise_path: [domain::NOISE, strategy_id(strategy), 0, trial],
            seed: cfg.seed,
            channel: &channel,
            effective: &channel.matrix,
            nets: nets.as_ref(),
            cal_state: None,
        };
        let (result, _) = execute_trial(&ctx)?;
        let dominant = channel.dominant_path().expect("generated channels have paths");
        Ok(format!(
            "{},{},{},{},{},{},{}",
            trial,
            strategy.name(),
            cfg.snr_db,
            dominant.aoa.value(),
            result.rx_angle.value(),
            dominant.aod.value(),
            result.tx_angle.value()
        ))
    })?;
    let mut out = String::new();
    out.push_str(SCATTER_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

/// Train (or resume) the network pair; prints one loss line per epoch.
pub fn train_command(
    cfg: &TrainConfig,
    checkpoint: &Path,
    resume: bool,
) -> Result<(), RunnerError> {
    let start = if resume {
        let (state, n_tx, n_rx) = load_checkpoint(checkpoint)?;
        if n_tx != cfg.n_tx || n_rx != cfg.n_rx {
            return Err(RunnerError::Invalid(format!(
                "checkpoint is for {n_tx}x{n_rx}, config wants {}x{}",
                cfg.n_tx, cfg.n_rx
            )));
        }
        println!("resuming from epoch {}", state.epoch);
        Some(state)
    } else {
        None
    };
    let sampler = los_sampler(cfg);
    let start_epoch = start.as_ref().map(|s| s.epoch).unwrap_or(0);
    let (state, report) = train(cfg, &sampler, start)?;
    for (offset, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>4}: mean training loss {loss:.6}", start_epoch + offset);
    }
    save_checkpoint(checkpoint, &state, cfg)?;
    println!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

pub const CALIBRATION_TRACE_HEADER: &str = "epoch,loss,power_linear";

/// Run self-calibration under sampled impairments; returns the trace CSV.
pub fn calibrate_command(
    cfg: &CalibrateConfig,
    checkpoint: &Path,
) -> Result<(String, CalibrationState), RunnerError> {
    let (state, _, _) = load_checkpoint(checkpoint)?;
    let nets = state.nets;
    let (tx_profile, rx_profile) =
        impairment_profiles(&cfg.impairments, cfg.seed, cfg.n_tx, cfg.n_rx);
    let ensemble = match cfg.scenario {
        Scenario::Nlos => ChannelEnsembleConfig::nlos_default(cfg.n_tx, cfg.n_rx, cfg.seed),
        _ => ChannelEnsembleConfig::los_default(cfg.n_tx, cfg.n_rx, cfg.seed),
    };
    let mut stream = EnsembleStream { config: ensemble };
    let estimator = PairEstimator {
        tx: beamalign::neural::NetEstimator(&nets.tx),
        rx: beamalign::neural::NetEstimator(&nets.rx),
    };
    let run = CalibrationRunConfig {
        epochs: cfg.epochs,
        step_size: cfg.step_size,
        update_period: cfg.update_period,
        snr_db: cfg.snr_db,
        pilots_per_measurement: cfg.pilots_per_measurement,
        fresh_channel_per_epoch: cfg.fresh_channel_per_epoch,
    };
    let (state, trace) = calibrate(
        CalibrationState::new(cfg.n_tx, cfg.n_rx),
        &estimator,
        &mut stream,
        Some(&tx_profile),
        Some(&rx_profile),
        &run,
        cfg.seed,
    )?;
    let mut csv = String::new();
    csv.push_str(CALIBRATION_TRACE_HEADER);
    csv.push('\n');
    for row in &trace {
        writeln!(csv, "{},{},{}", row.epoch, row.loss, row.achieved_power).unwrap();
    }
    Ok((csv, state))
}

/// Generate and write a channel ensemble in the interchange format.
pub fn export_command(cfg: &ExportConfig, out: &Path) -> Result<(), RunnerError> {
    let source = ChannelSource::build(cfg.scenario, cfg.n_tx, cfg.n_rx, cfg.seed, None)?;
    let channels: Vec<PathChannel> = (0..cfg.count as u64).map(|t| source.channel(t)).collect();
    export_channels(out, &channels)?;
    Ok(())
}

/// Validate a channel file and print a short report.
pub fn import_command(file: &Path) -> Result<String, RunnerError> {
    let channels = import_channels(file)?;
    let (n_rx, n_tx) = (channels[0].n_rx, channels[0].n_tx);
    let mut min_norm = f64::INFINITY;
    let mut max_norm = f64::NEG_INFINITY;
    for ch in &channels {
        let n = ch.matrix.frobenius_norm_sq();
        min_norm = min_norm.min(n);
        max_norm = max_norm.max(n);
    }
    Ok(format!(
        "{}: {} channels, {}x{}, renormalized Frobenius^2 range [{:.12}, {:.12}]",
        file.display(),
        channels.len(),
        n_rx,
        n_tx,
        min_norm,
        max_norm
    ))
}

pub fn print_summary(rows: &[SummaryRow]) {
    println!("strategy          snr_db   n_tx  n_rx  trials  mean_power_db");
    for r in rows {
        println!(
            "{:<17} {:>6} {:>6} {:>5} {:>7}  {:>12.4}",
            r.strategy.name(),
            r.snr_db,
            r.n_tx,
            r.n_rx,
            r.trials,
            r.mean_power_db
        );
    }
}
