//! The closed adaptive loop: control stepping, buffer admission, retraining
//! and version switching.

use std::sync::mpsc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, RetrainTrigger, UncertaintyKind};
use super::diagnostics::DiagnosticsReport;
use crate::adapt::{baseline_control, update_fast_weights, ControllerGains, FastWeights, LearningRate};
use crate::bnn::{mean_of, train, BayesianNetwork, InitConfig, NetworkVersion, PosteriorKind, TrainConfig, TrainReport};
use crate::buffer::{BufferRecord, ReplayBuffer};
use crate::dynamics::{
    integrate_closed_loop, ControlOutput, IntegratorConfig, SimulationFailure, LinearPlant, ReferenceModel, StepContext,
    TrajectoryLog, WingRockParams,
};
use crate::error::{BnnError, DynamicsError, HarnessError};
use crate::linalg::Matrix;
use crate::scalar::Real;

const INIT_STREAM: u64 = 0;
const CONTROL_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Per-step adaptive quantities, aligned with the trajectory log rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AdaptiveLog<T> {
    pub features: usize,
    pub outputs: usize,
    pub t: Vec<T>,
    /// `W` before this step's update, row-major `k × m`.
    pub weights: Vec<Vec<T>>,
    /// The feature sample used in `u_ad`.
    pub phi: Vec<Vec<T>>,
    /// `N`-draw feature mean used by the update law and the buffer.
    pub phi_mean: Vec<Vec<T>>,
    /// `Wᵀ φ̄`.
    pub u_ad_mean: Vec<Vec<T>>,
    /// Standard deviation of `Wᵀ φ_i` over the `N` draws (epistemic).
    pub u_ad_std: Vec<Vec<T>>,
    pub sigma: Vec<u64>,
}

impl<T: Real> AdaptiveLog<T> {
    pub fn new(features: usize, outputs: usize) -> Self {
        Self {
            features,
            outputs,
            t: Vec::new(),
            weights: Vec::new(),
            phi: Vec::new(),
            phi_mean: Vec::new(),
            u_ad_mean: Vec::new(),
            u_ad_std: Vec::new(),
            sigma: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `‖W‖_F` per step.
    pub fn weight_norms(&self) -> Vec<T> {
        self.weights.iter().map(|w| crate::scalar::norm(w)).collect()
    }

    /// Columns `t, sigma, w_1_1 .. w_k_m` (feature index, then output index).
    pub fn write_weights_csv<W: std::io::Write>(&self, writer: W) -> Result<(), crate::error::IoError> {
        let mut header = vec!["t".to_string(), "sigma".to_string()];
        for i in 1..=self.features {
            for j in 1..=self.outputs {
                header.push(format!("w_{i}_{j}"));
            }
        }
        let rows = (0..self.len()).map(|i| {
            let mut rec = vec![self.t[i].to_string(), self.sigma[i].to_string()];
            rec.extend(self.weights[i].iter().map(|v| v.to_string()));
            rec
        });
        write_rows(writer, header, rows)
    }

    /// Columns `t, u_ad_mean, u_ad_std` (indexed per output when `m > 1`).
    pub fn write_uncertainty_csv<W: std::io::Write>(&self, writer: W) -> Result<(), crate::error::IoError> {
        let mut header = vec!["t".to_string()];
        for name in ["u_ad_mean", "u_ad_std"] {
            if self.outputs == 1 {
                header.push(name.into());
            } else {
                header.extend((1..=self.outputs).map(|j| format!("{name}{j}")));
            }
        }
        let rows = (0..self.len()).map(|i| {
            let mut rec = vec![self.t[i].to_string()];
            rec.extend(self.u_ad_mean[i].iter().chain(&self.u_ad_std[i]).map(|v| v.to_string()));
            rec
        });
        write_rows(writer, header, rows)
    }

    /// Columns `t, phi1..phik` of the sampled features.
    pub fn write_features_csv<W: std::io::Write>(&self, writer: W) -> Result<(), crate::error::IoError> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.features).map(|i| format!("phi{i}")));
        let rows = (0..self.len()).map(|i| {
            let mut rec = vec![self.t[i].to_string()];
            rec.extend(self.phi[i].iter().map(|v| v.to_string()));
            rec
        });
        write_rows(writer, header, rows)
    }
}

fn write_rows<W: std::io::Write>(
    writer: W,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), crate::error::IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// One publication of a retrained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainEvent {
    /// Control time at which the new version went live.
    pub t: f64,
    pub sigma: u64,
    pub training_points: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub aborted_epochs: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput<T: Real> {
    pub log: TrajectoryLog<T>,
    pub adaptive: AdaptiveLog<T>,
    pub report: DiagnosticsReport,
    pub retrains: Vec<RetrainEvent>,
    pub buffer: Vec<BufferRecord<T>>,
    pub final_version: NetworkVersion<T>,
}

/// A run that diverged, with everything logged up to the failure.
#[derive(Debug)]
pub struct RunFailure<T: Real> {
    pub error: HarnessError,
    pub log: TrajectoryLog<T>,
    pub adaptive: AdaptiveLog<T>,
    pub retrains: Vec<RetrainEvent>,
}

impl<T: Real> std::fmt::Display for RunFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} steps logged)", self.error, self.log.len())
    }
}

impl<T: Real> std::error::Error for RunFailure<T> {}

impl<T: Real> RunFailure<T> {
    /// True when the state itself blew up, as opposed to a setup error.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self.error,
            HarnessError::Dynamics(DynamicsError::NonFinite { .. } | DynamicsError::Controller { .. })
        )
    }
}

/// Everything a run needs, built from an [`ExperimentConfig`]. Fields may be
/// replaced before [`Experiment::run`] to study synthetic plants or frozen
/// networks.
#[derive(Clone, Debug)]
pub struct Experiment<T: Real> {
    pub config: ExperimentConfig,
    pub plant: LinearPlant<T>,
    pub model: ReferenceModel<T>,
    pub gains: ControllerGains<T>,
    pub network: BayesianNetwork<T>,
    pub initial_weights: Matrix<T>,
    pub x0: Vec<T>,
}

impl<T: Real> Experiment<T> {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let plant = match cfg.plant.uncertainty {
            UncertaintyKind::WingRock => LinearPlant::wing_rock(WingRockParams {
                w: cfg.plant.wing_rock_weights.map(T::lit),
            }),
            UncertaintyKind::None => {
                let wr = LinearPlant::<T>::wing_rock(WingRockParams::default());
                LinearPlant::new(wr.a().clone(), wr.b().clone())?
            }
        };
        let model = ReferenceModel::second_order(T::lit(cfg.reference.natural_frequency), T::lit(cfg.reference.damping))?;
        let q = Matrix::diagonal(&cfg.controller.q_diag.iter().map(|&v| T::lit(v)).collect::<Vec<_>>());
        let gains = ControllerGains::from_matching(&plant, &model, LearningRate::Scalar(T::lit(cfg.controller.gamma)), q)?;
        let mut sizes = vec![plant.state_dim()];
        sizes.extend(&cfg.bnn.hidden);
        sizes.push(plant.input_dim());
        let init = InitConfig {
            mu_std: cfg.bnn.init_mu_std,
            rho: cfg.bnn.init_rho,
            prior_std: cfg.bnn.prior_std,
            likelihood_std: cfg.bnn.likelihood_std,
            hidden_activation: cfg.bnn.activation,
            output_bias: false,
            kind: PosteriorKind::Variational,
        };
        let mut network = BayesianNetwork::init(&sizes, &init, &mut stream(cfg.seed, INIT_STREAM))?;
        if cfg.mode == Mode::Dmrac {
            network = network.into_point_estimate();
        }
        let k = network.feature_dim();
        let scale = cfg.plant.units.from_degrees();
        Ok(Self {
            x0: cfg.plant.initial_state_deg.iter().map(|&v| T::lit(v * scale)).collect(),
            initial_weights: Matrix::zeros(k, plant.input_dim()),
            config: cfg.clone(),
            plant,
            model,
            gains,
            network,
        })
    }

    /// Runs the loop and computes the diagnostics.
    pub fn run(&self) -> Result<RunOutput<T>, Box<RunFailure<T>>> {
        let cfg = &self.config;
        let mut state = LoopState::new(self);
        let (log, trainer_error) = if cfg.pipelined && cfg.mode != Mode::BaselineOnly {
            self.run_pipelined(&mut state)
        } else {
            (self.simulate(&mut state, &mut InlineTrainer::new(&cfg.train, cfg.seed)), None)
        };
        let log = match (log, trainer_error) {
            (Ok(log), None) => log,
            (Ok(log), Some(e)) => return Err(state.fail(e, log)),
            (Err(f), _) => return Err(state.fail(HarnessError::Dynamics(f.error), f.partial)),
        };
        let report = match DiagnosticsReport::from_run(cfg, &log, &state.adaptive, &state.retrains, state.buffer.len()) {
            Ok(r) => r,
            Err(e) => return Err(state.fail(e, log)),
        };
        Ok(RunOutput {
            log,
            adaptive: state.adaptive,
            report,
            retrains: state.retrains,
            buffer: state.buffer.records().to_vec(),
            final_version: state.version,
        })
    }

    fn run_pipelined(
        &self,
        state: &mut LoopState<T>,
    ) -> (Result<TrajectoryLog<T>, SimulationFailure<T>>, Option<HarnessError>) {
        let train_cfg = self.config.train.clone();
        let seed = self.config.seed;
        std::thread::scope(|s| {
            let (job_tx, job_rx) = mpsc::channel::<TrainJob<T>>();
            let (done_tx, done_rx) = mpsc::channel();
            s.spawn(move || {
                let mut rng = stream(seed, TRAIN_STREAM);
                for job in job_rx {
                    let result = train(&job.base, &job.data, &train_cfg, &mut rng);
                    if done_tx.send((result, job.data.len())).is_err() {
                        break;
                    }
                }
            });
            let mut trainer = PipelinedTrainer {
                jobs: Some(job_tx),
                done: done_rx,
                busy: false,
                error: None,
            };
            let log = self.simulate(state, &mut trainer);
            trainer.jobs = None;
            (log, trainer.error)
        })
    }

    fn simulate(
        &self,
        state: &mut LoopState<T>,
        trainer: &mut dyn Trainer<T>,
    ) -> Result<TrajectoryLog<T>, SimulationFailure<T>> {
        let cfg = &self.config;
        let scale = cfg.plant.units.from_degrees();
        let signal = cfg.reference.signal.clone();
        let reference = move |t: T| vec![T::lit(signal.value_deg(t.as_f64()) * scale)];
        let x_m0 = self.x0.clone();
        integrate_closed_loop(
            &self.plant,
            &self.model,
            |ctx: &StepContext<'_, T>| state.step(self, trainer, ctx).map_err(|e| e.to_string()),
            reference,
            &self.x0,
            &x_m0,
            T::lit(cfg.horizon),
            &IntegratorConfig {
                dt: T::lit(cfg.integrator.dt),
                method: cfg.integrator.method,
            },
        )
    }
}

/// Builds the experiment from `cfg` and runs it.
pub fn run_experiment<T: Real>(cfg: &ExperimentConfig) -> Result<RunOutput<T>, Box<RunFailure<T>>> {
    let exp = Experiment::from_config(cfg).map_err(|error| {
        Box::new(RunFailure {
            error,
            log: TrajectoryLog::new(0, 0),
            adaptive: AdaptiveLog::new(0, 0),
            retrains: Vec::new(),
        })
    })?;
    exp.run()
}

struct TrainJob<T: Real> {
    base: NetworkVersion<T>,
    data: Vec<(Vec<T>, Vec<T>)>,
}

type Trained<T> = (Result<(NetworkVersion<T>, TrainReport<T>), BnnError>, usize);

/// Where retraining happens. `submit` is only called when `ready` is true;
/// `poll` returns a finished result, if any, without blocking.
trait Trainer<T: Real> {
    fn ready(&self) -> bool;
    fn submit(&mut self, job: TrainJob<T>);
    fn poll(&mut self) -> Option<Trained<T>>;
}

struct InlineTrainer<T: Real> {
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    finished: Option<Trained<T>>,
}

impl<T: Real> InlineTrainer<T> {
    fn new(cfg: &TrainConfig, seed: u64) -> Self {
        Self {
            cfg: cfg.clone(),
            rng: stream(seed, TRAIN_STREAM),
            finished: None,
        }
    }
}

impl<T: Real> Trainer<T> for InlineTrainer<T> {
    fn ready(&self) -> bool {
        true
    }

    fn submit(&mut self, job: TrainJob<T>) {
        let n = job.data.len();
        self.finished = Some((train(&job.base, &job.data, &self.cfg, &mut self.rng), n));
    }

    fn poll(&mut self) -> Option<Trained<T>> {
        self.finished.take()
    }
}

struct PipelinedTrainer<T: Real> {
    jobs: Option<mpsc::Sender<TrainJob<T>>>,
    done: mpsc::Receiver<Trained<T>>,
    busy: bool,
    error: Option<HarnessError>,
}

impl<T: Real> Trainer<T> for PipelinedTrainer<T> {
    fn ready(&self) -> bool {
        !self.busy && self.jobs.is_some()
    }

    fn submit(&mut self, job: TrainJob<T>) {
        if let Some(tx) = &self.jobs {
            if tx.send(job).is_ok() {
                self.busy = true;
            } else {
                self.error = Some(HarnessError::Config("training worker stopped".into()));
                self.jobs = None;
            }
        }
    }

    fn poll(&mut self) -> Option<Trained<T>> {
        match self.done.try_recv() {
            Ok(r) => {
                self.busy = false;
                Some(r)
            }
            Err(_) => None,
        }
    }
}

struct LoopState<T: Real> {
    version: NetworkVersion<T>,
    w: FastWeights<T>,
    buffer: ReplayBuffer<T>,
    adaptive: AdaptiveLog<T>,
    retrains: Vec<RetrainEvent>,
    rng: ChaCha8Rng,
    new_points: usize,
    steps_since_retrain: usize,
}

impl<T: Real> LoopState<T> {
    fn new(exp: &Experiment<T>) -> Self {
        let net = exp.network.clone();
        let k = net.feature_dim();
        let m = net.output_dim();
        Self {
            version: NetworkVersion::initial(net),
            w: FastWeights::from_matrix(exp.initial_weights.clone(), T::lit(exp.config.controller.weight_bound)),
            buffer: ReplayBuffer::new(&exp.config.buffer),
            adaptive: AdaptiveLog::new(k, m),
            retrains: Vec::new(),
            rng: stream(exp.config.seed, CONTROL_STREAM),
            new_points: 0,
            steps_since_retrain: 0,
        }
    }

    fn fail(self, error: HarnessError, log: TrajectoryLog<T>) -> Box<RunFailure<T>> {
        Box::new(RunFailure {
            error,
            log,
            adaptive: self.adaptive,
            retrains: self.retrains,
        })
    }

    fn step(
        &mut self,
        exp: &Experiment<T>,
        trainer: &mut dyn Trainer<T>,
        ctx: &StepContext<'_, T>,
    ) -> Result<ControlOutput<T>, HarnessError> {
        let cfg = &exp.config;
        if let Some(done) = trainer.poll() {
            self.publish(done, ctx.t)?;
        }
        let version = self.version.clone();
        let net = version.network();
        let draws = net.feature_draws(ctx.x, cfg.controller.mc_draws, &mut self.rng);
        let phi = match net.kind() {
            PosteriorKind::PointEstimate => draws[0].clone(),
            PosteriorKind::Variational => net.sample_features(ctx.x, &mut self.rng),
        };
        let phi_mean = mean_of(&draws);
        let wm = self.w.matrix();
        let per_draw: Vec<Vec<T>> = draws.iter().map(|d| wm.tr_mul_vec(d)).collect();
        let u_ad_mean = wm.tr_mul_vec(&phi_mean);
        let n = T::lit((draws.len() - 1) as f64);
        let u_ad_std = (0..u_ad_mean.len())
            .map(|j| (per_draw.iter().map(|p| (p[j] - u_ad_mean[j]).powi(2)).sum::<T>() / n).sqrt())
            .collect();
        let u_ad = match cfg.mode {
            Mode::BaselineOnly => vec![T::zero(); u_ad_mean.len()],
            _ => wm.tr_mul_vec(&phi),
        };
        let u = baseline_control(&exp.gains, ctx.x, ctx.r)
            .into_iter()
            .zip(&u_ad)
            .map(|(b, &a)| b - a)
            .collect();

        let log = &mut self.adaptive;
        log.t.push(ctx.t);
        log.weights.push(wm.as_slice().to_vec());
        log.phi.push(phi);
        log.phi_mean.push(phi_mean.clone());
        log.u_ad_mean.push(u_ad_mean);
        log.u_ad_std.push(u_ad_std);
        log.sigma.push(version.sigma());

        if cfg.mode != Mode::BaselineOnly {
            if self.buffer.admit_with_features(ctx.x, ctx.t, &self.w, &phi_mean, version.sigma())? {
                self.new_points += 1;
            }
            let e: Vec<T> = ctx.x_m.iter().zip(ctx.x).map(|(&a, &b)| a - b).collect();
            self.w = update_fast_weights(&self.w, &phi_mean, &e, &exp.gains, T::lit(cfg.integrator.dt))?;
            self.steps_since_retrain += 1;
            self.maybe_retrain(trainer, ctx.t, cfg)?;
        }
        Ok(ControlOutput { u, u_ad })
    }

    fn maybe_retrain(&mut self, trainer: &mut dyn Trainer<T>, t: T, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
        let due = match cfg.retrain.trigger {
            RetrainTrigger::NewPoints { count } => self.new_points >= count,
            RetrainTrigger::EveryKSteps { steps } => self.steps_since_retrain >= steps,
            RetrainTrigger::Never => false,
        };
        if !due || !trainer.ready() || self.buffer.len() < cfg.train.batch_size {
            return Ok(());
        }
        // The trained output layer is never used online (W takes its place),
        // but starting it at W keeps the inner layers' targets consistent.
        let mut net = self.version.network().clone();
        net.set_output_weights(self.w.matrix())?;
        trainer.submit(TrainJob {
            base: NetworkVersion::restore(self.version.sigma(), net),
            data: self.buffer.snapshot(),
        });
        self.new_points = 0;
        self.steps_since_retrain = 0;
        if let Some(done) = trainer.poll() {
            self.publish(done, t)?;
        }
        Ok(())
    }

    fn publish(&mut self, (result, points): Trained<T>, t: T) -> Result<(), HarnessError> {
        let (next, report) = result?;
        debug_assert_eq!(next.sigma(), self.version.sigma() + 1);
        self.retrains.push(RetrainEvent {
            t: t.as_f64(),
            sigma: next.sigma(),
            training_points: points,
            initial_loss: report.epoch_losses.first().map(|v| v.as_f64()),
            final_loss: report.epoch_losses.last().map(|v| v.as_f64()),
            aborted_epochs: report.aborted_epochs,
        });
        self.version = next;
        Ok(())
    }
}
