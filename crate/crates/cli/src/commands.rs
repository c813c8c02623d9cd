//! Subcommand bodies. Each returns the process exit code or a [`Failure`].

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdmrac::bnn::{elbo_loss, train, Checkpoint, NetworkVersion};
use sdmrac::buffer::{read_buffer_csv, write_buffer_csv};
use sdmrac::error::IoError;
use sdmrac::harness::{
    pe_spectrum, run_experiment, run_pe_spectrum, write_pe_csv, ComparisonReport, Experiment, ExperimentConfig, Mode,
    RunFailure, RunOutput,
};

use crate::figures;
use crate::table::Table;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

/// Seed stream used for offline training, matching the in-loop trainer.
const TRAIN_STREAM: u64 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Self {
        Self::usage(message)
    }
}

pub type Outcome = Result<(), Failure>;

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub horizon: Option<f64>,
    pub gamma: Option<f64>,
    pub pipelined: bool,
}

pub fn load_config(path: Option<&Path>, o: &Overrides) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(m) = o.mode {
        cfg.mode = m;
    }
    if let Some(h) = o.horizon {
        cfg.horizon = h;
    }
    if let Some(g) = o.gamma {
        cfg.controller.gamma = g;
    }
    cfg.pipelined |= o.pipelined;
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

/// Creates `dir`, refusing a non-empty existing one unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Outcome {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| Failure::usage(format!("cannot read {}: {e}", dir.display())))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Failure::usage(format!(
                "output directory {} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let p = dir.join(name);
    File::create(&p)
        .map(BufWriter::new)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", p.display())))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Outcome {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", p.display())))
}

fn write_complete(dir: &Path, cfg: &ExperimentConfig, run: &RunOutput<f64>) -> Outcome {
    run.log.write_csv(create(dir, "trajectory.csv")?)?;
    run.adaptive.write_weights_csv(create(dir, "weights.csv")?)?;
    run.adaptive.write_uncertainty_csv(create(dir, "uncertainty.csv")?)?;
    run.adaptive.write_features_csv(create(dir, "features.csv")?)?;
    write_buffer_csv(&run.buffer, create(dir, "buffer.csv")?)?;
    run.report.write_json(create(dir, "diagnostics.json")?)?;
    let d = &cfg.diagnostics;
    if let Ok(pe) = run_pe_spectrum(run, d.pe_window, d.pe_stride, d.pe_threshold) {
        write_pe_csv(&pe, create(dir, "pe_report.csv")?)?;
    }
    figures::render_run(dir)?;
    Ok(())
}

fn write_partial(dir: &Path, f: &RunFailure<f64>) -> Outcome {
    f.log.write_csv(create(dir, "trajectory.csv")?)?;
    if !f.adaptive.is_empty() {
        f.adaptive.write_weights_csv(create(dir, "weights.csv")?)?;
        f.adaptive.write_uncertainty_csv(create(dir, "uncertainty.csv")?)?;
        f.adaptive.write_features_csv(create(dir, "features.csv")?)?;
    }
    write_text(dir, "failure.txt", &format!("{}\n", f))?;
    if !f.log.is_empty() {
        figures::render_run(dir)?;
    }
    Ok(())
}

/// Runs one experiment into `dir`; divergence leaves partial logs and
/// exits with [`EXIT_DIVERGED`].
fn run_into(dir: &Path, cfg: &ExperimentConfig) -> Result<RunOutput<f64>, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
    write_text(dir, "config.toml", &cfg.to_toml_string())?;
    match run_experiment::<f64>(cfg) {
        Ok(run) => {
            write_complete(dir, cfg, &run)?;
            Ok(run)
        }
        Err(f) if f.is_divergence() => {
            write_partial(dir, &f)?;
            Err(Failure {
                code: EXIT_DIVERGED,
                message: format!("{} run diverged: {f}; partial logs in {}", cfg.mode, dir.display()),
            })
        }
        Err(f) => Err(Failure::usage(f.to_string())),
    }
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path, force: bool) -> Outcome {
    prepare_output_dir(out, force)?;
    let run = run_into(out, cfg)?;
    let r = &run.report;
    println!(
        "{} seed {}: rms tracking error {:.4e} (after settle {:.4e}), {} retrains, max ||W|| {:.4}; wrote {}",
        r.mode,
        r.seed,
        r.rms_tracking_error,
        r.rms_tracking_error_after_settle,
        r.retrain_times.len(),
        r.max_weight_norm,
        out.display()
    );
    Ok(())
}

pub fn compare(a: &ExperimentConfig, b: &ExperimentConfig, out: &Path, force: bool) -> Outcome {
    if !a.same_setup(b) {
        return Err(Failure::usage(
            "compared runs must share plant, gains, seed, horizon and reference schedule",
        ));
    }
    prepare_output_dir(out, force)?;
    let ra = run_into(&out.join("a"), a)?;
    let rb = run_into(&out.join("b"), b)?;
    let report = ComparisonReport::new(ra.report, rb.report);
    report.write_json(create(out, "comparison.json")?)?;
    figures::render_comparison(out)?;
    println!(
        "{} - {}: delta rms tracking error {:.4e}, delta weight total variation {:.4e}; wrote {}",
        a.mode,
        b.mode,
        report.delta_rms_tracking_error,
        report.delta_weight_total_variation,
        out.display()
    );
    Ok(())
}

pub struct TrainOptions {
    pub buffer: PathBuf,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

pub fn train_offline(cfg: &ExperimentConfig, opts: &TrainOptions, out: &Path, force: bool) -> Outcome {
    let file = File::open(&opts.buffer)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", opts.buffer.display())))?;
    let data: Vec<(Vec<f64>, Vec<f64>)> = read_buffer_csv(file)?;
    if data.is_empty() {
        return Err(Failure::usage(format!("{} holds no training points", opts.buffer.display())));
    }
    let exp = Experiment::<f64>::from_config(cfg).map_err(|e| Failure::usage(e.to_string()))?;
    let net = exp.network;
    if data.iter().any(|(x, y)| x.len() != net.input_dim() || y.len() != net.output_dim()) {
        return Err(Failure::usage(format!(
            "buffer points do not fit the configured {} -> {} network",
            net.input_dim(),
            net.output_dim()
        )));
    }
    let mut tc = cfg.train.clone();
    if let Some(e) = opts.epochs {
        tc.epochs = e;
    }
    if let Some(b) = opts.batch_size {
        tc.batch_size = b;
    }
    if tc.epochs > 0 && data.len() < tc.batch_size {
        return Err(Failure::usage(format!(
            "{} points in the buffer, fewer than the batch size {}; lower it with --batch-size",
            data.len(),
            tc.batch_size
        )));
    }
    prepare_output_dir(out, force)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let initial = NetworkVersion::initial(net);
    let kl_weight = tc.kl_weight.unwrap_or(1.0 / data.len() as f64);
    let b = tc.batch_size.min(data.len());
    let mut initial_loss = 0.0;
    let chunks = data.len() / b;
    for chunk in data.chunks_exact(b) {
        initial_loss += elbo_loss(initial.network(), chunk, tc.mc_samples.max(1), kl_weight, &mut rng)
            .map_err(|e| Failure::usage(e.to_string()))?
            / (b * chunks) as f64;
    }
    let (version, losses) = if tc.epochs == 0 {
        (initial, Vec::new())
    } else {
        let (v, report) = train(&initial, &data, &tc, &mut rng).map_err(|e| Failure::usage(e.to_string()))?;
        (v, report.epoch_losses)
    };
    Checkpoint::from_version(&version).write_json(create(out, "checkpoint.json")?)?;
    let mut w = csv::Writer::from_writer(create(out, "loss_curve.csv")?);
    let csv_err = |e: csv::Error| Failure::usage(e.to_string());
    w.write_record(["epoch", "loss_per_point"]).map_err(csv_err)?;
    w.write_record(["0".to_string(), initial_loss.to_string()]).map_err(csv_err)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), (l / tc.batch_size as f64).to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Failure::usage(e.to_string()))?;
    println!(
        "trained on {} points for {} epochs; loss per point {:.4e} -> {:.4e}; wrote {}",
        data.len(),
        losses.len(),
        initial_loss,
        losses.last().map_or(initial_loss, |l| l / tc.batch_size as f64),
        out.display()
    );
    Ok(())
}

pub struct PeOptions {
    pub input_dir: PathBuf,
    pub window: Option<f64>,
    pub stride: Option<f64>,
    pub threshold: Option<f64>,
    pub output: Option<PathBuf>,
}

pub fn pe_report(opts: &PeOptions) -> Outcome {
    let cfg_path = opts.input_dir.join("config.toml");
    let d = if cfg_path.exists() {
        ExperimentConfig::load(&cfg_path)
            .map_err(|e| Failure::usage(e.to_string()))?
            .diagnostics
    } else {
        ExperimentConfig::default().diagnostics
    };
    let feats = Table::read(&opts.input_dir.join("features.csv"))?;
    let t = feats.column("t")?.to_vec();
    let cols = feats.columns_with_prefix("phi");
    if cols.is_empty() {
        return Err(Failure::usage("features.csv has no phi columns"));
    }
    let phi: Vec<Vec<f64>> = (0..feats.len()).map(|i| cols.iter().map(|(_, c)| c[i]).collect()).collect();
    let window = opts.window.unwrap_or(d.pe_window);
    let stride = opts.stride.unwrap_or(d.pe_stride);
    let threshold = opts.threshold.unwrap_or(d.pe_threshold);
    let reports = pe_spectrum(&t, &phi, window, stride, threshold).map_err(|e| Failure::usage(e.to_string()))?;
    let out = opts.output.clone().unwrap_or_else(|| opts.input_dir.join("pe_report.csv"));
    let file = File::create(&out).map_err(|e| Failure::usage(format!("cannot write {}: {e}", out.display())))?;
    write_pe_csv(&reports, BufWriter::new(file))?;
    let below = reports.iter().filter(|r| !r.is_exciting()).count();
    println!(
        "{} windows of {window} s, {below} with lambda_min below {threshold:e}; wrote {}",
        reports.len(),
        out.display()
    );
    Ok(())
}

pub fn plot(dir: &Path) -> Outcome {
    let mut written = Vec::new();
    if dir.join("comparison.json").exists() {
        for side in ["a", "b"] {
            written.extend(figures::render_run(&dir.join(side))?);
        }
        written.extend(figures::render_comparison(dir)?);
    } else {
        written.extend(figures::render_run(dir)?);
    }
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}
