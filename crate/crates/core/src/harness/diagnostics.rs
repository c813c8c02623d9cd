//! Post-run analysis: excitation spectra, ideal-weight fits and summary
//! statistics.

use std::io::Write;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::config::{DiagnosticsConfig, ExperimentConfig, Mode};
use super::experiment::{AdaptiveLog, RetrainEvent};
use crate::dynamics::TrajectoryLog;
use crate::error::{HarnessError, IoError};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Excitation of one window: `∫ Φ Φᵀ dτ` and its smallest eigenvalue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PEWindowReport<T> {
    pub start: T,
    pub end: T,
    pub gram: Matrix<T>,
    pub lambda_min: T,
    pub gamma_threshold: T,
}

impl<T: Real> PEWindowReport<T> {
    pub fn is_exciting(&self) -> bool {
        self.lambda_min > self.gamma_threshold
    }
}

/// Trapezoid-integrated feature Gram matrices over sliding windows
/// `[s, s + window]`, `s = 0, stride, 2·stride, …`, measured from the first
/// sample. Windows must fit inside the log.
/// Whether a window of length `window` fits in the logged times. Half a
/// sample period absorbs rounding in the logged times.
fn window_fits<T: Real>(times: &[T], window: T) -> bool {
    times.len() >= 2 && window <= times[times.len() - 1] - times[0] + (times[1] - times[0]) / T::lit(2.0)
}

pub fn pe_spectrum<T: Real>(
    times: &[T],
    features: &[Vec<T>],
    window: T,
    stride: T,
    gamma_threshold: T,
) -> Result<Vec<PEWindowReport<T>>, HarnessError> {
    if times.len() != features.len() {
        return Err(HarnessError::Diagnostics("times and features differ in length".into()));
    }
    if !(window > T::zero()) || !(stride > T::zero()) {
        return Err(HarnessError::Diagnostics("window and stride must be positive".into()));
    }
    if times.len() < 2 {
        return Err(HarnessError::Diagnostics("need at least two samples".into()));
    }
    let k = features[0].len();
    if k == 0 || features.iter().any(|f| f.len() != k) {
        return Err(HarnessError::Diagnostics("feature vectors must share a non-zero length".into()));
    }
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let tol = (times[1] - times[0]) / T::lit(2.0);
    if !window_fits(times, window) {
        return Err(HarnessError::Diagnostics(format!(
            "window of {window} s is longer than the {span} s log"
        )));
    }
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let start = t0 + T::lit(i as f64) * stride;
        let end = start + window;
        if end > t0 + span + tol {
            break;
        }
        let a = times.partition_point(|&t| t < start - tol);
        let b = times.partition_point(|&t| t <= end + tol);
        let mut gram = Matrix::zeros(k, k);
        for j in a..b.saturating_sub(1) {
            let h = (times[j + 1] - times[j]) / T::lit(2.0);
            let (p, q) = (&features[j], &features[j + 1]);
            for r in 0..k {
                for c in r..k {
                    gram[(r, c)] += h * (p[r] * p[c] + q[r] * q[c]);
                }
            }
        }
        for r in 0..k {
            for c in 0..r {
                gram[(r, c)] = gram[(c, r)];
            }
        }
        let lambda_min = gram.min_symmetric_eigenvalue()?;
        out.push(PEWindowReport {
            start,
            end,
            gram,
            lambda_min,
            gamma_threshold,
        });
        i += 1;
    }
    Ok(out)
}

/// CSV with columns `window_start, window_end, lambda_min`.
pub fn write_pe_csv<T: Real, W: Write>(reports: &[PEWindowReport<T>], writer: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window_start", "window_end", "lambda_min"])?;
    for r in reports {
        w.write_record([r.start.to_string(), r.end.to_string(), r.lambda_min.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares `W*` for one switching epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochFit {
    pub sigma: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    /// Row-major `k × m`.
    pub w_star: Vec<f64>,
    pub residual_rms: f64,
    /// `max_t ‖Δ − W*ᵀ φ̄‖`, the sup-norm estimate of the approximation error.
    pub residual_max: f64,
    pub rank: usize,
    /// The regressor was rank deficient; `w_star` is the minimum-norm solution.
    pub rank_deficient: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealWeightReport {
    pub epochs: Vec<EpochFit>,
    /// `‖W* − W(t)‖_F` per step against the fit of the step's epoch.
    pub w_tilde_norm: Vec<f64>,
}

/// Fits `Δ(x_t) ≈ W*ᵀ φ̄(x_t)` separately over each run of equal `sigma`.
/// Diagnostics only. `weights` rows are row-major `k × m` like `w_star`.
pub fn ideal_weight_diagnostics<T: Real>(
    times: &[T],
    phi_mean: &[Vec<T>],
    delta: &[Vec<T>],
    sigma: &[u64],
    weights: &[Vec<T>],
) -> Result<IdealWeightReport, HarnessError> {
    let n = times.len();
    if [phi_mean.len(), delta.len(), sigma.len(), weights.len()].iter().any(|&l| l != n) || n == 0 {
        return Err(HarnessError::Diagnostics("series must be non-empty and equally long".into()));
    }
    let k = phi_mean[0].len();
    let m = delta[0].len();
    let mut epochs = Vec::new();
    let mut w_tilde_norm = Vec::with_capacity(n);
    let mut a = 0;
    while a < n {
        let s = sigma[a];
        let b = a + sigma[a..].iter().take_while(|&&v| v == s).count();
        let rows = b - a;
        let design = DMatrix::from_fn(rows, k, |i, j| phi_mean[a + i][j].as_f64());
        let target = DMatrix::from_fn(rows, m, |i, j| delta[a + i][j].as_f64());
        let svd = design.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * (rows.max(k) as f64) * f64::EPSILON;
        let rank = svd.rank(tol);
        let w = if smax > 0.0 {
            svd.solve(&target, tol).map_err(|e| HarnessError::Diagnostics(e.to_string()))?
        } else {
            DMatrix::zeros(k, m)
        };
        let resid = &target - &design * &w;
        let row_norms: Vec<f64> = (0..rows).map(|i| resid.row(i).norm()).collect();
        let residual_rms = (row_norms.iter().map(|v| v * v).sum::<f64>() / rows as f64).sqrt();
        let residual_max = row_norms.iter().cloned().fold(0.0, f64::max);
        let w_star: Vec<f64> = (0..k).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| w[(i, j)]).collect();
        for wt in &weights[a..b] {
            let d: f64 = wt.iter().zip(&w_star).map(|(x, y)| (x.as_f64() - y).powi(2)).sum();
            w_tilde_norm.push(d.sqrt());
        }
        epochs.push(EpochFit {
            sigma: s,
            t_start: times[a].as_f64(),
            t_end: times[b - 1].as_f64(),
            samples: rows,
            w_star,
            residual_rms,
            residual_max,
            rank,
            rank_deficient: rank < k,
        });
        a = b;
    }
    Ok(IdealWeightReport { epochs, w_tilde_norm })
}

/// Energy of `signal` above `cutoff_hz` after removing its mean, as
/// `(dt / N) Σ_{|f_k| > cutoff} |X_k|²` (the Parseval-consistent share of
/// `∫ s² dt`).
pub fn high_frequency_energy(signal: &[f64], dt: f64, cutoff_hz: f64) -> f64 {
    let n = signal.len();
    if n < 2 {
        return 0.0;
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * dt);
    buf.iter()
        .enumerate()
        .filter(|(i, _)| {
            let bin = (*i).min(n - *i);
            bin as f64 * df > cutoff_hz
        })
        .map(|(_, c)| c.norm_sqr())
        .sum::<f64>()
        * dt
        / n as f64
}

/// A statistic over a time bin `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binned {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

/// Statistics of one reference phase (the interval between command switches).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub start: f64,
    pub end: f64,
    pub rms_tracking_error: f64,
    pub rms_estimate_error: f64,
    /// Mean epistemic band width (`2 σ`) over the first `phase_window` seconds.
    pub transient_band_width: f64,
    /// Mean epistemic band width over the last `phase_window` seconds.
    pub settled_band_width: f64,
    /// Mean state over the settled window.
    pub settled_state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeSummary {
    pub start: f64,
    pub end: f64,
    pub lambda_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub mode: Mode,
    pub seed: u64,
    pub horizon: f64,
    pub steps: usize,
    pub final_sigma: u64,
    pub retrain_times: Vec<f64>,
    pub buffer_len: usize,
    pub rms_tracking_error: f64,
    pub rms_tracking_error_after_settle: f64,
    pub max_tracking_error_after_settle: f64,
    pub tracking_ceiling: f64,
    pub tracking_hf_energy: f64,
    pub phases: Vec<PhaseStats>,
    /// `RMS ‖u_ad − Δ(x)‖` per time bin.
    pub estimate_rmse: Vec<Binned>,
    /// Mean epistemic band width of `u_ad` per time bin.
    pub epistemic_band_width: Vec<Binned>,
    /// Width of the aleatoric band, `2 σ_n`; constant in time.
    pub aleatoric_band_width: f64,
    pub weight_total_variation: f64,
    pub max_weight_norm: f64,
    pub pe_threshold: f64,
    pub pe: Vec<PeSummary>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        0.0
    } else {
        s / c as f64
    }
}

/// Total variation `Σ |v_{i+1} − v_i|`.
pub fn total_variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn band_width<T: Real>(adaptive: &AdaptiveLog<T>, i: usize) -> f64 {
    2.0 * crate::scalar::norm(&adaptive.u_ad_std[i]).as_f64()
}

impl DiagnosticsReport {
    pub fn from_run<T: Real>(
        cfg: &ExperimentConfig,
        log: &TrajectoryLog<T>,
        adaptive: &AdaptiveLog<T>,
        retrains: &[RetrainEvent],
        buffer_len: usize,
    ) -> Result<Self, HarnessError> {
        let d: &DiagnosticsConfig = &cfg.diagnostics;
        let horizon = cfg.horizon;
        let lit = T::lit;
        let settle = d.settle_time.min(horizon);
        let after: Vec<usize> = log.window(lit(settle), lit(f64::INFINITY)).collect();
        let max_after = after
            .iter()
            .map(|&i| crate::scalar::norm(&log.e[i]).as_f64())
            .fold(0.0, f64::max);
        let hf = (0..log.state_dim)
            .map(|c| {
                let s: Vec<f64> = after.iter().map(|&i| log.e[i][c].as_f64()).collect();
                high_frequency_energy(&s, cfg.integrator.dt, d.hf_cutoff_hz)
            })
            .sum();

        let mut bounds = vec![0.0];
        bounds.extend(cfg.reference.signal.switch_times(horizon));
        bounds.push(horizon);
        let phases = bounds
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let pw = d.phase_window.min(b - a);
                let width_in = |t0: f64, t1: f64| mean(log.window(lit(t0), lit(t1)).map(|i| band_width(adaptive, i)));
                let settled: Vec<usize> = log.window(lit(b - pw), lit(b)).collect();
                let settled_state = (0..log.state_dim)
                    .map(|c| mean(settled.iter().map(|&i| log.x[i][c].as_f64())))
                    .collect();
                PhaseStats {
                    start: a,
                    end: b,
                    rms_tracking_error: log.rms_tracking_error(lit(a), lit(b)).as_f64(),
                    rms_estimate_error: log.rms_estimate_error(lit(a), lit(b)).as_f64(),
                    transient_band_width: width_in(a, a + pw),
                    settled_band_width: width_in(b - pw, b),
                    settled_state,
                }
            })
            .collect();

        let nbins = (horizon / d.bin_width).ceil() as usize;
        let bins: Vec<(f64, f64)> = (0..nbins)
            .map(|i| (i as f64 * d.bin_width, ((i + 1) as f64 * d.bin_width).min(horizon)))
            .collect();
        let estimate_rmse = bins
            .iter()
            .map(|&(a, b)| Binned {
                start: a,
                end: b,
                value: log.rms_estimate_error(lit(a), lit(b)).as_f64(),
            })
            .collect();
        let epistemic_band_width = bins
            .iter()
            .map(|&(a, b)| Binned {
                start: a,
                end: b,
                value: mean(log.window(lit(a), lit(b)).map(|i| band_width(adaptive, i))),
            })
            .collect();

        let norms: Vec<f64> = adaptive.weight_norms().iter().map(|v| v.as_f64()).collect();
        let pe = if adaptive.features > 0 && window_fits(&adaptive.t, lit(d.pe_window)) {
            pe_spectrum(&adaptive.t, &adaptive.phi, lit(d.pe_window), lit(d.pe_stride), lit(d.pe_threshold))?
                .into_iter()
                .map(|r| PeSummary {
                    start: r.start.as_f64(),
                    end: r.end.as_f64(),
                    lambda_min: r.lambda_min.as_f64(),
                })
                .collect()
        } else {
            Vec::new()
        };

        let report = Self {
            mode: cfg.mode,
            seed: cfg.seed,
            horizon,
            steps: log.len(),
            final_sigma: retrains.last().map_or(0, |r| r.sigma),
            retrain_times: retrains.iter().map(|r| r.t).collect(),
            buffer_len,
            rms_tracking_error: log.rms_tracking_error(lit(0.0), lit(f64::INFINITY)).as_f64(),
            rms_tracking_error_after_settle: log.rms_tracking_error(lit(settle), lit(f64::INFINITY)).as_f64(),
            max_tracking_error_after_settle: max_after,
            tracking_ceiling: d.tracking_ceiling,
            tracking_hf_energy: hf,
            phases,
            estimate_rmse,
            epistemic_band_width,
            aleatoric_band_width: 2.0 * cfg.bnn.likelihood_std,
            weight_total_variation: total_variation(&norms),
            max_weight_norm: norms.iter().cloned().fold(0.0, f64::max),
            pe_threshold: d.pe_threshold,
            pe,
        };
        if !report.is_finite() {
            return Err(HarnessError::Diagnostics("non-finite entry in the diagnostics report".into()));
        }
        Ok(report)
    }

    /// Every number in the report is finite.
    pub fn is_finite(&self) -> bool {
        let scalars = [
            self.horizon,
            self.rms_tracking_error,
            self.rms_tracking_error_after_settle,
            self.max_tracking_error_after_settle,
            self.tracking_ceiling,
            self.tracking_hf_energy,
            self.aleatoric_band_width,
            self.weight_total_variation,
            self.max_weight_norm,
            self.pe_threshold,
        ];
        scalars.iter().all(|v| v.is_finite())
            && self.retrain_times.iter().all(|v| v.is_finite())
            && self.phases.iter().all(|p| {
                [
                    p.start,
                    p.end,
                    p.rms_tracking_error,
                    p.rms_estimate_error,
                    p.transient_band_width,
                    p.settled_band_width,
                ]
                .iter()
                .chain(&p.settled_state)
                .all(|v| v.is_finite())
            })
            && self
                .estimate_rmse
                .iter()
                .chain(&self.epistemic_band_width)
                .all(|b| b.value.is_finite() && b.start.is_finite() && b.end.is_finite())
            && self.pe.iter().all(|p| p.lambda_min.is_finite())
    }

    /// Median of the per-window `λ_min`, if any windows exist.
    pub fn median_lambda_min(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.pe.iter().map(|p| p.lambda_min).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        Some(v[v.len() / 2])
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), IoError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self, IoError> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// Side-by-side reports and their differences (`a − b`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: DiagnosticsReport,
    pub b: DiagnosticsReport,
    pub delta_rms_tracking_error: f64,
    pub delta_weight_total_variation: f64,
    /// Per window, over the windows both runs share.
    pub delta_lambda_min: Vec<PeSummary>,
}

impl ComparisonReport {
    pub fn new(a: DiagnosticsReport, b: DiagnosticsReport) -> Self {
        let delta_lambda_min = a
            .pe
            .iter()
            .zip(&b.pe)
            .map(|(x, y)| PeSummary {
                start: x.start,
                end: x.end,
                lambda_min: x.lambda_min - y.lambda_min,
            })
            .collect();
        Self {
            delta_rms_tracking_error: a.rms_tracking_error - b.rms_tracking_error,
            delta_weight_total_variation: a.weight_total_variation - b.weight_total_variation,
            delta_lambda_min,
            a,
            b,
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), IoError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self, IoError> {
        Ok(serde_json::from_reader(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn constant_feature_integrates_to_window_length() {
        let t = grid(3001, 1e-3);
        let phi = vec![vec![1.0]; t.len()];
        let r = pe_spectrum(&t, &phi, 2.0, 0.5, 1e-6).unwrap();
        assert_eq!(r.len(), 3);
        for w in &r {
            assert!((w.gram[(0, 0)] - 2.0).abs() < 1e-9);
            assert!((w.lambda_min - 2.0).abs() < 1e-9);
            assert!(w.is_exciting());
        }
    }

    #[test]
    fn alternating_unit_vectors_give_half_identity() {
        let t = grid(2001, 1e-3);
        let phi: Vec<Vec<f64>> = (0..t.len())
            .map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let r = pe_spectrum(&t, &phi, 2.0, 0.5, 1e-6).unwrap();
        assert_eq!(r.len(), 1);
        let g = &r[0].gram;
        assert!((g[(0, 0)] - 1.0).abs() < 1e-9 && (g[(1, 1)] - 1.0).abs() < 1e-9);
        assert_eq!(g[(0, 1)], 0.0);
        assert!((r[0].lambda_min - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_features_have_no_excitation() {
        let t = grid(2501, 1e-3);
        let phi = vec![vec![0.0; 3]; t.len()];
        for w in pe_spectrum(&t, &phi, 2.0, 0.5, 1e-6).unwrap() {
            assert_eq!(w.lambda_min, 0.0);
            assert!(!w.is_exciting());
        }
    }

    #[test]
    fn window_longer_than_log_rejected() {
        let t = grid(1001, 1e-3);
        let phi = vec![vec![1.0]; t.len()];
        assert!(pe_spectrum(&t, &phi, 2.0, 0.5, 1e-6).is_err());
        assert!(pe_spectrum(&t, &phi, 0.5, 0.0, 1e-6).is_err());
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let t = grid(2001, 1e-3);
        let phi: Vec<Vec<f64>> = t.iter().map(|&s| vec![s.sin(), (3.0 * s).cos(), s * s]).collect();
        let r = pe_spectrum(&t, &phi, 1.0, 0.25, 1e-6).unwrap();
        for w in r {
            assert!(w.gram.is_symmetric(1e-9));
            assert!(w.lambda_min > -1e-9);
        }
    }

    #[test]
    fn exact_linear_fit_has_no_residual() {
        let t = grid(500, 0.01);
        let phi: Vec<Vec<f64>> = t.iter().map(|&s| vec![s.sin(), s.cos(), 1.0]).collect();
        let w_star = [0.5, -2.0, 0.25];
        let delta: Vec<Vec<f64>> = phi.iter().map(|p| vec![crate::scalar::dot(p, &w_star)]).collect();
        let weights = vec![vec![0.0; 3]; t.len()];
        let r = ideal_weight_diagnostics(&t, &phi, &delta, &vec![0; t.len()], &weights).unwrap();
        assert_eq!(r.epochs.len(), 1);
        let fit = &r.epochs[0];
        assert!(fit.residual_rms < 1e-8 && fit.residual_max < 1e-8);
        assert!(!fit.rank_deficient);
        for (a, b) in fit.w_star.iter().zip(&w_star) {
            assert!((a - b).abs() < 1e-10);
        }
        let norm = w_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((r.w_tilde_norm[0] - norm).abs() < 1e-10);
    }

    #[test]
    fn zero_uncertainty_fits_zero_weights() {
        let t = grid(100, 0.01);
        let phi: Vec<Vec<f64>> = t.iter().map(|&s| vec![s, 1.0]).collect();
        let delta = vec![vec![0.0]; t.len()];
        let r = ideal_weight_diagnostics(&t, &phi, &delta, &vec![0; t.len()], &vec![vec![0.0; 2]; t.len()]).unwrap();
        assert!(r.epochs[0].w_star.iter().all(|&w| w.abs() < 1e-14));
        assert_eq!(r.epochs[0].residual_rms, 0.0);
    }

    #[test]
    fn fit_is_permutation_invariant() {
        let t = grid(300, 0.01);
        let phi: Vec<Vec<f64>> = t.iter().map(|&s| vec![s.sin(), s.cos(), (2.0 * s).sin()]).collect();
        let delta: Vec<Vec<f64>> = t.iter().map(|&s| vec![s * s]).collect();
        let perm: Vec<Vec<f64>> = phi.iter().map(|p| vec![p[2], p[0], p[1]]).collect();
        let w = vec![vec![0.0; 3]; t.len()];
        let a = ideal_weight_diagnostics(&t, &phi, &delta, &vec![0; t.len()], &w).unwrap();
        let b = ideal_weight_diagnostics(&t, &perm, &delta, &vec![0; t.len()], &w).unwrap();
        assert!((a.epochs[0].residual_rms - b.epochs[0].residual_rms).abs() < 1e-12);
        assert!((a.epochs[0].w_star[0] - b.epochs[0].w_star[1]).abs() < 1e-10);
        assert!((a.epochs[0].w_star[2] - b.epochs[0].w_star[0]).abs() < 1e-10);
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let t = grid(50, 0.1);
        let phi: Vec<Vec<f64>> = t.iter().map(|&s| vec![s, 2.0 * s]).collect();
        let delta: Vec<Vec<f64>> = t.iter().map(|&s| vec![s]).collect();
        let r = ideal_weight_diagnostics(&t, &phi, &delta, &vec![0; t.len()], &vec![vec![0.0; 2]; t.len()]).unwrap();
        let fit = &r.epochs[0];
        assert!(fit.rank_deficient);
        assert_eq!(fit.rank, 1);
        assert!(fit.residual_rms < 1e-10);
        // Minimum-norm solution of w1 + 2 w2 = 1.
        assert!((fit.w_star[0] - 0.2).abs() < 1e-10 && (fit.w_star[1] - 0.4).abs() < 1e-10);
    }

    #[test]
    fn epochs_split_on_sigma() {
        let t = grid(10, 0.1);
        let phi = vec![vec![1.0]; 10];
        let delta: Vec<Vec<f64>> = (0..10).map(|i| vec![if i < 4 { 1.0 } else { 3.0 }]).collect();
        let sigma: Vec<u64> = (0..10).map(|i| if i < 4 { 0 } else { 1 }).collect();
        let r = ideal_weight_diagnostics(&t, &phi, &delta, &sigma, &vec![vec![0.0]; 10]).unwrap();
        assert_eq!(r.epochs.len(), 2);
        assert_eq!((r.epochs[0].samples, r.epochs[1].samples), (4, 6));
        assert!((r.epochs[0].w_star[0] - 1.0).abs() < 1e-12 && (r.epochs[1].w_star[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn high_frequency_energy_separates_bands() {
        let dt = 1e-3;
        let t = grid(10_000, dt);
        let slow: Vec<f64> = t.iter().map(|&s| (2.0 * std::f64::consts::PI * 0.5 * s).sin()).collect();
        let fast: Vec<f64> = t.iter().map(|&s| (2.0 * std::f64::consts::PI * 10.0 * s).sin()).collect();
        assert!(high_frequency_energy(&slow, dt, 2.0) < 1e-12);
        // Unit sine over 10 s carries ∫ sin² = 5.
        assert!((high_frequency_energy(&fast, dt, 2.0) - 5.0).abs() < 1e-6);
        assert_eq!(high_frequency_energy(&vec![3.0; 100], dt, 2.0), 0.0);
    }

    #[test]
    fn total_variation_of_monotone_and_oscillating() {
        assert_eq!(total_variation(&[0.0, 1.0, 2.0]), 2.0);
        assert_eq!(total_variation(&[0.0, 1.0, 0.0, 1.0]), 3.0);
        assert_eq!(total_variation(&[]), 0.0);
    }
}
