//! Plant and reference-model dynamics, the wing-rock uncertainty and fixed-step
//! integration of the closed loop.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DynamicsError, IoError};
use crate::linalg::Matrix;
use crate::scalar::{all_finite, Real};

pub type UncertaintyFn<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;

/// `ẋ = A x + B (u + Δ(x))` with matched uncertainty `Δ`.
#[derive(Clone)]
pub struct LinearPlant<T: Real> {
    a: Matrix<T>,
    b: Matrix<T>,
    uncertainty: UncertaintyFn<T>,
}

impl<T: Real> std::fmt::Debug for LinearPlant<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearPlant")
            .field("a", &self.a)
            .field("b", &self.b)
            .finish_non_exhaustive()
    }
}

impl<T: Real> LinearPlant<T> {
    /// Plant with `Δ ≡ 0`.
    pub fn new(a: Matrix<T>, b: Matrix<T>) -> Result<Self, DynamicsError> {
        let m = b.cols();
        Self::with_uncertainty(a, b, Arc::new(move |_: &[T]| vec![T::zero(); m]))
    }

    pub fn with_uncertainty(
        a: Matrix<T>,
        b: Matrix<T>,
        uncertainty: UncertaintyFn<T>,
    ) -> Result<Self, DynamicsError> {
        if a.rows() == 0 || b.cols() == 0 {
            return Err(DynamicsError::Dimension("zero-dimensional plant".into()));
        }
        if !a.is_square() {
            return Err(DynamicsError::Dimension(format!(
                "A must be square, got {:?}",
                a.shape()
            )));
        }
        if b.rows() != a.rows() {
            return Err(DynamicsError::Dimension(format!(
                "B has {} rows but A is {}x{}",
                b.rows(),
                a.rows(),
                a.rows()
            )));
        }
        Ok(Self { a, b, uncertainty })
    }

    /// Roll angle / roll rate double integrator driven by the aileron, with the
    /// polynomial wing-rock uncertainty.
    pub fn wing_rock(params: WingRockParams<T>) -> Self {
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]);
        Self::with_uncertainty(
            a,
            b,
            Arc::new(move |x: &[T]| vec![wing_rock_uncertainty(&params, x)]),
        )
        .expect("wing-rock dimensions are consistent")
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn uncertainty(&self, x: &[T]) -> Vec<T> {
        (self.uncertainty)(x)
    }

    pub fn uncertainty_fn(&self) -> UncertaintyFn<T> {
        Arc::clone(&self.uncertainty)
    }

    /// Same `(A, B)` with a different `Δ`.
    pub fn replace_uncertainty(&self, uncertainty: UncertaintyFn<T>) -> Self {
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            uncertainty,
        }
    }
}

/// `ẋ_m = A_m x_m + B_m r` with Hurwitz `A_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReferenceModel<T> {
    a_m: Matrix<T>,
    b_m: Matrix<T>,
}

impl<T: Real> ReferenceModel<T> {
    pub fn new(a_m: Matrix<T>, b_m: Matrix<T>) -> Result<Self, DynamicsError> {
        if a_m.rows() == 0 || !a_m.is_square() || b_m.rows() != a_m.rows() {
            return Err(DynamicsError::Dimension(format!(
                "A_m {:?} / B_m {:?}",
                a_m.shape(),
                b_m.shape()
            )));
        }
        check_hurwitz(&a_m)?;
        Ok(Self { a_m, b_m })
    }

    /// Second-order model with unit DC gain from `r` to the first state.
    pub fn second_order(natural_frequency: T, damping: T) -> Result<Self, DynamicsError> {
        let w2 = natural_frequency * natural_frequency;
        let two = T::lit(2.0);
        let a_m = Matrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => T::one(),
            (1, 0) => -w2,
            (1, 1) => -two * damping * natural_frequency,
            _ => T::zero(),
        });
        let b_m = Matrix::from_fn(2, 1, |i, _| if i == 1 { w2 } else { T::zero() });
        Self::new(a_m, b_m)
    }

    pub fn a_m(&self) -> &Matrix<T> {
        &self.a_m
    }

    pub fn b_m(&self) -> &Matrix<T> {
        &self.b_m
    }

    pub fn state_dim(&self) -> usize {
        self.a_m.rows()
    }

    pub fn command_dim(&self) -> usize {
        self.b_m.cols()
    }

    pub fn derivative(&self, x_m: &[T], r: &[T]) -> Vec<T> {
        let mut d = self.a_m.mul_vec(x_m);
        for (di, bi) in d.iter_mut().zip(self.b_m.mul_vec(r)) {
            *di += bi;
        }
        d
    }
}

/// Fails with the first eigenvalue whose real part is not strictly negative.
pub fn check_hurwitz<T: Real>(a: &Matrix<T>) -> Result<(), DynamicsError> {
    for (re, im) in a.eigenvalues()? {
        if re >= 0.0 || !re.is_finite() {
            return Err(DynamicsError::NotHurwitz { re, im });
        }
    }
    Ok(())
}

/// Coefficients `W_0..W_5` of the wing-rock uncertainty polynomial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct WingRockParams<T> {
    pub w: [T; 6],
}

impl<T: Real> Default for WingRockParams<T> {
    fn default() -> Self {
        Self {
            w: [1.0, 0.2314, 0.6918, -0.6245, 0.1, 0.214].map(T::lit),
        }
    }
}

/// `W_0 + W_1 φ + W_2 p + W_3 |φ| p + W_4 |p| p + W_5 φ³` at `x = [φ, p]`.
pub fn wing_rock_uncertainty<T: Real>(params: &WingRockParams<T>, x: &[T]) -> T {
    let (phi, p) = (x[0], x[1]);
    let w = &params.w;
    w[0] + w[1] * phi + w[2] * p + w[3] * phi.abs() * p + w[4] * p.abs() * p + w[5] * phi * phi * phi
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationMethod {
    #[default]
    Rk4,
    Euler,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
#[serde(default)]
pub struct IntegratorConfig<T> {
    pub dt: T,
    pub method: IntegrationMethod,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(1e-3),
            method: IntegrationMethod::Rk4,
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(DynamicsError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// One fixed step of an autonomous system `ẋ = f(x)`.
pub fn integrate_step<T: Real>(
    f: impl Fn(&[T]) -> Vec<T>,
    x: &[T],
    cfg: &IntegratorConfig<T>,
) -> Vec<T> {
    let dt = cfg.dt;
    match cfg.method {
        IntegrationMethod::Euler => {
            let k1 = f(x);
            x.iter().zip(k1).map(|(&xi, ki)| xi + dt * ki).collect()
        }
        IntegrationMethod::Rk4 => {
            let half = dt * T::lit(0.5);
            let offset = |k: &[T], h: T| -> Vec<T> { x.iter().zip(k).map(|(&xi, &ki)| xi + h * ki).collect() };
            let k1 = f(x);
            let k2 = f(&offset(&k1, half));
            let k3 = f(&offset(&k2, half));
            let k4 = f(&offset(&k3, dt));
            let two = T::lit(2.0);
            let sixth = dt / T::lit(6.0);
            (0..x.len())
                .map(|i| x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
                .collect()
        }
    }
}

/// `A x + B (u + Δ(x))`.
pub fn plant_derivative<T: Real>(
    plant: &LinearPlant<T>,
    x: &[T],
    u: &[T],
) -> Result<Vec<T>, DynamicsError> {
    if x.len() != plant.state_dim() || u.len() != plant.input_dim() {
        return Err(DynamicsError::Dimension(format!(
            "plant is n={}, m={}; got x of length {} and u of length {}",
            plant.state_dim(),
            plant.input_dim(),
            x.len(),
            u.len()
        )));
    }
    Ok(plant_derivative_unchecked(plant, x, u))
}

fn plant_derivative_unchecked<T: Real>(plant: &LinearPlant<T>, x: &[T], u: &[T]) -> Vec<T> {
    let delta = plant.uncertainty(x);
    let forcing: Vec<T> = u.iter().zip(&delta).map(|(&a, &b)| a + b).collect();
    let mut d = plant.a.mul_vec(x);
    for (di, bi) in d.iter_mut().zip(plant.b.mul_vec(&forcing)) {
        *di += bi;
    }
    d
}

/// Advances the reference model one step with `r` held over the step.
pub fn reference_step<T: Real>(
    model: &ReferenceModel<T>,
    x_m: &[T],
    r: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<T>, DynamicsError> {
    cfg.validate()?;
    if x_m.len() != model.state_dim() || r.len() != model.command_dim() {
        return Err(DynamicsError::Dimension(format!(
            "reference model is n={}, r={}; got x_m of length {} and r of length {}",
            model.state_dim(),
            model.command_dim(),
            x_m.len(),
            r.len()
        )));
    }
    Ok(integrate_step(|xm| model.derivative(xm, r), x_m, cfg))
}

/// What the controller sees at the start of a control step.
#[derive(Clone, Debug)]
pub struct StepContext<'a, T> {
    pub step: usize,
    pub t: T,
    pub x: &'a [T],
    pub x_m: &'a [T],
    pub r: &'a [T],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput<T> {
    /// Total input applied to the plant.
    pub u: Vec<T>,
    /// Adaptive part that was subtracted from the baseline, for logging.
    pub u_ad: Vec<T>,
}

/// Per-step record of a closed-loop run. Append-only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrajectoryLog<T> {
    pub state_dim: usize,
    pub input_dim: usize,
    pub t: Vec<T>,
    pub x: Vec<Vec<T>>,
    pub x_m: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
    pub u_ad: Vec<Vec<T>>,
    pub delta: Vec<Vec<T>>,
    /// `x - x_m`.
    pub e: Vec<Vec<T>>,
}

impl<T: Real> TrajectoryLog<T> {
    pub fn new(state_dim: usize, input_dim: usize) -> Self {
        Self {
            state_dim,
            input_dim,
            t: Vec::new(),
            x: Vec::new(),
            x_m: Vec::new(),
            u: Vec::new(),
            u_ad: Vec::new(),
            delta: Vec::new(),
            e: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, t: T, x: &[T], x_m: &[T], u: &[T], u_ad: &[T], delta: &[T]) {
        self.t.push(t);
        self.x.push(x.to_vec());
        self.x_m.push(x_m.to_vec());
        self.u.push(u.to_vec());
        self.u_ad.push(u_ad.to_vec());
        self.delta.push(delta.to_vec());
        self.e.push(x.iter().zip(x_m).map(|(&a, &b)| a - b).collect());
    }

    /// Indices whose time lies in `[t0, t1)`.
    pub fn window(&self, t0: T, t1: T) -> std::ops::Range<usize> {
        let start = self.t.partition_point(|&t| t < t0);
        let end = self.t.partition_point(|&t| t < t1);
        start..end.max(start)
    }

    /// RMS of `‖e‖` over `[t0, t1)`; zero for an empty window.
    pub fn rms_tracking_error(&self, t0: T, t1: T) -> T {
        rms(self.window(t0, t1).map(|i| crate::scalar::dot(&self.e[i], &self.e[i])))
    }

    /// RMS of `‖u_ad - Δ‖` over `[t0, t1)`.
    pub fn rms_estimate_error(&self, t0: T, t1: T) -> T {
        rms(self.window(t0, t1).map(|i| {
            self.u_ad[i]
                .iter()
                .zip(&self.delta[i])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum()
        }))
    }

    pub fn header(&self) -> Vec<String> {
        let n = self.state_dim;
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("x{i}")));
        h.extend((1..=n).map(|i| format!("xm{i}")));
        for name in ["u", "u_ad", "delta_true"] {
            if self.input_dim == 1 {
                h.push(name.to_string());
            } else {
                h.extend((1..=self.input_dim).map(|i| format!("{name}{i}")));
            }
        }
        h.extend((1..=n).map(|i| format!("e{i}")));
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IoError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for i in 0..self.len() {
            let mut rec = vec![self.t[i].to_string()];
            for col in [&self.x[i], &self.x_m[i], &self.u[i], &self.u_ad[i], &self.delta[i], &self.e[i]] {
                rec.extend(col.iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, IoError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let n = header
            .iter()
            .filter(|h| h.starts_with('x') && !h.starts_with("xm"))
            .count();
        let m = header
            .iter()
            .filter(|h| *h == "u" || (h.starts_with('u') && h[1..].parse::<usize>().is_ok()))
            .count();
        if n == 0 || m == 0 || header.len() != 1 + 3 * n + 3 * m {
            return Err(IoError::Format("unrecognized trajectory header".into()));
        }
        let mut log = Self::new(n, m);
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map(T::lit))
                .collect::<Result<Vec<T>, _>>()
                .map_err(|e| IoError::Format(e.to_string()))?;
            let mut off = 1;
            let mut take = |k: usize| {
                let s = vals[off..off + k].to_vec();
                off += k;
                s
            };
            let x = take(n);
            let xm = take(n);
            let u = take(m);
            let ua = take(m);
            let d = take(m);
            let e = take(n);
            log.t.push(vals[0]);
            log.x.push(x);
            log.x_m.push(xm);
            log.u.push(u);
            log.u_ad.push(ua);
            log.delta.push(d);
            log.e.push(e);
        }
        Ok(log)
    }
}

fn rms<T: Real>(squares: impl Iterator<Item = T>) -> T {
    let (sum, count) = squares.fold((T::zero(), 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        T::zero()
    } else {
        (sum / T::lit(count as f64)).sqrt()
    }
}

/// A run that stopped early, with everything logged before the failure.
#[derive(Debug, Clone)]
pub struct SimulationFailure<T: Real> {
    pub error: DynamicsError,
    pub partial: TrajectoryLog<T>,
}

impl<T: Real> std::fmt::Display for SimulationFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} steps logged)", self.error, self.partial.len())
    }
}

impl<T: Real> std::error::Error for SimulationFailure<T> {}

/// Fixed-step closed-loop simulation over `[0, horizon)`.
///
/// Each step the controller is queried once; its input is held constant while
/// the plant and the reference model are advanced by `cfg.dt`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_closed_loop<T, C, R>(
    plant: &LinearPlant<T>,
    model: &ReferenceModel<T>,
    mut controller: C,
    reference: R,
    x0: &[T],
    x_m0: &[T],
    horizon: T,
    cfg: &IntegratorConfig<T>,
) -> Result<TrajectoryLog<T>, SimulationFailure<T>>
where
    T: Real,
    C: FnMut(&StepContext<'_, T>) -> Result<ControlOutput<T>, String>,
    R: Fn(T) -> Vec<T>,
{
    let n = plant.state_dim();
    let m = plant.input_dim();
    let mut log = TrajectoryLog::new(n, m);
    let fail = |error, partial| Err(SimulationFailure { error, partial });
    if let Err(e) = cfg.validate() {
        return fail(e, log);
    }
    if !(horizon > T::zero()) || !horizon.is_finite() {
        return fail(
            DynamicsError::InvalidConfig(format!("horizon must be positive, got {horizon}")),
            log,
        );
    }
    if x0.len() != n || x_m0.len() != n || model.state_dim() != n {
        return fail(
            DynamicsError::Dimension("initial state and reference model must match the plant".into()),
            log,
        );
    }
    let steps = (horizon / cfg.dt).round().to_usize().unwrap_or(0).max(1);
    let mut x = x0.to_vec();
    let mut x_m = x_m0.to_vec();
    for k in 0..steps {
        let t = T::lit(k as f64) * cfg.dt;
        let r = reference(t);
        let ctx = StepContext {
            step: k,
            t,
            x: &x,
            x_m: &x_m,
            r: &r,
        };
        let out = match controller(&ctx) {
            Ok(o) => o,
            Err(message) => return fail(DynamicsError::Controller { step: k, message }, log),
        };
        if out.u.len() != m {
            return fail(
                DynamicsError::Dimension(format!("controller returned {} inputs, plant takes {m}", out.u.len())),
                log,
            );
        }
        let delta = plant.uncertainty(&x);
        log.push(t, &x, &x_m, &out.u, &out.u_ad, &delta);
        let x_next = integrate_step(|s| plant_derivative_unchecked(plant, s, &out.u), &x, cfg);
        let xm_next = match reference_step(model, &x_m, &r, cfg) {
            Ok(v) => v,
            Err(e) => return fail(e, log),
        };
        if !all_finite(&x_next) || !all_finite(&xm_next) || !all_finite(&out.u) {
            let last_finite_step = k.saturating_sub(1);
            return fail(DynamicsError::NonFinite { last_finite_step }, log);
        }
        x = x_next;
        x_m = xm_next;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wing_rock_model() -> ReferenceModel<f64> {
        ReferenceModel::second_order(2.0, 0.5).unwrap()
    }

    #[test]
    fn zero_dynamics_give_zero_derivative() {
        let plant = LinearPlant::new(Matrix::<f64>::zeros(2, 2), Matrix::zeros(2, 1)).unwrap();
        assert_eq!(plant_derivative(&plant, &[3.0, -1.0], &[5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn wing_rock_derivative_examples() {
        let plant = LinearPlant::wing_rock(WingRockParams::<f64>::default());
        assert_eq!(plant_derivative(&plant, &[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 1.0]);
        let d = plant_derivative(&plant, &[1.0, 1.0], &[0.0]).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15);
        assert!((d[1] - 1.6127).abs() < 1e-12, "got {}", d[1]);
    }

    #[test]
    fn wing_rock_uncertainty_examples() {
        let p = WingRockParams::<f64>::default();
        assert_eq!(wing_rock_uncertainty(&p, &[0.0, 0.0]), 1.0);
        assert!((wing_rock_uncertainty(&p, &[1.0, 0.0]) - 1.4454).abs() < 1e-12);
        assert!((wing_rock_uncertainty(&p, &[0.0, 1.0]) - 1.7918).abs() < 1e-12);
        // odd in φ through |φ|p and φ³ only
        assert!((wing_rock_uncertainty(&p, &[-1.0, 0.0]) - (1.0 - 0.2314 - 0.214)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let plant = LinearPlant::wing_rock(WingRockParams::<f64>::default());
        assert!(plant_derivative(&plant, &[0.0], &[0.0]).is_err());
        assert!(plant_derivative(&plant, &[0.0, 0.0], &[0.0, 1.0]).is_err());
        assert!(LinearPlant::new(Matrix::<f64>::zeros(2, 2), Matrix::zeros(3, 1)).is_err());
        assert!(LinearPlant::new(Matrix::<f64>::zeros(0, 0), Matrix::zeros(0, 1)).is_err());
    }

    #[test]
    fn reference_model_rejects_unstable() {
        let a = Matrix::<f64>::from_rows(&[&[0.0, 1.0], &[4.0, 2.0]]);
        let err = ReferenceModel::new(a, Matrix::from_rows(&[&[0.0], &[1.0]])).unwrap_err();
        match err {
            DynamicsError::NotHurwitz { re, .. } => assert!(re >= 0.0),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn reference_step_examples() {
        let model = wing_rock_model();
        assert_eq!(model.a_m(), &Matrix::from_rows(&[&[0.0, 1.0], &[-4.0, -2.0]]));
        assert_eq!(model.b_m(), &Matrix::from_rows(&[&[0.0], &[4.0]]));
        let rk4 = IntegratorConfig::default();
        assert_eq!(reference_step(&model, &[0.0, 0.0], &[0.0], &rk4).unwrap(), vec![0.0, 0.0]);
        let euler = IntegratorConfig {
            dt: 0.01,
            method: IntegrationMethod::Euler,
        };
        let s = reference_step(&model, &[1.0, 0.0], &[0.0], &euler).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15 && (s[1] + 0.04).abs() < 1e-15);
    }

    #[test]
    fn reference_converges_to_steady_state() {
        let model = wing_rock_model();
        let cfg = IntegratorConfig::default();
        let mut xm = vec![0.0, 0.0];
        for _ in 0..30_000 {
            xm = reference_step(&model, &xm, &[1.0], &cfg).unwrap();
        }
        assert!((xm[0] - 1.0).abs() < 1e-9 && xm[1].abs() < 1e-9);
    }

    #[test]
    fn rk4_matches_matrix_exponential() {
        // exp(A dt) for the underdamped oscillator in closed form:
        // eigenvalues -1 ± i√3, so exp(At) = e^{-t}[cos(ωt) I + sin(ωt)/ω (A + I)]
        let model = wing_rock_model();
        let dt = 1e-3;
        let w = 3f64.sqrt();
        let (c, s) = ((w * dt).cos(), (w * dt).sin() / w);
        let decay = (-dt).exp();
        let a = model.a_m();
        let expm = Matrix::from_fn(2, 2, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            decay * (c * id + s * (a[(i, j)] + id))
        });
        let cfg = IntegratorConfig::default();
        for x in [[1.0, 0.0], [0.3, -2.0], [-1.5, 0.7]] {
            let got = reference_step(&model, &x, &[0.0], &cfg).unwrap();
            let want = expm.mul_vec(&x);
            let err = crate::scalar::norm(&[got[0] - want[0], got[1] - want[1]]);
            assert!(err / crate::scalar::norm(&want) < 1e-8, "rel err {err}");
        }
    }

    #[test]
    fn matched_systems_track_exactly() {
        // plant = reference dynamics, Δ ≡ 0, u = r with B = B_m reproduces x_m
        let model = wing_rock_model();
        let plant = LinearPlant::new(model.a_m().clone(), model.b_m().clone()).unwrap();
        let log = integrate_closed_loop(
            &plant,
            &model,
            |ctx| {
                Ok(ControlOutput {
                    u: ctx.r.to_vec(),
                    u_ad: vec![0.0],
                })
            },
            |t: f64| vec![if t < 1.0 { 1.0 } else { -0.5 }],
            &[0.2, 0.0],
            &[0.2, 0.0],
            5.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let max_e = log.e.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_e < 1e-9);
    }

    #[test]
    fn zero_loop_logs_zeros() {
        let plant = LinearPlant::new(Matrix::<f64>::zeros(2, 2), Matrix::zeros(2, 1)).unwrap();
        let log = integrate_closed_loop(
            &plant,
            &wing_rock_model(),
            |_| Ok(ControlOutput { u: vec![0.0], u_ad: vec![0.0] }),
            |_| vec![0.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
            0.1,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(log.len(), 100);
        assert!(log.x.iter().chain(&log.e).chain(&log.u).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_reports_last_finite_step() {
        let plant = LinearPlant::new(Matrix::<f64>::zeros(2, 2), Matrix::identity(2).matmul(&Matrix::from_rows(&[&[0.0], &[1.0]]))).unwrap();
        let err = integrate_closed_loop(
            &plant,
            &wing_rock_model(),
            |ctx| {
                let u = if ctx.step >= 5 { f64::INFINITY } else { 0.0 };
                Ok(ControlOutput { u: vec![u], u_ad: vec![0.0] })
            },
            |_| vec![0.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
            1.0,
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err.error, DynamicsError::NonFinite { last_finite_step: 4 });
        assert_eq!(err.partial.len(), 6);
    }

    #[test]
    fn non_positive_horizon_rejected() {
        let plant = LinearPlant::wing_rock(WingRockParams::<f64>::default());
        let r = integrate_closed_loop(
            &plant,
            &wing_rock_model(),
            |_| Ok(ControlOutput { u: vec![0.0], u_ad: vec![0.0] }),
            |_| vec![0.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
            0.0,
            &IntegratorConfig::default(),
        );
        assert!(matches!(r, Err(SimulationFailure { error: DynamicsError::InvalidConfig(_), .. })));
    }

    #[test]
    fn csv_roundtrip() {
        let mut log = TrajectoryLog::<f64>::new(2, 1);
        log.push(0.0, &[0.1, 0.2], &[0.0, 0.0], &[1.5], &[0.25], &[1.0]);
        log.push(0.001, &[1.0 / 3.0, -2e-17], &[0.5, 0.0], &[-4.0], &[0.0], &[1.1]);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,xm1,xm2,u,u_ad,delta_true,e1,e2\n"));
        assert_eq!(TrajectoryLog::<f64>::read_csv(&buf[..]).unwrap(), log);
    }

    #[test]
    fn f32_wing_rock() {
        let p = WingRockParams::<f32>::default();
        assert!((wing_rock_uncertainty(&p, &[1.0, 0.0]) - 1.4454).abs() < 1e-6);
    }
}
