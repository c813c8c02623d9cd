//! Real-time control law: matching gains, the Lyapunov solution `P`, the
//! projected fast-weight update on the output layer and the total input.

use serde::{Deserialize, Serialize};

use crate::dynamics::{check_hurwitz, LinearPlant, ReferenceModel};
use crate::error::AdaptError;
use crate::linalg::Matrix;
use crate::scalar::{all_finite, Real};

/// Adaptation gain: scalar `γ I` or a full positive-definite `k × k` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub enum LearningRate<T> {
    Scalar(T),
    Matrix(Matrix<T>),
}

impl<T: Real> LearningRate<T> {
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        match self {
            LearningRate::Scalar(g) => v.iter().map(|&x| *g * x).collect(),
            LearningRate::Matrix(m) => m.mul_vec(v),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        match self {
            LearningRate::Scalar(g) => LearningRate::Scalar(*g * s),
            LearningRate::Matrix(m) => LearningRate::Matrix(m.scale(s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ControllerGains<T> {
    /// `m × n` state feedback, applied as `-k_x x`.
    pub k_x: Matrix<T>,
    /// `m × r` feedforward.
    pub k_r: Matrix<T>,
    pub gamma: LearningRate<T>,
    pub q: Matrix<T>,
    pub p: Matrix<T>,
    /// `P B`, cached for `eᵀ P B`.
    pub pb: Matrix<T>,
}

/// Symmetric positive-definite `P` with `A_mᵀ P + P A_m + Q = 0`.
///
/// Solved as the `n² × n²` Kronecker system
/// `(I ⊗ A_mᵀ + A_mᵀ ⊗ I) vec(P) = -vec(Q)`.
pub fn solve_lyapunov<T: Real>(a_m: &Matrix<T>, q: &Matrix<T>) -> Result<Matrix<T>, AdaptError> {
    let n = a_m.rows();
    if !a_m.is_square() || q.shape() != (n, n) {
        return Err(AdaptError::Dimension(format!(
            "A_m {:?} and Q {:?}",
            a_m.shape(),
            q.shape()
        )));
    }
    if !q.is_symmetric(T::lit(1e-12) * q.frobenius_norm().max(T::one()))
        || !(q.min_symmetric_eigenvalue()? > T::zero())
    {
        return Err(AdaptError::QNotPositiveDefinite);
    }
    check_hurwitz(a_m)?;
    let at = a_m.transpose();
    let eye = Matrix::identity(n);
    let lhs = eye.kron(&at).add(&at.kron(&eye));
    let rhs: Vec<T> = q.vectorize().into_iter().map(|v| -v).collect();
    let p = Matrix::unvectorize(n, n, &lhs.solve(&rhs)?);
    Ok(p.add(&p.transpose()).scale(T::lit(0.5)))
}

/// `‖A_mᵀ P + P A_m + Q‖_F`.
pub fn lyapunov_residual<T: Real>(a_m: &Matrix<T>, p: &Matrix<T>, q: &Matrix<T>) -> T {
    a_m.transpose().matmul(p).add(&p.matmul(a_m)).add(q).frobenius_norm()
}

impl<T: Real> ControllerGains<T> {
    /// Baseline gains from the matching conditions `A - B k_x = A_m`,
    /// `B k_r = B_m`, solved in the least-squares sense and then verified.
    pub fn from_matching(
        plant: &LinearPlant<T>,
        model: &ReferenceModel<T>,
        gamma: LearningRate<T>,
        q: Matrix<T>,
    ) -> Result<Self, AdaptError> {
        let b = plant.b();
        if model.state_dim() != plant.state_dim() {
            return Err(AdaptError::Dimension("reference model and plant state sizes differ".into()));
        }
        let bt = b.transpose();
        let btb = bt.matmul(b);
        let solve_cols = |rhs: &Matrix<T>| -> Result<Matrix<T>, AdaptError> {
            let btr = bt.matmul(rhs);
            let mut out = Matrix::zeros(btb.rows(), rhs.cols());
            for j in 0..rhs.cols() {
                let col: Vec<T> = (0..btr.rows()).map(|i| btr[(i, j)]).collect();
                for (i, v) in btb.solve(&col)?.into_iter().enumerate() {
                    out[(i, j)] = v;
                }
            }
            Ok(out)
        };
        let k_x = solve_cols(&plant.a().sub(model.a_m()))?;
        let k_r = solve_cols(model.b_m())?;
        let p = solve_lyapunov(model.a_m(), &q)?;
        let gains = Self {
            pb: p.matmul(b),
            k_x,
            k_r,
            gamma,
            q,
            p,
        };
        gains.check_matching(plant, model, T::lit(1e-12))?;
        Ok(gains)
    }

    /// Explicit gains; `P` is solved from `A_m` and `Q`.
    pub fn new(
        k_x: Matrix<T>,
        k_r: Matrix<T>,
        gamma: LearningRate<T>,
        q: Matrix<T>,
        model: &ReferenceModel<T>,
        b: &Matrix<T>,
    ) -> Result<Self, AdaptError> {
        let p = solve_lyapunov(model.a_m(), &q)?;
        Ok(Self {
            pb: p.matmul(b),
            k_x,
            k_r,
            gamma,
            q,
            p,
        })
    }

    pub fn check_matching(&self, plant: &LinearPlant<T>, model: &ReferenceModel<T>, tol: T) -> Result<(), AdaptError> {
        let b = plant.b();
        let dx = plant.a().sub(&b.matmul(&self.k_x)).max_abs_diff(model.a_m());
        let dr = b.matmul(&self.k_r).max_abs_diff(model.b_m());
        if dx > tol || dr > tol {
            return Err(AdaptError::Matching(format!(
                "|A - B k_x - A_m| = {dx}, |B k_r - B_m| = {dr}"
            )));
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: LearningRate<T>) -> Self {
        self.gamma = gamma;
        self
    }
}

/// `u_pd + u_crm = -k_x x + k_r r`.
pub fn baseline_control<T: Real>(gains: &ControllerGains<T>, x: &[T], r: &[T]) -> Vec<T> {
    let fb = gains.k_x.mul_vec(x);
    let ff = gains.k_r.mul_vec(r);
    fb.iter().zip(ff).map(|(&a, b)| b - a).collect()
}

/// Output-layer weights `W` (`k × m`) confined to `‖W‖_F ≤ bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FastWeights<T> {
    w: Matrix<T>,
    bound: T,
}

impl<T: Real> FastWeights<T> {
    pub fn zeros(features: usize, outputs: usize, bound: T) -> Self {
        Self {
            w: Matrix::zeros(features, outputs),
            bound,
        }
    }

    /// Starts from `w`, projected into the ball.
    pub fn from_matrix(w: Matrix<T>, bound: T) -> Self {
        let mut fw = Self { w, bound };
        fw.project();
        fw
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.w
    }

    pub fn bound(&self) -> T {
        self.bound
    }

    pub fn norm(&self) -> T {
        self.w.frobenius_norm()
    }

    /// Rescales onto the ball when outside it.
    fn project(&mut self) {
        let n = self.w.frobenius_norm();
        if n > self.bound {
            self.w = self.w.scale(self.bound / n);
        }
    }
}

/// `u_ad = Wᵀ φ`.
pub fn adaptive_element<T: Real>(w: &FastWeights<T>, phi: &[T]) -> Result<Vec<T>, AdaptError> {
    if phi.len() != w.w.rows() {
        return Err(AdaptError::Dimension(format!(
            "{} features for a {}x{} weight matrix",
            phi.len(),
            w.w.rows(),
            w.w.cols()
        )));
    }
    Ok(w.w.tr_mul_vec(phi))
}

/// Unprojected rate `Ẇ = -Γ φ̄ (eᵀ P B)`.
///
/// `e` is the tracking error in the `x_m - x` orientation; with
/// `u = u_pd + u_crm - u_ad` that is the sign for which the cross term in the
/// Lyapunov derivative cancels.
pub fn weight_rate<T: Real>(phi_mean: &[T], e: &[T], gains: &ControllerGains<T>) -> Result<Matrix<T>, AdaptError> {
    if e.len() != gains.pb.rows() {
        return Err(AdaptError::Dimension(format!(
            "error of length {} for P B of shape {:?}",
            e.len(),
            gains.pb.shape()
        )));
    }
    if !all_finite(phi_mean) || !all_finite(e) {
        return Err(AdaptError::NonFinite);
    }
    let gphi = gains.gamma.apply(phi_mean);
    let epb = gains.pb.tr_mul_vec(e);
    Ok(Matrix::from_fn(gphi.len(), epb.len(), |i, j| -gphi[i] * epb[j]))
}

/// One explicit-Euler step of the fast-weight law followed by projection onto
/// the Frobenius ball.
pub fn update_fast_weights<T: Real>(
    w: &FastWeights<T>,
    phi_mean: &[T],
    e: &[T],
    gains: &ControllerGains<T>,
    dt: T,
) -> Result<FastWeights<T>, AdaptError> {
    if phi_mean.len() != w.w.rows() {
        return Err(AdaptError::Dimension(format!(
            "{} features for a {}x{} weight matrix",
            phi_mean.len(),
            w.w.rows(),
            w.w.cols()
        )));
    }
    let rate = weight_rate(phi_mean, e, gains)?;
    if rate.cols() != w.w.cols() {
        return Err(AdaptError::Dimension("P B columns must match the weight outputs".into()));
    }
    let mut next = FastWeights {
        w: w.w.add(&rate.scale(dt)),
        bound: w.bound,
    };
    next.project();
    Ok(next)
}

/// `u = u_pd + u_crm - u_ad` with `u_ad = Wᵀ φ`.
pub fn total_control<T: Real>(
    gains: &ControllerGains<T>,
    w: &FastWeights<T>,
    phi: &[T],
    x: &[T],
    r: &[T],
) -> Result<Vec<T>, AdaptError> {
    let u_ad = adaptive_element(w, phi)?;
    Ok(baseline_control(gains, x, r)
        .into_iter()
        .zip(u_ad)
        .map(|(b, a)| b - a)
        .collect())
}
