//! Ridge regression as a transparent bi-level problem.
//!
//! The inner problem has a closed-form solution, so every quantity the
//! implicit-gradient pipeline estimates can be computed exactly here:
//!
//! ```text
//! theta*(lambda) = (X^T X + lambda I)^-1 (X^T y + lambda theta0)
//! d f_val / d lambda = grad_f(theta*)^T (X^T X + lambda I)^-1 (theta0 - theta*)
//! ```
//!
//! This makes it a good end-to-end check: the same [`crate::outer::hvp`]
//! plus [`crate::outer::implicit_weights`] path used on policies must
//! reproduce the closed form on this problem.

use crate::error::{Error, Result};
use crate::linalg::{matvec, solve_spd};
use crate::outer::{implicit_weights, NeumannConfig};
use crate::param::ParamVector;
use crate::scalar::Scalar;

/// A fixed train/validation split with a shrinkage target `theta0`.
///
/// Inner objective: `(1/2)||X theta - y||^2 + (lambda/2)||theta - theta0||^2`
/// on the training split. Outer objective: squared error on the
/// validation split, differentiated with respect to `lambda`.
#[derive(Clone, Debug)]
pub struct RidgeProblem<F: Scalar> {
    pub x_train: Vec<Vec<F>>,
    pub y_train: Vec<F>,
    pub x_val: Vec<Vec<F>>,
    pub y_val: Vec<F>,
    pub theta0: ParamVector<F>,
}

impl<F: Scalar> RidgeProblem<F> {
    pub fn new(
        x_train: Vec<Vec<F>>,
        y_train: Vec<F>,
        x_val: Vec<Vec<F>>,
        y_val: Vec<F>,
        theta0: ParamVector<F>,
    ) -> Result<Self> {
        let d = theta0.len();
        if d == 0 {
            return Err(Error::invalid("theta0 must not be empty"));
        }
        if x_train.len() != y_train.len() || x_val.len() != y_val.len() {
            return Err(Error::invalid("design and target row counts differ"));
        }
        if x_train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if x_train.iter().chain(&x_val).any(|row| row.len() != d) {
            return Err(Error::invalid("design row width differs from theta0"));
        }
        Ok(Self { x_train, y_train, x_val, y_val, theta0 })
    }

    fn dim(&self) -> usize {
        self.theta0.len()
    }

    /// `X^T X + lambda I` on the training split.
    fn gram(&self, lambda: F) -> Vec<Vec<F>> {
        let d = self.dim();
        let mut g = vec![vec![F::zero(); d]; d];
        for row in &self.x_train {
            for i in 0..d {
                for j in 0..d {
                    g[i][j] = g[i][j] + row[i] * row[j];
                }
            }
        }
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = row[i] + lambda;
        }
        g
    }

    /// Closed-form inner solution.
    pub fn solve(&self, lambda: F) -> Result<ParamVector<F>> {
        let d = self.dim();
        let mut rhs = vec![F::zero(); d];
        for (row, y) in self.x_train.iter().zip(&self.y_train) {
            for i in 0..d {
                rhs[i] = rhs[i] + row[i] * *y;
            }
        }
        for i in 0..d {
            rhs[i] = rhs[i] + lambda * self.theta0.get(i)?;
        }
        ParamVector::from_vec(solve_spd(&self.gram(lambda), &rhs)?)
    }

    /// Validation squared error `(1/2)||X_val theta - y_val||^2`.
    pub fn val_loss(&self, theta: &ParamVector<F>) -> Result<F> {
        let mut total = F::zero();
        for (row, y) in self.x_val.iter().zip(&self.y_val) {
            let pred: F = row.iter().zip(theta.iter()).map(|(a, b)| *a * *b).sum();
            let e = pred - *y;
            total = total + e * e;
        }
        Ok(total * real_half())
    }

    /// Gradient of the validation loss at `theta`.
    pub fn val_grad(&self, theta: &ParamVector<F>) -> Result<ParamVector<F>> {
        let mut g = ParamVector::zeros(self.dim());
        for (row, y) in self.x_val.iter().zip(&self.y_val) {
            let pred: F = row.iter().zip(theta.iter()).map(|(a, b)| *a * *b).sum();
            let e = pred - *y;
            let row_v = ParamVector::from_vec(row.clone())?;
            g.axpy_mut(e, &row_v)?;
        }
        Ok(g)
    }

    /// The inner update map: negative gradient of the training objective.
    /// Its fixed point is [`RidgeProblem::solve`], and its theta-Jacobian
    /// is `-(X^T X + lambda I)`, matching the shape the policy pipeline
    /// assumes (an ascent-style update with negative definite Jacobian).
    pub fn descent_update(&self, theta: &ParamVector<F>, lambda: F) -> Result<ParamVector<F>> {
        // -(X^T X + lambda I) theta + X^T y + lambda theta0
        let g = self.gram(lambda);
        let gx = matvec(&g, theta.as_slice())?;
        let mut out = ParamVector::from_vec(gx)?.scale(-F::one());
        let mut rhs = vec![F::zero(); self.dim()];
        for (row, y) in self.x_train.iter().zip(&self.y_train) {
            for i in 0..self.dim() {
                rhs[i] = rhs[i] + row[i] * *y;
            }
        }
        let rhs_v = ParamVector::from_vec(rhs)?;
        out.axpy_mut(F::one(), &rhs_v)?;
        out.axpy_mut(lambda, &self.theta0)?;
        Ok(out)
    }

    /// Exact hyperparameter gradient via two linear solves.
    pub fn lambda_grad_exact(&self, lambda: F) -> Result<F> {
        let theta_star = self.solve(lambda)?;
        let v = self.val_grad(&theta_star)?;
        let pull = self.theta0.sub(&theta_star)?;
        let solved = solve_spd(&self.gram(lambda), pull.as_slice())?;
        Ok(v.dot(&ParamVector::from_vec(solved)?)?)
    }

    /// The same gradient through the generic machinery: finite-difference
    /// Jacobian-vector products of the descent update and a truncated
    /// series inverse.
    pub fn lambda_grad_neumann(&self, lambda: F, cfg: &NeumannConfig<F>) -> Result<F> {
        let theta_star = self.solve(lambda)?;
        let v = self.val_grad(&theta_star)?;
        let update = |t: &ParamVector<F>| self.descent_update(t, lambda);
        let y = implicit_weights(&v, &update, &theta_star, cfg)?;
        // d update / d lambda at the fixed point is theta0 - theta*
        let pull = self.theta0.sub(&theta_star)?;
        y.dot(&pull)
    }

    /// Largest eigenvalue of the regularized Gram matrix by power
    /// iteration; callers size the series step as a fraction of its
    /// reciprocal.
    pub fn gram_spectral_bound(&self, lambda: F) -> Result<F> {
        let g = self.gram(lambda);
        let d = self.dim();
        let mut v = vec![F::one(); d];
        let mut eig = F::one();
        for _ in 0..200 {
            let next = matvec(&g, &v)?;
            let norm = next.iter().map(|x| *x * *x).sum::<F>().sqrt();
            if norm == F::zero() {
                return Ok(lambda);
            }
            eig = norm / v.iter().map(|x| *x * *x).sum::<F>().sqrt();
            v = next.iter().map(|x| *x / norm).collect();
        }
        Ok(eig)
    }
}

fn real_half<F: Scalar>() -> F {
    F::from_f64(0.5).unwrap()
}

/// A small fixed instance for demos and smoke tests, with an interior
/// optimum for the hyperparameter.
pub fn demo_problem() -> RidgeProblem<f64> {
    // mildly overdetermined 2-d problem; validation set disagrees with
    // training noise so shrinkage has a sweet spot
    let x_train = vec![
        vec![1.0, 0.2],
        vec![0.8, -0.4],
        vec![-0.3, 1.0],
        vec![0.5, 0.5],
        vec![-1.0, 0.1],
    ];
    let y_train = vec![1.1, 0.6, 0.2, 0.9, -0.8];
    let x_val = vec![vec![0.9, 0.1], vec![-0.2, 0.8], vec![0.4, -0.6]];
    let y_val = vec![0.8, 0.05, 0.5];
    let theta0 = ParamVector::from_vec(vec![0.0, 0.0]).unwrap();
    RidgeProblem::new(x_train, y_train, x_val, y_val, theta0).unwrap()
}
