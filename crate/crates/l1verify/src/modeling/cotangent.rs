//! Functions on the cotangent bundle T*ℝⁿ = ℝⁿ × ℝⁿ, with coordinates
//! z = (x1..xn, p1..pn).
//!
//! Sign convention: ⟨dF, ·⟩ = σ(·, F⃗) with σ = dp ∧ dx, so the Hamiltonian
//! vector field is ẋ = ∂F/∂p, ṗ = −∂F/∂x and the Poisson bracket is
//! {F, G} = σ(F⃗, G⃗) = ⟨∂_pF, ∂_xG⟩ − ⟨∂_xF, ∂_pG⟩. For lifts of vector
//! fields this gives {F_f, F_g} = ⟨p, [f, g]⟩.

use nalgebra::{DMatrix, DVector};

use super::expr::{mul, sum, var, Expr};
use super::tape::Tape;
use crate::error::{Error, Result};
use crate::ode::{self, OdeOptions, Solution};

/// A scalar function on T*ℝⁿ with value, gradient and (optionally exact)
/// Hessian. Implementations may fail outside their validity neighbourhood.
pub trait Hamiltonian: Sync {
    /// Half the ambient dimension.
    fn n(&self) -> usize;

    fn value(&self, z: &[f64]) -> Result<f64>;

    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>>;

    /// Central differences of the gradient unless overridden.
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let m = 2 * self.n();
        let mut h = DMatrix::zeros(m, m);
        let mut zp = z.to_vec();
        for j in 0..m {
            let step = FD_STEP * (1.0 + z[j].abs());
            zp[j] = z[j] + step;
            let gp = self.gradient(&zp)?;
            zp[j] = z[j] - step;
            let gm = self.gradient(&zp)?;
            zp[j] = z[j];
            h.set_column(j, &((gp - gm) / (2.0 * step)));
        }
        Ok((&h + h.transpose()) * 0.5)
    }

    /// Hamiltonian vector field (∂H/∂p, −∂H/∂x).
    fn vector_field(&self, z: &[f64]) -> Result<DVector<f64>> {
        Ok(symplectic_gradient(&self.gradient(z)?))
    }
}

/// Step for finite-difference Hessians of analytic gradients.
pub const FD_STEP: f64 = 2e-5;

/// J·∇H, where J maps (a_x, a_p) to (a_p, −a_x).
pub fn symplectic_gradient(g: &DVector<f64>) -> DVector<f64> {
    let n = g.len() / 2;
    let mut v = DVector::zeros(2 * n);
    for i in 0..n {
        v[i] = g[n + i];
        v[n + i] = -g[i];
    }
    v
}

/// The canonical matrix J = [[0, I], [−I, 0]] acting as in [`symplectic_gradient`].
pub fn canonical_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// σ(X, Y) = ⟨X_p, Y_x⟩ − ⟨X_x, Y_p⟩.
pub fn sigma(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = x.len() / 2;
    (0..n).map(|i| x[n + i] * y[i] - x[i] * y[n + i]).sum()
}

/// {F, G} from two gradients.
pub fn poisson_from_gradients(gf: &DVector<f64>, gg: &DVector<f64>) -> f64 {
    sigma(&symplectic_gradient(gf), &symplectic_gradient(gg))
}

pub fn poisson_bracket(f: &dyn Hamiltonian, g: &dyn Hamiltonian, z: &[f64]) -> Result<f64> {
    Ok(poisson_from_gradients(&f.gradient(z)?, &g.gradient(z)?))
}

/// Dense solution of ż = H⃗(z) from t0 to t1.
pub fn flow_solution(h: &dyn Hamiltonian, z0: &[f64], t0: f64, t1: f64, opts: &OdeOptions) -> Result<Solution> {
    ode::integrate(
        |_, z, dz| {
            dz.copy_from_slice(h.vector_field(z)?.as_slice());
            Ok(())
        },
        t0,
        z0,
        t1,
        opts,
    )
}

/// exp(tH⃗)(z0).
pub fn flow(h: &dyn Hamiltonian, z0: &[f64], t: f64, opts: &OdeOptions) -> Result<Vec<f64>> {
    Ok(flow_solution(h, z0, 0.0, t, opts)?.y1)
}

/// Flows z0 together with a 2n×k frame M under Ṁ = J·D²H(z)·M.
pub fn flow_linearized(
    h: &dyn Hamiltonian,
    z0: &[f64],
    frame: &DMatrix<f64>,
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = z0.len();
    let sol = flow_linearized_solution(h, z0, frame, t0, t1, opts)?;
    Ok(split_linearized(&sol.y1, m, frame.ncols()))
}

/// Dense version of [`flow_linearized`]; the state is z followed by the
/// frame in column-major order, see [`split_linearized`].
pub fn flow_linearized_solution(
    h: &dyn Hamiltonian,
    z0: &[f64],
    frame: &DMatrix<f64>,
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
) -> Result<Solution> {
    let m = z0.len();
    let k = frame.ncols();
    let mut y0 = z0.to_vec();
    y0.extend_from_slice(frame.as_slice());
    let jm = canonical_j(m / 2);
    ode::integrate(
        |_, y, dy| {
            let z = &y[..m];
            dy[..m].copy_from_slice(h.vector_field(z)?.as_slice());
            let mm = DMatrix::from_column_slice(m, k, &y[m..]);
            let rate = &jm * h.hessian(z)? * mm;
            dy[m..].copy_from_slice(rate.as_slice());
            Ok(())
        },
        t0,
        &y0,
        t1,
        opts,
    )
}

/// Splits a linearized-flow state into the point and the 2n×k frame.
pub fn split_linearized(y: &[f64], m: usize, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    (y[..m].to_vec(), DMatrix::from_column_slice(m, k, &y[m..m + m * k]))
}

/// Symbolic function on T*ℝⁿ with exact gradient and Hessian.
#[derive(Debug, Clone)]
pub struct CotFn {
    n: usize,
    expr: Expr,
    value: Tape,
    grad: Tape,
    hess: Tape,
}

impl CotFn {
    pub fn new(expr: Expr, n: usize) -> CotFn {
        let m = 2 * n;
        let grad_exprs = expr.gradient(m);
        let mut hess_exprs = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            for j in i..m {
                hess_exprs.push(grad_exprs[i].diff(j));
            }
        }
        CotFn {
            n,
            value: Tape::compile(std::slice::from_ref(&expr), m),
            grad: Tape::compile(&grad_exprs, m),
            hess: Tape::compile(&hess_exprs, m),
            expr,
        }
    }

    /// F_f(x, p) = ⟨p, f(x)⟩.
    pub fn lift(f: &[Expr], n: usize) -> CotFn {
        CotFn::new(lift_expr(f, n), n)
    }

    /// A function of x only, pulled back to T*ℝⁿ.
    pub fn of_state(phi: &Expr, n: usize) -> CotFn {
        CotFn::new(phi.clone(), n)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.value.eval1(z)
    }

    pub fn grad(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.grad.eval(z))
    }

    pub fn hess(&self, z: &[f64]) -> DMatrix<f64> {
        let m = 2 * self.n;
        let flat = self.hess.eval(z);
        let mut h = DMatrix::zeros(m, m);
        let mut idx = 0;
        for i in 0..m {
            for j in i..m {
                h[(i, j)] = flat[idx];
                h[(j, i)] = flat[idx];
                idx += 1;
            }
        }
        h
    }
}

fn finite_or(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonSmooth(format!("{what} is not finite (kink of abs or domain error)")))
    }
}

impl Hamiltonian for CotFn {
    fn n(&self) -> usize {
        self.n
    }

    fn value(&self, z: &[f64]) -> Result<f64> {
        finite_or(self.eval(z), "Hamiltonian value")
    }

    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        let g = self.grad(z);
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::NonSmooth("Hamiltonian gradient is not finite".into()))
        }
    }

    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.hess(z);
        if h.iter().all(|v| v.is_finite()) {
            Ok(h)
        } else {
            Err(Error::NonSmooth("Hamiltonian Hessian is not finite".into()))
        }
    }
}

/// ⟨p, f(x)⟩ with p in variable slots n..2n.
pub fn lift_expr(f: &[Expr], n: usize) -> Expr {
    sum((0..n).map(|i| mul(var(n + i), f[i].clone())))
}
