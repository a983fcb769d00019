use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::expr::{parse_expression, print_expression, Expr, Symbols};
use super::lie;
use super::tape::Tape;
use crate::error::{Error, Result};

/// A map ℝⁿ → ℝᵐ given by expressions, with exact Jacobian and Hessians.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    nin: usize,
    exprs: Vec<Expr>,
    value: Tape,
    jac: Tape,
    hess: Tape,
}

impl SmoothMap {
    pub fn new(exprs: Vec<Expr>, nin: usize) -> SmoothMap {
        let jac_exprs: Vec<Expr> = exprs.iter().flat_map(|e| e.gradient(nin)).collect();
        let mut hess_exprs = Vec::with_capacity(exprs.len() * nin * (nin + 1) / 2);
        for k in 0..exprs.len() {
            for i in 0..nin {
                let di = &jac_exprs[k * nin + i];
                for j in i..nin {
                    hess_exprs.push(di.diff(j));
                }
            }
        }
        SmoothMap {
            nin,
            value: Tape::compile(&exprs, nin),
            jac: Tape::compile(&jac_exprs, nin),
            hess: Tape::compile(&hess_exprs, nin),
            exprs,
        }
    }

    pub fn nin(&self) -> usize {
        self.nin
    }

    pub fn nout(&self) -> usize {
        self.exprs.len()
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn value(&self, q: &[f64]) -> Vec<f64> {
        self.value.eval(q)
    }

    pub fn value_vec(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.value.eval(q))
    }

    /// Row-major m × n Jacobian.
    pub fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nout(), self.nin, &self.jac.eval(q))
    }

    /// One n × n symmetric Hessian per output component.
    pub fn hessians(&self, q: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.nin;
        let flat = self.hess.eval(q);
        let mut out = Vec::with_capacity(self.nout());
        let mut idx = 0;
        for _ in 0..self.nout() {
            let mut h = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    h[(i, j)] = flat[idx];
                    h[(j, i)] = flat[idx];
                    idx += 1;
                }
            }
            out.push(h);
        }
        out
    }

    /// Scalar maps only: the gradient as a row covector.
    pub fn gradient(&self, q: &[f64]) -> DVector<f64> {
        debug_assert_eq!(self.nout(), 1);
        DVector::from_vec(self.jac.eval(q))
    }

    pub fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        self.hessians(q).swap_remove(0)
    }
}

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub f0: Vec<String>,
    pub f1: Vec<String>,
    pub psi: String,
}

/// Bracket and Lie-derivative expressions every later stage consumes,
/// derived once at construction.
#[derive(Debug, Clone)]
pub struct Derived {
    pub f01: SmoothMap,
    pub f001: SmoothMap,
    pub f101: SmoothMap,
    /// L_{f0}ψ
    pub lf0_psi: Expr,
    /// L_{f1}ψ
    pub lf1_psi: Expr,
    /// L²_{f0}ψ
    pub lf0_lf0_psi: Expr,
    /// L_{f01}ψ
    pub lf01_psi: Expr,
    /// L_{f1}L_{f0}ψ
    pub lf1_lf0_psi: Expr,
}

/// The control-affine problem: minimise ∫|uψ(x)| subject to ẋ = f0 + u f1,
/// u ∈ [−1, 1].
#[derive(Debug, Clone)]
pub struct ControlledSystem {
    pub n: usize,
    pub params: BTreeMap<String, f64>,
    pub f0: SmoothMap,
    pub f1: SmoothMap,
    pub psi: SmoothMap,
    pub derived: Derived,
    symbols: Symbols,
}

impl ControlledSystem {
    /// Builds a system from parameter-free expressions over `x1..xn`.
    pub fn from_exprs(n: usize, f0: Vec<Expr>, f1: Vec<Expr>, psi: Expr) -> Result<ControlledSystem> {
        Self::build(n, BTreeMap::new(), f0, f1, psi)
    }

    fn build(
        n: usize,
        params: BTreeMap<String, f64>,
        f0: Vec<Expr>,
        f1: Vec<Expr>,
        psi: Expr,
    ) -> Result<ControlledSystem> {
        if n == 0 {
            return Err(Error::Input("state dimension must be positive".into()));
        }
        if f0.len() != n || f1.len() != n {
            return Err(Error::Input(format!(
                "f0 and f1 must have {n} components (got {} and {})",
                f0.len(),
                f1.len()
            )));
        }
        if f0.iter().chain(&f1).chain(std::iter::once(&psi)).any(Expr::contains_param) {
            return Err(Error::Input("unbound parameter in system expressions".into()));
        }
        let f01 = lie::bracket_exprs(&f0, &f1, n);
        let f001 = lie::bracket_exprs(&f0, &f01, n);
        let f101 = lie::bracket_exprs(&f1, &f01, n);
        let lf0_psi = lie::lie_derivative_expr(&f0, &psi, n);
        let lf1_psi = lie::lie_derivative_expr(&f1, &psi, n);
        let lf0_lf0_psi = lie::lie_derivative_expr(&f0, &lf0_psi, n);
        let lf01_psi = lie::lie_derivative_expr(&f01, &psi, n);
        let lf1_lf0_psi = lie::lie_derivative_expr(&f1, &lf0_psi, n);
        let derived = Derived {
            f01: SmoothMap::new(f01, n),
            f001: SmoothMap::new(f001, n),
            f101: SmoothMap::new(f101, n),
            lf0_psi,
            lf1_psi,
            lf0_lf0_psi,
            lf01_psi,
            lf1_lf0_psi,
        };
        Ok(ControlledSystem {
            n,
            f0: SmoothMap::new(f0, n),
            f1: SmoothMap::new(f1, n),
            psi: SmoothMap::new(vec![psi], n),
            derived,
            symbols: Symbols::state(n, params.keys().cloned()),
            params,
        })
    }

    pub fn from_problem(p: &ProblemFile) -> Result<ControlledSystem> {
        for (name, v) in &p.params {
            if !v.is_finite() {
                return Err(Error::Input(format!("parameter `{name}` is not finite")));
            }
            if name.starts_with('x') && name[1..].parse::<usize>().is_ok() {
                return Err(Error::Input(format!("parameter `{name}` shadows a state variable")));
            }
        }
        let syms = Symbols::state(p.n, p.params.keys().cloned());
        let parse = |what: &str, src: &str| -> Result<Expr> {
            let e = parse_expression(src, &syms)
                .map_err(|e| Error::Input(format!("{what}: `{src}`: {e}")))?;
            e.bind(&p.params).map_err(|e| Error::Input(format!("{what}: {e}")))
        };
        let f0 = p
            .f0
            .iter()
            .enumerate()
            .map(|(i, s)| parse(&format!("f0[{i}]"), s))
            .collect::<Result<Vec<_>>>()?;
        let f1 = p
            .f1
            .iter()
            .enumerate()
            .map(|(i, s)| parse(&format!("f1[{i}]"), s))
            .collect::<Result<Vec<_>>>()?;
        let psi = parse("psi", &p.psi)?;
        Self::build(p.n, p.params.clone(), f0, f1, psi)
    }

    pub fn from_json(text: &str) -> Result<ControlledSystem> {
        let p: ProblemFile =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("problem file: {e}")))?;
        Self::from_problem(&p)
    }

    pub fn symbols(&self) -> &Symbols {
        &self.symbols
    }

    pub fn print(&self, e: &Expr) -> String {
        print_expression(e, &self.symbols)
    }

    pub fn psi_value(&self, q: &[f64]) -> f64 {
        self.psi.value(q)[0]
    }

    /// f0 + u f1 at q.
    pub fn drift(&self, q: &[f64], u: f64) -> DVector<f64> {
        self.f0.value_vec(q) + self.f1.value_vec(q) * u
    }

    pub fn has_abs(&self) -> bool {
        self.f0.exprs().iter().chain(self.f1.exprs()).chain(self.psi.exprs()).any(Expr::contains_abs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn vehicle_problem(rho: f64) -> ProblemFile {
        ProblemFile {
            n: 2,
            params: BTreeMap::from([("rho".to_string(), rho)]),
            f0: vec!["x2".into(), "-rho*x2".into()],
            f1: vec!["0".into(), "1".into()],
            psi: "x2".into(),
        }
    }

    #[test]
    fn vehicle_brackets() {
        let sys = ControlledSystem::from_problem(&vehicle_problem(1.5)).unwrap();
        let q = [0.3, -0.7];
        assert_eq!(sys.derived.f01.value(&q), vec![-1.0, 1.5]);
        assert_eq!(sys.derived.f101.value(&q), vec![0.0, 0.0]);
        // ad_{f0} f01 = rho f01
        assert_eq!(sys.derived.f001.value(&q), vec![-1.5, 1.5 * 1.5]);
        assert_eq!(sys.derived.lf0_psi.eval(&q), -1.5 * -0.7);
        assert_eq!(sys.derived.lf01_psi.eval(&q), 1.5);
        assert_eq!(sys.derived.lf1_lf0_psi.eval(&q), -1.5);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let mut p = vehicle_problem(1.0);
        p.f1.pop();
        assert!(matches!(ControlledSystem::from_problem(&p), Err(Error::Input(_))));
    }

    #[test]
    fn hessians_are_exactly_symmetric() {
        let p = ProblemFile {
            n: 2,
            params: BTreeMap::new(),
            f0: vec!["x1*x2^3 + sin(x1*x2)".into(), "exp(x1)*x2".into()],
            f1: vec!["1".into(), "x1".into()],
            psi: "1 + x1^2".into(),
        };
        let sys = ControlledSystem::from_problem(&p).unwrap();
        for h in sys.f0.hessians(&[0.4, 1.1]) {
            assert_eq!(h, h.transpose());
        }
    }
}
