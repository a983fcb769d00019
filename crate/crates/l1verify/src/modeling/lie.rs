//! Lie brackets and Lie derivatives, both symbolic (for building derived
//! quantities once) and numeric (for point queries).

use nalgebra::DVector;

use super::expr::{add, mul, sub, sum, Expr};
use super::system::SmoothMap;
use crate::error::{Error, Result};

/// [f, g] = Dg·f − Df·g, componentwise as expressions.
pub fn bracket_exprs(f: &[Expr], g: &[Expr], n: usize) -> Vec<Expr> {
    (0..n)
        .map(|i| {
            let dg_f = sum((0..n).map(|j| mul(g[i].diff(j), f[j].clone())));
            let df_g = sum((0..n).map(|j| mul(f[i].diff(j), g[j].clone())));
            sub(dg_f, df_g)
        })
        .collect()
}

/// L_f φ = ⟨dφ, f⟩ as an expression.
pub fn lie_derivative_expr(f: &[Expr], phi: &Expr, n: usize) -> Expr {
    sum((0..n).map(|j| mul(phi.diff(j), f[j].clone())))
}

/// Componentwise sum of two vector-field expressions.
pub fn add_fields(f: &[Expr], g: &[Expr]) -> Vec<Expr> {
    f.iter().zip(g).map(|(a, b)| add(a.clone(), b.clone())).collect()
}

fn check_field(f: &SmoothMap, n: usize) -> Result<()> {
    if f.nin() != n || f.nout() != n {
        return Err(Error::Input(format!(
            "vector field must map R^{n} to R^{n}, got R^{} -> R^{}",
            f.nin(),
            f.nout()
        )));
    }
    Ok(())
}

/// Numeric bracket at q: Dg(q)·f(q) − Df(q)·g(q).
pub fn lie_bracket(f: &SmoothMap, g: &SmoothMap, q: &[f64]) -> Result<DVector<f64>> {
    let n = q.len();
    check_field(f, n)?;
    check_field(g, n)?;
    let fv = f.value_vec(q);
    let gv = g.value_vec(q);
    Ok(g.jacobian(q) * fv - f.jacobian(q) * gv)
}

/// L_f φ(q) (order 1) or L_f(L_f φ)(q) (order 2).
pub fn lie_derivative(f: &SmoothMap, phi: &SmoothMap, q: &[f64], order: u8) -> Result<f64> {
    let n = q.len();
    check_field(f, n)?;
    if phi.nin() != n || phi.nout() != 1 {
        return Err(Error::Input("φ must be a scalar function on the state space".into()));
    }
    let fv = f.value_vec(q);
    let dphi = phi.gradient(q);
    match order {
        1 => Ok(dphi.dot(&fv)),
        // L_f(⟨dφ, f⟩) = D²φ[f, f] + ⟨dφ, Df·f⟩
        2 => Ok((phi.hessian(q) * &fv).dot(&fv) + dphi.dot(&(f.jacobian(q) * &fv))),
        _ => Err(Error::Input(format!("lie_derivative order must be 1 or 2, got {order}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modeling::expr::{parse_expression, Symbols};

    fn field_in(n: usize, srcs: &[&str]) -> SmoothMap {
        let s = Symbols::state(n, []);
        SmoothMap::new(srcs.iter().map(|x| parse_expression(x, &s).unwrap()).collect(), n)
    }

    fn field(srcs: &[&str]) -> SmoothMap {
        field_in(srcs.len(), srcs)
    }

    #[test]
    fn vehicle_bracket_and_second_ad() {
        let f0 = field(&["x2", "-2*x2"]);
        let f1 = field(&["0", "1"]);
        let q = [1.0, 3.0];
        let f01 = lie_bracket(&f0, &f1, &q).unwrap();
        assert_eq!(f01.as_slice(), &[-1.0, 2.0]);
        let f01_map = SmoothMap::new(bracket_exprs(f0.exprs(), f1.exprs(), 2), 2);
        let f001 = SmoothMap::new(bracket_exprs(f0.exprs(), f01_map.exprs(), 2), 2);
        let f0001 = lie_bracket(&f0, &f001, &q).unwrap();
        assert_eq!(f0001.as_slice(), &[-4.0, 8.0]);
    }

    #[test]
    fn self_bracket_vanishes() {
        let f = field(&["x1*x2", "sin(x1)"]);
        let b = lie_bracket(&f, &f, &[0.3, 0.8]).unwrap();
        assert!(b.norm() == 0.0);
    }

    #[test]
    fn second_order_lie_derivative() {
        let f0 = field(&["x2", "-x2"]);
        let psi = field_in(2, &["x2"]);
        // L_{f0} x2 = -x2, L²_{f0} x2 = x2
        assert_eq!(lie_derivative(&f0, &psi, &[0.0, 0.5], 1).unwrap(), -0.5);
        assert_eq!(lie_derivative(&f0, &psi, &[0.0, 0.5], 2).unwrap(), 0.5);
        let zero = field(&["0", "0"]);
        assert_eq!(lie_derivative(&zero, &psi, &[0.0, 0.5], 1).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let f = field(&["x1", "x2"]);
        let g = field(&["x1", "x2", "x3"]);
        assert!(lie_bracket(&f, &g, &[0.0, 0.0]).is_err());
    }
}
