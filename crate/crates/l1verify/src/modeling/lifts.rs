//! Hamiltonian lifts and switching functions of a [`ControlledSystem`],
//! with |ψ| frozen to ψ (the verifier requires ψ > 0 wherever it matters).

use super::cotangent::{lift_expr, CotFn};
use super::expr::{add, mul, sub, Expr};
use super::system::ControlledSystem;

#[derive(Debug, Clone)]
pub struct SystemLifts {
    pub n: usize,
    /// F0 = ⟨p, f0⟩
    pub f0: CotFn,
    /// F1 = ⟨p, f1⟩
    pub f1: CotFn,
    pub f01: CotFn,
    pub f001: CotFn,
    pub f101: CotFn,
    /// ψ∘π
    pub psi: CotFn,
    /// Φ⁻ = F1 − ψ
    pub phi_minus: CotFn,
    /// Φ⁺ = F1 + ψ
    pub phi_plus: CotFn,
    /// F01 − L_{f0}ψ: vanishes on S⁻ together with Φ⁻.
    pub g: CotFn,
    /// 𝕃 = F101 + L_{f01}ψ − L_{f1}L_{f0}ψ
    pub sglc: CotFn,
    /// F001 − L²_{f0}ψ, the numerator of the singular feedback.
    pub nu_numerator: CotFn,
    /// F0 + Φ⁻, the u = +1 branch.
    pub bang_plus: CotFn,
    /// F0 − Φ⁺, the u = −1 branch.
    pub bang_minus: CotFn,
    /// v1 = (F001 + F101) + L_{f01}ψ − L_{f0+f1}L_{f0}ψ
    pub v1: CotFn,
    /// v2 = F001 − L²_{f0}ψ
    pub v2: CotFn,
    /// 𝔯3 = F01 + L_{f0}ψ
    pub r3: CotFn,
}

impl SystemLifts {
    pub fn new(sys: &ControlledSystem) -> SystemLifts {
        let n = sys.n;
        let d = &sys.derived;
        let lift = |f: &[Expr]| lift_expr(f, n);
        let f0 = lift(sys.f0.exprs());
        let f1 = lift(sys.f1.exprs());
        let f01 = lift(d.f01.exprs());
        let f001 = lift(d.f001.exprs());
        let f101 = lift(d.f101.exprs());
        let psi = sys.psi.exprs()[0].clone();
        let phi_minus = sub(f1.clone(), psi.clone());
        let phi_plus = add(f1.clone(), psi.clone());
        let g = sub(f01.clone(), d.lf0_psi.clone());
        let sglc = add(f101.clone(), sub(d.lf01_psi.clone(), d.lf1_lf0_psi.clone()));
        let nu_numerator = sub(f001.clone(), d.lf0_lf0_psi.clone());
        // L_{f0+f1}L_{f0}ψ = L²_{f0}ψ + L_{f1}L_{f0}ψ
        let v1 = sub(
            add(add(f001.clone(), f101.clone()), d.lf01_psi.clone()),
            add(d.lf0_lf0_psi.clone(), d.lf1_lf0_psi.clone()),
        );
        let v2 = nu_numerator.clone();
        let r3 = add(f01.clone(), d.lf0_psi.clone());
        let bang_plus = add(f0.clone(), phi_minus.clone());
        let bang_minus = sub(f0.clone(), phi_plus.clone());
        let mk = |e: Expr| CotFn::new(e, n);
        SystemLifts {
            n,
            f0: mk(f0),
            f1: mk(f1),
            f01: mk(f01),
            f001: mk(f001),
            f101: mk(f101),
            psi: mk(psi),
            phi_minus: mk(phi_minus),
            phi_plus: mk(phi_plus),
            g: mk(g),
            sglc: mk(sglc),
            nu_numerator: mk(nu_numerator),
            bang_plus: mk(bang_plus),
            bang_minus: mk(bang_minus),
            v1: mk(v1),
            v2: mk(v2),
            r3: mk(r3),
        }
    }

    /// The pre-Hamiltonian h(·, u) = F0 + uF1 − |u|ψ for a fixed control value.
    pub fn pre_hamiltonian(&self, u: f64) -> CotFn {
        let e = add(
            self.f0.expr().clone(),
            sub(
                mul(Expr::Const(u), self.f1.expr().clone()),
                mul(Expr::Const(u.abs()), self.psi.expr().clone()),
            ),
        );
        CotFn::new(e, self.n)
    }

    /// ν(ℓ) = −(F001 − L²_{f0}ψ)/𝕃 and 𝕃 at a point.
    pub fn singular_feedback(&self, z: &[f64]) -> (f64, f64) {
        let l = self.sglc.eval(z);
        (-self.nu_numerator.eval(z) / l, l)
    }
}
