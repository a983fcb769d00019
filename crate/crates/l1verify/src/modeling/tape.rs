//! Flat evaluation program for a batch of expressions sharing subterms.

use std::cell::RefCell;
use std::collections::HashMap;

use super::expr::{Expr, Func};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(u32),
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, i32),
    Call(Func, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Const(u64),
    Var(u32),
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, i32),
    Call(Func, u32),
}

/// A compiled multi-output expression. Identical subtrees are evaluated once.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<u32>,
    nvars: usize,
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

struct Builder {
    ops: Vec<Op>,
    memo: HashMap<Key, u32>,
}

impl Builder {
    fn push(&mut self, key: Key, op: Op) -> u32 {
        if let Some(&i) = self.memo.get(&key) {
            return i;
        }
        let i = self.ops.len() as u32;
        self.ops.push(op);
        self.memo.insert(key, i);
        i
    }

    fn emit(&mut self, e: &Expr) -> u32 {
        match e {
            Expr::Const(c) => self.push(Key::Const(c.to_bits()), Op::Const(*c)),
            Expr::Var(i) => self.push(Key::Var(*i as u32), Op::Var(*i as u32)),
            // Unbound parameters evaluate to NaN; callers bind before compiling.
            Expr::Param(_) => self.push(Key::Const(f64::NAN.to_bits()), Op::Const(f64::NAN)),
            Expr::Neg(a) => {
                let a = self.emit(a);
                self.push(Key::Neg(a), Op::Neg(a))
            }
            Expr::Add(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                let (x, y) = if a <= b { (a, b) } else { (b, a) };
                self.push(Key::Add(x, y), Op::Add(a, b))
            }
            Expr::Sub(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                self.push(Key::Sub(a, b), Op::Sub(a, b))
            }
            Expr::Mul(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                let (x, y) = if a <= b { (a, b) } else { (b, a) };
                self.push(Key::Mul(x, y), Op::Mul(a, b))
            }
            Expr::Div(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                self.push(Key::Div(a, b), Op::Div(a, b))
            }
            Expr::Pow(a, k) => {
                let a = self.emit(a);
                self.push(Key::Pow(a, *k), Op::Pow(a, *k))
            }
            Expr::Call(f, a) => {
                let a = self.emit(a);
                self.push(Key::Call(*f, a), Op::Call(*f, a))
            }
        }
    }
}

impl Tape {
    pub fn compile(exprs: &[Expr], nvars: usize) -> Tape {
        let mut b = Builder { ops: Vec::new(), memo: HashMap::new() };
        let outputs = exprs.iter().map(|e| b.emit(e)).collect();
        Tape { ops: b.ops, outputs, nvars }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn noutputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn eval_into(&self, vars: &[f64], out: &mut [f64]) {
        debug_assert!(vars.len() >= self.nvars);
        debug_assert_eq!(out.len(), self.outputs.len());
        SCRATCH.with(|cell| {
            let mut reg = cell.borrow_mut();
            reg.clear();
            reg.reserve(self.ops.len());
            for op in &self.ops {
                let v = match *op {
                    Op::Const(c) => c,
                    Op::Var(i) => vars[i as usize],
                    Op::Neg(a) => -reg[a as usize],
                    Op::Add(a, b) => reg[a as usize] + reg[b as usize],
                    Op::Sub(a, b) => reg[a as usize] - reg[b as usize],
                    Op::Mul(a, b) => reg[a as usize] * reg[b as usize],
                    Op::Div(a, b) => reg[a as usize] / reg[b as usize],
                    Op::Pow(a, k) => reg[a as usize].powi(k),
                    Op::Call(f, a) => f.apply(reg[a as usize]),
                };
                reg.push(v);
            }
            for (o, &i) in out.iter_mut().zip(&self.outputs) {
                *o = reg[i as usize];
            }
        });
    }

    pub fn eval(&self, vars: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(vars, &mut out);
        out
    }

    pub fn eval1(&self, vars: &[f64]) -> f64 {
        let mut out = [0.0];
        self.eval_into(vars, &mut out);
        out[0]
    }
}
