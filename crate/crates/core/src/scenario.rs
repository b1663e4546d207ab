//! Problem data: dynamics, cost, target set and budget.

use crate::error::{Error, Result};
use crate::expr::{parse_expression, EvalError, Expr, Slot, Var};

/// An `n`-vector of expressions in `(x1, x2)` with its symbolic Jacobians.
#[derive(Debug, Clone)]
pub struct VectorField {
    components: Vec<Expr>,
    // d_current[i][k] = dF_i/dx1[k]
    d_current: Vec<Vec<Expr>>,
    d_delayed: Vec<Vec<Expr>>,
    zero: bool,
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> Self {
        let n = components.len();
        let jac = |slot: Slot| -> Vec<Vec<Expr>> {
            components
                .iter()
                .map(|e| (0..n).map(|k| e.differentiate(Var { slot, index: k })).collect())
                .collect()
        };
        let d_current = jac(Slot::Current);
        let d_delayed = jac(Slot::Delayed);
        let zero = components.iter().all(|e| e.is_const(0.0));
        VectorField {
            components,
            d_current,
            d_delayed,
            zero,
        }
    }

    pub fn parse(texts: &[impl AsRef<str>], n: usize) -> Result<Self> {
        if texts.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "vector field has {} components but n = {n}",
                texts.len()
            )));
        }
        let components = texts
            .iter()
            .map(|t| parse_expression(t.as_ref(), n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(components))
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// True when every component is the literal constant 0.
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn eval_into(&self, x1: &[f64], x2: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.components) {
            *o = e.eval(x1, x2)?;
        }
        Ok(())
    }

    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x1, x2, &mut out)?;
        Ok(out)
    }

    /// Row-major Jacobian with respect to `slot`: entry `[i][k]` is dF_i/dx[k].
    pub fn jacobian(&self, slot: Slot, x1: &[f64], x2: &[f64]) -> Result<Vec<Vec<f64>>, EvalError> {
        let table = match slot {
            Slot::Current => &self.d_current,
            Slot::Delayed => &self.d_delayed,
        };
        table
            .iter()
            .map(|row| row.iter().map(|e| e.eval(x1, x2)).collect())
            .collect()
    }

    /// Accumulates `scale * q^T (dF/dx_slot)` into `out`.
    pub fn add_vjp(
        &self,
        slot: Slot,
        q: &[f64],
        x1: &[f64],
        x2: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        if self.zero || scale == 0.0 {
            return Ok(());
        }
        let table = match slot {
            Slot::Current => &self.d_current,
            Slot::Delayed => &self.d_delayed,
        };
        for (qi, row) in q.iter().zip(table) {
            if *qi == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(row) {
                if e.is_const(0.0) {
                    continue;
                }
                *o += scale * qi * e.eval(x1, x2)?;
            }
        }
        Ok(())
    }
}

/// Scalar terminal cost `Psi(x)`, written in terms of `x1[k]` only.
#[derive(Debug, Clone)]
pub struct ScalarField {
    expr: Expr,
    gradient: Vec<Expr>,
    n: usize,
}

impl ScalarField {
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let expr = parse_expression(text, n)?;
        if let Some(v) = expr.variables().iter().find(|v| v.slot == Slot::Delayed) {
            return Err(Error::Schema(format!(
                "cost may only depend on the terminal state x1[k], found {v}"
            )));
        }
        let gradient = (0..n).map(|k| expr.differentiate(Var::current(k))).collect();
        Ok(ScalarField { expr, gradient, n })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.expr.eval(x, &vec![0.0; self.n])
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let zeros = vec![0.0; self.n];
        self.gradient.iter().map(|e| e.eval(x, &zeros)).collect()
    }
}

/// Terminal constraint set.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Free,
    Point(Vec<f64>),
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Target {
    pub fn validate(&self, n: usize) -> Result<()> {
        let check = |v: &[f64], what: &str| {
            if v.len() != n {
                Err(Error::DimensionMismatch(format!(
                    "target {what} has {} components but n = {n}",
                    v.len()
                )))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(Error::Schema(format!("target {what} must be finite")))
            } else {
                Ok(())
            }
        };
        match self {
            Target::Free => Ok(()),
            Target::Point(z) => check(z, "point"),
            Target::Box { lo, hi } => {
                check(lo, "lo")?;
                check(hi, "hi")?;
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::Schema("target box needs lo <= hi".into()));
                }
                Ok(())
            }
            Target::Ball { center, radius } => {
                check(center, "center")?;
                if !(*radius >= 0.0) || !radius.is_finite() {
                    return Err(Error::Schema("target ball radius must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Nearest point of the set.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Target::Free => y.to_vec(),
            Target::Point(z) => z.clone(),
            Target::Box { lo, hi } => y
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect(),
            Target::Ball { center, radius } => {
                let d: Vec<f64> = y.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = norm(&d);
                if r <= *radius {
                    y.to_vec()
                } else {
                    center.iter().zip(&d).map(|(c, di)| c + di * radius / r).collect()
                }
            }
        }
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        let p = self.project(y);
        norm(&y.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>())
    }

    /// Distance from `v` to the normal cone of the set at the projection of
    /// `x`. Constraints within `active_tol` of `x` count as active.
    pub fn normal_cone_distance(&self, x: &[f64], v: &[f64], active_tol: f64) -> f64 {
        let x = self.project(x);
        match self {
            Target::Free => norm(v),
            Target::Point(_) => 0.0,
            Target::Box { lo, hi } => {
                let mut acc = 0.0;
                for k in 0..v.len() {
                    let at_lo = x[k] <= lo[k] + active_tol;
                    let at_hi = x[k] >= hi[k] - active_tol;
                    let excess = match (at_lo, at_hi) {
                        (true, true) => 0.0,
                        (true, false) => v[k].max(0.0),
                        (false, true) => (-v[k]).max(0.0),
                        (false, false) => v[k].abs(),
                    };
                    acc += excess * excess;
                }
                acc.sqrt()
            }
            Target::Ball { center, radius } => {
                let d: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = norm(&d);
                if r < radius - active_tol || r == 0.0 {
                    return if *radius == 0.0 { 0.0 } else { norm(v) };
                }
                // Project v onto the ray spanned by the outward normal.
                let kappa = (v.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / r).max(0.0);
                norm(&v.iter().zip(&d).map(|(a, b)| a - kappa * b / r).collect::<Vec<_>>())
            }
        }
    }
}

/// Validated problem description.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub n: usize,
    /// Number of delay segments `N`.
    pub segments: usize,
    /// Delay `h`.
    pub delay: f64,
    pub x0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub f: VectorField,
    pub g: VectorField,
    pub psi: ScalarField,
    pub target: Target,
    /// Total-variation budget `K`; infinite when unconstrained.
    pub budget: f64,
}

impl Scenario {
    /// Parses and validates a scenario from expression strings.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        segments: usize,
        delay: f64,
        x0: Vec<f64>,
        xi0: Vec<f64>,
        f: &[impl AsRef<str>],
        g: &[impl AsRef<str>],
        psi: &str,
        target: Target,
        budget: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Schema("state dimension n must be positive".into()));
        }
        if segments == 0 {
            return Err(Error::Schema("number of segments N must be positive".into()));
        }
        if !(delay > 0.0) || !delay.is_finite() {
            return Err(Error::Schema("delay h must be positive and finite".into()));
        }
        for (name, v) in [("x0", &x0), ("xi0", &xi0)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has {} components but n = {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Schema(format!("{name} must be finite")));
            }
        }
        if !(budget >= 0.0) {
            return Err(Error::Schema("budget K must be >= 0".into()));
        }
        target.validate(n)?;
        Ok(Scenario {
            n,
            segments,
            delay,
            x0,
            xi0,
            f: VectorField::parse(f, n)?,
            g: VectorField::parse(g, n)?,
            psi: ScalarField::parse(psi, n)?,
            target,
            budget,
        })
    }

    /// `T = N h`.
    pub fn horizon(&self) -> f64 {
        self.segments as f64 * self.delay
    }

    /// Evaluates `a f(x1, x2) + b g(x1, x2)` into `out`.
    pub fn rhs_into(
        &self,
        a: f64,
        b: f64,
        x1: &[f64],
        x2: &[f64],
        scratch: &mut [f64],
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        out.iter_mut().for_each(|o| *o = 0.0);
        if a != 0.0 && !self.f.is_zero() {
            self.f.eval_into(x1, x2, scratch)?;
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += a * s;
            }
        }
        if b != 0.0 && !self.g.is_zero() {
            self.g.eval_into(x1, x2, scratch)?;
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += b * s;
            }
        }
        Ok(())
    }
}
