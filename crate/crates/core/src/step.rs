//! Piecewise-constant functions on an interval.
//!
//! Pieces are half-open `[b_k, b_{k+1})`; the last piece is closed on the
//! right. Breakpoints that agree to [`TOL`] are treated as equal.

use crate::error::{Error, Result};

/// Absolute tolerance for comparing breakpoints and masses.
pub const TOL: f64 = 1e-12;

/// Merges two sorted breakpoint lists, collapsing points closer than `TOL`.
pub fn merge_breaks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for x in all {
        match out.last() {
            Some(&last) if (x - last).abs() <= TOL * last.abs().max(1.0) => {}
            _ => out.push(x),
        }
    }
    out
}

fn locate(breaks: &[f64], x: f64) -> usize {
    let pieces = breaks.len() - 1;
    // partition_point gives the first break strictly greater than x.
    let idx = breaks.partition_point(|&b| b <= x);
    idx.saturating_sub(1).min(pieces - 1)
}

/// Scalar step function.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.len() < 2 || values.len() + 1 != breaks.len() {
            return Err(Error::Schema(format!(
                "step function needs {} values for {} breakpoints",
                breaks.len().saturating_sub(1),
                breaks.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::Schema(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("step values must be finite".into()));
        }
        Ok(StepFunction { breaks, values })
    }

    pub fn constant(start: f64, end: f64, value: f64) -> Self {
        StepFunction {
            breaks: vec![start, end],
            values: vec![value],
        }
    }

    pub fn zero(start: f64, end: f64) -> Self {
        Self::constant(start, end, 0.0)
    }

    /// Builds a step function from `(t0, t1, value)` rectangles on `[start, end]`;
    /// overlapping rectangles add up.
    pub fn from_rectangles(start: f64, end: f64, rects: &[(f64, f64, f64)]) -> Result<Self> {
        let mut out = Self::zero(start, end);
        for &(a, b, v) in rects {
            if !(a < b) || a < start - TOL || b > end + TOL {
                return Err(Error::Schema(format!(
                    "rectangle [{a}, {b}] is empty or outside [{start}, {end}]"
                )));
            }
            let a = a.max(start);
            let b = b.min(end);
            let mut breaks = vec![start];
            let mut values = Vec::new();
            if a > start + TOL {
                breaks.push(a);
                values.push(0.0);
            }
            values.push(v);
            if b < end - TOL {
                breaks.push(b);
                values.push(0.0);
            }
            breaks.push(end);
            out = out.combine(&StepFunction { breaks, values }, |x, y| x + y);
        }
        Ok(out)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breaks.windows(2).zip(&self.values).map(|(w, &v)| (w[0], w[1], v))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.values[locate(&self.breaks, x)]
    }

    pub fn integral(&self) -> f64 {
        self.pieces().map(|(a, b, v)| (b - a) * v).sum()
    }

    /// Integral over `[a, b]` clipped to the domain.
    pub fn integral_over(&self, a: f64, b: f64) -> f64 {
        self.pieces()
            .map(|(lo, hi, v)| {
                let l = lo.max(a);
                let h = hi.min(b);
                if h > l {
                    (h - l) * v
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Re-expresses the function on the merged breakpoint grid.
    pub fn refine(&self, extra: &[f64]) -> Self {
        let inner: Vec<f64> = extra
            .iter()
            .copied()
            .filter(|&x| x > self.start() && x < self.end())
            .collect();
        let breaks = merge_breaks(&self.breaks, &inner);
        let values = breaks.windows(2).map(|w| self.eval(0.5 * (w[0] + w[1]))).collect();
        StepFunction { breaks, values }
    }

    /// Pointwise combination on the union grid. Domains must agree.
    pub fn combine(&self, other: &StepFunction, op: impl Fn(f64, f64) -> f64) -> Self {
        let breaks = merge_breaks(&self.breaks, &other.breaks);
        let values = breaks
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                op(self.eval(mid), other.eval(mid))
            })
            .collect();
        StepFunction { breaks, values }
    }

    /// Restriction to `[a, b]`, shifted so that `a` maps to `a - offset`.
    pub fn restrict(&self, a: f64, b: f64, offset: f64) -> Self {
        let mut breaks = vec![a - offset];
        breaks.extend(
            self.breaks
                .iter()
                .filter(|&&x| x > a + TOL && x < b - TOL)
                .map(|x| x - offset),
        );
        breaks.push(b - offset);
        let values = breaks
            .windows(2)
            .map(|w| self.eval(0.5 * (w[0] + w[1]) + offset))
            .collect();
        StepFunction { breaks, values }
    }

    /// Joins adjacent pieces with equal values.
    pub fn simplify(&self) -> Self {
        let mut breaks = vec![self.breaks[0]];
        let mut values: Vec<f64> = Vec::new();
        for (_, b, v) in self.pieces() {
            if values.last() == Some(&v) {
                *breaks.last_mut().unwrap() = b;
            } else {
                values.push(v);
                breaks.push(b);
            }
        }
        StepFunction { breaks, values }
    }

    pub fn l1_distance(&self, other: &StepFunction) -> f64 {
        self.combine(other, |a, b| (a - b).abs()).integral()
    }
}

/// Vector-valued step function with shared breakpoints, used for the
/// reparameterized controls and attached controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStep {
    breaks: Vec<f64>,
    values: Vec<Vec<f64>>,
    dim: usize,
}

impl MultiStep {
    /// `values[k]` is the vector on piece `k`.
    pub fn new(breaks: Vec<f64>, values: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        if breaks.len() < 2 || values.len() + 1 != breaks.len() {
            return Err(Error::Schema(format!(
                "vector step function needs {} pieces for {} breakpoints",
                breaks.len().saturating_sub(1),
                breaks.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::Schema(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "every piece must carry {dim} components"
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Schema("step values must be finite".into()));
        }
        Ok(MultiStep { breaks, values, dim })
    }

    /// Builds from per-component value lists on a uniform grid of `[start, end]`.
    pub fn uniform(start: f64, end: f64, components: &[Vec<f64>]) -> Result<Self> {
        let dim = components.len();
        let pieces = components.first().map_or(0, Vec::len);
        if pieces == 0 || components.iter().any(|c| c.len() != pieces) {
            return Err(Error::DimensionMismatch(
                "all components need the same positive number of steps".into(),
            ));
        }
        let breaks = (0..=pieces)
            .map(|k| start + (end - start) * k as f64 / pieces as f64)
            .collect();
        let values = (0..pieces).map(|k| components.iter().map(|c| c[k]).collect()).collect();
        Self::new(breaks, values, dim)
    }

    pub fn constant(start: f64, end: f64, value: Vec<f64>) -> Self {
        let dim = value.len();
        MultiStep {
            breaks: vec![start, end],
            values: vec![value],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, &[f64])> + '_ {
        self.breaks
            .windows(2)
            .zip(&self.values)
            .map(|(w, v)| (w[0], w[1], v.as_slice()))
    }

    pub fn eval(&self, x: f64) -> &[f64] {
        &self.values[locate(&self.breaks, x)]
    }

    pub fn component(&self, i: usize) -> StepFunction {
        StepFunction {
            breaks: self.breaks.clone(),
            values: self.values.iter().map(|v| v[i]).collect(),
        }
    }

    /// Integral of each component.
    pub fn integrals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (a, b, v) in self.pieces() {
            for (o, x) in out.iter_mut().zip(v) {
                *o += (b - a) * x;
            }
        }
        out
    }

    /// Pointwise sum of components as a scalar step function.
    pub fn sum(&self) -> StepFunction {
        StepFunction {
            breaks: self.breaks.clone(),
            values: self.values.iter().map(|v| v.iter().sum()).collect(),
        }
    }

    /// Affine change of the independent variable onto `[start, end]`,
    /// with values multiplied by `scale`.
    pub fn rescaled(&self, start: f64, end: f64, scale: f64) -> Self {
        let a = self.start();
        let len = self.end() - a;
        let mut breaks: Vec<f64> = self
            .breaks
            .iter()
            .map(|&b| start + (end - start) * (b - a) / len)
            .collect();
        breaks[0] = start;
        *breaks.last_mut().unwrap() = end;
        let values = self
            .values
            .iter()
            .map(|v| v.iter().map(|x| x * scale).collect())
            .collect();
        MultiStep {
            breaks,
            values,
            dim: self.dim,
        }
    }

    pub fn refine(&self, extra: &[f64]) -> Self {
        let inner: Vec<f64> = extra
            .iter()
            .copied()
            .filter(|&x| x > self.start() && x < self.end())
            .collect();
        let breaks = merge_breaks(&self.breaks, &inner);
        let values = breaks
            .windows(2)
            .map(|w| self.eval(0.5 * (w[0] + w[1])).to_vec())
            .collect();
        MultiStep {
            breaks,
            values,
            dim: self.dim,
        }
    }

    pub fn simplify(&self) -> Self {
        let mut breaks = vec![self.breaks[0]];
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (_, b, v) in self.pieces() {
            if values.last().map(Vec::as_slice) == Some(v) {
                *breaks.last_mut().unwrap() = b;
            } else {
                values.push(v.to_vec());
                breaks.push(b);
            }
        }
        MultiStep {
            breaks,
            values,
            dim: self.dim,
        }
    }

    /// Sum over components of the L1 distance. Domains must agree.
    pub fn l1_distance(&self, other: &MultiStep) -> f64 {
        (0..self.dim.max(other.dim))
            .map(|i| {
                let a = if i < self.dim {
                    self.component(i)
                } else {
                    StepFunction::zero(self.start(), self.end())
                };
                let b = if i < other.dim {
                    other.component(i)
                } else {
                    StepFunction::zero(other.start(), other.end())
                };
                a.l1_distance(&b)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_is_right_continuous() {
        let f = StepFunction::new(vec![0.0, 0.5, 1.0], vec![0.0, 2.0]).unwrap();
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(0.4999), 0.0);
        assert_eq!(f.eval(0.5), 2.0);
        assert_eq!(f.eval(1.0), 2.0);
        assert_eq!(f.integral(), 1.0);
        assert_eq!(f.integral_over(0.25, 0.75), 0.5);
    }

    #[test]
    fn rectangles_superpose() {
        let f = StepFunction::from_rectangles(0.0, 2.0, &[(0.0, 1.0, 1.0), (0.5, 1.5, 2.0)]).unwrap();
        assert_eq!(f.breaks(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(f.values(), &[1.0, 3.0, 2.0, 0.0]);
        assert!(StepFunction::from_rectangles(0.0, 1.0, &[(0.5, 1.5, 1.0)]).is_err());
    }

    #[test]
    fn restrict_shifts_domain() {
        let f = StepFunction::new(vec![0.0, 1.5, 2.0], vec![1.0, 3.0]).unwrap();
        let g = f.restrict(1.0, 2.0, 1.0);
        assert_eq!(g.breaks(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.values(), &[1.0, 3.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(StepFunction::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 1.0], vec![]).is_err());
        assert!(MultiStep::uniform(0.0, 1.0, &[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn multistep_rescale_preserves_mass_under_inverse_scale() {
        let w = MultiStep::uniform(0.0, 1.0, &[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let a = w.rescaled(0.5, 2.5, 0.5);
        assert_eq!(a.breaks(), &[0.5, 1.5, 2.5]);
        assert_eq!(a.integrals(), vec![1.0, 1.0]);
        assert_eq!(a.sum().values(), &[1.0, 1.0]);
    }
}
