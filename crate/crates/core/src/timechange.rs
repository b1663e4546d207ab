//! Monotone piecewise-linear time changes with jumps.
//!
//! A time change is stored as the polyline of its completed graph: a list of
//! points with nondecreasing coordinates. Two consecutive points with equal
//! abscissa form a jump, equal ordinates a flat piece. The right inverse is then
//! the same polyline with coordinates swapped.
//!
//! Evaluation is right continuous in the interior. At the left end of the domain
//! the bottom of a jump is returned (so `A(0) = 0` when the graph starts at the
//! origin); at the right end, the top.

use crate::error::{Error, Result};
use crate::measure::Measure;
use crate::step::{merge_breaks, StepFunction, TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange {
    points: Vec<(f64, f64)>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
}

impl TimeChange {
    /// Builds from graph points, snapping near-equal coordinates and merging
    /// collinear runs.
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::NotMonotone("need at least two graph points".into()));
        }
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for (x, y) in points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NotMonotone("graph points must be finite".into()));
            }
            if let Some(&(px, py)) = pts.last() {
                if x < px && !close(x, px) || y < py && !close(y, py) {
                    return Err(Error::NotMonotone(format!("point ({x}, {y}) after ({px}, {py})")));
                }
                let x = if close(x, px) { px } else { x };
                let y = if close(y, py) { py } else { y };
                if x == px && y == py {
                    continue;
                }
                pts.push((x, y));
            } else {
                pts.push((x, y));
            }
        }
        if pts.len() < 2 {
            return Err(Error::NotMonotone("graph is a single point".into()));
        }
        // Merge collinear neighbours.
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
        for p in pts {
            if out.len() >= 2 {
                let (ax, ay) = out[out.len() - 2];
                let (bx, by) = out[out.len() - 1];
                let cross = (bx - ax) * (p.1 - by) - (by - ay) * (p.0 - bx);
                let scale = ((bx - ax).abs() + (by - ay).abs()) * ((p.0 - bx).abs() + (p.1 - by).abs());
                if cross.abs() <= 1e-14 * scale {
                    *out.last_mut().unwrap() = p;
                    continue;
                }
            }
            out.push(p);
        }
        if out.first().unwrap().0 == out.last().unwrap().0 {
            return Err(Error::NotMonotone("domain has zero length".into()));
        }
        Ok(TimeChange { points: out })
    }

    pub fn identity(start: f64, end: f64) -> Self {
        TimeChange {
            points: vec![(start, start), (end, end)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.points[0].0, self.points.last().unwrap().0)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.points[0].1, self.points.last().unwrap().1)
    }

    /// Index range `[lo, hi]` of points with abscissa `x`, or the sloped
    /// segment containing `x` as `Err(k)` (between points `k` and `k + 1`).
    fn find(&self, x: f64) -> std::result::Result<(usize, usize), usize> {
        let p = &self.points;
        let lo = p.partition_point(|q| q.0 < x && !close(q.0, x));
        if lo < p.len() && close(p[lo].0, x) {
            let mut hi = lo;
            while hi + 1 < p.len() && close(p[hi + 1].0, x) {
                hi += 1;
            }
            Ok((lo, hi))
        } else {
            Err(lo.saturating_sub(1).min(p.len() - 2))
        }
    }

    fn interp(&self, k: usize, x: f64) -> f64 {
        let (ax, ay) = self.points[k];
        let (bx, by) = self.points[k + 1];
        ay + (by - ay) * (x - ax) / (bx - ax)
    }

    /// Right-continuous value (bottom value at the left end of the domain).
    pub fn eval(&self, x: f64) -> f64 {
        let (a, _) = self.domain();
        if x <= a {
            return self.points[0].1;
        }
        match self.find(x) {
            Ok((_, hi)) => self.points[hi].1,
            Err(k) => self.interp(k, x),
        }
    }

    /// `A^-(x)`: bottom of the graph above `x`.
    pub fn left_limit(&self, x: f64) -> f64 {
        match self.find(x) {
            Ok((lo, _)) => self.points[lo].1,
            Err(k) => self.interp(k, x),
        }
    }

    /// `A^+(x)`: top of the graph above `x`.
    pub fn right_limit(&self, x: f64) -> f64 {
        match self.find(x) {
            Ok((_, hi)) => self.points[hi].1,
            Err(k) => self.interp(k, x),
        }
    }

    /// Jumps as `(x, bottom, top)`.
    pub fn jumps(&self) -> Vec<(f64, f64, f64)> {
        self.points
            .windows(2)
            .filter(|w| w[0].0 == w[1].0)
            .map(|w| (w[0].0, w[0].1, w[1].1))
            .collect()
    }

    /// Flat pieces as `(level, x_left, x_right)`.
    pub fn flats(&self) -> Vec<(f64, f64, f64)> {
        self.points
            .windows(2)
            .filter(|w| w[0].1 == w[1].1)
            .map(|w| (w[0].1, w[0].0, w[1].0))
            .collect()
    }

    /// `B(r) = inf { s : A(s) > r }`, obtained by swapping coordinates.
    pub fn right_inverse(&self) -> TimeChange {
        TimeChange {
            points: self.points.iter().map(|&(x, y)| (y, x)).collect(),
        }
    }

    /// Lebesgue-Stieltjes integral of `F` against `dA` over the closed
    /// interval `[s1, s2]`, atoms of `dA` included when their location lies
    /// in the interval.
    pub fn stieltjes_integral(&self, f: &StepFunction, s1: f64, s2: f64) -> f64 {
        let mut total = 0.0;
        for w in self.points.windows(2) {
            let ((ax, ay), (bx, by)) = (w[0], w[1]);
            if ax == bx {
                if ax >= s1 - TOL && ax <= s2 + TOL {
                    total += f.eval(ax) * (by - ay);
                }
                continue;
            }
            if ay == by {
                continue;
            }
            let lo = ax.max(s1);
            let hi = bx.min(s2);
            if hi <= lo {
                continue;
            }
            let slope = (by - ay) / (bx - ax);
            total += slope * f.integral_over(lo, hi);
        }
        total
    }

    /// `int_{[r1, r2]} F(B(r)) dr` where `B` is the right inverse.
    fn composed_integral(&self, f: &StepFunction, r1: f64, r2: f64) -> f64 {
        let mut total = 0.0;
        for w in self.points.windows(2) {
            // In inverse coordinates the abscissa is y.
            let ((sa, ra), (sb, rb)) = (w[0], w[1]);
            if ra == rb {
                continue;
            }
            let lo = ra.max(r1);
            let hi = rb.min(r2);
            if hi <= lo {
                continue;
            }
            if sa == sb {
                total += f.eval(sa) * (hi - lo);
                continue;
            }
            // B is linear here: s = sa + (r - ra) * k.
            let k = (sb - sa) / (rb - ra);
            let s_lo = sa + (lo - ra) * k;
            let s_hi = sa + (hi - ra) * k;
            total += f.integral_over(s_lo, s_hi) / k;
        }
        total
    }
}

/// Checks the range conditions under which the change-of-variables identity
/// holds, and returns `int_{[r1, r2]} F(B(r)) dr`.
///
/// `r1` may not lie strictly inside or at the top of a jump of `A`, and `r2`
/// may not lie inside or at the bottom of one.
pub fn pushforward_integral(f: &StepFunction, a: &TimeChange, r1: f64, r2: f64) -> Result<f64> {
    let (lo, hi) = a.range();
    if !(r1 < r2) || r1 < lo - TOL || r2 > hi + TOL {
        return Err(Error::Range(format!("need {lo} <= r1 < r2 <= {hi}, got [{r1}, {r2}]")));
    }
    for (x, bottom, top) in a.jumps() {
        if r1 > bottom && r1 <= top && !close(r1, bottom) {
            return Err(Error::Range(format!(
                "r1 = {r1} falls in the jump ({bottom}, {top}] at {x}"
            )));
        }
        if r2 >= bottom && r2 < top && !close(r2, top) {
            return Err(Error::Range(format!(
                "r2 = {r2} falls in the jump [{bottom}, {top}) at {x}"
            )));
        }
    }
    Ok(a.composed_integral(f, r1, r2))
}

/// `phi(r) = r + sum_i mu_i([0, r])` for measures on a common `[0, h]`.
pub fn build_phi(segments: &[Measure]) -> Result<TimeChange> {
    let h = segments.first().map_or(1.0, Measure::horizon);
    let mut grid = vec![0.0, h];
    for m in segments {
        grid = merge_breaks(&grid, m.density().breaks());
        let at: Vec<f64> = m.atoms().iter().map(|a| a.0).collect();
        grid = merge_breaks(&grid, &at);
    }
    let mass_at = |r: f64| -> f64 { segments.iter().map(|m| m.atom_at(r)).sum() };
    let mut points = vec![(0.0, 0.0)];
    let mut y = 0.0;
    for (k, w) in grid.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if k == 0 {
            let m = mass_at(a);
            if m > 0.0 {
                y += m;
                points.push((a, y));
            }
        }
        let mid = 0.5 * (a + b);
        let rate: f64 = 1.0 + segments.iter().map(|m| m.density().eval(mid)).sum::<f64>();
        y += rate * (b - a);
        points.push((b, y));
        let m = mass_at(b);
        if m > 0.0 {
            y += m;
            points.push((b, y));
        }
    }
    TimeChange::from_points(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_phi() -> TimeChange {
        let segs = vec![
            Measure::from_parts(1.0, &[], &[(0.5, 1.0)]).unwrap(),
            Measure::from_parts(1.0, &[], &[(0.5, 1.0)]).unwrap(),
        ];
        build_phi(&segs).unwrap()
    }

    #[test]
    fn phi_of_example() {
        let phi = example_phi();
        assert_eq!(phi.points(), &[(0.0, 0.0), (0.5, 0.5), (0.5, 2.5), (1.0, 3.0)]);
        assert_eq!(phi.eval(0.25), 0.25);
        assert_eq!(phi.eval(0.5), 2.5);
        assert_eq!(phi.left_limit(0.5), 0.5);
        assert_eq!(phi.eval(1.0), 3.0);
        assert_eq!(phi.jumps(), vec![(0.5, 0.5, 2.5)]);
    }

    #[test]
    fn phi_trivial_and_linear() {
        let zero = build_phi(&[Measure::zero(1.0)]).unwrap();
        assert_eq!(zero, TimeChange::identity(0.0, 1.0));
        let dens = build_phi(&[Measure::from_parts(1.5, &[(0.0, 1.5, 1.0)], &[]).unwrap()]).unwrap();
        assert_eq!(dens.points(), &[(0.0, 0.0), (1.5, 3.0)]);
        assert_eq!(dens.eval(0.75), 1.5);
    }

    #[test]
    fn inverse_of_example() {
        let phi = example_phi();
        let eta = phi.right_inverse();
        assert_eq!(eta.eval(0.3), 0.3);
        assert_eq!(eta.eval(1.0), 0.5);
        assert_eq!(eta.eval(2.5), 0.5);
        assert_eq!(eta.eval(2.75), 0.75);
        assert_eq!(eta.right_inverse(), phi);
        // Flat piece of eta starting at 1/2 collapses back to the jump of phi.
        assert_eq!(eta.flats(), vec![(0.5, 0.5, 2.5)]);
    }

    #[test]
    fn right_inverse_of_flat_start() {
        // A = 0 on [0, 1], then slope 1.
        let a = TimeChange::from_points(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)]).unwrap();
        let b = a.right_inverse();
        assert_eq!(b.eval(0.0), 0.0);
        assert_eq!(b.right_limit(0.0), 1.0);
        assert_eq!(b.eval(0.5), 1.5);
        assert_eq!(b.eval(1.0), 2.0);
    }

    #[test]
    fn pushforward_examples() {
        let id = TimeChange::identity(0.0, 1.0);
        let unit = StepFunction::constant(0.0, 1.0, 1.0);
        assert!((pushforward_integral(&unit, &id, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        // Whole range of phi: total increment of phi.
        let phi = example_phi();
        let v = pushforward_integral(&unit, &phi, 0.0, 3.0).unwrap();
        assert!((v - 3.0).abs() < 1e-14);
        assert!((phi.stieltjes_integral(&unit, 0.0, 1.0) - 3.0).abs() < 1e-14);
        // Indicator of the jump location picks up the jump mass.
        let ind = StepFunction::new(vec![0.0, 0.5, 1.0], vec![0.0, 1.0]).unwrap();
        let v = pushforward_integral(&ind, &phi, 0.0, 2.5).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
        assert!((phi.stieltjes_integral(&ind, 0.0, 0.5) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn pushforward_range_errors() {
        let phi = example_phi();
        let f = StepFunction::constant(0.0, 1.0, 1.0);
        for (r1, r2) in [(1.0, 0.5), (1.0, 3.0), (0.0, 1.0), (0.0, 0.5), (2.5, 3.0), (0.0, 3.5)] {
            assert!(
                matches!(pushforward_integral(&f, &phi, r1, r2), Err(Error::Range(_))),
                "[{r1}, {r2}]"
            );
        }
        assert!(pushforward_integral(&f, &phi, 0.0, 0.4).is_ok());
        assert!(pushforward_integral(&f, &phi, 0.5, 3.0).is_ok());
    }

    #[test]
    fn rejects_decreasing_graph() {
        let r = TimeChange::from_points(vec![(0.0, 0.0), (1.0, 1.0), (0.5, 2.0)]);
        assert!(matches!(r, Err(Error::NotMonotone(_))));
    }
}
