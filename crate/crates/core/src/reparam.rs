//! The correspondence between impulsive controls `(mu, {w^r})` and
//! reparameterized controls `alpha` on `[0, S]`.
//!
//! In the reparameterized clock `s`, every segment `i` runs
//! `y_i' = (1 - sum alpha) f(y_i, y_{i-1}) + alpha_i g(y_i, y_{i-1})`. Original
//! time within a segment is `psi(s) = int_0^s (1 - sum alpha)`; intervals where
//! `sum alpha = 1` are jumps.

use crate::error::{Error, Result};
use crate::measure::{position_tol, segment_measures, AttachedControlFamily, Measure};
use crate::scenario::Scenario;
use crate::step::{merge_breaks, MultiStep, StepFunction, TOL};
use crate::timechange::{build_phi, TimeChange};

/// Slack below which `1 - sum alpha` counts as zero.
pub const SATURATION_TOL: f64 = 1e-12;

/// Piecewise-constant `alpha_1..alpha_N` on `[0, S]` with shared breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamControls {
    alpha: MultiStep,
}

impl ReparamControls {
    /// Wraps `alpha` (one component per segment, domain `[0, S]`) and checks
    /// the simplex and clock constraints against the delay `h`.
    pub fn new(alpha: MultiStep, h: f64) -> Result<Self> {
        let rc = ReparamControls { alpha };
        rc.validate(h)?;
        Ok(rc)
    }

    /// Wraps without checking the clock identity.
    pub fn new_unchecked(alpha: MultiStep) -> Self {
        ReparamControls { alpha }
    }

    /// `alpha = 0` on `[0, h]`.
    pub fn zero(h: f64, segments: usize) -> Self {
        ReparamControls {
            alpha: MultiStep::constant(0.0, h, vec![0.0; segments]),
        }
    }

    pub fn validate(&self, h: f64) -> Result<()> {
        if self.alpha.start() != 0.0 {
            return Err(Error::InvalidControl("reparameterized clock must start at 0".into()));
        }
        for (a, _, v) in self.alpha.pieces() {
            if v.iter().any(|&x| x < -TOL) {
                return Err(Error::InvalidControl(format!("negative alpha on piece at s = {a}")));
            }
            if v.iter().sum::<f64>() > 1.0 + 1e-10 {
                return Err(Error::InvalidControl(format!(
                    "sum of alpha exceeds 1 on piece at s = {a}"
                )));
            }
        }
        let clock = self.clock();
        if (clock - h).abs() > 1e-10 * h.max(1.0) {
            return Err(Error::InvalidControl(format!("clock integral is {clock} but h = {h}")));
        }
        Ok(())
    }

    pub fn alpha(&self) -> &MultiStep {
        &self.alpha
    }

    pub fn segments(&self) -> usize {
        self.alpha.dim()
    }

    /// `S`.
    pub fn horizon(&self) -> f64 {
        self.alpha.end()
    }

    pub fn breaks(&self) -> &[f64] {
        self.alpha.breaks()
    }

    /// `int_0^S (1 - sum alpha)`.
    pub fn clock(&self) -> f64 {
        self.alpha
            .pieces()
            .map(|(a, b, v)| (b - a) * (1.0 - v.iter().sum::<f64>()))
            .sum()
    }

    /// `sum_i int alpha_i`, the total variation of the associated measure.
    pub fn total_mass(&self) -> f64 {
        self.alpha.integrals().iter().sum()
    }

    /// Clock speed `1 - sum alpha` on each piece, with saturated pieces set to 0.
    pub fn speeds(&self) -> Vec<f64> {
        self.alpha
            .values()
            .iter()
            .map(|v| {
                let c = 1.0 - v.iter().sum::<f64>();
                if c <= SATURATION_TOL {
                    0.0
                } else {
                    c
                }
            })
            .collect()
    }

    /// Cumulative clock values at the breakpoints. The last value is snapped
    /// to `h` when it agrees to rounding.
    pub fn psi_values(&self, h: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut acc = 0.0;
        for ((a, b, _), c) in self.alpha.pieces().zip(self.speeds()) {
            acc += c * (b - a);
            out.push(acc);
        }
        let last = out.last_mut().unwrap();
        if (*last - h).abs() <= 1e-9 * h.max(1.0) {
            *last = h;
        }
        out
    }

    /// The time change `psi(s) = int_0^s (1 - sum alpha)`.
    pub fn psi(&self, h: f64) -> Result<TimeChange> {
        let pts = self.breaks().iter().copied().zip(self.psi_values(h)).collect();
        TimeChange::from_points(pts)
    }
}

/// Maps an impulsive control to reparameterized controls. Off jumps
/// `alpha_i = u_i / (1 + sum_j u_j)` (with `u_i` the density of segment `i`);
/// on the jump interval of position `r` the attached control `w^r` is
/// stretched over the interval.
pub fn to_reparam(mu: &Measure, family: &AttachedControlFamily, sc: &Scenario) -> Result<ReparamControls> {
    let segs = segment_measures(mu, family, sc)?;
    let phi = build_phi(&segs)?;
    let big_n = sc.segments;
    let h = sc.delay;

    let mut grid = vec![0.0, h];
    for m in &segs {
        grid = merge_breaks(&grid, m.density().breaks());
        let at: Vec<f64> = m.atoms().iter().map(|a| a.0).collect();
        grid = merge_breaks(&grid, &at);
    }

    let mut breaks = vec![0.0];
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut push_piece = |end: f64, v: Vec<f64>, breaks: &mut Vec<f64>| {
        if end > *breaks.last().unwrap() {
            breaks.push(end);
            values.push(v);
        }
    };
    let jump_at = |r: f64, breaks: &mut Vec<f64>, push: &mut dyn FnMut(f64, Vec<f64>, &mut Vec<f64>)| -> Result<()> {
        let lo = phi.left_limit(r);
        let hi = phi.right_limit(r);
        if hi <= lo {
            return Ok(());
        }
        let w = family
            .get(r)
            .ok_or_else(|| Error::InvalidControl(format!("no attached control stored for the jump at r = {r}")))?;
        let stretched = w.rescaled(lo, hi, 1.0 / (hi - lo));
        for (_, b, v) in stretched.pieces() {
            push(b, v.to_vec(), breaks);
        }
        if let Some(last) = breaks.last_mut() {
            *last = hi;
        }
        Ok(())
    };

    jump_at(0.0, &mut breaks, &mut push_piece)?;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let u: Vec<f64> = segs.iter().map(|m| m.density().eval(mid)).collect();
        let denom = 1.0 + u.iter().sum::<f64>();
        let alpha = u.iter().map(|x| x / denom).collect();
        push_piece(phi.left_limit(b), alpha, &mut breaks);
        jump_at(b, &mut breaks, &mut push_piece)?;
    }
    if values.is_empty() {
        return Ok(ReparamControls::zero(h, big_n));
    }
    let alpha = MultiStep::new(breaks, values, big_n)?;
    Ok(ReparamControls { alpha })
}

/// Maps reparameterized controls back to an impulsive control. Every maximal
/// run of pieces with `sum alpha = 1` becomes a jump at the clock value `r` of
/// the run, with atoms at `r + (i-1) h` of mass `int alpha_i` over the run.
pub fn from_reparam(rc: &ReparamControls, sc: &Scenario) -> Result<(Measure, AttachedControlFamily)> {
    let h = sc.delay;
    let big_n = sc.segments;
    if rc.segments() != big_n {
        return Err(Error::DimensionMismatch(format!(
            "controls have {} components but N = {big_n}",
            rc.segments()
        )));
    }
    rc.validate(h)?;
    let horizon = sc.horizon();
    let psi = rc.psi_values(h);
    let speeds = rc.speeds();
    let breaks = rc.breaks();
    let vals = rc.alpha().values();
    let pieces = vals.len();

    let mut family = AttachedControlFamily::new(big_n);
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    let mut add_atom = |t: f64, m: f64| {
        let tol = position_tol(horizon);
        match atoms.iter_mut().find(|a| (a.0 - t).abs() <= tol) {
            Some(a) => a.1 += m,
            None => atoms.push((t, m)),
        }
    };
    // Per-segment density pieces (t0, t1, value).
    let mut dens: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); big_n];

    let mut k = 0;
    while k < pieces {
        if speeds[k] == 0.0 {
            let start = k;
            while k < pieces && speeds[k] == 0.0 {
                k += 1;
            }
            let (sa, sb) = (breaks[start], breaks[k]);
            let len = sb - sa;
            let mut r = psi[start];
            if r.abs() <= 1e-12 * h.max(1.0) {
                r = 0.0;
            } else if (r - h).abs() <= 1e-12 * h.max(1.0) {
                r = h;
            }
            let w_breaks: Vec<f64> = (start..=k).map(|j| ((breaks[j] - sa) / len).clamp(0.0, 1.0)).collect();
            let w_vals: Vec<Vec<f64>> = (start..k).map(|j| vals[j].iter().map(|a| a * len).collect()).collect();
            let w = MultiStep::new(w_breaks, w_vals, big_n)?;
            for (i, m) in w.integrals().iter().enumerate() {
                if *m > 0.0 {
                    add_atom(r + i as f64 * h, *m);
                }
            }
            family.insert(r, w)?;
        } else {
            let (ra, rb) = (psi[k], psi[k + 1]);
            if rb > ra {
                for (i, d) in dens.iter_mut().enumerate() {
                    let off = i as f64 * h;
                    d.push((off + ra, off + rb, vals[k][i] / speeds[k]));
                }
            }
            k += 1;
        }
    }

    let mut t_breaks = vec![0.0];
    let mut t_vals = Vec::new();
    for (i, d) in dens.iter().enumerate() {
        for (j, &(_, b, v)) in d.iter().enumerate() {
            let end = if j + 1 == d.len() { (i + 1) as f64 * h } else { b };
            if end > *t_breaks.last().unwrap() {
                t_breaks.push(end);
                t_vals.push(v);
            }
        }
    }
    if let Some(last) = t_breaks.last_mut() {
        *last = horizon;
    }
    let density = StepFunction::new(t_breaks, t_vals)?.simplify();
    atoms.retain(|a| a.1 > 0.0);
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    for a in atoms.iter_mut() {
        a.0 = a.0.clamp(0.0, horizon);
    }
    Ok((Measure::new(horizon, density, atoms)?, family))
}

/// Distance between an impulsive control and its image under
/// `from_reparam(to_reparam(.))`: total-variation difference, atom-mass
/// deviations, L1 density distance and L1 attached-control distance.
pub fn roundtrip_residual(mu: &Measure, family: &AttachedControlFamily, sc: &Scenario) -> Result<f64> {
    let rc = to_reparam(mu, family, sc)?;
    let (mu2, fam2) = from_reparam(&rc, sc)?;
    Ok(control_distance(mu, family, &mu2, &fam2))
}

/// The residual metric used by [`roundtrip_residual`].
pub fn control_distance(mu: &Measure, fam: &AttachedControlFamily, mu2: &Measure, fam2: &AttachedControlFamily) -> f64 {
    let mut res = (mu.tv_norm() - mu2.tv_norm()).abs();
    let mut times: Vec<f64> = mu.atoms().iter().chain(mu2.atoms()).map(|a| a.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= position_tol(mu.horizon()));
    for t in times {
        res += (mu.atom_at(t) - mu2.atom_at(t)).abs();
    }
    res += mu.density().l1_distance(mu2.density());
    let mut positions: Vec<f64> = fam.entries().iter().chain(fam2.entries()).map(|e| e.0).collect();
    positions.sort_by(f64::total_cmp);
    positions.dedup_by(|a, b| (*a - *b).abs() <= position_tol(*a));
    let zero = MultiStep::constant(0.0, 1.0, vec![0.0; fam.segments()]);
    for r in positions {
        let a = fam.get(r).unwrap_or(&zero);
        let b = fam2.get(r).unwrap_or(&zero);
        res += a.l1_distance(b);
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::validate_impulsive_control;
    use crate::scenario::Target;

    fn scenario(segments: usize, h: f64) -> Scenario {
        Scenario::new(
            1,
            segments,
            h,
            vec![1.0],
            vec![1.0],
            &["0"],
            &["x1[0]*x2[0]"],
            "-x1[0]",
            Target::Free,
            10.0,
        )
        .unwrap()
    }

    fn example1() -> (Measure, AttachedControlFamily) {
        let mu = Measure::from_parts(2.0, &[], &[(0.5, 1.0), (1.5, 1.0)]).unwrap();
        let mut fam = AttachedControlFamily::new(2);
        fam.insert(
            0.5,
            MultiStep::uniform(0.0, 1.0, &[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap(),
        )
        .unwrap();
        (mu, fam)
    }

    #[test]
    fn example_controls() {
        let sc = scenario(2, 1.0);
        let (mu, fam) = example1();
        let rc = to_reparam(&mu, &fam, &sc).unwrap();
        assert_eq!(rc.horizon(), 3.0);
        assert_eq!(rc.breaks(), &[0.0, 0.5, 1.5, 2.5, 3.0]);
        assert_eq!(
            rc.alpha().values(),
            &[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0]]
        );
        assert_eq!(rc.total_mass(), 2.0);
        assert_eq!(rc.clock(), 1.0);
    }

    #[test]
    fn example_inverse() {
        let sc = scenario(2, 1.0);
        let (mu, fam) = example1();
        let rc = to_reparam(&mu, &fam, &sc).unwrap();
        let (mu2, fam2) = from_reparam(&rc, &sc).unwrap();
        assert_eq!(mu2.atoms(), &[(0.5, 1.0), (1.5, 1.0)]);
        assert!(mu2.density().is_zero());
        assert!(validate_impulsive_control(&mu2, &fam2, &sc).is_valid());
        assert!(control_distance(&mu, &fam, &mu2, &fam2) <= 1e-10);
    }

    #[test]
    fn zero_control() {
        let sc = scenario(2, 1.0);
        let rc = to_reparam(&Measure::zero(2.0), &AttachedControlFamily::new(2), &sc).unwrap();
        assert_eq!(rc.horizon(), 1.0);
        assert_eq!(rc.total_mass(), 0.0);
        let (mu, fam) = from_reparam(&rc, &sc).unwrap();
        assert_eq!(mu.tv_norm(), 0.0);
        assert!(fam.is_empty());
    }

    #[test]
    fn density_ratio() {
        let sc = scenario(2, 1.0);
        let mu = Measure::from_parts(2.0, &[(0.0, 1.0, 1.0), (1.0, 2.0, 3.0)], &[]).unwrap();
        let rc = to_reparam(&mu, &AttachedControlFamily::new(2), &sc).unwrap();
        // u = (1, 3): alpha = (1/5, 3/5), S = 1 + 4.
        assert_eq!(rc.horizon(), 5.0);
        assert_eq!(rc.alpha().values(), &[vec![0.2, 0.6]]);
    }

    #[test]
    fn half_alpha_gives_unit_density() {
        let sc = scenario(1, 1.5);
        let rc = ReparamControls::new(MultiStep::constant(0.0, 3.0, vec![0.5]), 1.5).unwrap();
        let (mu, fam) = from_reparam(&rc, &sc).unwrap();
        assert!(fam.is_empty());
        assert!(mu.atoms().is_empty());
        assert_eq!(mu.density().values(), &[1.0]);
        assert_eq!(mu.density().breaks(), &[0.0, 1.5]);
    }

    #[test]
    fn boundary_atoms_merge() {
        let sc = scenario(2, 1.0);
        let mu = Measure::from_parts(2.0, &[], &[(0.0, 0.5), (1.0, 1.0), (2.0, 0.25)]).unwrap();
        let mut fam = AttachedControlFamily::new(2);
        fam.insert(1.0, MultiStep::constant(0.0, 1.0, vec![0.3, 0.25])).unwrap();
        fam.insert(0.0, MultiStep::constant(0.0, 1.0, vec![0.5, 0.7])).unwrap();
        assert!(validate_impulsive_control(&mu, &fam, &sc).is_valid());
        let rc = to_reparam(&mu, &fam, &sc).unwrap();
        assert!((rc.total_mass() - mu.tv_norm()).abs() < 1e-14);
        let (mu2, fam2) = from_reparam(&rc, &sc).unwrap();
        assert!(validate_impulsive_control(&mu2, &fam2, &sc).is_valid());
        assert!(control_distance(&mu, &fam, &mu2, &fam2) <= 1e-12);
    }

    #[test]
    fn psi_matches_inverse_of_phi() {
        let sc = scenario(2, 1.0);
        let mu = Measure::from_parts(2.0, &[(0.2, 0.7, 1.5), (1.1, 1.3, 0.5)], &[(0.5, 1.0), (1.25, 0.5)]).unwrap();
        let fam = crate::measure::with_defaults(&mu, &AttachedControlFamily::new(2), &sc).unwrap();
        let rc = to_reparam(&mu, &fam, &sc).unwrap();
        let psi = rc.psi(1.0).unwrap();
        let phi = build_phi(&segment_measures(&mu, &fam, &sc).unwrap()).unwrap();
        let eta = phi.right_inverse();
        assert_eq!(psi.points().len(), eta.points().len());
        for (a, b) in psi.points().iter().zip(eta.points()) {
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }
}
