//! Measures, attached-control families and their admissibility rules.

use std::fmt;

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::step::{MultiStep, StepFunction, TOL};

/// Tolerance used to decide whether two atom positions coincide.
pub fn position_tol(scale: f64) -> f64 {
    1e-10 * scale.abs().max(1.0)
}

/// Nonnegative measure on `[0, T]`: a step density plus finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    horizon: f64,
    density: StepFunction,
    atoms: Vec<(f64, f64)>,
}

impl Measure {
    pub fn new(horizon: f64, density: StepFunction, atoms: Vec<(f64, f64)>) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Schema("measure horizon must be positive".into()));
        }
        let tol = position_tol(horizon);
        if (density.start()).abs() > tol || (density.end() - horizon).abs() > tol {
            return Err(Error::Schema(format!(
                "density must be defined on [0, {horizon}], got [{}, {}]",
                density.start(),
                density.end()
            )));
        }
        if density.min_value() < 0.0 {
            return Err(Error::Schema("density must be nonnegative".into()));
        }
        for w in atoms.windows(2) {
            if !(w[1].0 > w[0].0 + tol) {
                return Err(Error::Schema(format!(
                    "atom times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(t, m) in &atoms {
            if t < -tol || t > horizon + tol || !t.is_finite() {
                return Err(Error::Schema(format!("atom at {t} lies outside [0, {horizon}]")));
            }
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::Schema(format!("atom at {t} needs a positive mass, got {m}")));
            }
        }
        Ok(Measure {
            horizon,
            density,
            atoms,
        })
    }

    /// Builds from rectangles `(t0, t1, value)` and atoms `(t, mass)` in any order.
    /// Atoms with zero mass are dropped.
    pub fn from_parts(horizon: f64, rects: &[(f64, f64, f64)], atoms: &[(f64, f64)]) -> Result<Self> {
        let density = StepFunction::from_rectangles(0.0, horizon, rects)?;
        let mut atoms: Vec<(f64, f64)> = atoms.iter().copied().filter(|a| a.1 != 0.0).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::new(horizon, density, atoms)
    }

    pub fn zero(horizon: f64) -> Self {
        Measure {
            horizon,
            density: StepFunction::zero(0.0, horizon),
            atoms: Vec::new(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn density(&self) -> &StepFunction {
        &self.density
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn is_atomless(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `mu({t})`.
    pub fn atom_at(&self, t: f64) -> f64 {
        let tol = position_tol(self.horizon);
        self.atoms.iter().find(|a| (a.0 - t).abs() <= tol).map_or(0.0, |a| a.1)
    }

    /// Total mass.
    pub fn tv_norm(&self) -> f64 {
        self.density.integral() + self.atoms.iter().map(|a| a.1).sum::<f64>()
    }
}

/// `||mu||_TV`.
pub fn tv_norm(mu: &Measure) -> f64 {
    mu.tv_norm()
}

/// Attached controls `w^r`, one `N`-vector step function on `[0, 1]` per
/// stored position `r`. Missing positions mean `w^r = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttachedControlFamily {
    segments: usize,
    entries: Vec<(f64, MultiStep)>,
}

impl AttachedControlFamily {
    pub fn new(segments: usize) -> Self {
        AttachedControlFamily {
            segments,
            entries: Vec::new(),
        }
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Stores `w^r`, replacing any entry at the same position.
    pub fn insert(&mut self, r: f64, w: MultiStep) -> Result<()> {
        if w.dim() != self.segments {
            return Err(Error::DimensionMismatch(format!(
                "attached control at r = {r} has {} components, expected N = {}",
                w.dim(),
                self.segments
            )));
        }
        if w.start().abs() > TOL || (w.end() - 1.0).abs() > TOL {
            return Err(Error::Schema(format!(
                "attached control at r = {r} must live on [0, 1]"
            )));
        }
        if w.values().iter().flatten().any(|&v| v < 0.0) {
            return Err(Error::Schema(format!(
                "attached control at r = {r} must be nonnegative"
            )));
        }
        let tol = position_tol(r);
        match self.entries.iter_mut().find(|e| (e.0 - r).abs() <= tol) {
            Some(e) => e.1 = w,
            None => {
                self.entries.push((r, w));
                self.entries.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
        Ok(())
    }

    pub fn get(&self, r: f64) -> Option<&MultiStep> {
        let tol = position_tol(r);
        self.entries.iter().find(|e| (e.0 - r).abs() <= tol).map(|e| &e.1)
    }

    pub fn entries(&self) -> &[(f64, MultiStep)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `int w^r_i` for each `i`, zero when `r` is not stored.
    pub fn masses(&self, r: f64) -> Vec<f64> {
        self.get(r)
            .map_or_else(|| vec![0.0; self.segments], MultiStep::integrals)
    }
}

/// An impulsive control: measure plus attached controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulsiveControl {
    pub measure: Measure,
    pub family: AttachedControlFamily,
}

/// Where an atom sits relative to the delay grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AtomPlace {
    /// `t = i h` for `i` in `0..=N`.
    Boundary(usize),
    /// `t = r + (i-1) h` with `r` in `(0, h)`; `i` is 1-based.
    Interior { segment: usize, r: f64 },
}

pub fn atom_place(t: f64, sc: &Scenario) -> AtomPlace {
    let h = sc.delay;
    let tol = position_tol(sc.horizon());
    let k = (t / h).round();
    if (t - k * h).abs() <= tol && k >= 0.0 && k as usize <= sc.segments {
        return AtomPlace::Boundary(k as usize);
    }
    let i = ((t / h).floor() as usize).min(sc.segments - 1);
    AtomPlace::Interior {
        segment: i + 1,
        r: t - i as f64 * h,
    }
}

/// Which admissibility rule a violation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clause {
    /// Sum of the attached controls must be a.e. constant.
    ConstantSum,
    /// Interior positions: `int w^r_i = mu({r + (i-1) h})`.
    InteriorMass,
    /// Grid points: `int [w^h_i + w^0_{i+1}] = mu({i h})`.
    BoundaryMass,
    /// Malformed data (wrong horizon, family size, position range).
    Structure,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clause::ConstantSum => "(i) constant sum",
            Clause::InteriorMass => "(ii) interior mass",
            Clause::BoundaryMass => "(iii) boundary mass",
            Clause::Structure => "structure",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub clause: Clause,
    pub r: Option<f64>,
    /// 1-based segment index, or grid index `i` for boundary violations.
    pub segment: Option<usize>,
    pub residual: f64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, clause: Clause) -> bool {
        self.violations.iter().any(|v| v.clause == clause)
    }

    fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let text: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{}: {}", v.clause, v.message))
            .collect();
        Err(Error::InvalidControl(text.join("; ")))
    }
}

/// Checks the three admissibility rules of an impulsive control.
pub fn validate_impulsive_control(mu: &Measure, family: &AttachedControlFamily, sc: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let h = sc.delay;
    let big_n = sc.segments;
    let horizon = sc.horizon();
    let ptol = position_tol(horizon);
    let mtol = TOL * mu.tv_norm().max(1.0);
    let mut push = |clause, r, segment, residual, message: String| {
        report.violations.push(Violation {
            clause,
            r,
            segment,
            residual,
            message,
        })
    };

    if (mu.horizon() - horizon).abs() > ptol {
        push(
            Clause::Structure,
            None,
            None,
            (mu.horizon() - horizon).abs(),
            format!("measure lives on [0, {}] but T = {horizon}", mu.horizon()),
        );
    }
    if family.segments() != big_n {
        push(
            Clause::Structure,
            None,
            None,
            0.0,
            format!("family has {} components but N = {big_n}", family.segments()),
        );
        return report;
    }

    for (r, w) in family.entries() {
        if *r < -ptol || *r > h + ptol {
            push(
                Clause::Structure,
                Some(*r),
                None,
                0.0,
                format!("position r = {r} outside [0, {h}]"),
            );
        }
        let total: f64 = w.integrals().iter().sum();
        let dev = w
            .values()
            .iter()
            .map(|v| (v.iter().sum::<f64>() - total).abs())
            .fold(0.0, f64::max);
        if dev > mtol {
            push(
                Clause::ConstantSum,
                Some(*r),
                None,
                dev,
                format!("sum of w at r = {r} deviates from its mean {total} by {dev:e}"),
            );
        }
    }

    // Interior positions: from stored entries and from atoms.
    let mut interior: Vec<f64> = family
        .entries()
        .iter()
        .map(|e| e.0)
        .filter(|&r| r > ptol && r < h - ptol)
        .collect();
    for &(t, _) in mu.atoms() {
        if let AtomPlace::Interior { r, .. } = atom_place(t, sc) {
            if !interior.iter().any(|&q| (q - r).abs() <= ptol) {
                interior.push(r);
            }
        }
    }
    interior.sort_by(f64::total_cmp);
    for r in interior {
        let masses = family.masses(r);
        for (i, m) in masses.iter().enumerate() {
            let want = mu.atom_at(r + i as f64 * h);
            let res = (m - want).abs();
            if res > mtol {
                push(
                    Clause::InteriorMass,
                    Some(r),
                    Some(i + 1),
                    res,
                    format!("int w^r_{} = {m} at r = {r} but the atom mass is {want}", i + 1),
                );
            }
        }
    }

    let at_h = family.masses(h);
    let at_0 = family.masses(0.0);
    for i in 0..=big_n {
        let lhs = if i >= 1 { at_h[i - 1] } else { 0.0 } + if i < big_n { at_0[i] } else { 0.0 };
        let want = mu.atom_at(i as f64 * h);
        let res = (lhs - want).abs();
        if res > mtol {
            push(
                Clause::BoundaryMass,
                None,
                Some(i),
                res,
                format!(
                    "attached mass {lhs} at t = {} but the atom mass is {want}",
                    i as f64 * h
                ),
            );
        }
    }
    report
}

/// Fills in the constant-rate family for atoms that have no stored control.
///
/// Interior positions get `w^r_i = mu({r + (i-1) h})`. If neither `w^0` nor
/// `w^h` is stored, a grid atom at `(i-1) h` is carried by `w^0_i` and an atom
/// at `T` by `w^h_N`.
pub fn with_defaults(mu: &Measure, family: &AttachedControlFamily, sc: &Scenario) -> Result<AttachedControlFamily> {
    let mut out = family.clone();
    let h = sc.delay;
    let big_n = sc.segments;
    for &(t, _) in mu.atoms() {
        if let AtomPlace::Interior { r, .. } = atom_place(t, sc) {
            if out.get(r).is_none() {
                let masses: Vec<f64> = (0..big_n).map(|i| mu.atom_at(r + i as f64 * h)).collect();
                out.insert(r, MultiStep::constant(0.0, 1.0, masses))?;
            }
        }
    }
    if family.get(0.0).is_none() && family.get(h).is_none() {
        let start: Vec<f64> = (0..big_n).map(|i| mu.atom_at(i as f64 * h)).collect();
        if start.iter().any(|&m| m > 0.0) {
            out.insert(0.0, MultiStep::constant(0.0, 1.0, start))?;
        }
        let end = mu.atom_at(sc.horizon());
        if end > 0.0 {
            let mut v = vec![0.0; big_n];
            v[big_n - 1] = end;
            out.insert(h, MultiStep::constant(0.0, 1.0, v))?;
        }
    }
    Ok(out)
}

/// Splits `mu` into `N` measures on `[0, h]`, one per delay window. Grid
/// atoms are divided between neighbouring windows by the attached controls.
pub fn segment_measures(mu: &Measure, family: &AttachedControlFamily, sc: &Scenario) -> Result<Vec<Measure>> {
    validate_impulsive_control(mu, family, sc).into_result()?;
    let h = sc.delay;
    let at_0 = family.masses(0.0);
    let at_h = family.masses(h);
    (0..sc.segments)
        .map(|i| {
            let lo = i as f64 * h;
            let density = mu.density().restrict(lo, lo + h, lo);
            let mut atoms = Vec::new();
            if at_0[i] > 0.0 {
                atoms.push((0.0, at_0[i]));
            }
            for &(t, m) in mu.atoms() {
                if let AtomPlace::Interior { segment, r } = atom_place(t, sc) {
                    if segment == i + 1 {
                        atoms.push((r, m));
                    }
                }
            }
            if at_h[i] > 0.0 {
                atoms.push((h, at_h[i]));
            }
            Measure::new(h, density, atoms)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Target;

    fn scenario(segments: usize) -> Scenario {
        Scenario::new(
            1,
            segments,
            1.0,
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
    fn tv_norm_cases() {
        let (mu, _) = example1();
        assert_eq!(tv_norm(&mu), 2.0);
        assert_eq!(tv_norm(&Measure::zero(2.0)), 0.0);
        let d = Measure::from_parts(2.0, &[(0.0, 2.0, 0.5)], &[]).unwrap();
        assert_eq!(tv_norm(&d), 1.0);
    }

    #[test]
    fn example_family_is_admissible() {
        let sc = scenario(2);
        let (mu, fam) = example1();
        assert!(validate_impulsive_control(&mu, &fam, &sc).is_valid());
    }

    #[test]
    fn missing_family_violates_interior_rule() {
        let sc = scenario(2);
        let (mu, _) = example1();
        let rep = validate_impulsive_control(&mu, &AttachedControlFamily::new(2), &sc);
        assert!(rep.has(Clause::InteriorMass));
        assert!(!rep.has(Clause::ConstantSum));
    }

    #[test]
    fn scaled_component_breaks_sum_and_mass() {
        let sc = scenario(2);
        let (mu, _) = example1();
        let mut fam = AttachedControlFamily::new(2);
        fam.insert(
            0.5,
            MultiStep::uniform(0.0, 1.0, &[vec![0.0, 4.0], vec![2.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let rep = validate_impulsive_control(&mu, &fam, &sc);
        assert!(rep.has(Clause::ConstantSum));
        assert!(rep.has(Clause::InteriorMass));
        let bad = rep
            .violations
            .iter()
            .find(|v| v.clause == Clause::InteriorMass)
            .unwrap();
        assert_eq!(bad.segment, Some(1));
        assert!((bad.residual - 1.0).abs() < 1e-15);
    }

    #[test]
    fn segment_split_of_example() {
        let sc = scenario(2);
        let (mu, fam) = example1();
        let segs = segment_measures(&mu, &fam, &sc).unwrap();
        assert_eq!(segs[0].atoms(), &[(0.5, 1.0)]);
        assert_eq!(segs[1].atoms(), &[(0.5, 1.0)]);
    }

    #[test]
    fn boundary_atom_split() {
        let sc = scenario(2);
        let mu = Measure::from_parts(2.0, &[], &[(1.0, 1.0)]).unwrap();
        let mut fam = AttachedControlFamily::new(2);
        fam.insert(1.0, MultiStep::constant(0.0, 1.0, vec![0.3, 0.0])).unwrap();
        fam.insert(0.0, MultiStep::constant(0.0, 1.0, vec![0.0, 0.7])).unwrap();
        let segs = segment_measures(&mu, &fam, &sc).unwrap();
        assert_eq!(segs[0].atom_at(1.0), 0.3);
        assert_eq!(segs[1].atom_at(0.0), 0.7);
        let total: f64 = segs.iter().map(Measure::tv_norm).sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn atomless_segments_are_shifted_restrictions() {
        let sc = scenario(2);
        let mu = Measure::from_parts(2.0, &[(0.5, 1.5, 2.0)], &[]).unwrap();
        let segs = segment_measures(&mu, &AttachedControlFamily::new(2), &sc).unwrap();
        assert_eq!(segs[0].density().breaks(), &[0.0, 0.5, 1.0]);
        assert_eq!(segs[0].density().values(), &[0.0, 2.0]);
        assert_eq!(segs[1].density().values(), &[2.0, 0.0]);
    }

    #[test]
    fn defaults_cover_every_atom() {
        let sc = scenario(2);
        let mu = Measure::from_parts(2.0, &[], &[(0.0, 0.4), (0.5, 1.0), (1.0, 0.2), (2.0, 0.1)]).unwrap();
        let fam = with_defaults(&mu, &AttachedControlFamily::new(2), &sc).unwrap();
        assert!(validate_impulsive_control(&mu, &fam, &sc).is_valid());
        assert_eq!(fam.masses(0.0), vec![0.4, 0.2]);
        assert_eq!(fam.masses(1.0), vec![0.0, 0.1]);
    }
}
