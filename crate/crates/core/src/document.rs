//! Scenario and control documents (TOML).
//!
//! ```toml
//! [system]
//! n = 1
//! N = 2
//! h = 1.0
//! x0 = [1.0]
//! xi0 = [1.0]
//!
//! [dynamics]
//! f = ["0"]
//! g = ["x1[0]*x2[0]"]
//!
//! [cost]
//! psi = "-x1[0]"
//!
//! [constraints]
//! K = 2.0
//! target = "free"
//!
//! [control]
//! atoms = [[0.5, 1.0], [1.5, 1.0]]
//! attached = { "0.5" = [[0, 2], [2, 0]] }
//!
//! [families.tilde]
//! attached = { "0.5" = [[2, 0], [0, 2]] }
//! ```
//!
//! `T` may be given in `[system]` and must equal `N h`. Targets are `"free"`
//! or a table `{ type = "point", point = [..] }`, `{ type = "box", lo = [..],
//! hi = [..] }`, `{ type = "ball", center = [..], radius = .. }`. An attached
//! control is a list of `N` step lists on a uniform grid of `[0, 1]`, or
//! `{ breaks = [..], w = [[..], ..] }` with one value list per component.
//! Atoms without an attached control get the constant-rate default.
//! Named `[families.*]` tables override fields of `[control]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measure::{with_defaults, AttachedControlFamily, Measure};
use crate::scenario::{Scenario, Target};
use crate::step::MultiStep;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    system: RawSystem,
    dynamics: RawDynamics,
    cost: Option<RawCost>,
    constraints: Option<RawConstraints>,
    control: Option<RawControl>,
    families: Option<BTreeMap<String, RawControl>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n: usize,
    #[serde(rename = "N")]
    segments: usize,
    h: f64,
    #[serde(rename = "T")]
    horizon: Option<f64>,
    x0: Vec<f64>,
    xi0: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    f: Vec<String>,
    g: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    psi: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraints {
    #[serde(rename = "K")]
    budget: Option<f64>,
    target: Option<RawTarget>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawTarget {
    Name(String),
    Table(TargetTable),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetTable {
    #[serde(rename = "type")]
    kind: String,
    point: Option<Vec<f64>>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
    center: Option<Vec<f64>>,
    radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    density: Option<Vec<[f64; 3]>>,
    atoms: Option<Vec<[f64; 2]>>,
    attached: Option<BTreeMap<String, RawAttached>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawAttached {
    Steps(Vec<Vec<f64>>),
    Explicit { breaks: Vec<f64>, w: Vec<Vec<f64>> },
}

/// A control as read from a document.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpec {
    pub measure: Measure,
    pub family: AttachedControlFamily,
}

/// A parsed scenario document.
#[derive(Debug, Clone)]
pub struct ScenarioDoc {
    pub scenario: Scenario,
    control: Option<RawControl>,
    families: BTreeMap<String, RawControl>,
}

fn toml_error(e: toml::de::Error) -> Error {
    Error::Schema(e.to_string().trim().to_string())
}

fn parse_target(raw: Option<RawTarget>) -> Result<Target> {
    let need = |v: Option<Vec<f64>>, field: &str, kind: &str| {
        v.ok_or_else(|| Error::Schema(format!("target {kind} needs `{field}`")))
    };
    match raw {
        None => Ok(Target::Free),
        Some(RawTarget::Name(s)) if s == "free" => Ok(Target::Free),
        Some(RawTarget::Name(s)) => Err(Error::Schema(format!(
            "target `{s}` needs parameters; use a table with `type`"
        ))),
        Some(RawTarget::Table(t)) => match t.kind.as_str() {
            "free" => Ok(Target::Free),
            "point" => Ok(Target::Point(need(t.point, "point", "point")?)),
            "box" => Ok(Target::Box {
                lo: need(t.lo, "lo", "box")?,
                hi: need(t.hi, "hi", "box")?,
            }),
            "ball" => Ok(Target::Ball {
                center: need(t.center, "center", "ball")?,
                radius: t
                    .radius
                    .ok_or_else(|| Error::Schema("target ball needs `radius`".into()))?,
            }),
            other => Err(Error::Schema(format!("unknown target type `{other}`"))),
        },
    }
}

/// Parses a scenario document.
pub fn load_scenario(text: &str) -> Result<ScenarioDoc> {
    let raw: RawDoc = toml::from_str(text).map_err(toml_error)?;
    let sys = raw.system;
    if let Some(t) = sys.horizon {
        let expected = sys.segments as f64 * sys.h;
        if (t - expected).abs() > 1e-12 * expected.abs().max(1.0) {
            return Err(Error::DelayMismatch { horizon: t, expected });
        }
    }
    let psi = raw.cost.map_or_else(|| "0".to_string(), |c| c.psi);
    let (budget, target) = match raw.constraints {
        Some(c) => (c.budget.unwrap_or(f64::INFINITY), parse_target(c.target)?),
        None => (f64::INFINITY, Target::Free),
    };
    let scenario = Scenario::new(
        sys.n,
        sys.segments,
        sys.h,
        sys.x0,
        sys.xi0,
        &raw.dynamics.f,
        &raw.dynamics.g,
        &psi,
        target,
        budget,
    )?;
    let doc = ScenarioDoc {
        scenario,
        control: raw.control,
        families: raw.families.unwrap_or_default(),
    };
    // Surface control errors at load time.
    if doc.control.is_some() {
        doc.control(None)?;
    }
    for name in doc.families.keys() {
        doc.control(Some(name))?;
    }
    Ok(doc)
}

pub fn read_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioDoc> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
    load_scenario(&text)
}

impl ScenarioDoc {
    pub fn has_control(&self) -> bool {
        self.control.is_some()
    }

    pub fn family_names(&self) -> Vec<String> {
        self.families.keys().cloned().collect()
    }

    /// The `[control]` section, with the fields of a named family replacing
    /// those of the base section. Without a `[control]` section the control
    /// is zero.
    pub fn control(&self, family: Option<&str>) -> Result<ControlSpec> {
        let mut raw = self.control.clone().unwrap_or_default();
        if let Some(name) = family {
            let over = self
                .families
                .get(name)
                .ok_or_else(|| Error::Schema(format!("no family named `{name}` in the document")))?;
            if over.density.is_some() {
                raw.density = over.density.clone();
            }
            if over.atoms.is_some() {
                raw.atoms = over.atoms.clone();
            }
            if over.attached.is_some() {
                raw.attached = over.attached.clone();
            }
        }
        build_control(&raw, &self.scenario)
    }
}

fn build_control(raw: &RawControl, sc: &Scenario) -> Result<ControlSpec> {
    let horizon = sc.horizon();
    let rects: Vec<(f64, f64, f64)> = raw.density.iter().flatten().map(|r| (r[0], r[1], r[2])).collect();
    let atoms: Vec<(f64, f64)> = raw.atoms.iter().flatten().map(|a| (a[0], a[1])).collect();
    let measure = Measure::from_parts(horizon, &rects, &atoms)?;
    let mut family = AttachedControlFamily::new(sc.segments);
    for (key, w) in raw.attached.iter().flatten() {
        let r: f64 = key
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("attached key `{key}` is not a number")))?;
        if !(0.0..=sc.delay).contains(&r) {
            return Err(Error::Schema(format!("attached position {r} lies outside [0, h]")));
        }
        let steps = match w {
            RawAttached::Steps(comps) => {
                if comps.len() != sc.segments {
                    return Err(Error::DimensionMismatch(format!(
                        "attached control at {key} has {} components but N = {}",
                        comps.len(),
                        sc.segments
                    )));
                }
                MultiStep::uniform(0.0, 1.0, comps)?
            }
            RawAttached::Explicit { breaks, w } => {
                if w.len() != sc.segments {
                    return Err(Error::DimensionMismatch(format!(
                        "attached control at {key} has {} components but N = {}",
                        w.len(),
                        sc.segments
                    )));
                }
                let pieces = breaks.len().saturating_sub(1);
                if w.iter().any(|c| c.len() != pieces) {
                    return Err(Error::DimensionMismatch(format!(
                        "attached control at {key} needs {pieces} values per component"
                    )));
                }
                let values = (0..pieces).map(|k| w.iter().map(|c| c[k]).collect()).collect();
                MultiStep::new(breaks.clone(), values, sc.segments)?
            }
        };
        family.insert(r, steps)?;
    }
    let family = with_defaults(&measure, &family, sc)?;
    Ok(ControlSpec { measure, family })
}

/// Parses a control document: a `[control]` section checked against `sc`.
pub fn parse_control(text: &str, sc: &Scenario) -> Result<ControlSpec> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct ControlDoc {
        control: RawControl,
    }
    let doc: ControlDoc = toml::from_str(text).map_err(toml_error)?;
    build_control(&doc.control, sc)
}

fn num(v: f64) -> String {
    // Shortest representation that reads back to the same double.
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", items.join(", "))
}

/// Writes a control document. `header` lines are emitted as comments.
pub fn write_control(mu: &Measure, family: &AttachedControlFamily, header: &[String]) -> String {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("[control]\n");
    let rects: Vec<String> = mu
        .density()
        .pieces()
        .filter(|p| p.2 != 0.0)
        .map(|(a, b, v)| list(&[a, b, v]))
        .collect();
    let _ = writeln!(out, "density = [{}]", rects.join(", "));
    let atoms: Vec<String> = mu.atoms().iter().map(|&(t, m)| list(&[t, m])).collect();
    let _ = writeln!(out, "atoms = [{}]", atoms.join(", "));
    out.push_str("\n[control.attached]\n");
    for (r, w) in family.entries() {
        let comps: Vec<String> = (0..w.dim())
            .map(|i| list(&w.values().iter().map(|v| v[i]).collect::<Vec<_>>()))
            .collect();
        let _ = writeln!(
            out,
            "\"{}\" = {{ breaks = {}, w = [{}] }}",
            num(*r),
            list(w.breaks()),
            comps.join(", ")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[system]
n = 1
N = 2
h = 1.0
T = 2.0
x0 = [1.0]
xi0 = [1.0]

[dynamics]
f = ["0"]
g = ["x1[0]*x2[0]"]

[cost]
psi = "-x1[0]"

[constraints]
K = 2
target = "free"

[control]
atoms = [[0.5, 1], [1.5, 1]]
attached = { "0.5" = [[0, 2], [2, 0]] }

[families.tilde]
attached = { "0.5" = [[2, 0], [0, 2]] }
"#;

    #[test]
    fn loads_example() {
        let doc = load_scenario(EXAMPLE).unwrap();
        assert_eq!(doc.scenario.segments, 2);
        assert_eq!(doc.scenario.budget, 2.0);
        let c = doc.control(None).unwrap();
        assert_eq!(c.measure.atoms(), &[(0.5, 1.0), (1.5, 1.0)]);
        assert_eq!(c.family.get(0.5).unwrap().values()[0], vec![0.0, 2.0]);
        let t = doc.control(Some("tilde")).unwrap();
        assert_eq!(t.family.get(0.5).unwrap().values()[0], vec![2.0, 0.0]);
        assert_eq!(doc.family_names(), vec!["tilde".to_string()]);
    }

    #[test]
    fn delay_mismatch() {
        let text = EXAMPLE.replace("T = 2.0", "T = 3.0");
        assert!(matches!(load_scenario(&text), Err(Error::DelayMismatch { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let text = EXAMPLE.replace("x0 = [1.0]", "x0 = [1.0, 2.0]");
        assert!(matches!(load_scenario(&text), Err(Error::DimensionMismatch(_))));
        let text = EXAMPLE.replace(r#"f = ["0"]"#, r#"f = ["0", "1"]"#);
        assert!(matches!(load_scenario(&text), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let text = EXAMPLE.replace("[cost]", "[cost]\nweight = 2");
        assert!(matches!(load_scenario(&text), Err(Error::Schema(_))));
        let text = EXAMPLE.replace(r#"target = "free""#, r#"target = { type = "cone" }"#);
        assert!(matches!(load_scenario(&text), Err(Error::Schema(_))));
    }

    #[test]
    fn targets() {
        let text = EXAMPLE.replace(
            r#"target = "free""#,
            r#"target = { type = "ball", center = [1.0], radius = 0.5 }"#,
        );
        let doc = load_scenario(&text).unwrap();
        assert!(matches!(doc.scenario.target, Target::Ball { radius, .. } if radius == 0.5));
        let text = EXAMPLE.replace(
            r#"target = "free""#,
            r#"target = { type = "box", lo = [0.0], hi = [1.0] }"#,
        );
        assert!(matches!(
            load_scenario(&text).unwrap().scenario.target,
            Target::Box { .. }
        ));
    }

    #[test]
    fn missing_attached_gets_default() {
        let text = EXAMPLE.replace(r#"attached = { "0.5" = [[0, 2], [2, 0]] }"#, "");
        let doc = load_scenario(&text).unwrap();
        let c = doc.control(None).unwrap();
        assert_eq!(c.family.get(0.5).unwrap().values(), &[vec![1.0, 1.0]]);
    }

    #[test]
    fn control_document_round_trip() {
        let doc = load_scenario(EXAMPLE).unwrap();
        let c = doc.control(None).unwrap();
        let text = write_control(&c.measure, &c.family, &["generated".into()]);
        let back = parse_control(&text, &doc.scenario).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn density_round_trip() {
        let doc = load_scenario(EXAMPLE).unwrap();
        let mu = Measure::from_parts(2.0, &[(0.1, 0.3, 0.7), (1.0, 1.25, 1.0 / 3.0)], &[(2.0, 0.25)]).unwrap();
        let fam = with_defaults(&mu, &AttachedControlFamily::new(2), &doc.scenario).unwrap();
        let text = write_control(&mu, &fam, &[]);
        let back = parse_control(&text, &doc.scenario).unwrap();
        assert_eq!(back.measure, mu);
        assert_eq!(back.family, fam);
    }
}
