//! One line per acceptance criterion. Run with `--nocapture` to see them.

mod common;

use std::f64::consts::E;
use std::time::Instant;

use impdelay::approx::par_map;
use impdelay::{
    assemble_by_segments, certify, convergence_study, density_controls, from_reparam, integrate_reparam,
    read_scenario_file, roundtrip_residual, simulate_extended, simulate_strict, solve, to_reparam, transcribe,
    AttachedControlFamily, Measure, MultiStep, Scenario, ScenarioDoc, Side, SimOptions, SolveOptions, Study, Target,
    Tolerances,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario_file(name: &str) -> ScenarioDoc {
    read_scenario_file(format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn example1() -> Scenario {
    Scenario::new(
        1,
        2,
        1.0,
        vec![1.0],
        vec![1.0],
        &["0"],
        &["x1[0]*x2[0]"],
        "-x1[0]",
        Target::Free,
        2.0,
    )
    .unwrap()
}

fn example_family(w1: [f64; 2], w2: [f64; 2]) -> (Measure, AttachedControlFamily) {
    let mu = Measure::from_parts(2.0, &[], &[(0.5, 1.0), (1.5, 1.0)]).unwrap();
    let mut fam = AttachedControlFamily::new(2);
    fam.insert(0.5, MultiStep::uniform(0.0, 1.0, &[w1.to_vec(), w2.to_vec()]).unwrap())
        .unwrap();
    (mu, fam)
}

fn closed_form() -> Scenario {
    Scenario::new(
        1,
        1,
        1.0,
        vec![1.0],
        vec![1.0],
        &["0"],
        &["x1[0]"],
        "-x1[0]",
        Target::Free,
        1.0,
    )
    .unwrap()
}

fn criterion_1() -> Outcome {
    let sc = example1();
    let opts = SimOptions {
        step: 1e-3,
        ..SimOptions::default()
    };
    let start = Instant::now();
    let (mu, first) = example_family([0.0, 2.0], [2.0, 0.0]);
    let a = simulate_extended(&sc, &mu, &first, &opts).unwrap();
    let (mu, tilde) = example_family([2.0, 0.0], [0.0, 2.0]);
    let b = simulate_extended(&sc, &mu, &tilde, &opts).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let e1 = (a.endpoint[0] - E * E).abs();
    let e2 = (b.endpoint[0] - (1.0 + E).exp()).abs();
    // x on [1/2, 3/2) for both families.
    let mid = a
        .samples
        .iter()
        .chain(&b.samples)
        .filter(|s| s.t >= 0.5 && s.t < 1.5 && !s.left_limit)
        .map(|s| (s.x[0] - E).abs())
        .fold(0.0, f64::max);
    outcome(
        e1 <= 1e-6 && e2 <= 1e-6 && mid <= 1e-6 && elapsed < 1.0,
        format!("|x(2)-e^2| = {e1:.1e}, |x(2)-e^(1+e)| = {e2:.1e}, max |x-e| on [1/2,3/2) = {mid:.1e}, {elapsed:.3} s"),
    )
}

fn criterion_2() -> Outcome {
    let sc = example1();
    let gap = (1.0 + E).exp() - E * E;
    let widths = vec![1e-1, 1e-2, 1e-3];
    let (mu, first) = example_family([0.0, 2.0], [2.0, 0.0]);
    let (_, tilde) = example_family([2.0, 0.0], [0.0, 2.0]);
    let opts = SimOptions::default();
    let first_study = Study::Mollify {
        sides: vec![Side::After, Side::Before],
        widths: widths.clone(),
    };
    let tilde_study = Study::Mollify {
        sides: vec![Side::Before, Side::After],
        widths,
    };
    let a = convergence_study(&sc, &mu, &first, &first_study, &opts, 3).unwrap();
    let b = convergence_study(&sc, &mu, &tilde, &tilde_study, &opts, 3).unwrap();
    let final_a = a.rows.last().unwrap().error;
    let final_b = b.rows.last().unwrap().error;
    let ref_gap = (b.reference[0] - a.reference[0] - gap).abs();
    outcome(
        a.monotone && b.monotone && final_a <= 1e-2 * gap && final_b <= 1e-2 * gap && ref_gap <= 1e-6,
        format!(
            "gap {gap:.6}, errors first {:?}, tilde {:?}",
            a.rows.iter().map(|r| format!("{:.2e}", r.error)).collect::<Vec<_>>(),
            b.rows.iter().map(|r| format!("{:.2e}", r.error)).collect::<Vec<_>>()
        ),
    )
}

fn criterion_3() -> Outcome {
    let cases = common::corpus(24);
    let opts = SimOptions::default();
    let results = par_map(&cases, 4, |c| {
        let residual = roundtrip_residual(&c.mu, &c.family, &c.sc).unwrap();
        let direct = assemble_by_segments(&c.sc, &c.mu, &c.family, &opts).unwrap().endpoint;
        let rc = to_reparam(&c.mu, &c.family, &c.sc).unwrap();
        let (mu2, fam2) = from_reparam(&rc, &c.sc).unwrap();
        let back = simulate_extended(&c.sc, &mu2, &fam2, &opts).unwrap().endpoint;
        let dx = direct.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (residual, dx)
    });
    let worst_res = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_dx = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        worst_res <= 1e-10 && worst_dx <= 1e-8,
        format!(
            "{} controls, max residual {worst_res:.1e}, max |dx(T)| {worst_dx:.1e}",
            cases.len()
        ),
    )
}

fn criterion_4() -> Outcome {
    let cases = common::corpus(24);
    let mut worst = 0.0f64;
    for c in &cases {
        let rc = to_reparam(&c.mu, &c.family, &c.sc).unwrap();
        worst = worst.max((c.mu.tv_norm() - rc.total_mass()).abs());
        let (mu2, _) = from_reparam(&rc, &c.sc).unwrap();
        worst = worst.max((mu2.tv_norm() - rc.total_mass()).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("max |tv - sum int alpha| = {worst:.1e} over both directions"),
    )
}

fn criterion_5() -> Outcome {
    let cases = common::corpus(24);
    let opts = SimOptions::default();
    let worst = par_map(&cases, 4, |c| {
        let a = simulate_extended(&c.sc, &c.mu, &c.family, &opts).unwrap();
        let b = assemble_by_segments(&c.sc, &c.mu, &c.family, &opts).unwrap();
        a.sup_distance(&b).unwrap()
    })
    .into_iter()
    .fold(0.0, f64::max);
    outcome(worst <= 1e-6, format!("max sup-distance {worst:.1e}"))
}

fn criterion_6() -> Outcome {
    let sc = example1();
    let (mu, first) = example_family([0.0, 2.0], [2.0, 0.0]);
    let rc = to_reparam(&mu, &first, &sc).unwrap();
    let mut identities = 0.0f64;
    for j in [1usize, 10, 100] {
        let rcj = density_controls(&rc, j, sc.delay).unwrap();
        identities = identities.max((rcj.total_mass() - rc.total_mass()).abs());
        identities = identities.max((rcj.clock() - sc.delay).abs());
        let (mu_j, _) = from_reparam(&rcj, &sc).unwrap();
        identities = identities.max((mu_j.tv_norm() - rc.total_mass()).abs());
        if !mu_j.is_atomless() {
            return outcome(false, format!("j = {j} left atoms"));
        }
    }
    let study = Study::Density { js: vec![1, 10, 100] };
    let report = convergence_study(&sc, &mu, &first, &study, &SimOptions::default(), 3).unwrap();
    let c = report.rate_constant;
    let bounded = report.rows.iter().all(|r| r.error <= c / r.parameter + 1e-15);
    // First-order decay between the two largest j (j = 1 is pre-asymptotic).
    let rate = (report.rows[1].error / report.rows[2].error).log10();
    let first_order = rate >= 0.8;
    outcome(
        bounded && first_order && report.monotone && identities <= 1e-12,
        format!(
            "errors {:?}, C = {c:.3}, observed order {rate:.2}, identities {identities:.1e}",
            report
                .rows
                .iter()
                .map(|r| format!("{:.2e}", r.error))
                .collect::<Vec<_>>()
        ),
    )
}

fn criterion_7() -> Outcome {
    let sc = closed_form();
    let start = Instant::now();
    let sol = solve(&sc, &SolveOptions::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let err = (sol.cost + E).abs();
    outcome(
        err <= 1e-3 && elapsed < 10.0,
        format!(
            "cost {:.9}, |cost + e| = {err:.1e}, mass {:.9}, {elapsed:.2} s",
            sol.cost, sol.mass
        ),
    )
}

fn criterion_8() -> Outcome {
    let sc = closed_form();
    let tol = Tolerances::default();
    let sol = solve(&sc, &SolveOptions::default()).unwrap();
    let (_, cert) = certify(&sol.process, &sc, &tol, 1e12).unwrap();
    // Same control shape with total mass 0.9: mass = h m / (1 - m).
    let nlp = transcribe(&sc, sol.x.len());
    let mean = sol.x.iter().sum::<f64>() / sol.x.len() as f64;
    let target_mean = 0.9 / (sc.delay + 0.9);
    let x: Vec<f64> = sol.x.iter().map(|v| v * target_mean / mean).collect();
    let perturbed = nlp.process(&x).unwrap();
    let (_, bad) = certify(&perturbed, &sc, &tol, 1e12).unwrap();
    let d2 = bad.entry("D_ii_inequality").unwrap();
    let d3 = bad.entry("D_iii_support").unwrap();
    let fails = (!d2.pass && d2.residual >= 1e-3) || (!d3.pass && d3.residual >= 1e-3);
    outcome(
        cert.pass && fails,
        format!(
            "optimum passes: {}; mass 0.9: D(ii) {:.2e}, D(iii) {:.2e}",
            cert.pass, d2.residual, d3.residual
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (k, name) in ["closed_form.scn", "smooth.scn", "oscillator.scn"].iter().enumerate() {
        let doc = scenario_file(name);
        let sc = &doc.scenario;
        let nlp = transcribe(sc, 6);
        let cap = 0.8 * sc.budget / (sc.delay + sc.budget);
        let mut rng = StdRng::seed_from_u64(7 + k as u64);
        for _ in 0..10 {
            // Random point strictly inside the simplices and the budget.
            let raw: Vec<f64> = (0..nlp.dim()).map(|_| rng.gen::<f64>()).collect();
            let mut x = nlp.project(&raw);
            let mean = x.iter().sum::<f64>() / nlp.pieces as f64;
            if mean > cap {
                x.iter_mut().for_each(|v| *v *= cap / mean);
            }
            let rho = 10.0;
            let (_, g) = nlp.gradient(&x, rho).unwrap();
            let e = 1e-6;
            let fd: Vec<f64> = (0..x.len())
                .map(|i| {
                    let mut xp = x.clone();
                    xp[i] += e;
                    let mut xm = x.clone();
                    xm[i] -= e;
                    (nlp.evaluate(&xp, rho).unwrap().penalized - nlp.evaluate(&xm, rho).unwrap().penalized) / (2.0 * e)
                })
                .collect();
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
            let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            worst = worst.max(err);
            count += 1;
        }
    }
    outcome(worst <= 1e-4, format!("{count} points, max relative error {worst:.1e}"))
}

fn criterion_10() -> Outcome {
    let doc = scenario_file("smooth.scn");
    let sc = &doc.scenario;
    let c = doc.control(None).unwrap();
    let rc = to_reparam(&c.measure, &c.family, sc).unwrap();
    let s_end = rc.horizon();
    let end = |m: usize| {
        let opts = SimOptions {
            step: s_end / m as f64,
            strict_alignment: true,
            ..SimOptions::default()
        };
        integrate_reparam(sc, &rc, &opts).unwrap().endpoint()[0]
    };
    let reference = end(2560);
    let e1 = (end(20) - reference).abs();
    let e2 = (end(40) - reference).abs();
    let ratio = e1 / e2;
    // The same run through the strict-sense simulator.
    let strict = simulate_strict(sc, c.measure.density(), &SimOptions::default())
        .unwrap()
        .endpoint[0];
    outcome(
        (12.0..=20.0).contains(&ratio) && (strict - reference).abs() < 1e-8,
        format!("errors {e1:.2e} -> {e2:.2e}, ratio {ratio:.2}"),
    )
}

// Runs without the libtest harness so the criterion lines are always shown.
fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = Vec::new();
    for (k, run) in criteria {
        let o = run();
        println!(
            "criterion {k:>2} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(k);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
