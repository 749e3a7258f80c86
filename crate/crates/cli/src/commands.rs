use std::path::PathBuf;

use ensemble_place::ensemble::{validate_necessary, MaterializedEnsemble, TargetSpectrum, ValidationReport};
use ensemble_place::feasibility::{feasibility_report, FeasibilityReport};
use ensemble_place::gain::{
    ackermann_finite, gain_infinite, gain_mirror, phi_matrix, pi_sequence, Divergence, GainMode, GainVector,
};
use ensemble_place::simulation::{
    integrate_rk4, stability_report, step_limit, StabilityReport, TrajectoryConfig,
};
use ensemble_place::special::{
    alpha, beta, default_inner_truncation, xi, zeta, DiagnosticSequence, SeriesValue,
};
use ensemble_place::spectral::{
    build_cauchy, diagonalization_residual, verify_truncated_spectrum, winding, ClosedLoopOperator,
    Contour, SpectrumReport, TransformedGenerator,
};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::output::{trajectory_csv, write_json, write_meta, write_text};
use crate::{Common, Failure, SynthMode, TargetChoice};

struct Context {
    cfg: RunConfig,
    dir: PathBuf,
    strict: bool,
}

fn context(common: &Common) -> Result<Context, Failure> {
    let cfg = RunConfig::load(&common.config, &common.overrides)?;
    let dir = common.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let strict = common.strict || cfg.strict;
    Ok(Context { cfg, dir, strict })
}

impl Context {
    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        if self.cfg.output.wants(Format::Json) {
            write_json(&self.dir, name, value)?;
        }
        Ok(())
    }

    /// Materialized ensemble that also passes the necessary conditions.
    fn validated(&self) -> Result<MaterializedEnsemble, Failure> {
        let ens = self.cfg.ensemble()?;
        let report = validate_necessary(&ens);
        if !report.passed {
            let first = &report.violations[0];
            return Err(Failure::Validation(format!(
                "{} violation(s), first at n = {}: {}",
                report.violations.len(),
                first.index,
                first.message
            )));
        }
        Ok(ens)
    }

    fn targets(&self, choice: TargetChoice) -> TargetSpectrum {
        match choice {
            TargetChoice::Config => self.cfg.targets.clone(),
            TargetChoice::Mirror => TargetSpectrum::Mirror,
            TargetChoice::Zero => TargetSpectrum::Zero,
        }
    }
}

#[derive(Serialize)]
struct ValidationDoc<'a> {
    #[serde(rename = "N")]
    n: usize,
    space: String,
    passed: bool,
    error: Option<String>,
    violations: &'a [ensemble_place::ensemble::Violation],
}

pub fn validate(common: &Common) -> Result<(), Failure> {
    let ctx = context(common)?;
    write_meta(&ctx.dir, "validate")?;
    let space = ctx.cfg.ensemble.space.label();
    let n = ctx.cfg.truncation.n;
    let report = match ctx.cfg.ensemble() {
        Ok(ens) => validate_necessary(&ens),
        Err(f) => {
            let doc = ValidationDoc {
                n,
                space,
                passed: false,
                error: Some(f.to_string()),
                violations: &[],
            };
            ctx.json("validation.json", &doc)?;
            return Err(f);
        }
    };
    let ValidationReport { passed, violations } = &report;
    ctx.json(
        "validation.json",
        &ValidationDoc {
            n,
            space,
            passed: *passed,
            error: None,
            violations,
        },
    )?;
    println!("validation: {}", if *passed { "passed" } else { "FAILED" });
    for v in violations {
        println!("  n = {}: {}", v.index, v.message);
    }
    if *passed {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} violation(s)", violations.len())))
    }
}

#[derive(Serialize)]
struct SeriesDoc<'a> {
    function: &'a str,
    d: f64,
    value: f64,
    tail_bound: f64,
    terms_used: usize,
}

pub fn series(name: &str, d: f64, tol: f64) -> Result<(), Failure> {
    let SeriesValue {
        value,
        tail_bound,
        terms_used,
    } = if name == "zeta" { zeta(d, tol)? } else { xi(d, tol)? };
    let doc = SeriesDoc {
        function: name,
        d,
        value,
        tail_bound,
        terms_used,
    };
    print!("{}", crate::output::to_json(&doc)?);
    Ok(())
}

#[derive(Serialize)]
struct GainEntry {
    n: usize,
    re: f64,
    im: f64,
    tail_estimate: f64,
}

#[derive(Serialize)]
struct GainsDoc {
    mode: GainMode,
    targets: TargetSpectrum,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    l1_norm: f64,
    entries: Vec<GainEntry>,
    diverged: Vec<usize>,
    divergence: Vec<Divergence>,
}

fn gains_doc(g: &GainVector, targets: TargetSpectrum) -> GainsDoc {
    GainsDoc {
        mode: g.mode,
        targets,
        n: g.n,
        m: g.m,
        l1_norm: g.l1_norm(),
        entries: g
            .entries
            .iter()
            .zip(&g.per_entry_tail)
            .enumerate()
            .map(|(i, (z, &t))| GainEntry {
                n: i + 1,
                re: z.re,
                im: z.im,
                tail_estimate: t,
            })
            .collect(),
        diverged: g.diverged.iter().map(|d| d.index).collect(),
        divergence: g.diverged.clone(),
    }
}

pub fn synth(common: &Common, mode: SynthMode, choice: TargetChoice) -> Result<(), Failure> {
    let ctx = context(common)?;
    write_meta(&ctx.dir, "synth")?;
    let ens = ctx.validated()?;
    let targets = match mode {
        SynthMode::Mirror => TargetSpectrum::Mirror,
        _ => ctx.targets(choice),
    };
    // configured targets must lie in the closed left half-plane
    let lambda = targets.materialize(&ens.a)?;
    let m = ctx.cfg.product_truncation(&ens);
    let gain = match mode {
        SynthMode::Finite => ackermann_finite(&ens.a, &ens.b, &lambda)?,
        SynthMode::Infinite => gain_infinite(&ens, &targets, m)?,
        SynthMode::Mirror => gain_mirror(&ens, m)?,
    };
    ctx.json("gains.json", &gains_doc(&gain, targets))?;
    println!(
        "gain: {} entries, mode {:?}, N = {}, M = {}, ||k||_1 = {:.6e}",
        gain.entries.len(),
        gain.mode,
        gain.n,
        gain.m,
        gain.l1_norm()
    );
    if !gain.diverged.is_empty() {
        let d = gain.diverged[0];
        let msg = format!(
            "{} entr{} diverged; first n = {} at m = {} (log-magnitude {:.1})",
            gain.diverged.len(),
            if gain.diverged.len() == 1 { "y" } else { "ies" },
            d.index,
            d.at_m,
            d.log_magnitude
        );
        if ctx.strict {
            return Err(Failure::Numeric(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

#[derive(Serialize)]
struct FeasibilityDoc {
    #[serde(flatten)]
    report: FeasibilityReport,
    #[serde(rename = "M")]
    m: usize,
    pi_error: Option<String>,
    diagnostics: Vec<DiagnosticSequence>,
}

pub fn feasibility(common: &Common) -> Result<(), Failure> {
    let ctx = context(common)?;
    write_meta(&ctx.dir, "feasibility")?;
    let ens = ctx.validated()?;
    let m = ctx.cfg.product_truncation(&ens);
    let (pi, pi_error) = match pi_sequence(&ens, m) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let phi = phi_matrix(&ens);
    let report = feasibility_report(&ens, &ctx.cfg.feasibility.d, pi.as_ref(), &phi, Some(&ctx.cfg.targets))?;

    let mut diagnostics = Vec::new();
    if !ens.is_explicit() {
        let n = ens.len();
        let inner = default_inner_truncation(n);
        diagnostics.push(alpha(&ens, n, inner)?);
        if let Ok(b) = beta(&ens, &ctx.cfg.targets, n, inner) {
            diagnostics.push(b);
        }
    }
    for c in &report.conclusions {
        println!("{c}");
    }
    ctx.json(
        "feasibility.json",
        &FeasibilityDoc {
            report,
            m,
            pi_error,
            diagnostics,
        },
    )
}

#[derive(Serialize)]
struct WindingRow {
    label: String,
    center: Complex64,
    radius: f64,
    expected: i64,
    winding: Option<i64>,
    estimate: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct CauchyDoc {
    involution_residual: f64,
    row_sum_residual: f64,
    diagonalization_residual: f64,
    similarity_defect: f64,
}

#[derive(Serialize)]
struct VerifyDoc {
    spectrum: SpectrumReport,
    windings: Vec<WindingRow>,
    cauchy: Option<CauchyDoc>,
    pass: bool,
}

/// Circles around each placed target (+1), each perturbed pole (-1) and one
/// enclosing everything (0).
fn winding_table(
    ens: &MaterializedEnsemble,
    k: &[Complex64],
    placed: &[Complex64],
) -> Vec<WindingRow> {
    let poles: Vec<Complex64> = ens
        .a
        .iter()
        .zip(k)
        .filter(|(_, k)| k.norm() > 0.0)
        .map(|(&a, _)| Complex64::new(a, 0.0))
        .collect();
    let all_a: Vec<Complex64> = ens.a.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let mut points: Vec<(String, Complex64, i64)> = Vec::new();
    for (i, &l) in placed.iter().enumerate() {
        points.push((format!("lambda_{}", i + 1), l, 1));
    }
    for (i, &p) in poles.iter().enumerate() {
        points.push((format!("a_{}", i + 1), p, -1));
    }
    let mut rows: Vec<WindingRow> = points
        .iter()
        .map(|(label, c, expected)| {
            let sep = placed
                .iter()
                .chain(all_a.iter())
                .filter(|z| (*z - c).norm() > 0.0)
                .map(|z| (z - c).norm())
                .fold(f64::INFINITY, f64::min);
            let radius = if sep.is_finite() { 0.3 * sep } else { 0.5 };
            row(ens, k, placed, label.clone(), *c, radius, *expected)
        })
        .collect();
    let reach = placed
        .iter()
        .chain(all_a.iter())
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let expected = placed.len() as i64 - poles.len() as i64;
    rows.push(row(ens, k, placed, "all".into(), Complex64::new(0.0, 0.0), 2.0 * reach.max(1e-300), expected));
    rows
}

fn row(
    ens: &MaterializedEnsemble,
    k: &[Complex64],
    placed: &[Complex64],
    label: String,
    center: Complex64,
    radius: f64,
    expected: i64,
) -> WindingRow {
    match winding(&ens.a, &ens.b, k, Contour { center, radius }, placed) {
        Ok(w) => WindingRow {
            label,
            center,
            radius,
            expected,
            winding: Some(w.winding),
            estimate: Some(w.estimate),
            error: None,
        },
        Err(e) => WindingRow {
            label,
            center,
            radius,
            expected,
            winding: None,
            estimate: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn verify(common: &Common) -> Result<(), Failure> {
    let ctx = context(common)?;
    write_meta(&ctx.dir, "verify")?;
    let ens = ctx.validated()?;
    let n = ens.len();
    let n_gain = ctx.cfg.verify.n_gain.unwrap_or(n);
    let targets = ctx.cfg.targets.clone();
    let spectrum = verify_truncated_spectrum(&ens, &targets, n_gain)?;

    let lambda = targets.materialize(&ens.a)?;
    let k = if n_gain == 0 {
        vec![Complex64::new(0.0, 0.0); n]
    } else {
        gain_infinite(&ens.resized(n_gain)?, &targets, n_gain)?.zero_padded(n)
    };
    let windings = winding_table(&ens, &k, &lambda[..n_gain]);

    let cauchy = if targets.is_mirror() {
        let pi = pi_sequence(&ens, n)?;
        let p = build_cauchy(&ens, &pi)?;
        let g = gain_mirror(&ens, n)?;
        let op = ClosedLoopOperator::new(&ens.a, &ens.b, &g.entries)?;
        let t = TransformedGenerator::new(&ens, &g)?;
        Some(CauchyDoc {
            involution_residual: p.involution_residual,
            row_sum_residual: p.row_sum_residual,
            diagonalization_residual: diagonalization_residual(&p, &ens, &g)?,
            similarity_defect: t.similarity_defect(&op),
        })
    } else {
        None
    };
    let windings_ok = windings.iter().all(|w| w.winding == Some(w.expected));
    let pass = spectrum.pass && windings_ok;
    println!(
        "spectrum: {} of {} modes verified; windings {}",
        spectrum.modes.iter().filter(|m| m.pass).count(),
        n,
        if windings_ok { "as expected" } else { "MISMATCH" }
    );
    if let Some(c) = &cauchy {
        println!(
            "P^2 - I residual {:.3e}, P T~ P + A residual {:.3e}",
            c.involution_residual, c.diagonalization_residual
        );
    }
    let snap_failure = windings.iter().find_map(|w| w.error.clone());
    ctx.json(
        "verify.json",
        &VerifyDoc {
            spectrum,
            windings,
            cauchy,
            pass,
        },
    )?;
    match (pass, snap_failure) {
        (true, _) => Ok(()),
        (false, Some(e)) => Err(Failure::Numeric(e)),
        (false, None) => Err(Failure::Numeric("spectrum verification failed".into())),
    }
}

#[derive(Serialize)]
struct StabilityDoc {
    initial: String,
    gain_mode: GainMode,
    config: TrajectoryConfig,
    report: StabilityReport,
}

pub fn simulate(common: &Common) -> Result<(), Failure> {
    let ctx = context(common)?;
    write_meta(&ctx.dir, "simulate")?;
    let ens = ctx.validated()?;
    let n = ens.len();
    let sim = &ctx.cfg.simulation;
    let targets = ctx.cfg.targets.clone();
    targets.materialize(&ens.a)?;

    // the mirror gain at M = N comes with the exact modal basis P
    let (gain, p) = if targets.is_mirror() {
        let pi = pi_sequence(&ens, n)?;
        (gain_mirror(&ens, n)?, Some(build_cauchy(&ens, &pi)?))
    } else {
        (gain_infinite(&ens, &targets, n)?, None)
    };
    if !gain.is_finite() {
        return Err(Failure::Numeric("gain diverged; nothing to simulate".into()));
    }
    let space = sim.space.unwrap_or(ctx.cfg.ensemble.space);
    let config = TrajectoryConfig {
        t_end: sim.t_end,
        dt: sim.dt.unwrap_or_else(|| step_limit(&ens, &gain.entries)),
        record_every: sim.record_every,
        space,
        epsilon: sim.epsilon,
    };
    let x0 = sim.initial.materialize(&ens, p.as_ref())?;
    let traj = integrate_rk4(&ens, &gain.entries, &x0, &config)?;
    let report = stability_report(&traj, &ens, &config, p.as_ref())?;
    println!(
        "simulation: {:?}, sup ratio {:.4e}, final ratio {:.4e}",
        report.classification, report.sup_ratio, report.final_ratio
    );
    if ctx.cfg.output.wants(Format::Csv) {
        write_text(&ctx.dir, "trajectory.csv", &trajectory_csv(&traj))?;
    }
    ctx.json(
        "stability.json",
        &StabilityDoc {
            initial: sim.initial.label(),
            gain_mode: gain.mode,
            config,
            report,
        },
    )
}
