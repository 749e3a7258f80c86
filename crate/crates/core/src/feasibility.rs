//! Finite-window evidence for the feasibility theorems.
//!
//! Every check here inspects the materialized window `[1, N]` only. Passing
//! means the hypotheses hold on that window; nothing is claimed about the
//! infinite ensemble.

use serde::{Deserialize, Serialize};

use crate::ensemble::{MaterializedEnsemble, TargetSpectrum};
use crate::error::{Error, Result};
use crate::gain::{PhiMatrix, PiSequence};
use crate::special::zeta;

/// Finite-sample proxy for `ln(a_n/|b_n|) = o(n)`.
pub const LOGRATIO_THRESHOLD: f64 = 0.05;

/// Half-width of the band around `d = 2` where no verdict is given.
pub const CRITICAL_BAND: f64 = 1e-6;

/// Finite-sample proxy for `lambda_n / a_n = o(1)`.
pub const TARGET_RATIO_THRESHOLD: f64 = 0.05;

const ZETA_TOL: f64 = 1e-10;

pub fn window_note(n: usize) -> String {
    format!("hypotheses verified on window [1, {n}]")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
    Neither,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayVerdict {
    InfeasibleItem1,
    FeasibleItem2Candidate,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayClassReport {
    pub d_tested: f64,
    pub direction: Direction,
    /// 1-based index `n` where `n^d a_n` first breaks strict monotonicity
    /// after burn-in, in the direction set by the first post-burn-in step.
    pub first_violation_index: Option<usize>,
    pub burn_in: usize,
    pub zeta_at_d: f64,
    pub logratio_max: f64,
    pub logratio_ok: bool,
    pub verdict: DecayVerdict,
    pub note: String,
}

/// Monotonicity of `n^d a_n` after a burn-in of `ceil(N/4)` indices, the sign
/// of `zeta(d)`, and the log-ratio slope over the second half of the window.
pub fn decay_class(ens: &MaterializedEnsemble, d: f64) -> Result<DecayClassReport> {
    if !(d > 1.0) || !d.is_finite() {
        return Err(Error::InvalidParameter(format!("decay exponent must exceed 1, got {d}")));
    }
    let n = ens.len();
    let burn_in = n.div_ceil(4);
    // ln(n^d a_n) avoids overflow of n^d for long windows
    let scaled: Vec<f64> = ens
        .a
        .iter()
        .enumerate()
        .map(|(i, &a)| d * ((i + 1) as f64).ln() + a.ln())
        .collect();

    let tail = &scaled[burn_in.min(n)..];
    let (direction, first_violation_index) = if tail.len() < 2 {
        (Direction::Neither, None)
    } else {
        let up = tail[1] > tail[0];
        let down = tail[1] < tail[0];
        let broken = tail.windows(2).position(|w| {
            if up {
                !(w[1] > w[0])
            } else if down {
                !(w[1] < w[0])
            } else {
                true
            }
        });
        match broken {
            None if up => (Direction::Increasing, None),
            None => (Direction::Decreasing, None),
            Some(p) => (Direction::Neither, Some(burn_in + p + 2)),
        }
    };

    let zeta_at_d = if d > 1.0 + crate::special::MIN_EXPONENT_GAP {
        zeta(d, ZETA_TOL)?.value
    } else {
        f64::NEG_INFINITY
    };

    let half = n / 2;
    let logratio_max = ens.a[half..]
        .iter()
        .zip(&ens.b[half..])
        .enumerate()
        .map(|(i, (&a, b))| (a / b.norm()).ln().abs() / (half + i + 1) as f64)
        .fold(0.0, f64::max);
    let logratio_ok = logratio_max <= LOGRATIO_THRESHOLD;

    let verdict = if d < 2.0 - CRITICAL_BAND && direction == Direction::Increasing {
        DecayVerdict::InfeasibleItem1
    } else if d > 2.0 + CRITICAL_BAND && direction == Direction::Decreasing && logratio_ok {
        DecayVerdict::FeasibleItem2Candidate
    } else {
        DecayVerdict::Inconclusive
    };
    Ok(DecayClassReport {
        d_tested: d,
        direction,
        first_violation_index,
        burn_in,
        zeta_at_d,
        logratio_max,
        logratio_ok,
        verdict,
        note: format!(
            "{}; o(n) tested as slope <= {LOGRATIO_THRESHOLD} (finite-sample proxy)",
            window_note(n)
        ),
    })
}

/// `decay_class` over a list of candidate exponents. No optimality claim.
pub fn decay_class_scan(ens: &MaterializedEnsemble, ds: &[f64]) -> Result<Vec<DecayClassReport>> {
    ds.iter().map(|&d| decay_class(ens, d)).collect()
}

/// Evenly spaced candidates on `[lo, hi]`, skipping the critical band.
pub fn decay_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .filter(|d| (d - 2.0).abs() > CRITICAL_BAND)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCertificate {
    pub sup_a_ratio: f64,
    pub inf_b_ratio: f64,
    pub sup_b_ratio: f64,
    pub nu0: Option<f64>,
    pub nu1: Option<f64>,
    pub nu2: Option<f64>,
    pub pass: bool,
    pub note: String,
}

impl RatioCertificate {
    /// `max{nu0/nu1, nu2}` for a passing certificate.
    pub fn mu(&self) -> Option<f64> {
        match (self.pass, self.nu0, self.nu1, self.nu2) {
            (true, Some(n0), Some(n1), Some(n2)) => Some((n0 / n1).max(n2)),
            _ => None,
        }
    }
}

/// Separates `a_{n+1}/a_n < nu0 < nu1 < |b_{n+1}/b_n| < nu2 < 1` over `n < N`.
pub fn ratio_test(ens: &MaterializedEnsemble) -> RatioCertificate {
    let n = ens.len();
    let note = window_note(n);
    if n < 2 {
        return RatioCertificate {
            sup_a_ratio: f64::NAN,
            inf_b_ratio: f64::NAN,
            sup_b_ratio: f64::NAN,
            nu0: None,
            nu1: None,
            nu2: None,
            pass: false,
            note: format!("{note}; ratio test needs N >= 2"),
        };
    }
    let sup_a = ens.a.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max);
    let b_ratios: Vec<f64> = ens.b.windows(2).map(|w| (w[1] / w[0]).norm()).collect();
    let inf_b = b_ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let sup_b = b_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let pass = sup_a < inf_b && sup_b < 1.0;
    let (nu0, nu1, nu2) = if pass {
        let g = (inf_b - sup_a).min(1.0 - sup_b) / 3.0;
        (Some(sup_a + g), Some(inf_b - g), Some((sup_b + g).min(1.0)))
    } else {
        (None, None, None)
    };
    RatioCertificate {
        sup_a_ratio: sup_a,
        inf_b_ratio: inf_b,
        sup_b_ratio: sup_b,
        nu0,
        nu1,
        nu2,
        pass,
        note,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    #[serde(rename = "C")]
    pub c: f64,
    pub mu: f64,
    pub kappa: f64,
    /// `max_{i,j} (phi_ij - C mu^|i-j|)`.
    pub max_violation: f64,
    pub pass: bool,
    pub max_row_sum: f64,
    pub max_column_sum: f64,
    /// Row and column sums of `Phi` both below `kappa`.
    pub kappa_bounds_sums: bool,
}

/// Checks `phi_ij <= C mu^|i-j|` entrywise. Without explicit constants,
/// `C = 1` and `mu = max{nu0/nu1, nu2}` from a passing ratio certificate.
pub fn phi_decay_certificate(
    phi: &PhiMatrix,
    cert_in: Option<(f64, f64)>,
    ratio: Option<&RatioCertificate>,
) -> Result<DecayCertificate> {
    let (c, mu) = match (cert_in, ratio.and_then(RatioCertificate::mu)) {
        (Some(cm), _) => cm,
        (None, Some(mu)) => (1.0, mu),
        (None, None) => return Err(Error::MissingCertificate),
    };
    if !(c > 0.0) || !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "decay constants need C > 0 and mu in (0,1), got C = {c}, mu = {mu}"
        )));
    }
    let n = phi.n();
    let mut max_violation = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            let envelope = c * mu.powi(i.abs_diff(j) as i32);
            max_violation = max_violation.max(phi.values[(i, j)] - envelope);
        }
    }
    let kappa = c * (1.0 + mu) / (1.0 - mu);
    let max_row_sum = phi.max_row_sum();
    let max_column_sum = phi.max_column_sum();
    Ok(DecayCertificate {
        c,
        mu,
        kappa,
        max_violation,
        pass: max_violation <= 0.0,
        max_row_sum,
        max_column_sum,
        kappa_bounds_sums: max_row_sum <= kappa && max_column_sum <= kappa,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiBoundCheck {
    pub nu0: f64,
    pub bound: f64,
    pub max_log_pi: f64,
    pub pass: bool,
}

/// `max ln|pi_n| <= ln 2 + 4 nu0 / (1 - nu0)^2`.
pub fn pi_bound_check(pi: &PiSequence, nu0: f64) -> Result<PiBoundCheck> {
    if !(nu0 > 0.0 && nu0 < 1.0) {
        return Err(Error::InvalidParameter(format!("nu0 must lie in (0,1), got {nu0}")));
    }
    let bound = std::f64::consts::LN_2 + 4.0 * nu0 / ((1.0 - nu0) * (1.0 - nu0));
    let max_log_pi = pi.log_abs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(PiBoundCheck {
        nu0,
        bound,
        max_log_pi,
        pass: max_log_pi <= bound,
    })
}

/// Whether `|lambda_n| / a_n` is small over the second half of the window, as
/// the decay-class sufficiency result assumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetHypothesis {
    pub max_ratio_second_half: f64,
    pub within_hypotheses: bool,
    pub note: String,
}

pub fn target_hypothesis(ens: &MaterializedEnsemble, targets: &TargetSpectrum) -> Result<TargetHypothesis> {
    let lambda = targets.materialize(&ens.a)?;
    let half = ens.len() / 2;
    let max_ratio = ens.a[half..]
        .iter()
        .zip(&lambda[half..])
        .map(|(&a, l)| l.norm() / a)
        .fold(0.0, f64::max);
    let within = max_ratio <= TARGET_RATIO_THRESHOLD;
    Ok(TargetHypothesis {
        max_ratio_second_half: max_ratio,
        within_hypotheses: within,
        note: if within {
            window_note(ens.len())
        } else {
            "outside theorem hypotheses".to_string()
        },
    })
}

/// Everything the `feasibility` command reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub n: usize,
    pub decay_class: Vec<DecayClassReport>,
    pub ratio: RatioCertificate,
    pub decay_certificate: Option<DecayCertificate>,
    pub pi_bound: Option<PiBoundCheck>,
    pub targets: Option<TargetHypothesis>,
    pub conclusions: Vec<String>,
}

pub fn feasibility_report(
    ens: &MaterializedEnsemble,
    ds: &[f64],
    pi: Option<&PiSequence>,
    phi: &PhiMatrix,
    targets: Option<&TargetSpectrum>,
) -> Result<FeasibilityReport> {
    let n = ens.len();
    let decay = decay_class_scan(ens, ds)?;
    let ratio = ratio_test(ens);
    let decay_certificate = if ratio.pass {
        Some(phi_decay_certificate(phi, None, Some(&ratio))?)
    } else {
        None
    };
    let pi_bound = match (pi, ratio.nu0) {
        (Some(p), Some(nu0)) => Some(pi_bound_check(p, nu0)?),
        _ => None,
    };
    let targets = targets.map(|t| target_hypothesis(ens, t)).transpose()?;

    let window = window_note(n);
    let mut conclusions = Vec::new();
    for r in &decay {
        match r.verdict {
            DecayVerdict::InfeasibleItem1 => conclusions.push(format!(
                "d = {}: n^d a_n increasing with zeta(d) = {:.6} < 0; no bounded gain reaches lambda = 0 for any b ({window})",
                r.d_tested, r.zeta_at_d
            )),
            DecayVerdict::FeasibleItem2Candidate => conclusions.push(format!(
                "d = {}: n^d a_n decreasing with zeta(d) = {:.6} > 0 and log-ratio slope {:.4}; gains for o(a_n) targets are summable ({window})",
                r.d_tested, r.zeta_at_d, r.logratio_max
            )),
            DecayVerdict::Inconclusive => conclusions.push(format!("d = {}: inconclusive", r.d_tested)),
        }
    }
    if ratio.pass {
        let phi_ok = decay_certificate.as_ref().is_some_and(|c| c.pass);
        let pi_ok = pi_bound.as_ref().is_none_or(|p| p.pass);
        conclusions.push(format!(
            "ratio conditions hold: pi bounded {}, Phi exponentially decaying {} ({window})",
            if pi_ok { "yes" } else { "NO" },
            if phi_ok { "yes" } else { "NO" }
        ));
    } else {
        conclusions.push("ratio conditions fail on the window".to_string());
    }
    if let Some(t) = &targets {
        if !t.within_hypotheses {
            conclusions.push("targets: outside theorem hypotheses".to_string());
        }
    }
    Ok(FeasibilityReport {
        n,
        decay_class: decay,
        ratio,
        decay_certificate,
        pi_bound,
        targets,
        conclusions,
    })
}
