//! Threshold functions `zeta(d)`, `xi(d)` and the diagnostic averages
//! `alpha_n`, `beta_n` that decide whether the infinite-product gains stay
//! bounded.
//!
//! `zeta` and `xi` are evaluated from their partial-fraction series rather
//! than their defining integrals, because the series come with elementary
//! tail bounds.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::{MaterializedEnsemble, TargetSpectrum};
use crate::error::{Error, Result};

/// Smallest admissible `d - 1`; both series blow up as `d -> 1+`.
pub const MIN_EXPONENT_GAP: f64 = 1e-6;

/// Series value with a bound on the neglected tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
    pub terms_used: usize,
}

fn check_exponent(d: f64) -> Result<()> {
    if d > 1.0 + MIN_EXPONENT_GAP && d.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "series needs d > 1 + {MIN_EXPONENT_GAP:e}, got {d}"
        )))
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")))
    }
}

/// `int_x^inf dm / (m^2 d^2 - 1)`, valid for `x d > 1`.
fn zeta_tail_integral(x: f64, d: f64) -> f64 {
    (2.0 / (x * d - 1.0)).ln_1p() / (2.0 * d)
}

/// Half-width of the bracket `[F(M+1), F(M+1/2)]` around `sum_{m>M}`,
/// scaled by the `2d` prefactor of the series.
fn zeta_bracket_bound(terms: usize, d: f64) -> f64 {
    let m = terms as f64;
    d * (zeta_tail_integral(m + 0.5, d) - zeta_tail_integral(m + 1.0, d))
}

/// `zeta(d) = d - 2d sum_{m>=1} 1/(m^2 d^2 - 1)`, to within `tol`.
///
/// The tail is bracketed by integral comparison: `f(m) = 1/(m^2 d^2 - 1)` is
/// decreasing and convex, so `int_{M+1}^inf f <= sum_{m>M} f(m) <= int_{M+1/2}^inf f`.
/// The midpoint of the bracket is added to the partial sum and its
/// half-width (plus a summation rounding allowance) is reported.
pub fn zeta(d: f64, tol: f64) -> Result<SeriesValue> {
    check_exponent(d)?;
    check_tol(tol)?;
    let mut terms = 16usize;
    while zeta_bracket_bound(terms, d) > 0.5 * tol && terms < (1 << 40) {
        terms *= 2;
    }
    zeta_with_terms(d, terms)
}

/// `zeta(d)` from exactly `terms` explicit summands.
pub fn zeta_with_terms(d: f64, terms: usize) -> Result<SeriesValue> {
    check_exponent(d)?;
    let terms = terms.max(1);
    let d2 = d * d;
    // smallest terms first
    let partial: f64 = (1..=terms)
        .rev()
        .map(|m| {
            let m = m as f64;
            1.0 / (m * m * d2 - 1.0)
        })
        .sum();
    let m = terms as f64;
    let tail = 0.5 * (zeta_tail_integral(m + 1.0, d) + zeta_tail_integral(m + 0.5, d));
    let rounding = 2.0 * d * (terms as f64 + 4.0) * f64::EPSILON * (partial + tail) + 4.0 * f64::EPSILON * d;
    Ok(SeriesValue {
        value: d - 2.0 * d * (partial + tail),
        tail_bound: zeta_bracket_bound(terms, d) + rounding,
        terms_used: terms,
    })
}

/// `xi(d) = d + 2d sum_{m>=1} (-1)^(m-1)/(m^2 d^2 - 1)`, to within `tol`.
///
/// Alternating with decreasing magnitudes, so the first omitted term bounds
/// the tail.
pub fn xi(d: f64, tol: f64) -> Result<SeriesValue> {
    check_exponent(d)?;
    check_tol(tol)?;
    // need 2d / ((M+1)^2 d^2 - 1) <= tol
    let needed = ((2.0 * d / tol + 1.0).sqrt() / d).ceil();
    let terms = (needed as usize).max(2);
    xi_with_terms(d, terms)
}

pub fn xi_with_terms(d: f64, terms: usize) -> Result<SeriesValue> {
    check_exponent(d)?;
    let terms = terms.max(1);
    let d2 = d * d;
    let term = |m: usize| {
        let mf = m as f64;
        1.0 / (mf * mf * d2 - 1.0)
    };
    // pair consecutive terms from the small end to avoid cancellation
    let mut partial = 0.0;
    for m in (1..=terms).rev() {
        let t = term(m);
        if m % 2 == 1 {
            partial += t;
        } else {
            partial -= t;
        }
    }
    let first_omitted = term(terms + 1);
    let rounding = 2.0 * d * (terms as f64 + 4.0) * f64::EPSILON * partial.abs() + 4.0 * f64::EPSILON * d;
    Ok(SeriesValue {
        value: d + 2.0 * d * partial,
        tail_bound: 2.0 * d * first_omitted + rounding,
        terms_used: terms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Alpha,
    Beta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSequence {
    pub kind: DiagnosticKind,
    /// 1-based.
    pub index: usize,
    pub value: f64,
    pub inner_truncation: usize,
}

/// Default inner truncation for `alpha_n`/`beta_n` on power-law ensembles.
pub fn default_inner_truncation(n: usize) -> usize {
    (100 * n).max(10_000)
}

fn window(ens: &MaterializedEnsemble, n: usize, inner: usize) -> Result<MaterializedEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("index n is 1-based".into()));
    }
    if n > inner {
        return Err(Error::InvalidParameter(format!(
            "index n = {n} exceeds inner truncation M = {inner}"
        )));
    }
    ens.resized(inner)
}

/// `ln |1 - w|` accurate for small `|w|`.
fn ln_abs_one_minus(w: Complex64) -> f64 {
    0.5 * (-2.0 * w.re + w.norm_sqr()).ln_1p()
}

/// `alpha_n = (1/n) sum_{m <= M, m != n} ln|1 - a_m/a_n|`.
pub fn alpha(ens: &MaterializedEnsemble, n: usize, inner: usize) -> Result<DiagnosticSequence> {
    let ens = window(ens, n, inner)?;
    let an = ens.a[n - 1];
    let mut sum = 0.0;
    for (m, &am) in ens.a.iter().enumerate() {
        if m + 1 == n {
            continue;
        }
        let r = am / an;
        sum += if r > 1.0 { (r - 1.0).ln() } else { (-r).ln_1p() };
    }
    Ok(DiagnosticSequence {
        kind: DiagnosticKind::Alpha,
        index: n,
        value: sum / n as f64,
        inner_truncation: inner,
    })
}

/// `beta_n = (1/n) sum_{m <= M} ln|1 - lambda_m/a_n|`; nonnegative whenever
/// all targets lie in the closed left half-plane.
pub fn beta(
    ens: &MaterializedEnsemble,
    targets: &TargetSpectrum,
    n: usize,
    inner: usize,
) -> Result<DiagnosticSequence> {
    let ens = window(ens, n, inner)?;
    let lambda = targets.materialize(&ens.a)?;
    let an = ens.a[n - 1];
    let sum: f64 = lambda.iter().map(|&l| ln_abs_one_minus(l / an)).sum();
    Ok(DiagnosticSequence {
        kind: DiagnosticKind::Beta,
        index: n,
        value: sum / n as f64,
        inner_truncation: inner,
    })
}
