//! Feedback gains for the diagonal ensemble.
//!
//! For targets `lambda` the gain entry is
//!
//! ```text
//! k_n = -((a_n - lambda_n) / b_n) * prod_{m != n} (1 - lambda_m/a_n) / (1 - a_m/a_n)
//! ```
//!
//! taken over `m <= N` for the finite (Ackermann) gain and over `m <= M` for
//! the truncated infinite-product gain. Products are accumulated as
//! log-magnitude plus phase/sign so that factors spanning many decades neither
//! overflow nor underflow before the final exponentiation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::ensemble::{MaterializedEnsemble, TargetSpectrum};
use crate::error::{Error, Result};

/// Running log-magnitude beyond which an entry is declared divergent.
pub const DIVERGENCE_LOG_THRESHOLD: f64 = 700.0;

/// Largest system handled by the explicit Vandermonde-inverse oracle.
pub const ORACLE_MAX_N: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    FiniteAckermann,
    TruncatedInfinite,
    MirrorViaPi,
    VandermondeOracle,
}

/// Where the divergence guard tripped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// 1-based entry index.
    pub index: usize,
    /// Product index at which the running log-magnitude crossed the threshold.
    pub at_m: usize,
    pub log_magnitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainVector {
    /// `k_1..k_N`; diverged entries hold NaN.
    pub entries: Vec<Complex64>,
    /// Estimated relative error from neglecting factors `m > M`. A first-order
    /// estimate, not a certified bound.
    pub per_entry_tail: Vec<f64>,
    pub mode: GainMode,
    pub n: usize,
    pub m: usize,
    pub diverged: Vec<Divergence>,
}

impl GainVector {
    pub fn is_finite(&self) -> bool {
        self.diverged.is_empty() && self.entries.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).sum()
    }

    /// The gain extended by zeros to `len` entries (`k(lambda; N)` viewed as an
    /// eventually-zero sequence).
    pub fn zero_padded(&self, len: usize) -> Vec<Complex64> {
        let mut out = self.entries.clone();
        out.resize(len.max(out.len()), Complex64::new(0.0, 0.0));
        out
    }
}

/// Product truncation used when none is configured: `32 N` for geometric
/// poles, `N^2` for power laws, `N` for explicit data.
pub fn default_product_truncation(ens: &MaterializedEnsemble) -> usize {
    let n = ens.len();
    if ens.is_geometric() {
        32 * n
    } else if ens.is_power() {
        n * n
    } else {
        n
    }
}

fn check_lengths(a: &[f64], b: &[Complex64], lambda: &[Complex64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::InvalidParameter("empty system".into()));
    }
    for len in [b.len(), lambda.len()] {
        if len != a.len() {
            return Err(Error::LengthMismatch {
                expected: a.len(),
                found: len,
            });
        }
    }
    Ok(())
}

/// Ackermann gain of the `N`-dimensional system `(Diag(a), b)` by direct
/// complex multiplication of the product formula.
pub fn ackermann_finite(a: &[f64], b: &[Complex64], lambda: &[Complex64]) -> Result<GainVector> {
    check_lengths(a, b, lambda)?;
    let n_sys = a.len();
    let mut entries = Vec::with_capacity(n_sys);
    for n in 0..n_sys {
        let an = a[n];
        let mut k = -(an - lambda[n]) / b[n];
        for m in 0..n_sys {
            if m == n {
                continue;
            }
            if a[m] == an {
                return Err(Error::DuplicatePole {
                    first: n.min(m) + 1,
                    second: n.max(m) + 1,
                });
            }
            k *= (1.0 - lambda[m] / an) / (1.0 - a[m] / an);
        }
        if !(k.re.is_finite() && k.im.is_finite()) {
            return Err(Error::NonFinite { index: n + 1 });
        }
        entries.push(k);
    }
    Ok(GainVector {
        entries,
        per_entry_tail: vec![0.0; n_sys],
        mode: GainMode::FiniteAckermann,
        n: n_sys,
        m: n_sys,
        diverged: Vec::new(),
    })
}

/// Ackermann gain computed the textbook way, `k = -e_N C(A,b)^-1 q(A)`, with
/// `C = Diag(b) V` and the structured inverse `V^-1 = L V^T D^-1`.
#[derive(Clone, Debug)]
pub struct OracleGain {
    pub gain: GainVector,
    /// Max-norm of `V V^-1 - I`.
    pub vandermonde_residual: f64,
}

/// Coefficients `c_0..c_N` (ascending, `c_N = 1`) of `prod (z - roots_i)`.
fn monic_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i + 1] += ci;
            next[i] -= r * ci;
        }
        c = next;
    }
    c
}

fn horner(coeffs: &[Complex64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

pub fn ackermann_oracle(a: &[f64], b: &[Complex64], lambda: &[Complex64]) -> Result<OracleGain> {
    check_lengths(a, b, lambda)?;
    let n_sys = a.len();
    if n_sys > ORACLE_MAX_N {
        return Err(Error::ConditionGuard(n_sys));
    }
    let v = DMatrix::from_fn(n_sys, n_sys, |i, j| a[i].powi(j as i32));

    let a_roots: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let p = monic_from_roots(&a_roots);
    // Hankel matrix: L[i][j] = c_{i+j+1} (0-based), zero below the anti-diagonal
    let l = DMatrix::from_fn(n_sys, n_sys, |i, j| {
        let idx = i + j + 1;
        if idx <= n_sys {
            p[idx].re
        } else {
            0.0
        }
    });
    let mut d_inv = DMatrix::<f64>::zeros(n_sys, n_sys);
    for i in 0..n_sys {
        let mut d = 1.0;
        for m in 0..n_sys {
            if m != i {
                if a[m] == a[i] {
                    return Err(Error::DuplicatePole {
                        first: i.min(m) + 1,
                        second: i.max(m) + 1,
                    });
                }
                d *= a[i] - a[m];
            }
        }
        d_inv[(i, i)] = 1.0 / d;
    }
    let v_inv = &l * v.transpose() * d_inv;
    let residual = (&v * &v_inv - DMatrix::<f64>::identity(n_sys, n_sys)).amax();

    // C^-1 = V^-1 Diag(b)^-1, complex because b may be
    let v_inv_c = v_inv.map(|x| Complex64::new(x, 0.0));
    let b_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n_sys,
        b.iter().map(|&bi| 1.0 / bi),
    ));
    let c_inv = v_inv_c * b_inv;

    let q = monic_from_roots(lambda);
    let q_of_a = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n_sys,
        a.iter().map(|&x| horner(&q, Complex64::new(x, 0.0))),
    ));
    let row = c_inv.row(n_sys - 1) * q_of_a;
    let entries: Vec<Complex64> = row.iter().map(|&x| -x).collect();
    if let Some(i) = entries.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite { index: i + 1 });
    }
    Ok(OracleGain {
        gain: GainVector {
            entries,
            per_entry_tail: vec![0.0; n_sys],
            mode: GainMode::VandermondeOracle,
            n: n_sys,
            m: n_sys,
            diverged: Vec::new(),
        },
        vandermonde_residual: residual,
    })
}

/// Outcome of one log-accumulated product entry.
enum Entry {
    Value(Complex64),
    Diverged(Divergence),
}

/// Log-magnitude/phase accumulation of `k_n` over the window `a[..]`,
/// ascending in `m`.
fn log_product_entry(
    n: usize,
    a: &[f64],
    b: Complex64,
    lambda: &[Complex64],
) -> Result<Entry> {
    let an = a[n];
    let lead = an - lambda[n];
    if lead == Complex64::new(0.0, 0.0) {
        return Ok(Entry::Value(Complex64::new(0.0, 0.0)));
    }
    let mut log_mag = lead.norm().ln() - b.norm().ln();
    let mut phase = lead.arg() - b.arg();
    let mut negative = true;
    for (m, (&am, &lm)) in a.iter().zip(lambda).enumerate() {
        if m == n {
            continue;
        }
        if am == an {
            return Err(Error::DuplicatePole {
                first: n.min(m) + 1,
                second: n.max(m) + 1,
            });
        }
        let num = 1.0 - lm / an;
        if num == Complex64::new(0.0, 0.0) {
            return Ok(Entry::Value(Complex64::new(0.0, 0.0)));
        }
        let r = am / an;
        // ln|1 - r| without cancellation for small r
        let ln_den = if r > 1.0 { (r - 1.0).ln() } else { (-r).ln_1p() };
        if r > 1.0 {
            negative = !negative;
        }
        let ln_num = if num.im == 0.0 {
            num.re.abs().ln()
        } else {
            num.norm().ln()
        };
        if num.re < 0.0 && num.im == 0.0 {
            negative = !negative;
        } else if num.im != 0.0 {
            phase += num.arg();
        }
        log_mag += ln_num - ln_den;
        if log_mag > DIVERGENCE_LOG_THRESHOLD {
            return Ok(Entry::Diverged(Divergence {
                index: n + 1,
                at_m: m + 1,
                log_magnitude: log_mag,
            }));
        }
    }
    let sign = if negative { -1.0 } else { 1.0 };
    let phase = phase.rem_euclid(2.0 * PI);
    Ok(Entry::Value(Complex64::from_polar(sign * log_mag.exp(), phase)))
}

/// First-order relative tail of the neglected factors `m > M`:
/// `sum_{m>M} (|lambda_m| + a_m) / (a_n - a_{M+1})`, mapped through `expm1`.
fn tail_estimates(
    ens: &MaterializedEnsemble,
    a_window: &[f64],
    n_entries: usize,
    neglected: f64,
) -> Vec<f64> {
    if neglected == 0.0 {
        return vec![0.0; n_entries];
    }
    let m = a_window.len();
    let next = ens.resized(m + 1).map(|e| e.a[m]).unwrap_or(0.0);
    a_window[..n_entries]
        .iter()
        .map(|&an| {
            let gap = an - next;
            if gap > 0.0 {
                (neglected / gap).exp_m1()
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// `k(lambda)` for the first `N = ens.len()` entries with products truncated
/// at `M >= N`. At `M = N` this is exactly the finite Ackermann gain.
pub fn gain_infinite(
    ens: &MaterializedEnsemble,
    targets: &TargetSpectrum,
    m: usize,
) -> Result<GainVector> {
    let n = ens.len();
    if m < n {
        return Err(Error::InvalidParameter(format!(
            "product truncation M = {m} is shorter than N = {n}"
        )));
    }
    let window = ens.resized(m)?;
    let lambda = targets.materialize_unchecked(&window.a)?;

    let results: Vec<Result<Entry>> = (0..n)
        .into_par_iter()
        .map(|i| log_product_entry(i, &window.a, window.b[i], &lambda))
        .collect();

    let mut entries = Vec::with_capacity(n);
    let mut diverged = Vec::new();
    for r in results {
        match r? {
            Entry::Value(z) => entries.push(z),
            Entry::Diverged(d) => {
                entries.push(Complex64::new(f64::NAN, f64::NAN));
                diverged.push(d);
            }
        }
    }
    let neglected = targets.tail_sum(ens, m) + ens.a_tail_sum(m);
    let per_entry_tail = tail_estimates(ens, &window.a, n, neglected);
    Ok(GainVector {
        entries,
        per_entry_tail,
        mode: GainMode::TruncatedInfinite,
        n,
        m,
        diverged,
    })
}

/// `pi_n = 2 prod_{m != n, m <= M} (1 + a_m/a_n)/(1 - a_m/a_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiSequence {
    pub values: Vec<f64>,
    pub log_abs: Vec<f64>,
    pub m: usize,
}

impl PiSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }
}

pub fn pi_sequence(ens: &MaterializedEnsemble, m: usize) -> Result<PiSequence> {
    let n = ens.len();
    if m < n {
        return Err(Error::InvalidParameter(format!(
            "product truncation M = {m} is shorter than N = {n}"
        )));
    }
    let window = ens.resized(m)?;
    let a = &window.a;
    let logs: Vec<Result<(f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let an = a[i];
            let mut log_mag = LN_2;
            let mut negative = false;
            for (j, &am) in a.iter().enumerate() {
                if j == i {
                    continue;
                }
                if am == an {
                    return Err(Error::DuplicatePole {
                        first: i.min(j) + 1,
                        second: i.max(j) + 1,
                    });
                }
                let r = am / an;
                if r > 1.0 {
                    negative = !negative;
                    log_mag += (r + 1.0).ln() - (r - 1.0).ln();
                } else {
                    log_mag += r.ln_1p() - (-r).ln_1p();
                }
                if log_mag > DIVERGENCE_LOG_THRESHOLD {
                    return Err(Error::Diverged {
                        index: i + 1,
                        at_m: j + 1,
                        log_magnitude: log_mag,
                    });
                }
            }
            Ok((log_mag, negative))
        })
        .collect();
    let mut values = Vec::with_capacity(n);
    let mut log_abs = Vec::with_capacity(n);
    for r in logs {
        let (l, neg) = r?;
        log_abs.push(l);
        values.push(if neg { -l.exp() } else { l.exp() });
    }
    Ok(PiSequence { values, log_abs, m })
}

/// Mirror gain `k_n(-a) = -a_n pi_n / b_n`.
pub fn gain_mirror(ens: &MaterializedEnsemble, m: usize) -> Result<GainVector> {
    let pi = pi_sequence(ens, m)?;
    Ok(gain_mirror_from_pi(ens, &pi))
}

pub fn gain_mirror_from_pi(ens: &MaterializedEnsemble, pi: &PiSequence) -> GainVector {
    let entries = ens
        .a
        .iter()
        .zip(&ens.b)
        .zip(&pi.values)
        .map(|((&a, &b), &p)| -(a * p) / b)
        .collect();
    let window: Vec<f64> = ens.resized(pi.m).map(|e| e.a).unwrap_or_else(|_| ens.a.clone());
    let neglected = 2.0 * ens.a_tail_sum(pi.m);
    let per_entry_tail = tail_estimates(ens, &window, ens.len(), neglected);
    GainVector {
        entries,
        per_entry_tail,
        mode: GainMode::MirrorViaPi,
        n: ens.len(),
        m: pi.m,
        diverged: Vec::new(),
    }
}

/// `phi_ij = |b_i / b_j| / (1 + a_i / a_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiMatrix {
    pub values: DMatrix<f64>,
}

impl PhiMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn max_row_sum(&self) -> f64 {
        self.values
            .row_iter()
            .map(|r| r.sum())
            .fold(0.0, f64::max)
    }

    pub fn max_column_sum(&self) -> f64 {
        self.values
            .column_iter()
            .map(|c| c.sum())
            .fold(0.0, f64::max)
    }
}

pub fn phi_matrix(ens: &MaterializedEnsemble) -> PhiMatrix {
    let n = ens.len();
    PhiMatrix {
        values: DMatrix::from_fn(n, n, |i, j| {
            (ens.b[i] / ens.b[j]).norm() / (1.0 + ens.a[i] / ens.a[j])
        }),
    }
}

/// Distance of `k(lambda; N)` from the proxy limit `k(lambda; M)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: usize,
    /// `||k(lambda; N) - k(lambda; M)||_1` with `k(lambda; N)` zero-padded.
    pub deviation_l1: f64,
    /// `|r_n(N)| = |k_n(lambda; N) / k_n(lambda; M)|` for `n <= N`, skipping
    /// zero entries of the proxy.
    pub ratio_moduli: Vec<f64>,
}

impl ConvergencePoint {
    pub fn max_ratio(&self) -> Option<f64> {
        self.ratio_moduli.iter().copied().reduce(f64::max)
    }
}

pub fn convergence_diagnostic(
    ens: &MaterializedEnsemble,
    targets: &TargetSpectrum,
    n_list: &[usize],
    m: usize,
) -> Result<Vec<ConvergencePoint>> {
    let limit_window = ens.resized(m)?;
    let limit = gain_infinite(&limit_window, targets, m)?;
    if let Some(d) = limit.diverged.first() {
        return Err(Error::Diverged {
            index: d.index,
            at_m: d.at_m,
            log_magnitude: d.log_magnitude,
        });
    }
    n_list
        .iter()
        .map(|&n| {
            if n == 0 || n > m {
                return Err(Error::InvalidParameter(format!(
                    "truncation N = {n} must lie in 1..={m}"
                )));
            }
            let window = ens.resized(n)?;
            let finite = gain_infinite(&window, targets, n)?;
            if let Some(d) = finite.diverged.first() {
                return Err(Error::Diverged {
                    index: d.index,
                    at_m: d.at_m,
                    log_magnitude: d.log_magnitude,
                });
            }
            let padded = finite.zero_padded(m);
            let deviation_l1 = padded
                .iter()
                .zip(&limit.entries)
                .map(|(x, y)| (x - y).norm())
                .sum();
            let ratio_moduli = finite
                .entries
                .iter()
                .zip(&limit.entries)
                .filter(|(_, y)| y.norm() > 0.0)
                .map(|(x, y)| (x / y).norm())
                .collect();
            Ok(ConvergencePoint {
                n,
                deviation_l1,
                ratio_moduli,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{DecayFamily, EnsembleSpec, InputFamily, SpaceTag};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn cv(xs: &[f64]) -> Vec<Complex64> {
        xs.iter().map(|&x| c(x)).collect()
    }

    fn geometric(n: usize, beta: f64) -> MaterializedEnsemble {
        EnsembleSpec::new(
            DecayFamily::Geometric { ratio: 0.5, scale: 1.0 },
            InputFamily::Geometric { ratio: beta, scale: 1.0 },
            n,
            SpaceTag::L2,
        )
        .materialize()
        .unwrap()
    }

    fn power(d: f64, n: usize) -> MaterializedEnsemble {
        EnsembleSpec::new(
            DecayFamily::Power { exponent: d, scale: 1.0 },
            InputFamily::constant(1.0),
            n,
            SpaceTag::L2,
        )
        .materialize()
        .unwrap()
    }

    /// Characteristic polynomial coefficients of a small complex matrix by
    /// Faddeev-LeVerrier, ascending with leading 1.
    fn charpoly(t: &DMatrix<Complex64>) -> Vec<Complex64> {
        let n = t.nrows();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n + 1];
        coeffs[n] = c(1.0);
        let mut mk = DMatrix::<Complex64>::zeros(n, n);
        for k in 1..=n {
            let mut next = t * &mk;
            for i in 0..n {
                next[(i, i)] += coeffs[n - k + 1];
            }
            mk = next;
            let tr = (t * &mk).trace();
            coeffs[n - k] = -tr / c(k as f64);
        }
        coeffs
    }

    fn closed_loop(a: &[f64], b: &[Complex64], k: &[Complex64]) -> DMatrix<Complex64> {
        let n = a.len();
        DMatrix::from_fn(n, n, |i, j| b[i] * k[j] + if i == j { c(a[i]) } else { c(0.0) })
    }

    #[test]
    fn one_dimensional_shift() {
        let g = ackermann_finite(&[2.0], &cv(&[4.0]), &cv(&[-2.0])).unwrap();
        assert_eq!(g.entries, vec![c(-1.0)]);
        assert_eq!(2.0 + 4.0 * g.entries[0].re, -2.0);
    }

    #[test]
    fn two_dimensional_placement() {
        let (a, b, l) = ([2.0, 1.0], cv(&[1.0, 1.0]), cv(&[-1.0, -2.0]));
        let g = ackermann_finite(&a, &b, &l).unwrap();
        assert_relative_eq!(g.entries[0].re, -12.0, max_relative = 1e-14);
        assert_relative_eq!(g.entries[1].re, 6.0, max_relative = 1e-14);
        let t = closed_loop(&a, &b, &g.entries);
        assert_relative_eq!(t.trace().re, -3.0, max_relative = 1e-14);
        assert_relative_eq!(t.determinant().re, 2.0, max_relative = 1e-12);

        let o = ackermann_oracle(&a, &b, &l).unwrap();
        for (x, y) in o.gain.entries.iter().zip(&g.entries) {
            assert!((x - y).norm() <= 1e-9 * y.norm());
        }
        assert!(o.vandermonde_residual < 1e-14);
    }

    #[test]
    fn targets_equal_to_poles_give_zero_gain() {
        let a = [0.5, 0.25, 0.125];
        let g = ackermann_finite(&a, &cv(&[1.0; 3]), &cv(&a)).unwrap();
        assert!(g.entries.iter().all(|z| *z == c(0.0)));
    }

    #[test]
    fn oracle_agrees_on_three_modes_and_scalar() {
        let a = [0.5, 0.25, 0.125];
        let b = cv(&[1.0; 3]);
        let l = cv(&[-0.5, -0.25, -0.125]);
        let g = ackermann_finite(&a, &b, &l).unwrap();
        let o = ackermann_oracle(&a, &b, &l).unwrap();
        for (x, y) in o.gain.entries.iter().zip(&g.entries) {
            assert!((x - y).norm() <= 1e-8 * y.norm());
        }
        let g1 = ackermann_finite(&[0.3], &cv(&[2.0]), &cv(&[-1.0])).unwrap();
        let o1 = ackermann_oracle(&[0.3], &cv(&[2.0]), &cv(&[-1.0])).unwrap();
        assert!((g1.entries[0] - o1.gain.entries[0]).norm() < 1e-15);
    }

    #[test]
    fn oracle_refuses_large_systems() {
        let a: Vec<f64> = (1..=9).map(|n| 0.5f64.powi(n)).collect();
        let b = cv(&[1.0; 9]);
        let l = cv(&a.iter().map(|x| -x).collect::<Vec<_>>());
        assert_eq!(ackermann_oracle(&a, &b, &l).unwrap_err(), Error::ConditionGuard(9));
    }

    #[test]
    fn duplicate_poles_are_rejected() {
        let err = ackermann_finite(&[1.0, 1.0], &cv(&[1.0, 1.0]), &cv(&[-1.0, -2.0])).unwrap_err();
        assert_eq!(err, Error::DuplicatePole { first: 1, second: 2 });
    }

    #[test]
    fn infinite_gain_two_mode_mirror() {
        let ens = geometric(2, 1.0);
        let g = gain_infinite(&ens, &TargetSpectrum::Mirror, 2).unwrap();
        assert_relative_eq!(g.entries[0].re, -3.0, max_relative = 1e-14);
        assert_relative_eq!(g.entries[1].re, 1.5, max_relative = 1e-14);
        // the geometric family continues past M, so the tails are positive estimates
        assert!(g.per_entry_tail.iter().all(|&t| t > 0.0 && t.is_finite()));
        let f = ackermann_finite(&ens.a, &ens.b, &cv(&[-0.5, -0.25])).unwrap();
        for (x, y) in f.entries.iter().zip(&g.entries) {
            assert!((x - y).norm() <= 1e-14 * y.norm());
        }
    }

    #[test]
    fn infinite_gain_vanishes_on_poles() {
        let ens = geometric(6, 0.8);
        let targets = TargetSpectrum::Explicit {
            values: ens.resized(200).unwrap().a.iter().map(|&x| x.into()).collect(),
        };
        let g = gain_infinite(&ens, &targets, 192).unwrap();
        assert!(g.entries.iter().all(|z| *z == c(0.0)));
    }

    #[test]
    fn zero_targets_on_slow_power_law_grow() {
        let ens = power(1.5, 40);
        let g = gain_infinite(&ens, &TargetSpectrum::Zero, 2000).unwrap();
        assert!(g.diverged.is_empty());
        let mags: Vec<f64> = g.entries[19..40].iter().map(|z| z.norm()).collect();
        assert!(mags.windows(2).all(|w| w[1] > w[0]));
        // independent recomputation of one entry by plain multiplication in f64
        let window = ens.resized(2000).unwrap();
        let n = 25;
        let an = window.a[n - 1];
        let mut log = an.ln();
        for (m, &am) in window.a.iter().enumerate() {
            if m + 1 != n {
                log -= (1.0 - am / an).abs().ln();
            }
        }
        assert_relative_eq!(g.entries[n - 1].norm().ln(), log, max_relative = 1e-10);
    }

    #[test]
    fn divergence_is_reported_as_data() {
        let ens = power(1.5, 1000);
        let g = gain_infinite(&ens, &TargetSpectrum::Zero, 4000).unwrap();
        assert!(!g.diverged.is_empty());
        let d = g.diverged[0];
        assert!(d.log_magnitude > DIVERGENCE_LOG_THRESHOLD);
        assert!(g.entries[d.index - 1].re.is_nan());
        assert!(!g.is_finite());
    }

    #[test]
    fn pi_examples() {
        let ens = geometric(2, 1.0);
        let pi = pi_sequence(&ens, 2).unwrap();
        assert_relative_eq!(pi.values[0], 6.0, max_relative = 1e-14);
        assert_relative_eq!(pi.values[1], -6.0, max_relative = 1e-14);
        let s: f64 = (0..2)
            .map(|i| ens.a[i] * pi.values[i] / (ens.a[i] + ens.a[0]))
            .sum();
        assert_relative_eq!(s, 1.0, max_relative = 1e-14);

        let one = geometric(1, 1.0);
        assert_eq!(pi_sequence(&one, 1).unwrap().values, vec![2.0]);
    }

    #[test]
    fn pi_identity_holds_at_self_consistent_truncation() {
        let ens = geometric(10, 0.8);
        let pi = pi_sequence(&ens, 10).unwrap();
        for j in 0..10 {
            let s: f64 = (0..10)
                .map(|i| ens.a[i] * pi.values[i] / (ens.a[i] + ens.a[j]))
                .sum();
            assert!((s - 1.0).abs() < 1e-10, "column {j}: {s}");
        }
    }

    #[test]
    fn mirror_gain_examples() {
        let ens = geometric(2, 1.0);
        let g = gain_mirror(&ens, 2).unwrap();
        assert_relative_eq!(g.entries[0].re, -3.0, max_relative = 1e-14);
        assert_relative_eq!(g.entries[1].re, 1.5, max_relative = 1e-14);

        let one = MaterializedEnsemble::from_real(&[0.5], &[2.0], SpaceTag::L2).unwrap();
        assert_eq!(gain_mirror(&one, 1).unwrap().entries, vec![c(-0.5)]);
    }

    #[test]
    fn mirror_gain_is_summable_for_separated_ensemble() {
        let ens = geometric(16, 0.8);
        let g = gain_mirror(&ens, 512).unwrap();
        let mags: Vec<f64> = g.entries.iter().map(|z| z.norm()).collect();
        let total: f64 = mags.iter().sum();
        assert!(total.is_finite());
        // neglected product factors beyond M = 512 are negligible
        let tail_mass: f64 = mags.iter().zip(&g.per_entry_tail).map(|(k, t)| k * t).sum();
        assert!(tail_mass < 1e-6 * total);
        // entries eventually decay geometrically, so partial sums are Cauchy
        let q = mags[15] / mags[14];
        assert!(mags[6..].windows(2).all(|w| w[1] < w[0]));
        assert!(q < 0.7);
        let remainder = mags[15] * q / (1.0 - q);
        assert!(remainder < 0.01 * total);
    }

    #[test]
    fn phi_examples() {
        let ens = geometric(3, 0.8);
        let phi = phi_matrix(&ens);
        for i in 0..3 {
            assert_relative_eq!(phi.values[(i, i)], 0.5, max_relative = 1e-15);
        }
        assert_relative_eq!(phi.values[(0, 1)], 1.25 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(phi.values[(1, 0)], 0.8 / 1.5, max_relative = 1e-14);
        let flat = phi_matrix(&geometric(3, 1.0));
        assert_relative_eq!(flat.values[(0, 1)], 1.0 / 3.0, max_relative = 1e-14);
        assert!(flat.values.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn convergence_examples() {
        let ens = power(3.5, 32);
        let pts = convergence_diagnostic(&ens, &TargetSpectrum::Zero, &[8, 16, 32], 512).unwrap();
        let devs: Vec<f64> = pts.iter().map(|p| p.deviation_l1).collect();
        assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");
        for p in &pts {
            assert!(p.ratio_moduli.iter().all(|&r| r < 1.0));
        }

        let geo = geometric(8, 0.8);
        let values = geo.resized(64).unwrap().a.iter().map(|&x| x.into()).collect();
        let on_poles = TargetSpectrum::Explicit { values };
        let pts = convergence_diagnostic(&geo, &on_poles, &[2, 4, 8], 64).unwrap();
        assert!(pts.iter().all(|p| p.deviation_l1 == 0.0 && p.ratio_moduli.is_empty()));

        let pts = convergence_diagnostic(&ens, &TargetSpectrum::Mirror, &[64], 64).unwrap();
        assert_eq!(pts[0].deviation_l1, 0.0);
    }

    fn sorted_distinct_poles() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, 1..=6).prop_filter_map("distinct", |mut v| {
            v.sort_by(|x, y| y.total_cmp(x));
            v.dedup_by(|x, y| (*x - *y).abs() < 0.02);
            Some(v)
        })
    }

    fn elementary_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
        monic_from_roots(roots)
    }

    proptest! {
        #[test]
        fn prop_finite_matches_log_product(a in sorted_distinct_poles(),
                                           shift in 0.1f64..2.0, bval in 0.2f64..3.0) {
            let n = a.len();
            let b: Vec<Complex64> = (0..n).map(|i| c(bval * (1.0 + 0.1 * i as f64))).collect();
            let lambda: Vec<Complex64> = a.iter().enumerate()
                .map(|(i, &x)| Complex64::new(-shift * x - 0.01 * i as f64, 0.05 * i as f64)).collect();
            let ens = MaterializedEnsemble::from_parts(a.clone(), b.clone(), SpaceTag::L2).unwrap();
            let targets = TargetSpectrum::Explicit { values: lambda.iter().map(|&z| z.into()).collect() };
            let f = ackermann_finite(&a, &b, &lambda).unwrap();
            let g = gain_infinite(&ens, &targets, n).unwrap();
            for (x, y) in f.entries.iter().zip(&g.entries) {
                prop_assert!((x - y).norm() <= 1e-12 * y.norm().max(1e-300));
            }
            // characteristic polynomial of the closed loop equals prod (z - lambda_n)
            let t = closed_loop(&a, &b, &f.entries);
            let got = charpoly(&t);
            let want = elementary_from_roots(&lambda);
            // Faddeev-LeVerrier loses accuracy like ||T||^N
            let scale = (1.0 + t.norm()).powi(n as i32);
            for (x, y) in got.iter().zip(&want) {
                prop_assert!((x - y).norm() <= 1e-12 * scale, "{got:?} vs {want:?}");
            }
        }

        #[test]
        fn prop_pi_signs_alternate_and_grow(ratio in 0.2f64..0.8, n in 1usize..12) {
            let ens = EnsembleSpec::new(
                DecayFamily::Geometric { ratio, scale: 1.0 },
                InputFamily::constant(1.0), n, SpaceTag::L2).materialize().unwrap();
            let mut prev: Option<PiSequence> = None;
            for m in [n, n + 1, n + 3, 2 * n + 5, 4 * n + 20] {
                let pi = pi_sequence(&ens, m).unwrap();
                for (i, v) in pi.values.iter().enumerate() {
                    let expected = if i % 2 == 0 { 1.0 } else { -1.0 };
                    prop_assert_eq!(v.signum(), expected);
                }
                if let Some(p) = &prev {
                    for (x, y) in p.values.iter().zip(&pi.values) {
                        prop_assert!(y.abs() >= x.abs());
                    }
                }
                prev = Some(pi);
            }
        }

        #[test]
        fn prop_mirror_equals_infinite_mirror(ratio in 0.2f64..0.7, beta in 0.3f64..1.2, n in 1usize..14) {
            let ens = EnsembleSpec::new(
                DecayFamily::Geometric { ratio, scale: 1.0 },
                InputFamily::Geometric { ratio: beta, scale: 1.0 }, n, SpaceTag::L2)
                .materialize().unwrap();
            let m = 8 * n;
            let g1 = gain_mirror(&ens, m).unwrap();
            let g2 = gain_infinite(&ens, &TargetSpectrum::Mirror, m).unwrap();
            for (x, y) in g1.entries.iter().zip(&g2.entries) {
                prop_assert!((x - y).norm() <= 1e-12 * y.norm());
            }
        }

        #[test]
        fn prop_zero_targets_minimize_modulus(ratio in 0.2f64..0.7, n in 1usize..10,
                                             lam in prop::collection::vec((-2.0f64..=0.0, -1.0f64..1.0), 10)) {
            let ens = EnsembleSpec::new(
                DecayFamily::Geometric { ratio, scale: 1.0 },
                InputFamily::constant(1.0), n, SpaceTag::L2).materialize().unwrap();
            let targets = TargetSpectrum::Explicit {
                values: lam.iter().map(|&(re, im)| crate::ensemble::ComplexValue::Pair([re, im])).collect(),
            };
            let g = gain_infinite(&ens, &targets, n).unwrap();
            let g0 = gain_infinite(&ens, &TargetSpectrum::Zero, n).unwrap();
            for (x, y) in g.entries.iter().zip(&g0.entries) {
                prop_assert!(x.norm() >= y.norm() * (1.0 - 1e-12));
            }
        }
    }
}
