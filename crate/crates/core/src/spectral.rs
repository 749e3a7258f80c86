//! Spectrum verification without an eigensolver.
//!
//! Placed eigenvalues are confirmed two ways: the closed-form eigenvector
//! `v = b / (a - lambda)` must satisfy `T v = lambda v`, and the winding of
//! `h(z) = 1 + sum k_n b_n / (a_n - z)` around a small circle counts zeros
//! minus poles inside it.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::ensemble::{MaterializedEnsemble, TargetSpectrum};
use crate::error::{Error, Result};
use crate::gain::{gain_infinite, GainVector, PiSequence};

/// Relative distance from a pole `a_n` below which `h` is not evaluated.
pub const POLE_GUARD: f64 = 1e-12;
pub const MIN_SAMPLES: usize = 256;
pub const MAX_SAMPLES: usize = 1 << 16;
/// Largest distance from an integer accepted when snapping a winding number.
pub const SNAP_TOLERANCE: f64 = 0.1;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn check_system(a: &[f64], b: &[Complex64], k: &[Complex64]) -> Result<()> {
    for len in [b.len(), k.len()] {
        if len != a.len() {
            return Err(Error::LengthMismatch {
                expected: a.len(),
                found: len,
            });
        }
    }
    Ok(())
}

/// `T = Diag(a) + b k^T`.
#[derive(Clone, Debug)]
pub struct ClosedLoopOperator {
    pub matrix: DMatrix<Complex64>,
    pub a: Vec<f64>,
    pub b: Vec<Complex64>,
    pub k: Vec<Complex64>,
}

impl ClosedLoopOperator {
    pub fn new(a: &[f64], b: &[Complex64], k: &[Complex64]) -> Result<Self> {
        check_system(a, b, k)?;
        let n = a.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            b[i] * k[j] + if i == j { Complex64::new(a[i], 0.0) } else { zero() }
        });
        Ok(ClosedLoopOperator {
            matrix,
            a: a.to_vec(),
            b: b.to_vec(),
            k: k.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Largest 2x2 minor of `T - Diag(a)`, relative to its squared max entry.
    /// Zero up to rounding exactly when the feedback term has rank <= 1.
    pub fn rank_one_defect(&self) -> f64 {
        let n = self.n();
        let r = DMatrix::from_fn(n, n, |i, j| {
            self.matrix[(i, j)] - if i == j { Complex64::new(self.a[i], 0.0) } else { zero() }
        });
        let scale = r.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let worst = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut w = 0.0f64;
                for j in i + 1..n {
                    for p in 0..n {
                        for q in p + 1..n {
                            let minor = r[(i, p)] * r[(j, q)] - r[(i, q)] * r[(j, p)];
                            w = w.max(minor.norm());
                        }
                    }
                }
                w
            })
            .reduce(|| 0.0, f64::max);
        worst / (scale * scale)
    }

    /// `||T v - lambda v||_inf / ||v||_inf`.
    pub fn residual(&self, v: &[Complex64], lambda: Complex64) -> f64 {
        let v = nalgebra::DVector::from_column_slice(v);
        let r = &self.matrix * &v - &v * lambda;
        let rn = r.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let vn = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        rn / vn
    }
}

/// `h(z) = 1 + sum_n k_n b_n / (a_n - z)`.
pub fn h_eval(a: &[f64], b: &[Complex64], k: &[Complex64], z: Complex64) -> Result<Complex64> {
    check_system(a, b, k)?;
    let mut h = Complex64::new(1.0, 0.0);
    for (n, ((&an, &bn), &kn)) in a.iter().zip(b).zip(k).enumerate() {
        let gap = Complex64::new(an, 0.0) - z;
        if gap.norm() <= POLE_GUARD * an.abs() {
            return Err(Error::PoleProximity { index: n + 1 });
        }
        h += kn * bn / gap;
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub center: Complex64,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindingResult {
    pub center: Complex64,
    pub radius: f64,
    pub samples: usize,
    pub winding: i64,
    /// Unsnapped quadrature value.
    pub estimate: f64,
    pub min_abs_h: f64,
}

fn winding_estimate(
    a: &[f64],
    b: &[Complex64],
    k: &[Complex64],
    contour: Contour,
    samples: usize,
) -> Result<(f64, f64)> {
    let hs: Vec<Complex64> = (0..samples)
        .into_par_iter()
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / samples as f64;
            h_eval(a, b, k, contour.center + Complex64::from_polar(contour.radius, theta))
        })
        .collect::<Result<_>>()?;
    let min_abs_h = hs.iter().map(|h| h.norm()).fold(f64::INFINITY, f64::min);
    let total: f64 = (0..samples).map(|j| (hs[(j + 1) % samples] / hs[j]).arg()).sum();
    Ok((total / (2.0 * PI), min_abs_h))
}

/// Winding number of `h` along a circle. `avoid` lists further points (claimed
/// eigenvalues) the circle must stay clear of, in addition to the poles.
pub fn winding(
    a: &[f64],
    b: &[Complex64],
    k: &[Complex64],
    contour: Contour,
    avoid: &[Complex64],
) -> Result<WindingResult> {
    check_system(a, b, k)?;
    if !(contour.radius > 0.0) || !contour.radius.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "contour radius must be positive, got {}",
            contour.radius
        )));
    }
    let guard = 1e-3 * contour.radius;
    let points = a.iter().map(|&x| Complex64::new(x, 0.0)).chain(avoid.iter().copied());
    for (i, p) in points.enumerate() {
        if ((p - contour.center).norm() - contour.radius).abs() < guard {
            return Err(if i < a.len() {
                Error::PoleProximity { index: i + 1 }
            } else {
                Error::InvalidParameter(format!(
                    "contour passes within {guard:e} of claimed eigenvalue {p}"
                ))
            });
        }
    }

    let mut samples = MIN_SAMPLES;
    let (mut prev, mut min_abs_h) = winding_estimate(a, b, k, contour, samples)?;
    while samples < MAX_SAMPLES {
        samples *= 2;
        let (next, m) = winding_estimate(a, b, k, contour, samples)?;
        min_abs_h = m;
        let agree = (next - prev).abs() < 1e-6
            || ((next - next.round()).abs() < SNAP_TOLERANCE && next.round() == prev.round());
        prev = next;
        if agree {
            break;
        }
    }
    let snapped = prev.round();
    if (prev - snapped).abs() >= SNAP_TOLERANCE {
        return Err(Error::WindingSnap {
            estimate: prev,
            min_abs_h,
        });
    }
    Ok(WindingResult {
        center: contour.center,
        radius: contour.radius,
        samples,
        winding: snapped as i64,
        estimate: prev,
        min_abs_h,
    })
}

/// Residual of the closed-form eigenvector `v = b / (a - lambda)`, scaled so
/// that `k . v = 1`.
pub fn eigvec_residual(a: &[f64], b: &[Complex64], k: &[Complex64], lambda: Complex64) -> Result<f64> {
    let op = ClosedLoopOperator::new(a, b, k)?;
    eigvec_residual_with(&op, lambda)
}

fn eigvec_residual_with(op: &ClosedLoopOperator, lambda: Complex64) -> Result<f64> {
    let mut v = Vec::with_capacity(op.n());
    for (n, (&an, &bn)) in op.a.iter().zip(&op.b).enumerate() {
        let gap = Complex64::new(an, 0.0) - lambda;
        if gap.norm() <= POLE_GUARD * an.abs() {
            return Err(Error::PoleProximity { index: n + 1 });
        }
        v.push(bn / gap);
    }
    let kv: Complex64 = op.k.iter().zip(&v).map(|(k, v)| k * v).sum();
    if kv.norm() < 1e-12 {
        return Err(Error::NotNormalizable(kv.norm()));
    }
    let v: Vec<Complex64> = v.iter().map(|x| x / kv).collect();
    Ok(op.residual(&v, lambda))
}

/// Residual of the open-loop pair `(a_n, e_n)`; zero exactly when `k_n = 0`.
pub fn open_loop_residual(op: &ClosedLoopOperator, n: usize) -> f64 {
    let mut e = vec![zero(); op.n()];
    e[n - 1] = Complex64::new(1.0, 0.0);
    op.residual(&e, Complex64::new(op.a[n - 1], 0.0))
}

/// `P_ij = a_j pi_j / (a_i + a_j)`.
#[derive(Clone, Debug)]
pub struct CauchyOperator {
    pub matrix: DMatrix<f64>,
    pub pi: Vec<f64>,
    /// `max |(P P - I)_ij|`.
    pub involution_residual: f64,
    /// `max_i |sum_j P_ij - 1|`.
    pub row_sum_residual: f64,
}

impl CauchyOperator {
    /// Max row l1 norm of `Diag(|b|) |P| Diag(|b|)^-1`.
    pub fn weighted_row_norm(&self, b: &[Complex64]) -> f64 {
        let n = self.matrix.nrows();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (b[i] / b[j]).norm() * self.matrix[(i, j)].abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Builds `P` from `pi`. The involution `P^2 = I` is exact only when `pi` was
/// computed with product truncation `M = N`; other truncations are accepted
/// and simply show up in the residual.
pub fn build_cauchy(ens: &MaterializedEnsemble, pi: &PiSequence) -> Result<CauchyOperator> {
    let n = ens.len();
    if pi.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: pi.len(),
        });
    }
    let a = &ens.a;
    let matrix = DMatrix::from_fn(n, n, |i, j| a[j] * pi.values[j] / (a[i] + a[j]));
    let involution_residual = (&matrix * &matrix - DMatrix::<f64>::identity(n, n)).amax();
    let row_sum_residual = matrix
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(CauchyOperator {
        matrix,
        pi: pi.values.clone(),
        involution_residual,
        row_sum_residual,
    })
}

/// `T~ = Diag(a) + 1 k~^T` with `k~_n = k_n b_n`.
#[derive(Clone, Debug)]
pub struct TransformedGenerator {
    pub matrix: DMatrix<Complex64>,
    pub k_tilde: Vec<Complex64>,
    pub weights: Vec<Complex64>,
}

impl TransformedGenerator {
    pub fn new(ens: &MaterializedEnsemble, gain: &GainVector) -> Result<Self> {
        check_system(&ens.a, &ens.b, &gain.entries)?;
        let n = ens.len();
        let k_tilde: Vec<Complex64> = gain.entries.iter().zip(&ens.b).map(|(k, b)| k * b).collect();
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            k_tilde[j] + if i == j { Complex64::new(ens.a[i], 0.0) } else { zero() }
        });
        Ok(TransformedGenerator {
            matrix,
            k_tilde,
            weights: ens.b.clone(),
        })
    }

    /// `max |T~ - B^-1 T B|` relative to `max |T~|`.
    pub fn similarity_defect(&self, op: &ClosedLoopOperator) -> f64 {
        let n = self.matrix.nrows();
        let b = &self.weights;
        let conj = DMatrix::from_fn(n, n, |i, j| op.matrix[(i, j)] * b[j] / b[i]);
        let scale = self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max);
        (&self.matrix - conj).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
    }
}

/// `max |P T~ P + Diag(a)|`.
pub fn diagonalization_residual(
    p: &CauchyOperator,
    ens: &MaterializedEnsemble,
    gain: &GainVector,
) -> Result<f64> {
    let t = TransformedGenerator::new(ens, gain)?;
    let pc = p.matrix.map(|x| Complex64::new(x, 0.0));
    let mut d = &pc * &t.matrix * &pc;
    for i in 0..ens.len() {
        d[(i, i)] += ens.a[i];
    }
    Ok(d.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCheck {
    /// 1-based.
    pub n: usize,
    pub eigenvalue: Complex64,
    /// `true` for a placed target, `false` for an untouched open-loop pole.
    pub placed: bool,
    pub residual: Option<f64>,
    pub winding: Option<i64>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n: usize,
    pub n_gain: usize,
    pub modes: Vec<ModeCheck>,
    pub rank_one_defect: f64,
    pub pass: bool,
}

/// Places the first `n_gain` targets with the finite gain `k(lambda; n_gain)`,
/// zero-padded to `N`, and checks that the closed loop has spectrum
/// `{lambda_1..lambda_{n_gain}} U {a_{n_gain+1}..a_N}`.
pub fn verify_truncated_spectrum(
    ens: &MaterializedEnsemble,
    targets: &TargetSpectrum,
    n_gain: usize,
) -> Result<SpectrumReport> {
    let n = ens.len();
    if n_gain > n {
        return Err(Error::InvalidParameter(format!(
            "gain truncation {n_gain} exceeds system size {n}"
        )));
    }
    let lambda = targets.materialize_unchecked(&ens.a)?;
    let k = if n_gain == 0 {
        vec![zero(); n]
    } else {
        let g = gain_infinite(&ens.resized(n_gain)?, targets, n_gain)?;
        if !g.is_finite() {
            let d = g.diverged[0];
            return Err(Error::Diverged {
                index: d.index,
                at_m: d.at_m,
                log_magnitude: d.log_magnitude,
            });
        }
        g.zero_padded(n)
    };
    let op = ClosedLoopOperator::new(&ens.a, &ens.b, &k)?;
    let placed: Vec<Complex64> = lambda[..n_gain].to_vec();

    let modes: Vec<ModeCheck> = (1..=n)
        .into_par_iter()
        .map(|i| {
            if i > n_gain {
                let r = open_loop_residual(&op, i);
                return ModeCheck {
                    n: i,
                    eigenvalue: Complex64::new(ens.a[i - 1], 0.0),
                    placed: false,
                    residual: Some(r),
                    winding: None,
                    error: None,
                    pass: r <= RESIDUAL_TOLERANCE,
                };
            }
            let l = lambda[i - 1];
            let residual = eigvec_residual_with(&op, l);
            let others = placed
                .iter()
                .enumerate()
                .filter(|&(j, _)| j + 1 != i)
                .map(|(_, &z)| z)
                .chain(ens.a.iter().map(|&x| Complex64::new(x, 0.0)));
            let sep = others.map(|z| (z - l).norm()).fold(f64::INFINITY, f64::min);
            let radius = if sep.is_finite() { 0.3 * sep } else { 0.5 * l.norm().max(1e-3) };
            let w = winding(&ens.a, &ens.b, &k, Contour { center: l, radius }, &placed);
            let mut error = None;
            let residual = residual.map_err(|e| error = Some(e.to_string())).ok();
            let winding = w
                .map(|w| w.winding)
                .map_err(|e| {
                    error.get_or_insert(e.to_string());
                })
                .ok();
            let pass = residual.is_some_and(|r| r <= RESIDUAL_TOLERANCE) && winding == Some(1);
            ModeCheck {
                n: i,
                eigenvalue: l,
                placed: true,
                residual,
                winding,
                error,
                pass,
            }
        })
        .collect();
    let pass = modes.iter().all(|m| m.pass);
    Ok(SpectrumReport {
        n,
        n_gain,
        rank_one_defect: op.rank_one_defect(),
        modes,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{DecayFamily, EnsembleSpec, InputFamily, SpaceTag};
    use crate::feasibility::{phi_decay_certificate, ratio_test};
    use crate::gain::{ackermann_finite, gain_mirror, phi_matrix, pi_sequence};
    use proptest::prelude::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn cv(xs: &[f64]) -> Vec<Complex64> {
        xs.iter().map(|&x| c(x)).collect()
    }

    fn geo(n: usize, beta: f64) -> MaterializedEnsemble {
        EnsembleSpec::new(
            DecayFamily::Geometric { ratio: 0.5, scale: 1.0 },
            InputFamily::Geometric { ratio: beta, scale: 1.0 },
            n,
            SpaceTag::L2,
        )
        .materialize()
        .unwrap()
    }

    const A2: [f64; 2] = [0.5, 0.25];

    fn k2() -> Vec<Complex64> {
        cv(&[-3.0, 1.5])
    }

    #[test]
    fn h_examples() {
        let b = cv(&[1.0, 1.0]);
        assert_eq!(h_eval(&A2, &b, &cv(&[0.0, 0.0]), Complex64::new(0.3, 0.7)).unwrap(), c(1.0));
        assert!(h_eval(&A2, &b, &k2(), c(-0.5)).unwrap().norm() < 1e-15);
        assert!(h_eval(&A2, &b, &k2(), c(-0.25)).unwrap().norm() < 1e-15);
        assert_eq!(
            h_eval(&A2, &b, &k2(), c(0.25)).unwrap_err(),
            Error::PoleProximity { index: 2 }
        );
    }

    #[test]
    fn winding_examples() {
        let b = cv(&[1.0, 1.0]);
        let w = |center: f64, radius: f64| {
            winding(&A2, &b, &k2(), Contour { center: c(center), radius }, &cv(&[-0.5, -0.25]))
                .unwrap()
        };
        assert_eq!(w(-0.5, 0.05).winding, 1);
        assert_eq!(w(0.5, 0.05).winding, -1);
        let big = w(0.0, 10.0);
        assert_eq!(big.winding, 0);
        assert!(big.samples >= MIN_SAMPLES);
        assert!((big.estimate - 0.0).abs() < SNAP_TOLERANCE);
    }

    #[test]
    fn winding_guards() {
        let b = cv(&[1.0, 1.0]);
        let on_pole = Contour { center: c(0.0), radius: 0.5 };
        assert!(matches!(winding(&A2, &b, &k2(), on_pole, &[]), Err(Error::PoleProximity { index: 1 })));
        let on_zero = Contour { center: c(0.0), radius: 0.25 + 1e-9 };
        assert!(winding(&A2, &b, &k2(), on_zero, &cv(&[-0.25])).is_err());
    }

    #[test]
    fn eigvec_examples() {
        let b = cv(&[1.0, 1.0]);
        assert!(eigvec_residual(&A2, &b, &k2(), c(-0.5)).unwrap() < 1e-12);
        assert!(eigvec_residual(&A2, &b, &k2(), c(-0.25)).unwrap() < 1e-12);
        // v = (1, 4/3) directly
        let op = ClosedLoopOperator::new(&A2, &b, &k2()).unwrap();
        assert!(op.residual(&cv(&[1.0, 4.0 / 3.0]), c(-0.5)) < 1e-15);
        let open = ClosedLoopOperator::new(&A2, &b, &cv(&[0.0, 0.0])).unwrap();
        assert_eq!(open_loop_residual(&open, 1), 0.0);
        assert!(matches!(
            eigvec_residual(&A2, &b, &cv(&[0.0, 0.0]), c(-1.0)),
            Err(Error::NotNormalizable(_))
        ));
    }

    #[test]
    fn closed_loop_is_rank_one_perturbation() {
        let e = geo(10, 0.8);
        let g = gain_mirror(&e, 10).unwrap();
        let op = ClosedLoopOperator::new(&e.a, &e.b, &g.entries).unwrap();
        assert!(op.rank_one_defect() < 1e-12);
        let mut bad = op.clone();
        bad.matrix[(0, 1)] += c(1.0);
        assert!(bad.rank_one_defect() > 1e-3);
    }

    #[test]
    fn cauchy_examples() {
        let e = geo(2, 1.0);
        let pi = pi_sequence(&e, 2).unwrap();
        let p = build_cauchy(&e, &pi).unwrap();
        let want = [[3.0, -2.0], [4.0, -3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.matrix[(i, j)] - want[i][j]).abs() < 1e-14);
            }
        }
        assert!(p.involution_residual < 1e-14);
        assert!(p.row_sum_residual < 1e-14);
        // the transposed identity does not hold: column sums are 7 and -5
        let cols: Vec<f64> = p.matrix.column_iter().map(|c| c.sum()).collect();
        assert!((cols[0] - 7.0).abs() < 1e-13 && (cols[1] + 5.0).abs() < 1e-13);

        let one = geo(1, 1.0);
        let p1 = build_cauchy(&one, &pi_sequence(&one, 1).unwrap()).unwrap();
        assert_eq!(p1.matrix[(0, 0)], 1.0);
        assert_eq!(p1.involution_residual, 0.0);

        let e8 = geo(8, 1.0);
        let p8 = build_cauchy(&e8, &pi_sequence(&e8, 8).unwrap()).unwrap();
        assert!(p8.involution_residual <= 1e-9, "{}", p8.involution_residual);
    }

    #[test]
    fn diagonalization_examples() {
        let e = geo(2, 1.0);
        let pi = pi_sequence(&e, 2).unwrap();
        let p = build_cauchy(&e, &pi).unwrap();
        let g = gain_mirror(&e, 2).unwrap();
        assert!(diagonalization_residual(&p, &e, &g).unwrap() < 1e-14);

        let one = geo(1, 1.0);
        let p1 = build_cauchy(&one, &pi_sequence(&one, 1).unwrap()).unwrap();
        let g1 = gain_mirror(&one, 1).unwrap();
        let t1 = TransformedGenerator::new(&one, &g1).unwrap();
        assert!((t1.matrix[(0, 0)] + c(0.5)).norm() < 1e-15);
        assert!(diagonalization_residual(&p1, &one, &g1).unwrap() < 1e-15);

        let e12 = geo(12, 0.8);
        let pi12 = pi_sequence(&e12, 12).unwrap();
        let p12 = build_cauchy(&e12, &pi12).unwrap();
        let g12 = gain_mirror(&e12, 12).unwrap();
        assert!(diagonalization_residual(&p12, &e12, &g12).unwrap() <= 1e-8);
        let t = TransformedGenerator::new(&e12, &g12).unwrap();
        let op = ClosedLoopOperator::new(&e12.a, &e12.b, &g12.entries).unwrap();
        assert!(t.similarity_defect(&op) < 1e-10);
    }

    #[test]
    fn truncated_spectrum_examples() {
        let e = geo(4, 1.0);
        let r = verify_truncated_spectrum(&e, &TargetSpectrum::Mirror, 2).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.modes.iter().filter(|m| m.placed).count(), 2);
        assert_eq!(r.modes[2].eigenvalue, c(e.a[2]));

        let open = verify_truncated_spectrum(&e, &TargetSpectrum::Mirror, 0).unwrap();
        assert!(open.pass && open.modes.iter().all(|m| !m.placed));

        let full = verify_truncated_spectrum(&e, &TargetSpectrum::Mirror, 4).unwrap();
        assert!(full.pass);
        assert!(full.modes.iter().all(|m| m.winding == Some(1)));
        assert!(verify_truncated_spectrum(&e, &TargetSpectrum::Mirror, 5).is_err());
    }

    #[test]
    fn weighted_cauchy_norm_is_bounded() {
        let e = geo(10, 0.8);
        let pi = pi_sequence(&e, 10).unwrap();
        let p = build_cauchy(&e, &pi).unwrap();
        let cert = ratio_test(&e);
        let dc = phi_decay_certificate(&phi_matrix(&e), None, Some(&cert)).unwrap();
        assert!(p.weighted_row_norm(&e.b) <= dc.kappa * pi.sup_norm());
    }

    fn distinct_poles() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, 1..=6).prop_map(|mut v| {
            v.sort_by(|x, y| y.total_cmp(x));
            v.dedup_by(|x, y| (*x - *y).abs() < 0.05);
            v
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_h_vanishes_on_targets(a in distinct_poles(), shift in 0.2f64..2.0) {
            let n = a.len();
            let b: Vec<Complex64> = (0..n).map(|i| c(1.0 + 0.3 * i as f64)).collect();
            let lambda: Vec<Complex64> = (0..n).map(|i| c(-shift * (i as f64 + 1.0) / n as f64 - 0.01)).collect();
            let g = ackermann_finite(&a, &b, &lambda).unwrap();
            for l in &lambda {
                let dist = a.iter().map(|&x| (c(x) - l).norm()).fold(f64::INFINITY, f64::min);
                let scale: f64 = g.entries.iter().zip(&b).map(|(k, b)| (k * b).norm()).sum::<f64>() / dist;
                let h = h_eval(&a, &b, &g.entries, *l).unwrap();
                prop_assert!(h.norm() <= 1e-8 * (1.0 + scale));
            }
        }

        #[test]
        fn prop_winding_counts_zeros_minus_poles(n in 1usize..6, j in 1usize..6) {
            let j = j.min(n);
            let e = geo(n, 1.0);
            let g = gain_mirror(&e, n).unwrap();
            let lambda: Vec<Complex64> = e.a.iter().map(|&x| c(-x)).collect();
            // a_1..a_j and -a_1..-a_j lie at |z| >= a_j; the rest within a_{j+1}
            let cut = if j < n { 0.5 * (e.a[j - 1] + e.a[j]) } else { 0.5 * e.a[j - 1] };
            let both = winding(&e.a, &e.b, &g.entries, Contour { center: c(0.0), radius: 2.0 }, &lambda).unwrap();
            prop_assert_eq!(both.winding, 0);
            // annulus-free alternatives: circles around the left and right clusters
            let left = Contour { center: c(-0.5 * (1.0 + cut)), radius: 0.5 * (1.0 - cut) };
            let right = Contour { center: c(0.5 * (1.0 + cut)), radius: 0.5 * (1.0 - cut) };
            let wl = winding(&e.a, &e.b, &g.entries, left, &lambda).unwrap();
            let wr = winding(&e.a, &e.b, &g.entries, right, &lambda).unwrap();
            prop_assert_eq!(wl.winding, j as i64);
            prop_assert_eq!(wr.winding, -(j as i64));
        }

        #[test]
        fn prop_cauchy_involution_and_rows(ratio in 0.2f64..0.6, n in 1usize..10) {
            let e = EnsembleSpec::new(
                DecayFamily::Geometric { ratio, scale: 1.0 },
                InputFamily::constant(1.0), n, SpaceTag::L2).materialize().unwrap();
            let p = build_cauchy(&e, &pi_sequence(&e, n).unwrap()).unwrap();
            let scale = p.matrix.amax().powi(2).max(1.0);
            prop_assert!(p.involution_residual <= 1e-12 * scale, "{}", p.involution_residual);
            prop_assert!(p.row_sum_residual <= 1e-12 * p.matrix.amax().max(1.0));
        }
    }
}
