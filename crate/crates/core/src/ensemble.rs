//! Ensembles of scalar systems `x_n' = a_n x_n + b_n u`, the sequence spaces
//! they evolve in, and the target spectra used for pole placement.
//!
//! Everything downstream works on a finite window `1..=N` of the infinite
//! ensemble. A [`MaterializedEnsemble`] remembers the family it was sampled
//! from so that product truncations longer than `N` can be formed without
//! re-reading configuration.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}

/// Law for the open-loop poles `a_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DecayFamily {
    /// `a_n = scale * ratio^n`, `ratio` in (0, 1).
    Geometric {
        ratio: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `a_n = scale * n^(-exponent)`, `exponent > 1`.
    Power {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Explicit { values: Vec<f64> },
}

/// Law for the input gains `b_n`.
///
/// Unlike the poles, a geometric input law may have ratio 1 (constant `b`)
/// or above, and a power law may have any exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InputFamily {
    /// `b_n = scale * ratio^n`, `ratio > 0`.
    Geometric {
        ratio: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `b_n = scale * n^(-exponent)`.
    Power {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Explicit { values: Vec<ComplexValue> },
}

impl InputFamily {
    pub fn constant(value: f64) -> Self {
        InputFamily::Geometric {
            ratio: 1.0,
            scale: value,
        }
    }
}

/// A complex number in a config document: either a bare real or `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexValue {
    Real(f64),
    Pair([f64; 2]),
}

impl From<ComplexValue> for Complex64 {
    fn from(v: ComplexValue) -> Self {
        match v {
            ComplexValue::Real(re) => Complex64::new(re, 0.0),
            ComplexValue::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

impl From<f64> for ComplexValue {
    fn from(re: f64) -> Self {
        ComplexValue::Real(re)
    }
}

impl From<Complex64> for ComplexValue {
    fn from(z: Complex64) -> Self {
        if z.im == 0.0 {
            ComplexValue::Real(z.re)
        } else {
            ComplexValue::Pair([z.re, z.im])
        }
    }
}

/// State space the ensemble evolves in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceTag {
    Lp { p: f64 },
    LInfinity,
    /// Convergent sequences.
    C,
    /// Null sequences.
    CZero,
}

impl SpaceTag {
    pub const L1: SpaceTag = SpaceTag::Lp { p: 1.0 };
    pub const L2: SpaceTag = SpaceTag::Lp { p: 2.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            SpaceTag::Lp { p } if !(p >= 1.0 && p.is_finite()) => Err(Error::InvalidParameter(
                format!("l^p space needs 1 <= p < inf, got p = {p}"),
            )),
            _ => Ok(()),
        }
    }

    /// True for the spaces where the mirror feedback is asymptotically stable.
    pub fn is_separable_decaying(&self) -> bool {
        matches!(self, SpaceTag::Lp { .. } | SpaceTag::CZero)
    }

    pub fn label(&self) -> String {
        match *self {
            SpaceTag::Lp { p } => format!("l^{p}"),
            SpaceTag::LInfinity => "l^inf".to_string(),
            SpaceTag::C => "c".to_string(),
            SpaceTag::CZero => "c_0".to_string(),
        }
    }
}

/// Norm of a finite representative in the given space. `l^inf`, `c` and
/// `c_0` all carry the sup norm.
pub fn norm(x: &[Complex64], space: SpaceTag) -> f64 {
    match space {
        SpaceTag::Lp { p: 1.0 } => x.iter().map(|z| z.norm()).sum(),
        SpaceTag::Lp { p: 2.0 } => {
            let scale = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if scale == 0.0 || !scale.is_finite() {
                return scale;
            }
            scale * x.iter().map(|z| (z / scale).norm_sqr()).sum::<f64>().sqrt()
        }
        SpaceTag::Lp { p } => {
            let scale = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if scale == 0.0 || !scale.is_finite() {
                return scale;
            }
            scale
                * x.iter()
                    .map(|z| (z.norm() / scale).powf(p))
                    .sum::<f64>()
                    .powf(1.0 / p)
        }
        SpaceTag::LInfinity | SpaceTag::C | SpaceTag::CZero => {
            x.iter().map(|z| z.norm()).fold(0.0, f64::max)
        }
    }
}

/// Full description of an ensemble truncated at `n` members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub a: DecayFamily,
    pub b: InputFamily,
    pub n: usize,
    pub space: SpaceTag,
}

impl EnsembleSpec {
    pub fn new(a: DecayFamily, b: InputFamily, n: usize, space: SpaceTag) -> Self {
        EnsembleSpec { a, b, n, space }
    }

    fn check_parameters(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter("truncation N must be >= 1".into()));
        }
        self.space.validate()?;
        match self.a {
            DecayFamily::Geometric { ratio, scale } => {
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "geometric ratio must lie in (0, 1), got {ratio}"
                    )));
                }
                positive_scale(scale)?;
            }
            DecayFamily::Power { exponent, scale } => {
                if !(exponent > 1.0 && exponent.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "power exponent must exceed 1, got {exponent}"
                    )));
                }
                positive_scale(scale)?;
            }
            DecayFamily::Explicit { ref values } => {
                if values.len() != self.n {
                    return Err(Error::LengthMismatch {
                        expected: self.n,
                        found: values.len(),
                    });
                }
            }
        }
        match self.b {
            InputFamily::Geometric { ratio, scale } => {
                if !(ratio > 0.0 && ratio.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "input ratio must be positive, got {ratio}"
                    )));
                }
                if scale == 0.0 || !scale.is_finite() {
                    return Err(Error::InvalidParameter("input scale must be nonzero".into()));
                }
            }
            InputFamily::Power { exponent, scale } => {
                if !exponent.is_finite() || scale == 0.0 || !scale.is_finite() {
                    return Err(Error::InvalidParameter(
                        "input power law needs finite exponent and nonzero scale".into(),
                    ));
                }
            }
            InputFamily::Explicit { ref values } => {
                if values.len() != self.n {
                    return Err(Error::LengthMismatch {
                        expected: self.n,
                        found: values.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Longest window this spec can produce; `None` for closed-form families.
    pub fn max_len(&self) -> Option<usize> {
        let a_len = match self.a {
            DecayFamily::Explicit { ref values } => Some(values.len()),
            _ => None,
        };
        let b_len = match self.b {
            InputFamily::Explicit { ref values } => Some(values.len()),
            _ => None,
        };
        match (a_len, b_len) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }

    fn a_at(&self, n: usize) -> f64 {
        match self.a {
            DecayFamily::Geometric { ratio, scale } => scale * ratio.powi(n as i32),
            DecayFamily::Power { exponent, scale } => scale * (n as f64).powf(-exponent),
            DecayFamily::Explicit { ref values } => values[n - 1],
        }
    }

    fn b_at(&self, n: usize) -> Complex64 {
        match self.b {
            InputFamily::Geometric { ratio, scale } => {
                Complex64::new(scale * ratio.powi(n as i32), 0.0)
            }
            InputFamily::Power { exponent, scale } => {
                Complex64::new(scale * (n as f64).powf(-exponent), 0.0)
            }
            InputFamily::Explicit { ref values } => values[n - 1].into(),
        }
    }

    /// Upper estimate of `sum_{m > len} a_m`. Explicit ensembles end at
    /// their last entry, so their tail is zero.
    pub fn a_tail_sum(&self, len: usize) -> f64 {
        match self.a {
            DecayFamily::Geometric { ratio, scale } => {
                scale * ratio.powi(len as i32 + 1) / (1.0 - ratio)
            }
            DecayFamily::Power { exponent, scale } => {
                // integral comparison: sum_{m > M} m^-d <= int_M^inf x^-d dx
                let m = (len as f64).max(1.0);
                scale * m.powf(1.0 - exponent) / (exponent - 1.0)
            }
            DecayFamily::Explicit { .. } => 0.0,
        }
    }

    pub fn materialize(&self) -> Result<MaterializedEnsemble> {
        self.check_parameters()?;
        self.sample(self.n)
    }

    fn sample(&self, len: usize) -> Result<MaterializedEnsemble> {
        if let Some(max) = self.max_len() {
            if len > max {
                return Err(Error::TruncationTooShort {
                    needed: len,
                    available: max,
                });
            }
        }
        let a = (1..=len).map(|n| self.a_at(n)).collect();
        let b = (1..=len).map(|n| self.b_at(n)).collect();
        Ok(MaterializedEnsemble {
            a,
            b,
            space: self.space,
            spec: self.clone(),
        })
    }
}

fn positive_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "pole scale must be positive, got {scale}"
        )))
    }
}

/// A finite window `1..=N` of an ensemble. Indices in the public API are
/// 1-based to match `a_n`, storage is 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterializedEnsemble {
    pub a: Vec<f64>,
    pub b: Vec<Complex64>,
    pub space: SpaceTag,
    spec: EnsembleSpec,
}

impl MaterializedEnsemble {
    /// Wraps raw arrays as an explicit ensemble. Performs no validation
    /// beyond matching lengths; call [`validate_necessary`] for that.
    pub fn from_parts(a: Vec<f64>, b: Vec<Complex64>, space: SpaceTag) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        if a.is_empty() {
            return Err(Error::InvalidParameter("ensemble must be nonempty".into()));
        }
        let spec = EnsembleSpec {
            a: DecayFamily::Explicit { values: a.clone() },
            b: InputFamily::Explicit {
                values: b.iter().copied().map(ComplexValue::from).collect(),
            },
            n: a.len(),
            space,
        };
        Ok(MaterializedEnsemble { a, b, space, spec })
    }

    pub fn from_real(a: &[f64], b: &[f64], space: SpaceTag) -> Result<Self> {
        Self::from_parts(
            a.to_vec(),
            b.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            space,
        )
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    /// The same ensemble sampled on a window of `len` members (longer or
    /// shorter). Fails for explicit data that does not reach `len`.
    pub fn resized(&self, len: usize) -> Result<MaterializedEnsemble> {
        if len == 0 {
            return Err(Error::InvalidParameter("window length must be >= 1".into()));
        }
        if len <= self.len() {
            return Ok(MaterializedEnsemble {
                a: self.a[..len].to_vec(),
                b: self.b[..len].to_vec(),
                space: self.space,
                spec: self.spec.clone(),
            });
        }
        self.spec.sample(len)
    }

    pub fn a_tail_sum(&self, len: usize) -> f64 {
        self.spec.a_tail_sum(len)
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.spec.a, DecayFamily::Explicit { .. })
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self.spec.a, DecayFamily::Geometric { .. })
    }

    pub fn is_power(&self) -> bool {
        matches!(self.spec.a, DecayFamily::Power { .. })
    }

    pub fn with_space(mut self, space: SpaceTag) -> Self {
        self.space = space;
        self.spec.space = space;
        self
    }
}

/// Desired closed-loop poles `lambda_n`, `n >= 1`. The essential point
/// `lambda_0 = 0` is implicit and never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TargetSpectrum {
    /// `lambda_n = -a_n`.
    Mirror,
    /// `lambda_n = 0`.
    Zero,
    /// `lambda_n = factor * a_n` with `factor <= 0`.
    #[serde(alias = "uniform_shift")]
    Proportional { factor: f64 },
    Explicit { values: Vec<ComplexValue> },
}

impl TargetSpectrum {
    /// Targets for the first `a.len()` modes. Rejects any target with
    /// positive real part.
    pub fn materialize(&self, a: &[f64]) -> Result<Vec<Complex64>> {
        let values = self.materialize_unchecked(a)?;
        if let Some(i) = values.iter().position(|z| !(z.re <= 0.0) || !z.im.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "target lambda_{} = {} lies outside the closed left half-plane",
                i + 1,
                values[i]
            )));
        }
        Ok(values)
    }

    /// Targets without the half-plane check; the gain formula is algebraic
    /// and accepts any finite complex targets.
    pub fn materialize_unchecked(&self, a: &[f64]) -> Result<Vec<Complex64>> {
        let values: Vec<Complex64> = match self {
            TargetSpectrum::Mirror => a.iter().map(|&x| Complex64::new(-x, 0.0)).collect(),
            TargetSpectrum::Zero => vec![Complex64::new(0.0, 0.0); a.len()],
            TargetSpectrum::Proportional { factor } => {
                if !(*factor <= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "proportional targets need factor <= 0, got {factor}"
                    )));
                }
                a.iter().map(|&x| Complex64::new(factor * x, 0.0)).collect()
            }
            TargetSpectrum::Explicit { values } => {
                if values.len() < a.len() {
                    return Err(Error::TruncationTooShort {
                        needed: a.len(),
                        available: values.len(),
                    });
                }
                values[..a.len()].iter().map(|&v| v.into()).collect()
            }
        };
        if let Some(i) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { index: i + 1 });
        }
        Ok(values)
    }

    /// Estimate of `sum_{m > len} |lambda_m|`; explicit data contributes no tail.
    pub fn tail_sum(&self, ens: &MaterializedEnsemble, len: usize) -> f64 {
        match self {
            TargetSpectrum::Mirror => ens.a_tail_sum(len),
            TargetSpectrum::Zero => 0.0,
            TargetSpectrum::Proportional { factor } => factor.abs() * ens.a_tail_sum(len),
            TargetSpectrum::Explicit { .. } => 0.0,
        }
    }

    pub fn is_mirror(&self) -> bool {
        matches!(self, TargetSpectrum::Mirror)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    DuplicateA,
    NonpositiveA,
    ZeroB,
    NotDecreasing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// 1-based.
    pub index: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

/// Checks positivity, strict decrease (hence distinctness) of `a_n` and
/// `b_n != 0`, the conditions without which no feedback can stabilize.
pub fn validate_necessary(ens: &MaterializedEnsemble) -> ValidationReport {
    let mut violations = Vec::new();
    let a = &ens.a;

    for (i, &x) in a.iter().enumerate() {
        if !(x > 0.0) || !x.is_finite() {
            violations.push(Violation {
                code: ViolationCode::NonpositiveA,
                index: i + 1,
                message: format!("a_{} = {x} is not a positive real", i + 1),
            });
        }
    }
    for i in 1..a.len() {
        if a[i] == a[i - 1] {
            violations.push(Violation {
                code: ViolationCode::DuplicateA,
                index: i + 1,
                message: format!("a_{} = a_{} = {}", i + 1, i, a[i]),
            });
        } else if a[i] > a[i - 1] {
            violations.push(Violation {
                code: ViolationCode::NotDecreasing,
                index: i + 1,
                message: format!("a_{} = {} exceeds a_{} = {}", i + 1, a[i], i, a[i - 1]),
            });
        }
    }
    // Non-adjacent coincidences only occur when the order is already broken.
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(i.cmp(&j)));
    for w in order.windows(2) {
        let (i, j) = (w[0], w[1]);
        if a[i] == a[j] && i.abs_diff(j) > 1 {
            let later = i.max(j);
            violations.push(Violation {
                code: ViolationCode::DuplicateA,
                index: later + 1,
                message: format!("a_{} = a_{} = {}", later + 1, i.min(j) + 1, a[later]),
            });
        }
    }
    for (i, z) in ens.b.iter().enumerate() {
        if *z == Complex64::new(0.0, 0.0) || !z.re.is_finite() || !z.im.is_finite() {
            violations.push(Violation {
                code: ViolationCode::ZeroB,
                index: i + 1,
                message: format!("b_{} = {z} is not a nonzero number", i + 1),
            });
        }
    }
    violations.sort_by_key(|v| v.index);
    ValidationReport {
        passed: violations.is_empty(),
        violations,
    }
}
