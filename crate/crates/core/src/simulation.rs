//! Closed-loop trajectories: fixed-step RK4 on `x' = Diag(a) x + b (k . x)`
//! and, for the mirror gain, the exact modal flow
//! `x(t) = B P exp(-A t) P B^-1 x(0)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{norm, MaterializedEnsemble, SpaceTag};
use crate::error::{Error, Result};
use crate::spectral::CauchyOperator;

/// Ratio between the RK4 step and `1 / max(a_n + ||k||_1 max|b_n|)`.
pub const STEP_FACTOR: f64 = 0.1;
/// `P` with a larger involution residual is not accepted as a modal basis.
pub const INVOLUTION_LIMIT: f64 = 1e-6;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
    pub space: SpaceTag,
    pub epsilon: f64,
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        self.space.validate()
    }
}

/// Largest admissible RK4 step for gain `k`.
pub fn step_limit(ens: &MaterializedEnsemble, k: &[Complex64]) -> f64 {
    let k1: f64 = k.iter().map(|z| z.norm()).sum();
    let bmax = ens.b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rate = ens.a.iter().map(|&a| a.abs() + k1 * bmax).fold(0.0, f64::max);
    if rate == 0.0 {
        f64::INFINITY
    } else {
        STEP_FACTOR / rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
    pub norms: Vec<f64>,
    pub space: SpaceTag,
    pub method: Method,
}

impl Trajectory {
    fn new(space: SpaceTag, method: Method) -> Self {
        Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            norms: Vec::new(),
            space,
            method,
        }
    }

    fn push(&mut self, t: f64, x: Vec<Complex64>) {
        self.norms.push(norm(&x, self.space));
        self.times.push(t);
        self.states.push(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

/// `a o x + b (k . x)` into `out`.
fn rhs(a: &[f64], b: &[Complex64], k: &[Complex64], x: &[Complex64], out: &mut [Complex64]) {
    let kx: Complex64 = k.iter().zip(x).map(|(k, x)| k * x).sum();
    for i in 0..x.len() {
        out[i] = a[i] * x[i] + b[i] * kx;
    }
}

/// Classic fixed-step RK4. The step is shrunk to `t_end / ceil(t_end / dt)`
/// so the final time is hit exactly; the initial state and the final state
/// are always recorded.
pub fn integrate_rk4(
    ens: &MaterializedEnsemble,
    k: &[Complex64],
    x0: &[Complex64],
    config: &TrajectoryConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let n = ens.len();
    check_len(n, k.len())?;
    check_len(n, x0.len())?;
    let limit = step_limit(ens, k);
    if config.dt > limit {
        return Err(Error::StepSize {
            dt: config.dt,
            limit,
        });
    }
    let steps = (config.t_end / config.dt).ceil().max(1.0) as usize;
    let h = config.t_end / steps as f64;

    let (a, b) = (&ens.a, &ens.b);
    let mut traj = Trajectory::new(config.space, Method::Rk4);
    let mut x = x0.to_vec();
    traj.push(0.0, x.clone());
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![zero(); n], vec![zero(); n], vec![zero(); n], vec![zero(); n], vec![zero(); n]);
    for step in 1..=steps {
        rhs(a, b, k, &x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(a, b, k, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        rhs(a, b, k, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        rhs(a, b, k, &tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % config.record_every == 0 || step == steps {
            traj.push(step as f64 * h, x.clone());
        }
    }
    Ok(traj)
}

/// Several initial conditions on the same closed loop, in parallel.
pub fn integrate_batch(
    ens: &MaterializedEnsemble,
    k: &[Complex64],
    x0s: &[Vec<Complex64>],
    config: &TrajectoryConfig,
) -> Vec<Result<Trajectory>> {
    x0s.par_iter().map(|x0| integrate_rk4(ens, k, x0, config)).collect()
}

fn require_modal_basis(ens: &MaterializedEnsemble, p: &CauchyOperator) -> Result<()> {
    check_len(ens.len(), p.matrix.nrows())?;
    if !(p.involution_residual <= INVOLUTION_LIMIT) {
        return Err(Error::NotMirrorRegime(format!(
            "P^2 - I residual {:.3e} exceeds {INVOLUTION_LIMIT:e}; build P from pi at M = N",
            p.involution_residual
        )));
    }
    Ok(())
}

fn apply_p(p: &CauchyOperator, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| (0..n).map(|j| p.matrix[(i, j)] * v[j]).sum())
        .collect()
}

/// `z = P B^-1 x`.
pub fn to_modal(ens: &MaterializedEnsemble, p: &CauchyOperator, x: &[Complex64]) -> Vec<Complex64> {
    let y: Vec<Complex64> = x.iter().zip(&ens.b).map(|(x, b)| x / b).collect();
    apply_p(p, &y)
}

/// `x = B P z`.
pub fn from_modal(ens: &MaterializedEnsemble, p: &CauchyOperator, z: &[Complex64]) -> Vec<Complex64> {
    apply_p(p, z).iter().zip(&ens.b).map(|(y, b)| y * b).collect()
}

/// Exact flow of the mirror closed loop at the recorded `times`.
pub fn closed_form_flow(
    ens: &MaterializedEnsemble,
    p: &CauchyOperator,
    x0: &[Complex64],
    times: &[f64],
    space: SpaceTag,
) -> Result<Trajectory> {
    require_modal_basis(ens, p)?;
    check_len(ens.len(), x0.len())?;
    let z0 = to_modal(ens, p, x0);
    let mut traj = Trajectory::new(space, Method::ClosedForm);
    for &t in times {
        if t == 0.0 {
            traj.push(t, x0.to_vec());
            continue;
        }
        let z: Vec<Complex64> = z0.iter().zip(&ens.a).map(|(z, &a)| z * (-a * t).exp()).collect();
        traj.push(t, from_modal(ens, p, &z));
    }
    Ok(traj)
}

/// `||(b_n z_n(t))||` nonincreasing over `times` for `z_n(t) = exp(-a_n t) z_n(0)`.
pub fn z_norm_monotone_check(
    a: &[f64],
    b: &[Complex64],
    z0: &[Complex64],
    space: SpaceTag,
    times: &[f64],
) -> bool {
    let mut prev = f64::INFINITY;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    for t in sorted {
        let y: Vec<Complex64> = z0
            .iter()
            .zip(a)
            .zip(b)
            .map(|((z, &a), b)| b * z * (-a * t).exp())
            .collect();
        let cur = norm(&y, space);
        if cur > prev * (1.0 + 1e-14) {
            return false;
        }
        prev = cur;
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `e_index`, 1-based.
    Basis { index: usize },
    Ones,
    /// `z(0) = (1/b_n)`, so the weighted modal state `(b_n z_n(0))` is all ones.
    InverseB,
    /// Entries uniform in `[-1, 1]` from a seeded ChaCha8 stream.
    Random { seed: u64 },
    Explicit { values: Vec<crate::ensemble::ComplexValue> },
}

impl InitialCondition {
    pub fn label(&self) -> String {
        match self {
            InitialCondition::Basis { index } => format!("basis_{index}"),
            InitialCondition::Ones => "ones".into(),
            InitialCondition::InverseB => "inverse_b".into(),
            InitialCondition::Random { seed } => format!("random_{seed}"),
            InitialCondition::Explicit { .. } => "explicit".into(),
        }
    }

    pub fn materialize(&self, ens: &MaterializedEnsemble, p: Option<&CauchyOperator>) -> Result<Vec<Complex64>> {
        let n = ens.len();
        Ok(match self {
            InitialCondition::Basis { index } => {
                if *index == 0 || *index > n {
                    return Err(Error::InvalidParameter(format!(
                        "basis index {index} outside 1..={n}"
                    )));
                }
                let mut e = vec![zero(); n];
                e[index - 1] = Complex64::new(1.0, 0.0);
                e
            }
            InitialCondition::Ones => vec![Complex64::new(1.0, 0.0); n],
            InitialCondition::InverseB => {
                let p = p.ok_or_else(|| {
                    Error::NotMirrorRegime("the 1/b profile is defined in modal coordinates".into())
                })?;
                require_modal_basis(ens, p)?;
                let z0: Vec<Complex64> = ens.b.iter().map(|b| 1.0 / b).collect();
                from_modal(ens, p, &z0)
            }
            InitialCondition::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n).map(|_| Complex64::new(rng.random_range(-1.0..=1.0), 0.0)).collect()
            }
            InitialCondition::Explicit { values } => {
                check_len(n, values.len())?;
                values.iter().map(|&v| v.into()).collect()
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Decaying,
    BoundedNondecaying,
    Growing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstPassage {
    /// 1-based mode index.
    pub n: usize,
    /// `-ln(eps) / a_n`.
    pub predicted: f64,
    /// First time `|z_n(t)| <= eps |z_n(0)|`, log-interpolated between records.
    pub empirical: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub space: String,
    pub epsilon: f64,
    pub sup_ratio: f64,
    pub final_ratio: f64,
    pub t_final: f64,
    pub classification: Classification,
    pub first_passage: Vec<FirstPassage>,
    /// `T_N / 2` for the slowest mode, clipped to the trajectory.
    pub horizon: Option<f64>,
    /// `max_n |z_n(t)| / |z_n(0)|` at the last record not after `horizon`.
    pub max_mode_ratio: Option<f64>,
}

/// Decaying when the final norm ratio is below 0.01, growing when it exceeds
/// 10, bounded otherwise. The per-mode analysis needs the modal basis `p`.
pub fn stability_report(
    traj: &Trajectory,
    ens: &MaterializedEnsemble,
    config: &TrajectoryConfig,
    p: Option<&CauchyOperator>,
) -> Result<StabilityReport> {
    if traj.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    let n0 = traj.norms[0];
    let ratio = |x: f64| if n0 == 0.0 { 0.0 } else { x / n0 };
    let sup_ratio = traj.norms.iter().copied().map(ratio).fold(0.0, f64::max);
    let final_ratio = ratio(*traj.norms.last().unwrap());
    let classification = if final_ratio < 0.01 {
        Classification::Decaying
    } else if final_ratio > 10.0 {
        Classification::Growing
    } else {
        Classification::BoundedNondecaying
    };

    let mut first_passage = Vec::new();
    let mut horizon = None;
    let mut max_mode_ratio = None;
    if let Some(p) = p {
        require_modal_basis(ens, p)?;
        let weights: Vec<Vec<f64>> = traj
            .states
            .par_iter()
            .map(|x| to_modal(ens, p, x).iter().map(|z| z.norm()).collect())
            .collect();
        let eps = config.epsilon;
        for (i, &a) in ens.a.iter().enumerate() {
            let predicted = -eps.ln() / a;
            let w0 = weights[0][i];
            let mut empirical = None;
            if w0 > 0.0 {
                let level = eps * w0;
                for s in 1..weights.len() {
                    let (wp, wc) = (weights[s - 1][i], weights[s][i]);
                    if wc <= level {
                        let (tp, tc) = (traj.times[s - 1], traj.times[s]);
                        let t = if wp > level && wc > 0.0 {
                            tp + (tc - tp) * (wp / level).ln() / (wp / wc).ln()
                        } else {
                            tc
                        };
                        empirical = Some(t);
                        break;
                    }
                }
            }
            first_passage.push(FirstPassage {
                n: i + 1,
                predicted,
                empirical,
                relative_error: empirical.map(|t| (t - predicted).abs() / predicted),
            });
        }
        let a_min = ens.a.iter().copied().fold(f64::INFINITY, f64::min);
        let t_h = (-eps.ln() / a_min / 2.0).min(*traj.times.last().unwrap());
        if let Some(s) = traj.times.iter().rposition(|&t| t <= t_h) {
            horizon = Some(traj.times[s]);
            max_mode_ratio = Some(
                weights[s]
                    .iter()
                    .zip(&weights[0])
                    .filter(|(_, &w0)| w0 > 0.0)
                    .map(|(w, w0)| w / w0)
                    .fold(0.0, f64::max),
            );
        }
    }
    Ok(StabilityReport {
        space: traj.space.label(),
        epsilon: config.epsilon,
        sup_ratio,
        final_ratio,
        t_final: *traj.times.last().unwrap(),
        classification,
        first_passage,
        horizon,
        max_mode_ratio,
    })
}
