//! Robust localization against one map keyframe.
//!
//! The state is `T_qm` (map keyframe → live frame). Each factor contributes
//! `ρ(u)` where `u` is the Mahalanobis norm of its residual and `ρ` is the
//! dynamic-covariance-scaling kernel. The sum is minimized with Powell's
//! dogleg on Gauss-Newton steps, perturbing on the left: `T ← exp(δ)·T`.

use alloc::vec::Vec;

use nalgebra::{Matrix3x6, SMatrix};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::geometry::{
    hat, se3_exp, se3_left_jacobian_inv, se3_log, GeometryError, Mat3, Mat6, Transform, Twist6, Vec3, Vec6,
};
use crate::gnss_local::GnssErrorEstimate;

/// Dynamic covariance scaling kernel with threshold `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustKernel {
    pub k: f64,
}

impl Default for RobustKernel {
    fn default() -> Self {
        Self { k: 2.0 }
    }
}

/// Robust cost. Quadratic inside `|u| ≤ k`; outside it rises to `1.5k²`.
pub fn dcs_rho(u: f64, kernel: &RobustKernel) -> f64 {
    let k2 = kernel.k * kernel.k;
    let u2 = u * u;
    if u2 <= k2 {
        0.5 * u2
    } else {
        2.0 * k2 * u2 / (k2 + u2) - 0.5 * k2
    }
}

/// The outer branch exactly as it is usually printed, `… − ½u²`. It is
/// unbounded below and is only here for comparison; the solver never calls it.
pub fn dcs_rho_as_printed(u: f64, kernel: &RobustKernel) -> f64 {
    let k2 = kernel.k * kernel.k;
    let u2 = u * u;
    if u2 <= k2 {
        0.5 * u2
    } else {
        2.0 * k2 * u2 / (k2 + u2) - 0.5 * u2
    }
}

/// IRLS weight `ρ'(u)/u`, in `(0, 1]`.
pub fn dcs_weight(u: f64, kernel: &RobustKernel) -> f64 {
    let k2 = kernel.k * kernel.k;
    let u2 = u * u;
    if u2 <= k2 {
        1.0
    } else {
        let s = 2.0 * k2 / (k2 + u2);
        s * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorKind {
    Gnss(GnssErrorEstimate),
    /// A map landmark `p_map` (map keyframe frame) observed at `p_obs` (live
    /// frame).
    Landmark {
        p_map: Vec3,
        p_obs: Vec3,
        covariance: Mat3,
    },
    /// The motion prediction of `T_qm` with its propagated covariance.
    Prior {
        t_qm: Transform,
        covariance: Mat6,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationFactor {
    pub kind: FactorKind,
    /// Whether the DCS kernel wraps this factor.
    pub robust: bool,
}

impl LocalizationFactor {
    pub fn gnss(estimate: GnssErrorEstimate) -> Self {
        Self { kind: FactorKind::Gnss(estimate), robust: true }
    }

    pub fn landmark(p_map: Vec3, p_obs: Vec3, covariance: Mat3) -> Self {
        Self { kind: FactorKind::Landmark { p_map, p_obs, covariance }, robust: true }
    }

    /// Never robustified: it is the reference the sensor factors are judged
    /// against.
    pub fn prior(t_qm: Transform, covariance: Mat6) -> Self {
        Self { kind: FactorKind::Prior { t_qm, covariance }, robust: false }
    }

    pub fn with_robust(mut self, robust: bool) -> Self {
        self.robust = robust;
        self
    }

    pub fn is_gnss(&self) -> bool {
        matches!(self.kind, FactorKind::Gnss(_))
    }

    pub fn is_landmark(&self) -> bool {
        matches!(self.kind, FactorKind::Landmark { .. })
    }

    /// Target and covariance of a whole-pose factor.
    fn pose_target(&self) -> Option<(&Transform, &Mat6)> {
        match &self.kind {
            FactorKind::Gnss(est) => Some((&est.t_qm, &est.covariance)),
            FactorKind::Prior { t_qm, covariance } => Some((t_qm, covariance)),
            FactorKind::Landmark { .. } => None,
        }
    }
}

/// `ln(T̂_qm · T⁻¹)^∨`.
pub fn gnss_residual(t: &Transform, estimate: &GnssErrorEstimate) -> Result<Twist6, GeometryError> {
    pose_residual(t, &estimate.t_qm)
}

fn pose_residual(t: &Transform, target: &Transform) -> Result<Twist6, GeometryError> {
    se3_log(&(*target * t.inverse()))
}

/// `p_obs − T · p_map`.
pub fn landmark_residual(t: &Transform, p_map: &Vec3, p_obs: &Vec3) -> Vec3 {
    p_obs - t.apply(p_map)
}

/// GNSS residual and its derivative with respect to a left perturbation.
pub fn gnss_residual_jacobian(t: &Transform, estimate: &GnssErrorEstimate) -> Result<(Twist6, Mat6), GeometryError> {
    pose_residual_jacobian(t, &estimate.t_qm)
}

fn pose_residual_jacobian(t: &Transform, target: &Transform) -> Result<(Twist6, Mat6), GeometryError> {
    let e = pose_residual(t, target)?;
    // ln(X exp(-δ)) ≈ ξ − J_r(ξ)⁻¹ δ and J_r(ξ) = J_l(−ξ).
    Ok((e, -se3_left_jacobian_inv(&-e)))
}

pub fn landmark_residual_jacobian(t: &Transform, p_map: &Vec3, p_obs: &Vec3) -> (Vec3, Matrix3x6<f64>) {
    let q = t.apply(p_map);
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Mat3::identity()));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat(&q));
    (p_obs - q, j)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("no factors: localization not attempted")]
    NoFactors,
    #[error("factor {0} has a covariance that is not positive definite")]
    BadCovariance(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-factor evaluation at one iterate.
struct Linearized {
    /// Mahalanobis norm.
    u: f64,
    weight: f64,
    /// `Jᵀ Ω J`, unweighted.
    hessian: Mat6,
    /// `Jᵀ Ω e`, unweighted.
    gradient: Vec6,
}

/// Prepared factor with its information matrix cached.
#[derive(Debug, Clone)]
struct Prepared {
    factor: LocalizationFactor,
    info6: Mat6,
    info3: Mat3,
}

fn prepare(factors: &[LocalizationFactor]) -> Result<Vec<Prepared>, FusionError> {
    factors
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (info6, info3) = match (&f.kind, f.pose_target()) {
                (_, Some((_, cov))) => {
                    let inv = cov.cholesky().ok_or(FusionError::BadCovariance(i))?.inverse();
                    (inv, Mat3::zeros())
                }
                (FactorKind::Landmark { covariance, .. }, None) => {
                    let inv = covariance.cholesky().ok_or(FusionError::BadCovariance(i))?.inverse();
                    (Mat6::zeros(), inv)
                }
                (_, None) => unreachable!("only landmarks lack a pose target"),
            };
            Ok(Prepared { factor: *f, info6, info3 })
        })
        .collect()
}

impl Prepared {
    fn mahalanobis(&self, t: &Transform) -> Result<f64, GeometryError> {
        let u2 = match (&self.factor.kind, self.factor.pose_target()) {
            (FactorKind::Landmark { p_map, p_obs, .. }, _) => {
                let e = landmark_residual(t, p_map, p_obs);
                (e.transpose() * self.info3 * e)[0]
            }
            (_, Some((target, _))) => {
                let e = pose_residual(t, target)?.0;
                (e.transpose() * self.info6 * e)[0]
            }
            (_, None) => unreachable!("only landmarks lack a pose target"),
        };
        Ok(u2.max(0.0).sqrt())
    }

    fn cost(&self, t: &Transform, kernel: &RobustKernel) -> Result<f64, GeometryError> {
        let u = self.mahalanobis(t)?;
        Ok(if self.factor.robust { dcs_rho(u, kernel) } else { 0.5 * u * u })
    }

    fn linearize(&self, t: &Transform, kernel: &RobustKernel) -> Result<Linearized, GeometryError> {
        let (u2, hessian, gradient) = match (&self.factor.kind, self.factor.pose_target()) {
            (FactorKind::Landmark { p_map, p_obs, .. }, _) => {
                let (e, j) = landmark_residual_jacobian(t, p_map, p_obs);
                let oj: SMatrix<f64, 3, 6> = self.info3 * j;
                ((e.transpose() * self.info3 * e)[0], j.transpose() * oj, oj.transpose() * e)
            }
            (_, Some((target, _))) => {
                let (e, j) = pose_residual_jacobian(t, target)?;
                let oj = self.info6 * j;
                ((e.0.transpose() * self.info6 * e.0)[0], j.transpose() * oj, oj.transpose() * e.0)
            }
            (_, None) => unreachable!("only landmarks lack a pose target"),
        };
        let u = u2.max(0.0).sqrt();
        let weight = if self.factor.robust { dcs_weight(u, kernel) } else { 1.0 };
        Ok(Linearized { u, weight, hessian, gradient })
    }
}

/// Robustified objective summed over all factors.
pub fn total_cost(t: &Transform, factors: &[LocalizationFactor], kernel: &RobustKernel) -> Result<f64, FusionError> {
    let prepared = prepare(factors)?;
    sum_cost(&prepared, t, kernel).map_err(FusionError::from)
}

fn sum_cost(prepared: &[Prepared], t: &Transform, kernel: &RobustKernel) -> Result<f64, GeometryError> {
    prepared.iter().map(|p| p.cost(t, kernel)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    /// Stop once an accepted step lowers the cost by less than this
    /// fraction. IRLS converges linearly once weights drop below one, so
    /// the gradient test alone can take many iterations.
    pub relative_cost_tol: f64,
    pub initial_trust_radius: f64,
    pub min_trust_radius: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            gradient_tol: 1e-9,
            step_tol: 1e-10,
            relative_cost_tol: 1e-14,
            initial_trust_radius: 1.0,
            min_trust_radius: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub t_qm: Transform,
    /// Inverse of the weighted Gauss-Newton Hessian at the final iterate,
    /// over a left perturbation of `T_qm`.
    pub covariance: Mat6,
    pub converged: bool,
    pub iterations: usize,
    pub used_gnss: bool,
    pub used_vision: bool,
    /// Robustified cost at the start and after every accepted step.
    pub cost_history: Vec<f64>,
    /// Final IRLS weight of each factor, in input order.
    pub weights: Vec<f64>,
}

fn accumulate(
    prepared: &[Prepared],
    t: &Transform,
    kernel: &RobustKernel,
) -> Result<(Mat6, Vec6, Vec<f64>), GeometryError> {
    let mut h = Mat6::zeros();
    let mut g = Vec6::zeros();
    let mut weights = Vec::with_capacity(prepared.len());
    for p in prepared {
        let lin = p.linearize(t, kernel)?;
        h += lin.weight * lin.hessian;
        g += lin.weight * lin.gradient;
        weights.push(lin.weight);
        debug_assert!(lin.u.is_finite());
    }
    Ok((h, g, weights))
}

fn solve_spd(h: &Mat6, rhs: &Vec6) -> Option<Vec6> {
    if let Some(ch) = h.cholesky() {
        return Some(ch.solve(rhs));
    }
    h.svd(true, true).solve(rhs, 1e-14).ok()
}

fn invert_spd(h: &Mat6) -> Mat6 {
    match h.cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            0.5 * (inv + inv.transpose())
        }
        None => h.svd(true, true).pseudo_inverse(1e-14).unwrap_or_else(|_| Mat6::zeros()),
    }
}

/// Powell dogleg step for the model `gᵀh + ½hᵀHh` within radius `delta`.
fn dogleg_step(h: &Mat6, g: &Vec6, delta: f64) -> Vec6 {
    let gn = solve_spd(h, &(-g));
    if let Some(gn) = gn {
        if gn.norm() <= delta {
            return gn;
        }
    }
    let g_norm = g.norm();
    let ghg = (g.transpose() * h * g)[0];
    let alpha = if ghg > 0.0 { g_norm * g_norm / ghg } else { f64::INFINITY };
    let cauchy_len = alpha * g_norm;
    let gn = match gn {
        Some(gn) if cauchy_len < delta => gn,
        _ => return -(delta / g_norm) * g,
    };
    // Walk from the Cauchy point toward the GN point until the boundary.
    let a = -alpha * g;
    let v = gn - a;
    let av = a.dot(&v);
    let vv = v.dot(&v);
    let c = a.dot(&a) - delta * delta;
    let disc = (av * av - vv * c).max(0.0).sqrt();
    let beta = if av <= 0.0 { (-av + disc) / vv } else { -c / (av + disc) };
    a + beta * v
}

/// Minimizes the robustified objective from `t_init`.
pub fn solve(
    factors: &[LocalizationFactor],
    t_init: &Transform,
    kernel: &RobustKernel,
    cfg: &SolverConfig,
) -> Result<LocalizationResult, FusionError> {
    if factors.is_empty() {
        return Err(FusionError::NoFactors);
    }
    let prepared = prepare(factors)?;
    let mut t = *t_init;
    let mut cost = sum_cost(&prepared, &t, kernel)?;
    let mut history = alloc::vec![cost];
    let mut radius = cfg.initial_trust_radius;
    let mut converged = false;
    let mut iterations = 0;

    let (mut h, mut g, _) = accumulate(&prepared, &t, kernel)?;
    while iterations < cfg.max_iters {
        if g.amax() < cfg.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = dogleg_step(&h, &g, radius);
        if step.norm() < cfg.step_tol {
            converged = true;
            break;
        }
        let predicted = -(g.dot(&step) + 0.5 * (step.transpose() * h * step)[0]);
        let candidate = se3_exp(&Twist6(step)) * t;
        // A candidate whose residual leaves the log's domain counts as a
        // rejected step.
        let new_cost = sum_cost(&prepared, &candidate, kernel).unwrap_or(f64::INFINITY);
        let gain = if predicted > 0.0 { (cost - new_cost) / predicted } else { -1.0 };

        if gain > 0.0 && new_cost <= cost {
            let small = cost - new_cost <= cfg.relative_cost_tol * cost;
            t = candidate;
            cost = new_cost;
            history.push(cost);
            let (nh, ng, _) = accumulate(&prepared, &t, kernel)?;
            h = nh;
            g = ng;
            if small {
                converged = true;
                break;
            }
        }
        if gain > 0.75 {
            radius *= 2.0;
        } else if gain < 0.25 {
            radius *= 0.25;
        }
        if radius < cfg.min_trust_radius {
            break;
        }
    }
    if !converged && g.amax() < cfg.gradient_tol {
        converged = true;
    }

    let (h, _, weights) = accumulate(&prepared, &t, kernel)?;
    let covariance = invert_spd(&h);
    let used_gnss = converged && prepared.iter().any(|p| p.factor.is_gnss());
    let used_vision = converged && prepared.iter().any(|p| p.factor.is_landmark());
    Ok(LocalizationResult {
        t_qm: t,
        covariance,
        converged,
        iterations,
        used_gnss,
        used_vision,
        cost_history: history,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{planar_transform, Rotation3};
    use crate::gnss_local::GnssCovariance;

    fn gnss_est(t: Transform, sigma: f64) -> GnssErrorEstimate {
        let cov = GnssCovariance { sigma_planar: sigma, sigma_yaw: sigma, weak_prior_variance: sigma * sigma };
        GnssErrorEstimate { t_qm: t, covariance: cov.matrix(), heading_q: 0.0, heading_m: 0.0, r_mq_q: t.translation }
    }

    #[test]
    fn dcs_values() {
        let k = RobustKernel::default();
        assert_eq!(dcs_rho(1.0, &k), 0.5);
        assert_eq!(dcs_rho(2.0, &k), 2.0);
        assert!((dcs_rho(4.0, &k) - 4.4).abs() < 1e-12);
        assert!((dcs_rho(1e9, &k) - 6.0).abs() < 1e-6);
        assert_eq!(dcs_weight(1.0, &k), 1.0);
        assert_eq!(dcs_weight(2.0, &k), 1.0);
        assert!((dcs_weight(4.0, &k) - 0.16).abs() < 1e-15);
    }

    #[test]
    fn printed_branch_is_unbounded() {
        let k = RobustKernel::default();
        assert!(dcs_rho_as_printed(100.0, &k) < -1000.0);
        assert_eq!(dcs_rho_as_printed(1.5, &k), dcs_rho(1.5, &k));
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let t = planar_transform(0.3, [0.2, -0.1]);
        let e = gnss_residual(&t, &gnss_est(t, 0.05)).unwrap();
        assert!(e.norm() < 1e-15);
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(landmark_residual(&Transform::identity(), &p, &p), Vec3::zeros());
        let shift = Transform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(landmark_residual(&shift, &Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0)), Vec3::zeros());
    }

    #[test]
    fn gnss_residual_of_translated_state() {
        let est_t = planar_transform(0.4, [0.3, 0.1]);
        let d = Vec3::new(0.2, -0.5, 0.7);
        let t = Transform::from_translation(d) * est_t;
        let e = gnss_residual(&t, &gnss_est(est_t, 0.05)).unwrap();
        let expect = Vec6::new(-d.x, -d.y, -d.z, 0.0, 0.0, 0.0);
        assert!((e.0 - expect).abs().max() < 1e-15);
    }

    #[test]
    fn empty_problem_is_an_error() {
        let r = solve(&[], &Transform::identity(), &RobustKernel::default(), &SolverConfig::default());
        assert_eq!(r.unwrap_err(), FusionError::NoFactors);
    }

    #[test]
    fn single_gnss_factor_is_recovered() {
        let target = planar_transform(-0.2, [0.15, 0.4]);
        let f = [LocalizationFactor::gnss(gnss_est(target, 0.05))];
        let r = solve(&f, &Transform::identity(), &RobustKernel::default(), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.t_qm.matrix() - target.matrix()).abs().max() < 1e-9);
        assert!(r.used_gnss && !r.used_vision);
    }

    #[test]
    fn two_translations_average() {
        let a = Transform::identity();
        let b = Transform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let f = [LocalizationFactor::gnss(gnss_est(a, 1.0)), LocalizationFactor::gnss(gnss_est(b, 1.0))];
        let r = solve(&f, &Transform::identity(), &RobustKernel::default(), &SolverConfig::default()).unwrap();
        assert!((r.t_qm.translation - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-9);
        assert!((r.t_qm.rotation.matrix() - Mat3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn landmarks_recover_transform() {
        let truth = Transform::new(Rotation3::exp(&Vec3::new(0.05, -0.02, 0.4)), Vec3::new(0.3, -0.2, 0.05));
        let pts = [Vec3::new(3.0, 1.0, 0.5), Vec3::new(5.0, -2.0, 1.0), Vec3::new(4.0, 0.5, -1.0)];
        let f: Vec<_> =
            pts.iter().map(|p| LocalizationFactor::landmark(*p, truth.apply(p), Mat3::identity() * 1e-4)).collect();
        let r = solve(&f, &Transform::identity(), &RobustKernel::default(), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.t_qm.matrix() - truth.matrix()).abs().max() < 1e-9);
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_pd_covariance_rejected() {
        let mut est = gnss_est(Transform::identity(), 1.0);
        est.covariance[(0, 0)] = -1.0;
        let r = solve(
            &[LocalizationFactor::gnss(est)],
            &Transform::identity(),
            &RobustKernel::default(),
            &SolverConfig::default(),
        );
        assert_eq!(r.unwrap_err(), FusionError::BadCovariance(0));
    }
}
