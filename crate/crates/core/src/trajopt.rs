//! Variance-aware joint-path optimization: track a fitted pose tube with a
//! serial chain, weighting task dimensions by inverse variance and keeping
//! the end effector inside the tube's confidence region at every step.
//!
//! The tube constraints become two one-sided inequalities per step and task
//! dimension, handled with an augmented Lagrangian; the inner minimizer is
//! a projected L-BFGS over the stacked joint path, with joint limits applied
//! by clamping.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, InfeasibleReport, Result};
use crate::gp::DiscreteGp;
use crate::kinematics::{ik_solve, IkOptions, KinematicChain};
use crate::manifold::Factor;
use crate::mixture::{GpMixture, ModalPath, Mode, SkillChain};
use crate::rigid::RigidTransform;
use crate::updating::LqNorm;

const TASK_DIM: usize = 6;

#[derive(Clone, Debug)]
pub struct OptimizeOptions {
    /// Weight of the variance-normalized tracking term.
    pub lambda_tracking: f64,
    /// Weight of the squared joint-increment smoothness term.
    pub lambda_smooth: f64,
    /// Tube half-width in standard deviations.
    pub z: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Feasibility threshold on `|e| - z sigma`.
    pub tol_violation: f64,
    /// Start configuration; chain home when absent.
    pub q0: Option<DVector<f64>>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            lambda_tracking: 1.0,
            lambda_smooth: 1e-3,
            z: 1.96,
            outer_iters: 20,
            inner_iters: 50,
            penalty_init: 10.0,
            penalty_growth: 5.0,
            tol_violation: 1e-6,
            q0: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathInit {
    Interpolated,
    Greedy,
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub objective: f64,
    pub tracking_nll: f64,
    pub max_violation: f64,
    pub outer_iterations: usize,
    /// Objectives of successively accepted feasible iterates (non-increasing).
    pub accepted_objectives: Vec<f64>,
    pub init: PathInit,
}

#[derive(Clone, Debug)]
pub struct OptimizedPath {
    pub joint_path: Vec<DVector<f64>>,
    pub poses: Vec<RigidTransform>,
    pub report: OptimizeReport,
}

/// Per-step target pose and the six task-space variances (position then
/// orientation tangent). The model's manifold must lead with `R3 x S3`;
/// trailing channels are not trackable by an arm and are ignored.
fn step_targets(model: &DiscreteGp) -> Result<Vec<(RigidTransform, [f64; 6])>> {
    let factors = model.spec().factors();
    let pose_leading = factors.len() >= 2
        && factors[0] == Factor::Euclidean(3)
        && factors[1] == Factor::UnitQuaternion;
    if !pose_leading {
        return Err(Error::SpecMismatch {
            expected: "R3xS3 leading factors".into(),
            got: model.spec().to_string(),
        });
    }
    let mut out = Vec::with_capacity(model.len());
    for t in 0..model.len() {
        let c = model.mean(t).coords();
        let pose = RigidTransform::new(
            [c[0], c[1], c[2]],
            [c[3], c[4], c[5], c[6]],
        )?;
        let v = model.var(t);
        out.push((pose, [v[0], v[1], v[2], v[3], v[4], v[5]]));
    }
    Ok(out)
}

struct TubeProblem<'a> {
    chain: &'a KinematicChain,
    targets: &'a [(RigidTransform, [f64; 6])],
    sigma: Vec<[f64; 6]>,
    inv_var_scaled: Vec<[f64; 6]>,
    lambda_e: f64,
    lambda_q: f64,
    z: f64,
    lam_p: Vec<[f64; 6]>,
    lam_m: Vec<[f64; 6]>,
    mu: f64,
}

impl<'a> TubeProblem<'a> {
    fn new(chain: &'a KinematicChain, targets: &'a [(RigidTransform, [f64; 6])], opts: &OptimizeOptions) -> Self {
        let sigma_max = targets
            .iter()
            .flat_map(|(_, v)| v.iter())
            .cloned()
            .fold(0.0f64, f64::max);
        let sigma = targets
            .iter()
            .map(|(_, v)| [v[0].sqrt(), v[1].sqrt(), v[2].sqrt(), v[3].sqrt(), v[4].sqrt(), v[5].sqrt()])
            .collect();
        let inv_var_scaled = targets
            .iter()
            .map(|(_, v)| {
                let mut w = [0.0; 6];
                for i in 0..6 {
                    w[i] = sigma_max / v[i];
                }
                w
            })
            .collect();
        let t = targets.len();
        Self {
            chain,
            targets,
            sigma,
            inv_var_scaled,
            lambda_e: opts.lambda_tracking,
            lambda_q: opts.lambda_smooth,
            z: opts.z,
            lam_p: vec![[0.0; 6]; t],
            lam_m: vec![[0.0; 6]; t],
            mu: opts.penalty_init,
        }
    }

    fn n(&self) -> usize {
        self.chain.n_joints()
    }

    fn errors(&self, path: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        path.iter()
            .zip(self.targets)
            .map(|(q, (pose, _))| self.chain.pose_error(q, pose))
            .collect()
    }

    fn objective(&self, path: &[DVector<f64>], errors: &[DVector<f64>]) -> f64 {
        let mut f = 0.0;
        for (t, e) in errors.iter().enumerate() {
            let w = &self.inv_var_scaled[t];
            for i in 0..TASK_DIM {
                f += self.lambda_e * w[i] * e[i] * e[i];
            }
        }
        for t in 0..path.len().saturating_sub(1) {
            let d = &path[t + 1] - &path[t];
            f += self.lambda_q * d.norm_squared();
        }
        f
    }

    fn penalty(&self, errors: &[DVector<f64>]) -> f64 {
        let mut p = 0.0;
        for (t, e) in errors.iter().enumerate() {
            for i in 0..TASK_DIM {
                let zs = self.z * self.sigma[t][i];
                let gp = (self.lam_p[t][i] / self.mu + (e[i] - zs)).max(0.0);
                let gm = (self.lam_m[t][i] / self.mu + (-e[i] - zs)).max(0.0);
                p += 0.5 * self.mu * (gp * gp + gm * gm);
            }
        }
        p
    }

    fn phi(&self, path: &[DVector<f64>]) -> Result<f64> {
        let errors = self.errors(path)?;
        Ok(self.objective(path, &errors) + self.penalty(&errors))
    }

    fn grad(&self, path: &[DVector<f64>]) -> Result<DVector<f64>> {
        let t_len = path.len();
        let n = self.n();
        let mut g = DVector::zeros(t_len * n);
        for t in 0..t_len {
            let (pose, _) = &self.targets[t];
            let e = self.chain.pose_error(&path[t], pose)?;
            let jac = self.chain.error_jacobian(&path[t], pose)?;
            let mut de = DVector::zeros(TASK_DIM);
            for i in 0..TASK_DIM {
                de[i] = 2.0 * self.lambda_e * self.inv_var_scaled[t][i] * e[i];
                let zs = self.z * self.sigma[t][i];
                de[i] += self.mu * (self.lam_p[t][i] / self.mu + (e[i] - zs)).max(0.0);
                de[i] -= self.mu * (self.lam_m[t][i] / self.mu + (-e[i] - zs)).max(0.0);
            }
            let gt = jac.transpose() * de;
            for j in 0..n {
                g[t * n + j] += gt[j];
            }
        }
        for t in 0..t_len.saturating_sub(1) {
            for j in 0..n {
                let d = 2.0 * self.lambda_q * (path[t + 1][j] - path[t][j]);
                g[t * n + j] -= d;
                g[(t + 1) * n + j] += d;
            }
        }
        Ok(g)
    }

    /// Worst tube violation and the step it occurs at.
    fn violation(&self, errors: &[DVector<f64>]) -> (f64, usize) {
        let mut worst = f64::NEG_INFINITY;
        let mut at = 0;
        for (t, e) in errors.iter().enumerate() {
            for i in 0..TASK_DIM {
                let v = e[i].abs() - self.z * self.sigma[t][i];
                if v > worst {
                    worst = v;
                    at = t;
                }
            }
        }
        (worst.max(0.0), at)
    }

    fn update_multipliers(&mut self, errors: &[DVector<f64>]) {
        for (t, e) in errors.iter().enumerate() {
            for i in 0..TASK_DIM {
                let zs = self.z * self.sigma[t][i];
                self.lam_p[t][i] = (self.lam_p[t][i] + self.mu * (e[i] - zs)).max(0.0);
                self.lam_m[t][i] = (self.lam_m[t][i] + self.mu * (-e[i] - zs)).max(0.0);
            }
        }
    }
}

fn flatten(path: &[DVector<f64>]) -> DVector<f64> {
    let n = path[0].len();
    let mut x = DVector::zeros(path.len() * n);
    for (t, q) in path.iter().enumerate() {
        for j in 0..n {
            x[t * n + j] = q[j];
        }
    }
    x
}

fn unflatten(x: &DVector<f64>, t_len: usize, n: usize) -> Vec<DVector<f64>> {
    (0..t_len)
        .map(|t| DVector::from_iterator(n, (0..n).map(|j| x[t * n + j])))
        .collect()
}

fn clamp_flat(chain: &KinematicChain, x: &DVector<f64>, t_len: usize) -> DVector<f64> {
    let n = chain.n_joints();
    let mut out = x.clone();
    for t in 0..t_len {
        for (j, joint) in chain.joints.iter().enumerate() {
            out[t * n + j] = out[t * n + j].clamp(joint.q_min, joint.q_max);
        }
    }
    out
}

/// Projected L-BFGS with Armijo backtracking over the clamped path.
fn inner_minimize(problem: &TubeProblem, x0: DVector<f64>, t_len: usize, max_iter: usize) -> Result<DVector<f64>> {
    let n = problem.n();
    let chain = problem.chain;
    let mut x = clamp_flat(chain, &x0, t_len);
    let mut f = problem.phi(&unflatten(&x, t_len, n))?;
    let mut g = problem.grad(&unflatten(&x, t_len, n))?;
    let mut memory: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::new();

    for _ in 0..max_iter {
        // projected gradient for convergence: blocked components do not count
        let mut pg_max = 0.0f64;
        for t in 0..t_len {
            for (j, joint) in chain.joints.iter().enumerate() {
                let idx = t * n + j;
                let blocked = (x[idx] <= joint.q_min && g[idx] > 0.0)
                    || (x[idx] >= joint.q_max && g[idx] < 0.0);
                if !blocked {
                    pg_max = pg_max.max(g[idx].abs());
                }
            }
        }
        if pg_max < 1e-10 {
            break;
        }

        let mut d = two_loop(&memory, &g);
        if d.dot(&g) > -1e-14 * d.norm() * g.norm() {
            memory.clear();
            d = -&g;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = clamp_flat(chain, &(&x + alpha * &d), t_len);
            let f_cand = problem.phi(&unflatten(&cand, t_len, n))?;
            let pred = g.dot(&(&cand - &x));
            if f_cand <= f + 1e-4 * pred.min(0.0) && f_cand < f {
                accepted = Some((cand, f_cand));
                break;
            }
            alpha *= 0.5;
        }
        let (x_new, f_new) = match accepted {
            Some(a) => a,
            None => {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
                continue;
            }
        };
        let g_new = problem.grad(&unflatten(&x_new, t_len, n))?;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let clamped = {
            let raw = &x + alpha * &d;
            (0..x.len()).any(|i| (raw[i] - x_new[i]).abs() > 1e-15)
        };
        if clamped {
            memory.clear();
        } else {
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                memory.push((s, y, 1.0 / sy));
                if memory.len() > 10 {
                    memory.remove(0);
                }
            }
        }
        let stalled = (f - f_new).abs() < 1e-14 * (1.0 + f.abs());
        x = x_new;
        f = f_new;
        g = g_new;
        if stalled {
            break;
        }
    }
    Ok(x)
}

fn two_loop(memory: &[(DVector<f64>, DVector<f64>, f64)], g: &DVector<f64>) -> DVector<f64> {
    if memory.is_empty() {
        return -g;
    }
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * s.dot(&q);
        q -= a * y;
        alphas.push(a);
    }
    let (s_last, y_last, _) = memory.last().expect("non-empty");
    let gamma = s_last.dot(y_last) / y_last.dot(y_last);
    let mut r = gamma * q;
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&r);
        r += (a - b) * s;
    }
    -r
}

/// Sequential per-step inverse kinematics along the tube means, each solve
/// warm-started from the previous step. A non-converged step contributes its
/// best iterate and the walk continues.
pub fn greedy_ik_path(
    chain: &KinematicChain,
    model: &DiscreteGp,
    q0: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let targets = step_targets(model)?;
    greedy_path(chain, &targets, q0)
}

fn greedy_path(
    chain: &KinematicChain,
    targets: &[(RigidTransform, [f64; 6])],
    q0: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let mut path = Vec::with_capacity(targets.len());
    let mut q = chain.clamp(q0);
    for (pose, var) in targets {
        let var_min = var.iter().cloned().fold(f64::INFINITY, f64::min);
        let w = DVector::from_iterator(6, var.iter().map(|v| var_min / v));
        let opts = IkOptions { weights: Some(w), ..Default::default() };
        q = match ik_solve(chain, pose, &q, &opts) {
            Ok(q) => q,
            Err(Error::IkNonConvergence { iterate, .. }) => iterate,
            Err(e) => return Err(e),
        };
        path.push(q.clone());
    }
    Ok(path)
}

struct RunOutcome {
    best: Option<(f64, Vec<DVector<f64>>)>,
    history: Vec<f64>,
    final_violation: f64,
    worst_step: usize,
    outer_done: usize,
}

fn run_al(
    chain: &KinematicChain,
    targets: &[(RigidTransform, [f64; 6])],
    init: Vec<DVector<f64>>,
    opts: &OptimizeOptions,
) -> Result<RunOutcome> {
    let t_len = targets.len();
    let n = chain.n_joints();
    let mut problem = TubeProblem::new(chain, targets, opts);
    let mut x = flatten(&init);
    let mut best: Option<(f64, Vec<DVector<f64>>)> = None;
    let mut history = Vec::new();
    let mut prev_viol = f64::INFINITY;
    let mut final_violation = f64::INFINITY;
    let mut worst_step = 0;
    let mut outer_done = 0;

    for outer in 0..opts.outer_iters {
        outer_done = outer + 1;
        x = inner_minimize(&problem, x, t_len, opts.inner_iters)?;
        let path = unflatten(&x, t_len, n);
        let errors = problem.errors(&path)?;
        let (viol, at) = problem.violation(&errors);
        final_violation = viol;
        worst_step = at;
        let obj = problem.objective(&path, &errors);
        let mut improved = false;
        if viol <= opts.tol_violation {
            let better = best.as_ref().map_or(true, |(b, _)| obj < *b);
            if better {
                best = Some((obj, path.clone()));
                history.push(obj);
                improved = true;
            }
        }
        if viol <= opts.tol_violation && !improved && best.is_some() {
            break;
        }
        problem.update_multipliers(&errors);
        if viol > 0.25 * prev_viol && viol > opts.tol_violation {
            problem.mu = (problem.mu * opts.penalty_growth).min(1e12);
        }
        prev_viol = viol;
    }
    Ok(RunOutcome { best, history, final_violation, worst_step, outer_done })
}

/// Optimize a joint path that tracks a pose tube. Two starts are tried: a
/// straight joint-space interpolation toward an IK solution for the final
/// step, and the greedy per-step IK walk; the best feasible result wins.
pub fn optimize_path(
    chain: &KinematicChain,
    model: &DiscreteGp,
    opts: &OptimizeOptions,
) -> Result<OptimizedPath> {
    let targets = step_targets(model)?;
    let t_len = targets.len();
    let q0 = match &opts.q0 {
        Some(q) => chain.clamp(q),
        None => chain.home(),
    };

    let (last_pose, last_var) = &targets[t_len - 1];
    let var_min = last_var.iter().cloned().fold(f64::INFINITY, f64::min);
    let w = DVector::from_iterator(6, last_var.iter().map(|v| var_min / v));
    let ik_opts = IkOptions { weights: Some(w), ..Default::default() };
    let q_final = match ik_solve(chain, last_pose, &q0, &ik_opts) {
        Ok(q) => q,
        Err(Error::IkNonConvergence { iterate, .. }) => iterate,
        Err(e) => return Err(e),
    };
    let interp: Vec<DVector<f64>> = (0..t_len)
        .map(|t| {
            let s = if t_len > 1 { t as f64 / (t_len - 1) as f64 } else { 0.0 };
            chain.clamp(&(&q0 * (1.0 - s) + &q_final * s))
        })
        .collect();
    let greedy = greedy_path(chain, &targets, &q0)?;

    let mut outcomes = Vec::new();
    for (init_kind, init) in [(PathInit::Interpolated, interp), (PathInit::Greedy, greedy)] {
        let outcome = run_al(chain, &targets, init, opts)?;
        outcomes.push((init_kind, outcome));
    }

    let winner = outcomes
        .iter()
        .filter_map(|(kind, o)| o.best.as_ref().map(|(obj, path)| (*kind, *obj, path, o)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite objectives"));

    match winner {
        Some((kind, obj, path, outcome)) => {
            let problem = TubeProblem::new(chain, &targets, opts);
            let errors = problem.errors(path)?;
            let (viol, _) = problem.violation(&errors);
            let poses: Vec<RigidTransform> =
                path.iter().map(|q| chain.fk(q)).collect::<Result<_>>()?;
            let tracking_nll = nll_of_errors(&errors, &targets);
            Ok(OptimizedPath {
                joint_path: path.clone(),
                poses,
                report: OptimizeReport {
                    objective: obj,
                    tracking_nll,
                    max_violation: viol,
                    outer_iterations: outcome.outer_done,
                    accepted_objectives: outcome.history.clone(),
                    init: kind,
                },
            })
        }
        None => {
            let (_, worst) = outcomes
                .iter()
                .min_by(|a, b| {
                    a.1.final_violation
                        .partial_cmp(&b.1.final_violation)
                        .expect("finite violations")
                })
                .expect("two starts");
            Err(Error::TrajOptInfeasible {
                report: InfeasibleReport {
                    max_violation: worst.final_violation,
                    worst_step: worst.worst_step,
                    outer_iterations: worst.outer_done,
                },
            })
        }
    }
}

fn nll_of_errors(errors: &[DVector<f64>], targets: &[(RigidTransform, [f64; 6])]) -> f64 {
    let mut c = 0.0;
    for (e, (_, var)) in errors.iter().zip(targets) {
        for i in 0..TASK_DIM {
            c += 0.5 * e[i] * e[i] / var[i];
        }
    }
    c
}

/// Quadratic tracking cost of a pose path under a tube: half the summed
/// squared per-dimension deviations over variance.
pub fn trajectory_nll(model: &DiscreteGp, poses: &[RigidTransform]) -> Result<f64> {
    let targets = step_targets(model)?;
    if poses.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "pose path length",
            expected: targets.len(),
            got: poses.len(),
        });
    }
    let mut c = 0.0;
    for (pose, (target, var)) in poses.iter().zip(&targets) {
        let e = pose_deviation(pose, target);
        for i in 0..TASK_DIM {
            c += 0.5 * e[i] * e[i] / var[i];
        }
    }
    Ok(c)
}

/// [`trajectory_nll`] plus the Gaussian normalization constants.
pub fn trajectory_nll_full(model: &DiscreteGp, poses: &[RigidTransform]) -> Result<f64> {
    let targets = step_targets(model)?;
    let mut c = trajectory_nll(model, poses)?;
    let k = TASK_DIM as f64;
    for (_, var) in &targets {
        c += 0.5 * k * (2.0 * std::f64::consts::PI).ln();
        for v in var {
            c += 0.5 * v.ln();
        }
    }
    Ok(c)
}

fn pose_deviation(pose: &RigidTransform, target: &RigidTransform) -> [f64; 6] {
    use crate::manifold::quat;
    let rel = quat::canonical(&quat::normalize(&quat::mul(
        &quat::conjugate(&target.rotation),
        &pose.rotation,
    )));
    let phi = quat::log(&rel);
    [
        pose.translation[0] - target.translation[0],
        pose.translation[1] - target.translation[1],
        pose.translation[2] - target.translation[2],
        phi[0],
        phi[1],
        phi[2],
    ]
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log of the aggregated per-step density factor.
fn aggregate_log_density(logf: &[f64], q: LqNorm) -> f64 {
    match q {
        LqNorm::Power(p) => {
            let scaled: Vec<f64> = logf.iter().map(|l| l * p).collect();
            (logsumexp(&scaled) - (logf.len() as f64).ln()) / p
        }
        LqNorm::Max => logf.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn step_log_densities(path: &OptimizedPath, targets: &[(RigidTransform, [f64; 6])]) -> Vec<f64> {
    let k = TASK_DIM as f64;
    path.poses
        .iter()
        .zip(targets)
        .map(|(pose, (target, var))| {
            let e = pose_deviation(pose, target);
            let mut quad = 0.0;
            let mut logdet = 0.0;
            for i in 0..TASK_DIM {
                quad += 0.5 * e[i] * e[i] / var[i];
                logdet += 0.5 * var[i].ln();
            }
            -quad - logdet - 0.5 * k * (2.0 * std::f64::consts::PI).ln()
        })
        .collect()
}

/// Reweight mixture modes by how well the arm can realize each one: optimize
/// a path per mode and scale its prior by the aggregated density of the
/// achieved poses under that mode. Modes whose tube cannot be tracked get
/// weight zero.
pub fn modal_update_from_optimization(
    mixture: &GpMixture,
    chain: &KinematicChain,
    opts: &OptimizeOptions,
    q: LqNorm,
) -> Result<(GpMixture, Vec<Option<OptimizedPath>>)> {
    let mut new_modes = Vec::with_capacity(mixture.n_modes());
    let mut paths = Vec::with_capacity(mixture.n_modes());
    for mode in mixture.modes() {
        if mode.prior <= 0.0 {
            new_modes.push(mode.clone());
            paths.push(None);
            continue;
        }
        match optimize_path(chain, &mode.model, opts) {
            Ok(path) => {
                let targets = step_targets(&mode.model)?;
                let logf = step_log_densities(&path, &targets);
                let factor = aggregate_log_density(&logf, q).exp();
                new_modes.push(Mode { prior: mode.prior * factor, model: mode.model.clone() });
                paths.push(Some(path));
            }
            Err(Error::TrajOptInfeasible { .. }) | Err(Error::IkNonConvergence { .. }) => {
                new_modes.push(Mode { prior: 0.0, model: mode.model.clone() });
                paths.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let total: f64 = new_modes.iter().map(|m| m.prior).sum();
    if total <= 0.0 {
        return Err(Error::InfeasibleEvidence {
            detail: "no mode's tube is trackable by the chain".into(),
        });
    }
    for m in &mut new_modes {
        m.prior /= total;
    }
    let out = GpMixture::from_modes(new_modes, mixture.provenance.clone())?;
    Ok((out, paths))
}

const MAX_MODAL_PATHS: usize = 1024;

/// Chain-level counterpart of [`modal_update_from_optimization`]: every
/// nonzero-probability modal path is optimized as one concatenated tube, the
/// path distribution is reweighted by achieved density, and initial priors
/// plus transitions are rebuilt from the junction marginals.
pub fn chain_update_from_optimization(
    skills: &SkillChain,
    chain: &KinematicChain,
    opts: &OptimizeOptions,
    q: LqNorm,
) -> Result<(SkillChain, Vec<(ModalPath, f64)>)> {
    let paths = skills.enumerate_paths();
    if paths.len() > MAX_MODAL_PATHS {
        return Err(Error::InvalidValue {
            what: "modal path count",
            detail: format!("{} exceeds {MAX_MODAL_PATHS}", paths.len()),
        });
    }
    if paths.is_empty() {
        return Err(Error::InfeasibleChain);
    }

    let mut weights = Vec::with_capacity(paths.len());
    for mp in &paths {
        let mut means = Vec::new();
        let mut vars = Vec::new();
        let mut rate = 0.0;
        for (j, m) in mp.modes.iter().enumerate() {
            let model = &skills.skill(j).mode(*m).model;
            means.extend(model.means().iter().cloned());
            vars.extend(model.vars().iter().cloned());
            rate = model.sample_rate_hz();
        }
        let tube = DiscreteGp::from_parts(means, vars, rate)?;
        match optimize_path(chain, &tube, opts) {
            Ok(opt) => {
                let targets = step_targets(&tube)?;
                let logf = step_log_densities(&opt, &targets);
                let factor = aggregate_log_density(&logf, q).exp();
                weights.push(mp.probability * factor);
            }
            Err(Error::TrajOptInfeasible { .. }) | Err(Error::IkNonConvergence { .. }) => {
                weights.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InfeasibleEvidence {
            detail: "no modal path is trackable by the chain".into(),
        });
    }
    for w in &mut weights {
        *w /= total;
    }

    let mut out = skills.clone();
    // initial priors from the skill-0 marginal
    for m in 0..out.skills[0].n_modes() {
        let mass: f64 = paths
            .iter()
            .zip(&weights)
            .filter(|(p, _)| p.modes[0] == m)
            .map(|(_, w)| w)
            .sum();
        out.skills[0].modes[m].prior = mass;
    }
    // transitions from junction marginals
    for j in 0..out.transitions.len() {
        let (rows, cols) = (out.transitions[j].nrows(), out.transitions[j].ncols());
        let mut t = DMatrix::zeros(rows, cols);
        for (p, w) in paths.iter().zip(&weights) {
            t[(p.modes[j], p.modes[j + 1])] += w;
        }
        for k in 0..rows {
            let mass: f64 = t.row(k).iter().sum();
            if mass > 0.0 {
                for l in 0..cols {
                    t[(k, l)] /= mass;
                }
            }
        }
        out.transitions[j] = t;
    }

    let posterior = paths
        .into_iter()
        .zip(weights)
        .map(|(p, w)| (p, w))
        .collect();
    Ok((out, posterior))
}
