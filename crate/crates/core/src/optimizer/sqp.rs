//! Trust-region sequential quadratic programming on an ℓ1 merit function, with a
//! finite-difference Lagrangian Hessian, second-order corrections, and an elastic subproblem
//! when the linearised constraints are inconsistent inside the trust region.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: DVector<f64>,
    /// Nonlinear equality constraints `c(x) = 0`.
    pub constraints: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

/// Smooth objective with nonlinear equalities, linear equalities `A x = b` and linear
/// inequalities `G x ≤ h`.
pub trait Nlp: Sync {
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation>;
    fn equality(&self) -> (&DMatrix<f64>, &DVector<f64>);
    fn inequality(&self) -> (&DMatrix<f64>, &DVector<f64>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Sqp,
    SecondOrder,
    /// Subproblem with ℓ1 slacks on the nonlinear constraints.
    Elastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub trust_radius: f64,
    pub step_norm: f64,
    pub penalty: f64,
    pub kind: StepKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// No further progress possible from a feasible point that is not yet stationary.
    Stalled,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct SqpOptions {
    pub max_iterations: usize,
    /// Initial half-width of the box trust region.
    pub initial_radius: f64,
    pub feasibility: f64,
    pub stationarity: f64,
}

#[derive(Clone, Debug)]
pub struct SqpOutcome {
    pub x: DVector<f64>,
    pub evaluation: Evaluation,
    pub status: SolveStatus,
    pub iterations: usize,
    pub feasibility: f64,
    pub stationarity: f64,
    /// Inequality rows active in the last quadratic subproblem.
    pub active: Vec<usize>,
    pub log: Vec<IterationRecord>,
}

struct QpStep {
    d: DVector<f64>,
    /// Multipliers of the nonlinear constraints.
    multipliers: DVector<f64>,
    /// `(row, multiplier)` for active inequalities.
    active: Vec<(usize, f64)>,
    elastic: bool,
}

/// `min ½ dᵀBd + gᵀd` subject to `J d = -r`, `A d = b − A x`, `G d ≤ h − G x` and
/// `|d|∞ ≤ radius`.
///
/// With `elastic = Some(μ)` the nonlinear rows become `J d + r = v − w` with `v, w ≥ 0`
/// charged `μ` per unit.
#[allow(clippy::too_many_arguments)]
fn solve_subproblem<N: Nlp>(
    nlp: &N,
    x: &DVector<f64>,
    b: &DMatrix<f64>,
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    rhs: &DVector<f64>,
    radius: f64,
    elastic: Option<f64>,
) -> Option<QpStep> {
    let n = x.len();
    let m = jac.nrows();
    let (a, ab) = nlp.equality();
    let (gi, gh) = nlp.inequality();
    let slacks = if elastic.is_some() { 2 * m } else { 0 };
    let nt = n + slacks;
    let meq = m + a.nrows();
    let box_rows = if radius.is_finite() { 2 * n } else { 0 };
    let rows = meq + gi.nrows() + box_rows + slacks;
    let mut amat = vec![0.0; rows * nt];
    let mut bvec = Vec::with_capacity(rows);
    let mut row = 0;
    let mut put = |r: usize, c: usize, v: f64| amat[r * nt + c] = v;
    for r in 0..m {
        for c in 0..n {
            put(row, c, jac[(r, c)]);
        }
        if elastic.is_some() {
            put(row, n + r, -1.0);
            put(row, n + m + r, 1.0);
        }
        bvec.push(-rhs[r]);
        row += 1;
    }
    let ax = a * x;
    for r in 0..a.nrows() {
        for c in 0..n {
            put(row, c, a[(r, c)]);
        }
        bvec.push(ab[r] - ax[r]);
        row += 1;
    }
    let gx = gi * x;
    for r in 0..gi.nrows() {
        for c in 0..n {
            put(row, c, gi[(r, c)]);
        }
        bvec.push(gh[r] - gx[r]);
        row += 1;
    }
    for k in 0..box_rows {
        put(row, k / 2, if k % 2 == 0 { 1.0 } else { -1.0 });
        bvec.push(radius);
        row += 1;
    }
    for k in 0..slacks {
        put(row, n + k, -1.0);
        bvec.push(0.0);
        row += 1;
    }

    let mut q = vec![0.0; nt * nt];
    for i in 0..n {
        for j in 0..n {
            q[i * nt + j] = b[(i, j)];
        }
    }
    let mut c: Vec<f64> = g.iter().copied().collect();
    if let Some(mu) = elastic {
        let eps = 1e-8 * b.diagonal().amax().max(f64::MIN_POSITIVE);
        for k in n..nt {
            q[k * nt + k] = eps;
        }
        c.extend(std::iter::repeat(mu).take(slacks));
    }
    let sol = quadprog::solve_qp(&mut q, &c, &amat, &bvec, meq, false).ok()?;
    let d = DVector::from_column_slice(&sol.sol[..n]);
    let active: Vec<(usize, f64)> = sol
        .iact
        .iter()
        .filter(|&&r| r >= meq && r < meq + gi.nrows())
        .map(|&r| (r - meq, sol.lagr[r]))
        .collect();

    // Equality multipliers from the stationarity of the subproblem with the inequality
    // multipliers held fixed; the solver reports them without sign.
    let mut residual = b * &d + g;
    for &(r, l) in &active {
        residual += gi.row(r).transpose() * l;
    }
    for &r in sol.iact.iter().filter(|&&r| r >= meq + gi.nrows() && r < meq + gi.nrows() + box_rows) {
        let k = r - meq - gi.nrows();
        residual[k / 2] += if k % 2 == 0 { sol.lagr[r] } else { -sol.lagr[r] };
    }
    let mut eq_rows = DMatrix::zeros(meq, n);
    eq_rows.rows_mut(0, m).copy_from(jac);
    eq_rows.rows_mut(m, a.nrows()).copy_from(a);
    let all = least_squares(&eq_rows.transpose(), &(-residual));
    Some(QpStep { d, multipliers: all.rows(0, m).into_owned(), active, elastic: elastic.is_some() })
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    svd.solve(b, tol).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// ℓ1 norm of all constraint violations at `x`, with the nonlinear residual `c`.
fn infeasibility<N: Nlp>(nlp: &N, x: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let (a, ab) = nlp.equality();
    let (gi, gh) = nlp.inequality();
    c.abs().sum() + (a * x - ab).abs().sum() + (gi * x - gh).iter().map(|v| v.max(0.0)).sum::<f64>()
}

/// Largest violation of any constraint.
fn feasibility<N: Nlp>(nlp: &N, x: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let (a, ab) = nlp.equality();
    let (gi, gh) = nlp.inequality();
    let eq = (a * x - ab).amax();
    let ineq = (gi * x - gh).iter().fold(0.0f64, |m, v| m.max(*v));
    c.amax().max(eq).max(ineq)
}

/// Norm of the Lagrangian gradient, with multipliers refitted at `x` on the given active set.
/// Negative inequality multipliers count as stationarity violations.
fn stationarity<N: Nlp>(nlp: &N, e: &Evaluation, active: &[usize]) -> f64 {
    let (a, _) = nlp.equality();
    let (gi, _) = nlp.inequality();
    let n = e.gradient.len();
    let m = e.jacobian.nrows();
    let cols = m + a.nrows() + active.len();
    let mut at = DMatrix::zeros(n, cols);
    at.columns_mut(0, m).copy_from(&e.jacobian.transpose());
    at.columns_mut(m, a.nrows()).copy_from(&a.transpose());
    for (k, &r) in active.iter().enumerate() {
        at.set_column(m + a.nrows() + k, &gi.row(r).transpose());
    }
    let lambda = least_squares(&at, &(-&e.gradient));
    let grad = &e.gradient + &at * &lambda;
    let meq = m + a.nrows();
    let sign = (meq..cols).fold(0.0f64, |acc, k| acc.max(-lambda[k]));
    grad.amax().max(sign)
}

fn lagrangian_gradient(e: &Evaluation, lambda: &DVector<f64>) -> DVector<f64> {
    &e.gradient + e.jacobian.transpose() * lambda
}

/// Hessian of `f + λᵀc` by forward differences of the analytic gradients.
fn lagrangian_hessian<N: Nlp>(nlp: &N, x: &DVector<f64>, e: &Evaluation, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = x.len();
    let g0 = lagrangian_gradient(e, lambda);
    let columns: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = 1e-7 * x[j].abs().max(0.1);
            let mut xp = x.clone();
            xp[j] += h;
            let ep = nlp.evaluate(&xp)?;
            Ok((lagrangian_gradient(&ep, lambda) - &g0) / h)
        })
        .collect::<Result<_>>()?;
    let h = DMatrix::from_columns(&columns);
    Ok((&h + h.transpose()) * 0.5)
}

/// Makes the Hessian definite for the subproblem without changing it on the null space `Z`
/// of the equalities and active inequalities: reflects negative curvature of `ZᵀHZ` if
/// there is any, then adds `σ YYᵀ` on the complementary range space.
fn convexify<N: Nlp>(nlp: &N, h: &DMatrix<f64>, jac: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
    let n = h.nrows();
    let (a, _) = nlp.equality();
    let (gi, _) = nlp.inequality();
    let scale = h.diagonal().abs().max().max(1e-300);
    let floor = 1e-8 * scale;
    let mut c = DMatrix::zeros(jac.nrows() + a.nrows() + active.len(), n);
    c.rows_mut(0, jac.nrows()).copy_from(jac);
    c.rows_mut(jac.nrows(), a.nrows()).copy_from(a);
    for (k, &r) in active.iter().enumerate() {
        c.set_row(jac.nrows() + a.nrows() + k, &gi.row(r));
    }
    let split = (c.transpose() * &c).symmetric_eigen();
    let cut = 1e-10 * split.eigenvalues.amax();
    let (null, range): (Vec<usize>, Vec<usize>) = (0..n).partition(|&k| split.eigenvalues[k] <= cut);
    let z = DMatrix::from_columns(&null.iter().map(|&k| split.eigenvectors.column(k).into_owned()).collect::<Vec<_>>());
    let y = DMatrix::from_columns(&range.iter().map(|&k| split.eigenvectors.column(k).into_owned()).collect::<Vec<_>>());

    let mut hm = h.clone();
    if !null.is_empty() {
        let reduced = z.transpose() * h * &z;
        let mut eig = reduced.clone().symmetric_eigen();
        if eig.eigenvalues.min() < floor {
            eig.eigenvalues = eig.eigenvalues.map(|v| v.abs().max(floor));
            hm += &z * (eig.recompose() - reduced) * z.transpose();
        }
    }
    let hm = (&hm + hm.transpose()) * 0.5;
    if range.is_empty() {
        return hm;
    }
    let yyt = &y * y.transpose();
    let mut sigma = scale;
    for _ in 0..8 {
        let b = &hm + &yyt * sigma;
        if b.clone().cholesky().is_some() && b.clone().symmetric_eigen().eigenvalues.min() >= floor {
            return b;
        }
        sigma *= 10.0;
    }
    let mut eig = (&hm + &yyt * sigma).symmetric_eigen();
    eig.eigenvalues = eig.eigenvalues.map(|v| v.max(floor));
    let r = eig.recompose();
    (&r + r.transpose()) * 0.5
}

/// Least-squares multipliers of the nonlinear constraints at a point.
fn fitted_multipliers<N: Nlp>(nlp: &N, e: &Evaluation) -> DVector<f64> {
    let (a, _) = nlp.equality();
    let m = e.jacobian.nrows();
    let mut at = DMatrix::zeros(e.gradient.len(), m + a.nrows());
    at.columns_mut(0, m).copy_from(&e.jacobian.transpose());
    at.columns_mut(m, a.nrows()).copy_from(&a.transpose());
    least_squares(&at, &(-&e.gradient)).rows(0, m).into_owned()
}

fn outcome<N: Nlp>(nlp: &N, x: DVector<f64>, e: Evaluation, status: Option<SolveStatus>, iterations: usize, active: Vec<usize>, log: Vec<IterationRecord>, opts: &SqpOptions) -> SqpOutcome {
    let feas = feasibility(nlp, &x, &e.constraints);
    let stat = stationarity(nlp, &e, &active);
    let converged = feas <= opts.feasibility && stat <= opts.stationarity * (1.0 + e.objective.abs());
    let status = if converged { SolveStatus::Converged } else { status.unwrap_or(SolveStatus::Stalled) };
    SqpOutcome { x, evaluation: e, status, iterations, feasibility: feas, stationarity: stat, active, log }
}

/// Elastic step whose penalty is raised until it achieves a tenth of the best linearised
/// infeasibility reduction available inside the trust region.
fn steered_elastic<N: Nlp>(
    nlp: &N,
    x: &DVector<f64>,
    b: &DMatrix<f64>,
    e: &Evaluation,
    radius: f64,
    infeas0: f64,
    penalty: &mut f64,
) -> Option<QpStep> {
    let n = x.len();
    let linear = |d: &DVector<f64>| infeasibility(nlp, &(x + d), &(&e.constraints + &e.jacobian * d));
    let small = DMatrix::identity(n, n) * 1e-8;
    let feasible = solve_subproblem(nlp, x, &small, &DVector::zeros(n), &e.jacobian, &e.constraints, radius, Some(1.0))?;
    let best = infeas0 - linear(&feasible.d);
    let mut last = None;
    for _ in 0..8 {
        let qp = solve_subproblem(nlp, x, b, &e.gradient, &e.jacobian, &e.constraints, radius, Some(*penalty))?;
        if infeas0 - linear(&qp.d) >= 0.1 * best {
            return Some(qp);
        }
        last = Some(qp);
        *penalty *= 10.0;
    }
    last
}

/// Closest point to `x` satisfying the linear constraints.
fn project_linear<N: Nlp>(nlp: &N, x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.len();
    let none = DMatrix::zeros(0, n);
    let eye = DMatrix::identity(n, n);
    let qp = solve_subproblem(nlp, x, &eye, &DVector::zeros(n), &none, &DVector::zeros(0), f64::INFINITY, None)
        .ok_or(Error::InfeasibleMask)?;
    Ok(x + qp.d)
}

/// Runs SQP from `x0`, first moved onto the linear constraints.
pub fn solve<N: Nlp>(nlp: &N, x0: DVector<f64>, opts: &SqpOptions) -> Result<SqpOutcome> {
    let mut x = project_linear(nlp, &x0)?;
    let mut e = nlp.evaluate(&x)?;
    let m = e.constraints.len();
    let mut penalty: f64 = 1.0;
    let mut radius = opts.initial_radius;
    let min_radius = 1e-12 * (1.0 + x.amax());
    let mut log = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    let mut lambda = fitted_multipliers(nlp, &e);

    for iteration in 0..opts.max_iterations {
        let feas = feasibility(nlp, &x, &e.constraints);
        let stat = stationarity(nlp, &e, &active);
        if iteration > 0 && feas <= opts.feasibility && stat <= opts.stationarity * (1.0 + e.objective.abs()) {
            return Ok(outcome(nlp, x, e, None, iteration, active, log, opts));
        }

        let h = lagrangian_hessian(nlp, &x, &e, &lambda)?;
        let b = convexify(nlp, &h, &e.jacobian, &active);
        let infeas0 = infeasibility(nlp, &x, &e.constraints);
        let mut accepted = None;
        while accepted.is_none() && radius >= min_radius {
            let plain = solve_subproblem(nlp, &x, &b, &e.gradient, &e.jacobian, &e.constraints, radius, None);
            let qp = match plain {
                Some(qp) => qp,
                None => match steered_elastic(nlp, &x, &b, &e, radius, infeas0, &mut penalty) {
                    Some(qp) => qp,
                    None => break,
                },
            };
            let linear = infeasibility(nlp, &(&x + &qp.d), &(&e.constraints + &e.jacobian * &qp.d));
            let reduction = (infeas0 - linear).max(0.0);
            let model = e.gradient.dot(&qp.d) + 0.5 * qp.d.dot(&(&h * &qp.d));
            let lam_max = qp.multipliers.amax().max(qp.active.iter().fold(0.0f64, |acc, a| acc.max(a.1.abs())));
            let mut required = if qp.elastic { 0.0 } else { 1.1 * lam_max };
            if !qp.elastic && reduction > 0.0 && model > 0.0 {
                required = required.max(model / (0.5 * reduction));
            }
            // The penalty may also relax once the multipliers no longer call for it, so an
            // early infeasible phase does not leave the merit function dominated by
            // second-order constraint errors.
            if penalty < required || (!qp.elastic && penalty > 10.0 * required && required > 0.0) {
                penalty = 2.0 * required;
            }
            let predicted = -model + penalty * reduction;
            log::debug!("sqp {iteration}: f {:.6e} feasibility {feas:.3e} stationarity {stat:.3e} penalty {penalty:.3e} radius {radius:.3e} elastic {}", e.objective, qp.elastic);
            let merit = |xt: &DVector<f64>, et: &Evaluation| et.objective + penalty * infeasibility(nlp, xt, &et.constraints);
            let phi0 = merit(&x, &e);
            let ratio = |d: &DVector<f64>| -> Option<(DVector<f64>, Evaluation, f64)> {
                let xt = &x + d;
                let et = nlp.evaluate(&xt).ok()?;
                let phi = merit(&xt, &et);
                let r = if predicted > 0.0 { (phi0 - phi) / predicted } else if phi <= phi0 { 1.0 } else { -1.0 };
                phi.is_finite().then_some((xt, et, r))
            };
            let step_norm = qp.d.amax();
            let mut kind = if qp.elastic { StepKind::Elastic } else { StepKind::Sqp };
            let mut trial = ratio(&qp.d).filter(|t| t.2 >= 0.1);
            if trial.is_none() && !qp.elastic && m > 0 {
                // Second-order correction of the nonlinear constraints.
                if let Some(et) = nlp.evaluate(&(&x + &qp.d)).ok() {
                    let rhs = &et.constraints - &e.jacobian * &qp.d;
                    if let Some(soc) = solve_subproblem(nlp, &x, &b, &e.gradient, &e.jacobian, &rhs, radius, None) {
                        trial = ratio(&soc.d).filter(|t| t.2 >= 0.1);
                        kind = StepKind::SecondOrder;
                    }
                }
            }
            match trial {
                Some((xt, et, r)) => {
                    if r > 0.75 && step_norm >= 0.99 * radius {
                        radius *= 2.0;
                    } else if r < 0.25 {
                        radius *= 0.5;
                    }
                    accepted = Some((xt, et, qp, kind));
                }
                None => radius = 0.25 * step_norm.min(radius),
            }
        }

        match accepted {
            Some((xt, et, qp, kind)) => {
                let s = &xt - &x;
                lambda = if qp.elastic { fitted_multipliers(nlp, &et) } else { qp.multipliers };
                active = qp.active.iter().map(|a| a.0).collect();
                log.push(IterationRecord {
                    iteration,
                    objective: et.objective,
                    feasibility: feasibility(nlp, &xt, &et.constraints),
                    stationarity: stat,
                    trust_radius: radius,
                    step_norm: s.amax(),
                    penalty,
                    kind,
                });
                x = xt;
                e = et;
            }
            None => {
                if feasibility(nlp, &x, &e.constraints) <= opts.feasibility {
                    return Ok(outcome(nlp, x, e, Some(SolveStatus::Stalled), iteration + 1, active, log, opts));
                }
                return Err(Error::LineSearch);
            }
        }
    }
    Ok(outcome(nlp, x, e, Some(SolveStatus::MaxIterations), opts.max_iterations, active, log, opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min x0² + x1² + x2 subject to x0·x1 = 1, x2 = 0.5, x0 ≤ 3.
    struct Hyperbola {
        a: DMatrix<f64>,
        ab: DVector<f64>,
        g: DMatrix<f64>,
        gh: DVector<f64>,
    }

    impl Hyperbola {
        fn new(upper: f64) -> Self {
            Hyperbola {
                a: DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
                ab: DVector::from_vec(vec![0.5]),
                g: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
                gh: DVector::from_vec(vec![upper]),
            }
        }
    }

    impl Nlp for Hyperbola {
        fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
            Ok(Evaluation {
                objective: x[0] * x[0] + x[1] * x[1] + x[2],
                gradient: DVector::from_vec(vec![2.0 * x[0], 2.0 * x[1], 1.0]),
                constraints: DVector::from_vec(vec![x[0] * x[1] - 1.0]),
                jacobian: DMatrix::from_row_slice(1, 3, &[x[1], x[0], 0.0]),
            })
        }
        fn equality(&self) -> (&DMatrix<f64>, &DVector<f64>) {
            (&self.a, &self.ab)
        }
        fn inequality(&self) -> (&DMatrix<f64>, &DVector<f64>) {
            (&self.g, &self.gh)
        }
    }

    fn opts() -> SqpOptions {
        SqpOptions { max_iterations: 100, initial_radius: 1.0, feasibility: 1e-10, stationarity: 1e-9 }
    }

    #[test]
    fn converges_on_a_curved_constraint() {
        let nlp = Hyperbola::new(3.0);
        let out = solve(&nlp, DVector::from_vec(vec![2.0, 2.0, 0.0]), &opts()).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{}", out.x);
        assert!((out.x[2] - 0.5).abs() < 1e-12);
        assert!((out.evaluation.objective - 2.5).abs() < 1e-9);
    }

    #[test]
    fn active_bound_is_reported() {
        // x0 ≤ 0.5 forces x1 = 2: objective 4.25 + 0.5.
        let nlp = Hyperbola::new(0.5);
        let out = solve(&nlp, DVector::from_vec(vec![0.4, 3.0, 0.0]), &opts()).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert!((out.x[0] - 0.5).abs() < 1e-8, "{}", out.x);
        assert_eq!(out.active, vec![0]);
        assert!((out.evaluation.objective - 4.75).abs() < 1e-8);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let nlp = Hyperbola::new(3.0);
        let o = SqpOptions { max_iterations: 2, ..opts() };
        let out = solve(&nlp, DVector::from_vec(vec![2.9, 0.1, 0.0]), &o).unwrap();
        assert_eq!(out.status, SolveStatus::MaxIterations);
        assert_eq!(out.iterations, 2);
    }
}
