//! Design of the mapping that minimizes the maximum (worst single output)
//! information leakage `max_u H(S) - H(S|U=u)`.
//!
//! The inner convex program minimizes expected distortion subject to a cap
//! `epsilon` on the per-output leakage, written as
//! `delta*p(u) + sum_s p(u,s) log2(p(u,s)/p(u)) <= 0` for every output, with
//! `delta = H(S) - epsilon`. Since the minimum distortion is non-increasing
//! in `epsilon`, the distortion-budgeted problem is solved by bisecting
//! `epsilon` over `[0, H(S)]`.
//!
//! When Y is a deterministic function of S, the optimal mapping is also the
//! minimizer of `max_u D(p(Y|U=u) || zeta)` where `zeta(y)` is proportional
//! to `2^H(S|Y=y)`; [`minmax_via_zeta`] solves that form directly and serves
//! as a cross-check on the general program.

use std::sync::Arc;

use ndarray::Array2;

use crate::instance::{Kernel, ProblemInstance};
use crate::prob::{Channel, Pmf};
use crate::solver::{certify, minimize, ChannelProgram, ScalarFn, SolverResult};
use crate::{Error, Result, SUPPORT_ETA};

/// Line-search tolerance on epsilon, in bits.
const EPS_TOL: f64 = 1e-4;
/// Entries below this are zeroed after a solve (when the cleaned channel
/// stays feasible): the multiplicative updates and the warm-start smoothing
/// both leave dust that would otherwise read as spurious tiny outputs.
const SPARSIFY_TOL: f64 = 2e-6;
/// Distortion slack when comparing a solve against the budget during the
/// line search; a first-order method cannot pin a vertex closer than this.
const DIST_SLACK: f64 = 1e-6;

/// Result of a minmax-leakage design.
#[derive(Debug, Clone)]
pub struct MinmaxResult {
    pub channel: Channel,
    /// `E[d(Y,U)]` of the returned channel under the first distortion.
    pub distortion: f64,
    /// Leakage cap in bits: every supported output satisfies
    /// `H(S) - H(S|U=u) <= epsilon_bits`.
    pub epsilon_bits: f64,
    /// `H(S|U=u)` per output, in bits.
    pub per_output_entropy: Vec<f64>,
    /// `delta = H(S) - epsilon`, in bits.
    pub delta_param: f64,
    pub solver: SolverResult,
}

/// Convex program of the inner minimization: distortion objective, one
/// leakage constraint per output.
pub fn build_program(instance: &ProblemInstance, epsilon_bits: f64) -> Result<ChannelProgram> {
    if instance.distortions().is_empty() {
        return Err(Error::Invalid(
            "minmax design needs a distortion matrix (the objective)".into(),
        ));
    }
    let h_s = instance.s_entropy_bits();
    if !(-1e-9..=h_s + 1e-9).contains(&epsilon_bits) {
        return Err(Error::EpsilonOutOfRange {
            epsilon: epsilon_bits,
            h_s,
        });
    }
    let delta = (h_s - epsilon_bits).max(0.0);
    let kernel = Arc::new(Kernel::new(instance)?);
    let flag = Kernel::shared_flag();

    let objective = ScalarFn::linear(
        kernel.distortion_gradient(&instance.distortions()[0].matrix),
        0.0,
    );

    let mut constraints = Vec::with_capacity(instance.u_size() + instance.distortions().len());
    for u in 0..instance.u_size() {
        let kv = kernel.clone();
        let kg = kernel.clone();
        let fl = flag.clone();
        constraints.push(ScalarFn::new(
            move |x: &Array2<f64>| kv.minmax_constraint(u, delta, x),
            move |x: &Array2<f64>| kg.minmax_constraint_grad(u, delta, x, Some(&fl)),
        ));
    }
    for d in instance.distortions().iter().skip(1) {
        constraints.push(ScalarFn::linear(
            kernel.distortion_gradient(&d.matrix),
            -d.budget,
        ));
    }

    let mut program = ChannelProgram::new(
        instance.decision_alphabet()?,
        instance.u_alphabet().clone(),
        objective,
        constraints,
    );
    program.floor_flag = Some(flag);
    Ok(program)
}

/// Zero out sub-threshold entries if the cleaned channel stays feasible.
fn sparsify(program: &ChannelProgram, x: &Array2<f64>) -> Array2<f64> {
    let mut cleaned = x.clone();
    let mut touched = false;
    for mut row in cleaned.rows_mut() {
        for v in row.iter_mut() {
            if *v < SPARSIFY_TOL {
                *v = 0.0;
                touched = true;
            }
        }
        let s: f64 = row.sum();
        row /= s;
    }
    if !touched {
        return cleaned;
    }
    let ok = program
        .constraints
        .iter()
        .all(|c| c.value(&cleaned) <= program.tol.feasibility_tol);
    if ok {
        cleaned
    } else {
        x.clone()
    }
}

fn finish(
    instance: &ProblemInstance,
    program: &ChannelProgram,
    mut solver: SolverResult,
    epsilon_bits: f64,
) -> Result<MinmaxResult> {
    let cleaned = sparsify(program, solver.channel.rows());
    let channel = Channel::from_array(program.input.clone(), program.output.clone(), cleaned)?;
    solver.objective_value = program.objective.value(channel.rows());
    solver.constraint_residuals = program
        .constraints
        .iter()
        .map(|c| c.value(channel.rows()).max(0.0))
        .collect();
    let max_res = solver.max_residual();
    if max_res <= program.tol.feasibility_tol {
        if let Ok(kkt) = certify(program, &channel) {
            solver.kkt_residual = kkt;
        }
    }
    solver.converged = max_res <= program.tol.feasibility_tol && solver.kkt_residual <= 1e-6;
    solver.channel = channel.clone();

    let distortion = instance.distortion(&channel, 0)?;
    let per_output_entropy = instance.per_output_entropy_bits(&channel)?;
    Ok(MinmaxResult {
        channel,
        distortion,
        epsilon_bits,
        per_output_entropy,
        delta_param: (instance.s_entropy_bits() - epsilon_bits).max(0.0),
        solver,
    })
}

/// Minimum expected distortion subject to a cap on the maximum information
/// leakage, and the channel achieving it.
pub fn min_distortion_given_maxleak(
    instance: &ProblemInstance,
    epsilon_bits: f64,
) -> Result<MinmaxResult> {
    min_distortion_from(instance, epsilon_bits, None)
}

fn min_distortion_from(
    instance: &ProblemInstance,
    epsilon_bits: f64,
    warm: Option<&Channel>,
) -> Result<MinmaxResult> {
    let program = build_program(instance, epsilon_bits)?;
    // The uniform channel makes every posterior equal the prior, so it meets
    // any leakage cap; it is the default start.
    let init = match warm {
        Some(c) => c.clone(),
        None => Channel::uniform(program.input.clone(), program.output.clone()),
    };
    let solver = minimize(&program, &init);
    finish(instance, &program, solver, epsilon_bits)
}

/// Bisection driver shared by the two minmax routes: find the smallest
/// epsilon whose minimum distortion fits the budget. Valid because that
/// minimum is non-increasing in epsilon.
fn line_search_epsilon(
    h_s: f64,
    delta_budget: f64,
    mut solve_at: impl FnMut(f64, Option<&Channel>) -> Result<MinmaxResult>,
) -> Result<MinmaxResult> {
    // A failed solve can report arbitrarily low distortion, so a step only
    // counts as fitting the budget when its constraints essentially held.
    // 1e-6 residual slack perturbs the optimal value by far less than the
    // line-search tolerance while tolerating a grinding inner solve.
    let fits = |r: &MinmaxResult| {
        r.distortion <= delta_budget + DIST_SLACK && r.solver.max_residual() <= 1e-6
    };
    let top = solve_at(h_s, None)?;
    if top.distortion > delta_budget + DIST_SLACK {
        return Err(Error::Infeasible {
            index: 0,
            budget: delta_budget,
            min_achievable: top.distortion,
        });
    }
    let bottom = solve_at(0.0, Some(&top.channel))?;
    if fits(&bottom) {
        return Ok(bottom);
    }

    let mut lo = 0.0;
    let mut hi = h_s;
    let mut best = top;
    for _ in 0..40 {
        if hi - lo <= EPS_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let r = solve_at(mid, Some(&best.channel))?;
        if fits(&r) {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

/// Minimize the maximum information leakage subject to a distortion budget,
/// by line search over the leakage cap.
pub fn solve_minmax_leakage(
    instance: &ProblemInstance,
    delta_budget: f64,
) -> Result<MinmaxResult> {
    let h_s = instance.s_entropy_bits();
    line_search_epsilon(h_s, delta_budget, |eps, warm| {
        min_distortion_from(instance, eps, warm)
    })
}

/// The target posterior for minmax-optimal release when Y is a deterministic
/// function of S: `zeta(y)` proportional to `2^H(S|Y=y)` on the support of
/// Y, zero elsewhere.
pub fn zeta_distribution(instance: &ProblemInstance) -> Result<Pmf> {
    instance.check_deterministic_y()?;
    let p_y = instance.y_pmf();
    let h_y = instance.cond_entropy_bits();
    let mut weights = vec![0.0; p_y.len()];
    let mut total = 0.0;
    for (y, &h) in h_y.iter().enumerate() {
        if p_y.get(y) >= SUPPORT_ETA {
            weights[y] = h.exp2();
            total += weights[y];
        }
    }
    for w in &mut weights {
        *w /= total;
    }
    Pmf::new(instance.y_alphabet(), weights)
}

/// `log2 sum_y 2^H(S|Y=y)` over the support of Y.
fn log2_zeta_normalizer(instance: &ProblemInstance) -> f64 {
    let p_y = instance.y_pmf();
    let h_y = instance.cond_entropy_bits();
    let supported: Vec<f64> = h_y
        .iter()
        .zip(p_y.probs())
        .filter(|(_, &p)| p >= SUPPORT_ETA)
        .map(|(&h, _)| h)
        .collect();
    let m = supported.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + supported.iter().map(|&h| (h - m).exp2()).sum::<f64>().log2()
}

fn build_zeta_program(
    instance: &ProblemInstance,
    zeta: Arc<Vec<f64>>,
    tau: f64,
) -> Result<ChannelProgram> {
    let kernel = Arc::new(Kernel::new(instance)?);
    let flag = Kernel::shared_flag();
    let objective = ScalarFn::linear(
        kernel.distortion_gradient(&instance.distortions()[0].matrix),
        0.0,
    );
    let mut constraints = Vec::with_capacity(instance.u_size());
    for u in 0..instance.u_size() {
        let kv = kernel.clone();
        let kg = kernel.clone();
        let zv = zeta.clone();
        let zg = zeta.clone();
        let fl = flag.clone();
        constraints.push(ScalarFn::new(
            move |x: &Array2<f64>| kv.zeta_constraint(u, tau, &zv, x),
            move |x: &Array2<f64>| kg.zeta_constraint_grad(u, tau, &zg, x, Some(&fl)),
        ));
    }
    for d in instance.distortions().iter().skip(1) {
        constraints.push(ScalarFn::linear(
            kernel.distortion_gradient(&d.matrix),
            -d.budget,
        ));
    }
    let mut program = ChannelProgram::new(
        instance.decision_alphabet()?,
        instance.u_alphabet().clone(),
        objective,
        constraints,
    );
    program.floor_flag = Some(flag);
    Ok(program)
}

/// Minmax design through the zeta characterization: minimize distortion
/// subject to `D(p(Y|U=u) || zeta) <= tau` per output, line-searching the
/// cap. Only valid when Y is a deterministic function of S; agrees with
/// [`solve_minmax_leakage`] through the identity
/// `H(S|U=u) = -D(p(Y|U=u) || zeta) + log2 sum_y 2^H(S|Y=y)`.
pub fn minmax_via_zeta(instance: &ProblemInstance, delta_budget: f64) -> Result<MinmaxResult> {
    instance.check_deterministic_y()?;
    if instance.distortions().is_empty() {
        return Err(Error::Invalid(
            "minmax design needs a distortion matrix (the objective)".into(),
        ));
    }
    let zeta = Arc::new(zeta_distribution(instance)?.probs().to_vec());
    let h_s = instance.s_entropy_bits();
    let log2z = log2_zeta_normalizer(instance);

    line_search_epsilon(h_s, delta_budget, |eps, warm| {
        let tau = (eps - h_s + log2z).max(0.0);
        let program = build_zeta_program(instance, zeta.clone(), tau)?;
        let init = match warm {
            Some(c) => c.clone(),
            None => Channel::uniform(program.input.clone(), program.output.clone()),
        };
        let solver = minimize(&program, &init);
        finish(instance, &program, solver, eps)
    })
}
