//! Design of the mapping that minimizes average information leakage `I(S;U)`
//! subject to distortion budgets, plus tradeoff-curve sweeps over budgets.
//!
//! The decision variable is `p(u|y)` (or `p(u|y,s)` when the mapping may see
//! the private variable directly). The auxiliary quantities `p(u|s)` and
//! `p(u)` that couple to the decision variable through linear identities are
//! computed from it rather than treated as separate unknowns, so the coupling
//! holds exactly by construction.

use std::sync::Arc;

use ndarray::Array2;

use crate::instance::{Kernel, ProblemInstance};
use crate::prob::Channel;
use crate::solver::{certify, minimize, ChannelProgram, ScalarFn, SolverResult, TracePoint};
use crate::{Error, Result};

/// Convex program for the minimum-average-leakage design: objective
/// `I(S;U)`, one linear constraint per distortion budget.
pub fn build_program(instance: &ProblemInstance) -> Result<ChannelProgram> {
    let kernel = Arc::new(Kernel::new(instance)?);
    let flag = Kernel::shared_flag();

    let k_val = kernel.clone();
    let k_grad = kernel.clone();
    let grad_flag = flag.clone();
    let objective = ScalarFn::new(
        move |x: &Array2<f64>| k_val.leakage_bits(x),
        move |x: &Array2<f64>| k_grad.leakage_grad(x, Some(&grad_flag)),
    );

    let constraints = instance
        .distortions()
        .iter()
        .map(|d| ScalarFn::linear(kernel.distortion_gradient(&d.matrix), -d.budget))
        .collect();

    let mut program = ChannelProgram::new(
        instance.decision_alphabet()?,
        instance.u_alphabet().clone(),
        objective,
        constraints,
    );
    program.floor_flag = Some(flag);
    Ok(program)
}

/// A strictly interior starting channel that respects the budgets where
/// possible: uniform when uniform is feasible, otherwise a blend of the
/// per-row least-distortion vertex with uniform.
fn initial_channel(instance: &ProblemInstance, program: &ChannelProgram) -> Channel {
    let uniform = Channel::uniform(program.input.clone(), program.output.clone());
    if instance.distortions().is_empty() {
        return uniform;
    }
    let feasible_at = |x: &Array2<f64>| {
        program
            .constraints
            .iter()
            .all(|c| c.value(x) <= 1e-12)
    };
    if feasible_at(uniform.rows()) {
        return uniform;
    }

    // per-row vertex minimizing the budget-normalized distortion sum
    let kernel = Kernel::new(instance).expect("program construction validated the instance");
    let n_u = instance.u_size();
    let mut vertex = Array2::zeros((kernel.n_rows, n_u));
    for r in 0..kernel.n_rows {
        let y = kernel.row_y[r];
        let mut best = 0usize;
        let mut best_score = f64::INFINITY;
        for u in 0..n_u {
            let score: f64 = instance
                .distortions()
                .iter()
                .map(|d| d.matrix[[y, u]] / d.budget.max(1e-9))
                .sum();
            if score < best_score {
                best_score = score;
                best = u;
            }
        }
        vertex[[r, best]] = 1.0;
    }

    // largest uniform blend that stays feasible, backed off for slack
    let mut beta: f64 = 1.0;
    for (c, d) in program.constraints.iter().zip(instance.distortions()) {
        let ev = c.value(&vertex) + d.budget;
        let eu = c.value(uniform.rows()) + d.budget;
        if eu > d.budget && ev < d.budget {
            beta = beta.min((d.budget - ev) / (eu - ev));
        } else if ev >= d.budget {
            beta = 0.0;
        }
    }
    let beta = (0.5 * beta).clamp(0.0, 1.0);
    let blended = &vertex * (1.0 - beta) + uniform.rows() * beta;
    Channel::from_array(program.input.clone(), program.output.clone(), blended)
        .expect("blend of stochastic matrices is stochastic")
}

/// Per-constraint feasibility check; errors with the minimum achievable
/// distortion when a budget cannot be met by any mapping.
fn check_feasibility(instance: &ProblemInstance) -> Result<()> {
    for (k, d) in instance.distortions().iter().enumerate() {
        let min_achievable = instance.min_achievable_distortion(k);
        if min_achievable > d.budget + 1e-12 {
            return Err(Error::Infeasible {
                index: k,
                budget: d.budget,
                min_achievable,
            });
        }
    }
    Ok(())
}

/// Exact result for the case where some constant output satisfies every
/// budget: that mapping is independent of the data, so the leakage is zero.
fn constant_output_result(
    instance: &ProblemInstance,
    program: &ChannelProgram,
    u: usize,
) -> SolverResult {
    let channel = Channel::constant(program.input.clone(), program.output.clone(), u);
    let residuals: Vec<f64> = program
        .constraints
        .iter()
        .map(|c| c.value(channel.rows()).max(0.0))
        .collect();
    let kkt_residual = certify(program, &channel).unwrap_or(f64::INFINITY);
    let max_res = residuals.iter().cloned().fold(0.0, f64::max);
    let _ = instance;
    SolverResult {
        channel,
        objective_value: 0.0,
        converged: max_res <= program.tol.feasibility_tol && kkt_residual <= 1e-6,
        constraint_residuals: residuals,
        kkt_residual,
        iterations: 0,
        log_floor_active: false,
        trace: Vec::<TracePoint>::new(),
    }
}

/// Minimize the average information leakage subject to the instance's
/// distortion budgets. The reported objective is `I(S;U)` in bits.
pub fn solve_min_avg_leakage(instance: &ProblemInstance) -> Result<SolverResult> {
    solve_min_avg_leakage_opts(instance, None, None)
}

/// As [`solve_min_avg_leakage`], warm-started from a previous channel.
pub fn solve_min_avg_leakage_from(
    instance: &ProblemInstance,
    warm: Option<&Channel>,
) -> Result<SolverResult> {
    solve_min_avg_leakage_opts(instance, warm, None)
}

/// Full-control variant: optional warm start and objective-tolerance
/// override.
pub fn solve_min_avg_leakage_opts(
    instance: &ProblemInstance,
    warm: Option<&Channel>,
    objective_tol: Option<f64>,
) -> Result<SolverResult> {
    check_feasibility(instance)?;
    let mut program = build_program(instance)?;
    if let Some(tol) = objective_tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::Invalid(format!(
                "objective tolerance must be a positive finite number, got {tol}"
            )));
        }
        program.tol.objective_tol = tol;
    }
    if let Some(u) = instance.feasible_constant_output() {
        return Ok(constant_output_result(instance, &program, u));
    }
    let init = match warm {
        Some(c) => c.clone(),
        None => initial_channel(instance, &program),
    };
    Ok(minimize(&program, &init))
}

/// One budget level on a tradeoff curve.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub delta: f64,
    /// Optimal leakage in bits; `+inf` when the budget is infeasible.
    pub leakage_bits: f64,
    pub channel: Option<Channel>,
    pub infeasible: bool,
}

/// Sweep the first distortion budget over an ascending grid. Points are
/// solved sequentially with warm starts; infeasible budgets are recorded as
/// such rather than failing the sweep.
pub fn tradeoff_curve(instance: &ProblemInstance, deltas: &[f64]) -> Result<Vec<CurvePoint>> {
    tradeoff_curve_with(instance, deltas, 1)
}

/// As [`tradeoff_curve`]; with `jobs > 1` the points are solved in parallel,
/// forfeiting warm starts but keeping deterministic per-point results and
/// output order.
pub fn tradeoff_curve_with(
    instance: &ProblemInstance,
    deltas: &[f64],
    jobs: usize,
) -> Result<Vec<CurvePoint>> {
    if instance.distortions().is_empty() {
        return Err(Error::Invalid(
            "tradeoff curve needs at least one distortion constraint".into(),
        ));
    }
    if deltas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Invalid("budget grid must be sorted ascending".into()));
    }

    let solve_point = |delta: f64, warm: Option<&Channel>| -> CurvePoint {
        let mut inst = instance.clone();
        inst.set_budget(0, delta);
        match solve_min_avg_leakage_from(&inst, warm) {
            Ok(result) => CurvePoint {
                delta,
                leakage_bits: result.objective_value,
                channel: Some(result.channel),
                infeasible: false,
            },
            Err(Error::Infeasible { .. }) => CurvePoint {
                delta,
                leakage_bits: f64::INFINITY,
                channel: None,
                infeasible: true,
            },
            Err(_) => CurvePoint {
                delta,
                leakage_bits: f64::NAN,
                channel: None,
                infeasible: true,
            },
        }
    };

    if jobs <= 1 || deltas.len() <= 1 {
        let mut points = Vec::with_capacity(deltas.len());
        let mut warm: Option<Channel> = None;
        for &delta in deltas {
            let point = solve_point(delta, warm.as_ref());
            if let Some(c) = &point.channel {
                warm = Some(c.clone());
            }
            points.push(point);
        }
        return Ok(points);
    }

    let mut points: Vec<Option<CurvePoint>> = vec![None; deltas.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut points);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(deltas.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= deltas.len() {
                    break;
                }
                let point = solve_point(deltas[i], None);
                slots.lock().unwrap()[i] = Some(point);
            });
        }
    });
    Ok(points.into_iter().map(|p| p.expect("all points solved")).collect())
}
