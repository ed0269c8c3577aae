//! Special cases of the leakage-minimization problem when Y is a
//! deterministic function of S: classical rate-distortion, and max-entropy
//! additive noise.
//!
//! With `S -> Y -> U` and deterministic `Y = f(S)`, minimizing `I(S;U)`
//! collapses to minimizing `I(Y;U)` — a rate-distortion problem. Restricting
//! further to additive mappings `U = Y + Z` with `d(Y,U) = d(Y-U)` turns it
//! into maximizing the noise entropy `H(Z)` under `E[d(Z)] <= delta`, whose
//! solution has Gibbs form `p(z) ∝ exp(-lambda d(z))`.

use crate::instance::{Coupling, DistortionConstraint, MappingMode, ProblemInstance};
use crate::metrics::entropy_slice;
use crate::prob::{Alphabet, Channel, Pmf};
use crate::solver::SolverResult;
use crate::{Error, Result};

/// Rate-distortion solve: minimize `I(Y;U)` over `p(u|y)` subject to
/// `E[d(Y,U)] <= delta`.
///
/// Internally this is the leakage solver on a deterministic coupling whose
/// conditional-entropy table is all zeros (S identified with Y), so
/// `I(S;U) = I(Y;U)` holds by construction rather than by a separate
/// optimization.
pub fn rate_distortion(source: &Pmf, d: Vec<Vec<f64>>, delta: f64) -> Result<SolverResult> {
    let constraint = DistortionConstraint::new(d, delta)?;
    let u_size = constraint.matrix.ncols();
    if constraint.matrix.nrows() != source.len() {
        return Err(Error::ShapeMismatch(format!(
            "distortion matrix rows ({}) must match source alphabet ({})",
            constraint.matrix.nrows(),
            source.len()
        )));
    }
    let instance = ProblemInstance::new(
        Coupling::DeterministicY {
            y_pmf: source.clone(),
            cond_entropy_bits: vec![0.0; source.len()],
        },
        u_size,
        vec![constraint],
        MappingMode::FromY,
    )?;
    crate::avg::solve_min_avg_leakage(&instance)
}

/// Additive-noise design problem over a finite set of integer offsets.
#[derive(Debug, Clone)]
pub struct NoiseProblem {
    pub offsets: Vec<i64>,
    /// `d(z)` per offset, finite and non-negative.
    pub costs: Vec<f64>,
    pub budget: f64,
}

impl NoiseProblem {
    pub fn new(offsets: Vec<i64>, costs: Vec<f64>, budget: f64) -> Result<Self> {
        if offsets.is_empty() || offsets.len() != costs.len() {
            return Err(Error::LengthMismatch {
                expected: offsets.len(),
                got: costs.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for &z in &offsets {
            if !seen.insert(z) {
                return Err(Error::DuplicateSymbol(z.to_string()));
            }
        }
        for (i, &c) in costs.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFiniteEntry(i));
            }
            if c < 0.0 {
                return Err(Error::NegativeEntry { index: i, value: c });
            }
        }
        if !budget.is_finite() {
            return Err(Error::Invalid("budget must be finite".into()));
        }
        Ok(Self {
            offsets,
            costs,
            budget,
        })
    }
}

/// Max-entropy noise distribution under a distortion budget.
#[derive(Debug, Clone)]
pub struct NoiseSolution {
    pub pmf: Pmf,
    pub offsets: Vec<i64>,
    /// Gibbs exponent; 0 when the uniform distribution already fits the
    /// budget.
    pub lambda: f64,
    /// Achieved `E[d(Z)]`.
    pub distortion: f64,
    pub entropy_bits: f64,
}

fn gibbs_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let d_min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|&d| (-lambda * (d - d_min)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

fn gibbs_distortion(costs: &[f64], lambda: f64) -> f64 {
    gibbs_weights(costs, lambda)
        .iter()
        .zip(costs)
        .map(|(&p, &d)| p * d)
        .sum()
}

/// Maximize `H(Z)` subject to `E[d(Z)] <= budget`. The optimum has Gibbs
/// form `p(z) ∝ exp(-lambda d(z))` with `lambda >= 0` chosen by bisection so
/// the budget holds with equality — or `lambda = 0` (uniform) when uniform
/// is already feasible.
pub fn max_entropy_noise(problem: &NoiseProblem) -> Result<NoiseSolution> {
    let costs = &problem.costs;
    let d_min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    if problem.budget < d_min - 1e-12 {
        return Err(Error::Infeasible {
            index: 0,
            budget: problem.budget,
            min_achievable: d_min,
        });
    }

    let alphabet = Alphabet::new(problem.offsets.iter().map(|z| z.to_string()))?;
    let build = |lambda: f64| -> NoiseSolution {
        let w = gibbs_weights(costs, lambda);
        let distortion = w.iter().zip(costs).map(|(&p, &d)| p * d).sum();
        let entropy_bits = entropy_slice(&w);
        NoiseSolution {
            pmf: Pmf::new(alphabet.clone(), w).expect("gibbs weights normalized"),
            offsets: problem.offsets.clone(),
            lambda,
            distortion,
            entropy_bits,
        }
    };

    if gibbs_distortion(costs, 0.0) <= problem.budget {
        return Ok(build(0.0));
    }

    // E[d] is continuous and non-increasing in lambda; bisect on the budget
    // equation within the fixed bracket.
    let (mut lo, mut hi) = (0.0f64, 1e4f64);
    if gibbs_distortion(costs, hi) > problem.budget + 1e-10 {
        return Err(Error::Invalid(format!(
            "lambda bracket [0, 1e4] exhausted: distortion at lambda=1e4 is {}, budget {}",
            gibbs_distortion(costs, hi),
            problem.budget
        )));
    }
    let mut lambda = hi;
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        let e = gibbs_distortion(costs, mid);
        if (e - problem.budget).abs() <= 1e-10 {
            lambda = mid;
            break;
        }
        if e > problem.budget {
            lo = mid;
        } else {
            hi = mid;
        }
        lambda = hi;
    }
    Ok(build(lambda))
}

/// Channel implementing `U = Y + Z` on a finite alphabet `{0..n-1}`, with
/// saturating addition at the edges. Returns the channel and the largest
/// per-row probability mass that saturated — the finite-alphabet embedding
/// only approximates the unbounded additive model, and `H(Y|U) = H(Z)` holds
/// up to these edge effects.
pub fn additive_noise_channel(y_size: usize, noise: &NoiseSolution) -> Result<(Channel, f64)> {
    if y_size == 0 {
        return Err(Error::EmptyAlphabet);
    }
    let alphabet = Alphabet::indexed("", y_size)?;
    let mut rows = ndarray::Array2::<f64>::zeros((y_size, y_size));
    let mut max_clamped: f64 = 0.0;
    for y in 0..y_size {
        let mut clamped = 0.0;
        for (z_idx, &z) in noise.offsets.iter().enumerate() {
            let p = noise.pmf.get(z_idx);
            let target = y as i64 + z;
            let u = target.clamp(0, y_size as i64 - 1) as usize;
            if target != u as i64 {
                clamped += p;
            }
            rows[[y, u]] += p;
        }
        max_clamped = max_clamped.max(clamped);
    }
    Ok((Channel::from_array(alphabet.clone(), alphabet, rows)?, max_clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::binary_entropy;
    use crate::prob::JointPmf;
    use rand_core::{RngCore, SeedableRng};

    fn ab(n: usize) -> Alphabet {
        Alphabet::indexed("y", n).unwrap()
    }

    fn binary_uniform() -> Pmf {
        Pmf::uniform(ab(2))
    }

    fn hamming2() -> Vec<Vec<f64>> {
        vec![vec![0.0, 1.0], vec![1.0, 0.0]]
    }

    #[test]
    fn binary_rate_distortion_matches_analytic_form() {
        // R(delta) = 1 - h2(delta) for a uniform binary source with Hamming
        // distortion
        let r = rate_distortion(&binary_uniform(), hamming2(), 0.11).unwrap();
        let expected = 1.0 - binary_entropy(0.11);
        assert!(
            (r.objective_value - expected).abs() < 1e-4,
            "R = {}, expected {expected}",
            r.objective_value
        );
        assert!(r.converged);
    }

    #[test]
    fn rate_distortion_saturates() {
        let r = rate_distortion(&binary_uniform(), hamming2(), 0.5).unwrap();
        assert_eq!(r.objective_value, 0.0);
        let r = rate_distortion(&binary_uniform(), hamming2(), 0.7).unwrap();
        assert_eq!(r.objective_value, 0.0);
    }

    #[test]
    fn zero_budget_returns_source_entropy() {
        let source = Pmf::new(ab(2), vec![0.3, 0.7]).unwrap();
        let r = rate_distortion(&source, hamming2(), 0.0).unwrap();
        let h = crate::metrics::entropy(&source);
        assert!((r.objective_value - h).abs() < 2e-5, "{} vs {h}", r.objective_value);
    }

    #[test]
    fn matches_embedded_identity_instance() {
        // same problem phrased with an explicit identity joint over (S,Y)
        let source = binary_uniform();
        let direct = rate_distortion(&source, hamming2(), 0.25).unwrap();

        let joint = JointPmf::new(ab(2), ab(2), vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let inst = ProblemInstance::from_joint(
            joint,
            2,
            vec![DistortionConstraint::new(hamming2(), 0.25).unwrap()],
        )
        .unwrap();
        let embedded = crate::avg::solve_min_avg_leakage(&inst).unwrap();
        assert!(
            (direct.objective_value - embedded.objective_value).abs() < 1e-6,
            "{} vs {}",
            direct.objective_value,
            embedded.objective_value
        );
    }

    #[test]
    fn gibbs_noise_examples() {
        // generous budget: uniform
        let p = NoiseProblem::new(vec![-1, 0, 1], vec![1.0, 0.0, 1.0], 0.7).unwrap();
        let sol = max_entropy_noise(&p).unwrap();
        assert_eq!(sol.lambda, 0.0);
        for v in sol.pmf.probs() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        // |z| costs with budget 1/2: p = [.25, .5, .25]
        let p = NoiseProblem::new(vec![-1, 0, 1], vec![1.0, 0.0, 1.0], 0.5).unwrap();
        let sol = max_entropy_noise(&p).unwrap();
        let expected = [0.25, 0.5, 0.25];
        for (v, e) in sol.pmf.probs().iter().zip(expected.iter()) {
            assert!((v - e).abs() < 1e-9, "{v} vs {e}");
        }
        assert!((sol.distortion - 0.5).abs() <= 1e-10);

        // zero budget with a unique zero-cost offset: point mass
        let p = NoiseProblem::new(vec![-1, 0, 1], vec![1.0, 0.0, 1.0], 0.0).unwrap();
        let sol = max_entropy_noise(&p).unwrap();
        assert!(sol.pmf.get(1) > 1.0 - 1e-9);
        assert!(sol.distortion <= 1e-10);
    }

    #[test]
    fn gibbs_form_is_exact() {
        let p = NoiseProblem::new(vec![-2, -1, 0, 1, 2], vec![2.0, 1.0, 0.0, 1.0, 2.0], 0.8)
            .unwrap();
        let sol = max_entropy_noise(&p).unwrap();
        // log p(z) + lambda d(z) constant across the support
        let reference = sol.pmf.get(0).ln() + sol.lambda * p.costs[0];
        for (i, &d) in p.costs.iter().enumerate() {
            let v = sol.pmf.get(i).ln() + sol.lambda * d;
            assert!((v - reference).abs() < 1e-8, "gibbs form violated at {i}");
        }
        assert!((sol.distortion - p.budget).abs() <= 1e-10);
    }

    #[test]
    fn gibbs_beats_random_feasible_distributions() {
        let problem =
            NoiseProblem::new(vec![-2, -1, 0, 1, 2], vec![2.0, 1.0, 0.0, 1.0, 2.0], 0.8).unwrap();
        let sol = max_entropy_noise(&problem).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut tested = 0;
        while tested < 50 {
            let mut q: Vec<f64> = (0..5)
                .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 + 1e-3)
                .collect();
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            let e: f64 = q.iter().zip(&problem.costs).map(|(&p, &d)| p * d).sum();
            if e > problem.budget {
                continue;
            }
            tested += 1;
            assert!(sol.entropy_bits >= entropy_slice(&q) - 1e-8);
        }
    }

    #[test]
    fn infeasible_noise_budget() {
        let p = NoiseProblem::new(vec![-1, 1], vec![1.0, 1.0], 0.5).unwrap();
        assert!(matches!(
            max_entropy_noise(&p),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn additive_embedding_edge_effects_are_measured() {
        // the finite-alphabet embedding only approximates H(Y|U) = H(Z);
        // the gap comes from the saturated rows and shrinks as the alphabet
        // grows relative to the noise support
        let problem = NoiseProblem::new(vec![-1, 0, 1], vec![1.0, 0.0, 1.0], 0.5).unwrap();
        let sol = max_entropy_noise(&problem).unwrap();

        let gap_for = |y_size: usize| -> f64 {
            let (channel, clamped) = additive_noise_channel(y_size, &sol).unwrap();
            assert!(clamped > 0.0 && clamped <= 0.5);
            let y = Pmf::uniform(Alphabet::indexed("", y_size).unwrap());
            let joint = JointPmf::from_prior_and_channel(&y, &channel).unwrap();
            let h_y = crate::metrics::entropy(&y);
            let mi = crate::metrics::mutual_information(&joint);
            (h_y - mi - sol.entropy_bits).abs()
        };

        let coarse = gap_for(8);
        let fine = gap_for(64);
        assert!(coarse > 1e-3, "edge effect unexpectedly absent: {coarse}");
        assert!(fine < coarse / 4.0, "gap did not shrink: {fine} vs {coarse}");
    }

    #[test]
    fn rate_distortion_curve_convex_in_budget() {
        let grid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let values: Vec<f64> = grid
            .iter()
            .map(|&d| {
                rate_distortion(&binary_uniform(), hamming2(), d)
                    .unwrap()
                    .objective_value
            })
            .collect();
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-6);
        }
        for w in values.windows(3) {
            assert!(w[1] <= (w[0] + w[2]) / 2.0 + 1e-6);
        }
    }
}
