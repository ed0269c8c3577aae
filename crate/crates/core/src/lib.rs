//! Design and audit of privacy-preserving mappings over finite alphabets.
//!
//! A user holds measurements `Y` correlated with private features `S` and
//! releases a distorted view `U` through a randomized channel `p(U|Y)`. This
//! crate finds the channel that minimizes what a statistical-inference
//! adversary learns about `S` — either on average (mutual information
//! `I(S;U)`) or in the worst case over outputs (`max_u H(S) - H(S|U=u)`) —
//! subject to distortion budgets `E[d(Y,U)] <= delta`, and audits arbitrary
//! finite mechanisms under differential privacy and information privacy.
//!
//! Module map:
//! - [`prob`]: pmfs, joints, channels, Bayes posteriors
//! - [`metrics`]: entropies, divergences, adversarial cost gains
//! - [`audit`]: differential-privacy / information-privacy epsilon audits
//! - [`solver`]: mirror-descent + augmented-Lagrangian convex solver over
//!   products of probability simplices, with KKT certification
//! - [`instance`]: problem descriptions (joint prior, distortions, budgets)
//! - [`avg`]: minimum average leakage design and tradeoff curves
//! - [`minmax`]: minmax leakage design, line search, zeta characterization
//! - [`reductions`]: rate-distortion and max-entropy-noise special cases
//! - [`counting`]: counting-query instances, Laplace mechanism, leakage bounds
//! - [`oracle`]: brute-force reference solvers for tiny instances
//! - [`jsonout`]: JSON/CSV emission with fixed float formatting

pub mod audit;
pub mod avg;
pub mod counting;
pub mod instance;
pub mod jsonout;
pub mod metrics;
pub mod minmax;
pub mod oracle;
pub mod prob;
pub mod reductions;
pub mod solver;

pub use audit::{audit, dp_epsilon, info_privacy_epsilon, AdjacencyRelation, AuditReport};
pub use avg::{solve_min_avg_leakage, tradeoff_curve, CurvePoint};
pub use counting::{
    build_counting_instance, estimate_laplace_leakage, laplace_dp_check, leakage_lower_bound,
    map_correctness_alpha, CountingInstance, LaplaceDpCheck, LaplaceMechanism, PriorKind,
};
pub use instance::{Coupling, DistortionConstraint, MappingMode, ProblemInstance};
pub use metrics::{cost_gain, entropy, kl_divergence, mutual_information, CostKind, LeakageReport};
pub use minmax::{
    min_distortion_given_maxleak, minmax_via_zeta, solve_minmax_leakage, zeta_distribution,
    MinmaxResult,
};
pub use oracle::{brute_force_min_leakage, brute_force_minmax, OracleConfig};
pub use prob::{chain, posterior, Alphabet, Channel, JointPmf, Pmf, Posterior};
pub use reductions::{max_entropy_noise, rate_distortion, NoiseProblem, NoiseSolution};
pub use solver::{certify, minimize, ChannelProgram, ScalarFn, SolverResult, Tolerances};

/// Normalization tolerance accepted on input; values are renormalized to an
/// exact sum of 1 after validation.
pub const NORM_TOL: f64 = 1e-9;

/// Support threshold separating structural zeros from rounding noise. Outputs
/// with probability below this are treated as unsupported.
pub const SUPPORT_ETA: f64 = 1e-12;

/// Floor applied inside logarithms so evaluations never return -inf.
pub(crate) const LOG_FLOOR: f64 = 1e-12;

pub(crate) const LN_2: f64 = std::f64::consts::LN_2;

/// Errors produced by constructors, solvers and audits.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("alphabet must contain at least one symbol")]
    EmptyAlphabet,
    #[error("duplicate symbol `{0}` in alphabet")]
    DuplicateSymbol(String),
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("non-finite entry at index {0}")]
    NonFiniteEntry(usize),
    #[error("probabilities sum to {sum}, expected 1 within {tol}")]
    NotNormalized { sum: f64, tol: f64 },
    #[error("row {row} sums to {sum}, expected 1 within {tol}")]
    RowNotNormalized { row: usize, sum: f64, tol: f64 },
    #[error("expected length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("alphabet mismatch: expected [{expected}], got [{got}]")]
    AlphabetMismatch { expected: String, got: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("adjacency relation contains no pairs")]
    EmptyAdjacency,
    #[error("adjacency pair ({0}, {1}) out of range for alphabet of size {2}")]
    AdjacencyOutOfRange(usize, usize, usize),
    #[error(
        "budget {budget} infeasible for distortion constraint {index}: \
         minimum achievable is {min_achievable}"
    )]
    Infeasible {
        index: usize,
        budget: f64,
        min_achievable: f64,
    },
    #[error("leakage cap {epsilon} bits outside [0, {h_s}]")]
    EpsilonOutOfRange { epsilon: f64, h_s: f64 },
    #[error("Y is not a deterministic function of S: p(y=`{y}` | s=`{s}`) = {value}")]
    NonDeterministicCoupling { s: String, y: String, value: f64 },
    #[error("candidate violates constraint {index}: residual {residual}")]
    InfeasibleCandidate { index: usize, residual: f64 },
    #[error("oracle dimension cap exceeded: {free} free parameters, cap is {cap}")]
    DimensionCap { free: usize, cap: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
