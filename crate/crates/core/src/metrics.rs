//! Entropies, divergences and the adversary's cost gains under log-loss and
//! 0-1 (MAP) cost.
//!
//! Everything is reported in bits. The convention `0 * log 0 = 0` applies
//! throughout, and maxima over channel outputs skip outputs whose probability
//! falls below the support threshold.

use crate::prob::{expect_same_alphabet, posterior, Channel, Pmf};
use crate::{JointPmf, Result, LN_2, SUPPORT_ETA};

/// Adversarial cost functions the toolkit ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// Self-information cost `-log2 q(s)`, minimized by reporting the true
    /// posterior.
    LogLoss,
    /// `1 - 1[s = argmax q]`: the adversary commits to a MAP guess. Ties
    /// break toward the lowest-index symbol for reproducibility.
    ZeroOne,
}

impl CostKind {
    /// Cost paid by an adversary holding belief `q` when the true symbol is
    /// `s`.
    pub fn cost(&self, s: usize, q: &Pmf) -> f64 {
        match self {
            CostKind::LogLoss => -q.get(s).max(f64::MIN_POSITIVE).log2(),
            CostKind::ZeroOne => {
                if s == map_index(q.probs().as_slice().unwrap()) {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// `min_q E[C(S,q)]` under `p`: entropy for log-loss, miss probability of
    /// the MAP guess for 0-1.
    fn bayes_cost(&self, p: &[f64]) -> f64 {
        match self {
            CostKind::LogLoss => entropy_slice(p),
            CostKind::ZeroOne => 1.0 - p.iter().cloned().fold(0.0, f64::max),
        }
    }
}

fn map_index(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    (h / LN_2).max(0.0)
}

/// Shannon entropy `H(p)` in bits.
pub fn entropy(p: &Pmf) -> f64 {
    entropy_slice(p.probs().as_slice().unwrap())
}

/// Binary entropy function `h2(p)` in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }
}

/// Kullback-Leibler divergence `D(p || q)` in bits. Returns `+inf` exactly
/// when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &Pmf, q: &Pmf) -> Result<f64> {
    expect_same_alphabet(p.alphabet(), q.alphabet())?;
    Ok(kl_slices(
        p.probs().as_slice().unwrap(),
        q.probs().as_slice().unwrap(),
    ))
}

pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            d += pi * (pi / qi).ln();
        }
    }
    (d / LN_2).max(0.0)
}

/// Mutual information of a joint distribution, in bits.
pub fn mutual_information(joint: &JointPmf) -> f64 {
    let probs = joint.probs();
    let (rows, cols) = probs.dim();
    let mut p_row = vec![0.0; rows];
    let mut p_col = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            p_row[i] += probs[[i, j]];
            p_col[j] += probs[[i, j]];
        }
    }
    let mut mi = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let pij = probs[[i, j]];
            if pij > 0.0 {
                mi += pij * (pij / (p_row[i] * p_col[j])).ln();
            }
        }
    }
    (mi / LN_2).max(0.0)
}

/// What an adversary gains from observing the channel output, under a named
/// cost function.
#[derive(Debug, Clone)]
pub struct LeakageReport {
    /// Average cost gain. For log-loss this is `I(S;U)` in bits.
    pub avg_gain_bits: f64,
    /// Largest per-output gain among supported outputs.
    pub max_gain_bits: f64,
    /// Gain for each output `u`; zero for unsupported outputs.
    pub per_output_gain: Vec<f64>,
    pub cost: CostKind,
}

/// Cost gain of an adversary observing `U` through `p_us` (a channel from S
/// to U) relative to guessing from the prior alone.
///
/// For log-loss the per-output gain is `H(S) - H(S|U=u)` and the average is
/// `I(S;U)`; per-output values can be negative for individual outputs even
/// though the average never is. For 0-1 cost the gain is the drop in MAP
/// miss probability.
pub fn cost_gain(prior_s: &Pmf, p_us: &Channel, cost: CostKind) -> Result<LeakageReport> {
    let post = posterior(prior_s, p_us)?;
    let prior_slice = prior_s.probs().to_vec();
    let c0 = cost.bayes_cost(&prior_slice);

    let n_out = p_us.output_alphabet().len();
    let mut per_output = vec![0.0; n_out];
    let mut avg = 0.0;
    let mut max: Option<f64> = None;
    for u in 0..n_out {
        let pu = post.output_pmf.get(u);
        if pu < SUPPORT_ETA {
            continue; // unsupported: gain stays 0, excluded from the max
        }
        let row = post.reverse.row(u);
        let cu = cost.bayes_cost(row.as_slice().unwrap());
        let gain = c0 - cu;
        per_output[u] = gain;
        avg += pu * gain;
        max = Some(max.map_or(gain, |m| gain.max(m)));
    }

    Ok(LeakageReport {
        avg_gain_bits: avg,
        max_gain_bits: max.unwrap_or(0.0),
        per_output_gain: per_output,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Alphabet;
    use rand_core::{RngCore, SeedableRng};

    fn ab(n: usize) -> Alphabet {
        Alphabet::indexed("x", n).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn rand01(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_pmf(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Pmf {
        let mut v: Vec<f64> = (0..n).map(|_| rand01(rng) + 0.02).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        Pmf::new(ab(n), v).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let u4 = Pmf::uniform(ab(4));
        assert!(close(entropy(&u4), 2.0, 1e-12));
        let point = Pmf::point_mass(ab(3), 1);
        assert_eq!(entropy(&point), 0.0);
        let p = Pmf::new(ab(2), vec![0.75, 0.25]).unwrap();
        assert!(close(entropy(&p), 0.8112781244591328, 1e-12));
    }

    #[test]
    fn kl_examples() {
        let p = Pmf::new(ab(2), vec![0.3, 0.7]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);

        let point = Pmf::new(ab(2), vec![1.0, 0.0]).unwrap();
        let u = Pmf::uniform(ab(2));
        assert!(close(kl_divergence(&point, &u).unwrap(), 1.0, 1e-12));
        assert!(kl_divergence(&u, &point).unwrap().is_infinite());
    }

    #[test]
    fn kl_rejects_alphabet_mismatch() {
        let p = Pmf::uniform(ab(2));
        let q = Pmf::uniform(ab(3));
        assert!(kl_divergence(&p, &q).is_err());
    }

    #[test]
    fn mutual_information_examples() {
        let product = JointPmf::new(ab(2), ab(2), vec![vec![0.25; 2]; 2]).unwrap();
        assert!(mutual_information(&product) < 1e-12);

        let coupled = JointPmf::new(ab(2), ab(2), vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!(close(mutual_information(&coupled), 1.0, 1e-12));

        // binary symmetric coupling, flip prob .11, uniform input
        let f = 0.11;
        let bsc = JointPmf::new(
            ab(2),
            ab(2),
            vec![
                vec![(1.0 - f) / 2.0, f / 2.0],
                vec![f / 2.0, (1.0 - f) / 2.0],
            ],
        )
        .unwrap();
        let expected = 1.0 - binary_entropy(f);
        assert!(close(mutual_information(&bsc), expected, 1e-12));
        assert!(close(expected, 0.500084041835472, 1e-12));
    }

    #[test]
    fn cost_gain_identity_and_constant() {
        let prior = Pmf::uniform(ab(2));
        let id = Channel::identity(ab(2));
        let r = cost_gain(&prior, &id, CostKind::LogLoss).unwrap();
        assert!(close(r.avg_gain_bits, 1.0, 1e-12));
        assert!(close(r.max_gain_bits, 1.0, 1e-12));

        let c = Channel::constant(ab(2), ab(2), 0);
        for kind in [CostKind::LogLoss, CostKind::ZeroOne] {
            let r = cost_gain(&prior, &c, kind).unwrap();
            assert!(r.avg_gain_bits.abs() < 1e-12);
            assert!(r.max_gain_bits.abs() < 1e-12);
        }
    }

    #[test]
    fn cost_gain_logloss_matches_mutual_information() {
        let prior = Pmf::new(ab(2), vec![0.5, 0.5]).unwrap();
        let c = Channel::new(ab(2), ab(2), vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let r = cost_gain(&prior, &c, CostKind::LogLoss).unwrap();
        assert!(close(r.avg_gain_bits, 0.39731260974948646, 1e-12));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let n = 2 + (rng.next_u32() % 3) as usize;
            let m = 2 + (rng.next_u32() % 3) as usize;
            let prior = random_pmf(&mut rng, n);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| random_pmf(&mut rng, m).probs().to_vec())
                .collect();
            let ch = Channel::new(ab(n), ab(m), rows).unwrap();
            let report = cost_gain(&prior, &ch, CostKind::LogLoss).unwrap();
            let joint = JointPmf::from_prior_and_channel(&prior, &ch).unwrap();
            assert!(close(report.avg_gain_bits, mutual_information(&joint), 1e-9));
            // weighted average never exceeds the max over supported outputs
            assert!(report.max_gain_bits >= report.avg_gain_bits - 1e-9);
        }
    }

    #[test]
    fn zero_one_gain_nonnegative_average() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..40 {
            let n = 2 + (rng.next_u32() % 3) as usize;
            let m = 2 + (rng.next_u32() % 3) as usize;
            let prior = random_pmf(&mut rng, n);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| random_pmf(&mut rng, m).probs().to_vec())
                .collect();
            let ch = Channel::new(ab(n), ab(m), rows).unwrap();
            let report = cost_gain(&prior, &ch, CostKind::ZeroOne).unwrap();
            assert!(report.avg_gain_bits >= -1e-12);
        }
    }

    #[test]
    fn zero_one_map_tie_breaks_low_index() {
        let q = Pmf::uniform(ab(3));
        assert_eq!(CostKind::ZeroOne.cost(0, &q), 0.0);
        assert_eq!(CostKind::ZeroOne.cost(1, &q), 1.0);
    }

    #[test]
    fn entropy_concavity_spot_check() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..60 {
            let n = 2 + (rng.next_u32() % 4) as usize;
            let p = random_pmf(&mut rng, n);
            let q = random_pmf(&mut rng, n);
            let lam = rand01(&mut rng);
            let mix: Vec<f64> = p
                .probs()
                .iter()
                .zip(q.probs())
                .map(|(a, b)| lam * a + (1.0 - lam) * b)
                .collect();
            let mix = Pmf::new(ab(n), mix).unwrap();
            assert!(entropy(&mix) >= lam * entropy(&p) + (1.0 - lam) * entropy(&q) - 1e-9);
        }
    }
}
