//! Differential-privacy and information-privacy audits of arbitrary finite
//! mechanisms.
//!
//! Both epsilons are reported in natural-log units, matching the `exp(eps)`
//! bounds in their definitions; leakage figures are in bits. For finite
//! output alphabets the differential-privacy ratio over an event set is
//! bounded by the worst pointwise ratio (a ratio of sums never exceeds the
//! maximum ratio of the summands), so the audit checks single outputs only.
//! Vector databases are audited through their sufficient-statistic channel
//! (e.g. the counting query over Y with unit-step adjacency) rather than by
//! materializing one row per database.

use crate::metrics::{cost_gain, CostKind};
use crate::prob::{expect_same_alphabet, posterior, Channel, Pmf};
use crate::{Error, Result, LN_2, SUPPORT_ETA};

/// Which input pairs count as neighbors for differential privacy.
#[derive(Debug, Clone)]
pub enum AdjacencyRelation {
    /// Inputs are ordered and neighbors differ by one step (counting-query
    /// semantics: adding or removing one record moves the count by one).
    OrderedUnitStep,
    /// Explicit symmetric list of neighboring input pairs, by index into the
    /// mechanism's input alphabet.
    ExplicitPairs(Vec<(usize, usize)>),
}

impl AdjacencyRelation {
    /// All neighboring index pairs, validated against an input alphabet of
    /// size `n`.
    fn pairs(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        let pairs = match self {
            AdjacencyRelation::OrderedUnitStep => (1..n).map(|i| (i - 1, i)).collect::<Vec<_>>(),
            AdjacencyRelation::ExplicitPairs(list) => {
                let mut out = Vec::with_capacity(list.len());
                for &(a, b) in list {
                    if a >= n || b >= n {
                        return Err(Error::AdjacencyOutOfRange(a, b, n));
                    }
                    if a != b {
                        out.push((a.min(b), a.max(b)));
                    }
                }
                out.sort_unstable();
                out.dedup();
                out
            }
        };
        if pairs.is_empty() {
            return Err(Error::EmptyAdjacency);
        }
        Ok(pairs)
    }

    /// Complete graph over `n` symbols: every pair is adjacent.
    pub fn all_pairs(n: usize) -> Self {
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                pairs.push((a, b));
            }
        }
        AdjacencyRelation::ExplicitPairs(pairs)
    }
}

/// Differential-privacy epsilon of a mechanism: the largest `|ln p(u|s1) -
/// ln p(u|s2)|` over adjacent inputs and single outputs. Returns `+inf` when
/// one side of a pair puts zero mass where the other does not. Independent of
/// any prior.
pub fn dp_epsilon(mechanism: &Channel, adjacency: &AdjacencyRelation) -> Result<f64> {
    let pairs = adjacency.pairs(mechanism.input_alphabet().len())?;
    let rows = mechanism.rows();
    let mut eps: f64 = 0.0;
    for (a, b) in pairs {
        for u in 0..mechanism.output_alphabet().len() {
            let (pa, pb) = (rows[[a, u]], rows[[b, u]]);
            if pa == 0.0 && pb == 0.0 {
                continue;
            }
            if pa == 0.0 || pb == 0.0 {
                return Ok(f64::INFINITY);
            }
            eps = eps.max((pa.ln() - pb.ln()).abs());
        }
    }
    Ok(eps)
}

/// Information-privacy epsilon: the largest `|ln(p(s|u)/p(s))|` over inputs
/// with positive prior mass and supported outputs. Returns `+inf` when a
/// supported output rules some positive-prior input out entirely.
pub fn info_privacy_epsilon(prior_s: &Pmf, mechanism: &Channel) -> Result<f64> {
    expect_same_alphabet(prior_s.alphabet(), mechanism.input_alphabet())?;
    let post = posterior(prior_s, mechanism)?;
    let mut eps: f64 = 0.0;
    for u in 0..mechanism.output_alphabet().len() {
        if post.output_pmf.get(u) < SUPPORT_ETA {
            continue;
        }
        for s in 0..prior_s.len() {
            let ps = prior_s.get(s);
            if ps <= 0.0 {
                continue;
            }
            let ratio = post.reverse.rows()[[u, s]] / ps;
            if ratio <= 0.0 {
                return Ok(f64::INFINITY);
            }
            eps = eps.max(ratio.ln().abs());
        }
    }
    Ok(eps)
}

/// Everything the auditor reports about one mechanism.
#[derive(Debug, Clone)]
pub struct AuditReport {
    /// Differential-privacy epsilon (natural-log units), or `+inf`.
    pub dp_epsilon: f64,
    /// Information-privacy epsilon (natural-log units), or `+inf`.
    pub info_privacy_epsilon: f64,
    /// Average information leakage `I(S;U)` in bits.
    pub avg_leakage_bits: f64,
    /// Maximum per-output leakage `max_u H(S) - H(S|U=u)` in bits.
    pub max_leakage_bits: f64,
}

/// Full audit of a mechanism: both epsilons plus log-loss leakage. When the
/// information-privacy epsilon is finite the implication bounds
/// (`dp <= 2*eps_ip`, leakage `<= eps_ip/ln 2`) are verified on the spot.
pub fn audit(
    prior_s: &Pmf,
    mechanism: &Channel,
    adjacency: &AdjacencyRelation,
) -> Result<AuditReport> {
    let dp = dp_epsilon(mechanism, adjacency)?;
    let ip = info_privacy_epsilon(prior_s, mechanism)?;
    let leak = cost_gain(prior_s, mechanism, CostKind::LogLoss)?;
    let report = AuditReport {
        dp_epsilon: dp,
        info_privacy_epsilon: ip,
        avg_leakage_bits: leak.avg_gain_bits,
        max_leakage_bits: leak.max_gain_bits,
    };
    if ip.is_finite() {
        assert!(
            dp <= 2.0 * ip + 1e-9,
            "implication violated: dp {dp} > 2 * ip {ip}"
        );
        assert!(
            report.avg_leakage_bits <= ip / LN_2 + 1e-9,
            "implication violated: avg leakage {} > ip/ln2 {}",
            report.avg_leakage_bits,
            ip / LN_2
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Alphabet;
    use crate::{chain, metrics};
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

    fn random_positive_channel(
        rng: &mut rand_chacha::ChaCha8Rng,
        n_in: usize,
        n_out: usize,
    ) -> Channel {
        let rows: Vec<Vec<f64>> = (0..n_in)
            .map(|_| {
                let mut row: Vec<f64> = (0..n_out).map(|_| rand01(rng) + 0.05).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
                row
            })
            .collect();
        Channel::new(ab(n_in), ab(n_out), rows).unwrap()
    }

    fn random_pmf(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Pmf {
        let mut v: Vec<f64> = (0..n).map(|_| rand01(rng) + 0.05).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        Pmf::new(ab(n), v).unwrap()
    }

    #[test]
    fn dp_identical_rows_is_zero() {
        let c = Channel::new(ab(3), ab(2), vec![vec![0.4, 0.6]; 3]).unwrap();
        assert_eq!(
            dp_epsilon(&c, &AdjacencyRelation::OrderedUnitStep).unwrap(),
            0.0
        );
    }

    #[test]
    fn dp_deterministic_distinct_outputs_is_infinite() {
        let c = Channel::identity(ab(3));
        assert!(dp_epsilon(&c, &AdjacencyRelation::OrderedUnitStep)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn dp_log_ratio_arithmetic() {
        let c = Channel::new(ab(2), ab(2), vec![vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
        let eps = dp_epsilon(&c, &AdjacencyRelation::OrderedUnitStep).unwrap();
        assert!(close(eps, 1.5f64.ln(), 1e-12));
    }

    #[test]
    fn dp_rejects_empty_adjacency() {
        let c = Channel::uniform(ab(1), ab(2));
        assert!(matches!(
            dp_epsilon(&c, &AdjacencyRelation::OrderedUnitStep),
            Err(Error::EmptyAdjacency)
        ));
        let c2 = Channel::uniform(ab(2), ab(2));
        assert!(matches!(
            dp_epsilon(&c2, &AdjacencyRelation::ExplicitPairs(vec![])),
            Err(Error::EmptyAdjacency)
        ));
    }

    #[test]
    fn dp_event_sets_reduce_to_singletons() {
        // For |U| <= 6, enumerate every event B and check the ratio of sums
        // never exceeds the singleton maximum.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n_out = 2 + (rng.next_u32() % 5) as usize; // up to 6
            let c = random_positive_channel(&mut rng, 3, n_out);
            let singleton = dp_epsilon(&c, &AdjacencyRelation::all_pairs(3)).unwrap();
            let rows = c.rows();
            let mut set_eps: f64 = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    if a == b {
                        continue;
                    }
                    for mask in 1u32..(1 << n_out) {
                        let (mut pa, mut pb) = (0.0, 0.0);
                        for u in 0..n_out {
                            if mask & (1 << u) != 0 {
                                pa += rows[[a, u]];
                                pb += rows[[b, u]];
                            }
                        }
                        set_eps = set_eps.max((pa.ln() - pb.ln()).abs());
                    }
                }
            }
            assert!(set_eps <= singleton + 1e-12);
        }
    }

    #[test]
    fn ip_examples() {
        let prior = Pmf::uniform(ab(2));

        let constant = Channel::new(ab(2), ab(2), vec![vec![0.4, 0.6]; 2]).unwrap();
        assert_eq!(info_privacy_epsilon(&prior, &constant).unwrap(), 0.0);

        let id = Channel::identity(ab(2));
        assert!(info_privacy_epsilon(&prior, &id).unwrap().is_infinite());

        // posterior [.6,.4] vs prior [.5,.5]: the binding ratio is the
        // two-sided one, .4/.5, giving ln(1.25)
        let c = Channel::new(ab(2), ab(2), vec![vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
        let eps = info_privacy_epsilon(&prior, &c).unwrap();
        assert!(close(eps, 1.25f64.ln(), 1e-12));
    }

    #[test]
    fn audit_examples() {
        let prior = Pmf::uniform(ab(2));

        let constant = Channel::constant(ab(2), ab(2), 0);
        let r = audit(&prior, &constant, &AdjacencyRelation::OrderedUnitStep).unwrap();
        assert_eq!(r.dp_epsilon, 0.0);
        assert_eq!(r.info_privacy_epsilon, 0.0);
        assert!(r.avg_leakage_bits.abs() < 1e-12 && r.max_leakage_bits.abs() < 1e-12);

        let id = Channel::identity(ab(2));
        let r = audit(&prior, &id, &AdjacencyRelation::OrderedUnitStep).unwrap();
        assert!(r.dp_epsilon.is_infinite() && r.info_privacy_epsilon.is_infinite());
        assert!(close(r.avg_leakage_bits, 1.0, 1e-12));
        assert!(close(r.max_leakage_bits, 1.0, 1e-12));

        // randomized response with flip probability .25: posterior ratios
        // are 1.5 and 0.5, so the two-sided definition gives eps_IP = ln 2
        // (anything smaller would break dp <= 2 * eps_IP, since dp = ln 3)
        let rr = Channel::new(ab(2), ab(2), vec![vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap();
        let r = audit(&prior, &rr, &AdjacencyRelation::OrderedUnitStep).unwrap();
        assert!(close(r.dp_epsilon, 3.0f64.ln(), 1e-12));
        assert!(close(r.info_privacy_epsilon, 2.0f64.ln(), 1e-12));
        assert!(close(
            r.avg_leakage_bits,
            1.0 - metrics::binary_entropy(0.25),
            1e-12
        ));
    }

    #[test]
    fn implication_theorem_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = 2 + (rng.next_u32() % 3) as usize;
            let m = 2 + (rng.next_u32() % 3) as usize;
            let prior = random_pmf(&mut rng, n);
            let mech = random_positive_channel(&mut rng, n, m);
            let ip = info_privacy_epsilon(&prior, &mech).unwrap();
            assert!(ip.is_finite());
            let dp = dp_epsilon(&mech, &AdjacencyRelation::all_pairs(n)).unwrap();
            let leak = cost_gain(&prior, &mech, CostKind::LogLoss).unwrap();
            assert!(dp <= 2.0 * ip + 1e-9);
            assert!(leak.avg_gain_bits <= ip / LN_2 + 1e-9);
            assert!(leak.max_gain_bits <= ip / LN_2 + 1e-9);
        }
    }

    #[test]
    fn dp_is_prior_independent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let mech = random_positive_channel(&mut rng, 3, 3);
        let adj = AdjacencyRelation::OrderedUnitStep;
        let e = dp_epsilon(&mech, &adj).unwrap();
        // nothing about the prior enters; re-running yields the same value
        assert_eq!(dp_epsilon(&mech, &adj).unwrap(), e);
    }

    #[test]
    fn post_processing_never_increases_privacy_loss() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..40 {
            let prior = random_pmf(&mut rng, 3);
            let mech = random_positive_channel(&mut rng, 3, 4);
            let post_proc = random_positive_channel(&mut rng, 4, 3);
            let composed = chain(&mech, &post_proc).unwrap();

            let ip0 = info_privacy_epsilon(&prior, &mech).unwrap();
            let ip1 = info_privacy_epsilon(&prior, &composed).unwrap();
            assert!(ip1 <= ip0 + 1e-9);

            let l0 = cost_gain(&prior, &mech, CostKind::LogLoss).unwrap();
            let l1 = cost_gain(&prior, &composed, CostKind::LogLoss).unwrap();
            assert!(l1.avg_gain_bits <= l0.avg_gain_bits + 1e-9);
        }
    }
}
