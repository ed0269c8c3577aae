//! Finite-alphabet probability primitives: pmfs, joint distributions and
//! channels (row-stochastic matrices), with Bayes posteriors and composition.
//!
//! All types are immutable values. Constructors validate (entries
//! non-negative, sums within [`NORM_TOL`](crate::NORM_TOL) of 1) and then
//! renormalize to an exact sum of 1 so downstream log-sums stay stable.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::{Error, Result, NORM_TOL, SUPPORT_ETA};

/// An ordered set of distinct symbol names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<String>,
}

impl Alphabet {
    pub fn new<I, T>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::EmptyAlphabet);
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateSymbol(l.clone()));
            }
        }
        Ok(Self { labels })
    }

    /// Alphabet `{prefix}0 .. {prefix}{n-1}`.
    pub fn indexed(prefix: &str, n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("{prefix}{i}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty label sets
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn describe(&self) -> String {
        self.labels.join(",")
    }
}

fn validate_entries(probs: &[f64]) -> Result<()> {
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::NonFiniteEntry(i));
        }
        if p < 0.0 {
            return Err(Error::NegativeEntry { index: i, value: p });
        }
    }
    Ok(())
}

/// A probability mass function over an [`Alphabet`].
#[derive(Debug, Clone)]
pub struct Pmf {
    alphabet: Alphabet,
    probs: Array1<f64>,
}

impl Pmf {
    pub fn new(alphabet: Alphabet, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != alphabet.len() {
            return Err(Error::LengthMismatch {
                expected: alphabet.len(),
                got: probs.len(),
            });
        }
        validate_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { sum, tol: NORM_TOL });
        }
        let probs = Array1::from(probs) / sum;
        Ok(Self { alphabet, probs })
    }

    pub fn uniform(alphabet: Alphabet) -> Self {
        let n = alphabet.len();
        Self {
            alphabet,
            probs: Array1::from_elem(n, 1.0 / n as f64),
        }
    }

    pub fn point_mass(alphabet: Alphabet, index: usize) -> Self {
        let mut probs = Array1::zeros(alphabet.len());
        probs[index] = 1.0;
        Self { alphabet, probs }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn probs(&self) -> ArrayView1<'_, f64> {
        self.probs.view()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Indices carrying at least [`SUPPORT_ETA`] probability mass.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= SUPPORT_ETA)
            .map(|(i, _)| i)
    }
}

/// A joint distribution over a pair of alphabets (rows x columns).
#[derive(Debug, Clone)]
pub struct JointPmf {
    row_alphabet: Alphabet,
    col_alphabet: Alphabet,
    probs: Array2<f64>,
}

impl JointPmf {
    pub fn new(
        row_alphabet: Alphabet,
        col_alphabet: Alphabet,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if rows.len() != row_alphabet.len() || rows.iter().any(|r| r.len() != col_alphabet.len()) {
            return Err(Error::ShapeMismatch(format!(
                "joint must be {}x{}",
                row_alphabet.len(),
                col_alphabet.len()
            )));
        }
        validate_entries(&flat)?;
        let sum: f64 = flat.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { sum, tol: NORM_TOL });
        }
        let probs =
            Array2::from_shape_vec((row_alphabet.len(), col_alphabet.len()), flat).unwrap() / sum;
        Ok(Self {
            row_alphabet,
            col_alphabet,
            probs,
        })
    }

    /// Joint induced by a prior on the input and a channel: `p(s)p(u|s)`.
    pub fn from_prior_and_channel(prior: &Pmf, channel: &Channel) -> Result<Self> {
        expect_same_alphabet(prior.alphabet(), channel.input_alphabet())?;
        let mut probs = channel.rows.clone();
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            row *= prior.get(i);
        }
        Ok(Self {
            row_alphabet: channel.input.clone(),
            col_alphabet: channel.output.clone(),
            probs,
        })
    }

    pub fn row_alphabet(&self) -> &Alphabet {
        &self.row_alphabet
    }

    pub fn col_alphabet(&self) -> &Alphabet {
        &self.col_alphabet
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    /// Row and column marginals, as pmfs over the respective alphabets.
    pub fn marginals(&self) -> (Pmf, Pmf) {
        let row_sums = self.probs.sum_axis(Axis(1));
        let col_sums = self.probs.sum_axis(Axis(0));
        (
            Pmf {
                alphabet: self.row_alphabet.clone(),
                probs: normalize(row_sums),
            },
            Pmf {
                alphabet: self.col_alphabet.clone(),
                probs: normalize(col_sums),
            },
        )
    }

    /// Conditional of the column variable given the row variable,
    /// `p(col | row)`. Rows with zero marginal mass fall back to uniform.
    pub fn conditional_cols(&self) -> Channel {
        let n_cols = self.col_alphabet.len();
        let mut rows = self.probs.clone();
        for mut row in rows.rows_mut() {
            let s: f64 = row.sum();
            if s >= SUPPORT_ETA {
                row /= s;
            } else {
                row.fill(1.0 / n_cols as f64);
            }
        }
        Channel {
            input: self.row_alphabet.clone(),
            output: self.col_alphabet.clone(),
            rows,
        }
    }
}

fn normalize(mut v: Array1<f64>) -> Array1<f64> {
    let s: f64 = v.sum();
    if s > 0.0 {
        v /= s;
    }
    v
}

/// A conditional distribution: one pmf over the output alphabet per input
/// symbol, stored as a row-stochastic matrix.
#[derive(Debug, Clone)]
pub struct Channel {
    input: Alphabet,
    output: Alphabet,
    rows: Array2<f64>,
}

impl Channel {
    pub fn new(input: Alphabet, output: Alphabet, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != input.len() || rows.iter().any(|r| r.len() != output.len()) {
            return Err(Error::ShapeMismatch(format!(
                "channel must be {}x{}",
                input.len(),
                output.len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((input.len(), output.len()), flat).unwrap();
        Self::from_array(input, output, arr)
    }

    pub fn from_array(input: Alphabet, output: Alphabet, mut rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() != input.len() || rows.ncols() != output.len() {
            return Err(Error::ShapeMismatch(format!(
                "channel must be {}x{}, got {}x{}",
                input.len(),
                output.len(),
                rows.nrows(),
                rows.ncols()
            )));
        }
        for (r, row) in rows.rows().into_iter().enumerate() {
            validate_entries(row.as_slice().expect("contiguous row"))?;
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > NORM_TOL {
                return Err(Error::RowNotNormalized {
                    row: r,
                    sum,
                    tol: NORM_TOL,
                });
            }
        }
        for mut row in rows.rows_mut() {
            let s: f64 = row.sum();
            row /= s;
        }
        Ok(Self {
            input,
            output,
            rows,
        })
    }

    pub fn identity(alphabet: Alphabet) -> Self {
        let n = alphabet.len();
        Self {
            input: alphabet.clone(),
            output: alphabet,
            rows: Array2::eye(n),
        }
    }

    /// Channel that emits `output_index` regardless of input.
    pub fn constant(input: Alphabet, output: Alphabet, output_index: usize) -> Self {
        let mut rows = Array2::zeros((input.len(), output.len()));
        for mut row in rows.rows_mut() {
            row[output_index] = 1.0;
        }
        Self {
            input,
            output,
            rows,
        }
    }

    pub fn uniform(input: Alphabet, output: Alphabet) -> Self {
        let m = output.len();
        let rows = Array2::from_elem((input.len(), m), 1.0 / m as f64);
        Self {
            input,
            output,
            rows,
        }
    }

    pub fn input_alphabet(&self) -> &Alphabet {
        &self.input
    }

    pub fn output_alphabet(&self) -> &Alphabet {
        &self.output
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn row_pmf(&self, i: usize) -> Pmf {
        Pmf {
            alphabet: self.output.clone(),
            probs: self.rows.row(i).to_owned(),
        }
    }
}

pub(crate) fn expect_same_alphabet(expected: &Alphabet, got: &Alphabet) -> Result<()> {
    if expected != got {
        return Err(Error::AlphabetMismatch {
            expected: expected.describe(),
            got: got.describe(),
        });
    }
    Ok(())
}

/// Compose two channels along a Markov chain: `first` maps S to Y, `second`
/// maps Y to U, the result maps S to U. Plain matrix product of the
/// row-stochastic matrices.
pub fn chain(first: &Channel, second: &Channel) -> Result<Channel> {
    expect_same_alphabet(first.output_alphabet(), second.input_alphabet())?;
    let mut rows = first.rows.dot(&second.rows);
    for mut row in rows.rows_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
    Ok(Channel {
        input: first.input.clone(),
        output: second.output.clone(),
        rows,
    })
}

/// Bayes inversion of a channel under a prior.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// Marginal over the channel output, `p(u) = sum_s p(s) p(u|s)`.
    pub output_pmf: Pmf,
    /// Posterior channel `p(s|u)`, one row per output symbol. Rows for
    /// unsupported outputs are set to the prior by convention.
    pub reverse: Channel,
    /// Output indices with `p(u)` below the support threshold.
    pub unsupported: Vec<usize>,
}

/// Posterior `p(s|u)` and output marginal for `prior` pushed through
/// `channel`. Outputs with mass below [`SUPPORT_ETA`] are flagged rather than
/// producing NaNs; their posterior rows default to the prior.
pub fn posterior(prior: &Pmf, channel: &Channel) -> Result<Posterior> {
    expect_same_alphabet(prior.alphabet(), channel.input_alphabet())?;
    let n_in = channel.input.len();
    let n_out = channel.output.len();

    let mut p_u = Array1::<f64>::zeros(n_out);
    for s in 0..n_in {
        let ps = prior.get(s);
        for u in 0..n_out {
            p_u[u] += ps * channel.rows[[s, u]];
        }
    }

    let mut reverse = Array2::<f64>::zeros((n_out, n_in));
    let mut unsupported = Vec::new();
    for u in 0..n_out {
        if p_u[u] >= SUPPORT_ETA {
            for s in 0..n_in {
                reverse[[u, s]] = prior.get(s) * channel.rows[[s, u]] / p_u[u];
            }
            let row_sum: f64 = reverse.row(u).sum();
            let mut row = reverse.row_mut(u);
            row /= row_sum;
        } else {
            unsupported.push(u);
            reverse.row_mut(u).assign(&prior.probs());
        }
    }

    Ok(Posterior {
        output_pmf: Pmf {
            alphabet: channel.output.clone(),
            probs: normalize(p_u),
        },
        reverse: Channel {
            input: channel.output.clone(),
            output: channel.input.clone(),
            rows: reverse,
        },
        unsupported,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
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

    fn random_channel(rng: &mut rand_chacha::ChaCha8Rng, n_in: usize, n_out: usize) -> Channel {
        let rows: Vec<Vec<f64>> = (0..n_in)
            .map(|_| {
                let mut row: Vec<f64> = (0..n_out).map(|_| rand01(rng) + 1e-3).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
                row
            })
            .collect();
        Channel::new(ab(n_in), ab(n_out), rows).unwrap()
    }

    #[test]
    fn alphabet_rejects_duplicates_and_empty() {
        assert!(matches!(
            Alphabet::new(["a", "b", "a"]),
            Err(Error::DuplicateSymbol(_))
        ));
        assert!(matches!(
            Alphabet::new(Vec::<String>::new()),
            Err(Error::EmptyAlphabet)
        ));
    }

    #[test]
    fn pmf_validation() {
        assert!(Pmf::new(ab(2), vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            Pmf::new(ab(2), vec![0.7, 0.4]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(matches!(
            Pmf::new(ab(2), vec![-0.1, 1.1]),
            Err(Error::NegativeEntry { .. })
        ));
        // within tolerance: renormalized to exact 1
        let p = Pmf::new(ab(2), vec![0.5 + 4e-10, 0.5]).unwrap();
        assert_eq!(p.probs().sum(), 1.0);
    }

    #[test]
    fn channel_validation() {
        assert!(matches!(
            Channel::new(ab(2), ab(2), vec![vec![0.9, 0.2], vec![0.5, 0.5]]),
            Err(Error::RowNotNormalized { row: 0, .. })
        ));
        assert!(Channel::new(ab(2), ab(3), vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]]).is_ok());
    }

    #[test]
    fn marginals_examples() {
        // uniform 2x2
        let j = JointPmf::new(ab(2), ab(2), vec![vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
        let (ps, py) = j.marginals();
        assert_eq!(ps.probs().to_vec(), vec![0.5, 0.5]);
        assert_eq!(py.probs().to_vec(), vec![0.5, 0.5]);

        // diagonal
        let j = JointPmf::new(ab(2), ab(2), vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let (ps, py) = j.marginals();
        assert_eq!(ps.probs().to_vec(), vec![0.5, 0.5]);
        assert_eq!(py.probs().to_vec(), vec![0.5, 0.5]);

        // direct sums
        let j = JointPmf::new(ab(2), ab(2), vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let (ps, py) = j.marginals();
        assert!(close(ps.get(0), 0.3, 1e-15) && close(ps.get(1), 0.7, 1e-15));
        assert!(close(py.get(0), 0.4, 1e-15) && close(py.get(1), 0.6, 1e-15));
    }

    #[test]
    fn chain_examples() {
        let c = Channel::new(ab(2), ab(2), vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let id = Channel::identity(ab(2));

        let left = chain(&id, &c).unwrap();
        assert_eq!(left.rows(), c.rows());

        let const_out = Channel::constant(ab(2), ab(2), 1);
        let through = chain(&c, &const_out).unwrap();
        assert_eq!(through.rows(), const_out.rows());

        let mix = Channel::new(ab(2), ab(2), vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let r = chain(&mix, &id).unwrap();
        assert_eq!(r.rows(), mix.rows());
    }

    #[test]
    fn chain_rejects_alphabet_mismatch() {
        let a = Channel::uniform(ab(2), ab(3));
        let b = Channel::uniform(ab(2), ab(2));
        assert!(matches!(
            chain(&a, &b),
            Err(Error::AlphabetMismatch { .. })
        ));
    }

    #[test]
    fn chain_associative_and_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_channel(&mut rng, 3, 2);
            let b = random_channel(&mut rng, 2, 4);
            let c = random_channel(&mut rng, 4, 3);
            let left = chain(&chain(&a, &b).unwrap(), &c).unwrap();
            let right = chain(&a, &chain(&b, &c).unwrap()).unwrap();
            for (x, y) in left.rows().iter().zip(right.rows().iter()) {
                assert!(close(*x, *y, 1e-12));
            }
            let id_in = Channel::identity(ab(3));
            let id_out = Channel::identity(ab(2));
            let l = chain(&id_in, &a).unwrap();
            let r = chain(&a, &id_out).unwrap();
            for ((x, y), z) in l.rows().iter().zip(r.rows().iter()).zip(a.rows().iter()) {
                assert!(close(*x, *z, 1e-12) && close(*y, *z, 1e-12));
            }
        }
    }

    #[test]
    fn posterior_identity_channel() {
        let prior = Pmf::new(ab(2), vec![0.3, 0.7]).unwrap();
        let post = posterior(&prior, &Channel::identity(ab(2))).unwrap();
        assert_eq!(post.reverse.rows()[[0, 0]], 1.0);
        assert_eq!(post.reverse.rows()[[1, 1]], 1.0);
        assert!(post.unsupported.is_empty());
    }

    #[test]
    fn posterior_input_independent_channel() {
        let prior = Pmf::new(ab(2), vec![0.3, 0.7]).unwrap();
        let c = Channel::new(ab(2), ab(3), vec![vec![0.2, 0.5, 0.3]; 2]).unwrap();
        let post = posterior(&prior, &c).unwrap();
        for u in 0..3 {
            assert!(close(post.reverse.rows()[[u, 0]], 0.3, 1e-12));
            assert!(close(post.reverse.rows()[[u, 1]], 0.7, 1e-12));
        }
    }

    #[test]
    fn posterior_bayes_arithmetic() {
        let prior = Pmf::new(ab(2), vec![0.5, 0.5]).unwrap();
        let c = Channel::new(ab(2), ab(2), vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let post = posterior(&prior, &c).unwrap();
        assert!(close(post.output_pmf.get(0), 0.55, 1e-12));
        assert!(close(post.output_pmf.get(1), 0.45, 1e-12));
        assert!(close(post.reverse.rows()[[0, 0]], 9.0 / 11.0, 1e-12));
        assert!(close(post.reverse.rows()[[0, 1]], 2.0 / 11.0, 1e-12));
    }

    #[test]
    fn posterior_flags_unsupported_outputs() {
        let prior = Pmf::new(ab(2), vec![0.4, 0.6]).unwrap();
        let c = Channel::new(ab(2), ab(3), vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let post = posterior(&prior, &c).unwrap();
        assert_eq!(post.unsupported, vec![1, 2]);
        // unsupported rows fall back to the prior, never NaN
        assert!(close(post.reverse.rows()[[1, 0]], 0.4, 1e-15));
        assert!(post.reverse.rows().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn posterior_remixing_recovers_prior() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let n = 2 + (rng.next_u32() % 3) as usize;
            let m = 2 + (rng.next_u32() % 3) as usize;
            let mut w: Vec<f64> = (0..n).map(|_| rand01(&mut rng) + 0.05).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let prior = Pmf::new(ab(n), w).unwrap();
            let c = random_channel(&mut rng, n, m);
            let post = posterior(&prior, &c).unwrap();
            for s_idx in 0..n {
                let mixed: f64 = (0..m)
                    .map(|u| post.output_pmf.get(u) * post.reverse.rows()[[u, s_idx]])
                    .sum();
                assert!(close(mixed, prior.get(s_idx), 1e-9));
            }
        }
    }
}
