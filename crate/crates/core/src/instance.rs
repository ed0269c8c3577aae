//! Problem descriptions for the channel-design solvers: the (S,Y) coupling,
//! the output alphabet size, and distortion constraints with budgets.
//!
//! Two couplings are supported. An explicit joint pmf over (S,Y) covers the
//! general case. When Y is a deterministic function of a large S (counting
//! queries over databases), the instance instead carries the marginal `p_Y`
//! and the conditional-entropy table `H(S|Y=y)` — every quantity the solvers
//! need factors through that sufficient statistic, so the database joint is
//! never materialized.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use ndarray::Array2;

use crate::metrics::entropy_slice;
use crate::prob::{Alphabet, Channel, JointPmf, Pmf};
use crate::{Error, Result, LN_2, LOG_FLOOR, SUPPORT_ETA};

/// How S and Y are coupled.
#[derive(Debug, Clone)]
pub enum Coupling {
    /// Explicit joint distribution, rows indexed by S, columns by Y.
    Joint(JointPmf),
    /// Y is a deterministic function of an abstract S; only the marginal of
    /// Y and the per-output conditional entropies `H(S|Y=y)` (bits) are kept.
    DeterministicY {
        y_pmf: Pmf,
        cond_entropy_bits: Vec<f64>,
    },
}

/// One utility constraint: `E[d(Y,U)] <= budget`.
#[derive(Debug, Clone)]
pub struct DistortionConstraint {
    /// Distortion matrix, `|Y| x |U|`, entries finite and non-negative.
    pub matrix: Array2<f64>,
    pub budget: f64,
}

impl DistortionConstraint {
    pub fn new(rows: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        if n_rows == 0 || n_cols == 0 || rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::ShapeMismatch("ragged distortion matrix".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        for (i, &v) in flat.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry(i));
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry { index: i, value: v });
            }
        }
        if !budget.is_finite() || budget < 0.0 {
            return Err(Error::Invalid(format!("budget must be >= 0, got {budget}")));
        }
        Ok(Self {
            matrix: Array2::from_shape_vec((n_rows, n_cols), flat).unwrap(),
            budget,
        })
    }

    /// Hamming distortion on a square alphabet.
    pub fn hamming(n: usize, budget: f64) -> Self {
        let matrix = Array2::from_shape_fn((n, n), |(y, u)| if y == u { 0.0 } else { 1.0 });
        Self { matrix, budget }
    }

    /// Absolute-error distortion `|y - u|` on a square integer alphabet.
    pub fn absolute_error(n: usize, budget: f64) -> Self {
        let matrix = Array2::from_shape_fn((n, n), |(y, u)| (y as f64 - u as f64).abs());
        Self { matrix, budget }
    }
}

/// Which conditional distribution the designer controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingMode {
    /// The mapping sees only Y: decision variable `p(u|y)`.
    FromY,
    /// The mapping sees S as well: decision variable `p(u|y,s)`.
    Direct,
}

/// A complete design problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    coupling: Coupling,
    u_alphabet: Alphabet,
    distortions: Vec<DistortionConstraint>,
    mode: MappingMode,
}

impl ProblemInstance {
    pub fn new(
        coupling: Coupling,
        u_size: usize,
        distortions: Vec<DistortionConstraint>,
        mode: MappingMode,
    ) -> Result<Self> {
        if u_size == 0 {
            return Err(Error::Invalid("u_size must be at least 1".into()));
        }
        let n_y = match &coupling {
            Coupling::Joint(j) => j.col_alphabet().len(),
            Coupling::DeterministicY {
                y_pmf,
                cond_entropy_bits,
            } => {
                if cond_entropy_bits.len() != y_pmf.len() {
                    return Err(Error::LengthMismatch {
                        expected: y_pmf.len(),
                        got: cond_entropy_bits.len(),
                    });
                }
                if cond_entropy_bits.iter().any(|h| !h.is_finite() || *h < 0.0) {
                    return Err(Error::Invalid(
                        "conditional entropies must be finite and >= 0".into(),
                    ));
                }
                y_pmf.len()
            }
        };
        for d in &distortions {
            if d.matrix.nrows() != n_y || d.matrix.ncols() != u_size {
                return Err(Error::ShapeMismatch(format!(
                    "distortion matrix must be {}x{}, got {}x{}",
                    n_y,
                    u_size,
                    d.matrix.nrows(),
                    d.matrix.ncols()
                )));
            }
        }
        if matches!(mode, MappingMode::Direct) && !matches!(coupling, Coupling::Joint(_)) {
            return Err(Error::Invalid(
                "direct mode requires an explicit joint over (S,Y)".into(),
            ));
        }
        Ok(Self {
            coupling,
            u_alphabet: Alphabet::indexed("u", u_size)?,
            distortions,
            mode,
        })
    }

    pub fn from_joint(
        joint: JointPmf,
        u_size: usize,
        distortions: Vec<DistortionConstraint>,
    ) -> Result<Self> {
        Self::new(Coupling::Joint(joint), u_size, distortions, MappingMode::FromY)
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn mode(&self) -> MappingMode {
        self.mode
    }

    pub fn with_mode(mut self, mode: MappingMode) -> Result<Self> {
        if matches!(mode, MappingMode::Direct) && !matches!(self.coupling, Coupling::Joint(_)) {
            return Err(Error::Invalid(
                "direct mode requires an explicit joint over (S,Y)".into(),
            ));
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn u_alphabet(&self) -> &Alphabet {
        &self.u_alphabet
    }

    pub fn u_size(&self) -> usize {
        self.u_alphabet.len()
    }

    pub fn distortions(&self) -> &[DistortionConstraint] {
        &self.distortions
    }

    pub fn set_budget(&mut self, index: usize, budget: f64) {
        self.distortions[index].budget = budget;
    }

    pub fn y_alphabet(&self) -> Alphabet {
        match &self.coupling {
            Coupling::Joint(j) => j.col_alphabet().clone(),
            Coupling::DeterministicY { y_pmf, .. } => y_pmf.alphabet().clone(),
        }
    }

    pub fn y_pmf(&self) -> Pmf {
        match &self.coupling {
            Coupling::Joint(j) => j.marginals().1,
            Coupling::DeterministicY { y_pmf, .. } => y_pmf.clone(),
        }
    }

    /// Entropy of the private variable, `H(S)` in bits. For table-backed
    /// instances this is `H(Y) + sum_y p(y) H(S|Y=y)`.
    pub fn s_entropy_bits(&self) -> f64 {
        match &self.coupling {
            Coupling::Joint(j) => {
                let (p_s, _) = j.marginals();
                entropy_slice(p_s.probs().as_slice().unwrap())
            }
            Coupling::DeterministicY {
                y_pmf,
                cond_entropy_bits,
            } => {
                let h_y = entropy_slice(y_pmf.probs().as_slice().unwrap());
                let extra: f64 = y_pmf
                    .probs()
                    .iter()
                    .zip(cond_entropy_bits)
                    .map(|(&p, &h)| p * h)
                    .sum();
                h_y + extra
            }
        }
    }

    /// `I(S;Y)` in bits: how much the measurements reveal before any
    /// privacy mapping is applied. Equals `H(Y)` for deterministic couplings.
    pub fn mutual_information_sy(&self) -> f64 {
        match &self.coupling {
            Coupling::Joint(j) => crate::metrics::mutual_information(j),
            Coupling::DeterministicY { y_pmf, .. } => {
                entropy_slice(y_pmf.probs().as_slice().unwrap())
            }
        }
    }

    /// `H(S|Y=y)` in bits for every y. Outputs with no mass report 0.
    pub fn cond_entropy_bits(&self) -> Vec<f64> {
        match &self.coupling {
            Coupling::Joint(j) => {
                let probs = j.probs();
                (0..probs.ncols())
                    .map(|y| {
                        let col: Vec<f64> = (0..probs.nrows()).map(|s| probs[[s, y]]).collect();
                        let mass: f64 = col.iter().sum();
                        if mass < SUPPORT_ETA {
                            0.0
                        } else {
                            let norm: Vec<f64> = col.iter().map(|v| v / mass).collect();
                            entropy_slice(&norm)
                        }
                    })
                    .collect()
            }
            Coupling::DeterministicY {
                cond_entropy_bits, ..
            } => cond_entropy_bits.clone(),
        }
    }

    /// Checks that Y is a deterministic function of S, i.e. every row of
    /// `p(Y|S)` with positive prior mass is one-hot. Names the first
    /// violating (s, y) pair otherwise.
    pub fn check_deterministic_y(&self) -> Result<()> {
        match &self.coupling {
            Coupling::DeterministicY { .. } => Ok(()),
            Coupling::Joint(j) => {
                let probs = j.probs();
                for s in 0..probs.nrows() {
                    let row_mass: f64 = probs.row(s).sum();
                    if row_mass < SUPPORT_ETA {
                        continue;
                    }
                    for y in 0..probs.ncols() {
                        let cond = probs[[s, y]] / row_mass;
                        if cond > 1e-9 && cond < 1.0 - 1e-9 {
                            return Err(Error::NonDeterministicCoupling {
                                s: j.row_alphabet().label(s).to_string(),
                                y: j.col_alphabet().label(y).to_string(),
                                value: cond,
                            });
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Smallest expected distortion any mapping can achieve for constraint
    /// `k`: pick the best output per y.
    pub fn min_achievable_distortion(&self, k: usize) -> f64 {
        let d = &self.distortions[k].matrix;
        let p_y = self.y_pmf();
        (0..d.nrows())
            .map(|y| {
                let best = d.row(y).iter().cloned().fold(f64::INFINITY, f64::min);
                p_y.get(y) * best
            })
            .sum()
    }

    /// Expected distortion of the constant mapping that always emits `u`.
    pub fn constant_output_distortion(&self, k: usize, u: usize) -> f64 {
        let d = &self.distortions[k].matrix;
        let p_y = self.y_pmf();
        (0..d.nrows()).map(|y| p_y.get(y) * d[[y, u]]).sum()
    }

    /// An output whose constant mapping satisfies every budget, if one
    /// exists. Such a mapping is independent of the data and leaks nothing.
    pub fn feasible_constant_output(&self) -> Option<usize> {
        (0..self.u_size()).find(|&u| {
            self.distortions
                .iter()
                .enumerate()
                .all(|(k, d)| self.constant_output_distortion(k, u) <= d.budget)
        })
    }

    /// Alphabet of the decision-variable rows: Y for [`MappingMode::FromY`],
    /// (y,s) pairs for [`MappingMode::Direct`].
    pub fn decision_alphabet(&self) -> Result<Alphabet> {
        match self.mode {
            MappingMode::FromY => Ok(self.y_alphabet()),
            MappingMode::Direct => {
                let Coupling::Joint(j) = &self.coupling else {
                    unreachable!("validated at construction")
                };
                let mut labels = Vec::new();
                for s in j.row_alphabet().labels() {
                    for y in j.col_alphabet().labels() {
                        labels.push(format!("{y},{s}"));
                    }
                }
                Alphabet::new(labels)
            }
        }
    }

    /// Average leakage `I(S;U)` (bits) of a given decision channel.
    pub fn leakage_bits(&self, channel: &Channel) -> Result<f64> {
        let kernel = Kernel::new(self)?;
        kernel.check_shape(channel)?;
        Ok(kernel.leakage_bits(channel.rows()))
    }

    /// `H(S|U=u)` (bits) per output under a decision channel; unsupported
    /// outputs report `H(S)` by the posterior-equals-prior convention.
    pub fn per_output_entropy_bits(&self, channel: &Channel) -> Result<Vec<f64>> {
        let kernel = Kernel::new(self)?;
        kernel.check_shape(channel)?;
        Ok(kernel.per_output_entropy(channel.rows()))
    }

    /// The derived conditional `p(u|s)` (or `p(u|y)` for table-backed
    /// instances) and output marginal `p(u)` induced by a decision channel.
    /// These satisfy the linear coupling identities of the design programs
    /// by construction.
    pub fn derived_channels(&self, channel: &Channel) -> Result<(Channel, Pmf)> {
        let kernel = Kernel::new(self)?;
        kernel.check_shape(channel)?;
        let (rows, p_u) = kernel.derived_output_channel(channel.rows());
        let input = match &self.coupling {
            Coupling::Joint(j) => j.row_alphabet().clone(),
            Coupling::DeterministicY { y_pmf, .. } => y_pmf.alphabet().clone(),
        };
        let total: f64 = p_u.iter().sum();
        let p_u_pmf = Pmf::new(
            self.u_alphabet.clone(),
            p_u.iter().map(|v| v / total).collect(),
        )?;
        Ok((
            Channel::from_array(input, self.u_alphabet.clone(), rows)?,
            p_u_pmf,
        ))
    }

    /// `E[d_k(Y,U)]` under a decision channel.
    pub fn distortion(&self, channel: &Channel, k: usize) -> Result<f64> {
        let kernel = Kernel::new(self)?;
        kernel.check_shape(channel)?;
        let d = &self.distortions[k].matrix;
        let mut total = 0.0;
        for (r, row) in channel.rows().rows().into_iter().enumerate() {
            let y = kernel.row_y[r];
            let w = kernel.row_weight[r];
            for (u, &x) in row.iter().enumerate() {
                total += w * d[[y, u]] * x;
            }
        }
        Ok(total)
    }
}

enum Backing {
    /// Decision rows indexed by Y; leakage through the explicit joint.
    FromYJoint { w: Array2<f64>, p_s: Vec<f64> },
    /// Decision rows indexed by (s,y) pairs.
    DirectJoint {
        w: Array2<f64>,
        p_s: Vec<f64>,
        row_s: Vec<usize>,
    },
    /// Deterministic coupling: leakage is `I(Y;U)` and conditional entropies
    /// chain through the `H(S|Y=y)` table.
    Table { p_y: Vec<f64>, h_y: Vec<f64> },
}

/// Evaluation kernel shared by the solvers: objective/constraint values and
/// gradients, all in bits, all expressed on the decision-variable matrix.
pub(crate) struct Kernel {
    pub n_u: usize,
    pub n_rows: usize,
    /// y index of each decision row.
    pub row_y: Vec<usize>,
    /// p(y) for FromY rows, p(s,y) for Direct rows.
    pub row_weight: Vec<f64>,
    backing: Backing,
    /// H(S) in bits.
    pub h_s: f64,
}

fn log2_floored(v: f64, flag: Option<&AtomicBool>) -> f64 {
    if v < LOG_FLOOR || !v.is_finite() {
        if let Some(f) = flag {
            f.store(true, Ordering::Relaxed);
        }
        LOG_FLOOR.log2()
    } else {
        v.log2()
    }
}

impl Kernel {
    pub fn new(instance: &ProblemInstance) -> Result<Self> {
        let n_u = instance.u_size();
        let h_s = instance.s_entropy_bits();
        match (&instance.coupling, instance.mode) {
            (Coupling::Joint(j), MappingMode::FromY) => {
                let w = j.probs().clone();
                let p_s: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
                let n_y = w.ncols();
                let p_y: Vec<f64> = (0..n_y).map(|y| w.column(y).sum()).collect();
                Ok(Self {
                    n_u,
                    n_rows: n_y,
                    row_y: (0..n_y).collect(),
                    row_weight: p_y,
                    backing: Backing::FromYJoint { w, p_s },
                    h_s,
                })
            }
            (Coupling::Joint(j), MappingMode::Direct) => {
                let w = j.probs().clone();
                let p_s: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
                let (n_s, n_y) = w.dim();
                let mut row_y = Vec::with_capacity(n_s * n_y);
                let mut row_s = Vec::with_capacity(n_s * n_y);
                let mut row_weight = Vec::with_capacity(n_s * n_y);
                for s in 0..n_s {
                    for y in 0..n_y {
                        row_s.push(s);
                        row_y.push(y);
                        row_weight.push(w[[s, y]]);
                    }
                }
                Ok(Self {
                    n_u,
                    n_rows: n_s * n_y,
                    row_y,
                    row_weight,
                    backing: Backing::DirectJoint { w, p_s, row_s },
                    h_s,
                })
            }
            (
                Coupling::DeterministicY {
                    y_pmf,
                    cond_entropy_bits,
                },
                MappingMode::FromY,
            ) => {
                let p_y = y_pmf.probs().to_vec();
                let n_y = p_y.len();
                Ok(Self {
                    n_u,
                    n_rows: n_y,
                    row_y: (0..n_y).collect(),
                    row_weight: p_y.clone(),
                    backing: Backing::Table {
                        p_y,
                        h_y: cond_entropy_bits.clone(),
                    },
                    h_s,
                })
            }
            (Coupling::DeterministicY { .. }, MappingMode::Direct) => Err(Error::Invalid(
                "direct mode requires an explicit joint over (S,Y)".into(),
            )),
        }
    }

    pub fn check_shape(&self, channel: &Channel) -> Result<()> {
        if channel.rows().nrows() != self.n_rows || channel.rows().ncols() != self.n_u {
            return Err(Error::ShapeMismatch(format!(
                "decision channel must be {}x{}, got {}x{}",
                self.n_rows,
                self.n_u,
                channel.rows().nrows(),
                channel.rows().ncols()
            )));
        }
        Ok(())
    }

    /// Joint over (S,U) — or (Y,U) for table-backed instances — induced by
    /// the decision matrix, together with the output marginal.
    pub fn induced_joint(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
        let a = match &self.backing {
            Backing::FromYJoint { w, .. } => w.dot(x),
            Backing::DirectJoint { w, row_s, .. } => {
                let n_s = w.nrows();
                let mut a = Array2::zeros((n_s, self.n_u));
                for r in 0..self.n_rows {
                    let s = row_s[r];
                    let wr = self.row_weight[r];
                    if wr == 0.0 {
                        continue;
                    }
                    for u in 0..self.n_u {
                        a[[s, u]] += wr * x[[r, u]];
                    }
                }
                a
            }
            Backing::Table { p_y, .. } => {
                let mut a = x.clone();
                for (mut row, &py) in a.rows_mut().into_iter().zip(p_y) {
                    row *= py;
                }
                a
            }
        };
        let c: Vec<f64> = (0..self.n_u).map(|u| a.column(u).sum()).collect();
        (a, c)
    }

    fn first_marginal(&self) -> &[f64] {
        match &self.backing {
            Backing::FromYJoint { p_s, .. } | Backing::DirectJoint { p_s, .. } => p_s,
            Backing::Table { p_y, .. } => p_y,
        }
    }

    /// `I(S;U)` in bits (equals `I(Y;U)` for deterministic couplings). Zero
    /// terms are skipped exactly, so no log floor is needed here.
    pub fn leakage_bits(&self, x: &Array2<f64>) -> f64 {
        let (a, c) = self.induced_joint(x);
        let p_first = self.first_marginal();
        let mut total = 0.0;
        for (i, &pi) in p_first.iter().enumerate() {
            if pi <= 0.0 {
                continue;
            }
            for u in 0..self.n_u {
                let v = a[[i, u]];
                if v > 0.0 {
                    total += v * (v.ln() - pi.ln() - c[u].max(LOG_FLOOR).ln());
                }
            }
        }
        (total / LN_2).max(0.0)
    }

    /// Gradient of [`Self::leakage_bits`] with respect to the decision
    /// matrix.
    ///
    /// Columns whose output carries essentially no mass get the exact
    /// one-sided derivative of reviving that output along a single
    /// coordinate; the objective is only directionally differentiable there
    /// and the floored log would fabricate a pull toward dead outputs.
    pub fn leakage_grad(&self, x: &Array2<f64>, flag: Option<&AtomicBool>) -> Array2<f64> {
        let (a, c) = self.induced_joint(x);
        let p_first = self.first_marginal();
        let dead: Vec<bool> = c.iter().map(|&cu| cu < LOG_FLOOR).collect();
        // log-ratio table over the induced joint, live columns only
        let mut l = Array2::<f64>::zeros(a.dim());
        for (i, &pi) in p_first.iter().enumerate() {
            if pi <= 0.0 {
                continue;
            }
            for u in 0..self.n_u {
                if !dead[u] {
                    l[[i, u]] = log2_floored(a[[i, u]] / (pi * c[u]), flag);
                }
            }
        }
        match &self.backing {
            Backing::FromYJoint { w, p_s } => {
                let mut grad = w.t().dot(&l);
                if dead.iter().any(|&d| d) {
                    // revival derivative per y: sum_s w(s,y) log2(w(s,y)/(p_s p_y))
                    let revive: Vec<f64> = (0..w.ncols())
                        .map(|y| {
                            let py = self.row_weight[y];
                            if py <= 0.0 {
                                return 0.0;
                            }
                            (0..w.nrows())
                                .filter(|&s| w[[s, y]] > 0.0)
                                .map(|s| w[[s, y]] * (w[[s, y]] / (p_s[s] * py)).log2())
                                .sum()
                        })
                        .collect();
                    for (u, &is_dead) in dead.iter().enumerate() {
                        if is_dead {
                            for y in 0..self.n_rows {
                                grad[[y, u]] = revive[y];
                            }
                        }
                    }
                }
                grad
            }
            Backing::DirectJoint { row_s, p_s, .. } => {
                let mut grad = Array2::zeros((self.n_rows, self.n_u));
                for r in 0..self.n_rows {
                    let wr = self.row_weight[r];
                    if wr == 0.0 {
                        continue;
                    }
                    for u in 0..self.n_u {
                        grad[[r, u]] = if dead[u] {
                            -wr * p_s[row_s[r]].log2()
                        } else {
                            wr * l[[row_s[r], u]]
                        };
                    }
                }
                grad
            }
            Backing::Table { p_y, .. } => {
                let mut grad = l;
                for (mut row, &py) in grad.rows_mut().into_iter().zip(p_y) {
                    for (u, v) in row.iter_mut().enumerate() {
                        *v = if dead[u] {
                            if py > 0.0 {
                                -py * py.log2()
                            } else {
                                0.0
                            }
                        } else {
                            py * *v
                        };
                    }
                }
                grad
            }
        }
    }

    /// Minmax constraint for output `u`: `delta*p(u) + sum_s p(s,u) log2(p(s,u)/p(u)) <= 0`,
    /// which is `p(u) * (delta - H(S|U=u))`. `delta` is in bits.
    pub fn minmax_constraint(&self, u: usize, delta: f64, x: &Array2<f64>) -> f64 {
        match &self.backing {
            Backing::FromYJoint { w, .. } => {
                let n_s = w.nrows();
                let mut c = 0.0;
                let mut acc = 0.0;
                let mut col = vec![0.0; n_s];
                for s in 0..n_s {
                    let mut a = 0.0;
                    for y in 0..w.ncols() {
                        a += w[[s, y]] * x[[y, u]];
                    }
                    col[s] = a;
                    c += a;
                }
                for &a in &col {
                    if a > 0.0 {
                        acc += a * (a.ln() - c.ln());
                    }
                }
                delta * c + acc / LN_2
            }
            Backing::DirectJoint { w, row_s, .. } => {
                let n_s = w.nrows();
                let mut col = vec![0.0; n_s];
                for r in 0..self.n_rows {
                    col[row_s[r]] += self.row_weight[r] * x[[r, u]];
                }
                let c: f64 = col.iter().sum();
                let mut acc = 0.0;
                for &a in &col {
                    if a > 0.0 {
                        acc += a * (a.ln() - c.ln());
                    }
                }
                delta * c + acc / LN_2
            }
            Backing::Table { p_y, h_y } => {
                let mut c = 0.0;
                let mut acc_bits = 0.0;
                for y in 0..p_y.len() {
                    let b = p_y[y] * x[[y, u]];
                    c += b;
                }
                for y in 0..p_y.len() {
                    let b = p_y[y] * x[[y, u]];
                    if b > 0.0 {
                        acc_bits += b * ((b.ln() - c.ln()) / LN_2 - h_y[y]);
                    }
                }
                delta * c + acc_bits
            }
        }
    }

    /// Gradient of [`Self::minmax_constraint`]; nonzero only in column `u`.
    /// Dead outputs use the exact revival derivative, as in
    /// [`Self::leakage_grad`].
    pub fn minmax_constraint_grad(
        &self,
        u: usize,
        delta: f64,
        x: &Array2<f64>,
        flag: Option<&AtomicBool>,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros((self.n_rows, self.n_u));
        match &self.backing {
            Backing::FromYJoint { w, .. } => {
                let n_s = w.nrows();
                let mut col = vec![0.0; n_s];
                let mut c = 0.0;
                for s in 0..n_s {
                    let mut a = 0.0;
                    for y in 0..w.ncols() {
                        a += w[[s, y]] * x[[y, u]];
                    }
                    col[s] = a;
                    c += a;
                }
                if c < LOG_FLOOR {
                    // reviving u along (y,u): derivative p(y)*(delta - H(S|Y=y))
                    for y in 0..w.ncols() {
                        let py = self.row_weight[y];
                        if py <= 0.0 {
                            continue;
                        }
                        let mut g = delta * py;
                        for s in 0..n_s {
                            if w[[s, y]] > 0.0 {
                                g += w[[s, y]] * (w[[s, y]] / py).log2();
                            }
                        }
                        grad[[y, u]] = g;
                    }
                } else {
                    let terms: Vec<f64> = col
                        .iter()
                        .map(|&a| delta + log2_floored(a / c, flag))
                        .collect();
                    for y in 0..w.ncols() {
                        let mut g = 0.0;
                        for s in 0..n_s {
                            if w[[s, y]] > 0.0 {
                                g += w[[s, y]] * terms[s];
                            }
                        }
                        grad[[y, u]] = g;
                    }
                }
            }
            Backing::DirectJoint { w, row_s, .. } => {
                let n_s = w.nrows();
                let mut col = vec![0.0; n_s];
                for r in 0..self.n_rows {
                    col[row_s[r]] += self.row_weight[r] * x[[r, u]];
                }
                let c: f64 = col.iter().sum();
                if c < LOG_FLOOR {
                    for r in 0..self.n_rows {
                        if self.row_weight[r] > 0.0 {
                            grad[[r, u]] = self.row_weight[r] * delta;
                        }
                    }
                } else {
                    let terms: Vec<f64> = col
                        .iter()
                        .map(|&a| delta + log2_floored(a / c, flag))
                        .collect();
                    for r in 0..self.n_rows {
                        if self.row_weight[r] > 0.0 {
                            grad[[r, u]] = self.row_weight[r] * terms[row_s[r]];
                        }
                    }
                }
            }
            Backing::Table { p_y, h_y } => {
                let mut c = 0.0;
                for y in 0..p_y.len() {
                    c += p_y[y] * x[[y, u]];
                }
                for y in 0..p_y.len() {
                    if p_y[y] > 0.0 {
                        let b = p_y[y] * x[[y, u]];
                        grad[[y, u]] = if c < LOG_FLOOR {
                            p_y[y] * (delta - h_y[y])
                        } else {
                            p_y[y] * (delta + log2_floored(b / c, flag) - h_y[y])
                        };
                    }
                }
            }
        }
        grad
    }

    /// Zeta-form constraint for output `u`:
    /// `sum_y p(y,u) log2(p(y,u)/(p(u) zeta(y))) - tau p(u) <= 0`, i.e.
    /// `p(u) * (D(p(Y|U=u) || zeta) - tau)`. Requires a deterministic
    /// coupling; works on the Y marginal only.
    pub fn zeta_constraint(&self, u: usize, tau: f64, zeta: &[f64], x: &Array2<f64>) -> f64 {
        let p_y = self.p_y_vec();
        let mut c = 0.0;
        for y in 0..p_y.len() {
            c += p_y[y] * x[[y, u]];
        }
        let mut acc_bits = 0.0;
        for y in 0..p_y.len() {
            let b = p_y[y] * x[[y, u]];
            if b > 0.0 {
                acc_bits += b * (b.ln() - c.ln() - zeta[y].ln()) / LN_2;
            }
        }
        acc_bits - tau * c
    }

    pub fn zeta_constraint_grad(
        &self,
        u: usize,
        tau: f64,
        zeta: &[f64],
        x: &Array2<f64>,
        flag: Option<&AtomicBool>,
    ) -> Array2<f64> {
        let p_y = self.p_y_vec();
        let mut grad = Array2::zeros((self.n_rows, self.n_u));
        let mut c = 0.0;
        for y in 0..p_y.len() {
            c += p_y[y] * x[[y, u]];
        }
        for y in 0..p_y.len() {
            if p_y[y] > 0.0 {
                grad[[y, u]] = if c < LOG_FLOOR {
                    // revival along (y,u): ratio tends to 1/zeta(y)
                    p_y[y] * (-zeta[y].max(LOG_FLOOR).log2() - tau)
                } else {
                    let b = p_y[y] * x[[y, u]];
                    p_y[y] * (log2_floored(b / (c * zeta[y].max(LOG_FLOOR)), flag) - tau)
                };
            }
        }
        grad
    }

    fn p_y_vec(&self) -> Vec<f64> {
        match &self.backing {
            Backing::Table { p_y, .. } => p_y.clone(),
            Backing::FromYJoint { w, .. } => (0..w.ncols()).map(|y| w.column(y).sum()).collect(),
            Backing::DirectJoint { w, .. } => (0..w.ncols()).map(|y| w.column(y).sum()).collect(),
        }
    }

    /// `H(S|U=u)` per output; unsupported outputs report `H(S)`.
    pub fn per_output_entropy(&self, x: &Array2<f64>) -> Vec<f64> {
        let (a, c) = self.induced_joint(x);
        let extra: Option<&[f64]> = match &self.backing {
            Backing::Table { h_y, .. } => Some(h_y),
            _ => None,
        };
        (0..self.n_u)
            .map(|u| {
                if c[u] < SUPPORT_ETA {
                    return self.h_s;
                }
                let mut h = 0.0;
                let mut chained = 0.0;
                for i in 0..a.nrows() {
                    let p = a[[i, u]] / c[u];
                    if p > 0.0 {
                        h -= p * p.ln();
                        if let Some(h_y) = extra {
                            chained += p * h_y[i];
                        }
                    }
                }
                h / LN_2 + chained
            })
            .collect()
    }

    /// Linear gradient matrix of `E[d_k]` with respect to the decision
    /// matrix: entry `(r,u)` is `weight_r * d(y_r, u)`.
    pub fn distortion_gradient(&self, d: &Array2<f64>) -> Array2<f64> {
        let mut g = Array2::zeros((self.n_rows, self.n_u));
        for r in 0..self.n_rows {
            let y = self.row_y[r];
            let w = self.row_weight[r];
            for u in 0..self.n_u {
                g[[r, u]] = w * d[[y, u]];
            }
        }
        g
    }

    /// Derived channel `p(u|s)` and output marginal (or `p(u|y)` for
    /// table-backed instances): rows of the induced joint, normalized.
    pub fn derived_output_channel(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
        let (mut a, c) = self.induced_joint(x);
        let p_first = self.first_marginal();
        for (i, &pi) in p_first.iter().enumerate() {
            for u in 0..self.n_u {
                a[[i, u]] = if pi > SUPPORT_ETA {
                    a[[i, u]] / pi
                } else if u == 0 {
                    1.0
                } else {
                    0.0
                };
            }
        }
        (a, c)
    }

    pub(crate) fn shared_flag() -> Arc<AtomicBool> {
        Arc::new(AtomicBool::new(false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{Alphabet, JointPmf};

    fn ab(n: usize) -> Alphabet {
        Alphabet::indexed("x", n).unwrap()
    }

    fn symmetric_instance(budget: f64) -> ProblemInstance {
        let joint = JointPmf::new(
            ab(2),
            ab(2),
            vec![vec![0.4, 0.1], vec![0.1, 0.4]],
        )
        .unwrap();
        ProblemInstance::from_joint(joint, 2, vec![DistortionConstraint::hamming(2, budget)])
            .unwrap()
    }

    fn fd_gradient(
        f: impl Fn(&Array2<f64>) -> f64,
        x: &Array2<f64>,
        eps: f64,
    ) -> Array2<f64> {
        let mut g = Array2::zeros(x.dim());
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[[r, c]] += eps;
                xm[[r, c]] -= eps;
                g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * eps);
            }
        }
        g
    }

    #[test]
    fn validates_shapes_and_modes() {
        let joint = JointPmf::new(ab(2), ab(2), vec![vec![0.25; 2]; 2]).unwrap();
        assert!(ProblemInstance::from_joint(
            joint.clone(),
            3,
            vec![DistortionConstraint::hamming(2, 0.1)]
        )
        .is_err()); // matrix is 2x2 but u_size is 3

        let table = Coupling::DeterministicY {
            y_pmf: Pmf::uniform(ab(3)),
            cond_entropy_bits: vec![0.0, 1.0, 0.0],
        };
        assert!(ProblemInstance::new(table, 3, vec![], MappingMode::Direct).is_err());
    }

    #[test]
    fn entropy_accessors() {
        let inst = symmetric_instance(0.25);
        assert!((inst.s_entropy_bits() - 1.0).abs() < 1e-12);
        assert!((inst.mutual_information_sy() - 0.2780719051126377).abs() < 1e-12);

        let table = ProblemInstance::new(
            Coupling::DeterministicY {
                y_pmf: Pmf::new(ab(2), vec![0.5, 0.5]).unwrap(),
                cond_entropy_bits: vec![1.0, 2.0],
            },
            2,
            vec![],
            MappingMode::FromY,
        )
        .unwrap();
        // H(S) = H(Y) + E[H(S|Y)] = 1 + 1.5
        assert!((table.s_entropy_bits() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_check() {
        let det = JointPmf::new(ab(3), ab(2), vec![
            vec![0.2, 0.0],
            vec![0.3, 0.0],
            vec![0.0, 0.5],
        ])
        .unwrap();
        let inst = ProblemInstance::from_joint(det, 2, vec![]).unwrap();
        assert!(inst.check_deterministic_y().is_ok());

        let fuzzy = symmetric_instance(0.1);
        assert!(matches!(
            fuzzy.check_deterministic_y(),
            Err(Error::NonDeterministicCoupling { .. })
        ));
    }

    #[test]
    fn min_achievable_and_constant_outputs() {
        let inst = symmetric_instance(0.25);
        assert_eq!(inst.min_achievable_distortion(0), 0.0);
        assert_eq!(inst.constant_output_distortion(0, 0), 0.5);
        assert!(inst.feasible_constant_output().is_none());
        let generous = symmetric_instance(0.6);
        assert_eq!(generous.feasible_constant_output(), Some(0));
    }

    #[test]
    fn leakage_matches_mutual_information_of_induced_joint() {
        let inst = symmetric_instance(0.25);
        let x = Array2::from_shape_vec((2, 2), vec![0.8, 0.2, 0.3, 0.7]).unwrap();
        let ch = Channel::from_array(ab(2), inst.u_alphabet().clone(), x.clone()).unwrap();
        let leak = inst.leakage_bits(&ch).unwrap();

        // independent route through prob/metrics types
        let kernel = Kernel::new(&inst).unwrap();
        let (a, _) = kernel.induced_joint(&x);
        let joint = JointPmf::new(
            ab(2),
            inst.u_alphabet().clone(),
            a.rows().into_iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap();
        assert!((leak - crate::metrics::mutual_information(&joint)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let inst = symmetric_instance(0.25);
        let kernel = Kernel::new(&inst).unwrap();
        let x = Array2::from_shape_vec((2, 2), vec![0.7, 0.3, 0.4, 0.6]).unwrap();

        let g = kernel.leakage_grad(&x, None);
        let fd = fd_gradient(|x| kernel.leakage_bits(x), &x, 1e-6);
        for (a, b) in g.iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-5, "leakage grad {a} vs fd {b}");
        }

        let delta = 0.6;
        for u in 0..2 {
            let g = kernel.minmax_constraint_grad(u, delta, &x, None);
            let fd = fd_gradient(|x| kernel.minmax_constraint(u, delta, x), &x, 1e-6);
            for (a, b) in g.iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-5, "minmax grad {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn direct_mode_gradients_match_finite_differences() {
        let inst = symmetric_instance(0.25).with_mode(MappingMode::Direct).unwrap();
        let kernel = Kernel::new(&inst).unwrap();
        let x = Array2::from_shape_vec(
            (4, 2),
            vec![0.7, 0.3, 0.4, 0.6, 0.2, 0.8, 0.55, 0.45],
        )
        .unwrap();
        let g = kernel.leakage_grad(&x, None);
        let fd = fd_gradient(|x| kernel.leakage_bits(x), &x, 1e-6);
        for (a, b) in g.iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn table_kernel_gradients_match_finite_differences() {
        let inst = ProblemInstance::new(
            Coupling::DeterministicY {
                y_pmf: Pmf::new(ab(3), vec![0.25, 0.5, 0.25]).unwrap(),
                cond_entropy_bits: vec![0.0, 1.0, 0.0],
            },
            3,
            vec![],
            MappingMode::FromY,
        )
        .unwrap();
        let kernel = Kernel::new(&inst).unwrap();
        let x = Array2::from_shape_vec(
            (3, 3),
            vec![0.6, 0.2, 0.2, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4],
        )
        .unwrap();

        let g = kernel.leakage_grad(&x, None);
        let fd = fd_gradient(|x| kernel.leakage_bits(x), &x, 1e-6);
        for (a, b) in g.iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-5);
        }

        let delta = 1.2;
        let zeta = vec![0.2, 0.6, 0.2];
        for u in 0..3 {
            let g = kernel.minmax_constraint_grad(u, delta, &x, None);
            let fd = fd_gradient(|x| kernel.minmax_constraint(u, delta, x), &x, 1e-6);
            for (a, b) in g.iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
            let g = kernel.zeta_constraint_grad(u, 0.3, &zeta, &x, None);
            let fd = fd_gradient(|x| kernel.zeta_constraint(u, 0.3, &zeta, x), &x, 1e-6);
            for (a, b) in g.iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn minmax_constraint_equals_scaled_entropy_gap() {
        // g_u must equal p(u) * (delta - H(S|U=u)) for random channels
        let inst = symmetric_instance(0.25);
        let kernel = Kernel::new(&inst).unwrap();
        for (i, x) in [
            Array2::from_shape_vec((2, 2), vec![0.6, 0.4, 0.25, 0.75]).unwrap(),
            Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.9, 0.1]).unwrap(),
        ]
        .iter()
        .enumerate()
        {
            let delta = 0.4 + 0.2 * i as f64;
            let (_, c) = kernel.induced_joint(x);
            let h = kernel.per_output_entropy(x);
            for u in 0..2 {
                let g = kernel.minmax_constraint(u, delta, x);
                assert!(
                    (g - c[u] * (delta - h[u])).abs() < 1e-9,
                    "constraint forms disagree"
                );
            }
        }
    }
}
