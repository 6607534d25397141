//! Members of the interaction family: Markov transition matrices on particle
//! indices. B-matrices are stored as equal-size block partitions so that every
//! per-step operation on them is linear in the particle count; dense matrices
//! exist for small theory checks.

use std::borrow::Cow;
use std::fmt;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// A partition of `0..N` into blocks of equal size `d`.
///
/// Block `b` consists of `order[b*d .. (b+1)*d]`. The implied matrix has
/// entry `1/d` when `i` and `j` share a block, zero otherwise.
#[derive(Clone)]
pub struct BlockPartition {
    block_size: usize,
    order: Vec<usize>,
    block_of: Vec<usize>,
}

impl BlockPartition {
    /// Contiguous blocks `{0..d}, {d..2d}, ...`.
    pub fn contiguous(n: usize, block_size: usize) -> Result<Self> {
        if n == 0 || block_size == 0 || !n.is_multiple_of(block_size) {
            return Err(Error::Indivisible { n, q: block_size });
        }
        Ok(BlockPartition {
            block_size,
            order: (0..n).collect(),
            block_of: (0..n).map(|i| i / block_size).collect(),
        })
    }

    /// Blocks read off consecutive runs of `order`, which must be a permutation of `0..N`.
    pub fn from_order(order: Vec<usize>, block_size: usize) -> Result<Self> {
        let n = order.len();
        if n == 0 || block_size == 0 || !n.is_multiple_of(block_size) {
            return Err(Error::Indivisible { n, q: block_size });
        }
        let mut block_of = vec![usize::MAX; n];
        for (pos, &i) in order.iter().enumerate() {
            if i >= n || block_of[i] != usize::MAX {
                return Err(Error::InvalidParameter(format!("block order is not a permutation of 0..{n}")));
            }
            block_of[i] = pos / block_size;
        }
        Ok(BlockPartition { block_size, order, block_of })
    }

    pub(crate) fn from_parts_unchecked(order: Vec<usize>, block_size: usize) -> Self {
        let mut block_of = vec![0; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            block_of[i] = pos / block_size;
        }
        BlockPartition { block_size, order, block_of }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn block_count(&self) -> usize {
        self.order.len() / self.block_size
    }

    pub fn block(&self, b: usize) -> &[usize] {
        &self.order[b * self.block_size..(b + 1) * self.block_size]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.order.chunks(self.block_size)
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.block_of[i]
    }

    /// CSV `i,block_id`, one line per particle.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,block_id")?;
        for i in 0..self.len() {
            writeln!(out, "{i},{}", self.block_of(i))?;
        }
        Ok(())
    }

    /// Block labels renumbered by first appearance when scanning `0..N`;
    /// two partitions are equal iff these labelings agree.
    pub fn canonical_labels(&self) -> Vec<usize> {
        let mut relabel = vec![usize::MAX; self.block_count()];
        let mut next = 0;
        self.block_of
            .iter()
            .map(|&b| {
                if relabel[b] == usize::MAX {
                    relabel[b] = next;
                    next += 1;
                }
                relabel[b]
            })
            .collect()
    }
}

impl PartialEq for BlockPartition {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.block_size == other.block_size && self.canonical_labels() == other.canonical_labels()
    }
}

impl fmt::Debug for BlockPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.blocks()).finish()
    }
}

/// Row-stochastic `N x N` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStochasticMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DenseStochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty matrix".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!("row {i} has length {}, expected {n}", row.len())));
            }
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidParameter(format!("row {i} sums to {s}")));
            }
            entries.extend(row);
        }
        Ok(DenseStochasticMatrix { n, entries })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        DenseStochasticMatrix { n, entries }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    /// Matrix product `self * rhs`.
    pub fn mul(&self, rhs: &DenseStochasticMatrix) -> DenseStochasticMatrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    entries[i * n + j] += a * rhs.get(k, j);
                }
            }
        }
        DenseStochasticMatrix { n, entries }
    }

    fn max_row_support(&self) -> usize {
        (0..self.n).map(|i| self.row(i).iter().filter(|&&v| v > 0.0).count()).max().unwrap_or(0)
    }
}

/// One member of the interaction family.
///
/// `Identity` and `Full` compare equal to the block partitions with block
/// size 1 and N respectively; equality between partition-like variants is
/// equality of the induced partitions.
#[derive(Debug, Clone)]
pub enum InteractionSpec {
    Identity(usize),
    Full(usize),
    Blocks(BlockPartition),
    Dense(DenseStochasticMatrix),
}

impl InteractionSpec {
    pub fn size(&self) -> usize {
        match self {
            InteractionSpec::Identity(n) | InteractionSpec::Full(n) => *n,
            InteractionSpec::Blocks(p) => p.len(),
            InteractionSpec::Dense(m) => m.size(),
        }
    }

    /// Degree of the interaction graph: block size for B-matrices, largest
    /// row support for dense matrices.
    pub fn degree(&self) -> usize {
        match self {
            InteractionSpec::Identity(_) => 1,
            InteractionSpec::Full(n) => *n,
            InteractionSpec::Blocks(p) => p.block_size(),
            InteractionSpec::Dense(m) => m.max_row_support(),
        }
    }

    /// The block partition behind a B-matrix variant; `None` for dense matrices.
    pub fn partition(&self) -> Option<Cow<'_, BlockPartition>> {
        match self {
            InteractionSpec::Identity(n) => BlockPartition::contiguous(*n, 1).ok().map(Cow::Owned),
            InteractionSpec::Full(n) => BlockPartition::contiguous(*n, *n).ok().map(Cow::Owned),
            InteractionSpec::Blocks(p) => Some(Cow::Borrowed(p)),
            InteractionSpec::Dense(_) => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            InteractionSpec::Identity(_) => true,
            InteractionSpec::Blocks(p) => p.block_size() == 1,
            _ => false,
        }
    }

    pub fn is_full(&self) -> bool {
        match self {
            InteractionSpec::Full(_) => true,
            InteractionSpec::Blocks(p) => p.block_size() == p.len(),
            _ => false,
        }
    }

    pub fn to_dense(&self) -> DenseStochasticMatrix {
        match self {
            InteractionSpec::Dense(m) => m.clone(),
            _ => {
                let p = self.partition().expect("partition-like variant");
                let n = p.len();
                let w = 1.0 / p.block_size() as f64;
                let mut entries = vec![0.0; n * n];
                for block in p.blocks() {
                    for &i in block {
                        for &j in block {
                            entries[i * n + j] = w;
                        }
                    }
                }
                DenseStochasticMatrix { n, entries }
            }
        }
    }

    /// Row vector times matrix: `out[i] = sum_j v[j] * alpha[j][i]`.
    pub fn left_apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.size();
        assert_eq!(v.len(), n, "dimension mismatch");
        match self {
            InteractionSpec::Dense(m) => {
                let mut out = vec![0.0; n];
                for (j, &vj) in v.iter().enumerate() {
                    if vj == 0.0 {
                        continue;
                    }
                    for (o, a) in out.iter_mut().zip(m.row(j)) {
                        *o += vj * a;
                    }
                }
                out
            }
            _ => {
                // B-matrices are symmetric: left and right application coincide.
                let p = self.partition().expect("partition-like variant");
                block_average(&p, v)
            }
        }
    }

    /// Matrix times column vector: `out[i] = sum_j alpha[i][j] * v[j]`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.size();
        assert_eq!(v.len(), n, "dimension mismatch");
        match self {
            InteractionSpec::Dense(m) => (0..n).map(|i| m.row(i).iter().zip(v).map(|(a, x)| a * x).sum()).collect(),
            _ => block_average(&self.partition().expect("partition-like variant"), v),
        }
    }
}

fn block_average(p: &BlockPartition, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let d = p.block_size() as f64;
    for block in p.blocks() {
        let mean = block.iter().map(|&j| v[j]).sum::<f64>() / d;
        for &i in block {
            out[i] = mean;
        }
    }
    out
}

impl PartialEq for InteractionSpec {
    fn eq(&self, other: &Self) -> bool {
        if self.size() != other.size() {
            return false;
        }
        match (self.partition(), other.partition()) {
            (Some(a), Some(b)) => a == b,
            _ => self.to_dense() == other.to_dense(),
        }
    }
}

/// Block-diagonal B-matrix with contiguous blocks of size `q`.
///
/// Returns the `Identity` variant for `q = 1` and `Full` for `q = N`.
pub fn make_block_diagonal(n: usize, q: usize) -> Result<InteractionSpec> {
    let p = BlockPartition::contiguous(n, q)?;
    Ok(if q == 1 {
        InteractionSpec::Identity(n)
    } else if q == n {
        InteractionSpec::Full(n)
    } else {
        InteractionSpec::Blocks(p)
    })
}

/// Lazy simple random walk on the star graph with hub at index 0.
pub fn make_star_walk(n: usize, laziness: f64) -> Result<DenseStochasticMatrix> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("star walk needs at least 3 vertices, got {n}")));
    }
    if !(0.0..1.0).contains(&laziness) {
        return Err(Error::InvalidParameter(format!("laziness {laziness} outside [0, 1)")));
    }
    let move_p = 1.0 - laziness;
    let leaf_p = move_p / (n - 1) as f64;
    let rows = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            if i == 0 {
                row.iter_mut().skip(1).for_each(|v| *v = leaf_p);
            } else {
                row[0] = move_p;
            }
            row[i] += laziness;
            row
        })
        .collect();
    DenseStochasticMatrix::new(rows)
}

/// Every row is the point mass on index 0: all edges lead to the hub.
pub fn make_to_hub(n: usize) -> Result<DenseStochasticMatrix> {
    if n == 0 {
        return Err(Error::InvalidParameter("matrix size must be at least 1".into()));
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n] = 1.0;
    }
    Ok(DenseStochasticMatrix { n, entries })
}

/// Backward-propagated uniform vectors: row `p` (for `p = 0..=n`) holds
/// `beta_{p,n}`, with `beta_{n,n} = 1/N` and `beta_{p,n} = beta_{p+1,n} alpha_p`.
pub fn beta_vectors(alphas: &[InteractionSpec], n: usize) -> Result<Vec<Vec<f64>>> {
    if alphas.len() < n {
        return Err(Error::InvalidParameter(format!("need {n} matrices, got {}", alphas.len())));
    }
    let size = match alphas.first() {
        Some(a) => a.size(),
        None => return Err(Error::InvalidParameter("cannot infer particle count from an empty sequence".into())),
    };
    if alphas[..n].iter().any(|a| a.size() != size) {
        return Err(Error::InvalidParameter("matrices differ in size".into()));
    }
    let mut rows = vec![vec![1.0 / size as f64; size]; n + 1];
    for p in (0..n).rev() {
        rows[p] = alphas[p].left_apply(&rows[p + 1]);
    }
    Ok(rows)
}

/// True iff the uniform distribution is invariant: every column sums to 1 within 1e-12.
pub fn check_uniform_invariance(spec: &InteractionSpec) -> bool {
    match spec {
        InteractionSpec::Dense(m) => (0..m.size()).all(|j| (m.column_sum(j) - 1.0).abs() <= 1e-12),
        _ => true,
    }
}
