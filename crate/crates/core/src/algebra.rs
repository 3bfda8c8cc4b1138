//! Finite-dimensional matrix *-algebras in canonical form.
//!
//! A structure `ν = (n₀, {(n_k, m_k)})` describes the algebra
//! `U (0·I_{n₀} ⊕ ⊕_k ℂ^{n_k×n_k} ⊗ I_{m_k}) U†` on `ℂⁿ` with
//! `n = n₀ + Σ n_k m_k`. In canonical coordinates the zero block comes
//! first, followed by the blocks in order; inside block `k` the index of
//! `ℂ^{n_k} ⊗ ℂ^{m_k}` is `a·m_k + b`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64};

/// One `(n_k, m_k)` pair: an `n_k × n_k` full matrix block repeated `m_k` times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Block {
    pub dim: usize,
    pub mult: usize,
}

impl Block {
    pub const fn new(dim: usize, mult: usize) -> Self {
        Self { dim, mult }
    }

    pub fn size(&self) -> usize {
        self.dim * self.mult
    }
}

impl From<[usize; 2]> for Block {
    fn from([dim, mult]: [usize; 2]) -> Self {
        Self { dim, mult }
    }
}

impl From<Block> for [usize; 2] {
    fn from(b: Block) -> Self {
        [b.dim, b.mult]
    }
}

#[derive(Serialize, Deserialize)]
struct StructureRecord {
    n0: usize,
    blocks: Vec<Block>,
}

/// The discrete hyperparameter `ν`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "StructureRecord", into = "StructureRecord")]
pub struct AlgebraStructure {
    n0: usize,
    blocks: Vec<Block>,
}

impl TryFrom<StructureRecord> for AlgebraStructure {
    type Error = Error;

    fn try_from(r: StructureRecord) -> Result<Self> {
        Self::new(r.n0, r.blocks)
    }
}

impl From<AlgebraStructure> for StructureRecord {
    fn from(s: AlgebraStructure) -> Self {
        StructureRecord {
            n0: s.n0,
            blocks: s.blocks,
        }
    }
}

impl AlgebraStructure {
    pub fn new(n0: usize, blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument(
                "a structure needs at least one (n_k, m_k) block".into(),
            ));
        }
        if let Some(b) = blocks.iter().find(|b| b.dim == 0 || b.mult == 0) {
            return Err(Error::InvalidArgument(format!(
                "block {{{},{}}} has a zero entry",
                b.dim, b.mult
            )));
        }
        Ok(Self { n0, blocks })
    }

    /// Unital structure from `(n_k, m_k)` pairs.
    pub fn unital(pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(0, pairs.iter().map(|&(d, m)| Block::new(d, m)).collect())
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Total Hilbert-space dimension `n = n₀ + Σ n_k m_k`.
    pub fn n(&self) -> usize {
        self.n0 + self.blocks.iter().map(Block::size).sum::<usize>()
    }

    pub fn is_unital(&self) -> bool {
        self.n0 == 0
    }

    pub fn require_unital(&self) -> Result<()> {
        if self.is_unital() {
            Ok(())
        } else {
            Err(Error::NotUnital(self.to_string()))
        }
    }

    /// Linear dimension of the algebra, `Σ n_k²`.
    pub fn algebra_dimension(&self) -> usize {
        self.blocks.iter().map(|b| b.dim * b.dim).sum()
    }

    /// Representative with blocks sorted descending by `(n_k, m_k)`.
    pub fn canonical(&self) -> Self {
        let mut blocks = self.blocks.clone();
        blocks.sort_by(|a, b| b.cmp(a));
        Self { n0: self.n0, blocks }
    }

    pub fn is_isomorphic(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }

    /// Row range of block `k` in canonical coordinates.
    pub fn block_range(&self, k: usize) -> Range<usize> {
        let start = self.n0 + self.blocks[..k].iter().map(Block::size).sum::<usize>();
        start..start + self.blocks[k].size()
    }

    /// Default number of Lindblad operators, `max_k m_k²`.
    pub fn default_lindblad_count(&self) -> usize {
        self.blocks.iter().map(|b| b.mult * b.mult).max().unwrap_or(1)
    }

    /// `diag(0_{n₀}, X_1 ⊗ I_{m_1}, …, X_K ⊗ I_{m_K})`.
    pub fn canonical_block_diagonal(&self, factors: &[CMatrix]) -> Result<CMatrix> {
        if factors.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch {
                what: "number of block factors".into(),
                expected: self.blocks.len(),
                found: factors.len(),
            });
        }
        let n = self.n();
        let mut out = CMatrix::zeros(n, n);
        for (k, (block, x)) in self.blocks.iter().zip(factors).enumerate() {
            if x.nrows() != block.dim || x.ncols() != block.dim {
                return Err(Error::DimensionMismatch {
                    what: format!("block factor X_{}", k + 1),
                    expected: block.dim,
                    found: x.nrows().max(x.ncols()),
                });
            }
            let range = self.block_range(k);
            let expanded = linalg::kron(x, &linalg::identity(block.mult));
            out.view_mut((range.start, range.start), (range.len(), range.len()))
                .copy_from(&expanded);
        }
        Ok(out)
    }
}

impl fmt::Display for AlgebraStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        if self.n0 > 0 {
            write!(f, "n0={}", self.n0)?;
            if !self.blocks.is_empty() {
                write!(f, ",")?;
            }
        }
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("{{{},{}}}", b.dim, b.mult))
            .collect();
        write!(f, "{})", parts.join(","))
    }
}

impl FromStr for AlgebraStructure {
    type Err = Error;

    /// Accepts `({1,2},{1,1})`, `{2,1}^4`, `(n0=2,{3,1})` and similar forms.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("cannot parse structure {s:?}"));
        let body = s.trim();
        let body = body
            .strip_prefix('(')
            .and_then(|b| b.strip_suffix(')'))
            .unwrap_or(body)
            .replace(' ', "");
        let mut n0 = 0;
        let mut blocks = Vec::new();
        let mut rest = body.as_str();
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix("n0=") {
                let end = r.find(',').unwrap_or(r.len());
                n0 = r[..end].parse().map_err(|_| bad())?;
                rest = r[end..].trim_start_matches(',');
                continue;
            }
            let r = rest.strip_prefix('{').ok_or_else(bad)?;
            let close = r.find('}').ok_or_else(bad)?;
            let (d, m) = r[..close].split_once(',').ok_or_else(bad)?;
            let block = Block::new(d.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
            let mut after = &r[close + 1..];
            let mut repeat = 1;
            if let Some(p) = after.strip_prefix('^') {
                let end = p.find(',').unwrap_or(p.len());
                repeat = p[..end].parse().map_err(|_| bad())?;
                after = &p[end..];
            }
            blocks.extend(std::iter::repeat_n(block, repeat));
            rest = after.trim_start_matches(',');
        }
        Self::new(n0, blocks)
    }
}

/// Every ordered list of `(n_k, m_k)` pairs with `Σ n_k m_k = total`.
fn ordered_block_lists(total: usize) -> Vec<Vec<Block>> {
    if total == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 1..=total {
        for dim in (1..=first).filter(|d| first % d == 0) {
            let head = Block::new(dim, first / dim);
            for mut tail in ordered_block_lists(total - first) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
    }
    out
}

/// Enumerates candidate structures on `ℂⁿ`.
///
/// With `allow_n0` the zero block ranges over `0..n`; otherwise only
/// unital structures are produced. With `up_to_permutation` one canonical
/// representative per multiset of blocks is returned.
pub fn enumerate_structures(n: usize, up_to_permutation: bool, allow_n0: bool) -> Result<Vec<AlgebraStructure>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension n must be at least 1".into()));
    }
    let n0_values = if allow_n0 { 0..n } else { 0..1 };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for n0 in n0_values {
        for blocks in ordered_block_lists(n - n0) {
            let s = AlgebraStructure { n0, blocks };
            if up_to_permutation {
                let c = s.canonical();
                if seen.insert(c.clone()) {
                    out.push(c);
                }
            } else {
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Canonical basis of an algebra: the structure plus the unitary `U`.
#[derive(Clone, Debug)]
pub struct AlgebraBasis {
    structure: AlgebraStructure,
    unitary: CMatrix,
}

impl AlgebraBasis {
    pub fn new(structure: AlgebraStructure, unitary: CMatrix) -> Result<Self> {
        let n = structure.n();
        if unitary.nrows() != n || unitary.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "basis unitary".into(),
                expected: n,
                found: unitary.nrows(),
            });
        }
        let defect = linalg::max_abs(&(unitary.adjoint() * &unitary - linalg::identity(n)));
        if defect > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "basis matrix is not unitary (max |U†U − I| = {defect:e})"
            )));
        }
        Ok(Self { structure, unitary })
    }

    pub fn identity(structure: AlgebraStructure) -> Self {
        let n = structure.n();
        Self {
            structure,
            unitary: linalg::identity(n),
        }
    }

    pub fn haar<R: Rng + ?Sized>(structure: AlgebraStructure, rng: &mut R) -> Self {
        let n = structure.n();
        Self {
            structure,
            unitary: linalg::haar_unitary(n, rng),
        }
    }

    pub fn structure(&self) -> &AlgebraStructure {
        &self.structure
    }

    pub fn unitary(&self) -> &CMatrix {
        &self.unitary
    }

    pub fn n(&self) -> usize {
        self.structure.n()
    }

    /// Projector `P_k = P_k^⊕ U†` onto the `k`-th block factor, of shape
    /// `(n_k m_k) × n`.
    pub fn block_projector(&self, k: usize) -> CMatrix {
        let range = self.structure.block_range(k);
        self.unitary.columns(range.start, range.len()).adjoint()
    }

    /// Projector onto the zero block, `n₀ × n`, if present.
    pub fn zero_block_projector(&self) -> Option<CMatrix> {
        let n0 = self.structure.n0();
        (n0 > 0).then(|| self.unitary.columns(0, n0).adjoint())
    }

    /// Maps a canonical-coordinate operator into the physical basis.
    pub fn to_physical(&self, canonical: &CMatrix) -> CMatrix {
        linalg::conjugate_by(&self.unitary, canonical)
    }

    pub fn to_canonical(&self, physical: &CMatrix) -> CMatrix {
        linalg::conjugate_by(&self.unitary.adjoint(), physical)
    }

    /// Hilbert–Schmidt orthogonal projection onto the algebra, returned as
    /// block factors.
    pub fn project_factors(&self, x: &CMatrix) -> Vec<CMatrix> {
        let y = self.to_canonical(x);
        self.structure
            .blocks()
            .iter()
            .enumerate()
            .map(|(k, block)| {
                let off = self.structure.block_range(k).start;
                let m = block.mult;
                CMatrix::from_fn(block.dim, block.dim, |a, c| {
                    let s: C64 = (0..m).map(|b| y[(off + a * m + b, off + c * m + b)]).sum();
                    s / m as f64
                })
            })
            .collect()
    }

    /// Frobenius distance from `x` to the algebra.
    pub fn membership_residual(&self, x: &CMatrix) -> f64 {
        let factors = self.project_factors(x);
        let back = self.to_physical(
            &self
                .structure
                .canonical_block_diagonal(&factors)
                .expect("projected factors match the structure"),
        );
        (x - back).norm()
    }

    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> AlgebraElement<'_> {
        let blocks = self
            .structure
            .blocks()
            .iter()
            .map(|b| linalg::ginibre(b.dim, b.dim, rng))
            .collect();
        AlgebraElement { basis: self, blocks }
    }
}

/// Element of `N(ν, U)` given by its block factors `X_k`.
#[derive(Clone, Debug)]
pub struct AlgebraElement<'a> {
    basis: &'a AlgebraBasis,
    blocks: Vec<CMatrix>,
}

impl<'a> AlgebraElement<'a> {
    pub fn new(basis: &'a AlgebraBasis, blocks: Vec<CMatrix>) -> Result<Self> {
        let structure = basis.structure();
        if blocks.len() != structure.blocks().len() {
            return Err(Error::DimensionMismatch {
                what: "number of block factors".into(),
                expected: structure.blocks().len(),
                found: blocks.len(),
            });
        }
        for (k, (x, b)) in blocks.iter().zip(structure.blocks()).enumerate() {
            if x.nrows() != b.dim || x.ncols() != b.dim {
                return Err(Error::DimensionMismatch {
                    what: format!("block factor X_{}", k + 1),
                    expected: b.dim,
                    found: x.nrows().max(x.ncols()),
                });
            }
        }
        Ok(Self { basis, blocks })
    }

    pub fn basis(&self) -> &AlgebraBasis {
        self.basis
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }
}

/// `U · diag(0_{n₀}, X_1⊗I_{m₁}, …, X_K⊗I_{m_K}) · U†`.
pub fn assemble_element(element: &AlgebraElement<'_>) -> CMatrix {
    let canonical = element
        .basis
        .structure()
        .canonical_block_diagonal(&element.blocks)
        .expect("element factors validated at construction");
    element.basis.to_physical(&canonical)
}

/// All block projectors `P_k` of a basis.
pub fn block_projectors(basis: &AlgebraBasis) -> Vec<CMatrix> {
    (0..basis.structure().blocks().len())
        .map(|k| basis.block_projector(k))
        .collect()
}

/// Integer matrix `a ∈ ℤ₊^{K×L}` certifying that a sub-structure with `L`
/// blocks embeds into a super-structure with `K` blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingWitness {
    pub a: Vec<Vec<usize>>,
}

impl EmbeddingWitness {
    /// Checks `n_k = Σ_ℓ a_kℓ ñ_ℓ` and `m̃_ℓ = Σ_k a_kℓ m_k`.
    pub fn certifies(&self, sub: &AlgebraStructure, sup: &AlgebraStructure) -> bool {
        let (kk, ll) = (sup.blocks().len(), sub.blocks().len());
        if self.a.len() != kk || self.a.iter().any(|row| row.len() != ll) {
            return false;
        }
        let rows_ok = sup
            .blocks()
            .iter()
            .enumerate()
            .all(|(k, b)| b.dim == (0..ll).map(|l| self.a[k][l] * sub.blocks()[l].dim).sum::<usize>());
        let cols_ok = sub
            .blocks()
            .iter()
            .enumerate()
            .all(|(l, b)| b.mult == (0..kk).map(|k| self.a[k][l] * sup.blocks()[k].mult).sum::<usize>());
        rows_ok && cols_ok
    }
}

fn fill_row(
    k: usize,
    l: usize,
    remaining: usize,
    sub: &[Block],
    sup: &[Block],
    a: &mut [Vec<usize>],
    col_sums: &mut [usize],
) -> bool {
    if l == sub.len() {
        if remaining != 0 {
            return false;
        }
        return if k + 1 == sup.len() {
            col_sums.iter().zip(sub).all(|(&s, b)| s == b.mult)
        } else {
            fill_row(k + 1, 0, sup[k + 1].dim, sub, sup, a, col_sums)
        };
    }
    let mult = sup[k].mult;
    let max_by_dim = remaining / sub[l].dim;
    let max_by_mult = (sub[l].mult - col_sums[l]) / mult;
    for count in (0..=max_by_dim.min(max_by_mult)).rev() {
        a[k][l] = count;
        col_sums[l] += count * mult;
        if fill_row(k, l + 1, remaining - count * sub[l].dim, sub, sup, a, col_sums) {
            return true;
        }
        col_sums[l] -= count * mult;
    }
    a[k][l] = 0;
    false
}

/// Decides whether the algebra of `sub` embeds (up to isomorphism) into the
/// algebra of `sup`, returning a witness when it does.
pub fn is_embedded(sub: &AlgebraStructure, sup: &AlgebraStructure) -> Result<Option<EmbeddingWitness>> {
    sub.require_unital()?;
    sup.require_unital()?;
    if sub.n() != sup.n() {
        return Err(Error::DimensionMismatch {
            what: "embedding candidates".into(),
            expected: sup.n(),
            found: sub.n(),
        });
    }
    let (kk, ll) = (sup.blocks().len(), sub.blocks().len());
    let mut a = vec![vec![0; ll]; kk];
    let mut col_sums = vec![0; ll];
    let found = fill_row(
        0,
        0,
        sup.blocks()[0].dim,
        sub.blocks(),
        sup.blocks(),
        &mut a,
        &mut col_sums,
    );
    Ok(found.then_some(EmbeddingWitness { a }))
}

/// Embedding hierarchy over a set of structures sharing the same `n`.
///
/// Edges are stored as `(sub, super)` node indices: the algebra of `sub`
/// embeds into that of `super`, so `sub` is the more complex model class.
#[derive(Clone, Debug)]
pub struct HierarchyDag {
    nodes: Vec<AlgebraStructure>,
    edges: BTreeSet<(usize, usize)>,
    closure: Vec<Vec<bool>>,
}

/// Builds the transitive reduction of the embedding relation. Structures
/// that differ only by block order are merged into one canonical node.
pub fn hierarchy_dag(structures: &[AlgebraStructure]) -> Result<HierarchyDag> {
    let mut nodes: Vec<AlgebraStructure> = Vec::new();
    for s in structures {
        let c = s.canonical();
        if !nodes.contains(&c) {
            nodes.push(c);
        }
    }
    let count = nodes.len();
    let mut closure = vec![vec![false; count]; count];
    for i in 0..count {
        for j in 0..count {
            closure[i][j] = i != j && is_embedded(&nodes[i], &nodes[j])?.is_some();
        }
    }
    let mut edges = BTreeSet::new();
    for i in 0..count {
        for j in 0..count {
            if closure[i][j] && !(0..count).any(|k| closure[i][k] && closure[k][j]) {
                edges.insert((i, j));
            }
        }
    }
    Ok(HierarchyDag { nodes, edges, closure })
}

impl HierarchyDag {
    pub fn nodes(&self) -> &[AlgebraStructure] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn index_of(&self, s: &AlgebraStructure) -> Option<usize> {
        let c = s.canonical();
        self.nodes.iter().position(|n| *n == c)
    }

    /// Strict embedding `sub ⊊ sup` between node indices.
    pub fn embeds(&self, sub: usize, sup: usize) -> bool {
        self.closure[sub][sup]
    }

    pub fn has_edge(&self, sub: &AlgebraStructure, sup: &AlgebraStructure) -> bool {
        match (self.index_of(sub), self.index_of(sup)) {
            (Some(i), Some(j)) => self.edges.contains(&(i, j)),
            _ => false,
        }
    }

    /// Nodes whose algebra directly contains node `i` (its simpler neighbours).
    pub fn parents(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect()
    }

    /// Nodes whose algebra is directly contained in node `i` (its more complex neighbours).
    pub fn children(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect()
    }

    /// Order from the simplest model (largest algebra) to the most complex;
    /// ties broken by node index.
    pub fn topological_order(&self) -> Vec<usize> {
        let count = self.nodes.len();
        let mut pending: Vec<usize> = (0..count).map(|i| self.parents(i).len()).collect();
        let mut done = vec![false; count];
        let mut order = Vec::with_capacity(count);
        while order.len() < count {
            let next = (0..count)
                .find(|&i| !done[i] && pending[i] == 0)
                .expect("embedding relation is acyclic");
            done[next] = true;
            order.push(next);
            for c in self.children(next) {
                pending[c] -= 1;
            }
        }
        order
    }

    /// The node every other node embeds into, if any (the simplest model).
    pub fn largest_algebra(&self) -> Option<usize> {
        (0..self.nodes.len()).find(|&j| (0..self.nodes.len()).all(|i| i == j || self.closure[i][j]))
    }

    /// The node that embeds into every other node, if any (the most complex model).
    pub fn smallest_algebra(&self) -> Option<usize> {
        (0..self.nodes.len()).find(|&i| (0..self.nodes.len()).all(|j| i == j || self.closure[i][j]))
    }

    /// Graphviz rendering; arrows point from a sub-algebra to the algebra it
    /// embeds into, drawn bottom-up so the largest algebra sits on top.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph hierarchy {\n  rankdir=BT;\n  node [shape=box];\n");
        for (i, s) in self.nodes.iter().enumerate() {
            out.push_str(&format!("  n{i} [label=\"{s}\"];\n"));
        }
        for (sub, sup) in &self.edges {
            out.push_str(&format!("  n{sub} -> n{sup};\n"));
        }
        out.push_str("}\n");
        out
    }
}
