//! Couplings of finite uniform measures through the transportation polytope:
//! spanning-tree measures, vertex decomposition, marginal repair, group
//! discretizations and the symmetric coupling pipeline.

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::path::Path;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::unitary::{quaternion, su2_from_quaternion};
use crate::groups::{CompactGroupSpec, FiniteGroup, GroupPoint};
use crate::padic::{PAdicMatrix, Zpk};
use crate::walks::{spectral_gap_exact, FiniteSupportMeasure};

/// Entries of exact or floating couplings.
pub trait Scalar: Clone + Debug + PartialOrd + Signed {
    /// x ≥ 0, with a 10⁻¹² slack for floats.
    fn nonneg(&self) -> bool;
    /// Residue small enough to be treated as zero after a cancellation step.
    fn negligible(&self) -> bool;
    fn to_f64(&self) -> f64;
    fn from_ratio(a: i64, b: i64) -> Self;
}

impl Scalar for f64 {
    fn nonneg(&self) -> bool {
        *self >= -1e-12
    }
    fn negligible(&self) -> bool {
        self.abs() <= 1e-15
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn from_ratio(a: i64, b: i64) -> Self {
        a as f64 / b as f64
    }
}

impl Scalar for BigRational {
    fn nonneg(&self) -> bool {
        !self.is_negative()
    }
    fn negligible(&self) -> bool {
        self.is_zero()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn from_ratio(a: i64, b: i64) -> Self {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }
}

/// Exact rational value of a float.
pub fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(BigRational::zero)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix<T> {
    pub rows: Vec<Vec<T>>,
}

impl<T: Scalar> CouplingMatrix<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        let n2 = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || n2 == 0 || rows.iter().any(|r| r.len() != n2) {
            return Err(Error::Dimension("coupling matrix must be a nonempty rectangle".into()));
        }
        Ok(Self { rows })
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self { rows: vec![vec![T::zero(); n2]; n1] }
    }

    pub fn n1(&self) -> usize {
        self.rows.len()
    }

    pub fn n2(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.iter().fold(T::zero(), |a, x| a + x.clone())).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        (0..self.n2()).map(|j| self.rows.iter().fold(T::zero(), |a, r| a + r[j].clone())).collect()
    }

    pub fn is_nonneg(&self) -> bool {
        self.rows.iter().flatten().all(Scalar::nonneg)
    }

    pub fn to_f64(&self) -> CouplingMatrix<f64> {
        CouplingMatrix { rows: self.rows.iter().map(|r| r.iter().map(Scalar::to_f64).collect()).collect() }
    }

    /// max |a − b| entrywise.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(other.rows.iter().flatten())
            .map(|(a, b)| (a.clone() - b.clone()).abs().to_f64())
            .fold(0.0, f64::max)
    }

    /// Entries ≥ 0 and margins equal to the uniform measures (exactly for rationals).
    pub fn is_uniform_coupling(&self) -> bool {
        let close = |x: &T, n: usize| {
            let d = (x.clone() - T::from_ratio(1, n as i64)).abs();
            if is_exact::<T>() {
                d.is_zero()
            } else {
                d.to_f64() <= 1e-12
            }
        };
        self.is_nonneg()
            && self.row_sums().iter().all(|r| close(r, self.n1()))
            && self.col_sums().iter().all(|c| close(c, self.n2()))
    }
}

fn is_exact<T: Scalar>() -> bool {
    // floats have a positive negligibility threshold
    !T::from_ratio(1, 1_000_000_000_000_000).negligible()
}

impl<T: Display> CouplingMatrix<T> {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Spanning tree of the complete bipartite graph on Y₁ ⊔ Y₂; edge (i, j) joins i ∈ Y₁ to j ∈ Y₂.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BipartiteTree {
    pub n1: usize,
    pub n2: usize,
    pub edges: Vec<(usize, usize)>,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

impl BipartiteTree {
    pub fn new(n1: usize, n2: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if n1 == 0 || n2 == 0 || edges.len() != n1 + n2 - 1 {
            return Err(Error::InvalidParameter(format!("a spanning tree on {n1}+{n2} vertices has {} edges", n1 + n2 - 1)));
        }
        let mut dsu = Dsu::new(n1 + n2);
        for &(i, j) in &edges {
            if i >= n1 || j >= n2 {
                return Err(Error::InvalidParameter(format!("edge ({i}, {j}) out of range")));
            }
            if !dsu.union(i, n1 + j) {
                return Err(Error::InvalidParameter("edges contain a cycle".into()));
            }
        }
        edges.sort_unstable();
        Ok(Self { n1, n2, edges })
    }

    /// Extends a forest (given as edges) to a spanning tree with lexicographically first edges.
    pub fn extend_forest(n1: usize, n2: usize, forest: &[(usize, usize)]) -> Result<Self> {
        let mut dsu = Dsu::new(n1 + n2);
        let mut edges = Vec::with_capacity(n1 + n2 - 1);
        for &(i, j) in forest {
            if dsu.union(i, n1 + j) {
                edges.push((i, j));
            }
        }
        for i in 0..n1 {
            for j in 0..n2 {
                if edges.len() == n1 + n2 - 1 {
                    break;
                }
                if dsu.union(i, n1 + j) {
                    edges.push((i, j));
                }
            }
        }
        Self::new(n1, n2, edges)
    }

    pub fn random<R: Rng + ?Sized>(n1: usize, n2: usize, rng: &mut R) -> Self {
        let mut all: Vec<(usize, usize)> = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).collect();
        for k in (1..all.len()).rev() {
            all.swap(k, rng.random_range(0..=k));
        }
        let mut dsu = Dsu::new(n1 + n2);
        let edges = all.into_iter().filter(|&(i, j)| dsu.union(i, n1 + j)).collect();
        Self::new(n1, n2, edges).expect("Kruskal output is a spanning tree")
    }
}

fn check_margins<T: Scalar>(s1: &[T], s2: &[T], tree: &BipartiteTree) -> Result<()> {
    if s1.len() != tree.n1 || s2.len() != tree.n2 {
        return Err(Error::Dimension("margins do not match the tree".into()));
    }
    Ok(())
}

/// M^τ(y₁, y₂) = σ₁(Y₁′) − σ₂(Y₂′) on tree edges, where Y′ is the component of
/// τ minus the edge that contains y₁; zero off the tree.
pub fn tree_measure<T: Scalar>(tree: &BipartiteTree, s1: &[T], s2: &[T]) -> Result<CouplingMatrix<T>> {
    check_margins(s1, s2, tree)?;
    let (n1, n2) = (tree.n1, tree.n2);
    let nv = n1 + n2;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for &(i, j) in &tree.edges {
        adj[i].push(n1 + j);
        adj[n1 + j].push(i);
    }
    // root at vertex 0, subtree sums of σ₁ − σ₂
    let mut parent = vec![usize::MAX; nv];
    let mut order = Vec::with_capacity(nv);
    let mut stack = vec![0usize];
    parent[0] = 0;
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in &adj[v] {
            if parent[w] == usize::MAX {
                parent[w] = v;
                stack.push(w);
            }
        }
    }
    let weight = |v: usize| if v < n1 { s1[v].clone() } else { -s2[v - n1].clone() };
    let mut sub: Vec<T> = (0..nv).map(weight).collect();
    for &v in order.iter().rev().filter(|&&v| v != 0) {
        let add = sub[v].clone();
        sub[parent[v]] = sub[parent[v]].clone() + add;
    }
    let total = sub[0].clone();
    let mut m = CouplingMatrix::zeros(n1, n2);
    for &(i, j) in &tree.edges {
        let cj = n1 + j;
        m.rows[i][j] = if parent[cj] == i { total.clone() - sub[cj].clone() } else { sub[i].clone() };
    }
    Ok(m)
}

pub fn is_admissible<T: Scalar>(tree: &BipartiteTree, s1: &[T], s2: &[T]) -> Result<bool> {
    Ok(tree_measure(tree, s1, s2)?.is_nonneg())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition<T> {
    pub terms: Vec<(T, BipartiteTree)>,
    pub margins: (Vec<T>, Vec<T>),
}

impl<T: Scalar> Decomposition<T> {
    pub fn reconstruct(&self) -> Result<CouplingMatrix<T>> {
        let (s1, s2) = &self.margins;
        let mut out = CouplingMatrix::<T>::zeros(s1.len(), s2.len());
        for (c, t) in &self.terms {
            let m = tree_measure(t, s1, s2)?;
            for (i, j) in t.edges.iter().copied() {
                out.rows[i][j] = out.rows[i][j].clone() + c.clone() * m.rows[i][j].clone();
            }
        }
        Ok(out)
    }

    pub fn weight_sum(&self) -> T {
        self.terms.iter().fold(T::zero(), |a, (c, _)| a + c.clone())
    }
}

/// Path between two vertices of a forest (edge ids), or None if disconnected.
fn forest_path(adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Option<Vec<usize>> {
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[from] = true;
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        if v == to {
            let mut path = Vec::new();
            let mut x = to;
            while let Some((p, e)) = prev[x] {
                path.push(e);
                x = p;
            }
            path.reverse();
            return Some(path);
        }
        for &(w, e) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                prev[w] = Some((v, e));
                queue.push_back(w);
            }
        }
    }
    None
}

/// Cancels every cycle in the support of `w`, in lexicographic edge order, keeping its
/// margins. Returns the resulting forest support.
fn cancel_cycles<T: Scalar>(w: &mut CouplingMatrix<T>) -> Vec<(usize, usize)> {
    let (n1, n2) = (w.n1(), w.n2());
    let support: Vec<(usize, usize)> =
        (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).filter(|&(i, j)| !w.rows[i][j].is_zero()).collect();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n1 + n2];
    let mut in_forest = vec![false; support.len()];
    let remove = |adj: &mut Vec<Vec<(usize, usize)>>, e: usize, (i, j): (usize, usize)| {
        adj[i].retain(|&(_, x)| x != e);
        adj[n1 + j].retain(|&(_, x)| x != e);
    };
    for (eid, &(i, j)) in support.iter().enumerate() {
        match forest_path(&adj, n1 + j, i) {
            None => {
                adj[i].push((n1 + j, eid));
                adj[n1 + j].push((i, eid));
                in_forest[eid] = true;
            }
            Some(path) => {
                // cycle i → j along the new edge, then back along the path; the new edge
                // and every second edge after it decrease
                let mut minus = vec![eid];
                let mut plus = Vec::new();
                for (k, &e) in path.iter().enumerate() {
                    if k % 2 == 0 {
                        plus.push(e);
                    } else {
                        minus.push(e);
                    }
                }
                let (z, eps) = minus
                    .iter()
                    .map(|&e| (e, w.rows[support[e].0][support[e].1].clone()))
                    .reduce(|a, b| if b.1 < a.1 { b } else { a })
                    .unwrap();
                for &e in &minus {
                    let (a, b) = support[e];
                    let v = w.rows[a][b].clone() - eps.clone();
                    w.rows[a][b] = if e == z || v.negligible() || v.is_negative() { T::zero() } else { v };
                }
                for &e in &plus {
                    let (a, b) = support[e];
                    w.rows[a][b] = w.rows[a][b].clone() + eps.clone();
                }
                if z != eid {
                    remove(&mut adj, z, support[z]);
                    in_forest[z] = false;
                    adj[i].push((n1 + j, eid));
                    adj[n1 + j].push((i, eid));
                    in_forest[eid] = true;
                }
            }
        }
    }
    support.into_iter().zip(in_forest).filter(|&((i, j), f)| f && !w.rows[i][j].is_zero()).map(|(e, _)| e).collect()
}

/// Writes a coupling as a convex combination of admissible tree measures by peeling
/// vertices of its minimal face: at most (N₁−1)(N₂−1)+1 terms.
pub fn decompose<T: Scalar>(sigma: &CouplingMatrix<T>) -> Result<Decomposition<T>> {
    if !sigma.is_nonneg() {
        return Err(Error::InvalidParameter("coupling has negative entries".into()));
    }
    let (n1, n2) = (sigma.n1(), sigma.n2());
    let s1 = sigma.row_sums();
    let s2 = sigma.col_sums();
    let total = s1.iter().fold(T::zero(), |a, x| a + x.clone());
    if !(total.clone() - T::one()).negligible() && (total.to_f64() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("total mass {} is not 1", total.to_f64())));
    }
    let mut residual = sigma.clone();
    for x in residual.rows.iter_mut().flatten() {
        if x.is_negative() {
            *x = T::zero();
        }
    }
    let mut terms = Vec::new();
    let max_terms = n1 * n2 + 1;
    while residual.rows.iter().flatten().any(|x| !x.is_zero()) {
        if terms.len() >= max_terms {
            return Err(Error::NotConverged("decomposition did not terminate".into()));
        }
        if !is_exact::<T>() && residual.rows.iter().flatten().map(Scalar::to_f64).sum::<f64>() <= 1e-12 {
            break;
        }
        let mut w = residual.clone();
        let forest = cancel_cycles(&mut w);
        let tree = BipartiteTree::extend_forest(n1, n2, &forest)?;
        let v = tree_measure(&tree, &s1, &s2)?;
        let mut best: Option<(T, (usize, usize))> = None;
        for &(i, j) in &tree.edges {
            if v.rows[i][j].is_positive() && !v.rows[i][j].negligible() {
                if residual.rows[i][j].is_zero() && !is_exact::<T>() && v.rows[i][j].to_f64() <= 1e-12 {
                    // rounding residue of a cancelled entry
                    continue;
                }
                let r = residual.rows[i][j].clone() / v.rows[i][j].clone();
                if best.as_ref().is_none_or(|(b, _)| r < *b) {
                    best = Some((r, (i, j)));
                }
            }
        }
        let Some((c, (zi, zj))) = best else {
            break;
        };
        if c.is_zero() {
            return Err(Error::NotConverged("vertex outside the face of the residual".into()));
        }
        for &(i, j) in &tree.edges {
            let x = residual.rows[i][j].clone() - c.clone() * v.rows[i][j].clone();
            residual.rows[i][j] = if (i, j) == (zi, zj) || x.negligible() || x.is_negative() { T::zero() } else { x };
        }
        terms.push((c, tree));
    }
    if !is_exact::<T>() {
        // floating weights: remove rounding drift so the weights sum to one
        let s = terms.iter().fold(T::zero(), |a, (c, _)| a + c.clone());
        for (c, _) in &mut terms {
            *c = c.clone() / s.clone();
        }
    }
    Ok(Decomposition { terms, margins: (s1, s2) })
}

#[derive(Clone, Debug)]
pub struct CorrectedCoupling<T> {
    pub nu: CouplingMatrix<T>,
    pub decomposition: Decomposition<T>,
    /// max_y |π_i μ̃(y) − 1/N_i| of the input.
    pub margin_deviation: f64,
    pub max_diff: f64,
    /// (N₁N₂)^{−(A−1)}.
    pub bound: f64,
}

impl<T> CorrectedCoupling<T> {
    pub fn within_bound(&self) -> bool {
        self.max_diff <= self.bound
    }
}

fn uniform_margins<T: Scalar>(n1: usize, n2: usize) -> (Vec<T>, Vec<T>) {
    (vec![T::from_ratio(1, n1 as i64); n1], vec![T::from_ratio(1, n2 as i64); n2])
}

/// Replaces each tree measure of μ̃'s decomposition by the tree measure of the
/// uniform margins, keeping the weights.
pub fn correct_coupling<T: Scalar>(mu: &CouplingMatrix<T>, a: f64) -> Result<CorrectedCoupling<T>> {
    if !(a > 2.0) {
        return Err(Error::Precondition(format!("A = {a} must exceed 2")));
    }
    let (n1, n2) = (mu.n1(), mu.n2());
    let tol = ((n1 * n2) as f64).powf(-a);
    let dev = margin_deviation(mu);
    if dev > tol {
        return Err(Error::Precondition(format!("margin deviation {dev:e} exceeds (N₁N₂)^-A = {tol:e}")));
    }
    let decomposition = decompose(mu)?;
    let (u1, u2) = uniform_margins::<T>(n1, n2);
    let mut nu = CouplingMatrix::<T>::zeros(n1, n2);
    for (c, t) in &decomposition.terms {
        let m = tree_measure(t, &u1, &u2)?;
        if !m.is_nonneg() {
            return Err(Error::Precondition("a tree admissible for μ̃ is not admissible for the uniform margins".into()));
        }
        for &(i, j) in &t.edges {
            nu.rows[i][j] = nu.rows[i][j].clone() + c.clone() * m.rows[i][j].clone();
        }
    }
    let max_diff = nu.max_abs_diff(mu);
    Ok(CorrectedCoupling { nu, decomposition, margin_deviation: dev, max_diff, bound: ((n1 * n2) as f64).powf(-(a - 1.0)) })
}

pub fn margin_deviation<T: Scalar>(mu: &CouplingMatrix<T>) -> f64 {
    let (n1, n2) = (mu.n1(), mu.n2());
    let d1 = mu.row_sums().iter().map(|r| (r.to_f64() - 1.0 / n1 as f64).abs()).fold(0.0, f64::max);
    let d2 = mu.col_sums().iter().map(|c| (c.to_f64() - 1.0 / n2 as f64).abs()).fold(0.0, f64::max);
    d1.max(d2)
}

/// Σ c_τ M^τ_{unif,unif} in exact arithmetic, the weights being the exact rational
/// values of the floating weights renormalized to sum to one.
pub fn assemble_uniform_exact(dec: &Decomposition<f64>) -> Result<CouplingMatrix<BigRational>> {
    let (n1, n2) = (dec.margins.0.len(), dec.margins.1.len());
    let (u1, u2) = uniform_margins::<BigRational>(n1, n2);
    let weights: Vec<BigRational> = dec.terms.iter().map(|(c, _)| rational(*c)).collect();
    let s = weights.iter().fold(BigRational::zero(), |a, x| a + x);
    let mut nu = CouplingMatrix::zeros(n1, n2);
    for (c, (_, t)) in weights.iter().zip(&dec.terms) {
        let c = c / &s;
        let m = tree_measure(t, &u1, &u2)?;
        if !m.is_nonneg() {
            return Err(Error::Precondition("tree not admissible for the uniform margins".into()));
        }
        for &(i, j) in &t.edges {
            nu.rows[i][j] = &nu.rows[i][j] + &c * &m.rows[i][j];
        }
    }
    Ok(nu)
}

enum Projection {
    Table(Vec<usize>),
    Reduce { level: u32, index: HashMap<PAdicMatrix, usize> },
    Trivial,
}

enum Cells {
    Quotient { group: Arc<FiniteGroup>, proj: Projection },
    Arcs { n: usize },
    Hopf { bands: usize, n1: usize, n2: usize },
}

/// Partition of a group into equal-measure cells of diameter ≤ δ.
pub struct Discretization {
    pub delta: f64,
    /// Certified upper bound on cell diameters.
    pub diameter: f64,
    /// Radius of a ball contained in every cell (None when not certified).
    pub inner_radius: Option<f64>,
    /// True when the δ²-ball containment is not guaranteed.
    pub relaxed: bool,
    cells: Cells,
}

impl std::fmt::Debug for Discretization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Discretization")
            .field("delta", &self.delta)
            .field("cells", &self.num_cells())
            .field("diameter", &self.diameter)
            .field("relaxed", &self.relaxed)
            .finish()
    }
}

fn su2_band_bound(bands: usize, x: f64, y: f64) -> f64 {
    (0..bands)
        .map(|b| {
            let (u0, u1) = (b as f64 / bands as f64, (b + 1) as f64 / bands as f64);
            let (c_hi, c_lo) = ((1.0 - u0).sqrt(), (1.0 - u1).max(0.0).sqrt());
            let (s_lo, s_hi) = (u0.sqrt(), u1.sqrt());
            ((c_hi - c_lo) + c_hi * x).hypot((s_hi - s_lo) + s_hi * y)
        })
        .fold(0.0, f64::max)
}

fn chord(n: usize) -> f64 {
    if n <= 1 {
        2.0
    } else {
        2.0 * (std::f64::consts::PI / n as f64).sin()
    }
}

/// Quotient G/N of a finite group by a normal subgroup.
fn finite_quotient(g: &FiniteGroup, normal: &[usize]) -> Result<(FiniteGroup, Vec<usize>)> {
    let labels = g.left_coset_labels(normal)?;
    let mut reps: Vec<usize> = labels.clone();
    reps.sort_unstable();
    reps.dedup();
    let pos: HashMap<usize, usize> = reps.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let proj: Vec<usize> = labels.iter().map(|l| pos[l]).collect();
    let m = reps.len();
    for a in 0..g.order() {
        for b in 0..g.order() {
            if proj[g.mul(a, b)] != proj[g.mul(reps[proj[a]], reps[proj[b]])] {
                return Err(Error::Precondition("ball is not a normal subgroup".into()));
            }
        }
    }
    let table = (0..m * m).map(|t| proj[g.mul(reps[t / m], reps[t % m])] as u32).collect();
    let mut norms = vec![f64::INFINITY; m];
    for x in 0..g.order() {
        norms[proj[x]] = norms[proj[x]].min(g.norm(x));
    }
    let q = FiniteGroup::from_table(&format!("{}/N", g.name()), m, table)?.with_norms(norms)?;
    Ok((q, proj))
}

/// SL_n(Z/p^l) generated by elementary matrices, with its element index.
fn padic_quotient(n: usize, p: u64, l: u32) -> Result<(FiniteGroup, HashMap<PAdicMatrix, usize>)> {
    let ring = Zpk::new(p, l)?;
    let mut gens = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut rows: Vec<Vec<i64>> = (0..n).map(|a| (0..n).map(|b| i64::from(a == b)).collect()).collect();
                rows[i][j] = 1;
                gens.push(PAdicMatrix::from_i64(ring, &rows)?);
            }
        }
    }
    let (g, elems) = FiniteGroup::matrix_group(&format!("SL{n}(Z/{p}^{l})"), &gens)?;
    let index = elems.into_iter().enumerate().map(|(i, m)| (m, i)).collect();
    Ok((g, index))
}

fn padic_level(p: u64, delta: f64) -> u32 {
    let mut l = 0;
    let mut r = 1.0;
    while r > delta {
        r /= p as f64;
        l += 1;
    }
    l
}

/// δ-discretization: congruence cosets on SL_n(Z/p^K), cosets of the δ-ball on finite
/// groups, equal arcs on R/Z and equal-measure Hopf cells on SU(2).
pub fn discretize(spec: &CompactGroupSpec, delta: f64) -> Result<Discretization> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter("δ must be positive".into()));
    }
    match spec {
        CompactGroupSpec::PAdicSpecialLinear { n, p, k } => {
            let l = padic_level(*p, delta).min(*k);
            let (group, proj) = if l == 0 {
                (FiniteGroup::cyclic(1)?, Projection::Trivial)
            } else {
                let (g, index) = padic_quotient(*n, *p, l)?;
                (g, Projection::Reduce { level: l, index })
            };
            let diam = if l == *k { 0.0 } else { (*p as f64).powi(-(l as i32)) };
            Ok(Discretization {
                delta,
                diameter: diam,
                inner_radius: Some(diam.max(delta * delta).min(delta)),
                relaxed: false,
                cells: Cells::Quotient { group: Arc::new(group), proj },
            })
        }
        CompactGroupSpec::FiniteGroup(g) => {
            let ball = g.ball(delta);
            if !g.is_subgroup(&ball) {
                return Err(Error::InvalidParameter(format!("1_δ is not a subgroup of {} at δ = {delta}", g.name())));
            }
            let (q, proj) = finite_quotient(g, &ball)?;
            let diam = ball.iter().map(|&b| g.norm(b)).fold(0.0, f64::max);
            Ok(Discretization {
                delta,
                diameter: diam,
                inner_radius: Some(delta * delta),
                relaxed: false,
                cells: Cells::Quotient { group: Arc::new(q), proj: Projection::Table(proj) },
            })
        }
        CompactGroupSpec::Circle => {
            let n = (1.0 / delta - 1e-12).ceil().max(1.0) as usize;
            let r = 0.5 / n as f64;
            Ok(Discretization {
                delta,
                diameter: (1.0 / n as f64).min(0.5),
                inner_radius: Some(r),
                relaxed: r < delta * delta,
                cells: Cells::Arcs { n },
            })
        }
        CompactGroupSpec::SpecialUnitary(2) => {
            let lo = (1.0 / (delta * delta)).ceil() as usize;
            let mut best: Option<(usize, usize, f64)> = None;
            for bands in lo.max(1)..=(8 * lo).max(8) {
                let feasible = |m: usize| su2_band_bound(bands, chord(m), chord(m)) <= delta;
                let mut hi = 4;
                while !feasible(hi) {
                    hi *= 2;
                    if hi > 1 << 20 {
                        break;
                    }
                }
                if !feasible(hi) {
                    continue;
                }
                let mut lo_m = 1;
                while lo_m < hi {
                    let mid = (lo_m + hi) / 2;
                    if feasible(mid) {
                        hi = mid;
                    } else {
                        lo_m = mid + 1;
                    }
                }
                let cost = bands as f64 * (hi * hi) as f64;
                if best.is_none_or(|(b, m, _)| cost < b as f64 * (m * m) as f64) {
                    best = Some((bands, hi, cost));
                }
            }
            let (bands, m, _) = best.ok_or_else(|| Error::InvalidParameter(format!("no Hopf partition at δ = {delta}")))?;
            Ok(Discretization {
                delta,
                diameter: su2_band_bound(bands, chord(m), chord(m)),
                inner_radius: None,
                relaxed: true,
                cells: Cells::Hopf { bands, n1: m, n2: m },
            })
        }
        _ => Err(Error::InvalidParameter("no discretization for this spec".into())),
    }
}

impl Discretization {
    pub fn num_cells(&self) -> usize {
        match &self.cells {
            Cells::Quotient { group, .. } => group.order(),
            Cells::Arcs { n } => *n,
            Cells::Hopf { bands, n1, n2 } => bands * n1 * n2,
        }
    }

    /// Haar measure of each cell (all cells are equal).
    pub fn cell_measure(&self) -> f64 {
        1.0 / self.num_cells() as f64
    }

    pub fn cell_of(&self, g: &GroupPoint) -> Result<usize> {
        match (&self.cells, g) {
            (Cells::Quotient { proj: Projection::Trivial, .. }, GroupPoint::PAdic(_)) => Ok(0),
            (Cells::Quotient { proj: Projection::Reduce { level, index }, .. }, GroupPoint::PAdic(m)) => {
                index.get(&m.reduce_to(*level)?).copied().ok_or(Error::SpecMismatch)
            }
            (Cells::Quotient { proj: Projection::Table(t), .. }, GroupPoint::Finite(i)) => {
                t.get(*i).copied().ok_or(Error::SpecMismatch)
            }
            (Cells::Arcs { n }, GroupPoint::Circle(x)) => Ok(((x.rem_euclid(1.0) * *n as f64) as usize).min(n - 1)),
            (Cells::Hopf { bands, n1, n2 }, GroupPoint::Unitary(m)) if m.nrows() == 2 => {
                let [a, b, c, d] = quaternion(m);
                let u = (c * c + d * d).clamp(0.0, 1.0);
                let tau = std::f64::consts::TAU;
                let band = ((u * *bands as f64) as usize).min(bands - 1);
                let i1 = ((b.atan2(a).rem_euclid(tau) / tau * *n1 as f64) as usize).min(n1 - 1);
                let i2 = ((d.atan2(c).rem_euclid(tau) / tau * *n2 as f64) as usize).min(n2 - 1);
                Ok((band * n1 + i1) * n2 + i2)
            }
            _ => Err(Error::SpecMismatch),
        }
    }

    /// Finite quotient group when the cells are cosets of a normal subgroup.
    pub fn quotient(&self) -> Option<&Arc<FiniteGroup>> {
        match &self.cells {
            Cells::Quotient { group, .. } => Some(group),
            _ => None,
        }
    }

    /// Cell containing the inverses of the points of cell `i`, when that is a cell.
    pub fn inverse_cell(&self, i: usize) -> Option<usize> {
        match &self.cells {
            Cells::Quotient { group, .. } => Some(group.inv(i)),
            Cells::Arcs { n } => Some(n - 1 - i),
            Cells::Hopf { .. } => None,
        }
    }

    /// Uniform point of an SU(2) Hopf cell.
    pub fn sample_in_cell<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Option<GroupPoint> {
        let Cells::Hopf { bands, n1, n2 } = &self.cells else {
            return None;
        };
        let (band, rest) = (i / (n1 * n2), i % (n1 * n2));
        let (i1, i2) = (rest / n2, rest % n2);
        let tau = std::f64::consts::TAU;
        let u = (band as f64 + rng.random::<f64>()) / *bands as f64;
        let p1 = (i1 as f64 + rng.random::<f64>()) / *n1 as f64 * tau;
        let p2 = (i2 as f64 + rng.random::<f64>()) / *n2 as f64 * tau;
        let (c, s) = ((1.0 - u).sqrt(), u.sqrt());
        Some(GroupPoint::Unitary(su2_from_quaternion([c * p1.cos(), c * p1.sin(), s * p2.cos(), s * p2.sin()])))
    }
}

/// Walk length after which both marginal cell masses are within (N₁N₂)^{−A} of uniform,
/// by the equidistribution lemma with singleton cells.
pub fn required_walk_length(lambda1: f64, lambda2: f64, n1: usize, n2: usize, a: f64) -> Option<usize> {
    let lam = lambda1.max(lambda2);
    if lam >= 1.0 {
        return None;
    }
    if lam <= 0.0 {
        return Some(1);
    }
    Some((a * ((n1 * n2) as f64).ln() / -lam.ln()).ceil() as usize)
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub n1: usize,
    pub n2: usize,
    pub ell: usize,
    pub rho: f64,
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub margin_deviation: f64,
    pub margin_tolerance: f64,
    pub terms: usize,
    /// Symmetrized cell masses ν(X_j × X_k); ν has density N₁N₂·ν(X_j × X_k) on each cell.
    pub nu_cells: CouplingMatrix<f64>,
    pub nu_exact_coupling: bool,
    pub nu_symmetric: bool,
    /// max and sum over cells of |μ^(ℓ)_ρ(X_j × X_k) − ν(X_j × X_k)|.
    pub max_cell_error: f64,
    pub cell_tv: f64,
    pub correction_bound: f64,
}

/// Pushes μ to the product of the cell quotients, runs ℓ steps, smooths by P_ρ, repairs the
/// cell masses into an exact coupling of uniforms and symmetrizes it.
pub fn symmetric_coupling_pipeline(
    spec: &CompactGroupSpec,
    mu: &FiniteSupportMeasure,
    ell: usize,
    rho: f64,
    delta: f64,
    a: f64,
) -> Result<PipelineReport> {
    let CompactGroupSpec::Product(s1, s2) = spec else {
        return Err(Error::InvalidParameter("pipeline needs a product spec".into()));
    };
    if !mu.is_symmetric(spec, 1e-12) {
        return Err(Error::Precondition("μ is not symmetric".into()));
    }
    let (d1, d2) = (discretize(s1, delta)?, discretize(s2, delta)?);
    let (Some(q1), Some(q2)) = (d1.quotient(), d2.quotient()) else {
        return Err(Error::InvalidParameter("pipeline needs coset discretizations on both factors".into()));
    };
    let (n1, n2) = (q1.order(), q2.order());
    let q = Arc::new(FiniteGroup::direct_product(q1, q2)?);
    let mut w = vec![0.0; n1 * n2];
    let mut w1 = vec![0.0; n1];
    let mut w2 = vec![0.0; n2];
    for (g, x) in mu.atoms() {
        let (a1, a2) = g.as_pair().ok_or(Error::SpecMismatch)?;
        let (c1, c2) = (d1.cell_of(a1)?, d2.cell_of(a2)?);
        w[c1 * n2 + c2] += x;
        w1[c1] += x;
        w2[c2] += x;
    }
    let lam = |g: &Arc<FiniteGroup>, w: &[f64]| -> Result<f64> {
        let sp = CompactGroupSpec::FiniteGroup(g.clone());
        Ok(spectral_gap_exact(&sp, &FiniteSupportMeasure::from_dense(&sp, w)?)?.lambda)
    };
    let (lambda1, lambda2) = (lam(q1, &w1)?, lam(q2, &w2)?);
    if lambda1 >= 1.0 - 1e-12 || lambda2 >= 1.0 - 1e-12 {
        return Err(Error::Precondition(format!("marginal walks have no gap: λ₁ = {lambda1}, λ₂ = {lambda2}")));
    }
    let supp: Vec<(usize, f64)> = w.iter().copied().enumerate().filter(|(_, x)| *x != 0.0).collect();
    let mut sigma = vec![0.0; q.order()];
    sigma[q.identity()] = 1.0;
    for _ in 0..ell {
        let mut next = vec![0.0; q.order()];
        for (x, &sx) in sigma.iter().enumerate().filter(|(_, s)| **s != 0.0) {
            for &(y, wy) in &supp {
                next[q.mul(x, y)] += sx * wy;
            }
        }
        sigma = next;
    }
    let ball = q.ball(rho);
    if ball.len() > 1 {
        let mut p = vec![0.0; q.order()];
        ball.iter().for_each(|&b| p[b] = 1.0 / ball.len() as f64);
        sigma = crate::walks::convolve_dense(&q, &sigma, &p);
    }
    let masses = CouplingMatrix { rows: (0..n1).map(|j| sigma[j * n2..(j + 1) * n2].to_vec()).collect() };
    let tol = ((n1 * n2) as f64).powf(-a);
    let dev = margin_deviation(&masses);
    if dev > tol {
        let need = required_walk_length(lambda1, lambda2, n1, n2, a).unwrap_or(usize::MAX);
        return Err(Error::Precondition(format!(
            "margin deviation {dev:e} exceeds (N₁N₂)^-A = {tol:e}; ℓ = {ell} is too small, the equidistribution bound needs ℓ ≥ {need}"
        )));
    }
    let dec = decompose(&masses)?;
    let terms = dec.terms.len();
    let nu_prime = assemble_uniform_exact(&dec)?;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let mut nu = CouplingMatrix::zeros(n1, n2);
    for j in 0..n1 {
        for k in 0..n2 {
            let (ji, ki) = (d1.inverse_cell(j).unwrap(), d2.inverse_cell(k).unwrap());
            nu.rows[j][k] = (&nu_prime.rows[j][k] + &nu_prime.rows[ji][ki]) * &half;
        }
    }
    let nu_symmetric = (0..n1).all(|j| (0..n2).all(|k| nu.rows[j][k] == nu.rows[d1.inverse_cell(j).unwrap()][d2.inverse_cell(k).unwrap()]));
    let nu_f = nu.to_f64();
    let diffs: Vec<f64> = masses.rows.iter().flatten().zip(nu_f.rows.iter().flatten()).map(|(a, b)| (a - b).abs()).collect();
    Ok(PipelineReport {
        n1,
        n2,
        ell,
        rho,
        delta,
        lambda1,
        lambda2,
        margin_deviation: dev,
        margin_tolerance: tol,
        terms,
        nu_exact_coupling: nu.is_uniform_coupling(),
        nu_symmetric,
        nu_cells: nu_f,
        max_cell_error: diffs.iter().copied().fold(0.0, f64::max),
        cell_tv: diffs.iter().sum(),
        correction_bound: ((n1 * n2) as f64).powf(-(a - 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(a: i64, b: i64) -> BigRational {
        <BigRational as Scalar>::from_ratio(a, b)
    }

    fn qvec(v: &[(i64, i64)]) -> Vec<BigRational> {
        v.iter().map(|&(a, b)| q(a, b)).collect()
    }

    #[test]
    fn tree_measure_hand_examples() {
        let t = BipartiteTree::new(1, 1, vec![(0, 0)]).unwrap();
        assert_eq!(tree_measure(&t, &[q(1, 1)], &[q(1, 1)]).unwrap().rows, vec![vec![q(1, 1)]]);
        // a=0, b=1, c=0, d=1; τ = {ac, ad, bd}
        let t = BipartiteTree::new(2, 2, vec![(0, 0), (0, 1), (1, 1)]).unwrap();
        let m = tree_measure(&t, &qvec(&[(1, 2), (1, 2)]), &qvec(&[(1, 2), (1, 2)])).unwrap();
        assert_eq!(m.rows, vec![vec![q(1, 2), q(0, 1)], vec![q(0, 1), q(1, 2)]]);
        let m = tree_measure(&t, &qvec(&[(3, 4), (1, 4)]), &qvec(&[(1, 2), (1, 2)])).unwrap();
        assert_eq!(m.rows, vec![vec![q(1, 2), q(1, 4)], vec![q(0, 1), q(1, 4)]]);
        assert!(is_admissible(&t, &qvec(&[(1, 2), (1, 2)]), &qvec(&[(1, 2), (1, 2)])).unwrap());
        // all of b's edges carry mass b does not have
        let t2 = BipartiteTree::new(2, 2, vec![(0, 0), (1, 0), (1, 1)]).unwrap();
        assert!(!is_admissible(&t2, &qvec(&[(1, 1), (0, 1)]), &qvec(&[(1, 2), (1, 2)])).unwrap());
    }

    #[test]
    fn malformed_trees_are_rejected() {
        assert!(BipartiteTree::new(2, 2, vec![(0, 0), (0, 1)]).is_err());
        assert!(BipartiteTree::new(2, 2, vec![(0, 0), (0, 1), (0, 1)]).is_err());
        assert!(BipartiteTree::new(2, 2, vec![(0, 0), (0, 1), (2, 1)]).is_err());
    }

    #[test]
    fn product_of_uniforms_on_two_by_two() {
        let s = CouplingMatrix::new(vec![vec![q(1, 4), q(1, 4)], vec![q(1, 4), q(1, 4)]]).unwrap();
        let d = decompose(&s).unwrap();
        assert!(d.terms.len() <= 2);
        assert_eq!(d.reconstruct().unwrap(), s);
        assert_eq!(d.weight_sum(), q(1, 1));
    }

    #[test]
    fn tree_supported_coupling_is_one_term() {
        let s = CouplingMatrix::new(vec![vec![q(1, 2), q(0, 1)], vec![q(0, 1), q(1, 2)]]).unwrap();
        let d = decompose(&s).unwrap();
        assert_eq!(d.terms.len(), 1);
        assert_eq!(d.reconstruct().unwrap(), s);
    }

    fn random_rational_coupling(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> CouplingMatrix<BigRational> {
        let raw: Vec<Vec<i64>> = (0..n1).map(|_| (0..n2).map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(1..50) }).collect()).collect();
        let mut total: i64 = raw.iter().flatten().sum();
        let mut raw = raw;
        if total == 0 {
            raw[0][0] = 1;
            total = 1;
        }
        CouplingMatrix::new(raw.iter().map(|r| r.iter().map(|&x| q(x, total)).collect()).collect()).unwrap()
    }

    #[test]
    fn random_rational_couplings_reconstruct_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (n1, n2) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let s = random_rational_coupling(&mut rng, n1, n2);
            let d = decompose(&s).unwrap();
            assert_eq!(d.reconstruct().unwrap(), s);
            assert_eq!(d.weight_sum(), q(1, 1));
            assert!(d.terms.len() <= (n1 - 1) * (n2 - 1) + 2);
            for (c, t) in &d.terms {
                assert!(c.is_positive());
                assert!(is_admissible(t, &d.margins.0, &d.margins.1).unwrap());
            }
        }
    }

    #[test]
    fn float_decomposition_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let (n1, n2) = (rng.random_range(2..=10), rng.random_range(2..=10));
            let mut rows: Vec<Vec<f64>> = (0..n1).map(|_| (0..n2).map(|_| rng.random::<f64>()).collect()).collect();
            let t: f64 = rows.iter().flatten().sum();
            rows.iter_mut().flatten().for_each(|x| *x /= t);
            let s = CouplingMatrix::new(rows).unwrap();
            let d = decompose(&s).unwrap();
            assert!(d.reconstruct().unwrap().max_abs_diff(&s) < 1e-10);
            assert!((d.weight_sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correct_coupling_examples() {
        let u = CouplingMatrix::new(vec![vec![q(1, 4), q(1, 4)], vec![q(1, 4), q(1, 4)]]).unwrap();
        let c = correct_coupling(&u, 3.0).unwrap();
        assert_eq!(c.nu, u);
        assert_eq!(c.max_diff, 0.0);
        let eps = q(1, 64);
        let mut p = u.clone();
        p.rows[0][0] = &p.rows[0][0] + &eps;
        p.rows[1][1] = &p.rows[1][1] - &eps;
        let c = correct_coupling(&p, 3.0).unwrap();
        assert!(c.nu.is_uniform_coupling());
        assert!(c.within_bound(), "{} > {}", c.max_diff, c.bound);
        assert!(correct_coupling(&p, 2.0).is_err());
        let mut far = u.clone();
        far.rows[0][0] = &far.rows[0][0] + q(1, 10);
        far.rows[1][1] = &far.rows[1][1] - q(1, 10);
        assert!(correct_coupling(&far, 3.0).is_err());
    }

    #[test]
    fn discretization_examples() {
        let s = CompactGroupSpec::padic_sl(2, 5, 2).unwrap();
        let d = discretize(&s, 0.2).unwrap();
        assert_eq!(d.num_cells(), 120);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0usize; 120];
        for _ in 0..2000 {
            counts[d.cell_of(&s.haar_sample(&mut rng)).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));

        let c = discretize(&CompactGroupSpec::Circle, 0.1).unwrap();
        assert_eq!(c.num_cells(), 10);
        assert!(c.inner_radius.unwrap() >= 0.01 && !c.relaxed);
        assert_eq!(c.cell_of(&GroupPoint::Circle(0.95)).unwrap(), 9);
        assert_eq!(c.inverse_cell(0), Some(9));

        let su = CompactGroupSpec::su(2);
        let h = discretize(&su, 0.2).unwrap();
        assert!(h.diameter <= 0.2 && h.relaxed);
        for cell in [0, h.num_cells() / 2, h.num_cells() - 1] {
            let pts: Vec<GroupPoint> = (0..40).map(|_| h.sample_in_cell(cell, &mut rng).unwrap()).collect();
            for x in &pts {
                assert_eq!(h.cell_of(x).unwrap(), cell);
                for y in &pts {
                    assert!(su.distance(x, y).unwrap() <= 0.2);
                }
            }
        }
        assert!(discretize(&CompactGroupSpec::su(3), 0.2).is_err());
    }

    #[test]
    fn hopf_cells_have_equal_measure() {
        let su = CompactGroupSpec::su(2);
        let h = discretize(&su, 0.9).unwrap();
        let n = h.num_cells();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut counts = vec![0usize; n];
        let samples = 200_000;
        for _ in 0..samples {
            counts[h.cell_of(&su.haar_sample(&mut rng)).unwrap()] += 1;
        }
        let expect = samples as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // mean n - 1, sd sqrt(2(n - 1))
        assert!(chi2 < (n - 1) as f64 + 5.0 * (2.0 * (n - 1) as f64).sqrt(), "chi2 = {chi2}, cells = {n}");
    }

    #[test]
    fn pipeline_on_cyclic_product() {
        let (a, b) = (FiniteGroup::cyclic(3).unwrap(), FiniteGroup::cyclic(5).unwrap());
        let spec = CompactGroupSpec::product(CompactGroupSpec::finite(a), CompactGroupSpec::finite(b));
        let pts: Vec<GroupPoint> = [(1, 0), (2, 0), (0, 1), (0, 4), (0, 0)]
            .iter()
            .map(|&(x, y)| GroupPoint::pair(GroupPoint::Finite(x), GroupPoint::Finite(y)))
            .collect();
        let mu = FiniteSupportMeasure::uniform(&spec, &pts).unwrap();
        let r = symmetric_coupling_pipeline(&spec, &mu, 200, 0.5, 0.5, 3.0).unwrap();
        assert!(r.nu_exact_coupling && r.nu_symmetric);
        assert!(r.max_cell_error <= r.correction_bound);
        let short = symmetric_coupling_pipeline(&spec, &mu, 2, 0.5, 0.5, 3.0).unwrap_err();
        assert!(format!("{short}").contains("needs ℓ ≥"));
    }

    proptest! {
        #[test]
        fn tree_measure_margins_hold_for_every_tree(n1 in 1usize..7, n2 in 1usize..7, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = BipartiteTree::random(n1, n2, &mut rng);
            let r1: Vec<i64> = (0..n1).map(|_| rng.random_range(0..20)).collect();
            let r2: Vec<i64> = (0..n2).map(|_| rng.random_range(0..20)).collect();
            let (t1, t2) = (r1.iter().sum::<i64>().max(1), r2.iter().sum::<i64>().max(1));
            let s1: Vec<BigRational> = r1.iter().map(|&x| q(x, t1)).collect();
            let s2: Vec<BigRational> = r2.iter().map(|&x| q(x, t2)).collect();
            prop_assume!(s1.iter().sum::<BigRational>() == s2.iter().sum::<BigRational>());
            let m = tree_measure(&t, &s1, &s2).unwrap();
            prop_assert_eq!(m.row_sums(), s1);
            prop_assert_eq!(m.col_sums(), s2);
        }

        #[test]
        fn convex_combinations_of_tree_measures_decompose(n1 in 1usize..6, n2 in 1usize..6, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r1: Vec<i64> = (0..n1).map(|_| rng.random_range(1..10)).collect();
            let r2: Vec<i64> = (0..n2).map(|_| rng.random_range(1..10)).collect();
            let (t1, t2) = (r1.iter().sum::<i64>(), r2.iter().sum::<i64>());
            let s1: Vec<BigRational> = r1.iter().map(|&x| q(x, t1)).collect();
            let s2: Vec<BigRational> = r2.iter().map(|&x| q(x, t2)).collect();
            let mut sigma = CouplingMatrix::<BigRational>::zeros(n1, n2);
            let mut count = 0i64;
            for _ in 0..50 {
                let t = BipartiteTree::random(n1, n2, &mut rng);
                let m = tree_measure(&t, &s1, &s2).unwrap();
                if m.is_nonneg() {
                    for (a, b) in sigma.rows.iter_mut().flatten().zip(m.rows.iter().flatten()) {
                        *a = &*a + b;
                    }
                    count += 1;
                }
            }
            prop_assume!(count > 0);
            for x in sigma.rows.iter_mut().flatten() {
                *x = &*x / BigRational::from_integer(count.into());
            }
            let d = decompose(&sigma).unwrap();
            prop_assert_eq!(d.reconstruct().unwrap(), sigma);
        }

        #[test]
        fn corrected_coupling_is_always_uniform(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n1, n2) = (rng.random_range(1..=5), rng.random_range(1..=5));
            let nn = (n1 * n2) as i64;
            let mut m = CouplingMatrix::zeros(n1, n2);
            for i in 0..n1 {
                for j in 0..n2 {
                    m.rows[i][j] = q(1, nn);
                }
            }
            let (i, j) = (rng.random_range(0..n1), rng.random_range(0..n2));
            let eps = q(1, nn.pow(3) * 4);
            m.rows[i][j] = &m.rows[i][j] + &eps;
            let (i2, j2) = (rng.random_range(0..n1), rng.random_range(0..n2));
            m.rows[i2][j2] = &m.rows[i2][j2] - &eps;
            if let Ok(c) = correct_coupling(&m, 3.0) {
                prop_assert!(c.nu.is_uniform_coupling());
            }
        }
    }
}
