//! Finite groups stored as Cayley tables with a bi-invariant norm.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padic::{PAdicMatrix, Zpk};

pub const MAX_ORDER: usize = 4096;

/// A finite group on {0, .., n-1}. `norms[g]` is d(g, e); distances are
/// d(g, h) = norms[g^-1 h].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteGroup {
    name: String,
    order: usize,
    identity: usize,
    table: Vec<u32>,
    inverse: Vec<u32>,
    norms: Vec<f64>,
}

impl FiniteGroup {
    /// Builds a group from a multiplication closure, checking the axioms.
    pub fn from_table(name: &str, order: usize, table: Vec<u32>) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::TooLarge(format!("order {order} outside 1..={MAX_ORDER}")));
        }
        if table.len() != order * order || table.iter().any(|&x| x as usize >= order) {
            return Err(Error::InvalidParameter("malformed Cayley table".into()));
        }
        let identity = (0..order)
            .find(|&e| (0..order).all(|g| table[e * order + g] as usize == g && table[g * order + e] as usize == g))
            .ok_or_else(|| Error::InvalidParameter("no identity".into()))?;
        let mut inverse = vec![0u32; order];
        for g in 0..order {
            let inv = (0..order)
                .find(|&h| table[g * order + h] as usize == identity)
                .ok_or_else(|| Error::InvalidParameter(format!("element {g} has no inverse")))?;
            inverse[g] = inv as u32;
        }
        let norms = (0..order).map(|g| if g == identity { 0.0 } else { 1.0 }).collect();
        Ok(Self { name: name.to_string(), order, identity, table, inverse, norms })
    }

    /// Closure of `gens` under `mul`. Element 0 is the identity; the second
    /// return value lists the elements in index order.
    pub fn generate<T, F>(name: &str, identity: T, gens: &[T], mul: F) -> Result<(Self, Vec<T>)>
    where
        T: Clone + Eq + Hash,
        F: Fn(&T, &T) -> T,
    {
        let mut elems = vec![identity.clone()];
        let mut index: HashMap<T, usize> = HashMap::from([(identity, 0)]);
        let mut frontier = 0;
        while frontier < elems.len() {
            let x = elems[frontier].clone();
            frontier += 1;
            for g in gens {
                let y = mul(&x, g);
                if !index.contains_key(&y) {
                    if elems.len() >= MAX_ORDER {
                        return Err(Error::TooLarge(format!("{name}: more than {MAX_ORDER} elements")));
                    }
                    index.insert(y.clone(), elems.len());
                    elems.push(y);
                }
            }
        }
        let n = elems.len();
        let mut table = vec![0u32; n * n];
        for i in 0..n {
            for j in 0..n {
                let prod = mul(&elems[i], &elems[j]);
                table[i * n + j] = *index
                    .get(&prod)
                    .ok_or_else(|| Error::InvalidParameter(format!("{name}: set is not closed")))?
                    as u32;
            }
        }
        let g = Self::from_table(name, n, table)?;
        Ok((g, elems))
    }

    pub fn cyclic(n: usize) -> Result<Self> {
        let table = (0..n * n).map(|t| ((t / n + t % n) % n) as u32).collect();
        Self::from_table(&format!("Z/{n}"), n, table)
    }

    /// Z/p^k with the p-adic norm |x| = p^-v(x).
    pub fn cyclic_padic(p: u64, k: u32) -> Result<Self> {
        let ring = Zpk::new(p, k)?;
        let n = ring.modulus() as usize;
        let mut g = Self::cyclic(n)?;
        g.name = format!("Z/{p}^{k}");
        g.norms = (0..n).map(|x| if x == 0 { 0.0 } else { (p as f64).powi(-(ring.val(x as u64) as i32)) }).collect();
        Ok(g)
    }

    /// The symmetric group on `n` letters, elements as permutations in lexicographic closure order.
    pub fn symmetric(n: usize) -> Result<(Self, Vec<Vec<usize>>)> {
        let id: Vec<usize> = (0..n).collect();
        let mut gens = Vec::new();
        if n >= 2 {
            let mut t = id.clone();
            t.swap(0, 1);
            gens.push(t);
            let cyc: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
            gens.push(cyc);
        }
        Self::generate(&format!("S{n}"), id, &gens, |a, b| b.iter().map(|&i| a[i]).collect())
    }

    /// Matrix group generated by `gens` inside GL_n(Z/p^k), p-adic operator norm.
    pub fn matrix_group(name: &str, gens: &[PAdicMatrix]) -> Result<(Self, Vec<PAdicMatrix>)> {
        let first = gens.first().ok_or(Error::Empty)?;
        let ring = first.ring();
        let id = PAdicMatrix::identity(ring, first.n());
        let (mut g, elems) = Self::generate(name, id.clone(), gens, |a, b| a.mul(b))?;
        g.norms = elems.iter().map(|m| m.sub(&id).norm()).collect();
        Ok((g, elems))
    }

    /// Direct product with the max metric; element (a, b) has index a * |H| + b.
    pub fn direct_product(a: &FiniteGroup, b: &FiniteGroup) -> Result<Self> {
        let (na, nb) = (a.order, b.order);
        let n = na * nb;
        if n > MAX_ORDER {
            return Err(Error::TooLarge(format!("product order {n}")));
        }
        let mut table = vec![0u32; n * n];
        for x in 0..n {
            for y in 0..n {
                let (xa, xb) = (x / nb, x % nb);
                let (ya, yb) = (y / nb, y % nb);
                table[x * n + y] = (a.mul(xa, ya) * nb + b.mul(xb, yb)) as u32;
            }
        }
        let mut g = Self::from_table(&format!("{}x{}", a.name, b.name), n, table)?;
        g.norms = (0..n).map(|x| a.norms[x / nb].max(b.norms[x % nb])).collect();
        Ok(g)
    }

    /// Replaces the norm; must vanish only at e, be inverse- and conjugation-invariant
    /// and satisfy the triangle inequality on products.
    pub fn with_norms(mut self, norms: Vec<f64>) -> Result<Self> {
        if norms.len() != self.order {
            return Err(Error::Dimension("norm vector length".into()));
        }
        for g in 0..self.order {
            let bad_zero = (norms[g] == 0.0) != (g == self.identity);
            if bad_zero || norms[g] < 0.0 || (norms[g] - norms[self.inv(g)]).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("norm fails at element {g}")));
            }
            for h in 0..self.order {
                let c = self.mul(self.mul(h, g), self.inv(h));
                if (norms[c] - norms[g]).abs() > 1e-12 || norms[self.mul(g, h)] > norms[g] + norms[h] + 1e-12 {
                    return Err(Error::InvalidParameter(format!("norm fails at pair ({g}, {h})")));
                }
            }
        }
        self.norms = norms;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    #[inline]
    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.table[a * self.order + b] as usize
    }

    #[inline]
    pub fn inv(&self, a: usize) -> usize {
        self.inverse[a] as usize
    }

    pub fn norm(&self, a: usize) -> f64 {
        self.norms[a]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.norms[self.mul(self.inv(a), b)]
    }

    pub fn min_distance(&self) -> f64 {
        self.norms.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min)
    }

    pub fn is_abelian(&self) -> bool {
        (0..self.order).all(|a| (0..self.order).all(|b| self.mul(a, b) == self.mul(b, a)))
    }

    /// Elements of the closed ball of radius eta around e.
    pub fn ball(&self, eta: f64) -> Vec<usize> {
        (0..self.order).filter(|&g| self.norms[g] <= eta).collect()
    }

    pub fn is_subgroup(&self, set: &[usize]) -> bool {
        let mut mark = vec![false; self.order];
        for &s in set {
            mark[s] = true;
        }
        mark[self.identity] && set.iter().all(|&a| set.iter().all(|&b| mark[self.mul(a, self.inv(b))]))
    }

    /// Left-coset labels g H -> smallest index in the coset. Requires H to be a subgroup.
    pub fn left_coset_labels(&self, subgroup: &[usize]) -> Result<Vec<usize>> {
        if !self.is_subgroup(subgroup) {
            return Err(Error::Precondition("set is not a subgroup".into()));
        }
        Ok((0..self.order).map(|g| subgroup.iter().map(|&h| self.mul(g, h)).min().unwrap()).collect())
    }

    /// Word length of every element over a generating set (BFS), None if unreachable.
    pub fn word_lengths(&self, gens: &[usize]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.order];
        dist[self.identity] = Some(0);
        let mut queue = std::collections::VecDeque::from([self.identity]);
        while let Some(x) = queue.pop_front() {
            let d = dist[x].unwrap();
            for &s in gens {
                let y = self.mul(x, s);
                if dist[y].is_none() {
                    dist[y] = Some(d + 1);
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    /// Subgroup generated by a set.
    pub fn generated_subgroup(&self, gens: &[usize]) -> Vec<usize> {
        let mut all: Vec<usize> = gens.to_vec();
        all.extend(gens.iter().map(|&g| self.inv(g)));
        self.word_lengths(&all).iter().enumerate().filter_map(|(i, d)| d.map(|_| i)).collect()
    }
}

/// Elements of SL_2(Z/p^k) generated by the elementary matrices [[1,1],[0,1]] and [[1,0],[1,1]].
pub fn sl2_mod(p: u64, k: u32) -> Result<(FiniteGroup, Vec<PAdicMatrix>)> {
    let ring = Zpk::new(p, k)?;
    let a = PAdicMatrix::from_i64(ring, &[vec![1, 1], vec![0, 1]])?;
    let b = PAdicMatrix::from_i64(ring, &[vec![1, 0], vec![1, 1]])?;
    FiniteGroup::matrix_group(&format!("SL2(Z/{p}^{k})"), &[a, b])
}

/// Order of SL_n(F_p).
pub fn sl_order_mod_p(n: usize, p: u64) -> f64 {
    let pf = p as f64;
    let mut o = pf.powi((n * (n - 1) / 2) as i32);
    for i in 2..=n {
        o *= pf.powi(i as i32) - 1.0;
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_group_basics() {
        let g = FiniteGroup::cyclic(6).unwrap();
        assert_eq!(g.order(), 6);
        assert_eq!(g.identity(), 0);
        assert_eq!(g.mul(4, 5), 3);
        assert_eq!(g.inv(2), 4);
        assert!(g.is_abelian());
    }

    #[test]
    fn symmetric_group_s3() {
        let (g, elems) = FiniteGroup::symmetric(3).unwrap();
        assert_eq!(g.order(), 6);
        assert!(!g.is_abelian());
        assert_eq!(elems[g.identity()], vec![0, 1, 2]);
    }

    #[test]
    fn sl2_orders() {
        for p in [3u64, 5, 7] {
            let (g, _) = sl2_mod(p, 1).unwrap();
            assert_eq!(g.order() as f64, sl_order_mod_p(2, p));
        }
        let (g, _) = sl2_mod(3, 2).unwrap();
        assert_eq!(g.order(), 24 * 27);
    }

    #[test]
    fn padic_norm_and_balls() {
        let g = FiniteGroup::cyclic_padic(2, 3).unwrap();
        assert_eq!(g.norm(4), 0.25);
        let ball = g.ball(0.25);
        assert_eq!(ball, vec![0, 4]);
        assert!(g.is_subgroup(&ball));
        let labels = g.left_coset_labels(&ball).unwrap();
        assert_eq!(labels[5], 1);
    }

    #[test]
    fn product_max_metric() {
        let a = FiniteGroup::cyclic_padic(2, 2).unwrap();
        let b = FiniteGroup::cyclic(3).unwrap();
        let g = FiniteGroup::direct_product(&a, &b).unwrap();
        assert_eq!(g.order(), 12);
        assert_eq!(g.norm(2 * 3), 0.5);
        assert_eq!(g.norm(2 * 3 + 1), 1.0);
    }

    #[test]
    fn with_norms_rejects_non_invariant() {
        let (g, _) = FiniteGroup::symmetric(3).unwrap();
        let mut norms = vec![1.0; 6];
        norms[g.identity()] = 0.0;
        let t = (0..6).find(|&x| x != g.identity() && g.inv(x) == x).unwrap();
        norms[t] = 0.5;
        assert!(g.clone().with_norms(norms).is_err());
    }

    #[test]
    fn generate_rejects_oversized() {
        let r = Zpk::new(13, 2).unwrap();
        let a = PAdicMatrix::from_i64(r, &[vec![1, 1], vec![0, 1]]).unwrap();
        let b = PAdicMatrix::from_i64(r, &[vec![1, 0], vec![1, 1]]).unwrap();
        assert!(matches!(FiniteGroup::matrix_group("big", &[a, b]), Err(Error::TooLarge(_))));
    }
}
