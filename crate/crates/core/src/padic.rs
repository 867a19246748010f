//! Fixed-precision arithmetic in Z/p^K and matrices over it.
//!
//! Every value carries its ring `(p, K)`. Mixing rings is an error; there is
//! no implicit rounding. The modulus p^K must stay below 2^63.

use std::fmt;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n % 2 == 0 {
        return false;
    }
    let mut d = 3u64;
    while d.saturating_mul(d) <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// Lowest level on which exp and log are safe: 1 for p >= 5, 2 for p in {2, 3}.
pub fn safe_level(p: u64) -> u32 {
    if p >= 5 {
        1
    } else {
        2
    }
}

/// The ring Z/p^K.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Zpk {
    p: u64,
    k: u32,
    m: u64,
}

impl Zpk {
    pub fn new(p: u64, k: u32) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::InvalidParameter(format!("{p} is not prime")));
        }
        let m = p
            .checked_pow(k)
            .filter(|&m| m < (1u64 << 63))
            .ok_or_else(|| Error::TooLarge(format!("{p}^{k} does not fit in 63 bits")))?;
        Ok(Self { p, k, m })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn modulus(&self) -> u64 {
        self.m
    }

    pub fn with_k(&self, k: u32) -> Result<Self> {
        Self::new(self.p, k)
    }

    pub fn reduce(&self, x: u64) -> u64 {
        x % self.m
    }

    pub fn from_i128(&self, x: i128) -> u64 {
        x.rem_euclid(self.m as i128) as u64
    }

    pub fn from_bigint(&self, x: &BigInt) -> u64 {
        let m = BigInt::from(self.m);
        let mut r = x % &m;
        if r < BigInt::zero() {
            r += &m;
        }
        r.to_u64().unwrap()
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.m {
            s - self.m
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.m - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.m - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.m as u128) as u64
    }

    pub fn pow(&self, mut a: u64, mut e: u64) -> u64 {
        let mut r = 1 % self.m;
        a %= self.m;
        while e > 0 {
            if e & 1 == 1 {
                r = self.mul(r, a);
            }
            a = self.mul(a, a);
            e >>= 1;
        }
        r
    }

    /// p-adic valuation of a residue, saturating at K.
    pub fn val(&self, a: u64) -> u32 {
        let mut a = a % self.m;
        if a == 0 {
            return self.k;
        }
        let mut v = 0;
        while a % self.p == 0 {
            a /= self.p;
            v += 1;
        }
        v
    }

    pub fn is_unit(&self, a: u64) -> bool {
        self.k == 0 || a % self.p != 0
    }

    pub fn inv(&self, a: u64) -> Option<u64> {
        if self.m == 1 {
            return Some(0);
        }
        let (mut r0, mut r1) = (self.m as i128, (a % self.m) as i128);
        let (mut t0, mut t1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (t0, t1) = (t1, t0 - q * t1);
        }
        if r0 != 1 {
            return None;
        }
        Some(self.from_i128(t0))
    }

    /// p^e in this ring (zero once e >= K).
    pub fn p_pow(&self, e: u32) -> u64 {
        if e >= self.k {
            0
        } else {
            self.p.pow(e)
        }
    }

    /// Representative of a / p^e, valid modulo p^(K-e). Requires val(a) >= e.
    pub fn div_p_pow(&self, a: u64, e: u32) -> u64 {
        debug_assert!(self.val(a) >= e);
        if e >= self.k {
            0
        } else {
            a / self.p.pow(e)
        }
    }

    /// Signed representative in (-m/2, m/2].
    pub fn signed(&self, a: u64) -> i128 {
        let a = a as i128;
        let m = self.m as i128;
        if 2 * a > m {
            a - m
        } else {
            a
        }
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.random_range(0..self.m)
    }

    fn check_same(&self, other: &Zpk) -> Result<()> {
        if self != other {
            return Err(Error::PrecisionMismatch { p1: self.p, k1: self.k, p2: other.p, k2: other.k });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Valuation {
    Finite(u32),
    AtLeast(u32),
}

impl Valuation {
    pub fn value(self) -> u32 {
        match self {
            Valuation::Finite(v) | Valuation::AtLeast(v) => v,
        }
    }
}

/// An element of Z_p known to absolute precision p^-K.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PAdicScalar {
    ring: Zpk,
    value: u64,
}

impl PAdicScalar {
    pub fn new(p: u64, k: u32, value: u64) -> Result<Self> {
        let ring = Zpk::new(p, k)?;
        if value >= ring.m {
            return Err(Error::Range(format!("{value} is not below {p}^{k}")));
        }
        Ok(Self { ring, value })
    }

    pub fn from_i64(p: u64, k: u32, value: i64) -> Result<Self> {
        let ring = Zpk::new(p, k)?;
        Ok(Self { ring, value: ring.from_i128(value as i128) })
    }

    pub fn in_ring(ring: Zpk, value: u64) -> Self {
        Self { ring, value: ring.reduce(value) }
    }

    pub fn ring(&self) -> Zpk {
        self.ring
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn valuation(&self) -> Valuation {
        if self.value == 0 {
            Valuation::AtLeast(self.ring.k)
        } else {
            Valuation::Finite(self.ring.val(self.value))
        }
    }

    /// |x|_p, zero when x vanishes to the working precision.
    pub fn abs(&self) -> f64 {
        match self.valuation() {
            Valuation::AtLeast(_) => 0.0,
            Valuation::Finite(v) => (self.ring.p as f64).powi(-(v as i32)),
        }
    }

    pub fn try_add(&self, o: &Self) -> Result<Self> {
        self.ring.check_same(&o.ring)?;
        Ok(Self { ring: self.ring, value: self.ring.add(self.value, o.value) })
    }

    pub fn try_sub(&self, o: &Self) -> Result<Self> {
        self.ring.check_same(&o.ring)?;
        Ok(Self { ring: self.ring, value: self.ring.sub(self.value, o.value) })
    }

    pub fn try_mul(&self, o: &Self) -> Result<Self> {
        self.ring.check_same(&o.ring)?;
        Ok(Self { ring: self.ring, value: self.ring.mul(self.value, o.value) })
    }

    pub fn inv(&self) -> Option<Self> {
        self.ring.inv(self.value).map(|value| Self { ring: self.ring, value })
    }
}

pub fn valuation(x: &PAdicScalar) -> Valuation {
    x.valuation()
}

#[derive(Serialize, Deserialize)]
struct ScalarRepr {
    p: u64,
    #[serde(rename = "K")]
    k: u32,
    value: String,
}

impl Serialize for PAdicScalar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ScalarRepr { p: self.ring.p, k: self.ring.k, value: self.value.to_string() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PAdicScalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ScalarRepr::deserialize(d)?;
        let v: u64 = r.value.parse().map_err(serde::de::Error::custom)?;
        PAdicScalar::new(r.p, r.k, v).map_err(serde::de::Error::custom)
    }
}

/// A rows x cols matrix over Z/p^K. Square matrices may carry an SL tag;
/// equality and hashing ignore the tag.
#[derive(Clone, Debug)]
pub struct PAdicMatrix {
    ring: Zpk,
    rows: usize,
    cols: usize,
    data: Vec<u64>,
    sl: bool,
}

impl PartialEq for PAdicMatrix {
    fn eq(&self, o: &Self) -> bool {
        self.ring == o.ring && self.rows == o.rows && self.cols == o.cols && self.data == o.data
    }
}

impl Eq for PAdicMatrix {}

impl std::hash::Hash for PAdicMatrix {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.ring.hash(state);
        self.rows.hash(state);
        self.cols.hash(state);
        self.data.hash(state);
    }
}

impl PAdicMatrix {
    pub fn zeros(ring: Zpk, rows: usize, cols: usize) -> Self {
        Self { ring, rows, cols, data: vec![0; rows * cols], sl: false }
    }

    pub fn identity(ring: Zpk, n: usize) -> Self {
        let mut m = Self::zeros(ring, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1 % ring.m;
        }
        m
    }

    pub fn from_fn(ring: Zpk, rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> u64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(ring.reduce(f(i, j)));
            }
        }
        Self { ring, rows, cols, data, sl: false }
    }

    pub fn from_i64(ring: Zpk, rows: &[Vec<i64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self::from_fn(ring, r, c, |i, j| ring.from_i128(rows[i][j] as i128)))
    }

    pub fn ring(&self) -> Zpk {
        self.ring
    }

    pub fn p(&self) -> u64 {
        self.ring.p
    }

    pub fn k(&self) -> u32 {
        self.ring.k
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n(&self) -> usize {
        self.rows
    }

    pub fn is_sl_tagged(&self) -> bool {
        self.sl
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u64) {
        self.data[i * self.cols + j] = self.ring.reduce(v);
        self.sl = false;
    }

    pub fn scalar(&self, i: usize, j: usize) -> PAdicScalar {
        PAdicScalar { ring: self.ring, value: self.get(i, j) }
    }

    /// Tags the matrix as an element of SL_n, checking det = 1 exactly.
    pub fn into_sl(mut self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::Dimension("SL tag needs a square matrix".into()));
        }
        if self.det() != 1 % self.ring.m {
            return Err(Error::Precondition("determinant is not 1".into()));
        }
        self.sl = true;
        Ok(self)
    }

    fn check(&self, o: &Self) -> Result<()> {
        self.ring.check_same(&o.ring)
    }

    pub fn try_add(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        if (self.rows, self.cols) != (o.rows, o.cols) {
            return Err(Error::Dimension("add".into()));
        }
        let data = self.data.iter().zip(&o.data).map(|(&a, &b)| self.ring.add(a, b)).collect();
        Ok(Self { ring: self.ring, rows: self.rows, cols: self.cols, data, sl: false })
    }

    pub fn try_sub(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        if (self.rows, self.cols) != (o.rows, o.cols) {
            return Err(Error::Dimension("sub".into()));
        }
        let data = self.data.iter().zip(&o.data).map(|(&a, &b)| self.ring.sub(a, b)).collect();
        Ok(Self { ring: self.ring, rows: self.rows, cols: self.cols, data, sl: false })
    }

    pub fn try_mul(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        if self.cols != o.rows {
            return Err(Error::Dimension(format!("{}x{} * {}x{}", self.rows, self.cols, o.rows, o.cols)));
        }
        let m = self.ring.m as u128;
        let mut out = Self::zeros(self.ring, self.rows, o.cols);
        for i in 0..self.rows {
            for j in 0..o.cols {
                let mut acc: u128 = 0;
                for t in 0..self.cols {
                    acc += self.get(i, t) as u128 * o.get(t, j) as u128 % m;
                }
                out.data[i * o.cols + j] = (acc % m) as u64;
            }
        }
        out.sl = self.sl && o.sl;
        Ok(out)
    }

    pub fn add(&self, o: &Self) -> Self {
        self.try_add(o).expect("matrix add")
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.try_sub(o).expect("matrix sub")
    }

    pub fn mul(&self, o: &Self) -> Self {
        self.try_mul(o).expect("matrix mul")
    }

    pub fn neg(&self) -> Self {
        let data = self.data.iter().map(|&a| self.ring.neg(a)).collect();
        Self { ring: self.ring, rows: self.rows, cols: self.cols, data, sl: false }
    }

    pub fn scale(&self, c: u64) -> Self {
        let data = self.data.iter().map(|&a| self.ring.mul(a, c)).collect();
        Self { ring: self.ring, rows: self.rows, cols: self.cols, data, sl: false }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.ring, self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn trace(&self) -> u64 {
        (0..self.rows.min(self.cols)).fold(0, |acc, i| self.ring.add(acc, self.get(i, i)))
    }

    pub fn bracket(&self, o: &Self) -> Self {
        self.mul(o).sub(&o.mul(self))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&a| a == 0)
    }

    /// Minimum entry valuation, saturating at K.
    pub fn min_valuation(&self) -> u32 {
        self.data.iter().map(|&a| self.ring.val(a)).min().unwrap_or(self.ring.k)
    }

    /// Max-entry p-adic norm.
    pub fn norm(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            (self.ring.p as f64).powi(-(self.min_valuation() as i32))
        }
    }

    /// Reduction to a coarser precision k <= K.
    pub fn reduce_to(&self, k: u32) -> Result<Self> {
        if k > self.ring.k {
            return Err(Error::Range(format!("cannot reduce K={} to {k}", self.ring.k)));
        }
        let ring = self.ring.with_k(k)?;
        Ok(Self { ring, rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| ring.reduce(a)).collect(), sl: false })
    }

    /// Embeds the representatives into a finer precision k >= K (a lift, not a canonical value).
    pub fn lift_to(&self, k: u32) -> Result<Self> {
        if k < self.ring.k {
            return Err(Error::Range(format!("cannot lift K={} to {k}", self.ring.k)));
        }
        let ring = self.ring.with_k(k)?;
        Ok(Self { ring, rows: self.rows, cols: self.cols, data: self.data.clone(), sl: false })
    }

    /// Exact division by p^e; the result lives mod p^(K-e).
    pub fn div_p_pow(&self, e: u32) -> Result<Self> {
        if self.min_valuation() < e {
            return Err(Error::Precondition(format!("entries not divisible by {}^{e}", self.ring.p)));
        }
        let ring = self.ring.with_k(self.ring.k - e.min(self.ring.k))?;
        let data = self.data.iter().map(|&a| ring.reduce(self.ring.div_p_pow(a, e))).collect();
        Ok(Self { ring, rows: self.rows, cols: self.cols, data, sl: false })
    }

    /// Reinterprets the representatives in the same ring after dividing by p^e.
    fn div_p_pow_same_ring(&self, e: u32) -> Self {
        let data = self.data.iter().map(|&a| self.ring.div_p_pow(a, e)).collect();
        Self { ring: self.ring, rows: self.rows, cols: self.cols, data, sl: false }
    }

    pub fn det(&self) -> u64 {
        assert_eq!(self.rows, self.cols, "det of a non-square matrix");
        let n = self.rows;
        if n == 0 {
            return 1 % self.ring.m;
        }
        // Bareiss over the integers on the representatives.
        let mut a: Vec<Vec<BigInt>> =
            (0..n).map(|i| (0..n).map(|j| BigInt::from(self.get(i, j))).collect()).collect();
        let mut sign = 1i32;
        let mut prev = BigInt::from(1);
        for k in 0..n - 1 {
            if a[k][k].is_zero() {
                match (k + 1..n).find(|&i| !a[i][k].is_zero()) {
                    Some(i) => {
                        a.swap(i, k);
                        sign = -sign;
                    }
                    None => return 0,
                }
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    let v = (&a[i][j] * &a[k][k] - &a[i][k] * &a[k][j]) / &prev;
                    a[i][j] = v;
                }
            }
            prev = a[k][k].clone();
        }
        let d = &a[n - 1][n - 1] * sign;
        self.ring.from_bigint(&d)
    }

    /// Inverse when the determinant is a unit.
    pub fn inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::Dimension("inverse of a non-square matrix".into()));
        }
        let n = self.rows;
        let r = self.ring;
        let mut a = self.clone();
        let mut inv = Self::identity(r, n);
        for c in 0..n {
            let piv = (c..n)
                .find(|&i| r.is_unit(a.get(i, c)))
                .ok_or_else(|| Error::Precondition("matrix is not invertible mod p".into()))?;
            if piv != c {
                a.swap_rows(piv, c);
                inv.swap_rows(piv, c);
            }
            let u = r.inv(a.get(c, c)).unwrap();
            a.scale_row(c, u);
            inv.scale_row(c, u);
            for i in 0..n {
                if i != c {
                    let f = a.get(i, c);
                    if f != 0 {
                        a.axpy_row(i, c, r.neg(f));
                        inv.axpy_row(i, c, r.neg(f));
                    }
                }
            }
        }
        inv.sl = self.sl;
        Ok(inv)
    }

    pub fn swap_rows(&mut self, i: usize, j: usize) {
        for c in 0..self.cols {
            self.data.swap(i * self.cols + c, j * self.cols + c);
        }
    }

    pub fn swap_cols(&mut self, i: usize, j: usize) {
        for r in 0..self.rows {
            self.data.swap(r * self.cols + i, r * self.cols + j);
        }
    }

    pub fn scale_row(&mut self, i: usize, u: u64) {
        for c in 0..self.cols {
            let v = self.ring.mul(self.get(i, c), u);
            self.data[i * self.cols + c] = v;
        }
    }

    /// row_i += f * row_j
    pub fn axpy_row(&mut self, i: usize, j: usize, f: u64) {
        for c in 0..self.cols {
            let v = self.ring.add(self.get(i, c), self.ring.mul(f, self.get(j, c)));
            self.data[i * self.cols + c] = v;
        }
    }

    /// col_i += f * col_j
    pub fn axpy_col(&mut self, i: usize, j: usize, f: u64) {
        for r in 0..self.rows {
            let v = self.ring.add(self.get(r, i), self.ring.mul(f, self.get(r, j)));
            self.data[r * self.cols + i] = v;
        }
    }

    pub fn random<R: Rng + ?Sized>(ring: Zpk, rows: usize, cols: usize, rng: &mut R) -> Self {
        Self::from_fn(ring, rows, cols, |_, _| ring.random(rng))
    }

    /// Matrix with entries of valuation at least `v`.
    pub fn random_divisible<R: Rng + ?Sized>(ring: Zpk, rows: usize, cols: usize, v: u32, rng: &mut R) -> Self {
        let pv = ring.p_pow(v);
        Self::from_fn(ring, rows, cols, |_, _| ring.mul(ring.random(rng), pv))
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols && *self == Self::identity(self.ring, self.rows)
    }

    pub fn matvec(&self, x: &[u64]) -> Vec<u64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| (0..self.cols).fold(0, |acc, j| self.ring.add(acc, self.ring.mul(self.get(i, j), x[j]))))
            .collect()
    }
}

impl fmt::Display for PAdicMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{}", self.ring.signed(self.get(i, j)))?;
            }
        }
        write!(f, "] mod {}^{}", self.ring.p, self.ring.k)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    p: u64,
    #[serde(rename = "K")]
    k: u32,
    n: usize,
    entries: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    sl: bool,
}

impl Serialize for PAdicMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = (0..self.rows).map(|i| (0..self.cols).map(|j| self.get(i, j).to_string()).collect()).collect();
        MatrixRepr { p: self.ring.p, k: self.ring.k, n: self.rows, entries, sl: self.sl }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PAdicMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = MatrixRepr::deserialize(d)?;
        let ring = Zpk::new(r.p, r.k).map_err(D::Error::custom)?;
        if r.entries.len() != r.n {
            return Err(D::Error::custom("row count does not match n"));
        }
        let cols = r.entries.first().map_or(0, |row| row.len());
        let mut m = PAdicMatrix::zeros(ring, r.n, cols);
        for (i, row) in r.entries.iter().enumerate() {
            if row.len() != cols {
                return Err(D::Error::custom("ragged rows"));
            }
            for (j, s) in row.iter().enumerate() {
                let v: u64 = s.parse().map_err(D::Error::custom)?;
                if v >= ring.m {
                    return Err(D::Error::custom("entry out of range"));
                }
                m.data[i * cols + j] = v;
            }
        }
        if r.sl {
            m = m.into_sl().map_err(D::Error::custom)?;
        }
        Ok(m)
    }
}

/// A matrix congruent to I modulo p^level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CongruenceElement {
    matrix: PAdicMatrix,
    level: u32,
}

impl CongruenceElement {
    pub fn new(matrix: PAdicMatrix, level: u32) -> Result<Self> {
        if matrix.rows != matrix.cols {
            return Err(Error::Dimension("congruence element must be square".into()));
        }
        if level == 0 {
            return Err(Error::InvalidParameter("level must be at least 1".into()));
        }
        let actual = level_of(&matrix);
        if actual < level {
            return Err(Error::Precondition(format!("matrix is congruent to I only to level {actual}, not {level}")));
        }
        Ok(Self { matrix, level })
    }

    pub fn matrix(&self) -> &PAdicMatrix {
        &self.matrix
    }

    pub fn level(&self) -> u32 {
        self.level
    }
}

/// Largest l with g = I mod p^l (K when g = I).
pub fn level_of(g: &PAdicMatrix) -> u32 {
    g.sub(&PAdicMatrix::identity(g.ring, g.rows)).min_valuation()
}

fn min_exp_level(p: u64) -> u32 {
    if p == 2 {
        2
    } else {
        1
    }
}

fn vp_u64(p: u64, mut j: u64) -> u32 {
    let mut v = 0;
    while j % p == 0 {
        j /= p;
        v += 1;
    }
    v
}

/// exp(X) for X with entry valuation >= 1 (>= 2 when p = 2).
///
/// Each term X^j/j! is evaluated as p^(j - v(j!)) (X/p)^j u_j^-1 with u_j the
/// unit part of j!, so nothing is ever divided by p.
pub fn padic_exp(x: &PAdicMatrix) -> Result<CongruenceElement> {
    let r = x.ring;
    let p = r.p;
    let vmin = x.min_valuation();
    if x.rows != x.cols {
        return Err(Error::Dimension("exp of a non-square matrix".into()));
    }
    if vmin < min_exp_level(p) {
        return Err(Error::Precondition(format!("exp needs valuation >= {}, got {vmin}", min_exp_level(p))));
    }
    let n = x.rows;
    let z = x.div_p_pow_same_ring(1);
    let vz = (vmin - 1) as i64;
    let mut sum = PAdicMatrix::identity(r, n);
    let mut zpow = PAdicMatrix::identity(r, n);
    let mut vfact: u32 = 0;
    let mut unit_fact: u64 = 1 % r.m;
    for j in 1u64.. {
        let lower = j as i64 * (1 + vz) - ((j as i64 - 1) / (p as i64 - 1));
        if lower >= r.k as i64 {
            break;
        }
        vfact += vp_u64(p, j);
        unit_fact = r.mul(unit_fact, j / p.pow(vp_u64(p, j)) % r.m);
        zpow = zpow.mul(&z);
        let e = j as u32 - vfact;
        let coef = r.mul(r.p_pow(e), r.inv(unit_fact).unwrap());
        sum = sum.add(&zpow.scale(coef));
    }
    let level = level_of(&sum).max(1);
    CongruenceElement::new(sum, level)
}

/// log(g) for g at level >= 1 (>= 2 when p = 2).
pub fn padic_log(g: &CongruenceElement) -> Result<PAdicMatrix> {
    let r = g.matrix.ring;
    let p = r.p;
    if g.level < min_exp_level(p) {
        return Err(Error::Precondition(format!("log needs level >= {}, got {}", min_exp_level(p), g.level)));
    }
    let n = g.matrix.rows;
    let a = g.matrix.sub(&PAdicMatrix::identity(r, n));
    let vz = a.min_valuation() as i64 - 1;
    let z = a.div_p_pow_same_ring(1);
    let mut sum = PAdicMatrix::zeros(r, n, n);
    let mut zpow = PAdicMatrix::identity(r, n);
    for j in 1u64.. {
        let log_floor = {
            let (mut t, mut c) = (j, 0i64);
            while t >= p {
                t /= p;
                c += 1;
            }
            c
        };
        if j as i64 * (1 + vz) - log_floor >= r.k as i64 {
            break;
        }
        zpow = zpow.mul(&z);
        let vj = vp_u64(p, j);
        let e = j as u32 - vj;
        let unit = (j / p.pow(vj)) % r.m;
        let mut coef = r.mul(r.p_pow(e), r.inv(unit).unwrap());
        if j % 2 == 0 {
            coef = r.neg(coef);
        }
        sum = sum.add(&zpow.scale(coef));
    }
    Ok(sum)
}

/// Largest n allowed for a finite log at level l: 2l for odd p, 2l - 1 for p = 2.
pub fn finite_log_max_level(p: u64, l: u32) -> u32 {
    if p == 2 {
        2 * l - 1
    } else {
        2 * l
    }
}

fn check_finite_log_range(p: u64, l: u32, n: u32, k: u32) -> Result<()> {
    let k0 = safe_level(p);
    if l < k0 {
        return Err(Error::Range(format!("level l={l} is below the safe level {k0}")));
    }
    if n < l || n > finite_log_max_level(p, l) {
        return Err(Error::Range(format!("n={n} outside [{l}, {}]", finite_log_max_level(p, l))));
    }
    if n > k {
        return Err(Error::Range(format!("n={n} exceeds the working precision {k}")));
    }
    Ok(())
}

/// Finite logarithm (g - I)/p^l reduced mod p^(n-l).
pub fn finite_log(g: &CongruenceElement, l: u32, n: u32) -> Result<PAdicMatrix> {
    let r = g.matrix.ring;
    check_finite_log_range(r.p, l, n, r.k)?;
    if g.level < l {
        return Err(Error::Range(format!("element has level {} < l={l}", g.level)));
    }
    let a = g.matrix.sub(&PAdicMatrix::identity(r, g.matrix.rows));
    a.div_p_pow(l)?.reduce_to(n - l)
}

/// Checks Psi([g, h]) = [Psi(g), Psi(h)] modulo p^(n'' - l - l'), n'' = min(n + l', n' + l).
pub fn commutator_finite_log_check(
    g: &CongruenceElement,
    l: u32,
    n: u32,
    h: &CongruenceElement,
    l2: u32,
    n2: u32,
) -> Result<bool> {
    commutator_finite_log_check_with(g, l, n, h, l2, n2, |a, b| a.bracket(b))
}

/// Same check with a caller-supplied bracket.
pub fn commutator_finite_log_check_with(
    g: &CongruenceElement,
    l: u32,
    n: u32,
    h: &CongruenceElement,
    l2: u32,
    n2: u32,
    bracket: impl Fn(&PAdicMatrix, &PAdicMatrix) -> PAdicMatrix,
) -> Result<bool> {
    let r = g.matrix.ring;
    r.check_same(&h.matrix.ring)?;
    let psi_g = finite_log(g, l, n)?;
    let psi_h = finite_log(h, l2, n2)?;
    let n3 = (n + l2).min(n2 + l);
    if n3 > r.k {
        return Err(Error::Range(format!("n''={n3} exceeds precision {}", r.k)));
    }
    let target = n3 - l - l2;
    let gm = &g.matrix;
    let hm = &h.matrix;
    let comm = gm.mul(hm).mul(&gm.inverse()?).mul(&hm.inverse()?);
    let lhs = comm.sub(&PAdicMatrix::identity(r, gm.rows)).div_p_pow(l + l2)?.reduce_to(target)?;
    let ring_t = r.with_k(target)?;
    let a = PAdicMatrix::from_fn(ring_t, psi_g.rows, psi_g.cols, |i, j| psi_g.get(i, j));
    let b = PAdicMatrix::from_fn(ring_t, psi_h.rows, psi_h.cols, |i, j| psi_h.get(i, j));
    Ok(lhs == bracket(&a, &b))
}

/// Smith form U A V = diag(p^d_0, ..., p^d_{r-1}, 0, ...).
#[derive(Clone, Debug)]
pub struct Smith {
    pub u: PAdicMatrix,
    pub v: PAdicMatrix,
    /// Pivot valuations in order; `None` marks a pivot that is zero mod p^K.
    pub diag: Vec<Option<u32>>,
}

impl Smith {
    pub fn rank(&self) -> usize {
        self.diag.iter().filter(|d| d.is_some()).count()
    }
}

pub fn smith(a: &PAdicMatrix) -> Smith {
    let r = a.ring;
    let (m, n) = (a.rows, a.cols);
    let mut w = a.clone();
    w.sl = false;
    let mut u = PAdicMatrix::identity(r, m);
    let mut v = PAdicMatrix::identity(r, n);
    let mut diag = Vec::new();
    for t in 0..m.min(n) {
        let mut best: Option<(u32, usize, usize)> = None;
        for i in t..m {
            for j in t..n {
                let x = w.get(i, j);
                if x != 0 {
                    let val = r.val(x);
                    if best.is_none_or(|(b, _, _)| val < b) {
                        best = Some((val, i, j));
                    }
                }
            }
        }
        let Some((val, bi, bj)) = best else {
            diag.extend(std::iter::repeat_n(None, m.min(n) - t));
            break;
        };
        w.swap_rows(t, bi);
        u.swap_rows(t, bi);
        w.swap_cols(t, bj);
        v.swap_cols(t, bj);
        let unit = r.div_p_pow(w.get(t, t), val);
        let uinv = r.inv(unit).unwrap();
        w.scale_row(t, uinv);
        u.scale_row(t, uinv);
        for i in t + 1..m {
            let x = w.get(i, t);
            if x != 0 {
                let c = r.div_p_pow(x, val);
                w.axpy_row(i, t, r.neg(c));
                u.axpy_row(i, t, r.neg(c));
            }
        }
        for j in t + 1..n {
            let x = w.get(t, j);
            if x != 0 {
                let c = r.div_p_pow(x, val);
                w.axpy_col(j, t, r.neg(c));
                v.axpy_col(j, t, r.neg(c));
            }
        }
        diag.push(Some(val));
    }
    Smith { u, v, diag }
}

/// Solves A x = b mod p^K, returning one solution if any exists.
pub fn solve_linear(a: &PAdicMatrix, b: &[u64]) -> Option<Vec<u64>> {
    let r = a.ring;
    let s = smith(a);
    let y = s.u.matvec(b);
    let mut z = vec![0u64; a.cols];
    for (i, yi) in y.iter().enumerate() {
        match s.diag.get(i).copied().flatten() {
            Some(d) => {
                if r.val(*yi) < d {
                    return None;
                }
                z[i] = r.div_p_pow(*yi, d);
            }
            None => {
                if *yi != 0 {
                    return None;
                }
            }
        }
    }
    Some(s.v.matvec(&z))
}
