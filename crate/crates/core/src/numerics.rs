//! Quantitative inverse function theorems, σ(A), truncated BCH with a tail
//! bound, zonotope inradii and the adjoint-span probes on SU(2).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::unitary::{self, c, CMat};
use crate::padic::{self, PAdicMatrix, Zpk};

/// σ(A) for an m×n real matrix with m ≤ n: the m-th singular value.
pub fn sigma_real(a: &DMatrix<f64>) -> Result<f64> {
    let (m, n) = a.shape();
    if m > n {
        return Err(Error::Dimension(format!("σ needs m <= n, got {m}x{n}")));
    }
    if m == 0 {
        return Err(Error::Empty);
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite entry".into()));
    }
    Ok(a.clone().svd(false, false).singular_values.min())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PAdicSigma {
    pub valuation: u32,
    pub value: f64,
}

/// σ(A) = p^{−v} with v the largest elementary-divisor valuation.
pub fn sigma_padic(a: &PAdicMatrix) -> Result<PAdicSigma> {
    if a.rows() > a.cols() {
        return Err(Error::Dimension(format!("σ needs m <= n, got {}x{}", a.rows(), a.cols())));
    }
    let sm = padic::smith(a);
    if sm.diag.len() < a.rows() || sm.diag.iter().any(|d| d.is_none()) {
        return Err(Error::Precondition(format!("rank deficient modulo {}^{}", a.p(), a.k())));
    }
    let v = sm.diag.iter().flatten().copied().max().unwrap_or(0);
    Ok(PAdicSigma { valuation: v, value: (a.p() as f64).powi(-(v as i32)) })
}

pub type VecFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type JacFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A C² map Φ: (x₀)_{r₀} ⊂ Rⁿ → R^m with ‖∂_{jj'}Φ‖ ≤ α.
#[derive(Clone)]
pub struct SmoothMapProbe {
    phi: VecFn,
    jac: JacFn,
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub r0: f64,
    pub n: usize,
    pub m: usize,
}

impl std::fmt::Debug for SmoothMapProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothMapProbe").field("alpha", &self.alpha).field("x0", &self.x0).field("r0", &self.r0).field("n", &self.n).field("m", &self.m).finish()
    }
}

/// Central-difference Jacobian.
pub fn fd_jacobian(phi: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], m: usize, h: f64) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for col in 0..x.len() {
        xp[col] = x[col] + h;
        let fp = phi(&xp);
        xp[col] = x[col] - h;
        let fm = phi(&xp);
        xp[col] = x[col];
        for row in 0..m {
            j[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    j
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>().sqrt()
}

impl SmoothMapProbe {
    pub fn new(phi: VecFn, jac: JacFn, alpha: f64, x0: Vec<f64>, r0: f64, m: usize) -> Result<Self> {
        let n = x0.len();
        if m > n || m == 0 {
            return Err(Error::Dimension(format!("need 0 < m <= n, got m={m}, n={n}")));
        }
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("α must be >= 0, got {alpha}")));
        }
        if !(r0 > 0.0 && r0 <= 1.0) {
            return Err(Error::InvalidParameter(format!("r0 must lie in (0, 1], got {r0}")));
        }
        let probe = Self { phi, jac, alpha, x0, r0, n, m };
        if probe.eval(&probe.x0).len() != m {
            return Err(Error::Dimension("Φ has the wrong output dimension".into()));
        }
        let x0 = probe.x0.clone();
        let gap = probe.audit(&x0);
        if gap > 1e-6 {
            return Err(Error::Precondition(format!("Jacobian oracle disagrees with finite differences by {gap:e}")));
        }
        Ok(probe)
    }

    /// Φ_i(x) = b_i + (A(x − x₀))_i + ½(x − x₀)ᵀQ_i(x − x₀) with α computed exactly.
    pub fn quadratic(b: Vec<f64>, a: DMatrix<f64>, q: Vec<DMatrix<f64>>, x0: Vec<f64>, r0: f64) -> Result<Self> {
        let (m, n) = a.shape();
        if b.len() != m || q.len() != m || x0.len() != n || q.iter().any(|qi| qi.shape() != (n, n)) {
            return Err(Error::Dimension("inconsistent quadratic map data".into()));
        }
        let q: Vec<DMatrix<f64>> = q.into_iter().map(|qi| (&qi + qi.transpose()) * 0.5).collect();
        let mut alpha = 0.0f64;
        for j in 0..n {
            for jj in 0..n {
                alpha = alpha.max(q.iter().map(|qi| qi[(j, jj)].powi(2)).sum::<f64>().sqrt());
            }
        }
        let (a2, q2, x02, x0c) = (a.clone(), q.clone(), x0.clone(), x0.clone());
        let phi = move |x: &[f64]| -> Vec<f64> {
            let d = DVector::from_iterator(n, x.iter().zip(&x0).map(|(u, v)| u - v));
            let lin = &a * &d;
            (0..m).map(|i| b[i] + lin[i] + 0.5 * d.dot(&(&q[i] * &d))).collect()
        };
        let jac = move |x: &[f64]| -> DMatrix<f64> {
            let d = DVector::from_iterator(n, x.iter().zip(&x02).map(|(u, v)| u - v));
            let mut j = a2.clone();
            for i in 0..m {
                let g = &q2[i] * &d;
                for col in 0..n {
                    j[(i, col)] += g[col];
                }
            }
            j
        };
        Self::new(Arc::new(phi), Arc::new(jac), alpha, x0c, r0, m)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.phi)(x)
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        (self.jac)(x)
    }

    /// Largest entrywise gap between the Jacobian oracle and central differences, relative to max(1, |J|).
    pub fn audit(&self, x: &[f64]) -> f64 {
        let fd = fd_jacobian(&*self.phi, x, self.m, 1e-6);
        let j = self.jacobian(x);
        fd.iter().zip(j.iter()).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max)
    }

    pub fn sigma0(&self) -> Result<f64> {
        sigma_real(&self.jacobian(&self.x0))
    }

    /// min(r₀, σ₀/(2mn√α)).
    pub fn admissible_radius(&self, sigma0: f64) -> f64 {
        if self.alpha == 0.0 {
            return self.r0;
        }
        self.r0.min(sigma0 / (2.0 * (self.m * self.n) as f64 * self.alpha.sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IftSolution {
    pub x: Vec<f64>,
    pub residual: f64,
    pub distance: f64,
    pub iterations: usize,
}

pub const IFT_TOL: f64 = 1e-10;

/// Preimage of y inside (x₀)_r when ‖y − Φ(x₀)‖ ≤ σ₀r/4 and r < min(r₀, σ₀/(2mn√α)).
///
/// Searches x = x₀ + Lv over the ball ‖v‖ ≤ r, where L spans the top right
/// singular directions of dΦ(x₀); Newton steps with Armijo backtracking and a
/// gradient fallback.
pub fn solve_real_ift(probe: &SmoothMapProbe, y: &[f64], r: f64) -> Result<IftSolution> {
    let m = probe.m;
    if y.len() != m {
        return Err(Error::Dimension("target has the wrong dimension".into()));
    }
    let s0 = probe.sigma0()?;
    if s0 <= 0.0 {
        return Err(Error::Precondition("dΦ(x₀) is not surjective".into()));
    }
    let rmax = probe.admissible_radius(s0);
    if !(r > 0.0 && r < rmax) {
        return Err(Error::Precondition(format!("radius {r} outside (0, {rmax})")));
    }
    let fx0 = probe.eval(&probe.x0);
    let dist: Vec<f64> = fx0.iter().zip(y).map(|(a, b)| a - b).collect();
    if norm(&dist) > s0 * r / 4.0 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("target at distance {} outside the guaranteed ball {}", norm(&dist), s0 * r / 4.0)));
    }
    let svd = probe.jacobian(&probe.x0).svd(false, true);
    let l = svd.v_t.expect("requested").transpose();
    let point = |v: &DVector<f64>| -> Vec<f64> {
        let d = &l * v;
        probe.x0.iter().enumerate().map(|(i, x)| x + d[i]).collect()
    };
    let resid = |v: &DVector<f64>| -> Vec<f64> { probe.eval(&point(v)).iter().zip(y).map(|(a, b)| a - b).collect() };
    let clamp = |v: DVector<f64>| -> DVector<f64> {
        let nv = v.norm();
        if nv > r {
            v * (r / nv)
        } else {
            v
        }
    };
    let mut v = DVector::zeros(m);
    let mut f = resid(&v);
    let mut iterations = 0;
    while norm(&f) > 1e-13 && iterations < 200 {
        iterations += 1;
        let jl = probe.jacobian(&point(&v)) * &l;
        let fv = DVector::from_column_slice(&f);
        let f2 = fv.norm_squared();
        let try_step = |dir: &DVector<f64>, slope: f64| -> Option<(DVector<f64>, Vec<f64>)> {
            let mut t = 1.0;
            while t > 1e-12 {
                let cand = clamp(&v + dir * t);
                let fc = resid(&cand);
                if norm(&fc).powi(2) <= f2 - 1e-4 * t * slope {
                    return Some((cand, fc));
                }
                t *= 0.5;
            }
            None
        };
        let newton = jl.clone().lu().solve(&(-&fv));
        let accepted = newton.and_then(|d| try_step(&d, 2.0 * f2)).or_else(|| {
            let g = jl.transpose() * &fv * 2.0;
            let slope = g.norm_squared();
            try_step(&(-&g), slope)
        });
        match accepted {
            Some((nv, nf)) => {
                v = nv;
                f = nf;
            }
            None => break,
        }
    }
    let x = point(&v);
    let residual = norm(&f);
    let distance = norm(&x.iter().zip(&probe.x0).map(|(a, b)| a - b).collect::<Vec<_>>());
    if residual > IFT_TOL || distance > r * (1.0 + 1e-12) {
        return Err(Error::NotConverged(format!("IFT solve stalled at residual {residual:e} (distance {distance}) under certified preconditions")));
    }
    Ok(IftSolution { x, residual, distance, iterations })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monomial {
    pub exps: Vec<u32>,
    pub coeff: u64,
}

/// Φ(x) = Σ c_{i,j} (x − x₀)^i with coefficients in Z/p^K.
#[derive(Clone, Debug, PartialEq)]
pub struct PAdicPolyMap {
    ring: Zpk,
    x0: Vec<u64>,
    polys: Vec<Vec<Monomial>>,
}

impl PAdicPolyMap {
    pub fn new(ring: Zpk, x0: Vec<u64>, polys: Vec<Vec<Monomial>>) -> Result<Self> {
        let n = x0.len();
        if polys.len() > n || polys.is_empty() {
            return Err(Error::Dimension(format!("need 0 < m <= n, got m={}, n={n}", polys.len())));
        }
        if polys.iter().flatten().any(|mo| mo.exps.len() != n) {
            return Err(Error::Dimension("monomial with the wrong number of exponents".into()));
        }
        let x0 = x0.into_iter().map(|v| ring.reduce(v)).collect();
        let polys = polys.into_iter().map(|p| p.into_iter().map(|mo| Monomial { coeff: ring.reduce(mo.coeff), ..mo }).collect()).collect();
        Ok(Self { ring, x0, polys })
    }

    /// A random map of degree 2 whose linear part has σ = p^{−k₀} exactly.
    pub fn random<R: Rng + ?Sized>(ring: Zpk, n: usize, m: usize, k0: u32, rng: &mut R) -> Result<Self> {
        if m > n || m == 0 {
            return Err(Error::Dimension("need 0 < m <= n".into()));
        }
        let unimodular = |d: usize, rng: &mut R| loop {
            let u = PAdicMatrix::random(ring, d, d, rng);
            if ring.is_unit(u.det()) {
                break u;
            }
        };
        let u = unimodular(m, rng);
        let v = unimodular(n, rng);
        let mut d = PAdicMatrix::zeros(ring, m, n);
        for i in 0..m {
            d.set(i, i, if i + 1 == m { ring.p_pow(k0) } else { 1 });
        }
        let a = u.mul(&d).mul(&v);
        let x0: Vec<u64> = (0..n).map(|_| ring.random(rng)).collect();
        let mut polys = Vec::with_capacity(m);
        for i in 0..m {
            let mut p = vec![Monomial { exps: vec![0; n], coeff: ring.random(rng) }];
            for j in 0..n {
                let mut e = vec![0; n];
                e[j] = 1;
                p.push(Monomial { exps: e, coeff: a.get(i, j) });
                for jj in j..n {
                    let mut e = vec![0; n];
                    e[j] += 1;
                    e[jj] += 1;
                    p.push(Monomial { exps: e, coeff: ring.random(rng) });
                }
            }
            polys.push(p);
        }
        Self::new(ring, x0, polys)
    }

    pub fn ring(&self) -> Zpk {
        self.ring
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn m(&self) -> usize {
        self.polys.len()
    }

    pub fn x0(&self) -> &[u64] {
        &self.x0
    }

    fn shifted(&self, x: &[u64]) -> Vec<u64> {
        x.iter().zip(&self.x0).map(|(&a, &b)| self.ring.sub(a, b)).collect()
    }

    pub fn eval(&self, x: &[u64]) -> Vec<u64> {
        let r = self.ring;
        let d = self.shifted(x);
        self.polys
            .iter()
            .map(|p| {
                p.iter().fold(0, |acc, mo| {
                    let t = mo.exps.iter().zip(&d).fold(mo.coeff, |t, (&e, &di)| r.mul(t, r.pow(di, e as u64)));
                    r.add(acc, t)
                })
            })
            .collect()
    }

    pub fn jacobian(&self, x: &[u64]) -> PAdicMatrix {
        let r = self.ring;
        let d = self.shifted(x);
        let mut j = PAdicMatrix::zeros(r, self.m(), self.n());
        for (i, p) in self.polys.iter().enumerate() {
            for mo in p {
                for (col, &e) in mo.exps.iter().enumerate() {
                    if e == 0 {
                        continue;
                    }
                    let mut t = r.mul(mo.coeff, r.reduce(e as u64));
                    for (k, (&ek, &dk)) in mo.exps.iter().zip(&d).enumerate() {
                        let power = if k == col { ek - 1 } else { ek };
                        t = r.mul(t, r.pow(dk, power as u64));
                    }
                    j.set(i, col, r.add(j.get(i, col), t));
                }
            }
        }
        j
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PAdicIftSolution {
    pub x: Vec<u64>,
    pub steps: usize,
}

/// Preimage of y in (x₀)_{p^{−l}} when σ(dΦ(x₀)) ≥ p^{−k₀}, l ≥ k₀ + 1 and ‖y − Φ(x₀)‖ ≤ p^{−k₀−l}.
pub fn solve_padic_ift(map: &PAdicPolyMap, y: &[u64], k0: u32, l: u32) -> Result<PAdicIftSolution> {
    let r = map.ring();
    if y.len() != map.m() {
        return Err(Error::Dimension("target has the wrong dimension".into()));
    }
    if l < k0 + 1 {
        return Err(Error::Precondition(format!("l={l} must be at least k0 + 1 = {}", k0 + 1)));
    }
    let sigma = sigma_padic(&map.jacobian(map.x0()))?;
    if sigma.valuation > k0 {
        return Err(Error::Precondition(format!("σ(dΦ(x₀)) = p^-{} < p^-{k0}", sigma.valuation)));
    }
    let y: Vec<u64> = y.iter().map(|&v| r.reduce(v)).collect();
    let err = |x: &[u64]| -> Vec<u64> { map.eval(x).iter().zip(&y).map(|(&a, &b)| r.sub(b, a)).collect() };
    let min_val = |e: &[u64]| e.iter().map(|&v| r.val(v)).min().unwrap_or(r.k());
    let mut x = map.x0().to_vec();
    let mut e = err(&x);
    if min_val(&e) < (k0 + l).min(r.k()) {
        return Err(Error::Precondition(format!("target is only within p^-{} of Φ(x₀)", min_val(&e))));
    }
    let mut steps = 0;
    while e.iter().any(|&v| v != 0) {
        if steps == 200 {
            return Err(Error::NotConverged("Hensel–Newton did not terminate".into()));
        }
        steps += 1;
        let before = min_val(&e);
        let sm = padic::smith(&map.jacobian(&x));
        let b = sm.u.matvec(&e);
        let mut z = vec![0u64; map.n()];
        for (i, d) in sm.diag.iter().enumerate() {
            let d = d.ok_or_else(|| Error::NotConverged("Jacobian lost rank".into()))?;
            if r.val(b[i]) < d {
                return Err(Error::NotConverged("Newton step not solvable".into()));
            }
            z[i] = r.div_p_pow(b[i], d);
        }
        let delta = sm.v.matvec(&z);
        x = x.iter().zip(&delta).map(|(&a, &b)| r.add(a, b)).collect();
        e = err(&x);
        if e.iter().any(|&v| v != 0) && min_val(&e) <= before {
            return Err(Error::NotConverged(format!("residual valuation stuck at {before}")));
        }
    }
    let moved = x.iter().zip(map.x0()).map(|(&a, &b)| r.val(r.sub(a, b))).min().unwrap_or(r.k());
    if moved < l.min(r.k()) {
        return Err(Error::NotConverged(format!("solution left the ball p^-{l}")));
    }
    Ok(PAdicIftSolution { x, steps })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BchResult {
    pub value: CMat,
    pub order: u32,
    /// Bound on ‖log(eˣeʸ) − value‖; infinite when ‖x‖ + ‖y‖ ≥ ln 2.
    pub tail_bound: f64,
}

/// Coefficients a_n of −log(2 − eᵘ) = Σ a_n uⁿ, n = 0..=nmax.
fn log_majorant_coeffs(nmax: usize) -> Vec<f64> {
    // h = eᵘ/(2 − eᵘ) = d/du(−log(2 − eᵘ)); h·(2 − eᵘ) = eᵘ.
    let mut fact = vec![1.0f64; nmax + 1];
    for k in 1..=nmax {
        fact[k] = fact[k - 1] * k as f64;
    }
    let mut h = vec![0.0f64; nmax];
    for k in 0..nmax {
        h[k] = 1.0 / fact[k] + (1..=k).map(|j| h[k - j] / fact[j]).sum::<f64>();
    }
    let mut a = vec![0.0; nmax + 1];
    for n in 1..=nmax {
        a[n] = h[n - 1] / n as f64;
    }
    a
}

/// Σ_{n > order} a_n sⁿ, the majorant of the BCH tail after `order` terms.
pub fn bch_tail_bound(s: f64, order: u32) -> f64 {
    if s >= std::f64::consts::LN_2 {
        return f64::INFINITY;
    }
    let a = log_majorant_coeffs(order as usize);
    let head: f64 = (1..=order as usize).map(|n| a[n] * s.powi(n as i32)).sum();
    (-(2.0 - s.exp()).ln() - head).max(0.0)
}

/// Degree-≤order part of log(eˣeʸ) (Dynkin form) with its tail bound.
pub fn bch(x: &CMat, y: &CMat, order: u32) -> Result<BchResult> {
    if !(1..=5).contains(&order) {
        return Err(Error::InvalidParameter(format!("order must lie in 1..=5, got {order}")));
    }
    let (nx, ny) = (unitary::op_norm(x), unitary::op_norm(y));
    if nx >= 0.5 || ny >= 0.5 {
        return Err(Error::Precondition(format!("norms {nx}, {ny} must be below 1/2")));
    }
    let br = unitary::bracket;
    let k = |t: f64| c(t, 0.0);
    let mut z = x + y;
    if order >= 2 {
        z += br(x, y) * k(0.5);
    }
    let xy = br(x, y);
    let xxy = br(x, &xy);
    let yxy = br(y, &xy);
    if order >= 3 {
        z += (&xxy - &yxy) * k(1.0 / 12.0);
    }
    if order >= 4 {
        z -= br(y, &xxy) * k(1.0 / 24.0);
    }
    if order >= 5 {
        let yx = br(y, x);
        let yyx = br(y, &yx);
        let yyyx = br(y, &yyx);
        let xxxy = br(x, &xxy);
        let t1 = br(y, &yyyx) + br(x, &xxxy);
        let t2 = br(x, &yyyx) + br(y, &xxxy);
        let t3 = br(y, &br(x, &yxy)) + br(x, &br(y, &br(x, &yx)));
        z += t1 * k(-1.0 / 720.0) + t2 * k(1.0 / 360.0) + t3 * k(1.0 / 120.0);
    }
    Ok(BchResult { value: z, order, tail_bound: bch_tail_bound(nx + ny, order) })
}

/// log(g) through a complex Schur form, independent of the su(2) closed forms.
pub fn dense_log(g: &CMat) -> Result<CMat> {
    let n = g.nrows();
    let (q, t) = nalgebra::Schur::new(g.clone()).unpack();
    let mut d = CMat::zeros(n, n);
    for i in 0..n {
        let z = t[(i, i)];
        if (z + c(1.0, 0.0)).norm() < 1e-12 {
            return Err(Error::Precondition("eigenvalue -1".into()));
        }
        d[(i, i)] = z.ln();
    }
    Ok(&q * d * q.adjoint())
}

/// ‖log(e^{ηx}e^{ηy}e^{−ηx}e^{−ηy}) − η²[x, y]‖.
pub fn commutator_expansion_error(x: &CMat, y: &CMat, eta: f64) -> Result<f64> {
    let k = c(eta, 0.0);
    let (a, b) = (x * k, y * k);
    let g = unitary::expm(&a) * unitary::expm(&b) * unitary::expm(&(-&a)) * unitary::expm(&(-&b));
    let l = dense_log(&g)?;
    Ok(unitary::op_norm(&(l - unitary::bracket(x, y) * c(eta * eta, 0.0))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZonotopeReport {
    pub inradius: f64,
    /// A unit direction attaining the minimum of the support function.
    pub direction: Vec<f64>,
    pub spans: bool,
}

fn null_direction(rows: &[&Vec<f64>], d: usize) -> Option<Vec<f64>> {
    let mut m = DMatrix::zeros(d, d);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..d {
            m[(i, j)] = r[j];
        }
    }
    let scale = m.abs().max().max(1e-300);
    let svd = m.svd(false, true);
    let vt = svd.v_t?;
    let sv = &svd.singular_values;
    let (imin, _) = sv.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if d >= 2 && sorted[d - 2] <= 1e-12 * scale {
        return None;
    }
    Some(vt.row(imin).iter().copied().collect())
}

/// Largest r with 0_r ⊆ {Σ c_i v_i : c_i ∈ [−1, 1]}: the minimum of the
/// support function Σ|⟨u, v_i⟩| over the facet normals of the zonotope.
pub fn zonotope_inradius(vectors: &[Vec<f64>]) -> Result<ZonotopeReport> {
    let d = vectors.first().map(|v| v.len()).ok_or(Error::Empty)?;
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Dimension("vectors of unequal or zero length".into()));
    }
    let support = |u: &[f64]| vectors.iter().map(|v| v.iter().zip(u).map(|(a, b)| a * b).sum::<f64>().abs()).sum::<f64>();
    let mat = DMatrix::from_fn(d, vectors.len(), |i, j| vectors[j][i]);
    let svd = mat.svd(true, false);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax.max(1e-300)).count();
    if rank < d {
        let u = svd.u.expect("requested");
        let (imin, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let direction = if svd.singular_values.len() < d {
            // more dimensions than vectors: any vector orthogonal to the column space
            let full = DMatrix::from_fn(d, d, |i, j| if j < vectors.len() { vectors[j][i] } else { 0.0 }).svd(true, false);
            let (k, _) = full.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            full.u.expect("requested").column(k).iter().copied().collect()
        } else {
            u.column(imin).iter().copied().collect()
        };
        return Ok(ZonotopeReport { inradius: 0.0, direction, spans: false });
    }
    if d == 1 {
        return Ok(ZonotopeReport { inradius: support(&[1.0]), direction: vec![1.0], spans: true });
    }
    let mut best = (f64::INFINITY, vec![0.0; d]);
    let mut idx: Vec<usize> = (0..d - 1).collect();
    let total = vectors.len();
    if idx.len() > total {
        return Err(Error::Dimension("fewer vectors than d - 1".into()));
    }
    let mut count = 0usize;
    loop {
        count += 1;
        if count > 2_000_000 {
            return Err(Error::TooLarge("too many facet candidates".into()));
        }
        let rows: Vec<&Vec<f64>> = idx.iter().map(|&i| &vectors[i]).collect();
        if let Some(u) = null_direction(&rows, d) {
            let h = support(&u);
            if h < best.0 {
                best = (h, u);
            }
        }
        // next combination
        let k = idx.len();
        let mut i = k;
        while i > 0 && idx[i - 1] == total - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(ZonotopeReport { inradius: best.0, direction: best.1, spans: true })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedGenerationReport {
    pub sigma0: f64,
    pub degenerate: bool,
    pub alpha: f64,
    pub radius: f64,
    pub zonotope_inradius: f64,
    /// σ₀ ≥ inradius/√9, since the zonotope lies in dΦ(0)·0_3.
    pub zonotope_consistent: bool,
    pub attempted: usize,
    pub solved: usize,
    pub max_residual: f64,
}

pub const BG_FACTORS: usize = 9;

/// Φ(t₁..t₉) = log Π g_i [h, exp(t_i x)] g_i⁻¹ in su(2) coordinates.
fn bounded_generation_map(h: &CMat, gs: &[CMat], x: &CMat) -> impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static {
    let (h, gs, x) = (h.clone(), gs.to_vec(), x.clone());
    let hinv = h.adjoint();
    move |t: &[f64]| {
        let mut prod = unitary::identity(2);
        for (g, &ti) in gs.iter().zip(t) {
            let a = unitary::expm(&(&x * c(ti, 0.0)));
            let comm = &h * &a * &hinv * a.adjoint();
            prod = prod * g * comm * g.adjoint();
        }
        match unitary::unitary_log(&prod) {
            Ok(l) => unitary::su2_coords(&l).to_vec(),
            Err(_) => vec![f64::NAN; 3],
        }
    }
}

/// Uniform point of the Euclidean ball of the given radius in R^d.
pub fn uniform_ball<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let nv = norm(&v).max(1e-300);
    let s = radius * rng.random::<f64>().powf(1.0 / d as f64);
    v.iter().map(|t| t * s / nv).collect()
}

/// Builds the commutator product map, measures σ₀ = σ(dΦ(0)) and α, and
/// checks that targets in 0_{σ₀r/4} have preimages in 0_r.
pub fn bounded_generation_probe(h: &CMat, rho: f64, x: [f64; 3], radius: Option<f64>, targets: usize, seed: u64) -> Result<BoundedGenerationReport> {
    if unitary::dist_to_identity(h) > 0.25 + 1e-12 {
        return Err(Error::Precondition("‖h − I‖ must be at most 1/4".into()));
    }
    if !(rho > 0.0 && rho <= 0.25) {
        return Err(Error::Precondition(format!("ρ must lie in (0, 1/4], got {rho}")));
    }
    if (norm(&x) - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition("x must be a unit vector".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs: Vec<CMat> = (0..BG_FACTORS).map(|_| unitary::su2_ball_sample(rho, &mut rng)).collect();
    let xm = unitary::su2_from_coords(&x);
    let phi = Arc::new(bounded_generation_map(h, &gs, &xm));
    let phi2 = phi.clone();
    let jac = Arc::new(move |t: &[f64]| fd_jacobian(&*phi2, t, 3, 1e-5));
    let zero = vec![0.0; BG_FACTORS];
    let j0 = jac(&zero);
    let sigma0 = sigma_real(&j0)?;
    let cols: Vec<Vec<f64>> = (0..BG_FACTORS).map(|i| j0.column(i).iter().copied().collect()).collect();
    let zono = zonotope_inradius(&cols)?;
    let zonotope_consistent = sigma0 >= zono.inradius / (BG_FACTORS as f64).sqrt() - 1e-9;
    let mut report = BoundedGenerationReport {
        sigma0,
        degenerate: sigma0 < 1e-9,
        alpha: 0.0,
        radius: 0.0,
        zonotope_inradius: zono.inradius,
        zonotope_consistent,
        attempted: 0,
        solved: 0,
        max_residual: 0.0,
    };
    if report.degenerate {
        return Ok(report);
    }
    // α from finite-difference Hessians over the unit ball.
    let r0 = 1.0;
    let mut alpha = 0.0f64;
    let hs = 1e-4;
    for s in 0..40 {
        let p = if s == 0 { zero.clone() } else { uniform_ball(BG_FACTORS, r0, &mut rng) };
        for j in 0..BG_FACTORS {
            for jj in j..BG_FACTORS {
                let mut q = p.clone();
                let f = |dj: f64, djj: f64, q: &mut Vec<f64>| {
                    q[j] = p[j] + dj;
                    q[jj] += djj;
                    let v = phi(q);
                    q[j] = p[j];
                    q[jj] = p[jj];
                    v
                };
                let fpp = f(hs, hs, &mut q);
                let fpm = f(hs, -hs, &mut q);
                let fmp = f(-hs, hs, &mut q);
                let fmm = f(-hs, -hs, &mut q);
                let second: Vec<f64> = (0..3).map(|i| (fpp[i] - fpm[i] - fmp[i] + fmm[i]) / (4.0 * hs * hs)).collect();
                alpha = alpha.max(norm(&second));
            }
        }
    }
    alpha *= 2.0;
    let probe = SmoothMapProbe::new(phi, jac, alpha, zero, r0, 3)?;
    let rmax = probe.admissible_radius(sigma0);
    let r = radius.unwrap_or(0.9 * rmax);
    report.alpha = alpha;
    report.radius = r;
    for _ in 0..targets {
        let y = uniform_ball(3, sigma0 * r / 4.0, &mut rng);
        report.attempted += 1;
        if let Ok(sol) = solve_real_ift(&probe, &y, r) {
            report.solved += 1;
            report.max_residual = report.max_residual.max(sol.residual);
        }
    }
    Ok(report)
}

fn commutator_coords(w: &[f64]) -> Vec<f64> {
    let a = unitary::expm(&unitary::su2_from_coords(&[w[0], w[1], w[2]]));
    let b = unitary::expm(&unitary::su2_from_coords(&[w[3], w[4], w[5]]));
    let comm = &a * &b * a.adjoint() * b.adjoint();
    match unitary::unitary_log(&comm) {
        Ok(l) => unitary::su2_coords(&l).to_vec(),
        Err(_) => vec![f64::NAN; 3],
    }
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn solve_commutator(rho1: f64, rho2: f64, target: &CMat) -> Result<(CMat, CMat)> {
    let z = unitary::su2_coords(&unitary::unitary_log(target)?);
    let zn = norm(&z);
    if zn == 0.0 {
        return Ok((unitary::identity(2), unitary::identity(2)));
    }
    // linearization: [a, b] has coordinates 2 a × b
    let zh: Vec<f64> = z.iter().map(|t| t / zn).collect();
    let trial = if zh[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = cross(&zh, &trial);
    let un = norm(&u);
    let u: Vec<f64> = u.iter().map(|t| t / un).collect();
    let w = cross(&zh, &u);
    let kappa = (zn / (2.0 * rho1 * rho2)).sqrt();
    let (al, be) = (kappa * rho1, kappa * rho2);
    let mut v: Vec<f64> = u.iter().map(|t| t * al).chain(w.iter().map(|t| t * be)).collect();
    let resid = |v: &[f64]| -> Vec<f64> { commutator_coords(v).iter().zip(&z).map(|(a, b)| a - b).collect() };
    let mut f = resid(&v);
    for _ in 0..100 {
        if norm(&f) <= 1e-13 {
            break;
        }
        let j = fd_jacobian(&commutator_coords, &v, 3, 1e-6);
        let step = j.svd(true, true).solve(&DVector::from_iterator(3, f.iter().map(|t| -t)), 1e-12).map_err(|e| Error::NotConverged(e.into()))?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = v.iter().enumerate().map(|(i, x)| x + t * step[i]).collect();
            let fc = resid(&cand);
            if norm(&fc) < norm(&f) || t < 1e-10 {
                v = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    let g1 = unitary::expm(&unitary::su2_from_coords(&[v[0], v[1], v[2]]));
    let g2 = unitary::expm(&unitary::su2_from_coords(&[v[3], v[4], v[5]]));
    let comm = &g1 * &g2 * g1.adjoint() * g2.adjoint();
    let err = unitary::op_norm(&(comm * target.adjoint() - unitary::identity(2)));
    if err > 1e-9 {
        return Err(Error::NotConverged(format!("commutator solve stalled at {err:e}")));
    }
    if unitary::dist_to_identity(&g1) > rho1 * (1.0 + 1e-9) || unitary::dist_to_identity(&g2) > rho2 * (1.0 + 1e-9) {
        return Err(Error::NotConverged("solution left the prescribed balls".into()));
    }
    Ok((g1, g2))
}

/// (g₁, g₂) ∈ 1_{ρ₁} × 1_{ρ₂} with [g₁, g₂] = target, for targets in 1_{ĉρ₁ρ₂}.
pub fn commutator_surjectivity(rho1: f64, rho2: f64, target: &CMat, chat: f64) -> Result<(CMat, CMat)> {
    if !(rho1 > 0.0 && rho2 > 0.0 && rho1 <= 0.5 && rho2 <= 0.5) {
        return Err(Error::InvalidParameter("radii must lie in (0, 1/2]".into()));
    }
    let d = unitary::dist_to_identity(target);
    if d > chat * rho1 * rho2 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("target at distance {d} outside 1_(ĉρ₁ρ₂) = {}", chat * rho1 * rho2)));
    }
    solve_commutator(rho1, rho2, target)
}

/// Largest ĉ (bisection on [0, 4]) such that `samples` random targets on the sphere ‖t − I‖ = ĉρ₁ρ₂ are all solved.
pub fn calibrate_commutator_constant(rho1: f64, rho2: f64, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = (0..samples).map(|_| uniform_ball(3, 1.0, &mut rng)).map(|v| {
        let n = norm(&v).max(1e-300);
        v.iter().map(|t| t / n).collect()
    }).collect();
    let feasible = |cc: f64| {
        let dist = cc * rho1 * rho2;
        if dist >= 2.0 {
            return false;
        }
        let angle = 2.0 * (dist / 2.0).asin();
        dirs.iter().all(|u| {
            let t = unitary::expm(&unitary::su2_from_coords(&[u[0] * angle, u[1] * angle, u[2] * angle]));
            solve_commutator(rho1, rho2, &t).is_ok()
        })
    };
    let (mut lo, mut hi) = (0.0f64, 4.0f64);
    if feasible(hi) {
        return Ok(hi);
    }
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
