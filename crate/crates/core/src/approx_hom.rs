//! Approximate homomorphisms: defects, the θ_k maps, finite-log ladders and
//! projection onto exact Lie-algebra homomorphisms.
//!
//! A linear map T: g₁ → g₂ is stored row-indexed, T(e_j) = Σ_s x_{js} e_s.
//! Residuals are f_{jkr}(x) = Σ c²_{i₁i₂r} x_{ji₁} x_{ki₂} − Σ_i c¹_{jki} x_{ir},
//! which vanish exactly when T([e_j, e_k]) = [T e_j, T e_k].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::unitary::{self, c, CMat};
use crate::groups::{CompactGroupSpec, GroupPoint};
use crate::padic::{self, CongruenceElement, PAdicMatrix, Zpk};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LieField {
    Real,
    PAdic(u64),
}

/// Integer structure constants [e_j, e_k] = Σ_s c_{jks} e_s.
#[derive(Clone, Debug, PartialEq)]
pub struct LieStructure {
    name: String,
    dim: usize,
    consts: Vec<i64>,
    field: LieField,
}

impl LieStructure {
    pub fn new(name: &str, dim: usize, consts: Vec<i64>, field: LieField) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("Lie algebra of dimension 0".into()));
        }
        if consts.len() != dim * dim * dim {
            return Err(Error::Dimension(format!("expected {} structure constants, got {}", dim * dim * dim, consts.len())));
        }
        let s = Self { name: name.to_string(), dim, consts, field };
        for j in 0..dim {
            for k in 0..dim {
                for t in 0..dim {
                    if s.c(j, k, t) != -s.c(k, j, t) {
                        return Err(Error::InvalidParameter(format!("c[{j}][{k}][{t}] is not antisymmetric")));
                    }
                }
            }
        }
        if s.jacobi_residual() != 0 {
            return Err(Error::InvalidParameter(format!("Jacobi identity fails for {name}")));
        }
        Ok(s)
    }

    /// Builds constants from brackets (j, k, s, c) with j < k; the rest follows by antisymmetry.
    pub fn from_brackets(name: &str, dim: usize, brackets: &[(usize, usize, usize, i64)], field: LieField) -> Result<Self> {
        let mut consts = vec![0i64; dim * dim * dim];
        for &(j, k, s, v) in brackets {
            if j >= dim || k >= dim || s >= dim {
                return Err(Error::Dimension(format!("bracket index ({j}, {k}, {s}) out of range")));
            }
            consts[(j * dim + k) * dim + s] += v;
            consts[(k * dim + j) * dim + s] -= v;
        }
        Self::new(name, dim, consts, field)
    }

    /// su(2) in the basis e_k = −iσ_k: [e_j, e_k] = 2 ε_{jkl} e_l.
    pub fn su2() -> Self {
        Self::from_brackets("su2", 3, &[(0, 1, 2, 2), (1, 2, 0, 2), (2, 0, 1, 2)], LieField::Real).unwrap()
    }

    /// sl₂ in the basis (e, f, h): [h, e] = 2e, [h, f] = −2f, [e, f] = h.
    pub fn sl2(field: LieField) -> Self {
        Self::from_brackets("sl2", 3, &[(2, 0, 0, 2), (2, 1, 1, -2), (0, 1, 2, 1)], field).unwrap()
    }

    /// Same basis with every bracket multiplied by `factor`.
    pub fn scaled(&self, factor: i64) -> Result<Self> {
        let name = format!("{factor}*{}", self.name);
        Self::new(&name, self.dim, self.consts.iter().map(|v| v * factor).collect(), self.field)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn field(&self) -> LieField {
        self.field
    }

    pub fn c(&self, j: usize, k: usize, s: usize) -> i64 {
        self.consts[(j * self.dim + k) * self.dim + s]
    }

    /// Largest |coefficient| of [[e_j, e_k], e_l] + [[e_k, e_l], e_j] + [[e_l, e_j], e_k].
    pub fn jacobi_residual(&self) -> i64 {
        let d = self.dim;
        let mut worst = 0i64;
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    for t in 0..d {
                        let mut v = 0i64;
                        for s in 0..d {
                            v += self.c(j, k, s) * self.c(s, l, t) + self.c(k, l, s) * self.c(s, j, t) + self.c(l, j, s) * self.c(s, k, t);
                        }
                        worst = worst.max(v.abs());
                    }
                }
            }
        }
        worst
    }

    pub fn bracket_coords(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for j in 0..d {
            for k in 0..d {
                let w = x[j] * y[k];
                if w != 0.0 {
                    for (s, o) in out.iter_mut().enumerate() {
                        *o += w * self.c(j, k, s) as f64;
                    }
                }
            }
        }
        out
    }
}

/// Coefficient matrix x_{js} of a linear map between Lie algebras.
#[derive(Clone, Debug, PartialEq)]
pub enum LinearLieMap {
    Real(DMatrix<f64>),
    PAdic(PAdicMatrix),
}

#[derive(Serialize, Deserialize)]
struct LieMapRecord {
    domain: String,
    target: String,
    field: String,
    p: Option<u64>,
    k: Option<u32>,
    entries: Vec<Vec<String>>,
}

impl LinearLieMap {
    pub fn real(x: DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        Ok(LinearLieMap::Real(x))
    }

    pub fn identity_real(d: usize) -> Self {
        LinearLieMap::Real(DMatrix::identity(d, d))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            LinearLieMap::Real(x) => (x.nrows(), x.ncols()),
            LinearLieMap::PAdic(x) => (x.rows(), x.cols()),
        }
    }

    pub fn as_real(&self) -> Option<&DMatrix<f64>> {
        match self {
            LinearLieMap::Real(x) => Some(x),
            _ => None,
        }
    }

    pub fn as_padic(&self) -> Option<&PAdicMatrix> {
        match self {
            LinearLieMap::PAdic(x) => Some(x),
            _ => None,
        }
    }

    /// Image of a coordinate vector: (T v)_s = Σ_j v_j x_{js}.
    pub fn apply_real(&self, v: &[f64]) -> Result<Vec<f64>> {
        let x = self.as_real().ok_or_else(|| Error::InvalidParameter("expected a real map".into()))?;
        if v.len() != x.nrows() {
            return Err(Error::Dimension(format!("vector of length {} for a map with {} rows", v.len(), x.nrows())));
        }
        Ok((0..x.ncols()).map(|s| (0..x.nrows()).map(|j| v[j] * x[(j, s)]).sum()).collect())
    }

    pub fn to_json(&self, domain: &LieStructure, target: &LieStructure) -> Result<String> {
        let (rows, cols) = self.shape();
        if rows != domain.dim() || cols != target.dim() {
            return Err(Error::Dimension("map shape does not match the bases".into()));
        }
        let (field, p, k) = match self {
            LinearLieMap::Real(_) => ("real", None, None),
            LinearLieMap::PAdic(x) => ("padic", Some(x.p()), Some(x.k())),
        };
        let entries = (0..rows)
            .map(|j| {
                (0..cols)
                    .map(|s| match self {
                        LinearLieMap::Real(x) => format!("{:e}", x[(j, s)]),
                        LinearLieMap::PAdic(x) => x.get(j, s).to_string(),
                    })
                    .collect()
            })
            .collect();
        let rec = LieMapRecord { domain: domain.name().into(), target: target.name().into(), field: field.into(), p, k, entries };
        Ok(serde_json::to_string_pretty(&rec)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: LieMapRecord = serde_json::from_str(s)?;
        let rows = rec.entries.len();
        let cols = rec.entries.first().map_or(0, |r| r.len());
        if rec.entries.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged coefficient matrix".into()));
        }
        let bad = |e: &str| Error::InvalidParameter(format!("bad entry {e}"));
        match rec.field.as_str() {
            "real" => {
                let mut x = DMatrix::zeros(rows, cols);
                for (j, r) in rec.entries.iter().enumerate() {
                    for (s, e) in r.iter().enumerate() {
                        x[(j, s)] = e.parse().map_err(|_| bad(e))?;
                    }
                }
                Self::real(x)
            }
            "padic" => {
                let ring = Zpk::new(rec.p.ok_or_else(|| bad("p"))?, rec.k.ok_or_else(|| bad("k"))?)?;
                let mut x = PAdicMatrix::zeros(ring, rows, cols);
                for (j, r) in rec.entries.iter().enumerate() {
                    for (s, e) in r.iter().enumerate() {
                        let v: u64 = e.parse().map_err(|_| bad(e))?;
                        x.set(j, s, ring.reduce(v));
                    }
                }
                Ok(LinearLieMap::PAdic(x))
            }
            other => Err(Error::InvalidParameter(format!("unknown field {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResidualValues {
    Real(Vec<f64>),
    PAdic { ring: Zpk, values: Vec<u64> },
}

/// All f_{jkr}, ordered by (j, k, r).
#[derive(Clone, Debug, PartialEq)]
pub struct HomResidualReport {
    pub d1: usize,
    pub d2: usize,
    pub values: ResidualValues,
}

impl HomResidualReport {
    /// Largest |f_{jkr}|; the p-adic absolute value p^{−v} in the p-adic case.
    pub fn max_abs(&self) -> f64 {
        match &self.values {
            ResidualValues::Real(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            ResidualValues::PAdic { ring, values } => {
                values.iter().filter(|&&v| v != 0).map(|&v| (ring.p() as f64).powi(-(ring.val(v) as i32))).fold(0.0, f64::max)
            }
        }
    }

    /// Smallest valuation among the residuals (K when all vanish).
    pub fn min_valuation(&self) -> Option<u32> {
        match &self.values {
            ResidualValues::Real(_) => None,
            ResidualValues::PAdic { ring, values } => Some(values.iter().map(|&v| ring.val(v)).min().unwrap_or(ring.k())),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.values {
            ResidualValues::Real(v) => v.iter().all(|&x| x == 0.0),
            ResidualValues::PAdic { values, .. } => values.iter().all(|&x| x == 0),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["j", "k", "r", "value"])?;
        for j in 0..self.d1 {
            for k in 0..self.d1 {
                for r in 0..self.d2 {
                    let i = (j * self.d1 + k) * self.d2 + r;
                    let v = match &self.values {
                        ResidualValues::Real(v) => format!("{:e}", v[i]),
                        ResidualValues::PAdic { values, .. } => values[i].to_string(),
                    };
                    w.write_record([j.to_string(), k.to_string(), r.to_string(), v])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_shapes(shape: (usize, usize), s1: &LieStructure, s2: &LieStructure) -> Result<()> {
    if shape != (s1.dim(), s2.dim()) {
        return Err(Error::Dimension(format!("map is {}x{}, structures have dimensions {} and {}", shape.0, shape.1, s1.dim(), s2.dim())));
    }
    Ok(())
}

fn residuals_real(x: &DMatrix<f64>, s1: &LieStructure, s2: &LieStructure) -> Vec<f64> {
    let (d1, d2) = (s1.dim(), s2.dim());
    let mut out = Vec::with_capacity(d1 * d1 * d2);
    for j in 0..d1 {
        for k in 0..d1 {
            for r in 0..d2 {
                let mut v = 0.0;
                for i1 in 0..d2 {
                    for i2 in 0..d2 {
                        let cc = s2.c(i1, i2, r);
                        if cc != 0 {
                            v += cc as f64 * x[(j, i1)] * x[(k, i2)];
                        }
                    }
                }
                for i in 0..d1 {
                    let cc = s1.c(j, k, i);
                    if cc != 0 {
                        v -= cc as f64 * x[(i, r)];
                    }
                }
                out.push(v);
            }
        }
    }
    out
}

/// ∂f_{jkr}/∂x_{ab}, equations indexed (j, k, r), unknowns (a, b).
fn jacobian_real(x: &DMatrix<f64>, s1: &LieStructure, s2: &LieStructure) -> DMatrix<f64> {
    let (d1, d2) = (s1.dim(), s2.dim());
    let mut jac = DMatrix::zeros(d1 * d1 * d2, d1 * d2);
    for j in 0..d1 {
        for k in 0..d1 {
            for r in 0..d2 {
                let row = (j * d1 + k) * d2 + r;
                for b in 0..d2 {
                    for i in 0..d2 {
                        jac[(row, j * d2 + b)] += s2.c(b, i, r) as f64 * x[(k, i)];
                        jac[(row, k * d2 + b)] += s2.c(i, b, r) as f64 * x[(j, i)];
                    }
                }
                for a in 0..d1 {
                    jac[(row, a * d2 + r)] -= s1.c(j, k, a) as f64;
                }
            }
        }
    }
    jac
}

fn residuals_padic(x: &PAdicMatrix, s1: &LieStructure, s2: &LieStructure) -> Vec<u64> {
    let r_ = x.ring();
    let (d1, d2) = (s1.dim(), s2.dim());
    let cst = |v: i64| r_.from_i128(v as i128);
    let mut out = Vec::with_capacity(d1 * d1 * d2);
    for j in 0..d1 {
        for k in 0..d1 {
            for r in 0..d2 {
                let mut v = 0u64;
                for i1 in 0..d2 {
                    for i2 in 0..d2 {
                        let cc = s2.c(i1, i2, r);
                        if cc != 0 {
                            v = r_.add(v, r_.mul(cst(cc), r_.mul(x.get(j, i1), x.get(k, i2))));
                        }
                    }
                }
                for i in 0..d1 {
                    let cc = s1.c(j, k, i);
                    if cc != 0 {
                        v = r_.sub(v, r_.mul(cst(cc), x.get(i, r)));
                    }
                }
                out.push(v);
            }
        }
    }
    out
}

fn jacobian_padic(x: &PAdicMatrix, s1: &LieStructure, s2: &LieStructure) -> PAdicMatrix {
    let r_ = x.ring();
    let (d1, d2) = (s1.dim(), s2.dim());
    let cst = |v: i64| r_.from_i128(v as i128);
    let mut jac = PAdicMatrix::zeros(r_, d1 * d1 * d2, d1 * d2);
    let bump = |jac: &mut PAdicMatrix, row: usize, col: usize, v: u64| {
        let cur = jac.get(row, col);
        jac.set(row, col, r_.add(cur, v));
    };
    for j in 0..d1 {
        for k in 0..d1 {
            for r in 0..d2 {
                let row = (j * d1 + k) * d2 + r;
                for b in 0..d2 {
                    for i in 0..d2 {
                        bump(&mut jac, row, j * d2 + b, r_.mul(cst(s2.c(b, i, r)), x.get(k, i)));
                        bump(&mut jac, row, k * d2 + b, r_.mul(cst(s2.c(i, b, r)), x.get(j, i)));
                    }
                }
                for a in 0..d1 {
                    bump(&mut jac, row, a * d2 + r, r_.neg(cst(s1.c(j, k, a))));
                }
            }
        }
    }
    jac
}

pub fn hom_residuals(theta: &LinearLieMap, s1: &LieStructure, s2: &LieStructure) -> Result<HomResidualReport> {
    check_shapes(theta.shape(), s1, s2)?;
    let values = match theta {
        LinearLieMap::Real(x) => ResidualValues::Real(residuals_real(x, s1, s2)),
        LinearLieMap::PAdic(x) => ResidualValues::PAdic { ring: x.ring(), values: residuals_padic(x, s1, s2) },
    };
    Ok(HomResidualReport { d1: s1.dim(), d2: s2.dim(), values })
}

pub type Oracle = Arc<dyn Fn(&GroupPoint) -> Result<GroupPoint> + Send + Sync>;

/// Output perturbation of a map into SU(n), y ↦ y·exp(η N) with ‖N‖ = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// η = ε, direction pseudo-random per input.
    Absolute(f64),
    /// η = ε‖log h‖, direction pseudo-random per input.
    Relative(f64),
    /// η = ε‖log h‖², one fixed direction; the result is smooth in h.
    Quadratic(f64),
}

/// A map defined on the ball 1_ρ of the domain.
#[derive(Clone)]
pub struct PartialMap {
    domain: CompactGroupSpec,
    target: CompactGroupSpec,
    radius: f64,
    oracle: Oracle,
}

impl std::fmt::Debug for PartialMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PartialMap").field("domain", &self.domain).field("target", &self.target).field("radius", &self.radius).finish()
    }
}

fn random_su_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let b = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let mut a = (&b - b.adjoint()) * c(0.5, 0.0);
    let tr = a.trace() / c(n as f64, 0.0);
    for i in 0..n {
        a[(i, i)] -= tr;
    }
    let nrm = unitary::op_norm(&a);
    a * c(1.0 / nrm, 0.0)
}

impl PartialMap {
    pub fn new<F>(domain: CompactGroupSpec, target: CompactGroupSpec, radius: f64, oracle: F) -> Result<Self>
    where
        F: Fn(&GroupPoint) -> Result<GroupPoint> + Send + Sync + 'static,
    {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("domain radius must be positive, got {radius}")));
        }
        Ok(Self { domain, target, radius, oracle: Arc::new(oracle) })
    }

    /// Conjugation h ↦ g h g⁻¹ on the ball of radius ρ.
    pub fn conjugation(spec: CompactGroupSpec, g: GroupPoint, radius: f64) -> Result<Self> {
        let ginv = spec.inv(&g)?;
        let s = spec.clone();
        Self::new(spec.clone(), spec, radius, move |h| s.mul(&s.mul(&g, h)?, &ginv))
    }

    /// h ↦ exp(θ(log h)) on SU(2) for a real map θ in the basis −iσ_k.
    pub fn from_su2_lie_map(theta: &LinearLieMap, radius: f64) -> Result<Self> {
        if theta.shape() != (3, 3) {
            return Err(Error::Dimension("expected a 3x3 map on su(2)".into()));
        }
        let theta = theta.clone();
        let spec = CompactGroupSpec::su(2);
        Self::new(spec.clone(), spec, radius, move |h| {
            let h = h.as_unitary().ok_or(Error::SpecMismatch)?;
            let v = unitary::su2_coords(&unitary::unitary_log(h)?);
            let w = theta.apply_real(&v)?;
            Ok(GroupPoint::Unitary(unitary::expm(&unitary::su2_from_coords(&[w[0], w[1], w[2]]))))
        })
    }

    pub fn with_noise(self, noise: NoiseModel, seed: u64) -> Result<Self> {
        let n = match self.target {
            CompactGroupSpec::SpecialUnitary(n) => n,
            _ => return Err(Error::InvalidParameter("output noise needs an SU(n) target".into())),
        };
        if !matches!(self.domain, CompactGroupSpec::SpecialUnitary(_)) {
            return Err(Error::InvalidParameter("output noise needs an SU(n) domain".into()));
        }
        let fixed = random_su_unit(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let inner = self.oracle.clone();
        let domain = self.domain.clone();
        let oracle = move |h: &GroupPoint| -> Result<GroupPoint> {
            let y = inner(h)?;
            let hm = h.as_unitary().ok_or(Error::SpecMismatch)?;
            let (eta, dir) = match noise {
                NoiseModel::Quadratic(e) => (e * unitary::op_norm(&unitary::unitary_log(hm)?).powi(2), fixed.clone()),
                NoiseModel::Absolute(e) | NoiseModel::Relative(e) => {
                    let mut hs = DefaultHasher::new();
                    domain.key(h).hash(&mut hs);
                    seed.hash(&mut hs);
                    let dir = random_su_unit(n, &mut ChaCha8Rng::seed_from_u64(hs.finish()));
                    let eta = match noise {
                        NoiseModel::Relative(_) => e * unitary::op_norm(&unitary::unitary_log(hm)?),
                        _ => e,
                    };
                    (eta, dir)
                }
            };
            let ym = y.as_unitary().ok_or(Error::SpecMismatch)?;
            Ok(GroupPoint::Unitary(ym * unitary::expm(&(dir * c(eta, 0.0)))))
        };
        Ok(Self { oracle: Arc::new(oracle), ..self })
    }

    pub fn domain(&self) -> &CompactGroupSpec {
        &self.domain
    }

    pub fn target(&self) -> &CompactGroupSpec {
        &self.target
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn in_domain(&self, g: &GroupPoint) -> bool {
        self.domain.norm(g).is_ok_and(|r| r <= self.radius + 1e-12)
    }

    /// f(g); the identity is always sent to the identity.
    pub fn eval(&self, g: &GroupPoint) -> Result<GroupPoint> {
        let r = self.domain.norm(g)?;
        if r > self.radius + 1e-12 {
            return Err(Error::Precondition(format!("point at distance {r} outside the domain ball {}", self.radius)));
        }
        if r == 0.0 {
            return Ok(self.target.identity());
        }
        let y = (self.oracle)(g)?;
        if !self.target.contains(&y) {
            return Err(Error::SpecMismatch);
        }
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefectReport {
    /// Lower bound on the true defect: max of the two columns below.
    pub delta: f64,
    pub product_defect: f64,
    pub inverse_defect: f64,
    pub probes: usize,
}

pub fn approx_hom_defect(f: &PartialMap, probes: &[(GroupPoint, GroupPoint)]) -> Result<DefectReport> {
    if probes.is_empty() {
        return Err(Error::Empty);
    }
    let (dom, tgt) = (f.domain(), f.target());
    let (mut prod, mut inv) = (0.0f64, 0.0f64);
    for (g1, g2) in probes {
        let g12 = dom.mul(g1, g2)?;
        for g in [g1, g2, &g12] {
            if !f.in_domain(g) {
                return Err(Error::Precondition("probe outside the domain".into()));
            }
        }
        let (y1, y2) = (f.eval(g1)?, f.eval(g2)?);
        prod = prod.max(tgt.distance(&f.eval(&g12)?, &tgt.mul(&y1, &y2)?)?);
        for (g, y) in [(g1, &y1), (g2, &y2)] {
            inv = inv.max(tgt.distance(&f.eval(&dom.inv(g)?)?, &tgt.inv(y)?)?);
        }
    }
    Ok(DefectReport { delta: prod.max(inv), product_defect: prod, inverse_defect: inv, probes: probes.len() })
}

fn su_domains(f: &PartialMap) -> Result<usize> {
    match (f.domain(), f.target()) {
        (CompactGroupSpec::SpecialUnitary(n), CompactGroupSpec::SpecialUnitary(m)) if n == m => Ok(*n),
        _ => Err(Error::InvalidParameter("θ maps need SU(n) → SU(n)".into())),
    }
}

/// θ_k(x) = log(f(exp(ρ^k x)))/ρ^k for ‖x‖ ≤ ρ/2.
pub fn theta_map(f: &PartialMap, k: u32, rho: f64, x: &CMat) -> Result<CMat> {
    su_domains(f)?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("ρ must lie in (0, 1), got {rho}")));
    }
    let nx = unitary::op_norm(x);
    if nx > rho / 2.0 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("‖x‖ = {nx} exceeds ρ/2 = {}", rho / 2.0)));
    }
    let t = rho.powi(k as i32);
    let g = unitary::expm(&(x * c(t, 0.0)));
    let y = f.eval(&GroupPoint::Unitary(g))?;
    let l = unitary::unitary_log(y.as_unitary().ok_or(Error::SpecMismatch)?)?;
    Ok(l * c(1.0 / t, 0.0))
}

fn real_inner(a: &CMat, b: &CMat) -> f64 {
    (a.adjoint() * b).trace().re
}

/// Coordinates of X in a real basis of matrices, via the Gram system.
pub fn basis_coords(basis: &[CMat], x: &CMat) -> Result<Vec<f64>> {
    let d = basis.len();
    let gram = DMatrix::from_fn(d, d, |a, b| real_inner(&basis[a], &basis[b]));
    let rhs = DVector::from_fn(d, |a, _| real_inner(&basis[a], x));
    let sol = gram.lu().solve(&rhs).ok_or_else(|| Error::InvalidParameter("basis is linearly dependent".into()))?;
    Ok(sol.iter().copied().collect())
}

fn combine(basis: &[CMat], v: &[f64]) -> CMat {
    let n = basis[0].nrows();
    basis.iter().zip(v).fold(CMat::zeros(n, n), |acc, (b, &t)| acc + b * c(t, 0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    /// θ̃(e_i) = θ_k(t e_i)/t with t = ρ/(2‖e_i‖).
    Basis,
    /// Least squares over the probe cloud.
    LeastSquares,
}

#[derive(Clone, Debug)]
pub struct ThetaFit {
    pub map: LinearLieMap,
    /// max over probes of ‖θ_k(x) − θ̃x‖ (0 without probes).
    pub residual: f64,
}

pub fn fit_linear_theta(f: &PartialMap, k: u32, rho: f64, basis: &[CMat], mode: FitMode, probes: &[CMat]) -> Result<ThetaFit> {
    let d = basis.len();
    if d == 0 {
        return Err(Error::Empty);
    }
    let x = match mode {
        FitMode::Basis => {
            let mut x = DMatrix::zeros(d, d);
            for (i, e) in basis.iter().enumerate() {
                let t = rho / (2.0 * unitary::op_norm(e));
                let img = theta_map(f, k, rho, &(e * c(t, 0.0)))? * c(1.0 / t, 0.0);
                for (s, v) in basis_coords(basis, &img)?.into_iter().enumerate() {
                    x[(i, s)] = v;
                }
            }
            x
        }
        FitMode::LeastSquares => {
            if probes.len() < d {
                return Err(Error::Precondition(format!("least squares needs at least {d} probes")));
            }
            let mut cm = DMatrix::zeros(probes.len(), d);
            let mut ym = DMatrix::zeros(probes.len(), d);
            for (p, xp) in probes.iter().enumerate() {
                let img = theta_map(f, k, rho, xp)?;
                for (j, v) in basis_coords(basis, xp)?.into_iter().enumerate() {
                    cm[(p, j)] = v;
                }
                for (s, v) in basis_coords(basis, &img)?.into_iter().enumerate() {
                    ym[(p, s)] = v;
                }
            }
            cm.svd(true, true).solve(&ym, 1e-12).map_err(|e| Error::NotConverged(e.into()))?
        }
    };
    let map = LinearLieMap::real(x)?;
    let mut residual = 0.0f64;
    for xp in probes {
        let img = theta_map(f, k, rho, xp)?;
        let lin = combine(basis, &map.apply_real(&basis_coords(basis, xp)?)?);
        residual = residual.max(unitary::op_norm(&(img - lin)));
    }
    Ok(ThetaFit { map, residual })
}

fn real_op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

#[derive(Clone, Debug)]
pub struct ProjectionReport {
    pub theta_hat: LinearLieMap,
    pub max_residual: f64,
    /// ‖θ̂ − θ̃‖ on coefficient vectors.
    pub distance_op: f64,
    pub sigma_min: f64,
    pub is_isomorphism: bool,
    pub iterations: usize,
}

pub const GN_MAX_ITER: usize = 200;
pub const GN_TOL: f64 = 1e-10;

/// Gauss–Newton on Σ f_{jkr}² from θ̃, minimum-norm steps, halving on increase.
pub fn project_to_variety_real(theta: &LinearLieMap, s1: &LieStructure, s2: &LieStructure) -> Result<ProjectionReport> {
    check_shapes(theta.shape(), s1, s2)?;
    let x0 = theta.as_real().ok_or_else(|| Error::InvalidParameter("expected a real map".into()))?;
    let (d1, d2) = (s1.dim(), s2.dim());
    let mut x = x0.clone();
    let sq = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>();
    let maxabs = |v: &[f64]| v.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let mut res = residuals_real(&x, s1, s2);
    if !res.iter().all(|v| v.is_finite()) {
        return Err(Error::Precondition("non-finite residuals".into()));
    }
    let mut iterations = 0;
    while maxabs(&res) > GN_TOL {
        if iterations == GN_MAX_ITER {
            return Err(Error::NotConverged(format!("Gauss–Newton stalled at max residual {:e}", maxabs(&res))));
        }
        iterations += 1;
        let jac = jacobian_real(&x, s1, s2);
        let rhs = DVector::from_iterator(res.len(), res.iter().map(|v| -v));
        let svd = jac.svd(true, true);
        let eps = 1e-10 * svd.singular_values.max().max(1e-300);
        let step = svd.solve(&rhs, eps).map_err(|e| Error::NotConverged(e.into()))?;
        let mut t = 1.0;
        let old = sq(&res);
        loop {
            let cand = DMatrix::from_fn(d1, d2, |a, b| x[(a, b)] + t * step[a * d2 + b]);
            let r2 = residuals_real(&cand, s1, s2);
            if sq(&r2) < old || t < 1e-9 {
                x = cand;
                res = r2;
                break;
            }
            t *= 0.5;
        }
    }
    let sigma_min = if d1 == d2 { x.clone().svd(false, false).singular_values.min() } else { 0.0 };
    let distance_op = real_op_norm(&(&x - x0));
    Ok(ProjectionReport {
        max_residual: maxabs(&res),
        distance_op,
        sigma_min,
        is_isomorphism: d1 == d2 && sigma_min > 1e-6,
        iterations,
        theta_hat: LinearLieMap::Real(x),
    })
}

#[derive(Clone, Debug)]
pub struct HenselReport {
    pub lift: LinearLieMap,
    /// Largest valuation among the Jacobian pivots used for the Newton steps.
    pub s: u32,
    /// Residual valuation before each step and after the last one.
    pub valuations: Vec<u32>,
}

/// Newton lift of a homomorphism mod p^m to one mod p^K.
///
/// Pivots of valuation ≤ (m − 1)/2 are treated as the genuine rank of the
/// Jacobian; larger ones are noise of the approximation. Every step must take
/// the residual valuation from v to at least min(K, 2v − 2s).
pub fn hensel_lift_hom(theta_bar: &PAdicMatrix, s1: &LieStructure, s2: &LieStructure, k_target: u32) -> Result<HenselReport> {
    check_shapes((theta_bar.rows(), theta_bar.cols()), s1, s2)?;
    let m = theta_bar.k();
    if k_target < m {
        return Err(Error::InvalidParameter(format!("target precision {k_target} below the input precision {m}")));
    }
    if residuals_padic(theta_bar, s1, s2).iter().any(|&v| v != 0) {
        return Err(Error::Precondition(format!("residuals do not vanish mod p^{m}")));
    }
    let ring = theta_bar.ring().with_k(k_target)?;
    let mut x = theta_bar.lift_to(k_target)?;
    let (d1, d2) = (s1.dim(), s2.dim());
    let min_val = |x: &PAdicMatrix| residuals_padic(x, s1, s2).iter().map(|&v| ring.val(v)).min().unwrap_or(k_target);
    let mut v = min_val(&x);
    let mut valuations = vec![v];
    let threshold = (m - 1) / 2;
    let sm = padic::smith(&jacobian_padic(&x, s1, s2));
    let genuine: Vec<u32> = sm.diag.iter().flatten().copied().filter(|&d| d <= threshold).collect();
    let s = match genuine.iter().max() {
        Some(&s) => s,
        None if v >= k_target => 0,
        None => {
            let smallest = sm.diag.iter().flatten().copied().min().unwrap_or(m);
            return Err(Error::HenselCriterion { s: smallest, m });
        }
    };
    while v < k_target {
        if valuations.len() > 64 {
            return Err(Error::NotConverged("Hensel iteration did not terminate".into()));
        }
        let f = residuals_padic(&x, s1, s2);
        let sm = padic::smith(&jacobian_padic(&x, s1, s2));
        let b = sm.u.matvec(&f.iter().map(|&t| ring.neg(t)).collect::<Vec<_>>());
        let mut y = vec![0u64; d1 * d2];
        for (i, d) in sm.diag.iter().enumerate() {
            if let Some(d) = *d {
                if d <= s {
                    if ring.val(b[i]) < d {
                        return Err(Error::HenselCriterion { s, m });
                    }
                    y[i] = ring.div_p_pow(b[i], d);
                }
            }
        }
        let delta = sm.v.matvec(&y);
        x = PAdicMatrix::from_fn(ring, d1, d2, |a, c| ring.add(x.get(a, c), delta[a * d2 + c]));
        let v2 = min_val(&x);
        let want = (2 * v).saturating_sub(2 * s).min(k_target);
        if v2 < want {
            return Err(Error::NotConverged(format!("residual valuation went {v} -> {v2}, expected at least {want}")));
        }
        v = v2;
        valuations.push(v);
    }
    let agree = m - s;
    if x.reduce_to(agree)? != theta_bar.reduce_to(agree)? {
        return Err(Error::NotConverged(format!("lift moved the input modulo p^{agree}")));
    }
    Ok(HenselReport { lift: LinearLieMap::PAdic(x), s, valuations })
}

/// Integer matrices spanning a Lie algebra over Z_p, with exact coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralBasis {
    pub structure: LieStructure,
    n: usize,
    mats: Vec<Vec<i64>>,
}

impl IntegralBasis {
    /// e = E₁₂, f = E₂₁, h = diag(1, −1).
    pub fn sl2(p: u64) -> Self {
        Self { structure: LieStructure::sl2(LieField::PAdic(p)), n: 2, mats: vec![vec![0, 1, 0, 0], vec![0, 0, 1, 0], vec![1, 0, 0, -1]] }
    }

    pub fn dim(&self) -> usize {
        self.mats.len()
    }

    pub fn element(&self, ring: Zpk, coords: &[u64]) -> PAdicMatrix {
        PAdicMatrix::from_fn(ring, self.n, self.n, |i, j| {
            self.mats.iter().zip(coords).fold(0, |acc, (b, &t)| ring.add(acc, ring.mul(ring.from_i128(b[i * self.n + j] as i128), t)))
        })
    }

    pub fn coords(&self, x: &PAdicMatrix) -> Result<Vec<u64>> {
        let ring = x.ring();
        let a = PAdicMatrix::from_fn(ring, self.n * self.n, self.dim(), |r, col| ring.from_i128(self.mats[col][r] as i128));
        let b: Vec<u64> = (0..self.n * self.n).map(|r| x.get(r / self.n, r % self.n)).collect();
        padic::solve_linear(&a, &b).ok_or_else(|| Error::Precondition("matrix is not in the span of the basis".into()))
    }
}

/// Coefficient matrix of Ad(g) on sl₂ in the basis (e, f, h); g may lie in GL₂.
pub fn adjoint_sl2(g: &PAdicMatrix) -> Result<PAdicMatrix> {
    let ring = g.ring();
    let b = IntegralBasis::sl2(ring.p());
    let ginv = g.inverse()?;
    let mut x = PAdicMatrix::zeros(ring, 3, 3);
    for j in 0..3 {
        let mut ej = vec![0u64; 3];
        ej[j] = 1;
        let img = g.mul(&b.element(ring, &ej)).mul(&ginv);
        for (s, v) in b.coords(&img)?.into_iter().enumerate() {
            x.set(j, s, v);
        }
    }
    Ok(x)
}

/// A matrix g̃ ∈ GL₂ with Ad(g̃) = θ, when θ is an inner automorphism of sl₂.
pub fn recover_conjugator_sl2(theta: &PAdicMatrix) -> Result<PAdicMatrix> {
    let ring = theta.ring();
    let b = IntegralBasis::sl2(ring.p());
    // G e_j − T(e_j) G = 0, unknowns the four entries of G.
    let mut a = PAdicMatrix::zeros(ring, 12, 4);
    for j in 0..3 {
        let mut ej = vec![0u64; 3];
        ej[j] = 1;
        let e = b.element(ring, &ej);
        let t = b.element(ring, &(0..3).map(|s| theta.get(j, s)).collect::<Vec<_>>());
        for u in 0..2 {
            for w in 0..2 {
                let row = j * 4 + u * 2 + w;
                for q in 0..2 {
                    // (G e)_{uw} = Σ_q G_{uq} e_{qw};  (T G)_{uw} = Σ_q T_{uq} G_{qw}
                    let c1 = ring.add(a.get(row, u * 2 + q), e.get(q, w));
                    a.set(row, u * 2 + q, c1);
                    let c2 = ring.sub(a.get(row, q * 2 + w), t.get(u, q));
                    a.set(row, q * 2 + w, c2);
                }
            }
        }
    }
    let sm = padic::smith(&a);
    for (i, d) in sm.diag.iter().enumerate().chain((sm.diag.len()..4).map(|i| (i, &None))) {
        if d.is_none() {
            let g = PAdicMatrix::from_fn(ring, 2, 2, |u, w| sm.v.get(u * 2 + w, i));
            if ring.is_unit(g.det()) && adjoint_sl2(&g)? == *theta {
                return Ok(g);
            }
        }
    }
    Err(Error::NotConverged("no invertible conjugator reproduces θ".into()))
}

/// Real coefficient matrix of Ad(g) on su(2) in the basis −iσ_k.
pub fn adjoint_su2(g: &CMat) -> DMatrix<f64> {
    let b = unitary::su2_basis();
    let mut x = DMatrix::zeros(3, 3);
    for (j, e) in b.iter().enumerate() {
        let v = unitary::su2_coords(&(g * e * g.adjoint()));
        for s in 0..3 {
            x[(j, s)] = v[s];
        }
    }
    x
}

/// Critical levels l_m = 2⌈(k₀m + 2k₀ − 2)/3⌉ − k₀ + 1 and n_m = k₀(m − 1) − 2.
pub fn critical_levels(k0: u32, m: u32) -> (i64, i64) {
    let (k0, m) = (k0 as i64, m as i64);
    let ceil = (k0 * m + 2 * k0 - 2 + 2).div_euclid(3);
    (2 * ceil - k0 + 1, k0 * (m - 1) - 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderRung {
    pub l: u32,
    pub n: u32,
    /// Level of the target finite log, l minus the measured shift.
    pub target_level: u32,
    pub theta: PAdicMatrix,
}

#[derive(Clone, Debug)]
pub struct LadderReport {
    pub p: u64,
    pub k0: u32,
    pub m: u32,
    pub l_m: u32,
    pub n_m: u32,
    pub rungs: Vec<LadderRung>,
    pub theta_m: LinearLieMap,
    pub residuals: HomResidualReport,
    /// Smith pivot valuations of θ_m; `None` is a pivot that vanishes mod p^{n_m − l_m}.
    pub pivots: Vec<Option<u32>>,
    pub degenerate: bool,
}

fn ladder_rung(
    phi: &dyn Fn(&PAdicMatrix) -> Result<PAdicMatrix>,
    basis: &IntegralBasis,
    ring: Zpk,
    k0: u32,
    l: u32,
    n: u32,
) -> Result<LadderRung> {
    let d = basis.dim();
    let p_l = ring.p_pow(l);
    let mut images = Vec::with_capacity(d);
    let mut level = ring.k();
    for i in 0..d {
        let mut e = vec![0u64; d];
        e[i] = p_l;
        let g = padic::padic_exp(&basis.element(ring, &e))?;
        let y = phi(g.matrix())?;
        level = level.min(padic::level_of(&y));
        images.push(y);
    }
    if level + k0 < l + 1 {
        return Err(Error::Range(format!("φ sends level {l} to level {level} < {}", l + 1 - k0)));
    }
    let shift = l.saturating_sub(level);
    let (lt, nt) = (l - shift, n - shift);
    let mut theta = PAdicMatrix::zeros(ring.with_k(n - l)?, d, d);
    for (i, y) in images.into_iter().enumerate() {
        let psi = padic::finite_log(&CongruenceElement::new(y, lt)?, lt, nt)?;
        for (s, v) in basis.coords(&psi)?.into_iter().enumerate() {
            theta.set(i, s, v);
        }
    }
    Ok(LadderRung { l, n, target_level: lt, theta })
}

/// Pushes φ: G_{1,k₀} → G₂/G_{2,k₀m} through finite logs to maps θ_{l,n} of
/// g/p^{n−l}g, ending with θ_m at the critical levels.
///
/// φ receives and returns matrices mod p^{k₀m}. Before any log is taken, φ is
/// tested as a homomorphism on `hom_probes` random pairs from G_{1,k₀}.
pub fn quotient_hom_ladder(
    phi: &dyn Fn(&PAdicMatrix) -> Result<PAdicMatrix>,
    basis: &IntegralBasis,
    p: u64,
    k0: u32,
    m: u32,
    hom_probes: usize,
    seed: u64,
) -> Result<LadderReport> {
    if k0 == 0 || m < 2 {
        return Err(Error::InvalidParameter("need k0 >= 1 and m >= 2".into()));
    }
    let (lm, nm) = critical_levels(k0, m);
    if nm <= lm || lm <= k0 as i64 {
        return Err(Error::EmptyLevelRange { l: lm, n: nm });
    }
    let (l_m, n_m) = (lm as u32, nm as u32);
    let ring = Zpk::new(p, k0 * m)?;
    let d = basis.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = || -> Result<PAdicMatrix> {
        let v: Vec<u64> = (0..d).map(|_| ring.mul(ring.p_pow(k0), ring.random(&mut rng))).collect();
        Ok(padic::padic_exp(&basis.element(ring, &v))?.matrix().clone())
    };
    if !phi(&PAdicMatrix::identity(ring, basis.n))?.is_identity() {
        return Err(Error::Precondition("φ does not fix the identity".into()));
    }
    for _ in 0..hom_probes {
        let (g, h) = (sample()?, sample()?);
        if phi(&g.mul(&h))? != phi(&g)?.mul(&phi(&h)?) {
            return Err(Error::Precondition("φ fails the homomorphism test".into()));
        }
    }
    let top = k0 * (m - 1);
    let mut rungs = Vec::new();
    for l in k0 + 1..=top {
        let n = (2 * l + 1 - 2 * k0).min(top);
        if n > l {
            rungs.push(ladder_rung(phi, basis, ring, k0, l, n)?);
        }
    }
    let crit = ladder_rung(phi, basis, ring, k0, l_m, n_m)?;
    let theta_m = LinearLieMap::PAdic(crit.theta.clone());
    let s = &basis.structure;
    let residuals = hom_residuals(&theta_m, s, s)?;
    if !residuals.is_zero() {
        return Err(Error::Precondition(format!("θ_m is not a Lie-ring homomorphism mod p^{}", n_m - l_m)));
    }
    let pivots = padic::smith(&crit.theta).diag;
    let degenerate = pivots.len() < d || pivots.iter().any(|v| *v != Some(0));
    Ok(LadderReport { p, k0, m, l_m, n_m, rungs, theta_m, residuals, pivots, degenerate })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceReport {
    pub sup: f64,
    pub mean: f64,
    pub probes: usize,
}

/// sup over probes of d(f(g), Ψ(g)).
pub fn compare_to_reference(f: &PartialMap, psi: &dyn Fn(&GroupPoint) -> Result<GroupPoint>, probes: &[GroupPoint]) -> Result<ReferenceReport> {
    if probes.is_empty() {
        return Err(Error::Empty);
    }
    let mut sup = 0.0f64;
    let mut sum = 0.0;
    for g in probes {
        let dist = f.target().distance(&f.eval(g)?, &psi(g)?)?;
        sup = sup.max(dist);
        sum += dist;
    }
    Ok(ReferenceReport { sup, mean: sum / probes.len() as f64, probes: probes.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::haar_padic_sl;
    use proptest::prelude::*;
    use rand::Rng;

    fn su2() -> CompactGroupSpec {
        CompactGroupSpec::su(2)
    }

    fn random_coords<R: Rng>(r: f64, rng: &mut R) -> [f64; 3] {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() - 0.5);
        let n = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        v.map(|t| t * r / n)
    }

    fn conj(g: &CMat, rho: f64) -> PartialMap {
        PartialMap::conjugation(su2(), GroupPoint::Unitary(g.clone()), rho).unwrap()
    }

    #[test]
    fn structures_are_valid() {
        for s in [LieStructure::su2(), LieStructure::sl2(LieField::Real), LieStructure::sl2(LieField::PAdic(5)).scaled(5).unwrap()] {
            assert_eq!(s.jacobi_residual(), 0);
            assert_eq!(s.dim(), 3);
        }
        assert_eq!(LieStructure::su2().c(0, 1, 2), 2);
        assert_eq!(LieStructure::sl2(LieField::Real).c(1, 0, 2), -1);
        let bad = LieStructure::new("bad", 1, vec![1], LieField::Real);
        assert!(bad.is_err());
    }

    #[test]
    fn su2_constants_match_matrix_brackets() {
        let b = unitary::su2_basis();
        let s = LieStructure::su2();
        for j in 0..3 {
            for k in 0..3 {
                let v = unitary::su2_coords(&unitary::bracket(&b[j], &b[k]));
                for t in 0..3 {
                    assert!((v[t] - s.c(j, k, t) as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_and_zero_have_zero_residuals() {
        for s in [LieStructure::su2(), LieStructure::sl2(LieField::Real)] {
            assert!(hom_residuals(&LinearLieMap::identity_real(3), &s, &s).unwrap().is_zero());
            assert!(hom_residuals(&LinearLieMap::Real(DMatrix::zeros(3, 3)), &s, &s).unwrap().is_zero());
        }
        let ring = Zpk::new(5, 6).unwrap();
        let s = LieStructure::sl2(LieField::PAdic(5));
        let id = LinearLieMap::PAdic(PAdicMatrix::identity(ring, 3));
        let rep = hom_residuals(&id, &s, &s).unwrap();
        assert!(rep.is_zero());
        assert_eq!(rep.min_valuation(), Some(6));
    }

    #[test]
    fn residuals_reject_wrong_shape() {
        let s = LieStructure::su2();
        assert!(hom_residuals(&LinearLieMap::Real(DMatrix::zeros(2, 3)), &s, &s).is_err());
    }

    #[test]
    fn perturbed_identity_residual_is_linear_in_eps() {
        let s = LieStructure::su2();
        let mut prev = None;
        for eps in [1e-3, 1e-4, 1e-5] {
            let mut x = DMatrix::identity(3, 3);
            x[(0, 1)] += eps;
            let r = hom_residuals(&LinearLieMap::Real(x), &s, &s).unwrap().max_abs();
            if let Some(p) = prev {
                let ratio: f64 = p / r;
                assert!((ratio - 10.0).abs() < 0.05, "ratio {ratio}");
            }
            prev = Some(r);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s1 = LieStructure::sl2(LieField::Real);
        let s2 = LieStructure::su2();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>());
        let jac = jacobian_real(&x, &s1, &s2);
        let h = 1e-6;
        for col in 0..9 {
            let mut xp = x.clone();
            xp[(col / 3, col % 3)] += h;
            let mut xm = x.clone();
            xm[(col / 3, col % 3)] -= h;
            let (fp, fm) = (residuals_real(&xp, &s1, &s2), residuals_real(&xm, &s1, &s2));
            for row in 0..27 {
                assert!(((fp[row] - fm[row]) / (2.0 * h) - jac[(row, col)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn residuals_agree_with_brute_force_brackets() {
        let s = LieStructure::su2();
        let b = unitary::su2_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let x = if trial % 2 == 0 {
                adjoint_su2(&unitary::haar_su2(&mut rng))
            } else {
                DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5)
            };
            let t = LinearLieMap::Real(x);
            let img = |v: &[f64]| combine(&b, &t.apply_real(v).unwrap());
            let mut worst = 0.0f64;
            for j in 0..3 {
                for k in 0..3 {
                    let mut ej = [0.0; 3];
                    ej[j] = 1.0;
                    let mut ek = [0.0; 3];
                    ek[k] = 1.0;
                    let lhs = img(&s.bracket_coords(&ej, &ek));
                    let rhs = unitary::bracket(&img(&ej), &img(&ek));
                    worst = worst.max(unitary::op_norm(&(lhs - rhs)));
                }
            }
            let rep = hom_residuals(&t, &s, &s).unwrap().max_abs();
            assert_eq!(worst < 1e-10, rep < 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn json_round_trip() {
        let s = LieStructure::sl2(LieField::PAdic(5));
        let ring = Zpk::new(5, 4).unwrap();
        let x = LinearLieMap::PAdic(PAdicMatrix::from_fn(ring, 3, 3, |i, j| (i * 7 + j) as u64));
        assert_eq!(LinearLieMap::from_json(&x.to_json(&s, &s).unwrap()).unwrap(), x);
        let y = LinearLieMap::Real(DMatrix::from_fn(3, 3, |i, j| i as f64 - 0.3 * j as f64));
        let su = LieStructure::su2();
        assert_eq!(LinearLieMap::from_json(&y.to_json(&su, &su).unwrap()).unwrap(), y);
    }

    #[test]
    fn conjugation_has_zero_defect() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = conj(&unitary::haar_su2(&mut rng), 0.5);
        let probes: Vec<_> = (0..50)
            .map(|_| (GroupPoint::Unitary(unitary::su2_ball_sample(0.2, &mut rng)), GroupPoint::Unitary(unitary::su2_ball_sample(0.2, &mut rng))))
            .collect();
        assert!(approx_hom_defect(&f, &probes).unwrap().delta < 1e-12);
    }

    #[test]
    fn defect_rejects_probes_outside_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = conj(&unitary::haar_su2(&mut rng), 0.1);
        let g = GroupPoint::Unitary(unitary::su2_ball_sample(0.09, &mut rng));
        let far = GroupPoint::Unitary(unitary::su2_from_quaternion([0.0, 1.0, 0.0, 0.0]));
        assert!(approx_hom_defect(&f, &[(g, far)]).is_err());
    }

    #[test]
    fn absolute_noise_defect_is_at_most_three_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = 1e-3;
        let f = conj(&unitary::haar_su2(&mut rng), 1.0).with_noise(NoiseModel::Absolute(eps), 7).unwrap();
        let probes: Vec<_> = (0..100)
            .map(|_| (GroupPoint::Unitary(unitary::su2_ball_sample(0.4, &mut rng)), GroupPoint::Unitary(unitary::su2_ball_sample(0.4, &mut rng))))
            .collect();
        let d = approx_hom_defect(&f, &probes).unwrap().delta;
        assert!(d <= 3.0 * eps && d > eps / 10.0, "{d}");
    }

    #[test]
    fn reduction_then_lift_defect_is_below_p_cubed() {
        let spec = CompactGroupSpec::padic_sl(2, 5, 8).unwrap();
        let ring = Zpk::new(5, 8).unwrap();
        let s = spec.clone();
        let f = PartialMap::new(spec.clone(), spec.clone(), 1.0, move |g| {
            let m = g.as_padic().ok_or(Error::SpecMismatch)?;
            let a = m.get(0, 0) % 7;
            let u = PAdicMatrix::from_i64(ring, &[vec![1, 125 * a as i64], vec![0, 1]])?.into_sl()?;
            s.mul(g, &GroupPoint::PAdic(u))
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probes: Vec<_> = (0..50)
            .map(|_| (GroupPoint::PAdic(haar_padic_sl(ring, 2, &mut rng)), GroupPoint::PAdic(haar_padic_sl(ring, 2, &mut rng))))
            .collect();
        let d = approx_hom_defect(&f, &probes).unwrap().delta;
        assert!(d <= 5f64.powi(-3) + 1e-15 && d > 0.0);
    }

    #[test]
    fn theta_of_identity_and_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rho = 0.1;
        let id = PartialMap::new(su2(), su2(), rho, |h| Ok(h.clone())).unwrap();
        let g = unitary::haar_su2(&mut rng);
        let f = conj(&g, rho);
        let ad = adjoint_su2(&g);
        for _ in 0..20 {
            let v = random_coords(rho / 2.0 * rng.random::<f64>(), &mut rng);
            let x = unitary::su2_from_coords(&v);
            for k in [1, 3, 5] {
                assert!(unitary::op_norm(&(theta_map(&id, k, rho, &x).unwrap() - &x)) < 1e-10);
                let y = theta_map(&f, k, rho, &x).unwrap();
                let w = LinearLieMap::Real(ad.clone()).apply_real(&v).unwrap();
                assert!(unitary::op_norm(&(y - unitary::su2_from_coords(&[w[0], w[1], w[2]]))) < 1e-10);
            }
        }
        assert!(theta_map(&f, 3, rho, &unitary::su2_from_coords(&[0.1, 0.0, 0.0])).is_err());
    }

    #[test]
    fn theta_noise_scales_like_rho_power() {
        let rho: f64 = 0.1;
        let x = unitary::su2_from_coords(&[0.03, -0.02, 0.01]);
        for (m, k) in [(6u32, 2u32), (8, 3), (9, 4)] {
            let f = PartialMap::new(su2(), su2(), rho, |h| Ok(h.clone())).unwrap().with_noise(NoiseModel::Absolute(rho.powi(m as i32)), 11).unwrap();
            let err = unitary::op_norm(&(theta_map(&f, k, rho, &x).unwrap() - &x));
            assert!(err <= 1.01 * rho.powi((m - k) as i32), "m={m} k={k} err={err}");
        }
    }

    #[test]
    fn fit_recovers_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rho = 0.1;
        let g = unitary::haar_su2(&mut rng);
        let f = conj(&g, rho);
        let basis = unitary::su2_basis();
        let probes: Vec<CMat> = (0..30).map(|_| unitary::su2_from_coords(&random_coords(rho / 2.0 * rng.random::<f64>(), &mut rng))).collect();
        for mode in [FitMode::Basis, FitMode::LeastSquares] {
            let fit = fit_linear_theta(&f, 3, rho, &basis, mode, &probes).unwrap();
            let diff = fit.map.as_real().unwrap() - adjoint_su2(&g);
            assert!(diff.abs().max() < 1e-10, "{mode:?}");
            assert!(fit.residual < 1e-10);
        }
    }

    #[test]
    fn fit_residual_grows_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rho = 0.1;
        let g = unitary::haar_su2(&mut rng);
        let basis = unitary::su2_basis();
        let probes: Vec<CMat> = (0..30).map(|_| unitary::su2_from_coords(&random_coords(0.999 * rho / 2.0, &mut rng))).collect();
        let res: Vec<f64> = [1e-5, 1e-4, 1e-3]
            .iter()
            .map(|&e| {
                let f = conj(&g, rho).with_noise(NoiseModel::Relative(e), 3).unwrap();
                fit_linear_theta(&f, 3, rho, &basis, FitMode::LeastSquares, &probes).unwrap().residual
            })
            .collect();
        for w in res.windows(2) {
            let ratio = w[1] / w[0];
            assert!(ratio > 5.0 && ratio < 20.0, "{res:?}");
        }
    }

    #[test]
    fn projection_fixes_exact_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = LieStructure::su2();
        let t = LinearLieMap::Real(adjoint_su2(&unitary::haar_su2(&mut rng)));
        let rep = project_to_variety_real(&t, &s, &s).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.theta_hat, t);
        assert!(rep.is_isomorphism);
    }

    #[test]
    fn projection_repairs_perturbed_adjoint() {
        let s = LieStructure::su2();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let ad = adjoint_su2(&unitary::haar_su2(&mut rng));
            let pert = DMatrix::from_fn(3, 3, |_, _| 1e-3 * (rng.random::<f64>() - 0.5));
            let rep = project_to_variety_real(&LinearLieMap::Real(&ad + pert), &s, &s).unwrap();
            assert!(rep.max_residual <= GN_TOL);
            assert!(rep.distance_op < 5e-3);
            assert!(rep.is_isomorphism);
        }
    }

    #[test]
    fn projection_near_zero_finds_zero_morphism() {
        let s = LieStructure::su2();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = DMatrix::from_fn(3, 3, |_, _| 1e-3 * (rng.random::<f64>() - 0.5));
        let rep = project_to_variety_real(&LinearLieMap::Real(x), &s, &s).unwrap();
        assert!(!rep.is_isomorphism);
        assert!(rep.theta_hat.as_real().unwrap().abs().max() < 1e-6);
    }

    #[test]
    fn hensel_identity_lifts_to_itself() {
        let s = LieStructure::sl2(LieField::PAdic(5));
        let ring = Zpk::new(5, 3).unwrap();
        let rep = hensel_lift_hom(&PAdicMatrix::identity(ring, 3), &s, &s, 15).unwrap();
        assert!(rep.lift.as_padic().unwrap().is_identity());
        assert_eq!(rep.valuations, vec![15]);
    }

    #[test]
    fn hensel_lifts_adjoint_classes() {
        let s = LieStructure::sl2(LieField::PAdic(5));
        let ring = Zpk::new(5, 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..5 {
            let g = haar_padic_sl(ring, 2, &mut rng);
            let bar = adjoint_sl2(&g).unwrap().reduce_to(3).unwrap();
            let rep = hensel_lift_hom(&bar, &s, &s, 15).unwrap();
            let lift = rep.lift.as_padic().unwrap();
            assert!(hom_residuals(&rep.lift, &s, &s).unwrap().is_zero());
            for w in rep.valuations.windows(2) {
                assert!(w[1] >= (2 * w[0] - 2 * rep.s).min(15));
            }
            let gt = recover_conjugator_sl2(lift).unwrap();
            assert_eq!(&adjoint_sl2(&gt).unwrap(), lift);
        }
    }

    #[test]
    fn hensel_rejects_degenerate_jacobian() {
        let s = LieStructure::sl2(LieField::PAdic(5)).scaled(5).unwrap();
        let ring = Zpk::new(5, 1).unwrap();
        let bar = PAdicMatrix::from_fn(ring, 3, 3, |i, j| (i + 2 * j) as u64 % 5);
        match hensel_lift_hom(&bar, &s, &s, 10) {
            Err(Error::HenselCriterion { s, m }) => assert!(m <= 2 * s),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hensel_rejects_non_homomorphism() {
        let s = LieStructure::sl2(LieField::PAdic(5));
        let ring = Zpk::new(5, 3).unwrap();
        assert!(hensel_lift_hom(&PAdicMatrix::identity(ring, 3).scale(2), &s, &s, 10).is_err());
    }

    #[test]
    fn critical_levels_values() {
        assert_eq!(critical_levels(2, 6), (9, 8));
        assert_eq!(critical_levels(2, 12), (17, 20));
        assert_eq!(critical_levels(3, 10), (22, 25));
    }

    #[test]
    fn ladder_range_can_be_empty() {
        let basis = IntegralBasis::sl2(5);
        let phi = |g: &PAdicMatrix| Ok(g.clone());
        assert!(matches!(quotient_hom_ladder(&phi, &basis, 5, 2, 6, 5, 0), Err(Error::EmptyLevelRange { .. })));
    }

    #[test]
    fn ladder_of_identity_and_conjugation() {
        let basis = IntegralBasis::sl2(5);
        let id = |g: &PAdicMatrix| Ok(g.clone());
        let rep = quotient_hom_ladder(&id, &basis, 5, 2, 12, 10, 1).unwrap();
        assert!(rep.theta_m.as_padic().unwrap().is_identity());
        assert!(!rep.degenerate);
        assert!(rep.rungs.iter().all(|r| r.theta.is_identity() && r.target_level == r.l));

        let ring = Zpk::new(5, 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = haar_padic_sl(ring, 2, &mut rng);
        let gi = g.inverse().unwrap();
        let gc = g.clone();
        let phi = move |h: &PAdicMatrix| Ok(gc.mul(h).mul(&gi));
        let rep = quotient_hom_ladder(&phi, &basis, 5, 2, 12, 10, 1).unwrap();
        let expect = adjoint_sl2(&g).unwrap().reduce_to(rep.n_m - rep.l_m).unwrap();
        assert_eq!(rep.theta_m.as_padic().unwrap(), &expect);
        assert!(!rep.degenerate);
    }

    #[test]
    fn ladder_flags_trivial_map() {
        let basis = IntegralBasis::sl2(5);
        let ring = Zpk::new(5, 24).unwrap();
        let triv = move |_: &PAdicMatrix| Ok(PAdicMatrix::identity(ring, 2));
        let rep = quotient_hom_ladder(&triv, &basis, 5, 2, 12, 5, 3).unwrap();
        assert!(rep.degenerate);
    }

    #[test]
    fn ladder_rejects_non_homomorphism() {
        let basis = IntegralBasis::sl2(5);
        let sq = |g: &PAdicMatrix| Ok(g.mul(g).mul(g).transpose());
        assert!(quotient_hom_ladder(&sq, &basis, 5, 2, 12, 10, 4).is_err());
    }

    #[test]
    fn compare_reports_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let g = unitary::haar_su2(&mut rng);
        let eps = 1e-4;
        let f = conj(&g, 0.5).with_noise(NoiseModel::Absolute(eps), 1).unwrap();
        let exact = conj(&g, 0.5);
        let probes: Vec<_> = (0..50).map(|_| GroupPoint::Unitary(unitary::su2_ball_sample(0.4, &mut rng))).collect();
        let same = compare_to_reference(&exact, &|h| exact.eval(h), &probes).unwrap();
        assert!(same.sup < 1e-14);
        let rep = compare_to_reference(&f, &|h| exact.eval(h), &probes).unwrap();
        assert!(rep.sup >= eps / 2.0 && rep.sup <= 2.0 * eps, "{}", rep.sup);
    }

    #[test]
    fn pipeline_recovers_adjoint_under_relative_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rho = 0.1;
        let g = unitary::haar_su2(&mut rng);
        let f = conj(&g, rho).with_noise(NoiseModel::Relative(1e-4), 5).unwrap();
        let s = LieStructure::su2();
        let fit = fit_linear_theta(&f, 3, rho, &unitary::su2_basis(), FitMode::Basis, &[]).unwrap();
        let proj = project_to_variety_real(&fit.map, &s, &s).unwrap();
        assert!(proj.max_residual <= GN_TOL);
        let fhat = PartialMap::from_su2_lie_map(&proj.theta_hat, rho).unwrap();
        let exact = conj(&g, rho);
        let probes: Vec<_> = (0..100).map(|_| GroupPoint::Unitary(unitary::su2_ball_sample(rho, &mut rng))).collect();
        assert!(compare_to_reference(&fhat, &|h| exact.eval(h), &probes).unwrap().sup <= 1e-3);
    }

    fn quad_family(seed: u64) -> (PartialMap, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho: f64 = 0.5;
        let f = conj(&unitary::haar_su2(&mut rng), rho).with_noise(NoiseModel::Quadratic(rho.powi(2)), seed).unwrap();
        (f, rho)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn theta_additivity_defect_decays(seed in 0u64..1000, a in prop::array::uniform3(-1.0f64..1.0), b in prop::array::uniform3(-1.0f64..1.0)) {
            let (f, rho) = quad_family(seed);
            let scale = |v: [f64; 3]| {
                let n = v.iter().map(|t| t * t).sum::<f64>().sqrt().max(1e-3);
                unitary::su2_from_coords(&v.map(|t| t * rho / 4.0 / n))
            };
            let (x, y) = (scale(a), scale(b));
            let defects: Vec<f64> = (3..=8).map(|k| {
                let s = theta_map(&f, k, rho, &(&x + &y)).unwrap();
                unitary::op_norm(&(s - theta_map(&f, k, rho, &x).unwrap() - theta_map(&f, k, rho, &y).unwrap()))
            }).collect();
            for w in defects.windows(2) {
                prop_assert!(w[1] <= w[0] * 1.001 + 1e-9, "{:?}", defects);
            }
        }

        #[test]
        fn theta_doubling_and_commutators(seed in 0u64..1000, a in prop::array::uniform3(-1.0f64..1.0), b in prop::array::uniform3(-1.0f64..1.0)) {
            let (f, rho) = quad_family(seed);
            let x = unitary::su2_from_coords(&a.map(|t| t * rho / 8.0));
            let y = unitary::su2_from_coords(&b.map(|t| t * rho / 8.0));
            for k in 2..5u32 {
                let d = unitary::op_norm(&(theta_map(&f, 2 * k, rho, &x).unwrap() - theta_map(&f, k, rho, &x).unwrap()));
                prop_assert!(d <= 10.0 * rho.powi(k as i32 + 2), "k={} d={}", k, d);
                let xy = unitary::bracket(&x, &y);
                let lhs = theta_map(&f, 2 * k, rho, &xy).unwrap();
                let rhs = unitary::bracket(&theta_map(&f, k, rho, &x).unwrap(), &theta_map(&f, k, rho, &y).unwrap());
                prop_assert!(unitary::op_norm(&(lhs - rhs)) <= 10.0 * rho.powi(k as i32 + 2));
            }
        }

        #[test]
        fn adjoint_maps_are_homomorphisms(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = LieStructure::su2();
            let t = LinearLieMap::Real(adjoint_su2(&unitary::haar_su2(&mut rng)));
            prop_assert!(hom_residuals(&t, &s, &s).unwrap().max_abs() < 1e-12);
            let ring = Zpk::new(7, 10).unwrap();
            let sp = LieStructure::sl2(LieField::PAdic(7));
            let tp = LinearLieMap::PAdic(adjoint_sl2(&haar_padic_sl(ring, 2, &mut rng)).unwrap());
            prop_assert!(hom_residuals(&tp, &sp, &sp).unwrap().is_zero());
        }
    }
}
