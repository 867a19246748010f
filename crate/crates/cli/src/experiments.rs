use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use slab_core::approx_hom::{
    adjoint_sl2, compare_to_reference, fit_linear_theta, hensel_lift_hom, hom_residuals, project_to_variety_real, recover_conjugator_sl2, FitMode, LieField, LieStructure,
    NoiseModel, PartialMap,
};
use slab_core::counterexample::{no_gap_witness, CouplingKind, DecayReport};
use slab_core::groups::finite::sl2_mod;
use slab_core::groups::unitary::{self, CMat};
use slab_core::groups::{haar_padic_sl, renyi_entropy_exact, CompactGroupSpec, FiniteGroup, GroupPoint};
use slab_core::numerics::{self, calibrate_commutator_constant, solve_padic_ift, solve_real_ift, PAdicPolyMap, SmoothMapProbe};
use slab_core::padic::{PAdicMatrix, Zpk};
use slab_core::transport::{correct_coupling, decompose, CouplingMatrix};
use slab_core::walks::{spectral_gap_exact, GeneratorSet, SpectralReport};

use crate::config::{ApproxHomMode, CouplingChoice, ExperimentConfig, ExperimentKind, IftMode};
use crate::stream_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub results: serde_json::Value,
    pub wall_time_s: f64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner()?)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub tables: Vec<Table>,
    pub plot: Vec<Table>,
}

fn s<T: ToString>(x: T) -> String {
    x.to_string()
}

fn e(x: f64) -> String {
    format!("{x:e}")
}

/// λ of the uniform measure on the elementary generators of SL₂(Z/p) and their inverses.
pub fn elementary_walk_gap(p: u64) -> Result<SpectralReport> {
    let (g, _) = sl2_mod(p, 1)?;
    let g = Arc::new(g);
    let omega = GeneratorSet::symmetric_closure(&g, &[1, 2]);
    let spec = CompactGroupSpec::FiniteGroup(g);
    let mu = omega.uniform_measure(&spec)?;
    Ok(spectral_gap_exact(&spec, &mu)?)
}

/// Φ(x) = b + A(x − x₀) + ½(x − x₀)ᵀQ(x − x₀) on R² with Gaussian data and σ(A) ≥ 0.2.
pub fn random_quadratic_probe<R: Rng + ?Sized>(rng: &mut R) -> Result<SmoothMapProbe> {
    let mut g = || -> f64 { rng.sample(StandardNormal) };
    let a = loop {
        let a = DMatrix::from_fn(2, 2, |_, _| g());
        if numerics::sigma_real(&a)? >= 0.2 {
            break a;
        }
    };
    let q = (0..2).map(|_| DMatrix::from_fn(2, 2, |_, _| 0.5 * g())).collect();
    let b = vec![g(), g()];
    let x0 = vec![g(), g()];
    Ok(SmoothMapProbe::quadratic(b, a, q, x0, 1.0)?)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IftBatch {
    pub sigma0: f64,
    pub alpha: f64,
    pub radius: f64,
    pub attempted: usize,
    pub solved: usize,
    pub max_residual: f64,
    /// max ‖x − x₀‖/r over solved targets.
    pub max_distance_ratio: f64,
}

/// Targets uniform in Φ(x₀)_{σ₀r/4} with r = 0.99·min(r₀, σ₀/(2mn√α)).
pub fn real_ift_batch<R: Rng + ?Sized>(probe: &SmoothMapProbe, targets: usize, rng: &mut R) -> Result<IftBatch> {
    let sigma0 = probe.sigma0()?;
    let radius = 0.99 * probe.admissible_radius(sigma0);
    let base = probe.eval(&probe.x0);
    let mut out = IftBatch { sigma0, alpha: probe.alpha, radius, ..Default::default() };
    for _ in 0..targets {
        let d = numerics::uniform_ball(probe.m, sigma0 * radius / 4.0, rng);
        let y: Vec<f64> = base.iter().zip(&d).map(|(a, b)| a + b).collect();
        out.attempted += 1;
        if let Ok(sol) = solve_real_ift(probe, &y, radius) {
            if sol.residual <= numerics::IFT_TOL && sol.distance <= radius {
                out.solved += 1;
            }
            out.max_residual = out.max_residual.max(sol.residual);
            out.max_distance_ratio = out.max_distance_ratio.max(sol.distance / radius);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PAdicIftBatch {
    pub k0: u32,
    pub l: u32,
    pub attempted: usize,
    pub solved: usize,
}

/// Targets Φ(x₀) + p^{k₀+l}·u for uniform u, solved by Hensel–Newton and checked exactly.
pub fn padic_ift_batch<R: Rng + ?Sized>(map: &PAdicPolyMap, k0: u32, l: u32, targets: usize, rng: &mut R) -> Result<PAdicIftBatch> {
    let r = map.ring();
    let base = map.eval(map.x0());
    let mut out = PAdicIftBatch { k0, l, ..Default::default() };
    for _ in 0..targets {
        let y: Vec<u64> = base.iter().map(|&b| r.add(b, r.mul(r.p_pow(k0 + l), r.random(rng)))).collect();
        out.attempted += 1;
        if let Ok(sol) = solve_padic_ift(map, &y, k0, l) {
            out.solved += usize::from(map.eval(&sol.x) == y);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaOutcome {
    pub fit_residual: f64,
    pub projection_residual: f64,
    pub sigma_min: f64,
    pub is_isomorphism: bool,
    pub reference_sup: f64,
}

/// θ-pipeline on h ↦ ghg⁻¹ with relative output noise: fit θ_k on a basis, project, compare.
pub fn theta_pipeline(g: &CMat, rho: f64, k: u32, noise: f64, seed: u64, probes: usize) -> Result<ThetaOutcome> {
    let spec = CompactGroupSpec::su(2);
    let s = LieStructure::su2();
    let exact = PartialMap::conjugation(spec, GroupPoint::Unitary(g.clone()), rho)?;
    let f = exact.clone().with_noise(NoiseModel::Relative(noise), seed)?;
    let fit = fit_linear_theta(&f, k, rho, &unitary::su2_basis(), FitMode::Basis, &[])?;
    let proj = project_to_variety_real(&fit.map, &s, &s)?;
    let fhat = PartialMap::from_su2_lie_map(&proj.theta_hat, rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6f62);
    let pts: Vec<GroupPoint> = (0..probes).map(|_| GroupPoint::Unitary(unitary::su2_ball_sample(rho, &mut rng))).collect();
    let rep = compare_to_reference(&fhat, &|h| exact.eval(h), &pts)?;
    Ok(ThetaOutcome { fit_residual: fit.residual, projection_residual: proj.max_residual, sigma_min: proj.sigma_min, is_isomorphism: proj.is_isomorphism, reference_sup: rep.sup })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HenselOutcome {
    pub s: u32,
    pub valuations: Vec<u32>,
    pub residuals_vanish: bool,
    pub doubling: bool,
    /// The lift is Ad(g̃) for a recovered g̃ ∈ GL₂.
    pub adjoint_form: bool,
    /// lift ≡ Ad(g) mod p^{input−s}, the precision the input determines.
    pub agrees_to_determined_precision: bool,
    /// lift = Ad(g) mod p^target.
    pub literal_agreement: bool,
}

pub fn hensel_adjoint(g: &PAdicMatrix, input_level: u32) -> Result<HenselOutcome> {
    let target = g.k();
    let st = LieStructure::sl2(LieField::PAdic(g.p()));
    let ad = adjoint_sl2(g)?;
    let rep = hensel_lift_hom(&ad.reduce_to(input_level)?, &st, &st, target)?;
    let lift = rep.lift.as_padic().context("p-adic lift expected")?;
    let residuals_vanish = hom_residuals(&rep.lift, &st, &st)?.is_zero();
    let doubling = rep.valuations.last() == Some(&target) && rep.valuations.windows(2).all(|w| w[1] >= (2 * w[0]).saturating_sub(2 * rep.s).min(target));
    let adjoint_form = recover_conjugator_sl2(lift).and_then(|gt| adjoint_sl2(&gt)).map(|a| &a == lift).unwrap_or(false);
    let det = input_level.saturating_sub(rep.s).max(1);
    let agrees = lift.reduce_to(det)? == ad.reduce_to(det)?;
    Ok(HenselOutcome {
        s: rep.s,
        valuations: rep.valuations.clone(),
        residuals_vanish,
        doubling,
        adjoint_form,
        agrees_to_determined_precision: agrees,
        literal_agreement: lift == &ad,
    })
}

/// (order-k truncation error against the dense log, tail bound) for one pair.
pub fn bch_pair(x: &CMat, y: &CMat, order: u32) -> Result<(f64, f64)> {
    let z = numerics::bch(x, y, order)?;
    let truth = numerics::dense_log(&(unitary::expm(x) * unitary::expm(y)))?;
    Ok((unitary::op_norm(&(&z.value - truth)), z.tail_bound))
}

pub fn random_su2_element<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> CMat {
    let v = numerics::uniform_ball(3, radius, rng);
    unitary::su2_from_coords(&[v[0], v[1], v[2]])
}

/// Exact H₂ of the product and diagonal couplings of the uniform measures on (Z/n)².
pub fn coupling_entropies(n: usize, eta: f64) -> Result<(f64, f64)> {
    let z = CompactGroupSpec::finite(FiniteGroup::cyclic(n)?);
    let spec = CompactGroupSpec::product(z.clone(), z);
    let pair = |a: usize, b: usize| GroupPoint::pair(GroupPoint::Finite(a), GroupPoint::Finite(b));
    let w = 1.0 / (n * n) as f64;
    let product: Vec<_> = (0..n).flat_map(|a| (0..n).map(move |b| (pair(a, b), w))).collect();
    let diagonal: Vec<_> = (0..n).map(|a| (pair(a, a), 1.0 / n as f64)).collect();
    Ok((renyi_entropy_exact(&spec, &product, eta)?, renyi_entropy_exact(&spec, &diagonal, eta)?))
}

fn decay_json(rep: &DecayReport) -> serde_json::Value {
    serde_json::to_value(rep).unwrap_or_default()
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let kind = config.validate()?;
    let seed = config.seed();
    let start = Instant::now();
    let mut tables = Vec::new();
    let mut plot = Vec::new();
    let results = match kind {
        ExperimentKind::Walk => {
            let mut t = Table::new("walk", &["p", "order", "lambda", "lyapunov", "method"]);
            let mut out = Vec::new();
            for &p in &config.walk.primes {
                let r = elementary_walk_gap(p)?;
                t.push(vec![s(p), s(r.dim), format!("{:.12}", r.lambda), format!("{:.12}", r.lyapunov), r.method.clone()]);
                out.push(json!({"p": p, "lambda": r.lambda, "lyapunov": r.lyapunov, "order": r.dim}));
            }
            tables.push(t);
            json!({ "walks": out })
        }
        ExperimentKind::Transport => {
            let rows: Vec<Vec<BigRational>> = config
                .transport
                .coupling
                .iter()
                .map(|r| r.iter().map(|x| BigRational::from_str(x.trim())).collect::<std::result::Result<_, _>>())
                .collect::<std::result::Result<_, _>>()?;
            let sigma = CouplingMatrix::new(rows)?;
            let dec = decompose(&sigma)?;
            let mut t = Table::new("transport", &["term", "weight", "edges"]);
            for (i, (c, tree)) in dec.terms.iter().enumerate() {
                let edges: Vec<String> = tree.edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
                t.push(vec![s(i), s(c), edges.join(" ")]);
            }
            tables.push(t);
            let exact = dec.reconstruct()? == sigma;
            let mut res = json!({"terms": dec.terms.len(), "reconstruction_exact": exact});
            if let Some(a) = config.transport.a {
                let cc = correct_coupling(&sigma, a)?;
                let mut t = Table::new("transport_corrected", &["row", "col", "value"]);
                for (i, r) in cc.nu.rows.iter().enumerate() {
                    for (j, v) in r.iter().enumerate() {
                        t.push(vec![s(i), s(j), s(v)]);
                    }
                }
                tables.push(t);
                res["corrected"] = json!({"max_diff": cc.max_diff, "bound": cc.bound, "uniform_coupling": cc.nu.is_uniform_coupling()});
            }
            res
        }
        ExperimentKind::Approxhom => {
            let c = &config.approxhom;
            match c.mode {
                ApproxHomMode::Real => {
                    let mut t = Table::new("approxhom", &["instance", "fit_residual", "projection_residual", "sigma_min", "reference_sup"]);
                    let mut out = Vec::new();
                    for i in 0..c.count {
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, i as u64));
                        let g = unitary::haar_su2(&mut rng);
                        let o = theta_pipeline(&g, c.rho, c.k, c.noise, stream_seed(seed, 1 << 32 | i as u64), 200)?;
                        t.push(vec![s(i), e(o.fit_residual), e(o.projection_residual), s(o.sigma_min), e(o.reference_sup)]);
                        out.push(o);
                    }
                    tables.push(t);
                    json!({ "instances": out })
                }
                ApproxHomMode::Padic => {
                    let ring = Zpk::new(c.p, c.target_level)?;
                    let mut t = Table::new("approxhom", &["instance", "s", "valuations", "doubling", "adjoint_form", "agrees_mod_determined", "literal_agreement"]);
                    let mut out = Vec::new();
                    for i in 0..c.count {
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, i as u64));
                        let g = haar_padic_sl(ring, 2, &mut rng);
                        let o = hensel_adjoint(&g, c.input_level)?;
                        let vals: Vec<String> = o.valuations.iter().map(|v| v.to_string()).collect();
                        t.push(vec![s(i), s(o.s), vals.join(" "), s(o.doubling), s(o.adjoint_form), s(o.agrees_to_determined_precision), s(o.literal_agreement)]);
                        out.push(o);
                    }
                    tables.push(t);
                    json!({ "instances": out })
                }
            }
        }
        ExperimentKind::Counterexample => {
            let c = &config.counterexample;
            let kind = match c.coupling {
                CouplingChoice::Block => CouplingKind::BlockReversal,
                CouplingChoice::Product => CouplingKind::Product,
            };
            let w = no_gap_witness(seed, c.p, c.m, c.j_max, c.n, kind)?;
            let mut t = Table::new("counterexample", &["j", "max_abs_gamma_minus_1", "bound", "abs_mu_hat"]);
            let mut pl = Table::new("counterexample_plot", &["j", "log_p_max_dev", "log_p_bound", "abs_mu_hat", "witness_threshold"]);
            let lp = (c.p as f64).ln();
            for (r, th) in w.report.rows.iter().zip(&w.thresholds) {
                t.push(vec![s(r.j), e(r.max_deviation), e(r.bound), s(r.fourier_abs)]);
                pl.push(vec![s(r.j), s(r.max_deviation.ln() / lp), s(r.bound.ln() / lp), s(r.fourier_abs), s(th)]);
            }
            tables.push(t);
            plot.push(pl);
            json!({"report": decay_json(&w.report), "verdict": w.verdict, "band": w.band, "thresholds": w.thresholds})
        }
        ExperimentKind::Ift => {
            let c = &config.ift;
            match c.mode {
                IftMode::Real => {
                    let mut t = Table::new("ift", &["map", "sigma0", "alpha", "radius", "attempted", "solved", "max_residual"]);
                    let mut out = Vec::new();
                    for i in 0..c.maps {
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, i as u64));
                        let probe = random_quadratic_probe(&mut rng)?;
                        let b = real_ift_batch(&probe, c.targets, &mut rng)?;
                        t.push(vec![s(i), s(b.sigma0), s(b.alpha), e(b.radius), s(b.attempted), s(b.solved), e(b.max_residual)]);
                        out.push(b);
                    }
                    tables.push(t);
                    json!({ "maps": out })
                }
                IftMode::Padic => {
                    let ring = Zpk::new(c.p, c.precision)?;
                    let mut t = Table::new("ift", &["map", "k0", "l", "attempted", "solved"]);
                    let mut out = Vec::new();
                    for i in 0..c.maps {
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, i as u64));
                        let map = PAdicPolyMap::random(ring, 3, 2, c.k0, &mut rng)?;
                        for l in c.k0 + 1..=c.k0 + 3 {
                            let b = padic_ift_batch(&map, c.k0, l, c.targets, &mut rng)?;
                            t.push(vec![s(i), s(b.k0), s(b.l), s(b.attempted), s(b.solved)]);
                            out.push(b);
                        }
                    }
                    tables.push(t);
                    json!({ "batches": out })
                }
                IftMode::Commutator => {
                    let chat = calibrate_commutator_constant(c.rho1, c.rho2, c.targets, seed)?;
                    let mut t = Table::new("ift", &["rho1", "rho2", "samples", "c_hat"]);
                    t.push(vec![s(c.rho1), s(c.rho2), s(c.targets), s(chat)]);
                    tables.push(t);
                    json!({"commutator_constant": chat, "rho1": c.rho1, "rho2": c.rho2, "samples": c.targets})
                }
            }
        }
        ExperimentKind::Bch => {
            let c = &config.bch;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pl = Table::new("bch_plot", &["pair", "norm_sum", "error", "tail_bound"]);
            let mut worst_ratio = 0.0f64;
            let mut violations = 0;
            for i in 0..c.pairs {
                let (x, y) = (random_su2_element(c.radius, &mut rng), random_su2_element(c.radius, &mut rng));
                let (err, bound) = bch_pair(&x, &y, c.order)?;
                violations += usize::from(err > bound);
                if bound > 0.0 {
                    worst_ratio = worst_ratio.max(err / bound);
                }
                pl.push(vec![s(i), s(unitary::op_norm(&x) + unitary::op_norm(&y)), e(err), e(bound)]);
            }
            let pairs: Vec<(CMat, CMat)> = (0..c.pairs.min(200)).map(|_| (random_su2_element(1.0, &mut rng), random_su2_element(1.0, &mut rng))).collect();
            let mut t = Table::new("bch", &["eta", "c_eta"]);
            let mut cs = Vec::new();
            for &eta in &c.etas {
                let mut cmax = 0.0f64;
                for (x, y) in &pairs {
                    cmax = cmax.max(numerics::commutator_expansion_error(x, y, eta)? / eta.powi(3));
                }
                t.push(vec![s(eta), s(cmax)]);
                cs.push(json!({"eta": eta, "c": cmax}));
            }
            tables.push(t);
            plot.push(pl);
            json!({"order": c.order, "violations": violations, "worst_error_to_bound": worst_ratio, "commutator_constants": cs})
        }
        ExperimentKind::Entropy => {
            let c = &config.entropy;
            let (hp, hd) = coupling_entropies(c.n, c.eta)?;
            let mut t = Table::new("entropy", &["coupling", "h2", "log_n"]);
            let ln = (c.n as f64).ln();
            t.push(vec![s("product"), s(hp), s(ln)]);
            t.push(vec![s("diagonal"), s(hd), s(ln)]);
            tables.push(t);
            json!({"product": hp, "diagonal": hd, "log_n": ln})
        }
    };
    let record = RunRecord {
        experiment: kind.name().into(),
        seed,
        config: config.clone(),
        results,
        wall_time_s: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    Ok(RunOutput { record, tables, plot })
}

/// Writes `<experiment>.json` and one CSV per table (plus plot tables when asked).
pub fn write_outputs(out: &RunOutput, dir: &Path, emit_plot: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let json_path = dir.join(format!("{}.json", out.record.experiment));
    std::fs::write(&json_path, serde_json::to_vec_pretty(&out.record)?)?;
    written.push(json_path);
    let tables = out.tables.iter().chain(if emit_plot { out.plot.iter() } else { [].iter() });
    for t in tables {
        if t.name.contains('/') {
            bail!("bad table name {}", t.name);
        }
        let p = dir.join(format!("{}.csv", t.name));
        std::fs::write(&p, t.to_csv()?)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_hand_example() {
        let mut c = ExperimentConfig { experiment: Some(ExperimentKind::Transport), ..Default::default() };
        c.transport.a = Some(3.0);
        let out = run(&c).unwrap();
        assert_eq!(out.record.results["reconstruction_exact"], json!(true));
        let t = &out.tables[0];
        assert!(t.rows.len() <= 2);
        let total: BigRational = t.rows.iter().map(|r| BigRational::from_str(&r[1]).unwrap()).sum();
        assert_eq!(total, BigRational::from_integer(1.into()));
        assert_eq!(out.record.results["corrected"]["max_diff"], json!(0.0));
    }

    #[test]
    fn exact_experiments_are_byte_identical() {
        let c = ExperimentConfig { experiment: Some(ExperimentKind::Transport), ..Default::default() };
        let (a, b) = (run(&c).unwrap(), run(&c).unwrap());
        assert_eq!(a.tables[0].to_csv().unwrap(), b.tables[0].to_csv().unwrap());
        assert_eq!(a.record.results, b.record.results);
        let mut c = ExperimentConfig { experiment: Some(ExperimentKind::Counterexample), ..Default::default() };
        c.counterexample.n = 2000;
        let (a, b) = (run(&c).unwrap(), run(&c).unwrap());
        assert_eq!(a.tables[0].to_csv().unwrap(), b.tables[0].to_csv().unwrap());
    }

    #[test]
    fn csv_quotes_fields_with_separators() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec!["1, 2".into(), "say \"hi\"".into()]);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "a,b\r\n\"1, 2\",\"say \"\"hi\"\"\"\r\n");
    }

    #[test]
    fn entropy_of_product_and_diagonal() {
        let (hp, hd) = coupling_entropies(8, 0.5).unwrap();
        assert!((hp - 2.0 * 8f64.ln()).abs() < 1e-12 && (hd - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn writes_record_and_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig { experiment: Some(ExperimentKind::Counterexample), ..Default::default() };
        c.counterexample.n = 1000;
        let out = run(&c).unwrap();
        let files = write_outputs(&out, dir.path(), true).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["counterexample.json", "counterexample.csv", "counterexample_plot.csv"]);
        let rec: RunRecord = serde_json::from_slice(&std::fs::read(&files[0]).unwrap()).unwrap();
        assert_eq!(rec.config, c);
    }
}
