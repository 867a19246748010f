use std::time::Instant;

use num_rational::BigRational;
use num_traits::{One, Signed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slab_core::groups::{CompactGroupSpec, GroupPoint};
use slab_core::padic::{PAdicMatrix, Zpk};
use slab_core::transport::{correct_coupling, decompose, is_admissible, symmetric_coupling_pipeline, CouplingMatrix, Scalar};
use slab_core::walks::FiniteSupportMeasure;

fn q(a: i64, b: i64) -> BigRational {
    <BigRational as Scalar>::from_ratio(a, b)
}

fn elementary(p: u64, k: u32) -> Vec<PAdicMatrix> {
    let ring = Zpk::new(p, k).unwrap();
    [[1, 1, 0, 1], [1, -1, 0, 1], [1, 0, 1, 1], [1, 0, -1, 1]]
        .iter()
        .map(|e| PAdicMatrix::from_i64(ring, &[vec![e[0], e[1]], vec![e[2], e[3]]]).unwrap().into_sl().unwrap())
        .collect()
}

#[test]
fn pipeline_on_congruence_quotients() {
    let t = Instant::now();
    let spec = CompactGroupSpec::product(CompactGroupSpec::padic_sl(2, 3, 2).unwrap(), CompactGroupSpec::padic_sl(2, 5, 2).unwrap());
    let pts: Vec<GroupPoint> = elementary(3, 2)
        .into_iter()
        .zip(elementary(5, 2))
        .map(|(a, b)| GroupPoint::pair(GroupPoint::PAdic(a), GroupPoint::PAdic(b)))
        .collect();
    let mu = FiniteSupportMeasure::uniform(&spec, &pts).unwrap();
    let r = symmetric_coupling_pipeline(&spec, &mu, 200, 0.2, 0.4, 3.0).unwrap();
    assert_eq!((r.n1, r.n2), (24, 120));
    assert!(r.nu_exact_coupling && r.nu_symmetric);
    assert!(r.max_cell_error <= r.correction_bound);
    eprintln!("pipeline: {} terms, max cell error {:e}, {:.2?}", r.terms, r.max_cell_error, t.elapsed());
}

#[test]
fn product_of_haar_is_kept() {
    let spec = CompactGroupSpec::product(CompactGroupSpec::padic_sl(2, 3, 1).unwrap(), CompactGroupSpec::padic_sl(2, 5, 1).unwrap());
    let (a, b) = (elementary(3, 1), elementary(5, 1));
    let pts: Vec<GroupPoint> =
        a.iter().flat_map(|x| b.iter().map(move |y| GroupPoint::pair(GroupPoint::PAdic(x.clone()), GroupPoint::PAdic(y.clone())))).collect();
    let mu = FiniteSupportMeasure::uniform(&spec, &pts).unwrap();
    let r = symmetric_coupling_pipeline(&spec, &mu, 400, 0.2, 0.4, 3.0).unwrap();
    assert!(r.nu_exact_coupling);
    let u = 1.0 / (24.0 * 120.0);
    assert!(r.nu_cells.rows.iter().flatten().all(|x| (x - u).abs() <= r.correction_bound));
}

#[test]
fn random_couplings_decompose_exactly() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let (n1, n2) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let raw: Vec<Vec<i64>> = (0..n1).map(|_| (0..n2).map(|_| if rng.random_bool(0.15) { 0 } else { rng.random_range(1..100) }).collect()).collect();
        let total: i64 = raw.iter().flatten().sum::<i64>().max(1);
        let mut rows: Vec<Vec<BigRational>> = raw.iter().map(|r| r.iter().map(|&x| q(x, total)).collect()).collect();
        if raw.iter().flatten().all(|&x| x == 0) {
            rows[0][0] = BigRational::one();
        }
        let s = CouplingMatrix::new(rows).unwrap();
        let d = decompose(&s).unwrap();
        assert_eq!(d.reconstruct().unwrap(), s);
        assert_eq!(d.weight_sum(), BigRational::one());
        assert!(d.terms.len() <= (n1 - 1) * (n2 - 1) + 2);
        assert!(d.terms.iter().all(|(c, t)| c.is_positive() && is_admissible(t, &d.margins.0, &d.margins.1).unwrap()));
    }
    eprintln!("1000 decompositions in {:.2?}", t.elapsed());
}

#[test]
fn perturbed_uniform_couplings_are_repaired_within_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = 3.0;
    for _ in 0..200 {
        let (n1, n2) = (6usize, 6usize);
        let nn = (n1 * n2) as i64;
        // a random coupling of uniforms: mixture of permutation matrices and the product
        let mut base = vec![vec![q(1, nn * 2); n2]; n1];
        let mut perm: Vec<usize> = (0..n2).collect();
        for k in (1..n2).rev() {
            perm.swap(k, rng.random_range(0..=k));
        }
        for i in 0..n1 {
            base[i][perm[i]] = &base[i][perm[i]] + q(1, 2 * n1 as i64);
        }
        // perturbation with margin deviation at most (N₁N₂)^-A
        let scale = 2 * nn.pow(3) * n1.max(n2) as i64;
        let d: Vec<BigRational> = (0..nn).map(|_| q(rng.random_range(-1000..=1000), 1000 * scale)).collect();
        let mean = d.iter().sum::<BigRational>() / q(nn, 1);
        for (x, e) in base.iter_mut().flatten().zip(&d) {
            *x = &*x + e - &mean;
        }
        let m = CouplingMatrix::new(base).unwrap();
        let c = correct_coupling(&m, a).unwrap();
        assert!(c.nu.is_uniform_coupling());
        assert!(c.within_bound(), "{} > {}", c.max_diff, c.bound);
    }
}
