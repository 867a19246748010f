use std::sync::Arc;
use std::time::Instant;

use slab_core::groups::finite::sl2_mod;
use slab_core::groups::CompactGroupSpec;
use slab_core::walks::{spectral_gap_exact, GeneratorSet};

/// λ for the uniform measure on {A^±1, B^±1} in SL2(Z/p), from an independent dense solve.
const SL2_BASELINES: [(u64, f64); 5] = [
    (3, 0.6830127018922196),
    (5, 0.8090169943749483),
    (7, 0.8903882032022097),
    (11, 0.9330127018922232),
    (13, 0.9563932802663033),
];

#[test]
fn sl2_elementary_walk_gaps_match_baselines() {
    for (p, want) in SL2_BASELINES {
        let t = Instant::now();
        let (g, _) = sl2_mod(p, 1).unwrap();
        let g = Arc::new(g);
        let omega = GeneratorSet::symmetric_closure(&g, &[1, 2]);
        assert_eq!(omega.len(), 4);
        let spec = CompactGroupSpec::FiniteGroup(g);
        let mu = omega.uniform_measure(&spec).unwrap();
        let r = spectral_gap_exact(&spec, &mu).unwrap();
        assert!(r.lambda < 1.0);
        assert!((r.lambda - want).abs() < 1e-8, "p = {p}: {} vs {want}", r.lambda);
        eprintln!("p = {p}: λ = {:.12} in {:.2?}", r.lambda, t.elapsed());
    }
}
