//! Runs each scene at two scales and prints the stability comparison.

use parasum::highlow::{standard_suite, stability_rows, SceneKind, SuiteConfig};

fn main() {
    for (scene, seed) in [
        (SceneKind::SingleCap, 0u64),
        (SceneKind::SinglePacket, 0),
        (SceneKind::RandomCaps, 1),
    ] {
        let small = standard_suite(&SuiteConfig::standard(256.0, scene, seed)).unwrap();
        let big = standard_suite(&SuiteConfig::standard(1024.0, scene, seed)).unwrap();
        println!(
            "{:?} seed {}: {:.1}s / {:.1}s, bad {} / {}, psi {:.2e}, split {} {}, cover {} {}",
            scene,
            seed,
            small.runtime_seconds,
            big.runtime_seconds,
            small.n_bad,
            big.n_bad,
            big.psi_partition_error,
            small.split_exact,
            big.split_exact,
            small.coverage_ok,
            big.coverage_ok
        );
        for row in stability_rows(&small, &big) {
            println!(
                "  {:<18} {:>12.6} -> {:>12.6}  x{}  stable {}",
                row.lemma, row.fitted_small, row.fitted_big, row.multiple, row.stable
            );
        }
    }
}
