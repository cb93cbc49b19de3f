//! End-to-end drive of the band-limited pipeline: build a field from a few
//! unit frequencies, prune it, split its square functions, classify the box,
//! and print every audited constant.

use num_complex::Complex64;
use parasum::freq::{CapPartition, FrequencySet};
use parasum::highlow::{
    audit_high_lemma1, audit_high_lemma2, audit_locally_constant, audit_low_lemma,
    audit_pruning_lemma, classify_regions, prune, square_functions, ConvEngine, Frame,
    PruneParams,
};

fn main() {
    let r = 64.0;
    let frame = Frame::new(64.0, 0.5).expect("frame");
    let partition = CapPartition::new(r, 1.0, 1.0 / 3.0).expect("partition");
    let pts: Vec<f64> = (20..28).map(|g| g as f64 / 46.0 * 2.0 - 1.0).collect();
    let coeffs = vec![Complex64::new(1.0, 0.0); pts.len()];
    let freq = FrequencySet::new(pts, coeffs, 8, 0.3).expect("freq");

    let hier = prune(&frame, &partition, &freq, &PruneParams::standard(16.0)).expect("prune");
    println!(
        "pruned: {} levels, {} bad tubes, sup constant {:.3}",
        hier.levels.len(),
        hier.n_bad_total(),
        hier.linf_constant
    );

    let engine = ConvEngine::new(frame);
    let set = square_functions(&engine, &partition, &hier).expect("squares");
    let regions = classify_regions(&set);
    println!(
        "regions: high {} / dominated {:?} / low {} / remainder {}",
        regions.count_high, regions.count_omega, regions.count_low, regions.count_remainder
    );

    let audits = [
        audit_low_lemma(&set, hier.lambda1 as f64),
        audit_high_lemma1(&engine, &set, &partition, &freq).expect("rings"),
        audit_high_lemma2(&hier, &set),
        audit_pruning_lemma(&hier, &regions),
        audit_locally_constant(&engine, &hier),
    ];
    for a in &audits {
        println!(
            "audit {:<16} fitted {:>10.4}  excluded {:>4}  pass {}",
            a.lemma, a.fitted_constant, a.excluded_cells, a.pass
        );
    }
    assert!(audits.iter().all(|a| a.pass), "an audit failed");
    println!("ok");
}
