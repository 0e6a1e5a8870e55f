use std::path::PathBuf;

use ragent_core::harness::{
    load_benchmark, run_benchmark, validate_pack, BenchOptions, PackRules, ScriptedComponents,
};
use ragent_core::HashedTokenEmbedder;

fn desk() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../packs/desk")
}

#[test]
fn desk_pack_is_valid() {
    let v = validate_pack(&desk(), &PackRules::desk());
    assert!(v.is_empty(), "{v:#?}");
}

#[test]
fn scripted_main_suite_is_perfect() {
    let pack = load_benchmark(&desk()).unwrap();
    let e = HashedTokenEmbedder::default();
    let opts = BenchOptions::new(pack.manifest.agent.clone());
    let run = run_benchmark::<f32>(&pack, &e, &ScriptedComponents, &opts).unwrap();
    let m = &run.report.overall;
    for r in &m.rows {
        assert!(r.success, "{r:?}");
    }
    assert_eq!(m.as_pct, 100.0);
    assert_eq!(m.af_pct, 100.0);
    assert_eq!(m.rp_pct, 100.0);
    assert_eq!(m.tcr_pct, 100.0);
    assert_eq!(m.tsr_pct, 100.0);
}
