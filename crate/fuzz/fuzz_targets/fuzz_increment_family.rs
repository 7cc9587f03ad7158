#![no_main]

use gexpect::tree::{dp_gexpectation, GTree, IncrementFamily, TreeBackend};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(family) = IncrementFamily::from_json(text) else {
        return;
    };
    // Keep the one-step enumeration affordable before building trees.
    let size = match &family {
        IncrementFamily::Atoms { laws } => laws.iter().map(|l| l.points.len()).sum::<usize>(),
        IncrementFamily::Binomial { sigmas } => 2 * sigmas.len(),
    };
    if size > 32 {
        return;
    }
    if let Ok(tree) = GTree::new(2, 0.5, family, TreeBackend::Enumerate) {
        let _ = tree.implied_band();
        if let Ok(value) = dp_gexpectation(&tree, |s| s.abs().min(3.0)) {
            assert!(value.is_finite());
            assert!((-1e-9..=3.0 + 1e-9).contains(&value));
        }
    }
});
