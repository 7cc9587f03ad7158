#![no_main]

use gexpect::sublinear::{self, RandomVariable, ScenarioSpace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(space) = ScenarioSpace::from_json(text) else {
        return;
    };
    if space.n_outcomes > 64 || space.measures.len() > 64 {
        return;
    }
    let x = RandomVariable::constant(1.0, space.n_outcomes);
    if let Ok(v) = sublinear::evaluate(&space, &x) {
        // A validated space preserves constants.
        assert!((v - 1.0).abs() <= 1e-9);
    }
    let _ = sublinear::risk_measure(&space, &x);
    let _ = sublinear::check_axioms(&space, 4, 0);
});
