#![no_main]

use gexpect::payoff::PayoffTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(table) = PayoffTable::parse(text) else {
        return;
    };
    for x in [-1e9, -1.0, 0.0, 0.5, 1.0, 1e9, f64::MIN_POSITIVE] {
        let _ = table.eval(x);
    }
});
