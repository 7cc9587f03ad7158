#![no_main]

use gexpect::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::parse(text) else {
        return;
    };
    // Typed accessors must never panic on a parsed config.
    let _ = cfg.band();
    let _ = cfg.mean_band();
    let _ = cfg.grid();
    let _ = cfg.cfl_safety();
    let _ = cfg.store_every();
    let _ = cfg.usize_list_or("clt", "n_list", &[4, 16]);
    let _ = cfg.f64_list_or("bsde", "sigmas", &[0.5, 1.0]);
});
