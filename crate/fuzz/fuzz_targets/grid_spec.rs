#![no_main]

use ceest::parametric::ParamGrid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(grid) = s.parse::<ParamGrid>() {
            assert!(!grid.is_empty());
        }
    }
});
