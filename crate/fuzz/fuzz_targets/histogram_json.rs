#![no_main]

use ceest::histogram::PixelHistogram;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(h) = serde_json::from_slice::<PixelHistogram>(data) {
        assert_eq!(h.len(), h.top() + 1);
        assert!(h.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
        let text = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<PixelHistogram>(&text).unwrap(), h);
    }
});
