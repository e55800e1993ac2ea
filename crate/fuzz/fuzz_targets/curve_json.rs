#![no_main]

use ceest::transforms::TransformCurve;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = serde_json::from_slice::<TransformCurve>(data) {
        assert!(c.phi().windows(2).all(|w| w[0] <= w[1]));
        assert!(c.phi().iter().all(|&v| v <= c.top()));
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TransformCurve>(&text).unwrap(), c);
    }
});
