#![no_main]

use ceest::image_io::{decode_image, decode_png, encode_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_image(data);
    if let Ok(img) = decode_png(data) {
        assert!(img.pixels().iter().all(|&p| p <= img.max_value()));
        let bytes = encode_png(&img).expect("decoded image re-encodes");
        assert_eq!(decode_png(&bytes).expect("re-encoded image decodes"), img);
    }
});
