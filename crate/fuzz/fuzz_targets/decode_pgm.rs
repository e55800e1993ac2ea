#![no_main]

use ceest::image_io::{decode_pgm, encode_pgm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pgm(data) {
        let bytes = encode_pgm(&img).expect("decoded image re-encodes");
        assert_eq!(decode_pgm(&bytes).expect("re-encoded image decodes"), img);
    }
});
