#![no_main]

use ibgs_core::imagebuf::decode_png;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png(data) {
        assert_eq!(img.data.len(), 3 * img.width * img.height);
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
