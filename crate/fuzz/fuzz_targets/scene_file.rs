#![no_main]

use ibgs_core::scene::Scene;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(scene) = Scene::from_bytes(data) {
        // Anything accepted must survive its own round trip.
        let bytes = scene.to_bytes().expect("encode");
        let again = Scene::from_bytes(&bytes).expect("reparse");
        assert_eq!(again.to_bytes().expect("encode"), bytes);
    }
});
