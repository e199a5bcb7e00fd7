#![no_main]

use ibgs_core::camera::{format_camera_list, parse_camera_list};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_camera_list(text) {
        for e in &entries {
            e.camera.validate().expect("parsed camera is valid");
        }
        let paths: Vec<String> = entries.iter().map(|e| e.image_path.to_string_lossy().into_owned()).collect();
        let out = format_camera_list(entries.iter().zip(&paths).map(|(e, p)| (&e.camera, p.as_str())));
        assert_eq!(parse_camera_list(&out).expect("reparse").len(), entries.len());
    }
});
