#![no_main]

use ibgs_core::net::ResidualNet;
use libfuzzer_sys::fuzz_target;

// Input is `manifest \0 payload`.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let manifest = String::from_utf8_lossy(&data[..split]);
    let bin = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(net) = ResidualNet::from_parts(&manifest, bin) {
        let (m, b) = net.to_parts();
        assert_eq!(ResidualNet::from_parts(&m, &b).expect("reparse").to_parts(), (m, b));
    }
});
