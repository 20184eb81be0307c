#![no_main]

use libfuzzer_sys::fuzz_target;
use manilift::io::{sequence_from_bytes, sequence_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(seq) = sequence_from_bytes(data) {
        assert_eq!(sequence_to_bytes(&seq), data);
    }
});
