#![no_main]

use libfuzzer_sys::fuzz_target;
use manilift::io::{sequence_from_csv, sequence_to_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(seq) = sequence_from_csv(text) {
        let again = sequence_from_csv(&sequence_to_csv(&seq).unwrap()).expect("round trip");
        assert_eq!(seq, again);
    }
});
