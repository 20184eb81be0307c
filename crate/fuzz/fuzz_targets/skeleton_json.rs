#![no_main]

use libfuzzer_sys::fuzz_target;
use manilift::skeleton::Skeleton;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(skel) = Skeleton::from_json_str(text) {
        let again = Skeleton::from_json_str(&skel.to_json_string()).expect("round trip");
        assert_eq!(skel, again);
    }
});
