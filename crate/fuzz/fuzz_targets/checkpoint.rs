#![no_main]

use libfuzzer_sys::fuzz_target;
use manilift::nets::LiftingModel;

// Manifest JSON and parameter blob separated by the first NUL byte.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else { return };
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else { return };
    if let Ok(model) = LiftingModel::from_checkpoint(manifest, &data[split + 1..]) {
        let (m, blob) = model.to_checkpoint();
        let again = LiftingModel::from_checkpoint(&serde_json::to_string(&m).unwrap(), &blob).expect("round trip");
        assert_eq!(model, again);
    }
});
