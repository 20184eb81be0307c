#![no_main]

use libfuzzer_sys::fuzz_target;
use manilift::synthdata::{split_from_csv, split_to_csv, Scenario};

// First byte picks the scenario, the rest is the CSV text.
fuzz_target!(|data: &[u8]| {
    let Some((&pick, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let scenario = Scenario::ALL[pick as usize % Scenario::ALL.len()];
    if let Ok(split) = split_from_csv(scenario, text) {
        let again = split_from_csv(scenario, &split_to_csv(scenario, &split).unwrap()).expect("round trip");
        assert_eq!(split.targets, again.targets);
        assert_eq!(split.inputs, again.inputs);
    }
});
