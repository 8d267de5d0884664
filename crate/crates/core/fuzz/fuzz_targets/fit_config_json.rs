#![no_main]

use idrcde::fit::FitSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<FitSpec>(data) {
        for p in [1, 3] {
            let _ = spec.validate(p);
        }
        let text = serde_json::to_string(&spec).expect("serializing a parsed spec");
        let _: FitSpec = serde_json::from_str(&text).expect("reparsing serialized spec");
    }
});
