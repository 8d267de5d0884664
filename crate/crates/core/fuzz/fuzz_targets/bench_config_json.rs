#![no_main]

use idrcde::bench::BenchConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<BenchConfig>(data) {
        let text = serde_json::to_string(&cfg).expect("serializing a parsed config");
        let _: BenchConfig = serde_json::from_str(&text).expect("reparsing serialized config");
    }
});
