#![no_main]

use idrcde::fit::FittedIDR;
use idrcde::model::DecisionRule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(f) = FittedIDR::from_json(text) {
        let x = vec![0.5; f.rule.beta.len()];
        let _ = f.rule.decide(&x);
        let _ = f.alloc.value(&x);
    }
});
