#![no_main]

use decmdp::io::{model_to_json, parse_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = parse_model(text) {
        let _ = model.validate();
        let again = parse_model(&model_to_json(&model)).expect("emitted models parse");
        assert_eq!(model_to_json(&again), model_to_json(&model));
    }
});
