#![no_main]

use cantestbed::ids::{mlp_infer, QuantMlpModel, FEATURE_LEN};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = QuantMlpModel::from_json(text) {
        // A model that loads must run on any window.
        mlp_infer(&model, &[0u8; FEATURE_LEN]).expect("validated model infers");
        mlp_infer(&model, &[0xFF; FEATURE_LEN]).expect("validated model infers");
    }
});
