#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = cachenet::nn::checkpoint::decode(data) {
        let again = cachenet::nn::checkpoint::encode(&ck.network, &ck.metadata);
        assert!(cachenet::nn::checkpoint::decode(&again).is_ok());
    }
});
