#![no_main]

use libfuzzer_sys::fuzz_target;
use maestro_core::protocol::decode_request;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(req) = decode_request(line) {
        let text = serde_json::to_string(&req).expect("requests serialize");
        assert_eq!(decode_request(&text).expect("encoded request decodes"), req);
    }
});
