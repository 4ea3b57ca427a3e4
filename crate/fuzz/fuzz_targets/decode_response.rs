#![no_main]

use libfuzzer_sys::fuzz_target;
use maestro_core::protocol::decode_response;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let _ = decode_response(line);
});
