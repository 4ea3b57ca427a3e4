#![no_main]

use libfuzzer_sys::fuzz_target;
use maestro_core::doc::{parse_bundle_doc, to_canonical};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // anything accepted must survive a canonical round trip unchanged
    if let Ok(doc) = parse_bundle_doc(text) {
        let again = parse_bundle_doc(&to_canonical(&doc)).expect("canonical form parses");
        assert_eq!(again, doc);
    }
});
