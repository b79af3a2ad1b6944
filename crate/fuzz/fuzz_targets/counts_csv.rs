#![no_main]

use ghostzero::formats::tables;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok((a, b)) = tables::read_counts(text, 1) else { return };
    assert_eq!(a.len(), b.len());
    let written = tables::write_counts(&a, &b).expect("equal lengths");
    assert_eq!(tables::read_counts(&written, 1).expect("round trip"), (a, b));
});
