#![no_main]

use ghostzero::detect::bin_timestamps;
use ghostzero::formats::tables;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&width, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let Ok(events) = tables::read_timestamps(text) else { return };
    let again = tables::read_timestamps(&tables::write_timestamps(&events)).expect("round trip");
    assert_eq!(again, events);
    let bin = 1 + width as u64 * 1000;
    if let Ok((c1, c2)) = bin_timestamps(&events, bin) {
        assert_eq!(c1.total() + c2.total(), events.len() as u64);
    }
});
