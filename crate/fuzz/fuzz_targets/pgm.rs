#![no_main]

use ghostzero::formats::pgm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(map) = pgm::decode(data) else { return };
    assert_eq!(map.samples.len(), map.width * map.height);
    // whatever decodes must survive our own encoder
    let again = pgm::decode(&pgm::encode(&map)).expect("re-decode");
    assert_eq!(again, map);
    if let Ok(mask) = pgm::mask_from_greymap(&map) {
        assert!(mask.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
