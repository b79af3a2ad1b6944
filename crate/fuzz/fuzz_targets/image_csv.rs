#![no_main]

use ghostzero::formats::tables;
use ghostzero::imaging::{ImageMap, ImageStatistic};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(t) = tables::read_image(text) else { return };
    assert_eq!(t.values.len(), t.nx * t.ny);
    let image = ImageMap {
        nx: t.nx,
        ny: t.ny,
        statistic: ImageStatistic::Traditional,
        values: t.values,
        stderr: t.stderr,
        events: t.events,
        starved: t.starved,
        replicates: Vec::new(),
    };
    let back = tables::read_image(&tables::write_image(&image)).expect("round trip");
    assert_eq!(back.events, image.events);
    assert_eq!(back.starved, image.starved);
});
