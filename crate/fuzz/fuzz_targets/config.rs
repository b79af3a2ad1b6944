#![no_main]

use ghostzero::formats::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = RunConfig::parse(text) else { return };
    let echoed = RunConfig::parse(&cfg.echo()).expect("echo parses");
    assert_eq!(echoed.echo(), cfg.echo());
});
