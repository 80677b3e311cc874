#![no_main]

use libfuzzer_sys::fuzz_target;
use tandem_cmpc::harness::Config;

// Any text either fails cleanly or yields a valid config that survives a
// round trip through TOML.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = Config::from_toml_str(text) else { return };
    cfg.validate().expect("parsed configs are validated");
    let again = Config::from_toml_str(&cfg.to_toml_string().expect("serializable")).expect("round trip parses");
    assert_eq!(again, cfg);
});
