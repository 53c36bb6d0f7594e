#![no_main]

use libfuzzer_sys::fuzz_target;
use markovup::config::CampaignConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Parsing must never panic; an accepted config must be fully usable.
    if let Ok(config) = CampaignConfig::from_json(text) {
        let law = config.build_law().expect("validated config builds its law");
        if let Some(c) = law.ceiling() {
            assert!(config.x0_list.iter().all(|&x| x <= c));
        }
        assert_eq!(config.hash(), config.hash());
    }
});
