#![no_main]

use libfuzzer_sys::fuzz_target;
use markovup::config::LawSpec;
use markovup::process::MemoryState;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = serde_json::from_str::<LawSpec>(text) else { return };
    // A spec that builds must yield valid distributions on every probed
    // memory state: masses summing to one within tolerance, states within
    // the ceiling.
    let Ok(law) = spec.build() else { return };
    let ceiling = law.ceiling().unwrap_or(16);
    let mut probes: Vec<Vec<u32>> = (0..=ceiling.min(16)).map(|x| vec![x]).collect();
    if ceiling >= 2 {
        probes.push(vec![2, 1]);
        probes.push(vec![2, 1, 0]);
    }
    for run in probes {
        let memory = MemoryState::try_from_run(run).expect("probe runs are decreasing");
        let dist = law.distribution(&memory);
        let total: f64 = dist.outcomes().iter().map(|&(_, p)| p).sum();
        assert!((total - 1.0).abs() <= 1e-9, "masses sum to {total}");
        if let Some(c) = law.ceiling() {
            assert!(dist.outcomes().iter().all(|&(y, _)| y <= c));
        }
    }
});
