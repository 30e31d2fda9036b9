//! Scenario files shipped with the binary.

use heatfreq_core::fixtures::{self, Fixture};

use crate::config::ScenarioConfig;

/// Sample decimation used by the bundled scenarios.
pub const BUNDLED_DECIMATION: usize = 10;

pub const BUNDLED: &[(&str, &str)] = &[
    ("f1_mode1", include_str!("../fixtures/f1_mode1.json")),
    ("f1_mode2", include_str!("../fixtures/f1_mode2.json")),
    ("f1_heat_step", include_str!("../fixtures/f1_heat_step.json")),
    ("f39_analog_mode1", include_str!("../fixtures/f39_analog_mode1.json")),
    ("f39_analog_mode2", include_str!("../fixtures/f39_analog_mode2.json")),
];

pub fn get(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// The in-code fixture a bundled file was generated from.
pub fn source_fixture(name: &str) -> Option<Fixture> {
    fixtures::all().into_iter().find(|f| f.name == name)
}

/// Config text for a fixture, as stored under `fixtures/`.
pub fn render(f: &Fixture) -> String {
    let mut cfg = ScenarioConfig::from_fixture(f);
    cfg.outputs.decimation = BUNDLED_DECIMATION;
    cfg.to_json() + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, Scenario};

    /// Set `HEATFREQ_BLESS=1` to regenerate the files from the fixtures.
    #[test]
    fn bundled_files_match_fixtures() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        let bless = std::env::var_os("HEATFREQ_BLESS").is_some();
        for (name, text) in BUNDLED {
            let f = source_fixture(name).unwrap();
            let expected = render(&f);
            if bless {
                std::fs::write(dir.join(format!("{name}.json")), &expected).unwrap();
                continue;
            }
            assert_eq!(*text, expected, "{name}.json is stale");
            let cfg = parse_config(text).unwrap();
            assert_eq!(cfg.system, f.system);
            assert_eq!(cfg.schedule(), f.schedule);
            assert_eq!(cfg.sim.t_end, f.t_end);
            Scenario::build(cfg, false).unwrap();
        }
        assert_eq!(BUNDLED.len(), fixtures::all().len());
    }
}
