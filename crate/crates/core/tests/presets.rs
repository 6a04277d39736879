use subband_dbp::experiment::{ExperimentConfig, Scale};

fn shipped(name: &str) -> ExperimentConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn shipped_configs_match_the_presets() {
    for (name, scale) in [("desk.toml", Scale::Desk), ("paper.toml", Scale::Paper)] {
        let preset = ExperimentConfig::preset(scale);
        assert_eq!(shipped(name).digest(), preset.digest(), "{name}");
    }
}
