use stride_core::sim::ScenarioConfig;

#[test]
fn shipped_configs_parse_and_validate() {
    for name in ["flat_walk_0.4", "disturb_fx-50_ty20", "wave_field", "fullbody_stand"] {
        let path = format!("{}/../../configs/{name}.toml", env!("CARGO_MANIFEST_DIR"));
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
        let cfg = ScenarioConfig::from_toml(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(cfg.name, name);
    }
}
