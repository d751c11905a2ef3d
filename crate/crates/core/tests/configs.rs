use std::path::Path;

use gainbudget::harness::ExperimentConfig;

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            let c = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            c.validate().unwrap();
            let mut preset = ExperimentConfig::preset(c.scenario, c.mode);
            preset.perturbed = c.perturbed;
            preset.output_dir = c.output_dir.clone();
            assert_eq!(c, preset, "{} drifted from its preset", p.display());
            n += 1;
        }
    }
    assert_eq!(n, 15);
}
