//! Replays the checked-in fuzz corpus through the fuzz targets' properties,
//! so the seeds stay valid without the fuzzing toolchain.

use std::path::{Path, PathBuf};

use tandem_cmpc::harness::Config;
use tandem_cmpc::qpsolve::{parse_qp_dump, solve, write_qp_dump, QpSettings, QpStatus};

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    assert!(!v.is_empty());
    v
}

#[test]
fn config_seeds_parse_or_fail_cleanly() {
    let mut parsed = 0;
    for path in seeds("config_parse") {
        let text = std::fs::read_to_string(&path).unwrap();
        if let Ok(cfg) = Config::from_toml_str(&text) {
            let again = Config::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
            assert_eq!(again, cfg, "{}", path.display());
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn qp_dump_seeds_round_trip_and_solve() {
    for path in seeds("qp_dump_parse") {
        let p = parse_qp_dump(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_qp_dump(&p, &mut buf).unwrap();
        assert_eq!(parse_qp_dump(std::str::from_utf8(&buf).unwrap()).unwrap(), p, "{}", path.display());
        assert_eq!(solve(&p, &QpSettings::default(), None).status, QpStatus::Optimal, "{}", path.display());
    }
}
