#![no_main]

use libfuzzer_sys::fuzz_target;
use tandem_cmpc::qpsolve::{parse_qp_dump, solve, write_qp_dump, QpSettings};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(p) = parse_qp_dump(text) else { return };
    let mut buf = Vec::new();
    write_qp_dump(&p, &mut buf).expect("writing to memory");
    let again = parse_qp_dump(std::str::from_utf8(&buf).expect("dumps are ascii")).expect("own output parses");
    assert_eq!(again, p);
    if p.n() <= 32 && p.m() <= 64 {
        // the solver must return a status, never panic
        let _ = solve(&p, &QpSettings::default(), None);
    }
});
