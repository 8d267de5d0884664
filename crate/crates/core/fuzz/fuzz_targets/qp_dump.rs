#![no_main]

use idrcde::qp::{parse_qp_dump, solve_qp, write_qp_dump, QpSettings};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(qp) = parse_qp_dump(text) {
        let again = parse_qp_dump(&write_qp_dump(&qp)).expect("reparsing written dump");
        assert_eq!(again, qp);
        if qp.n <= 8 {
            let settings = QpSettings {
                max_iter: 30,
                ..QpSettings::default()
            };
            let _ = solve_qp(&qp, &settings);
        }
    }
});
