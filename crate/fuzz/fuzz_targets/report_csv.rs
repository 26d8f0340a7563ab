#![no_main]

use libfuzzer_sys::fuzz_target;
use slingsim::report::{parse_report, report_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_report(text) {
        let out = report_to_string(&rows);
        let again = parse_report(&out).expect("written report parses");
        assert_eq!(report_to_string(&again), out);
    }
});
