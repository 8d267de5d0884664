#![no_main]

use idrcde::io::{read_dataset, write_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_dataset(data) {
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).expect("writing a parsed dataset");
        let again = read_dataset(buf.as_slice()).expect("reparsing written dataset");
        assert_eq!(again, ds);
    }
});
