#![no_main]

use libfuzzer_sys::fuzz_target;
use slingsim::topology::Topology;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(topo) = Topology::from_adjacency(text) {
        // whatever parses must print and parse back to the same listing
        let listing = topo.to_adjacency();
        let again = Topology::from_adjacency(&listing).expect("own listing parses");
        assert_eq!(again.to_adjacency(), listing);
    }
});
