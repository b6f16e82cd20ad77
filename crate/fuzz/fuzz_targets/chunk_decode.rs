//! The chunk codec consumes untrusted bytes: decoding never panics, and
//! any accepted chunk re-encodes to exactly the input bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shardsim::block::Chunk;

fuzz_target!(|data: &[u8]| {
    if let Ok(chunk) = Chunk::decode(data) {
        assert_eq!(chunk.canonical_bytes(), data, "decode accepted a non-canonical encoding");
    }
});
