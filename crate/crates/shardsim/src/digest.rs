//! Hashing and canonical byte encoding.
//!
//! Every hash in the simulator goes through this module so the digest
//! algorithm is pinned in exactly one place. Encoding rules: fixed-width
//! integers are big-endian, variable-length fields carry a u32 length
//! prefix, and map-like data is hashed in sorted order by the caller.
//! Domain tags keep the different kinds of digests (transaction ids,
//! state roots, signatures, ...) from colliding with each other.

use sha2::{Digest as _, Sha256};
use std::fmt;

pub const DIGEST_LEN: usize = 32;

/// 256-bit digest. Ordering is byte-lexicographic, which fork choice relies
/// on for its tie-break.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DigestBytes(pub [u8; DIGEST_LEN]);

impl DigestBytes {
    pub const ZERO: DigestBytes = DigestBytes([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(DIGEST_LEN * 2);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn short_hex(&self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Debug for DigestBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DigestBytes({})", self.short_hex())
    }
}

impl fmt::Display for DigestBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Hash `payload` under a domain tag.
pub fn hash_tagged(domain: &str, payload: &[u8]) -> DigestBytes {
    let mut h = Sha256::new();
    h.update((domain.len() as u32).to_be_bytes());
    h.update(domain.as_bytes());
    h.update(payload);
    DigestBytes(h.finalize().into())
}

/// Keyed digest standing in for a real signature or proof attestation.
/// Verification recomputes it with the claimed signer's key.
pub fn keyed_digest(domain: &str, key: &str, payload: &[u8]) -> DigestBytes {
    let mut enc = Enc::new();
    enc.str(key);
    enc.bytes(payload);
    hash_tagged(domain, &enc.finish())
}

/// Derive a 32-byte PRNG seed from the master seed, a purpose label, and an
/// index. Each (label, index) pair gets an independent stream, so the order
/// in which streams are consumed cannot perturb any other stream.
pub fn stream_seed(master: u64, label: &str, index: u64) -> [u8; 32] {
    let mut enc = Enc::new();
    enc.u64(master);
    enc.str(label);
    enc.u64(index);
    hash_tagged("seed", &enc.finish()).0
}

/// Canonical byte encoder.
pub struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    pub fn new() -> Self {
        Enc { buf: Vec::new() }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Enc { buf: Vec::with_capacity(cap) }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }

    pub fn digest(&mut self, d: &DigestBytes) {
        self.buf.extend_from_slice(&d.0);
    }

    pub fn opt_digest(&mut self, d: &Option<DigestBytes>) {
        match d {
            None => self.u8(0),
            Some(d) => {
                self.u8(1);
                self.digest(d);
            }
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed encoding at byte {at}: {what}")]
pub struct DecodeError {
    pub at: usize,
    pub what: String,
}

/// Canonical byte decoder. Never panics on arbitrary input; every read is
/// bounds-checked and returns `DecodeError` on truncation or bad tags.
pub struct Dec<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Dec { data, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DecodeError> {
        if self.data.len() - self.pos < n {
            return Err(DecodeError { at: self.pos, what: format!("truncated {what}") });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1, "u8")?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4, "u32")?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8, "u64")?.try_into().unwrap()))
    }

    pub fn u128(&mut self) -> Result<u128, DecodeError> {
        Ok(u128::from_be_bytes(self.take(16, "u128")?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len, "byte string")
    }

    pub fn str(&mut self) -> Result<&'a str, DecodeError> {
        let at = self.pos;
        let raw = self.bytes()?;
        std::str::from_utf8(raw)
            .map_err(|_| DecodeError { at, what: "invalid utf-8".into() })
    }

    pub fn digest(&mut self) -> Result<DigestBytes, DecodeError> {
        Ok(DigestBytes(self.take(DIGEST_LEN, "digest")?.try_into().unwrap()))
    }

    pub fn opt_digest(&mut self) -> Result<Option<DigestBytes>, DecodeError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.digest()?)),
            t => Err(DecodeError { at, what: format!("bad option tag {t}") }),
        }
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.pos != self.data.len() {
            return Err(DecodeError { at: self.pos, what: "trailing bytes".into() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_tags_separate() {
        assert_ne!(hash_tagged("a", b"x"), hash_tagged("b", b"x"));
        assert_ne!(hash_tagged("a", b"x"), hash_tagged("a", b"y"));
    }

    #[test]
    fn keyed_digest_depends_on_key() {
        assert_ne!(keyed_digest("sig", "k1", b"m"), keyed_digest("sig", "k2", b"m"));
        assert_eq!(keyed_digest("sig", "k1", b"m"), keyed_digest("sig", "k1", b"m"));
    }

    #[test]
    fn stream_seeds_independent() {
        assert_ne!(stream_seed(7, "workload", 0), stream_seed(7, "workload", 1));
        assert_ne!(stream_seed(7, "workload", 0), stream_seed(7, "faults", 0));
        assert_ne!(stream_seed(7, "workload", 0), stream_seed(8, "workload", 0));
    }

    #[test]
    fn enc_dec_round_trip() {
        let mut enc = Enc::new();
        enc.u8(3);
        enc.u32(1234);
        enc.u64(u64::MAX);
        enc.u128(10u128.pow(24));
        enc.str("alice");
        enc.opt_digest(&Some(DigestBytes([9; 32])));
        enc.opt_digest(&None);
        let bytes = enc.finish();

        let mut dec = Dec::new(&bytes);
        assert_eq!(dec.u8().unwrap(), 3);
        assert_eq!(dec.u32().unwrap(), 1234);
        assert_eq!(dec.u64().unwrap(), u64::MAX);
        assert_eq!(dec.u128().unwrap(), 10u128.pow(24));
        assert_eq!(dec.str().unwrap(), "alice");
        assert_eq!(dec.opt_digest().unwrap(), Some(DigestBytes([9; 32])));
        assert_eq!(dec.opt_digest().unwrap(), None);
        dec.finish().unwrap();
    }

    #[test]
    fn decoder_rejects_truncation_and_trailing() {
        let mut enc = Enc::new();
        enc.str("hello");
        let bytes = enc.finish();

        let mut dec = Dec::new(&bytes[..bytes.len() - 1]);
        assert!(dec.str().is_err());

        let mut padded = bytes.clone();
        padded.push(0);
        let mut dec = Dec::new(&padded);
        dec.str().unwrap();
        assert!(dec.finish().is_err());
    }

    #[test]
    fn decoder_rejects_huge_length_prefix() {
        // Length prefix claims 4 GiB; decoder must error, not allocate or panic.
        let mut bytes = vec![];
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(b"xy");
        let mut dec = Dec::new(&bytes);
        assert!(dec.bytes().is_err());
    }
}
