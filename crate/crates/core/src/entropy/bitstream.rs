//! Container for coded patches. All integers are little-endian.
//!
//! ```text
//! "A2CP" | version u8 | config_hash u64 | n_points u32 | patch_count u32
//! patch_count x (point_count u32 | latent_rows u32 | latent_channels u32 | payload_len u32)
//! payloads, concatenated in patch order
//! ```

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"A2CP";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchHeader {
    /// Points of the parent cloud owned by this patch.
    pub point_count: u32,
    pub latent_rows: u32,
    pub latent_channels: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub config_hash: u64,
    /// Points in the whole cloud.
    pub n_points: u32,
    pub patches: Vec<PatchHeader>,
}

pub fn pack_bitstream(header: &StreamHeader, payloads: &[Vec<u8>]) -> Result<Vec<u8>> {
    if payloads.len() != header.patches.len() {
        return Err(Error::Bitstream(format!(
            "{} payloads for {} patch headers",
            payloads.len(),
            header.patches.len()
        )));
    }
    let count = |n: usize| {
        u32::try_from(n).map_err(|_| Error::Bitstream(format!("{n} does not fit 32 bits")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&header.config_hash.to_le_bytes());
    out.extend_from_slice(&header.n_points.to_le_bytes());
    out.extend_from_slice(&count(payloads.len())?.to_le_bytes());
    for (p, payload) in header.patches.iter().zip(payloads) {
        for v in [p.point_count, p.latent_rows, p.latent_channels, count(payload.len())?] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for payload in payloads {
        out.extend_from_slice(payload);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::BitstreamUnderrun)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::BitstreamUnderrun)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn unpack_bitstream(bytes: &[u8]) -> Result<(StreamHeader, Vec<Vec<u8>>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Bitstream("bad magic".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::Bitstream(format!("unsupported version {version}")));
    }
    let config_hash = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let n_points = r.u32()?;
    let patch_count = r.u32()? as usize;
    // Each patch header takes 16 bytes; reject counts the input cannot hold.
    if patch_count > (bytes.len() - r.pos) / 16 {
        return Err(Error::BitstreamUnderrun);
    }
    let mut patches = Vec::with_capacity(patch_count);
    let mut lens = Vec::with_capacity(patch_count);
    for _ in 0..patch_count {
        patches.push(PatchHeader {
            point_count: r.u32()?,
            latent_rows: r.u32()?,
            latent_channels: r.u32()?,
        });
        lens.push(r.u32()? as usize);
    }
    let payloads = lens
        .into_iter()
        .map(|n| r.take(n).map(<[u8]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Bitstream(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((StreamHeader { config_hash, n_points, patches }, payloads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> (StreamHeader, Vec<Vec<u8>>) {
        let header = StreamHeader {
            config_hash: 0x0123_4567_89ab_cdef,
            n_points: 3000,
            patches: vec![
                PatchHeader { point_count: 2048, latent_rows: 128, latent_channels: 16 },
                PatchHeader { point_count: 952, latent_rows: 128, latent_channels: 16 },
            ],
        };
        (header, vec![vec![1, 2, 3], vec![]])
    }

    #[test]
    fn round_trip() {
        let (h, p) = sample();
        let bytes = pack_bitstream(&h, &p).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 8 + 4 + 4 + 2 * 16 + 3);
        assert_eq!(unpack_bitstream(&bytes).unwrap(), (h, p));
    }

    #[test]
    fn bad_magic_and_version() {
        let (h, p) = sample();
        let mut bytes = pack_bitstream(&h, &p).unwrap();
        bytes[0] = b'X';
        assert!(matches!(unpack_bitstream(&bytes), Err(Error::Bitstream(_))));
        bytes[0] = b'A';
        bytes[4] = 9;
        assert!(matches!(unpack_bitstream(&bytes), Err(Error::Bitstream(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let (h, p) = sample();
        let bytes = pack_bitstream(&h, &p).unwrap();
        for cut in 0..bytes.len() {
            assert!(unpack_bitstream(&bytes[..cut]).is_err());
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(unpack_bitstream(&long).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = unpack_bitstream(&bytes);
        }

        #[test]
        fn header_fuzz_never_panics(at in 0usize..53, value in any::<u8>()) {
            let (h, p) = sample();
            let mut bytes = pack_bitstream(&h, &p).unwrap();
            let i = at % bytes.len();
            bytes[i] = value;
            let _ = unpack_bitstream(&bytes);
        }
    }
}
