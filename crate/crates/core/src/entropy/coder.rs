//! Byte-oriented range coder (32-bit range, carry propagation through a
//! cached byte) over 16-bit frequency tables derived from the prior.
//!
//! Symbols outside `[-A, A]` are sent as a per-channel escape symbol
//! followed by their raw 32-bit value as two uniform 16-bit halves. Every
//! non-empty payload ends with a little-endian CRC32 of the decoded values.

use ndarray::{Array2, ArrayView2};

use super::prior::FactorizedPrior;
use crate::error::{Error, Result};

pub const FREQ_BITS: u32 = 16;
const TOTAL: u32 = 1 << FREQ_BITS;
const TOP: u32 = 1 << 24;

/// Cumulative frequency tables per channel. Index `n + A` codes value `n`,
/// the last index is the escape symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingTables {
    pub alphabet: i32,
    /// `[C][2A + 3]` cumulative counts starting at 0, ending at `2^16`.
    pub cum: Vec<Vec<u32>>,
}

impl CodingTables {
    pub fn new(prior: &FactorizedPrior, alphabet: i32) -> Result<Self> {
        let nsym = 2 * alphabet as usize + 2;
        if alphabet < 0 || nsym > TOTAL as usize / 2 {
            return Err(Error::Config(format!("alphabet {alphabet} does not fit the coder")));
        }
        let cum = (0..prior.channels())
            .map(|ch| {
                let mut probs: Vec<f64> = (-alphabet..=alphabet)
                    .map(|n| prior.likelihood(ch, n as f64))
                    .collect();
                let inside: f64 = probs.iter().sum();
                probs.push((1.0 - inside).max(0.0));
                quantize_pmf(&probs)
            })
            .collect();
        Ok(Self { alphabet, cum })
    }

    pub fn channels(&self) -> usize {
        self.cum.len()
    }

    fn escape(&self) -> usize {
        2 * self.alphabet as usize + 1
    }

    /// Ideal code length of `symbols` under the quantized tables, in bits.
    pub fn cost_bits(&self, symbols: ArrayView2<i32>) -> f64 {
        let esc = self.escape();
        symbols
            .indexed_iter()
            .map(|((_, ch), &v)| {
                let cum = &self.cum[ch];
                let idx = self.index(v).unwrap_or(esc);
                let f = (cum[idx + 1] - cum[idx]) as f64;
                let extra = if idx == esc { 32.0 } else { 0.0 };
                FREQ_BITS as f64 - f.log2() + extra
            })
            .sum()
    }

    fn index(&self, v: i32) -> Option<usize> {
        (v.unsigned_abs() <= self.alphabet as u32).then(|| (v + self.alphabet) as usize)
    }
}

/// `f_i = 1 + floor(p_i * (2^16 - n))`, remainder to the most probable
/// symbol. Returns the cumulative table.
fn quantize_pmf(probs: &[f64]) -> Vec<u32> {
    let n = probs.len() as u32;
    let spare = (TOTAL - n) as f64;
    let total: f64 = probs.iter().sum();
    let mut freqs: Vec<u32> = probs
        .iter()
        .map(|&p| 1 + ((p / total) * spare).floor() as u32)
        .collect();
    let used: u32 = freqs.iter().sum();
    let argmax = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
    freqs[argmax] += TOTAL - used;
    let mut cum = Vec::with_capacity(freqs.len() + 1);
    let mut acc = 0;
    cum.push(0);
    for f in freqs {
        acc += f;
        cum.push(acc);
    }
    cum
}

struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn encode(&mut self, start: u32, size: u32) {
        let r = self.range >> FREQ_BITS;
        self.low += r as u64 * start as u64;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        // The first emitted byte is always zero.
        self.out.remove(0);
        self.out
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> Decoder<'a> {
    fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self { bytes, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next()? as u32;
        }
        Ok(d)
    }

    fn next(&mut self) -> Result<u8> {
        let b = *self.bytes.get(self.pos).ok_or(Error::BitstreamUnderrun)?;
        self.pos += 1;
        Ok(b)
    }

    /// Returns the frequency target and the per-unit range.
    fn target(&self) -> Result<(u32, u32)> {
        let r = self.range >> FREQ_BITS;
        let v = self.code / r;
        if v >= TOTAL {
            return Err(Error::CorruptStream);
        }
        Ok((v, r))
    }

    fn consume(&mut self, r: u32, start: u32, size: u32) -> Result<()> {
        self.code -= r * start;
        self.range = r * size;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    fn decode_cum(&mut self, cum: &[u32]) -> Result<usize> {
        let (v, r) = self.target()?;
        // Last index whose start is <= v.
        let idx = cum.partition_point(|&c| c <= v) - 1;
        self.consume(r, cum[idx], cum[idx + 1] - cum[idx])?;
        Ok(idx)
    }

    fn decode_uniform(&mut self) -> Result<u32> {
        let (v, r) = self.target()?;
        self.consume(r, v, 1)?;
        Ok(v)
    }
}

fn checksum(values: impl Iterator<Item = i32>) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for v in values {
        h.update(&v.to_le_bytes());
    }
    h.finalize()
}

/// Range codes `symbols` (`[M, C]`, row-major, channel per column).
pub fn ac_encode(symbols: ArrayView2<i32>, tables: &CodingTables) -> Result<Vec<u8>> {
    if symbols.ncols() != tables.channels() {
        return Err(crate::error::shape(format!(
            "{} symbol channels for {} coding tables",
            symbols.ncols(),
            tables.channels()
        )));
    }
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let esc = tables.escape();
    let mut enc = Encoder::new();
    for ((_, ch), &v) in symbols.indexed_iter() {
        let cum = &tables.cum[ch];
        match tables.index(v) {
            Some(i) => enc.encode(cum[i], cum[i + 1] - cum[i]),
            None => {
                enc.encode(cum[esc], cum[esc + 1] - cum[esc]);
                let raw = v as u32;
                enc.encode(raw >> 16, 1);
                enc.encode(raw & 0xFFFF, 1);
            }
        }
    }
    let mut out = enc.finish();
    out.extend_from_slice(&checksum(symbols.iter().copied()).to_le_bytes());
    Ok(out)
}

/// Inverse of [`ac_encode`] for a `[rows, C]` tensor.
pub fn ac_decode(bytes: &[u8], rows: usize, tables: &CodingTables) -> Result<Array2<i32>> {
    let channels = tables.channels();
    if rows == 0 || channels == 0 {
        return if bytes.is_empty() {
            Ok(Array2::zeros((rows, channels)))
        } else {
            Err(Error::CorruptStream)
        };
    }
    if bytes.len() < 4 {
        return Err(Error::BitstreamUnderrun);
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let mut dec = Decoder::new(body)?;
    let esc = tables.escape();
    let mut out = Array2::zeros((rows, channels));
    for ((_, ch), slot) in out.indexed_iter_mut() {
        let idx = dec.decode_cum(&tables.cum[ch])?;
        *slot = if idx == esc {
            let hi = dec.decode_uniform()?;
            let lo = dec.decode_uniform()?;
            ((hi << 16) | lo) as i32
        } else {
            idx as i32 - tables.alphabet
        };
    }
    if dec.pos != body.len() {
        return Err(Error::CorruptStream);
    }
    let want = u32::from_le_bytes(crc.try_into().expect("four bytes"));
    if checksum(out.iter().copied()) != want {
        return Err(Error::CorruptStream);
    }
    Ok(out)
}
