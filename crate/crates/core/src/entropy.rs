//! Binary arithmetic coder, integer frequency tables and the latent
//! bitstream container.
//!
//! The coder keeps 32-bit `low`/`high` registers and resolves carries by
//! counting pending bits. Every symbol is coded against a table of integer
//! frequencies summing to `2¹⁶`, derived deterministically from an `f64` PMF.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::checkpoint::Reader;
use crate::error::{Error, Result};
use crate::mask_quant::{QuantizerState, SymbolTensor};
use crate::msprob::{MsProb, ScaleStack};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;

const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
const TOP: u64 = (1 << 32) - 1;

/// Cumulative frequency table; symbol `s` owns `[cum[s], cum[s+1])`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FreqTable {
    cum: Vec<u32>,
}

impl FreqTable {
    /// Largest-remainder apportionment of `2¹⁶` with every symbol at least 1.
    pub fn from_pmf(pmf: &[f64]) -> Result<Self> {
        let n = pmf.len();
        if n == 0 || n > FREQ_TOTAL as usize {
            return Err(Error::invalid(format!("alphabet of {n} symbols")));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Coder("PMF has negative or non-finite entries".into()));
        }
        let total: f64 = pmf.iter().sum();
        if total <= 0.0 {
            return Err(Error::Coder("PMF sums to zero".into()));
        }
        let scale = FREQ_TOTAL as f64 / total;
        let target: Vec<f64> = pmf.iter().map(|p| p * scale).collect();
        let mut freq: Vec<u32> = target.iter().map(|t| (t.floor() as u32).max(1)).collect();
        let assigned: i64 = freq.iter().map(|&f| f as i64).sum();
        let mut diff = FREQ_TOTAL as i64 - assigned;
        // Remainder relative to the assigned count; ties go to the lower index.
        let mut order: Vec<usize> = (0..n).collect();
        let rem = |i: usize| target[i] - freq[i] as f64;
        if diff > 0 {
            order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
            for &i in order.iter().cycle().take(diff as usize) {
                freq[i] += 1;
            }
        } else if diff < 0 {
            order.sort_by(|&a, &b| rem(a).total_cmp(&rem(b)).then(a.cmp(&b)));
            while diff < 0 {
                let mut progressed = false;
                for &i in &order {
                    if diff == 0 {
                        break;
                    }
                    if freq[i] > 1 {
                        freq[i] -= 1;
                        diff += 1;
                        progressed = true;
                    }
                }
                if !progressed {
                    return Err(Error::invalid("alphabet too large for the frequency precision"));
                }
            }
        }
        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        Ok(FreqTable { cum })
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn freq(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    pub fn bounds(&self, s: usize) -> (u32, u32) {
        (self.cum[s], self.cum[s + 1])
    }

    /// Symbol whose interval contains `target`.
    fn lookup(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Ideal code length of `s` in bits.
    pub fn bits(&self, s: usize) -> f64 {
        FREQ_BITS as f64 - (self.freq(s) as f64).log2()
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    filled: u32,
    count: u64,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        self.acc = (self.acc << 1) | bit as u8;
        self.filled += 1;
        self.count += 1;
        if self.filled == 8 {
            self.bytes.push(self.acc);
            self.acc = 0;
            self.filled = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push(self.acc << (8 - self.filled));
        }
        self.bytes
    }
}

pub struct ArithEncoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Default for ArithEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithEncoder {
    pub fn new() -> Self {
        ArithEncoder {
            low: 0,
            high: TOP,
            pending: 0,
            out: BitWriter::default(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, table: &FreqTable, symbol: usize) -> Result<()> {
        if symbol >= table.len() {
            return Err(Error::Coder(format!("symbol {symbol} outside alphabet of {}", table.len())));
        }
        let (lo, hi) = table.bounds(symbol);
        if lo == hi {
            return Err(Error::Coder(format!("symbol {symbol} has zero frequency")));
        }
        let range = self.high - self.low + 1;
        let total = FREQ_TOTAL as u64;
        self.high = self.low + range * hi as u64 / total - 1;
        self.low += range * lo as u64 / total;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.pending += 1;
        let bit = self.low >= QUARTER;
        self.emit(bit);
        self.out.finish()
    }
}

pub struct ArithDecoder<'a> {
    bytes: &'a [u8],
    low: u64,
    high: u64,
    value: u64,
    bit_pos: u64,
    renorms: u64,
}

impl<'a> ArithDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = ArithDecoder {
            bytes,
            low: 0,
            high: TOP,
            value: 0,
            bit_pos: 0,
            renorms: 0,
        };
        for _ in 0..32 {
            d.value = (d.value << 1) | d.next_bit();
        }
        d
    }

    fn next_bit(&mut self) -> u64 {
        let pos = self.bit_pos;
        self.bit_pos += 1;
        let byte = (pos / 8) as usize;
        match self.bytes.get(byte) {
            Some(b) => ((b >> (7 - pos % 8)) & 1) as u64,
            None => 0,
        }
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        let range = self.high - self.low + 1;
        let total = FREQ_TOTAL as u64;
        let offset = self.value.checked_sub(self.low).ok_or_else(|| Error::Coder("stream is corrupt".into()))?;
        let target = ((offset + 1) * total - 1) / range;
        if target >= total {
            return Err(Error::Coder("stream is corrupt".into()));
        }
        let symbol = table.lookup(target as u32);
        let (lo, hi) = table.bounds(symbol);
        self.high = self.low + range * hi as u64 / total - 1;
        self.low += range * lo as u64 / total;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit();
            self.renorms += 1;
        }
        Ok(symbol)
    }

    /// Confirms the stream held exactly the bits the encoder wrote.
    pub fn finish(self) -> Result<()> {
        let written = self.renorms + 2;
        let expected_len = written.div_ceil(8);
        match (self.bytes.len() as u64).cmp(&expected_len) {
            std::cmp::Ordering::Less => Err(Error::Truncated("arithmetic-coded payload")),
            std::cmp::Ordering::Greater => Err(Error::Coder("payload has trailing bytes".into())),
            std::cmp::Ordering::Equal => Ok(()),
        }
    }
}

/// Codes `symbols[i]` against `pmfs[i]`.
pub fn encode_symbols(symbols: &[usize], pmfs: &[Vec<f64>]) -> Result<Vec<u8>> {
    if symbols.len() != pmfs.len() {
        return Err(Error::invalid(format!("{} symbols but {} PMFs", symbols.len(), pmfs.len())));
    }
    let mut enc = ArithEncoder::new();
    for (&s, pmf) in symbols.iter().zip(pmfs) {
        enc.encode(&FreqTable::from_pmf(pmf)?, s)?;
    }
    Ok(enc.finish())
}

/// Decodes `count` symbols. `pmf_for(i, decoded)` sees only symbols already
/// decoded.
pub fn decode_symbols(
    bytes: &[u8],
    count: usize,
    mut pmf_for: impl FnMut(usize, &[usize]) -> Result<Vec<f64>>,
) -> Result<Vec<usize>> {
    let mut dec = ArithDecoder::new(bytes);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let table = FreqTable::from_pmf(&pmf_for(i, &out)?)?;
        let s = dec.decode(&table)?;
        out.push(s);
    }
    dec.finish()?;
    Ok(out)
}

pub const CONTAINER_MAGIC: &[u8; 4] = b"NTPF";
pub const CONTAINER_VERSION: u8 = 1;
pub const FLAG_LAST_SCALE_DEFLATED: u8 = 1;
pub const FLAG_DEGENERATE_QUANTIZER: u8 = 2;
/// Fixed header bytes before the payload length table.
pub const HEADER_FIXED_LEN: usize = 4 + 1 + 1 + 4 * 2 + 2 * 4;

#[derive(Clone, PartialEq, Debug)]
pub struct Container {
    pub version: u8,
    pub flags: u8,
    pub orig_h: u16,
    pub orig_w: u16,
    pub padded_h: u16,
    pub padded_w: u16,
    pub y_min: f32,
    pub y_max: f32,
    /// Payloads in stream order `z⁽ˢ⁾ … z⁽⁰⁾`.
    pub payloads: Vec<Vec<u8>>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.push(self.version);
        out.push(self.flags);
        for v in [self.orig_h, self.orig_w, self.padded_h, self.padded_w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.y_min.to_le_bytes());
        out.extend_from_slice(&self.y_max.to_le_bytes());
        for p in &self.payloads {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        }
        for p in &self.payloads {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn byte_len(&self) -> usize {
        HEADER_FIXED_LEN + 4 * self.payloads.len() + self.payloads.iter().map(Vec::len).sum::<usize>()
    }

    /// Parses a container holding `scales + 1` payloads.
    pub fn from_bytes(bytes: &[u8], scales: usize) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(|_| Error::Truncated("container header"))?;
        if magic != CONTAINER_MAGIC {
            return Err(Error::format("container", "bad magic"));
        }
        let version = r.u8()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Version {
                expected: format!("container v{CONTAINER_VERSION}"),
                found: format!("container v{version}"),
            });
        }
        let flags = r.u8()?;
        if flags & !(FLAG_LAST_SCALE_DEFLATED | FLAG_DEGENERATE_QUANTIZER) != 0 {
            return Err(Error::format("container", format!("unknown flags {flags:#04x}")));
        }
        let (orig_h, orig_w, padded_h, padded_w) = (r.u16()?, r.u16()?, r.u16()?, r.u16()?);
        let (y_min, y_max) = (r.f32()?, r.f32()?);
        let lens = (0..=scales).map(|_| r.u32().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
        let declared: usize = lens.iter().sum();
        let remaining = bytes.len() - r.pos;
        if declared != remaining {
            return Err(if declared > remaining {
                Error::Truncated("container payload")
            } else {
                Error::format("container", format!("{} bytes after declared payloads", remaining - declared))
            });
        }
        let payloads = lens.iter().map(|&l| r.take(l).map(<[u8]>::to_vec)).collect::<Result<Vec<_>>>()?;
        if orig_h == 0 || orig_w == 0 || padded_h < orig_h || padded_w < orig_w || padded_h % 8 != 0 || padded_w % 8 != 0
        {
            return Err(Error::format(
                "container",
                format!("frame {orig_h}×{orig_w} padded to {padded_h}×{padded_w}"),
            ));
        }
        if !y_min.is_finite() || !y_max.is_finite() || y_min > y_max {
            return Err(Error::format("container", format!("quantizer range [{y_min}, {y_max}]")));
        }
        Ok(Container {
            version,
            flags,
            orig_h,
            orig_w,
            padded_h,
            padded_w,
            y_min,
            y_max,
            payloads,
        })
    }

    pub fn quantizer(&self) -> Result<QuantizerState> {
        QuantizerState::new(self.y_min, self.y_max)
    }
}

/// Payloads for every scale, coarsest first, and whether `z⁽ˢ⁾` was deflated.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LatentPayloads {
    pub payloads: Vec<Vec<u8>>,
    pub deflated: bool,
}

fn deflate(bytes: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(bytes).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

fn inflate(bytes: &[u8], expected: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(expected);
    DeflateDecoder::new(bytes)
        .take(expected as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| Error::format("container", format!("coarsest scale: {e}")))?;
    if out.len() != expected {
        return Err(Error::format(
            "container",
            format!("coarsest scale inflates to {} bytes, expected {expected}", out.len()),
        ));
    }
    Ok(out)
}

/// Codes a stack scale by scale from `z⁽ˢ⁾` down to `z⁽⁰⁾`.
pub fn encode_stack<T: Scalar>(model: &MsProb, store: &ParamStore<T>, stack: &ScaleStack) -> Result<LatentPayloads> {
    model.check_stack(stack)?;
    let raw = stack.coarsest().data.clone();
    let packed = deflate(&raw);
    let deflated = packed.len() < raw.len();
    let mut payloads = vec![if deflated { packed } else { raw }];
    for i in (0..model.config.scales).rev() {
        let z = &stack.scales[i];
        let params = model.predict_params(store, i, &stack.scales[i + 1], z.height, z.width)?;
        let mut enc = ArithEncoder::new();
        for c in 0..z.channels {
            for y in 0..z.height {
                for x in 0..z.width {
                    let prev = (c > 0).then(|| z.at(c - 1, y, x));
                    let table = FreqTable::from_pmf(&params.pmf(c, y, x, prev))?;
                    enc.encode(&table, z.at(c, y, x) as usize)?;
                }
            }
        }
        payloads.push(enc.finish());
    }
    Ok(LatentPayloads { payloads, deflated })
}

/// Inverse of [`encode_stack`] for a latent of `latent_h × latent_w`.
pub fn decode_stack<T: Scalar>(
    model: &MsProb,
    store: &ParamStore<T>,
    payloads: &LatentPayloads,
    latent_h: usize,
    latent_w: usize,
) -> Result<ScaleStack> {
    let s = model.config.scales;
    if payloads.payloads.len() != s + 1 {
        return Err(Error::format(
            "container",
            format!("{} payloads for a {s}-scale model", payloads.payloads.len()),
        ));
    }
    let ch = model.config.channels();
    let dims = model.config.dims(latent_h, latent_w);
    let coarse_len = ch[s] * dims[s].0 * dims[s].1;
    let first = &payloads.payloads[0];
    let coarse = if payloads.deflated {
        inflate(first, coarse_len)?
    } else if first.len() == coarse_len {
        first.clone()
    } else {
        return Err(Error::format(
            "container",
            format!("coarsest scale holds {} bytes, expected {coarse_len}", first.len()),
        ));
    };
    let mut scales = vec![SymbolTensor::new(ch[s], dims[s].0, dims[s].1, coarse)?];
    for (n, i) in (0..s).rev().enumerate() {
        let (h, w) = dims[i];
        let params = model.predict_params(store, i, scales.last().unwrap(), h, w)?;
        let mut z = SymbolTensor::zeros(ch[i], h, w);
        let mut dec = ArithDecoder::new(&payloads.payloads[n + 1]);
        for c in 0..ch[i] {
            for y in 0..h {
                for x in 0..w {
                    let prev = (c > 0).then(|| z.at(c - 1, y, x));
                    let table = FreqTable::from_pmf(&params.pmf(c, y, x, prev))?;
                    let q = dec.decode(&table)?;
                    z.data[(c * h + y) * w + x] = q as u8;
                }
            }
        }
        dec.finish()?;
        scales.push(z);
    }
    scales.reverse();
    Ok(ScaleStack { scales })
}
