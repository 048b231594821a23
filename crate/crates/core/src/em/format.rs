//! On-disk level layout.
//!
//! A level file is a header block followed by record blocks. Every block is
//! `B` record slots wide, and each slot is 24 bytes:
//!
//! ```text
//! key: u64 LE | count: u64 LE | flags: u8 | pad: [u8; 7]
//! ```
//!
//! The header block starts with the magic `OEDPLVL1`, then `B`, the level
//! capacity (`u64::MAX` when unbounded) and the record count, all `u64` LE,
//! and is zero-padded to the block width. The final record block is padded
//! with zeroed slots.

use super::{EmError, Record};

pub const RECORD_BYTES: usize = 24;
pub const MAGIC: &[u8; 8] = b"OEDPLVL1";

pub fn block_bytes(block_size: usize) -> usize {
    block_size * RECORD_BYTES
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub block_size: usize,
    pub capacity: Option<usize>,
    pub len: usize,
}

pub fn encode_record(rec: &Record, out: &mut [u8]) {
    out[0..8].copy_from_slice(&rec.key.to_le_bytes());
    out[8..16].copy_from_slice(&rec.count.to_le_bytes());
    out[16] = rec.flags;
    out[17..24].fill(0);
}

pub fn decode_record(buf: &[u8]) -> Record {
    let key = u64::from_le_bytes(buf[0..8].try_into().unwrap());
    let count = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    Record { key, count, flags: buf[16] }
}

pub fn encode_header(header: &Header) -> Vec<u8> {
    let mut buf = vec![0u8; block_bytes(header.block_size).max(32)];
    buf[0..8].copy_from_slice(MAGIC);
    buf[8..16].copy_from_slice(&(header.block_size as u64).to_le_bytes());
    let cap = header.capacity.map_or(u64::MAX, |c| c as u64);
    buf[16..24].copy_from_slice(&cap.to_le_bytes());
    buf[24..32].copy_from_slice(&(header.len as u64).to_le_bytes());
    buf
}

pub fn decode_header(buf: &[u8]) -> Result<Header, EmError> {
    if buf.len() < 32 || &buf[0..8] != MAGIC {
        return Err(EmError::Corrupt("bad level header".into()));
    }
    let field = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
    let block_size = field(8) as usize;
    if block_size == 0 {
        return Err(EmError::Corrupt("zero block size".into()));
    }
    let cap = field(16);
    Ok(Header {
        block_size,
        capacity: (cap != u64::MAX).then_some(cap as usize),
        len: field(24) as usize,
    })
}

/// Full file image for a level: header block plus zero-padded record blocks.
pub fn encode_level(records: &[Record], block_size: usize, capacity: Option<usize>) -> Vec<u8> {
    let header = Header { block_size, capacity, len: records.len() };
    let mut out = encode_header(&header);
    let header_len = out.len();
    let nblocks = records.len().div_ceil(block_size);
    out.resize(header_len + nblocks * block_bytes(block_size), 0);
    for (i, rec) in records.iter().enumerate() {
        let at = header_len + i * RECORD_BYTES;
        encode_record(rec, &mut out[at..at + RECORD_BYTES]);
    }
    out
}

pub fn decode_records(body: &[u8], len: usize) -> Result<Vec<Record>, EmError> {
    if body.len() < len * RECORD_BYTES {
        return Err(EmError::Corrupt(format!(
            "level body holds {} bytes, header claims {len} records",
            body.len()
        )));
    }
    Ok(body.chunks_exact(RECORD_BYTES).take(len).map(decode_record).collect())
}
