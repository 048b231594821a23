use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::PathBuf;

use super::format::{self, block_bytes};
use super::stats::blocks_for;
use super::{EmError, IoStats, Phase, Record, Storage};

enum Backing {
    Memory(Vec<Record>),
    File(PathBuf),
}

/// One sorted run of `(key, count, flags)` records, one record per key.
///
/// Every access is charged to an [`IoStats`] in whole blocks of
/// `block_size` records. The run is either held in memory (simulation) or
/// persisted to a level file; both produce the same contents and the same
/// charges for the same operation sequence.
pub struct LevelStore {
    name: String,
    capacity: Option<usize>,
    block_size: usize,
    len: usize,
    backing: Backing,
}

impl std::fmt::Debug for LevelStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LevelStore")
            .field("name", &self.name)
            .field("capacity", &self.capacity)
            .field("block_size", &self.block_size)
            .field("len", &self.len)
            .finish()
    }
}

impl LevelStore {
    /// Creates an empty level. `capacity` of `None` means unbounded.
    pub fn create(
        name: &str,
        capacity: Option<usize>,
        block_size: usize,
        storage: &Storage,
    ) -> Result<Self, EmError> {
        assert!(block_size > 0, "block size must be positive");
        let backing = match storage {
            Storage::Memory => Backing::Memory(Vec::new()),
            Storage::File(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join(format!("{name}.lvl"));
                fs::write(&path, format::encode_level(&[], block_size, capacity))?;
                Backing::File(path)
            }
        };
        Ok(Self { name: name.to_string(), capacity, block_size, len: 0, backing })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Free record slots; `usize::MAX` for an unbounded level.
    pub fn free_slots(&self) -> usize {
        self.capacity.map_or(usize::MAX, |c| c.saturating_sub(self.len))
    }

    /// Reads the whole run in key order, charging `ceil(len / B)` reads.
    pub fn scan(&self, io: &mut IoStats, phase: Phase) -> Result<Vec<Record>, EmError> {
        io.charge_reads(phase, blocks_for(self.len, self.block_size));
        self.load()
    }

    /// Replaces the run, charging `ceil(len / B)` writes.
    pub fn rebuild(
        &mut self,
        records: Vec<Record>,
        io: &mut IoStats,
        phase: Phase,
    ) -> Result<(), EmError> {
        if let Some(i) = records.windows(2).position(|w| w[0].key >= w[1].key) {
            return Err(EmError::Unsorted { level: self.name.clone(), index: i + 1 });
        }
        if let Some(cap) = self.capacity {
            if records.len() > cap {
                return Err(EmError::CapacityExceeded {
                    level: self.name.clone(),
                    capacity: cap,
                    len: records.len(),
                });
            }
        }
        io.charge_writes(phase, blocks_for(records.len(), self.block_size));
        self.len = records.len();
        match &mut self.backing {
            Backing::Memory(v) => *v = records,
            Backing::File(path) => {
                let img = format::encode_level(&records, self.block_size, self.capacity);
                let mut f = File::create(&*path)?;
                f.write_all(&img)?;
            }
        }
        Ok(())
    }

    /// Binary search over blocks. Each probed block costs one read, so a
    /// lookup costs at most `ceil(log2(blocks + 1))` reads.
    pub fn point_query(
        &self,
        key: u64,
        io: &mut IoStats,
        phase: Phase,
    ) -> Result<Option<Record>, EmError> {
        let nblocks = self.len.div_ceil(self.block_size);
        let (mut lo, mut hi) = (0usize, nblocks);
        let mut file = match &self.backing {
            Backing::File(path) if nblocks > 0 => Some(File::open(path)?),
            _ => None,
        };
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            io.charge_reads(phase, 1);
            let owned;
            let block: &[Record] = match &self.backing {
                Backing::Memory(v) => {
                    let start = mid * self.block_size;
                    &v[start..(start + self.block_size).min(self.len)]
                }
                Backing::File(_) => {
                    owned = self.read_block(mid, file.as_mut())?;
                    &owned
                }
            };
            let (first, last) = (block[0].key, block[block.len() - 1].key);
            if key < first {
                hi = mid;
            } else if key > last {
                lo = mid + 1;
            } else {
                return Ok(block.binary_search_by_key(&key, |r| r.key).ok().map(|i| block[i]));
            }
        }
        Ok(None)
    }

    /// Current contents without charging any I/O. For inspection and tests.
    pub fn snapshot(&self) -> Result<Vec<Record>, EmError> {
        self.load()
    }

    fn load(&self) -> Result<Vec<Record>, EmError> {
        match &self.backing {
            Backing::Memory(v) => Ok(v.clone()),
            Backing::File(path) => {
                let bytes = fs::read(path)?;
                let header = format::decode_header(&bytes)?;
                if header.len != self.len || header.block_size != self.block_size {
                    return Err(EmError::Corrupt(format!("{}: header mismatch", self.name)));
                }
                let body = &bytes[block_bytes(self.block_size).max(32)..];
                format::decode_records(body, header.len)
            }
        }
    }

    fn read_block(&self, idx: usize, file: Option<&mut File>) -> Result<Vec<Record>, EmError> {
        let start = idx * self.block_size;
        let end = (start + self.block_size).min(self.len);
        match (&self.backing, file) {
            (Backing::Memory(v), _) => Ok(v[start..end].to_vec()),
            (Backing::File(_), Some(f)) => {
                let width = block_bytes(self.block_size);
                let offset = width.max(32) + idx * width;
                f.seek(SeekFrom::Start(offset as u64))?;
                let mut buf = vec![0u8; (end - start) * format::RECORD_BYTES];
                f.read_exact(&mut buf)?;
                format::decode_records(&buf, end - start)
            }
            (Backing::File(_), None) => Err(EmError::Corrupt("level file not open".into())),
        }
    }

    /// Raw bytes of the level image, as the file backend would persist it.
    pub fn image(&self) -> Result<Vec<u8>, EmError> {
        Ok(format::encode_level(&self.load()?, self.block_size, self.capacity))
    }
}
