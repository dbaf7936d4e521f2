//! Hidden-state batches, the GEC1 cache file format, and JSONL dataset
//! loading.
//!
//! GEC1 layout, little-endian throughout:
//!   magic "GEC1" | version u32 | d u32 | sentence_count u64
//!   per sentence: length u32, then length*d f32 values
//!   trailing u64 FNV-1a checksum over every preceding byte
//!
//! Values are f32 on disk and widened to f64 in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GlotError, Result};
use crate::numeric::Matrix;

pub const CACHE_MAGIC: [u8; 4] = *b"GEC1";
pub const CACHE_VERSION: u32 = 1;

/// Per-sentence token hidden states with a validity mask (true = real
/// token, false = padding).
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStates {
    states: Matrix,
    mask: Vec<bool>,
}

impl HiddenStates {
    pub fn new(states: Matrix, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != states.rows() {
            return Err(GlotError::ShapeMismatch {
                op: "HiddenStates::new",
                detail: format!("{} mask entries for {} rows", mask.len(), states.rows()),
            });
        }
        Ok(Self { states, mask })
    }

    pub fn all_valid(states: Matrix) -> Self {
        let mask = vec![true; states.rows()];
        Self { states, mask }
    }

    pub fn states(&self) -> &Matrix {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut Matrix {
        &mut self.states
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    /// Sequence length including padding.
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_rows_indexed(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i, self.states.row(i)))
    }

    /// Matrix of only the valid rows, in token order.
    pub fn valid_matrix(&self) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> =
            self.valid_rows_indexed().map(|(_, r)| r.to_vec()).collect();
        if rows.is_empty() {
            return Err(GlotError::EmptySentence);
        }
        Matrix::from_rows(&rows)
    }

    /// Keeps at most the first `max_len` positions.
    pub fn truncate(&mut self, max_len: usize) {
        if self.len() <= max_len {
            return;
        }
        let dim = self.dim();
        let data = self.states.data()[..max_len * dim].to_vec();
        self.states = Matrix::from_vec(max_len, dim, data).expect("prefix stays finite");
        self.mask.truncate(max_len);
    }
}

// ---------------------------------------------------------------------
// FNV-1a, used for the cache checksum and manifest input digests.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Self(FNV_OFFSET)
    }
}

impl Fnv1a {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

// ---------------------------------------------------------------------
// GEC1 writing and reading.

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Fnv1a,
}

impl<W: Write> HashingWriter<W> {
    fn write_all_hashed(&mut self, bytes: &[u8]) -> Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }
}

/// Writes sentences as a GEC1 cache. All sentences must share one hidden
/// dimension and have at least one token.
pub fn write_cache(sentences: &[Matrix], path: &Path) -> Result<()> {
    if sentences.is_empty() {
        return Err(GlotError::EmptyBatch("write_cache"));
    }
    let d = sentences[0].cols();
    for (i, s) in sentences.iter().enumerate() {
        if s.cols() != d {
            return Err(GlotError::ShapeMismatch {
                op: "write_cache",
                detail: format!("sentence {i} has d={}, expected {d}", s.cols()),
            });
        }
        if s.rows() == 0 {
            return Err(GlotError::EmptySentence);
        }
    }

    let file = File::create(path)?;
    let mut w = HashingWriter { inner: BufWriter::new(file), hasher: Fnv1a::new() };
    w.write_all_hashed(&CACHE_MAGIC)?;
    w.write_all_hashed(&CACHE_VERSION.to_le_bytes())?;
    w.write_all_hashed(&(d as u32).to_le_bytes())?;
    w.write_all_hashed(&(sentences.len() as u64).to_le_bytes())?;
    for s in sentences {
        w.write_all_hashed(&(s.rows() as u32).to_le_bytes())?;
        for &v in s.data() {
            w.write_all_hashed(&(v as f32).to_le_bytes())?;
        }
    }
    let checksum = w.hasher.finish();
    w.inner.write_all(&checksum.to_le_bytes())?;
    w.inner.flush()?;
    Ok(())
}

/// Streaming GEC1 reader. Opening verifies the magic, version, and the
/// whole-file checksum (one constant-memory pass), then sentences can be
/// pulled one at a time.
pub struct CacheReader {
    reader: BufReader<File>,
    d: usize,
    sentence_count: u64,
    read_so_far: u64,
}

impl CacheReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        if file_len < 16 + 8 {
            return Err(GlotError::TruncatedPayload(format!(
                "file is only {file_len} bytes"
            )));
        }

        // Checksum pass over everything but the trailing 8 bytes.
        let mut reader = BufReader::new(file);
        let mut hasher = Fnv1a::new();
        let mut remaining = file_len - 8;
        let mut buf = [0u8; 8192];
        while remaining > 0 {
            let take = remaining.min(buf.len() as u64) as usize;
            reader.read_exact(&mut buf[..take])?;
            hasher.update(&buf[..take]);
            remaining -= take as u64;
        }
        let mut stored = [0u8; 8];
        reader.read_exact(&mut stored)?;
        let stored = u64::from_le_bytes(stored);
        let computed = hasher.finish();
        if stored != computed {
            return Err(GlotError::ChecksumMismatch { stored, computed });
        }

        reader.seek(SeekFrom::Start(0))?;
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if magic != CACHE_MAGIC {
            return Err(GlotError::BadMagic);
        }
        let mut u32buf = [0u8; 4];
        reader.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CACHE_VERSION {
            return Err(GlotError::BadVersion(version));
        }
        reader.read_exact(&mut u32buf)?;
        let d = u32::from_le_bytes(u32buf) as usize;
        let mut u64buf = [0u8; 8];
        reader.read_exact(&mut u64buf)?;
        let sentence_count = u64::from_le_bytes(u64buf);
        if d == 0 {
            return Err(GlotError::InvalidConfig("cache has d = 0".into()));
        }
        Ok(Self { reader, d, sentence_count, read_so_far: 0 })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sentence_count(&self) -> u64 {
        self.sentence_count
    }

    fn read_sentence(&mut self) -> Result<Matrix> {
        let mut u32buf = [0u8; 4];
        self.reader.read_exact(&mut u32buf).map_err(|e| {
            GlotError::TruncatedPayload(format!(
                "sentence {} header: {e}",
                self.read_so_far
            ))
        })?;
        let len = u32::from_le_bytes(u32buf) as usize;
        if len == 0 {
            return Err(GlotError::EmptySentence);
        }
        let mut data = Vec::with_capacity(len * self.d);
        let mut f32buf = [0u8; 4];
        for _ in 0..len * self.d {
            self.reader.read_exact(&mut f32buf).map_err(|e| {
                GlotError::TruncatedPayload(format!(
                    "sentence {} payload: {e}",
                    self.read_so_far
                ))
            })?;
            data.push(f32::from_le_bytes(f32buf) as f64);
        }
        self.read_so_far += 1;
        Matrix::from_vec(len, self.d, data)
    }
}

impl Iterator for CacheReader {
    type Item = Result<Matrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read_so_far >= self.sentence_count {
            return None;
        }
        Some(self.read_sentence())
    }
}

/// Whole cache in memory.
pub struct EmbeddingCache {
    pub d: usize,
    pub sentences: Vec<Matrix>,
}

pub fn read_cache(path: &Path) -> Result<EmbeddingCache> {
    let reader = CacheReader::open(path)?;
    let d = reader.dim();
    let sentences: Result<Vec<Matrix>> = reader.collect();
    Ok(EmbeddingCache { d, sentences: sentences? })
}

// ---------------------------------------------------------------------
// JSONL datasets.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Single,
    Pair,
    Regression,
    RetrievalPairs,
}

impl TaskKind {
    pub fn is_pairwise(self) -> bool {
        matches!(self, TaskKind::Pair | TaskKind::Regression | TaskKind::RetrievalPairs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ItemSource {
    Tokens(Vec<u32>),
    TokenPair(Vec<u32>, Vec<u32>),
    Ref(usize),
    PairRefs(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub source: ItemSource,
    /// Class id for classification, raw target for regression, unused for
    /// retrieval pairs.
    pub label: f64,
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub task: TaskKind,
    pub items: Vec<DatasetItem>,
    /// How many token sequences were cut down to max_seq_len at load.
    pub truncated_count: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Deserialize)]
struct RawLine {
    tokens: Option<Vec<u32>>,
    tokens_a: Option<Vec<u32>>,
    tokens_b: Option<Vec<u32>>,
    #[serde(rename = "ref")]
    reference: Option<usize>,
    ref_a: Option<usize>,
    ref_b: Option<usize>,
    label: Option<f64>,
    #[allow(dead_code)]
    meta: Option<serde_json::Value>,
}

/// Loads and schema-validates a JSONL dataset. Token sequences longer
/// than `max_seq_len` are truncated and counted.
pub fn load_jsonl_dataset(
    path: &Path,
    task: TaskKind,
    max_seq_len: usize,
    num_classes: Option<usize>,
) -> Result<LabeledDataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    let mut truncated = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| GlotError::Schema {
            line: line_no,
            msg: e.to_string(),
        })?;
        let schema = |msg: &str| GlotError::Schema { line: line_no, msg: msg.into() };

        let mut clip = |mut t: Vec<u32>| {
            if t.len() > max_seq_len {
                t.truncate(max_seq_len);
                truncated += 1;
            }
            t
        };

        let source = match task {
            TaskKind::Single => match (raw.tokens, raw.reference) {
                (Some(t), None) => {
                    if t.is_empty() {
                        return Err(schema("empty token list"));
                    }
                    ItemSource::Tokens(clip(t))
                }
                (None, Some(r)) => ItemSource::Ref(r),
                _ => return Err(schema("single task needs exactly one of tokens / ref")),
            },
            TaskKind::Pair | TaskKind::Regression | TaskKind::RetrievalPairs => {
                match (raw.tokens_a, raw.tokens_b, raw.ref_a, raw.ref_b) {
                    (Some(a), Some(b), None, None) => {
                        if a.is_empty() || b.is_empty() {
                            return Err(schema("empty token list"));
                        }
                        ItemSource::TokenPair(clip(a), clip(b))
                    }
                    (None, None, Some(a), Some(b)) => ItemSource::PairRefs(a, b),
                    _ => {
                        return Err(schema(
                            "pair task needs tokens_a+tokens_b or ref_a+ref_b",
                        ))
                    }
                }
            }
        };

        let label = match task {
            TaskKind::RetrievalPairs => raw.label.unwrap_or(0.0),
            _ => raw.label.ok_or_else(|| schema("missing label"))?,
        };
        match task {
            TaskKind::Single | TaskKind::Pair => {
                if label < 0.0 || label.fract() != 0.0 {
                    return Err(schema(&format!("label {label} is not a class id")));
                }
                if let Some(c) = num_classes {
                    if (label as usize) >= c {
                        return Err(schema(&format!("label {label} out of {c} classes")));
                    }
                }
            }
            TaskKind::Regression | TaskKind::RetrievalPairs => {
                if !label.is_finite() {
                    return Err(schema("non-finite label"));
                }
            }
        }

        items.push(DatasetItem { source, label });
    }

    if items.is_empty() {
        return Err(GlotError::EmptyDataset(format!("{}", path.display())));
    }
    Ok(LabeledDataset { task, items, truncated_count: truncated })
}
