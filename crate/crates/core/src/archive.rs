//! Embedding archives: a `records.bin` file of concatenated `EMB1` records and
//! a `manifest.tsv` index.
//!
//! Record layout, little-endian:
//!
//! ```text
//! "EMB1"  u16 version (1)  u16 name length  modality name (UTF-8)
//! u32 rows T  u32 cols d  T*d f32 row-major
//! ```
//!
//! The manifest starts with `#EMB1-manifest <tab> <entry count>` followed by
//! one `key <tab> modality <tab> offset <tab> length` line per record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::binio::{put_u16, put_u32, ByteReader};
use crate::domain::{EmbeddingSequence, ModalityId, SegmentKey};
use crate::error::{Error, Result};

pub const RECORD_MAGIC: &[u8; 4] = b"EMB1";
pub const RECORD_VERSION: u16 = 1;
pub const RECORDS_FILE: &str = "records.bin";
pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "#EMB1-manifest";

/// Serializes one sequence. Values are narrowed to `f32`.
pub fn encode_record(seq: &EmbeddingSequence) -> Result<Vec<u8>> {
    let name = seq.modality().name().as_bytes();
    let rows = u32::try_from(seq.len()).map_err(|_| Error::domain("record has too many frames"))?;
    let cols = u32::try_from(seq.dim()).map_err(|_| Error::domain("record is too wide"))?;
    let mut out = Vec::with_capacity(16 + name.len() + 4 * seq.as_slice().len());
    out.extend_from_slice(RECORD_MAGIC);
    put_u16(&mut out, RECORD_VERSION);
    put_u16(&mut out, name.len() as u16);
    out.extend_from_slice(name);
    put_u32(&mut out, rows);
    put_u32(&mut out, cols);
    for v in seq.as_slice() {
        let narrowed = *v as f32;
        if !narrowed.is_finite() {
            return Err(Error::domain(format!("value {v} overflows f32")));
        }
        out.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(out)
}

/// Parses one record from `r`, leaving the cursor after it.
pub(crate) fn read_record(r: &mut ByteReader<'_>) -> Result<EmbeddingSequence> {
    let start = r.offset();
    r.expect_magic(RECORD_MAGIC)?;
    let version_at = r.offset();
    let version = r.u16("record version")?;
    if version != RECORD_VERSION {
        return Err(Error::format(version_at, format!("unsupported record version {version}")));
    }
    let name_len = r.u16("modality name length")? as usize;
    let name_at = r.offset();
    let name = std::str::from_utf8(r.take(name_len, "modality name")?)
        .map_err(|_| Error::format(name_at, "modality name is not UTF-8"))?;
    let modality: ModalityId = name
        .parse()
        .map_err(|_| Error::format(name_at, format!("unknown modality {name:?}")))?;
    let rows = r.u32("row count")? as usize;
    let cols_at = r.offset();
    let cols = r.u32("column count")? as usize;
    if cols == 0 {
        return Err(Error::format(cols_at, "record has zero columns"));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(start, "record shape overflows"))?;
    let data_at = r.offset();
    let data: Vec<f64> = r.f32_vec(n, "record values")?.into_iter().map(f64::from).collect();
    EmbeddingSequence::new(modality, cols, data).map_err(|e| Error::format(data_at, e.to_string()))
}

/// Decodes a standalone record; trailing bytes are an error.
pub fn decode_record(bytes: &[u8]) -> Result<EmbeddingSequence> {
    let mut r = ByteReader::new(bytes);
    let seq = read_record(&mut r)?;
    r.finish("record")?;
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub key: SegmentKey,
    pub modality: ModalityId,
    pub offset: u64,
    pub length: u64,
}

fn check_dim(seq: &EmbeddingSequence) -> Result<()> {
    if !seq.modality().accepts_dim(seq.dim()) {
        return Err(Error::domain(format!(
            "{} records must be {} wide, got {}",
            seq.modality(),
            seq.modality().native_dim(),
            seq.dim()
        )));
    }
    Ok(())
}

/// Accumulates records in insertion order.
#[derive(Debug, Default)]
pub struct ArchiveWriter {
    records: Vec<u8>,
    entries: Vec<ManifestEntry>,
    seen: BTreeSet<(SegmentKey, ModalityId)>,
}

impl ArchiveWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: &SegmentKey, seq: &EmbeddingSequence) -> Result<()> {
        check_dim(seq)?;
        if !self.seen.insert((key.clone(), seq.modality())) {
            return Err(Error::domain(format!("duplicate record for {key} {}", seq.modality())));
        }
        let bytes = encode_record(seq)?;
        self.entries.push(ManifestEntry {
            key: key.clone(),
            modality: seq.modality(),
            offset: self.records.len() as u64,
            length: bytes.len() as u64,
        });
        self.records.extend_from_slice(&bytes);
        Ok(())
    }

    pub fn manifest_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\t{}\n", self.entries.len());
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.key, e.modality, e.offset, e.length));
        }
        out
    }

    /// Writes `records.bin` and `manifest.tsv` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RECORDS_FILE), &self.records)?;
        fs::write(dir.join(MANIFEST_FILE), self.manifest_text())?;
        Ok(())
    }
}

fn parse_manifest(text: &str, records_len: u64) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "manifest is empty".into(),
    })?;
    let count: usize = header
        .strip_prefix(MANIFEST_HEADER)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("bad manifest header {header:?}"),
        })?;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    let mut seen = BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let key: SegmentKey = fields[0].parse().map_err(|e: Error| err(e.to_string()))?;
        let modality: ModalityId = fields[1].parse().map_err(|e: Error| err(e.to_string()))?;
        let offset: u64 = fields[2].parse().map_err(|_| err(format!("bad offset {:?}", fields[2])))?;
        let length: u64 = fields[3].parse().map_err(|_| err(format!("bad length {:?}", fields[3])))?;
        match offset.checked_add(length) {
            Some(end) if end <= records_len => {}
            _ => {
                return Err(Error::format(
                    offset.min(records_len),
                    format!("{key} {modality}: record [{offset}, +{length}) exceeds the {records_len}-byte records file"),
                ))
            }
        }
        if !seen.insert((key.clone(), modality)) {
            return Err(err(format!("duplicate entry for {key} {modality}")));
        }
        entries.push(ManifestEntry {
            key,
            modality,
            offset,
            length,
        });
    }
    if entries.len() != count {
        return Err(Error::Parse {
            line: entries.len() + 2,
            message: format!("manifest declares {count} entries but lists {}", entries.len()),
        });
    }
    Ok(entries)
}

/// A loaded archive. Records are decoded on demand, so a corrupt record only
/// affects lookups that touch it.
#[derive(Debug, Clone)]
pub struct EmbeddingArchive {
    dir: PathBuf,
    records: Vec<u8>,
    entries: Vec<ManifestEntry>,
    index: BTreeMap<(SegmentKey, ModalityId), usize>,
}

impl EmbeddingArchive {
    /// Reads the manifest and records file, checking every manifest range.
    pub fn open(dir: &Path) -> Result<Self> {
        let records = fs::read(dir.join(RECORDS_FILE))?;
        let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Self::from_parts(dir.to_path_buf(), records, &manifest)
    }

    pub fn from_parts(dir: PathBuf, records: Vec<u8>, manifest: &str) -> Result<Self> {
        let entries = parse_manifest(manifest, records.len() as u64)?;
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.key.clone(), e.modality), i))
            .collect();
        Ok(Self {
            dir,
            records,
            entries,
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Distinct segment keys, sorted.
    pub fn keys(&self) -> BTreeSet<SegmentKey> {
        self.entries.iter().map(|e| e.key.clone()).collect()
    }

    pub fn contains(&self, key: &SegmentKey, modality: ModalityId) -> bool {
        self.index.contains_key(&(key.clone(), modality))
    }

    fn decode_entry(&self, e: &ManifestEntry) -> Result<EmbeddingSequence> {
        let bytes = &self.records[e.offset as usize..(e.offset + e.length) as usize];
        let mut r = ByteReader::with_base(bytes, e.offset);
        let seq = read_record(&mut r)?;
        r.finish("record")?;
        if seq.modality() != e.modality {
            return Err(Error::format(
                e.offset,
                format!("manifest says {} but record holds {}", e.modality, seq.modality()),
            ));
        }
        check_dim(&seq).map_err(|err| Error::format(e.offset, err.to_string()))?;
        Ok(seq)
    }

    pub fn get(&self, key: &SegmentKey, modality: ModalityId) -> Result<EmbeddingSequence> {
        let i = self
            .index
            .get(&(key.clone(), modality))
            .ok_or_else(|| Error::domain(format!("no {modality} record for {key}")))?;
        self.decode_entry(&self.entries[*i])
    }

    /// Every record stored for `key`.
    pub fn segment(&self, key: &SegmentKey) -> Result<BTreeMap<ModalityId, EmbeddingSequence>> {
        let mut out = BTreeMap::new();
        for m in ModalityId::ALL {
            if self.contains(key, m) {
                out.insert(m, self.get(key, m)?);
            }
        }
        if out.is_empty() {
            return Err(Error::domain(format!("no records for {key}")));
        }
        Ok(out)
    }

    /// Decodes every record, failing on the first malformed one.
    pub fn validate_all(&self) -> Result<()> {
        for e in &self.entries {
            self.decode_entry(e)?;
        }
        Ok(())
    }
}

/// Scans a records file as back-to-back records, independent of any manifest.
pub fn scan_records(bytes: &[u8]) -> Result<Vec<EmbeddingSequence>> {
    let mut r = ByteReader::new(bytes);
    let mut out = Vec::new();
    while r.remaining() > 0 {
        out.push(read_record(&mut r)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(m: ModalityId, rows: usize, rng: &mut ChaCha8Rng) -> EmbeddingSequence {
        let d = m.native_dim();
        // Values exactly representable in f32 so round trips are exact.
        let data = (0..rows * d).map(|_| rng.random_range(-1000i32..1000) as f64 / 64.0).collect();
        EmbeddingSequence::new(m, d, data).unwrap()
    }

    fn sample_archive(rng: &mut ChaCha8Rng) -> (ArchiveWriter, Vec<(SegmentKey, EmbeddingSequence)>) {
        let mut w = ArchiveWriter::new();
        let mut stored = Vec::new();
        for i in 0..3 {
            let key = SegmentKey::new(format!("vid{i}"), i);
            for m in ModalityId::ALL {
                let rows = if m == ModalityId::Aed { 1 } else { i as usize };
                let s = seq(m, rows, rng);
                w.add(&key, &s).unwrap();
                stored.push((key.clone(), s));
            }
        }
        (w, stored)
    }

    #[test]
    fn record_layout() {
        let s = EmbeddingSequence::new(ModalityId::Ted, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = encode_record(&s).unwrap();
        assert_eq!(&b[..4], b"EMB1");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 3);
        assert_eq!(&b[8..11], b"TED");
        assert_eq!(u32::from_le_bytes(b[11..15].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[15..19].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[23..27].try_into().unwrap()), 2.0);
        assert_eq!(b.len(), 19 + 16);
        assert_eq!(decode_record(&b).unwrap(), s);
    }

    #[test]
    fn directory_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w, stored) = sample_archive(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        w.write(dir.path()).unwrap();
        let a = EmbeddingArchive::open(dir.path()).unwrap();
        a.validate_all().unwrap();
        assert_eq!(a.keys().len(), 3);
        for (key, s) in &stored {
            assert_eq!(&a.get(key, s.modality()).unwrap(), s);
        }
        assert_eq!(a.segment(&stored[0].0).unwrap().len(), 4);
        assert_eq!(scan_records(&fs::read(dir.path().join(RECORDS_FILE)).unwrap()).unwrap().len(), 12);
    }

    #[test]
    fn writer_rejects_wrong_width_and_duplicates() {
        let mut w = ArchiveWriter::new();
        let key = SegmentKey::new("v", 0);
        let narrow = EmbeddingSequence::new(ModalityId::Fed, 4, vec![0.0; 4]).unwrap();
        assert!(w.add(&key, &narrow).is_err());
        let wide_ser = EmbeddingSequence::new(ModalityId::Ser, 1024, vec![0.0; 1024]).unwrap();
        w.add(&key, &wide_ser).unwrap();
        assert!(w.add(&key, &wide_ser).is_err());
    }

    #[test]
    fn every_truncation_of_records_is_a_positioned_error() {
        let mut w = ArchiveWriter::new();
        for i in 0..3 {
            let s = EmbeddingSequence::new(ModalityId::Aed, 527, vec![0.25; 527]).unwrap();
            w.add(&SegmentKey::new("clip", i), &s).unwrap();
        }
        let manifest = w.manifest_text();
        let full = w.records.clone();
        for cut in 0..full.len() {
            let bytes = full[..cut].to_vec();
            let opened = EmbeddingArchive::from_parts(PathBuf::new(), bytes.clone(), &manifest);
            assert!(matches!(opened, Err(Error::Format { offset, .. }) if offset <= cut as u64), "cut {cut}");
            match scan_records(&bytes) {
                Ok(v) => assert!(cut == 0 || v.len() < 3, "cut {cut}"),
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                Err(e) => panic!("cut {cut}: {e}"),
            }
        }
    }

    #[test]
    fn scan_reports_offset_of_damage() {
        let s = EmbeddingSequence::new(ModalityId::Fed, 512, vec![0.5; 1024]).unwrap();
        let b = encode_record(&s).unwrap();
        let mut two = b.clone();
        two.extend_from_slice(&b[..b.len() - 3]);
        match scan_records(&two) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, b.len() as u64 + 19),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupt_record_is_isolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, stored) = sample_archive(&mut rng);
        let mut bytes = w.records.clone();
        let victim = &w.entries[5];
        bytes[victim.offset as usize] = b'X';
        let a = EmbeddingArchive::from_parts(PathBuf::new(), bytes, &w.manifest_text()).unwrap();
        assert!(matches!(a.get(&victim.key, victim.modality), Err(Error::Format { offset, .. }) if offset == victim.offset));
        assert!(a.validate_all().is_err());
        for (i, (key, s)) in stored.iter().enumerate() {
            if i != 5 {
                assert_eq!(&a.get(key, s.modality()).unwrap(), s);
            }
        }
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, _) = sample_archive(&mut rng);
        let text = w.manifest_text();
        let len = w.records.len() as u64;
        let lines: Vec<&str> = text.lines().collect();
        let dropped = lines[..lines.len() - 1].join("\n");
        assert!(matches!(parse_manifest(&dropped, len), Err(Error::Parse { .. })));
        let bad = text.replacen("\tFED\t", "\tXYZ\t", 1);
        assert!(matches!(parse_manifest(&bad, len), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_manifest("", len), Err(Error::Parse { line: 1, .. })));
    }
}
