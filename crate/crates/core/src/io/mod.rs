//! File formats: JSON Lines dataset manifests, the `EMB1` embedding file,
//! pair-score and frame-score CSVs, and JSON reports.

pub(crate) mod binary;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{TrackletId, TrackletRecord};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use binary::{len_u32, Reader, Writer};

pub fn write_dataset(path: &Path, tracklets: &[TrackletRecord], strip_labels: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tracklets {
        if strip_labels && t.entity_id.is_some() {
            let mut t = t.clone();
            t.entity_id = None;
            serde_json::to_writer(&mut w, &t)?;
        } else {
            serde_json::to_writer(&mut w, t)?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrackletRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut dim = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TrackletRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("dataset", format!("line {}: {e}", i + 1)))?;
        t.validate(dim)?;
        if dim.is_none() {
            dim = t.frames.first().map(|f| f.features.len());
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// `EMB1` embedding file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub ids: Vec<String>,
    pub vectors: Tensor,
}

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_VERSION: u32 = 1;
const EMB_KIND: &str = "EMB1 embedding";

impl EmbeddingFile {
    pub fn new(ids: Vec<String>, vectors: Tensor) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::format(
                EMB_KIND,
                format!("{} ids for {} vectors", ids.len(), vectors.rows()),
            ));
        }
        Ok(EmbeddingFile { ids, vectors })
    }

    /// Layout: magic, version, count, dim, count·dim f32 row-major, count
    /// length-prefixed id strings, CRC32 trailer.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(EMB_MAGIC, EMB_VERSION);
        w.u32(len_u32(self.vectors.rows())?);
        w.u32(len_u32(self.vectors.cols())?);
        for &v in self.vectors.data() {
            w.f32(v as f32);
        }
        for id in &self.ids {
            w.str(id)?;
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(EMB_KIND, bytes, EMB_MAGIC)?;
        if version != EMB_VERSION {
            return Err(Error::format(EMB_KIND, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let data: Vec<f64> = r.f32s(count * dim)?.into_iter().map(f64::from).collect();
        let ids = (0..count).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        r.expect_end()?;
        EmbeddingFile::new(ids, Tensor::from_vec(count, dim, data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Same,
    Diff,
    Unknown,
}

impl PairLabel {
    /// `Some(true)` for same-entity pairs, `None` when unknown.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            PairLabel::Same => Some(true),
            PairLabel::Diff => Some(false),
            PairLabel::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub tracklet_a: TrackletId,
    pub tracklet_b: TrackletId,
    pub label: PairLabel,
    pub score: Option<f64>,
}

impl PairRecord {
    /// Order-independent key.
    pub fn key(&self) -> (TrackletId, TrackletId) {
        (self.tracklet_a.min(self.tracklet_b), self.tracklet_a.max(self.tracklet_b))
    }
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

pub fn write_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let mut w = csv_writer(path, &["tracklet_a", "tracklet_b", "label", "score"])?;
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["tracklet_a", "tracklet_b", "label", "score"] {
        return Err(Error::format("pair score", format!("unexpected header {headers:?}")));
    }
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub tracklet_id: TrackletId,
    pub frame_index: u64,
    pub score: f64,
}

pub fn write_frame_scores(path: &Path, scores: &[FrameScore]) -> Result<()> {
    let mut w = csv_writer(path, &["tracklet_id", "frame_index", "score"])?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frame_scores(path: &Path) -> Result<Vec<FrameScore>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["tracklet_id", "frame_index", "score"] {
        return Err(Error::format("frame score", format!("unexpected header {headers:?}")));
    }
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

/// Frame scores keyed by tracklet then frame index.
pub fn index_frame_scores(scores: &[FrameScore]) -> BTreeMap<TrackletId, BTreeMap<u64, f64>> {
    let mut out: BTreeMap<TrackletId, BTreeMap<u64, f64>> = BTreeMap::new();
    for s in scores {
        out.entry(s.tracklet_id).or_default().insert(s.frame_index, s.score);
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn embedding_file_layout() {
        let f = EmbeddingFile::new(vec!["7".into()], Tensor::row_vector(&[0.5, -0.25])).unwrap();
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 0.5);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1);
        assert_eq!(bytes[28], b'7');
        assert_eq!(bytes.len(), 33);
        assert_eq!(EmbeddingFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn embedding_file_rejects_count_mismatch() {
        let f = EmbeddingFile::new(vec!["a".into(), "b".into()], Tensor::row_vector(&[1.0]).clone());
        assert!(f.is_err());
        let good = EmbeddingFile::new(vec!["a".into()], Tensor::row_vector(&[1.0])).unwrap();
        let mut bytes = good.to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert!(matches!(EmbeddingFile::from_bytes(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn pair_csv_round_trip_with_missing_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let pairs = vec![
            PairRecord { tracklet_a: 1, tracklet_b: 2, label: PairLabel::Same, score: Some(0.1 + 0.2) },
            PairRecord { tracklet_a: 3, tracklet_b: 1, label: PairLabel::Unknown, score: None },
        ];
        write_pairs(&path, &pairs).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("tracklet_a,tracklet_b,label,score\n1,2,same,0.30000000000000004\n3,1,unknown,\n"), "{text}");
        assert_eq!(read_pairs(&path).unwrap(), pairs);
    }

    proptest! {
        #[test]
        fn embedding_files_round_trip(count in 0usize..5, dim in 1usize..6, seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut v = Tensor::normal(count, dim, 1.0, &mut rng);
            v.quantize_f32();
            let ids: Vec<String> = (0..count).map(|i| format!("t{i}")).collect();
            let f = EmbeddingFile::new(ids, v).unwrap();
            prop_assert_eq!(EmbeddingFile::from_bytes(&f.to_bytes().unwrap()).unwrap(), f);
        }

        #[test]
        fn frame_scores_round_trip(scores in prop::collection::vec((0u64..100, 0u64..1000, 0.0f64..=1.0), 0..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.csv");
            let rows: Vec<FrameScore> = scores
                .into_iter()
                .map(|(t, f, s)| FrameScore { tracklet_id: t, frame_index: f, score: s })
                .collect();
            write_frame_scores(&path, &rows).unwrap();
            prop_assert_eq!(read_frame_scores(&path).unwrap(), rows);
        }
    }
}
