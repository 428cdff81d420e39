//! On-disk manifest directory:
//!
//! ```text
//! manifest.json   version, dims, row counts, sample records
//! speech.f32      little-endian f32, speech_rows x speech_dim, row-major
//! text.f32        little-endian f32, text_rows x text_dim, row-major
//! captions.jsonl  {"index": i, "text": "..."} per caption row
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingMatrix, PairedSample, Result, StoreError};

pub const MANIFEST_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "manifest.json";
const SPEECH_FILE: &str = "speech.f32";
const TEXT_FILE: &str = "text.f32";
const CAPTIONS_FILE: &str = "captions.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    version: u32,
    speech_dim: usize,
    text_dim: usize,
    speech_rows: usize,
    text_rows: usize,
    records: Vec<PairedSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionRecord {
    index: usize,
    text: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            StoreError::MissingFile(path.to_path_buf())
        } else {
            StoreError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn read_blob(path: &Path, rows: usize, dim: usize) -> Result<EmbeddingMatrix> {
    let blob = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if dim == 0 {
        return Err(StoreError::Header {
            blob,
            reason: "declared dim is 0".to_string(),
        });
    }
    if bytes.len() % 4 != 0 {
        return Err(StoreError::Header {
            blob,
            reason: format!("length {} is not a multiple of 4 bytes", bytes.len()),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(rows, dim, values, &blob)
}

fn write_blob(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.values().len() * 4);
    for v in m.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Loads and fully validates a manifest directory.
pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let header: ManifestHeader =
        serde_json::from_str(&raw).map_err(|e| StoreError::Json {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    if header.version != MANIFEST_VERSION {
        return Err(StoreError::Version {
            found: header.version,
            expected: MANIFEST_VERSION,
        });
    }

    let speech = read_blob(&dir.join(SPEECH_FILE), header.speech_rows, header.speech_dim)?;
    let text = read_blob(&dir.join(TEXT_FILE), header.text_rows, header.text_dim)?;
    let captions = read_captions(&dir.join(CAPTIONS_FILE))?;

    Ok(Dataset::new(header.records, speech, text, captions)?.with_metadata(header.metadata))
}

fn read_captions(path: &PathBuf) -> Result<BTreeMap<usize, String>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(&line).map_err(|e| StoreError::Json {
            path: path.clone(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        if out.insert(rec.index, rec.text).is_some() {
            return Err(StoreError::CaptionRecord {
                index: rec.index,
                reason: "duplicate caption record".to_string(),
            });
        }
    }
    Ok(out)
}

/// Writes `d` as a manifest directory, creating it if needed. Output bytes
/// are a pure function of the dataset.
pub fn write_manifest(d: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let header = ManifestHeader {
        version: MANIFEST_VERSION,
        speech_dim: d.speech_features().dim(),
        text_dim: d.text_features().dim(),
        speech_rows: d.speech_features().rows(),
        text_rows: d.text_features().rows(),
        records: d.samples().to_vec(),
        metadata: d.metadata().cloned(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&header).expect("manifest serializes");
    json.push('\n');
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;

    write_blob(&dir.join(SPEECH_FILE), d.speech_features())?;
    write_blob(&dir.join(TEXT_FILE), d.text_features())?;

    let captions_path = dir.join(CAPTIONS_FILE);
    let mut buf = Vec::new();
    for (&index, text) in d.caption_texts() {
        let rec = CaptionRecord {
            index,
            text: text.clone(),
        };
        serde_json::to_writer(&mut buf, &rec).expect("caption serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(&captions_path).map_err(io_err(&captions_path))?;
    f.write_all(&buf).map_err(io_err(&captions_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{generate_synthetic, SynthConfig};

    fn small() -> Dataset {
        let cfg = SynthConfig {
            n_clusters: 3,
            clips_per_cluster: 4,
            speech_dim: 6,
            text_dim: 5,
            noise_sigma: 0.3,
            captions_per_clip: 2,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg, 7).unwrap()
    }

    #[test]
    fn round_trip_is_identity_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let d = small();
        write_manifest(&d, dir.path()).unwrap();
        let back = load_manifest(dir.path()).unwrap();
        assert_eq!(back, d);

        let dir2 = tempfile::tempdir().unwrap();
        write_manifest(&back, dir2.path()).unwrap();
        for f in [MANIFEST_FILE, SPEECH_FILE, TEXT_FILE, CAPTIONS_FILE] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap(),
                "{f} differs"
            );
        }
    }

    #[test]
    fn short_blob_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let d = small();
        write_manifest(&d, dir.path()).unwrap();
        // Declare dim = 64 while the blob rows hold 63 values each.
        let rows = 4;
        let bytes: Vec<u8> = (0..rows * 63).flat_map(|_| 1.0f32.to_le_bytes()).collect();
        fs::write(dir.path().join(SPEECH_FILE), bytes).unwrap();
        let mut header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap())
                .unwrap();
        header["speech_dim"] = 64.into();
        header["speech_rows"] = rows.into();
        fs::write(dir.path().join(MANIFEST_FILE), header.to_string()).unwrap();

        match load_manifest(dir.path()).unwrap_err() {
            StoreError::DimensionMismatch { row, dim, .. } => {
                assert_eq!(dim, 64);
                assert_eq!(row, 3);
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn dangling_fine_caption_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let d = small();
        write_manifest(&d, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let rows = header["text_rows"].as_u64().unwrap();
        header["records"][2]["fine_caption_rows"][0] = rows.into();
        fs::write(&path, header.to_string()).unwrap();
        let err = load_manifest(dir.path()).unwrap_err();
        assert!(
            matches!(&err, StoreError::DanglingIndex { field: "fine_caption_rows", .. }),
            "{err}"
        );
    }

    #[test]
    fn missing_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_manifest(dir.path()).unwrap_err(),
            StoreError::MissingFile(_)
        ));
        let d = small();
        write_manifest(&d, dir.path()).unwrap();
        fs::remove_file(dir.path().join(TEXT_FILE)).unwrap();
        assert!(matches!(
            load_manifest(dir.path()).unwrap_err(),
            StoreError::MissingFile(p) if p.ends_with(TEXT_FILE)
        ));

        write_manifest(&d, dir.path()).unwrap();
        let mut blob = fs::read(dir.path().join(SPEECH_FILE)).unwrap();
        blob[8..12].copy_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(dir.path().join(SPEECH_FILE), blob).unwrap();
        assert!(matches!(
            load_manifest(dir.path()).unwrap_err(),
            StoreError::NonFinite { row: 0, col: 2, .. }
        ));
    }

    #[test]
    fn duplicate_clip_id_in_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(&small(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let first = header["records"][0]["clip_id"].clone();
        header["records"][1]["clip_id"] = first;
        fs::write(&path, header.to_string()).unwrap();
        assert!(matches!(
            load_manifest(dir.path()).unwrap_err(),
            StoreError::DuplicateClipId(_)
        ));
    }
}
