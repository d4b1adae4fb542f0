//! On-disk dataset: a JSON manifest plus little-endian `f32` blobs per subject.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<subject>/radio.bin    frames x n_subcarriers x (re, im)
//! <root>/<subject>/ppg.bin      samples
//! <root>/<subject>/vitals.bin   records x (timestamp, hr, spo2, rr)
//! ```
//!
//! The manifest is the single source of shape truth; every blob length is
//! checked against it on load, as is the SHA-256 digest when one is present.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ofdm::{CfrFrame, ComplexVec};
use crate::physio::{PpgRecording, RadioRecording, VitalsRecord};
use crate::Complex64;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioEntry {
    pub file: String,
    pub frames: usize,
    pub n_subcarriers: usize,
    pub rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgEntry {
    pub file: String,
    pub samples: usize,
    pub rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsEntry {
    pub file: String,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

/// Ground truth kept for simulated subjects only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    /// Radio acquisition lag relative to the PPG, seconds.
    pub lag_s: f64,
    pub hr: f64,
    pub rr: f64,
    pub spo2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub radio: RadioEntry,
    pub ppg: PpgEntry,
    pub vitals: VitalsEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecording {
    pub subject_id: String,
    pub radio: RadioRecording,
    pub ppg: PpgRecording,
    pub vitals: Vec<VitalsRecord>,
    pub simulation: Option<SimulationMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub subjects: Vec<SubjectRecording>,
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn read_f32s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

fn encode_radio(radio: &RadioRecording) -> Vec<u8> {
    f32_bytes(
        radio
            .frames
            .iter()
            .flat_map(|f| f.h.iter().flat_map(|c| [c.re, c.im])),
    )
}

fn encode_vitals(vitals: &[VitalsRecord]) -> Vec<u8> {
    f32_bytes(
        vitals
            .iter()
            .flat_map(|v| [v.timestamp, v.hr, v.spo2, v.rr]),
    )
}

/// Writes all subjects plus the manifest. Blob digests are recorded.
pub fn write_dataset(root: &Path, subjects: &[SubjectRecording]) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(subjects.len());
    for s in subjects {
        let dir = root.join(&s.subject_id);
        let radio = encode_radio(&s.radio);
        let ppg = f32_bytes(s.ppg.samples.iter().copied());
        let vitals = encode_vitals(&s.vitals);
        let rel = |name: &str| format!("{}/{name}", s.subject_id);
        write_atomic(&dir.join("radio.bin"), &radio)?;
        write_atomic(&dir.join("ppg.bin"), &ppg)?;
        write_atomic(&dir.join("vitals.bin"), &vitals)?;
        entries.push(SubjectEntry {
            subject_id: s.subject_id.clone(),
            radio: RadioEntry {
                file: rel("radio.bin"),
                frames: s.radio.frames.len(),
                n_subcarriers: s.radio.n_subcarriers(),
                rate_hz: s.radio.rate,
                sha256: Some(sha256_hex(&radio)),
            },
            ppg: PpgEntry {
                file: rel("ppg.bin"),
                samples: s.ppg.samples.len(),
                rate_hz: s.ppg.rate,
                sha256: Some(sha256_hex(&ppg)),
            },
            vitals: VitalsEntry {
                file: rel("vitals.bin"),
                records: s.vitals.len(),
                sha256: Some(sha256_hex(&vitals)),
            },
            simulation: s.simulation,
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        subjects: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&root.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

fn read_blob(
    root: &Path,
    file: &str,
    expected_bytes: usize,
    sha: Option<&str>,
) -> Result<Vec<u8>> {
    let path: PathBuf = root.join(file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expected_bytes {
        return Err(Error::Integrity {
            path,
            detail: format!(
                "expected {expected_bytes} bytes, found {}",
                bytes.len()
            ),
        });
    }
    if let Some(want) = sha {
        let got = sha256_hex(&bytes);
        if !got.eq_ignore_ascii_case(want) {
            return Err(Error::Integrity {
                path,
                detail: format!("sha256 mismatch: manifest {want}, file {got}"),
            });
        }
    }
    Ok(bytes)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let raw: serde_json::Value = serde_json::from_slice(&text)?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Integrity {
            path: path.clone(),
            detail: "missing format_version".into(),
        })?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: version.min(u32::MAX as u64) as u32,
            supported: FORMAT_VERSION,
        });
    }
    Ok(serde_json::from_value(raw)?)
}

/// Loads and validates every subject listed in the manifest.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for e in &manifest.subjects {
        let r = &e.radio;
        if r.n_subcarriers == 0 || !(r.rate_hz > 0.0) || !(e.ppg.rate_hz > 0.0) {
            return Err(Error::Integrity {
                path: root.join(MANIFEST_FILE),
                detail: format!("{}: non-positive shape or rate", e.subject_id),
            });
        }
        let radio_bytes = read_blob(
            root,
            &r.file,
            r.frames * r.n_subcarriers * 8,
            r.sha256.as_deref(),
        )?;
        let values = read_f32s(&radio_bytes);
        let frames = values
            .chunks_exact(r.n_subcarriers * 2)
            .enumerate()
            .map(|(i, chunk)| {
                let h = chunk
                    .chunks_exact(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect();
                let h = ComplexVec::new(h).map_err(|_| Error::Integrity {
                    path: root.join(&r.file),
                    detail: format!("non-finite value in frame {i}"),
                })?;
                Ok(CfrFrame::new(h, i, r.rate_hz))
            })
            .collect::<Result<Vec<_>>>()?;
        let ppg_bytes = read_blob(root, &e.ppg.file, e.ppg.samples * 4, e.ppg.sha256.as_deref())?;
        let ppg = PpgRecording::new(read_f32s(&ppg_bytes), e.ppg.rate_hz).map_err(|_| {
            Error::Integrity {
                path: root.join(&e.ppg.file),
                detail: "non-finite PPG sample".into(),
            }
        })?;
        let vit_bytes = read_blob(
            root,
            &e.vitals.file,
            e.vitals.records * 16,
            e.vitals.sha256.as_deref(),
        )?;
        let vitals = read_f32s(&vit_bytes)
            .chunks_exact(4)
            .map(|c| VitalsRecord {
                timestamp: c[0],
                hr: c[1],
                spo2: c[2],
                rr: c[3],
            })
            .collect();
        subjects.push(SubjectRecording {
            subject_id: e.subject_id.clone(),
            radio: RadioRecording {
                frames,
                rate: r.rate_hz,
                subject_id: e.subject_id.clone(),
            },
            ppg,
            vitals,
            simulation: e.simulation,
        });
    }
    Ok(Dataset { manifest, subjects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_subject(id: &str) -> SubjectRecording {
        let frames = (0..5)
            .map(|i| {
                let h = (0..4)
                    .map(|k| Complex64::new(i as f64 * 0.5, k as f64 - 1.25))
                    .collect();
                CfrFrame::new(ComplexVec::new(h).unwrap(), i, 250.0)
            })
            .collect();
        SubjectRecording {
            subject_id: id.into(),
            radio: RadioRecording {
                frames,
                rate: 250.0,
                subject_id: id.into(),
            },
            ppg: PpgRecording::new(vec![0.25, -1.5, 3.0], 200.0).unwrap(),
            vitals: vec![VitalsRecord {
                hr: 61.5,
                spo2: 97.25,
                rr: 15.0,
                timestamp: 0.0,
            }],
            simulation: None,
        }
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let subjects = vec![tiny_subject("A"), tiny_subject("B")];
        write_dataset(dir.path(), &subjects).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.subjects, subjects);
    }

    #[test]
    fn truncated_blob_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[tiny_subject("A")]).unwrap();
        let p = dir.path().join("A/radio.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Integrity { path, detail }) => {
                assert!(path.ends_with("A/radio.bin"));
                assert!(detail.contains("expected 160 bytes, found 156"), "{detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupted_blob_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[tiny_subject("A")]).unwrap();
        let p = dir.path().join("A/ppg.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] ^= 1;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[tiny_subject("A")]).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::UnsupportedVersion { found: 7, supported: 1 })
        ));
    }
}
