//! Dataset manifests: one JSON record per line.
//!
//! Unknown fields round-trip unchanged so external tooling can annotate
//! entries without this crate discarding the annotations.

use super::{DataError, SBS_INTRO_SKIP};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    SideBySide,
    Separate,
}

/// One source video and the frame span to extract from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub source_path: String,
    pub width: usize,
    pub height: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub layout: Layout,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl ManifestEntry {
    /// Check the entry invariants: a non-empty span, and the 600-frame intro
    /// skip for side-by-side web sources.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.end_frame <= self.start_frame {
            return Err(DataError::BadEntry {
                id: self.video_id.clone(),
                reason: format!(
                    "end_frame {} must exceed start_frame {}",
                    self.end_frame, self.start_frame
                ),
            });
        }
        if self.layout == Layout::SideBySide && self.start_frame < SBS_INTRO_SKIP {
            return Err(DataError::BadEntry {
                id: self.video_id.clone(),
                reason: format!(
                    "side-by-side sources must skip the first {} frames (start_frame = {})",
                    SBS_INTRO_SKIP, self.start_frame
                ),
            });
        }
        Ok(())
    }
}

/// Read a manifest file (one JSON object per non-empty line).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            DataError::Parse(format!("{}:{}: {}", path.display(), lineno + 1, e))
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Write a manifest file, one JSON object per line.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| DataError::Parse(format!("serialize {}: {}", entry.video_id, e)))?;
        writeln!(file, "{}", line).map_err(|e| DataError::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry() -> ManifestEntry {
        ManifestEntry {
            video_id: "vid01".into(),
            source_path: "raw/vid01".into(),
            width: 3840,
            height: 1080,
            start_frame: 600,
            end_frame: 700,
            layout: Layout::SideBySide,
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn rejects_intro_skip_violation() {
        let mut e = entry();
        e.start_frame = 0;
        e.end_frame = 100;
        assert!(e.validate().is_err());
    }

    #[test]
    fn separate_layout_allows_early_start() {
        let mut e = entry();
        e.layout = Layout::Separate;
        e.start_frame = 0;
        e.end_frame = 10;
        assert!(e.validate().is_ok());
    }

    #[test]
    fn rejects_empty_span() {
        let mut e = entry();
        e.end_frame = e.start_frame;
        assert!(e.validate().is_err());
    }

    #[test]
    fn roundtrip_preserves_unknown_fields() {
        let dir = std::env::temp_dir().join(format!("manifest_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.jsonl");
        let mut e = entry();
        e.extra
            .insert("curator_note".into(), serde_json::json!("checked 2x"));
        write_manifest(&path, &[e]).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(
            back[0].extra.get("curator_note").unwrap(),
            &serde_json::json!("checked 2x")
        );
        std::fs::remove_dir_all(&dir).ok();
    }
}
