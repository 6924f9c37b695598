//! On-disk dataset layout:
//!
//! ```text
//! <dir>/config.json       generator settings
//! <dir>/manifest.csv      file,identity,modality,camera,split
//! <dir>/images/NNNNNN.bin 3·H·W little-endian f64 values, channel-major
//! ```
//!
//! `modality` is 0 (colour) or 1 (infrared); `split` is one of
//! train, query, gallery, pool.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataConfig, Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::tensor::Tensor;

pub const MANIFEST_COLUMNS: [&str; 5] = ["file", "identity", "modality", "camera", "split"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    file: String,
    identity: usize,
    modality: u8,
    camera: u32,
    split: String,
}

pub fn export(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&ds.config)?)?;
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    let mut n = 0usize;
    for split in [Split::Train, Split::Query, Split::Gallery, Split::Pool] {
        for s in ds.split(split) {
            let file = format!("images/{n:06}.bin");
            let bytes: Vec<u8> = s.image.values().iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(&file), bytes)?;
            w.serialize(Row {
                file,
                identity: s.identity,
                modality: s.modality as u8,
                camera: s.camera,
                split: split.name().into(),
            })?;
            n += 1;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn import(dir: &Path) -> Result<Dataset> {
    let config: DataConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    config.validate()?;
    let shape = vec![3, config.height, config.width];
    let expected = 3 * config.height * config.width * 8;
    let mut ds = Dataset {
        config,
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
        pool: Vec::new(),
    };
    let mut r = csv::Reader::from_path(dir.join("manifest.csv"))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_COLUMNS {
        return Err(Error::Format(format!(
            "manifest columns {header:?}, expected {MANIFEST_COLUMNS:?}"
        )));
    }
    for row in r.deserialize() {
        let row: Row = row?;
        let bytes = fs::read(dir.join(&row.file))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{} holds {} bytes, expected {expected}",
                row.file,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let sample = Sample {
            image: Tensor::new(shape.clone(), values)?,
            identity: row.identity,
            modality: Modality::from_index(row.modality).map_err(|e| Error::Format(e.to_string()))?,
            camera: row.camera,
        };
        match Split::parse(&row.split)? {
            Split::Train => ds.train.push(sample),
            Split::Query => ds.query.push(sample),
            Split::Gallery => ds.gallery.push(sample),
            Split::Pool => ds.pool.push(sample),
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    #[test]
    fn round_trip() {
        let cfg = DataConfig {
            num_identities: 6,
            train_identities: 4,
            per_id_per_modality: 2,
            height: 16,
            width: 8,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export(&ds, dir.path()).unwrap();
        let back = import(dir.path()).unwrap();
        assert_eq!(back, ds);
        let rows = fs::read_to_string(dir.path().join("manifest.csv")).unwrap().lines().count();
        assert_eq!(rows, 1 + 6 * 2 * 2);
    }

    #[test]
    fn truncated_blob_rejected() {
        let cfg = DataConfig {
            num_identities: 4,
            train_identities: 2,
            per_id_per_modality: 2,
            height: 8,
            width: 4,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        export(&generate(&cfg).unwrap(), dir.path()).unwrap();
        fs::write(dir.path().join("images/000000.bin"), [0u8; 10]).unwrap();
        assert!(matches!(import(dir.path()), Err(Error::Format(_))));
    }
}
