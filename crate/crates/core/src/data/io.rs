//! Dataset serialization: JSON lines, one pair per line, with an adjacent
//! manifest. Values round-trip losslessly (shortest-roundtrip float
//! printing). Files ending in `.gz` are transparently (de)compressed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;

use crate::data::{ContextTargetPair, Dataset, DatasetManifest, Dims};
use crate::error::{Error, Result};

fn open_writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufWriter::new(GzEncoder::new(
            file,
            flate2::Compression::default(),
        ))))
    } else {
        Ok(Box::new(BufWriter::new(file)))
    }
}

fn open_reader(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

/// Write one pair per line with keys x_c, y_c, x_t, y_t.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = open_writer(path)?;
    for pair in &dataset.pairs {
        serde_json::to_writer(&mut w, pair).map_err(Error::from_json_write)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a JSONL dataset, validating dimensions against `dims`.
pub fn read_dataset(path: &Path, dims: Dims) -> Result<Dataset> {
    let reader = BufReader::new(open_reader(path)?);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedLine {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ContextTargetPair =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        pair.validate(dims, pairs.len())?;
        pairs.push(pair);
    }
    Ok(Dataset::new(dims, pairs))
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let text = serde_json::to_string_pretty(manifest).map_err(Error::from_json_write)?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
        path: path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })
}

impl Error {
    fn from_json_write(e: serde_json::Error) -> Error {
        Error::Io(std::io::Error::other(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_random_retrieval;

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = std::env::temp_dir().join(format!("sfio-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ds = gen_random_retrieval(5, 8, 77);
        let path = dir.join("data.jsonl");
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path, ds.dims).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.pairs.iter().zip(&back.pairs) {
            for (ra, rb) in a.y_c.iter().zip(&b.y_c) {
                for (va, vb) in ra.iter().zip(rb) {
                    assert_eq!(va.to_bits(), vb.to_bits());
                }
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn gzip_roundtrip() {
        let dir = std::env::temp_dir().join(format!("sfio-gz-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ds = gen_random_retrieval(3, 4, 1);
        let path = dir.join("data.jsonl.gz");
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path, ds.dims).unwrap();
        assert_eq!(back.len(), 3);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let dir = std::env::temp_dir().join(format!("sfio-tr-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ds = gen_random_retrieval(2, 4, 1);
        let path = dir.join("data.jsonl");
        write_dataset(&path, &ds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated = &text[..text.len() - 20];
        std::fs::write(&path, truncated).unwrap();
        match read_dataset(&path, ds.dims) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn foreign_dims_load_and_validate() {
        // wind-shaped fixture: X=3, I=2, O=2
        let dir = std::env::temp_dir().join(format!("sfio-w-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let dims = Dims { x: 3, i: 2, o: 2 };
        let pair = ContextTargetPair {
            x_c: vec![vec![0.0, 1.0, 2.0], vec![0.5, 0.5, 0.5]],
            y_c: vec![vec![1.0, -1.0], vec![2.0, 0.0]],
            x_t: vec![vec![1.0, 1.0, 1.0]],
            y_t: vec![vec![0.5, 0.5]],
        };
        let ds = Dataset::new(dims, vec![pair]);
        let path = dir.join("wind.jsonl");
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path, dims).unwrap();
        assert_eq!(back.pairs[0].x_c[0].len(), 3);
        // mismatched dims are rejected with the pair index
        assert!(matches!(
            read_dataset(&path, Dims { x: 2, i: 2, o: 2 }),
            Err(Error::PairDim { index: 0, .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
