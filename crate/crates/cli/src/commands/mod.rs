pub mod ablate;
pub mod diagnose;
pub mod evaluate;
pub mod generate;
pub mod train;

use std::path::Path;

use scatterfield::data::{read_dataset, read_manifest, Dataset, DatasetManifest};

use crate::CliResult;

/// Load a generated dataset directory: manifest plus one split.
pub fn load_split(dir: &Path, split: &str) -> CliResult<(DatasetManifest, Dataset)> {
    let manifest = read_manifest(&dir.join("manifest.json"))?;
    let mut path = dir.join(format!("{split}.jsonl"));
    if !path.exists() {
        let gz = dir.join(format!("{split}.jsonl.gz"));
        if gz.exists() {
            path = gz;
        }
    }
    let mut ds = read_dataset(&path, manifest.dims)?;
    ds.normalization = manifest.normalization.clone();
    Ok((manifest, ds))
}
