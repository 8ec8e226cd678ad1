//! CSV ingestion: one spectrum per row, header required.
//!
//! Every column is a reflectance band, except a final column whose header
//! is `target` or `soc` (case-insensitive), which becomes the label.

use std::path::Path;

use crate::data::{Dataset, Spectrum};
use crate::error::{Error, Result};

fn is_target_header(h: &str) -> bool {
    matches!(h.trim().to_ascii_lowercase().as_str(), "target" | "soc")
}

pub fn read_csv_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file)
}

pub fn read_csv_from<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Malformed("csv header row is empty".into()));
    }
    let has_target = headers.iter().last().is_some_and(is_target_header);
    let bands = headers.len() - usize::from(has_target);

    let mut patches = Vec::new();
    let mut targets = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f32>().map_err(|_| {
                    Error::Malformed(format!("row {}: cannot parse {f:?} as a number", line + 2))
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        if values.len() != headers.len() {
            return Err(Error::Malformed(format!(
                "row {}: {} fields, header has {}",
                line + 2,
                values.len(),
                headers.len()
            )));
        }
        if has_target {
            targets.push(values[bands]);
        }
        patches.push(Spectrum::new(values[..bands].to_vec())?.into_patch());
    }
    Dataset::new(patches, has_target.then_some(targets))
}
