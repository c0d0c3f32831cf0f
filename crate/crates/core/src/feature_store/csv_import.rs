use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mapping from the original label text to the contiguous id stored in TCFB.
///
/// Serialises as a flat JSON object `{"original": id, ...}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(pub BTreeMap<String, u32>);

impl LabelMap {
    /// Ids follow numeric order when every label parses as an integer,
    /// lexicographic order otherwise.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> LabelMap {
        let distinct: BTreeSet<&str> = labels.into_iter().collect();
        let mut ordered: Vec<&str> = distinct.into_iter().collect();
        if ordered.iter().all(|l| l.parse::<i64>().is_ok()) {
            ordered.sort_by_key(|l| l.parse::<i64>().unwrap());
        }
        LabelMap(ordered.into_iter().enumerate().map(|(i, l)| (l.to_string(), i as u32)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.0.get(label).copied()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Reads a CSV whose header is `f0,...,f{D-1},label`.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(FeatureDataset, LabelMap)> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let d = headers.len().saturating_sub(1);
    let expected: Vec<String> = (0..d).map(|j| format!("f{j}")).chain(["label".into()]).collect();
    if d == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Format(format!(
            "CSV header must be f0,...,f{{D-1}},label; found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        if record.len() != d + 1 {
            return Err(Error::Corrupt(format!("record {line} has {} fields", record.len())));
        }
        for (j, field) in record.iter().take(d).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::validation(format!("record {line}, column f{j}: not a number: {field:?}")))?;
            values.push(v);
        }
        raw_labels.push(record[d].trim().to_string());
    }

    let map = LabelMap::from_labels(raw_labels.iter().map(String::as_str));
    let labels = raw_labels.iter().map(|l| map.id(l).unwrap()).collect::<Vec<_>>();
    let features = Matrix::from_vec(labels.len(), d, values)?;
    Ok((FeatureDataset::new(features, labels, map.len())?, map))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}
