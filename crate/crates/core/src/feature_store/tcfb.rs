//! TCFB binary feature files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size      field
//! 0       4         magic "TCFB"
//! 4       4         version u32 (= 1)
//! 8       8         N u64
//! 16      4         D u32
//! 20      4         K u32
//! 24      4*N*D     features, f32, row-major
//! ..      4*N       labels, u32
//! ..      4 + N     optional trailer: "SYNF" then one byte per row (1 = synthetic)
//! ```
//!
//! The trailer is only written when at least one row is synthetic. Any other
//! trailing bytes are treated as corruption.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const TCFB_MAGIC: &[u8; 4] = b"TCFB";
pub const TCFB_VERSION: u32 = 1;
pub const TCFB_HEADER_LEN: usize = 24;
const SYNTHETIC_TRAILER: &[u8; 4] = b"SYNF";

/// Writes `dataset` as TCFB. Features are narrowed to `f32`.
pub fn write_feature_file(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    encode(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn encode(dataset: &FeatureDataset, w: &mut impl Write) -> Result<()> {
    let dim = u32::try_from(dataset.dim()).map_err(|_| Error::validation("feature dimension exceeds u32"))?;
    let k = u32::try_from(dataset.num_classes()).map_err(|_| Error::validation("class count exceeds u32"))?;
    w.write_all(TCFB_MAGIC)?;
    w.write_all(&TCFB_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&k.to_le_bytes())?;
    for &v in dataset.features().as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    for &l in dataset.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    if dataset.synthetic().iter().any(|&s| s) {
        w.write_all(SYNTHETIC_TRAILER)?;
        let flags: Vec<u8> = dataset.synthetic().iter().map(|&s| s as u8).collect();
        w.write_all(&flags)?;
    }
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let bytes = std::fs::read(path.as_ref())?;
    decode(&bytes)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub(crate) fn decode(bytes: &[u8]) -> Result<FeatureDataset> {
    if bytes.len() < 4 || &bytes[..4] != TCFB_MAGIC {
        return Err(Error::Format("missing TCFB magic".into()));
    }
    if bytes.len() < TCFB_HEADER_LEN {
        return Err(Error::Corrupt(format!("header truncated at {} bytes", bytes.len())));
    }
    let version = u32_at(bytes, 4);
    if version != TCFB_VERSION {
        return Err(Error::Format(format!("unsupported TCFB version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u32_at(bytes, 16) as usize;
    let k = u32_at(bytes, 20) as usize;

    let n = usize::try_from(n).map_err(|_| Error::Corrupt(format!("row count {n} too large")))?;
    let feat_len = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Corrupt(format!("N={n}, D={d} overflows")))?;
    let label_len = n * 4;
    let body = TCFB_HEADER_LEN + feat_len + label_len;
    if bytes.len() < body {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, header N={n} D={d} needs {}",
            bytes.len() - TCFB_HEADER_LEN,
            feat_len + label_len
        )));
    }

    let features: Vec<f64> = bytes[TCFB_HEADER_LEN..TCFB_HEADER_LEN + feat_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let labels: Vec<u32> = bytes[TCFB_HEADER_LEN + feat_len..body]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let rest = &bytes[body..];
    let synthetic = if rest.is_empty() {
        vec![false; n]
    } else if rest.len() == 4 + n && &rest[..4] == SYNTHETIC_TRAILER {
        rest[4..]
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Corrupt(format!("synthetic flag byte {other}"))),
            })
            .collect::<Result<_>>()?
    } else {
        return Err(Error::Corrupt(format!("{} unexpected trailing bytes", rest.len())));
    };

    let features = Matrix::from_vec(n, d, features)?;
    FeatureDataset::with_synthetic(features, labels, k, synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes_of(ds: &FeatureDataset) -> Vec<u8> {
        let mut out = Vec::new();
        encode(ds, &mut out).unwrap();
        out
    }

    #[test]
    fn single_value_file_size() {
        let ds = FeatureDataset::new(Matrix::from_rows(&[[1.5]]).unwrap(), vec![0], 1).unwrap();
        let b = bytes_of(&ds);
        assert_eq!(b.len(), TCFB_HEADER_LEN + 4 + 4);
        assert_eq!(&b[..4], b"TCFB");
        assert_eq!(&b[24..28], &1.5f32.to_le_bytes());
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = FeatureDataset::empty(7, 3);
        let b = bytes_of(&ds);
        assert_eq!(b.len(), TCFB_HEADER_LEN);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 0);
        assert_eq!(decode(&b).unwrap(), ds);
    }

    #[test]
    fn label_out_of_range() {
        let ds = FeatureDataset::new(Matrix::from_rows(&[[1.0]]).unwrap(), vec![1], 2).unwrap();
        let mut b = bytes_of(&ds);
        b[28..32].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode(&b), Err(Error::Validation(_))));
    }

    #[test]
    fn truncated_payload() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let ds = FeatureDataset::new(x, vec![0, 0, 0], 1).unwrap();
        let b = bytes_of(&ds);
        // keep two feature rows only
        assert!(matches!(decode(&b[..TCFB_HEADER_LEN + 8]), Err(Error::Corrupt(_))));
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::Corrupt(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(decode(b"NOPE0000"), Err(Error::Format(_))));
        let mut b = bytes_of(&FeatureDataset::empty(1, 1));
        b[4] = 2;
        assert!(matches!(decode(&b), Err(Error::Format(_))));
    }

    #[test]
    fn synthetic_trailer_round_trip() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let ds = FeatureDataset::with_synthetic(x, vec![0, 0], 1, vec![false, true]).unwrap();
        let b = bytes_of(&ds);
        assert_eq!(b.len(), TCFB_HEADER_LEN + 8 + 8 + 4 + 2);
        assert_eq!(decode(&b).unwrap(), ds);
    }

    fn dataset_strategy() -> impl Strategy<Value = FeatureDataset> {
        (0usize..20, 1usize..6, 1usize..5).prop_flat_map(|(n, d, k)| {
            (
                prop::collection::vec(-1e6f32..1e6f32, n * d),
                prop::collection::vec(0..k as u32, n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(x, l, s)| {
                    let x = Matrix::from_vec(n, d, x.into_iter().map(f64::from).collect()).unwrap();
                    FeatureDataset::with_synthetic(x, l, k, s).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(ds in dataset_strategy()) {
            let back = decode(&bytes_of(&ds)).unwrap();
            prop_assert_eq!(back.labels(), ds.labels());
            prop_assert_eq!(back.synthetic(), ds.synthetic());
            prop_assert_eq!(back.num_classes(), ds.num_classes());
            let a: Vec<u64> = back.features().as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = ds.features().as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
