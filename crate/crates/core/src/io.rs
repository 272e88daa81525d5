//! SemanticKITTI-style binary scans and labels.
//!
//! * Scan file: consecutive records of four little-endian `f32`
//!   (x, y, z, intensity), no header.
//! * Label file: consecutive little-endian `u32`; the lower 16 bits hold the
//!   semantic class, the upper 16 bits the instance id. Instance ids are
//!   discarded on read and written as zero.
//! * Provenance sidecar: one byte per point, 0 = source, 1 = target.
//!
//! All writers go through [`write_atomic`] (temp file + rename).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{LabelSet, PointCloud, UNKNOWN};
use crate::error::{Error, Result};

const SCAN_RECORD: u64 = 16;
const LABEL_RECORD: u64 = 4;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_records(path: &Path, record: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() as u64 % record != 0 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            record,
        });
    }
    Ok(bytes)
}

/// Decodes a scan from raw bytes.
pub fn decode_scan(bytes: &[u8]) -> Result<PointCloud> {
    let n = bytes.len() / SCAN_RECORD as usize;
    let mut positions = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (index, rec) in bytes.chunks_exact(SCAN_RECORD as usize).enumerate() {
        let v: [f32; 4] = std::array::from_fn(|k| {
            f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap())
        });
        if !v[..3].iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        positions.push([v[0] as f64, v[1] as f64, v[2] as f64]);
        intensity.push(v[3] as f64);
    }
    PointCloud::new(positions, Some(intensity))
}

/// Encodes a scan. Coordinates are narrowed to `f32`; a missing intensity
/// channel is written as zero.
pub fn encode_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * SCAN_RECORD as usize);
    for (j, p) in cloud.positions().iter().enumerate() {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.extend_from_slice(&(cloud.intensity_at(j) as f32).to_le_bytes());
    }
    out
}

pub fn load_scan(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    decode_scan(&read_records(path, SCAN_RECORD)?)
}

pub fn save_scan(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_atomic(path.as_ref(), &encode_scan(cloud))
}

/// Maps raw dataset class ids onto contiguous training ids.
///
/// Serialised as TOML:
///
/// ```toml
/// num_classes = 2
/// ignore = [0]
/// [map]
/// 40 = 0
/// 50 = 1
/// ```
///
/// Raw ids listed under `ignore` or absent from `map` load as `-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMap {
    pub num_classes: usize,
    #[serde(default)]
    pub ignore: Vec<u16>,
    #[serde(default)]
    pub map: BTreeMap<u16, usize>,
}

impl ClassMap {
    /// Raw id `c` maps to class `c` for `c < num_classes`.
    pub fn identity(num_classes: usize) -> Self {
        Self {
            num_classes,
            ignore: vec![],
            map: (0..num_classes).map(|c| (c as u16, c)).collect(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let map: ClassMap =
            toml::from_str(text).map_err(|e| Error::Config(format!("class map: {e}")))?;
        if let Some((raw, &c)) = map.map.iter().find(|(_, &c)| c >= map.num_classes) {
            return Err(Error::Config(format!(
                "class map entry {raw} -> {c} exceeds num_classes {}",
                map.num_classes
            )));
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_training(&self, raw: u16) -> i32 {
        if self.ignore.contains(&raw) {
            return UNKNOWN;
        }
        self.map.get(&raw).map_or(UNKNOWN, |&c| c as i32)
    }

    /// Raw id written for a training id: the smallest raw id mapping to it.
    /// Unknown points are written as the first ignore entry, or `0xFFFF`.
    pub fn to_raw(&self, class: i32) -> u16 {
        if class >= 0 {
            if let Some((&raw, _)) = self.map.iter().find(|(_, &c)| c as i32 == class) {
                return raw;
            }
        }
        self.ignore.first().copied().unwrap_or(u16::MAX)
    }
}

pub fn decode_labels(bytes: &[u8], map: &ClassMap) -> Result<LabelSet> {
    let labels = bytes
        .chunks_exact(LABEL_RECORD as usize)
        .map(|rec| {
            let raw = u32::from_le_bytes(rec.try_into().unwrap());
            map.to_training((raw & 0xffff) as u16)
        })
        .collect();
    LabelSet::new(labels, map.num_classes)
}

pub fn encode_labels(labels: &LabelSet, map: &ClassMap) -> Vec<u8> {
    labels
        .as_slice()
        .iter()
        .flat_map(|&l| (map.to_raw(l) as u32).to_le_bytes())
        .collect()
}

pub fn load_labels(path: impl AsRef<Path>, map: &ClassMap) -> Result<LabelSet> {
    let path = path.as_ref();
    decode_labels(&read_records(path, LABEL_RECORD)?, map)
}

/// Loads labels and checks they pair with a scan of `expected_len` points.
pub fn load_labels_for(
    path: impl AsRef<Path>,
    map: &ClassMap,
    expected_len: usize,
) -> Result<LabelSet> {
    let labels = load_labels(path, map)?;
    labels.check_len(expected_len)?;
    Ok(labels)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelSet, map: &ClassMap) -> Result<()> {
    write_atomic(path.as_ref(), &encode_labels(labels, map))
}

/// Writes the one-byte-per-point provenance sidecar.
pub fn save_provenance(path: impl AsRef<Path>, from_target: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = from_target.iter().map(|&t| t as u8).collect();
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_provenance(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::invalid(format!("provenance byte {other}"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_record_scan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 0.5]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fs::write(&p, &bytes).unwrap();
        let c = load_scan(&p).unwrap();
        assert_eq!(c.positions(), &[[1.0, 2.0, 3.0]]);
        assert_eq!(c.intensity(), Some(&[0.5][..]));
    }

    #[test]
    fn empty_scan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        fs::write(&p, []).unwrap();
        assert!(load_scan(&p).unwrap().is_empty());
    }

    #[test]
    fn scan_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_scan(dir.path().join("missing.bin")),
            Err(Error::Io { .. })
        ));
        let p = dir.path().join("t.bin");
        fs::write(&p, [0u8; 20]).unwrap();
        assert!(matches!(load_scan(&p), Err(Error::TruncatedFile { .. })));
        let bytes: Vec<u8> = [0.0f32, 0.0, 0.0, 0.0, 1.0, f32::INFINITY, 0.0, 0.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_scan(&p), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn scan_round_trip_is_byte_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dir = tempfile::tempdir().unwrap();
        for k in 0..100 {
            let n = rng.random_range(0..200);
            let bytes: Vec<u8> = (0..n * 4)
                .flat_map(|_| rng.random_range(-120.0f32..120.0).to_le_bytes())
                .collect();
            let p = dir.path().join(format!("{k}.bin"));
            fs::write(&p, &bytes).unwrap();
            let q = dir.path().join(format!("{k}.out.bin"));
            save_scan(&q, &load_scan(&p).unwrap()).unwrap();
            assert_eq!(fs::read(&q).unwrap(), bytes);
        }
    }

    #[test]
    fn label_lower_bits() {
        let map = ClassMap::identity(20);
        let l = decode_labels(&0x0001_0009u32.to_le_bytes(), &map).unwrap();
        assert_eq!(l.as_slice(), &[9]);
        let l = decode_labels(&0x0000_0031u32.to_le_bytes(), &map).unwrap();
        assert_eq!(l.as_slice(), &[UNKNOWN]);
    }

    #[test]
    fn label_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.label");
        fs::write(&p, [0u8; 6]).unwrap();
        let map = ClassMap::identity(3);
        assert!(matches!(load_labels(&p, &map), Err(Error::TruncatedFile { .. })));
        fs::write(&p, [0u8; 8]).unwrap();
        assert!(matches!(
            load_labels_for(&p, &map, 3),
            Err(Error::LengthMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn label_round_trip_keeps_lower_bits() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let map = ClassMap::identity(19);
        for _ in 0..100 {
            let n = rng.random_range(0..100);
            let raw: Vec<u32> = (0..n)
                .map(|_| (rng.random::<u32>() & 0xffff_0000) | rng.random_range(0..19))
                .collect();
            let bytes: Vec<u8> = raw.iter().flat_map(|r| r.to_le_bytes()).collect();
            let back = encode_labels(&decode_labels(&bytes, &map).unwrap(), &map);
            let back: Vec<u32> = back
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let expect: Vec<u32> = raw.iter().map(|r| r & 0xffff).collect();
            assert_eq!(back, expect);
        }
    }

    #[test]
    fn class_map_text() {
        let map = ClassMap::from_toml("num_classes = 2\nignore = [0]\n[map]\n40 = 0\n50 = 1\n").unwrap();
        assert_eq!(map.to_training(40), 0);
        assert_eq!(map.to_training(50), 1);
        assert_eq!(map.to_training(0), UNKNOWN);
        assert_eq!(map.to_training(99), UNKNOWN);
        assert_eq!(map.to_raw(UNKNOWN), 0);
        assert_eq!(map.to_raw(1), 50);
        assert!(ClassMap::from_toml("num_classes = 1\n[map]\n3 = 4\n").is_err());
        assert!(ClassMap::from_toml("num_classes = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn unknown_round_trips_through_identity() {
        let map = ClassMap::identity(4);
        let l = LabelSet::new(vec![0, UNKNOWN, 3], 4).unwrap();
        assert_eq!(decode_labels(&encode_labels(&l, &map), &map).unwrap(), l);
    }

    #[test]
    fn provenance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.prov");
        save_provenance(&p, &[true, false, true]).unwrap();
        assert_eq!(load_provenance(&p).unwrap(), vec![true, false, true]);
    }
}
