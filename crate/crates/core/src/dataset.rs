//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` and, for each sample `i`,
//! `sig_{i:05}.f32` (time-major `m × n`) and `img_{i:05}.f32` (row-major
//! `N × N`). Arrays are raw little-endian binary32 with no header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ArrayGeometry, ImageGrid, RawSignalMatrix};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_samples: usize,
    pub geometry: ArrayGeometry,
    /// `(m, n)`: time samples × sensors.
    pub signal_shape: (usize, usize),
    pub image_shape: (usize, usize),
    pub seed: u64,
    pub split: Split,
}

impl DatasetManifest {
    pub fn new(
        geometry: ArrayGeometry,
        m: usize,
        n_samples: usize,
        seed: u64,
        split: Split,
    ) -> Self {
        let n_grid = geometry.n_grid;
        let n = geometry.n_elements;
        Self {
            version: FORMAT_VERSION,
            n_samples,
            geometry,
            signal_shape: (m, n),
            image_shape: (n_grid, n_grid),
            seed,
            split,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported dataset version {}",
                self.version
            )));
        }
        let (m, n) = self.signal_shape;
        if m == 0 || n != self.geometry.n_elements {
            return Err(Error::Validation(format!(
                "signal_shape {:?} inconsistent with {} elements",
                self.signal_shape, self.geometry.n_elements
            )));
        }
        let g = self.geometry.n_grid;
        if self.image_shape != (g, g) {
            return Err(Error::Validation(format!(
                "image_shape {:?} inconsistent with n_grid {g}",
                self.image_shape
            )));
        }
        Ok(())
    }
}

pub fn sample_file(prefix: &str, index: usize) -> String {
    format!("{prefix}_{index:05}.f32")
}

pub fn write_f32_file(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a raw binary32 file, requiring exactly `expected_len` values.
pub fn read_f32_file(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = expected_len * 4;
    if bytes.len() != expected {
        let detail = if bytes.len() < expected {
            format!("deficit of {} bytes", expected - bytes.len())
        } else {
            format!("{} surplus bytes", bytes.len() - expected)
        };
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes, found {} ({detail})",
                bytes.len()
            ),
        ));
    }
    Ok(decode_f32(&bytes))
}

/// Reads a raw binary32 file of any length that is a multiple of 4.
pub fn read_f32_file_any(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(decode_f32(&bytes))
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    samples: &[(RawSignalMatrix, ImageGrid)],
) -> Result<()> {
    manifest.validate()?;
    if samples.len() != manifest.n_samples {
        return Err(Error::Validation(format!(
            "manifest declares {} samples but {} were given",
            manifest.n_samples,
            samples.len()
        )));
    }
    let (m, n) = manifest.signal_shape;
    let (h, w) = manifest.image_shape;
    for (i, (sig, img)) in samples.iter().enumerate() {
        if sig.m != m || sig.n != n {
            return Err(Error::Validation(format!(
                "sample {i}: signal is {}x{}, manifest expects {m}x{n}",
                sig.m, sig.n
            )));
        }
        if img.n != h || img.n != w {
            return Err(Error::Validation(format!(
                "sample {i}: image is {0}x{0}, manifest expects {h}x{w}",
                img.n
            )));
        }
    }
    let writer = DatasetWriter::create(dir, manifest)?;
    for (i, (sig, img)) in samples.iter().enumerate() {
        writer.write_sample(i, sig, img)?;
    }
    Ok(())
}

/// Incremental writer for datasets too large to hold in memory.
#[derive(Debug)]
pub struct DatasetWriter {
    dir: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetWriter {
    pub fn create(dir: &Path, manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        ensure_dir(dir)?;
        write_json(&dir.join(MANIFEST_FILE), manifest)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: manifest.clone(),
        })
    }

    pub fn write_sample(&self, i: usize, sig: &RawSignalMatrix, img: &ImageGrid) -> Result<()> {
        let (m, n) = self.manifest.signal_shape;
        if i >= self.manifest.n_samples {
            return Err(Error::Validation(format!(
                "sample {i}: index beyond declared n_samples {}",
                self.manifest.n_samples
            )));
        }
        if sig.m != m || sig.n != n {
            return Err(Error::Validation(format!(
                "sample {i}: signal is {}x{}, manifest expects {m}x{n}",
                sig.m, sig.n
            )));
        }
        if img.n != self.manifest.image_shape.0 {
            return Err(Error::Validation(format!(
                "sample {i}: image is {0}x{0}, manifest expects {1}x{1}",
                img.n, self.manifest.image_shape.0
            )));
        }
        write_f32_file(&self.dir.join(sample_file("sig", i)), &sig.data)?;
        write_f32_file(&self.dir.join(sample_file("img", i)), &img.data)
    }

    /// Writes an auxiliary per-sample image `{prefix}_{i:05}.f32`.
    pub fn write_extra(&self, prefix: &str, i: usize, img: &ImageGrid) -> Result<()> {
        write_f32_file(&self.dir.join(sample_file(prefix, i)), &img.data)
    }
}

/// Opened dataset; samples are loaded on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("bad manifest: {e}")))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut present = 0usize;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("sig_") && name.ends_with(".f32") {
            present += 1;
        }
    }
    for i in 0..manifest.n_samples {
        for prefix in ["sig", "img"] {
            let p = dir.join(sample_file(prefix, i));
            if !p.is_file() {
                return Err(Error::Validation(format!(
                    "manifest declares {} samples but {} is missing",
                    manifest.n_samples,
                    p.display()
                )));
            }
        }
    }
    if present != manifest.n_samples {
        return Err(Error::Validation(format!(
            "manifest declares {} samples but {present} signal files are present",
            manifest.n_samples
        )));
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.n_samples == 0
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.manifest.geometry
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Validation(format!(
                "sample index {i} out of range (n_samples = {})",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn signal(&self, i: usize) -> Result<RawSignalMatrix> {
        self.check_index(i)?;
        let (m, n) = self.manifest.signal_shape;
        let path = self.dir.join(sample_file("sig", i));
        let data = read_f32_file(&path, m * n)?;
        RawSignalMatrix::from_vec(m, n, self.manifest.geometry.fs_hz, data)
            .map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn image(&self, i: usize) -> Result<ImageGrid> {
        self.check_index(i)?;
        self.image_file("img", i)
    }

    /// An auxiliary per-sample image stored as `{prefix}_{i:05}.f32`.
    pub fn image_file(&self, prefix: &str, i: usize) -> Result<ImageGrid> {
        let (h, _) = self.manifest.image_shape;
        let path = self.dir.join(sample_file(prefix, i));
        let data = read_f32_file(&path, h * h)?;
        ImageGrid::from_vec(h, self.manifest.geometry.fov_m, data)
    }

    pub fn sample(&self, i: usize) -> Result<(RawSignalMatrix, ImageGrid)> {
        Ok((self.signal(i)?, self.image(i)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(n_elements: usize, n_grid: usize) -> ArrayGeometry {
        ArrayGeometry::new(n_elements, 0.018, 0.0127, n_grid, 1500.0, 40e6, 5e6, 0.8).unwrap()
    }

    #[test]
    fn empty_dataset_has_only_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let man = DatasetManifest::new(geometry(32, 128), 2560, 0, 1, Split::Train);
        write_dataset(dir.path(), &man, &[]).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names, vec![MANIFEST_FILE.to_string()]);
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn file_sizes_follow_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let g = geometry(32, 128);
        let man = DatasetManifest::new(g.clone(), 2560, 2, 1, Split::Train);
        let sample = (
            RawSignalMatrix::zeros(2560, 32, g.fs_hz),
            ImageGrid::zeros(128, g.fov_m),
        );
        write_dataset(dir.path(), &man, &[sample.clone(), sample]).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 5);
        let len = |name: &str| fs::metadata(dir.path().join(name)).unwrap().len();
        assert_eq!(len("sig_00000.f32"), 327_680);
        assert_eq!(len("sig_00001.f32"), 327_680);
        assert_eq!(len("img_00001.f32"), 65_536);
    }

    #[test]
    fn shape_mismatch_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let g = geometry(4, 8);
        let man = DatasetManifest::new(g.clone(), 16, 2, 1, Split::Test);
        let good = (
            RawSignalMatrix::zeros(16, 4, g.fs_hz),
            ImageGrid::zeros(8, g.fov_m),
        );
        let bad = (
            RawSignalMatrix::zeros(15, 4, g.fs_hz),
            ImageGrid::zeros(8, g.fov_m),
        );
        let err = write_dataset(dir.path(), &man, &[good, bad]).unwrap_err();
        assert!(err.to_string().contains("sample 1"), "{err}");
    }

    #[test]
    fn truncated_signal_reports_deficit() {
        let dir = tempfile::tempdir().unwrap();
        let g = geometry(4, 8);
        let man = DatasetManifest::new(g.clone(), 16, 1, 1, Split::Test);
        let s = (
            RawSignalMatrix::zeros(16, 4, g.fs_hz),
            ImageGrid::zeros(8, g.fov_m),
        );
        write_dataset(dir.path(), &man, &[s]).unwrap();
        let p = dir.path().join("sig_00000.f32");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 12]).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        let err = ds.signal(0).unwrap_err().to_string();
        assert!(err.contains("expected 256 bytes, found 244"), "{err}");
        assert!(err.contains("deficit of 12 bytes"), "{err}");
    }

    #[test]
    fn missing_pair_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let g = geometry(4, 8);
        let s = (
            RawSignalMatrix::zeros(16, 4, g.fs_hz),
            ImageGrid::zeros(8, g.fov_m),
        );
        let man = DatasetManifest::new(g.clone(), 16, 2, 1, Split::Test);
        write_dataset(dir.path(), &man, &[s.clone(), s]).unwrap();
        let mut declared = man.clone();
        declared.n_samples = 3;
        write_json(&dir.path().join(MANIFEST_FILE), &declared).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let man = DatasetManifest::new(geometry(4, 8), 16, 0, 1, Split::Test);
        write_dataset(dir.path(), &man, &[]).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen('{', "{\"extra\": true,", 1)).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(Error::Format { .. })
        ));
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(Error::Format { .. })
        ));
    }
}
