use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pnm::read_image;
use super::transform::{mask_tensor, normalize, resize, Interpolation, IMAGENET_MEANS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One `image<TAB>mask` pair, paths already joined with the manifest root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

impl ManifestEntry {
    /// File stem of the image, used to match prediction files.
    pub fn stem(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses manifest text; relative paths are resolved against `root`.
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.trim().is_empty() && !body.trim_start().starts_with('#') {
                let (img, mask) = body
                    .split_once('\t')
                    .ok_or_else(|| Error::format(offset, "expected image<TAB>mask"))?;
                let (img, mask) = (img.trim(), mask.trim());
                if img.is_empty() || mask.is_empty() || mask.contains('\t') {
                    return Err(Error::format(offset, "expected exactly two non-empty columns"));
                }
                entries.push(ManifestEntry {
                    image: root.join(img),
                    mask: root.join(mask),
                });
            }
            offset += line.len() as u64;
        }
        Ok(Manifest {
            root: root.to_path_buf(),
            entries,
        })
    }

    /// Reads a manifest file; its directory is the root.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, root)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Paths referenced by the manifest that do not exist.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        self.entries
            .iter()
            .flat_map(|e| [&e.image, &e.mask])
            .filter(|p| !p.exists())
            .cloned()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Common `(height, width)` for training batches; `None` keeps native size.
    pub size: Option<(usize, usize)>,
    pub means: [f64; 3],
    /// Threshold masks at one half instead of keeping soft values.
    pub binarize_masks: bool,
}

pub const TRAIN_SIZE: usize = 224;

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            size: Some((TRAIN_SIZE, TRAIN_SIZE)),
            means: IMAGENET_MEANS,
            binarize_masks: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1×3×H×W`, normalized.
    pub image: Tensor,
    /// `1×1×H×W` in `[0, 1]`.
    pub mask: Tensor,
}

/// Decodes one entry. Any failure is wrapped in [`Error::Sample`] so callers can skip it.
pub fn load_sample(entry: &ManifestEntry, cfg: &DataConfig) -> Result<Sample> {
    let wrap = |path: &Path, e: Error| Error::Sample {
        path: path.to_path_buf(),
        source: Box::new(e),
    };
    let mut img = read_image(&entry.image).map_err(|e| wrap(&entry.image, e))?;
    let mut mask = read_image(&entry.mask).map_err(|e| wrap(&entry.mask, e))?;
    let (h, w) = cfg.size.unwrap_or((img.height, img.width));
    img = resize(&img, h, w, Interpolation::Bilinear).map_err(|e| wrap(&entry.image, e))?;
    mask = resize(&mask, h, w, Interpolation::Nearest).map_err(|e| wrap(&entry.mask, e))?;
    Ok(Sample {
        image: normalize(&img, cfg.means),
        mask: mask_tensor(&mask, cfg.binarize_masks),
    })
}

/// Anything that can hand out training samples by index.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples decoded from disk on demand.
pub struct Dataset {
    pub manifest: Manifest,
    pub config: DataConfig,
}

impl Dataset {
    pub fn new(manifest: Manifest, config: DataConfig) -> Self {
        Dataset { manifest, config }
    }
}

impl SampleSource for Dataset {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn load(&self, index: usize) -> Result<Sample> {
        load_sample(&self.manifest.entries[index], &self.config)
    }
}

/// Pre-decoded samples, mostly for tests and synthetic data.
impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn load(&self, index: usize) -> Result<Sample> {
        Ok(self[index].clone())
    }
}

/// Seeded Fisher-Yates permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
}

/// Index groups for one epoch; the last group may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    Ok(epoch_order(n, seed, epoch)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `B×3×H×W`.
    pub images: Tensor,
    /// `B×1×H×W`.
    pub masks: Tensor,
    /// Samples that failed to load and were left out.
    pub skipped: Vec<String>,
}

/// Loads and stacks the given samples. Per-sample [`Error::Sample`] failures
/// are logged and skipped; a batch with nothing left is an error.
pub fn load_batch<S: SampleSource + ?Sized>(source: &S, indices: &[usize]) -> Result<Batch> {
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for &i in indices {
        match source.load(i) {
            Ok(s) => {
                images.push(s.image);
                masks.push(s.mask);
                kept.push(i);
            }
            Err(e @ Error::Sample { .. }) => {
                log::warn!("skipping sample {i}: {e}");
                skipped.push(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(Error::Usage(format!("no loadable samples in batch {indices:?}")));
    }
    Ok(Batch {
        indices: kept,
        images: Tensor::stack(&images)?,
        masks: Tensor::stack(&masks)?,
        skipped,
    })
}

/// Iterator over one epoch of batches in seeded order.
pub fn batches<'a, S: SampleSource + ?Sized>(
    source: &'a S,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let groups = batch_indices(source.len(), batch_size, seed, epoch)?;
    Ok(groups.into_iter().map(move |g| load_batch(source, &g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_image, ImageBuffer};

    #[test]
    fn manifest_parsing() {
        let text = "# header\na.ppm\ta.pgm\n\n  # indented comment\nsub/b.ppm\tsub/b.pgm\r\n";
        let m = Manifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[1].image, PathBuf::from("/data/sub/b.ppm"));
        assert_eq!(m.entries[1].stem(), "b");
        match Manifest::parse("a\ta\nbroken line\n", Path::new(".")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partition_of_45_by_20() {
        let b = batch_indices(45, 20, 3, 0).unwrap();
        let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![20, 20, 5]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..45).collect::<Vec<_>>());
    }

    #[test]
    fn order_is_seeded_per_epoch() {
        assert_eq!(epoch_order(30, 5, 2), epoch_order(30, 5, 2));
        assert_ne!(epoch_order(30, 5, 2), epoch_order(30, 5, 3));
        assert_ne!(epoch_order(30, 5, 2), epoch_order(30, 6, 2));
        assert!(batch_indices(3, 0, 0, 0).is_err());
    }

    #[test]
    fn samples_load_resize_and_skip() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        write_image(&ImageBuffer::filled(6, 4, 3, 255), &d.join("a.ppm")).unwrap();
        let mask = ImageBuffer::new(6, 4, 1, (0..24).map(|i| if i % 2 == 0 { 0 } else { 255 }).collect()).unwrap();
        write_image(&mask, &d.join("a.pgm")).unwrap();
        std::fs::write(d.join("bad.ppm"), b"P6\n9 9\n255\n").unwrap();
        let m = Manifest::parse("a.ppm\ta.pgm\nbad.ppm\ta.pgm\n", d).unwrap();
        assert!(m.missing_files().is_empty());
        let cfg = DataConfig { size: Some((8, 8)), means: [0.0; 3], ..Default::default() };
        let ds = Dataset::new(m, cfg);
        let s = ds.load(0).unwrap();
        assert_eq!(s.image.shape().dims(), [1, 3, 8, 8]);
        assert!(s.image.data().iter().all(|&v| v == 1.0));
        assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        match ds.load(1) {
            Err(Error::Sample { path, .. }) => assert!(path.ends_with("bad.ppm")),
            other => panic!("{other:?}"),
        }
        let b = load_batch(&ds, &[1, 0]).unwrap();
        assert_eq!(b.indices, vec![0]);
        assert_eq!(b.skipped.len(), 1);
        assert_eq!(b.images.shape().n, 1);
    }
}
