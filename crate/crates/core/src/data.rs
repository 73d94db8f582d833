//! MNIST ingestion, 32×32 padding and rotated test sets.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampler::rotate_planes;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CACHE_MAGIC: &[u8; 8] = b"RICDATA1";
/// Side length after padding.
pub const IMAGE_SIZE: usize = 32;
pub const CLASSES: usize = 10;
/// Angles of the full rotated test protocol: 0°, 10°, …, 350°.
pub fn default_angles() -> Vec<f64> {
    (0..36).map(|a| 10.0 * a as f64).collect()
}

/// Labelled single-channel square images, `[N, 1, H, H]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        match *images.shape() {
            [n, 1, h, w] if h == w && n == labels.len() => {}
            _ => {
                return Err(Error::InvalidShape {
                    shape: images.shape().to_vec(),
                    reason: format!("expected [N, 1, H, H] images for {} labels", labels.len()),
                })
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= CLASSES) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: CLASSES,
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Image `index` as a `[1, 1, H, H]` batch.
    pub fn image(&self, index: usize) -> Tensor<T> {
        let h = self.height();
        Tensor::from_vec(&[1, 1, h, h], self.images.outer(index).to_vec()).expect("valid image")
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let images = self.images.gather_outer(indices)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (images, labels) = self.batch(indices)?;
        Ok(Self { images, labels })
    }

    /// The first `count` images (or all of them).
    pub fn head(&self, count: usize) -> Result<Self> {
        self.select(&(0..count.min(self.len())).collect::<Vec<_>>())
    }

    /// Seeded random subset of `size` images, in shuffled order.
    pub fn subset(&self, size: usize, seed: u64) -> Result<Self> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(size.min(self.len()));
        self.select(&idx)
    }

    /// Seeded disjoint split into `(train, validation)` with `val_size`
    /// images held out.
    pub fn split_validation(&self, val_size: usize, seed: u64) -> Result<(Self, Self)> {
        if val_size >= self.len() {
            return Err(Error::EmptyDataset(format!(
                "holding out {val_size} of {} images leaves nothing to train on",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (val, train) = idx.split_at(val_size);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.select(&train)?, self.select(&val)?))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
        }
    }

    /// Every image rotated anticlockwise by `degrees` about the image center.
    pub fn rotated(&self, degrees: f64) -> Result<Self> {
        let h = self.height();
        let plane = h * h;
        let data: Vec<T> = self
            .images
            .data()
            .par_chunks(plane)
            .map(|img| rotate_planes(img, 1, h, degrees))
            .collect::<Result<Vec<_>>>()?
            .concat();
        Ok(Self {
            images: Tensor::from_vec(self.images.shape(), data)?,
            labels: self.labels.clone(),
        })
    }
}

/// Rotates a `[1, H, H]` (or `[1, 1, H, H]`) image anticlockwise by
/// `degrees` about `((H-1)/2, (H-1)/2)`: bilinear with zero fill, an exact
/// pixel permutation at multiples of 90°.
pub fn rotate_image<T: Scalar>(img: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let h = *img.shape().last().expect("non-empty shape");
    if img.len() != h * h {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "expected a single square channel".into(),
        });
    }
    Tensor::from_vec(img.shape(), rotate_planes(img.data(), 1, h, degrees)?)
}

/// Rotated copies of a test set, one per angle. Each copy is built on
/// demand so the full 36-angle protocol never holds every copy at once.
#[derive(Debug, Clone)]
pub struct RotatedTestSet<'a, T> {
    base: &'a Dataset<T>,
    angles: Vec<f64>,
}

pub fn build_rotated_test<'a, T: Scalar>(test: &'a Dataset<T>, angles: &[f64]) -> Result<RotatedTestSet<'a, T>> {
    if angles.is_empty() {
        return Err(Error::InvalidConfig("rotated test set needs at least one angle".into()));
    }
    Ok(RotatedTestSet {
        base: test,
        angles: angles.to_vec(),
    })
}

impl<'a, T: Scalar> RotatedTestSet<'a, T> {
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn total_images(&self) -> usize {
        self.angles.len() * self.base.len()
    }

    pub fn base(&self) -> &'a Dataset<T> {
        self.base
    }

    /// The copy rotated by the `index`-th angle.
    pub fn dataset(&self, index: usize) -> Result<Dataset<T>> {
        self.base.rotated(self.angles[index])
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, Result<Dataset<T>>)> + '_ {
        self.angles.iter().map(|&a| (a, self.base.rotated(a)))
    }
}

/// Parsed IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?
        .read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("gzip: {e}"),
            })?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn parse_header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let header = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = (0..dims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected = header + shape.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(shape)
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_maybe_gz(path)?;
    let shape = parse_header(path, &bytes, IMAGE_MAGIC, 3)?;
    let len = shape.iter().product::<usize>();
    Ok(IdxImages {
        count: shape[0],
        rows: shape[1],
        cols: shape[2],
        pixels: bytes[16..16 + len].to_vec(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    let shape = parse_header(path, &bytes, LABEL_MAGIC, 1)?;
    Ok(bytes[8..8 + shape[0]].to_vec())
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for d in [images.count, images.rows, images.cols] {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    w.write_all(&images.pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Centers `rows × cols` byte images on a zero `IMAGE_SIZE` canvas and
/// scales to `[0, 1]`.
pub fn dataset_from_idx<T: Scalar>(images: &IdxImages, labels: &[u8]) -> Result<Dataset<T>> {
    if images.count != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if images.rows > IMAGE_SIZE || images.cols > IMAGE_SIZE {
        return Err(Error::InvalidShape {
            shape: vec![images.rows, images.cols],
            reason: format!("images larger than {IMAGE_SIZE}x{IMAGE_SIZE}"),
        });
    }
    let top = (IMAGE_SIZE - images.rows) / 2;
    let left = (IMAGE_SIZE - images.cols) / 2;
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let scale = T::one() / T::from_f64_lossy(255.0);
    let mut data = vec![T::zero(); images.count * plane];
    for (n, src) in images.pixels.chunks(images.rows * images.cols).enumerate() {
        let dst = &mut data[n * plane..(n + 1) * plane];
        for r in 0..images.rows {
            for c in 0..images.cols {
                dst[(r + top) * IMAGE_SIZE + c + left] = T::from_f64_lossy(src[r * images.cols + c] as f64) * scale;
            }
        }
    }
    Dataset::new(
        Tensor::from_vec(&[images.count, 1, IMAGE_SIZE, IMAGE_SIZE], data)?,
        labels.iter().map(|&l| l as usize).collect(),
    )
}

/// First existing file among the usual spellings of an MNIST file name.
fn locate(dir: &Path, split: &str, kind: &str) -> Result<PathBuf> {
    let names = [
        format!("{split}-{kind}-ubyte"),
        format!("{split}-{kind}.ubyte"),
        format!("{split}-{}", kind.replacen('-', ".", 1) + "-ubyte"),
    ];
    for name in &names {
        for suffix in ["", ".gz"] {
            let p = dir.join(format!("{name}{suffix}"));
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(Error::MissingFile(dir.join(&names[0])))
}

/// Loads one MNIST split (`"train"` or `"t10k"`) from `dir`.
pub fn load_split<T: Scalar>(dir: &Path, split: &str) -> Result<Dataset<T>> {
    let images = read_idx_images(&locate(dir, split, "images-idx3")?)?;
    let labels = read_idx_labels(&locate(dir, split, "labels-idx1")?)?;
    dataset_from_idx(&images, &labels)
}

/// `(train, test)` from a directory holding the four standard IDX files,
/// raw or gzipped.
pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    Ok((load_split(dir, "train")?, load_split(dir, "t10k")?))
}

/// Writes `dataset` as `RICDATA1`, N and H (u32 LE), the images as f64 LE
/// and one byte per label.
pub fn write_cache<T: Scalar>(path: &Path, dataset: &Dataset<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    w.write_all(&(dataset.height() as u32).to_le_bytes())?;
    for v in dataset.images.data() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    let labels: Vec<u8> = dataset.labels.iter().map(|&l| l as u8).collect();
    w.write_all(&labels)?;
    w.flush()?;
    Ok(())
}

pub fn read_cache<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let bytes = read_maybe_gz(path)?;
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 16,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != CACHE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: u32::from_be_bytes(CACHE_MAGIC[..4].try_into().expect("4 bytes")),
            found: be_u32(&bytes, 0),
        });
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let expected = 16 + n * h * h * 8 + n;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[16..16 + n * h * h * 8]
        .chunks_exact(8)
        .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    let labels = bytes[16 + n * h * h * 8..expected]
        .iter()
        .map(|&l| l as usize)
        .collect();
    Dataset::new(Tensor::from_vec(&[n, 1, h, h], data)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_idx() -> (IdxImages, Vec<u8>) {
        let pixels = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        (
            IdxImages {
                count: 2,
                rows: 28,
                cols: 28,
                pixels,
            },
            vec![3, 7],
        )
    }

    #[test]
    fn padding_places_origin_at_two_two() {
        let (img, labels) = tiny_idx();
        let ds: Dataset<f64> = dataset_from_idx(&img, &labels).unwrap();
        let first = ds.image(0);
        assert_eq!(first.shape(), &[1, 1, 32, 32]);
        assert_eq!(first.data()[2 * 32 + 2], 0.0);
        assert_eq!(first.data()[2 * 32 + 3], 1.0 / 255.0);
        assert_eq!(first.data()[29 * 32 + 29], (783 % 256) as f64 / 255.0);
        assert!(first.data()[..32 * 2].iter().all(|&v| v == 0.0));
        assert!(ds.images().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ds.labels(), &[3, 7]);
    }

    #[test]
    fn idx_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, labels) = tiny_idx();
        write_idx_images(&dir.path().join("train-images-idx3-ubyte"), &img).unwrap();
        write_idx_labels(&dir.path().join("train-labels-idx1-ubyte"), &labels).unwrap();
        let loaded: Dataset<f64> = load_split(dir.path(), "train").unwrap();
        assert_eq!(loaded, dataset_from_idx(&img, &labels).unwrap());
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec![1u8, 2, 3];
        let plain = dir.path().join("l");
        write_idx_labels(&plain, &labels).unwrap();
        let gz = dir.path().join("l.gz");
        let mut enc = flate2::write::GzEncoder::new(File::create(&gz).unwrap(), flate2::Compression::fast());
        enc.write_all(&std::fs::read(&plain).unwrap()).unwrap();
        enc.finish().unwrap();
        assert_eq!(read_idx_labels(&gz).unwrap(), labels);
    }

    #[test]
    fn loader_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(read_idx_labels(&missing), Err(Error::MissingFile(_))));

        let bad = dir.path().join("bad");
        std::fs::write(&bad, [0, 0, 8, 3, 0, 0, 0, 1, 5]).unwrap();
        assert!(matches!(
            read_idx_labels(&bad),
            Err(Error::BadMagic {
                expected: LABEL_MAGIC,
                found: IMAGE_MAGIC,
                ..
            })
        ));

        let short = dir.path().join("short");
        std::fs::write(&short, [0, 0, 8, 1, 0, 0, 0, 5, 1, 2]).unwrap();
        assert!(matches!(
            read_idx_labels(&short),
            Err(Error::Truncated {
                expected: 13,
                found: 10,
                ..
            })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, labels) = tiny_idx();
        let ds: Dataset<f64> = dataset_from_idx(&img, &labels).unwrap();
        let path = dir.path().join("cache.bin");
        write_cache(&path, &ds).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"RICDATA1");
        assert_eq!(bytes.len(), 16 + 2 * 32 * 32 * 8 + 2);
        assert_eq!(read_cache::<f64>(&path).unwrap(), ds);
    }

    #[test]
    fn rotation_identities() {
        let (img, labels) = tiny_idx();
        let ds: Dataset<f64> = dataset_from_idx(&img, &labels).unwrap();
        let x = ds.image(1);
        assert_eq!(rotate_image(&x, 0.0).unwrap(), x);
        let full = rotate_image(&x, 360.0).unwrap();
        assert!(full.max_abs_diff(&x).unwrap() < 1e-12);
        let mut y = x.clone();
        for _ in 0..4 {
            y = rotate_image(&y, 90.0).unwrap();
        }
        assert_eq!(y, x);
        let quarter = rotate_image(&x, 90.0).unwrap();
        let sorted = |t: &Tensor<f64>| {
            let mut v = t.data().to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(sorted(&quarter), sorted(&x));
    }

    #[test]
    fn rotated_set_keeps_labels_and_angle_zero() {
        let (img, labels) = tiny_idx();
        let ds: Dataset<f64> = dataset_from_idx(&img, &labels).unwrap();
        let set = build_rotated_test(&ds, &default_angles()).unwrap();
        assert_eq!(set.len(), 36);
        assert_eq!(set.total_images(), 72);
        assert_eq!(set.dataset(0).unwrap(), ds);
        assert_eq!(set.dataset(13).unwrap().labels(), ds.labels());
        assert!(build_rotated_test(&ds, &[]).is_err());
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let n = 20;
        let images = Tensor::<f64>::from_vec(&[n, 1, 2, 2], (0..n * 4).map(|v| v as f64).collect()).unwrap();
        let ds = Dataset::new(images, (0..n).map(|i| i % 10).collect()).unwrap();
        let (a, b) = ds.split_validation(5, 9).unwrap();
        assert_eq!((a.len(), b.len()), (15, 5));
        let firsts = |d: &Dataset<f64>| (0..d.len()).map(|i| d.images().outer(i)[0] as i64).collect::<Vec<_>>();
        let mut all = firsts(&a);
        all.extend(firsts(&b));
        all.sort_unstable();
        assert_eq!(all, (0..n as i64).map(|v| v * 4).collect::<Vec<_>>());
        assert_eq!(ds.split_validation(5, 9).unwrap().1, b);
        assert!(ds.split_validation(20, 0).is_err());
    }
}
