//! IDX (big-endian) digit files.
//!
//! Images use magic `0x00000803` followed by count, rows and cols as `u32`,
//! then `count * rows * cols` unsigned bytes. Labels use magic `0x00000801`
//! followed by count and `count` bytes.

use std::path::Path;

use ndarray::Array2;

use super::{Domain, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::PatchGrid;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw decoded image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Truncated {
            needed: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().expect("four bytes")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("magic number {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let needed = 16 + count * size;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    let pixels = bytes[16..needed].chunks(size.max(1)).take(count).map(<[u8]>::to_vec).collect();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Data(format!("image has {} pixels, expected {}", img.len(), rows * cols)));
        }
        out.extend_from_slice(img);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Area-weighted average pooling of a `rows x cols` image to `side x side`.
fn downsample(img: &Array2<f64>, side: usize) -> Array2<f64> {
    let (rows, cols) = img.dim();
    // Overlap of the unit source cell `[p, p+1)` with `[lo, hi)`.
    let overlap = |p: usize, lo: f64, hi: f64| ((p + 1) as f64).min(hi) - (p as f64).max(lo);
    let (sr, sc) = (rows as f64 / side as f64, cols as f64 / side as f64);
    Array2::from_shape_fn((side, side), |(i, j)| {
        let (r0, r1) = (i as f64 * sr, (i + 1) as f64 * sr);
        let (c0, c1) = (j as f64 * sc, (j + 1) as f64 * sc);
        let mut acc = 0.0;
        for r in r0.floor() as usize..(r1.ceil() as usize).min(rows) {
            let wr = overlap(r, r0, r1);
            for c in c0.floor() as usize..(c1.ceil() as usize).min(cols) {
                acc += wr * overlap(c, c0, c1) * img[[r, c]];
            }
        }
        acc / (sr * sc)
    })
}

/// Cuts a square image into a `gh x gw` grid of flattened patches.
fn to_patches(img: &Array2<f64>, gh: usize, gw: usize) -> Array2<f64> {
    let (ph, pw) = (img.nrows() / gh, img.ncols() / gw);
    Array2::from_shape_fn((gh * gw, ph * pw), |(p, q)| {
        let (bi, bj) = (p / gw, p % gw);
        let (r, c) = (q / pw, q % pw);
        img[[bi * ph + r, bj * pw + c]]
    })
}

/// Reads an IDX image/label pair into a labeled dataset of patch grids.
///
/// Each image is scaled to `[0, 1]`, average-pooled to
/// `downsample_to x downsample_to` and cut into `patch_grid.0 x patch_grid.1`
/// patches of `(side / gh) * (side / gw)` pixels.
pub fn load_idx_digits(
    images_path: &Path,
    labels_path: &Path,
    downsample_to: usize,
    patch_grid: (usize, usize),
    domain: Domain,
) -> Result<LabeledDataset> {
    let (gh, gw) = patch_grid;
    if downsample_to == 0 || gh == 0 || gw == 0 || downsample_to % gh != 0 || downsample_to % gw != 0 {
        return Err(Error::Config(format!(
            "side {downsample_to} cannot be cut into a {gh}x{gw} grid"
        )));
    }
    let images = read_idx_images(&std::fs::read(images_path)?)?;
    let labels = read_idx_labels(&std::fs::read(labels_path)?)?;
    if images.pixels.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.pixels.len(),
            labels.len()
        )));
    }
    if images.rows == 0 || images.cols == 0 {
        return Err(Error::Data("images have zero size".into()));
    }
    let class_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1).max(10);
    let mut samples = Vec::with_capacity(labels.len());
    for px in &images.pixels {
        let img = Array2::from_shape_fn((images.rows, images.cols), |(r, c)| px[r * images.cols + c] as f64 / 255.0);
        let small = downsample(&img, downsample_to);
        samples.push(PatchGrid::new(to_patches(&small, gh, gw))?);
    }
    LabeledDataset::new(samples, labels.into_iter().map(usize::from).collect(), domain, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, n: usize, side: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let imgs: Vec<Vec<u8>> = (0..n)
            .map(|i| (0..side * side).map(|p| ((p * 7 + i * 13) % 256) as u8).collect())
            .collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let (ip, lp) = (dir.join("img.idx"), dir.join("lab.idx"));
        write_idx_images(&ip, &imgs, side, side).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn digit_grid_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 3, 28);
        let ds = load_idx_digits(&ip, &lp, 12, (4, 4), Domain::Source).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.grid_shape(), Some((16, 9)));
        assert_eq!(ds.class_count(), 10);
        for g in ds.samples() {
            assert!(g.patches().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(load_idx_digits(&ip, &lp, 12, (5, 5), Domain::Source).is_err());
    }

    #[test]
    fn pooling_preserves_constant_images_and_block_means() {
        let img = Array2::from_elem((28, 28), 0.25);
        let d = downsample(&img, 12);
        assert!(d.iter().all(|v| (v - 0.25).abs() < 1e-12));

        let img = Array2::from_shape_fn((4, 4), |(r, c)| (r * 4 + c) as f64);
        let d = downsample(&img, 2);
        assert_eq!(d, ndarray::array![[2.5, 4.5], [10.5, 12.5]]);
    }

    #[test]
    fn format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 2, 4);
        // Labels file with the image magic.
        let bad = dir.path().join("bad.idx");
        std::fs::copy(&ip, &bad).unwrap();
        match load_idx_digits(&ip, &bad, 4, (2, 2), Domain::Source) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("0x00000801"));
            }
            other => panic!("{other:?}"),
        }

        let empty = dir.path().join("empty.idx");
        std::fs::write(&empty, b"").unwrap();
        assert!(matches!(
            load_idx_digits(&empty, &lp, 4, (2, 2), Domain::Source),
            Err(Error::Truncated { .. })
        ));

        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&bad, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_idx_images(&std::fs::read(&bad).unwrap()), Err(Error::Truncated { .. })));

        let (_, lp3) = {
            let d3 = dir.path().join("three");
            std::fs::create_dir(&d3).unwrap();
            write_pair(&d3, 3, 4)
        };
        assert!(matches!(load_idx_digits(&ip, &lp3, 4, (2, 2), Domain::Source), Err(Error::Data(_))));
    }

    #[test]
    fn round_trip_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![vec![0u8, 17, 255, 128, 3, 99], vec![1, 2, 3, 4, 5, 6]];
        let p = dir.path().join("x.idx");
        write_idx_images(&p, &imgs, 2, 3).unwrap();
        let back = read_idx_images(&std::fs::read(&p).unwrap()).unwrap();
        assert_eq!((back.rows, back.cols), (2, 3));
        assert_eq!(back.pixels, imgs);
    }
}
