//! IDX reader for MNIST-style image and label files.
//!
//! Files may be raw or gzip-compressed; compression is detected from the
//! first two bytes. All integers in the header are big-endian.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::data::Dataset;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            message: format!("truncated header: {} bytes", bytes.len()),
        })
}

/// Decoded image file: `count` images of `rows × cols` raw bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Parse {
            offset: 16 + body.len() as u64,
            message: format!("truncated image data: expected {need} bytes, found {}", body.len()),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..need].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Parse {
            offset: 8 + body.len() as u64,
            message: format!("truncated label data: expected {count} bytes, found {}", body.len()),
        });
    }
    Ok(body[..count].to_vec())
}

/// Pairs an image file with a label file and scales pixels to [0, 1].
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let imgs = parse_idx_images(&read_maybe_gz(images.as_ref())?)?;
    let labs = parse_idx_labels(&read_maybe_gz(labels.as_ref())?)?;
    dataset_from_idx(&imgs, &labs)
}

pub fn dataset_from_idx(imgs: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if imgs.count != labels.len() {
        return Err(Error::dim(format!(
            "{} images but {} labels",
            imgs.count,
            labels.len()
        )));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    let features = imgs.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(imgs.rows * imgs.cols, num_classes, features, labels.to_vec())
}

/// The `train-*` / `t10k-*` file pair inside an MNIST directory, raw or `.gz`.
pub fn mnist_paths(dir: &Path, train: bool) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let prefix = if train { "train" } else { "t10k" };
    let find = |stem: String| {
        [stem.clone(), format!("{stem}.gz")]
            .into_iter()
            .map(|name| dir.join(name))
            .find(|p| p.exists())
            .ok_or_else(|| {
                Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{stem}[.gz] not found in {}", dir.display()),
                ))
            })
    };
    Ok((
        find(format!("{prefix}-images-idx3-ubyte"))?,
        find(format!("{prefix}-labels-idx1-ubyte"))?,
    ))
}

pub fn load_mnist_dir(dir: impl AsRef<Path>, train: bool) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir.as_ref(), train)?;
    load_mnist_idx(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend(std::iter::repeat(fill).take((count * rows * cols) as usize));
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_header_and_scales() {
        let imgs = parse_idx_images(&image_file(2, 3, 4, 255)).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 3, 4));
        let d = dataset_from_idx(&imgs, &parse_idx_labels(&label_file(&[7, 1])).unwrap()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 12);
        assert!(d.features().iter().all(|&x| x == 1.0));
        assert_eq!(d.labels(), &[7, 1]);
    }

    #[test]
    fn bad_magic_names_offset() {
        let mut f = image_file(1, 2, 2, 0);
        f[3] = 0x01;
        match parse_idx_images(&f) {
            Err(Error::Parse { offset: 0, message }) => assert!(message.contains("magic")),
            other => panic!("{other:?}"),
        }
        assert!(parse_idx_labels(&image_file(1, 1, 1, 0)).is_err());
    }

    #[test]
    fn truncation_detected() {
        let f = image_file(3, 2, 2, 0);
        match parse_idx_images(&f[..f.len() - 1]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, (f.len() - 1) as u64),
            other => panic!("{other:?}"),
        }
        assert!(parse_idx_images(&f[..10]).is_err());
        let l = label_file(&[1, 2, 3]);
        assert!(parse_idx_labels(&l[..l.len() - 1]).is_err());
    }

    #[test]
    fn count_mismatch_detected() {
        let imgs = parse_idx_images(&image_file(2, 1, 1, 0)).unwrap();
        assert!(dataset_from_idx(&imgs, &[1, 2, 3]).is_err());
    }

    #[test]
    fn reads_gzip_files() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&image_file(2, 2, 2, 51)).unwrap();
        std::fs::write(dir.path().join("train-images-idx3-ubyte.gz"), enc.finish().unwrap()).unwrap();
        std::fs::write(dir.path().join("train-labels-idx1-ubyte"), label_file(&[0, 9])).unwrap();
        let d = load_mnist_dir(dir.path(), true).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d.features()[0] - 0.2).abs() < 1e-12);
        assert!(load_mnist_dir(dir.path(), false).is_err());
    }
}
