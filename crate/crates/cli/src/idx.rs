//! IDX container parsing (the MNIST file format) and signal extraction.
//!
//! Images: big-endian magic 0x00000803, then item count, rows, cols, then
//! one unsigned byte per pixel. Labels: magic 0x00000801, count, bytes.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// Pixels scaled to [0, 1], one vector per image.
    pub images: Vec<Vec<f64>>,
}

pub fn read_idx_images<R: Read>(mut r: R) -> anyhow::Result<IdxImages> {
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        anyhow::bail!("bad magic 0x{magic:08x}, want 0x{IDX_IMAGES_MAGIC:08x}");
    }
    let count = r.read_u32::<BigEndian>()? as usize;
    let rows = r.read_u32::<BigEndian>()? as usize;
    let cols = r.read_u32::<BigEndian>()? as usize;
    let mut images = Vec::with_capacity(count);
    let mut buf = vec![0u8; rows * cols];
    for i in 0..count {
        r.read_exact(&mut buf).map_err(|e| anyhow::anyhow!("truncated image {i}: {e}"))?;
        images.push(buf.iter().map(|&b| b as f64 / 255.0).collect());
    }
    Ok(IdxImages { rows, cols, images })
}

pub fn read_idx_labels<R: Read>(mut r: R) -> anyhow::Result<Vec<u8>> {
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        anyhow::bail!("bad magic 0x{magic:08x}, want 0x{IDX_LABELS_MAGIC:08x}");
    }
    let count = r.read_u32::<BigEndian>()? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels).map_err(|e| anyhow::anyhow!("truncated labels: {e}"))?;
    Ok(labels)
}

/// Write images in IDX format from [0,1]-scaled pixels (test fixtures and
/// dataset exports).
pub fn write_idx_images<W: Write>(
    mut w: W,
    rows: usize,
    cols: usize,
    images: &[Vec<f64>],
) -> anyhow::Result<()> {
    w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    w.write_u32::<BigEndian>(images.len() as u32)?;
    w.write_u32::<BigEndian>(rows as u32)?;
    w.write_u32::<BigEndian>(cols as u32)?;
    for img in images {
        anyhow::ensure!(img.len() == rows * cols, "image size mismatch");
        for &p in img {
            w.write_all(&[(p.clamp(0.0, 1.0) * 255.0).round() as u8])?;
        }
    }
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> anyhow::Result<()> {
    w.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)?;
    Ok(())
}

/// Load the `sample_index`-th image of `digit_class` as the signal vector.
///
/// Pixels map to [0, 1]; `target_norm` rescales the vector when given.
/// Returns the vector and a provenance string for the manifest.
pub fn load_mnist_signal(
    images_path: &Path,
    labels_path: &Path,
    digit_class: u8,
    sample_index: usize,
    target_norm: Option<f64>,
) -> anyhow::Result<(Vec<f64>, String)> {
    let images = read_idx_images(BufReader::new(std::fs::File::open(images_path)?))?;
    let labels = read_idx_labels(BufReader::new(std::fs::File::open(labels_path)?))?;
    anyhow::ensure!(
        images.images.len() == labels.len(),
        "image count {} does not match label count {}",
        images.images.len(),
        labels.len()
    );
    if digit_class > 9 {
        anyhow::bail!("digit class {digit_class} out of range 0..=9");
    }
    let mut seen = 0usize;
    let mut chosen: Option<usize> = None;
    for (i, &label) in labels.iter().enumerate() {
        if label == digit_class {
            if seen == sample_index {
                chosen = Some(i);
                break;
            }
            seen += 1;
        }
    }
    let idx = chosen.ok_or_else(|| {
        anyhow::anyhow!("only {seen} images of class {digit_class}; index {sample_index} out of range")
    })?;
    let mut mu = images.images[idx].clone();
    let norm: f64 = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
    anyhow::ensure!(norm > 0.0, "selected image is entirely black");
    if let Some(t) = target_norm {
        for v in &mut mu {
            *v *= t / norm;
        }
    }
    let prov = format!(
        "mnist signal: {} image #{idx} (class {digit_class}, occurrence {sample_index}), \
         raw [0,1] norm {norm:.6}, target_norm {target_norm:?}",
        images_path.display()
    );
    Ok((mu, prov))
}
