//! Class statistics of a segmentation label map.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::SignalGeometry;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelMapStats {
    pub width: usize,
    pub height: usize,
    /// Pixel count of each declared class.
    pub class_counts: Vec<u64>,
    #[serde(skip)]
    pub geometry: SignalGeometry,
}

/// Reads a label map (PGM, plain or raw, or a CSV grid of integers) whose
/// pixel values are class labels in `[0, num_classes)`.
pub fn ingest_label_map(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMapStats> {
    let bytes = std::fs::read(path)?;
    let grid = if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(&bytes)?
    } else {
        parse_csv(&bytes)?
    };
    label_stats(grid, num_classes)
}

struct Grid {
    width: usize,
    height: usize,
    labels: Vec<i64>,
}

fn label_stats(grid: Grid, num_classes: usize) -> Result<LabelMapStats> {
    if num_classes == 0 {
        return Err(Error::Config("num_classes must be positive".into()));
    }
    let mut class_counts = vec![0u64; num_classes];
    for (index, &label) in grid.labels.iter().enumerate() {
        match usize::try_from(label).ok().filter(|&l| l < num_classes) {
            Some(l) => class_counts[l] += 1,
            None => {
                return Err(Error::LabelOutOfRange {
                    label,
                    index,
                    num_classes,
                })
            }
        }
    }
    let total = (grid.width * grid.height) as u64;
    // |X̄| averages over the declared classes, used or not
    let fraction = class_counts.iter().sum::<u64>() as f64 / num_classes as f64 / total as f64;
    let geometry = SignalGeometry::new(total, fraction, num_classes)?;
    Ok(LabelMapStats {
        width: grid.width,
        height: grid.height,
        class_counts,
        geometry,
    })
}

fn parse_pgm(bytes: &[u8]) -> Result<Grid> {
    let malformed = |why: &str| Error::MalformedFile(format!("PGM: {why}"));
    let binary = bytes[1] == b'5';
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in &mut header {
        *field = next_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok()?.parse().ok())
            .ok_or_else(|| malformed("truncated or non-numeric header"))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 || maxval == 0 || maxval > u16::MAX as usize {
        return Err(malformed("bad dimensions or maxval"));
    }
    let n = width * height;
    let labels: Vec<i64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let raster = bytes
            .get(pos + 1..)
            .ok_or_else(|| malformed("missing raster"))?;
        let wide = maxval > 255;
        let needed = if wide { 2 * n } else { n };
        if raster.len() < needed {
            return Err(malformed("raster shorter than width×height"));
        }
        if wide {
            raster[..needed]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as i64)
                .collect()
        } else {
            raster[..n].iter().map(|&b| b as i64).collect()
        }
    } else {
        let mut out = Vec::with_capacity(n);
        while let Some(t) = next_token(bytes, &mut pos) {
            let v = std::str::from_utf8(t)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed("bad sample"))?;
            out.push(v);
        }
        if out.len() != n {
            return Err(malformed(&format!(
                "{} samples for {width}×{height}",
                out.len()
            )));
        }
        out
    };
    Ok(Grid {
        width,
        height,
        labels,
    })
}

/// Next whitespace-separated token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn parse_csv(bytes: &[u8]) -> Result<Grid> {
    let malformed = |why: String| Error::MalformedFile(format!("CSV: {why}"));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut labels = Vec::new();
    let mut width = 0;
    let mut height = 0;
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if height == 0 {
            width = record.len();
        }
        for field in &record {
            labels.push(
                field
                    .parse::<i64>()
                    .map_err(|_| malformed(format!("row {height}: bad label {field:?}")))?,
            );
        }
        height += 1;
    }
    if height == 0 || width == 0 {
        return Err(malformed("empty file".into()));
    }
    Ok(Grid {
        width,
        height,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn equal_partition_of_default_frame() {
        let (w, h) = (512, 256);
        let mut bytes = format!("P5\n# labels\n{w} {h}\n255\n").into_bytes();
        bytes.extend((0..w * h).map(|i| (i * 10 / (w * h)) as u8));
        let f = write(&bytes);
        let stats = ingest_label_map(f.path(), 10).unwrap();
        assert_eq!(stats.geometry.total_pixels(), 131072);
        assert!((stats.geometry.class_pixel_fraction() - 0.1).abs() < 1e-15);
        assert_eq!(stats.class_counts.iter().sum::<u64>(), 131072);
    }

    #[test]
    fn unused_labels_still_count_in_the_average() {
        let f = write(b"P2\n3 2\n9\n0 1 2\n2 1 0\n");
        let stats = ingest_label_map(f.path(), 10).unwrap();
        assert_eq!(stats.class_counts[..3], [2, 2, 2]);
        assert!((stats.geometry.class_pixel_fraction() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sixteen_bit_raster() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0, 1, 0, 3]);
        let stats = ingest_label_map(write(&bytes).path(), 4).unwrap();
        assert_eq!(stats.class_counts, vec![0, 1, 0, 1]);
    }

    #[test]
    fn csv_grid() {
        let stats = ingest_label_map(write(b"0, 1\n1, 1\n").path(), 2).unwrap();
        assert_eq!((stats.width, stats.height), (2, 2));
        assert_eq!(stats.class_counts, vec![1, 3]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            ingest_label_map(write(b"").path(), 3),
            Err(Error::MalformedFile(_))
        ));
        assert!(matches!(
            ingest_label_map(write(b"P5\n4 4\n").path(), 3),
            Err(Error::MalformedFile(_))
        ));
        assert!(matches!(
            ingest_label_map(write(b"0,1\n2\n").path(), 3),
            Err(Error::MalformedFile(_))
        ));
        assert!(matches!(
            ingest_label_map(write(b"0,1\n5,1\n").path(), 3),
            Err(Error::LabelOutOfRange {
                label: 5,
                index: 2,
                num_classes: 3
            })
        ));
        assert!(matches!(
            ingest_label_map(write(b"P2 1 1 9 -1").path(), 3),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}
