use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::ImageGrid;
use crate::error::{EdgeError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    /// Plain PGM (`P2`).
    PgmAscii,
    /// Raw PGM (`P5`), 8-bit.
    PgmBinary,
    /// Either PGM flavour, chosen by the magic number.
    Pgm,
    /// Comma separated, one image row per line, no header.
    Csv,
}

/// Read an image. PGM intensities are rescaled to `[0, 1]` by the header's
/// maximum value; CSV values are taken as-is.
///
/// File rows become the first grid coordinate and file columns the second,
/// so a PGM of width `w` and height `h` yields an `h × w` grid.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>, format: ImageFormat) -> Result<ImageGrid<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| EdgeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        ImageFormat::Csv => parse_csv(&bytes),
        ImageFormat::Pgm => parse_pgm(&bytes, None),
        ImageFormat::PgmAscii => parse_pgm(&bytes, Some(b'2')),
        ImageFormat::PgmBinary => parse_pgm(&bytes, Some(b'5')),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(EdgeError::parse(start, format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse()
            .map_err(|_| EdgeError::parse(start, format!("{what} out of range: {text}")))
    }
}

fn parse_pgm<T: Scalar>(bytes: &[u8], expected: Option<u8>) -> Result<ImageGrid<T>> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'5') {
        return Err(EdgeError::parse(0, "missing PGM magic number P2 or P5"));
    }
    let kind = bytes[1];
    if let Some(want) = expected {
        if kind != want {
            return Err(EdgeError::parse(
                1,
                format!("expected P{} but found P{}", want as char, kind as char),
            ));
        }
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let max_offset = {
        cur.skip_space_and_comments();
        cur.pos
    };
    let maxval = cur.number("maximum value")?;
    if width == 0 || height == 0 {
        return Err(EdgeError::parse(2, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(EdgeError::parse(
            max_offset,
            format!("unsupported maximum value {maxval} (8-bit images only)"),
        ));
    }
    let count = width * height;
    let scale = 1.0 / maxval as f64;
    let mut values = Vec::with_capacity(count);
    if kind == b'5' {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(EdgeError::parse(cur.pos, "missing whitespace after header"));
        }
        let start = cur.pos + 1;
        let raster = &bytes[start.min(bytes.len())..];
        if raster.len() < count {
            return Err(EdgeError::parse(
                bytes.len(),
                format!("raster truncated: expected {count} bytes, found {}", raster.len()),
            ));
        }
        for (k, &b) in raster[..count].iter().enumerate() {
            if b as usize > maxval {
                return Err(EdgeError::parse(start + k, format!("pixel {b} exceeds {maxval}")));
            }
            values.push(T::lit(b as f64 * scale));
        }
    } else {
        for _ in 0..count {
            cur.skip_space_and_comments();
            let at = cur.pos;
            if at >= bytes.len() {
                return Err(EdgeError::parse(
                    at,
                    format!("expected {count} pixels, found {}", values.len()),
                ));
            }
            let v = cur.number("pixel value")?;
            if v > maxval {
                return Err(EdgeError::parse(at, format!("pixel {v} exceeds {maxval}")));
            }
            values.push(T::lit(v as f64 * scale));
        }
        cur.skip_space_and_comments();
        if cur.pos < bytes.len() {
            return Err(EdgeError::parse(cur.pos, "trailing data after raster"));
        }
    }
    ImageGrid::from_vec(height, width, values)
}

fn parse_csv<T: Scalar>(bytes: &[u8]) -> Result<ImageGrid<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| EdgeError::parse(e.valid_up_to(), "invalid UTF-8"))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim().is_empty() {
            continue;
        }
        let mut field_start = line_start;
        let mut count = 0;
        for field in content.split(',') {
            let trimmed = field.trim();
            let v: f64 = trimmed.parse().map_err(|_| {
                EdgeError::parse(field_start, format!("not a number: {trimmed:?}"))
            })?;
            if !v.is_finite() {
                return Err(EdgeError::parse(field_start, "non-finite value"));
            }
            values.push(T::lit(v));
            count += 1;
            field_start += field.len() + 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(EdgeError::parse(
                    line_start,
                    format!("row {rows} has {count} values, expected {w}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let Some(width) = width else {
        return Err(EdgeError::parse(0, "empty CSV image"));
    };
    ImageGrid::from_vec(rows, width, values)
}

/// Write row-major CSV with shortest round-trip float formatting.
pub fn write_csv<T: Scalar>(grid: &ImageGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| EdgeError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    let (n1, _) = grid.dims();
    for i1 in 0..n1 {
        let line: Vec<String> = grid.row(i1).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn ascii_pgm_all_white() {
        let f = write(b"P2\n# white\n4 4\n255\n255 255 255 255\n255 255 255 255\n255 255 255 255\n255 255 255 255\n");
        let g: ImageGrid<f64> = load_image(f.path(), ImageFormat::PgmAscii).unwrap();
        assert_eq!(g.dims(), (4, 4));
        assert!(g.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn binary_pgm_orientation() {
        // width 3, height 2: rows of the file become the first coordinate
        let mut bytes = b"P5 3 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 102, 153, 204, 255]);
        let f = write(&bytes);
        let g: ImageGrid<f64> = load_image(f.path(), ImageFormat::Pgm).unwrap();
        assert_eq!(g.dims(), (2, 3));
        assert_eq!(g.get(0, 1), 0.2);
        assert_eq!(g.get(1, 2), 1.0);
    }

    #[test]
    fn rectangular_pgm_is_accepted() {
        let mut bytes = b"P5\n300 128\n255\n".to_vec();
        bytes.extend((0..300 * 128).map(|k| (k % 256) as u8));
        let f = write(&bytes);
        let g: ImageGrid<f32> = load_image(f.path(), ImageFormat::PgmBinary).unwrap();
        assert_eq!(g.dims(), (128, 300));
    }

    #[test]
    fn pgm_errors_carry_offsets() {
        let f = write(b"P3\n1 1\n255\n0\n");
        let err = load_image::<f64>(f.path(), ImageFormat::Pgm).unwrap_err();
        assert!(matches!(err, EdgeError::Parse { offset: 0, .. }));

        let f = write(b"P2\n2 2\n65535\n0 0 0 0\n");
        let err = load_image::<f64>(f.path(), ImageFormat::Pgm).unwrap_err();
        assert!(matches!(err, EdgeError::Parse { offset: 7, .. }), "{err}");

        let f = write(b"P2\n2 2\n255\n0 0 0\n");
        assert!(matches!(
            load_image::<f64>(f.path(), ImageFormat::Pgm),
            Err(EdgeError::Parse { .. })
        ));

        let f = write(b"P5\n2 2\n255\n\x00\x01");
        assert!(matches!(
            load_image::<f64>(f.path(), ImageFormat::PgmBinary),
            Err(EdgeError::Parse { .. })
        ));

        let f = write(b"P5\n1 1\n255\n\x00");
        assert!(load_image::<f64>(f.path(), ImageFormat::PgmAscii).is_err());
    }

    #[test]
    fn csv_errors() {
        let f = write(b"1,2\n3\n");
        let err = load_image::<f64>(f.path(), ImageFormat::Csv).unwrap_err();
        assert!(matches!(err, EdgeError::Parse { offset: 4, .. }), "{err}");
        let f = write(b"1,x\n");
        let err = load_image::<f64>(f.path(), ImageFormat::Csv).unwrap_err();
        assert!(matches!(err, EdgeError::Parse { offset: 2, .. }), "{err}");
        let f = write(b"");
        assert!(load_image::<f64>(f.path(), ImageFormat::Csv).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image::<f64>("/nonexistent/img.pgm", ImageFormat::Pgm).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/img.pgm"));
    }

    #[test]
    fn csv_round_trip_exact() {
        let g = ImageGrid::<f64>::from_fn(5, 7, |a, b| (a as f64).sin() * 1e-3 + b as f64 / 3.0).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&g, f.path()).unwrap();
        let back: ImageGrid<f64> = load_image(f.path(), ImageFormat::Csv).unwrap();
        assert_eq!(g, back);
    }
}
