//! Dense row-major rasters and the `DEMR1` raster container.
//!
//! File layout: one ASCII header line
//!
//! ```text
//! DEMR1 <width> <height> <resolution> <origin_x> <origin_y> <layer> <channel>\n
//! ```
//!
//! followed by `width * height` little-endian `f32` values in row-major order
//! (row 0 is the southern edge, `origin_y`). Empty cells are quiet NaN.

use std::io::{self, BufRead, Write};

use thiserror::Error;

pub const RASTER_MAGIC: &str = "DEMR1";

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let i = self.index(row, col);
        self.data[i] = value;
    }

    /// Signed lookup; `None` outside the raster.
    #[inline]
    pub fn get_signed(&self, row: isize, col: isize) -> Option<&T> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            None
        } else {
            Some(self.get(row as usize, col as usize))
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Georeferencing and labelling carried in a `DEMR1` header.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMeta {
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub layer: usize,
    pub channel: String,
}

#[derive(Debug, Error)]
pub enum RasterIoError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad raster header: {0}")]
    Header(String),
    #[error("raster payload truncated: expected {expected} values")]
    Truncated { expected: usize },
}

pub fn write_demr1<W: Write>(mut w: W, raster: &Raster<f32>, meta: &RasterMeta) -> io::Result<()> {
    if meta.channel.contains(char::is_whitespace) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "channel name contains whitespace"));
    }
    writeln!(
        w,
        "{RASTER_MAGIC} {} {} {} {} {} {} {}",
        raster.width, raster.height, meta.resolution, meta.origin_x, meta.origin_y, meta.layer, meta.channel
    )?;
    let mut buf = Vec::with_capacity(raster.data.len() * 4);
    for v in &raster.data {
        let v = if v.is_nan() { f32::NAN } else { *v };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_demr1<R: BufRead>(mut r: R) -> Result<(Raster<f32>, RasterMeta), RasterIoError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 8 || fields[0] != RASTER_MAGIC {
        return Err(RasterIoError::Header(line.trim_end().to_string()));
    }
    let bad = |what: &str| RasterIoError::Header(format!("invalid {what}"));
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let meta = RasterMeta {
        resolution: fields[3].parse().map_err(|_| bad("resolution"))?,
        origin_x: fields[4].parse().map_err(|_| bad("origin_x"))?,
        origin_y: fields[5].parse().map_err(|_| bad("origin_y"))?,
        layer: fields[6].parse().map_err(|_| bad("layer"))?,
        channel: fields[7].to_string(),
    };
    let n = width * height;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| RasterIoError::Truncated { expected: n })?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((Raster { width, height, data }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn demr1_roundtrip(w in 1usize..12, h in 1usize..12, seed in any::<u32>(), layer in 0usize..4) {
            let raster = Raster::from_fn(w, h, |r, c| {
                let v = ((r * 31 + c * 7) as u32 ^ seed) as f32 * 1e-3;
                if (r + c) % 5 == 0 { f32::NAN } else { v }
            });
            let meta = RasterMeta { resolution: 0.05, origin_x: -12.0, origin_y: 3.5, layer, channel: "mean".into() };
            let mut buf = Vec::new();
            write_demr1(&mut buf, &raster, &meta).unwrap();
            let (back, m2) = read_demr1(io::Cursor::new(buf)).unwrap();
            prop_assert_eq!(m2, meta);
            prop_assert_eq!(back.width, w);
            for (a, b) in raster.data.iter().zip(&back.data) {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }

    #[test]
    fn header_layout() {
        let raster = Raster::filled(2, 1, 1.0f32);
        let meta = RasterMeta { resolution: 0.1, origin_x: 0.0, origin_y: -1.0, layer: 2, channel: "count".into() };
        let mut buf = Vec::new();
        write_demr1(&mut buf, &raster, &meta).unwrap();
        assert!(buf.starts_with(b"DEMR1 2 1 0.1 0 -1 2 count\n"));
        assert_eq!(&buf[buf.len() - 4..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_demr1(io::Cursor::new(b"DEMR2 1 1 1 0 0 0 x\n\0\0\0\0".to_vec())).is_err());
        assert!(matches!(
            read_demr1(io::Cursor::new(b"DEMR1 2 2 1 0 0 0 x\n\0\0".to_vec())),
            Err(RasterIoError::Truncated { .. })
        ));
    }
}
