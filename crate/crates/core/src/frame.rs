//! Point-cloud frame files.
//!
//! Text form (CSV):
//!
//! ```text
//! frame_id,pose_x,pose_y,pose_z,focal_length,baseline,disparity_noise,count
//! 3,-27.9,0,19.5,500,0.25,0.5,2
//! world_x,world_y,height,depth,variance
//! -28.1,0.2,0.01,19.49,0.0577
//! ...
//! ```
//!
//! Binary form: the 8-byte magic `ELVPCF01`, then the eight header fields and
//! five fields per point, all as little-endian `f64` in the order above.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::pyramid::{CameraModel, Measurement};
use crate::synth::Frame;

pub const BINARY_MAGIC: &[u8; 8] = b"ELVPCF01";
const HEADER: [&str; 8] = [
    "frame_id",
    "pose_x",
    "pose_y",
    "pose_z",
    "focal_length",
    "baseline",
    "disparity_noise",
    "count",
];
const POINT_HEADER: [&str; 5] = ["world_x", "world_y", "height", "depth", "variance"];

#[derive(Debug, Error)]
pub enum FrameIoError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
    #[error("{0}")]
    Malformed(String),
}

fn format_err(line: u64, message: impl Into<String>) -> FrameIoError {
    FrameIoError::Format {
        line,
        message: message.into(),
    }
}

pub fn write_frame_csv<W: Write>(w: W, frame: &Frame) -> Result<(), FrameIoError> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    out.write_record(HEADER)?;
    let c = &frame.camera;
    out.write_record(
        [
            frame.id as f64,
            frame.pose.0,
            frame.pose.1,
            frame.pose.2,
            c.focal_length,
            c.baseline,
            c.disparity_noise,
            frame.measurements.len() as f64,
        ]
        .iter()
        .map(|v| v.to_string()),
    )?;
    out.write_record(POINT_HEADER)?;
    for m in &frame.measurements {
        out.write_record([m.world_x, m.world_y, m.height, m.depth, m.variance].iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_frame_csv<R: Read>(r: R) -> Result<Frame, FrameIoError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(r);
    let mut records = rd.records();
    let mut next = |what: &str| -> Result<csv::StringRecord, FrameIoError> {
        records.next().ok_or_else(|| FrameIoError::Malformed(format!("missing {what}")))?.map_err(Into::into)
    };
    let line_of = |rec: &csv::StringRecord| rec.position().map_or(0, |p| p.line());
    let parse = |rec: &csv::StringRecord, n: usize| -> Result<Vec<f64>, FrameIoError> {
        if rec.len() != n {
            return Err(format_err(line_of(rec), format!("expected {n} fields, found {}", rec.len())));
        }
        rec.iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| format_err(line_of(rec), format!("bad number {f:?}"))))
            .collect()
    };

    let head = next("header")?;
    if head.iter().ne(HEADER) {
        return Err(format_err(line_of(&head), "unexpected frame header"));
    }
    let vals_rec = next("frame record")?;
    let vals = parse(&vals_rec, HEADER.len())?;
    let count = vals[7];
    if !(count >= 0.0 && count.fract() == 0.0) || !(vals[0] >= 0.0 && vals[0].fract() == 0.0) {
        return Err(format_err(line_of(&vals_rec), "frame id and count must be non-negative integers"));
    }
    let ph = next("point header")?;
    if ph.iter().ne(POINT_HEADER) {
        return Err(format_err(line_of(&ph), "unexpected point header"));
    }
    let mut measurements = Vec::with_capacity(count as usize);
    for rec in records {
        let rec = rec?;
        let v = parse(&rec, POINT_HEADER.len())?;
        measurements.push(Measurement {
            world_x: v[0],
            world_y: v[1],
            height: v[2],
            depth: v[3],
            variance: v[4],
        });
    }
    if measurements.len() != count as usize {
        return Err(FrameIoError::Malformed(format!("header declares {count} points, found {}", measurements.len())));
    }
    Ok(Frame {
        id: vals[0] as u64,
        pose: (vals[1], vals[2], vals[3]),
        camera: CameraModel {
            focal_length: vals[4],
            baseline: vals[5],
            disparity_noise: vals[6],
        },
        measurements,
    })
}

pub fn write_frame_binary<W: Write>(mut w: W, frame: &Frame) -> io::Result<()> {
    let c = &frame.camera;
    let mut buf = Vec::with_capacity(8 + 8 * (8 + 5 * frame.measurements.len()));
    buf.extend_from_slice(BINARY_MAGIC);
    for v in [
        frame.id as f64,
        frame.pose.0,
        frame.pose.1,
        frame.pose.2,
        c.focal_length,
        c.baseline,
        c.disparity_noise,
        frame.measurements.len() as f64,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for m in &frame.measurements {
        for v in [m.world_x, m.world_y, m.height, m.depth, m.variance] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn read_frame_binary<R: Read>(mut r: R) -> Result<Frame, FrameIoError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 + 64 || &bytes[..8] != BINARY_MAGIC {
        return Err(FrameIoError::Malformed("missing binary frame magic or header".into()));
    }
    let vals: Vec<f64> = bytes[8..]
        .chunks(8)
        .map(|b| b.try_into().map(f64::from_le_bytes))
        .collect::<Result<_, _>>()
        .map_err(|_| FrameIoError::Malformed("payload is not a whole number of f64 values".into()))?;
    let count = vals[7];
    if !(count >= 0.0 && count.fract() == 0.0) || vals.len() != 8 + 5 * count as usize {
        return Err(FrameIoError::Malformed("point count does not match payload size".into()));
    }
    let measurements = vals[8..]
        .chunks_exact(5)
        .map(|v| Measurement {
            world_x: v[0],
            world_y: v[1],
            height: v[2],
            depth: v[3],
            variance: v[4],
        })
        .collect();
    Ok(Frame {
        id: vals[0] as u64,
        pose: (vals[1], vals[2], vals[3]),
        camera: CameraModel {
            focal_length: vals[4],
            baseline: vals[5],
            disparity_noise: vals[6],
        },
        measurements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Frame {
        Frame {
            id: 7,
            pose: (-1.5, 0.25, 19.75),
            camera: CameraModel::default(),
            measurements: vec![
                Measurement { world_x: 0.1, world_y: -0.2, height: 0.012345678901234, depth: 19.7, variance: 0.0577 },
                Measurement { world_x: 1e-3, world_y: 2.0, height: -0.5, depth: 20.25, variance: 1.0 / 3.0 },
            ],
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut buf = Vec::new();
        write_frame_csv(&mut buf, &sample()).unwrap();
        assert!(buf.starts_with(b"frame_id,pose_x,pose_y,pose_z,focal_length,baseline,disparity_noise,count\n7,-1.5,"));
        assert_eq!(read_frame_csv(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let mut buf = Vec::new();
        write_frame_binary(&mut buf, &sample()).unwrap();
        assert_eq!(buf.len(), 8 + 8 * (8 + 10));
        assert_eq!(read_frame_binary(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn malformed_csv_is_reported_with_line() {
        let text = "frame_id,pose_x,pose_y,pose_z,focal_length,baseline,disparity_noise,count\n1,0,0,10,500,0.25,0.5,1\nworld_x,world_y,height,depth,variance\n0,0,abc,10,1\n";
        match read_frame_csv(text.as_bytes()) {
            Err(FrameIoError::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let short = "frame_id,pose_x,pose_y,pose_z,focal_length,baseline,disparity_noise,count\n1,0,0,10,500,0.25,0.5,2\nworld_x,world_y,height,depth,variance\n0,0,0,10,1\n";
        assert!(read_frame_csv(short.as_bytes()).is_err());
    }
}
