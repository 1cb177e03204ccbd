use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::fusion::{write_ply, TriangleMesh};
use crate::geometry::{DepthMap, Image};

pub const DEPTH_MAGIC: &[u8; 4] = b"DMAP";
const DEPTH_HEADER_LEN: usize = 12;

fn io_error(path: &Path, err: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        reason: err.to_string(),
    }
}

/// Writes through a temporary file in the target directory, then renames it
/// into place so readers never see a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), PipelineError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_error(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| io_error(path, e))?;
        w.flush().map_err(|e| io_error(path, e))?;
    }
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(DEPTH_HEADER_LEN + 4 * depth.as_slice().len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    for d in depth.as_slice() {
        out.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap, String> {
    if bytes.len() < DEPTH_HEADER_LEN || &bytes[..4] != DEPTH_MAGIC {
        return Err("missing DMAP header".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(4), word(8));
    let body = &bytes[DEPTH_HEADER_LEN..];
    if w.checked_mul(h).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(format!("{w}x{h} raster does not match {} payload bytes", body.len()));
    }
    let depths = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    DepthMap::from_vec(w, h, depths).map_err(|e| e.to_string())
}

/// Little-endian f32 raster behind a `DMAP`, width, height header.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), PipelineError> {
    let bytes = encode_depth(depth);
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn read_depth(path: &Path) -> Result<DepthMap, PipelineError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_error(path, e))?;
    decode_depth(&bytes).map_err(|reason| PipelineError::Parse {
        file: path.to_path_buf(),
        line: 0,
        reason,
    })
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh) -> Result<(), PipelineError> {
    write_atomic(path, |w| write_ply(mesh, w).map_err(std::io::Error::other))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

/// Decoded PNG samples scaled to [0, 1] per channel.
struct PngSamples {
    width: usize,
    height: usize,
    channels: usize,
    raw: Vec<u16>,
    max: f32,
}

fn decode_png(path: &Path) -> Result<PngSamples, PipelineError> {
    let bad = |reason: String| PipelineError::Parse {
        file: path.to_path_buf(),
        line: 0,
        reason,
    };
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(bad("unexpanded palette image".into())),
    };
    let (raw, max) = match info.bit_depth {
        png::BitDepth::Eight => (buf.iter().map(|b| *b as u16).collect(), 255.0),
        png::BitDepth::Sixteen => (buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(), 65535.0),
        other => return Err(bad(format!("unsupported bit depth {other:?}"))),
    };
    Ok(PngSamples {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        raw,
        max,
    })
}

/// Grayscale or RGB(A) PNG at 8 or 16 bits, converted to luma in [0, 1].
pub fn read_image_png(path: &Path) -> Result<Image, PipelineError> {
    let s = decode_png(path)?;
    let bad = |e: crate::geometry::GeometryError| PipelineError::Parse {
        file: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    };
    let norm = |v: u16| v as f32 / s.max;
    match s.channels {
        1 | 2 => Image::new(s.width, s.height, s.raw.iter().step_by(s.channels).map(|v| norm(*v)).collect()).map_err(bad),
        _ => {
            let rgb: Vec<f32> = s.raw.chunks_exact(s.channels).flat_map(|c| c[..3].iter().map(|v| norm(*v))).collect();
            Image::from_rgb(s.width, s.height, &rgb).map_err(bad)
        }
    }
}

/// Single-channel 16-bit PNG; zero stays invalid, other values are multiplied by `scale`.
pub fn read_depth_png(path: &Path, scale: f64) -> Result<DepthMap, PipelineError> {
    let s = decode_png(path)?;
    if s.channels != 1 || s.max != 65535.0 {
        return Err(PipelineError::Parse {
            file: path.to_path_buf(),
            line: 0,
            reason: "depth images must be 16-bit grayscale".into(),
        });
    }
    let depths = s.raw.iter().map(|v| *v as f64 * scale).collect();
    DepthMap::from_vec(s.width, s.height, depths).map_err(|e| PipelineError::Internal(e.to_string()))
}

fn write_gray16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<(), PipelineError> {
    let mut bytes = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        bytes.extend_from_slice(&s.to_be_bytes());
    }
    write_atomic(path, |w| {
        let mut enc = png::Encoder::new(w, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(std::io::Error::other)?;
        writer.write_image_data(&bytes).map_err(std::io::Error::other)?;
        writer.finish().map_err(std::io::Error::other)
    })
}

pub fn write_image_png(path: &Path, image: &Image) -> Result<(), PipelineError> {
    let samples: Vec<u16> = image.pixels().iter().map(|p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    write_gray16(path, image.width(), image.height(), &samples)
}

/// Depths are stored as `round(d / scale)`; depths that do not fit are written as invalid.
pub fn write_depth_png(path: &Path, depth: &DepthMap, scale: f64) -> Result<(), PipelineError> {
    let samples: Vec<u16> = depth
        .as_slice()
        .iter()
        .map(|d| {
            let v = (d / scale).round();
            if *d > 0.0 && v >= 1.0 && v <= u16::MAX as f64 {
                v as u16
            } else {
                0
            }
        })
        .collect();
    write_gray16(path, depth.width(), depth.height(), &samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_raster_is_28_bytes() {
        let d = DepthMap::from_vec(2, 2, vec![1.0, 0.0, 2.5, 3.25]).unwrap();
        let bytes = encode_depth(&d);
        assert_eq!(bytes.len(), 12 + 16);
        assert_eq!(&bytes[..4], b"DMAP");
        assert_eq!(decode_depth(&bytes).unwrap(), d);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let bytes = encode_depth(&DepthMap::constant(3, 2, 1.0));
        assert!(decode_depth(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_depth(b"DMA").is_err());
    }

    #[test]
    fn depth_png_uses_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let d = DepthMap::from_vec(3, 1, vec![1.0, 0.0, 0.5]).unwrap();
        write_depth_png(&path, &d, 1.0 / 5000.0).unwrap();
        let back = read_depth_png(&path, 1.0 / 5000.0).unwrap();
        assert_eq!(back.get(0, 0), Some(1.0));
        assert_eq!(back.get(1, 0), None);
        assert_eq!(back.get(2, 0), Some(0.5));
        let raw = decode_png(&path).unwrap();
        assert_eq!(raw.raw, vec![5000, 0, 2500]);
    }

    #[test]
    fn image_png_round_trips_to_16_bit_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let img = Image::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        write_image_png(&path, &img).unwrap();
        let back = read_image_png(&path).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn eight_bit_rgb_becomes_luma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[255, 0, 0]).unwrap();
        w.finish().unwrap();
        let img = read_image_png(&path).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-6);
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("x.dmap");
        assert!(matches!(write_depth(&path, &DepthMap::constant(1, 1, 1.0)), Err(PipelineError::Io { .. })));
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        let res = write_atomic(&path, |_| Err(std::io::Error::other("boom")));
        assert!(res.is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
