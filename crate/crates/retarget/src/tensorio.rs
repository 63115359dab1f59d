//! On-disk formats shared by every stage and by external exporters.
//!
//! * FGRID: `"FGRD"`, then `H W C` as little-endian u32, then `H*W*C` little-endian f32,
//!   row-major with channels fastest.
//! * FGR4: `"FGR4"`, four little-endian u32 dims, then the f32 payload.
//! * Masks: binary PGM (P5, maxval 255); values of 128 and above are foreground.
//! * Frames: a directory of numbered binary PPM (P6, maxval 255) files.
//! * TRACKS: text, header `TRACKS F m`, then one line per frame of `m` triples `x y v`.

use std::fs;
use std::path::{Path, PathBuf};

use retarget_core::{BinaryMask, FeatureGrid, Frame, FrameSequence, KeypointSequence, Tensor4, TrackPoint};

use crate::error::{Error, Result};

pub const FGRID_MAGIC: &[u8; 4] = b"FGRD";
pub const FGR4_MAGIC: &[u8; 4] = b"FGR4";

type Decoded<T> = std::result::Result<T, String>;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_tensor(magic: &[u8; 4], dims: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(magic);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_tensor<const N: usize>(magic: &[u8; 4], bytes: &[u8]) -> Decoded<([usize; N], Vec<f32>)> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(format!("bad magic at byte offset 0, expected {:?}", String::from_utf8_lossy(magic)));
    }
    let header = 4 + 4 * N;
    if bytes.len() < header {
        return Err(format!("header truncated at byte offset {}, need {header} bytes", bytes.len()));
    }
    let mut dims = [0usize; N];
    for (i, d) in dims.iter_mut().enumerate() {
        let o = 4 + 4 * i;
        *d = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format!("declared dims {dims:?} overflow"))?;
    let expected = header + count;
    if bytes.len() < expected {
        return Err(format!(
            "payload truncated at byte offset {}, dims {dims:?} need {expected} bytes",
            bytes.len()
        ));
    }
    if bytes.len() > expected {
        return Err(format!("{} trailing bytes after byte offset {expected}", bytes.len() - expected));
    }
    let mut data = Vec::with_capacity(count / 4);
    for (i, chunk) in bytes[header..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format!("non-finite value {v} at byte offset {}", header + 4 * i));
        }
        data.push(v);
    }
    Ok((dims, data))
}

pub fn encode_fgrid(grid: &FeatureGrid) -> Vec<u8> {
    encode_tensor(FGRID_MAGIC, &[grid.height(), grid.width(), grid.channels()], grid.data())
}

pub fn decode_fgrid(bytes: &[u8]) -> Decoded<FeatureGrid> {
    let ([h, w, c], data) = decode_tensor::<3>(FGRID_MAGIC, bytes)?;
    FeatureGrid::new(h, w, c, data).map_err(|e| e.to_string())
}

pub fn read_fgrid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    decode_fgrid(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_fgrid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_fgrid(grid))
}

pub fn encode_fgr4(tensor: &Tensor4) -> Vec<u8> {
    encode_tensor(FGR4_MAGIC, &tensor.dims(), tensor.data())
}

pub fn decode_fgr4(bytes: &[u8]) -> Decoded<Tensor4> {
    let (dims, data) = decode_tensor::<4>(FGR4_MAGIC, bytes)?;
    Tensor4::new(dims, data).map_err(|e| e.to_string())
}

pub fn read_fgr4(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    decode_fgr4(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_fgr4(tensor: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_fgr4(tensor))
}

/// Parses a binary netpbm header and returns `(width, height, payload offset)`.
fn parse_netpbm_header(bytes: &[u8], magic: &[u8; 2]) -> Decoded<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!("expected {} header", String::from_utf8_lossy(magic)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("malformed header field {} at byte offset {start}", i + 1));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| format!("header field at byte offset {start} is out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format!("expected whitespace after maxval at byte offset {pos}"));
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval must be 255, got {maxval}"));
    }
    Ok((w, h, pos + 1))
}

fn check_payload(bytes: &[u8], offset: usize, expected: usize) -> Decoded<&[u8]> {
    let have = bytes.len() - offset;
    if have != expected {
        return Err(format!("payload holds {have} bytes, header declares {expected}"));
    }
    Ok(&bytes[offset..])
}

pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn decode_mask_pgm(bytes: &[u8]) -> Decoded<BinaryMask> {
    let (w, h, offset) = parse_netpbm_header(bytes, b"P5")?;
    let payload = check_payload(bytes, offset, w * h)?;
    BinaryMask::new(h, w, payload.iter().map(|&v| v >= 128).collect()).map_err(|e| e.to_string())
}

pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    decode_mask_pgm(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_mask_pgm(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask_pgm(mask))
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.data());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Decoded<Frame> {
    let (w, h, offset) = parse_netpbm_header(bytes, b"P6")?;
    let payload = check_payload(bytes, offset, w * h * 3)?;
    Frame::new(h, w, payload.to_vec()).map_err(|e| e.to_string())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    decode_ppm(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_ppm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_ppm(frame))
}

/// Numbered `.ppm` files of a directory, sorted by index. Stems must be all digits.
fn numbered_ppms(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let index = stem.parse().map_err(|_| Error::format(&path, "frame index out of range"))?;
        out.push((index, path));
    }
    out.sort();
    Ok(out)
}

/// Reads `dir/NNNN.ppm` frames in index order. Indices must be consecutive; the first one
/// may be any number.
pub fn read_frames_ppm(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let files = numbered_ppms(dir)?;
    if files.is_empty() {
        return Err(Error::format(dir, "no numbered .ppm frames"));
    }
    for pair in files.windows(2) {
        if pair[1].0 == pair[0].0 {
            return Err(Error::format(&pair[1].1, format!("frame index {} appears twice", pair[0].0)));
        }
        if pair[1].0 != pair[0].0 + 1 {
            return Err(Error::format(
                dir,
                format!("gap in frame numbering: {} is followed by {}", pair[0].0, pair[1].0),
            ));
        }
    }
    let mut frames = Vec::with_capacity(files.len());
    for (_, path) in &files {
        let frame = read_ppm(path)?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if (frame.width(), frame.height()) != (first.width(), first.height()) {
                return Err(Error::format(
                    path,
                    format!(
                        "frame is {}x{} but the first frame is {}x{}",
                        frame.width(),
                        frame.height(),
                        first.width(),
                        first.height()
                    ),
                ));
            }
        }
        frames.push(frame);
    }
    Ok(FrameSequence::new(frames)?)
}

/// Writes frames as `dir/0000.ppm`, `dir/0001.ppm`, ... and removes numbered `.ppm` files
/// left over from a longer sequence.
pub fn write_frames_ppm(frames: &FrameSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (index, path) in numbered_ppms(dir)? {
        if index >= frames.len() as u64 || path.file_name() != Some(frame_file_name(index as usize).as_ref()) {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    for (t, frame) in frames.frames().iter().enumerate() {
        write_ppm(frame, dir.join(frame_file_name(t)))?;
    }
    Ok(())
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:04}.ppm")
}

pub fn encode_tracks(tracks: &KeypointSequence) -> String {
    let mut out = format!("TRACKS {} {}\n", tracks.frame_count(), tracks.point_count());
    for row in tracks.frames() {
        let line: Vec<String> =
            row.iter().map(|p| format!("{} {} {}", p.pos.x, p.pos.y, u8::from(p.visible))).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split_ascii_whitespace().map(move |tok| (tok.as_ptr() as usize - line.as_ptr() as usize + 1, tok))
}

pub fn decode_tracks(text: &str) -> Decoded<KeypointSequence> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or("empty file, expected header \"TRACKS F m\"")?;
    let head: Vec<_> = tokens(header).collect();
    if head.len() != 3 || head[0].1 != "TRACKS" {
        return Err("line 1: expected header \"TRACKS F m\"".into());
    }
    let count = |(col, tok): (usize, &str)| -> Decoded<usize> {
        tok.parse().map_err(|_| format!("line 1, column {col}: expected a count, found {tok:?}"))
    };
    let (frames, points) = (count(head[1])?, count(head[2])?);
    let mut rows = Vec::with_capacity(frames);
    for (lineno, line) in lines {
        let toks: Vec<_> = tokens(line).collect();
        if toks.is_empty() {
            continue;
        }
        if rows.len() == frames {
            return Err(format!("line {lineno}: header declares {frames} frames but more rows follow"));
        }
        if toks.len() != 3 * points {
            return Err(format!(
                "line {lineno}: expected {points} triples ({} values), found {} values",
                3 * points,
                toks.len()
            ));
        }
        let mut row = Vec::with_capacity(points);
        for triple in toks.chunks_exact(3) {
            let coord = |(col, tok): (usize, &str)| -> Decoded<f64> {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("line {lineno}, column {col}: expected a finite number, found {tok:?}"))
            };
            let (x, y) = (coord(triple[0])?, coord(triple[1])?);
            let visible = match triple[2].1 {
                "0" => false,
                "1" => true,
                other => {
                    return Err(format!(
                        "line {lineno}, column {}: visibility must be 0 or 1, found {other:?}",
                        triple[2].0
                    ))
                }
            };
            row.push(TrackPoint { pos: retarget_core::Point2::new(x, y), visible });
        }
        rows.push(row);
    }
    if rows.len() != frames {
        return Err(format!("header declares {frames} frames but {} rows follow", rows.len()));
    }
    KeypointSequence::new(points, rows).map_err(|e| e.to_string())
}

pub fn read_tracks(path: impl AsRef<Path>) -> Result<KeypointSequence> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, format!("not UTF-8: {e}")))?;
    decode_tracks(text).map_err(|m| Error::format(path, m))
}

pub fn write_tracks(tracks: &KeypointSequence, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), encode_tracks(tracks).as_bytes())
}

/// Visible positions must lie inside a `width` x `height` frame.
pub fn check_tracks_in_bounds(tracks: &KeypointSequence, width: usize, height: usize) -> std::result::Result<(), String> {
    for (t, row) in tracks.frames().iter().enumerate() {
        for (i, p) in row.iter().enumerate() {
            let inside = (-0.5..width as f64 - 0.5).contains(&p.pos.x) && (-0.5..height as f64 - 0.5).contains(&p.pos.y);
            if p.visible && !inside {
                return Err(format!(
                    "frame {t}, point {i}: visible position ({}, {}) lies outside the {width}x{height} frame",
                    p.pos.x, p.pos.y
                ));
            }
        }
    }
    Ok(())
}
