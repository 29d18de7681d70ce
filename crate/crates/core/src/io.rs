//! Frame files, pair manifests and the synthetic translating-texture set.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::train::FramePair;

/// Parses a binary P6 pixmap with maxval 255 into a `1×3×H×W` frame.
pub fn parse_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("pixmap header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or(""));
    }
    if fields[0] != "P6" {
        return Err(Error::format("pixmap", format!("expected P6, found {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::format("pixmap", format!("bad {what} {s:?}")))
    };
    let (w, h, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if maxval != 255 {
        return Err(Error::format("pixmap", format!("maxval {maxval}, only 255 is supported")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format("pixmap", "empty image"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Truncated("pixmap header"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    let need = w * h * 3;
    if raster.len() < need {
        return Err(Error::Truncated("pixmap raster"));
    }
    let inv = 1.0 / 255.0;
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        T::lit(raster[(y * w + x) * 3 + c] as f64 * inv)
    }))
}

/// Serializes a `1×3×H×W` frame as P6, rounding to 8 bits.
pub fn encode_ppm<T: Scalar>(frame: &Tensor<T>) -> Result<Vec<u8>> {
    let s = frame.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::invalid(format!("expected a 1×3×H×W frame, got {s}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.reserve(s.h * s.w * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(to_byte(frame.at(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

fn to_byte<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantizes a frame to 8-bit values, as a round trip through P6 would.
pub fn quantize_frame<T: Scalar>(frame: &Tensor<T>) -> Tensor<T> {
    frame.map(|v| T::lit(to_byte(v) as f64 / 255.0))
}

pub fn read_ppm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_ppm(&bytes).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn write_ppm<T: Scalar>(path: &Path, frame: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode_ppm(frame)?)
}

/// One manifest line.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ManifestEntry {
    pub prev: PathBuf,
    pub cur: PathBuf,
}

/// Parses `prev<TAB>cur` lines. Relative paths resolve against `base`.
/// Blank lines are ignored.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => out.push(ManifestEntry {
                prev: base.join(a),
                cur: base.join(b),
            }),
            _ => {
                return Err(Error::format(
                    "manifest",
                    format!("line {}: expected two tab-separated paths", n + 1),
                ))
            }
        }
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn load_pair<T: Scalar>(entry: &ManifestEntry) -> Result<FramePair<T>> {
    let prev = read_ppm(&entry.prev)?;
    let cur = read_ppm(&entry.cur)?;
    if prev.shape() != cur.shape() {
        return Err(Error::ShapeMismatch {
            op: "frame pair",
            left: prev.shape(),
            right: cur.shape(),
        });
    }
    Ok(FramePair { prev, cur })
}

/// Loads every readable pair; unreadable ones are logged and counted.
pub fn load_pairs<T: Scalar>(entries: &[ManifestEntry]) -> (Vec<FramePair<T>>, usize) {
    let mut pairs = Vec::with_capacity(entries.len());
    let mut skipped = 0;
    for e in entries {
        match load_pair(e) {
            Ok(p) => pairs.push(p),
            Err(err) => {
                log::warn!("skipping {} / {}: {err}", e.prev.display(), e.cur.display());
                skipped += 1;
            }
        }
    }
    (pairs, skipped)
}

/// Largest shift between the two frames of a synthetic pair, in pixels.
pub const MAX_SHIFT: usize = 4;

fn smooth_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        let sy = ty * ty * (3.0 - 2.0 * ty);
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let sx = tx * tx * (3.0 - 2.0 * tx);
            let g = |a: usize, b: usize| grid[a * gw + b];
            let top = g(y0, x0) * (1.0 - sx) + g(y0, x0 + 1) * sx;
            let bot = g(y0 + 1, x0) * (1.0 - sx) + g(y0 + 1, x0 + 1) * sx;
            out[y * w + x] = top * (1.0 - sy) + bot * sy;
        }
    }
    out
}

/// A random colored texture of `h×w`, values in `[0,1]`.
pub fn random_texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    let coarse = smooth_noise(rng, h, w, 8);
    let fine = smooth_noise(rng, h, w, 3);
    let tint: [f64; 3] = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
    let offset: [f64; 3] = [rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3)];
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let v = 0.7 * coarse[y * w + x] + 0.3 * fine[y * w + x];
        (offset[c] + tint[c] * v).clamp(0.0, 1.0)
    })
}

/// Two windows of one texture, the second displaced by up to
/// [`MAX_SHIFT`] pixels along each axis. Values are 8-bit quantized.
pub fn synthetic_pair<T: Scalar>(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FramePair<T> {
    let m = MAX_SHIFT;
    let tex = random_texture(rng, h + 2 * m, w + 2 * m);
    let dy = rng.gen_range(0..=2 * m);
    let dx = rng.gen_range(0..=2 * m);
    let window = |oy: usize, ox: usize| {
        quantize_frame(&Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
            T::lit(tex.at(0, c, y + oy, x + ox))
        }))
    };
    FramePair {
        prev: window(m, m),
        cur: window(dy, dx),
    }
}

/// `count` synthetic pairs from `seed`.
pub fn synthetic_set<T: Scalar>(seed: u64, count: usize, h: usize, w: usize) -> Vec<FramePair<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_pair(&mut rng, h, w)).collect()
}
