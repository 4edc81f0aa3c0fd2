//! Image representation, binary PGM/PPM codecs and the ADDF tensor blob format.
//!
//! Pixels are stored as `f64` in `[0, 1]`, row-major, channel-interleaved.
//! [`Plane`] is the unbounded single-channel grid produced by editing
//! combinations whose output may leave `[0, 1]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Minimum side length so that central differences have an interior pixel.
pub const MIN_SIDE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, checking dimensions, channel count and the `[0,1]` range.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("channels must be 1 or 3, got {channels}")));
        }
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Shape(format!(
                "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    /// Builds a grayscale image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::gray(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sample at `(x, y)` in channel `c`.
    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Applies `f` to every sample (all channels), keeping the geometry.
    /// Values are clamped into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Single-channel view as an unbounded plane. Fails on RGB input.
    pub fn to_plane(&self) -> Result<Plane> {
        if !self.is_gray() {
            return Err(Error::Shape(
                "expected a grayscale image, convert with to_grayscale first".into(),
            ));
        }
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        })
    }
}

/// Single-channel scalar grid without a range constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Shape(format!(
                "plane must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "data length {} != {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Luma conversion with fixed weights 0.299 R + 0.587 G + 0.114 B.
pub fn to_grayscale(img: &Image) -> Image {
    if img.is_gray() {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

// ---------------------------------------------------------------------------
// PNM

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_ws_and_comments(&mut self) {
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
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("missing {what} in PNM header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad {what} in PNM header")))
    }
}

/// Decodes a binary PGM (P5) or PPM (P6) byte stream.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 {
        return Err(Error::Format("file too short for a PNM magic".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        m => {
            return Err(Error::Format(format!(
                "unknown PNM magic {:?}",
                String::from_utf8_lossy(m)
            )))
        }
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::Format("missing whitespace after maxval".into()));
    }
    cur.pos += 1;
    let bytes_per_sample = match maxval {
        255 => 1,
        65535 => 2,
        other => return Err(Error::Unsupported(format!("maxval {other}"))),
    };
    let n = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < n * bytes_per_sample {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!(
                "truncated PNM payload: need {} bytes, have {}",
                n * bytes_per_sample,
                payload.len()
            ),
        )));
    }
    let scale = maxval as f64;
    let data = if bytes_per_sample == 1 {
        payload[..n].iter().map(|&b| b as f64 / scale).collect()
    } else {
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Image::new(width, height, channels, data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_path(path, e))?;
    decode_pnm(&bytes)
}

/// Encodes as P5/P6 with the given maxval (255 or 65535), rounding to nearest.
pub fn encode_pnm(img: &Image, maxval: u16) -> Result<Vec<u8>> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Unsupported(format!("maxval {maxval}")));
    }
    let magic = if img.is_gray() { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width, img.height).into_bytes();
    let scale = maxval as f64;
    for &v in &img.data {
        let q = (v * scale).round() as u32;
        if maxval == 255 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    Ok(out)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pnm(img, maxval)?;
    fs::write(path, bytes).map_err(|e| Error::io_path(path, e))
}

// ---------------------------------------------------------------------------
// ADDF tensor blobs

pub const BLOB_MAGIC: &[u8; 4] = b"ADDF";
pub const BLOB_VERSION: u8 = 1;

/// Dense little-endian `f32` tensor of rank 1 to 3 with a text metadata sidecar.
///
/// File layout: `"ADDF"`, version byte, rank byte, one `u64` LE per
/// dimension, then the payload. Metadata goes to `<path>.meta` as sorted
/// `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorBlob {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if !(1..=3).contains(&shape.len()) {
            return Err(Error::Shape(format!("blob rank {} not in 1..=3", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "blob payload {} != product of shape {expected}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            metadata: BTreeMap::new(),
        })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("blob metadata missing key {key:?}")))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Size in bytes of the fixed header for a blob of this rank.
    pub fn header_len(rank: usize) -> usize {
        4 + 1 + 1 + 8 * rank
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::header_len(self.shape.len()) + 4 * self.data.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.push(BLOB_VERSION);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the binary part; metadata is left empty.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != BLOB_MAGIC {
            return Err(Error::Format("ADDF magic mismatch".into()));
        }
        if bytes[4] != BLOB_VERSION {
            return Err(Error::Format(format!(
                "ADDF version {} unsupported (expected {BLOB_VERSION})",
                bytes[4]
            )));
        }
        let rank = bytes[5] as usize;
        let header = Self::header_len(rank);
        if bytes.len() < header {
            return Err(Error::Format("ADDF header truncated".into()));
        }
        let shape: Vec<usize> = bytes[6..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n: usize = shape.iter().product();
        let payload = &bytes[header..];
        if payload.len() != 4 * n {
            return Err(Error::Format(format!(
                "ADDF payload length {} != 4 x {n}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(shape, data)
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_blob(blob: &TensorBlob, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, blob.to_bytes()).map_err(|e| Error::io_path(path, e))?;
    let mpath = meta_path(path);
    if blob.metadata.is_empty() {
        if mpath.exists() {
            fs::remove_file(&mpath).map_err(|e| Error::io_path(&mpath, e))?;
        }
        return Ok(());
    }
    let mut f = fs::File::create(&mpath).map_err(|e| Error::io_path(&mpath, e))?;
    for (k, v) in &blob.metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Parameter(format!("metadata entry {k:?} not representable")));
        }
        writeln!(f, "{k}={v}").map_err(|e| Error::io_path(&mpath, e))?;
    }
    Ok(())
}

pub fn read_blob(path: impl AsRef<Path>) -> Result<TensorBlob> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_path(path, e))?;
    let mut blob = TensorBlob::from_bytes(&bytes)?;
    let mpath = meta_path(path);
    if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io_path(&mpath, e))?;
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata line {line:?}")))?;
            blob.metadata.insert(k.to_string(), v.to_string());
        }
    }
    Ok(blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pnm(magic: &str, w: usize, h: usize, maxval: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes();
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn p5_all_white_and_black() {
        let img = decode_pnm(&pnm("P5", 3, 3, 255, &[255; 9])).unwrap();
        assert_eq!(img.channels(), 1);
        assert!(img.data().iter().all(|&v| v == 1.0));
        let img = decode_pnm(&pnm("P5", 3, 3, 255, &[0; 9])).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn p6_byte_exact_scaling() {
        let payload: Vec<u8> = [128u8, 0, 255].repeat(8);
        let img = decode_pnm(&pnm("P6", 4, 2, 255, &payload)).unwrap_err();
        // 4x2 violates the 3x3 minimum
        assert!(matches!(img, Error::Shape(_)));

        let payload: Vec<u8> = [128u8, 0, 255].repeat(12);
        let img = decode_pnm(&pnm("P6", 4, 3, 255, &payload)).unwrap();
        assert_eq!(img.channels(), 3);
        for px in img.data().chunks(3) {
            assert_eq!(px, &[128.0 / 255.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn sixteen_bit_big_endian() {
        let mut payload = Vec::new();
        for i in 0..9u16 {
            payload.extend_from_slice(&(i * 1000).to_be_bytes());
        }
        let img = decode_pnm(&pnm("P5", 3, 3, 65535, &payload)).unwrap();
        assert_eq!(img.get(2, 0, 0), 2000.0 / 65535.0);
    }

    #[test]
    fn header_with_comments() {
        let mut bytes = b"P5\n# made by hand\n3 # width\n3\n255\n".to_vec();
        bytes.extend_from_slice(&[10; 9]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.width(), 3);
    }

    #[test]
    fn pnm_errors() {
        assert!(matches!(decode_pnm(b"P3\n3 3\n255\n"), Err(Error::Format(_))));
        assert!(matches!(decode_pnm(b"P5\n3\n"), Err(Error::Format(_))));
        assert!(matches!(
            decode_pnm(&pnm("P5", 3, 3, 100, &[0; 9])),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            decode_pnm(&pnm("P5", 3, 3, 255, &[0; 5])),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn grayscale_weights() {
        let img = Image::new(3, 3, 3, [1.0, 0.0, 0.0].repeat(9)).unwrap();
        let g = to_grayscale(&img);
        assert_eq!(g.channels(), 1);
        assert!((g.get(1, 1, 0) - 0.299).abs() < 1e-15);

        let img = Image::new(3, 3, 3, vec![0.37; 27]).unwrap();
        for &v in to_grayscale(&img).data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
        let gray = Image::gray(3, 3, (0..9).map(|i| i as f64 / 9.0).collect()).unwrap();
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn image_invariants_enforced() {
        assert!(Image::gray(3, 3, vec![1.5; 9]).is_err());
        assert!(Image::gray(2, 3, vec![0.0; 6]).is_err());
        assert!(Image::new(3, 3, 2, vec![0.0; 18]).is_err());
        assert!(Image::gray(3, 3, vec![0.0; 8]).is_err());
    }

    #[test]
    fn blob_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.addf");

        let empty = TensorBlob::new(vec![0], vec![]).unwrap();
        write_blob(&empty, &p).unwrap();
        assert_eq!(read_blob(&p).unwrap(), empty);

        let b = TensorBlob::new(vec![2, 3], (0..6).map(|v| v as f32).collect())
            .unwrap()
            .with_meta("image", "img_0001")
            .with_meta("variant", 2);
        write_blob(&b, &p).unwrap();
        let r = read_blob(&p).unwrap();
        assert_eq!(r, b);
        assert_eq!(r.meta("variant").unwrap(), "2");
    }

    #[test]
    fn blob_large_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.addf");
        let n = 1_000_000;
        let mut state = 0x9e3779b97f4a7c15u64;
        let data: Vec<f32> = (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                f32::from_bits((state >> 32) as u32 & 0x7f7f_ffff)
            })
            .collect();
        let b = TensorBlob::new(vec![n], data).unwrap();
        write_blob(&b, &p).unwrap();
        // magic 4 + version 1 + rank 1 + one u64 dim
        assert_eq!(fs::metadata(&p).unwrap().len() as usize, n * 4 + 14);
        let r = read_blob(&p).unwrap();
        assert!(r.data.iter().zip(&b.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn blob_errors() {
        let good = TensorBlob::new(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(TensorBlob::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(TensorBlob::from_bytes(&bad), Err(Error::Format(_))));
        assert!(TensorBlob::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(TensorBlob::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(TensorBlob::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn pnm_quantization_round_trip(
            w in 3usize..9, h in 3usize..9, rgb in any::<bool>(), seed in any::<u64>()
        ) {
            let c = if rgb { 3 } else { 1 };
            let mut s = seed | 1;
            let data: Vec<f64> = (0..w * h * c).map(|_| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64
            }).collect();
            let img = Image::new(w, h, c, data).unwrap();
            let back = decode_pnm(&encode_pnm(&img, 255).unwrap()).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-15);
            }
        }

        #[test]
        fn grayscale_idempotent(vals in proptest::collection::vec(0.0f64..=1.0, 27)) {
            let img = Image::new(3, 3, 3, vals).unwrap();
            let g = to_grayscale(&img);
            prop_assert_eq!(to_grayscale(&g), g);
        }
    }
}
