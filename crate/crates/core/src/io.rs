//! File formats: the binary tensor container, point-cloud CSV/PLY,
//! observation CSV, JSON documents and PPM images.
//!
//! Tensor layout (all little-endian):
//!
//! ```text
//! "SDDR" | version u16 | dtype u8 (0 = f32) | rank u8 | dims u32 x rank
//! | n_cal u32 | calibration f64 x n_cal | payload f32 x prod(dims)
//! | crc32 u32 over every preceding byte
//! ```
//!
//! Payloads are row-major with the last axis fastest.

use std::fs;
use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::cube::{PolarGrid, RadarCube, Sddr};
use crate::diffusion::{DopplerProfile, Volume};
use crate::eve::{DopplerObservation, EgoVelocity};
use crate::metrics::{Point, PointCloud};
use crate::simulate::AdcFrame;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDDR";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub calibration: Vec<f64>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, calibration: Vec<f64>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::DimensionMismatch { expected: dims, found: vec![data.len()] });
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|d| *d > u32::MAX as usize) {
            return Err(Error::Format(format!("dims {dims:?} do not fit the header")));
        }
        Ok(Self { dims, calibration, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.dims.len() + 8 * self.calibration.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.calibration.len() as u32).to_le_bytes());
        for c in &self.calibration {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 1 + 1 + 4 + 4 {
            return Err(Error::Format(format!("{} bytes is too short for a tensor file", bytes.len())));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if &body[..4] != MAGIC {
            return Err(Error::Format("missing SDDR magic".into()));
        }
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut cur = Cursor { bytes: body, pos: 4 };
        let version = u16::from_le_bytes(cur.take::<2>()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let [dtype] = cur.take::<1>()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype tag {dtype}")));
        }
        let [rank] = cur.take::<1>()?;
        let dims = (0..rank)
            .map(|_| cur.take::<4>().map(|b| u32::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_cal = u32::from_le_bytes(cur.take::<4>()?) as usize;
        let calibration = (0..n_cal)
            .map(|_| cur.take::<8>().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d));
        let remaining = body.len() - cur.pos;
        if n.and_then(|n| n.checked_mul(4)) != Some(remaining) {
            return Err(Error::Format(format!("payload of {remaining} bytes does not match dims {dims:?}")));
        }
        let data = body[cur.pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, calibration, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.dims.len() != rank {
            return Err(Error::Format(format!("{what} tensor must have rank {rank}, found dims {:?}", self.dims)));
        }
        Ok(())
    }

    fn grid(&self) -> Result<PolarGrid> {
        PolarGrid::from_calibration(&self.calibration)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("tensor header is truncated".into()))?;
        self.pos = end;
        Ok(slice.try_into().expect("exact length"))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// ADC frame as `(antenna, chirp, sample, 2)` with re/im last.
pub fn adc_to_tensor(adc: &AdcFrame) -> Tensor {
    let [a, c, s] = adc.dims();
    let data = adc.samples().iter().flat_map(|z| [z.re as f32, z.im as f32]).collect();
    Tensor::new(vec![a, c, s, 2], vec![], data).expect("consistent dims")
}

pub fn tensor_to_adc(t: &Tensor) -> Result<AdcFrame> {
    t.expect_rank(4, "ADC")?;
    if t.dims[3] != 2 {
        return Err(Error::Format(format!("ADC tensor needs a trailing axis of 2, found {:?}", t.dims)));
    }
    let samples = t.data.chunks_exact(2).map(|c| Complex64::new(c[0] as f64, c[1] as f64)).collect();
    AdcFrame::from_vec([t.dims[0], t.dims[1], t.dims[2]], samples)
}

pub fn cube_to_tensor(cube: &RadarCube) -> Tensor {
    let data = cube.magnitudes().iter().map(|m| *m as f32).collect();
    Tensor::new(cube.dims().to_vec(), cube.grid.to_calibration(), data).expect("consistent dims")
}

pub fn tensor_to_cube(t: &Tensor) -> Result<RadarCube> {
    t.expect_rank(4, "cube")?;
    let grid = t.grid()?;
    let dims = [grid.range_bins, grid.azimuth_bins, grid.elevation_bins, grid.doppler_bins];
    if t.dims != dims {
        return Err(Error::DimensionMismatch { expected: dims.to_vec(), found: t.dims.clone() });
    }
    RadarCube::from_vec(grid, t.data.iter().map(|x| *x as f64).collect())
}

/// SDDR as `(R, A, E, 2)` holding `[u, v]`, with NaN for invalid Doppler.
pub fn sddr_to_tensor(sddr: &Sddr) -> Tensor {
    let [r, a, e] = sddr.occupancy.dims();
    let data = sddr
        .occupancy
        .values()
        .iter()
        .zip(sddr.doppler.velocities())
        .flat_map(|(u, v)| [*u as f32, v.map_or(f32::NAN, |v| v as f32)])
        .collect();
    Tensor::new(vec![r, a, e, 2], sddr.grid.to_calibration(), data).expect("consistent dims")
}

pub fn tensor_to_sddr(t: &Tensor) -> Result<Sddr> {
    t.expect_rank(4, "SDDR")?;
    let grid = t.grid()?;
    let dims = grid.spatial_dims();
    if t.dims != [dims[0], dims[1], dims[2], 2] {
        return Err(Error::DimensionMismatch { expected: vec![dims[0], dims[1], dims[2], 2], found: t.dims.clone() });
    }
    let u = t.data.iter().step_by(2).map(|x| *x as f64).collect();
    let v = t
        .data
        .iter()
        .skip(1)
        .step_by(2)
        .map(|x| (!x.is_nan()).then(|| (*x as f64).clamp(-grid.v_max, grid.v_max)))
        .collect();
    Ok(Sddr {
        occupancy: Volume::from_vec(dims, u)?,
        doppler: DopplerProfile::from_vec(dims, v, grid.v_max)?,
        grid,
    })
}

/// Occupancy volume as `(R, A, E)`, with the grid when known.
pub fn volume_to_tensor(v: &Volume, grid: Option<&PolarGrid>) -> Tensor {
    let data = v.values().iter().map(|x| *x as f32).collect();
    let cal = grid.map(PolarGrid::to_calibration).unwrap_or_default();
    Tensor::new(v.dims().to_vec(), cal, data).expect("consistent dims")
}

pub fn tensor_to_volume(t: &Tensor) -> Result<Volume> {
    t.expect_rank(3, "occupancy")?;
    Volume::from_vec([t.dims[0], t.dims[1], t.dims[2]], t.data.iter().map(|x| *x as f64).collect())
}

/// Grid stored with an occupancy tensor, if any.
pub fn tensor_grid(t: &Tensor) -> Result<Option<PolarGrid>> {
    if t.calibration.is_empty() {
        Ok(None)
    } else {
        t.grid().map(Some)
    }
}

fn parse_fields(line: &str, lineno: usize, what: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("{what}: line {lineno}: cannot parse '{}'", f.trim())))
        })
        .collect()
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn fmt_f64(x: f64) -> String {
    // shortest round-trip representation
    format!("{x:?}")
}

/// `x,y,z` or `x,y,z,intensity,doppler`; missing attributes are empty
/// fields.
pub fn cloud_to_csv(cloud: &PointCloud) -> String {
    let full = cloud.has_attributes();
    let mut out = String::from(if full { "x,y,z,intensity,doppler\n" } else { "x,y,z\n" });
    for p in cloud.points() {
        let [x, y, z] = p.position.map(fmt_f64);
        out.push_str(&format!("{x},{y},{z}"));
        if full {
            let i = p.intensity.map(fmt_f64).unwrap_or_default();
            let d = p.doppler.map(fmt_f64).unwrap_or_default();
            out.push_str(&format!(",{i},{d}"));
        }
        out.push('\n');
    }
    out
}

pub fn cloud_from_csv(text: &str) -> Result<PointCloud> {
    let mut cloud = PointCloud::default();
    for (lineno, line) in data_lines(text) {
        if line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 && fields.len() != 5 {
            return Err(Error::Format(format!("cloud CSV: line {lineno}: expected 3 or 5 fields, found {}", fields.len())));
        }
        let num = |f: &str| -> Result<f64> {
            f.parse::<f64>()
                .map_err(|_| Error::Format(format!("cloud CSV: line {lineno}: cannot parse '{f}'")))
        };
        let opt = |f: &str| -> Result<Option<f64>> { if f.is_empty() { Ok(None) } else { num(f).map(Some) } };
        let position = [num(fields[0])?, num(fields[1])?, num(fields[2])?];
        let (intensity, doppler) = if fields.len() == 5 { (opt(fields[3])?, opt(fields[4])?) } else { (None, None) };
        cloud
            .try_push(Point { position, intensity, doppler })
            .map_err(|e| Error::Format(format!("cloud CSV: line {lineno}: {e}")))?;
    }
    Ok(cloud)
}

/// Binary little-endian PLY with float x/y/z and, when present, intensity
/// and doppler (NaN where missing).
pub fn cloud_to_ply(cloud: &PointCloud) -> Vec<u8> {
    let full = cloud.has_attributes();
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", cloud.len());
    for name in ["x", "y", "z"] {
        header.push_str(&format!("property float {name}\n"));
    }
    if full {
        header.push_str("property float intensity\nproperty float doppler\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for p in cloud.points() {
        for c in p.position {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if full {
            for a in [p.intensity, p.doppler] {
                out.extend_from_slice(&a.map_or(f32::NAN, |a| a as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Reads PLY files written by [`cloud_to_ply`].
pub fn cloud_from_ply(bytes: &[u8]) -> Result<PointCloud> {
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Format("PLY header has no end_header".into()))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("PLY header is not UTF-8".into()))?;
    if !header.contains("format binary_little_endian 1.0") {
        return Err(Error::Format("only binary_little_endian PLY is supported".into()));
    }
    let count = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Format("PLY header lacks a vertex count".into()))?;
    let props = header.lines().filter(|l| l.starts_with("property float ")).count();
    if props != 3 && props != 5 {
        return Err(Error::Format(format!("PLY vertex needs 3 or 5 float properties, found {props}")));
    }
    let body = &bytes[end..];
    if body.len() != count * props * 4 {
        return Err(Error::Format(format!("PLY body is {} bytes, expected {}", body.len(), count * props * 4)));
    }
    let mut cloud = PointCloud::default();
    for rec in body.chunks_exact(props * 4) {
        let f: Vec<f64> = rec.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64).collect();
        let attr = |i: usize| f.get(i).copied().filter(|x| !x.is_nan());
        cloud.try_push(Point { position: [f[0], f[1], f[2]], intensity: attr(3), doppler: attr(4) })?;
    }
    Ok(cloud)
}

/// `azimuth,elevation,radial_velocity,weight` rows (radians, m/s).
pub fn observations_to_csv(obs: &[DopplerObservation]) -> String {
    let mut out = String::from("azimuth,elevation,radial_velocity,weight\n");
    for o in obs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(o.azimuth),
            fmt_f64(o.elevation),
            fmt_f64(o.radial_velocity),
            fmt_f64(o.weight)
        ));
    }
    out
}

pub fn observations_from_csv(text: &str) -> Result<Vec<DopplerObservation>> {
    let mut out = Vec::new();
    for (lineno, line) in data_lines(text) {
        if line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue;
        }
        let f = parse_fields(line, lineno, "observation CSV")?;
        let [a, e, v, w] = f[..] else {
            return Err(Error::Format(format!("observation CSV: line {lineno}: expected 4 fields, found {}", f.len())));
        };
        if !(w >= 0.0) || !a.is_finite() || !e.is_finite() || !v.is_finite() || !w.is_finite() {
            return Err(Error::Format(format!("observation CSV: line {lineno}: values must be finite with weight >= 0")));
        }
        out.push(DopplerObservation::new(a, e, v, w));
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_atomic(path.as_ref(), to_json_string(value)?.as_bytes())
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    write_atomic(path.as_ref(), bytes)
}

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = 3 * (y * self.width + x);
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    /// Grayscale image of a row-major field, one `scale x scale` block per
    /// cell. Values are divided by `full_scale` and clipped to [0, 1].
    pub fn from_field(values: &[f64], rows: usize, cols: usize, full_scale: f64, scale: usize) -> Self {
        let (width, height) = (cols * scale, rows * scale);
        let mut rgb = vec![0u8; width * height * 3];
        for y in 0..height {
            for x in 0..width {
                let v = values[(y / scale) * cols + x / scale];
                let level = if full_scale > 0.0 && v.is_finite() { (v / full_scale).clamp(0.0, 1.0) } else { 0.0 };
                let g = (level * 255.0).round() as u8;
                let o = 3 * (y * width + x);
                rgb[o..o + 3].copy_from_slice(&[g, g, g]);
            }
        }
        Self { width, height, rgb }
    }
}

/// Bird's-eye view of an occupancy volume: rows are range bins (far range at
/// the top), columns azimuth bins, each pixel the maximum over elevation.
/// Occupancy maps to gray level directly, so an empty field is black.
pub fn render_bev(occupancy: &Volume, scale: usize) -> Image {
    let [r, a, e] = occupancy.dims();
    let mut field = vec![0.0; r * a];
    for k in 0..r {
        for i in 0..a {
            let m = (0..e).map(|j| occupancy.get(k, i, j)).fold(0.0, f64::max);
            field[(r - 1 - k) * a + i] = m;
        }
    }
    Image::from_field(&field, r, a, 1.0, scale)
}

/// Radial-velocity surface over the azimuth (columns) x elevation (rows, top
/// is highest elevation) grid, scaled by the speed so only the motion
/// direction can reach full white. Negative values render black.
pub fn render_doppler_surface(v: EgoVelocity, azimuth_grid: &[f64], elevation_grid: &[f64], scale: usize) -> Image {
    let surface = crate::eve::doppler_surface(v, azimuth_grid, elevation_grid);
    let (na, ne) = (azimuth_grid.len(), elevation_grid.len());
    let mut field = vec![0.0; na * ne];
    for i in 0..na {
        for j in 0..ne {
            field[(ne - 1 - j) * na + i] = surface[i * ne + j];
        }
    }
    Image::from_field(&field, ne, na, v.norm(), scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_and_layout() {
        let t = Tensor::new(vec![2, 3], vec![0.5, -1.0], vec![0.0, 1.0, -2.5, 3.25, f32::MAX, f32::MIN_POSITIVE]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"SDDR");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!((bytes[6], bytes[7]), (0, 2));
        assert_eq!(bytes.len(), 8 + 8 + 4 + 16 + 24 + 4);
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn tensor_detects_corruption() {
        let t = Tensor::new(vec![4], vec![], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = t.to_bytes();
        let n = bytes.len();
        bytes[n - 6] ^= 0x40;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Checksum { .. })));
        assert!(Tensor::from_bytes(&bytes[..10]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![], vec![0.0; 3]).is_err());
    }

    #[test]
    fn cloud_csv_round_trip() {
        let mut c = PointCloud::default();
        c.push_with([1.0, -2.5, 0.1], Some(0.7), None);
        c.push_with([0.0, 0.0, 3.0], None, Some(-1.25));
        let back = cloud_from_csv(&cloud_to_csv(&c)).unwrap();
        assert_eq!(back, c);
        let plain = PointCloud::from_positions([[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(cloud_to_csv(&plain), "x,y,z\n1.0,2.0,3.0\n");
        let err = cloud_from_csv("x,y,z\n1,2,3\n1,oops,3\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn cloud_ply_round_trip() {
        let mut c = PointCloud::default();
        c.push_with([1.0, -2.5, 0.125], Some(0.5), None);
        let back = cloud_from_ply(&cloud_to_ply(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn observation_csv_round_trip() {
        let obs = vec![DopplerObservation::new(0.1, -0.2, 1.5, 1.0), DopplerObservation::new(0.0, 0.3, -0.25, 0.5)];
        assert_eq!(observations_from_csv(&observations_to_csv(&obs)).unwrap(), obs);
        assert!(observations_from_csv("1,2,3\n").is_err());
    }

    #[test]
    fn zero_bev_is_black() {
        let img = render_bev(&Volume::zeros([4, 3, 2]), 2);
        assert_eq!((img.width, img.height), (6, 8));
        assert!(img.rgb.iter().all(|b| *b == 0));
        assert!(img.to_ppm().starts_with(b"P6\n6 8\n255\n"));
    }

    #[test]
    fn doppler_surface_peak_pixel() {
        let az: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.2).collect();
        let el: Vec<f64> = (-2..=2).map(|i| i as f64 * 0.2).collect();
        let img = render_doppler_surface(EgoVelocity::new(1.0, 0.0, 0.0), &az, &el, 1);
        let brightest = (0..img.height)
            .flat_map(|y| (0..img.width).map(move |x| (x, y)))
            .max_by_key(|(x, y)| (img.pixel(*x, *y)[0], std::cmp::Reverse((*y, *x))))
            .unwrap();
        assert_eq!(brightest, (4, 2));
        assert_eq!(img.pixel(4, 2), [255; 3]);
        let zero = render_doppler_surface(EgoVelocity::default(), &az, &el, 1);
        assert!(zero.rgb.iter().all(|b| *b == 0));
    }
}
