//! Minimal single-file NIfTI-1 (`n+1`) reader/writer: little-endian,
//! Int16 or Float32 payloads, optional gzip, no extensions.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::datamodel::{FmriSeries, StatKind, StatMap};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const UNITS_MM_SEC: u8 = 2 | 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NiftiDatatype {
    Int16,
    Float32,
}

impl NiftiDatatype {
    fn code(self) -> i16 {
        match self {
            NiftiDatatype::Int16 => DT_INT16,
            NiftiDatatype::Float32 => DT_FLOAT32,
        }
    }

    fn bitpix(self) -> i16 {
        match self {
            NiftiDatatype::Int16 => 16,
            NiftiDatatype::Float32 => 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiftiHeader {
    /// dim[0] followed by up to seven extents
    pub dim: [i16; 8],
    pub datatype: NiftiDatatype,
    /// pixdim[1..=4]: mm, mm, mm, s
    pub pixdim: [f32; 4],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub descrip: String,
}

impl NiftiHeader {
    pub fn n_values(&self) -> Option<usize> {
        let nd = self.dim[0] as usize;
        self.dim[1..=nd].iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
    }

    fn encode(&self) -> [u8; HEADER_SIZE] {
        let mut h = [0u8; HEADER_SIZE];
        LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
        h[38] = b'r';
        for (i, d) in self.dim.iter().enumerate() {
            LittleEndian::write_i16(&mut h[40 + 2 * i..42 + 2 * i], *d);
        }
        LittleEndian::write_i16(&mut h[70..72], self.datatype.code());
        LittleEndian::write_i16(&mut h[72..74], self.datatype.bitpix());
        LittleEndian::write_f32(&mut h[76..80], 1.0); // qfac
        for (i, p) in self.pixdim.iter().enumerate() {
            LittleEndian::write_f32(&mut h[80 + 4 * i..84 + 4 * i], *p);
        }
        LittleEndian::write_f32(&mut h[108..112], self.vox_offset);
        LittleEndian::write_f32(&mut h[112..116], self.scl_slope);
        LittleEndian::write_f32(&mut h[116..120], self.scl_inter);
        h[123] = UNITS_MM_SEC;
        let d = self.descrip.as_bytes();
        let n = d.len().min(79);
        h[148..148 + n].copy_from_slice(&d[..n]);
        // sform: diagonal pixdim scaling
        LittleEndian::write_i16(&mut h[254..256], 1);
        LittleEndian::write_f32(&mut h[280..284], self.pixdim[0]);
        LittleEndian::write_f32(&mut h[300..304], self.pixdim[1]);
        LittleEndian::write_f32(&mut h[320..324], self.pixdim[2]);
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    fn decode(h: &[u8]) -> Result<Self, FormatError> {
        if h.len() < HEADER_SIZE {
            return Err(FormatError::TruncatedPayload { needed: HEADER_SIZE, got: h.len() });
        }
        let size = LittleEndian::read_i32(&h[0..4]);
        if size != HEADER_SIZE as i32 {
            return Err(FormatError::MalformedHeader(format!("sizeof_hdr {size} (big-endian or non-NIfTI-1 files are not supported)")));
        }
        if &h[344..348] != b"n+1\0" {
            return Err(FormatError::BadMagic);
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = LittleEndian::read_i16(&h[40 + 2 * i..42 + 2 * i]);
        }
        if !(1..=7).contains(&dim[0]) || dim[1..=dim[0] as usize].iter().any(|&d| d < 1) {
            return Err(FormatError::MalformedHeader(format!("dim {dim:?}")));
        }
        let datatype = match LittleEndian::read_i16(&h[70..72]) {
            DT_INT16 => NiftiDatatype::Int16,
            DT_FLOAT32 => NiftiDatatype::Float32,
            other => return Err(FormatError::UnsupportedDatatype(other)),
        };
        let mut pixdim = [0f32; 4];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = LittleEndian::read_f32(&h[80 + 4 * i..84 + 4 * i]);
        }
        let vox_offset = LittleEndian::read_f32(&h[108..112]);
        if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 && vox_offset < 1e9) {
            return Err(FormatError::MalformedHeader(format!("vox_offset {vox_offset}")));
        }
        let descrip_raw = &h[148..228];
        let end = descrip_raw.iter().position(|&b| b == 0).unwrap_or(descrip_raw.len());
        Ok(Self {
            dim,
            datatype,
            pixdim,
            vox_offset,
            scl_slope: LittleEndian::read_f32(&h[112..116]),
            scl_inter: LittleEndian::read_f32(&h[116..120]),
            descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
        })
    }
}

/// Header plus scaled values in file order (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub header: NiftiHeader,
    pub data: Vec<f64>,
}

impl NiftiImage {
    pub fn spatial_dims(&self) -> [usize; 3] {
        let d = &self.header.dim;
        let get = |i: usize| if i <= d[0] as usize { d[i] as usize } else { 1 };
        [get(1), get(2), get(3)]
    }

    pub fn n_volumes(&self) -> usize {
        let d = &self.header.dim;
        if d[0] >= 4 {
            d[4] as usize
        } else {
            1
        }
    }
}

/// Values a NIfTI writer needs from an in-memory image.
pub trait ToNifti {
    fn dims(&self) -> Vec<usize>;
    fn pixdim(&self) -> [f32; 4];
    fn values(&self) -> &[f64];
}

impl ToNifti for FmriSeries {
    fn dims(&self) -> Vec<usize> {
        self.dims().to_vec()
    }

    fn pixdim(&self) -> [f32; 4] {
        let v = self.voxel_size();
        [v[0] as f32, v[1] as f32, v[2] as f32, self.tr() as f32]
    }

    fn values(&self) -> &[f64] {
        self.data()
    }
}

/// Stat maps carry no voxel geometry of their own; callers pair them with
/// the source series through [`write_statmap`].
impl ToNifti for (&StatMap, [f64; 3]) {
    fn dims(&self) -> Vec<usize> {
        self.0.dims().to_vec()
    }

    fn pixdim(&self) -> [f32; 4] {
        [self.1[0] as f32, self.1[1] as f32, self.1[2] as f32, 0.0]
    }

    fn values(&self) -> &[f64] {
        self.0.values()
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, FormatError> {
    let raw = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| FormatError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Decodes an in-memory `.nii` byte image.
pub fn decode_nifti(bytes: &[u8]) -> Result<NiftiImage, FormatError> {
    let header = NiftiHeader::decode(bytes)?;
    let n = header.n_values().ok_or_else(|| FormatError::MalformedHeader("dimension product overflows".into()))?;
    let width = (header.datatype.bitpix() / 8) as usize;
    let start = header.vox_offset as usize;
    let needed = n
        .checked_mul(width)
        .and_then(|b| b.checked_add(start))
        .ok_or_else(|| FormatError::MalformedHeader("payload size overflows".into()))?;
    if bytes.len() < needed {
        return Err(FormatError::TruncatedPayload { needed, got: bytes.len() });
    }
    let payload = &bytes[start..needed];
    let (slope, inter) = (header.scl_slope as f64, header.scl_inter as f64);
    let scale = |v: f64| if slope != 0.0 && slope.is_finite() { v * slope + inter } else { v };
    let data = match header.datatype {
        NiftiDatatype::Int16 => payload.chunks_exact(2).map(|b| scale(LittleEndian::read_i16(b) as f64)).collect(),
        NiftiDatatype::Float32 => payload.chunks_exact(4).map(|b| scale(LittleEndian::read_f32(b) as f64)).collect(),
    };
    Ok(NiftiImage { header, data })
}

pub fn read_nifti_image(path: impl AsRef<Path>) -> Result<NiftiImage, FormatError> {
    decode_nifti(&read_maybe_gz(path.as_ref())?)
}

/// Reads a 4-D series; pixdim supplies voxel size and TR.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<FmriSeries, FormatError> {
    let img = read_nifti_image(path)?;
    let d = img.header.dim;
    if d[0] > 4 && d[5..=d[0] as usize].iter().any(|&x| x > 1) {
        return Err(FormatError::MalformedHeader(format!("{}-D image is not a volume series", d[0])));
    }
    let [nx, ny, nz] = img.spatial_dims();
    let nt = if d[0] >= 4 { d[4] as usize } else { 1 };
    let p = img.header.pixdim;
    Ok(FmriSeries::new([nx, ny, nz, nt], [p[0] as f64, p[1] as f64, p[2] as f64], p[3] as f64, img.data)?)
}

/// Reads a 3-D map and tags it with `kind`.
pub fn read_statmap(path: impl AsRef<Path>, kind: StatKind) -> Result<StatMap, FormatError> {
    let img = read_nifti_image(path)?;
    let dims = img.spatial_dims();
    Ok(StatMap::new(dims, img.data, kind)?)
}

/// Writes `image` as `n+1`. A path ending in `.gz` is gzip-compressed.
/// Int16 output picks a slope so the largest magnitude maps to 32767.
pub fn write_nifti<T: ToNifti + ?Sized>(image: &T, path: impl AsRef<Path>, datatype: NiftiDatatype) -> Result<(), FormatError> {
    let path = path.as_ref();
    let dims = image.dims();
    if dims.is_empty() || dims.len() > 7 || dims.iter().any(|&d| d == 0 || d > i16::MAX as usize) {
        return Err(FormatError::MalformedHeader(format!("cannot store dims {dims:?}")));
    }
    let mut dim = [1i16; 8];
    dim[0] = dims.len() as i16;
    for (i, &d) in dims.iter().enumerate() {
        dim[i + 1] = d as i16;
    }
    let values = image.values();
    let (slope, inter) = match datatype {
        NiftiDatatype::Float32 => (0.0, 0.0),
        NiftiDatatype::Int16 => {
            let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (if max > 0.0 { (max / 32767.0) as f32 } else { 1.0 }, 0.0)
        }
    };
    let header = NiftiHeader {
        dim,
        datatype,
        pixdim: image.pixdim(),
        vox_offset: VOX_OFFSET as f32,
        scl_slope: slope,
        scl_inter: inter,
        descrip: "neurofuse".into(),
    };
    let width = (datatype.bitpix() / 8) as usize;
    let mut bytes = Vec::with_capacity(VOX_OFFSET + values.len() * width);
    bytes.extend_from_slice(&header.encode());
    bytes.extend_from_slice(&[0u8; 4]);
    let mut buf = [0u8; 4];
    for &v in values {
        match datatype {
            NiftiDatatype::Float32 => {
                LittleEndian::write_f32(&mut buf, v as f32);
                bytes.extend_from_slice(&buf);
            }
            NiftiDatatype::Int16 => {
                let q = (v / slope as f64).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                LittleEndian::write_i16(&mut buf[..2], q);
                bytes.extend_from_slice(&buf[..2]);
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    let gz = path.extension().is_some_and(|e| e == "gz");
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish()).map_err(|e| FormatError::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

/// Writes a stat map with the voxel size of the series it came from.
pub fn write_statmap(map: &StatMap, voxel_size: [f64; 3], path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_nifti(&(map, voxel_size), path, NiftiDatatype::Float32)
}
