//! NIfTI-1 reading and writing.
//!
//! Only 3D, axis-aligned volumes are supported. Byte order is detected from
//! `sizeof_hdr`; gzip streams are decompressed transparently. The writer always
//! emits a little-endian single-file (`n+1`) layout with `vox_offset = 352`.

use std::io::Read;

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::scalar::Real;
use crate::volume::{Geometry, LabelVolume, Volume, VolumeError};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
/// NIFTI_INTENT_LABEL
pub const INTENT_LABEL: i16 = 1002;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("file is {0} bytes, shorter than the 348-byte header")]
    TooShort(usize),
    #[error("sizeof_hdr is {0}, expected 348 in either byte order")]
    BadHeaderSize(i32),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("paired .hdr/.img files are not supported")]
    PairedFile,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("expected a 3D volume, dim[0] = {0}")]
    NotThreeDimensional(i16),
    #[error("invalid dimension {0:?}")]
    InvalidDim([i16; 8]),
    #[error("truncated payload: need {needed} bytes from offset {offset}, file has {available}")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("orientation is not axis-aligned")]
    Oblique,
    #[error("gzip stream: {0}")]
    Gzip(#[from] std::io::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, NiftiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub const ALL: [Datatype; 5] =
        [Datatype::Uint8, Datatype::Int16, Datatype::Int32, Datatype::Float32, Datatype::Float64];

    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            64 => Datatype::Float64,
            _ => return None,
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }
}

/// The subset of the 348-byte header this crate reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub intent_code: i16,
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
    pub big_endian: bool,
}

/// A parsed volume: either HU scalars or a label map.
#[derive(Debug, Clone, PartialEq)]
pub enum NiftiVolume {
    Scalar(Volume<f64>),
    Label(LabelVolume),
}

impl NiftiVolume {
    pub fn geometry(&self) -> &Geometry {
        match self {
            NiftiVolume::Scalar(v) => v.geometry(),
            NiftiVolume::Label(l) => l.geometry(),
        }
    }

    pub fn into_scalar(self) -> Volume<f64> {
        match self {
            NiftiVolume::Scalar(v) => v,
            NiftiVolume::Label(l) => {
                let g = *l.geometry();
                Volume::new(g, l.labels().iter().map(|&v| v as f64).collect()).expect("labels are finite")
            }
        }
    }

    /// Binarize into a mask carrying `label` wherever the file is nonzero.
    pub fn into_mask(self, label: u8) -> LabelVolume {
        match self {
            NiftiVolume::Label(l) => {
                let g = *l.geometry();
                LabelVolume::new(g, l.labels().iter().map(|&v| if v != 0 { label } else { 0 }).collect())
                    .expect("binary mask is valid")
            }
            NiftiVolume::Scalar(v) => {
                let g = *v.geometry();
                LabelVolume::new(g, v.data().iter().map(|&x| if x != 0.0 { label } else { 0 }).collect())
                    .expect("binary mask is valid")
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a: [u8; N] = self.bytes[at..at + N].try_into().unwrap();
        if self.big_endian {
            a.reverse();
        }
        a
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.arr(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.arr(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.arr(at))
    }
    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.arr(at))
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TooShort(bytes.len()));
    }
    let raw = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let big_endian = if raw == HEADER_SIZE as i32 {
        false
    } else if raw.swap_bytes() == HEADER_SIZE as i32 {
        true
    } else {
        return Err(NiftiError::BadHeaderSize(raw));
    };
    let r = Reader { bytes, big_endian };
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    Ok(NiftiHeader {
        sizeof_hdr: HEADER_SIZE as i32,
        dim: std::array::from_fn(|i| r.i16(40 + 2 * i)),
        intent_code: r.i16(68),
        datatype: r.i16(70),
        bitpix: r.i16(72),
        pixdim: std::array::from_fn(|i| r.f32(76 + 4 * i)),
        vox_offset: r.f32(108),
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        qform_code: r.i16(252),
        sform_code: r.i16(254),
        quatern: std::array::from_fn(|i| r.f32(256 + 4 * i)),
        qoffset: std::array::from_fn(|i| r.f32(268 + 4 * i)),
        srow: std::array::from_fn(|row| std::array::from_fn(|c| r.f32(280 + 16 * row + 4 * c))),
        magic,
        big_endian,
    })
}

/// World origin from sform or qform; rejects anything beyond axis-aligned scaling.
fn origin_of(h: &NiftiHeader) -> Result<[f64; 3]> {
    const TOL: f64 = 1e-4;
    if h.sform_code > 0 {
        for (row, srow) in h.srow.iter().enumerate() {
            let scale = srow.iter().take(3).map(|v| v.abs() as f64).fold(0.0, f64::max);
            for (col, v) in srow.iter().take(3).enumerate() {
                if col != row && (*v as f64).abs() > TOL * scale.max(1.0) {
                    return Err(NiftiError::Oblique);
                }
            }
        }
        return Ok(std::array::from_fn(|i| h.srow[i][3] as f64));
    }
    if h.qform_code > 0 {
        let [b, c, d] = h.quatern.map(|v| v as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let off_diag = [
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
        ];
        if off_diag.iter().any(|v| v.abs() > TOL) {
            return Err(NiftiError::Oblique);
        }
        return Ok(h.qoffset.map(|v| v as f64));
    }
    Ok([0.0; 3])
}

/// Parse a NIfTI-1 byte stream (optionally gzip-compressed).
pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiVolume> {
    if is_gzip(bytes) {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        return parse_plain(&out);
    }
    parse_plain(bytes)
}

fn parse_plain(bytes: &[u8]) -> Result<NiftiVolume> {
    let h = parse_header(bytes)?;
    match &h.magic {
        b"n+1\0" => {}
        b"ni1\0" => return Err(NiftiError::PairedFile),
        other => return Err(NiftiError::BadMagic(*other)),
    }
    if h.dim[0] != 3 {
        return Err(NiftiError::NotThreeDimensional(h.dim[0]));
    }
    if h.dim[1..4].iter().any(|&d| d < 1) {
        return Err(NiftiError::InvalidDim(h.dim));
    }
    let datatype = Datatype::from_code(h.datatype).ok_or(NiftiError::UnsupportedDatatype(h.datatype))?;
    let dims = [h.dim[1] as usize, h.dim[2] as usize, h.dim[3] as usize];
    let spacing = [h.pixdim[1].abs() as f64, h.pixdim[2].abs() as f64, h.pixdim[3].abs() as f64];
    let geometry = Geometry::new(dims, spacing, origin_of(&h)?)?;

    let offset = (h.vox_offset as usize).max(HEADER_SIZE);
    let n = geometry.len();
    let needed = n * datatype.bytes();
    if bytes.len() < offset + needed {
        return Err(NiftiError::Truncated { offset, needed, available: bytes.len() });
    }
    let payload = &bytes[offset..offset + needed];
    let r = Reader { bytes: payload, big_endian: h.big_endian };

    if datatype == Datatype::Uint8 && h.intent_code == INTENT_LABEL {
        return Ok(NiftiVolume::Label(LabelVolume::new(geometry, payload.to_vec())?));
    }

    let raw: Vec<f64> = match datatype {
        Datatype::Uint8 => payload.iter().map(|&v| v as f64).collect(),
        Datatype::Int16 => (0..n).map(|i| r.i16(2 * i) as f64).collect(),
        Datatype::Int32 => (0..n).map(|i| r.i32(4 * i) as f64).collect(),
        Datatype::Float32 => (0..n).map(|i| r.f32(4 * i) as f64).collect(),
        Datatype::Float64 => (0..n).map(|i| r.f64(8 * i)).collect(),
    };
    let slope = h.scl_slope as f64;
    let inter = h.scl_inter as f64;
    let scaled = if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        raw.into_iter().map(|v| v * slope + inter).collect()
    } else {
        raw
    };
    Ok(NiftiVolume::Scalar(Volume::new(geometry, scaled)?))
}

fn header_bytes(geometry: &Geometry, datatype: Datatype, intent: i16) -> Vec<u8> {
    let mut b = vec![0u8; VOX_OFFSET];
    let put = |b: &mut Vec<u8>, at: usize, src: &[u8]| b[at..at + src.len()].copy_from_slice(src);
    put(&mut b, 0, &(HEADER_SIZE as i32).to_le_bytes());
    b[38] = b'r'; // regular
    let [nx, ny, nz] = geometry.dims;
    let dim: [i16; 8] = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(&mut b, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut b, 68, &intent.to_le_bytes());
    put(&mut b, 70, &datatype.code().to_le_bytes());
    put(&mut b, 72, &((datatype.bytes() * 8) as i16).to_le_bytes());
    let pixdim: [f32; 8] = [
        1.0,
        geometry.spacing[0] as f32,
        geometry.spacing[1] as f32,
        geometry.spacing[2] as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut b, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut b, 108, &(VOX_OFFSET as f32).to_le_bytes());
    put(&mut b, 112, &1.0f32.to_le_bytes());
    put(&mut b, 116, &0.0f32.to_le_bytes());
    b[123] = 2; // xyzt_units: mm
    put(&mut b, 252, &1i16.to_le_bytes()); // qform: scanner
    put(&mut b, 254, &1i16.to_le_bytes()); // sform: scanner
    for i in 0..3 {
        put(&mut b, 268 + 4 * i, &(geometry.origin[i] as f32).to_le_bytes());
        let mut row = [0.0f32; 4];
        row[i] = geometry.spacing[i] as f32;
        row[3] = geometry.origin[i] as f32;
        for (c, v) in row.iter().enumerate() {
            put(&mut b, 280 + 16 * i + 4 * c, &v.to_le_bytes());
        }
    }
    put(&mut b, 344, b"n+1\0");
    b
}

/// Encode a scalar volume with an explicit on-disk datatype. Values are
/// converted with `as` casts, so integer types truncate toward zero.
pub fn write_scalar_as<T: Real>(vol: &Volume<T>, datatype: Datatype) -> Vec<u8> {
    let mut out = header_bytes(vol.geometry(), datatype, 0);
    out.reserve(vol.data().len() * datatype.bytes());
    for v in vol.data() {
        let v = v.as_f64();
        match datatype {
            Datatype::Uint8 => out.push(v as u8),
            Datatype::Int16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Datatype::Int32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Datatype::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Datatype::Float64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn write_labels(labels: &LabelVolume) -> Vec<u8> {
    let mut out = header_bytes(labels.geometry(), Datatype::Uint8, INTENT_LABEL);
    out.extend_from_slice(labels.labels());
    out
}

/// Scalars as float32, labels as uint8 with the label intent.
pub fn write_nifti(vol: &NiftiVolume) -> Vec<u8> {
    match vol {
        NiftiVolume::Scalar(v) => write_scalar_as(v, Datatype::Float32),
        NiftiVolume::Label(l) => write_labels(l),
    }
}

/// Gzip-compress an encoded file, for `.nii.gz` output.
pub fn gzip(bytes: &[u8]) -> Vec<u8> {
    use flate2::write::GzEncoder;
    use std::io::Write;
    let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

pub fn read_nifti_file(path: &std::path::Path) -> std::result::Result<NiftiVolume, crate::ingest::IngestError> {
    let bytes = std::fs::read(path).map_err(|e| crate::ingest::IngestError::Io(path.to_path_buf(), e))?;
    parse_nifti(&bytes).map_err(|e| crate::ingest::IngestError::Nifti(path.to_path_buf(), e))
}

pub fn write_nifti_file(path: &std::path::Path, vol: &NiftiVolume) -> std::io::Result<()> {
    let bytes = write_nifti(vol);
    let gz = path.extension().is_some_and(|e| e == "gz");
    std::fs::write(path, if gz { gzip(&bytes) } else { bytes })
}
