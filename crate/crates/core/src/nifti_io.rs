//! NIfTI-1 single-file reader and writer.
//!
//! Reads little- and big-endian `.nii` files, optionally gzip-compressed
//! (detected from the stream's magic bytes, not the file name). Writes
//! little-endian `n+1` files with both sform and qform populated.
//!
//! Geometry is taken from the sform when `sform_code > 0`, otherwise from the
//! qform quaternion when `qform_code > 0`, otherwise from `pixdim` alone with an
//! identity orientation. The stored affine is surfaced as-is: no reorientation
//! to any canonical frame takes place.

use std::fs::File;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, NiftiError, Result};
use crate::volume::{Image, ImageGeometry, Label, LabelMap, Volume, Voxel, NUM_CLASSES};

pub const HEADER_SIZE: usize = 348;
const NIFTI2_HEADER_SIZE: i32 = 540;
/// Header plus the 4-byte extension flag.
const DATA_OFFSET: usize = 352;

pub const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;
pub const DT_INT8: i16 = 256;
pub const DT_UINT16: i16 = 512;
pub const DT_UINT32: i16 = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// The subset of NIfTI-1 header fields this crate reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub endianness: Endianness,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern_b: f32,
    pub quatern_c: f32,
    pub quatern_d: f32,
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub descrip: String,
    pub magic: [u8; 4],
}

impl Default for NiftiHeader {
    fn default() -> Self {
        NiftiHeader {
            endianness: Endianness::Little,
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            datatype: DT_FLOAT32,
            bitpix: 32,
            pixdim: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: DATA_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            qform_code: 0,
            sform_code: 0,
            quatern_b: 0.0,
            quatern_c: 0.0,
            quatern_d: 0.0,
            qoffset: [0.0; 3],
            srow_x: [1.0, 0.0, 0.0, 0.0],
            srow_y: [0.0, 1.0, 0.0, 0.0],
            srow_z: [0.0, 0.0, 1.0, 0.0],
            descrip: String::new(),
            magic: *MAGIC_SINGLE,
        }
    }
}

fn bytes_per_voxel(datatype: i16) -> Result<usize, NiftiError> {
    Ok(match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(NiftiError::UnsupportedDatatype(other)),
    })
}

impl NiftiHeader {
    /// Parses the first 348 bytes of a NIfTI-1 stream.
    pub fn parse(buf: &[u8]) -> Result<Self, NiftiError> {
        if buf.len() < HEADER_SIZE {
            return Err(NiftiError::Truncated {
                expected: HEADER_SIZE,
                found: buf.len(),
            });
        }
        let le = LittleEndian::read_i32(&buf[0..4]);
        let be = BigEndian::read_i32(&buf[0..4]);
        let endianness = if le == HEADER_SIZE as i32 {
            Endianness::Little
        } else if be == HEADER_SIZE as i32 {
            Endianness::Big
        } else if le == NIFTI2_HEADER_SIZE || be == NIFTI2_HEADER_SIZE {
            return Err(NiftiError::Nifti2Unsupported);
        } else {
            return Err(NiftiError::BadHeaderSize(le));
        };
        match endianness {
            Endianness::Little => Self::parse_with::<LittleEndian>(buf, endianness),
            Endianness::Big => Self::parse_with::<BigEndian>(buf, endianness),
        }
    }

    fn parse_with<E: ByteOrder>(buf: &[u8], endianness: Endianness) -> Result<Self, NiftiError> {
        let i16_at = |o: usize| E::read_i16(&buf[o..o + 2]);
        let f32_at = |o: usize| E::read_f32(&buf[o..o + 4]);
        let f32s = |o: usize, out: &mut [f32]| {
            for (i, v) in out.iter_mut().enumerate() {
                *v = f32_at(o + 4 * i);
            }
        };

        let mut magic = [0u8; 4];
        magic.copy_from_slice(&buf[344..348]);
        if &magic != MAGIC_SINGLE && &magic != MAGIC_PAIR {
            if &magic[..3] == b"n+2" || &magic[..3] == b"ni2" {
                return Err(NiftiError::Nifti2Unsupported);
            }
            return Err(NiftiError::BadMagic(magic));
        }

        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = i16_at(40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        f32s(76, &mut pixdim);
        let mut srow_x = [0f32; 4];
        let mut srow_y = [0f32; 4];
        let mut srow_z = [0f32; 4];
        f32s(280, &mut srow_x);
        f32s(296, &mut srow_y);
        f32s(312, &mut srow_z);
        let descrip_raw = &buf[148..228];
        let end = descrip_raw.iter().position(|&b| b == 0).unwrap_or(80);

        Ok(NiftiHeader {
            endianness,
            dim,
            datatype: i16_at(70),
            bitpix: i16_at(72),
            pixdim,
            vox_offset: f32_at(108),
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            xyzt_units: buf[123],
            qform_code: i16_at(252),
            sform_code: i16_at(254),
            quatern_b: f32_at(256),
            quatern_c: f32_at(260),
            quatern_d: f32_at(264),
            qoffset: [f32_at(268), f32_at(272), f32_at(276)],
            srow_x,
            srow_y,
            srow_z,
            descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
            magic,
        })
    }

    /// Serialises the header (always little-endian) into 348 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = vec![0u8; HEADER_SIZE];
        LittleEndian::write_i32(&mut buf[0..4], HEADER_SIZE as i32);
        buf[38] = b'r';
        for (i, d) in self.dim.iter().enumerate() {
            LittleEndian::write_i16(&mut buf[40 + 2 * i..], *d);
        }
        LittleEndian::write_i16(&mut buf[70..], self.datatype);
        LittleEndian::write_i16(&mut buf[72..], self.bitpix);
        for (i, p) in self.pixdim.iter().enumerate() {
            LittleEndian::write_f32(&mut buf[76 + 4 * i..], *p);
        }
        LittleEndian::write_f32(&mut buf[108..], self.vox_offset);
        LittleEndian::write_f32(&mut buf[112..], self.scl_slope);
        LittleEndian::write_f32(&mut buf[116..], self.scl_inter);
        buf[123] = self.xyzt_units;
        let d = self.descrip.as_bytes();
        let n = d.len().min(79);
        buf[148..148 + n].copy_from_slice(&d[..n]);
        LittleEndian::write_i16(&mut buf[252..], self.qform_code);
        LittleEndian::write_i16(&mut buf[254..], self.sform_code);
        LittleEndian::write_f32(&mut buf[256..], self.quatern_b);
        LittleEndian::write_f32(&mut buf[260..], self.quatern_c);
        LittleEndian::write_f32(&mut buf[264..], self.quatern_d);
        for i in 0..3 {
            LittleEndian::write_f32(&mut buf[268 + 4 * i..], self.qoffset[i]);
        }
        for (row, base) in [(&self.srow_x, 280), (&self.srow_y, 296), (&self.srow_z, 312)] {
            for (i, v) in row.iter().enumerate() {
                LittleEndian::write_f32(&mut buf[base + 4 * i..], *v);
            }
        }
        buf[344..348].copy_from_slice(&self.magic);
        buf
    }

    /// Spatial dims `(nx, ny, nz)`. Higher dimensions must be singleton.
    pub fn spatial_dims(&self) -> Result<[usize; 3], NiftiError> {
        let nd = self.dim[0];
        if !(1..=7).contains(&nd) {
            return Err(NiftiError::UnsupportedDims(self.dim));
        }
        let mut dims = [1usize; 3];
        for a in 0..3 {
            if (a as i16) < nd {
                let d = self.dim[a + 1];
                if d < 1 {
                    return Err(NiftiError::UnsupportedDims(self.dim));
                }
                dims[a] = d as usize;
            }
        }
        for a in 4..=nd as usize {
            if self.dim[a] > 1 {
                return Err(NiftiError::UnsupportedDims(self.dim));
            }
        }
        Ok(dims)
    }

    fn pixdim_spacing(&self) -> Vector3<f64> {
        Vector3::from_fn(|a, _| {
            let s = (self.pixdim[a + 1] as f64).abs();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
    }

    /// Geometry decoded from the quaternion fields.
    pub fn qform_geometry(&self) -> Result<ImageGeometry> {
        let (b, c, d) = (
            self.quatern_b as f64,
            self.quatern_c as f64,
            self.quatern_d as f64,
        );
        let rotation = quaternion_to_rotation(b, c, d);
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let mut direction = rotation;
        direction.column_mut(2).scale_mut(qfac);
        let origin = Vector3::from(self.qoffset.map(|v| v as f64));
        ImageGeometry::new(origin, self.pixdim_spacing(), direction)
    }

    /// Geometry decoded from the sform rows.
    pub fn sform_geometry(&self) -> Result<ImageGeometry> {
        let rows = [self.srow_x, self.srow_y, self.srow_z];
        let linear = Matrix3::from_fn(|r, c| rows[r][c] as f64);
        let origin = Vector3::from_fn(|r, _| rows[r][3] as f64);
        let spacing = Vector3::from_fn(|c, _| linear.column(c).norm());
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(NiftiError::BadAffine.into());
        }
        let direction = Matrix3::from_fn(|r, c| linear[(r, c)] / spacing[c]);
        ImageGeometry::new(origin, spacing, direction)
    }

    /// Geometry using the sform > qform > pixdim precedence.
    pub fn geometry(&self) -> Result<ImageGeometry> {
        if self.sform_code > 0 {
            self.sform_geometry()
        } else if self.qform_code > 0 {
            self.qform_geometry()
        } else {
            ImageGeometry::new(Vector3::zeros(), self.pixdim_spacing(), Matrix3::identity())
        }
    }

    /// Header describing `dims` with `geometry`; sform and qform both filled.
    pub fn for_geometry(dims: [usize; 3], geometry: &ImageGeometry, datatype: i16) -> Self {
        let (qfac, quat) = rotation_to_quaternion(geometry.direction());
        let spacing = geometry.spacing();
        let origin = geometry.origin();
        let linear = geometry.linear();
        let row = |r: usize| {
            [
                linear[(r, 0)] as f32,
                linear[(r, 1)] as f32,
                linear[(r, 2)] as f32,
                origin[r] as f32,
            ]
        };
        NiftiHeader {
            dim: [
                3,
                dims[0] as i16,
                dims[1] as i16,
                dims[2] as i16,
                1,
                1,
                1,
                1,
            ],
            datatype,
            bitpix: (bytes_per_voxel(datatype).unwrap_or(4) * 8) as i16,
            pixdim: [
                qfac as f32,
                spacing[0] as f32,
                spacing[1] as f32,
                spacing[2] as f32,
                0.0,
                0.0,
                0.0,
                0.0,
            ],
            qform_code: 1,
            sform_code: 1,
            quatern_b: quat[0] as f32,
            quatern_c: quat[1] as f32,
            quatern_d: quat[2] as f32,
            qoffset: [origin[0] as f32, origin[1] as f32, origin[2] as f32],
            srow_x: row(0),
            srow_y: row(1),
            srow_z: row(2),
            ..Default::default()
        }
    }
}

/// Rotation matrix from the (b, c, d) quaternion components, recovering
/// `a = sqrt(1 - b² - c² - d²)`.
pub fn quaternion_to_rotation(b: f64, c: f64, d: f64) -> Matrix3<f64> {
    let mut a = 1.0 - (b * b + c * c + d * d);
    let (a, b, c, d) = if a < 1e-7 {
        // Numerically a 180° rotation; renormalise (b, c, d).
        let n = (b * b + c * c + d * d).sqrt();
        (0.0, b / n, c / n, d / n)
    } else {
        a = a.sqrt();
        (a, b, c, d)
    };
    Matrix3::new(
        a * a + b * b - c * c - d * d,
        2.0 * (b * c - a * d),
        2.0 * (b * d + a * c),
        2.0 * (b * c + a * d),
        a * a + c * c - b * b - d * d,
        2.0 * (c * d - a * b),
        2.0 * (b * d - a * c),
        2.0 * (c * d + a * b),
        a * a + d * d - c * c - b * b,
    )
}

/// Splits an orthonormal direction matrix into `(qfac, [b, c, d])`.
pub fn rotation_to_quaternion(direction: &Matrix3<f64>) -> (f64, [f64; 3]) {
    let mut r = *direction;
    let qfac = if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
        -1.0
    } else {
        1.0
    };
    let (r11, r12, r13) = (r[(0, 0)], r[(0, 1)], r[(0, 2)]);
    let (r21, r22, r23) = (r[(1, 0)], r[(1, 1)], r[(1, 2)]);
    let (r31, r32, r33) = (r[(2, 0)], r[(2, 1)], r[(2, 2)]);
    let trace = r11 + r22 + r33 + 1.0;
    let (mut a, mut b, mut c, mut d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r32 - r23) / a;
        c = 0.25 * (r13 - r31) / a;
        d = 0.25 * (r21 - r12) / a;
    } else {
        let xd = 1.0 + r11 - (r22 + r33);
        let yd = 1.0 + r22 - (r11 + r33);
        let zd = 1.0 + r33 - (r11 + r22);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r12 + r21) / b;
            d = 0.25 * (r13 + r31) / b;
            a = 0.25 * (r32 - r23) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r12 + r21) / c;
            d = 0.25 * (r23 + r32) / c;
            a = 0.25 * (r13 - r31) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r13 + r31) / d;
            c = 0.25 * (r23 + r32) / d;
            a = 0.25 * (r21 - r12) / d;
        }
        if a < 0.0 {
            a = -a;
            b = -b;
            c = -c;
            d = -d;
        }
    }
    let _ = a;
    (qfac, [b, c, d])
}

/// Voxel types that can be stored on disk.
pub trait NiftiVoxel: Voxel {
    const DATATYPE: i16;
    fn write_le(self, out: &mut Vec<u8>);
}

impl NiftiVoxel for f32 {
    const DATATYPE: i16 = DT_FLOAT32;
    fn write_le(self, out: &mut Vec<u8>) {
        out.write_f32::<LittleEndian>(self).expect("vec write");
    }
}

impl NiftiVoxel for u8 {
    const DATATYPE: i16 = DT_UINT8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
}

fn decompress_if_gzip(raw: Vec<u8>) -> Result<Vec<u8>, NiftiError> {
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(Cursor::new(raw)).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Raw decoded voxel values (before any type conversion) plus header.
fn decode(bytes: &[u8]) -> Result<(NiftiHeader, Vec<f64>)> {
    let header = NiftiHeader::parse(bytes)?;
    if &header.magic == MAGIC_PAIR {
        return Err(NiftiError::DetachedPair.into());
    }
    let dims = header.spatial_dims()?;
    let bpv = bytes_per_voxel(header.datatype)?;
    let n: usize = dims.iter().product();
    let offset = (header.vox_offset.max(DATA_OFFSET as f32)) as usize;
    let expected = offset + n * bpv;
    if bytes.len() < expected {
        return Err(NiftiError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let data = &bytes[offset..expected];
    let values = match header.endianness {
        Endianness::Little => decode_values::<LittleEndian>(data, header.datatype, n),
        Endianness::Big => decode_values::<BigEndian>(data, header.datatype, n),
    };
    Ok((header, values))
}

fn decode_values<E: ByteOrder>(data: &[u8], datatype: i16, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    match datatype {
        DT_UINT8 => out.extend(data.iter().map(|&b| b as f64)),
        DT_INT8 => out.extend(data.iter().map(|&b| b as i8 as f64)),
        DT_INT16 => out.extend(data.chunks_exact(2).map(|c| E::read_i16(c) as f64)),
        DT_UINT16 => out.extend(data.chunks_exact(2).map(|c| E::read_u16(c) as f64)),
        DT_INT32 => out.extend(data.chunks_exact(4).map(|c| E::read_i32(c) as f64)),
        DT_UINT32 => out.extend(data.chunks_exact(4).map(|c| E::read_u32(c) as f64)),
        DT_FLOAT32 => out.extend(data.chunks_exact(4).map(|c| E::read_f32(c) as f64)),
        DT_FLOAT64 => out.extend(data.chunks_exact(8).map(E::read_f64)),
        _ => unreachable!("datatype validated before decoding"),
    }
    out
}

fn scaling(header: &NiftiHeader) -> Option<(f64, f64)> {
    let slope = header.scl_slope as f64;
    if slope != 0.0 && slope.is_finite() {
        let inter = header.scl_inter as f64;
        if slope != 1.0 || inter != 0.0 {
            return Some((slope, if inter.is_finite() { inter } else { 0.0 }));
        }
    }
    None
}

/// Decodes an in-memory NIfTI-1 stream as an intensity volume.
pub fn volume_from_bytes(bytes: Vec<u8>) -> Result<Volume> {
    let bytes = decompress_if_gzip(bytes)?;
    let (header, values) = decode(&bytes)?;
    let dims = header.spatial_dims()?;
    let scale = scaling(&header);
    let data = values
        .into_iter()
        .map(|v| match scale {
            Some((s, i)) => (v * s + i) as f32,
            None => v as f32,
        })
        .collect();
    Image::new(dims, header.geometry()?, data)
}

/// Decodes an in-memory NIfTI-1 stream as a label map. Every voxel must be
/// an integer in `{0, 1, 2, 3}` after scaling; anything else is rejected.
pub fn labels_from_bytes(bytes: Vec<u8>) -> Result<LabelMap> {
    let bytes = decompress_if_gzip(bytes)?;
    let (header, values) = decode(&bytes)?;
    let dims = header.spatial_dims()?;
    let scale = scaling(&header);
    let mut data = Vec::with_capacity(values.len());
    for v in values {
        let v = match scale {
            Some((s, i)) => v * s + i,
            None => v,
        };
        if v.fract() != 0.0 || !(0.0..NUM_CLASSES as f64).contains(&v) {
            return Err(NiftiError::NotALabel(v).into());
        }
        data.push(v as Label);
    }
    Image::new(dims, header.geometry()?, data)
}

/// Encodes `image` as an uncompressed little-endian NIfTI-1 stream.
pub fn to_bytes<T: NiftiVoxel>(image: &Image<T>) -> Vec<u8> {
    let header = NiftiHeader::for_geometry(image.dims(), image.geometry(), T::DATATYPE);
    let mut out = header.to_bytes();
    out.extend_from_slice(&[0u8; DATA_OFFSET - HEADER_SIZE]);
    let bpv = bytes_per_voxel(T::DATATYPE).expect("writable datatype");
    out.reserve(image.len() * bpv);
    for &v in image.data() {
        v.write_le(&mut out);
    }
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

/// Reads the header only.
pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeader> {
    let bytes = decompress_if_gzip(read_file(path.as_ref())?)?;
    Ok(NiftiHeader::parse(&bytes)?)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    volume_from_bytes(read_file(path.as_ref())?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    labels_from_bytes(read_file(path.as_ref())?)
}

/// Writes `image`; a path ending in `.gz` is gzip-compressed.
pub fn write<T: NiftiVoxel>(image: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = to_bytes(image);
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).map_err(io_err)?;
        enc.finish().map_err(io_err)?
    } else {
        raw
    };
    std::fs::write(path, bytes).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::rotation_from_euler_deg;
    use approx::assert_abs_diff_eq;

    fn oblique() -> ImageGeometry {
        ImageGeometry::new(
            Vector3::new(-12.5, 40.0, 7.25),
            Vector3::new(1.25, 0.75, 8.0),
            rotation_from_euler_deg([20.0, -35.0, 110.0]),
        )
        .unwrap()
    }

    #[test]
    fn identity_header_fields() {
        let v = Volume::zeros([2, 2, 2], ImageGeometry::identity()).unwrap();
        let bytes = to_bytes(&v);
        let h = NiftiHeader::parse(&bytes).unwrap();
        assert_eq!(h.dim, [3, 2, 2, 2, 1, 1, 1, 1]);
        assert_eq!(&h.pixdim[1..4], &[1.0, 1.0, 1.0]);
        assert_eq!(h.datatype, DT_FLOAT32);
        assert_eq!(h.bitpix, 32);
        assert_eq!(&h.magic, MAGIC_SINGLE);
        assert_eq!(bytes.len(), 352 + 8 * 4);
        assert_eq!(LittleEndian::read_i32(&bytes[0..4]), 348);
    }

    #[test]
    fn labels_written_as_uint8() {
        let l = LabelMap::from_fn([4, 1, 1], ImageGeometry::identity(), |x, _, _| x as u8).unwrap();
        let bytes = to_bytes(&l);
        let h = NiftiHeader::parse(&bytes).unwrap();
        assert_eq!(h.datatype, DT_UINT8);
        assert_eq!(h.bitpix, 8);
        assert_eq!(&bytes[352..], &[0, 1, 2, 3]);
    }

    #[test]
    fn sform_rows_hold_scaled_direction_and_origin() {
        let g = oblique();
        let h = NiftiHeader::for_geometry([3, 4, 5], &g, DT_FLOAT32);
        // Reference 4×4 assembly: column c of direction scaled by spacing[c].
        let rows = [h.srow_x, h.srow_y, h.srow_z];
        for r in 0..3 {
            for c in 0..3 {
                let expected = g.direction()[(r, c)] * g.spacing()[c];
                assert_abs_diff_eq!(rows[r][c] as f64, expected, epsilon = 1e-6);
            }
            assert_abs_diff_eq!(rows[r][3] as f64, g.origin()[r], epsilon = 1e-5);
        }
    }

    #[test]
    fn quaternion_round_trip_including_reflection() {
        for flip in [false, true] {
            let mut d = rotation_from_euler_deg([170.0, 80.0, -95.0]);
            if flip {
                d.column_mut(1).neg_mut();
            }
            let (qfac, q) = rotation_to_quaternion(&d);
            let mut back = quaternion_to_rotation(q[0], q[1], q[2]);
            back.column_mut(2).scale_mut(qfac);
            assert_abs_diff_eq!(back, d, epsilon = 1e-12);
        }
    }

    #[test]
    fn qform_used_when_sform_absent() {
        let g = oblique();
        let v = Volume::zeros([3, 3, 3], g.clone()).unwrap();
        let mut bytes = to_bytes(&v);
        LittleEndian::write_i16(&mut bytes[254..256], 0);
        let back = volume_from_bytes(bytes).unwrap();
        let q = back.geometry();
        assert_abs_diff_eq!(*q.direction(), *g.direction(), epsilon = 1e-6);
        assert_abs_diff_eq!(*q.origin(), *g.origin(), epsilon = 1e-5);
    }

    #[test]
    fn pixdim_only_geometry_when_no_codes() {
        let g = oblique();
        let v = Volume::zeros([3, 3, 3], g.clone()).unwrap();
        let mut bytes = to_bytes(&v);
        LittleEndian::write_i16(&mut bytes[252..254], 0);
        LittleEndian::write_i16(&mut bytes[254..256], 0);
        let back = volume_from_bytes(bytes).unwrap();
        assert_eq!(back.geometry().direction(), &Matrix3::identity());
        assert_eq!(back.geometry().origin(), &Vector3::zeros());
        assert_abs_diff_eq!(*back.geometry().spacing(), *g.spacing(), epsilon = 1e-6);
    }

    #[test]
    fn distinct_error_variants() {
        let v = Volume::zeros([2, 2, 2], ImageGeometry::identity()).unwrap();
        let good = to_bytes(&v);

        let mut bad_magic = good.clone();
        bad_magic[344..348].copy_from_slice(b"xyz\0");
        assert!(matches!(
            volume_from_bytes(bad_magic),
            Err(Error::Nifti(NiftiError::BadMagic(_)))
        ));

        let mut bad_type = good.clone();
        LittleEndian::write_i16(&mut bad_type[70..72], 1024);
        assert!(matches!(
            volume_from_bytes(bad_type),
            Err(Error::Nifti(NiftiError::UnsupportedDatatype(1024)))
        ));

        let truncated = good[..good.len() - 3].to_vec();
        assert!(matches!(
            volume_from_bytes(truncated),
            Err(Error::Nifti(NiftiError::Truncated { .. }))
        ));

        let mut nifti2 = vec![0u8; 600];
        LittleEndian::write_i32(&mut nifti2[0..4], 540);
        assert!(matches!(
            volume_from_bytes(nifti2),
            Err(Error::Nifti(NiftiError::Nifti2Unsupported))
        ));
    }

    #[test]
    fn scaling_applied_to_intensities() {
        let l = LabelMap::from_fn([4, 1, 1], ImageGeometry::identity(), |x, _, _| x as u8).unwrap();
        let mut bytes = to_bytes(&l);
        LittleEndian::write_f32(&mut bytes[112..116], 2.0);
        LittleEndian::write_f32(&mut bytes[116..120], -1.0);
        let v = volume_from_bytes(bytes.clone()).unwrap();
        assert_eq!(v.data(), &[-1.0, 1.0, 3.0, 5.0]);
        assert!(labels_from_bytes(bytes).is_err());
    }

    #[test]
    fn big_endian_header_detected() {
        let v = Volume::from_fn([2, 1, 1], ImageGeometry::identity(), |x, _, _| x as f32 + 0.5).unwrap();
        let le = to_bytes(&v);
        // Byte-swap every numeric field we use to build a big-endian twin.
        let mut be = le.clone();
        let swap = |buf: &mut [u8], off: usize, width: usize| buf[off..off + width].reverse();
        swap(&mut be, 0, 4);
        for i in 0..8 {
            swap(&mut be, 40 + 2 * i, 2);
            swap(&mut be, 76 + 4 * i, 4);
        }
        for off in [70, 72, 252, 254] {
            swap(&mut be, off, 2);
        }
        for off in (108..120).step_by(4).chain((256..328).step_by(4)) {
            swap(&mut be, off, 4);
        }
        for i in 0..2 {
            swap(&mut be, 352 + 4 * i, 4);
        }
        let h = NiftiHeader::parse(&be).unwrap();
        assert_eq!(h.endianness, Endianness::Big);
        assert_eq!(volume_from_bytes(be).unwrap(), volume_from_bytes(le).unwrap());
    }
}
