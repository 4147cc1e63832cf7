//! MetaImage (`.mha`) reader and writer.
//!
//! Writers always emit the single-file layout: an ASCII `key = value` header
//! ending with `ElementDataFile = LOCAL`, immediately followed by
//! little-endian voxel data, x-fastest. The reader additionally accepts
//! big-endian payloads and detached data files (`.mhd` + raw).

use std::fs;
use std::path::{Path, PathBuf};

use super::{Grid, Mask3, Volume3};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Float,
    UChar,
}

impl ElementType {
    fn tag(self) -> &'static str {
        match self {
            ElementType::Float => "MET_FLOAT",
            ElementType::UChar => "MET_UCHAR",
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::Float => 4,
            ElementType::UChar => 1,
        }
    }
}

/// Parsed header fields this toolkit understands.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaHeader {
    pub grid: Grid,
    pub element_type: ElementType,
    pub big_endian: bool,
    /// `None` for `LOCAL` data.
    pub data_file: Option<PathBuf>,
}

enum Payload {
    Float(Vec<f32>),
    UChar(Vec<u8>),
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(malformed(
            path,
            format!("{key} needs 3 components, got {value:?}"),
        ));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| malformed(path, format!("bad {key} component {p:?}")))?,
        );
    }
    let [a, b, c]: [T; 3] = out.try_into().ok().expect("three components");
    Ok([a, b, c])
}

/// Splits the file into header text and the byte offset of the payload.
fn split_header(path: &Path, bytes: &[u8]) -> Result<(Vec<(String, String)>, usize)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|n| pos + n)
            .ok_or_else(|| malformed(path, "header ended before ElementDataFile"))?;
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| malformed(path, "header is not ASCII"))?
            .trim_end_matches('\r');
        pos = end + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| malformed(path, format!("line without '=': {line:?}")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let last = key == "ElementDataFile";
        fields.push((key, value));
        if last {
            return Ok((fields, pos));
        }
    }
    Err(malformed(path, "missing ElementDataFile"))
}

fn parse_header(path: &Path, fields: &[(String, String)]) -> Result<MetaHeader> {
    let mut ndims = None;
    let mut dims = None;
    let mut spacing = [1.0; 3];
    let mut origin = [0.0; 3];
    let mut element_type = None;
    let mut big_endian = false;
    let mut data_file = None;
    for (key, value) in fields {
        match key.as_str() {
            "ObjectType" => {
                if value != "Image" {
                    return Err(malformed(path, format!("unsupported ObjectType {value}")));
                }
            }
            "NDims" => ndims = Some(value.clone()),
            "DimSize" => dims = Some(parse_triple::<usize>(path, key, value)?),
            "ElementSpacing" | "ElementSize" => spacing = parse_triple(path, key, value)?,
            "Offset" | "Origin" | "Position" => origin = parse_triple(path, key, value)?,
            "ElementType" => {
                element_type = Some(match value.as_str() {
                    "MET_FLOAT" => ElementType::Float,
                    "MET_UCHAR" => ElementType::UChar,
                    other => {
                        return Err(malformed(
                            path,
                            format!("unsupported ElementType {other}"),
                        ))
                    }
                })
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                big_endian = value.eq_ignore_ascii_case("true")
            }
            "BinaryData" => {
                if !value.eq_ignore_ascii_case("true") {
                    return Err(malformed(path, "ASCII payloads are not supported"));
                }
            }
            "CompressedData" => {
                if value.eq_ignore_ascii_case("true") {
                    return Err(malformed(path, "compressed payloads are not supported"));
                }
            }
            "ElementNumberOfChannels" => {
                if value != "1" {
                    return Err(malformed(path, "only single-channel images are supported"));
                }
            }
            "ElementDataFile"
                if value != "LOCAL" => {
                    let base = path.parent().unwrap_or(Path::new("."));
                    data_file = Some(base.join(value));
                }
            // orientation and bookkeeping keys carry no information we use
            _ => {}
        }
    }
    match ndims.as_deref() {
        Some("3") => {}
        Some(other) => return Err(malformed(path, format!("NDims must be 3, got {other}"))),
        None => return Err(malformed(path, "missing NDims")),
    }
    let dims = dims.ok_or_else(|| malformed(path, "missing DimSize"))?;
    let element_type = element_type.ok_or_else(|| malformed(path, "missing ElementType"))?;
    let grid = Grid::new(dims, spacing, origin).map_err(|e| malformed(path, e.to_string()))?;
    Ok(MetaHeader {
        grid,
        element_type,
        big_endian,
        data_file,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads only the header of a MetaImage file.
pub fn read_header(path: &Path) -> Result<MetaHeader> {
    let bytes = read_file(path)?;
    let (fields, _) = split_header(path, &bytes)?;
    parse_header(path, &fields)
}

fn read_any(path: &Path) -> Result<(Grid, Payload)> {
    let bytes = read_file(path)?;
    let (fields, offset) = split_header(path, &bytes)?;
    let header = parse_header(path, &fields)?;
    let external;
    let data: &[u8] = match &header.data_file {
        None => &bytes[offset..],
        Some(raw) => {
            external = read_file(raw)?;
            &external
        }
    };
    let expected = header.grid.len();
    let size = header.element_type.size();
    let found = data.len() / size;
    if found != expected || !data.len().is_multiple_of(size) {
        return Err(Error::ElementCountMismatch { expected, found });
    }
    let payload = match header.element_type {
        ElementType::UChar => Payload::UChar(data.to_vec()),
        ElementType::Float => Payload::Float(
            data.chunks_exact(4)
                .map(|c| {
                    let b: [u8; 4] = c.try_into().expect("chunk of 4");
                    if header.big_endian {
                        f32::from_be_bytes(b)
                    } else {
                        f32::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
    };
    Ok((header.grid, payload))
}

/// Reads a scalar volume. `MET_UCHAR` data is widened to f32.
pub fn read_volume(path: &Path) -> Result<Volume3> {
    let (grid, payload) = read_any(path)?;
    match payload {
        Payload::Float(v) => Volume3::new(grid, v),
        Payload::UChar(v) => Volume3::new(grid, v.into_iter().map(f32::from).collect()),
    }
}

/// Reads a binary mask. Data of either element type must be exactly 0 or 1.
pub fn read_mask(path: &Path) -> Result<Mask3> {
    let (grid, payload) = read_any(path)?;
    match payload {
        Payload::UChar(v) => Mask3::new(grid, v),
        Payload::Float(v) => Mask3::from_volume(&Volume3::new(grid, v)?),
    }
}

fn header_text(grid: &Grid, element_type: ElementType) -> String {
    let [nx, ny, nz] = grid.dims;
    let [sx, sy, sz] = grid.spacing;
    let [ox, oy, oz] = grid.origin;
    format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         DimSize = {nx} {ny} {nz}\n\
         ElementSpacing = {sx:?} {sy:?} {sz:?}\n\
         Offset = {ox:?} {oy:?} {oz:?}\n\
         ElementType = {}\n\
         ElementDataFile = LOCAL\n",
        element_type.tag()
    )
}

/// Writes a `MET_FLOAT` volume.
pub fn write_volume(vol: &Volume3, path: &Path) -> Result<()> {
    let mut bytes = header_text(vol.grid(), ElementType::Float).into_bytes();
    bytes.reserve(vol.len() * 4);
    for v in vol.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Writes a `MET_UCHAR` mask.
pub fn write_mask(mask: &Mask3, path: &Path) -> Result<()> {
    let mut bytes = header_text(mask.grid(), ElementType::UChar).into_bytes();
    bytes.extend_from_slice(mask.values());
    write_atomic(path, &bytes)
}
