//! Reader and writer for the Gaussian-splat PLY layout used by 3DGS trainers:
//! a single `vertex` element with float properties `x y z`, `f_dc_0..2`,
//! optional `f_rest_*`, `opacity`, `scale_0..2` and `rot_0..3`.
//!
//! Both `binary_little_endian` and `ascii` payloads are accepted; parsing is
//! insensitive to property ordering inside the vertex element. The writer
//! always emits binary little-endian, and write-then-parse reproduces every
//! required field bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::IoError;

/// One splat as stored on disk: scales are logarithmic, opacity is a logit,
/// the quaternion is unnormalized and color is DC spherical-harmonic
/// coefficients. Activation into geometric form happens in `scene`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSplatRecord {
    pub position: [f32; 3],
    /// Quaternion in (w, x, y, z) order, as stored.
    pub rotation: [f32; 4],
    pub log_scales: [f32; 3],
    pub opacity_logit: f32,
    pub sh_dc: [f32; 3],
    /// Higher-order SH coefficients; parsed and preserved, never scored.
    pub sh_rest: Vec<f32>,
}

const REQUIRED_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(token: &str) -> Option<Self> {
        match token {
            "char" | "int8" => Some(Self::I8),
            "uchar" | "uint8" => Some(Self::U8),
            "short" | "int16" => Some(Self::I16),
            "ushort" | "uint16" => Some(Self::U16),
            "int" | "int32" => Some(Self::I32),
            "uint" | "uint32" => Some(Self::U32),
            "float" | "float32" => Some(Self::F32),
            "double" | "float64" => Some(Self::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PayloadFormat {
    Ascii,
    BinaryLittleEndian,
}

struct VertexProperty {
    name: String,
    kind: ScalarType,
    /// Byte offset within a binary vertex record.
    offset: usize,
    /// Token index within an ascii vertex line.
    token: usize,
}

struct Header {
    format: PayloadFormat,
    vertex_count: usize,
    properties: Vec<VertexProperty>,
    stride: usize,
}

fn parse_header(text: &str) -> Result<Header, IoError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == "ply" => {}
        _ => return Err(IoError::Format("not a PLY file (missing magic)".into())),
    }

    let mut format = None;
    let mut vertex_count = None;
    let mut in_vertex_element = false;
    let mut properties: Vec<VertexProperty> = Vec::new();
    let mut offset = 0usize;
    let mut token = 0usize;

    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let kind = parts.next().unwrap_or("");
                format = Some(match kind {
                    "ascii" => PayloadFormat::Ascii,
                    "binary_little_endian" => PayloadFormat::BinaryLittleEndian,
                    other => {
                        return Err(IoError::Unsupported(format!("PLY format {other}")));
                    }
                });
            }
            Some("element") => {
                let name = parts.next().unwrap_or("");
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| IoError::Format(format!("bad element line: {line}")))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(IoError::Format("duplicate vertex element".into()));
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    // Payload layout of later elements is unknowable without
                    // reading them; only empty extra elements are tolerable.
                    if count != 0 {
                        return Err(IoError::Unsupported(format!(
                            "non-empty element {name} after vertex data"
                        )));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let first = parts.next().unwrap_or("");
                if first == "list" {
                    return Err(IoError::Unsupported(
                        "list property in vertex element".into(),
                    ));
                }
                let kind = ScalarType::parse(first).ok_or_else(|| {
                    IoError::Format(format!("unknown property type {first}"))
                })?;
                let name = parts
                    .next()
                    .ok_or_else(|| IoError::Format(format!("bad property line: {line}")))?
                    .to_string();
                properties.push(VertexProperty {
                    name,
                    kind,
                    offset,
                    token,
                });
                offset += kind.size();
                token += 1;
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(IoError::Format(format!("unexpected header token {other}")));
            }
            None => {}
        }
    }

    let format = format.ok_or_else(|| IoError::Format("missing format line".into()))?;
    let vertex_count =
        vertex_count.ok_or_else(|| IoError::MissingProperty("element vertex".into()))?;

    Ok(Header {
        format,
        vertex_count,
        properties,
        stride: offset,
    })
}

struct FieldMap {
    required: [usize; 14],
    rest: Vec<usize>,
}

fn resolve_fields(header: &Header) -> Result<FieldMap, IoError> {
    let mut required = [usize::MAX; 14];
    for (slot, name) in REQUIRED_PROPERTIES.iter().enumerate() {
        for (i, p) in header.properties.iter().enumerate() {
            if p.name == *name {
                if p.kind != ScalarType::F32 {
                    return Err(IoError::Unsupported(format!(
                        "property {name} must be float"
                    )));
                }
                required[slot] = i;
                break;
            }
        }
        if required[slot] == usize::MAX {
            return Err(IoError::MissingProperty((*name).to_string()));
        }
    }

    // f_rest_k indices must be contiguous from zero so the coefficient order
    // is well defined.
    let mut rest_indexed: Vec<(usize, usize)> = Vec::new();
    for (i, p) in header.properties.iter().enumerate() {
        if let Some(suffix) = p.name.strip_prefix("f_rest_") {
            let k: usize = suffix.parse().map_err(|_| {
                IoError::Format(format!("bad f_rest property name {}", p.name))
            })?;
            if p.kind != ScalarType::F32 {
                return Err(IoError::Unsupported(format!(
                    "property {} must be float",
                    p.name
                )));
            }
            rest_indexed.push((k, i));
        }
    }
    rest_indexed.sort_unstable();
    for (expected, (k, _)) in rest_indexed.iter().enumerate() {
        if *k != expected {
            return Err(IoError::MissingProperty(format!("f_rest_{expected}")));
        }
    }

    Ok(FieldMap {
        required,
        rest: rest_indexed.into_iter().map(|(_, i)| i).collect(),
    })
}

fn read_scalar_as_f32(bytes: &[u8], kind: ScalarType) -> f32 {
    match kind {
        ScalarType::I8 => bytes[0] as i8 as f32,
        ScalarType::U8 => bytes[0] as f32,
        ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f32,
        ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f32,
        ScalarType::I32 => i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as f32,
        ScalarType::U32 => u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as f32,
        ScalarType::F32 => f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        ScalarType::F64 => f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ]) as f32,
    }
}

fn record_from_values(values: &[f32], map: &FieldMap, vertex: usize) -> Result<RawSplatRecord, IoError> {
    let g = |slot: usize| values[map.required[slot]];
    let rotation = [g(10), g(11), g(12), g(13)];
    let norm_sq: f32 = rotation.iter().map(|v| v * v).sum();
    if !norm_sq.is_finite() || norm_sq <= 0.0 {
        return Err(IoError::Format(format!(
            "zero-norm rotation quaternion at vertex {vertex}"
        )));
    }
    Ok(RawSplatRecord {
        position: [g(0), g(1), g(2)],
        sh_dc: [g(3), g(4), g(5)],
        opacity_logit: g(6),
        log_scales: [g(7), g(8), g(9)],
        rotation,
        sh_rest: map.rest.iter().map(|&i| values[i]).collect(),
    })
}

/// Parse a Gaussian-splat PLY from memory.
pub fn parse_splat_ply(bytes: &[u8]) -> Result<Vec<RawSplatRecord>, IoError> {
    let marker = b"end_header";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| IoError::Format("missing end_header".into()))?;
    let mut body_start = header_end + marker.len();
    // Skip the newline terminating end_header (optionally preceded by \r).
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    } else {
        return Err(IoError::Format("end_header not terminated by newline".into()));
    }

    let header_text = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| IoError::Format("header is not valid UTF-8".into()))?;
    let header = parse_header(header_text)?;
    let map = resolve_fields(&header)?;
    let body = &bytes[body_start..];

    let mut records = Vec::with_capacity(header.vertex_count);
    match header.format {
        PayloadFormat::BinaryLittleEndian => {
            let needed = header.stride * header.vertex_count;
            if body.len() < needed {
                return Err(IoError::Truncated {
                    expected: needed,
                    found: body.len(),
                });
            }
            let mut values = vec![0f32; header.properties.len()];
            for v in 0..header.vertex_count {
                let base = v * header.stride;
                for (i, p) in header.properties.iter().enumerate() {
                    values[i] = read_scalar_as_f32(&body[base + p.offset..], p.kind);
                }
                records.push(record_from_values(&values, &map, v)?);
            }
        }
        PayloadFormat::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| IoError::Format("ascii payload is not valid UTF-8".into()))?;
            let mut values = vec![0f32; header.properties.len()];
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for v in 0..header.vertex_count {
                let line = lines.next().ok_or(IoError::Truncated {
                    expected: header.vertex_count,
                    found: v,
                })?;
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() < header.properties.len() {
                    return Err(IoError::Format(format!(
                        "vertex {v}: expected {} values, found {}",
                        header.properties.len(),
                        tokens.len()
                    )));
                }
                for (i, p) in header.properties.iter().enumerate() {
                    values[i] = tokens[p.token].parse::<f32>().map_err(|_| {
                        IoError::Format(format!("vertex {v}: bad number {}", tokens[p.token]))
                    })?;
                }
                records.push(record_from_values(&values, &map, v)?);
            }
        }
    }
    Ok(records)
}

/// Write records as binary little-endian PLY. Every record must carry the
/// same number of `f_rest` coefficients.
pub fn write_splat_ply<W: Write>(mut w: W, records: &[RawSplatRecord]) -> Result<(), IoError> {
    let rest_len = records.first().map_or(0, |r| r.sh_rest.len());
    if records.iter().any(|r| r.sh_rest.len() != rest_len) {
        return Err(IoError::Format(
            "records disagree on f_rest coefficient count".into(),
        ));
    }

    write!(w, "ply\nformat binary_little_endian 1.0\n")?;
    writeln!(w, "element vertex {}", records.len())?;
    for name in ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"] {
        writeln!(w, "property float {name}")?;
    }
    for k in 0..rest_len {
        writeln!(w, "property float f_rest_{k}")?;
    }
    for name in [
        "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    ] {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;

    let put = |w: &mut W, v: f32| w.write_all(&v.to_le_bytes());
    for r in records {
        for v in r.position {
            put(&mut w, v)?;
        }
        for v in r.sh_dc {
            put(&mut w, v)?;
        }
        for &v in &r.sh_rest {
            put(&mut w, v)?;
        }
        put(&mut w, r.opacity_logit)?;
        for v in r.log_scales {
            put(&mut w, v)?;
        }
        for v in r.rotation {
            put(&mut w, v)?;
        }
    }
    Ok(())
}

/// Parse a splat PLY from a file path.
pub fn load_splat_ply(path: &Path) -> Result<Vec<RawSplatRecord>, IoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_splat_ply(&bytes)
}

/// Write a splat PLY to a file path.
pub fn save_splat_ply(path: &Path, records: &[RawSplatRecord]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_splat_ply(&mut w, records)?;
    w.flush()?;
    Ok(())
}
