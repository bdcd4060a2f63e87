//! Minimal PLY support: `ascii` and `binary_little_endian` vertex clouds
//! with `x/y/z` coordinates and 8-bit `red/green/blue` colors. Other
//! elements and properties are parsed and skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{ColorSpace, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn ply_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Ply {
        offset,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let Some(eol) = rest.iter().position(|&b| b == b'\n') else {
            return Err(ply_err(offset, "unterminated header"));
        };
        let line_start = offset;
        let line = std::str::from_utf8(&rest[..eol])
            .map_err(|_| ply_err(line_start, "header is not valid text"))?
            .trim_end_matches('\r');
        offset += eol + 1;
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");
        if first {
            if line.trim() != "ply" {
                return Err(ply_err(0, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        match keyword {
            "format" => {
                format = Some(match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(ply_err(line_start, format!("unsupported format '{other}'")))
                    }
                    None => return Err(ply_err(line_start, "format line lacks a format name")),
                });
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = words
                    .next()
                    .ok_or_else(|| ply_err(line_start, "element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| ply_err(line_start, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| ply_err(line_start, "property before any element"))?;
                let ty = words
                    .next()
                    .ok_or_else(|| ply_err(line_start, "property without a type"))?;
                let kind = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropKind::List { count, item },
                        _ => return Err(ply_err(line_start, "malformed list property")),
                    }
                } else {
                    PropKind::Scalar(Scalar::parse(ty).ok_or_else(|| {
                        ply_err(line_start, format!("unknown property type '{ty}'"))
                    })?)
                };
                let name = words
                    .next()
                    .ok_or_else(|| ply_err(line_start, "property without a name"))?;
                element.props.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            "end_header" => break,
            other => {
                return Err(ply_err(
                    line_start,
                    format!("unexpected header keyword '{other}'"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| ply_err(offset, "header lacks a format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
}

fn vertex_layout(element: &Element, offset: usize) -> Result<VertexLayout> {
    let find = |name: &str| element.props.iter().position(|p| p.name == name);
    let mut xyz = [0; 3];
    for (slot, name) in ["x", "y", "z"].iter().enumerate() {
        let i = find(name).ok_or_else(|| ply_err(offset, format!("vertex lacks '{name}'")))?;
        if !matches!(element.props[i].kind, PropKind::Scalar(_)) {
            return Err(ply_err(offset, format!("'{name}' must be a scalar")));
        }
        xyz[slot] = i;
    }
    let mut rgb = [0; 3];
    for (slot, name) in ["red", "green", "blue"].iter().enumerate() {
        let i = find(name).ok_or(Error::AttributesRequired)?;
        match element.props[i].kind {
            PropKind::Scalar(Scalar::U8) => {}
            _ => return Err(ply_err(offset, format!("'{name}' must be an 8-bit uchar"))),
        }
        rgb[slot] = i;
    }
    Ok(VertexLayout { xyz, rgb })
}

/// Reads a vertex cloud. Colors come back tagged RGB in `[0, 1]`.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    parse_ply(&bytes)
}

pub(crate) fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ply_err(header.body_offset, "no vertex element"))?;
    let vertex = &header.elements[vi];
    let layout = vertex_layout(vertex, header.body_offset)?;
    let n = vertex.count;
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut positions = Array2::<f64>::zeros((n, 3));
    let mut colors = Array2::<f64>::zeros((n, 3));
    let mut values = vec![0.0f64; vertex.props.len()];

    match header.format {
        PlyFormat::Ascii => {
            let mut tokens = AsciiTokens::new(bytes, header.body_offset);
            for element in &header.elements[..vi] {
                for _ in 0..element.count {
                    for p in &element.props {
                        tokens.skip_property(&p.kind)?;
                    }
                }
            }
            for r in 0..n {
                for (slot, p) in vertex.props.iter().enumerate() {
                    match p.kind {
                        PropKind::Scalar(Scalar::F32) => {
                            values[slot] = tokens.number()? as f32 as f64
                        }
                        PropKind::Scalar(_) => values[slot] = tokens.number()?,
                        PropKind::List { .. } => tokens.skip_property(&p.kind)?,
                    }
                }
                store_row(&values, &layout, r, &mut positions, &mut colors);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut cursor = BinCursor {
                bytes,
                pos: header.body_offset,
            };
            for element in &header.elements[..vi] {
                for _ in 0..element.count {
                    for p in &element.props {
                        cursor.skip_property(&p.kind)?;
                    }
                }
            }
            for r in 0..n {
                for (slot, p) in vertex.props.iter().enumerate() {
                    match p.kind {
                        PropKind::Scalar(s) => values[slot] = cursor.scalar(s)?,
                        PropKind::List { .. } => cursor.skip_property(&p.kind)?,
                    }
                }
                store_row(&values, &layout, r, &mut positions, &mut colors);
            }
        }
    }
    PointCloud::new(positions, colors, ColorSpace::Rgb)
}

fn store_row(
    values: &[f64],
    layout: &VertexLayout,
    r: usize,
    positions: &mut Array2<f64>,
    colors: &mut Array2<f64>,
) {
    for d in 0..3 {
        positions[[r, d]] = values[layout.xyz[d]];
        colors[[r, d]] = values[layout.rgb[d]] / 255.0;
    }
}

struct AsciiTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> AsciiTokens<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn next_token(&mut self) -> Result<(usize, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ply_err(start, "unexpected end of data"));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| ply_err(start, "non-text data in ascii body"))?;
        Ok((start, tok))
    }

    fn number(&mut self) -> Result<f64> {
        let (at, tok) = self.next_token()?;
        tok.parse::<f64>()
            .map_err(|_| ply_err(at, format!("'{tok}' is not a number")))
    }

    fn skip_property(&mut self, kind: &PropKind) -> Result<()> {
        match kind {
            PropKind::Scalar(_) => {
                self.number()?;
            }
            PropKind::List { .. } => {
                let at = self.pos;
                let count = self.number()?;
                if count < 0.0 || count.fract() != 0.0 {
                    return Err(ply_err(at, "invalid list length"));
                }
                for _ in 0..count as usize {
                    self.number()?;
                }
            }
        }
        Ok(())
    }
}

struct BinCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BinCursor<'_> {
    fn scalar(&mut self, s: Scalar) -> Result<f64> {
        let size = s.size();
        if self.pos + size > self.bytes.len() {
            return Err(ply_err(self.pos, "unexpected end of binary data"));
        }
        let v = s.read_le(&self.bytes[self.pos..self.pos + size]);
        self.pos += size;
        Ok(v)
    }

    fn skip_property(&mut self, kind: &PropKind) -> Result<()> {
        match *kind {
            PropKind::Scalar(s) => {
                self.scalar(s)?;
            }
            PropKind::List { count, item } => {
                let at = self.pos;
                let n = self.scalar(count)?;
                if n < 0.0 {
                    return Err(ply_err(at, "negative list length"));
                }
                let skip = n as usize * item.size();
                if self.pos + skip > self.bytes.len() {
                    return Err(ply_err(self.pos, "unexpected end of binary data"));
                }
                self.pos += skip;
            }
        }
        Ok(())
    }
}

/// 8-bit color with round-half-away-from-zero.
pub(crate) fn color_byte(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes `x/y/z` as `float` when every coordinate is exactly representable
/// in 32 bits and as `double` otherwise, so positions round-trip bit-exactly.
pub fn write_ply(pc: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let bytes = encode_ply(pc, format)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn encode_ply(pc: &PointCloud, format: PlyFormat) -> Result<Vec<u8>> {
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let rgb = pc.rgb();
    let positions = pc.positions();
    let single = positions.iter().all(|&v| (v as f32) as f64 == v);
    let ty = if single { "float" } else { "double" };
    let mut out = Vec::new();
    let fmt_name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {fmt_name} 1.0\nelement vertex {}\n\
         property {ty} x\nproperty {ty} y\nproperty {ty} z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.len()
    )?;
    for (p, c) in positions.rows().into_iter().zip(rgb.rows()) {
        let bytes = [color_byte(c[0]), color_byte(c[1]), color_byte(c[2])];
        match format {
            PlyFormat::Ascii => {
                if single {
                    write!(out, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
                } else {
                    write!(out, "{} {} {}", p[0], p[1], p[2])?;
                }
                writeln!(out, " {} {} {}", bytes[0], bytes[1], bytes[2])?;
            }
            PlyFormat::BinaryLittleEndian => {
                for d in 0..3 {
                    if single {
                        out.extend_from_slice(&(p[d] as f32).to_le_bytes());
                    } else {
                        out.extend_from_slice(&p[d].to_le_bytes());
                    }
                }
                out.extend_from_slice(&bytes);
            }
        }
    }
    Ok(out)
}
