//! Minimal PLY reader/writer for scan point clouds.
//!
//! Supports `ascii` and `binary_little_endian` payloads. Only the `vertex`
//! element is interpreted (`x`, `y`, `z` and optionally `nx`, `ny`, `nz`);
//! other elements, including list properties such as faces, are parsed and
//! skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::{Geom3dError, PointCloud};

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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, buf: &[u8]) -> f64 {
        match self {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
}

fn malformed(msg: impl Into<String>) -> Geom3dError {
    Geom3dError::MalformedPly(msg.into())
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header, Geom3dError> {
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String| -> Result<(), Geom3dError> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(malformed("unexpected end of header"));
        }
        Ok(())
    };
    next_line(reader, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(malformed("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(reader, &mut line)?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => {
                format = Some(match tokens.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some("binary_big_endian") => {
                        return Err(Geom3dError::UnsupportedPly("binary_big_endian".into()))
                    }
                    other => return Err(malformed(format!("unknown format {other:?}"))),
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tokens.next().ok_or_else(|| malformed("element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed(format!("bad count for element {name}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                let ty = tokens.next().ok_or_else(|| malformed("property without type"))?;
                let prop = if ty == "list" {
                    let count = tokens.next().and_then(Scalar::parse);
                    let item = tokens.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => Property::List { count, item },
                        _ => return Err(malformed("bad list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| malformed(format!("unknown type {ty}")))?;
                    let name = tokens.next().ok_or_else(|| malformed("property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(malformed(format!("unexpected header keyword {other}"))),
        }
    }
    let format = format.ok_or_else(|| malformed("missing format line"))?;
    Ok(Header { format, elements })
}

/// Column positions of the vertex properties we consume.
struct VertexLayout {
    xyz: [usize; 3],
    normal: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element) -> Result<VertexLayout, Geom3dError> {
    let find = |wanted: &str| -> Result<Option<usize>, Geom3dError> {
        for (i, p) in element.properties.iter().enumerate() {
            if let Property::Scalar { name, ty } = p {
                if name == wanted {
                    if !ty.is_float() {
                        return Err(malformed(format!("vertex property {wanted} must be float or double")));
                    }
                    return Ok(Some(i));
                }
            }
        }
        Ok(None)
    };
    let mut xyz = [0; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = find(name)?.ok_or_else(|| malformed(format!("vertex lacks property {name}")))?;
    }
    let normal = match (find("nx")?, find("ny")?, find("nz")?) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        (None, None, None) => None,
        _ => return Err(malformed("incomplete normal properties")),
    };
    Ok(VertexLayout { xyz, normal })
}

/// Loads a PLY point cloud. The scan id is the file stem.
pub fn load_point_cloud(path: impl AsRef<Path>, require_normals: bool) -> Result<PointCloud, Geom3dError> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = File::open(path)?;
    read_point_cloud(BufReader::new(file), id, require_normals)
}

/// Reads a PLY document from any buffered reader.
pub fn read_point_cloud<R: BufRead>(
    mut reader: R,
    id: impl Into<String>,
    require_normals: bool,
) -> Result<PointCloud, Geom3dError> {
    let header = read_header(&mut reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| malformed("no vertex element"))?;
    let layout = vertex_layout(&header.elements[vertex_pos])?;
    if require_normals && layout.normal.is_none() {
        return Err(Geom3dError::MissingNormals);
    }
    if header.elements[vertex_pos].count == 0 {
        return Err(Geom3dError::EmptyCloud);
    }

    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut row = Vec::new();
    let mut sink = |idx: usize, row: &[f64]| {
        if idx == vertex_pos {
            points.push(Point3::new(row[layout.xyz[0]], row[layout.xyz[1]], row[layout.xyz[2]]));
            if let Some(n) = layout.normal {
                normals.push(Vector3::new(row[n[0]], row[n[1]], row[n[2]]));
            }
        }
    };

    match header.format {
        PlyFormat::Ascii => {
            let mut text = String::new();
            reader.read_to_string(&mut text)?;
            let mut tokens = text.split_ascii_whitespace();
            let mut next = || -> Result<f64, Geom3dError> {
                tokens
                    .next()
                    .ok_or_else(|| malformed("payload shorter than header declares"))?
                    .parse::<f64>()
                    .map_err(|e| malformed(format!("bad number: {e}")))
            };
            for (ei, element) in header.elements.iter().enumerate() {
                for _ in 0..element.count {
                    row.clear();
                    for prop in &element.properties {
                        match prop {
                            Property::Scalar { .. } => row.push(next()?),
                            Property::List { .. } => {
                                let n = next()?;
                                if n < 0.0 || n.fract() != 0.0 {
                                    return Err(malformed("bad list length"));
                                }
                                for _ in 0..n as usize {
                                    next()?;
                                }
                                row.push(n);
                            }
                        }
                    }
                    sink(ei, &row);
                }
            }
            if tokens.next().is_some() {
                return Err(malformed("payload longer than header declares"));
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf = [0u8; 8];
            for (ei, element) in header.elements.iter().enumerate() {
                for _ in 0..element.count {
                    row.clear();
                    for prop in &element.properties {
                        match *prop {
                            Property::Scalar { ty, .. } => {
                                read_exact(&mut reader, &mut buf[..ty.size()])?;
                                row.push(ty.read_le(&buf));
                            }
                            Property::List { count, item } => {
                                read_exact(&mut reader, &mut buf[..count.size()])?;
                                let n = count.read_le(&buf);
                                if n < 0.0 {
                                    return Err(malformed("negative list length"));
                                }
                                let mut skip = vec![0u8; n as usize * item.size()];
                                read_exact(&mut reader, &mut skip)?;
                                row.push(n);
                            }
                        }
                    }
                    sink(ei, &row);
                }
            }
            let mut rest = [0u8; 1];
            if reader.read(&mut rest)? != 0 {
                return Err(malformed("payload longer than header declares"));
            }
        }
    }

    PointCloud::with_normalized_normals(id, points, normals).map_err(|e| match e {
        Geom3dError::NotUnitNormal(i) => malformed(format!("zero-length normal at vertex {i}")),
        Geom3dError::NonFinite(i) => malformed(format!("non-finite coordinate at vertex {i}")),
        other => other,
    })
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<(), Geom3dError> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            malformed("payload shorter than header declares")
        } else {
            Geom3dError::Io(e)
        }
    })
}

/// Writes `cloud` with `double` coordinates (and normals when present).
pub fn write_point_cloud<W: Write>(mut out: W, cloud: &PointCloud, format: PlyFormat) -> std::io::Result<()> {
    let has_normals = !cloud.normals().is_empty();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply")?;
    writeln!(out, "format {fmt} 1.0")?;
    writeln!(out, "comment scan {}", cloud.id())?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for name in ["x", "y", "z"] {
        writeln!(out, "property double {name}")?;
    }
    if has_normals {
        for name in ["nx", "ny", "nz"] {
            writeln!(out, "property double {name}")?;
        }
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        let mut values = vec![p.x, p.y, p.z];
        if has_normals {
            values.extend(cloud.normals()[i].iter());
        }
        match format {
            PlyFormat::Ascii => {
                let line: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in values {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    out.flush()
}

pub fn save_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<(), Geom3dError> {
    let file = File::create(path)?;
    write_point_cloud(BufWriter::new(file), cloud, format)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const ASCII_WITH_NORMALS: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 0 0 2\n1 0 0 0 3 0\n0 1 0 1 0 0\n3 0 1 2\n";

    #[test]
    fn ascii_with_normals_and_faces() {
        let c = read_point_cloud(Cursor::new(ASCII_WITH_NORMALS), "L0001D", true).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.id(), "L0001D");
        assert_eq!(c.normals()[0], Vector3::z());
        assert_eq!(c.normals()[1], Vector3::y());
        for n in c.normals() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_normals() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(matches!(
            read_point_cloud(Cursor::new(text), "a", true),
            Err(Geom3dError::MissingNormals)
        ));
        let c = read_point_cloud(Cursor::new(text), "a", false).unwrap();
        assert_eq!(c.points()[0], Point3::new(1.0, 2.0, 3.0));
        assert!(c.normals().is_empty());
    }

    #[test]
    fn header_payload_mismatch() {
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(matches!(read_point_cloud(Cursor::new(short), "a", false), Err(Geom3dError::MalformedPly(_))));
        let mut bin = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        bin.extend_from_slice(&[0u8; 12]);
        assert!(matches!(read_point_cloud(Cursor::new(bin), "a", false), Err(Geom3dError::MalformedPly(_))));
    }

    #[test]
    fn empty_and_big_endian() {
        let empty = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(matches!(read_point_cloud(Cursor::new(empty), "a", false), Err(Geom3dError::EmptyCloud)));
        let be = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(read_point_cloud(Cursor::new(be), "a", false), Err(Geom3dError::UnsupportedPly(_))));
    }

    #[test]
    fn binary_float32_with_extra_properties() {
        let mut bin = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty float nx\nproperty float ny\nproperty float nz\nend_header\n".to_vec();
        for v in [[0.5f32, -1.0, 2.0], [3.0, 4.0, 5.0]] {
            for c in v {
                bin.extend_from_slice(&c.to_le_bytes());
            }
            bin.push(200);
            for c in [0.0f32, 0.0, -1.0] {
                bin.extend_from_slice(&c.to_le_bytes());
            }
        }
        let c = read_point_cloud(Cursor::new(bin), "b", true).unwrap();
        assert_eq!(c.points()[0], Point3::new(0.5, -1.0, 2.0));
        assert_eq!(c.normals()[1], -Vector3::z());
    }
}
