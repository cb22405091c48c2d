//! OBJ and PLY mesh readers and writers.
//!
//! The OBJ loader handles `v`/`f` records with 1-based (or negative,
//! end-relative) indices and skips texture, normal and material records.
//! The PLY loader handles ASCII and binary-little-endian files with
//! float32 or float64 vertex coordinates, skipping extra properties.

use super::TriangleMesh;
use crate::error::{Error, Result};
use nalgebra::Point3;
use std::io::Write;
use std::path::Path;

/// Loads a mesh, dispatching on the file extension (`.obj` / `.ply`).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => load_obj(path),
        Some("ply") => load_ply(path),
        other => Err(Error::parse(
            path,
            format!("unsupported mesh extension {other:?}"),
        )),
    }
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coord = |what: &str| -> Result<f64> {
                    tokens
                        .next()
                        .ok_or_else(|| {
                            Error::parse(path, format!("line {}: missing {what}", lineno + 1))
                        })?
                        .parse::<f64>()
                        .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))
                };
                let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
                vertices.push(Point3::new(x, y, z));
            }
            Some("f") => {
                let mut face = Vec::new();
                for tok in tokens {
                    // "i", "i/t", "i/t/n", "i//n" -- the vertex index leads
                    let first = tok.split('/').next().unwrap_or("");
                    let raw: i64 = first.parse().map_err(|e| {
                        Error::parse(path, format!("line {}: face index {e}", lineno + 1))
                    })?;
                    let idx = if raw > 0 {
                        (raw - 1) as usize
                    } else if raw < 0 {
                        let back = (-raw) as usize;
                        if back > vertices.len() {
                            return Err(Error::parse(
                                path,
                                format!("line {}: negative index out of range", lineno + 1),
                            ));
                        }
                        vertices.len() - back
                    } else {
                        return Err(Error::parse(
                            path,
                            format!("line {}: zero face index", lineno + 1),
                        ));
                    };
                    face.push(idx);
                }
                if face.len() < 3 {
                    return Err(Error::parse(
                        path,
                        format!("line {}: face with fewer than 3 vertices", lineno + 1),
                    ));
                }
                for k in 1..face.len() - 1 {
                    triangles.push([face[0], face[k], face[k + 1]]);
                }
            }
            // texture, normal, grouping and material records are tolerated
            Some("vt") | Some("vn") | Some("vp") | Some("mtllib") | Some("usemtl") | Some("g")
            | Some("o") | Some("s") | Some("l") => {}
            Some(_) | None => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for v in mesh.vertices() {
        // f64 Display is the shortest representation that round-trips exactly
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in mesh.triangles() {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct PlyProperty {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

struct BinaryCursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> BinaryCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::parse(self.path, "unexpected end of binary data"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self, ty: ScalarType) -> Result<f64> {
        let b = self.take(ty.size())?;
        Ok(match ty {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let data =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    // header is ASCII terminated by an "end_header" line
    let header_end =
        find_header_end(&data).ok_or_else(|| Error::parse(path, "missing end_header"))?;
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| Error::parse(path, "header is not valid ASCII"))?;
    let mut lines = header.lines().map(|l| l.trim_end_matches('\r'));
    if lines.next() != Some("ply") {
        return Err(Error::parse(path, "not a PLY file (missing magic)"));
    }
    let mut format: Option<PlyFormat> = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let mut t = line.split_whitespace();
        match t.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = match t.next() {
                    Some("ascii") => Some(PlyFormat::Ascii),
                    Some("binary_little_endian") => Some(PlyFormat::BinaryLittleEndian),
                    Some(other) => {
                        return Err(Error::parse(path, format!("unsupported format {other}")))
                    }
                    None => return Err(Error::parse(path, "format line without a type")),
                };
            }
            Some("element") => {
                let name = t
                    .next()
                    .ok_or_else(|| Error::parse(path, "element without a name"))?
                    .to_string();
                let count: usize = t
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, "element without a count"))?;
                elements.push(PlyElement {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "property before any element"))?;
                let first = t
                    .next()
                    .ok_or_else(|| Error::parse(path, "property without a type"))?;
                if first == "list" {
                    let count = t
                        .next()
                        .and_then(ScalarType::parse)
                        .ok_or_else(|| Error::parse(path, "bad list count type"))?;
                    let item = t
                        .next()
                        .and_then(ScalarType::parse)
                        .ok_or_else(|| Error::parse(path, "bad list item type"))?;
                    let name = t
                        .next()
                        .ok_or_else(|| Error::parse(path, "list property without a name"))?;
                    element.props.push(PlyProperty {
                        name: name.to_string(),
                        kind: PropKind::List { count, item },
                    });
                } else {
                    let ty = ScalarType::parse(first)
                        .ok_or_else(|| Error::parse(path, format!("bad scalar type {first}")))?;
                    let name = t
                        .next()
                        .ok_or_else(|| Error::parse(path, "property without a name"))?;
                    element.props.push(PlyProperty {
                        name: name.to_string(),
                        kind: PropKind::Scalar(ty),
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::parse(path, format!("unknown header record {other}")))
            }
        }
    }
    let format = format.ok_or_else(|| Error::parse(path, "header has no format line"))?;

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    match format {
        PlyFormat::Ascii => {
            let body = std::str::from_utf8(&data[header_end..])
                .map_err(|_| Error::parse(path, "ASCII body is not valid UTF-8"))?;
            let mut tokens = body.split_whitespace();
            let mut next_f64 = |what: &str| -> Result<f64> {
                tokens
                    .next()
                    .ok_or_else(|| Error::parse(path, format!("missing value for {what}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, format!("{what}: {e}")))
            };
            for element in &elements {
                let is_vertex = element.name == "vertex";
                for _ in 0..element.count {
                    let mut coords = [0.0f64; 3];
                    let mut face: Vec<usize> = Vec::new();
                    for prop in &element.props {
                        match &prop.kind {
                            PropKind::Scalar(_) => {
                                let v = next_f64(&prop.name)?;
                                if let Some(slot) = coordinate_slot(is_vertex, &prop.name) {
                                    coords[slot] = v;
                                }
                            }
                            PropKind::List { .. } => {
                                let n = next_f64(&prop.name)? as usize;
                                let is_face =
                                    element.name == "face" && is_vertex_index_list(&prop.name);
                                for _ in 0..n {
                                    let v = next_f64(&prop.name)?;
                                    if is_face {
                                        face.push(v as usize);
                                    }
                                }
                            }
                        }
                    }
                    finish_row(path, element, coords, &face, &mut vertices, &mut triangles)?;
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut cur = BinaryCursor {
                data: &data,
                pos: header_end,
                path,
            };
            for element in &elements {
                let is_vertex = element.name == "vertex";
                for _ in 0..element.count {
                    let mut coords = [0.0f64; 3];
                    let mut face: Vec<usize> = Vec::new();
                    for prop in &element.props {
                        match &prop.kind {
                            PropKind::Scalar(ty) => {
                                let v = cur.scalar(*ty)?;
                                if let Some(slot) = coordinate_slot(is_vertex, &prop.name) {
                                    coords[slot] = v;
                                }
                            }
                            PropKind::List { count, item } => {
                                let n = cur.scalar(*count)? as usize;
                                let is_face =
                                    element.name == "face" && is_vertex_index_list(&prop.name);
                                for _ in 0..n {
                                    let v = cur.scalar(*item)?;
                                    if is_face {
                                        face.push(v as usize);
                                    }
                                }
                            }
                        }
                    }
                    finish_row(path, element, coords, &face, &mut vertices, &mut triangles)?;
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

fn find_header_end(data: &[u8]) -> Option<usize> {
    let needle = b"end_header";
    let pos = data.windows(needle.len()).position(|w| w == needle)?;
    // consume the rest of that line including the newline
    let mut end = pos + needle.len();
    while end < data.len() && data[end] != b'\n' {
        end += 1;
    }
    Some((end + 1).min(data.len()))
}

fn coordinate_slot(is_vertex: bool, name: &str) -> Option<usize> {
    if !is_vertex {
        return None;
    }
    match name {
        "x" => Some(0),
        "y" => Some(1),
        "z" => Some(2),
        _ => None,
    }
}

fn is_vertex_index_list(name: &str) -> bool {
    name == "vertex_indices" || name == "vertex_index"
}

fn finish_row(
    path: &Path,
    element: &PlyElement,
    coords: [f64; 3],
    face: &[usize],
    vertices: &mut Vec<Point3<f64>>,
    triangles: &mut Vec<[usize; 3]>,
) -> Result<()> {
    if element.name == "vertex" {
        vertices.push(Point3::new(coords[0], coords[1], coords[2]));
    } else if element.name == "face" {
        if face.len() < 3 {
            return Err(Error::parse(path, "face with fewer than 3 indices"));
        }
        for k in 1..face.len() - 1 {
            triangles.push([face[0], face[k], face[k + 1]]);
        }
    }
    Ok(())
}

/// Writes a PLY file with float64 coordinates and optional per-vertex
/// uchar RGB colours.
pub fn save_ply(
    mesh: &TriangleMesh,
    path: impl AsRef<Path>,
    format: PlyFormat,
    colors: Option<&[[u8; 3]]>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(c) = colors {
        if c.len() != mesh.n_vertices() {
            return Err(Error::VertexCountMismatch {
                expected: mesh.n_vertices(),
                got: c.len(),
            });
        }
    }
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    header.push_str(&format!("element vertex {}\n", mesh.n_vertices()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!("element face {}\n", mesh.n_triangles()));
    header.push_str("property list uchar int vertex_indices\n");
    header.push_str("end_header\n");

    let mut out: Vec<u8> = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            for (i, v) in mesh.vertices().iter().enumerate() {
                let mut line = format!("{} {} {}", v.x, v.y, v.z);
                if let Some(c) = colors {
                    line.push_str(&format!(" {} {} {}", c[i][0], c[i][1], c[i][2]));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            for t in mesh.triangles() {
                out.extend_from_slice(format!("3 {} {} {}\n", t[0], t[1], t[2]).as_bytes());
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, v) in mesh.vertices().iter().enumerate() {
                out.extend_from_slice(&v.x.to_le_bytes());
                out.extend_from_slice(&v.y.to_le_bytes());
                out.extend_from_slice(&v.z.to_le_bytes());
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
            }
            for t in mesh.triangles() {
                out.push(3u8);
                for &i in t {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(&out)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
