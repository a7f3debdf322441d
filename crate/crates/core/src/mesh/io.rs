//! OBJ and PLY (ascii, binary little/big endian) mesh readers and writers.
//!
//! Coordinates are millimeters; writers record this in the file header.
//! Quad faces are split as `(v0,v1,v2), (v0,v2,v3)`; larger polygons are rejected.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use super::{MeshError, MeshResult, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply(PlyEncoding),
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> MeshResult<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply(PlyEncoding::BinaryLittleEndian)),
            _ => Err(MeshError::UnsupportedFormat(path.display().to_string())),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> MeshError {
    MeshError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(name: &str, location: String, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: name.to_string(),
        location,
        message: message.into(),
    }
}

pub fn load_mesh(path: &Path) -> MeshResult<TriMesh> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let name = path.display().to_string();
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => {
            let text = String::from_utf8(bytes).map_err(|e| {
                parse_err(
                    &name,
                    format!("byte {}", e.utf8_error().valid_up_to()),
                    "invalid UTF-8",
                )
            })?;
            read_obj(&text, &name)
        }
        MeshFormat::Ply(_) => read_ply(&bytes, &name),
    }
}

/// Save as OBJ or binary little-endian PLY, chosen by extension.
pub fn save_mesh(mesh: &TriMesh, path: &Path) -> MeshResult<()> {
    save_mesh_with(mesh, path, MeshFormat::from_path(path)?)
}

pub fn save_mesh_with(mesh: &TriMesh, path: &Path, format: MeshFormat) -> MeshResult<()> {
    let bytes = match format {
        MeshFormat::Obj => write_obj(mesh).into_bytes(),
        MeshFormat::Ply(enc) => write_ply(mesh, enc, &[]),
    };
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Binary PLY with extra per-vertex `double` properties.
pub fn save_ply_with_attributes(
    mesh: &TriMesh,
    path: &Path,
    attributes: &[(&str, &[f64])],
) -> MeshResult<()> {
    for (name, values) in attributes {
        if values.len() != mesh.vertex_count() {
            log::error!("vertex attribute {name} has {} values", values.len());
            return Err(MeshError::VertexCountMismatch {
                expected: mesh.vertex_count(),
                actual: values.len(),
            });
        }
    }
    let bytes = write_ply(mesh, PlyEncoding::BinaryLittleEndian, attributes);
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn push_face(
    tris: &mut Vec<[usize; 3]>,
    poly: &[usize],
    name: &str,
    location: impl Fn() -> String,
) -> MeshResult<()> {
    match poly.len() {
        3 => tris.push([poly[0], poly[1], poly[2]]),
        4 => {
            log::warn!("{name}: quad face at {} fan-triangulated", location());
            tris.push([poly[0], poly[1], poly[2]]);
            tris.push([poly[0], poly[2], poly[3]]);
        }
        n => {
            return Err(parse_err(
                name,
                location(),
                format!("unsupported polygon with {n} vertices"),
            ))
        }
    }
    Ok(())
}

pub fn read_obj(text: &str, name: &str) -> MeshResult<TriMesh> {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let loc = || format!("line {}", ln + 1);
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = it
                        .next()
                        .ok_or_else(|| parse_err(name, loc(), "vertex needs 3 coordinates"))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| parse_err(name, loc(), format!("bad coordinate {tok:?}")))?;
                }
                verts.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::with_capacity(4);
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let idx: i64 = first
                        .parse()
                        .map_err(|_| parse_err(name, loc(), format!("bad face index {tok:?}")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        verts.len() as i64 + idx
                    } else {
                        return Err(parse_err(name, loc(), "face index 0 is invalid in OBJ"));
                    };
                    if resolved < 0 || resolved as usize >= verts.len() {
                        return Err(parse_err(
                            name,
                            loc(),
                            format!("face index {idx} out of range"),
                        ));
                    }
                    poly.push(resolved as usize);
                }
                push_face(&mut tris, &poly, name, loc)?;
            }
            _ => {}
        }
    }
    TriMesh::new(verts, tris)
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertex_count() * 48 + mesh.triangle_count() * 24);
    s.push_str("# units: millimeters\n");
    for p in mesh.vertices() {
        // `{}` on f64 prints the shortest string that parses back to the same value.
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn read(self, b: &[u8], le: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if le {
                    <$t>::from_le_bytes(arr)
                } else {
                    <$t>::from_be_bytes(arr)
                }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => rd!(i16, 2),
            Scalar::U16 => rd!(u16, 2),
            Scalar::I32 => rd!(i32, 4),
            Scalar::U32 => rd!(u32, 4),
            Scalar::F32 => rd!(f32, 4),
            Scalar::F64 => rd!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar {
        name: String,
        ty: Scalar,
    },
    List {
        name: String,
        count: Scalar,
        item: Scalar,
    },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Binary { little_endian: bool },
}

pub fn read_ply(bytes: &[u8], name: &str) -> MeshResult<TriMesh> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |i| *pos + i);
        let line = String::from_utf8_lossy(&bytes[*pos..end])
            .trim_end_matches('\r')
            .to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some((line_no, line))
    };

    match next_line(&mut pos) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(name, "line 1".into(), "missing 'ply' magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines;
    loop {
        let (ln, line) = next_line(&mut pos)
            .ok_or_else(|| parse_err(name, format!("byte {pos}"), "unterminated header"))?;
        header_lines = ln;
        let loc = format!("line {ln}");
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::Binary {
                        little_endian: true,
                    },
                    Some("binary_big_endian") => Encoding::Binary {
                        little_endian: false,
                    },
                    other => return Err(parse_err(name, loc, format!("unknown format {other:?}"))),
                });
            }
            Some("element") => {
                let (Some(ename), Some(count)) = (toks.get(1), toks.get(2)) else {
                    return Err(parse_err(name, loc, "malformed element line"));
                };
                let count = count
                    .parse()
                    .map_err(|_| parse_err(name, loc.clone(), "bad element count"))?;
                elements.push(Element {
                    name: ename.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(name, loc.clone(), "property before element"))?;
                let prop = if toks.get(1) == Some(&"list") {
                    match (
                        toks.get(2).and_then(|s| Scalar::parse(s)),
                        toks.get(3).and_then(|s| Scalar::parse(s)),
                        toks.get(4),
                    ) {
                        (Some(count), Some(item), Some(pname)) => Property::List {
                            name: pname.to_string(),
                            count,
                            item,
                        },
                        _ => return Err(parse_err(name, loc, "malformed list property")),
                    }
                } else {
                    match (toks.get(1).and_then(|s| Scalar::parse(s)), toks.get(2)) {
                        (Some(ty), Some(pname)) => Property::Scalar {
                            name: pname.to_string(),
                            ty,
                        },
                        _ => return Err(parse_err(name, loc, "malformed property")),
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => {
                return Err(parse_err(
                    name,
                    loc,
                    format!("unexpected header keyword {other:?}"),
                ))
            }
        }
    }
    let encoding =
        encoding.ok_or_else(|| parse_err(name, "header".into(), "missing format line"))?;

    let mut verts: Vec<Point3<f64>> = Vec::new();
    let mut regions: Vec<u8> = Vec::new();
    let mut has_regions = false;
    let mut tris: Vec<[usize; 3]> = Vec::new();

    let mut ascii_lines = match encoding {
        Encoding::Ascii => Some(
            std::str::from_utf8(&bytes[pos..])
                .map_err(|_| parse_err(name, format!("byte {pos}"), "invalid UTF-8 in ascii body"))?
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty()),
        ),
        Encoding::Binary { .. } => None,
    };

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        for _ in 0..el.count {
            // Values for each property: scalars as one value, lists as their items.
            let mut values: Vec<(usize, Vec<f64>)> = Vec::with_capacity(el.props.len());
            match encoding {
                Encoding::Ascii => {
                    let (ln, line) = ascii_lines.as_mut().unwrap().next().ok_or_else(|| {
                        parse_err(
                            name,
                            "end of file".into(),
                            format!("missing {} records", el.name),
                        )
                    })?;
                    let loc = || format!("line {}", header_lines + ln + 1);
                    let mut toks = line.split_whitespace();
                    let mut take = || -> MeshResult<f64> {
                        let t = toks
                            .next()
                            .ok_or_else(|| parse_err(name, loc(), "too few values"))?;
                        t.parse::<f64>()
                            .map_err(|_| parse_err(name, loc(), format!("bad number {t:?}")))
                    };
                    for (pi, p) in el.props.iter().enumerate() {
                        match p {
                            Property::Scalar { .. } => values.push((pi, vec![take()?])),
                            Property::List { .. } => {
                                let n = take()?;
                                if n < 0.0 || n.fract() != 0.0 {
                                    return Err(parse_err(name, loc(), "bad list length"));
                                }
                                let items = (0..n as usize)
                                    .map(|_| take())
                                    .collect::<MeshResult<Vec<_>>>()?;
                                values.push((pi, items));
                            }
                        }
                    }
                }
                Encoding::Binary { little_endian } => {
                    for (pi, p) in el.props.iter().enumerate() {
                        let mut read = |ty: Scalar| -> MeshResult<f64> {
                            if pos + ty.size() > bytes.len() {
                                return Err(parse_err(
                                    name,
                                    format!("byte {pos}"),
                                    "unexpected end of binary data",
                                ));
                            }
                            let v = ty.read(&bytes[pos..], little_endian);
                            pos += ty.size();
                            Ok(v)
                        };
                        match p {
                            Property::Scalar { ty, .. } => values.push((pi, vec![read(*ty)?])),
                            Property::List { count, item, .. } => {
                                let n = read(*count)?;
                                if n < 0.0 {
                                    return Err(parse_err(
                                        name,
                                        format!("byte {pos}"),
                                        "negative list length",
                                    ));
                                }
                                let items = (0..n as usize)
                                    .map(|_| read(*item))
                                    .collect::<MeshResult<Vec<_>>>()?;
                                values.push((pi, items));
                            }
                        }
                    }
                }
            }
            let record = if is_vertex { verts.len() } else { tris.len() };
            let loc = || match encoding {
                Encoding::Ascii => format!("{} element {record}", el.name),
                Encoding::Binary { .. } => format!("byte {pos}"),
            };
            if is_vertex {
                let mut c = [None; 3];
                let mut region = None;
                for (pi, vals) in &values {
                    if let Property::Scalar { name: pn, .. } = &el.props[*pi] {
                        match pn.as_str() {
                            "x" => c[0] = Some(vals[0]),
                            "y" => c[1] = Some(vals[0]),
                            "z" => c[2] = Some(vals[0]),
                            "region" => region = Some(vals[0]),
                            _ => {}
                        }
                    }
                }
                match c {
                    [Some(x), Some(y), Some(z)] => verts.push(Point3::new(x, y, z)),
                    _ => return Err(parse_err(name, loc(), "vertex element lacks x/y/z")),
                }
                if let Some(r) = region {
                    has_regions = true;
                    regions.push(r as u8);
                }
            } else if is_face {
                let list = values.iter().find_map(|(pi, v)| match &el.props[*pi] {
                    Property::List { name: pn, .. }
                        if pn == "vertex_indices" || pn == "vertex_index" =>
                    {
                        Some(v)
                    }
                    _ => None,
                });
                let list = list
                    .ok_or_else(|| parse_err(name, loc(), "face element lacks vertex_indices"))?;
                let mut poly = Vec::with_capacity(list.len());
                for &v in list {
                    if v < 0.0 || v.fract() != 0.0 || v as usize >= verts.len() {
                        return Err(parse_err(
                            name,
                            loc(),
                            format!("face index {v} out of range"),
                        ));
                    }
                    poly.push(v as usize);
                }
                push_face(&mut tris, &poly, name, loc)?;
            }
        }
    }
    let mesh = TriMesh::new(verts, tris)?;
    if has_regions && regions.len() == mesh.vertex_count() {
        mesh.with_region_labels(regions)
    } else {
        Ok(mesh)
    }
}

pub fn write_ply(mesh: &TriMesh, encoding: PlyEncoding, attributes: &[(&str, &[f64])]) -> Vec<u8> {
    let regions = mesh.region_labels();
    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str(match encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    header.push_str("comment units: millimeters\n");
    let _ = writeln!(header, "element vertex {}", mesh.vertex_count());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if regions.is_some() {
        header.push_str("property uchar region\n");
    }
    for (name, _) in attributes {
        let _ = writeln!(header, "property double {name}");
    }
    let _ = writeln!(header, "element face {}", mesh.triangle_count());
    header.push_str("property list uchar int vertex_indices\nend_header\n");

    let mut out = header.into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            let mut s = String::new();
            for (i, p) in mesh.vertices().iter().enumerate() {
                let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
                if let Some(r) = regions {
                    let _ = write!(s, " {}", r[i]);
                }
                for (_, vals) in attributes {
                    let _ = write!(s, " {}", vals[i]);
                }
                s.push('\n');
            }
            for t in mesh.triangles() {
                let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
            }
            out.extend_from_slice(s.as_bytes());
        }
        PlyEncoding::BinaryLittleEndian => {
            out.reserve(mesh.vertex_count() * 24 + mesh.triangle_count() * 13);
            for (i, p) in mesh.vertices().iter().enumerate() {
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(r) = regions {
                    out.push(r[i]);
                }
                for (_, vals) in attributes {
                    out.extend_from_slice(&vals[i].to_le_bytes());
                }
            }
            for t in mesh.triangles() {
                out.push(3);
                for &i in t {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, unit_cube};
    use proptest::prelude::*;

    #[test]
    fn cube_round_trips_through_every_format() {
        let dir = tempfile::tempdir().unwrap();
        let cube = unit_cube();
        for (file, fmt) in [
            ("c.obj", MeshFormat::Obj),
            ("a.ply", MeshFormat::Ply(PlyEncoding::Ascii)),
            ("b.ply", MeshFormat::Ply(PlyEncoding::BinaryLittleEndian)),
        ] {
            let path = dir.path().join(file);
            save_mesh_with(&cube, &path, fmt).unwrap();
            let back = load_mesh(&path).unwrap();
            assert_eq!(back.triangles(), cube.triangles());
            for (a, b) in back.vertices().iter().zip(cube.vertices()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn obj_quad_is_fan_triangulated() {
        let m = read_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", "q.obj").unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
        let m = read_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1/1/1 2/2/2 -1\n", "s.obj").unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_errors_carry_line_numbers() {
        let err = read_obj("v 0 0 0\nv 1 0 0\nv 1 x 0\n", "bad.obj").unwrap_err();
        match err {
            MeshError::Parse { location, .. } => assert_eq!(location, "line 3"),
            other => panic!("{other:?}"),
        }
        let err = read_obj(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 2 2 2\nv 3 3 3\nf 1 2 3 4 5\n",
            "p.obj",
        )
        .unwrap_err();
        assert!(matches!(err, MeshError::Parse { .. }));
        assert!(read_obj("v 0 0 0\nf 1 2 3\n", "r.obj").is_err());
    }

    #[test]
    fn ply_with_no_faces_is_a_point_cloud() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 2 3\n";
        let m = read_ply(text.as_bytes(), "pc.ply").unwrap();
        assert_eq!(m.vertex_count(), 2);
        assert_eq!(m.triangle_count(), 0);
    }

    #[test]
    fn ply_truncated_binary_reports_byte_offset() {
        let cube = unit_cube();
        let bytes = write_ply(&cube, PlyEncoding::BinaryLittleEndian, &[]);
        let err = read_ply(&bytes[..bytes.len() - 7], "t.ply").unwrap_err();
        match err {
            MeshError::Parse { location, .. } => assert!(location.starts_with("byte ")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ply_skips_unknown_elements_and_reads_regions() {
        let cube = unit_cube()
            .with_region_labels(vec![0, 1, 2, 3, 4, 5, 6, 7])
            .unwrap();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let bytes = write_ply(&cube, enc, &[("distance", &[0.5; 8])]);
            let back = read_ply(&bytes, "r.ply").unwrap();
            assert_eq!(back.region_labels(), cube.region_labels());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn coordinates_round_trip_exactly(scale in -1e4f64..1e4, shift in prop::array::uniform3(-1e3f64..1e3)) {
            let m = icosphere(1.0, 1).transformed(|p| {
                Point3::new(p.x * scale + shift[0], p.y * scale / 3.0 + shift[1], p.z + shift[2])
            });
            let obj = read_obj(&write_obj(&m), "m.obj").unwrap();
            let ply_a = read_ply(&write_ply(&m, PlyEncoding::Ascii, &[]), "m.ply").unwrap();
            let ply_b = read_ply(&write_ply(&m, PlyEncoding::BinaryLittleEndian, &[]), "m.ply").unwrap();
            for back in [obj, ply_a, ply_b] {
                prop_assert_eq!(back.vertices(), m.vertices());
                prop_assert_eq!(back.triangles(), m.triangles());
            }
        }
    }
}
