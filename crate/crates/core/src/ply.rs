//! PLY point-cloud export and import.
//!
//! Two flavors are written:
//!
//! - export: alive points only, `float x y z`, `uchar red green blue`,
//!   `int instance`; readable by common viewers.
//! - state: every point with `double` positions plus source pixel and alive
//!   flag, so a cloud round-trips exactly. View ids are kept in a
//!   `comment views ...` header line.
//!
//! The reader accepts `ascii` and `binary_little_endian` files with scalar
//! vertex properties of the usual numeric types.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use crate::scene::{PointSource, SceneError, ScenePointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFlavor {
    Export,
    State,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

fn fmt_err(path: &Path, reason: impl Into<String>) -> SceneError {
    SceneError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Serializes the cloud into PLY bytes.
pub fn encode_ply(cloud: &ScenePointCloud, flavor: PlyFlavor, encoding: PlyEncoding) -> Vec<u8> {
    let idx: Vec<usize> = match flavor {
        PlyFlavor::Export => (0..cloud.len()).filter(|&i| cloud.alive[i]).collect(),
        PlyFlavor::State => (0..cloud.len()).collect(),
    };
    let mut out = Vec::new();
    let enc = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = writeln!(out, "ply\nformat {enc} 1.0");
    if flavor == PlyFlavor::State {
        let _ = writeln!(out, "comment views {}", cloud.views.join(" "));
    }
    let _ = writeln!(out, "element vertex {}", idx.len());
    let pos_type = if flavor == PlyFlavor::State { "double" } else { "float" };
    for c in ["x", "y", "z"] {
        let _ = writeln!(out, "property {pos_type} {c}");
    }
    for c in ["red", "green", "blue"] {
        let _ = writeln!(out, "property uchar {c}");
    }
    let _ = writeln!(out, "property int instance");
    if flavor == PlyFlavor::State {
        for c in ["source_view", "source_u", "source_v"] {
            let _ = writeln!(out, "property uint {c}");
        }
        let _ = writeln!(out, "property uchar alive");
    }
    let _ = writeln!(out, "end_header");

    for i in idx {
        let p = cloud.positions[i];
        let c = cloud.colors[i];
        let s = cloud.source[i];
        match encoding {
            PlyEncoding::Ascii => {
                if flavor == PlyFlavor::State {
                    // {:?} on f64 prints the shortest round-tripping form
                    let _ = write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
                } else {
                    let _ = write!(out, "{:?} {:?} {:?}", p.x as f32, p.y as f32, p.z as f32);
                }
                let _ = write!(out, " {} {} {} {}", c[0], c[1], c[2], cloud.instance_id[i]);
                if flavor == PlyFlavor::State {
                    let _ = write!(out, " {} {} {} {}", s.view, s.u, s.v, cloud.alive[i] as u8);
                }
                out.push(b'\n');
            }
            PlyEncoding::BinaryLittleEndian => {
                for k in 0..3 {
                    if flavor == PlyFlavor::State {
                        out.extend_from_slice(&p[k].to_le_bytes());
                    } else {
                        out.extend_from_slice(&(p[k] as f32).to_le_bytes());
                    }
                }
                out.extend_from_slice(&c);
                out.extend_from_slice(&cloud.instance_id[i].to_le_bytes());
                if flavor == PlyFlavor::State {
                    for x in [s.view, s.u, s.v] {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                    out.push(cloud.alive[i] as u8);
                }
            }
        }
    }
    out
}

pub fn write_ply(path: &Path, cloud: &ScenePointCloud, flavor: PlyFlavor, encoding: PlyEncoding) -> Result<(), SceneError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_ply(cloud, flavor, encoding)).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Vertex table of a PLY file: property name → column of values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyTable {
    pub comments: Vec<String>,
    pub len: usize,
    pub columns: HashMap<String, Vec<f64>>,
}

impl PlyTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(|c| c.as_slice())
    }
}

pub fn read_ply_table(path: &Path) -> Result<PlyTable, SceneError> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => SceneError::MissingFile(path.display().to_string()),
        _ => io_err(path, e),
    })?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<std::fs::File>| -> Result<String, SceneError> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| io_err(path, e))?;
        if n == 0 {
            return Err(fmt_err(path, "unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(fmt_err(path, "missing ply magic"));
    }
    let mut encoding = None;
    let mut table = PlyTable::default();
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut other_elements = false;
    loop {
        let l = next_line(&mut r)?;
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some("format") => {
                encoding = Some(match parts.next() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    other => return Err(fmt_err(path, format!("unsupported format {other:?}"))),
                })
            }
            Some("comment") | Some("obj_info") => {
                table.comments.push(l.split_once(' ').map(|x| x.1).unwrap_or("").to_string())
            }
            Some("element") => {
                let name = parts.next().unwrap_or("");
                if name == "vertex" {
                    if other_elements {
                        return Err(fmt_err(path, "vertex must be the first element"));
                    }
                    in_vertex = true;
                    table.len = parts
                        .next()
                        .and_then(|n| n.parse().ok())
                        .ok_or_else(|| fmt_err(path, "bad vertex count"))?;
                } else {
                    in_vertex = false;
                    other_elements = true;
                }
            }
            Some("property") if in_vertex => {
                let ty = parts.next().unwrap_or("");
                if ty == "list" {
                    return Err(fmt_err(path, "list properties on vertices are not supported"));
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| fmt_err(path, format!("unknown type {ty}")))?;
                let name = parts.next().ok_or_else(|| fmt_err(path, "property without name"))?;
                props.push((name.to_string(), scalar));
            }
            Some("property") => {}
            Some("end_header") => break,
            _ => return Err(fmt_err(path, format!("unexpected header line {l:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| fmt_err(path, "missing format line"))?;
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(table.len); props.len()];
    match encoding {
        PlyEncoding::BinaryLittleEndian => {
            let stride: usize = props.iter().map(|p| p.1.size()).sum();
            let mut buf = vec![0u8; stride * table.len];
            r.read_exact(&mut buf).map_err(|_| fmt_err(path, "truncated vertex data"))?;
            for rec in buf.chunks_exact(stride) {
                let mut off = 0;
                for (k, (_, ty)) in props.iter().enumerate() {
                    cols[k].push(ty.decode(&rec[off..]));
                    off += ty.size();
                }
            }
        }
        PlyEncoding::Ascii => {
            let mut rest = String::new();
            r.read_to_string(&mut rest).map_err(|e| io_err(path, e))?;
            let mut lines = rest.lines().filter(|l| !l.trim().is_empty());
            for row in 0..table.len {
                let l = lines
                    .next()
                    .ok_or_else(|| fmt_err(path, format!("missing vertex row {row}")))?;
                let vals: Vec<&str> = l.split_whitespace().collect();
                if vals.len() < props.len() {
                    return Err(fmt_err(path, format!("short vertex row {row}")));
                }
                for k in 0..props.len() {
                    let v: f64 = vals[k]
                        .parse()
                        .map_err(|_| fmt_err(path, format!("bad number {:?} in row {row}", vals[k])))?;
                    cols[k].push(v);
                }
            }
        }
    }
    table.columns = props.into_iter().map(|p| p.0).zip(cols).collect();
    Ok(table)
}

/// Reads a cloud from either flavor. Export files get synthetic source
/// records (view 0, `u` = row index) and are all alive.
pub fn read_ply(path: &Path) -> Result<ScenePointCloud, SceneError> {
    let t = read_ply_table(path)?;
    let need = |name: &str| t.column(name).ok_or_else(|| fmt_err(path, format!("missing property {name}")));
    let (x, y, z) = (need("x")?, need("y")?, need("z")?);
    let zeros = vec![0.0; t.len];
    let color = |name: &str| t.column(name).unwrap_or(&zeros);
    let (r, g, b) = (color("red"), color("green"), color("blue"));
    let minus = vec![-1.0; t.len];
    let inst = t.column("instance").unwrap_or(&minus);
    let views: Vec<String> = t
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("views"))
        .map(|v| v.split_whitespace().map(String::from).collect())
        .unwrap_or_default();
    let state = t.column("source_view").is_some();
    let mut cloud = ScenePointCloud::empty(if state { views } else { vec!["ply".into()] });
    for i in 0..t.len {
        let source = if state {
            PointSource {
                view: need("source_view")?[i] as u32,
                u: need("source_u")?[i] as u32,
                v: need("source_v")?[i] as u32,
            }
        } else {
            PointSource { view: 0, u: i as u32, v: 0 }
        };
        cloud.push(
            Point3::new(x[i], y[i], z[i]),
            [r[i] as u8, g[i] as u8, b[i] as u8],
            source,
        );
        cloud.instance_id[i] = inst[i] as i32;
        if let Some(a) = t.column("alive") {
            cloud.alive[i] = a[i] != 0.0;
        }
    }
    if state {
        cloud.validate().map_err(|e| fmt_err(path, e.to_string()))?;
    }
    Ok(cloud)
}
