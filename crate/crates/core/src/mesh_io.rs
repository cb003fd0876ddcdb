//! Mesh files: PLY and OBJ for export, plus a lossless binary snapshot of the
//! pipeline's mesh for resuming runs.
//!
//! PLY is `binary_little_endian 1.0` with per-vertex `float x, y, z` and
//! `uchar red, green, blue`, and faces as `list uchar int vertex_indices`.
//! OBJ stores colors as the common `v x y z r g b` extension.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::imageio::quantize;
use crate::mesh::{MeshError, SceneMesh, Vertex};

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed {format} file: {message}")]
    Format { format: &'static str, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("unknown mesh format {0:?} (expected ply or obj)")]
    UnknownFormat(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl std::str::FromStr for MeshFormat {
    type Err = MeshIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ply" => Ok(Self::Ply),
            "obj" => Ok(Self::Obj),
            other => Err(MeshIoError::UnknownFormat(other.to_string())),
        }
    }
}

impl MeshFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Ply => "ply",
            Self::Obj => "obj",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, MeshIoError> {
        path.extension().and_then(|e| e.to_str()).unwrap_or("").parse()
    }
}

fn format_err(format: &'static str, message: impl Into<String>) -> MeshIoError {
    MeshIoError::Format {
        format,
        message: message.into(),
    }
}

pub fn write_ply<W: Write>(mesh: &SceneMesh, mut out: W) -> Result<(), MeshIoError> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    )?;
    let mut buf = Vec::with_capacity(mesh.vertex_count() * 15 + mesh.face_count() * 13);
    for v in mesh.vertices() {
        for p in v.position {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        buf.extend(v.color.map(quantize));
    }
    for f in mesh.faces() {
        buf.push(3);
        for i in f {
            buf.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads PLY files in the layout [`write_ply`] produces.
pub fn read_ply<R: Read>(input: R) -> Result<SceneMesh, MeshIoError> {
    let mut reader = BufReader::new(input);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(format_err("ply", "header ended before end_header"));
        }
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        header.push(line);
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(format_err("ply", "missing magic"));
    }
    if !header.iter().any(|l| l == "format binary_little_endian 1.0") {
        return Err(format_err("ply", "only binary_little_endian 1.0 is supported"));
    }
    let count = |name: &str| -> Result<usize, MeshIoError> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(&format!("element {name} ")))
            .ok_or_else(|| format_err("ply", format!("no element {name}")))?
            .parse()
            .map_err(|_| format_err("ply", format!("bad {name} count")))
    };
    let (nv, nf) = (count("vertex")?, count("face")?);
    let expected = [
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property list uchar int vertex_indices",
    ];
    let props: Vec<&str> = header
        .iter()
        .filter(|l| l.starts_with("property"))
        .map(String::as_str)
        .collect();
    if props != expected {
        return Err(format_err("ply", format!("unsupported properties {props:?}")));
    }
    let mut vbuf = vec![0u8; nv * 15];
    reader.read_exact(&mut vbuf)?;
    let vertices = vbuf
        .chunks_exact(15)
        .map(|b| {
            let f = |o: usize| f32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]) as f64;
            Vertex {
                position: [f(0), f(4), f(8)],
                color: [b[12] as f32 / 255.0, b[13] as f32 / 255.0, b[14] as f32 / 255.0],
            }
        })
        .collect();
    let mut faces = Vec::with_capacity(nf);
    let mut fbuf = [0u8; 13];
    for i in 0..nf {
        reader.read_exact(&mut fbuf)?;
        if fbuf[0] != 3 {
            return Err(format_err("ply", format!("face {i} has {} vertices", fbuf[0])));
        }
        let idx = |o: usize| i32::from_le_bytes([fbuf[o], fbuf[o + 1], fbuf[o + 2], fbuf[o + 3]]);
        let (a, b, c) = (idx(1), idx(5), idx(9));
        if a < 0 || b < 0 || c < 0 {
            return Err(format_err("ply", format!("face {i} has a negative index")));
        }
        faces.push([a as u32, b as u32, c as u32]);
    }
    Ok(SceneMesh::from_parts(vertices, faces, 0)?)
}

pub fn write_obj<W: Write>(mesh: &SceneMesh, out: W) -> Result<(), MeshIoError> {
    let mut out = std::io::BufWriter::new(out);
    for v in mesh.vertices() {
        let [x, y, z] = v.position;
        let [r, g, b] = v.color;
        writeln!(out, "v {x} {y} {z} {r} {g} {b}")?;
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `v` lines (with optional colors) and triangular `f` lines; other
/// statements are ignored.
pub fn read_obj<R: Read>(input: R) -> Result<SceneMesh, MeshIoError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let bad = |m: &str| format_err("obj", format!("line {}: {m}", i + 1));
        match it.next() {
            Some("v") => {
                let v: Vec<f64> = it
                    .map(|s| s.parse().map_err(|_| bad("bad number")))
                    .collect::<Result<_, _>>()?;
                let color = match v.len() {
                    3 => [1.0; 3],
                    6 => [v[3] as f32, v[4] as f32, v[5] as f32],
                    _ => return Err(bad("vertex needs 3 or 6 numbers")),
                };
                vertices.push(Vertex {
                    position: [v[0], v[1], v[2]],
                    color,
                });
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        head.parse::<u32>()
                            .ok()
                            .filter(|&k| k >= 1)
                            .map(|k| k - 1)
                            .ok_or_else(|| bad("bad face index"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(bad("only triangles are supported"));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok(SceneMesh::from_parts(vertices, faces, 0)?)
}

pub fn write_mesh(mesh: &SceneMesh, path: &Path, format: MeshFormat) -> Result<(), MeshIoError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        MeshFormat::Ply => write_ply(mesh, file),
        MeshFormat::Obj => write_obj(mesh, file),
    }
}

pub fn read_mesh(path: &Path) -> Result<SceneMesh, MeshIoError> {
    let format = MeshFormat::from_path(path)?;
    let file = std::fs::File::open(path)?;
    match format {
        MeshFormat::Ply => read_ply(file),
        MeshFormat::Obj => read_obj(file),
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"SWSNAP01";

/// Full-precision mesh plus the index of the last completed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub frame_index: usize,
    pub mesh: SceneMesh,
}

pub fn write_snapshot<W: Write>(snapshot: &Snapshot, out: W) -> Result<(), MeshIoError> {
    let mesh = &snapshot.mesh;
    let mut out = std::io::BufWriter::new(out);
    out.write_all(SNAPSHOT_MAGIC)?;
    for n in [
        snapshot.frame_index as u64,
        mesh.generation(),
        mesh.vertex_count() as u64,
        mesh.face_count() as u64,
    ] {
        out.write_all(&n.to_le_bytes())?;
    }
    for v in mesh.vertices() {
        for p in v.position {
            out.write_all(&p.to_le_bytes())?;
        }
        for c in v.color {
            out.write_all(&c.to_le_bytes())?;
        }
    }
    for f in mesh.faces() {
        for i in f {
            out.write_all(&i.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(input: R) -> Result<Snapshot, MeshIoError> {
    let mut input = BufReader::new(input);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(format_err("snapshot", "bad magic"));
    }
    let mut u64s = [0u64; 4];
    for n in &mut u64s {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        *n = u64::from_le_bytes(b);
    }
    let [frame_index, generation, nv, nf] = u64s;
    let mut vbuf = vec![0u8; nv as usize * 36];
    input.read_exact(&mut vbuf)?;
    let vertices = vbuf
        .chunks_exact(36)
        .map(|b| {
            let d = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
            let f = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
            Vertex {
                position: [d(0), d(8), d(16)],
                color: [f(24), f(28), f(32)],
            }
        })
        .collect();
    let mut fbuf = vec![0u8; nf as usize * 12];
    input.read_exact(&mut fbuf)?;
    let faces = fbuf
        .chunks_exact(12)
        .map(|b| {
            let u = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
            [u(0), u(4), u(8)]
        })
        .collect();
    Ok(Snapshot {
        frame_index: frame_index as usize,
        mesh: SceneMesh::from_parts(vertices, faces, generation)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SceneMesh {
        let v = |x: f64, c: f32| Vertex {
            position: [x, 0.5 * x, 1.0 + x],
            color: [c, 1.0 - c, 0.5],
        };
        SceneMesh::from_parts(
            vec![v(0.0, 0.0), v(1.0, 0.2), v(2.0, 0.4), v(3.0, 1.0)],
            vec![[0, 1, 2], [2, 1, 3]],
            4,
        )
        .unwrap()
    }

    #[test]
    fn ply_roundtrip_keeps_counts() {
        let mut buf = Vec::new();
        write_ply(&sample(), &mut buf).unwrap();
        let back = read_ply(&buf[..]).unwrap();
        assert_eq!(back.vertex_count(), 4);
        assert_eq!(back.faces(), sample().faces());
        assert_eq!(back.vertices()[1].position, [1.0, 0.5, 2.0]);
    }

    #[test]
    fn obj_roundtrip_is_exact() {
        let mut buf = Vec::new();
        write_obj(&sample(), &mut buf).unwrap();
        let back = read_obj(&buf[..]).unwrap();
        assert_eq!(back.vertices(), sample().vertices());
        assert_eq!(back.faces(), sample().faces());
    }

    #[test]
    fn snapshot_roundtrip_is_lossless() {
        let snap = Snapshot {
            frame_index: 9,
            mesh: sample(),
        };
        let mut buf = Vec::new();
        write_snapshot(&snap, &mut buf).unwrap();
        assert_eq!(read_snapshot(&buf[..]).unwrap(), snap);
    }

    #[test]
    fn unknown_format() {
        assert!(matches!(
            "stl".parse::<MeshFormat>(),
            Err(MeshIoError::UnknownFormat(_))
        ));
    }
}
