//! Binary little-endian PLY and text OBJ mesh files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ply") => Ok(MeshFormat::Ply),
            Some("obj") => Ok(MeshFormat::Obj),
            _ => Err(Error::MeshFormat(format!("unknown mesh extension: {}", path.display()))),
        }
    }
}

pub fn write_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    match format {
        MeshFormat::Ply => write_ply(mesh, &mut w),
        MeshFormat::Obj => write_obj(mesh, &mut w),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

/// Reads a mesh, picking the format from the file extension.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path)?;
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let r = BufReader::new(f);
    let mesh = match format {
        MeshFormat::Ply => read_ply(r)?,
        MeshFormat::Obj => read_obj(r)?,
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_ply<W: Write>(mesh: &TriangleMesh, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property float {p}")?;
    }
    if mesh.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            writeln!(w, "property float {p}")?;
        }
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            w.write_f32::<LittleEndian>(*c)?;
        }
        if let Some(n) = &mesh.normals {
            for c in n[i] {
                w.write_f32::<LittleEndian>(c)?;
            }
        }
    }
    for t in &mesh.triangles {
        w.write_u8(3)?;
        for &i in t {
            w.write_i32::<LittleEndian>(i as i32)?;
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::MeshFormat(msg.into())
}

pub fn read_ply<R: BufRead>(mut r: R) -> Result<TriangleMesh> {
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|_| bad("unreadable header"))?;
        if n == 0 {
            return Err(bad("header ends before end_header"));
        }
        Ok(line.trim().to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(bad("missing ply magic"));
    }
    let mut n_vertices = None;
    let mut n_faces = None;
    let mut vertex_props = Vec::new();
    let mut current = "";
    loop {
        let l = next_line(&mut r)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => return Err(bad(format!("unsupported ply format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                n_vertices = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                current = "vertex";
            }
            ["element", "face", n] => {
                n_faces = Some(n.parse::<usize>().map_err(|_| bad("bad face count"))?);
                current = "face";
            }
            ["element", other, ..] => return Err(bad(format!("unsupported element {other}"))),
            ["property", "float", name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["property", "list", "uchar", "int", _] if current == "face" => {}
            ["property", ..] => return Err(bad(format!("unsupported property: {l}"))),
            ["end_header"] => break,
            _ => return Err(bad(format!("malformed header line: {l}"))),
        }
    }
    let (nv, nf) = (
        n_vertices.ok_or_else(|| bad("no vertex element"))?,
        n_faces.unwrap_or(0),
    );
    let has_normals = match vertex_props.join(",").as_str() {
        "x,y,z" => false,
        "x,y,z,nx,ny,nz" => true,
        other => return Err(bad(format!("unsupported vertex properties {other}"))),
    };
    let trunc = |_| Error::Truncated("ply body");
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    for _ in 0..nv {
        let mut v = [0f32; 3];
        r.read_f32_into::<LittleEndian>(&mut v).map_err(trunc)?;
        mesh.vertices.push(v);
        if has_normals {
            let mut n = [0f32; 3];
            r.read_f32_into::<LittleEndian>(&mut n).map_err(trunc)?;
            normals.push(n);
        }
    }
    for _ in 0..nf {
        let count = r.read_u8().map_err(trunc)?;
        if count != 3 {
            return Err(bad(format!("face with {count} vertices")));
        }
        let mut t = [0u32; 3];
        for slot in &mut t {
            let i = r.read_i32::<LittleEndian>().map_err(trunc)?;
            if i < 0 || i as usize >= nv {
                return Err(Error::IndexOutOfRange {
                    index: i.max(0) as usize,
                    count: nv,
                });
            }
            *slot = i as u32;
        }
        mesh.triangles.push(t);
    }
    if has_normals {
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}

pub fn write_obj<W: Write>(mesh: &TriangleMesh, w: &mut W) -> std::io::Result<()> {
    // `{}` on f32 prints the shortest string that round-trips exactly.
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    if let Some(ns) = &mesh.normals {
        for n in ns {
            writeln!(w, "vn {} {} {}", n[0], n[1], n[2])?;
        }
    }
    for t in &mesh.triangles {
        if mesh.normals.is_some() {
            writeln!(w, "f {0}//{0} {1}//{1} {2}//{2}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        } else {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
    }
    Ok(())
}

pub fn read_obj<R: Read>(r: R) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    let mut faces: Vec<(usize, [i64; 3])> = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|_| bad("unreadable obj"))?;
        let lineno = n + 1;
        let mut parts = line.split_whitespace();
        let floats = |parts: std::str::SplitWhitespace<'_>| -> Result<[f32; 3]> {
            let v: Vec<f32> = parts
                .take(3)
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("line {lineno}: bad number")))?;
            v.try_into().map_err(|_| bad(format!("line {lineno}: expected 3 values")))
        };
        match parts.next() {
            Some("v") => mesh.vertices.push(floats(parts)?),
            Some("vn") => normals.push(floats(parts)?),
            Some("f") => {
                let idx: Vec<i64> = parts
                    .map(|p| p.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(format!("line {lineno}: bad face index")))?;
                if idx.len() < 3 {
                    return Err(bad(format!("line {lineno}: face needs 3 indices")));
                }
                // Polygons are fan-triangulated.
                for i in 1..idx.len() - 1 {
                    faces.push((lineno, [idx[0], idx[i], idx[i + 1]]));
                }
            }
            _ => {}
        }
    }
    let nv = mesh.vertices.len() as i64;
    for (_, f) in faces {
        let mut t = [0u32; 3];
        for (slot, &i) in t.iter_mut().zip(&f) {
            // 1-based, negative counts back from the end.
            let z = if i > 0 { i - 1 } else { nv + i };
            if i == 0 || z < 0 || z >= nv {
                return Err(Error::IndexOutOfRange {
                    index: i.unsigned_abs() as usize,
                    count: nv as usize,
                });
            }
            *slot = z as u32;
        }
        mesh.triangles.push(t);
    }
    if !normals.is_empty() && normals.len() == mesh.vertices.len() {
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}
