use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    /// Unit normal per vertex, pointing out of the solid.
    pub normals: Vec<[f64; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        contract!(
            self.normals.len() == self.vertices.len(),
            "{} normals for {} vertices",
            self.normals.len(),
            self.vertices.len()
        );
        let n = self.vertices.len() as u32;
        for (i, f) in self.faces.iter().enumerate() {
            contract!(f.iter().all(|&v| v < n), "face {i} indexes past {n} vertices");
            contract!(
                f[0] != f[1] && f[1] != f[2] && f[0] != f[2],
                "face {i} repeats a vertex: {f:?}"
            );
        }
        Ok(())
    }

    /// Axis-aligned bounds of the vertices, if any.
    pub fn bbox(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (std::array::from_fn(|d| lo[d].min(v[d])), std::array::from_fn(|d| hi[d].max(v[d])))
        }))
    }

    /// `Σ det(a, b, c)/6`; positive for closed meshes with outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                let k = cross(b, c);
                (a[0] * k[0] + a[1] * k[1] + a[2] * k[2]) / 6.0
            })
            .sum()
    }

    /// Replaces zero normals by the normalized area-weighted face normal.
    pub fn repair_normals(&mut self) {
        if self.normals.iter().all(|n| norm(*n) > 0.5) {
            return;
        }
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i as usize]);
            let fnrm = cross(sub(b, a), sub(c, a));
            for &v in f {
                for d in 0..3 {
                    acc[v as usize][d] += fnrm[d];
                }
            }
        }
        for (n, a) in self.normals.iter_mut().zip(acc) {
            if norm(*n) > 0.5 {
                continue;
            }
            let l = norm(a);
            *n = if l > 0.0 { a.map(|v| v / l) } else { [0.0, 0.0, 1.0] };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshDiagnostics {
    /// Every edge is shared by exactly two faces that traverse it in
    /// opposite directions.
    pub watertight: bool,
    pub euler_characteristic: i64,
    pub bbox: Option<([f64; 3], [f64; 3])>,
    pub triangles: usize,
    /// Faces with a repeated vertex index.
    pub degenerate: usize,
    /// Faces with area below 1e-14.
    pub zero_area: usize,
    pub boundary_edges: usize,
    /// Edges with more than two incident faces.
    pub nonmanifold_edges: usize,
    /// Two-face edges traversed in the same direction by both faces.
    pub inconsistent_edges: usize,
}

pub fn mesh_diagnostics(mesh: &TriangleMesh) -> MeshDiagnostics {
    let mut edges: HashMap<(u32, u32), (usize, i32)> = HashMap::new();
    let mut degenerate = 0;
    let mut zero_area = 0;
    for f in &mesh.faces {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            degenerate += 1;
            continue;
        }
        let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
        if 0.5 * norm(cross(sub(b, a), sub(c, a))) < 1e-14 {
            zero_area += 1;
        }
        for w in 0..3 {
            let (u, v) = (f[w], f[(w + 1) % 3]);
            let key = (u.min(v), u.max(v));
            let e = edges.entry(key).or_insert((0, 0));
            e.0 += 1;
            e.1 += if u < v { 1 } else { -1 };
        }
    }
    let mut boundary = 0;
    let mut nonmanifold = 0;
    let mut inconsistent = 0;
    for &(count, dir) in edges.values() {
        match count {
            1 => boundary += 1,
            2 if dir != 0 => inconsistent += 1,
            2 => {}
            _ => nonmanifold += 1,
        }
    }
    MeshDiagnostics {
        watertight: !mesh.faces.is_empty() && boundary == 0 && nonmanifold == 0 && inconsistent == 0 && degenerate == 0,
        euler_characteristic: mesh.vertices.len() as i64 - edges.len() as i64 + mesh.faces.len() as i64,
        bbox: mesh.bbox(),
        triangles: mesh.faces.len(),
        degenerate,
        zero_area,
        boundary_edges: boundary,
        nonmanifold_edges: nonmanifold,
        inconsistent_edges: inconsistent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::Contract(format!(
                "{}: mesh files must end in .obj or .ply",
                path.display()
            ))),
        }
    }
}

pub fn to_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for n in &mesh.normals {
        let _ = writeln!(s, "vn {} {} {}", n[0], n[1], n[2]);
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    s
}

pub fn to_ply(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
        let _ = writeln!(s, "{} {} {} {} {} {}", v[0], v[1], v[2], n[0], n[1], n[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

/// Writes OBJ or ASCII PLY, chosen by the file extension.
pub fn export_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    let text = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => to_obj(mesh),
        MeshFormat::Ply => to_ply(mesh),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_floats<const N: usize>(parts: &[&str], line: usize) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (d, o) in out.iter_mut().enumerate() {
        *o = parts
            .get(d)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse(format!("line {line}: expected {N} numbers")))?;
    }
    Ok(out)
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    let mut vertex_normal: Vec<Option<usize>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        match tag {
            "v" => {
                mesh.vertices.push(parse_floats::<3>(&rest, ln + 1)?);
                vertex_normal.push(None);
            }
            "vn" => normals.push(parse_floats::<3>(&rest, ln + 1)?),
            "f" => {
                let mut idx = Vec::new();
                for tok in &rest {
                    let mut fields = tok.split('/');
                    let v: i64 = fields
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Parse(format!("line {}: bad face `{tok}`", ln + 1)))?;
                    let resolve = |i: i64, n: usize| if i < 0 { n as i64 + i } else { i - 1 };
                    let v = resolve(v, mesh.vertices.len());
                    let vn = fields.nth(1).and_then(|t| t.parse::<i64>().ok());
                    if v < 0 || v as usize >= mesh.vertices.len() {
                        return Err(Error::Parse(format!("line {}: vertex index out of range", ln + 1)));
                    }
                    if let Some(n) = vn {
                        vertex_normal[v as usize] = Some(resolve(n, normals.len()) as usize);
                    }
                    idx.push(v as u32);
                }
                if idx.len() < 3 {
                    return Err(Error::Parse(format!("line {}: face with fewer than 3 vertices", ln + 1)));
                }
                for w in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[w], idx[w + 1]]);
                }
            }
            _ => {}
        }
    }
    mesh.normals = vertex_normal
        .iter()
        .map(|n| n.and_then(|i| normals.get(i).copied()).unwrap_or([0.0; 3]))
        .collect();
    mesh.repair_normals();
    Ok(mesh)
}

pub fn parse_ply(text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate();
    let bad = |m: &str| Error::Parse(format!("ply: {m}"));
    if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
        return Err(bad("missing magic"));
    }
    let (mut nv, mut nf) = (0usize, 0usize);
    let mut vprops = Vec::new();
    let mut current = "";
    for (_, line) in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", f, ..] if *f != "ascii" => return Err(bad("only ascii is supported")),
            ["element", "vertex", n] => {
                nv = n.parse().map_err(|_| bad("vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                nf = n.parse().map_err(|_| bad("face count"))?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", _, name] if current == "vertex" => vprops.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let col = |name: &str| vprops.iter().position(|p| p == name);
    let (x, y, z) = (
        col("x").ok_or_else(|| bad("no x"))?,
        col("y").ok_or_else(|| bad("no y"))?,
        col("z").ok_or_else(|| bad("no z"))?,
    );
    let nrm = (col("nx"), col("ny"), col("nz"));
    let mut mesh = TriangleMesh::default();
    for _ in 0..nv {
        let (ln, line) = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(&format!("line {}: bad number", ln + 1))))
            .collect::<Result<_>>()?;
        let get = |i: usize| vals.get(i).copied().ok_or_else(|| bad(&format!("line {}: short row", ln + 1)));
        mesh.vertices.push([get(x)?, get(y)?, get(z)?]);
        mesh.normals.push(match nrm {
            (Some(a), Some(b), Some(c)) => [get(a)?, get(b)?, get(c)?],
            _ => [0.0; 3],
        });
    }
    for _ in 0..nf {
        let (ln, line) = lines.next().ok_or_else(|| bad("truncated face list"))?;
        let vals: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(&format!("line {}: bad index", ln + 1))))
            .collect::<Result<_>>()?;
        let n = *vals.first().ok_or_else(|| bad("empty face"))? as usize;
        if vals.len() != n + 1 || n < 3 {
            return Err(bad(&format!("line {}: malformed face", ln + 1)));
        }
        for w in 1..n - 1 {
            mesh.faces.push([vals[1], vals[w + 1], vals[w + 2]]);
        }
    }
    mesh.repair_normals();
    mesh.validate()?;
    Ok(mesh)
}

pub fn import_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::Ply => parse_ply(&text),
    }
}
