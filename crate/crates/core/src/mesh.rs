//! Triangle meshes and their on-disk formats (OFF, OBJ, ASCII PLY).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Off,
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        ext.parse().ok()
    }

    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Off => "off",
            MeshFormat::Obj => "obj",
            MeshFormat::Ply => "ply",
        }
    }
}

impl FromStr for MeshFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(MeshFormat::Off),
            "obj" => Ok(MeshFormat::Obj),
            "ply" | "ply-ascii" => Ok(MeshFormat::Ply),
            other => Err(format!("unknown mesh format '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshWarning {
    /// The mesh has more than one connected component.
    Disconnected { components: usize },
}

/// A validated triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub shape_id: String,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh and checks index ranges, degenerate triangles and
    /// manifold edges. Disconnected meshes are accepted with a warning.
    pub fn new(
        shape_id: impl Into<String>,
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<(Self, Vec<MeshWarning>)> {
        let mesh = Mesh {
            shape_id: shape_id.into(),
            vertices,
            triangles,
        };
        let warnings = mesh.validate()?;
        Ok((mesh, warnings))
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    fn validate(&self) -> Result<Vec<MeshWarning>> {
        let n = self.vertices.len();
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::DegenerateGeometry("non-finite vertex coordinate".into()));
        }
        let diag2 = self.bbox_diagonal().powi(2);
        let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        index: v,
                        num_vertices: n,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateGeometry(format!(
                    "triangle {t} repeats a vertex"
                )));
            }
            if self.triangle_area(t) <= 1e-14 * diag2 {
                return Err(Error::DegenerateGeometry(format!("triangle {t} has zero area")));
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let c = edge_count.entry(key).or_insert(0);
                *c += 1;
                if *c > 2 {
                    return Err(Error::NonManifoldEdge(key.0, key.1));
                }
            }
        }
        let components = self.component_count();
        if components > 1 {
            log::warn!("mesh '{}' has {components} connected components", self.shape_id);
            return Ok(vec![MeshWarning::Disconnected { components }]);
        }
        Ok(Vec::new())
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        norm(sub(hi, lo))
    }

    /// Number of connected components over vertices referenced by triangles
    /// (isolated vertices count as their own component).
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for tri in &self.triangles {
            for k in 1..3 {
                let (a, b) = (find(&mut parent, tri[0]), find(&mut parent, tri[k]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..self.vertices.len()).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Returns a copy with vertices mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Mesh {
        Mesh {
            shape_id: self.shape_id.clone(),
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Relabels vertices: old vertex `i` becomes new vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Mesh {
        assert_eq!(perm.len(), self.vertices.len());
        let mut vertices = vec![[0.0; 3]; self.vertices.len()];
        for (old, &new) in perm.iter().enumerate() {
            vertices[new] = self.vertices[old];
        }
        Mesh {
            shape_id: self.shape_id.clone(),
            vertices,
            triangles: self.triangles.iter().map(|t| t.map(|i| perm[i])).collect(),
        }
    }

    pub fn to_off_string(&self) -> String {
        let mut s = String::with_capacity(64 * (self.vertices.len() + self.triangles.len()));
        s.push_str("OFF\n");
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.triangles.len());
        // `{}` on f64 prints the shortest representation that round-trips.
        for v in &self.vertices {
            let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        s
    }
}

/// Loads and validates a mesh. The shape id is the file stem.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<(Mesh, Vec<MeshWarning>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shape_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("shape")
        .to_string();
    let label = path.display().to_string();
    let (vertices, triangles) = match format {
        MeshFormat::Off => parse_off(&text, &label)?,
        MeshFormat::Obj => parse_obj(&text, &label)?,
        MeshFormat::Ply => parse_ply(&text, &label)?,
    };
    Mesh::new(shape_id, vertices, triangles)
}

pub fn write_off(mesh: &Mesh, path: &Path) -> Result<()> {
    fs::write(path, mesh.to_off_string()).map_err(|e| Error::io(path, e))
}

type Parsed = (Vec<[f64; 3]>, Vec<[usize; 3]>);

fn perr(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty, comment-stripped lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_num<T: FromStr>(tok: Option<&str>, path: &str, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| perr(path, line, format!("missing {what}")))?
        .parse()
        .map_err(|_| perr(path, line, format!("invalid {what}")))
}

/// Fan-triangulates a polygon.
fn push_polygon(tris: &mut Vec<[usize; 3]>, poly: &[usize]) {
    for i in 1..poly.len().saturating_sub(1) {
        tris.push([poly[0], poly[i], poly[i + 1]]);
    }
}

fn parse_off(text: &str, path: &str) -> Result<Parsed> {
    let mut lines = content_lines(text);
    let (ln, header) = lines.next().ok_or_else(|| perr(path, 1, "empty file"))?;
    let mut counts_line = None;
    if let Some(rest) = header.strip_prefix("OFF") {
        if !rest.trim().is_empty() {
            counts_line = Some((ln, rest.trim()));
        }
    } else {
        return Err(perr(path, ln, "missing OFF header"));
    }
    let (ln, counts) = match counts_line {
        Some(c) => c,
        None => lines.next().ok_or_else(|| perr(path, ln, "missing counts"))?,
    };
    let mut toks = counts.split_whitespace();
    let nv: usize = parse_num(toks.next(), path, ln, "vertex count")?;
    let nf: usize = parse_num(toks.next(), path, ln, "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, ln, "truncated vertex list"))?;
        let mut t = l.split_whitespace();
        vertices.push([
            parse_num(t.next(), path, ln, "x")?,
            parse_num(t.next(), path, ln, "y")?,
            parse_num(t.next(), path, ln, "z")?,
        ]);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, ln, "truncated face list"))?;
        let mut t = l.split_whitespace();
        let count: usize = parse_num(t.next(), path, ln, "face size")?;
        if count < 3 {
            return Err(perr(path, ln, "face with fewer than 3 vertices"));
        }
        let poly = (0..count)
            .map(|_| parse_num(t.next(), path, ln, "face index"))
            .collect::<Result<Vec<usize>>>()?;
        push_polygon(&mut triangles, &poly);
    }
    Ok((vertices, triangles))
}

fn parse_obj(text: &str, path: &str) -> Result<Parsed> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, l) in content_lines(text) {
        let mut t = l.split_whitespace();
        match t.next() {
            Some("v") => vertices.push([
                parse_num(t.next(), path, ln, "x")?,
                parse_num(t.next(), path, ln, "y")?,
                parse_num(t.next(), path, ln, "z")?,
            ]),
            Some("f") => {
                let mut poly = Vec::new();
                for tok in t {
                    let idx: i64 = parse_num(tok.split('/').next(), path, ln, "face index")?;
                    let resolved = match idx {
                        0 => return Err(perr(path, ln, "OBJ indices are 1-based")),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(perr(path, ln, "relative index before first vertex"));
                            }
                            vertices.len() - back
                        }
                    };
                    poly.push(resolved);
                }
                if poly.len() < 3 {
                    return Err(perr(path, ln, "face with fewer than 3 vertices"));
                }
                push_polygon(&mut triangles, &poly);
            }
            _ => {}
        }
    }
    Ok((vertices, triangles))
}

fn parse_ply(text: &str, path: &str) -> Result<Parsed> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, "ply")) => {}
        Some((ln, _)) => return Err(perr(path, ln, "missing ply magic")),
        None => return Err(perr(path, 1, "empty file")),
    }
    let mut nv = 0usize;
    let mut nf = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut last_ln = 1;
    loop {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, last_ln, "missing end_header"))?;
        last_ln = ln;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(perr(path, ln, "only ASCII PLY is supported"))
            }
            ["element", name, count] => {
                current = name.to_string();
                let c: usize = parse_num(Some(count), path, ln, "element count")?;
                match *name {
                    "vertex" => nv = c,
                    "face" => nf = c,
                    _ if c > 0 => return Err(perr(path, ln, format!("unsupported element '{name}'"))),
                    _ => {}
                }
            }
            ["property", .., name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let col = |name: &str| {
        vertex_props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| perr(path, last_ln, format!("vertex property '{name}' missing")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, last_ln, "truncated vertex list"))?;
        last_ln = ln;
        let toks: Vec<&str> = l.split_whitespace().collect();
        vertices.push([
            parse_num(toks.get(cx).copied(), path, ln, "x")?,
            parse_num(toks.get(cy).copied(), path, ln, "y")?,
            parse_num(toks.get(cz).copied(), path, ln, "z")?,
        ]);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| perr(path, last_ln, "truncated face list"))?;
        last_ln = ln;
        let mut t = l.split_whitespace();
        let count: usize = parse_num(t.next(), path, ln, "face size")?;
        let poly = (0..count)
            .map(|_| parse_num(t.next(), path, ln, "face index"))
            .collect::<Result<Vec<usize>>>()?;
        if poly.len() < 3 {
            return Err(perr(path, ln, "face with fewer than 3 vertices"));
        }
        push_polygon(&mut triangles, &poly);
    }
    Ok((vertices, triangles))
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA_OFF: &str = "OFF\n4 4 0\n1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n3 0 1 2\n3 0 3 1\n3 0 2 3\n3 1 3 2\n";

    #[test]
    fn tetrahedron_off() {
        let (v, t) = parse_off(TETRA_OFF, "tetra.off").unwrap();
        let (mesh, warnings) = Mesh::new("tetra", v, t).unwrap();
        assert_eq!(mesh.num_vertices(), 4);
        assert_eq!(mesh.num_triangles(), 4);
        assert!(warnings.is_empty());
    }

    #[test]
    fn off_counts_on_header_line_and_comments() {
        let text = "OFF 3 1 0\n# a comment\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let (v, t) = parse_off(text, "x").unwrap();
        assert_eq!((v.len(), t.len()), (3, 1));
    }

    #[test]
    fn out_of_range_index() {
        let mut text = String::from("OFF\n100 1 0\n");
        for i in 0..100 {
            text.push_str(&format!("{} {} 0\n", i, i * i % 7));
        }
        text.push_str("3 0 1 9999\n");
        let (v, t) = parse_off(&text, "x").unwrap();
        match Mesh::new("x", v, t) {
            Err(Error::IndexOutOfRange { index: 9999, .. }) => {}
            other => panic!("expected IndexOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn malformed_off() {
        assert!(matches!(parse_off("OFF\n3 1\n0 0\n", "x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_off("PLY\n", "x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn zero_area_rejected() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(matches!(
            Mesh::new("x", v, vec![[0, 1, 2]]),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn non_manifold_rejected() {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let t = vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]];
        assert!(matches!(Mesh::new("x", v, t), Err(Error::NonManifoldEdge(0, 1))));
    }

    #[test]
    fn disconnected_warns() {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 0.0, 0.0],
            [6.0, 0.0, 0.0],
            [5.0, 1.0, 0.0],
        ];
        let (_, w) = Mesh::new("x", v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        assert_eq!(w, vec![MeshWarning::Disconnected { components: 2 }]);
    }

    #[test]
    fn obj_and_ply_agree_with_off() {
        let obj = "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\nf 1 2 3\nf 1/1 4/4 2/2\nf -4 -2 -1\nf 2 4 3\n";
        let (v, t) = parse_obj(obj, "x").unwrap();
        let (vo, to) = parse_off(TETRA_OFF, "x").unwrap();
        assert_eq!(v, vo);
        assert_eq!(t, to);

        let ply = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 4\nproperty list uchar int vertex_indices\nend_header\n1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n3 0 1 2\n3 0 3 1\n3 0 2 3\n3 1 3 2\n";
        let (v, t) = parse_ply(ply, "x").unwrap();
        assert_eq!(v, vo);
        assert_eq!(t, to);
    }

    #[test]
    fn quads_are_fan_triangulated() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let (_, t) = parse_off(text, "x").unwrap();
        assert_eq!(t, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn off_round_trip_is_exact() {
        let v = vec![[0.1, 1.0 / 3.0, -2.5e-7], [1.0, 0.0, 0.0], [0.0, 1.0, 1e10]];
        let (mesh, _) = Mesh::new("x", v, vec![[0, 1, 2]]).unwrap();
        let (v2, t2) = parse_off(&mesh.to_off_string(), "x").unwrap();
        assert_eq!(v2, mesh.vertices);
        assert_eq!(t2, mesh.triangles);
    }
}
