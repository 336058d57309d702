//! ASCII Wavefront OBJ, vertex and face records only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use reneus_core::math::Vec3;
use reneus_core::mesh::TriangleMesh;

use crate::error::{Error, Result};

/// Vertices use the shortest representation that reads back exactly.
pub fn to_string(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(40 * (mesh.vertices.len() + mesh.triangles.len()));
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    s
}

/// Parses `v` and `f` records. Polygons are fan triangulated, `a/b/c` face
/// tokens use their position index, and negative indices count from the end.
pub fn parse(text: &str) -> std::result::Result<TriangleMesh, String> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", ln + 1))?;
                if c.len() != 3 {
                    return Err(format!("line {}: vertex needs three coordinates", ln + 1));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| format!("line {}: bad face index `{tok}`", ln + 1))?;
                    let n = vertices.len() as i64;
                    let i = if i < 0 { n + i } else { i - 1 };
                    if !(0..n).contains(&i) {
                        return Err(format!("line {}: face index out of range", ln + 1));
                    }
                    idx.push(i as u32);
                }
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs at least three vertices", ln + 1));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| e.to_string())
}

pub fn write(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, to_string(mesh)).map_err(Error::io(path))
}

pub fn read(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse(&text).map_err(|msg| Error::format(path, msg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.1, 1.0 / 3.0, -2e-9), Vec3::X, Vec3::Y, Vec3::Z],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        assert_eq!(parse(&to_string(&m)).unwrap(), m);
    }

    #[test]
    fn polygons_and_relative_indices() {
        let m = parse("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 -1//1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(parse("v 0 0 0\nf 1 2 3\n").is_err());
    }
}
