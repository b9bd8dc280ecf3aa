//! Writers for meshes, matrices, spectra and field snapshots.
//!
//! Numbers are written with 17 significant digits so that every f64
//! round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::analysis::DispersionPoint;
use crate::error::Result;
use crate::mesh::{Lattice, Link};
use crate::Complex64;

/// Shortest representation with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Serialize)]
pub struct MeshDescriptor {
    pub nodes: usize,
    pub positions: Vec<[f64; 2]>,
    /// Neighbor node per slot, -1 for a cut (wall) link.
    pub neighbors: Vec<Vec<i64>>,
    pub dual_index: Vec<Vec<usize>>,
    pub classes: Vec<usize>,
    pub dx: f64,
    pub wraps: Option<[[f64; 2]; 2]>,
}

pub fn mesh_descriptor(lattice: &Lattice) -> MeshDescriptor {
    let q = lattice.q;
    MeshDescriptor {
        nodes: lattice.len(),
        positions: lattice.positions.clone(),
        neighbors: lattice
            .neighbors
            .chunks(q)
            .map(|c| c.iter().map(|l| l.node().map_or(-1, |y| y as i64)).collect())
            .collect(),
        dual_index: lattice.dual_index.chunks(q).map(|c| c.to_vec()).collect(),
        classes: lattice.node_class.clone(),
        dx: lattice.dx,
        wraps: lattice.wraps,
    }
}

pub fn mesh_json(lattice: &Lattice) -> Result<String> {
    Ok(serde_json::to_string_pretty(&mesh_descriptor(lattice))?)
}

/// Links drawn in the VTK output: each undirected link once, skipping links
/// that wrap around a periodic boundary.
fn drawn_links(lattice: &Lattice) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for x in 0..lattice.len() {
        for j in 1..lattice.q {
            if let Link::Node(y) = lattice.link(x, j) {
                let y = *y;
                let (px, py) = (lattice.positions[x], lattice.positions[y]);
                let v = lattice.velocity(x, j);
                let d = ((py[0] - px[0] - v[0] * lattice.dx).powi(2) + (py[1] - px[1] - v[1] * lattice.dx).powi(2)).sqrt();
                if x < y && d < 1e-6 * lattice.dx {
                    out.push([x, y]);
                }
            }
        }
    }
    out
}

/// Legacy VTK polydata: nodes as points, links as lines, optional point fields.
pub fn vtk_polydata(lattice: &Lattice, title: &str, fields: &[(&str, &[f64])]) -> String {
    let mut s = String::new();
    let n = lattice.len();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.replace('\n', " "));
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET POLYDATA");
    let _ = writeln!(s, "POINTS {n} double");
    for p in &lattice.positions {
        let _ = writeln!(s, "{} {} 0", num(p[0]), num(p[1]));
    }
    let links = drawn_links(lattice);
    let _ = writeln!(s, "LINES {} {}", links.len(), 3 * links.len());
    for [a, b] in &links {
        let _ = writeln!(s, "2 {a} {b}");
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {n}");
        for (name, vals) in fields {
            let _ = writeln!(s, "SCALARS {name} double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in vals.iter() {
                let _ = writeln!(s, "{}", num(*v));
            }
        }
    }
    s
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| num(m[(i, j)])).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

/// Parse a CSV written by [`matrix_csv`].
pub fn parse_matrix_csv(text: &str) -> Option<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse().ok()).collect::<Option<Vec<f64>>>())
        .collect::<Option<_>>()?;
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), nc, |i, j| rows[i][j]))
}

pub fn dispersion_csv(points: &[DispersionPoint]) -> String {
    let mut s = String::from("k,theta,re_lambda,im_lambda,mu_num,eps\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            num(p.k),
            num(p.theta_k),
            num(p.lambda_phys.re),
            num(p.lambda_phys.im),
            num(p.mu_num),
            num(p.eps)
        );
    }
    s
}

pub fn eigenvalues_csv(values: &[Complex64], derived: &[f64], residuals: &[f64]) -> String {
    let mut s = String::from("index,re_lambda,im_lambda,abs_lambda,derived,residual\n");
    for (i, l) in values.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            i + 1,
            num(l.re),
            num(l.im),
            num(l.norm()),
            num(derived.get(i).copied().unwrap_or(f64::NAN)),
            num(residuals.get(i).copied().unwrap_or(f64::NAN))
        );
    }
    s
}

/// Snapshot table: node id, position, density and the first three moments.
pub fn field_csv(lattice: &Lattice, moments: &[f64]) -> String {
    let q = lattice.q;
    let mut s = String::from("node_id,x,y,rho,m1,m2,m3\n");
    for (x, p) in lattice.positions.iter().enumerate() {
        let m = &moments[x * q..x * q + q];
        let _ = writeln!(s, "{x},{},{},{},{},{},{}", num(p[0]), num(p[1]), num(m[0]), num(m[1]), num(m[2]), num(m[3]));
    }
    s
}

pub fn field_vtk(lattice: &Lattice, title: &str, moments: &[f64]) -> String {
    let q = lattice.q;
    let names = ["rho", "m1", "m2", "m3"];
    let cols: Vec<Vec<f64>> = (0..4).map(|k| moments.iter().skip(k).step_by(q).copied().collect()).collect();
    let fields: Vec<(&str, &[f64])> = names.iter().zip(&cols).map(|(n, c)| (*n, c.as_slice())).collect();
    vtk_polydata(lattice, title, &fields)
}

pub fn write(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write(path, &serde_json::to_string_pretty(value)?)
}
