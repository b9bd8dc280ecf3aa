//! Lattices: hexagonal Bravais point sets, D2T4 centroid lattices and
//! perturbed constant-degree meshes.
//!
//! Storage is flat and node-major: slot `x * q + j` holds the data of link `j`
//! of node `x`. Slot 0 is always the rest velocity pointing to the node itself.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

const S3: f64 = 0.866_025_403_784_438_6; // sqrt(3)/2

/// D2T7 directions, theta_j = 90 + (j - 1) * 60 degrees, rest first.
pub const D2T7_VELOCITIES: [[f64; 2]; 7] = [
    [0.0, 0.0],
    [0.0, 1.0],
    [-S3, 0.5],
    [-S3, -0.5],
    [0.0, -1.0],
    [S3, -0.5],
    [S3, 0.5],
];

/// Index offsets (along a2, along a1) of the six D2T7 directions.
const D2T7_STEPS: [(i64, i64); 7] = [(0, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0)];

pub const D2T4_LEFT: [[f64; 2]; 4] = [[0.0, 0.0], [-1.0, 0.0], [0.5, -S3], [0.5, S3]];
pub const D2T4_RIGHT: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [-0.5, S3], [-0.5, -S3]];

/// Opposite D2T7 direction.
pub fn d2t7_opposite(j: usize) -> usize {
    if j == 0 {
        0
    } else {
        (j + 2) % 6 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    D2T7,
    D2T4,
}

impl SchemeKind {
    pub fn q(self) -> usize {
        match self {
            SchemeKind::D2T7 => 7,
            SchemeKind::D2T4 => 4,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::D2T7 => write!(f, "d2t7"),
            SchemeKind::D2T4 => write!(f, "d2t4"),
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d2t7" => Ok(SchemeKind::D2T7),
            "d2t4" => Ok(SchemeKind::D2T4),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Where the Dirichlet wall sits on a cut D2T4 link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WallPlacement {
    HalfLink,
    #[default]
    Edge,
}

impl FromStr for WallPlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-link" => Ok(WallPlacement::HalfLink),
            "edge" => Ok(WallPlacement::Edge),
            other => Err(Error::Config(format!("unknown wall placement '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLink {
    pub owner: NodeId,
    pub direction: usize,
    pub wall_point: [f64; 2],
    pub wall_value_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Link {
    Node(NodeId),
    Boundary(BoundaryLink),
}

impl Link {
    pub fn node(&self) -> Option<NodeId> {
        match self {
            Link::Node(y) => Some(*y),
            Link::Boundary(_) => None,
        }
    }
}

/// Equilateral triangle, used for the wall geometry of bounded domains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub vertices: [[f64; 2]; 3],
}

impl Triangle {
    /// Triangle of side `h` with a vertical left edge and its apex pointing to +x.
    pub fn pointing_right(h: f64) -> Self {
        Triangle {
            vertices: [[0.0, 0.0], [0.0, h], [h * S3, 0.5 * h]],
        }
    }

    pub fn side(&self) -> f64 {
        let [a, b, _] = self.vertices;
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let v = &self.vertices;
        [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0]
    }

    pub fn barycentric(&self, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.vertices;
        let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
        let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
        let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
        [l0, l1, 1.0 - l0 - l1]
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        self.barycentric(p).iter().all(|&l| l >= -tol)
    }
}

/// Underlying vertex triangulation of a centroid lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct Triangulation {
    pub vertices: Vec<[f64; 2]>,
    pub fixed: Vec<bool>,
    pub cells: Vec<[usize; 3]>,
    /// Per node, the two vertices of the edge crossed by moving slot j (j = 1..3).
    pub link_edges: Vec<[[usize; 2]; 3]>,
}

impl Triangulation {
    fn centroid(&self, cell: usize) -> [f64; 2] {
        let [a, b, c] = self.cells[cell].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    fn signed_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cells[cell].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    fn edge_midpoint(&self, node: usize, j: usize) -> [f64; 2] {
        let [u, v] = self.link_edges[node][j - 1];
        let (a, b) = (self.vertices[u], self.vertices[v]);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub scheme: SchemeKind,
    pub q: usize,
    pub dx: f64,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub neighbors: Vec<Link>,
    pub dual_index: Vec<usize>,
    pub node_class: Vec<usize>,
    pub class_names: Vec<String>,
    pub wraps: Option<[[f64; 2]; 2]>,
    pub bravais: bool,
    pub domain: Option<Triangle>,
    pub triangulation: Option<Triangulation>,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn velocity(&self, x: NodeId, j: usize) -> [f64; 2] {
        self.velocities[x * self.q + j]
    }

    pub fn link(&self, x: NodeId, j: usize) -> &Link {
        &self.neighbors[x * self.q + j]
    }

    pub fn dual(&self, x: NodeId, j: usize) -> usize {
        self.dual_index[x * self.q + j]
    }

    pub fn node_velocities(&self, x: NodeId) -> &[[f64; 2]] {
        &self.velocities[x * self.q..(x + 1) * self.q]
    }

    pub fn boundary_links(&self) -> impl Iterator<Item = &BoundaryLink> {
        self.neighbors.iter().filter_map(|l| match l {
            Link::Boundary(b) => Some(b),
            Link::Node(_) => None,
        })
    }

    pub fn is_boundary_node(&self, x: NodeId) -> bool {
        (1..self.q).any(|j| matches!(self.link(x, j), Link::Boundary(_)))
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Nearest node to `p` (linear scan).
    pub fn nearest_node(&self, p: [f64; 2]) -> NodeId {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.positions.iter().enumerate() {
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Reduce a displacement modulo the periodic wrap vectors.
    pub fn reduce_displacement(&self, d: [f64; 2]) -> [f64; 2] {
        let Some([w1, w2]) = self.wraps else { return d };
        let det = w1[0] * w2[1] - w1[1] * w2[0];
        let a = ((d[0] * w2[1] - d[1] * w2[0]) / det).round();
        let b = ((w1[0] * d[1] - w1[1] * d[0]) / det).round();
        [d[0] - a * w1[0] - b * w2[0], d[1] - a * w1[1] - b * w2[1]]
    }
}

fn check_size(name: &str, n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidSize(format!("{name} = {n} (must be >= {min})")));
    }
    Ok(())
}

fn check_dx(dx: f64) -> Result<()> {
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::InvalidParameter(format!("dx = {dx} (must be > 0)")));
    }
    Ok(())
}

fn add(p: [f64; 2], v: [f64; 2], s: f64) -> [f64; 2] {
    [p[0] + s * v[0], p[1] + s * v[1]]
}

/// Equilateral triangle of the hexagonal lattice with `n_edge` nodes per edge.
///
/// The wall triangle lies half a link outside the boundary nodes; its side is
/// `(n_edge + 0.5) * dx` and it is stored in `domain`.
pub fn build_d2t7_triangle(n_edge: usize, dx: f64) -> Result<Lattice> {
    check_size("n_edge", n_edge, 2)?;
    check_dx(dx)?;
    let n = n_edge as i64;
    let h = (n_edge as f64 + 0.5) * dx;
    let domain = Triangle::pointing_right(h);
    let g = domain.centroid();
    let scale = (n_edge - 1) as f64 * dx / h;
    let p0 = [g[0] - scale * g[0], g[1] - scale * g[1]];
    let a1 = [0.0, 1.0];
    let a2 = [S3, 0.5];

    let mut id = HashMap::new();
    let mut positions = Vec::new();
    for i in 0..n {
        for j in 0..n - i {
            id.insert((i, j), positions.len());
            positions.push(add(add(p0, a2, i as f64 * dx), a1, j as f64 * dx));
        }
    }
    let q = 7;
    let count = positions.len();
    let mut velocities = Vec::with_capacity(count * q);
    let mut neighbors = Vec::with_capacity(count * q);
    let mut dual_index = Vec::with_capacity(count * q);
    for i in 0..n {
        for j in 0..n - i {
            let x = id[&(i, j)];
            for (k, &(di, dj)) in D2T7_STEPS.iter().enumerate() {
                velocities.push(D2T7_VELOCITIES[k]);
                dual_index.push(d2t7_opposite(k));
                match id.get(&(i + di, j + dj)) {
                    Some(&y) => neighbors.push(Link::Node(y)),
                    None => neighbors.push(Link::Boundary(BoundaryLink {
                        owner: x,
                        direction: k,
                        wall_point: add(positions[x], D2T7_VELOCITIES[k], 0.5 * dx),
                        wall_value_id: 0,
                    })),
                }
            }
        }
    }
    Ok(Lattice {
        scheme: SchemeKind::D2T7,
        q,
        dx,
        positions,
        velocities,
        neighbors,
        dual_index,
        node_class: vec![0; count],
        class_names: vec!["bravais".into()],
        wraps: None,
        bravais: true,
        domain: Some(domain),
        triangulation: None,
    })
}

/// Fully periodic hexagonal lattice of `nx * ny` nodes.
///
/// Node (c, r) sits at `c * a2 + r * a1` (sheared layout), so both wrap
/// vectors `nx * a2` and `ny * a1` are lattice vectors.
pub fn build_d2t7_periodic(nx: usize, ny: usize, dx: f64) -> Result<Lattice> {
    check_size("nx", nx, 1)?;
    check_size("ny", ny, 1)?;
    check_dx(dx)?;
    let q = 7;
    let a1 = [0.0, dx];
    let a2 = [S3 * dx, 0.5 * dx];
    let count = nx * ny;
    let mut positions = Vec::with_capacity(count);
    let mut velocities = Vec::with_capacity(count * q);
    let mut neighbors = Vec::with_capacity(count * q);
    let mut dual_index = Vec::with_capacity(count * q);
    let (nxi, nyi) = (nx as i64, ny as i64);
    for r in 0..nyi {
        for c in 0..nxi {
            positions.push(add(add([0.0, 0.0], a2, c as f64), a1, r as f64));
            for (k, &(dc, dr)) in D2T7_STEPS.iter().enumerate() {
                let cc = (c + dc).rem_euclid(nxi);
                let rr = (r + dr).rem_euclid(nyi);
                velocities.push(D2T7_VELOCITIES[k]);
                neighbors.push(Link::Node((rr * nxi + cc) as usize));
                dual_index.push(d2t7_opposite(k));
            }
        }
    }
    Ok(Lattice {
        scheme: SchemeKind::D2T7,
        q,
        dx,
        positions,
        velocities,
        neighbors,
        dual_index,
        node_class: vec![0; count],
        class_names: vec!["bravais".into()],
        wraps: Some([[nx as f64 * a2[0], nx as f64 * a2[1]], [0.0, ny as f64 * dx]]),
        bravais: true,
        domain: None,
        triangulation: None,
    })
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// D2T4 lattice on an equilateral triangle split into `n_edge^2` triangles.
pub fn build_d2t4_equilateral(n_edge: usize, dx: f64) -> Result<Lattice> {
    build_d2t4_equilateral_with(n_edge, dx, WallPlacement::Edge)
}

pub fn build_d2t4_equilateral_with(n_edge: usize, dx: f64, wall: WallPlacement) -> Result<Lattice> {
    check_size("n_edge", n_edge, 1)?;
    check_dx(dx)?;
    let n = n_edge as i64;
    let side = dx * 3f64.sqrt();
    let u = [S3 * side, 0.5 * side];
    let v = [0.0, side];

    let mut vid = HashMap::new();
    let mut vertices = Vec::new();
    let mut fixed = Vec::new();
    for i in 0..=n {
        for j in 0..=n - i {
            vid.insert((i, j), vertices.len());
            vertices.push(add(add([0.0, 0.0], u, i as f64), v, j as f64));
            fixed.push(i == 0 || j == 0 || i + j == n);
        }
    }

    // LEFT(i, j) = (V(i,j), V(i,j+1), V(i+1,j)); RIGHT(i, j) = (V(i,j+1), V(i+1,j), V(i+1,j+1))
    let mut left = HashMap::new();
    let mut right = HashMap::new();
    let mut cells = Vec::new();
    let mut node_class = Vec::new();
    let mut link_edges = Vec::new();
    for i in 0..n {
        for j in 0..n - i {
            let (a, b, c) = (vid[&(i, j)], vid[&(i, j + 1)], vid[&(i + 1, j)]);
            left.insert((i, j), cells.len());
            cells.push([a, b, c]);
            node_class.push(LEFT);
            link_edges.push([[a, b], [a, c], [b, c]]);
            if i + j <= n - 2 {
                let d = vid[&(i + 1, j + 1)];
                right.insert((i, j), cells.len());
                cells.push([b, c, d]);
                node_class.push(RIGHT);
                link_edges.push([[c, d], [b, d], [b, c]]);
            }
        }
    }
    let tri = Triangulation { vertices, fixed, cells, link_edges };
    let count = tri.cells.len();
    let positions: Vec<[f64; 2]> = (0..count).map(|x| tri.centroid(x)).collect();

    let q = 4;
    let mut velocities = Vec::with_capacity(count * q);
    let mut neighbors = Vec::with_capacity(count * q);
    let mut dual_index = Vec::with_capacity(count * q);
    let mut cell_ij = vec![(0, 0); count];
    for (&ij, &x) in left.iter().chain(right.iter()) {
        cell_ij[x] = ij;
    }
    for x in 0..count {
        let (i, j) = cell_ij[x];
        let (vel, targets) = if node_class[x] == LEFT {
            (D2T4_LEFT, [right.get(&(i - 1, j)), right.get(&(i, j - 1)), right.get(&(i, j))])
        } else {
            (D2T4_RIGHT, [left.get(&(i + 1, j)), left.get(&(i, j + 1)), left.get(&(i, j))])
        };
        velocities.extend_from_slice(&vel);
        neighbors.push(Link::Node(x));
        dual_index.extend_from_slice(&[0, 1, 2, 3]);
        for k in 1..4 {
            match targets[k - 1] {
                Some(&y) => neighbors.push(Link::Node(y)),
                None => {
                    let wall_point = match wall {
                        WallPlacement::Edge => tri.edge_midpoint(x, k),
                        WallPlacement::HalfLink => add(positions[x], vel[k], 0.5 * dx),
                    };
                    neighbors.push(Link::Boundary(BoundaryLink {
                        owner: x,
                        direction: k,
                        wall_point,
                        wall_value_id: 0,
                    }))
                }
            }
        }
    }
    Ok(Lattice {
        scheme: SchemeKind::D2T4,
        q,
        dx,
        positions,
        velocities,
        neighbors,
        dual_index,
        node_class,
        class_names: vec!["left".into(), "right".into()],
        wraps: None,
        bravais: false,
        domain: Some(Triangle::pointing_right(n_edge as f64 * side)),
        triangulation: Some(tri),
    })
}

/// Periodic D2T4 lattice: `nx * ny` rhombic cells, each split into a LEFT and
/// a RIGHT triangle.
pub fn build_d2t4_periodic(nx: usize, ny: usize, dx: f64) -> Result<Lattice> {
    check_size("nx", nx, 1)?;
    check_size("ny", ny, 1)?;
    check_dx(dx)?;
    let side = dx * 3f64.sqrt();
    let u = [S3 * side, 0.5 * side];
    let v = [0.0, side];
    let q = 4;
    let count = 2 * nx * ny;
    let (nxi, nyi) = (nx as i64, ny as i64);
    let cell = |i: i64, j: i64| -> usize { (j.rem_euclid(nyi) * nxi + i.rem_euclid(nxi)) as usize };
    let mut positions = vec![[0.0; 2]; count];
    let mut velocities = vec![[0.0; 2]; count * q];
    let mut neighbors = vec![Link::Node(0); count * q];
    let mut dual_index = vec![0; count * q];
    let mut node_class = vec![0; count];
    for j in 0..nyi {
        for i in 0..nxi {
            let c = cell(i, j);
            let (l, r) = (2 * c, 2 * c + 1);
            let base = add(add([0.0, 0.0], u, i as f64), v, j as f64);
            positions[l] = [base[0] + (u[0] + v[0]) / 3.0, base[1] + (u[1] + v[1]) / 3.0];
            positions[r] = [base[0] + 2.0 * (u[0] + v[0]) / 3.0, base[1] + 2.0 * (u[1] + v[1]) / 3.0];
            node_class[l] = LEFT;
            node_class[r] = RIGHT;
            let lt = [l, 2 * cell(i - 1, j) + 1, 2 * cell(i, j - 1) + 1, r];
            let rt = [r, 2 * cell(i + 1, j), 2 * cell(i, j + 1), l];
            for k in 0..q {
                velocities[l * q + k] = D2T4_LEFT[k];
                velocities[r * q + k] = D2T4_RIGHT[k];
                neighbors[l * q + k] = Link::Node(lt[k]);
                neighbors[r * q + k] = Link::Node(rt[k]);
                dual_index[l * q + k] = k;
                dual_index[r * q + k] = k;
            }
        }
    }
    Ok(Lattice {
        scheme: SchemeKind::D2T4,
        q,
        dx,
        positions,
        velocities,
        neighbors,
        dual_index,
        node_class,
        class_names: vec!["left".into(), "right".into()],
        wraps: Some([[nx as f64 * u[0], nx as f64 * u[1]], [0.0, ny as f64 * side]]),
        bravais: false,
        domain: None,
        triangulation: None,
    })
}

/// Randomly displace the interior vertices of the underlying triangulation.
///
/// Each free vertex moves uniformly in a disc of radius `amplitude * dx`.
/// Centroids and velocities are recomputed; every node gets its own class.
pub fn perturb(lattice: &Lattice, amplitude: f64, seed: u64) -> Result<Lattice> {
    let Some(tri) = &lattice.triangulation else {
        return Err(Error::InvalidParameter("perturb needs a centroid lattice with a triangulation".into()));
    };
    if !(0.0..0.3).contains(&amplitude) {
        return Err(Error::InvalidParameter(format!("amplitude = {amplitude} (must be in [0, 0.3))")));
    }
    if amplitude == 0.0 {
        return Ok(lattice.clone());
    }
    let dx = lattice.dx;
    let q = lattice.q;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moved = tri.clone();
    for (p, &fixed) in moved.vertices.iter_mut().zip(&tri.fixed) {
        if fixed {
            continue;
        }
        let r = amplitude * dx * rng.gen::<f64>().sqrt();
        let phi = std::f64::consts::TAU * rng.gen::<f64>();
        p[0] += r * phi.cos();
        p[1] += r * phi.sin();
    }
    for c in 0..moved.cells.len() {
        let (a0, a1) = (tri.signed_area(c), moved.signed_area(c));
        if a1 == 0.0 || a0.signum() != a1.signum() {
            return Err(Error::Geometry(format!("triangle {c} inverted by perturbation")));
        }
    }
    let count = lattice.len();
    let positions: Vec<[f64; 2]> = (0..count).map(|x| moved.centroid(x)).collect();
    let mut velocities = lattice.velocities.clone();
    let mut neighbors = lattice.neighbors.clone();
    for x in 0..count {
        for j in 1..q {
            let s = x * q + j;
            match &mut neighbors[s] {
                Link::Node(y) => {
                    let (a, b) = (positions[x], positions[*y]);
                    velocities[s] = [(b[0] - a[0]) / dx, (b[1] - a[1]) / dx];
                }
                Link::Boundary(bl) => {
                    let m = moved.edge_midpoint(x, j);
                    let a = positions[x];
                    velocities[s] = [2.0 * (m[0] - a[0]) / dx, 2.0 * (m[1] - a[1]) / dx];
                    bl.wall_point = m;
                }
            }
        }
    }
    Ok(Lattice {
        positions,
        velocities,
        neighbors,
        node_class: (0..count).collect(),
        class_names: (0..count).map(|x| format!("node{x}")).collect(),
        bravais: false,
        triangulation: Some(moved),
        ..lattice.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Position,
    Duality,
    Involution,
    Degree,
    Streaming,
    Bravais,
    WallPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: NodeId,
    pub slot: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Node-independent, inversion-symmetric velocity set.
    pub bravais_symmetric: bool,
    pub max_position_residual: f64,
    pub max_duality_residual: f64,
}

impl ValidationReport {
    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant of a lattice.
pub fn validate(lattice: &Lattice) -> ValidationReport {
    let q = lattice.q;
    let n = lattice.len();
    let dx = lattice.dx;
    let mut rep = ValidationReport::default();
    let push = |rep: &mut ValidationReport, kind, node, slot, detail: String| {
        rep.violations.push(Violation { kind, node, slot, detail });
    };
    let mut hits = vec![0u32; n * q];
    for x in 0..n {
        if lattice.link(x, 0) != &Link::Node(x) || lattice.dual(x, 0) != 0 || lattice.velocity(x, 0) != [0.0, 0.0] {
            push(&mut rep, ViolationKind::Degree, x, 0, "rest slot malformed".into());
        }
        let mut seen = Vec::with_capacity(q);
        for j in 1..q {
            let xi = lattice.velocity(x, j);
            match lattice.link(x, j) {
                Link::Node(y) => {
                    let y = *y;
                    if y >= n {
                        push(&mut rep, ViolationKind::Degree, x, j, format!("neighbor {y} out of range"));
                        continue;
                    }
                    let nj = lattice.dual(x, j);
                    if nj == 0 || nj >= q {
                        push(&mut rep, ViolationKind::Duality, x, j, format!("dual index {nj} out of range"));
                        continue;
                    }
                    let pos = &lattice.positions;
                    let d = [
                        pos[y][0] - pos[x][0] - xi[0] * dx,
                        pos[y][1] - pos[x][1] - xi[1] * dx,
                    ];
                    let d = lattice.reduce_displacement(d);
                    let r = d[0].hypot(d[1]);
                    rep.max_position_residual = rep.max_position_residual.max(r / dx);
                    if r > 1e-12 * dx {
                        push(&mut rep, ViolationKind::Position, x, j, format!("position residual {r:e}"));
                    }
                    let back = lattice.velocity(y, nj);
                    let dr = (xi[0] + back[0]).abs().max((xi[1] + back[1]).abs());
                    rep.max_duality_residual = rep.max_duality_residual.max(dr);
                    if dr > 1e-14 {
                        push(&mut rep, ViolationKind::Duality, x, j, format!("duality residual {dr:e}"));
                    }
                    if lattice.link(y, nj) != &Link::Node(x) || lattice.dual(y, nj) != j {
                        push(&mut rep, ViolationKind::Involution, x, j, format!("link ({y}, {nj}) does not point back"));
                    }
                    hits[y * q + nj] += 1;
                    if seen.contains(&(y, nj)) {
                        push(&mut rep, ViolationKind::Degree, x, j, "repeated neighbor link".into());
                    }
                    seen.push((y, nj));
                }
                Link::Boundary(b) => {
                    if b.owner != x || b.direction != j {
                        push(&mut rep, ViolationKind::Degree, x, j, "boundary link owner mismatch".into());
                    }
                    let p = lattice.positions[x];
                    let w = [b.wall_point[0] - p[0], b.wall_point[1] - p[1]];
                    let l2 = (xi[0] * xi[0] + xi[1] * xi[1]) * dx * dx;
                    let t = (w[0] * xi[0] + w[1] * xi[1]) * dx / l2;
                    let off = [w[0] - t * xi[0] * dx, w[1] - t * xi[1] * dx];
                    if !(-1e-12..=1.0 + 1e-12).contains(&t) || off[0].hypot(off[1]) > 1e-12 * dx {
                        push(&mut rep, ViolationKind::WallPoint, x, j, "wall point off the link".into());
                    }
                }
            }
        }
    }
    for (s, &h) in hits.iter().enumerate() {
        if h > 1 {
            push(&mut rep, ViolationKind::Streaming, s / q, s % q, format!("slot receives {h} populations"));
        }
    }
    rep.bravais_symmetric = bravais_symmetric(lattice);
    if lattice.bravais && !rep.bravais_symmetric {
        push(&mut rep, ViolationKind::Bravais, 0, 0, "claimed Bravais lattice is not symmetric".into());
    }
    rep
}

fn bravais_symmetric(lattice: &Lattice) -> bool {
    let q = lattice.q;
    let first = lattice.node_velocities(0).to_vec();
    let same = (0..lattice.len()).all(|x| {
        lattice
            .node_velocities(x)
            .iter()
            .zip(&first)
            .all(|(a, b)| (a[0] - b[0]).abs() <= 1e-14 && (a[1] - b[1]).abs() <= 1e-14)
    });
    same && (0..q).all(|j| {
        (0..q).any(|k| (first[j][0] + first[k][0]).abs() <= 1e-14 && (first[j][1] + first[k][1]).abs() <= 1e-14)
    })
}

/// A lattice symmetry acting on population slots: slot `s` is sent to `perm[s]`.
#[derive(Clone, Debug)]
pub struct SlotMap {
    pub perm: Vec<usize>,
    /// +1 for rotations, -1 for reflections.
    pub det: i8,
}

/// The six symmetries of the triangular domain (rotations about the centroid
/// and reflections in the medians) as permutations of population slots.
pub fn triangle_symmetries(lattice: &Lattice) -> Result<Vec<SlotMap>> {
    let dom = lattice
        .domain
        .ok_or_else(|| Error::InvalidParameter("lattice has no triangular domain".into()))?;
    let g = dom.centroid();
    let q = lattice.q;
    let dx = lattice.dx;
    let cell = |p: [f64; 2]| ((p[0] / (0.5 * dx)).floor() as i64, (p[1] / (0.5 * dx)).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in lattice.positions.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let find = |p: [f64; 2]| -> Option<usize> {
        let (cx, cy) = cell(p);
        for ox in -1..=1 {
            for oy in -1..=1 {
                if let Some(v) = grid.get(&(cx + ox, cy + oy)) {
                    for &i in v {
                        let r = lattice.positions[i];
                        if (r[0] - p[0]).hypot(r[1] - p[1]) < 1e-6 * dx {
                            return Some(i);
                        }
                    }
                }
            }
        }
        None
    };
    let mut maps = Vec::with_capacity(6);
    for refl in [false, true] {
        for rot in 0..3 {
            let a = rot as f64 * std::f64::consts::TAU / 3.0;
            let (c, s) = (a.cos(), a.sin());
            let act = |v: [f64; 2]| {
                let v = if refl { [v[0], -v[1]] } else { v };
                [c * v[0] - s * v[1], s * v[0] + c * v[1]]
            };
            let mut perm = vec![0; lattice.len() * q];
            for x in 0..lattice.len() {
                let p = lattice.positions[x];
                let d = act([p[0] - g[0], p[1] - g[1]]);
                let y = find([g[0] + d[0], g[1] + d[1]])
                    .ok_or_else(|| Error::Geometry(format!("node {x} has no symmetric image")))?;
                for j in 0..q {
                    let v = act(lattice.velocity(x, j));
                    let k = (0..q)
                        .find(|&k| {
                            let w = lattice.velocity(y, k);
                            (w[0] - v[0]).abs() < 1e-9 && (w[1] - v[1]).abs() < 1e-9
                        })
                        .ok_or_else(|| Error::Geometry(format!("velocity {j} of node {x} has no image")))?;
                    perm[x * q + j] = y * q + k;
                }
            }
            maps.push(SlotMap { perm, det: if refl { -1 } else { 1 } });
        }
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_counts() {
        assert_eq!(build_d2t7_triangle(61, 0.1).unwrap().len(), 1891);
        assert_eq!(build_d2t7_triangle(10, 0.1).unwrap().len(), 55);
        let l = build_d2t7_triangle(2, 0.1).unwrap();
        assert_eq!(l.len(), 3);
        assert!((0..3).all(|x| l.is_boundary_node(x)));
        assert!(matches!(build_d2t7_triangle(1, 0.1), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn periodic_counts() {
        assert_eq!(build_d2t7_periodic(96, 4, 1.0).unwrap().len(), 384);
        assert_eq!(build_d2t7_periodic(36, 52, 1.0).unwrap().len(), 1872);
        let l = build_d2t7_periodic(1, 1, 1.0).unwrap();
        assert_eq!(l.len(), 1);
        assert!((0..7).all(|j| l.link(0, j) == &Link::Node(0)));
        assert!(l.boundary_links().next().is_none());
        assert!(validate(&l).is_clean());
    }

    #[test]
    fn d2t4_counts_and_classes() {
        let l = build_d2t4_equilateral(2, 1.0).unwrap();
        assert_eq!(l.len(), 4);
        assert_eq!(l.node_class.iter().filter(|&&c| c == LEFT).count(), 3);
        assert_eq!(build_d2t4_equilateral(8, 1.0).unwrap().len(), 64);
        let l = build_d2t4_equilateral(6, 1.0).unwrap();
        for x in 0..l.len() {
            for j in 1..4 {
                if let Link::Node(y) = l.link(x, j) {
                    assert_ne!(l.node_class[x], l.node_class[*y]);
                    assert_eq!(l.dual(x, j), j);
                }
            }
        }
    }

    #[test]
    fn opposite_directions() {
        for j in 1..7 {
            let k = d2t7_opposite(j);
            assert_eq!(d2t7_opposite(k), j);
            let (a, b) = (D2T7_VELOCITIES[j], D2T7_VELOCITIES[k]);
            assert_eq!([a[0] + b[0], a[1] + b[1]], [0.0, 0.0]);
        }
    }

    #[test]
    fn constructors_validate() {
        let ls = [
            build_d2t7_triangle(7, 0.3).unwrap(),
            build_d2t7_periodic(5, 3, 0.7).unwrap(),
            build_d2t4_equilateral(5, 0.2).unwrap(),
            build_d2t4_periodic(4, 3, 0.5).unwrap(),
        ];
        for l in &ls {
            let r = validate(l);
            assert!(r.is_clean(), "{:?}", r.violations);
        }
        assert!(validate(&ls[0]).bravais_symmetric);
        assert!(!validate(&ls[2]).bravais_symmetric);
    }

    #[test]
    fn corrupted_dual_is_reported_once() {
        let mut l = build_d2t7_triangle(6, 1.0).unwrap();
        let x = l.nearest_node(l.domain.unwrap().centroid());
        l.dual_index[x * 7 + 1] = 2;
        assert_eq!(validate(&l).count(ViolationKind::Duality), 1);
    }

    #[test]
    fn wall_triangle_encloses_half_links() {
        let l = build_d2t7_triangle(9, 0.25).unwrap();
        let dom = l.domain.unwrap();
        assert!((dom.side() - 9.5 * 0.25).abs() < 1e-12);
        for b in l.boundary_links() {
            let bc = dom.barycentric(b.wall_point);
            assert!(bc.iter().any(|c| c.abs() < 1e-12), "{bc:?}");
        }
    }

    #[test]
    fn d2t4_walls_on_domain_edges() {
        let l = build_d2t4_equilateral(5, 0.2).unwrap();
        let dom = l.domain.unwrap();
        assert_eq!(l.boundary_links().count(), 15);
        for b in l.boundary_links() {
            assert!(dom.barycentric(b.wall_point).iter().any(|c| c.abs() < 1e-12));
        }
        let h = build_d2t4_equilateral_with(5, 0.2, WallPlacement::HalfLink).unwrap();
        for (a, b) in l.boundary_links().zip(h.boundary_links()) {
            assert!((a.wall_point[0] - b.wall_point[0]).abs() < 1e-14);
            assert!((a.wall_point[1] - b.wall_point[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn perturbation() {
        let l = build_d2t4_equilateral(8, 0.1).unwrap();
        assert_eq!(perturb(&l, 0.0, 1).unwrap(), l);
        let p1 = perturb(&l, 0.1, 42).unwrap();
        let p2 = perturb(&l, 0.1, 42).unwrap();
        assert_eq!(p1, p2);
        let r = validate(&p1);
        assert!(r.is_clean(), "{:?}", r.violations);
        assert_eq!(r.max_duality_residual, 0.0);
        assert!(!r.bravais_symmetric);
        assert!(perturb(&l, 0.5, 1).is_err());
        assert!(perturb(&build_d2t7_triangle(4, 1.0).unwrap(), 0.1, 1).is_err());
    }

    #[test]
    fn symmetries_are_permutations() {
        for l in [build_d2t7_triangle(8, 1.0).unwrap(), build_d2t4_equilateral(5, 1.0).unwrap()] {
            let maps = triangle_symmetries(&l).unwrap();
            assert_eq!(maps.len(), 6);
            for m in &maps {
                let mut seen = vec![false; m.perm.len()];
                for &t in &m.perm {
                    assert!(!seen[t]);
                    seen[t] = true;
                }
            }
        }
    }
}
