//! Conforming P1 triangulations of the unit square and of the unit disk.
//!
//! Both families are built from a coarse mesh and refined uniformly ("red"
//! refinement: every triangle is split into four by its edge midpoints). For
//! the disk, midpoints of boundary edges are pushed radially onto the unit
//! circle so that all boundary vertices lie on the true boundary.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which domain a mesh discretizes. Refinement needs this to know whether new
/// boundary vertices have to be projected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    UnitSquare,
    UnitDisk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    domain: Domain,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    h: f64,
    /// node -> interior dof index
    node_to_dof: Vec<Option<usize>>,
    /// interior dof index -> node
    dof_to_node: Vec<usize>,
}

/// Uniform grid on (0,1)^2 with `n` cells per side, every cell split along the
/// lower-left to upper-right diagonal.
pub fn unit_square_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidMesh(
            "unit square needs at least one subdivision".into(),
        ));
    }
    let stride = n + 1;
    let mut nodes = Vec::with_capacity(stride * stride);
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let p00 = j * stride + i;
            let p10 = p00 + 1;
            let p01 = p00 + stride;
            let p11 = p01 + 1;
            triangles.push([p00, p10, p11]);
            triangles.push([p00, p11, p01]);
        }
    }
    Ok(Mesh::from_parts(Domain::UnitSquare, nodes, triangles))
}

/// Polygonal approximation of the unit disk: a hexagon fan at level 0,
/// refined `level` times.
pub fn unit_disk_mesh(level: usize) -> Mesh {
    let mut nodes = vec![[0.0, 0.0]];
    for k in 0..6 {
        let t = k as f64 * std::f64::consts::PI / 3.0;
        nodes.push([t.cos(), t.sin()]);
    }
    let triangles = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
    let mut mesh = Mesh::from_parts(Domain::UnitDisk, nodes, triangles);
    for _ in 0..level {
        mesh = refine(&mesh);
    }
    mesh
}

/// One level of uniform red refinement.
///
/// Existing nodes keep their indices; midpoints are appended in the order in
/// which their edges are first met while sweeping the triangles.
pub fn refine(mesh: &Mesh) -> Mesh {
    let edges = mesh.edges();
    let n_old = mesh.nodes.len();
    let mut nodes = mesh.nodes.clone();
    nodes.reserve(edges.order.len());
    for &(a, b) in &edges.order {
        let pa = mesh.nodes[a];
        let pb = mesh.nodes[b];
        let mut m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        if mesh.domain == Domain::UnitDisk && edges.count[&(a, b)] == 1 {
            let r = (m[0] * m[0] + m[1] * m[1]).sqrt();
            m = [m[0] / r, m[1] / r];
        }
        nodes.push(m);
    }
    let mid = |a: usize, b: usize| n_old + edges.index[&edge_key(a, b)];
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for &[a, b, c] in &mesh.triangles {
        let ab = mid(a, b);
        let bc = mid(b, c);
        let ca = mid(c, a);
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    Mesh::from_parts(mesh.domain, nodes, triangles)
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) struct EdgeTable {
    /// unique edges in first-encounter order
    pub order: Vec<(usize, usize)>,
    pub index: HashMap<(usize, usize), usize>,
    /// number of triangles sharing each edge
    pub count: HashMap<(usize, usize), usize>,
}

impl Mesh {
    fn from_parts(domain: Domain, nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Mesh {
        let mut mesh = Mesh {
            domain,
            nodes,
            triangles,
            boundary: Vec::new(),
            h: 0.0,
            node_to_dof: Vec::new(),
            dof_to_node: Vec::new(),
        };
        let edges = mesh.edges();
        let mut boundary = vec![false; mesh.nodes.len()];
        for (&(a, b), &c) in &edges.count {
            if c == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        let mut node_to_dof = vec![None; mesh.nodes.len()];
        let mut dof_to_node = Vec::new();
        for (i, &on_boundary) in boundary.iter().enumerate() {
            if !on_boundary {
                node_to_dof[i] = Some(dof_to_node.len());
                dof_to_node.push(i);
            }
        }
        mesh.h = (0..mesh.triangles.len())
            .map(|t| mesh.diameter(t))
            .fold(0.0, f64::max);
        mesh.boundary = boundary;
        mesh.node_to_dof = node_to_dof;
        mesh.dof_to_node = dof_to_node;
        mesh
    }

    pub(crate) fn edges(&self) -> EdgeTable {
        let mut order = Vec::new();
        let mut index = HashMap::new();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let e = edge_key(tri[k], tri[(k + 1) % 3]);
                *count.entry(e).or_insert(0) += 1;
                index.entry(e).or_insert_with(|| {
                    order.push(e);
                    order.len() - 1
                });
            }
        }
        EdgeTable {
            order,
            index,
            count,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    /// Largest triangle diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_interior(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.node_to_dof[node]
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.dof_to_node
    }

    pub fn n_edges(&self) -> usize {
        self.edges().order.len()
    }

    pub fn vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area (positive for counterclockwise orientation).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.vertices(t);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [p, q, r] = self.vertices(t);
        dist(p, q).max(dist(q, r)).max(dist(r, p))
    }

    /// Ratio of diameter to inscribed-circle diameter.
    pub fn shape_ratio(&self, t: usize) -> f64 {
        let [p, q, r] = self.vertices(t);
        let perimeter = dist(p, q) + dist(q, r) + dist(r, p);
        let inscribed = 4.0 * self.signed_area(t).abs() / perimeter;
        self.diameter(t) / inscribed
    }

    /// Expands an interior-dof vector to all nodes, with zeros on the boundary.
    pub fn extend_by_zero(&self, v: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.nodes.len()];
        for (dof, &node) in self.dof_to_node.iter().enumerate() {
            full[node] = v[dof];
        }
        full
    }

    /// Nodal interpolant of `f` on the interior dofs.
    pub fn interpolate<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.dof_to_node
            .iter()
            .map(|&i| f(self.nodes[i][0], self.nodes[i][1]))
            .collect()
    }

    /// Plain-text dump: `nodes N triangles T`, then `x y boundary_flag` per
    /// node, then `i j k` per triangle (0-based).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nodes {} triangles {}",
            self.nodes.len(),
            self.triangles.len()
        );
        for (p, &b) in self.nodes.iter().zip(&self.boundary) {
            let _ = writeln!(out, "{:.17e} {:.17e} {}", p[0], p[1], b as u8);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
        }
        out
    }
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}
