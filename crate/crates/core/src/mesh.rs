//! Structured triangulations of axis-aligned rectangles.
//!
//! Nodes are numbered row-major from the bottom row upwards, so node `(i, j)`
//! (column `i`, row `j`) has index `j * (kx + 1) + i`. Every cell is split by
//! its lower-left to upper-right diagonal into two counterclockwise triangles.

use crate::{Error, Result};

/// Side of the rectangle a boundary edge or node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    /// Outward unit normal of the side.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }

    fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
            Side::Bottom => 2,
            Side::Top => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Maximum triangle diameter.
    pub h: f64,
    pub lx: f64,
    pub ly: f64,
    pub kx: usize,
    pub ky: usize,
}

/// Area and barycentric-coordinate gradients of one affine triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub grad_bary: [[f64; 2]; 3],
    pub vertices: [[f64; 2]; 3],
}

impl ElementGeometry {
    /// Geometry of the triangle with the given vertices (counterclockwise).
    pub fn from_vertices(vertices: [[f64; 2]; 3]) -> Option<Self> {
        let [p0, p1, p2] = vertices;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let scale = edge_len(p0, p1).max(edge_len(p1, p2)).max(edge_len(p2, p0));
        if det.is_nan() || det <= 1e-14 * scale * scale {
            return None;
        }
        // ∇λ_i is the inward normal of the opposite edge divided by twice the area.
        let grad = |a: [f64; 2], b: [f64; 2]| [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
        Some(Self {
            area: 0.5 * det,
            grad_bary: [grad(p1, p2), grad(p2, p0), grad(p0, p1)],
            vertices,
        })
    }

    /// Physical point of barycentric coordinates `bary`.
    pub fn map(&self, bary: [f64; 3]) -> [f64; 2] {
        let v = &self.vertices;
        [
            bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
            bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
        ]
    }
}

/// Boundary nodes split into corners and open sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryClassification {
    pub corners: Vec<usize>,
    /// Side nodes excluding corners, indexed in [`Side::ALL`] order.
    pub sides: [Vec<usize>; 4],
    pub all: Vec<usize>,
}

impl BoundaryClassification {
    pub fn side(&self, side: Side) -> &[usize] {
        &self.sides[side.index()]
    }
}

fn edge_len(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Uniform `kx × ky` triangulation of `[0, lx] × [0, ly]`.
pub fn build_rect_mesh(lx: f64, ly: f64, kx: usize, ky: usize) -> Result<Mesh> {
    if !(lx > 0.0 && lx.is_finite()) || !(ly > 0.0 && ly.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rectangle dimensions must be positive, got {lx} x {ly}"
        )));
    }
    if kx == 0 || ky == 0 {
        return Err(Error::InvalidArgument(format!(
            "subdivision counts must be at least 1, got {kx} x {ky}"
        )));
    }
    let nx = kx + 1;
    let id = |i: usize, j: usize| j * nx + i;

    let mut nodes = Vec::with_capacity(nx * (ky + 1));
    for j in 0..=ky {
        // Boundary rows/columns are placed exactly on the domain edges.
        let y = if j == ky {
            ly
        } else {
            ly * j as f64 / ky as f64
        };
        for i in 0..=kx {
            let x = if i == kx {
                lx
            } else {
                lx * i as f64 / kx as f64
            };
            nodes.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * kx * ky);
    for j in 0..ky {
        for i in 0..kx {
            let a = id(i, j);
            let b = id(i + 1, j);
            let c = id(i + 1, j + 1);
            let d = id(i, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (kx + ky));
    for i in 0..kx {
        boundary_edges.push(BoundaryEdge {
            nodes: [id(i, 0), id(i + 1, 0)],
            side: Side::Bottom,
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [id(i + 1, ky), id(i, ky)],
            side: Side::Top,
        });
    }
    for j in 0..ky {
        boundary_edges.push(BoundaryEdge {
            nodes: [id(kx, j), id(kx, j + 1)],
            side: Side::Right,
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [id(0, j + 1), id(0, j)],
            side: Side::Left,
        });
    }

    let mut mesh = Mesh {
        nodes,
        triangles,
        boundary_edges,
        h: 0.0,
        lx,
        ly,
        kx,
        ky,
    };
    mesh.h = (0..mesh.triangles.len())
        .map(|e| mesh.diameter(e))
        .fold(0.0, f64::max);
    Ok(mesh)
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn domain_area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn vertices(&self, elem: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[elem];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    /// Longest edge of triangle `elem`.
    pub fn diameter(&self, elem: usize) -> f64 {
        let [a, b, c] = self.vertices(elem);
        edge_len(a, b).max(edge_len(b, c)).max(edge_len(c, a))
    }

    /// Geometry of triangle `elem`.
    pub fn element_geometry(&self, elem: usize) -> Result<ElementGeometry> {
        if elem >= self.triangles.len() {
            return Err(Error::InvalidArgument(format!(
                "element {elem} out of range ({} triangles)",
                self.triangles.len()
            )));
        }
        let vertices = self.vertices(elem);
        ElementGeometry::from_vertices(vertices).ok_or_else(|| {
            let [p0, p1, p2] = vertices;
            Error::DegenerateElement {
                elem,
                area: 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])),
            }
        })
    }

    /// Geometry of every triangle, in element order.
    pub fn geometries(&self) -> Result<Vec<ElementGeometry>> {
        (0..self.n_triangles())
            .map(|e| self.element_geometry(e))
            .collect()
    }

    /// Split boundary nodes into the four corners and the four open sides.
    pub fn classify_boundary(&self) -> BoundaryClassification {
        let nx = self.kx + 1;
        let id = |i: usize, j: usize| j * nx + i;
        let corners = vec![
            id(0, 0),
            id(self.kx, 0),
            id(self.kx, self.ky),
            id(0, self.ky),
        ];
        let left = (1..self.ky).map(|j| id(0, j)).collect();
        let right = (1..self.ky).map(|j| id(self.kx, j)).collect();
        let bottom = (1..self.kx).map(|i| id(i, 0)).collect();
        let top = (1..self.kx).map(|i| id(i, self.ky)).collect();
        let sides = [left, right, bottom, top];
        let mut all: Vec<usize> = corners
            .iter()
            .copied()
            .chain(sides.iter().flatten().copied())
            .collect();
        all.sort_unstable();
        BoundaryClassification {
            corners,
            sides,
            all,
        }
    }

    /// Per-node boundary flag.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_nodes()];
        for n in self.classify_boundary().all {
            mask[n] = true;
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn smallest_mesh() {
        let m = build_rect_mesh(1.0, 1.0, 1, 1).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_triangles(), 2);
        let area: f64 = m.geometries().unwrap().iter().map(|g| g.area).sum();
        assert!((area - 1.0).abs() < 1e-15);
    }

    #[test]
    fn counts_and_mesh_size() {
        let m = build_rect_mesh(1.0, 1.0, 10, 10).unwrap();
        assert_eq!(m.n_nodes(), 121);
        assert_eq!(m.n_triangles(), 200);
        assert!((m.h - 2f64.sqrt() / 10.0).abs() < 1e-15);

        let m = build_rect_mesh(2.0, 1.0, 80, 40).unwrap();
        assert_eq!(m.n_nodes(), 3321);
        assert_eq!(m.n_triangles(), 6400);
        assert!((m.h - 2f64.sqrt() / 40.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            build_rect_mesh(0.0, 1.0, 2, 2),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_rect_mesh(1.0, -1.0, 2, 2),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_rect_mesh(1.0, 1.0, 0, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn reference_triangle_geometry() {
        let g = ElementGeometry::from_vertices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(g.area, 0.5);
        assert_eq!(g.grad_bary[0], [-1.0, -1.0]);
        assert_eq!(g.grad_bary[1], [1.0, 0.0]);
        assert_eq!(g.grad_bary[2], [0.0, 1.0]);

        let h = 0.125;
        let g = ElementGeometry::from_vertices([[0.0, 0.0], [h, 0.0], [0.0, h]]).unwrap();
        assert!((g.area - h * h / 2.0).abs() < 1e-18);
    }

    #[test]
    fn collinear_triangle_is_rejected() {
        assert!(ElementGeometry::from_vertices([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_none());
        let mut m = build_rect_mesh(1.0, 1.0, 1, 1).unwrap();
        m.nodes[2] = [0.5, 0.5];
        m.nodes[3] = [0.25, 0.25];
        assert!(matches!(
            m.element_geometry(1),
            Err(Error::DegenerateElement { elem: 1, .. })
        ));
    }

    #[test]
    fn boundary_classification_counts() {
        let m = build_rect_mesh(1.0, 1.0, 1, 1).unwrap();
        let b = m.classify_boundary();
        assert_eq!(b.corners.len(), 4);
        assert!(b.sides.iter().all(|s| s.is_empty()));

        let m = build_rect_mesh(1.0, 1.0, 2, 2).unwrap();
        let b = m.classify_boundary();
        assert_eq!(b.corners.len(), 4);
        for side in Side::ALL {
            assert_eq!(b.side(side).len(), 1);
        }
        assert_eq!(b.all.len(), 8);

        let m = build_rect_mesh(1.0, 1.0, 10, 10).unwrap();
        let b = m.classify_boundary();
        assert_eq!(b.all.len(), 40);
        assert_eq!(b.sides.iter().map(Vec::len).sum::<usize>(), 36);
    }

    #[test]
    fn edges_shared_by_one_or_two_triangles() {
        let m = build_rect_mesh(2.0, 1.0, 7, 4).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary: Vec<(usize, usize)> = m
            .boundary_edges
            .iter()
            .map(|e| (e.nodes[0].min(e.nodes[1]), e.nodes[0].max(e.nodes[1])))
            .collect();
        assert_eq!(boundary.len(), 2 * (7 + 4));
        for (edge, n) in &count {
            if boundary.contains(edge) {
                assert_eq!(*n, 1, "boundary edge {edge:?}");
            } else {
                assert_eq!(*n, 2, "interior edge {edge:?}");
            }
        }
    }
}
