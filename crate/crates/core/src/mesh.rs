//! Structured P1 triangulation of the unit square.
//!
//! Every grid cell `[x_i, x_{i+1}] x [y_j, y_{j+1}]` is split along its
//! lower-left to upper-right diagonal into two counterclockwise triangles.
//! Vertex `(i, j)` (column `i`, row `j`) has index `j * (n + 1) + i`.

use crate::error::{Error, Result};

/// Barycentric coordinates of the symmetric 3-point rule (degree 2) on a triangle.
pub const GAUSS3_POINTS: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

/// Weights of [`GAUSS3_POINTS`], relative to the triangle area.
pub const GAUSS3_WEIGHTS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

#[derive(Clone, Debug)]
pub struct Mesh {
    pub n_cells_per_side: usize,
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Mesh diameter (diagonal of one grid cell).
    pub h: f64,
    pub boundary_vertex: Vec<bool>,
    elements: Vec<Element>,
}

/// Geometry of one P1 triangle.
#[derive(Clone, Copy, Debug)]
pub struct Element {
    pub area: f64,
    /// Constant gradients of the three barycentric basis functions.
    pub grads: [[f64; 2]; 3],
}

impl Element {
    fn new(p: [[f64; 2]; 3]) -> Self {
        let [a, b, c] = p;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let area = 0.5 * det;
        let inv = 1.0 / det;
        let grads = [
            [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
            [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
            [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
        ];
        Element { area, grads }
    }

    /// Local stiffness `(grad l_a, grad l_b)`.
    pub fn stiffness(&self) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                k[a][b] = self.area
                    * (self.grads[a][0] * self.grads[b][0] + self.grads[a][1] * self.grads[b][1]);
            }
        }
        k
    }

    /// Local consistent mass `(l_a, l_b)` via the 3-point Gauss rule (exact for P1 x P1).
    pub fn mass(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (q, lam) in GAUSS3_POINTS.iter().enumerate() {
            let w = GAUSS3_WEIGHTS[q] * self.area;
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] += w * lam[a] * lam[b];
                }
            }
        }
        m
    }

    /// Voigt strain-displacement operator: row r of the strain `(e11, e22, 2 e12)`
    /// against local dofs ordered `(ux_0, uy_0, ux_1, uy_1, ux_2, uy_2)`.
    pub fn strain_operator(&self) -> [[f64; 6]; 3] {
        let mut b = [[0.0; 6]; 3];
        for a in 0..3 {
            let [gx, gy] = self.grads[a];
            b[0][2 * a] = gx;
            b[1][2 * a + 1] = gy;
            b[2][2 * a] = gy;
            b[2][2 * a + 1] = gx;
        }
        b
    }
}

impl Mesh {
    /// Uniform `n x n` grid of the unit square, two triangles per cell.
    pub fn build(n: usize) -> Result<Mesh> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "mesh needs at least one cell per side".into(),
            ));
        }
        let np = n + 1;
        let step = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity(np * np);
        let mut boundary_vertex = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                // exact endpoints so boundary and interface tests are bitwise
                let x = if i == n { 1.0 } else { i as f64 * step };
                let y = if j == n { 1.0 } else { j as f64 * step };
                vertices.push([x, y]);
                boundary_vertex.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = j * np + i;
                let v10 = v00 + 1;
                let v01 = v00 + np;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let elements = triangles
            .iter()
            .map(|t| Element::new([vertices[t[0]], vertices[t[1]], vertices[t[2]]]))
            .collect();
        Ok(Mesh {
            n_cells_per_side: n,
            vertices,
            triangles,
            h: std::f64::consts::SQRT_2 / n as f64,
            boundary_vertex,
            elements,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn element(&self, t: usize) -> &Element {
        &self.elements[t]
    }

    pub fn elements(&self) -> impl Iterator<Item = (&[usize; 3], &Element)> {
        self.triangles.iter().zip(self.elements.iter())
    }

    /// Nodal vector taking `inside` where the predicate holds and `outside` elsewhere.
    pub fn interpolate_indicator<F>(&self, predicate: F, inside: f64, outside: f64) -> Vec<f64>
    where
        F: Fn(f64, f64) -> bool,
    {
        self.vertices
            .iter()
            .map(|&[x, y]| if predicate(x, y) { inside } else { outside })
            .collect()
    }

    /// Two-phase initial indicator: -1 on the closed left half `x <= 0.5`, +1 to the right.
    pub fn left_right_indicator(&self) -> Vec<f64> {
        self.interpolate_indicator(|x, _| x <= 0.5, -1.0, 1.0)
    }

    /// Row-sum (lumped) mass of every vertex.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_vertices()];
        for (tri, el) in self.elements() {
            for &v in tri {
                m[v] += el.area / 3.0;
            }
        }
        m
    }
}
