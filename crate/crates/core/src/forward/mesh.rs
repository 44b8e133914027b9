//! Padded rectangular mesh and bilinear finite-element assembly of the
//! transformed operator `-∇·(σ∇φ̃) + k²σφ̃`.
//!
//! The model cells form the uniform core. Padding columns on both sides and
//! padding rows below grow geometrically outward; their conductivity copies
//! the nearest edge cell of the model. The surface row is a natural (no-flux)
//! boundary; the sides and bottom carry a mixed condition derived from the
//! radial decay `K0(kρ)` of a surface point source placed at the mesh's
//! reference point.

use super::bessel::k1_over_k0;
use super::sparse::CsrMatrix;
use super::ForwardError;
use crate::model::{GridSpec, ResistivityModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshOptions {
    /// Padding cells on each side and below the model.
    pub pad_cells: usize,
    /// Geometric growth of padding cell size, outward.
    pub growth: f64,
    /// Uniform subdivision of every cell (1 = model resolution).
    pub refine: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            pad_cells: 8,
            growth: 1.3,
            refine: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Interior,
    /// Surface row: natural boundary.
    Surface,
    /// Left, right or bottom edge: mixed boundary.
    Mixed,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub grid: GridSpec,
    pub options: MeshOptions,
    /// Node x coordinates (m); the model spans `[0, width · cell_size]`.
    pub xs: Vec<f64>,
    /// Node depths (m), increasing downward from 0.
    pub zs: Vec<f64>,
    /// Lateral position of the point used by the mixed boundary condition.
    pub reference_x: f64,
    left_elems: usize,
}

impl Mesh {
    pub fn new(grid: GridSpec, options: MeshOptions) -> Result<Self, ForwardError> {
        grid.validate()?;
        if options.refine == 0 || !(options.growth >= 1.0) {
            return Err(ForwardError::InvalidMesh(format!("{options:?}")));
        }
        let h = grid.cell_size;
        let r = options.refine;
        let pads: Vec<f64> = (1..=options.pad_cells)
            .map(|i| h * options.growth.powi(i as i32))
            .collect();
        let subdivide = |widths: &[f64]| -> Vec<f64> {
            widths
                .iter()
                .flat_map(|&w| std::iter::repeat_n(w / r as f64, r))
                .collect()
        };
        let left: Vec<f64> = subdivide(&pads.iter().rev().copied().collect::<Vec<_>>());
        let core_x = subdivide(&vec![h; grid.width]);
        let right = subdivide(&pads);
        let core_z = subdivide(&vec![h; grid.height]);
        let bottom = subdivide(&pads);

        let x0 = -left.iter().sum::<f64>();
        let xs = cumulative(x0, left.iter().chain(&core_x).chain(&right));
        let zs = cumulative(0.0, core_z.iter().chain(&bottom));
        // Snap core nodes onto exact multiples of the sub-cell size.
        let mut xs = xs;
        let sub = h / r as f64;
        for (k, x) in xs[left.len()..=left.len() + core_x.len()]
            .iter_mut()
            .enumerate()
        {
            *x = k as f64 * sub;
        }
        let mut zs = zs;
        for (k, z) in zs[..=core_z.len()].iter_mut().enumerate() {
            *z = k as f64 * sub;
        }
        Ok(Self {
            grid,
            options,
            xs,
            zs,
            reference_x: grid.width as f64 * h / 2.0,
            left_elems: left.len(),
        })
    }

    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn nz(&self) -> usize {
        self.zs.len()
    }

    pub fn node_count(&self) -> usize {
        self.nx() * self.nz()
    }

    #[inline]
    pub fn node(&self, ix: usize, iz: usize) -> usize {
        iz * self.nx() + ix
    }

    /// Index of the surface node at lateral position `x`, if one lies there.
    pub fn surface_node_at(&self, x: f64) -> Option<usize> {
        let tol = 1e-9 * self.grid.cell_size.max(1.0);
        self.xs.iter().position(|&xi| (xi - x).abs() <= tol)
    }

    /// Model cell (row, col) whose conductivity element `(ex, ez)` carries.
    pub fn element_cell(&self, ex: usize, ez: usize) -> (usize, usize) {
        let r = self.options.refine;
        let col = if ex < self.left_elems {
            0
        } else {
            ((ex - self.left_elems) / r).min(self.grid.width - 1)
        };
        let row = (ez / r).min(self.grid.height - 1);
        (row, col)
    }

    /// Node permutation that walks columns top to bottom, giving the
    /// assembled matrices a bandwidth of `nz + 1`.
    pub fn column_major_order(&self) -> Vec<usize> {
        let (nx, nz) = (self.nx(), self.nz());
        (0..nx)
            .flat_map(|ix| (0..nz).map(move |iz| iz * nx + ix))
            .collect()
    }

    pub fn boundary_tags(&self) -> Vec<BoundaryTag> {
        let (nx, nz) = (self.nx(), self.nz());
        let mut tags = vec![BoundaryTag::Interior; nx * nz];
        for iz in 0..nz {
            for ix in 0..nx {
                let t = if ix == 0 || ix == nx - 1 || iz == nz - 1 {
                    BoundaryTag::Mixed
                } else if iz == 0 {
                    BoundaryTag::Surface
                } else {
                    BoundaryTag::Interior
                };
                tags[iz * nx + ix] = t;
            }
        }
        tags
    }
}

fn cumulative<'a>(start: f64, widths: impl Iterator<Item = &'a f64>) -> Vec<f64> {
    let mut out = vec![start];
    let mut acc = start;
    for w in widths {
        acc += w;
        out.push(acc);
    }
    out
}

/// Stiffness (`∫∇Nᵢ·∇Nⱼ`) and mass (`∫NᵢNⱼ`) of a `dx × dz` bilinear
/// rectangle, nodes ordered (0,0), (dx,0), (dx,dz), (0,dz).
pub fn element_matrices(dx: f64, dz: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    const KX: [[f64; 4]; 4] = [
        [2.0, -2.0, -1.0, 1.0],
        [-2.0, 2.0, 1.0, -1.0],
        [-1.0, 1.0, 2.0, -2.0],
        [1.0, -1.0, -2.0, 2.0],
    ];
    const KZ: [[f64; 4]; 4] = [
        [2.0, 1.0, -1.0, -2.0],
        [1.0, 2.0, -2.0, -1.0],
        [-1.0, -2.0, 2.0, 1.0],
        [-2.0, -1.0, 1.0, 2.0],
    ];
    const M: [[f64; 4]; 4] = [
        [4.0, 2.0, 1.0, 2.0],
        [2.0, 4.0, 2.0, 1.0],
        [1.0, 2.0, 4.0, 2.0],
        [2.0, 1.0, 2.0, 4.0],
    ];
    let mut k = [[0.0; 4]; 4];
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            k[i][j] = (dz / dx) * KX[i][j] / 6.0 + (dx / dz) * KZ[i][j] / 6.0;
            m[i][j] = dx * dz * M[i][j] / 36.0;
        }
    }
    (k, m)
}

/// Assembles `Σ_e c_e (K_e + k² M_e)` plus mixed-boundary edge terms over
/// the node grid `xs × zs`, where `c_e = coefficient(ex, ez)`.
///
/// The mixed term on an outer edge is `c_e · k K1(kρ)/K0(kρ) cosθ` integrated
/// against the edge's linear shape functions, with `ρ` and `θ` measured from
/// the surface point `(reference_x, 0)`. It vanishes at `k = 0`.
pub fn assemble_nodes(
    xs: &[f64],
    zs: &[f64],
    coefficient: impl Fn(usize, usize) -> f64,
    wavenumber: f64,
    reference_x: f64,
) -> CsrMatrix {
    let (nx, nz) = (xs.len(), zs.len());
    let mut a = CsrMatrix::nine_point(nx, nz);
    let k2 = wavenumber * wavenumber;
    for ez in 0..nz - 1 {
        for ex in 0..nx - 1 {
            let c = coefficient(ex, ez);
            if c == 0.0 {
                continue;
            }
            let (dx, dz) = (xs[ex + 1] - xs[ex], zs[ez + 1] - zs[ez]);
            let (ke, me) = element_matrices(dx, dz);
            let nodes = [
                ez * nx + ex,
                ez * nx + ex + 1,
                (ez + 1) * nx + ex + 1,
                (ez + 1) * nx + ex,
            ];
            for i in 0..4 {
                for j in 0..4 {
                    a.add(nodes[i], nodes[j], c * (ke[i][j] + k2 * me[i][j]));
                }
            }
        }
    }
    if wavenumber > 0.0 {
        let mut edge =
            |n0: usize, n1: usize, p0: (f64, f64), p1: (f64, f64), normal: (f64, f64), c: f64| {
                if c == 0.0 {
                    return;
                }
                let mid = ((p0.0 + p1.0) / 2.0, (p0.1 + p1.1) / 2.0);
                let (rx, rz) = (mid.0 - reference_x, mid.1);
                let rho = (rx * rx + rz * rz).sqrt();
                let cos = (rx * normal.0 + rz * normal.1) / rho;
                let alpha = c * wavenumber * k1_over_k0(wavenumber * rho) * cos;
                let len = ((p1.0 - p0.0).powi(2) + (p1.1 - p0.1).powi(2)).sqrt();
                let (d, o) = (alpha * len / 3.0, alpha * len / 6.0);
                a.add(n0, n0, d);
                a.add(n1, n1, d);
                a.add(n0, n1, o);
                a.add(n1, n0, o);
            };
        for ez in 0..nz - 1 {
            let (z0, z1) = (zs[ez], zs[ez + 1]);
            edge(
                ez * nx,
                (ez + 1) * nx,
                (xs[0], z0),
                (xs[0], z1),
                (-1.0, 0.0),
                coefficient(0, ez),
            );
            let r = nx - 1;
            edge(
                ez * nx + r,
                (ez + 1) * nx + r,
                (xs[r], z0),
                (xs[r], z1),
                (1.0, 0.0),
                coefficient(nx - 2, ez),
            );
        }
        let b = nz - 1;
        for ex in 0..nx - 1 {
            edge(
                b * nx + ex,
                b * nx + ex + 1,
                (xs[ex], zs[b]),
                (xs[ex + 1], zs[b]),
                (0.0, 1.0),
                coefficient(ex, nz - 2),
            );
        }
    }
    a
}

/// Finite-element system for one model and wavenumber.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub wavenumber: f64,
    pub boundary: Vec<BoundaryTag>,
}

impl SparseSystem {
    pub fn dimension(&self) -> usize {
        self.matrix.dim()
    }
}

fn conductivities(mesh: &Mesh, model: &ResistivityModel) -> Result<Vec<f64>, ForwardError> {
    if model.grid != mesh.grid {
        return Err(ForwardError::GridMismatch);
    }
    let mut sigma = vec![0.0; model.grid.height * model.grid.width];
    for i in 0..model.grid.height {
        for j in 0..model.grid.width {
            let rho = model.get(i, j);
            if !(rho > 0.0) || !rho.is_finite() {
                return Err(ForwardError::NonPositiveResistivity {
                    row: i,
                    col: j,
                    value: rho,
                });
            }
            sigma[i * model.grid.width + j] = 1.0 / rho;
        }
    }
    Ok(sigma)
}

/// Assembles the system matrix for `model` at wavenumber `k ≥ 0`.
pub fn assemble(
    mesh: &Mesh,
    model: &ResistivityModel,
    wavenumber: f64,
) -> Result<SparseSystem, ForwardError> {
    let sigma = conductivities(mesh, model)?;
    let w = model.grid.width;
    let matrix = assemble_nodes(
        &mesh.xs,
        &mesh.zs,
        |ex, ez| {
            let (r, c) = mesh.element_cell(ex, ez);
            sigma[r * w + c]
        },
        wavenumber,
        mesh.reference_x,
    );
    Ok(SparseSystem {
        matrix,
        wavenumber,
        boundary: mesh.boundary_tags(),
    })
}

/// The operator for conductivity contrast `σ − σ0` (not definite).
pub fn assemble_contrast(
    mesh: &Mesh,
    model: &ResistivityModel,
    rho0: f64,
    wavenumber: f64,
) -> Result<CsrMatrix, ForwardError> {
    let sigma = conductivities(mesh, model)?;
    let sigma0 = 1.0 / rho0;
    let w = model.grid.width;
    Ok(assemble_nodes(
        &mesh.xs,
        &mesh.zs,
        |ex, ez| {
            let (r, c) = mesh.element_cell(ex, ez);
            sigma[r * w + c] - sigma0
        },
        wavenumber,
        mesh.reference_x,
    ))
}

/// The unit-conductivity homogeneous operator.
pub fn assemble_homogeneous(mesh: &Mesh, wavenumber: f64) -> CsrMatrix {
    assemble_nodes(&mesh.xs, &mesh.zs, |_, _| 1.0, wavenumber, mesh.reference_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{place_anomaly, AnomalySpec};

    /// 2×2 Gauss-Legendre integration of the bilinear shape functions.
    fn quadrature_element(dx: f64, dz: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
        let g = 1.0 / 3f64.sqrt();
        let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let mut k = [[0.0; 4]; 4];
        let mut m = [[0.0; 4]; 4];
        for &(s, t) in &[(-g, -g), (g, -g), (g, g), (-g, g)] {
            let n: Vec<f64> = corners
                .iter()
                .map(|&(si, ti)| 0.25 * (1.0 + si * s) * (1.0 + ti * t))
                .collect();
            let dn: Vec<(f64, f64)> = corners
                .iter()
                .map(|&(si, ti)| {
                    (
                        0.25 * si * (1.0 + ti * t) * 2.0 / dx,
                        0.25 * ti * (1.0 + si * s) * 2.0 / dz,
                    )
                })
                .collect();
            let jac = dx * dz / 4.0;
            for i in 0..4 {
                for j in 0..4 {
                    k[i][j] += (dn[i].0 * dn[j].0 + dn[i].1 * dn[j].1) * jac;
                    m[i][j] += n[i] * n[j] * jac;
                }
            }
        }
        (k, m)
    }

    #[test]
    fn element_matrices_match_gauss_quadrature() {
        for (dx, dz) in [(1.0, 1.0), (2.0, 0.5), (1.3, 3.7)] {
            let (k, m) = element_matrices(dx, dz);
            let (kq, mq) = quadrature_element(dx, dz);
            for i in 0..4 {
                for j in 0..4 {
                    assert!((k[i][j] - kq[i][j]).abs() < 1e-12);
                    assert!((m[i][j] - mq[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_by_two_mesh_matches_hand_assembly() {
        // 3×3 nodes, four unit elements with conductivity 0.5, k = 0.7. Only
        // the center node is free of the mixed boundary term.
        let xs = [0.0, 1.0, 2.0];
        let zs = [0.0, 1.0, 2.0];
        let (sigma, k) = (0.5, 0.7);
        let a = assemble_nodes(&xs, &zs, |_, _| sigma, k, 1.0);
        let dense = a.to_dense();
        // Hand assembly: center node touches 4 elements at local corner 2 of
        // element (0,0), 3 of (1,0), 1 of (0,1), 0 of (1,1); all diagonal
        // entries equal 2/3 (stiffness) + 4/36 (mass).
        let (kd, md) = (2.0 / 3.0, 4.0 / 36.0);
        assert!((dense[4][4] - 4.0 * sigma * (kd + k * k * md)).abs() < 1e-12);
        // Corner node 0 belongs to one element; compare at k = 0 where the
        // mixed term vanishes.
        let a0 = assemble_nodes(&xs, &zs, |_, _| sigma, 0.0, 1.0);
        assert!((a0.get(0, 0) - sigma * kd).abs() < 1e-12);
        assert!(dense[0][0] > sigma * (kd + k * k * md));
        // Edge neighbour of the center (node 1) shares two elements:
        // stiffness -1/6 each, mass 2/36 each.
        assert!((dense[4][1] - 2.0 * sigma * (-1.0 / 6.0 + k * k * 2.0 / 36.0)).abs() < 1e-12);
        // Diagonal neighbour (node 0) shares one: stiffness -1/3, mass 1/36.
        assert!((dense[4][0] - sigma * (-1.0 / 3.0 + k * k / 36.0)).abs() < 1e-12);
        // Interior row sum equals k²σ times the nodal mass (1 per unit cell area / 4 × 4).
        let row_sum: f64 = dense[4].iter().sum();
        assert!((row_sum - k * k * sigma * 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_matches_padded_formula() {
        let grid = GridSpec::desk();
        let mesh = Mesh::new(grid, MeshOptions::default()).unwrap();
        assert_eq!(mesh.node_count(), (32 + 8 + 1) * (96 + 8 * 2 + 1));
        assert_eq!(mesh.xs[8], 0.0);
        assert_eq!(mesh.xs[8 + 96], 96.0);
        assert_eq!(mesh.zs[32], 32.0);
    }

    #[test]
    fn assembled_matrix_is_exactly_symmetric() {
        let grid = GridSpec::desk();
        let mesh = Mesh::new(grid, MeshOptions::default()).unwrap();
        let m = place_anomaly(
            &ResistivityModel::homogeneous(grid, 500.0),
            &AnomalySpec::rectangular(8, 8, 10.0, (5, 30)),
        )
        .unwrap();
        let sys = assemble(&mesh, &m, 0.3).unwrap();
        assert_eq!(sys.matrix.asymmetry(), 0.0);
    }

    #[test]
    fn interior_row_sums_are_mass_terms_for_homogeneous_model() {
        let grid = GridSpec::desk();
        let mesh = Mesh::new(grid, MeshOptions::default()).unwrap();
        let model = ResistivityModel::homogeneous(grid, 500.0);
        let k = 0.25;
        let sys = assemble(&mesh, &model, k).unwrap();
        let sigma = 1.0 / 500.0;
        for (ix, iz) in [(20, 5), (60, 20), (9, 1)] {
            let i = mesh.node(ix, iz);
            let row_sum: f64 = sys.matrix.row(i).map(|(_, v)| v).sum();
            let area: f64 = (0..2)
                .flat_map(|a| (0..2).map(move |b| (a, b)))
                .map(|(a, b)| {
                    let (ex, ez) = (ix - 1 + a, iz - 1 + b);
                    (mesh.xs[ex + 1] - mesh.xs[ex]) * (mesh.zs[ez + 1] - mesh.zs[ez])
                })
                .sum();
            assert!((row_sum - k * k * sigma * area / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn core_rows_are_diagonally_dominant() {
        let grid = GridSpec::desk();
        let mesh = Mesh::new(grid, MeshOptions::default()).unwrap();
        let sys = assemble(&mesh, &ResistivityModel::homogeneous(grid, 100.0), 0.1).unwrap();
        for iz in 1..grid.height {
            for ix in 9..(8 + grid.width) {
                let i = mesh.node(ix, iz);
                let diag = sys.matrix.get(i, i);
                let off: f64 = sys
                    .matrix
                    .row(i)
                    .filter(|&(j, _)| j != i)
                    .map(|(_, v)| v.abs())
                    .sum();
                assert!(diag >= off, "row ({ix},{iz})");
            }
        }
    }

    #[test]
    fn stiffness_scales_inversely_with_resistivity() {
        let grid = GridSpec::desk();
        let mesh = Mesh::new(grid, MeshOptions::default()).unwrap();
        let m = place_anomaly(
            &ResistivityModel::homogeneous(grid, 500.0),
            &AnomalySpec::rectangular(6, 6, 1000.0, (4, 20)),
        )
        .unwrap();
        let mut scaled = m.clone();
        scaled.values = m.values.map(|v| 4.0 * v);
        let a = assemble(&mesh, &m, 0.0).unwrap().matrix;
        let b = assemble(&mesh, &scaled, 0.0).unwrap().matrix;
        for i in (0..a.dim()).step_by(37) {
            for (j, v) in a.row(i) {
                assert!((b.get(i, j) - v / 4.0).abs() <= 1e-15 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_non_positive_resistivity() {
        let grid = GridSpec::desk();
        let mesh = Mesh::new(grid, MeshOptions::default()).unwrap();
        let mut m = ResistivityModel::homogeneous(grid, 500.0);
        m.values.set(3, 3, 0.0);
        assert!(matches!(
            assemble(&mesh, &m, 0.1),
            Err(ForwardError::NonPositiveResistivity { row: 3, col: 3, .. })
        ));
    }

    #[test]
    fn refined_mesh_keeps_core_nodes_on_cell_edges() {
        let grid = GridSpec::desk();
        let opts = MeshOptions {
            refine: 2,
            ..MeshOptions::default()
        };
        let mesh = Mesh::new(grid, opts).unwrap();
        assert_eq!(mesh.nx(), 2 * (96 + 16) + 1);
        assert!(mesh.surface_node_at(4.0).is_some());
        assert!(mesh.surface_node_at(4.5).is_some());
        assert_eq!(mesh.element_cell(16 + 3, 5), (2, 1));
    }
}
