//! 2.5-D DC-resistivity forward modelling with the anomalous-potential
//! method.
//!
//! For a surface point source the total potential is split into the
//! half-space primary `ρ0/(2πr)` and a secondary part. The secondary part is
//! solved in the strike-wavenumber domain,
//! `A(σ) φ̃ₛ = −A(σ − σ0) φ̃₀`, for each wavenumber of the quadrature and
//! transformed back. `φ̃₀` is the finite-element solution of the homogeneous
//! problem, so a model equal to its background gives `φ̃ₛ = 0` exactly and
//! transfer resistances obey discrete reciprocity.

pub mod bessel;
pub mod mesh;
pub mod quadrature;
pub mod sparse;
pub mod survey;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::model::{GridSpec, ModelError, ResistivityModel};
pub use mesh::{BoundaryTag, Mesh, MeshOptions, SparseSystem};
pub use quadrature::WavenumberQuadrature;
pub use sparse::{BandCholesky, CgDivergence, CgSettings, CgStats, CsrMatrix, NotPositiveDefinite};
pub use survey::{geometric_factor, ArrayConfig, ArrayKind, ElectrodeLayout, Measurement, Section};

#[derive(Debug, thiserror::Error)]
pub enum ForwardError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid mesh options: {0}")]
    InvalidMesh(String),
    #[error("invalid electrode layout: {0}")]
    InvalidLayout(String),
    #[error("model grid does not match the solver grid")]
    GridMismatch,
    #[error("resistivity {value} at ({row}, {col}) is not positive")]
    NonPositiveResistivity { row: usize, col: usize, value: f64 },
    #[error("query point coincides with the source")]
    Singular,
    #[error("no electrode lies at x = {0} m")]
    NoElectrode(f64),
    #[error("no feasible quadrupole for the array configuration")]
    NoFeasibleQuadrupole,
    #[error(transparent)]
    SolverDivergence(#[from] CgDivergence),
    #[error(transparent)]
    NotPositiveDefinite(#[from] NotPositiveDefinite),
    #[error("linear solve residual {0:.3e} exceeds tolerance")]
    Residual(f64),
}

/// Potential per unit current of a surface point source on a half-space.
pub fn primary_potential(rho0: f64, source_x: f64, query: (f64, f64)) -> Result<f64, ForwardError> {
    let r = ((query.0 - source_x).powi(2) + query.1.powi(2)).sqrt();
    if r == 0.0 {
        return Err(ForwardError::Singular);
    }
    Ok(rho0 / (2.0 * PI * r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearSolver {
    /// Banded Cholesky over a column-major node ordering.
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    pub mesh: MeshOptions,
    /// One electrode every this many model columns.
    pub electrode_step: usize,
    pub solver: LinearSolver,
    pub cg: CgSettings,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            mesh: MeshOptions::default(),
            electrode_step: 4,
            solver: LinearSolver::Direct,
            cg: CgSettings::default(),
        }
    }
}

/// Surface potentials per unit current between every electrode pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTable {
    n: usize,
    /// `values[s * n + r]`: potential at electrode `r` from a source at `s`.
    values: Vec<f64>,
}

impl TransferTable {
    pub fn electrodes(&self) -> usize {
        self.n
    }

    /// Infinite on the diagonal.
    pub fn potential(&self, source: usize, receiver: usize) -> f64 {
        self.values[source * self.n + receiver]
    }

    /// `ΔV/I` for current `+I` at `a`, `−I` at `b`, measured `V(m) − V(n)`.
    pub fn transfer(&self, a: usize, b: usize, m: usize, n: usize) -> f64 {
        self.potential(a, m) - self.potential(a, n) - self.potential(b, m) + self.potential(b, n)
    }
}

enum Factor {
    Direct(BandCholesky),
    Iterative(CsrMatrix),
}

pub struct ForwardSolver {
    mesh: Mesh,
    layout: ElectrodeLayout,
    electrode_nodes: Vec<usize>,
    quadrature: WavenumberQuadrature,
    config: ForwardConfig,
    order: Vec<usize>,
    /// `[k][electrode]`: unit-conductivity homogeneous nodal solutions.
    homogeneous: OnceLock<Vec<Vec<Vec<f64>>>>,
}

impl std::fmt::Debug for ForwardSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardSolver")
            .field("grid", &self.mesh.grid)
            .field("electrodes", &self.layout.len())
            .field("nodes", &self.mesh.node_count())
            .finish()
    }
}

impl ForwardSolver {
    pub fn new(grid: GridSpec, config: ForwardConfig) -> Result<Self, ForwardError> {
        let layout = ElectrodeLayout::every_columns(&grid, config.electrode_step)?;
        Self::with_layout(grid, layout, config)
    }

    pub fn with_layout(
        grid: GridSpec,
        layout: ElectrodeLayout,
        config: ForwardConfig,
    ) -> Result<Self, ForwardError> {
        layout.validate(&grid)?;
        let mesh = Mesh::new(grid, config.mesh)?;
        let electrode_nodes = layout
            .positions
            .iter()
            .map(|&x| mesh.surface_node_at(x).ok_or(ForwardError::NoElectrode(x)))
            .collect::<Result<Vec<_>, _>>()?;
        let span = layout.positions[layout.len() - 1] - layout.positions[0];
        let quadrature = WavenumberQuadrature::fit(layout.spacing, span.max(2.0 * layout.spacing));
        let order = mesh.column_major_order();
        Ok(Self {
            mesh,
            layout,
            electrode_nodes,
            quadrature,
            config,
            order,
            homogeneous: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn quadrature(&self) -> &WavenumberQuadrature {
        &self.quadrature
    }

    pub fn config(&self) -> &ForwardConfig {
        &self.config
    }

    pub fn grid(&self) -> GridSpec {
        self.mesh.grid
    }

    /// Surface node indices of the electrodes.
    pub fn electrode_nodes(&self) -> &[usize] {
        &self.electrode_nodes
    }

    fn factor(&self, matrix: CsrMatrix) -> Result<Factor, ForwardError> {
        Ok(match self.config.solver {
            LinearSolver::Direct => Factor::Direct(BandCholesky::factor(&matrix, &self.order)?),
            LinearSolver::ConjugateGradient => Factor::Iterative(matrix),
        })
    }

    fn solve(&self, factor: &Factor, rhs: &[f64]) -> Result<Vec<f64>, ForwardError> {
        match factor {
            Factor::Direct(chol) => Ok(chol.solve(rhs)),
            Factor::Iterative(a) => Ok(sparse::conjugate_gradient(a, rhs, self.config.cg)?.0),
        }
    }

    fn unit_load(&self, node: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.mesh.node_count()];
        // Half of the injected current enters the transformed half-plane problem.
        b[node] = 0.5;
        b
    }

    fn surface_node(&self, x: f64) -> Result<usize, ForwardError> {
        self.mesh
            .surface_node_at(x)
            .ok_or(ForwardError::NoElectrode(x))
    }

    fn homogeneous_solutions(&self) -> Result<&Vec<Vec<Vec<f64>>>, ForwardError> {
        if let Some(h) = self.homogeneous.get() {
            return Ok(h);
        }
        let sols = self
            .quadrature
            .wavenumbers
            .par_iter()
            .map(|&k| {
                let f = self.factor(mesh::assemble_homogeneous(&self.mesh, k))?;
                self.electrode_nodes
                    .iter()
                    .map(|&node| self.solve(&f, &self.unit_load(node)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, ForwardError>>()?;
        let _ = self.homogeneous.set(sols);
        Ok(self.homogeneous.get().expect("initialized above"))
    }

    /// Unit-conductivity homogeneous solution for a source at surface node
    /// `node`, from the cache when it is an electrode at a quadrature wavenumber.
    fn homogeneous_solution(&self, k: f64, node: usize) -> Result<Vec<f64>, ForwardError> {
        let kj = self.quadrature.wavenumbers.iter().position(|&q| q == k);
        let e = self.electrode_nodes.iter().position(|&n| n == node);
        if let (Some(j), Some(e)) = (kj, e) {
            return Ok(self.homogeneous_solutions()?[j][e].clone());
        }
        let f = self.factor(mesh::assemble_homogeneous(&self.mesh, k))?;
        self.solve(&f, &self.unit_load(node))
    }

    fn contrast_rhs(contrast: &CsrMatrix, rho0: f64, u0: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = u0.iter().map(|v| rho0 * v).collect();
        contrast.mul_vec(&scaled).into_iter().map(|v| -v).collect()
    }

    /// Transformed secondary potential at every node for a unit current at
    /// `source_x`, at the system's wavenumber.
    ///
    /// The residual is checked against `1e-10` of the right-hand side norm.
    pub fn solve_secondary(
        &self,
        system: &SparseSystem,
        model: &ResistivityModel,
        rho0: f64,
        source_x: f64,
    ) -> Result<Vec<f64>, ForwardError> {
        let k = system.wavenumber;
        let node = self.surface_node(source_x)?;
        let contrast = mesh::assemble_contrast(&self.mesh, model, rho0, k)?;
        let u0 = self.homogeneous_solution(k, node)?;
        let rhs = Self::contrast_rhs(&contrast, rho0, &u0);
        let factor = self.factor(system.matrix.clone())?;
        let s = self.solve(&factor, &rhs)?;
        let res = sparse::relative_residual(&system.matrix, &s, &rhs);
        if res > self.config.cg.tolerance {
            return Err(ForwardError::Residual(res));
        }
        Ok(s)
    }

    /// Total potential per unit current at every surface node (ordered by
    /// `mesh().xs`) for a source at `source_x`, with primary resistivity `rho0`.
    /// The source node itself holds `+∞`.
    pub fn surface_potential(
        &self,
        model: &ResistivityModel,
        rho0: f64,
        source_x: f64,
    ) -> Result<Vec<f64>, ForwardError> {
        let node = self.surface_node(source_x)?;
        let secondary = self
            .quadrature
            .wavenumbers
            .par_iter()
            .map(|&k| {
                let system = mesh::assemble(&self.mesh, model, k)?;
                let contrast = mesh::assemble_contrast(&self.mesh, model, rho0, k)?;
                let u0 = self.homogeneous_solution(k, node)?;
                let f = self.factor(system.matrix)?;
                self.solve(&f, &Self::contrast_rhs(&contrast, rho0, &u0))
            })
            .collect::<Result<Vec<_>, ForwardError>>()?;
        let xs = &self.mesh.xs;
        Ok((0..xs.len())
            .map(|i| {
                let primary =
                    primary_potential(rho0, source_x, (xs[i], 0.0)).unwrap_or(f64::INFINITY);
                primary + self.quadrature.integrate(|j, _| secondary[j][i])
            })
            .collect())
    }

    /// Surface potentials from a single total-field solve per wavenumber,
    /// without the primary/secondary split. Its departure from the analytic
    /// half-space measures discretisation error.
    pub fn total_field_surface_potential(
        &self,
        model: &ResistivityModel,
        source_x: f64,
    ) -> Result<Vec<f64>, ForwardError> {
        let node = self.surface_node(source_x)?;
        let totals = self
            .quadrature
            .wavenumbers
            .par_iter()
            .map(|&k| {
                let system = mesh::assemble(&self.mesh, model, k)?;
                let f = self.factor(system.matrix)?;
                self.solve(&f, &self.unit_load(node))
            })
            .collect::<Result<Vec<_>, ForwardError>>()?;
        Ok((0..self.mesh.nx())
            .map(|i| {
                if i == node {
                    f64::INFINITY
                } else {
                    self.quadrature.integrate(|j, _| totals[j][i])
                }
            })
            .collect())
    }

    /// Electrode-to-electrode potentials from total-field solves.
    pub fn total_field_table(
        &self,
        model: &ResistivityModel,
    ) -> Result<TransferTable, ForwardError> {
        if model.grid != self.mesh.grid {
            return Err(ForwardError::GridMismatch);
        }
        let n = self.layout.len();
        let per_k = self
            .quadrature
            .wavenumbers
            .par_iter()
            .map(|&k| {
                let system = mesh::assemble(&self.mesh, model, k)?;
                let f = self.factor(system.matrix)?;
                let mut out = vec![0.0; n * n];
                for (s, &src) in self.electrode_nodes.iter().enumerate() {
                    let sol = self.solve(&f, &self.unit_load(src))?;
                    for (r, &node) in self.electrode_nodes.iter().enumerate() {
                        out[s * n + r] = sol[node];
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>, ForwardError>>()?;
        let values = (0..n * n)
            .map(|i| {
                if i / n == i % n {
                    f64::INFINITY
                } else {
                    self.quadrature.integrate(|j, _| per_k[j][i])
                }
            })
            .collect();
        Ok(TransferTable { n, values })
    }

    /// Electrode-to-electrode potentials for every source, with the model's
    /// background as primary resistivity.
    pub fn transfer_table(&self, model: &ResistivityModel) -> Result<TransferTable, ForwardError> {
        model.validate()?;
        if model.grid != self.mesh.grid {
            return Err(ForwardError::GridMismatch);
        }
        let rho0 = model.background;
        let n = self.layout.len();
        let u0 = self.homogeneous_solutions()?;
        let per_k = self
            .quadrature
            .wavenumbers
            .par_iter()
            .enumerate()
            .map(|(j, &k)| {
                let contrast = mesh::assemble_contrast(&self.mesh, model, rho0, k)?;
                let mut out = vec![0.0; n * n];
                let rhs: Vec<Vec<f64>> = u0[j]
                    .iter()
                    .map(|u| Self::contrast_rhs(&contrast, rho0, u))
                    .collect();
                if rhs.iter().all(|r| r.iter().all(|&v| v == 0.0)) {
                    return Ok(out);
                }
                let system = mesh::assemble(&self.mesh, model, k)?;
                let f = self.factor(system.matrix)?;
                for (s, b) in rhs.iter().enumerate() {
                    let sol = self.solve(&f, b)?;
                    for (r, &node) in self.electrode_nodes.iter().enumerate() {
                        out[s * n + r] = sol[node];
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>, ForwardError>>()?;
        let pos = &self.layout.positions;
        let mut values = vec![0.0; n * n];
        for s in 0..n {
            for r in 0..n {
                values[s * n + r] = if s == r {
                    f64::INFINITY
                } else {
                    let secondary = self.quadrature.integrate(|j, _| per_k[j][s * n + r]);
                    rho0 / (2.0 * PI * (pos[r] - pos[s]).abs()) + secondary
                };
            }
        }
        Ok(TransferTable { n, values })
    }

    /// Every quadrupole of `array` evaluated against `table`.
    pub fn measurements(&self, table: &TransferTable, array: &ArrayConfig) -> Vec<Measurement> {
        let pos = &self.layout.positions;
        survey::quadrupoles(&self.layout, array)
            .into_iter()
            .map(|(level, [a, m, n, b])| {
                let k = geometric_factor(array.kind, self.layout.spacing, level);
                let dv = table.transfer(a, b, m, n);
                Measurement {
                    a_pos: pos[a],
                    b_pos: pos[b],
                    m_pos: pos[m],
                    n_pos: pos[n],
                    level,
                    geometric_factor: k,
                    delta_v_over_i: dv,
                    apparent_resistivity: k * dv,
                }
            })
            .collect()
    }

    pub fn section_from_table(
        &self,
        table: &TransferTable,
        array: &ArrayConfig,
    ) -> Result<Section, ForwardError> {
        if array.max_level == 0 {
            return Err(ForwardError::NoFeasibleQuadrupole);
        }
        survey::resample(
            &self.mesh.grid,
            array.kind,
            array.max_level,
            self.measurements(table, array),
        )
    }

    pub fn pseudo_section(
        &self,
        model: &ResistivityModel,
        array: &ArrayConfig,
    ) -> Result<Section, ForwardError> {
        let table = self.transfer_table(model)?;
        self.section_from_table(&table, array)
    }

    /// The deepest feasible array configuration of `kind` for this layout.
    pub fn default_array(&self, kind: ArrayKind) -> ArrayConfig {
        ArrayConfig::deepest(kind, &self.layout, self.mesh.grid.height)
    }

    /// Wenner and Wenner–Schlumberger sections from one set of solves.
    pub fn sections(&self, model: &ResistivityModel) -> Result<(Section, Section), ForwardError> {
        let table = self.transfer_table(model)?;
        Ok((
            self.section_from_table(&table, &self.default_array(ArrayKind::Wenner))?,
            self.section_from_table(&table, &self.default_array(ArrayKind::WennerSchlumberger))?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primary_closed_form() {
        let v = primary_potential(500.0, 0.0, (1.0, 0.0)).unwrap();
        assert!((v - 500.0 / (2.0 * PI)).abs() < 1e-12);
        let far = primary_potential(500.0, 0.0, (2.0, 0.0)).unwrap();
        assert!((far - v / 2.0).abs() < 1e-12);
        assert_eq!(primary_potential(0.0, 3.0, (4.0, 1.0)).unwrap(), 0.0);
        assert!(matches!(
            primary_potential(1.0, 2.0, (2.0, 0.0)),
            Err(ForwardError::Singular)
        ));
    }

    #[test]
    fn primary_matches_image_sum() {
        // A surface source of current I on a half-space equals a full-space
        // source of I plus its mirror image at the same point: 2 · ρ/(4πr).
        let (rho, sx, q): (f64, f64, (f64, f64)) = (120.0, 1.5, (4.0, 2.0));
        let r = ((q.0 - sx) * (q.0 - sx) + q.1 * q.1).sqrt();
        let full_space = |r: f64| rho / (4.0 * PI * r);
        let images = full_space(r) + full_space(r);
        assert!((primary_potential(rho, sx, q).unwrap() - images).abs() < 1e-12);
    }
}
