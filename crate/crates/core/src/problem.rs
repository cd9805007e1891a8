//! A grid, kernel set and physical parameters bundled with the tables the
//! solvers reuse.

use crate::error::Result;
use crate::kernels::{KernelSet, PairTables};
use crate::model::{boltzmann_gradient, Grid, PhysicalParams, Point, ScalarField, VectorField};

#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub kernels: KernelSet,
    pub params: PhysicalParams,
    pub tables: PairTables,
    /// `U1 / kBT` on cell centres.
    pub v1: ScalarField,
    /// Boltzmann-consistent discrete gradient of `U1 / kBT`.
    pub grad_v1: VectorField,
}

impl Problem {
    pub fn new(grid: Grid, kernels: KernelSet, params: PhysicalParams) -> Result<Self> {
        params.validate()?;
        kernels.check_structure(&grid)?;
        let tables = PairTables::new(&grid, &kernels);
        // Shipped external potentials are static; evaluated once at t = 0.
        let v1 = ScalarField::from_fn(grid, |r| kernels.v1.value(&grid, r, 0.0) / params.kbt);
        let grad_v1 = boltzmann_gradient(&v1);
        Ok(Self { grid, kernels, params, tables, v1, grad_v1 })
    }

    /// Same model with different physical parameters (e.g. another friction constant).
    pub fn with_params(&self, params: PhysicalParams) -> Result<Self> {
        Self::new(self.grid, self.kernels.clone(), params)
    }

    /// Same model on another grid.
    pub fn with_grid(&self, grid: Grid) -> Result<Self> {
        Self::new(grid, self.kernels.clone(), self.params)
    }

    pub fn with_kernels(&self, kernels: KernelSet) -> Result<Self> {
        Self::new(self.grid, kernels, self.params)
    }

    pub fn d0(&self) -> f64 {
        self.params.d0()
    }

    /// `exp(-U1/kBT)` scaled to integrate to `mass`.
    pub fn boltzmann_density(&self, mass: f64) -> ScalarField {
        let vmin = self.v1.min();
        let mut rho = ScalarField {
            grid: self.grid,
            values: self.v1.values.iter().map(|v| (vmin - v).exp()).collect(),
        };
        rho.normalize_to(mass);
        rho
    }

    /// `int rho(r') g(r, r') grad U2(r, r') dr' / kBT` at each cell.
    pub fn mean_pair_force(&self, rho: &ScalarField) -> Vec<Point> {
        let inv = 1.0 / self.params.kbt;
        self.tables.mean_pair_gradient(&rho.values).into_iter().map(|f| f * inv).collect()
    }
}
