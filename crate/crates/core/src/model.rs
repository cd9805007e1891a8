//! Periodic grids, fields and the discrete calculus shared by every solver.
//!
//! Fields live on cell centres of a uniform periodic box in one to three
//! dimensions. Integrals use the midpoint rule and derivatives use
//! second-order central differences, so that `divergence` is exactly the
//! negative adjoint of `gradient` under the midpoint inner product.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or displacement. Components beyond the grid dimension are zero.
pub type Point = Vector3<f64>;

/// Thermodynamic and frictional constants of the colloid model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub kbt: f64,
    pub mass: f64,
    pub gamma: f64,
    pub dim: usize,
}

impl PhysicalParams {
    pub fn new(kbt: f64, mass: f64, gamma: f64, dim: usize) -> Result<Self> {
        let p = Self { kbt, mass, gamma, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kbt", self.kbt), ("mass", self.mass), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::InvalidInput(format!("dim must be in 1..=3, got {}", self.dim)));
        }
        Ok(())
    }

    /// Thermal speed over friction, a length.
    pub fn epsilon(&self) -> f64 {
        (self.kbt / self.mass).sqrt() / self.gamma
    }

    /// Single-particle diffusion constant `kBT / (m gamma)`.
    pub fn d0(&self) -> f64 {
        self.kbt / (self.mass * self.gamma)
    }

    /// Normalisation of the unit Maxwellian, `(2 pi)^{d/2}`.
    pub fn maxwell_norm(&self) -> f64 {
        (2.0 * std::f64::consts::PI).powf(self.dim as f64 / 2.0)
    }

    /// Converts rescaled time `t = D0 tau` to physical time `tau`.
    pub fn physical_time(&self, rescaled: f64) -> f64 {
        rescaled / self.d0()
    }

    /// Returns parameters with `gamma` chosen so that `epsilon()` equals `eps`.
    pub fn with_epsilon(&self, eps: f64) -> Self {
        Self { gamma: (self.kbt / self.mass).sqrt() / eps, ..*self }
    }
}

/// Uniform periodic cell-centred grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    lengths: [f64; 3],
    cells: [usize; 3],
}

impl Grid {
    pub fn new(lengths: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = lengths.len();
        if !(1..=3).contains(&dim) || cells.len() != dim {
            return Err(Error::InvalidInput(format!(
                "grid needs 1..=3 lengths and as many cell counts, got {} and {}",
                lengths.len(),
                cells.len()
            )));
        }
        let mut l = [1.0; 3];
        let mut n = [1usize; 3];
        for a in 0..dim {
            if !(lengths[a].is_finite() && lengths[a] > 0.0) {
                return Err(Error::InvalidInput(format!("box length {a} must be > 0")));
            }
            if cells[a] < 3 {
                return Err(Error::InvalidInput(format!("need at least 3 cells along axis {a}")));
            }
            l[a] = lengths[a];
            n[a] = cells[a];
        }
        Ok(Self { dim, lengths: l, cells: n })
    }

    pub fn uniform_1d(length: f64, cells: usize) -> Result<Self> {
        Self::new(&[length], &[cells])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }

    /// Half of the shortest box edge; kernel ranges must stay below it.
    pub fn half_min_length(&self) -> f64 {
        0.5 * self.lengths[..self.dim].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let i0 = idx % self.cells[0];
        let rest = idx / self.cells[0];
        [i0, rest % self.cells[1], rest / self.cells[1]]
    }

    pub fn linear_index(&self, m: [usize; 3]) -> usize {
        m[0] + self.cells[0] * (m[1] + self.cells[1] * m[2])
    }

    /// Index of the periodic neighbour `shift` cells away along `axis`.
    pub fn neighbor(&self, idx: usize, axis: usize, shift: isize) -> usize {
        let mut m = self.multi_index(idx);
        let n = self.cells[axis] as isize;
        m[axis] = (m[axis] as isize + shift).rem_euclid(n) as usize;
        self.linear_index(m)
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        let m = self.multi_index(idx);
        let mut p = Point::zeros();
        for a in 0..self.dim {
            p[a] = (m[a] as f64 + 0.5) * self.spacing(a);
        }
        p
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.cell_center(i)).collect()
    }

    /// Shortest periodic image of a displacement.
    pub fn minimum_image(&self, mut d: Point) -> Point {
        for a in 0..self.dim {
            let l = self.lengths[a];
            d[a] -= l * (d[a] / l).round();
        }
        for a in self.dim..3 {
            d[a] = 0.0;
        }
        d
    }

    /// Maps a point back into `[0, L)` along every active axis.
    pub fn wrap(&self, mut p: Point) -> Point {
        for a in 0..self.dim {
            let l = self.lengths[a];
            p[a] = p[a].rem_euclid(l);
            if p[a] >= l {
                p[a] = 0.0;
            }
        }
        p
    }

    pub fn cell_of(&self, p: &Point) -> usize {
        let w = self.wrap(*p);
        let mut m = [0usize; 3];
        for a in 0..self.dim {
            m[a] = ((w[a] / self.spacing(a)) as usize).min(self.cells[a] - 1);
        }
        self.linear_index(m)
    }

    /// Shifts a field by `shift` cells along `axis` (periodic roll).
    pub fn roll(&self, values: &[f64], axis: usize, shift: isize) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (i, v) in values.iter().enumerate() {
            out[self.neighbor(i, axis, shift)] = *v;
        }
        out
    }
}

/// Neumaier-compensated sum in fixed (index) order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in iter {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub values: Vec<Point>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Self {
        Self { grid, values: (0..grid.len()).map(|i| f(&grid.cell_center(i))).collect() }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} values but grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn integrate(&self) -> f64 {
        integrate(self)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// Rescales so that the field integrates to `mass`.
    pub fn normalize_to(&mut self, mass: f64) {
        let m = self.integrate();
        self.scale(mass / m);
    }

    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        for (y, xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    pub fn l1_distance(&self, other: &ScalarField) -> f64 {
        let v = self.grid.cell_volume();
        compensated_sum(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs() * v))
    }

    pub fn linf_distance(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        let v = self.grid.cell_volume();
        compensated_sum(self.values.iter().map(|a| a * a * v)).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().map(|a| a.abs()).fold(0.0, f64::max)
    }
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![Point::zeros(); grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> Point) -> Self {
        Self { grid, values: (0..grid.len()).map(|i| f(&grid.cell_center(i))).collect() }
    }

    /// Flattens the active components into `[cell0_x, cell0_y, .., cell1_x, ..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mut out = Vec::with_capacity(self.values.len() * d);
        for v in &self.values {
            out.extend_from_slice(&v.as_slice()[..d]);
        }
        out
    }

    pub fn from_flat(grid: Grid, flat: &[f64]) -> Result<Self> {
        let d = grid.dim();
        if flat.len() != grid.len() * d {
            return Err(Error::InvalidInput("flat vector length does not match grid".into()));
        }
        let values = flat
            .chunks_exact(d)
            .map(|c| {
                let mut p = Point::zeros();
                p.as_mut_slice()[..d].copy_from_slice(c);
                p
            })
            .collect();
        Ok(Self { grid, values })
    }

    pub fn l2_norm(&self) -> f64 {
        let v = self.grid.cell_volume();
        compensated_sum(self.values.iter().map(|a| a.norm_squared() * v)).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().map(|a| a.amax()).fold(0.0, f64::max)
    }

    pub fn axpy(&mut self, a: f64, x: &VectorField) {
        for (y, xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    pub fn component(&self, axis: usize) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| v[axis]).collect() }
    }
}

/// Midpoint-rule integral over the periodic box.
pub fn integrate(f: &ScalarField) -> f64 {
    compensated_sum(f.values.iter().copied()) * f.grid.cell_volume()
}

/// Midpoint inner product of two scalar fields.
pub fn inner(f: &ScalarField, g: &ScalarField) -> f64 {
    compensated_sum(f.values.iter().zip(&g.values).map(|(a, b)| a * b)) * f.grid.cell_volume()
}

/// Midpoint inner product of two vector fields.
pub fn inner_vec(u: &VectorField, v: &VectorField) -> f64 {
    compensated_sum(u.values.iter().zip(&v.values).map(|(a, b)| a.dot(b))) * u.grid.cell_volume()
}

/// Central difference of a raw value array along one axis.
pub fn central_difference(grid: &Grid, values: &[f64], axis: usize) -> Vec<f64> {
    let inv = 0.5 / grid.spacing(axis);
    (0..grid.len())
        .map(|i| (values[grid.neighbor(i, axis, 1)] - values[grid.neighbor(i, axis, -1)]) * inv)
        .collect()
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid;
    let mut out = VectorField::zeros(grid);
    for a in 0..grid.dim() {
        let da = central_difference(&grid, &f.values, a);
        for (o, d) in out.values.iter_mut().zip(da) {
            o[a] = d;
        }
    }
    out
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid;
    let mut out = ScalarField::zeros(grid);
    for a in 0..grid.dim() {
        let inv = 0.5 / grid.spacing(a);
        for i in 0..grid.len() {
            out.values[i] +=
                (v.values[grid.neighbor(i, a, 1)][a] - v.values[grid.neighbor(i, a, -1)][a]) * inv;
        }
    }
    out
}

/// Discrete gradient of a dimensionless potential `V` that is exact on
/// Boltzmann profiles: with `rho = C exp(-V)`, the central difference of
/// `rho` plus `rho` times this field vanishes to rounding.
///
/// Computes `-exp(V) D[exp(-V)]` with the exponentials formed from
/// neighbour differences so large potentials do not overflow.
pub fn boltzmann_gradient(v: &ScalarField) -> VectorField {
    let grid = v.grid;
    let mut out = VectorField::zeros(grid);
    for a in 0..grid.dim() {
        let inv = 0.5 / grid.spacing(a);
        for i in 0..grid.len() {
            let vi = v.values[i];
            let vp = v.values[grid.neighbor(i, a, 1)];
            let vm = v.values[grid.neighbor(i, a, -1)];
            out.values[i][a] = -((vi - vp).exp() - (vi - vm).exp()) * inv;
        }
    }
    out
}

fn coordinate_header(dim: usize) -> Vec<&'static str> {
    ["x", "y", "z"][..dim].to_vec()
}

/// Writes per-cell columns as CSV: coordinates first, then the named columns.
pub fn write_columns_csv<W: Write>(
    mut w: W,
    grid: &Grid,
    names: &[&str],
    columns: &[&[f64]],
) -> Result<()> {
    let mut header = coordinate_header(grid.dim()).join(",");
    for n in names {
        header.push(',');
        header.push_str(n);
    }
    writeln!(w, "{header}")?;
    for i in 0..grid.len() {
        let c = grid.cell_center(i);
        let mut line = String::new();
        for a in 0..grid.dim() {
            if a > 0 {
                line.push(',');
            }
            line.push_str(&format!("{}", c[a]));
        }
        for col in columns {
            line.push_str(&format!(",{}", col[i]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

impl ScalarField {
    pub fn write_csv<W: Write>(&self, w: W, name: &str) -> Result<()> {
        write_columns_csv(w, &self.grid, &[name], &[&self.values])
    }
}

impl VectorField {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.grid.dim();
        let cols: Vec<Vec<f64>> = (0..d).map(|a| self.values.iter().map(|v| v[a]).collect()).collect();
        let names: Vec<String> = (0..d).map(|a| format!("v{a}")).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        write_columns_csv(w, &self.grid, &name_refs, &col_refs)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"OVDPFLD\0";
const SNAPSHOT_VERSION: u32 = 1;

/// Little-endian binary snapshot: 16-byte header (magic, version, component
/// count), then dimension, cell counts, box lengths and the values.
pub fn write_snapshot<W: Write>(mut w: W, grid: &Grid, components: u32, values: &[f64]) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&components.to_le_bytes())?;
    w.write_all(&(grid.dim() as u64).to_le_bytes())?;
    for a in 0..3 {
        w.write_all(&(grid.cells[a] as u64).to_le_bytes())?;
    }
    for a in 0..3 {
        w.write_all(&grid.lengths[a].to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<(Grid, u32, Vec<f64>)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != SNAPSHOT_MAGIC {
        return Err(Error::InvalidInput("not a field snapshot (bad magic)".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(Error::InvalidInput(format!("unsupported snapshot version {version}")));
    }
    let components = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let mut u = [0u8; 8];
    r.read_exact(&mut u)?;
    let dim = u64::from_le_bytes(u) as usize;
    let mut cells = [0usize; 3];
    for c in cells.iter_mut() {
        r.read_exact(&mut u)?;
        *c = u64::from_le_bytes(u) as usize;
    }
    let mut lengths = [0f64; 3];
    for l in lengths.iter_mut() {
        r.read_exact(&mut u)?;
        *l = f64::from_le_bytes(u);
    }
    let grid = Grid::new(&lengths[..dim], &cells[..dim])?;
    let n = grid.len() * components as usize;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut u)?;
        values.push(f64::from_le_bytes(u));
    }
    Ok((grid, components, values))
}
