//! Potentials, pair correlation and hydrodynamic friction kernels.
//!
//! Every pair kernel depends only on the minimum-image displacement
//! `d = r - r'`, so the scalar kernels and friction tensors are even in `d`
//! and the pair-potential gradient is odd. Ranges are compact: beyond its
//! cutoff a friction kernel is zero, the pair potential is zero and `g` is one.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grid, Point, ScalarField};

pub type Tensor = Matrix3<f64>;

/// Quintic smoothstep taper: one below `on`, zero beyond `off`, C2 between.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Taper {
    on: f64,
    off: f64,
}

impl Taper {
    fn for_cutoff(cutoff: f64) -> Self {
        Self { on: 0.8 * cutoff, off: cutoff }
    }

    fn value(&self, s: f64) -> f64 {
        if s <= self.on {
            1.0
        } else if s >= self.off {
            0.0
        } else {
            let u = (s - self.on) / (self.off - self.on);
            1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
        }
    }

    fn derivative(&self, s: f64) -> f64 {
        if s <= self.on || s >= self.off {
            0.0
        } else {
            let w = self.off - self.on;
            let u = (s - self.on) / w;
            -30.0 * u * u * (1.0 - u) * (1.0 - u) / w
        }
    }
}

/// External one-body potential `U1` in energy units.
#[derive(Debug, Clone, PartialEq)]
pub enum ExternalPotential {
    Free,
    Harmonic { stiffness: f64, center: Point },
    /// `h ((x - c)^2 / w^2 - 1)^2` along the first axis.
    DoubleWell { height: f64, width: f64, center: f64 },
    /// `A cos(2 pi m x / L + phase)` along the first axis.
    Cosine { amplitude: f64, mode: f64, phase: f64, period: f64 },
}

/// Pair potential `U2` in energy units.
#[derive(Debug, Clone, PartialEq)]
pub enum PairPotential {
    Free,
    /// `A exp(-s^2 / 2 sigma^2)` with a smooth taper to zero at the cutoff.
    GaussianCore { amplitude: f64, sigma: f64, cutoff: f64 },
}

/// Pair distribution function `g`, independent of momenta and time.
#[derive(Debug, Clone, PartialEq)]
pub enum PairCorrelation {
    MeanField,
    StepExclusion { sigma: f64 },
}

/// Two-body friction tensor, either self-block `Z1` or cross-block `Z2`.
#[derive(Debug, Clone, PartialEq)]
pub enum FrictionKernel {
    Zero,
    /// `z(s) I` with `z(s) = A exp(-(s/w)^2)` tapered at the cutoff.
    Isotropic { amplitude: f64, width: f64, cutoff: f64 },
    /// `z(s) d d^T / (s^2 + l^2)`: a regularised longitudinal far-field shape.
    Longitudinal { amplitude: f64, width: f64, cutoff: f64, regularization: f64 },
}

impl ExternalPotential {
    pub fn value(&self, grid: &Grid, r: &Point, _t: f64) -> f64 {
        match *self {
            ExternalPotential::Free => 0.0,
            ExternalPotential::Harmonic { stiffness, center } => {
                0.5 * stiffness * grid.minimum_image(r - center).norm_squared()
            }
            ExternalPotential::DoubleWell { height, width, center } => {
                let y = grid.minimum_image(Point::new(r[0] - center, 0.0, 0.0))[0] / width;
                height * (y * y - 1.0).powi(2)
            }
            ExternalPotential::Cosine { amplitude, mode, phase, period } => {
                amplitude * (2.0 * std::f64::consts::PI * mode * r[0] / period + phase).cos()
            }
        }
    }

    pub fn gradient(&self, grid: &Grid, r: &Point, _t: f64) -> Point {
        match *self {
            ExternalPotential::Free => Point::zeros(),
            ExternalPotential::Harmonic { stiffness, center } => {
                stiffness * grid.minimum_image(r - center)
            }
            ExternalPotential::DoubleWell { height, width, center } => {
                let y = grid.minimum_image(Point::new(r[0] - center, 0.0, 0.0))[0] / width;
                Point::new(4.0 * height * y * (y * y - 1.0) / width, 0.0, 0.0)
            }
            ExternalPotential::Cosine { amplitude, mode, phase, period } => {
                let k = 2.0 * std::f64::consts::PI * mode / period;
                Point::new(-amplitude * k * (k * r[0] + phase).sin(), 0.0, 0.0)
            }
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, ExternalPotential::Free)
    }
}

impl PairPotential {
    pub fn value(&self, d: &Point) -> f64 {
        match *self {
            PairPotential::Free => 0.0,
            PairPotential::GaussianCore { amplitude, sigma, cutoff } => {
                let s = d.norm();
                amplitude * (-s * s / (2.0 * sigma * sigma)).exp() * Taper::for_cutoff(cutoff).value(s)
            }
        }
    }

    /// Gradient with respect to the first argument, i.e. with respect to `d`.
    pub fn gradient(&self, d: &Point) -> Point {
        match *self {
            PairPotential::Free => Point::zeros(),
            PairPotential::GaussianCore { amplitude, sigma, cutoff } => {
                let s = d.norm();
                if s == 0.0 || s >= cutoff {
                    return Point::zeros();
                }
                let taper = Taper::for_cutoff(cutoff);
                let e = amplitude * (-s * s / (2.0 * sigma * sigma)).exp();
                let ds = e * (-s / (sigma * sigma)) * taper.value(s) + e * taper.derivative(s);
                d * (ds / s)
            }
        }
    }

    pub fn cutoff(&self) -> f64 {
        match *self {
            PairPotential::Free => 0.0,
            PairPotential::GaussianCore { cutoff, .. } => cutoff,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, PairPotential::Free)
    }
}

impl PairCorrelation {
    pub fn value(&self, d: &Point) -> f64 {
        match *self {
            PairCorrelation::MeanField => 1.0,
            PairCorrelation::StepExclusion { sigma } => {
                if d.norm() > sigma {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cutoff(&self) -> f64 {
        match *self {
            PairCorrelation::MeanField => 0.0,
            PairCorrelation::StepExclusion { sigma } => sigma,
        }
    }
}

impl FrictionKernel {
    pub fn envelope(&self, s: f64) -> f64 {
        match *self {
            FrictionKernel::Zero => 0.0,
            FrictionKernel::Isotropic { amplitude, width, cutoff }
            | FrictionKernel::Longitudinal { amplitude, width, cutoff, .. } => {
                amplitude * (-(s / width).powi(2)).exp() * Taper::for_cutoff(cutoff).value(s)
            }
        }
    }

    pub fn tensor(&self, dim: usize, d: &Point) -> Tensor {
        match *self {
            FrictionKernel::Zero => Tensor::zeros(),
            FrictionKernel::Isotropic { .. } => {
                let z = self.envelope(d.norm());
                let mut t = Tensor::zeros();
                for a in 0..dim {
                    t[(a, a)] = z;
                }
                t
            }
            FrictionKernel::Longitudinal { regularization, .. } => {
                let s2 = d.norm_squared();
                let z = self.envelope(s2.sqrt());
                (d * d.transpose()) * (z / (s2 + regularization * regularization))
            }
        }
    }

    pub fn cutoff(&self) -> f64 {
        match *self {
            FrictionKernel::Zero => 0.0,
            FrictionKernel::Isotropic { cutoff, .. } | FrictionKernel::Longitudinal { cutoff, .. } => cutoff,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            FrictionKernel::Zero => true,
            FrictionKernel::Isotropic { amplitude, .. } | FrictionKernel::Longitudinal { amplitude, .. } => {
                amplitude == 0.0
            }
        }
    }

    /// Copy with the amplitude replaced.
    pub fn with_amplitude(&self, value: f64) -> Self {
        let mut k = self.clone();
        match &mut k {
            FrictionKernel::Zero => {}
            FrictionKernel::Isotropic { amplitude, .. } | FrictionKernel::Longitudinal { amplitude, .. } => {
                *amplitude = value
            }
        }
        k
    }

    /// Copy with the amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut k = self.clone();
        match &mut k {
            FrictionKernel::Zero => {}
            FrictionKernel::Isotropic { amplitude, .. } | FrictionKernel::Longitudinal { amplitude, .. } => {
                *amplitude *= factor
            }
        }
        k
    }
}

/// The complete model: external and pair potentials, `g`, and both friction kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub dim: usize,
    pub v1: ExternalPotential,
    pub v2: PairPotential,
    pub g: PairCorrelation,
    pub z1: FrictionKernel,
    pub z2: FrictionKernel,
}

impl KernelSet {
    /// No forces, mean-field `g`, no hydrodynamic coupling.
    pub fn free(dim: usize) -> Self {
        Self {
            dim,
            v1: ExternalPotential::Free,
            v2: PairPotential::Free,
            g: PairCorrelation::MeanField,
            z1: FrictionKernel::Zero,
            z2: FrictionKernel::Zero,
        }
    }

    pub fn z1_tensor(&self, d: &Point) -> Tensor {
        self.z1.tensor(self.dim, d)
    }

    pub fn z2_tensor(&self, d: &Point) -> Tensor {
        self.z2.tensor(self.dim, d)
    }

    pub fn max_cutoff(&self) -> f64 {
        [self.v2.cutoff(), self.g.cutoff(), self.z1.cutoff(), self.z2.cutoff()]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn identity(&self) -> Tensor {
        let mut t = Tensor::zeros();
        for a in 0..self.dim {
            t[(a, a)] = 1.0;
        }
        t
    }

    /// Structural checks: ranges fit the box, tensors are symmetric, kernels are
    /// swap-symmetric and `g` is non-negative. Sampled at deterministic points.
    pub fn check_structure(&self, grid: &Grid) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(Error::InvalidInput(format!(
                "kernel dimension {} does not match grid dimension {}",
                self.dim,
                grid.dim()
            )));
        }
        let half = grid.half_min_length();
        let mut problems = Vec::new();
        for (name, c) in [
            ("v2", self.v2.cutoff()),
            ("g", self.g.cutoff()),
            ("z1", self.z1.cutoff()),
            ("z2", self.z2.cutoff()),
        ] {
            if c >= half {
                problems.push(format!("{name} cutoff {c} must be below half the box length {half}"));
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(0x6b65726e);
        for _ in 0..64 {
            let mut d = Point::zeros();
            for a in 0..self.dim {
                d[a] = rng.random_range(-half..half);
            }
            let neg = -d;
            for (name, k) in [("z1", &self.z1), ("z2", &self.z2)] {
                let t = k.tensor(self.dim, &d);
                if (t - t.transpose()).amax() > 1e-14 {
                    problems.push(format!("{name} is not a symmetric matrix"));
                }
                if (t - k.tensor(self.dim, &neg)).amax() > 1e-15 {
                    problems.push(format!("{name} is not swap-symmetric"));
                }
            }
            if (self.v2.value(&d) - self.v2.value(&neg)).abs() > 1e-15 {
                problems.push("v2 is not swap-symmetric".into());
            }
            if self.g.value(&d) < 0.0 {
                problems.push("g is negative".into());
            }
        }
        problems.dedup();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InadmissibleKernels(problems.join("; ")))
        }
    }

    /// Full admissibility: structure plus a positive-definiteness test of the
    /// assembled friction tensor on random uniform configurations.
    pub fn validate(&self, grid: &Grid, n_particles: usize, seed: u64) -> Result<f64> {
        self.check_structure(grid)?;
        let uniform = ScalarField::constant(*grid, n_particles as f64 / grid.volume());
        let est = estimate_delta(self, grid, &uniform, n_particles, 20, seed)?;
        if est.min_eigenvalue <= 0.0 {
            return Err(Error::InadmissibleKernels(format!(
                "friction tensor not positive definite: minimum eigenvalue {:.6e} over {} sampled configurations",
                est.min_eigenvalue, est.per_config.len()
            )));
        }
        Ok(est.min_eigenvalue)
    }
}

/// A named kernel family with numeric parameters, as read from a config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl KernelSpec {
    pub fn new(family: &str, params: &[(&str, f64)]) -> Self {
        Self {
            family: family.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

/// Kernel sections of a run configuration; absent sections are the trivial family.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpecs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v1: Option<KernelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v2: Option<KernelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<KernelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z1: Option<KernelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z2: Option<KernelSpec>,
}

pub const V1_FAMILIES: &[&str] = &["free", "harmonic", "double_well", "cosine"];
pub const V2_FAMILIES: &[&str] = &["free", "gaussian_core"];
pub const G_FAMILIES: &[&str] = &["mean_field", "step_exclusion"];
pub const Z_FAMILIES: &[&str] = &["zero", "isotropic", "longitudinal"];

struct ParamReader<'a> {
    section: &'a str,
    spec: &'a KernelSpec,
    used: Vec<&'static str>,
    errors: &'a mut Vec<String>,
}

impl<'a> ParamReader<'a> {
    fn get(&mut self, key: &'static str, default: Option<f64>) -> f64 {
        self.used.push(key);
        match (self.spec.params.get(key), default) {
            (Some(v), _) => *v,
            (None, Some(d)) => d,
            (None, None) => {
                self.errors.push(format!("[kernels.{}] family '{}' requires '{key}'", self.section, self.spec.family));
                f64::NAN
            }
        }
    }

    fn positive(&mut self, key: &'static str, default: Option<f64>) -> f64 {
        let v = self.get(key, default);
        if !(v > 0.0 && v.is_finite()) && !v.is_nan() {
            self.errors.push(format!(
                "[kernels.{}] '{key}' = {v} out of range (admissible: (0, inf))",
                self.section
            ));
        }
        v
    }

    fn finish(self) {
        for k in self.spec.params.keys() {
            if !self.used.iter().any(|u| u == k) {
                self.errors.push(format!(
                    "[kernels.{}] unknown key '{k}' for family '{}' (known: {})",
                    self.section,
                    self.spec.family,
                    self.used.join(", ")
                ));
            }
        }
    }
}

fn unknown_family(section: &str, family: &str, known: &[&str]) -> String {
    format!(
        "[kernels.{section}] unknown family '{family}'; available families: {}",
        known.join(", ")
    )
}

/// Builds a kernel set from named families, collecting every problem found.
/// Range checks against the box are done here; the positive-definiteness
/// sampling test is [`KernelSet::validate`].
pub fn builtin_kernels(specs: &KernelSpecs, grid: &Grid) -> Result<KernelSet> {
    let dim = grid.dim();
    let mut errors = Vec::new();
    let mut set = KernelSet::free(dim);
    let centre = {
        let mut c = Point::zeros();
        for a in 0..dim {
            c[a] = 0.5 * grid.lengths()[a];
        }
        c
    };

    if let Some(spec) = &specs.v1 {
        let mut r = ParamReader { section: "v1", spec, used: Vec::new(), errors: &mut errors };
        let v1 = match spec.family.as_str() {
            "free" => Some(ExternalPotential::Free),
            "harmonic" => {
                let k = r.positive("stiffness", None);
                let cx = r.get("center_x", Some(centre[0]));
                let cy = r.get("center_y", Some(centre[1]));
                let cz = r.get("center_z", Some(centre[2]));
                Some(ExternalPotential::Harmonic { stiffness: k, center: Point::new(cx, cy, cz) })
            }
            "double_well" => {
                let height = r.positive("height", None);
                let width = r.positive("width", None);
                let center = r.get("center_x", Some(centre[0]));
                Some(ExternalPotential::DoubleWell { height, width, center })
            }
            "cosine" => {
                let amplitude = r.get("amplitude", None);
                let mode = r.positive("mode", Some(1.0));
                let phase = r.get("phase", Some(0.0));
                if mode.fract() != 0.0 {
                    r.errors.push("[kernels.v1] cosine 'mode' must be an integer so the potential is periodic".into());
                }
                Some(ExternalPotential::Cosine { amplitude, mode, phase, period: grid.lengths()[0] })
            }
            other => {
                r.errors.push(unknown_family("v1", other, V1_FAMILIES));
                None
            }
        };
        if let Some(v1) = v1 {
            r.finish();
            set.v1 = v1;
        }
    }

    if let Some(spec) = &specs.v2 {
        let mut r = ParamReader { section: "v2", spec, used: Vec::new(), errors: &mut errors };
        let v2 = match spec.family.as_str() {
            "free" => Some(PairPotential::Free),
            "gaussian_core" => {
                let amplitude = r.get("amplitude", None);
                let sigma = r.positive("sigma", None);
                let cutoff = r.positive("cutoff", Some(5.0 * sigma));
                Some(PairPotential::GaussianCore { amplitude, sigma, cutoff })
            }
            other => {
                r.errors.push(unknown_family("v2", other, V2_FAMILIES));
                None
            }
        };
        if let Some(v2) = v2 {
            r.finish();
            set.v2 = v2;
        }
    }

    if let Some(spec) = &specs.g {
        let mut r = ParamReader { section: "g", spec, used: Vec::new(), errors: &mut errors };
        let g = match spec.family.as_str() {
            "mean_field" => Some(PairCorrelation::MeanField),
            "step_exclusion" => Some(PairCorrelation::StepExclusion { sigma: r.positive("sigma", None) }),
            other => {
                r.errors.push(unknown_family("g", other, G_FAMILIES));
                None
            }
        };
        if let Some(g) = g {
            r.finish();
            set.g = g;
        }
    }

    for (section, spec) in [("z1", &specs.z1), ("z2", &specs.z2)] {
        let Some(spec) = spec else { continue };
        let mut r = ParamReader { section, spec, used: Vec::new(), errors: &mut errors };
        let z = match spec.family.as_str() {
            "zero" => Some(FrictionKernel::Zero),
            "isotropic" => {
                let amplitude = r.get("amplitude", None);
                let width = r.positive("width", None);
                let cutoff = r.positive("cutoff", Some(4.0 * width));
                Some(FrictionKernel::Isotropic { amplitude, width, cutoff })
            }
            "longitudinal" => {
                let amplitude = r.get("amplitude", None);
                let width = r.positive("width", None);
                let cutoff = r.positive("cutoff", Some(4.0 * width));
                let regularization = r.positive("regularization", Some(0.1 * width));
                Some(FrictionKernel::Longitudinal { amplitude, width, cutoff, regularization })
            }
            other => {
                r.errors.push(unknown_family(section, other, Z_FAMILIES));
                None
            }
        };
        if let Some(z) = z {
            r.finish();
            if section == "z1" {
                set.z1 = z;
            } else {
                set.z2 = z;
            }
        }
    }

    if errors.is_empty() {
        if let Err(e) = set.check_structure(grid) {
            errors.push(e.to_string());
        }
    }
    if errors.is_empty() {
        Ok(set)
    } else {
        Err(Error::Config(errors))
    }
}

/// The `(N d) x (N d)` friction tensor of one particle configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledFriction {
    pub n: usize,
    pub dim: usize,
    pub matrix: DMatrix<f64>,
}

impl AssembledFriction {
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.matrix.view((i * self.dim, j * self.dim), (self.dim, self.dim)).into_owned()
    }
}

/// Assembles `Gamma_ii = 1 + sum_{l != i} Z1(r_i, r_l)` and
/// `Gamma_ij = Z2(r_i, r_j)` for `i != j`.
pub fn assemble_gamma(positions: &[Point], grid: &Grid, kernels: &KernelSet) -> Result<AssembledFriction> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::InvalidInput("need at least one particle".into()));
    }
    let d = kernels.dim;
    let mut m = DMatrix::<f64>::zeros(n * d, n * d);
    for i in 0..n {
        for a in 0..d {
            m[(i * d + a, i * d + a)] = 1.0;
        }
    }
    let has_z1 = !kernels.z1.is_zero();
    let has_z2 = !kernels.z2.is_zero();
    if has_z1 || has_z2 {
        for i in 0..n {
            for j in (i + 1)..n {
                let dij = grid.minimum_image(positions[i] - positions[j]);
                if has_z1 {
                    let t = kernels.z1_tensor(&dij);
                    for a in 0..d {
                        for b in 0..d {
                            m[(i * d + a, i * d + b)] += t[(a, b)];
                            m[(j * d + a, j * d + b)] += t[(a, b)];
                        }
                    }
                }
                if has_z2 {
                    let t = kernels.z2_tensor(&dij);
                    for a in 0..d {
                        for b in 0..d {
                            m[(i * d + a, j * d + b)] = t[(a, b)];
                            m[(j * d + b, i * d + a)] = t[(a, b)];
                        }
                    }
                }
            }
        }
        // Symmetrise the diagonal blocks exactly (Z tensors are symmetric).
        for i in 0..n {
            for a in 0..d {
                for b in (a + 1)..d {
                    let s = 0.5 * (m[(i * d + a, i * d + b)] + m[(i * d + b, i * d + a)]);
                    m[(i * d + a, i * d + b)] = s;
                    m[(i * d + b, i * d + a)] = s;
                }
            }
        }
    }
    Ok(AssembledFriction { n, dim: d, matrix: m })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Smallest eigenvalue of the assembled friction tensor; `<= 0` means the
/// kernels are inadmissible at this configuration.
pub fn check_positive_definite(gamma: &AssembledFriction) -> Result<f64> {
    min_eigenvalue(&gamma.matrix)
}

/// Coercivity estimate over sampled configurations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaEstimate {
    pub min_eigenvalue: f64,
    pub per_config: Vec<f64>,
}

/// Draws `n` positions distributed according to a non-negative density field
/// (piecewise constant per cell).
pub fn sample_positions<R: Rng>(density: &ScalarField, n: usize, rng: &mut R) -> Vec<Point> {
    let grid = density.grid;
    let mut cdf = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    for v in &density.values {
        acc += v.max(0.0);
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let cell = cdf.partition_point(|c| *c <= u).min(grid.len() - 1);
            let mut p = grid.cell_center(cell);
            for a in 0..grid.dim() {
                p[a] += (rng.random::<f64>() - 0.5) * grid.spacing(a);
            }
            grid.wrap(p)
        })
        .collect()
}

/// Minimum friction eigenvalue over `n_configs` configurations of
/// `n_particles` drawn from `density`.
pub fn estimate_delta(
    kernels: &KernelSet,
    grid: &Grid,
    density: &ScalarField,
    n_particles: usize,
    n_configs: usize,
    seed: u64,
) -> Result<DeltaEstimate> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut per_config = Vec::with_capacity(n_configs);
    for _ in 0..n_configs {
        let pos = sample_positions(density, n_particles, &mut rng);
        let gamma = assemble_gamma(&pos, grid, kernels)?;
        per_config.push(check_positive_definite(&gamma)?);
    }
    let min_eigenvalue = per_config.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DeltaEstimate { min_eigenvalue, per_config })
}

/// Kernel values tabulated by cell offset. On a uniform periodic grid every
/// pair kernel depends only on the index difference, so each table holds one
/// entry per cell.
#[derive(Debug, Clone)]
pub struct PairTables {
    pub grid: Grid,
    pub g: Vec<f64>,
    pub grad_v2: Vec<Point>,
    pub z1: Vec<Tensor>,
    pub z2: Vec<Tensor>,
    pub has_v2: bool,
    pub has_z1: bool,
    pub has_z2: bool,
}

impl PairTables {
    pub fn new(grid: &Grid, kernels: &KernelSet) -> Self {
        let n = grid.len();
        let origin = grid.cell_center(0);
        let mut g = Vec::with_capacity(n);
        let mut grad_v2 = Vec::with_capacity(n);
        let mut z1 = Vec::with_capacity(n);
        let mut z2 = Vec::with_capacity(n);
        for k in 0..n {
            let d = grid.minimum_image(grid.cell_center(k) - origin);
            g.push(kernels.g.value(&d));
            grad_v2.push(kernels.v2.gradient(&d));
            z1.push(kernels.z1_tensor(&d));
            z2.push(kernels.z2_tensor(&d));
        }
        Self {
            grid: *grid,
            g,
            grad_v2,
            z1,
            z2,
            has_v2: !kernels.v2.is_free(),
            has_z1: !kernels.z1.is_zero(),
            has_z2: !kernels.z2.is_zero(),
        }
    }

    /// Table index of the displacement `r_i - r_j`.
    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        let mi = self.grid.multi_index(i);
        let mj = self.grid.multi_index(j);
        let cells = self.grid.cells();
        let mut m = [0usize; 3];
        for a in 0..cells.len() {
            m[a] = (mi[a] + cells[a] - mj[a]) % cells[a];
        }
        self.grid.linear_index(m)
    }

    /// `M(r_i) = sum_j w g(r_i, r_j) rho_j Z1(r_i, r_j)`, the self-friction
    /// correction averaged against a density.
    pub fn z1_moment(&self, rho: &[f64]) -> Vec<Tensor> {
        let w = self.grid.cell_volume();
        let n = self.grid.len();
        (0..n)
            .map(|i| {
                let mut m = Tensor::zeros();
                if self.has_z1 {
                    for j in 0..n {
                        let o = self.offset(i, j);
                        if self.g[o] != 0.0 && rho[j] != 0.0 {
                            m += self.z1[o] * (w * self.g[o] * rho[j]);
                        }
                    }
                }
                m
            })
            .collect()
    }

    /// `F(r_i) = sum_j w rho_j g(r_i, r_j) grad U2(r_i, r_j)`: mean pair force per unit energy.
    pub fn mean_pair_gradient(&self, rho: &[f64]) -> Vec<Point> {
        let w = self.grid.cell_volume();
        let n = self.grid.len();
        (0..n)
            .map(|i| {
                let mut f = Point::zeros();
                if self.has_v2 {
                    for j in 0..n {
                        let o = self.offset(i, j);
                        f += self.grad_v2[o] * (w * self.g[o] * rho[j]);
                    }
                }
                f
            })
            .collect()
    }
}

/// Pair density closure `rho2(r, r') = rho(r) rho(r') g(r, r')`.
pub struct PairDensity<'a> {
    rho: &'a [f64],
    tables: &'a PairTables,
}

/// Triplet density by Kirkwood superposition,
/// `rho3 = rho rho' rho'' g(r,r') g(r,r'') g(r',r'')`.
pub struct TripletDensity<'a> {
    rho: &'a [f64],
    tables: &'a PairTables,
}

pub fn rho2_closure<'a>(rho: &'a ScalarField, tables: &'a PairTables) -> PairDensity<'a> {
    PairDensity { rho: &rho.values, tables }
}

pub fn rho3_closure<'a>(rho: &'a ScalarField, tables: &'a PairTables) -> TripletDensity<'a> {
    TripletDensity { rho: &rho.values, tables }
}

impl PairDensity<'_> {
    pub fn eval(&self, i: usize, j: usize) -> f64 {
        self.rho[i] * self.rho[j] * self.tables.g[self.tables.offset(i, j)]
    }
}

impl TripletDensity<'_> {
    pub fn eval(&self, i: usize, j: usize, k: usize) -> f64 {
        let t = self.tables;
        self.rho[i] * self.rho[j] * self.rho[k] * t.g[t.offset(i, j)] * t.g[t.offset(i, k)] * t.g[t.offset(j, k)]
    }
}
