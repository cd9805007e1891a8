use overdamp::cli::RunConfig;
use overdamp::fredholm::apply_operator;
use overdamp::kernels::{assemble_gamma, ExternalPotential, FrictionKernel, KernelSet, PairCorrelation, PairPotential};
use overdamp::kinetic::{evolve_kinetic, HermiteField, KineticParams};
use overdamp::model::{Grid, PhysicalParams, Point, ScalarField, VectorField};
use overdamp::problem::Problem;
use overdamp::smoluchowski::{rhs, step, Formulation, SmolState, StepWarnings};
use proptest::prelude::*;

const CELLS: usize = 24;
const LENGTH: f64 = 8.0;

fn grid() -> Grid {
    Grid::uniform_1d(LENGTH, CELLS).unwrap()
}

prop_compose! {
    fn kernel_set(with_v1: bool, with_z2: bool)(
        v1_amp in 0.0..1.0f64,
        v2_amp in -0.5..1.0f64,
        sigma in 0.0..0.6f64,
        z1 in 0.0..0.4f64,
        z2 in 0.0..0.2f64,
        width in 0.4..0.9f64,
    ) -> KernelSet {
        KernelSet {
            dim: 1,
            v1: if with_v1 { ExternalPotential::Cosine { amplitude: v1_amp, mode: 1.0, phase: 0.3, period: LENGTH } } else { ExternalPotential::Free },
            v2: PairPotential::GaussianCore { amplitude: v2_amp, sigma: 0.5, cutoff: 2.5 },
            g: if sigma > 0.1 { PairCorrelation::StepExclusion { sigma } } else { PairCorrelation::MeanField },
            z1: FrictionKernel::Isotropic { amplitude: z1, width, cutoff: 3.0 },
            z2: if with_z2 { FrictionKernel::Isotropic { amplitude: z2, width, cutoff: 3.0 } } else { FrictionKernel::Zero },
        }
    }
}

fn density() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2..2.0f64, CELLS)
}

fn vector_field() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, CELLS)
}

fn problem(k: KernelSet) -> Problem {
    Problem::new(grid(), k, PhysicalParams::new(1.0, 1.0, 2.0, 1).unwrap()).unwrap()
}

fn field(v: Vec<f64>) -> ScalarField {
    ScalarField::from_values(grid(), v).unwrap()
}

fn weighted_inner(rho: &ScalarField, u: &VectorField, v: &VectorField) -> f64 {
    u.values.iter().zip(&v.values).zip(&rho.values).map(|((a, b), r)| a.dot(b) / r).sum::<f64>() * rho.grid.cell_volume()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flux_operator_is_self_adjoint_in_inverse_density_weight(
        k in kernel_set(true, true), r in density(), a in vector_field(), b in vector_field()
    ) {
        let p = problem(k);
        let rho = field(r);
        let a = VectorField::from_flat(grid(), &a).unwrap();
        let b = VectorField::from_flat(grid(), &b).unwrap();
        let lhs = weighted_inner(&rho, &b, &apply_operator(&p, &rho, &a));
        let rhs_ = weighted_inner(&rho, &apply_operator(&p, &rho, &b), &a);
        prop_assert!((lhs - rhs_).abs() <= 1e-12 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs_);
    }

    #[test]
    fn smoluchowski_step_conserves_mass(k in kernel_set(true, false), r in density(), form_idx in 0usize..3) {
        let p = problem(k);
        let rho = field(r);
        let form = Formulation::ALL[form_idx];
        let mut w = StepWarnings::default();
        let next = step(&p, &SmolState::new(rho.clone()), 1e-3, form, &mut w).unwrap();
        prop_assert!((next.mass - rho.integrate()).abs() <= 1e-12 * rho.integrate());
    }

    #[test]
    fn rhs_commutes_with_periodic_shift(k in kernel_set(false, true), r in density(), shift in 1isize..CELLS as isize) {
        let p = problem(k);
        let g = grid();
        let rho = field(r);
        let shifted = field(g.roll(&rho.values, 0, shift));
        let a = rhs(&p, &shifted, 0.0, Formulation::New).unwrap();
        let b = g.roll(&rhs(&p, &rho, 0.0, Formulation::New).unwrap().values, 0, shift);
        for (x, y) in a.values.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-11 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn friction_is_equivariant_under_particle_swap(
        k in kernel_set(false, true),
        xs in prop::collection::vec(0.0..LENGTH, 2..7),
        i in 0usize..7, j in 0usize..7,
    ) {
        let n = xs.len();
        let (i, j) = (i % n, j % n);
        let pos: Vec<Point> = xs.iter().map(|x| Point::new(*x, 0.0, 0.0)).collect();
        let mut swapped = pos.clone();
        swapped.swap(i, j);
        let g0 = assemble_gamma(&pos, &grid(), &k).unwrap().matrix;
        let g1 = assemble_gamma(&swapped, &grid(), &k).unwrap().matrix;
        let perm = |a: usize| if a == i { j } else if a == j { i } else { a };
        prop_assert!((&g0 - g0.transpose()).amax() == 0.0);
        for a in 0..n {
            for b in 0..n {
                prop_assert!((g1[(a, b)] - g0[(perm(a), perm(b))]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn kernels_are_even_in_the_separation(k in kernel_set(false, true), d in -3.9..3.9f64) {
        let p = Point::new(d, 0.0, 0.0);
        prop_assert_eq!(k.z1_tensor(&p), k.z1_tensor(&-p));
        prop_assert_eq!(k.z2_tensor(&p), k.z2_tensor(&-p));
        prop_assert_eq!(k.v2.value(&p), k.v2.value(&-p));
        prop_assert_eq!(k.g.value(&p), k.g.value(&-p));
    }

    #[test]
    fn kinetic_solver_conserves_mass(k in kernel_set(true, true), r in density(), eps in 0.05..0.3f64) {
        let p = problem(k);
        let rho = field(r);
        let tr = evolve_kinetic(&p, &HermiteField::maxwellian(&rho, 4), &KineticParams::new(eps, 4), 0.01, 0).unwrap();
        prop_assert!((tr.final_field.mass() - rho.integrate()).abs() <= 1e-12 * rho.integrate());
    }

    #[test]
    fn config_round_trips(kbt in 0.1..5.0f64, gamma in 0.1..20.0f64, cells in 4usize..200, seed in any::<u64>(), t in 0.0..10.0f64) {
        let text = format!(
            "[physics]\nkbt = {kbt:?}\ngamma = {gamma:?}\n[grid]\nlengths = [8.0]\ncells = [{cells}]\n[solver]\nt_final = {t:?}\n[output]\nseed = {seed}\n[kernels.z1]\nfamily = \"isotropic\"\namplitude = 0.1\nwidth = 0.5\n"
        );
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let canon = cfg.to_canonical_toml().unwrap();
        let back = RunConfig::from_toml_str(&canon).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_canonical_toml().unwrap(), canon);
    }
}
