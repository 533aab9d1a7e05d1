use mrhs::perfmodel::*;
use mrhs::solvers::MethodId;

const METHODS: [MethodId; 6] = [
    MethodId::BiCGStab,
    MethodId::IBiCGStab,
    MethodId::PipeBiCGStab,
    MethodId::PBiCGStab,
    MethodId::RBiCGStab,
    MethodId::PPipeBiCGStab,
];

// single-node iteration-time predictions, seconds
const LOMONOSOV_MS: [usize; 2] = [1, 4];
const LOMONOSOV_T: [[f64; 2]; 6] = [
    [0.106, 0.3],
    [0.109, 0.32],
    [0.12, 0.36],
    [0.115, 0.34],
    [0.119, 0.35],
    [0.143, 0.45],
];
const LOMONOSOV2_MS: [usize; 3] = [1, 4, 16];
const LOMONOSOV2_T: [[f64; 3]; 6] = [
    [0.057, 0.16, 0.59],
    [0.059, 0.17, 0.62],
    [0.065, 0.19, 0.71],
    [0.062, 0.18, 0.66],
    [0.064, 0.19, 0.7],
    [0.077, 0.24, 0.9],
];

/// Identity preconditioning is one vector copy.
const COPY_ALPHA: u32 = 2;

fn rel_errors(machine: &MachineModel, ms: &[usize], table: &[impl AsRef<[f64]>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (method, row) in METHODS.iter().zip(table) {
        for (&m, &expect) in ms.iter().zip(row.as_ref()) {
            let spec = ProblemSpec::table5(m).unwrap().with_alpha(COPY_ALPHA);
            let t = t_iteration(machine, &spec, *method, 1).unwrap();
            out.push((t - expect) / expect);
        }
    }
    out
}

fn worst(errs: &[f64]) -> f64 {
    errs.iter().map(|e| e.abs()).fold(0.0, f64::max)
}

#[test]
fn lomonosov2_reproduces_single_node_table_at_ram_bandwidth() {
    let errs = rel_errors(&MachineModel::lomonosov2(), &LOMONOSOV2_MS, &LOMONOSOV2_T);
    assert_eq!(errs.len(), 18);
    assert!(worst(&errs) <= 0.10, "{errs:?}");
}

#[test]
fn lomonosov_needs_the_effective_bandwidth() {
    let ram = rel_errors(&MachineModel::lomonosov(), &LOMONOSOV_MS, &LOMONOSOV_T);
    assert!(worst(&ram) > 0.10);
    let eff = MachineModel::lomonosov()
        .with_bandwidth_mode(BandwidthMode::Effective)
        .unwrap();
    let errs = rel_errors(&eff, &LOMONOSOV_MS, &LOMONOSOV_T);
    assert!(worst(&errs) <= 0.10, "{errs:?}");
}

#[test]
fn shipped_effective_bandwidth_is_the_least_squares_fit() {
    // brute-force minimiser of the summed squared relative error
    let sse = |b: f64| {
        let mut mach = MachineModel::lomonosov();
        mach.ram_bandwidth = b;
        rel_errors(&mach, &LOMONOSOV_MS, &LOMONOSOV_T).iter().map(|e| e * e).sum::<f64>()
    };
    let best = (100..=600)
        .map(|k| k as f64 * 1e8)
        .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
        .unwrap();
    println!("best fit {best:e}");
    assert!((best - LOMONOSOV_EFFECTIVE_BANDWIDTH).abs() / best < 0.02, "best fit {best:e}");
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn method() -> impl Strategy<Value = MethodId> {
        prop::sample::select(METHODS.to_vec())
    }

    fn machine() -> impl Strategy<Value = MachineModel> {
        prop_oneof![Just(MachineModel::lomonosov()), Just(MachineModel::lomonosov2())]
    }

    fn problem() -> impl Strategy<Value = ProblemSpec> {
        (1e3f64..1e9, 1usize..32, 3.0f64..30.0, 0.0f64..1e5, 2u32..8).prop_map(
            |(n, m, c, halo, alpha)| {
                ProblemSpec::new(n, m, c, halo).unwrap().with_alpha(alpha & !1)
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

        #[test]
        fn overlap_lies_between_max_and_sum(tc in 0.0f64..1.0, tg in 0.0f64..1.0, gamma in 0.0f64..=1.0) {
            let t = overlapped(tc, tg, gamma);
            prop_assert!(t >= tc.max(tg) - 1e-15);
            prop_assert!(t <= tc + tg + 1e-15);
        }

        #[test]
        fn vector_time_shrinks_with_nodes(mach in machine(), spec in problem(), p in 1u32..1000) {
            prop_assert!(t_vec(&mach, &spec, p + 1) <= t_vec(&mach, &spec, p));
            prop_assert!(t_mul(&mach, &spec, p + 1) <= t_mul(&mach, &spec, p));
        }

        #[test]
        fn reductions_grow_with_nodes_and_size(mach in machine(), p in 1u32..1000, l in 1.0f64..1e6) {
            prop_assert!(t_global(&mach, p + 1, l) >= t_global(&mach, p, l));
            prop_assert!(t_global(&mach, p, 2.0 * l) >= t_global(&mach, p, l));
        }

        #[test]
        fn iteration_time_monotone_in_gamma_and_alpha(
            mach in machine(), spec in problem(), method in method(),
            p in 1u32..256, g in 0.0f64..=1.0, dg in 0.0f64..=1.0, da in 1u32..4,
        ) {
            let g2 = (g + dg).min(1.0);
            let lo = t_iteration(&mach.clone().with_gamma(g), &spec, method, p).unwrap();
            let hi = t_iteration(&mach.clone().with_gamma(g2), &spec, method, p).unwrap();
            prop_assert!(hi >= lo * (1.0 - 1e-12));
            let more = spec.with_alpha(spec.precond_alpha + 2 * da);
            let t_more = t_iteration(&mach, &more, method, p).unwrap();
            let t_base = t_iteration(&mach, &spec, method, p).unwrap();
            prop_assert!(t_more >= t_base * (1.0 - 1e-12));
        }

        #[test]
        fn relative_performance_has_a_winner(
            mach in machine(), spec in problem(), p in 1u32..256,
            gamma in 0.0f64..=1.0,
        ) {
            let mach = mach.with_gamma(gamma);
            let rows = relative_performance(&mach, &spec, &METHODS, p).unwrap();
            prop_assert!(rows.iter().all(|r| r.2 > 0.0 && r.2 <= 1.0));
            prop_assert!(rows.iter().any(|r| r.2 == 1.0));
        }
    }
}

#[test]
fn crossover_structure() {
    let mach = MachineModel::lomonosov();
    let p_range = 2..=128u32;
    let fig = |m| ProblemSpec::fig5(m).unwrap();
    let rows = relative_performance(&mach, &fig(1), &METHODS[..3], 1).unwrap();
    assert_eq!(rows[0].2, 1.0);
    let c1 = first_crossover(&mach, &fig(1), MethodId::BiCGStab, MethodId::IBiCGStab, p_range.clone())
        .unwrap()
        .expect("crossover at m = 1");
    let c16 = first_crossover(&mach, &fig(16), MethodId::BiCGStab, MethodId::IBiCGStab, p_range.clone())
        .unwrap()
        .unwrap_or(u32::MAX);
    println!("crossover m=1 at {c1}, m=16 at {c16}");
    assert!(c16 >= c1);
    let hidden = mach.with_gamma(0.0);
    let wins: Vec<u32> = p_range
        .filter(|&p| {
            relative_performance(&hidden, &fig(1), &METHODS[..3], p).unwrap()[2].2 == 1.0
        })
        .collect();
    println!("pipelined best at {wins:?}");
    assert!(!wins.is_empty());
}
