mod common;

use common::{dense_solve, random_rhs};
use mrhs::solvers::{
    method_schedule, solve, verify_residual_identity, Formulation, MethodId, Preconditioner,
    SolveError, SolveOptions, StopMode, Tolerance,
};
use mrhs::sparse::{gen_poisson_5pt, CsrMatrix};
use mrhs::MultiVector;

fn options(method: MethodId, f: Formulation) -> SolveOptions {
    SolveOptions::new(method)
        .formulation(f)
        .tol(Tolerance::Relative(1e-10))
        .mode(StopMode::Converge { max_iters: 2000 })
}

#[test]
fn identity_matrix_converges_in_one_iteration() {
    let a = CsrMatrix::from_triplets(5, (0..5).map(|i| (i, i, 1.0))).unwrap();
    let b = MultiVector::from_fn(5, 2, |i, c| (i + 1) as f64 * if c == 0 { 1.0 } else { -3.5 });
    let x0 = MultiVector::zeros(5, 2);
    for method in MethodId::ALL {
        for f in [Formulation::Merged, Formulation::Basic] {
            let r = solve(&a, &b, &x0, &options(method, f)).unwrap();
            assert_eq!(r.iterations, 1, "{method} {f}");
            assert!(r.all_converged());
            assert!(r.x.max_abs_diff(&b) <= 1e-14 * b.max_abs(), "{method} {f}");
            let bn = b.column_norms();
            for c in 0..2 {
                assert!(r.true_residual[c] <= 1e-14 * bn[c]);
            }
        }
    }
}

#[test]
fn poisson_matches_dense_oracle() {
    let a = gen_poisson_5pt(10, 10).unwrap();
    let b = random_rhs(100, 1, 7);
    let exact = dense_solve(&a, &b);
    for method in MethodId::ALL {
        for f in [Formulation::Merged, Formulation::Basic] {
            let r = solve(&a, &b, &MultiVector::zeros(100, 1), &options(method, f)).unwrap();
            assert!(r.all_converged(), "{method} {f}");
            let err = r.x.max_abs_diff(&exact);
            assert!(err <= 1e-8, "{method} {f}: {err}");
            assert_eq!(r.residual_history.len(), r.iterations + 1);
        }
    }
}

#[test]
fn nonsymmetric_system_matches_dense_oracle() {
    // convection-diffusion-like perturbation of the 5-point stencil
    let base = gen_poisson_5pt(8, 8).unwrap();
    let mut trip = Vec::new();
    for i in 0..base.n_rows() {
        for (j, v) in base.row(i) {
            let skew = if j == i + 1 { 0.3 } else if j + 1 == i { -0.3 } else { 0.0 };
            trip.push((i, j, v + skew));
        }
    }
    let a = CsrMatrix::from_triplets(base.n_rows(), trip).unwrap();
    let b = random_rhs(64, 3, 11);
    let exact = dense_solve(&a, &b);
    for method in MethodId::ALL {
        let r = solve(&a, &b, &MultiVector::zeros(64, 3), &options(method, Formulation::Merged)).unwrap();
        assert!(r.x.max_abs_diff(&exact) <= 1e-8, "{method}");
    }
}

#[test]
fn columns_are_independent() {
    let a = gen_poisson_5pt(12, 12).unwrap();
    let b = random_rhs(144, 4, 3);
    let x0 = MultiVector::zeros(144, 4);
    for method in MethodId::ALL {
        let opts = SolveOptions::new(method).mode(StopMode::Fixed { iters: 15 });
        let block = solve(&a, &b, &x0, &opts).unwrap();
        for c in 0..4 {
            let bc = MultiVector::from_columns(&[b.column(c)]).unwrap();
            let single = solve(&a, &bc, &MultiVector::zeros(144, 1), &opts).unwrap();
            assert_eq!(block.x.column(c), single.x.column(0), "{method} column {c}");
            for (hb, hs) in block.residual_history.iter().zip(&single.residual_history) {
                assert_eq!(hb[c], hs[0]);
            }
        }
    }
}

#[test]
fn formulations_agree() {
    let a = gen_poisson_5pt(64, 64).unwrap();
    let b = random_rhs(64 * 64, 2, 5);
    let x0 = MultiVector::zeros(64 * 64, 2);
    for method in MethodId::ALL {
        let run = |f| {
            let opts = SolveOptions::new(method).formulation(f).mode(StopMode::Fixed { iters: 10 });
            solve(&a, &b, &x0, &opts).unwrap()
        };
        let (basic, merged) = (run(Formulation::Basic), run(Formulation::Merged));
        for (hb, hm) in basic.residual_history.iter().zip(&merged.residual_history) {
            for c in 0..2 {
                assert!((hb[c] - hm[c]).abs() <= 1e-6 * hm[c], "{method}");
            }
        }
    }
}

#[test]
fn fixed_mode_traffic_matches_schedule() {
    let a = gen_poisson_5pt(16, 16).unwrap();
    for m in [1, 3] {
        let b = random_rhs(256, m, 1);
        let x0 = MultiVector::zeros(256, m);
        for method in MethodId::ALL {
            for f in [Formulation::Merged, Formulation::Basic] {
                let opts = SolveOptions::new(method).formulation(f).mode(StopMode::Fixed { iters: 7 });
                let r = solve(&a, &b, &x0, &opts).unwrap();
                let it = r.iteration_traffic();
                let sched = method_schedule(method, f);
                assert_eq!(r.iterations, 7);
                assert_eq!(it.vector_transfers(), 7 * sched.vector_transfers(), "{method} {f}");
                assert_eq!(it.spmv_calls, 7 * sched.spmv_count() as u64);
                assert_eq!(it.precond_applications, 7 * sched.precond_count() as u64);
                assert_eq!(it.precond_transfers, 2 * it.precond_applications);
                let dots: Vec<usize> = it.reductions.iter().map(|r| r.dots).collect();
                let expect: Vec<usize> = sched.reductions().iter().map(|r| r.0).collect();
                assert_eq!(dots, expect.repeat(7), "{method} {f}");
                assert!(it.reductions.iter().all(|r| r.cols == m));
            }
        }
    }
}

#[test]
fn synthetic_preconditioner_keeps_iterates() {
    let a = gen_poisson_5pt(20, 20).unwrap();
    let b = random_rhs(400, 2, 9);
    let x0 = MultiVector::zeros(400, 2);
    for method in [MethodId::PBiCGStab, MethodId::RBiCGStab, MethodId::PPipeBiCGStab] {
        let base = SolveOptions::new(method).mode(StopMode::Fixed { iters: 12 });
        let id = solve(&a, &b, &x0, &base).unwrap();
        let syn = solve(&a, &b, &x0, &base.clone().precond(Some(Preconditioner::synthetic(8).unwrap()))).unwrap();
        assert_eq!(id.x.data(), syn.x.data(), "{method}");
        assert_eq!(syn.iteration_traffic().precond_transfers, 8 * 24);
        assert_eq!(
            id.iteration_traffic().vector_transfers(),
            syn.iteration_traffic().vector_transfers()
        );
    }
}

#[test]
fn residual_identity_holds() {
    let a = gen_poisson_5pt(32, 32).unwrap();
    let b = random_rhs(1024, 2, 21);
    let x0 = MultiVector::zeros(1024, 2);
    for method in MethodId::ALL {
        let check = verify_residual_identity(&a, &b, &x0, method, 20).unwrap();
        assert_eq!(check.iterations, 20);
        assert!(check.worst_relative() <= 1e-10, "{method}: {}", check.worst_relative());
    }
}

#[test]
fn preconditioner_presence_is_checked() {
    let a = gen_poisson_5pt(3, 3).unwrap();
    let b = random_rhs(9, 1, 0);
    let x0 = MultiVector::zeros(9, 1);
    let opts = SolveOptions::new(MethodId::PBiCGStab).precond(None);
    assert!(matches!(solve(&a, &b, &x0, &opts), Err(SolveError::MissingPreconditioner { .. })));
    let opts = SolveOptions::new(MethodId::BiCGStab).precond(Some(Preconditioner::Identity));
    assert!(matches!(solve(&a, &b, &x0, &opts), Err(SolveError::UnexpectedPreconditioner { .. })));
}

#[test]
fn shape_mismatch_is_rejected() {
    let a = gen_poisson_5pt(3, 3).unwrap();
    let opts = SolveOptions::new(MethodId::BiCGStab);
    let r = solve(&a, &random_rhs(8, 1, 0), &MultiVector::zeros(8, 1), &opts);
    assert!(matches!(r, Err(SolveError::Core(_))));
    let r = solve(&a, &random_rhs(9, 2, 0), &MultiVector::zeros(9, 1), &opts);
    assert!(matches!(r, Err(SolveError::Core(_))));
}

#[test]
fn zero_shadow_product_is_a_breakdown() {
    // A = [[0, 1], [1, 0]], b = e1: (A r0, r0) = 0 in the first step
    let a = CsrMatrix::from_triplets(2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    let b = MultiVector::from_columns(&[vec![1.0, 0.0]]).unwrap();
    let opts = SolveOptions::new(MethodId::BiCGStab);
    match solve(&a, &b, &MultiVector::zeros(2, 1), &opts) {
        Err(SolveError::Breakdown { info, report }) => {
            assert_eq!((info.iteration, info.column, info.scalar), (0, 0, "delta"));
            assert_eq!(report.breakdown, Some(info));
            assert_eq!(report.residual_history.len(), report.iterations + 1);
        }
        other => panic!("expected breakdown, got {other:?}"),
    }
}

#[test]
fn converged_columns_stay_fixed() {
    // column 1 has a zero right-hand side and starts converged
    let a = gen_poisson_5pt(10, 10).unwrap();
    let mut b = random_rhs(100, 2, 4);
    for i in 0..100 {
        b.set(i, 1, 0.0);
    }
    let exact = dense_solve(&a, &b);
    let r = solve(&a, &b, &MultiVector::zeros(100, 2), &options(MethodId::BiCGStab, Formulation::Merged)).unwrap();
    assert!(r.all_converged());
    assert!(r.x.column(1).iter().all(|&v| v == 0.0));
    assert!(r.x.max_abs_diff(&exact) <= 1e-8);
    assert!(r.residual_history.iter().all(|h| h[1] == 0.0));
}

#[test]
fn absolute_tolerance_and_iteration_limit() {
    let a = gen_poisson_5pt(20, 20).unwrap();
    let b = random_rhs(400, 1, 8);
    let x0 = MultiVector::zeros(400, 1);
    let opts = SolveOptions::new(MethodId::BiCGStab)
        .tol(Tolerance::Absolute(1e-6))
        .mode(StopMode::Converge { max_iters: 3 });
    let r = solve(&a, &b, &x0, &opts).unwrap();
    assert_eq!(r.iterations, 3);
    assert!(!r.all_converged());
    let opts = opts.mode(StopMode::Converge { max_iters: 500 });
    let r = solve(&a, &b, &x0, &opts).unwrap();
    assert!(r.all_converged());
    assert!(r.residual_history.last().unwrap()[0] < 1e-6);
}
