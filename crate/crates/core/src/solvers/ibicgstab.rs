//! Improved BiCGStab: all dot products of an iteration in one reduction.

use crate::kernels::Coef::{Neg, One, Scalar};
use crate::kernels::{ScalarId, StatementGroup, VecId};

use super::program::*;
use super::BreakdownInfo;

const U: VecId = VecId(FIRST_VEC);
const F0: VecId = VecId(FIRST_VEC + 1);
const Q: VecId = VecId(FIRST_VEC + 2);
const V: VecId = VecId(FIRST_VEC + 3);
const Z: VecId = VecId(FIRST_VEC + 4);
const S: VecId = VecId(FIRST_VEC + 5);
const T: VecId = VecId(FIRST_VEC + 6);

const RHO: ScalarId = ScalarId(FIRST_SCALAR);
const ALPHA: ScalarId = ScalarId(FIRST_SCALAR + 1);
const OMEGA: ScalarId = ScalarId(FIRST_SCALAR + 2);
const BETA: ScalarId = ScalarId(FIRST_SCALAR + 3);
const DELTA: ScalarId = ScalarId(FIRST_SCALAR + 4);
const TAU: ScalarId = ScalarId(FIRST_SCALAR + 5);
const SIGMA: ScalarId = ScalarId(FIRST_SCALAR + 6);
const SIGMA_PREV: ScalarId = ScalarId(FIRST_SCALAR + 7);
const PHI: ScalarId = ScalarId(FIRST_SCALAR + 8);
const PI: ScalarId = ScalarId(FIRST_SCALAR + 9);
const GAMMA: ScalarId = ScalarId(FIRST_SCALAR + 10);
const ETA: ScalarId = ScalarId(FIRST_SCALAR + 11);
const THETA: ScalarId = ScalarId(FIRST_SCALAR + 12);
const KAPPA: ScalarId = ScalarId(FIRST_SCALAR + 13);
const NU: ScalarId = ScalarId(FIRST_SCALAR + 14);
// coefficients of the z update: beta alpha_new / alpha_old and alpha delta
const Z_COEF: ScalarId = ScalarId(FIRST_SCALAR + 15);
const ALPHA_DELTA: ScalarId = ScalarId(FIRST_SCALAR + 16);

fn init(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.copy(PHI, RES2);
    ctx.each(|ctx, c| {
        for id in [RHO, ALPHA, OMEGA] {
            ctx.set(id, c, 1.0);
        }
        for id in [SIGMA_PREV, PI, TAU] {
            ctx.set(id, c, 0.0);
        }
        Ok(())
    })
}

fn coefficients(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.each(|ctx, c| {
        let (omega, alpha, pi) = (ctx.get(OMEGA, c), ctx.get(ALPHA, c), ctx.get(PI, c));
        let rho_next = ctx.get(PHI, c) - omega * ctx.get(SIGMA_PREV, c) + omega * alpha * pi;
        let delta = ctx.ratio(rho_next, ctx.get(RHO, c), c, "rho")? * alpha;
        let beta = ctx.ratio(delta, omega, c, "omega")?;
        let tau = ctx.get(SIGMA, c) + beta * ctx.get(TAU, c) - delta * pi;
        let alpha_next = ctx.ratio(rho_next, tau, c, "tau")?;
        let z_coef = beta * ctx.ratio(alpha_next, alpha, c, "alpha")?;
        ctx.set(RHO, c, rho_next);
        ctx.set(DELTA, c, delta);
        ctx.set(BETA, c, beta);
        ctx.set(TAU, c, tau);
        ctx.set(ALPHA, c, alpha_next);
        ctx.set(Z_COEF, c, z_coef);
        ctx.set(ALPHA_DELTA, c, alpha_next * delta);
        Ok(())
    })
}

fn omega(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.each(|ctx, c| {
        let (theta, nu) = (ctx.get(THETA, c), ctx.get(NU, c));
        let w = ctx.omega(theta, ctx.get(KAPPA, c), nu, c, "kappa")?;
        ctx.set(OMEGA, c, w);
        ctx.set(SIGMA_PREV, c, ctx.get(SIGMA, c));
        ctx.set(SIGMA, c, ctx.get(GAMMA, c) - w * ctx.get(ETA, c));
        ctx.set(RES2, c, nu - w * theta);
        Ok(())
    })
}

pub(crate) fn program() -> Program {
    let mut setup = initial_residual(|g| g);
    setup.extend([
        Op::Spmv { src: R, dst: U },
        Op::SpmvTranspose { src: R0, dst: F0 },
        group(StatementGroup::new().dot(R0, U, SIGMA)),
        Op::Scalars(init),
    ]);
    let iteration = vec![
        Op::Scalars(coefficients),
        group(
            StatementGroup::new()
                .update(Z, &[(Scalar(ALPHA), R), (Scalar(Z_COEF), Z), (Neg(ALPHA_DELTA), V)])
                .update(V, &[(One, U), (Scalar(BETA), V), (Neg(DELTA), Q)])
                .update(S, &[(One, R), (Neg(ALPHA), V)]),
        ),
        Op::Spmv { src: V, dst: Q },
        group(
            StatementGroup::new()
                .update(T, &[(One, U), (Neg(ALPHA), Q)])
                .dot(R0, S, PHI)
                .dot(R0, Q, PI)
                .dot(F0, S, GAMMA)
                .dot(F0, T, ETA)
                .dot(S, T, THETA)
                .dot(T, T, KAPPA)
                .dot(S, S, NU),
        ),
        Op::Scalars(omega),
        group(
            StatementGroup::new()
                .update(R, &[(One, S), (Neg(OMEGA), T)])
                .update(X, &[(One, X), (One, Z), (Scalar(OMEGA), S)]),
        ),
        Op::Check { branch: Vec::new() },
        Op::Spmv { src: R, dst: U },
    ];
    Program {
        n_vectors: FIRST_VEC + 7,
        n_scalars: FIRST_SCALAR + 17,
        setup,
        iteration,
    }
}
