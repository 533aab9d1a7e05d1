//! Pipelined BiCGStab: both reductions overlap a sparse product.

use crate::kernels::Coef::{Neg, One, Scalar};
use crate::kernels::{ScalarId, StatementGroup, VecId};

use super::program::*;
use super::{BreakdownInfo, Overlap};

const W: VecId = VecId(FIRST_VEC);
const T: VecId = VecId(FIRST_VEC + 1);
const P: VecId = VecId(FIRST_VEC + 2);
const S: VecId = VecId(FIRST_VEC + 3);
const Z: VecId = VecId(FIRST_VEC + 4);
const V: VecId = VecId(FIRST_VEC + 5);
const Q: VecId = VecId(FIRST_VEC + 6);
const Y: VecId = VecId(FIRST_VEC + 7);

const RHO: ScalarId = ScalarId(FIRST_SCALAR);
const RHO_NEXT: ScalarId = ScalarId(FIRST_SCALAR + 1);
const ALPHA: ScalarId = ScalarId(FIRST_SCALAR + 2);
const OMEGA: ScalarId = ScalarId(FIRST_SCALAR + 3);
const BETA: ScalarId = ScalarId(FIRST_SCALAR + 4);
const THETA: ScalarId = ScalarId(FIRST_SCALAR + 5);
const PHI: ScalarId = ScalarId(FIRST_SCALAR + 6);
const PI: ScalarId = ScalarId(FIRST_SCALAR + 7);
const PSI: ScalarId = ScalarId(FIRST_SCALAR + 8);
const SIGMA: ScalarId = ScalarId(FIRST_SCALAR + 9);
const DELTA: ScalarId = ScalarId(FIRST_SCALAR + 10);
const RW: ScalarId = ScalarId(FIRST_SCALAR + 11);

fn init(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.copy(RHO, RES2);
    ctx.each(|ctx, c| {
        let a = ctx.ratio(ctx.get(RHO, c), ctx.get(RW, c), c, "(r0, w0)")?;
        ctx.set(ALPHA, c, a);
        ctx.set(BETA, c, 0.0);
        ctx.set(OMEGA, c, 0.0);
        Ok(())
    })
}

fn omega(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.each(|ctx, c| {
        let (theta, pi) = (ctx.get(THETA, c), ctx.get(PI, c));
        let w = ctx.omega(theta, ctx.get(PHI, c), pi, c, "phi")?;
        ctx.set(OMEGA, c, w);
        ctx.set(RES2, c, pi - w * theta);
        Ok(())
    })
}

fn alpha(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.each(|ctx, c| {
        let (alpha, omega) = (ctx.get(ALPHA, c), ctx.get(OMEGA, c));
        let beta = ctx.ratio(alpha, omega, c, "omega")?
            * ctx.ratio(ctx.get(RHO_NEXT, c), ctx.get(RHO, c), c, "rho")?;
        let den = ctx.get(SIGMA, c) + beta * ctx.get(DELTA, c) - beta * omega * ctx.get(PSI, c);
        let rho = ctx.get(RHO_NEXT, c);
        let a = ctx.ratio(rho, den, c, "sigma + beta delta - beta omega psi")?;
        ctx.set(BETA, c, beta);
        ctx.set(RHO, c, rho);
        ctx.set(ALPHA, c, a);
        Ok(())
    })
}

pub(crate) fn program() -> Program {
    let mut setup = initial_residual(|g| g);
    setup.extend([
        Op::Spmv { src: R, dst: W },
        Op::Spmv { src: W, dst: T },
        group(StatementGroup::new().dot(R0, W, RW)),
        Op::Scalars(init),
    ]);
    let iteration = vec![
        overlapped(
            StatementGroup::new()
                .update_nested(P, &[(One, R)], Scalar(BETA), &[(One, P), (Neg(OMEGA), S)])
                .update_nested(S, &[(One, W)], Scalar(BETA), &[(One, S), (Neg(OMEGA), Z)])
                .update_nested(Z, &[(One, T)], Scalar(BETA), &[(One, Z), (Neg(OMEGA), V)])
                .update(Q, &[(One, R), (Neg(ALPHA), S)])
                .update(Y, &[(One, W), (Neg(ALPHA), Z)])
                .dot(Q, Y, THETA)
                .dot(Y, Y, PHI)
                .dot(Q, Q, PI),
            Overlap::Spmv,
        ),
        Op::Spmv { src: Z, dst: V },
        Op::Scalars(omega),
        group(
            StatementGroup::new()
                .update(X, &[(One, X), (Scalar(ALPHA), P), (Scalar(OMEGA), Q)])
                .update(R, &[(One, Q), (Neg(OMEGA), Y)]),
        ),
        Op::Check { branch: Vec::new() },
        overlapped(
            StatementGroup::new()
                .update_nested(W, &[(One, Y)], Neg(OMEGA), &[(One, T), (Neg(ALPHA), V)])
                .dot(R0, R, RHO_NEXT)
                .dot(R0, Z, PSI)
                .dot(R0, W, SIGMA)
                .dot(R0, S, DELTA),
            Overlap::Spmv,
        ),
        Op::Spmv { src: W, dst: T },
        Op::Scalars(alpha),
    ];
    Program {
        n_vectors: FIRST_VEC + 8,
        n_scalars: FIRST_SCALAR + 12,
        setup,
        iteration,
    }
}
