//! Reordered preconditioned BiCGStab: preconditioner applications overlap
//! the reductions.

use crate::kernels::Coef::{Neg, One, Scalar};
use crate::kernels::{ScalarId, StatementGroup, VecId};

use super::program::*;
use super::{BreakdownInfo, Overlap};

const Z: VecId = VecId(FIRST_VEC);
const VH: VecId = VecId(FIRST_VEC + 1);
const V: VecId = VecId(FIRST_VEC + 2);
const S: VecId = VecId(FIRST_VEC + 3);
const TH: VecId = VecId(FIRST_VEC + 4);
const T: VecId = VecId(FIRST_VEC + 5);
const RT: VecId = VecId(FIRST_VEC + 6);
const Q: VecId = VecId(FIRST_VEC + 7);

const RHO: ScalarId = ScalarId(FIRST_SCALAR);
const DELTA: ScalarId = ScalarId(FIRST_SCALAR + 1);
const ALPHA: ScalarId = ScalarId(FIRST_SCALAR + 2);
const OMEGA: ScalarId = ScalarId(FIRST_SCALAR + 3);
const BETA: ScalarId = ScalarId(FIRST_SCALAR + 4);
const THETA: ScalarId = ScalarId(FIRST_SCALAR + 5);
const PHI: ScalarId = ScalarId(FIRST_SCALAR + 6);
const PSI: ScalarId = ScalarId(FIRST_SCALAR + 7);
const ETA: ScalarId = ScalarId(FIRST_SCALAR + 8);

fn init(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.copy(RHO, RES2);
    Ok(())
}

fn alpha(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.each(|ctx, c| {
        let a = ctx.ratio(ctx.get(RHO, c), ctx.get(DELTA, c), c, "delta")?;
        ctx.set(ALPHA, c, a);
        Ok(())
    })
}

fn omega(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.each(|ctx, c| {
        let (theta, eta) = (ctx.get(THETA, c), ctx.get(ETA, c));
        let w = ctx.omega(theta, ctx.get(PHI, c), eta, c, "phi")?;
        ctx.set(OMEGA, c, w);
        ctx.set(RES2, c, eta - w * theta);
        Ok(())
    })
}

fn beta(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.each(|ctx, c| {
        let omega = ctx.get(OMEGA, c);
        let rho_next = -omega * ctx.get(PSI, c);
        let b = ctx.ratio(rho_next, ctx.get(RHO, c), c, "rho")?
            * ctx.ratio(ctx.get(ALPHA, c), omega, c, "omega")?;
        ctx.set(BETA, c, b);
        ctx.set(RHO, c, rho_next);
        Ok(())
    })
}

fn update_x() -> StatementGroup {
    StatementGroup::new().update(X, &[(One, X), (Scalar(ALPHA), VH), (Scalar(OMEGA), TH)])
}

pub(crate) fn program() -> Program {
    let mut setup = initial_residual(|g| g);
    setup.extend([
        Op::Precond { src: R, dst: Z },
        group(StatementGroup::new().update(VH, &[(One, Z)])),
        Op::Scalars(init),
    ]);
    let iteration = vec![
        Op::Spmv { src: VH, dst: V },
        overlapped(StatementGroup::new().dot(V, R0, DELTA), Overlap::Precond),
        Op::Precond { src: V, dst: S },
        Op::Scalars(alpha),
        group(StatementGroup::new().update(TH, &[(One, Z), (Neg(ALPHA), S)])),
        Op::Spmv { src: TH, dst: T },
        overlapped(
            StatementGroup::new()
                .update(RT, &[(One, R), (Neg(ALPHA), V)])
                .dot(T, RT, THETA)
                .dot(T, T, PHI)
                .dot(T, R0, PSI)
                .dot(RT, RT, ETA),
            Overlap::Precond,
        ),
        Op::Precond { src: T, dst: Q },
        Op::Scalars(omega),
        group(StatementGroup::new().update(R, &[(One, RT), (Neg(OMEGA), T)])),
        Op::Check {
            branch: vec![update_x()],
        },
        Op::Scalars(beta),
        group(
            update_x()
                .update(Z, &[(One, TH), (Neg(OMEGA), Q)])
                .update_nested(VH, &[(One, Z)], Scalar(BETA), &[(One, VH), (Neg(OMEGA), S)]),
        ),
    ];
    Program {
        n_vectors: FIRST_VEC + 8,
        n_scalars: FIRST_SCALAR + 9,
        setup,
        iteration,
    }
}
