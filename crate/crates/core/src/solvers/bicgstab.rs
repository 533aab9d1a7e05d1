//! Classical BiCGStab with merged dot products.

use crate::kernels::Coef::{Neg, One, Scalar};
use crate::kernels::{ScalarId, StatementGroup, VecId};

use super::program::*;
use super::BreakdownInfo;

const P: VecId = VecId(FIRST_VEC);
const V: VecId = VecId(FIRST_VEC + 1);
const S: VecId = VecId(FIRST_VEC + 2);
const T: VecId = VecId(FIRST_VEC + 3);

const RHO: ScalarId = ScalarId(FIRST_SCALAR);
const RHO_NEXT: ScalarId = ScalarId(FIRST_SCALAR + 1);
const DELTA: ScalarId = ScalarId(FIRST_SCALAR + 2);
const ALPHA: ScalarId = ScalarId(FIRST_SCALAR + 3);
const OMEGA: ScalarId = ScalarId(FIRST_SCALAR + 4);
const BETA: ScalarId = ScalarId(FIRST_SCALAR + 5);
const PHI: ScalarId = ScalarId(FIRST_SCALAR + 6);
const PSI: ScalarId = ScalarId(FIRST_SCALAR + 7);
const THETA: ScalarId = ScalarId(FIRST_SCALAR + 8);

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
        let (phi, psi, theta) = (ctx.get(PHI, c), ctx.get(PSI, c), ctx.get(THETA, c));
        let w = ctx.omega(phi, psi, theta, c, "psi")?;
        ctx.set(OMEGA, c, w);
        ctx.set(RES2, c, theta - w * phi);
        Ok(())
    })
}

fn beta(ctx: &mut ScalarCtx) -> Result<(), BreakdownInfo> {
    ctx.each(|ctx, c| {
        let rho = ctx.ratio(ctx.get(RHO_NEXT, c), ctx.get(RHO, c), c, "rho")?;
        let b = rho * ctx.ratio(ctx.get(ALPHA, c), ctx.get(OMEGA, c), c, "omega")?;
        ctx.set(BETA, c, b);
        ctx.set(RHO, c, ctx.get(RHO_NEXT, c));
        Ok(())
    })
}

fn update_x() -> StatementGroup {
    StatementGroup::new().update(X, &[(One, X), (Scalar(ALPHA), P), (Scalar(OMEGA), S)])
}

pub(crate) fn program() -> Program {
    let mut setup = initial_residual(|g| g.update(P, &[(One, R)]));
    setup.push(Op::Scalars(init));
    let iteration = vec![
        Op::Spmv { src: P, dst: V },
        group(StatementGroup::new().dot(V, R0, DELTA)),
        Op::Scalars(alpha),
        group(StatementGroup::new().update(S, &[(One, R), (Neg(ALPHA), V)])),
        Op::Spmv { src: S, dst: T },
        group(
            StatementGroup::new()
                .dot(T, S, PHI)
                .dot(T, T, PSI)
                .dot(S, S, THETA),
        ),
        Op::Scalars(omega),
        Op::Check {
            branch: vec![update_x().update(R, &[(One, S), (Neg(OMEGA), T)])],
        },
        group(
            update_x()
                .update(R, &[(One, S), (Neg(OMEGA), T)])
                .dot(R, R0, RHO_NEXT),
        ),
        Op::Scalars(beta),
        group(StatementGroup::new().update_nested(
            P,
            &[(One, R)],
            Scalar(BETA),
            &[(One, P), (Neg(OMEGA), V)],
        )),
    ];
    Program {
        n_vectors: FIRST_VEC + 4,
        n_scalars: FIRST_SCALAR + 9,
        setup,
        iteration,
    }
}
