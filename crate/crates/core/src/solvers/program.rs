//! Static description of a method: setup and per-iteration operations.

use crate::kernels::{ScalarId, StatementGroup, VecId, Workspace};

use super::{BreakdownInfo, Overlap};

// Slots shared by every method.
pub(crate) const X: VecId = VecId(1);
pub(crate) const B: VecId = VecId(2);
pub(crate) const R: VecId = VecId(3);
pub(crate) const R0: VecId = VecId(4);
/// First vector slot free for method-specific use.
pub(crate) const FIRST_VEC: u16 = 5;

/// Squared residual norm as obtained from the merged quantities.
pub(crate) const RES2: ScalarId = ScalarId(0);
/// Squared right-hand-side norm, per column.
pub(crate) const BNORM2: ScalarId = ScalarId(1);
pub(crate) const FIRST_SCALAR: u16 = 2;

pub(crate) type ScalarStage = fn(&mut ScalarCtx) -> Result<(), BreakdownInfo>;

pub(crate) enum Op {
    Spmv { src: VecId, dst: VecId },
    SpmvTranspose { src: VecId, dst: VecId },
    Precond { src: VecId, dst: VecId },
    Group { group: StatementGroup, overlap: Overlap },
    Scalars(ScalarStage),
    /// Convergence test on [`RES2`]; `branch` runs once, when every column
    /// has converged, before leaving the loop.
    Check { branch: Vec<StatementGroup> },
}

pub(crate) struct Program {
    pub n_vectors: u16,
    pub n_scalars: u16,
    pub setup: Vec<Op>,
    pub iteration: Vec<Op>,
}

pub(crate) fn group(g: StatementGroup) -> Op {
    Op::Group {
        group: g,
        overlap: Overlap::None,
    }
}

pub(crate) fn overlapped(g: StatementGroup, overlap: Overlap) -> Op {
    Op::Group { group: g, overlap }
}

/// Ops computing `r = b - A x`, the shadow residual `r0 = r`, its squared
/// norm into [`RES2`] and `(b, b)` into [`BNORM2`]. `extra` updates are
/// appended to the same group.
pub(crate) fn initial_residual(extra: impl FnOnce(StatementGroup) -> StatementGroup) -> Vec<Op> {
    use crate::kernels::Coef::{MinusOne, One};
    let g = StatementGroup::new()
        .update(R, &[(One, B), (MinusOne, R)])
        .update(R0, &[(One, R)])
        .dot(R, R, RES2)
        .dot(B, B, BNORM2);
    vec![Op::Spmv { src: X, dst: R }, group(extra(g))]
}

/// Per-column access to the scalar slots during a scalar stage.
pub(crate) struct ScalarCtx<'a> {
    pub(crate) ws: &'a mut Workspace,
    pub(crate) converged: &'a [bool],
    pub(crate) iteration: usize,
}

impl ScalarCtx<'_> {
    pub fn m(&self) -> usize {
        self.ws.n_cols()
    }

    pub fn get(&self, id: ScalarId, c: usize) -> f64 {
        self.ws.scalar(id).expect("scalar slot")[c]
    }

    pub fn set(&mut self, id: ScalarId, c: usize, v: f64) {
        self.ws.scalar_mut(id).expect("scalar slot")[c] = v;
    }

    pub fn copy(&mut self, dst: ScalarId, src: ScalarId) {
        let v = self.ws.scalar(src).expect("scalar slot").clone();
        *self.ws.scalar_mut(dst).expect("scalar slot") = v;
    }

    fn breakdown(&self, c: usize, scalar: &'static str) -> BreakdownInfo {
        BreakdownInfo {
            iteration: self.iteration,
            column: c,
            scalar,
        }
    }

    /// `num / den`; zero for converged columns. A vanishing or non-finite
    /// denominator `name` is a breakdown.
    pub fn ratio(&self, num: f64, den: f64, c: usize, name: &'static str) -> Result<f64, BreakdownInfo> {
        if self.converged[c] {
            return Ok(0.0);
        }
        let q = num / den;
        if den == 0.0 || !q.is_finite() {
            return Err(self.breakdown(c, name));
        }
        Ok(q)
    }

    /// Stabilisation parameter `num / den`. When `den` vanishes together
    /// with the squared norm `res`, the intermediate residual is exactly
    /// zero and the parameter is set to zero.
    pub fn omega(&self, num: f64, den: f64, res: f64, c: usize, name: &'static str) -> Result<f64, BreakdownInfo> {
        if den == 0.0 && res == 0.0 && !self.converged[c] {
            return Ok(0.0);
        }
        self.ratio(num, den, c, name)
    }

    pub fn each(
        &mut self,
        mut f: impl FnMut(&mut Self, usize) -> Result<(), BreakdownInfo>,
    ) -> Result<(), BreakdownInfo> {
        for c in 0..self.m() {
            f(self, c)?;
        }
        Ok(())
    }
}
