//! BiCGStab-family solvers for several right-hand sides at once.
//!
//! Each method is a fixed program of sparse products, preconditioner
//! applications, statement groups and per-column scalar stages. The merged
//! formulation runs every group as one pass; the basic formulation runs
//! the output of [`split_basic`](crate::kernels::split_basic) instead, but
//! still combines the dot products of a group into one reduction. The same
//! programs produce the [`IterationSchedule`] used by the performance model.

mod bicgstab;
mod engine;
mod ibicgstab;
mod pbicgstab;
mod pipe;
mod ppipe;
mod precond;
mod program;
mod rbicgstab;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kernels::{analyze_traffic, split_basic, KernelError, TrafficCounter};
use crate::sparse::{ColumnScalars, CoreError, MultiVector};

pub use engine::{solve, verify_residual_identity, ResidualIdentity};
pub use precond::Preconditioner;

use program::{Op, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MethodId {
    BiCGStab,
    IBiCGStab,
    PipeBiCGStab,
    PBiCGStab,
    RBiCGStab,
    PPipeBiCGStab,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::BiCGStab,
        MethodId::IBiCGStab,
        MethodId::PipeBiCGStab,
        MethodId::PBiCGStab,
        MethodId::RBiCGStab,
        MethodId::PPipeBiCGStab,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodId::BiCGStab => "bicgstab",
            MethodId::IBiCGStab => "ibicgstab",
            MethodId::PipeBiCGStab => "pipebicgstab",
            MethodId::PBiCGStab => "pbicgstab",
            MethodId::RBiCGStab => "rbicgstab",
            MethodId::PPipeBiCGStab => "ppipebicgstab",
        }
    }

    /// Display label, e.g. `PipeBiCGStab`.
    pub fn label(&self) -> &'static str {
        match self {
            MethodId::BiCGStab => "BiCGStab",
            MethodId::IBiCGStab => "IBiCGStab",
            MethodId::PipeBiCGStab => "PipeBiCGStab",
            MethodId::PBiCGStab => "PBiCGStab",
            MethodId::RBiCGStab => "RBiCGStab",
            MethodId::PPipeBiCGStab => "PPipeBiCGStab",
        }
    }

    pub fn is_preconditioned(&self) -> bool {
        matches!(
            self,
            MethodId::PBiCGStab | MethodId::RBiCGStab | MethodId::PPipeBiCGStab
        )
    }

    pub(crate) fn program(&self) -> Program {
        match self {
            MethodId::BiCGStab => bicgstab::program(),
            MethodId::IBiCGStab => ibicgstab::program(),
            MethodId::PipeBiCGStab => pipe::program(),
            MethodId::PBiCGStab => pbicgstab::program(),
            MethodId::RBiCGStab => rbicgstab::program(),
            MethodId::PPipeBiCGStab => ppipe::program(),
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown {kind} '{given}', expected one of: {valid}")]
pub struct ParseIdError {
    pub kind: &'static str,
    pub given: String,
    pub valid: String,
}

impl FromStr for MethodId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase();
        MethodId::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| ParseIdError {
                kind: "method",
                given: s.to_string(),
                valid: MethodId::ALL.map(|m| m.name()).join(", "),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Formulation {
    Basic,
    Merged,
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Basic => "basic",
            Formulation::Merged => "merged",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(Formulation::Basic),
            "merged" => Ok(Formulation::Merged),
            _ => Err(ParseIdError {
                kind: "formulation",
                given: s.to_string(),
                valid: "basic, merged".to_string(),
            }),
        }
    }
}

/// Work a global reduction may be hidden behind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Overlap {
    None,
    Spmv,
    Precond,
    SpmvAndPrecond,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Spmv,
    PrecondApply,
    Group { reads: u64, writes: u64 },
    Reduction { dots: usize, overlap: Overlap },
}

/// Per-iteration operations of a method, excluding setup and the
/// convergence branch.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationSchedule {
    pub method: MethodId,
    pub formulation: Formulation,
    pub steps: Vec<Step>,
}

impl IterationSchedule {
    pub fn reads(&self) -> u64 {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Group { reads, .. } => *reads,
                _ => 0,
            })
            .sum()
    }

    pub fn writes(&self) -> u64 {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Group { writes, .. } => *writes,
                _ => 0,
            })
            .sum()
    }

    /// Vector transfers of the statement groups.
    pub fn vector_transfers(&self) -> u64 {
        self.reads() + self.writes()
    }

    pub fn spmv_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Spmv)).count()
    }

    pub fn precond_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::PrecondApply)).count()
    }

    /// `(dots, overlap)` of each reduction in execution order.
    pub fn reductions(&self) -> Vec<(usize, Overlap)> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Reduction { dots, overlap } => Some((*dots, *overlap)),
                _ => None,
            })
            .collect()
    }
}

pub fn method_schedule(method: MethodId, formulation: Formulation) -> IterationSchedule {
    let mut steps = Vec::new();
    for op in method.program().iteration {
        match op {
            Op::Spmv { .. } | Op::SpmvTranspose { .. } => steps.push(Step::Spmv),
            Op::Precond { .. } => steps.push(Step::PrecondApply),
            Op::Group { group, overlap } => {
                let pieces = match formulation {
                    Formulation::Merged => vec![group.clone()],
                    Formulation::Basic => split_basic(&group),
                };
                for p in &pieces {
                    let t = analyze_traffic(p).expect("method groups are well formed");
                    steps.push(Step::Group {
                        reads: t.reads,
                        writes: t.writes,
                    });
                }
                if group.dot_count() > 0 {
                    steps.push(Step::Reduction {
                        dots: group.dot_count(),
                        overlap,
                    });
                }
            }
            Op::Scalars(_) | Op::Check { .. } => {}
        }
    }
    IterationSchedule {
        method,
        formulation,
        steps,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tolerance {
    /// Stop when `||r_c|| < tol ||b_c||` for every column `c`.
    Relative(f64),
    /// Stop when `||r_c|| < tol` for every column.
    Absolute(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopMode {
    Converge { max_iters: usize },
    /// Exactly `iters` iterations with no convergence test.
    Fixed { iters: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub method: MethodId,
    pub formulation: Formulation,
    pub precond: Option<Preconditioner>,
    pub tol: Tolerance,
    pub mode: StopMode,
    /// Also record `(r, r)` of the updated residual after every iteration,
    /// outside the traffic tally.
    pub track_true_residual: bool,
}

impl SolveOptions {
    /// Merged formulation, relative tolerance `1e-8`, at most 1000
    /// iterations, identity preconditioner for preconditioned methods.
    pub fn new(method: MethodId) -> Self {
        Self {
            method,
            formulation: Formulation::Merged,
            precond: method.is_preconditioned().then_some(Preconditioner::Identity),
            tol: Tolerance::Relative(1e-8),
            mode: StopMode::Converge { max_iters: 1000 },
            track_true_residual: false,
        }
    }

    pub fn formulation(mut self, f: Formulation) -> Self {
        self.formulation = f;
        self
    }

    pub fn precond(mut self, p: Option<Preconditioner>) -> Self {
        self.precond = p;
        self
    }

    pub fn tol(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }

    pub fn mode(mut self, mode: StopMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn track_true_residual(mut self, on: bool) -> Self {
        self.track_true_residual = on;
        self
    }
}

/// Where a recurrence divided by a vanishing or non-finite scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BreakdownInfo {
    /// Zero-based iteration index; setup failures report 0.
    pub iteration: usize,
    pub column: usize,
    pub scalar: &'static str,
}

impl fmt::Display for BreakdownInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "breakdown at iteration {} in column {}: {} vanished or is not finite",
            self.iteration, self.column, self.scalar
        )
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub method: MethodId,
    pub formulation: Formulation,
    /// Completed iterations.
    pub iterations: usize,
    pub converged_columns: Vec<bool>,
    /// Recursive residual norm per column: entry 0 after setup, then one
    /// entry per iteration. Columns that already converged repeat their
    /// last value.
    pub residual_history: Vec<ColumnScalars>,
    pub x: MultiVector,
    /// `||b - A x||` per column, recomputed after the solve.
    pub true_residual: ColumnScalars,
    /// Everything the solve moved, setup included.
    pub traffic: TrafficCounter,
    /// The part of [`Self::traffic`] spent in setup.
    pub setup_traffic: TrafficCounter,
    /// `(r, r)` after each iteration when requested.
    pub true_residual_sq_history: Option<Vec<ColumnScalars>>,
    /// The merged squared-residual quantity after each iteration.
    pub merged_residual_sq_history: Vec<ColumnScalars>,
    pub breakdown: Option<BreakdownInfo>,
}

impl SolveReport {
    pub fn all_converged(&self) -> bool {
        self.converged_columns.iter().all(|&c| c)
    }

    /// Traffic of the iterations alone.
    pub fn iteration_traffic(&self) -> TrafficCounter {
        self.traffic.since(&self.setup_traffic)
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{method} requires a preconditioner")]
    MissingPreconditioner { method: MethodId },
    #[error("{method} takes no preconditioner")]
    UnexpectedPreconditioner { method: MethodId },
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("{info}")]
    Breakdown {
        info: BreakdownInfo,
        report: Box<SolveReport>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(m: MethodId, f: Formulation) -> (u64, u64) {
        let s = method_schedule(m, f);
        (s.reads(), s.writes())
    }

    #[test]
    fn schedules_reproduce_traffic_table() {
        use Formulation::{Basic, Merged};
        use MethodId::*;
        let table = [
            (BiCGStab, (18, 4), (14, 4)),
            (IBiCGStab, (27, 6), (14, 6)),
            (PipeBiCGStab, (34, 9), (18, 8)),
            (PBiCGStab, (18, 4), (15, 4)),
            (RBiCGStab, (22, 6), (15, 6)),
            (PPipeBiCGStab, (43, 13), (23, 11)),
        ];
        for (m, basic, merged) in table {
            assert_eq!(pair(m, Basic), basic, "{m} basic");
            assert_eq!(pair(m, Merged), merged, "{m} merged");
        }
    }

    #[test]
    fn schedule_operation_counts() {
        use MethodId::*;
        use Overlap as O;
        let expect: [(MethodId, u64, usize, usize, Vec<(usize, Overlap)>); 6] = [
            (BiCGStab, 18, 2, 0, vec![(1, O::None), (3, O::None), (1, O::None)]),
            (IBiCGStab, 20, 2, 0, vec![(7, O::None)]),
            (PipeBiCGStab, 26, 2, 0, vec![(3, O::Spmv), (4, O::Spmv)]),
            (PBiCGStab, 19, 2, 2, vec![(1, O::None), (3, O::None), (1, O::None)]),
            (RBiCGStab, 21, 2, 2, vec![(1, O::Precond), (4, O::Precond)]),
            (
                PPipeBiCGStab,
                34,
                2,
                2,
                vec![(3, O::SpmvAndPrecond), (4, O::SpmvAndPrecond)],
            ),
        ];
        for (m, vec, spmv, prec, red) in expect {
            let s = method_schedule(m, Formulation::Merged);
            assert_eq!(s.vector_transfers(), vec, "{m}");
            assert_eq!(s.spmv_count(), spmv, "{m}");
            assert_eq!(s.precond_count(), prec, "{m}");
            assert_eq!(s.reductions(), red, "{m}");
            // splitting never changes the reduction structure
            assert_eq!(method_schedule(m, Formulation::Basic).reductions(), red, "{m}");
        }
    }

    #[test]
    fn parse_ids() {
        assert_eq!("PipeBiCGStab".parse::<MethodId>(), Ok(MethodId::PipeBiCGStab));
        let err = "cg".parse::<MethodId>().unwrap_err();
        assert!(err.to_string().contains("ppipebicgstab"));
        assert_eq!("Basic".parse::<Formulation>(), Ok(Formulation::Basic));
        assert!("fused".parse::<Formulation>().is_err());
        for m in MethodId::ALL {
            assert_eq!(m.name().parse::<MethodId>(), Ok(m));
        }
    }
}
