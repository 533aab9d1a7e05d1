//! Runs a method program over a workspace.

use crate::kernels::{
    execute_group, execute_group_with, split_basic, StatementGroup, TrafficCounter, Workspace,
};
use crate::sparse::{spmv, spmv_transpose, ColumnScalars, CoreError, CsrMatrix, MultiVector};

use super::program::{Op, ScalarCtx, B, BNORM2, R, RES2, X};
use super::{
    BreakdownInfo, Formulation, MethodId, SolveError, SolveOptions, SolveReport, StopMode,
    Tolerance,
};

enum Flow {
    Continue,
    Converged,
}

struct Run<'a> {
    a: &'a CsrMatrix,
    opts: &'a SolveOptions,
    ws: Workspace,
    counter: TrafficCounter,
    converged: Vec<bool>,
    eps2: Vec<f64>,
    history: Vec<ColumnScalars>,
    merged_history: Vec<ColumnScalars>,
    true_history: Vec<ColumnScalars>,
    iteration: usize,
}

impl Run<'_> {
    fn fixed(&self) -> bool {
        matches!(self.opts.mode, StopMode::Fixed { .. })
    }

    fn run_group(&mut self, g: &StatementGroup) -> Result<(), SolveError> {
        match self.opts.formulation {
            Formulation::Merged => {
                execute_group(g, &mut self.ws, &mut self.counter)?;
            }
            Formulation::Basic => {
                for piece in split_basic(g) {
                    execute_group_with(&piece, &mut self.ws, &mut self.counter, false)?;
                }
                self.counter
                    .record_reduction(g.dot_count(), self.ws.n_cols());
            }
        }
        Ok(())
    }

    fn run_op(&mut self, op: &Op) -> Result<Flow, SolveError> {
        match op {
            Op::Spmv { src, dst } | Op::SpmvTranspose { src, dst } => {
                let mut out = self.ws.take(*dst)?;
                let x = self.ws.vector(*src)?;
                let r = if matches!(op, Op::Spmv { .. }) {
                    spmv(self.a, x, &mut out, &mut self.counter)
                } else {
                    spmv_transpose(self.a, x, &mut out, &mut self.counter)
                };
                self.ws.bind(*dst, out);
                r?;
            }
            Op::Precond { src, dst } => {
                let p = self.opts.precond.expect("checked before the solve");
                let mut out = self.ws.take(*dst)?;
                p.apply(self.ws.vector(*src)?, &mut out, &mut self.counter);
                self.ws.bind(*dst, out);
            }
            Op::Group { group, .. } => self.run_group(group)?,
            Op::Scalars(stage) => {
                let mut ctx = ScalarCtx {
                    ws: &mut self.ws,
                    converged: &self.converged,
                    iteration: self.iteration,
                };
                stage(&mut ctx).map_err(|info| self.breakdown(info))?;
            }
            Op::Check { branch } => {
                let res2 = self.ws.scalar(RES2)?.clone();
                self.merged_history.push(res2.clone());
                let last = self.history.last().expect("setup entry").clone();
                let mut norms = ColumnScalars::zeros(res2.len());
                for c in 0..res2.len() {
                    if !res2[c].is_finite() {
                        let info = BreakdownInfo {
                            iteration: self.iteration,
                            column: c,
                            scalar: "residual norm",
                        };
                        return Err(self.breakdown(info));
                    }
                    norms[c] = if self.converged[c] {
                        last[c]
                    } else {
                        res2[c].max(0.0).sqrt()
                    };
                }
                self.history.push(norms);
                if !self.fixed() {
                    for c in 0..res2.len() {
                        if !self.converged[c] && (res2[c] < self.eps2[c] || res2[c] == 0.0) {
                            self.converged[c] = true;
                        }
                    }
                    if self.converged.iter().all(|&c| c) {
                        for g in branch {
                            self.run_group(g)?;
                        }
                        return Ok(Flow::Converged);
                    }
                }
            }
        }
        Ok(Flow::Continue)
    }

    fn breakdown(&mut self, info: BreakdownInfo) -> SolveError {
        // drop the partial entry of the failing iteration
        self.history.truncate(self.iteration + 1);
        self.merged_history.truncate(self.iteration);
        self.true_history.truncate(self.iteration);
        let mut report = self.report();
        report.breakdown = Some(info);
        SolveError::Breakdown {
            info,
            report: Box::new(report),
        }
    }

    fn report(&mut self) -> SolveReport {
        let x = self.ws.vector(X).expect("solution slot").clone();
        let b = self.ws.vector(B).expect("rhs slot");
        SolveReport {
            method: self.opts.method,
            formulation: self.opts.formulation,
            iterations: self.history.len() - 1,
            converged_columns: self.converged.clone(),
            residual_history: self.history.clone(),
            true_residual: true_residual(self.a, b, &x),
            x,
            traffic: self.counter.clone(),
            setup_traffic: TrafficCounter::default(),
            true_residual_sq_history: self
                .opts
                .track_true_residual
                .then(|| self.true_history.clone()),
            merged_residual_sq_history: self.merged_history.clone(),
            breakdown: None,
        }
    }
}

/// `||b - A x||` per column, outside any traffic tally.
fn true_residual(a: &CsrMatrix, b: &MultiVector, x: &MultiVector) -> ColumnScalars {
    let mut ax = MultiVector::zeros(x.n_rows(), x.n_cols());
    spmv(a, x, &mut ax, &mut TrafficCounter::default()).expect("shapes checked");
    let m = x.n_cols();
    let mut sums = vec![0.0; m];
    for (b_row, ax_row) in b.data().chunks_exact(m.max(1)).zip(ax.data().chunks_exact(m.max(1))) {
        for c in 0..m {
            let d = b_row[c] - ax_row[c];
            sums[c] += d * d;
        }
    }
    ColumnScalars(sums.into_iter().map(f64::sqrt).collect())
}

fn check_inputs(
    a: &CsrMatrix,
    b: &MultiVector,
    x0: &MultiVector,
    opts: &SolveOptions,
) -> Result<(), SolveError> {
    let n = a.n_rows();
    if b.n_rows() != n || x0.shape() != b.shape() || b.n_cols() == 0 {
        return Err(CoreError::DimensionMismatch {
            op: "solve",
            expected: format!("b and x0 with {n} rows and equal column counts >= 1"),
            got: format!("b {:?}, x0 {:?}", b.shape(), x0.shape()),
        }
        .into());
    }
    match (opts.method.is_preconditioned(), opts.precond) {
        (true, None) => return Err(SolveError::MissingPreconditioner { method: opts.method }),
        (false, Some(_)) => {
            return Err(SolveError::UnexpectedPreconditioner { method: opts.method })
        }
        _ => {}
    }
    if let StopMode::Converge { .. } = opts.mode {
        let tol = match opts.tol {
            Tolerance::Relative(t) | Tolerance::Absolute(t) => t,
        };
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(SolveError::InvalidOption(format!(
                "tolerance must be positive and finite, got {tol}"
            )));
        }
    }
    Ok(())
}

/// Solves `A X = B` for all columns of `B`, starting from `x0`.
///
/// Every column carries its own scalars. In converge mode a column whose
/// merged residual test passes is frozen (its step lengths become zero)
/// while the remaining columns keep iterating.
pub fn solve(
    a: &CsrMatrix,
    b: &MultiVector,
    x0: &MultiVector,
    opts: &SolveOptions,
) -> Result<SolveReport, SolveError> {
    check_inputs(a, b, x0, opts)?;
    let (n, m) = b.shape();
    let program = opts.method.program();
    let mut ws = Workspace::new(n, m, program.n_scalars as usize);
    for id in 0..program.n_vectors {
        ws.alloc(crate::kernels::VecId(id));
    }
    ws.bind(X, x0.clone());
    ws.bind(B, b.clone());
    let mut run = Run {
        a,
        opts,
        ws,
        counter: TrafficCounter::default(),
        converged: vec![false; m],
        eps2: vec![0.0; m],
        history: Vec::new(),
        merged_history: Vec::new(),
        true_history: Vec::new(),
        iteration: 0,
    };

    // the setup residual entry must exist before a setup breakdown is reported
    let mut setup_flow = Ok(Flow::Continue);
    for op in &program.setup {
        if let Op::Scalars(_) = op {
            let res2 = run.ws.scalar(RES2)?.clone();
            run.history = vec![ColumnScalars(res2.iter().map(|v| v.max(0.0).sqrt()).collect())];
        }
        setup_flow = run.run_op(op);
        if setup_flow.is_err() {
            break;
        }
    }
    setup_flow?;
    let setup_traffic = run.counter.clone();

    let res2 = run.ws.scalar(RES2)?.clone();
    let bnorm2 = run.ws.scalar(BNORM2)?.clone();
    for c in 0..m {
        run.eps2[c] = match opts.tol {
            Tolerance::Relative(t) => t * t * bnorm2[c],
            Tolerance::Absolute(t) => t * t,
        };
    }
    let limit = match opts.mode {
        StopMode::Converge { max_iters } => {
            for c in 0..m {
                run.converged[c] = res2[c] < run.eps2[c] || res2[c] == 0.0;
            }
            max_iters
        }
        StopMode::Fixed { iters } => iters,
    };

    'outer: while run.iteration < limit && !run.converged.iter().all(|&c| c) {
        for op in &program.iteration {
            if let Flow::Converged = run.run_op(op)? {
                run.iteration += 1;
                run.record_true_residual()?;
                break 'outer;
            }
        }
        run.iteration += 1;
        run.record_true_residual()?;
    }

    let mut report = run.report();
    report.setup_traffic = setup_traffic;
    Ok(report)
}

impl Run<'_> {
    fn record_true_residual(&mut self) -> Result<(), SolveError> {
        if self.opts.track_true_residual {
            let r = self.ws.vector(R)?;
            let m = r.n_cols();
            let mut sums = vec![0.0; m];
            for row in r.data().chunks_exact(m) {
                for c in 0..m {
                    sums[c] += row[c] * row[c];
                }
            }
            self.true_history.push(ColumnScalars(sums));
        }
        Ok(())
    }
}

/// Largest deviation between the merged squared-residual quantity and the
/// directly computed `(r, r)` over a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualIdentity {
    pub iterations: usize,
    /// `max_j |res2_j - (r_{j+1}, r_{j+1})|` per column.
    pub max_abs_deviation: ColumnScalars,
    /// The same divided by `(r_0, r_0)` per column.
    pub max_rel_deviation: ColumnScalars,
}

impl ResidualIdentity {
    pub fn worst_relative(&self) -> f64 {
        self.max_rel_deviation.iter().cloned().fold(0.0, f64::max)
    }
}

/// Runs `iters` fixed iterations of a merged method with the true residual
/// tracked and compares it with the merged convergence quantity.
pub fn verify_residual_identity(
    a: &CsrMatrix,
    b: &MultiVector,
    x0: &MultiVector,
    method: MethodId,
    iters: usize,
) -> Result<ResidualIdentity, SolveError> {
    let opts = SolveOptions::new(method)
        .mode(StopMode::Fixed { iters })
        .track_true_residual(true);
    let report = solve(a, b, x0, &opts)?;
    let m = b.n_cols();
    let direct = report.true_residual_sq_history.as_deref().unwrap_or(&[]);
    let mut abs = ColumnScalars::zeros(m);
    for (merged, direct) in report.merged_residual_sq_history.iter().zip(direct) {
        for c in 0..m {
            abs[c] = f64::max(abs[c], (merged[c] - direct[c]).abs());
        }
    }
    let r0 = &report.residual_history[0];
    let rel = ColumnScalars((0..m).map(|c| abs[c] / (r0[c] * r0[c])).collect());
    Ok(ResidualIdentity {
        iterations: report.iterations,
        max_abs_deviation: abs,
        max_rel_deviation: rel,
    })
}
