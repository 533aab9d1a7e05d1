//! Single-pass execution of statement groups.
//!
//! Rows are processed in fixed blocks of [`CHUNK_ROWS`]. Every vector the
//! group loads is copied into a block-local buffer once, all statements run
//! on the buffers, and every produced vector is stored once. Dot products
//! keep four row-interleaved partial sums per column inside a block and
//! combine the blocks in row order, so results do not depend on the thread
//! count or on how many columns share the block.

use rayon::prelude::*;

use super::{analyze_traffic, Coef, GroupTraffic, KernelError, ScalarId, Statement, StatementGroup, TrafficCounter, VecId};
use crate::sparse::{ColumnScalars, MultiVector};

pub(crate) const CHUNK_ROWS: usize = 512;

/// Named vector and scalar slots shared by the groups of one computation.
#[derive(Clone, Debug)]
pub struct Workspace {
    n_rows: usize,
    n_cols: usize,
    vectors: Vec<Option<MultiVector>>,
    scalars: Vec<ColumnScalars>,
}

impl Workspace {
    /// Empty vector slots and `n_scalars` zeroed scalar slots.
    pub fn new(n_rows: usize, n_cols: usize, n_scalars: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            vectors: Vec::new(),
            scalars: vec![ColumnScalars::zeros(n_cols); n_scalars],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn bind(&mut self, id: VecId, v: MultiVector) {
        let k = id.0 as usize;
        if self.vectors.len() <= k {
            self.vectors.resize(k + 1, None);
        }
        self.vectors[k] = Some(v);
    }

    /// Binds a zero vector of the workspace shape to `id`.
    pub fn alloc(&mut self, id: VecId) {
        self.bind(id, MultiVector::zeros(self.n_rows, self.n_cols));
    }

    pub fn is_bound(&self, id: VecId) -> bool {
        matches!(self.vectors.get(id.0 as usize), Some(Some(_)))
    }

    pub fn vector(&self, id: VecId) -> Result<&MultiVector, KernelError> {
        self.vectors
            .get(id.0 as usize)
            .and_then(Option::as_ref)
            .ok_or(KernelError::UnboundVector(id))
    }

    pub fn vector_mut(&mut self, id: VecId) -> Result<&mut MultiVector, KernelError> {
        self.vectors
            .get_mut(id.0 as usize)
            .and_then(Option::as_mut)
            .ok_or(KernelError::UnboundVector(id))
    }

    /// Removes the vector from its slot, leaving it unbound.
    pub fn take(&mut self, id: VecId) -> Result<MultiVector, KernelError> {
        self.vectors
            .get_mut(id.0 as usize)
            .and_then(Option::take)
            .ok_or(KernelError::UnboundVector(id))
    }

    pub fn scalar(&self, id: ScalarId) -> Result<&ColumnScalars, KernelError> {
        self.scalars.get(id.0 as usize).ok_or(KernelError::UnboundScalar(id))
    }

    pub fn scalar_mut(&mut self, id: ScalarId) -> Result<&mut ColumnScalars, KernelError> {
        self.scalars
            .get_mut(id.0 as usize)
            .ok_or(KernelError::UnboundScalar(id))
    }

    pub fn set_scalar(&mut self, id: ScalarId, values: ColumnScalars) -> Result<(), KernelError> {
        *self.scalar_mut(id)? = values;
        Ok(())
    }

    fn coef(&self, c: Coef) -> Result<Vec<f64>, KernelError> {
        let m = self.n_cols;
        Ok(match c {
            Coef::One => vec![1.0; m],
            Coef::MinusOne => vec![-1.0; m],
            Coef::Scalar(id) => self.scalar(id)?.0.clone(),
            Coef::Neg(id) => self.scalar(id)?.iter().map(|v| -v).collect(),
        })
    }
}

type CompiledTerms = Vec<(Vec<f64>, usize)>;

enum Op {
    Update {
        out: usize,
        terms: CompiledTerms,
        nested: Option<(Vec<f64>, CompiledTerms)>,
    },
    Dot {
        lhs: usize,
        rhs: usize,
        slot: usize,
    },
}

struct Scratch {
    slots: Vec<Vec<f64>>,
    acc: Vec<f64>,
    inner: Vec<f64>,
}

/// Runs `group` in one pass and records its traffic and reduction.
pub fn execute_group(
    group: &StatementGroup,
    ws: &mut Workspace,
    counter: &mut TrafficCounter,
) -> Result<GroupTraffic, KernelError> {
    execute_group_with(group, ws, counter, true)
}

/// Like [`execute_group`]; `record_reduction = false` leaves the reduction
/// tally to the caller, which is how split groups share one reduction.
pub fn execute_group_with(
    group: &StatementGroup,
    ws: &mut Workspace,
    counter: &mut TrafficCounter,
    record_reduction: bool,
) -> Result<GroupTraffic, KernelError> {
    let traffic = analyze_traffic(group)?;
    if group.is_empty() {
        return Ok(traffic);
    }
    let (n, m) = (ws.n_rows, ws.n_cols);
    let plan = group.vector_plan();
    for &(id, _, _) in &plan {
        let v = ws.vector(id)?;
        if v.shape() != (n, m) {
            return Err(KernelError::ShapeMismatch {
                id,
                expected: (n, m),
                got: v.shape(),
            });
        }
    }
    let slot = |id: VecId| plan.iter().position(|p| p.0 == id).expect("planned id");

    let compile = |terms: &[super::Term]| -> Result<CompiledTerms, KernelError> {
        terms.iter().map(|t| Ok((ws.coef(t.coef)?, slot(t.vec)))).collect()
    };
    let mut ops = Vec::with_capacity(group.statements.len());
    let mut dot_targets: Vec<ScalarId> = Vec::new();
    for st in &group.statements {
        ops.push(match st {
            Statement::Update(u) => Op::Update {
                out: slot(u.out),
                terms: compile(&u.terms)?,
                nested: match &u.nested {
                    Some((scale, inner)) => Some((ws.coef(*scale)?, compile(inner)?)),
                    None => None,
                },
            },
            Statement::Dot { lhs, rhs, dst } => {
                ws.scalar(*dst)?;
                dot_targets.push(*dst);
                Op::Dot {
                    lhs: slot(*lhs),
                    rhs: slot(*rhs),
                    slot: dot_targets.len() - 1,
                }
            }
        });
    }

    let partials = if n == 0 || m == 0 {
        Vec::new()
    } else {
        run_chunks(ws, &plan, &ops, dot_targets.len())
    };

    for (k, dst) in dot_targets.iter().enumerate() {
        let mut total = vec![0.0; m];
        for part in &partials {
            for (t, p) in total.iter_mut().zip(&part[k * m..(k + 1) * m]) {
                *t += p;
            }
        }
        ws.set_scalar(*dst, ColumnScalars(total))?;
    }
    counter.record_group(traffic);
    if record_reduction {
        counter.record_reduction(dot_targets.len(), m);
    }
    Ok(traffic)
}

fn run_chunks(ws: &mut Workspace, plan: &[(VecId, bool, bool)], ops: &[Op], n_dots: usize) -> Vec<Vec<f64>> {
    let (n, m) = (ws.n_rows, ws.n_cols);
    let chunk_len = CHUNK_ROWS * m;
    let n_chunks = n.div_ceil(CHUNK_ROWS);

    let mut read_only: Vec<Option<&[f64]>> = vec![None; plan.len()];
    let mut per_chunk: Vec<Vec<Option<&mut [f64]>>> =
        (0..n_chunks).map(|_| (0..plan.len()).map(|_| None).collect()).collect();
    for (idx, v) in ws.vectors.iter_mut().enumerate() {
        let Some(k) = plan.iter().position(|p| p.0 .0 as usize == idx) else {
            continue;
        };
        let v = v.as_mut().expect("bound vectors were checked");
        if plan[k].2 {
            for (c, ch) in v.data_mut().chunks_mut(chunk_len).enumerate() {
                per_chunk[c][k] = Some(ch);
            }
        } else {
            read_only[k] = Some(&*v.data());
        }
    }
    let read_only = &read_only;

    per_chunk
        .into_par_iter()
        .enumerate()
        .map_init(
            || Scratch {
                slots: vec![vec![0.0; chunk_len]; plan.len()],
                acc: vec![0.0; chunk_len],
                inner: vec![0.0; chunk_len],
            },
            |scr, (c, mut outs)| {
                let start = c * chunk_len;
                let len = (n * m - start).min(chunk_len);
                for (k, p) in plan.iter().enumerate() {
                    if p.1 {
                        let src: &[f64] = match &outs[k] {
                            Some(o) => o,
                            None => &read_only[k].expect("read-only source")[start..start + len],
                        };
                        scr.slots[k][..len].copy_from_slice(src);
                    }
                }
                let mut partial = vec![0.0; n_dots * m];
                for op in ops {
                    match op {
                        Op::Update { out, terms, nested } => {
                            let Scratch { slots, acc, inner } = scr;
                            let acc = &mut acc[..len];
                            let has_outer = combine(acc, terms, slots, m);
                            if let Some((scale, inner_terms)) = nested {
                                let inner = &mut inner[..len];
                                combine(inner, inner_terms, slots, m);
                                axpy_cols(acc, inner, scale, m, !has_outer);
                            }
                            std::mem::swap(&mut scr.slots[*out], &mut scr.acc);
                        }
                        Op::Dot { lhs, rhs, slot } => {
                            let out = &mut partial[slot * m..(slot + 1) * m];
                            dot_cols(out, &scr.slots[*lhs][..len], &scr.slots[*rhs][..len], m);
                        }
                    }
                }
                for (k, o) in outs.iter_mut().enumerate() {
                    if let Some(o) = o {
                        o.copy_from_slice(&scr.slots[k][..len]);
                    }
                }
                partial
            },
        )
        .collect()
}

/// `dst = sum(coef_k * slot_k)`; returns false when `terms` is empty.
fn combine(dst: &mut [f64], terms: &CompiledTerms, slots: &[Vec<f64>], m: usize) -> bool {
    for (k, (coef, src)) in terms.iter().enumerate() {
        axpy_cols(dst, &slots[*src][..dst.len()], coef, m, k == 0);
    }
    !terms.is_empty()
}

/// `dst (+)= coef[col] * src` with the coefficient chosen per column.
#[inline]
fn axpy_cols(dst: &mut [f64], src: &[f64], coef: &[f64], m: usize, assign: bool) {
    if m == 1 {
        let k = coef[0];
        if assign {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = k * s);
        } else {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += k * s);
        }
        return;
    }
    for (d_row, s_row) in dst.chunks_exact_mut(m).zip(src.chunks_exact(m)) {
        if assign {
            for c in 0..m {
                d_row[c] = coef[c] * s_row[c];
            }
        } else {
            for c in 0..m {
                d_row[c] += coef[c] * s_row[c];
            }
        }
    }
}

/// Adds the block's per-column dot products of `a` and `b` into `out`.
/// Row `r` of the block goes to partial sum `r % 4`.
fn dot_cols(out: &mut [f64], a: &[f64], b: &[f64], m: usize) {
    let mut lanes = vec![0.0; 4 * m];
    if m == 1 {
        let mut l = [0.0f64; 4];
        let mut ca = a.chunks_exact(4);
        let mut cb = b.chunks_exact(4);
        for (x, y) in (&mut ca).zip(&mut cb) {
            for j in 0..4 {
                l[j] += x[j] * y[j];
            }
        }
        for (j, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
            l[j] += x * y;
        }
        lanes.copy_from_slice(&l);
    } else {
        for (r, (x, y)) in a.chunks_exact(m).zip(b.chunks_exact(m)).enumerate() {
            let lane = &mut lanes[(r & 3) * m..(r & 3) * m + m];
            for c in 0..m {
                lane[c] += x[c] * y[c];
            }
        }
    }
    for c in 0..m {
        out[c] += (lanes[c] + lanes[m + c]) + (lanes[2 * m + c] + lanes[3 * m + c]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const X: VecId = VecId(1);
    const Y: VecId = VecId(2);
    const Z: VecId = VecId(3);
    const A: ScalarId = ScalarId(0);
    const B: ScalarId = ScalarId(1);
    const C: ScalarId = ScalarId(2);

    fn filled(n: usize, m: usize, v: f64) -> MultiVector {
        MultiVector::from_fn(n, m, |_, _| v)
    }

    #[test]
    fn fused_three_updates_use_fresh_values() {
        let mut ws = Workspace::new(1, 1, 3);
        for id in [X, Y, Z] {
            ws.bind(id, filled(1, 1, 1.0));
        }
        for s in [A, B, C] {
            ws.set_scalar(s, ColumnScalars(vec![1.0])).unwrap();
        }
        let g = StatementGroup::new()
            .update(Y, &[(Coef::Scalar(A), X), (Coef::Scalar(B), Y)])
            .update(Z, &[(Coef::Scalar(B), X), (Coef::Scalar(A), Z)])
            .update(Z, &[(Coef::Scalar(B), Y), (Coef::Scalar(C), Z)]);
        let mut ctr = TrafficCounter::default();
        let t = execute_group(&g, &mut ws, &mut ctr).unwrap();
        assert_eq!(ws.vector(Y).unwrap().data(), &[2.0]);
        assert_eq!(ws.vector(Z).unwrap().data(), &[4.0]);
        assert_eq!((t.reads, t.writes), (3, 2));
        assert_eq!(ctr.vector_transfers(), 5);
        assert!(ctr.reductions.is_empty());
    }

    #[test]
    fn empty_group_leaves_counter_alone() {
        let mut ws = Workspace::new(4, 1, 0);
        let mut ctr = TrafficCounter::default();
        execute_group(&StatementGroup::new(), &mut ws, &mut ctr).unwrap();
        assert_eq!(ctr, TrafficCounter::default());
    }

    #[test]
    fn self_dot_per_column() {
        let mut ws = Workspace::new(10, 2, 1);
        ws.bind(X, filled(10, 2, 1.0));
        let mut ctr = TrafficCounter::default();
        execute_group(&StatementGroup::new().dot(X, X, ScalarId(0)), &mut ws, &mut ctr).unwrap();
        assert_eq!(ws.scalar(ScalarId(0)).unwrap().0, vec![10.0, 10.0]);
        assert_eq!(ctr.reductions.len(), 1);
        assert_eq!(ctr.vector_reads, 1);
    }

    #[test]
    fn dots_span_many_chunks() {
        let n = 3 * CHUNK_ROWS + 17;
        let mut ws = Workspace::new(n, 3, 1);
        ws.bind(X, MultiVector::from_fn(n, 3, |i, c| (i % 5) as f64 + c as f64));
        ws.bind(Y, filled(n, 3, 2.0));
        let mut ctr = TrafficCounter::default();
        execute_group(&StatementGroup::new().dot(X, Y, ScalarId(0)), &mut ws, &mut ctr).unwrap();
        let x = ws.vector(X).unwrap();
        for c in 0..3 {
            let expect: f64 = (0..n).map(|i| 2.0 * x.get(i, c)).sum();
            assert_eq!(ws.scalar(ScalarId(0)).unwrap()[c], expect);
        }
    }

    #[test]
    fn unbound_and_shape_errors() {
        let mut ws = Workspace::new(4, 1, 1);
        ws.bind(X, filled(4, 1, 1.0));
        let mut ctr = TrafficCounter::default();
        let g = StatementGroup::new().update(Y, &[(Coef::One, Z)]);
        assert_eq!(
            execute_group(&g, &mut ws, &mut ctr),
            Err(KernelError::UnboundVector(Z))
        );
        ws.bind(Y, filled(4, 2, 0.0));
        let g = StatementGroup::new().update(Y, &[(Coef::One, X)]);
        assert!(matches!(
            execute_group(&g, &mut ws, &mut ctr),
            Err(KernelError::ShapeMismatch { id: Y, .. })
        ));
        let g = StatementGroup::new().dot(X, X, ScalarId(7));
        assert_eq!(
            execute_group(&g, &mut ws, &mut ctr),
            Err(KernelError::UnboundScalar(ScalarId(7)))
        );
        let g = StatementGroup::new().update(X, &[(Coef::Scalar(ScalarId(9)), X)]);
        assert_eq!(
            execute_group(&g, &mut ws, &mut ctr),
            Err(KernelError::UnboundScalar(ScalarId(9)))
        );
        assert_eq!(ctr, TrafficCounter::default());
    }

    #[test]
    fn nested_only_update() {
        let mut ws = Workspace::new(3, 1, 1);
        ws.bind(X, filled(3, 1, 2.0));
        ws.bind(Y, filled(3, 1, 5.0));
        ws.set_scalar(A, ColumnScalars(vec![0.5])).unwrap();
        let g = StatementGroup::new().update_nested(
            Z,
            &[],
            Coef::Scalar(A),
            &[(Coef::One, Y), (Coef::MinusOne, X)],
        );
        ws.alloc(Z);
        execute_group(&g, &mut ws, &mut TrafficCounter::default()).unwrap();
        assert_eq!(ws.vector(Z).unwrap().data(), &[1.5, 1.5, 1.5]);
    }
}
