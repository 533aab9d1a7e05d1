//! Fused vector-statement groups and their memory-traffic accounting.
//!
//! A [`StatementGroup`] is a list of elementwise vector updates and dot
//! products that run in one pass over the row index. The traffic of a group
//! is counted in whole-vector transfers (`8 N m` bytes each):
//!
//! * a vector is read once if some statement consumes it before any earlier
//!   statement of the same group produced it (values produced inside the
//!   group stay in registers);
//! * a vector is written once if any statement produces it.
//!
//! [`split_basic`] turns a merged group into the unfused sequence of
//! singleton groups, breaking updates that touch four vectors into two
//! three-vector calls.

mod exec;
mod fusion;

use std::collections::BTreeSet;

use thiserror::Error;

pub use exec::{execute_group, execute_group_with, Workspace};
pub use fusion::{fusion_bench, fusion_groups, last_level_cache_bytes, FusionReport};

/// Index of a [`crate::MultiVector`] slot in a [`Workspace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VecId(pub u16);

/// Index of a [`crate::ColumnScalars`] slot in a [`Workspace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScalarId(pub u16);

/// Slot reserved for the temporary introduced by [`split_basic`].
pub const SPLIT_TEMP: VecId = VecId(0);

/// Statements may combine at most this many distinct vectors, output
/// included, in one call of the unfused formulation.
pub const BASIC_MAX_VECTORS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("malformed group: {0}")]
    Malformed(String),
    #[error("vector slot {0:?} is not bound")]
    UnboundVector(VecId),
    #[error("scalar slot {0:?} is not bound")]
    UnboundScalar(ScalarId),
    #[error("vector slot {id:?} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        id: VecId,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Per-column coefficient of a term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coef {
    One,
    MinusOne,
    Scalar(ScalarId),
    Neg(ScalarId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coef: Coef,
    pub vec: VecId,
}

impl Term {
    pub fn new(coef: Coef, vec: VecId) -> Self {
        Self { coef, vec }
    }
}

/// `out = sum(terms) + nested.0 * sum(nested.1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub out: VecId,
    pub terms: Vec<Term>,
    pub nested: Option<(Coef, Vec<Term>)>,
}

impl Update {
    /// Every vector on the right-hand side, in evaluation order.
    pub fn operands(&self) -> impl Iterator<Item = VecId> + '_ {
        self.terms
            .iter()
            .chain(self.nested.iter().flat_map(|(_, t)| t.iter()))
            .map(|t| t.vec)
    }

    fn distinct_vectors(&self) -> usize {
        let mut ids: BTreeSet<VecId> = self.operands().collect();
        ids.insert(self.out);
        ids.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    Update(Update),
    /// Column-wise dot product stored into a scalar slot.
    Dot { lhs: VecId, rhs: VecId, dst: ScalarId },
}

impl Statement {
    fn inputs(&self) -> Vec<VecId> {
        match self {
            Statement::Update(u) => u.operands().collect(),
            Statement::Dot { lhs, rhs, .. } => vec![*lhs, *rhs],
        }
    }

    fn output(&self) -> Option<VecId> {
        match self {
            Statement::Update(u) => Some(u.out),
            Statement::Dot { .. } => None,
        }
    }
}

/// Statements executed together in a single pass over the rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatementGroup {
    pub statements: Vec<Statement>,
}

impl StatementGroup {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `out = sum(terms)`.
    pub fn update(mut self, out: VecId, terms: &[(Coef, VecId)]) -> Self {
        self.statements.push(Statement::Update(Update {
            out,
            terms: terms.iter().map(|&(c, v)| Term::new(c, v)).collect(),
            nested: None,
        }));
        self
    }

    /// Appends `out = sum(terms) + scale * sum(inner)`.
    pub fn update_nested(
        mut self,
        out: VecId,
        terms: &[(Coef, VecId)],
        scale: Coef,
        inner: &[(Coef, VecId)],
    ) -> Self {
        self.statements.push(Statement::Update(Update {
            out,
            terms: terms.iter().map(|&(c, v)| Term::new(c, v)).collect(),
            nested: Some((scale, inner.iter().map(|&(c, v)| Term::new(c, v)).collect())),
        }));
        self
    }

    pub fn dot(mut self, lhs: VecId, rhs: VecId, dst: ScalarId) -> Self {
        self.statements.push(Statement::Dot { lhs, rhs, dst });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Number of dot products, i.e. scalars per column the group reduces.
    pub fn dot_count(&self) -> usize {
        self.statements
            .iter()
            .filter(|s| matches!(s, Statement::Dot { .. }))
            .count()
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        // reductions complete only after the pass
        let mut reduced = BTreeSet::new();
        for (k, st) in self.statements.iter().enumerate() {
            if let Statement::Dot { dst, .. } = st {
                reduced.insert(*dst);
            }
            if let Statement::Update(u) = st {
                let late = u
                    .terms
                    .iter()
                    .map(|t| t.coef)
                    .chain(u.nested.iter().flat_map(|(s, t)| std::iter::once(*s).chain(t.iter().map(|t| t.coef))))
                    .find_map(|c| match c {
                        Coef::Scalar(id) | Coef::Neg(id) if reduced.contains(&id) => Some(id),
                        _ => None,
                    });
                if let Some(id) = late {
                    return Err(KernelError::Malformed(format!(
                        "statement {k} uses {id:?} reduced earlier in the same group"
                    )));
                }
                if u.terms.is_empty() && u.nested.is_none() {
                    return Err(KernelError::Malformed(format!(
                        "statement {k} updates {:?} from no operands",
                        u.out
                    )));
                }
                if matches!(&u.nested, Some((_, inner)) if inner.is_empty()) {
                    return Err(KernelError::Malformed(format!(
                        "statement {k} has an empty nested combination"
                    )));
                }
                let distinct: BTreeSet<VecId> = u.operands().collect();
                if distinct.len() > 4 {
                    return Err(KernelError::Malformed(format!(
                        "statement {k} combines {} operand vectors (at most 4)",
                        distinct.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Vector ids in first-use order, with whether each is loaded from
    /// memory and whether it is stored back.
    pub(crate) fn vector_plan(&self) -> Vec<(VecId, bool, bool)> {
        let mut plan: Vec<(VecId, bool, bool)> = Vec::new();
        let mut produced = BTreeSet::new();
        for st in &self.statements {
            for id in st.inputs() {
                match plan.iter_mut().find(|(v, _, _)| *v == id) {
                    Some(entry) => entry.1 |= !produced.contains(&id),
                    None => plan.push((id, !produced.contains(&id), false)),
                }
            }
            if let Some(out) = st.output() {
                produced.insert(out);
                match plan.iter_mut().find(|(v, _, _)| *v == out) {
                    Some(entry) => entry.2 = true,
                    None => plan.push((out, false, true)),
                }
            }
        }
        plan
    }
}

/// Vector reads and writes of one group execution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroupTraffic {
    pub reads: u64,
    pub writes: u64,
}

impl GroupTraffic {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }
}

impl std::ops::Add for GroupTraffic {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            reads: self.reads + o.reads,
            writes: self.writes + o.writes,
        }
    }
}

impl std::iter::Sum for GroupTraffic {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

pub fn analyze_traffic(group: &StatementGroup) -> Result<GroupTraffic, KernelError> {
    group.validate()?;
    let plan = group.vector_plan();
    Ok(GroupTraffic {
        reads: plan.iter().filter(|p| p.1).count() as u64,
        writes: plan.iter().filter(|p| p.2).count() as u64,
    })
}

/// Unfused equivalent of `group`: one group per statement, with updates
/// touching more than [`BASIC_MAX_VECTORS`] vectors folded through
/// [`SPLIT_TEMP`].
pub fn split_basic(group: &StatementGroup) -> Vec<StatementGroup> {
    let mut out = Vec::with_capacity(group.statements.len());
    for st in &group.statements {
        match st {
            Statement::Update(u) if u.distinct_vectors() > BASIC_MAX_VECTORS => {
                for piece in split_update(u) {
                    out.push(StatementGroup {
                        statements: vec![Statement::Update(piece)],
                    });
                }
            }
            _ => out.push(StatementGroup {
                statements: vec![st.clone()],
            }),
        }
    }
    out
}

fn split_update(u: &Update) -> Vec<Update> {
    let mut pieces = Vec::new();
    let mut outer = u.terms.clone();
    let mut carry: Option<Term> = None;
    if let Some((scale, inner)) = &u.nested {
        // the inner combination becomes the temporary
        let inner_update = Update {
            out: SPLIT_TEMP,
            terms: inner.clone(),
            nested: None,
        };
        if inner_update.distinct_vectors() > BASIC_MAX_VECTORS {
            pieces.extend(split_update(&inner_update));
        } else {
            pieces.push(inner_update);
        }
        carry = Some(Term::new(*scale, SPLIT_TEMP));
    }
    loop {
        let mut candidate = Update {
            out: u.out,
            terms: outer.clone(),
            nested: None,
        };
        candidate.terms.extend(carry);
        if candidate.distinct_vectors() <= BASIC_MAX_VECTORS {
            pieces.push(candidate);
            return pieces;
        }
        // fold the last outer term into the temporary
        let last = outer.pop().expect("at least one outer term");
        let mut terms = vec![last];
        match carry {
            Some(c) => terms.push(c),
            None => terms.insert(0, outer.pop().expect("two outer terms")),
        }
        pieces.push(Update {
            out: SPLIT_TEMP,
            terms,
            nested: None,
        });
        carry = Some(Term::new(Coef::One, SPLIT_TEMP));
    }
}

/// One fused global reduction: `dots` scalars for each of `cols` columns,
/// i.e. an `8 * cols * dots` byte message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reduction {
    pub dots: usize,
    pub cols: usize,
}

impl Reduction {
    pub fn message_bytes(&self) -> usize {
        8 * self.cols * self.dots
    }
}

/// Tally of memory traffic and synchronisation points of a solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrafficCounter {
    /// Whole-vector reads by statement groups.
    pub vector_reads: u64,
    /// Whole-vector writes by statement groups.
    pub vector_writes: u64,
    /// Bytes moved by sparse products.
    pub spmv_bytes: f64,
    pub spmv_calls: u64,
    pub reductions: Vec<Reduction>,
    pub precond_applications: u64,
    /// Whole-vector transfers spent inside the preconditioner.
    pub precond_transfers: u64,
}

impl TrafficCounter {
    pub fn record_group(&mut self, t: GroupTraffic) {
        self.vector_reads += t.reads;
        self.vector_writes += t.writes;
    }

    pub fn record_spmv(&mut self, bytes: f64) {
        self.spmv_bytes += bytes;
        self.spmv_calls += 1;
    }

    pub fn record_reduction(&mut self, dots: usize, cols: usize) {
        if dots > 0 {
            self.reductions.push(Reduction { dots, cols });
        }
    }

    pub fn record_precond(&mut self, transfers: u64) {
        self.precond_applications += 1;
        self.precond_transfers += transfers;
    }

    /// Group reads plus writes.
    pub fn vector_transfers(&self) -> u64 {
        self.vector_reads + self.vector_writes
    }

    /// Bytes behind [`Self::vector_transfers`] for vectors of `n` rows and `m` columns.
    pub fn vector_bytes(&self, n: usize, m: usize) -> f64 {
        self.vector_transfers() as f64 * 8.0 * n as f64 * m as f64
    }

    /// Tallies accumulated since `earlier`, a previous snapshot of this counter.
    pub fn since(&self, earlier: &TrafficCounter) -> TrafficCounter {
        TrafficCounter {
            vector_reads: self.vector_reads - earlier.vector_reads,
            vector_writes: self.vector_writes - earlier.vector_writes,
            spmv_bytes: self.spmv_bytes - earlier.spmv_bytes,
            spmv_calls: self.spmv_calls - earlier.spmv_calls,
            reductions: self.reductions[earlier.reductions.len()..].to_vec(),
            precond_applications: self.precond_applications - earlier.precond_applications,
            precond_transfers: self.precond_transfers - earlier.precond_transfers,
        }
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

    fn traffic(g: &StatementGroup) -> (u64, u64) {
        let t = analyze_traffic(g).unwrap();
        (t.reads, t.writes)
    }

    #[test]
    fn axpby_counts() {
        let g = StatementGroup::new().update(Y, &[(Coef::Scalar(A), X), (Coef::Scalar(B), Y)]);
        assert_eq!(traffic(&g), (2, 1));
    }

    #[test]
    fn produced_values_are_not_reread() {
        // x = x + a p + b s; r = s - b t; rho = (r, r0)
        let (p, s, r, t, r0) = (VecId(4), VecId(5), VecId(6), VecId(7), VecId(8));
        let g = StatementGroup::new()
            .update(X, &[(Coef::One, X), (Coef::Scalar(A), p), (Coef::Scalar(B), s)])
            .update(r, &[(Coef::One, s), (Coef::Neg(B), t)])
            .dot(r, r0, ScalarId(2));
        assert_eq!(traffic(&g), (5, 2));
    }

    #[test]
    fn self_dot_counts_once() {
        let g = StatementGroup::new().dot(X, X, A);
        assert_eq!(traffic(&g), (1, 0));
        assert_eq!(g.dot_count(), 1);
    }

    #[test]
    fn empty_group_is_free() {
        assert_eq!(traffic(&StatementGroup::new()), (0, 0));
        assert!(split_basic(&StatementGroup::new()).is_empty());
    }

    #[test]
    fn malformed_groups_are_rejected() {
        let g = StatementGroup::new().update(X, &[]);
        assert!(matches!(analyze_traffic(&g), Err(KernelError::Malformed(_))));
        let g = StatementGroup::new().update_nested(X, &[(Coef::One, Y)], Coef::One, &[]);
        assert!(matches!(analyze_traffic(&g), Err(KernelError::Malformed(_))));
        let many: Vec<(Coef, VecId)> = (1..=5).map(|k| (Coef::One, VecId(k))).collect();
        let g = StatementGroup::new().update(VecId(9), &many);
        assert!(matches!(analyze_traffic(&g), Err(KernelError::Malformed(_))));
        let g = StatementGroup::new().dot(X, Y, A).update(Z, &[(Coef::Neg(A), X)]);
        assert!(matches!(analyze_traffic(&g), Err(KernelError::Malformed(_))));
        let g = StatementGroup::new().update(Z, &[(Coef::Neg(A), X)]).dot(X, Y, A);
        assert!(analyze_traffic(&g).is_ok());
    }

    #[test]
    fn four_vector_update_splits_through_temporary() {
        // w = y - omega (t - alpha v)
        let (w, t, v) = (VecId(4), VecId(5), VecId(6));
        let g = StatementGroup::new().update_nested(
            w,
            &[(Coef::One, Y)],
            Coef::Neg(A),
            &[(Coef::One, t), (Coef::Neg(B), v)],
        );
        assert_eq!(traffic(&g), (3, 1));
        let parts = split_basic(&g);
        assert_eq!(parts.len(), 2);
        assert_eq!(traffic(&parts[0]), (2, 1));
        assert_eq!(traffic(&parts[1]), (2, 1));
        match &parts[0].statements[0] {
            Statement::Update(u) => assert_eq!(u.out, SPLIT_TEMP),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn three_vector_updates_stay_whole() {
        // p = r + beta (p - omega v) touches three vectors
        let (p, r, v) = (VecId(4), VecId(5), VecId(6));
        let g = StatementGroup::new().update_nested(
            p,
            &[(Coef::One, r)],
            Coef::Scalar(A),
            &[(Coef::One, p), (Coef::Neg(B), v)],
        );
        let parts = split_basic(&g);
        assert_eq!(parts, vec![g]);
    }

    #[test]
    fn flat_wide_update_folds_through_temporary() {
        let terms: Vec<(Coef, VecId)> = (1..=4).map(|k| (Coef::One, VecId(k))).collect();
        let g = StatementGroup::new().update(VecId(9), &terms);
        let parts = split_basic(&g);
        for p in &parts {
            if let Statement::Update(u) = &p.statements[0] {
                assert!(u.distinct_vectors() <= BASIC_MAX_VECTORS, "{u:?}");
            }
        }
        assert_eq!(parts.len(), 3);
    }

    #[test]
    fn counter_since_snapshot() {
        let mut c = TrafficCounter::default();
        c.record_group(GroupTraffic { reads: 2, writes: 1 });
        c.record_reduction(3, 4);
        let snap = c.clone();
        c.record_group(GroupTraffic { reads: 5, writes: 2 });
        c.record_reduction(1, 4);
        c.record_reduction(0, 4);
        c.record_precond(2);
        let d = c.since(&snap);
        assert_eq!(d.vector_transfers(), 7);
        assert_eq!(d.reductions, vec![Reduction { dots: 1, cols: 4 }]);
        assert_eq!(d.reductions[0].message_bytes(), 32);
        assert_eq!(d.precond_transfers, 2);
        assert_eq!(c.vector_bytes(10, 2), 10.0 * 8.0 * 10.0 * 2.0);
    }
}
