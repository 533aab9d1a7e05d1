//! Loop-fusion microbenchmark over three vector updates.
//!
//! `y = a x + b y`, `z = b x + a z` and `z = b y + c z` run as three separate
//! passes (run 1), the first two fused (run 2) and all three fused (run 3).

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use super::{execute_group, Coef, ScalarId, StatementGroup, TrafficCounter, VecId, Workspace};
use crate::sparse::{ColumnScalars, MultiVector};

const X: VecId = VecId(1);
const Y: VecId = VecId(2);
const Z: VecId = VecId(3);
const A: ScalarId = ScalarId(0);
const B: ScalarId = ScalarId(1);
const C: ScalarId = ScalarId(2);

/// Statement groups of the three runs, in execution order.
pub fn fusion_groups() -> [Vec<StatementGroup>; 3] {
    let first = StatementGroup::new().update(Y, &[(Coef::Scalar(A), X), (Coef::Scalar(B), Y)]);
    let second = StatementGroup::new().update(Z, &[(Coef::Scalar(B), X), (Coef::Scalar(A), Z)]);
    let third = StatementGroup::new().update(Z, &[(Coef::Scalar(B), Y), (Coef::Scalar(C), Z)]);
    let mut two = first.clone();
    two.statements.extend(second.statements.clone());
    let mut three = two.clone();
    three.statements.extend(third.statements.clone());
    [vec![first, second, third], vec![two], vec![three]]
}

#[derive(Clone, Debug)]
pub struct FusionReport {
    pub n: usize,
    pub repetitions: usize,
    /// Median wall time of each run in seconds.
    pub median_seconds: [f64; 3],
    /// Whole-vector transfers of each run.
    pub transfers: [u64; 3],
    /// Runs 1 and 3 leave bitwise identical `x`, `y`, `z`, and run 2 leaves
    /// the same `y` as run 1.
    pub results_match: bool,
}

impl FusionReport {
    /// Effective bandwidth of each run in bytes per second.
    pub fn bandwidth(&self) -> [f64; 3] {
        std::array::from_fn(|k| self.transfers[k] as f64 * 8.0 * self.n as f64 / self.median_seconds[k])
    }

    pub fn ratio_1_2(&self) -> f64 {
        self.median_seconds[0] / self.median_seconds[1]
    }

    pub fn ratio_3_2(&self) -> f64 {
        self.median_seconds[2] / self.median_seconds[1]
    }
}

/// Size of the largest CPU cache reported by sysfs, or 32 MiB when unknown.
pub fn last_level_cache_bytes() -> usize {
    const FALLBACK: usize = 32 << 20;
    let dir = std::path::Path::new("/sys/devices/system/cpu/cpu0/cache");
    let Ok(entries) = std::fs::read_dir(dir) else {
        return FALLBACK;
    };
    entries
        .filter_map(|e| std::fs::read_to_string(e.ok()?.path().join("size")).ok())
        .filter_map(|s| parse_cache_size(s.trim()))
        .max()
        .unwrap_or(FALLBACK)
}

fn parse_cache_size(s: &str) -> Option<usize> {
    let (digits, scale) = match s.as_bytes().last()? {
        b'K' => (&s[..s.len() - 1], 1 << 10),
        b'M' => (&s[..s.len() - 1], 1 << 20),
        b'G' => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    digits.parse::<usize>().ok().map(|v| v * scale)
}

fn init(ws: &mut Workspace, n: usize) {
    let fill = [
        (X, (|i| 1.0 + (i % 7) as f64 * 0.25) as fn(usize) -> f64),
        (Y, |i| 2.0 - (i % 5) as f64 * 0.125),
        (Z, |i| 0.5 + (i % 3) as f64),
    ];
    for (id, f) in fill {
        if !ws.is_bound(id) {
            ws.bind(id, MultiVector::zeros(n, 1));
        }
        let v = ws.vector_mut(id).expect("bound");
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = f(i);
        }
    }
}

/// Hash of the bit patterns of a vector.
fn fingerprint(v: &MultiVector) -> u64 {
    let mut h = DefaultHasher::new();
    for x in v.data() {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Times the three runs on vectors of length `n`, `repetitions` times each.
/// Inputs are reset before every timed repetition.
pub fn fusion_bench(n: usize, repetitions: usize) -> FusionReport {
    let repetitions = repetitions.max(1);
    let groups = fusion_groups();
    let mut ws = Workspace::new(n, 1, 3);
    for (id, v) in [(A, 0.5), (B, 0.25), (C, 0.125)] {
        ws.set_scalar(id, ColumnScalars(vec![v])).expect("scalar slot");
    }
    let mut median_seconds = [0.0; 3];
    let mut transfers = [0; 3];
    // bit fingerprints of the final x, y, z of each run
    let mut finals: Vec<[u64; 3]> = Vec::new();
    for (k, run) in groups.iter().enumerate() {
        let mut times = Vec::with_capacity(repetitions);
        let mut counter = TrafficCounter::default();
        for _ in 0..repetitions {
            init(&mut ws, n);
            counter = TrafficCounter::default();
            let start = Instant::now();
            for g in run {
                execute_group(g, &mut ws, &mut counter).expect("fusion groups are well formed");
            }
            times.push(start.elapsed().as_secs_f64());
        }
        median_seconds[k] = median(times);
        transfers[k] = counter.vector_transfers();
        finals.push([X, Y, Z].map(|id| fingerprint(ws.vector(id).expect("bound"))));
    }
    let results_match = finals[0] == finals[2] && finals[0][1] == finals[1][1];
    FusionReport {
        n,
        repetitions,
        median_seconds,
        transfers,
        results_match,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::analyze_traffic;

    #[test]
    fn run_traffic_matches_loop_counts() {
        let totals: Vec<u64> = fusion_groups()
            .iter()
            .map(|run| run.iter().map(|g| analyze_traffic(g).unwrap().total()).sum())
            .collect();
        assert_eq!(totals, vec![9, 5, 5]);
    }

    #[test]
    fn small_bench_is_consistent() {
        let r = fusion_bench(2000, 3);
        assert!(r.results_match);
        assert_eq!(r.transfers, [9, 5, 5]);
        assert!(r.median_seconds.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn cache_size_strings() {
        assert_eq!(parse_cache_size("307200K"), Some(300 << 20));
        assert_eq!(parse_cache_size("8M"), Some(8 << 20));
        assert_eq!(parse_cache_size("4096"), Some(4096));
        assert_eq!(parse_cache_size("big"), None);
        assert!(last_level_cache_bytes() > 0);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
