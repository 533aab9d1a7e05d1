//! Data-transfer execution-time model.
//!
//! Local work is priced by the bytes it moves divided by the aggregate
//! memory bandwidth of `p` nodes. Halo exchanges and global reductions use
//! power-law fits in the message size (and node count). A global reduction
//! may hide behind the work marked in the method's schedule, with the
//! overlap overhead `gamma` in `[0, 1]`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solvers::{method_schedule, Formulation, IterationSchedule, MethodId, Overlap, Step};
use crate::sparse::stencil_nnz;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid machine model: {0}")]
    InvalidMachine(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("empty scan range: {0}")]
    EmptyRange(&'static str),
    #[error("{0} needs a preconditioner cost alpha > 0")]
    MissingPreconditioner(MethodId),
    #[error("unknown {kind} '{given}', expected one of: {valid}")]
    UnknownName {
        kind: &'static str,
        given: String,
        valid: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

/// `c0 + c1 l^n0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerFit {
    pub c0: f64,
    pub c1: f64,
    pub n0: f64,
}

impl PowerFit {
    pub fn eval(&self, l: f64) -> f64 {
        self.c0 + self.c1 * l.powf(self.n0)
    }
}

/// Halo-exchange time: `small` up to `knee` bytes, `large` above.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalFit {
    pub knee: f64,
    pub small: PowerFit,
    pub large: PowerFit,
}

/// Global reduction time `c0 + c1 l^n0 p^n1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalFit {
    pub c0: f64,
    pub c1: f64,
    pub n0: f64,
    pub n1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthMode {
    #[default]
    Ram,
    Llc,
    /// A calibrated value, when the machine file provides one.
    Effective,
}

impl BandwidthMode {
    pub fn name(&self) -> &'static str {
        match self {
            BandwidthMode::Ram => "ram",
            BandwidthMode::Llc => "llc",
            BandwidthMode::Effective => "effective",
        }
    }
}

impl fmt::Display for BandwidthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandwidthMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ram" => Ok(BandwidthMode::Ram),
            "llc" => Ok(BandwidthMode::Llc),
            "effective" => Ok(BandwidthMode::Effective),
            _ => Err(ModelError::UnknownName {
                kind: "bandwidth mode",
                given: s.to_string(),
                valid: "ram, llc, effective".to_string(),
            }),
        }
    }
}

/// Per-node bandwidths and communication fits of a cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineModel {
    pub name: String,
    /// Bytes per second per node from main memory.
    pub ram_bandwidth: f64,
    /// Bytes per second per node from the last-level cache.
    pub llc_bandwidth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_bandwidth: Option<f64>,
    #[serde(default)]
    pub bandwidth_mode: BandwidthMode,
    /// Overlap overhead of non-blocking reductions.
    pub gamma: f64,
    pub local_fit: LocalFit,
    pub global_fit: GlobalFit,
}

const LOMONOSOV_LOCAL: LocalFit = LocalFit {
    knee: 2048.0,
    small: PowerFit {
        c0: 2.4e-6,
        c1: 6.9e-8,
        n0: 0.56,
    },
    large: PowerFit {
        c0: 3.2e-6,
        c1: 2e-9,
        n0: 1.0,
    },
};

const LOMONOSOV_GLOBAL: GlobalFit = GlobalFit {
    c0: 3.5e-6,
    c1: 1.7e-6,
    n0: 0.21,
    n1: 0.54,
};

/// Bandwidth that reproduces the measured single-node iteration times of
/// the older machine; its tabulated STREAM value is about half of it.
pub const LOMONOSOV_EFFECTIVE_BANDWIDTH: f64 = 33.8e9;

pub const PRESET_NAMES: [&str; 2] = ["lomonosov", "lomonosov2"];

impl MachineModel {
    /// Two-socket Xeon X5570 nodes, QDR InfiniBand.
    pub fn lomonosov() -> Self {
        Self {
            name: "lomonosov".to_string(),
            ram_bandwidth: 16e9,
            llc_bandwidth: 46e9,
            effective_bandwidth: Some(LOMONOSOV_EFFECTIVE_BANDWIDTH),
            bandwidth_mode: BandwidthMode::Ram,
            gamma: 1.0,
            local_fit: LOMONOSOV_LOCAL,
            global_fit: LOMONOSOV_GLOBAL,
        }
    }

    /// Single-socket Xeon E5-2697v3 nodes. No communication fits were
    /// published for it, so the older machine's fits are reused.
    pub fn lomonosov2() -> Self {
        Self {
            name: "lomonosov2".to_string(),
            ram_bandwidth: 60e9,
            llc_bandwidth: 288e9,
            effective_bandwidth: None,
            bandwidth_mode: BandwidthMode::Ram,
            gamma: 1.0,
            local_fit: LOMONOSOV_LOCAL,
            global_fit: LOMONOSOV_GLOBAL,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ModelError> {
        match name.to_ascii_lowercase().as_str() {
            "lomonosov" => Ok(Self::lomonosov()),
            "lomonosov2" | "lomonosov-2" => Ok(Self::lomonosov2()),
            _ => Err(ModelError::UnknownName {
                kind: "machine preset",
                given: name.to_string(),
                valid: PRESET_NAMES.join(", "),
            }),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        let m: MachineModel = toml::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("machine model serialises")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidMachine(what.to_string()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.ram_bandwidth) || !positive(self.llc_bandwidth) {
            return bad("bandwidths must be positive");
        }
        if let Some(b) = self.effective_bandwidth {
            if !positive(b) {
                return bad("effective bandwidth must be positive");
            }
        } else if self.bandwidth_mode == BandwidthMode::Effective {
            return bad("bandwidth mode 'effective' needs effective_bandwidth");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        let l = &self.local_fit;
        let g = &self.global_fit;
        let coefs = [
            l.knee, l.small.c0, l.small.c1, l.small.n0, l.large.c0, l.large.c1, l.large.n0, g.c0,
            g.c1, g.n0, g.n1,
        ];
        if coefs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return bad("fit coefficients must be non-negative");
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_bandwidth_mode(mut self, mode: BandwidthMode) -> Result<Self, ModelError> {
        self.bandwidth_mode = mode;
        self.validate()?;
        Ok(self)
    }

    /// Node bandwidth `b` under the current mode.
    pub fn bandwidth(&self) -> f64 {
        match self.bandwidth_mode {
            BandwidthMode::Ram => self.ram_bandwidth,
            BandwidthMode::Llc => self.llc_bandwidth,
            BandwidthMode::Effective => self.effective_bandwidth.unwrap_or(self.ram_bandwidth),
        }
    }
}

/// Size of one linear system as seen by the model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemSpec {
    /// Unknowns `N`.
    pub n: f64,
    /// Right-hand sides `m`.
    pub m: usize,
    /// Average nonzeros per row `C`.
    pub c: f64,
    /// Rows sent to a neighbour in one halo exchange; the message is
    /// `8 m halo_rows` bytes regardless of the node count.
    pub halo_rows: f64,
    /// Preconditioner cost `alpha` in vector transfers, 0 for none.
    pub precond_alpha: u32,
}

impl ProblemSpec {
    pub fn new(n: f64, m: usize, c: f64, halo_rows: f64) -> Result<Self, ModelError> {
        let spec = Self {
            n,
            m,
            c,
            halo_rows,
            precond_alpha: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Lexicographically ordered stencil grid split into slabs along the
    /// last dimension.
    pub fn stencil(dims: &[usize], m: usize) -> Result<Self, ModelError> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(ModelError::InvalidProblem(format!("grid {dims:?}")));
        }
        let n: f64 = dims.iter().map(|&d| d as f64).product();
        let c = stencil_nnz(dims) as f64 / n;
        let halo: f64 = dims[..dims.len() - 1].iter().map(|&d| d as f64).product();
        Self::new(n, m, c, halo)
    }

    /// 7-point Poisson on 200^3 cells.
    pub fn table5(m: usize) -> Result<Self, ModelError> {
        Self::stencil(&[200, 200, 200], m)
    }

    /// 5-point Poisson on 1000^2 cells.
    pub fn fig5(m: usize) -> Result<Self, ModelError> {
        Self::stencil(&[1000, 1000], m)
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_alpha(mut self, alpha: u32) -> Self {
        self.precond_alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.n >= 1.0 && self.n.is_finite()) || self.m == 0 {
            return Err(ModelError::InvalidProblem("N and m must be at least 1".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) || !(self.halo_rows >= 0.0) {
            return Err(ModelError::InvalidProblem(
                "C must be positive and the halo non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Halo message size `l` in bytes.
    pub fn halo_bytes(&self) -> f64 {
        8.0 * self.m as f64 * self.halo_rows
    }
}

/// Time of one whole-vector transfer, `8 N m / (b p)`.
pub fn t_vec(machine: &MachineModel, spec: &ProblemSpec, p: u32) -> f64 {
    8.0 * spec.n * spec.m as f64 / (machine.bandwidth() * p as f64)
}

/// Bytes moved by one sparse product, `N (8 m (C + 1) + 4 (3 C + 1))`.
pub fn sigma_mul(spec: &ProblemSpec) -> f64 {
    let (m, c) = (spec.m as f64, spec.c);
    spec.n * (8.0 * m * (c + 1.0) + 4.0 * (3.0 * c + 1.0))
}

pub fn t_mul(machine: &MachineModel, spec: &ProblemSpec, p: u32) -> f64 {
    sigma_mul(spec) / (machine.bandwidth() * p as f64)
}

/// Halo exchange of an `l`-byte message.
pub fn t_local(machine: &MachineModel, l: f64) -> f64 {
    let f = &machine.local_fit;
    if l <= f.knee {
        f.small.eval(l)
    } else {
        f.large.eval(l)
    }
}

/// Global reduction of an `l`-byte message over `p` nodes.
pub fn t_global(machine: &MachineModel, p: u32, l: f64) -> f64 {
    let g = &machine.global_fit;
    g.c0 + g.c1 * l.powf(g.n0) * (p as f64).powf(g.n1)
}

/// Sparse product with its halo exchange hidden behind the local work.
pub fn t_spmv(machine: &MachineModel, spec: &ProblemSpec, p: u32) -> f64 {
    t_mul(machine, spec, p).max(t_local(machine, spec.halo_bytes()))
}

pub fn t_prec(machine: &MachineModel, spec: &ProblemSpec, p: u32) -> f64 {
    spec.precond_alpha as f64 * t_vec(machine, spec, p)
}

/// Work `t_calc` run while a reduction of duration `t_g` is in flight.
pub fn overlapped(t_calc: f64, t_g: f64, gamma: f64) -> f64 {
    (t_calc + gamma * t_g).max(t_g)
}

/// Time of one iteration following `schedule`.
pub fn t_schedule(
    machine: &MachineModel,
    spec: &ProblemSpec,
    schedule: &IterationSchedule,
    p: u32,
) -> Result<f64, ModelError> {
    if schedule.method.is_preconditioned() && spec.precond_alpha == 0 {
        return Err(ModelError::MissingPreconditioner(schedule.method));
    }
    let (tv, ts, tp) = (
        t_vec(machine, spec, p),
        t_spmv(machine, spec, p),
        t_prec(machine, spec, p),
    );
    let gamma = machine.gamma;
    let mut spmvs = schedule.spmv_count();
    let mut precs = schedule.precond_count();
    let mut total = schedule.vector_transfers() as f64 * tv;
    for step in &schedule.steps {
        let Step::Reduction { dots, overlap } = *step else {
            continue;
        };
        let tg = t_global(machine, p, 8.0 * spec.m as f64 * dots as f64);
        total += match overlap {
            Overlap::None => tg,
            Overlap::Spmv => {
                spmvs -= 1;
                overlapped(ts, tg, gamma)
            }
            Overlap::Precond => {
                precs -= 1;
                overlapped(tp, tg, gamma)
            }
            Overlap::SpmvAndPrecond => {
                spmvs -= 1;
                precs -= 1;
                overlapped(ts + tp, tg, gamma)
            }
        };
    }
    Ok(total + spmvs as f64 * ts + precs as f64 * tp)
}

/// Time of one iteration of the merged formulation of `method`.
pub fn t_iteration(
    machine: &MachineModel,
    spec: &ProblemSpec,
    method: MethodId,
    p: u32,
) -> Result<f64, ModelError> {
    t_schedule(machine, spec, &method_schedule(method, Formulation::Merged), p)
}

/// `R_i = min_j T_j / T_i` over `methods` at one node count.
pub fn relative_performance(
    machine: &MachineModel,
    spec: &ProblemSpec,
    methods: &[MethodId],
    p: u32,
) -> Result<Vec<(MethodId, f64, f64)>, ModelError> {
    if methods.is_empty() {
        return Err(ModelError::EmptyRange("methods"));
    }
    let times = methods
        .iter()
        .map(|&m| t_iteration(machine, spec, m, p).map(|t| (m, t)))
        .collect::<Result<Vec<_>, _>>()?;
    let best = times.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    Ok(times.into_iter().map(|(m, t)| (m, t, best / t)).collect())
}

/// `S(p) = T(1) / T(p)` for times listed from `p = 1` upwards.
pub fn speedup(times: &[f64]) -> Vec<f64> {
    match times.first() {
        Some(&t1) => times.iter().map(|t| t1 / t).collect(),
        None => Vec::new(),
    }
}

/// `P_i(p) = T_baseline(1) / T_i(p)`.
pub fn relative_speedup(
    machine: &MachineModel,
    spec: &ProblemSpec,
    baseline: MethodId,
    method: MethodId,
    p: u32,
) -> Result<f64, ModelError> {
    Ok(t_iteration(machine, spec, baseline, 1)? / t_iteration(machine, spec, method, p)?)
}

/// Elements per node `N m / p` at which one vector transfer takes as long
/// as a reduction of duration `t_g`: `t_g b / 8`.
pub fn breakeven_elements(t_g: f64, bandwidth: f64) -> f64 {
    t_g * bandwidth / 8.0
}

/// Smallest `p` in `p_values` at which `challenger` is faster than
/// `incumbent`.
pub fn first_crossover(
    machine: &MachineModel,
    spec: &ProblemSpec,
    incumbent: MethodId,
    challenger: MethodId,
    p_values: impl IntoIterator<Item = u32>,
) -> Result<Option<u32>, ModelError> {
    for p in p_values {
        if t_iteration(machine, spec, challenger, p)? < t_iteration(machine, spec, incumbent, p)? {
            return Ok(Some(p));
        }
    }
    Ok(None)
}

/// Parameter grid of [`scan`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScanConfig {
    pub methods: Vec<MethodId>,
    pub p_values: Vec<u32>,
    pub gammas: Vec<f64>,
    pub alphas: Vec<u32>,
    pub ms: Vec<usize>,
    pub bandwidth_modes: Vec<BandwidthMode>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub method: MethodId,
    pub p: u32,
    pub gamma: f64,
    pub alpha: u32,
    pub m: usize,
    pub bandwidth_mode: BandwidthMode,
    pub t_seconds: f64,
    /// Relative performance among the scanned methods at the same
    /// `(p, gamma, alpha, m, bandwidth_mode)`.
    pub r: f64,
}

pub const SCAN_CSV_HEADER: &str = "method,p,gamma,alpha,m,bw_mode,T_seconds,R";

impl ScanRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6e},{:.6}",
            self.method.label(),
            self.p,
            self.gamma,
            self.alpha,
            self.m,
            self.bandwidth_mode,
            self.t_seconds,
            self.r
        )
    }
}

/// Long-form table of iteration times and relative performance over the
/// full parameter grid. Unpreconditioned methods ignore `alpha`;
/// preconditioned ones are skipped for `alpha = 0`.
pub fn scan(machine: &MachineModel, spec: &ProblemSpec, cfg: &ScanConfig) -> Result<Vec<ScanRow>, ModelError> {
    for (name, empty) in [
        ("methods", cfg.methods.is_empty()),
        ("p", cfg.p_values.is_empty()),
        ("gamma", cfg.gammas.is_empty()),
        ("alpha", cfg.alphas.is_empty()),
        ("m", cfg.ms.is_empty()),
        ("bandwidth mode", cfg.bandwidth_modes.is_empty()),
    ] {
        if empty {
            return Err(ModelError::EmptyRange(name));
        }
    }
    if cfg.p_values.contains(&0) {
        return Err(ModelError::InvalidProblem("node counts must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &mode in &cfg.bandwidth_modes {
        for &gamma in &cfg.gammas {
            let mach = machine.clone().with_gamma(gamma).with_bandwidth_mode(mode)?;
            for &m in &cfg.ms {
                for &alpha in &cfg.alphas {
                    let sp = spec.with_m(m).with_alpha(alpha);
                    sp.validate()?;
                    let methods: Vec<MethodId> = cfg
                        .methods
                        .iter()
                        .copied()
                        .filter(|meth| !meth.is_preconditioned() || alpha > 0)
                        .collect();
                    if methods.is_empty() {
                        continue;
                    }
                    for &p in &cfg.p_values {
                        for (method, t, r) in relative_performance(&mach, &sp, &methods, p)? {
                            rows.push(ScanRow {
                                method,
                                p,
                                gamma,
                                alpha,
                                m,
                                bandwidth_mode: mode,
                                t_seconds: t,
                                r,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}
