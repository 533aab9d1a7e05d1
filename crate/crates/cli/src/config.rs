//! Run configuration: matrix source, right-hand sides, method and stopping
//! rule. Every field has a compact string form shared by flags and TOML
//! files, e.g. `matrix = "poisson7:20,20,20"` or `mode = "fixed:10"`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mrhs::solvers::{Formulation, MethodId, Preconditioner, SolveOptions, StopMode, Tolerance};
use mrhs::sparse::{gen_poisson_5pt, gen_poisson_7pt, read_matrix_market};
use mrhs::{CsrMatrix, MultiVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("bad {what} '{p}' in '{s}'"))))
        .collect()
}

/// Implements `Display`, `Serialize` and `Deserialize` through the string
/// form.
macro_rules! string_form {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

#[derive(Clone, Debug, PartialEq)]
pub enum MatrixSource {
    Poisson7 { nx: usize, ny: usize, nz: usize },
    Poisson5 { nx: usize, ny: usize },
    File(PathBuf),
}

impl MatrixSource {
    pub fn build(&self) -> Result<CsrMatrix, CliError> {
        Ok(match self {
            MatrixSource::Poisson7 { nx, ny, nz } => gen_poisson_7pt(*nx, *ny, *nz)?,
            MatrixSource::Poisson5 { nx, ny } => gen_poisson_5pt(*nx, *ny)?,
            MatrixSource::File(p) => read_matrix_market(p)?,
        })
    }
}

impl FromStr for MatrixSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| usage(format!("matrix '{s}': expected poisson7:nx,ny,nz, poisson5:nx,ny or file:path")))?;
        match kind {
            "poisson7" => match parse_list::<usize>(rest, "grid size")?[..] {
                [nx, ny, nz] => Ok(MatrixSource::Poisson7 { nx, ny, nz }),
                _ => Err(usage("poisson7 takes three grid sizes")),
            },
            "poisson5" => match parse_list::<usize>(rest, "grid size")?[..] {
                [nx, ny] => Ok(MatrixSource::Poisson5 { nx, ny }),
                _ => Err(usage("poisson5 takes two grid sizes")),
            },
            "file" if !rest.is_empty() => Ok(MatrixSource::File(rest.into())),
            _ => Err(usage(format!("unknown matrix source '{s}'"))),
        }
    }
}

impl fmt::Display for MatrixSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixSource::Poisson7 { nx, ny, nz } => write!(f, "poisson7:{nx},{ny},{nz}"),
            MatrixSource::Poisson5 { nx, ny } => write!(f, "poisson5:{nx},{ny}"),
            MatrixSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

string_form!(MatrixSource);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhsSpec {
    Ones,
    /// Uniform entries in `[-1, 1)` from a seeded ChaCha8 stream.
    Random(u64),
}

impl RhsSpec {
    pub fn build(&self, n: usize, m: usize) -> MultiVector {
        match self {
            RhsSpec::Ones => MultiVector::from_fn(n, m, |_, _| 1.0),
            RhsSpec::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                MultiVector::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0))
            }
        }
    }
}

impl FromStr for RhsSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.split_once(':') {
            None if s == "ones" => Ok(RhsSpec::Ones),
            Some(("random", seed)) => seed
                .parse()
                .map(RhsSpec::Random)
                .map_err(|_| usage(format!("bad seed in '{s}'"))),
            _ => Err(usage(format!("rhs '{s}': expected ones or random:seed"))),
        }
    }
}

impl fmt::Display for RhsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhsSpec::Ones => f.write_str("ones"),
            RhsSpec::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

string_form!(RhsSpec);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecondSpec {
    None,
    Identity,
    Synthetic(u32),
}

impl PrecondSpec {
    fn build(&self) -> Result<Option<Preconditioner>, CliError> {
        match self {
            PrecondSpec::None => Ok(None),
            PrecondSpec::Identity => Ok(Some(Preconditioner::Identity)),
            PrecondSpec::Synthetic(alpha) => Preconditioner::synthetic(*alpha)
                .map(Some)
                .map_err(|e| usage(e.to_string())),
        }
    }
}

impl FromStr for PrecondSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.split_once(':') {
            None if s == "none" => Ok(PrecondSpec::None),
            None if s == "identity" => Ok(PrecondSpec::Identity),
            None if s == "synthetic" => Ok(PrecondSpec::Synthetic(2)),
            Some(("synthetic", a)) => a
                .parse()
                .map(PrecondSpec::Synthetic)
                .map_err(|_| usage(format!("bad alpha in '{s}'"))),
            _ => Err(usage(format!("precond '{s}': expected none, identity or synthetic:alpha"))),
        }
    }
}

impl fmt::Display for PrecondSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecondSpec::None => f.write_str("none"),
            PrecondSpec::Identity => f.write_str("identity"),
            PrecondSpec::Synthetic(a) => write!(f, "synthetic:{a}"),
        }
    }
}

string_form!(PrecondSpec);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeSpec {
    /// Relative tolerance and iteration limit.
    Converge { tol: f64, max_iters: usize },
    Fixed(usize),
}

impl FromStr for ModeSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || usage(format!("mode '{s}': expected fixed:iters or converge:tol,max_iters"));
        match s.split_once(':').ok_or_else(bad)? {
            ("fixed", n) => n.parse().map(ModeSpec::Fixed).map_err(|_| bad()),
            ("converge", rest) => {
                let (tol, max) = rest.split_once(',').ok_or_else(bad)?;
                Ok(ModeSpec::Converge {
                    tol: tol.parse().map_err(|_| bad())?,
                    max_iters: max.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ModeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeSpec::Converge { tol, max_iters } => write!(f, "converge:{tol:e},{max_iters}"),
            ModeSpec::Fixed(n) => write!(f, "fixed:{n}"),
        }
    }
}

string_form!(ModeSpec);

fn method_string<S: serde::Serializer>(m: &MethodId, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(m.name())
}

fn method_parse<'de, D: serde::Deserializer<'de>>(d: D) -> Result<MethodId, D::Error> {
    String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
}

fn formulation_string<S: serde::Serializer>(f: &Formulation, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(f.name())
}

fn formulation_parse<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Formulation, D::Error> {
    String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
}

/// Everything that determines the results of a solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub matrix: MatrixSource,
    pub m: usize,
    pub rhs: RhsSpec,
    #[serde(serialize_with = "method_string", deserialize_with = "method_parse")]
    pub method: MethodId,
    #[serde(serialize_with = "formulation_string", deserialize_with = "formulation_parse")]
    pub formulation: Formulation,
    /// Defaults to `identity` for preconditioned methods and `none`
    /// otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precond: Option<PrecondSpec>,
    pub mode: ModeSpec,
}

/// Partial configuration as read from a file; missing keys keep the
/// preset or default value.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub matrix: Option<MatrixSource>,
    pub m: Option<usize>,
    pub rhs: Option<RhsSpec>,
    pub method: Option<String>,
    pub formulation: Option<String>,
    pub precond: Option<PrecondSpec>,
    pub mode: Option<ModeSpec>,
}

pub const PRESETS: [&str; 4] = ["table2", "table3", "table5", "fig5"];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            matrix: MatrixSource::Poisson5 { nx: 64, ny: 64 },
            m: 1,
            rhs: RhsSpec::Ones,
            method: MethodId::BiCGStab,
            formulation: Formulation::Merged,
            precond: None,
            mode: ModeSpec::Converge {
                tol: 1e-8,
                max_iters: 1000,
            },
        }
    }
}

impl RunConfig {
    /// Named experiment setups.
    ///
    /// * `table2`: 10 fixed iterations on the 64x64 5-point problem, for
    ///   traffic accounting.
    /// * `table3`: 1000 fixed iterations on the 200^3 7-point problem.
    /// * `table5`: as `table3`; vary `--m` for the multi-column runs.
    /// * `fig5`: solve to 1e-8 on the 1000x1000 5-point problem.
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let base = Self::default();
        let cube = MatrixSource::Poisson7 {
            nx: 200,
            ny: 200,
            nz: 200,
        };
        match name {
            "table2" => Ok(Self {
                mode: ModeSpec::Fixed(10),
                ..base
            }),
            "table3" | "table5" => Ok(Self {
                matrix: cube,
                mode: ModeSpec::Fixed(1000),
                ..base
            }),
            "fig5" => Ok(Self {
                matrix: MatrixSource::Poisson5 { nx: 1000, ny: 1000 },
                ..base
            }),
            _ => Err(usage(format!(
                "unknown preset '{name}', expected one of: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        let file: ConfigFile = toml::from_str(s).map_err(|e| usage(format!("config: {e}")))?;
        let mut cfg = match &file.preset {
            Some(p) => Self::preset(p)?,
            None => Self::default(),
        };
        cfg.merge(file)?;
        Ok(cfg)
    }

    pub fn merge(&mut self, f: ConfigFile) -> Result<(), CliError> {
        if let Some(v) = f.matrix {
            self.matrix = v;
        }
        if let Some(v) = f.m {
            self.m = v;
        }
        if let Some(v) = f.rhs {
            self.rhs = v;
        }
        if let Some(v) = f.method {
            self.method = v.parse().map_err(|e: mrhs::solvers::ParseIdError| usage(e.to_string()))?;
        }
        if let Some(v) = f.formulation {
            self.formulation = v.parse().map_err(|e: mrhs::solvers::ParseIdError| usage(e.to_string()))?;
        }
        if f.precond.is_some() {
            self.precond = f.precond;
        }
        if let Some(v) = f.mode {
            self.mode = v;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn effective_precond(&self) -> PrecondSpec {
        self.precond.unwrap_or(if self.method.is_preconditioned() {
            PrecondSpec::Identity
        } else {
            PrecondSpec::None
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.m == 0 {
            return Err(usage("m must be at least 1"));
        }
        match (self.method.is_preconditioned(), self.effective_precond()) {
            (true, PrecondSpec::None) => {
                return Err(usage(format!("{} needs a preconditioner", self.method.name())))
            }
            (false, p) if p != PrecondSpec::None => {
                return Err(usage(format!("{} takes no preconditioner", self.method.name())))
            }
            _ => {}
        }
        if let ModeSpec::Converge { tol, .. } = self.mode {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(usage("tolerance must be positive"));
            }
        }
        Ok(())
    }

    pub fn solve_options(&self) -> Result<SolveOptions, CliError> {
        self.validate()?;
        let (tol, mode) = match self.mode {
            ModeSpec::Converge { tol, max_iters } => (tol, StopMode::Converge { max_iters }),
            ModeSpec::Fixed(iters) => (1e-8, StopMode::Fixed { iters }),
        };
        Ok(SolveOptions::new(self.method)
            .formulation(self.formulation)
            .precond(self.effective_precond().build()?)
            .tol(Tolerance::Relative(tol))
            .mode(mode))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn string_forms_round_trip() {
        for s in ["poisson7:3,4,5", "poisson5:10,20", "file:/tmp/a.mtx"] {
            assert_eq!(s.parse::<MatrixSource>().unwrap().to_string(), s);
        }
        for s in ["ones", "random:42"] {
            assert_eq!(s.parse::<RhsSpec>().unwrap().to_string(), s);
        }
        for s in ["none", "identity", "synthetic:4"] {
            assert_eq!(s.parse::<PrecondSpec>().unwrap().to_string(), s);
        }
        for s in ["fixed:10", "converge:1e-8,500"] {
            assert_eq!(s.parse::<ModeSpec>().unwrap().to_string(), s);
        }
        assert!("poisson7:3,4".parse::<MatrixSource>().is_err());
        assert!("laplace:3".parse::<MatrixSource>().is_err());
        assert!("converge:1e-8".parse::<ModeSpec>().is_err());
    }

    #[test]
    fn config_file_overrides_preset() {
        let cfg = RunConfig::from_toml_str(
            "preset = \"table3\"\nmethod = \"rbicgstab\"\nm = 4\nprecond = \"synthetic:6\"\n",
        )
        .unwrap();
        assert_eq!(cfg.matrix, MatrixSource::Poisson7 { nx: 200, ny: 200, nz: 200 });
        assert_eq!(cfg.mode, ModeSpec::Fixed(1000));
        assert_eq!(cfg.method, MethodId::RBiCGStab);
        assert_eq!(cfg.effective_precond(), PrecondSpec::Synthetic(6));
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("colour = 3\n"), Err(CliError::Usage(_))));
        assert!(RunConfig::from_toml_str("method = \"gmres\"\n").is_err());
    }

    #[test]
    fn precond_consistency() {
        let mut cfg = RunConfig {
            method: MethodId::PBiCGStab,
            ..RunConfig::default()
        };
        assert_eq!(cfg.effective_precond(), PrecondSpec::Identity);
        cfg.precond = Some(PrecondSpec::None);
        assert!(cfg.validate().is_err());
        cfg.method = MethodId::BiCGStab;
        assert!(cfg.validate().is_ok());
        cfg.precond = Some(PrecondSpec::Synthetic(3));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seeded_rhs_is_reproducible() {
        let a = RhsSpec::Random(7).build(50, 3);
        assert_eq!(a.data(), RhsSpec::Random(7).build(50, 3).data());
        assert_ne!(a.data(), RhsSpec::Random(8).build(50, 3).data());
        assert!(a.max_abs() <= 1.0);
    }
}
