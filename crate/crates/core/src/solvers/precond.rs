//! Preconditioners with a declared cost in vector transfers.

use rayon::prelude::*;

use crate::kernels::TrafficCounter;
use crate::sparse::MultiVector;

use super::SolveError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    /// `M = I`: one copy, i.e. one read and one write.
    Identity,
    /// Identity map made of `alpha / 2` scaling passes whose factors
    /// multiply to exactly one, costing `alpha` transfers.
    Synthetic { alpha: u32 },
}

const MIN_PAR_LEN: usize = 1 << 14;

impl Preconditioner {
    pub fn synthetic(alpha: u32) -> Result<Self, SolveError> {
        if alpha < 2 || alpha % 2 != 0 {
            return Err(SolveError::InvalidOption(format!(
                "synthetic preconditioner cost must be an even count >= 2, got {alpha}"
            )));
        }
        Ok(Preconditioner::Synthetic { alpha })
    }

    /// Vector transfers per application.
    pub fn transfers(&self) -> u32 {
        match self {
            Preconditioner::Identity => 2,
            Preconditioner::Synthetic { alpha } => *alpha,
        }
    }

    /// Scale factor of each pass: 2, 1/2, 2, 1/2, ... with a final 1 when
    /// the pass count is odd.
    fn factors(&self) -> Vec<f64> {
        let passes = (self.transfers() / 2) as usize;
        let mut f: Vec<f64> = (0..passes)
            .map(|k| if k % 2 == 0 { 2.0 } else { 0.5 })
            .collect();
        if passes % 2 == 1 {
            f[passes - 1] = 1.0;
        }
        f
    }

    /// `dst = M^{-1} src`.
    pub fn apply(&self, src: &MultiVector, dst: &mut MultiVector, counter: &mut TrafficCounter) {
        assert_eq!(src.shape(), dst.shape(), "preconditioner operands differ in shape");
        match self {
            Preconditioner::Identity => dst.data_mut().copy_from_slice(src.data()),
            Preconditioner::Synthetic { .. } => {
                for (k, f) in self.factors().into_iter().enumerate() {
                    if k == 0 {
                        dst.data_mut()
                            .par_iter_mut()
                            .with_min_len(MIN_PAR_LEN)
                            .zip(src.data().par_iter())
                            .for_each(|(d, s)| *d = f * s);
                    } else {
                        dst.data_mut()
                            .par_iter_mut()
                            .with_min_len(MIN_PAR_LEN)
                            .for_each(|d| *d *= f);
                    }
                }
            }
        }
        counter.record_precond(self.transfers() as u64);
    }
}
