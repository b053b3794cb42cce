//! First- and second-moment estimators for a single parameter matrix.
//!
//! Three first-order regimes are supported: no momentum at all, the usual
//! full EMA, and a low-rank factorized EMA with a residual bias
//! correction. In the low-rank regime the full-size momentum matrix is
//! materialized only as a per-step workspace; the persistent state is just
//! the factor pair, so an `m x n` parameter keeps `(m + n) * r` reals
//! instead of `m * n`.
//!
//! The corrected direction is `m_t - beta1 / (1 - beta1) * r_t` where
//! `r_t = L_t R_t - m_t` is the factorization residual. With stationary
//! residuals the expected gap to the full EMA contracts by `beta1` per
//! step, which the bias-decay bench checks exactly.

use crate::linalg::{
    cold_refresh, default_inner_lr, low_rank_fit, LinalgError, LowRankPair, Matrix,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum MomentumError {
    /// Operation invoked on a state with a different momentum mode.
    ModeMismatch { expected: &'static str, got: &'static str },
    /// A decay rate or rank argument is outside its valid range.
    InvalidArgument(String),
    /// Gradient shape does not match the parameter this state tracks.
    ShapeMismatch { state: (usize, usize), grad: (usize, usize) },
    Linalg(LinalgError),
}

impl std::fmt::Display for MomentumError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MomentumError::ModeMismatch { expected, got } => {
                write!(f, "momentum mode mismatch: expected {expected}, got {got}")
            }
            MomentumError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            MomentumError::ShapeMismatch { state, grad } => write!(
                f,
                "gradient shape {}x{} does not match state shape {}x{}",
                grad.0, grad.1, state.0, state.1
            ),
            MomentumError::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for MomentumError {}

impl From<LinalgError> for MomentumError {
    fn from(e: LinalgError) -> Self {
        MomentumError::Linalg(e)
    }
}

/// Which first-order estimator a parameter uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MomentumMode {
    NoMomentum,
    FullMomentum,
    /// Factorized EMA; `rank_ratio` is resolved to an integer rank by
    /// [`resolve_rank`].
    LowRankMomentum { rank_ratio: f64 },
}

impl MomentumMode {
    pub fn name(&self) -> &'static str {
        match self {
            MomentumMode::NoMomentum => "none",
            MomentumMode::FullMomentum => "full",
            MomentumMode::LowRankMomentum { .. } => "low-rank",
        }
    }
}

/// How a rank ratio maps to an integer rank for an `m x n` parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankRule {
    /// Factor storage `(m + n) * r` equals `ratio` of the full `m * n`
    /// budget: `r = round(ratio * m * n / (m + n))`. This is the rule the
    /// published optimizer-state totals are consistent with, so it is the
    /// default.
    #[default]
    MemoryFraction,
    /// `r = round(ratio * min(m, n))`.
    MinDimFraction,
}

/// Integer rank for a ratio under the given rule, clamped to `[1, min(m, n)]`.
pub fn resolve_rank(rank_ratio: f64, m: usize, n: usize, rule: RankRule) -> usize {
    let raw = match rule {
        RankRule::MemoryFraction => rank_ratio * (m as f64 * n as f64) / ((m + n) as f64),
        RankRule::MinDimFraction => rank_ratio * m.min(n) as f64,
    };
    (raw.round() as usize).clamp(1, m.min(n))
}

/// How the second-order statistic is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondMomentMode {
    /// One EMA entry per parameter entry, as in Adam.
    #[default]
    Full,
    /// A single scalar per parameter block: the EMA of the mean squared
    /// gradient. Equals the mean of the full per-entry EMA exactly, since
    /// the mean commutes with the EMA recursion.
    BlockMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FirstOrder {
    None,
    Full(Matrix),
    LowRank(LowRankPair),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum SecondOrder {
    Full(Matrix),
    BlockMean(f64),
}

/// Update direction produced by a first-order update.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Direction fed to the second-moment scaling; same shape as the
    /// parameter.
    pub direction: Matrix,
    /// `||L_t R_t - m_t||_F` for the low-rank estimator, 0 otherwise.
    /// Diagnostic only.
    pub residual_norm: f64,
}

/// Knobs for the inner factorization solve inside a low-rank update.
#[derive(Debug, Clone, Copy)]
pub struct LowRankFitParams {
    /// Inner gradient-descent iterations per step.
    pub inner_iters: usize,
    /// Replace the warm-started fit with a truncated-SVD refresh.
    pub refresh_due: bool,
    /// Use the raw factor product as the direction instead of the
    /// residual-corrected estimate. Exists for the ablation bench.
    pub skip_bias_correction: bool,
}

impl Default for LowRankFitParams {
    fn default() -> Self {
        LowRankFitParams {
            inner_iters: 5,
            refresh_due: false,
            skip_bias_correction: false,
        }
    }
}

/// Persistent per-parameter optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    mode: MomentumMode,
    rows: usize,
    cols: usize,
    rank: usize,
    first: FirstOrder,
    second: SecondOrder,
    step_count: u64,
}

impl MomentumState {
    pub fn new(
        mode: MomentumMode,
        rows: usize,
        cols: usize,
        second_mode: SecondMomentMode,
        rank_rule: RankRule,
    ) -> Result<Self, MomentumError> {
        let (first, rank) = match mode {
            MomentumMode::NoMomentum => (FirstOrder::None, 0),
            MomentumMode::FullMomentum => (FirstOrder::Full(Matrix::zeros(rows, cols)), 0),
            MomentumMode::LowRankMomentum { rank_ratio } => {
                if !(rank_ratio > 0.0 && rank_ratio <= 1.0) {
                    return Err(MomentumError::InvalidArgument(format!(
                        "rank_ratio {rank_ratio} outside (0, 1]"
                    )));
                }
                let r = resolve_rank(rank_ratio, rows, cols, rank_rule);
                (
                    FirstOrder::LowRank(LowRankPair::zeros(rows, cols, r)?),
                    r,
                )
            }
        };
        let second = match second_mode {
            SecondMomentMode::Full => SecondOrder::Full(Matrix::zeros(rows, cols)),
            SecondMomentMode::BlockMean => SecondOrder::BlockMean(0.0),
        };
        Ok(MomentumState {
            mode,
            rows,
            cols,
            rank,
            first,
            second,
            step_count: 0,
        })
    }

    pub fn mode(&self) -> MomentumMode {
        self.mode
    }

    /// Resolved integer rank (0 unless low-rank).
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Persistent first-order reals actually allocated.
    pub fn first_order_reals(&self) -> usize {
        match &self.first {
            FirstOrder::None => 0,
            FirstOrder::Full(m) => m.len(),
            FirstOrder::LowRank(p) => p.storage_reals(),
        }
    }

    /// Persistent second-order reals actually allocated.
    pub fn second_order_reals(&self) -> usize {
        match &self.second {
            SecondOrder::Full(v) => v.len(),
            SecondOrder::BlockMean(_) => 1,
        }
    }

    fn check_grad(&self, grad: &Matrix) -> Result<(), MomentumError> {
        if grad.shape() != (self.rows, self.cols) {
            return Err(MomentumError::ShapeMismatch {
                state: (self.rows, self.cols),
                grad: grad.shape(),
            });
        }
        Ok(())
    }

    /// Full EMA update: `m <- (1 - beta1) g + beta1 m`, direction is the
    /// new `m`.
    pub fn update_full(&mut self, grad: &Matrix, beta1: f64) -> Result<StepOutput, MomentumError> {
        self.check_grad(grad)?;
        check_beta("beta1", beta1)?;
        let m = match &mut self.first {
            FirstOrder::Full(m) => m,
            other => {
                return Err(MomentumError::ModeMismatch {
                    expected: "full",
                    got: first_order_name(other),
                })
            }
        };
        for (mi, gi) in m.data_mut().iter_mut().zip(grad.data()) {
            *mi = (1.0 - beta1) * gi + beta1 * *mi;
        }
        self.step_count += 1;
        Ok(StepOutput {
            direction: m.clone(),
            residual_norm: 0.0,
        })
    }

    /// Low-rank update with residual correction.
    ///
    /// Materializes the transient `m_t = (1 - beta1) g + beta1 L R`,
    /// refits the factors (warm-started gradient descent, or a truncated
    /// SVD when `refresh_due`), and returns
    /// `m_t - beta1 / (1 - beta1) * (L_t R_t - m_t)`.
    pub fn update_lowrank(
        &mut self,
        grad: &Matrix,
        beta1: f64,
        fit: &LowRankFitParams,
    ) -> Result<StepOutput, MomentumError> {
        self.check_grad(grad)?;
        check_beta("beta1", beta1)?;
        if beta1 >= 1.0 {
            return Err(MomentumError::InvalidArgument(
                "beta1 = 1 leaves the residual correction undefined".to_string(),
            ));
        }
        let rank = self.rank;
        let pair = match &mut self.first {
            FirstOrder::LowRank(p) => p,
            other => {
                return Err(MomentumError::ModeMismatch {
                    expected: "low-rank",
                    got: first_order_name(other),
                })
            }
        };

        // transient full-size workspace, never persisted
        let mut m_t = pair.product();
        for (mi, gi) in m_t.data_mut().iter_mut().zip(grad.data()) {
            *mi = (1.0 - beta1) * gi + beta1 * *mi;
        }

        *pair = if fit.refresh_due {
            cold_refresh(&m_t, rank)?
        } else {
            let base_lr = default_inner_lr(&m_t);
            low_rank_fit(&m_t, pair, fit.inner_iters, base_lr)?
        };

        let approx = pair.product();
        let residual = approx.sub(&m_t)?;
        let residual_norm = residual.frobenius_norm();
        if !residual_norm.is_finite() {
            return Err(MomentumError::Linalg(LinalgError::NonFinite {
                context: "low-rank momentum residual".to_string(),
            }));
        }
        let direction = if fit.skip_bias_correction {
            approx
        } else {
            let mut d = m_t;
            d.axpy(-beta1 / (1.0 - beta1), &residual);
            d
        };
        self.step_count += 1;
        Ok(StepOutput {
            direction,
            residual_norm,
        })
    }

    /// Elementwise EMA of squared gradients (or its block mean).
    pub fn update_second_moment(
        &mut self,
        grad: &Matrix,
        beta2: f64,
    ) -> Result<(), MomentumError> {
        self.check_grad(grad)?;
        check_beta("beta2", beta2)?;
        match &mut self.second {
            SecondOrder::Full(v) => {
                for (vi, gi) in v.data_mut().iter_mut().zip(grad.data()) {
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                }
            }
            SecondOrder::BlockMean(v) => {
                let mean_sq =
                    grad.data().iter().map(|g| g * g).sum::<f64>() / grad.len() as f64;
                *v = beta2 * *v + (1.0 - beta2) * mean_sq;
            }
        }
        Ok(())
    }

    /// Per-entry second-moment value at `(i, j)`.
    pub fn second_moment_at(&self, i: usize, j: usize) -> f64 {
        match &self.second {
            SecondOrder::Full(v) => v.get(i, j),
            SecondOrder::BlockMean(s) => *s,
        }
    }

    /// Full second-moment matrix (block-mean states broadcast the scalar).
    pub fn second_moment_matrix(&self) -> Matrix {
        match &self.second {
            SecondOrder::Full(v) => v.clone(),
            SecondOrder::BlockMean(s) => {
                let mut m = Matrix::zeros(self.rows, self.cols);
                m.data_mut().fill(*s);
                m
            }
        }
    }

    /// The persisted full momentum, for checkpoint inspection and tests.
    pub fn full_momentum(&self) -> Option<&Matrix> {
        match &self.first {
            FirstOrder::Full(m) => Some(m),
            _ => None,
        }
    }

    pub fn low_rank_pair(&self) -> Option<&LowRankPair> {
        match &self.first {
            FirstOrder::LowRank(p) => Some(p),
            _ => None,
        }
    }
}

fn first_order_name(f: &FirstOrder) -> &'static str {
    match f {
        FirstOrder::None => "none",
        FirstOrder::Full(_) => "full",
        FirstOrder::LowRank(_) => "low-rank",
    }
}

fn check_beta(name: &str, beta: f64) -> Result<(), MomentumError> {
    if !(0.0..=1.0).contains(&beta) || !beta.is_finite() {
        return Err(MomentumError::InvalidArgument(format!(
            "{name} = {beta} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Momentum-free update: the direction is the gradient itself and no
/// first-order state exists to touch.
pub fn update_none(grad: &Matrix) -> StepOutput {
    StepOutput {
        direction: grad.clone(),
        residual_norm: 0.0,
    }
}

/// Arithmetic mean of all entries of a second-moment matrix; the scalar
/// that replaces per-entry storage in block-mean mode.
pub fn reduce_second_moment_blockmean(v: &Matrix) -> Result<f64, MomentumError> {
    if v.is_empty() {
        return Err(MomentumError::InvalidArgument(
            "block mean of an empty matrix".to_string(),
        ));
    }
    Ok(v.data().iter().sum::<f64>() / v.len() as f64)
}
