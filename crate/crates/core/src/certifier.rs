//! Builds the transformed block Jacobians of the closed-loop robot protocol,
//! evaluates the delay-free contraction margin and the delayed-coupling norm
//! bound, and emits a certificate with the resulting convergence rate and
//! deviation-bound coefficients.
//!
//! The delay-free condition asks the measure of the transformed self block to
//! be negative with margin σ̄; the delayed condition caps the worst-case row
//! sum of delayed block norms by σ. Feasibility means σ̄ - σ > ε, and the
//! certified deviation bound follows with rate λ̂ and amplification κ.

use serde::{Deserialize, Serialize};

use crate::halanay::{self, ContractionMargins, ScalabilityBoundCoeffs};
use crate::linalg::{
    composite_measure_bound, composite_norm_bound, induced_norm, matrix_measure,
    BlockMatrixBounds, LinalgError, Matrix, PNorm,
};
use crate::protocol::{GainSet, ProtocolError};

/// Default tolerance for the strict feasibility comparison `σ̄ - σ > ε`.
pub const DEFAULT_MARGIN_EPSILON: f64 = 1e-9;

/// Transformed 6x6 blocks of the closed-loop Jacobian for one agent, worst
/// case over the state space.
#[derive(Clone, Debug)]
pub struct BlockJacobians {
    /// Delay-free self block: companion-like, identity super-diagonal blocks
    /// and the gain column `(-k0, -k1, -k2) ⊗ I₂`.
    pub a_bar_ii: Matrix,
    /// Worst-case delayed self block, `-N̄ (ḡ0, ḡ1, ḡ2) ⊗ I₂` in the first
    /// block column (the saturation slope is in (0, 1] and there are at most
    /// N̄ neighbors).
    pub b_tilde_ii: Matrix,
    /// Worst-case delayed cross block for a single neighbor.
    pub b_tilde_ij: Matrix,
    /// Upper-triangular coordinate transformation (unit diagonal, so always
    /// invertible).
    pub t_bar: Matrix,
    /// Its closed-form inverse.
    pub t_bar_inv: Matrix,
}

impl BlockJacobians {
    /// `T̄ M T̄⁻¹`.
    pub fn transform(&self, m: &Matrix) -> Matrix {
        self.t_bar.mul(m).mul(&self.t_bar_inv)
    }
}

/// Assemble the worst-case blocks for a gain set and neighbor bound.
pub fn build_blocks(gains: &GainSet, n_bar: usize) -> BlockJacobians {
    let g = gains.gbar();
    let nb = n_bar as f64;
    let a = Matrix::from_rows(
        3,
        3,
        &[-gains.k0, 1.0, 0.0, -gains.k1, 0.0, 1.0, -gains.k2, 0.0, 0.0],
    );
    let bii = Matrix::from_rows(
        3,
        3,
        &[-nb * g[0], 0.0, 0.0, -nb * g[1], 0.0, 0.0, -nb * g[2], 0.0, 0.0],
    );
    let bij = Matrix::from_rows(3, 3, &[g[0], 0.0, 0.0, g[1], 0.0, 0.0, g[2], 0.0, 0.0]);
    let t = Matrix::from_rows(
        3,
        3,
        &[1.0, gains.alpha1, 0.0, 0.0, 1.0, gains.alpha2, 0.0, 0.0, 1.0],
    );
    let t_inv = Matrix::from_rows(
        3,
        3,
        &[
            1.0,
            -gains.alpha1,
            gains.alpha1 * gains.alpha2,
            0.0,
            1.0,
            -gains.alpha2,
            0.0,
            0.0,
            1.0,
        ],
    );
    BlockJacobians {
        a_bar_ii: Matrix::kron_identity(&a, 2),
        b_tilde_ii: Matrix::kron_identity(&bii, 2),
        b_tilde_ij: Matrix::kron_identity(&bij, 2),
        t_bar: Matrix::kron_identity(&t, 2),
        t_bar_inv: Matrix::kron_identity(&t_inv, 2),
    }
}

/// Delay-free margin `σ̄ = -μ₂(T̄ Ā_ii T̄⁻¹)`. The delay-free cross blocks
/// vanish for this protocol (only the leader couples without delay), so the
/// self-block measure is the whole condition; a positive return means the
/// condition holds with that margin.
pub fn check_c2(bj: &BlockJacobians) -> f64 {
    let m = bj.transform(&bj.a_bar_ii);
    -matrix_measure(&m, PNorm::Two).expect("square by construction")
}

/// Delayed-coupling bound `σ = ‖T̄ B̃_ii T̄⁻¹‖₂ + N̄ ‖T̄ B̃_ij T̄⁻¹‖₂` — the
/// worst-case row sum of delayed block norms (B̃_ii already carries the N̄
/// neighbor factor).
pub fn check_c3(bj: &BlockJacobians, n_bar: usize) -> f64 {
    let nii = induced_norm(&bj.transform(&bj.b_tilde_ii), PNorm::Two);
    let nij = induced_norm(&bj.transform(&bj.b_tilde_ij), PNorm::Two);
    nii + n_bar as f64 * nij
}

/// A scalability certificate: the margins, the rate and amplification of the
/// deviation bound, and the tolerance used for the feasibility comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub sigma_bar: f64,
    pub sigma_under: f64,
    /// Convergence rate λ̂; present only when feasible.
    pub rate: Option<f64>,
    /// Condition number κ of the coordinate transformation.
    pub kappa: f64,
    pub feasible: bool,
    pub margins_epsilon: f64,
}

impl Certificate {
    pub fn margin(&self) -> f64 {
        self.sigma_bar - self.sigma_under
    }

    /// Coefficients of the deviation bound, available when feasible.
    pub fn bound_coeffs(&self, tau_max: f64) -> Option<ScalabilityBoundCoeffs> {
        if !self.feasible {
            return None;
        }
        let m = ContractionMargins::new(self.sigma_bar, self.sigma_under, tau_max).ok()?;
        Some(ScalabilityBoundCoeffs::new(self.kappa, &m))
    }
}

/// Certify a gain set: evaluate the tight margins, and when `σ̄ - σ > ε`
/// compute the convergence rate and the transformation condition number.
/// Infeasible gains yield `feasible = false` with both margins filled in,
/// not an error.
pub fn certify(gains: &GainSet, n_bar: usize, tau_max: f64) -> Result<Certificate, ProtocolError> {
    certify_with_epsilon(gains, n_bar, tau_max, DEFAULT_MARGIN_EPSILON)
}

/// [`certify`] with an explicit feasibility tolerance.
pub fn certify_with_epsilon(
    gains: &GainSet,
    n_bar: usize,
    tau_max: f64,
    margins_epsilon: f64,
) -> Result<Certificate, ProtocolError> {
    gains.validate()?;
    let bj = build_blocks(gains, n_bar);
    let sigma_bar = check_c2(&bj);
    let sigma_under = check_c3(&bj, n_bar);
    // identical diagonal transformation blocks make the composite condition
    // number equal the single-block one
    let kappa = induced_norm(&bj.t_bar, PNorm::Two) * induced_norm(&bj.t_bar_inv, PNorm::Two);
    Ok(finish_certificate(sigma_bar, sigma_under, kappa, tau_max, margins_epsilon))
}

/// Certify from user-supplied per-block bounds valid over the whole state
/// space: a measure/norm table for the delay-free part and a norm table
/// (diagonal block norms supplied separately) for the delayed part. `kappa`
/// is the condition number of whatever transformation produced the bounds
/// (1 if none).
pub fn certify_general(
    delay_free: &BlockMatrixBounds,
    delayed: &BlockMatrixBounds,
    delayed_diag_norms: &[f64],
    kappa: f64,
    tau_max: f64,
    margins_epsilon: f64,
) -> Result<Certificate, LinalgError> {
    if delay_free.n_blocks() != delayed.n_blocks() {
        return Err(LinalgError::DimensionMismatch(format!(
            "{} delay-free blocks vs {} delayed",
            delay_free.n_blocks(),
            delayed.n_blocks()
        )));
    }
    let sigma_bar = -composite_measure_bound(delay_free);
    let sigma_under = composite_norm_bound(delayed, delayed_diag_norms)?;
    Ok(finish_certificate(sigma_bar, sigma_under, kappa, tau_max, margins_epsilon))
}

fn finish_certificate(
    sigma_bar: f64,
    sigma_under: f64,
    kappa: f64,
    tau_max: f64,
    margins_epsilon: f64,
) -> Certificate {
    let feasible = sigma_bar - sigma_under > margins_epsilon && sigma_bar > 0.0;
    let rate = if feasible {
        ContractionMargins::new(sigma_bar, sigma_under.max(0.0), tau_max)
            .ok()
            .map(|m| halanay::convergence_rate(&m))
    } else {
        None
    };
    Certificate { sigma_bar, sigma_under, rate, kappa, feasible: rate.is_some(), margins_epsilon }
}
