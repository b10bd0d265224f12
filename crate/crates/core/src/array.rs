//! Uniform linear array geometry, steering vectors and beam scanning.
//!
//! Angles are measured from broadside (θ = 0 faces the array normal).
//! Internally most of the crate works with the sin-domain phase
//! `κ·sin(θ)`, `κ = 2π·d/λ`, since that is what the array observes.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::CMatrix;

/// Number of points in the default sin-domain beam-scan grid.
pub const DEFAULT_SCAN_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformLinearArray {
    num_elements: usize,
    spacing_over_wavelength: f64,
}

impl UniformLinearArray {
    pub fn new(num_elements: usize, spacing_over_wavelength: f64) -> Result<Self> {
        if num_elements == 0 {
            return Err(Error::invalid("array needs at least one element"));
        }
        if !(spacing_over_wavelength.is_finite() && spacing_over_wavelength > 0.0) {
            return Err(Error::invalid(format!(
                "element spacing must be positive, got {spacing_over_wavelength} wavelengths"
            )));
        }
        Ok(Self {
            num_elements,
            spacing_over_wavelength,
        })
    }

    /// Half-wavelength array with `num_elements` elements.
    pub fn half_wavelength(num_elements: usize) -> Result<Self> {
        Self::new(num_elements, 0.5)
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn spacing_over_wavelength(&self) -> f64 {
        self.spacing_over_wavelength
    }

    /// κ = 2π·d/λ.
    pub fn kappa(&self) -> f64 {
        2.0 * PI * self.spacing_over_wavelength
    }

    /// Sin-domain phase κ·sin(θ) of a physical angle.
    pub fn sin_phase(&self, angle: f64) -> f64 {
        self.kappa() * angle.sin()
    }

    /// Inverse of [`sin_phase`](Self::sin_phase). The boolean is set when
    /// `|ψ/κ| > 1` and the result had to be clamped to ±π/2.
    pub fn angle_from_phase(&self, phase: f64) -> (f64, bool) {
        let s = phase / self.kappa();
        if s.abs() > 1.0 {
            (s.signum() * PI / 2.0, true)
        } else {
            (s.asin(), false)
        }
    }

    /// Array response `[1, e^{jκ sinθ}, …, e^{jκ(M-1) sinθ}]`.
    pub fn steering_vector(&self, angle: f64) -> Result<DVector<Complex64>> {
        if !angle.is_finite() {
            return Err(Error::invalid(format!("steering angle must be finite, got {angle}")));
        }
        Ok(self.steering_from_phase(self.sin_phase(angle)))
    }

    /// Steering vector parameterised directly by the sin-domain phase.
    pub fn steering_from_phase(&self, phase: f64) -> DVector<Complex64> {
        DVector::from_fn(self.num_elements, |m, _| {
            if m == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, phase * m as f64)
            }
        })
    }
}

/// Uniform grid of `points` angles in the sin domain, `sin θ_g = -1 + 2g/points`.
pub fn sin_uniform_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|g| (-1.0 + 2.0 * g as f64 / points as f64).asin())
        .collect()
}

/// Wrap a phase into (-π, π].
pub fn wrap_phase(phase: f64) -> f64 {
    let mut p = phase.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Matched-filter spectrum of a `M_T × M` block across receive angles:
/// entry `g` is `‖block · conj(a(M, angle_grid[g]))‖₂`.
pub fn beam_scan(
    block: &CMatrix,
    rx_array: &UniformLinearArray,
    angle_grid: &[f64],
) -> Result<Vec<f64>> {
    if block.ncols() != rx_array.num_elements() {
        return Err(Error::invalid(format!(
            "block has {} columns but the receive array has {} elements",
            block.ncols(),
            rx_array.num_elements()
        )));
    }
    if angle_grid.is_empty() {
        return Err(Error::invalid("beam-scan angle grid is empty"));
    }
    angle_grid
        .iter()
        .map(|&angle| {
            let weights = rx_array.steering_vector(angle)?.map(|w| w.conj());
            Ok((block * weights).norm())
        })
        .collect()
}
