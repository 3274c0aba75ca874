//! Regressor dynamics `φ(t+1) = Fφ(t) + Gu(t)` and the linear output map
//! `y = Hφ`.
//!
//! For FIR models the regressor is laid out input-major:
//! `φ = [u₁(t−1), …, u₁(t−n), u₂(t−1), …, u₂(t−n), …]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelStructure {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    n_y: usize,
    /// Smallest `k` with `Fᵏ = 0`, if `F` is nilpotent.
    nilpotency: Option<usize>,
}

impl ModelStructure {
    /// Validates dimensions and requires spectral radius of `F` below one.
    pub fn new(f: DMatrix<f64>, g: DMatrix<f64>, n_y: usize) -> Result<Self> {
        let m = f.nrows();
        if m == 0 || g.ncols() == 0 || n_y == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        check_len("F columns", m, f.ncols())?;
        check_len("G rows", m, g.nrows())?;
        check_finite("model matrices", f.iter().chain(g.iter()))?;

        let mut power = f.clone();
        let mut nilpotency = None;
        for k in 1..=m {
            if power.iter().all(|&v| v == 0.0) {
                nilpotency = Some(k);
                break;
            }
            power = &power * &f;
        }
        if nilpotency.is_none() {
            let rho = spectral_radius(&f)?;
            if rho >= 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "spectral radius of F is {rho}, must be < 1"
                )));
            }
        }
        Ok(Self { f, g, n_y, nilpotency })
    }

    pub fn f_matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g_matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Regressor length.
    pub fn m(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn nilpotency_index(&self) -> Option<usize> {
        self.nilpotency
    }
}

// Plain QR iteration stalls on some non-normal matrices, so the Schur
// decomposition gets an iteration budget.
fn spectral_radius(f: &DMatrix<f64>) -> Result<f64> {
    let schur = nalgebra::linalg::Schur::try_new(f.clone(), 1e-14, 10_000)
        .ok_or(Error::Solver("eigenvalues of F did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Block-diagonal shift register, one block of `n_taps` per input.
pub fn build_fir_structure(n_u: usize, n_y: usize, n_taps: usize) -> Result<ModelStructure> {
    if n_u == 0 || n_y == 0 || n_taps == 0 {
        return Err(Error::InvalidArgument(format!(
            "FIR structure needs positive counts (n_u={n_u}, n_y={n_y}, n_taps={n_taps})"
        )));
    }
    let m = n_u * n_taps;
    let mut f = DMatrix::zeros(m, m);
    let mut g = DMatrix::zeros(m, n_u);
    for i in 0..n_u {
        let off = i * n_taps;
        g[(off, i)] = 1.0;
        for k in 1..n_taps {
            f[(off + k, off + k - 1)] = 1.0;
        }
    }
    ModelStructure::new(f, g, n_y)
}

pub fn advance_regressor(s: &ModelStructure, phi: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("regressor", s.m(), phi.len())?;
    check_len("input", s.n_u(), u.len())?;
    Ok(&s.f * phi + &s.g * u)
}

/// Fixed point `(I − F)⁻¹Gu` of the regressor dynamics under constant input.
pub fn steady_state_regressor(s: &ModelStructure, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("input", s.n_u(), u.len())?;
    let m = s.m();
    let lhs = DMatrix::identity(m, m) - &s.f;
    lhs.lu()
        .solve(&(&s.g * u))
        .ok_or(Error::Singular("I - F"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMatrix {
    pub h: DMatrix<f64>,
}

impl ParameterMatrix {
    pub fn new(s: &ModelStructure, h: DMatrix<f64>) -> Result<Self> {
        check_len("parameter rows", s.n_y(), h.nrows())?;
        check_len("parameter columns", s.m(), h.ncols())?;
        check_finite("parameter matrix", h.iter())?;
        Ok(Self { h })
    }

    pub fn zeros(s: &ModelStructure) -> Self {
        Self {
            h: DMatrix::zeros(s.n_y(), s.m()),
        }
    }

    /// Parameters of output `j` as a column vector (`H_j` in the identifier).
    pub fn row_vector(&self, j: usize) -> DVector<f64> {
        self.h.row(j).transpose()
    }
}

pub fn output_of(h: &ParameterMatrix, phi: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("regressor", h.h.ncols(), phi.len())?;
    Ok(&h.h * phi)
}
