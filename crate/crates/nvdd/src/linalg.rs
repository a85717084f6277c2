//! Dense complex-matrix helpers sized for the 4- and 9-dimensional Hilbert
//! spaces used throughout the crate.
//!
//! Everything here is deterministic: the Jacobi eigensolver sweeps in a fixed
//! order, so identical inputs give bit-identical decompositions.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{NvError, Result};

pub type CMat = Array2<C64>;

pub fn identity(n: usize) -> CMat {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Relative Hermiticity defect ‖A − A†‖ / ‖A‖ (zero for the zero matrix).
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let norm = fro_norm(a);
    if norm == 0.0 {
        return 0.0;
    }
    fro_norm(&(a - &dagger(a))) / norm
}

/// ‖U†U − 1‖, the distance of `u` from the unitary group.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.nrows();
    fro_norm(&(dagger(u).dot(u) - identity(n)))
}

pub struct HermitianEigen {
    /// Eigenvalues in ascending order.
    pub values: Array1<f64>,
    /// Eigenvectors as columns, matching `values`.
    pub vectors: CMat,
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Converges quadratically; for the 9x9 matrices here a handful of sweeps
/// reaches machine precision. Errors if `a` is not square, not Hermitian
/// to 1e-10 relative, or fails to converge.
pub fn eigh(a: &CMat) -> Result<HermitianEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(NvError::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let defect = hermiticity_defect(a);
    if defect > 1e-10 {
        return Err(NvError::Convergence(format!(
            "eigh input is not Hermitian: relative defect {defect:.3e}"
        )));
    }

    let mut h = a.clone();
    let mut v = identity(n);
    let scale = fro_norm(&h).max(f64::MIN_POSITIVE);
    const MAX_SWEEPS: usize = 60;

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| h[[p, q]].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            return Ok(sorted_eigen(h, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let g = h[[p, q]];
                let r = g.norm();
                if r <= 1e-300 {
                    continue;
                }
                // Unitary 2x2 rotation zeroing the (p, q) element: the phase
                // of g reduces the problem to a real symmetric rotation.
                let phase = g / r;
                let alpha = h[[p, p]].re;
                let beta = h[[q, q]].re;
                let theta = 0.5 * (2.0 * r).atan2(alpha - beta);
                let (s, c) = theta.sin_cos();
                let sp = phase * s; // column-p mixes in e^{i phi} s of column q

                for k in 0..n {
                    let hkp = h[[k, p]];
                    let hkq = h[[k, q]];
                    h[[k, p]] = hkp * c + hkq * sp.conj();
                    h[[k, q]] = -hkp * sp + hkq * c;
                }
                for k in 0..n {
                    let hpk = h[[p, k]];
                    let hqk = h[[q, k]];
                    h[[p, k]] = hpk * c + hqk * sp;
                    h[[q, k]] = -hpk * sp.conj() + hqk * c;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c + vkq * sp.conj();
                    v[[k, q]] = -vkp * sp + vkq * c;
                }
            }
        }
    }
    Err(NvError::Convergence(format!(
        "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
    )))
}

fn sorted_eigen(h: CMat, v: CMat) -> HermitianEigen {
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| h[[i, i]].re.partial_cmp(&h[[j, j]].re).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| h[[i, i]].re));
    let mut vectors = CMat::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v[[row, i]];
        }
    }
    HermitianEigen { values, vectors }
}

/// Rotation angle and unit axis of a 2x2 unitary, up to global phase:
/// M = e^{i phi} (cos(t/2) - i sin(t/2) n.sigma) with t in [0, 2 pi).
pub fn su2_axis_angle(m: [[C64; 2]; 2]) -> (f64, [f64; 3]) {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let phase = C64::from_polar(1.0, -0.5 * det.arg());
    let a = m[0][0] * phase;
    let b = m[0][1] * phase;
    let cos_half = a.re.clamp(-1.0, 1.0);
    let nx_s = -b.im;
    let ny_s = -b.re;
    let nz_s = -a.im;
    let sin_half = (nx_s * nx_s + ny_s * ny_s + nz_s * nz_s).sqrt();
    let theta = 2.0 * sin_half.atan2(cos_half);
    if sin_half < 1e-12 {
        return (theta, [0.0, 0.0, 1.0]);
    }
    (theta, [nx_s / sin_half, ny_s / sin_half, nz_s / sin_half])
}

/// exp(i * factor * H) for Hermitian `h`, exact via eigendecomposition.
///
/// With `factor = -2*pi*t` this is the propagator of a Hamiltonian stored in
/// ordinary-frequency units (Hz) over a time `t` in seconds.
pub fn expi_hermitian(h: &CMat, factor: f64) -> Result<CMat> {
    let eig = eigh(h)?;
    let phases: Vec<C64> = eig
        .values
        .iter()
        .map(|&lambda| C64::from_polar(1.0, factor * lambda))
        .collect();
    // V diag(phases) V^dag
    let mut scaled = eig.vectors.clone();
    for (mut col, ph) in scaled.columns_mut().into_iter().zip(phases.iter()) {
        for z in col.iter_mut() {
            *z *= *ph;
        }
    }
    Ok(scaled.dot(&dagger(&eig.vectors)))
}
