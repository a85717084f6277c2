//! Physical model of the NV electron spin (S = 1) coupled to its intrinsic
//! nitrogen-14 nuclear spin (I = 1).
//!
//! All Hamiltonian entries are stored as ordinary frequencies in hertz; a
//! single global factor of 2*pi is applied at propagation time. The product
//! basis is ordered `m_S in {+1, 0, -1}` (outer) times `m_I in {+1, 0, -1}`
//! (inner), and the reduced working space spans
//! `{m_S = 0, -1} x {m_I = +1, 0}` in that order.

use ndarray::linalg::kron;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::linalg::{self, CMat};

/// Physical constants of the NV - nitrogen-14 system.
///
/// Defaults are the values of the demonstrated setup: a 2.87 GHz zero-field
/// splitting, 28 GHz/T electron gyromagnetic ratio, longitudinal and
/// transverse hyperfine couplings of 2.2 MHz and -2.62 MHz, perturbation
/// constant F = 2.75, and 35 ns electron pi pulses. The nitrogen-14
/// quadrupole splitting and nuclear gyromagnetic ratio are standard
/// literature values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NvParams {
    /// Zero-field splitting, Hz.
    pub d_gs: f64,
    /// Electron gyromagnetic ratio, Hz/T.
    pub gamma_e: f64,
    /// Nitrogen-14 nuclear gyromagnetic ratio, Hz/T.
    pub gamma_n: f64,
    /// Longitudinal hyperfine coupling, Hz.
    pub a_z: f64,
    /// Transverse hyperfine coupling, Hz.
    pub a_perp: f64,
    /// Nitrogen-14 quadrupole splitting, Hz.
    pub quadrupole_p: f64,
    /// Dimensionless second-order perturbation constant.
    pub f_const: f64,
    /// Electron pi-pulse duration, s.
    pub t_pi: f64,
    /// Electron Rabi frequency, Hz. Must satisfy rabi_rate * t_pi = 1/2.
    pub rabi_rate: f64,
}

impl Default for NvParams {
    fn default() -> Self {
        let t_pi = 35e-9;
        Self {
            d_gs: 2.87e9,
            gamma_e: 28e9,
            gamma_n: 3.077e6,
            a_z: 2.2e6,
            a_perp: -2.62e6,
            quadrupole_p: -4.945e6,
            f_const: 2.75,
            t_pi,
            rabi_rate: 0.5 / t_pi,
        }
    }
}

impl NvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_gs > 0.0) {
            return Err(NvError::InvalidParam {
                name: "d_gs",
                value: self.d_gs,
                reason: "zero-field splitting must be positive",
            });
        }
        if !(self.gamma_e > 0.0) {
            return Err(NvError::InvalidParam {
                name: "gamma_e",
                value: self.gamma_e,
                reason: "electron gyromagnetic ratio must be positive",
            });
        }
        if !(self.t_pi > 0.0) {
            return Err(NvError::InvalidParam {
                name: "t_pi",
                value: self.t_pi,
                reason: "pi-pulse duration must be positive",
            });
        }
        let area = self.rabi_rate * self.t_pi;
        if (area - 0.5).abs() > 1e-9 * 0.5 {
            return Err(NvError::InvalidParam {
                name: "rabi_rate",
                value: self.rabi_rate,
                reason: "rabi_rate * t_pi must equal 1/2 (pi-pulse consistency)",
            });
        }
        Ok(())
    }
}

/// Static magnetic field decomposed along and across the NV axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Axial component, T.
    pub b_z: f64,
    /// Off-axis component magnitude, T.
    pub b_perp: f64,
    /// Off-axis direction angle, rad.
    pub azimuth: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            b_z: 0.28,
            b_perp: 5e-3,
            azimuth: 0.0,
        }
    }
}

impl FieldConfig {
    pub fn new(b_z: f64, b_perp: f64, azimuth: f64) -> Self {
        Self {
            b_z,
            b_perp,
            azimuth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_perp >= 0.0) {
            return Err(NvError::InvalidParam {
                name: "b_perp",
                value: self.b_perp,
                reason: "off-axis field magnitude must be non-negative",
            });
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.azimuth) {
            return Err(NvError::InvalidParam {
                name: "azimuth",
                value: self.azimuth,
                reason: "azimuth must lie in [0, 2 pi)",
            });
        }
        if !self.b_z.is_finite() {
            return Err(NvError::InvalidParam {
                name: "b_z",
                value: self.b_z,
                reason: "axial field must be finite",
            });
        }
        Ok(())
    }
}

/// A Hermitian Hamiltonian over the full (9) or reduced (4) space, in Hz.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    pub matrix: CMat,
}

impl Hamiltonian {
    pub fn new(matrix: CMat) -> Result<Self> {
        let dim = matrix.nrows();
        if dim != matrix.ncols() || !(dim == 4 || dim == 9) {
            return Err(NvError::DimensionMismatch {
                expected: 9,
                got: dim,
            });
        }
        let defect = linalg::hermiticity_defect(&matrix);
        if defect > 1e-12 {
            return Err(NvError::Convergence(format!(
                "Hamiltonian is not Hermitian: relative defect {defect:.3e}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Spin-1 operators in the basis m = {+1, 0, -1}.
pub mod spin1 {
    use super::*;

    pub fn sz() -> CMat {
        let mut m = CMat::zeros((3, 3));
        m[[0, 0]] = c(1.0);
        m[[2, 2]] = c(-1.0);
        m
    }

    pub fn sx() -> CMat {
        let r = c(std::f64::consts::FRAC_1_SQRT_2);
        let mut m = CMat::zeros((3, 3));
        m[[0, 1]] = r;
        m[[1, 0]] = r;
        m[[1, 2]] = r;
        m[[2, 1]] = r;
        m
    }

    pub fn sy() -> CMat {
        let r = C64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
        let mut m = CMat::zeros((3, 3));
        m[[0, 1]] = -r;
        m[[1, 0]] = r;
        m[[1, 2]] = -r;
        m[[2, 1]] = r;
        m
    }

    pub fn sz2() -> CMat {
        let mut m = CMat::zeros((3, 3));
        m[[0, 0]] = c(1.0);
        m[[2, 2]] = c(1.0);
        m
    }
}

/// Index of |m_S, m_I> in the 9-dimensional product basis.
pub fn basis_index(m_s: i8, m_i: i8) -> usize {
    debug_assert!((-1..=1).contains(&m_s) && (-1..=1).contains(&m_i));
    3 * (1 - m_s) as usize + (1 - m_i) as usize
}

/// 9-dimensional indices of the reduced basis, in reduced order:
/// (0,+1), (0,0), (-1,+1), (-1,0).
pub const REDUCED_INDICES: [usize; 4] = [3, 4, 6, 7];

/// Electron spin operators embedded in the 9-dimensional product space.
pub fn electron_op(op: &CMat) -> CMat {
    kron(op, &linalg::identity(3))
}

/// Nuclear spin operators embedded in the 9-dimensional product space.
pub fn nuclear_op(op: &CMat) -> CMat {
    kron(&linalg::identity(3), op)
}

/// Hyperfine interaction A_z Sz Iz + A_perp (Sx Ix + Sy Iy), 9-dimensional.
pub fn hyperfine_op(params: &NvParams) -> CMat {
    let mut h = kron(&spin1::sz(), &spin1::sz());
    h.mapv_inplace(|z| z * params.a_z);
    let mut t = kron(&spin1::sx(), &spin1::sx()) + kron(&spin1::sy(), &spin1::sy());
    t.mapv_inplace(|z| z * params.a_perp);
    h + t
}

/// Full lab-frame Hamiltonian of the coupled electron-nuclear system:
/// zero-field splitting, electron and nuclear Zeeman terms, quadrupole
/// splitting, and the hyperfine interaction.
pub fn build_full_hamiltonian(params: &NvParams, field: &FieldConfig) -> Result<Hamiltonian> {
    params.validate()?;
    field.validate()?;
    let (sin_az, cos_az) = field.azimuth.sin_cos();
    let bx = field.b_perp * cos_az;
    let by = field.b_perp * sin_az;

    let mut h = electron_op(&spin1::sz2());
    h.mapv_inplace(|z| z * params.d_gs);

    let mut zeeman_e = electron_op(&spin1::sz()).mapv(|z| z * field.b_z)
        + electron_op(&spin1::sx()).mapv(|z| z * bx)
        + electron_op(&spin1::sy()).mapv(|z| z * by);
    zeeman_e.mapv_inplace(|z| z * params.gamma_e);

    let mut zeeman_n = nuclear_op(&spin1::sz()).mapv(|z| z * field.b_z)
        + nuclear_op(&spin1::sx()).mapv(|z| z * bx)
        + nuclear_op(&spin1::sy()).mapv(|z| z * by);
    zeeman_n.mapv_inplace(|z| z * -params.gamma_n);

    let mut quad = nuclear_op(&spin1::sz2());
    quad.mapv_inplace(|z| z * params.quadrupole_p);

    Hamiltonian::new(h + zeeman_e + zeeman_n + quad + hyperfine_op(params))
}

/// Projection of a 9-dimensional Hamiltonian onto the working subspace
/// spanned by `{m_S = 0, -1} x {m_I = +1, 0}`.
pub fn reduce_subspace(h9: &Hamiltonian) -> Result<Hamiltonian> {
    if h9.dim() != 9 {
        return Err(NvError::DimensionMismatch {
            expected: 9,
            got: h9.dim(),
        });
    }
    Hamiltonian::new(reduce_matrix(&h9.matrix))
}

/// Same projection applied to an arbitrary 9-dimensional operator.
pub fn reduce_matrix(m9: &CMat) -> CMat {
    let mut m = CMat::zeros((4, 4));
    for (a, &ia) in REDUCED_INDICES.iter().enumerate() {
        for (b, &ib) in REDUCED_INDICES.iter().enumerate() {
            m[[a, b]] = m9[[ia, ib]];
        }
    }
    m
}

/// Electron manifold labels of the working subspace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElectronManifold {
    Ms0,
    MsMinus1,
}

impl ElectronManifold {
    pub fn m_s(self) -> i8 {
        match self {
            Self::Ms0 => 0,
            Self::MsMinus1 => -1,
        }
    }
}

const OVERLAP_THRESHOLD: f64 = 0.9;

/// Labelled exact levels of the 9-dimensional model: for every bare basis
/// state, the eigenvector column with dominant overlap on it.
pub struct DressedLevels {
    pub eigen: linalg::HermitianEigen,
    /// Eigenvector column assigned to each bare basis index.
    pub columns: [usize; 9],
}

impl DressedLevels {
    pub fn energy(&self, m_s: i8, m_i: i8) -> f64 {
        self.eigen.values[self.columns[basis_index(m_s, m_i)]]
    }

    pub fn vector(&self, m_s: i8, m_i: i8) -> ndarray::ArrayView1<'_, C64> {
        self.eigen.vectors.column(self.columns[basis_index(m_s, m_i)])
    }
}

/// Diagonalize the full Hamiltonian and assign every dressed level to a
/// bare basis state by eigenvector overlap.
///
/// Fails with a degeneracy error when a dominant overlap drops below 0.9
/// (strong mixing, e.g. near the GSLAC) or when two bare states claim the
/// same eigenvector.
pub fn dressed_levels(params: &NvParams, field: &FieldConfig) -> Result<DressedLevels> {
    let h = build_full_hamiltonian(params, field)?;
    let eigen = linalg::eigh(&h.matrix)?;
    let mut columns = [usize::MAX; 9];
    for bare in 0..9 {
        let mut best = (0usize, -1.0f64);
        for col in 0..9 {
            let w = eigen.vectors[[bare, col]].norm();
            if w > best.1 {
                best = (col, w);
            }
        }
        if best.1 < OVERLAP_THRESHOLD {
            return Err(NvError::Degeneracy {
                overlap: best.1,
                threshold: OVERLAP_THRESHOLD,
            });
        }
        if columns[..bare].contains(&best.0) {
            return Err(NvError::Degeneracy {
                overlap: best.1,
                threshold: OVERLAP_THRESHOLD,
            });
        }
        columns[bare] = best.0;
    }
    Ok(DressedLevels { eigen, columns })
}

/// The two single-quantum transitions of the spin-1 nucleus. Under the
/// default constants the m_I = {+1, 0} pair is the higher-frequency one
/// (right peak of a decoupling-frequency scan) and {0, -1} the lower
/// (left peak).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NuclearTransition {
    /// m_I = +1 <-> 0, the working-subspace pair.
    PlusOneZero,
    /// m_I = 0 <-> -1.
    ZeroMinusOne,
}

impl NuclearTransition {
    pub fn levels(self) -> (i8, i8) {
        match self {
            Self::PlusOneZero => (1, 0),
            Self::ZeroMinusOne => (0, -1),
        }
    }
}

/// Manifold-averaged frequency of a nuclear transition: the mean of its
/// exact frequencies in the m_S = 0 and m_S = -1 manifolds. Decoupling
/// resonances of the full model sit at these averages.
pub fn transition_frequency_avg(
    params: &NvParams,
    field: &FieldConfig,
    transition: NuclearTransition,
) -> Result<f64> {
    let levels = dressed_levels(params, field)?;
    let (hi, lo) = transition.levels();
    let f0 = (levels.energy(0, hi) - levels.energy(0, lo)).abs();
    let f1 = (levels.energy(-1, hi) - levels.energy(-1, lo)).abs();
    Ok(0.5 * (f0 + f1))
}

/// Transition frequency |m_I = +1> <-> |m_I = 0> within the requested
/// electron manifold, from exact diagonalization of the full model.
pub fn nuclear_transition_frequency(
    params: &NvParams,
    field: &FieldConfig,
    manifold: ElectronManifold,
) -> Result<f64> {
    let levels = dressed_levels(params, field)?;
    let m = manifold.m_s();
    Ok((levels.energy(m, 1) - levels.energy(m, 0)).abs())
}

/// Manifold-averaged nuclear transition frequency of the working subspace.
pub fn nuclear_frequency_avg(params: &NvParams, field: &FieldConfig) -> Result<f64> {
    let levels = dressed_levels(params, field)?;
    let f0 = (levels.energy(0, 1) - levels.energy(0, 0)).abs();
    let f1 = (levels.energy(-1, 1) - levels.energy(-1, 0)).abs();
    Ok(0.5 * (f0 + f1))
}

/// Electron |m_S = 0> <-> |m_S = -1> transition frequency averaged over the
/// two nuclear states of the working subspace. This is the microwave drive
/// frequency used by the propagator.
pub fn electron_transition_frequency(params: &NvParams, field: &FieldConfig) -> Result<f64> {
    let levels = dressed_levels(params, field)?;
    let f_i1 = (levels.energy(0, 1) - levels.energy(-1, 1)).abs();
    let f_i0 = (levels.energy(0, 0) - levels.energy(-1, 0)).abs();
    Ok(0.5 * (f_i1 + f_i0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_nuclear_params() -> NvParams {
        NvParams {
            gamma_n: 0.0,
            a_z: 0.0,
            a_perp: 0.0,
            quadrupole_p: 0.0,
            ..NvParams::default()
        }
    }

    #[test]
    fn default_params_are_consistent() {
        NvParams::default().validate().unwrap();
    }

    #[test]
    fn pi_pulse_consistency_enforced() {
        let p = NvParams {
            rabi_rate: 1e7,
            ..NvParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_field_electron_spectrum() {
        // Nuclear terms off: eigenvalues {0, d_gs, d_gs} triply repeated.
        let params = no_nuclear_params();
        let field = FieldConfig::new(0.0, 0.0, 0.0);
        let h = build_full_hamiltonian(&params, &field).unwrap();
        let eig = linalg::eigh(&h.matrix).unwrap();
        for k in 0..3 {
            assert!(eig.values[k].abs() < 1.0, "m_S = 0 sector not at zero");
        }
        for k in 3..9 {
            assert!(
                (eig.values[k] - params.d_gs).abs() < 1e-3,
                "m_S = +-1 sector not at d_gs"
            );
        }
    }

    #[test]
    fn gslac_field_nearly_closes_electron_gap() {
        // At b_z = 102.4 mT the 0 <-> -1 electron splitting passes within
        // 5 MHz of zero.
        let params = no_nuclear_params();
        let field = FieldConfig::new(0.1024, 0.0, 0.0);
        let h = build_full_hamiltonian(&params, &field).unwrap();
        let e0 = h.matrix[[basis_index(0, 0), basis_index(0, 0)]].re;
        let em1 = h.matrix[[basis_index(-1, 0), basis_index(-1, 0)]].re;
        assert!((e0 - em1).abs() < 5e6, "splitting {:.3e}", (e0 - em1).abs());
    }

    #[test]
    fn strong_field_electron_transition() {
        // 280 mT, no tilt: 0 -> -1 transition is |d_gs - gamma_e b_z|.
        let params = NvParams::default();
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let expected = (params.d_gs - params.gamma_e * field.b_z).abs();
        let f = electron_transition_frequency(&params, &field).unwrap();
        assert!(
            (f - expected).abs() < 1e-3 * expected,
            "f = {f:.6e}, expected {expected:.6e}"
        );
        assert!((expected - 4.97e9).abs() < 1e7);
    }

    #[test]
    fn hermiticity_and_block_structure() {
        // With the transverse hyperfine switched off, an axial field leaves
        // no matrix element between different m_S blocks. With it on, the
        // only inter-block elements are the flip-flop ones, which conserve
        // m_S + m_I.
        let params = NvParams {
            a_perp: 0.0,
            ..NvParams::default()
        };
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let h = build_full_hamiltonian(&params, &field).unwrap();
        assert!(linalg::hermiticity_defect(&h.matrix) < 1e-12);
        for ms_a in [-1i8, 0, 1] {
            for ms_b in [-1i8, 0, 1] {
                if ms_a == ms_b {
                    continue;
                }
                for mi_a in [-1i8, 0, 1] {
                    for mi_b in [-1i8, 0, 1] {
                        let z = h.matrix[[basis_index(ms_a, mi_a), basis_index(ms_b, mi_b)]];
                        assert_eq!(z, C64::new(0.0, 0.0));
                    }
                }
            }
        }

        let full = build_full_hamiltonian(&NvParams::default(), &field).unwrap();
        for ms_a in [-1i8, 0, 1] {
            for mi_a in [-1i8, 0, 1] {
                for ms_b in [-1i8, 0, 1] {
                    for mi_b in [-1i8, 0, 1] {
                        if ms_a == ms_b {
                            continue;
                        }
                        let z = full.matrix[[basis_index(ms_a, mi_a), basis_index(ms_b, mi_b)]];
                        if ms_a + mi_a == ms_b + mi_b {
                            continue; // hyperfine flip-flop element
                        }
                        assert_eq!(z, C64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn tilted_field_stays_hermitian() {
        let params = NvParams::default();
        for azimuth in [0.0, 0.7, 2.4, 5.9] {
            let field = FieldConfig::new(0.28, 5e-3, azimuth);
            let h = build_full_hamiltonian(&params, &field).unwrap();
            assert!(linalg::hermiticity_defect(&h.matrix) < 1e-12);
        }
    }

    #[test]
    fn azimuth_rotation_leaves_spectrum_invariant() {
        // Rotational symmetry about the NV axis, asserted rather than assumed.
        let params = NvParams::default();
        let f0 = FieldConfig::new(0.28, 5e-3, 0.0);
        let f1 = FieldConfig::new(0.28, 5e-3, 1.9);
        let e0 = linalg::eigh(&build_full_hamiltonian(&params, &f0).unwrap().matrix).unwrap();
        let e1 = linalg::eigh(&build_full_hamiltonian(&params, &f1).unwrap().matrix).unwrap();
        for (a, b) in e0.values.iter().zip(e1.values.iter()) {
            assert!((a - b).abs() < 1e-4 * a.abs().max(1.0));
        }
    }

    #[test]
    fn reduce_identity() {
        let h9 = Hamiltonian::new(linalg::identity(9)).unwrap();
        let h4 = reduce_subspace(&h9).unwrap();
        assert_eq!(h4.dim(), 4);
        assert!(linalg::fro_norm(&(&h4.matrix - &linalg::identity(4))) < 1e-15);
    }

    #[test]
    fn reduce_rejects_wrong_dim() {
        let h4 = Hamiltonian::new(linalg::identity(4)).unwrap();
        assert!(reduce_subspace(&h4).is_err());
    }

    #[test]
    fn reduced_hyperfine_shift_is_minus_a_z() {
        // Axial field: the reduced matrix is diagonal up to the single
        // flip-flop element a_perp between (0,0) and (-1,+1), and the
        // hyperfine contribution shifts (m_S=-1, m_I=+1) by -a_z relative
        // to m_I=0 once the common nuclear terms are removed via the m_S=0
        // row.
        let params = NvParams::default();
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let h9 = build_full_hamiltonian(&params, &field).unwrap();
        let h4 = reduce_subspace(&h9).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                if a == b || (a, b) == (1, 2) || (a, b) == (2, 1) {
                    continue;
                }
                assert_eq!(h4.matrix[[a, b]], C64::new(0.0, 0.0));
            }
        }
        assert!((h4.matrix[[1, 2]].re - params.a_perp).abs() < 1e-9);
        let d = |i: usize| h4.matrix[[i, i]].re;
        let shift = (d(2) - d(3)) - (d(0) - d(1));
        assert!((shift - (-params.a_z)).abs() < 1e-6);
    }

    #[test]
    fn reduced_hyperfine_matches_operator_restriction() {
        let params = NvParams::default();
        let hf9 = hyperfine_op(&params);
        let hf4 = reduce_matrix(&hf9);
        // Diagonal part a_z * S_z I_z restricted to the block:
        // (0,+1) -> 0, (0,0) -> 0, (-1,+1) -> -a_z, (-1,0) -> 0.
        assert!(hf4[[0, 0]].norm() < 1e-12);
        assert!(hf4[[1, 1]].norm() < 1e-12);
        assert!((hf4[[2, 2]].re - (-params.a_z)).abs() < 1e-9);
        assert!(hf4[[3, 3]].norm() < 1e-12);
    }

    #[test]
    fn subspace_eigenvalues_match_full_model_on_axis() {
        // In the diagonal limit (a_perp = 0) the reduced spectrum is an
        // exact subset of the full one; with the flip-flop term on, the
        // leakage outside the subspace is bounded by a_perp^2 / detuning.
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let leak_scale = {
            let p = NvParams::default();
            p.a_perp.powi(2) / (p.d_gs - p.gamma_e * field.b_z).abs()
        };
        for (a_perp, abs_tol) in [(0.0, 0.0), (NvParams::default().a_perp, 3.0 * leak_scale)] {
            let params = NvParams {
                a_perp,
                ..NvParams::default()
            };
            let h9 = build_full_hamiltonian(&params, &field).unwrap();
            let h4 = reduce_subspace(&h9).unwrap();
            let e9 = linalg::eigh(&h9.matrix).unwrap();
            let e4 = linalg::eigh(&h4.matrix).unwrap();
            for v4 in e4.values.iter() {
                let best = e9
                    .values
                    .iter()
                    .map(|v9| (v9 - v4).abs())
                    .fold(f64::INFINITY, f64::min);
                let tol = (1e-10 * v4.abs().max(1.0)).max(abs_tol);
                assert!(best < tol, "missing {v4:.6e} (best {best:.3e})");
            }
        }
    }

    #[test]
    fn nuclear_frequency_manifold_difference_is_a_z() {
        let params = NvParams::default();
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let f0 = nuclear_transition_frequency(&params, &field, ElectronManifold::Ms0).unwrap();
        let f1 =
            nuclear_transition_frequency(&params, &field, ElectronManifold::MsMinus1).unwrap();
        let diff = (f1 - f0).abs();
        assert!(
            (diff - params.a_z).abs() < 0.01 * params.a_z,
            "diff = {diff:.4e}"
        );
    }

    #[test]
    fn nuclear_frequency_closed_form_on_axis() {
        // m_S = 0 manifold, diagonal limit: |P| + gamma_n * b_z exactly.
        let params = NvParams {
            a_perp: 0.0,
            ..NvParams::default()
        };
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let f = nuclear_transition_frequency(&params, &field, ElectronManifold::Ms0).unwrap();
        let expected = params.quadrupole_p.abs() + params.gamma_n * field.b_z;
        assert!((f - expected).abs() < 1e-6 * expected, "f = {f:.8e}");

        // The flip-flop term only dresses this by ~a_perp^2 / detuning.
        let f_full = nuclear_transition_frequency(
            &NvParams::default(),
            &field,
            ElectronManifold::Ms0,
        )
        .unwrap();
        assert!((f_full - expected).abs() < 1e-3 * expected);
    }

    #[test]
    fn nuclear_frequency_vanishes_without_nuclear_terms() {
        let params = no_nuclear_params();
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let f = nuclear_transition_frequency(&params, &field, ElectronManifold::Ms0).unwrap();
        assert!(f.abs() < 1e-3);
    }

    #[test]
    fn zeeman_linearity_in_axial_field() {
        // Transition frequency 0 <-> -1 is affine in b_z with slope -gamma_e.
        let params = no_nuclear_params();
        let f = |b: f64| {
            let field = FieldConfig::new(b, 0.0, 0.0);
            let levels = dressed_levels(&params, &field).unwrap();
            levels.energy(-1, 0) - levels.energy(0, 0)
        };
        let (b1, b2) = (0.25, 0.32);
        let slope = (f(b2) - f(b1)) / (b2 - b1);
        assert!(
            (slope + params.gamma_e).abs() < 1e-9 * params.gamma_e,
            "slope = {slope:.6e}"
        );
    }

    #[test]
    fn degeneracy_reported_near_gslac() {
        // Right at the anti-crossing with a tilt, 0 and -1 mix strongly.
        let params = NvParams::default();
        let field = FieldConfig::new(0.10246, 2e-3, 0.0);
        let err = dressed_levels(&params, &field);
        assert!(err.is_err(), "expected degeneracy error at the GSLAC");
    }
}
