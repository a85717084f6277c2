//! Time evolution of the coupled spin system through pulse sequences.
//!
//! Evolution runs in the exact dressed basis of the static Hamiltonian: free
//! evolution is a pure phase there, and a resonant microwave element adds the
//! rotating-wave drive operator restricted to dressed-level pairs whose
//! frame phases co-rotate with the carrier. Every element is a
//! piecewise-constant generator, so propagators are exact matrix
//! exponentials — no time stepping on the main path. A separate
//! step-integrated path keeps the counter-rotating terms and serves as the
//! rotating-wave-approximation cross-check.

use std::collections::HashMap;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::linalg::{self, CMat};
use crate::model::{self, FieldConfig, NvParams};
use crate::sequence::{PulseElement, PulseSequence};

/// Which frame a state is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Lab,
    DriveRotating,
}

/// Density matrix over the 9- or 4-dimensional space, in the bare product
/// basis, plus the cumulative sequence time.
#[derive(Clone, Debug)]
pub struct QuantumState {
    pub rho: CMat,
    pub frame: Frame,
    pub time: f64,
}

impl QuantumState {
    pub fn from_rho(rho: CMat) -> Self {
        Self {
            rho,
            frame: Frame::DriveRotating,
            time: 0.0,
        }
    }

    /// Pure basis state |index>.
    pub fn pure(dim: usize, index: usize) -> Self {
        let mut rho = CMat::zeros((dim, dim));
        rho[[index, index]] = C64::new(1.0, 0.0);
        Self::from_rho(rho)
    }

    /// Electron in m_S = 0, nuclear spin maximally mixed (uninitialized).
    pub fn electron0_nuclear_mixed(dim: usize) -> Self {
        let mut rho = CMat::zeros((dim, dim));
        match dim {
            9 => {
                for m_i in [-1i8, 0, 1] {
                    let i = model::basis_index(0, m_i);
                    rho[[i, i]] = C64::new(1.0 / 3.0, 0.0);
                }
            }
            4 => {
                rho[[0, 0]] = C64::new(0.5, 0.0);
                rho[[1, 1]] = C64::new(0.5, 0.0);
            }
            _ => panic!("unsupported dimension {dim}"),
        }
        Self::from_rho(rho)
    }

    /// Reduced-space pure state (c0 |0_e> + c1 |1_e>) (x) |m_I=+1>.
    pub fn electron_superposition(c0: C64, c1: C64) -> Self {
        let norm = (c0.norm_sqr() + c1.norm_sqr()).sqrt();
        let (a, b) = (c0 / norm, c1 / norm);
        let mut rho = CMat::zeros((4, 4));
        rho[[0, 0]] = a * a.conj();
        rho[[0, 2]] = a * b.conj();
        rho[[2, 0]] = b * a.conj();
        rho[[2, 2]] = b * b.conj();
        Self::from_rho(rho)
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let tr: C64 = self.rho.diag().iter().sum();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(NvError::Convergence(format!(
                "state trace {tr} deviates from one"
            )));
        }
        if linalg::hermiticity_defect(&self.rho) > 1e-10 {
            return Err(NvError::Convergence("state is not Hermitian".into()));
        }
        let eig = linalg::eigh(&self.rho)?;
        if eig.values.iter().any(|&v| v < -1e-10) {
            return Err(NvError::Convergence(format!(
                "state has negative eigenvalue {:.3e}",
                eig.values[0]
            )));
        }
        Ok(())
    }

    /// Population of the electron manifold `m_s`.
    pub fn electron_population(&self, m_s: i8) -> f64 {
        basis_labels(self.dim())
            .iter()
            .enumerate()
            .filter(|(_, (ms, _))| *ms == m_s)
            .map(|(i, _)| self.rho[[i, i]].re)
            .sum()
    }

    /// Population of the nuclear projection `m_i`.
    pub fn nuclear_population(&self, m_i: i8) -> f64 {
        basis_labels(self.dim())
            .iter()
            .enumerate()
            .filter(|(_, (_, mi))| *mi == m_i)
            .map(|(i, _)| self.rho[[i, i]].re)
            .sum()
    }
}

/// (m_S, m_I) labels per basis index.
pub fn basis_labels(dim: usize) -> Vec<(i8, i8)> {
    match dim {
        9 => {
            let mut v = Vec::with_capacity(9);
            for m_s in [1i8, 0, -1] {
                for m_i in [1i8, 0, -1] {
                    v.push((m_s, m_i));
                }
            }
            v
        }
        4 => vec![(0, 1), (0, 0), (-1, 1), (-1, 0)],
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Phenomenological decoherence applied on top of the unitary evolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Electron dephasing time under decoupling, s; `None` disables it.
    pub t2_dd: Option<f64>,
    /// Quasi-static spread of the electron transition frequency, Hz.
    pub detuning_sigma: f64,
    /// Stretch exponent of the coherence envelope exp(-(t/T2)^p).
    pub stretch_p: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            t2_dd: None,
            detuning_sigma: 0.0,
            stretch_p: 1.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if let Some(t2) = self.t2_dd {
            if !(t2 > 0.0) {
                return Err(NvError::InvalidParam {
                    name: "t2_dd",
                    value: t2,
                    reason: "dephasing time must be positive",
                });
            }
        }
        if self.detuning_sigma < 0.0 {
            return Err(NvError::InvalidParam {
                name: "detuning_sigma",
                value: self.detuning_sigma,
                reason: "spread must be non-negative",
            });
        }
        if !(self.stretch_p > 0.0) {
            return Err(NvError::InvalidParam {
                name: "stretch_p",
                value: self.stretch_p,
                reason: "stretch exponent must be positive",
            });
        }
        Ok(())
    }

    fn envelope(&self, t: f64) -> f64 {
        match self.t2_dd {
            None => 1.0,
            Some(t2) => (-(t / t2).powf(self.stretch_p)).exp(),
        }
    }

    /// Draw the quasi-static detuning for this realization.
    pub fn sample_detuning(&self) -> f64 {
        if self.detuning_sigma == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.detuning_sigma * gaussian(&mut rng)
    }
}

/// Box-Muller standard normal sample.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fluorescence readout model. Factors cancel in the normalized signal;
/// they exist so the cancellation itself can be exercised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutModel {
    /// Mean counts for m_S = 0.
    pub brightness_0: f64,
    /// Relative fluorescence dip of m_S = -1, in (0, 1).
    pub contrast: f64,
    pub shot_noise: bool,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self {
            brightness_0: 1000.0,
            contrast: 0.3,
            shot_noise: false,
        }
    }
}

impl ReadoutModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.brightness_0 > 0.0) {
            return Err(NvError::InvalidParam {
                name: "brightness_0",
                value: self.brightness_0,
                reason: "brightness must be positive",
            });
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(NvError::InvalidParam {
                name: "contrast",
                value: self.contrast,
                reason: "contrast must lie in (0, 1)",
            });
        }
        Ok(())
    }
}

/// Raw fluorescence counts brightness_0 (1 - contrast P(m_S = -1)), with
/// Poisson sampling when shot noise is enabled.
pub fn readout_signal<R: Rng>(state: &QuantumState, readout: &ReadoutModel, rng: &mut R) -> f64 {
    let p_dark = state.electron_population(-1).clamp(0.0, 1.0);
    let mean = readout.brightness_0 * (1.0 - readout.contrast * p_dark);
    if readout.shot_noise {
        poisson(mean, rng) as f64
    } else {
        mean
    }
}

/// Poisson sample; Knuth for small means, normal approximation above 30.
fn poisson<R: Rng>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda > 30.0 {
        let z = gaussian(rng);
        return (lambda + lambda.sqrt() * z).round().max(0.0) as u64;
    }
    let l = (-lambda).exp();
    let mut k = 0u64;
    let mut p = 1.0;
    loop {
        p *= rng.gen_range(0.0..1.0f64);
        if p <= l {
            return k;
        }
        k += 1;
    }
}

/// Normalized contrast S = (S0 - S1) / (S0 + S1).
pub fn normalized_signal(s0: f64, s1: f64) -> Result<f64> {
    let sum = s0 + s1;
    if !(sum > 0.0) {
        return Err(NvError::NormalizationDomain { sum });
    }
    Ok((s0 - s1) / sum)
}

#[derive(PartialEq, Eq, Hash)]
enum ElementKey {
    Delay(u64),
    Pulse(u64, u64, u64),
}

fn element_key(e: &PulseElement) -> ElementKey {
    match *e {
        PulseElement::Delay { duration } => ElementKey::Delay(duration.to_bits()),
        PulseElement::Pulse {
            duration,
            phase,
            rabi_rate,
        } => ElementKey::Pulse(duration.to_bits(), phase.to_bits(), rabi_rate.to_bits()),
    }
}

/// Piecewise-constant evolution engine over the dressed basis of the static
/// Hamiltonian.
pub struct Engine {
    dim: usize,
    /// Dressed eigenbasis columns (bare -> dressed transform).
    basis: CMat,
    /// Dressed level energies, Hz.
    energies: Vec<f64>,
    /// In-frame diagonal: energy minus frame generator f_drive * k_level.
    frame_diag: Vec<f64>,
    /// Electron manifold label per dressed level.
    manifold: Vec<i8>,
    /// Dressed-basis drive operator (full, before the RWA projection).
    drive_x: CMat,
    /// Drive carrier frequency, Hz.
    pub f_drive: f64,
    cache: HashMap<ElementKey, CMat>,
}

impl Engine {
    /// Build for the given model dimension (9 or 4). `detuning` shifts the
    /// electron levels like an axial-field offset while the carrier stays
    /// at the unshifted transition frequency.
    pub fn new(params: &NvParams, field: &FieldConfig, dim: usize, detuning: f64) -> Result<Self> {
        let h9 = model::build_full_hamiltonian(params, field)?;
        let f_drive = model::electron_transition_frequency(params, field)?;

        let (h_static, sx) = match dim {
            9 => (
                h9.matrix.clone(),
                model::electron_op(&model::spin1::sx()),
            ),
            4 => (
                model::reduce_matrix(&h9.matrix),
                model::reduce_matrix(&model::electron_op(&model::spin1::sx())),
            ),
            d => {
                return Err(NvError::DimensionMismatch {
                    expected: 9,
                    got: d,
                })
            }
        };

        let mut h = h_static;
        if detuning != 0.0 {
            let sz = match dim {
                9 => model::electron_op(&model::spin1::sz()),
                _ => model::reduce_matrix(&model::electron_op(&model::spin1::sz())),
            };
            h = h + sz.mapv(|z| z * detuning);
        }

        let eig = linalg::eigh(&h)?;
        let labels = basis_labels(dim);
        // Assign every dressed level the electron manifold of its dominant
        // bare component.
        let mut manifold = Vec::with_capacity(dim);
        for col in 0..dim {
            let mut best = (0usize, -1.0f64);
            for row in 0..dim {
                let w = eig.vectors[[row, col]].norm();
                if w > best.1 {
                    best = (row, w);
                }
            }
            if best.1 < 2.0f64.sqrt().recip() {
                return Err(NvError::Degeneracy {
                    overlap: best.1,
                    threshold: 2.0f64.sqrt().recip(),
                });
            }
            manifold.push(labels[best.0].0);
        }

        let drive_x = dressed(&eig.vectors, &sx);
        let energies: Vec<f64> = eig.values.iter().copied().collect();
        let frame_diag: Vec<f64> = energies
            .iter()
            .zip(&manifold)
            .map(|(e, m)| e - f_drive * *m as f64)
            .collect();

        Ok(Self {
            dim,
            basis: eig.vectors,
            energies,
            frame_diag,
            manifold,
            drive_x,
            f_drive,
            cache: HashMap::new(),
        })
    }

    /// In-frame generator of a microwave pulse: the diagonal static part
    /// plus the co-rotating drive elements between adjacent manifolds.
    /// The carrier phase rides on the manifold-raising/lowering parts as
    /// e^{-+ i phi}; in the bare two-level limit this reduces to
    /// (rabi/2)(cos phi sigma_x + sin phi sigma_y).
    fn pulse_generator(&self, phase: f64, rabi_rate: f64) -> CMat {
        let amp = rabi_rate * std::f64::consts::FRAC_1_SQRT_2;
        let mut h = CMat::zeros((self.dim, self.dim));
        for j in 0..self.dim {
            h[[j, j]] = C64::new(self.frame_diag[j], 0.0);
            for k in 0..self.dim {
                let dk = self.manifold[j] - self.manifold[k];
                if dk.abs() != 1 {
                    continue;
                }
                let rot = C64::from_polar(1.0, -f64::from(dk) * phase);
                h[[j, k]] = amp * self.drive_x[[j, k]] * rot;
            }
        }
        h
    }

    /// Unitary of one element in the dressed in-frame basis.
    fn element_unitary(&mut self, e: &PulseElement) -> Result<CMat> {
        let key = element_key(e);
        if let Some(u) = self.cache.get(&key) {
            return Ok(u.clone());
        }
        let u = match *e {
            PulseElement::Delay { duration } => {
                let mut u = CMat::zeros((self.dim, self.dim));
                for j in 0..self.dim {
                    u[[j, j]] =
                        C64::from_polar(1.0, -std::f64::consts::TAU * self.frame_diag[j] * duration);
                }
                u
            }
            PulseElement::Pulse {
                duration,
                phase,
                rabi_rate,
            } => {
                let h = self.pulse_generator(phase, rabi_rate);
                linalg::expi_hermitian(&h, -std::f64::consts::TAU * duration)?
            }
        };
        self.cache.insert(key, u.clone());
        Ok(u)
    }

    /// Transform a bare-basis density matrix into the dressed basis.
    fn to_dressed(&self, rho: &CMat) -> CMat {
        linalg::dagger(&self.basis).dot(rho).dot(&self.basis)
    }

    fn to_bare(&self, rho: &CMat) -> CMat {
        self.basis.dot(rho).dot(&linalg::dagger(&self.basis))
    }

    /// Undo the frame rotation accumulated over `elapsed`, turning an
    /// in-frame dressed density matrix into the lab one.
    fn frame_unwind(&self, rho: &mut CMat, elapsed: f64) {
        for j in 0..self.dim {
            for k in 0..self.dim {
                let dk = (self.manifold[j] - self.manifold[k]) as f64;
                if dk != 0.0 {
                    rho[[j, k]] *=
                        C64::from_polar(1.0, -std::f64::consts::TAU * self.f_drive * dk * elapsed);
                }
            }
        }
    }

    fn apply_coherence_factor(&self, rho: &mut CMat, factor: f64) {
        if factor >= 1.0 {
            return;
        }
        for j in 0..self.dim {
            for k in 0..self.dim {
                if self.manifold[j] != self.manifold[k] {
                    rho[[j, k]] *= factor;
                }
            }
        }
    }
}

fn dressed(vectors: &CMat, op: &CMat) -> CMat {
    linalg::dagger(vectors).dot(op).dot(vectors)
}

/// Evolve a state through a pulse sequence with optional dephasing and a
/// quasi-static detuning draw.
///
/// The sequence is one standalone shot: the drive carrier starts in phase
/// with the frame, and the returned state is unwound to the lab frame at
/// the final time.
pub fn evolve(
    state: &QuantumState,
    seq: &PulseSequence,
    params: &NvParams,
    field: &FieldConfig,
    noise: &NoiseModel,
) -> Result<QuantumState> {
    noise.validate()?;
    let mut engine = Engine::new(params, field, state.dim(), noise.sample_detuning())?;
    let mut rho = engine.to_dressed(&state.rho);
    let mut t = state.time;
    for e in &seq.elements {
        let d = e.duration();
        if d <= 0.0 {
            continue;
        }
        let u = engine.element_unitary(e)?;
        rho = u.dot(&rho).dot(&linalg::dagger(&u));
        let factor = if noise.t2_dd.is_some() {
            noise.envelope(t + d) / noise.envelope(t)
        } else {
            1.0
        };
        engine.apply_coherence_factor(&mut rho, factor);
        t += d;
    }
    engine.frame_unwind(&mut rho, t - state.time);
    Ok(QuantumState {
        rho: engine.to_bare(&rho),
        frame: Frame::Lab,
        time: t,
    })
}

/// A point of the optional step-by-step trajectory dump.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrajectoryPoint {
    pub time_s: f64,
    pub p_ms0: f64,
    pub p_mi_plus1: f64,
    pub coherence_re: f64,
    pub coherence_im: f64,
}

/// Like [`evolve`], additionally recording populations and the summed
/// electron 0 <-> -1 coherence after every element.
pub fn evolve_traced(
    state: &QuantumState,
    seq: &PulseSequence,
    params: &NvParams,
    field: &FieldConfig,
    noise: &NoiseModel,
) -> Result<(QuantumState, Vec<TrajectoryPoint>)> {
    noise.validate()?;
    let mut engine = Engine::new(params, field, state.dim(), noise.sample_detuning())?;
    let mut rho = engine.to_dressed(&state.rho);
    let mut t = state.time;
    let t_start = t;
    let mut track = Vec::with_capacity(seq.elements.len() + 1);
    let record =
        |engine: &Engine, rho: &CMat, t: f64, out: &mut Vec<TrajectoryPoint>| {
            let mut lab = rho.clone();
            engine.frame_unwind(&mut lab, t - t_start);
            let bare = QuantumState {
                rho: engine.to_bare(&lab),
                frame: Frame::Lab,
                time: t,
            };
            let labels = basis_labels(bare.dim());
            let mut coh = C64::new(0.0, 0.0);
            for (i, (ms_i, mi_i)) in labels.iter().enumerate() {
                for (j, (ms_j, mi_j)) in labels.iter().enumerate() {
                    if *ms_i == 0 && *ms_j == -1 && mi_i == mi_j {
                        coh += bare.rho[[i, j]];
                    }
                }
            }
            out.push(TrajectoryPoint {
                time_s: t,
                p_ms0: bare.electron_population(0),
                p_mi_plus1: bare.nuclear_population(1),
                coherence_re: coh.re,
                coherence_im: coh.im,
            });
        };
    record(&engine, &rho, t, &mut track);
    for e in &seq.elements {
        let d = e.duration();
        if d <= 0.0 {
            continue;
        }
        let u = engine.element_unitary(e)?;
        rho = u.dot(&rho).dot(&linalg::dagger(&u));
        let factor = if noise.t2_dd.is_some() {
            noise.envelope(t + d) / noise.envelope(t)
        } else {
            1.0
        };
        engine.apply_coherence_factor(&mut rho, factor);
        t += d;
        record(&engine, &rho, t, &mut track);
    }
    engine.frame_unwind(&mut rho, t - t_start);
    Ok((
        QuantumState {
            rho: engine.to_bare(&rho),
            frame: Frame::Lab,
            time: t,
        },
        track,
    ))
}

/// Total noiseless unitary of a sequence, expressed in the bare basis and
/// kept in the drive-rotating frame (so propagators of consecutive blocks
/// compose by multiplication). Errors if the product drifts from unitarity
/// beyond 1e-10.
pub fn sequence_propagator(
    seq: &PulseSequence,
    params: &NvParams,
    field: &FieldConfig,
    dim: usize,
) -> Result<CMat> {
    let mut engine = Engine::new(params, field, dim, 0.0)?;
    let mut u_total = linalg::identity(dim);
    for e in &seq.elements {
        if e.duration() <= 0.0 {
            continue;
        }
        let u = engine.element_unitary(e)?;
        u_total = u.dot(&u_total);
    }
    let defect = linalg::unitarity_defect(&u_total);
    if defect > 1e-10 {
        return Err(NvError::Convergence(format!(
            "propagator unitarity defect {defect:.3e}"
        )));
    }
    Ok(engine.basis.dot(&u_total).dot(&linalg::dagger(&engine.basis)))
}

/// Multiply electron coherences by the configured envelope for a bare
/// duration (the state's own clock is not consulted).
pub fn apply_dephasing(state: &QuantumState, duration: f64, noise: &NoiseModel) -> QuantumState {
    let labels = basis_labels(state.dim());
    let factor = noise.envelope(duration.max(0.0));
    let mut rho = state.rho.clone();
    for (i, (ms_i, _)) in labels.iter().enumerate() {
        for (j, (ms_j, _)) in labels.iter().enumerate() {
            if ms_i != ms_j {
                rho[[i, j]] *= factor;
            }
        }
    }
    QuantumState {
        rho,
        frame: state.frame,
        time: state.time,
    }
}

/// Step-integrated evolution keeping the counter-rotating drive terms.
///
/// The generator in the dressed lab basis is H_D + 2 amp cos(2 pi f t + phi)
/// G_d, integrated with a fourth-order commutator-free scheme and step
/// doubling until the final populations move by less than `tol` (the
/// convergence policy; failure to converge is an error, never silently
/// accepted).
pub fn evolve_lab_stepped(
    state: &QuantumState,
    seq: &PulseSequence,
    params: &NvParams,
    field: &FieldConfig,
    tol: f64,
) -> Result<QuantumState> {
    let engine = Engine::new(params, field, state.dim(), 0.0)?;
    let dim = state.dim();

    // One full pass at a given subdivision of each element.
    let run = |steps_per_ns: f64| -> Result<CMat> {
        let mut rho = engine.to_dressed(&state.rho);
        let mut t0 = 0.0f64;
        for e in &seq.elements {
            let d = e.duration();
            if d <= 0.0 {
                continue;
            }
            match *e {
                PulseElement::Delay { .. } => {
                    let mut u = CMat::zeros((dim, dim));
                    for j in 0..dim {
                        u[[j, j]] = C64::from_polar(
                            1.0,
                            -std::f64::consts::TAU * engine.energies[j] * d,
                        );
                    }
                    rho = u.dot(&rho).dot(&linalg::dagger(&u));
                }
                PulseElement::Pulse {
                    phase, rabi_rate, ..
                } => {
                    let amp = rabi_rate * std::f64::consts::FRAC_1_SQRT_2;
                    let n = ((d * 1e9 * steps_per_ns).ceil() as usize).max(4);
                    let dt = d / n as f64;
                    // Gauss nodes and CF4 weights.
                    let c1 = 0.5 - 3f64.sqrt() / 6.0;
                    let c2 = 0.5 + 3f64.sqrt() / 6.0;
                    let a1 = 0.25 - 3f64.sqrt() / 6.0;
                    let a2 = 0.25 + 3f64.sqrt() / 6.0;
                    let h_at = |t: f64| -> CMat {
                        let drive = 2.0
                            * amp
                            * (std::f64::consts::TAU * engine.f_drive * t + phase).cos();
                        let mut h = engine.drive_x.mapv(|z| z * drive);
                        for j in 0..dim {
                            h[[j, j]] += C64::new(engine.energies[j], 0.0);
                        }
                        h
                    };
                    for k in 0..n {
                        let ts = t0 + k as f64 * dt;
                        let h1 = h_at(ts + c1 * dt);
                        let h2 = h_at(ts + c2 * dt);
                        let g1 = h1.mapv(|z| z * a2) + h2.mapv(|z| z * a1);
                        let g2 = h1.mapv(|z| z * a1) + h2.mapv(|z| z * a2);
                        let u1 = linalg::expi_hermitian(&g1, -std::f64::consts::TAU * dt)?;
                        let u2 = linalg::expi_hermitian(&g2, -std::f64::consts::TAU * dt)?;
                        let u = u2.dot(&u1);
                        rho = u.dot(&rho).dot(&linalg::dagger(&u));
                    }
                }
            }
            t0 += d;
        }
        Ok(rho)
    };

    let mut steps = 25.0; // per nanosecond; resolves the carrier period
    let mut prev = run(steps)?;
    for _ in 0..8 {
        steps *= 2.0;
        let next = run(steps)?;
        let delta = (0..dim)
            .map(|j| (next[[j, j]].re - prev[[j, j]].re).abs())
            .fold(0.0f64, f64::max);
        if delta < tol {
            return Ok(QuantumState {
                rho: engine.to_bare(&next),
                frame: Frame::Lab,
                time: state.time + seq.total_duration(),
            });
        }
        prev = next;
    }
    Err(NvError::Convergence(format!(
        "lab-frame integration did not reach {tol:.1e} population stability"
    )))
}

/// Distance between two reduced-space gates modulo a global phase and
/// single-spin Z phases on either side: the minimized Frobenius distance
/// normalized so that orthogonal unitaries are at 1.
pub fn phase_optimized_distance(v: &CMat, u: &CMat) -> f64 {
    assert_eq!(v.nrows(), 4, "gate comparison is defined on the 4-dim space");
    let score = |angles: [f64; 4]| -> f64 {
        // diag phases of Ze(a) (x) Zn(b) in the (e, n) product order
        let pre = [
            C64::new(1.0, 0.0),
            C64::from_polar(1.0, angles[1]),
            C64::from_polar(1.0, angles[0]),
            C64::from_polar(1.0, angles[0] + angles[1]),
        ];
        let post = [
            C64::new(1.0, 0.0),
            C64::from_polar(1.0, angles[3]),
            C64::from_polar(1.0, angles[2]),
            C64::from_polar(1.0, angles[2] + angles[3]),
        ];
        let mut overlap = C64::new(0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                // tr(V^dag P_post U P_pre)
                overlap += v[[i, j]].conj() * post[i] * u[[i, j]] * pre[j];
            }
        }
        let d2 = 8.0 - 2.0 * overlap.norm();
        d2.max(0.0).sqrt() / 8f64.sqrt()
    };
    let mut best = f64::INFINITY;
    let mut best_angles = [0.0f64; 4];
    let n = 16;
    for i0 in 0..n {
        for i1 in 0..n {
            for i2 in 0..n {
                for i3 in 0..n {
                    let a = [
                        i0 as f64 / n as f64 * std::f64::consts::TAU,
                        i1 as f64 / n as f64 * std::f64::consts::TAU,
                        i2 as f64 / n as f64 * std::f64::consts::TAU,
                        i3 as f64 / n as f64 * std::f64::consts::TAU,
                    ];
                    let s = score(a);
                    if s < best {
                        best = s;
                        best_angles = a;
                    }
                }
            }
        }
    }
    let mut step = std::f64::consts::TAU / n as f64;
    let mut angles = best_angles;
    while step > 1e-8 {
        let mut improved = false;
        for k in 0..4 {
            for dir in [-1.0, 1.0] {
                let mut trial = angles;
                trial[k] += dir * step;
                let s = score(trial);
                if s < best {
                    best = s;
                    angles = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Conditional nuclear rotation angle of a single XY8 unit (8 pulses) at
/// half spacing `tau`: the relative rotation between the two electron
/// manifolds on the given nuclear pair, extracted from the unit propagator.
///
/// Concatenated symmetric units compose exactly, so the angle of an
/// n_p-pulse block is (n_p / 8) times this value. Valid while the per-unit
/// angle stays below pi (far above any practical decoupling step).
pub fn conditional_block_angle(
    params: &NvParams,
    field: &FieldConfig,
    dim: usize,
    tau: f64,
    transition: model::NuclearTransition,
) -> Result<f64> {
    let block = crate::sequence::xy8_block(8, tau, params.t_pi, params.rabi_rate, true)?;
    let u = sequence_propagator(&block, params, field, dim)?;
    let labels = basis_labels(dim);
    let (hi, lo) = transition.levels();
    let idx = |ms: i8, mi: i8| -> Result<usize> {
        labels
            .iter()
            .position(|&l| l == (ms, mi))
            .ok_or(NvError::DimensionMismatch {
                expected: 9,
                got: dim,
            })
    };
    let block_of = |ms: i8| -> Result<[[C64; 2]; 2]> {
        let a = idx(ms, hi)?;
        let b = idx(ms, lo)?;
        Ok([[u[[a, a]], u[[a, b]]], [u[[b, a]], u[[b, b]]]])
    };
    let r0 = block_of(0)?;
    let r1 = block_of(-1)?;
    // Relative rotation R1 R0^dag; for SU(2)-like blocks
    // |tr| = 2 |cos(theta/2)|.
    let tr = r1[0][0] * r0[0][0].conj()
        + r1[0][1] * r0[0][1].conj()
        + r1[1][0] * r0[1][0].conj()
        + r1[1][1] * r0[1][1].conj();
    let cos_half = (0.5 * tr.norm()).min(1.0);
    Ok(2.0 * cos_half.acos())
}

/// Gate-grade calibration of one XY8 unit at a nuclear-transition
/// resonance.
#[derive(Clone, Copy, Debug)]
pub struct BlockCalibration {
    /// Pulse spacing with the unit's common nuclear z-rotation nulled.
    /// Generally off the timing grid; gate blocks interpolate it.
    pub tau: f64,
    /// Conditional rotation angle per 8-pulse unit at that spacing, rad.
    pub theta_unit: f64,
    /// Residual common z-rotation per unit at the returned spacing, rad.
    pub common_z_residual: f64,
}

/// Per-manifold rotation vectors of one XY8 unit on a nuclear pair:
/// (common z part, relative conditional angle).
fn unit_rotation_parts(
    params: &NvParams,
    field: &FieldConfig,
    dim: usize,
    tau: f64,
    transition: model::NuclearTransition,
) -> Result<(f64, f64)> {
    let block = crate::sequence::xy8_block(8, tau, params.t_pi, params.rabi_rate, true)?;
    let u = sequence_propagator(&block, params, field, dim)?;
    let labels = basis_labels(dim);
    let (hi, lo) = transition.levels();
    let idx = |ms: i8, mi: i8| -> Result<usize> {
        labels
            .iter()
            .position(|&l| l == (ms, mi))
            .ok_or(NvError::DimensionMismatch {
                expected: 9,
                got: dim,
            })
    };
    let rot = |ms: i8| -> Result<(f64, [f64; 3])> {
        let a = idx(ms, hi)?;
        let b = idx(ms, lo)?;
        Ok(linalg::su2_axis_angle([
            [u[[a, a]], u[[a, b]]],
            [u[[b, a]], u[[b, b]]],
        ]))
    };
    let (t0, a0) = rot(0)?;
    let (t1, a1) = rot(-1)?;
    // Wrap each rotation vector to the short direction before averaging.
    let wrap = |t: f64, ax: [f64; 3]| -> [f64; 3] {
        let (t, sgn) = if t > std::f64::consts::PI {
            (std::f64::consts::TAU - t, -1.0)
        } else {
            (t, 1.0)
        };
        [sgn * t * ax[0], sgn * t * ax[1], sgn * t * ax[2]]
    };
    let v0 = wrap(t0, a0);
    let v1 = wrap(t1, a1);
    let common_z = 0.5 * (v0[2] + v1[2]);
    let theta = conditional_block_angle(params, field, dim, tau, transition)?;
    Ok((common_z, theta))
}

/// Find the pulse spacing near the nominal transition resonance where one
/// XY8 unit applies a pure conditional rotation (vanishing common nuclear
/// z part). Pulse-interior dynamics shift this gate-grade spacing away
/// from the spectroscopic value by a fraction of a percent, which matters
/// once tens of units are composed into gates. The result is generally off
/// the timing grid; gate builders realize it by interpolating the two grid
/// neighbours.
pub fn calibrate_gate_tau(
    params: &NvParams,
    field: &FieldConfig,
    dim: usize,
    transition: model::NuclearTransition,
) -> Result<BlockCalibration> {
    let tau0 = crate::effective::transition_resonance_tau(params, field, transition, params.t_pi)?;
    let phi_at = |tau: f64| -> Result<f64> {
        Ok(unit_rotation_parts(params, field, dim, tau, transition)?.0)
    };
    // Bracket the zero of the common-z part around the nominal spacing.
    let window = 0.02 * tau0;
    let mut lo = tau0 - window;
    let mut hi = tau0 + window;
    let mut f_lo = phi_at(lo)?;
    let f_hi = phi_at(hi)?;
    if f_lo * f_hi > 0.0 {
        return Err(NvError::Convergence(format!(
            "no common-z sign change within {:.2} - {:.2} ns",
            lo * 1e9,
            hi * 1e9
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let f_mid = phi_at(mid)?;
        if f_lo * f_mid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    let (common_z_residual, theta_unit) = unit_rotation_parts(params, field, dim, tau, transition)?;
    Ok(BlockCalibration {
        tau,
        theta_unit,
        common_z_residual,
    })
}

/// The population-transfer target propagator on (e, n), basis
/// {00, 01, 10, 11}.
pub fn transfer_target(theta: f64) -> CMat {
    let (s, ct) = theta.sin_cos();
    let mut m = CMat::zeros((4, 4));
    m[[0, 0]] = C64::new(1.0, 0.0);
    m[[1, 1]] = C64::new(0.0, -ct);
    m[[1, 2]] = C64::new(s, 0.0);
    m[[2, 1]] = C64::new(s, 0.0);
    m[[2, 2]] = C64::new(0.0, -ct);
    m[[3, 3]] = C64::new(-1.0, 0.0);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::{self, Branch};
    use crate::sequence::{self, PHASE_MINUS_X, PHASE_X};

    fn params() -> NvParams {
        NvParams::default()
    }

    fn quiet() -> NoiseModel {
        NoiseModel::default()
    }

    #[test]
    fn empty_sequence_is_identity() {
        let p = params();
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let s0 = QuantumState::pure(9, model::basis_index(0, 1));
        let seq = PulseSequence::new("empty");
        let s1 = evolve(&s0, &seq, &p, &field, &quiet()).unwrap();
        assert!(linalg::fro_norm(&(&s1.rho - &s0.rho)) < 1e-12);
    }

    #[test]
    fn resonant_pi_pulse_inverts_electron() {
        let p = params();
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let mut seq = PulseSequence::new("pi");
        seq.push(sequence::pi_pulse(&p, PHASE_X));
        for dim in [9usize, 4] {
            let s0 = match dim {
                9 => QuantumState::pure(9, model::basis_index(0, 1)),
                _ => QuantumState::pure(4, 0),
            };
            let s1 = evolve(&s0, &seq, &p, &field, &quiet()).unwrap();
            let pop = s1.electron_population(-1);
            assert!(pop >= 0.99, "dim {dim}: P(-1) = {pop:.4}");
        }
    }

    #[test]
    fn half_pulse_makes_even_superposition() {
        let p = params();
        let field = FieldConfig::new(0.28, 0.0, 0.0);
        let mut seq = PulseSequence::new("half");
        seq.push(sequence::half_pi_pulse(&p, PHASE_X));
        let s0 = QuantumState::pure(4, 0);
        let s1 = evolve(&s0, &seq, &p, &field, &quiet()).unwrap();
        assert!((s1.electron_population(-1) - 0.5).abs() < 0.01);
    }

    #[test]
    fn trace_and_hermiticity_preserved() {
        let p = params();
        let field = FieldConfig::new(0.28, 5e-3, 0.0);
        let tau = effective::resonance_tau(&p, &field, Branch::Minus, p.t_pi).unwrap();
        let core = sequence::xy8_block(40, tau, p.t_pi, p.rabi_rate, true).unwrap();
        let seq = sequence::ramsey_wrap(&core, PHASE_X, PHASE_X, &p);
        let s0 = QuantumState::electron0_nuclear_mixed(9);
        let s1 = evolve(&s0, &seq, &p, &field, &quiet()).unwrap();
        let tr: C64 = s1.rho.diag().iter().sum();
        assert!((tr.re - 1.0).abs() < 1e-10 && tr.im.abs() < 1e-12);
        assert!(linalg::hermiticity_defect(&s1.rho) < 1e-10);
        s1.validate().unwrap();
    }

    #[test]
    fn propagator_is_unitary() {
        let p = params();
        let field = FieldConfig::new(0.28, 5e-3, 0.0);
        let tau = effective::resonance_tau(&p, &field, Branch::Minus, p.t_pi).unwrap();
        let core = sequence::xy8_block(16, tau, p.t_pi, p.rabi_rate, true).unwrap();
        let seq = sequence::ramsey_wrap(&core, PHASE_X, PHASE_MINUS_X, &p);
        for dim in [9usize, 4] {
            let u = sequence_propagator(&seq, &p, &field, dim).unwrap();
            assert!(linalg::unitarity_defect(&u) < 1e-10);
        }
    }

    #[test]
    fn dephasing_identity_and_e_folding() {
        let labels_dim = 4;
        let mut rho = CMat::zeros((labels_dim, labels_dim));
        rho[[0, 0]] = C64::new(0.5, 0.0);
        rho[[2, 2]] = C64::new(0.5, 0.0);
        rho[[0, 2]] = C64::new(0.5, 0.0);
        rho[[2, 0]] = C64::new(0.5, 0.0);
        let state = QuantumState::from_rho(rho);

        let no_noise = NoiseModel::default();
        let s1 = apply_dephasing(&state, 1e-3, &no_noise);
        assert_eq!(s1.rho[[0, 2]], state.rho[[0, 2]]);

        let noisy = NoiseModel {
            t2_dd: Some(10e-6),
            ..NoiseModel::default()
        };
        let s2 = apply_dephasing(&state, 10e-6, &noisy);
        assert!((s2.rho[[0, 2]].re - 0.5 * (-1.0f64).exp()).abs() < 1e-12);
        // populations untouched
        assert_eq!(s2.rho[[0, 0]], state.rho[[0, 0]]);
    }

    #[test]
    fn readout_limits_and_normalization() {
        let readout = ReadoutModel {
            brightness_0: 1000.0,
            contrast: 0.3,
            shot_noise: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bright = QuantumState::pure(4, 0); // m_S = 0
        let dark = QuantumState::pure(4, 2); // m_S = -1
        let s_bright = readout_signal(&bright, &readout, &mut rng);
        let s_dark = readout_signal(&dark, &readout, &mut rng);
        assert_eq!(s_bright, 1000.0);
        assert_eq!(s_dark, 700.0);

        // Normalized pair at P in {0, 1}: +- contrast / (2 - contrast).
        let s = normalized_signal(s_bright, s_dark).unwrap();
        assert!((s - 0.3 / 1.7).abs() < 1e-12);
        let s = normalized_signal(s_dark, s_bright).unwrap();
        assert!((s + 0.3 / 1.7).abs() < 1e-12);

        assert!((normalized_signal(110.0, 90.0).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(normalized_signal(100.0, 100.0).unwrap(), 0.0);
        // degree-0 homogeneity
        let a = normalized_signal(110.0, 90.0).unwrap();
        let b = normalized_signal(110.0 * 7.3, 90.0 * 7.3).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(normalized_signal(0.0, 0.0).is_err());
    }

    #[test]
    fn shot_noise_is_seeded_and_deterministic() {
        let readout = ReadoutModel {
            brightness_0: 500.0,
            contrast: 0.3,
            shot_noise: true,
        };
        let state = QuantumState::pure(4, 0);
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = readout_signal(&state, &readout, &mut r1);
        let b = readout_signal(&state, &readout, &mut r2);
        assert_eq!(a, b);
        assert!((a - 500.0).abs() < 5.0 * 500.0f64.sqrt());
    }

    #[test]
    fn rwa_matches_stepped_lab_frame() {
        // Counter-rotating terms change final populations by < 1e-3 at the
        // ~5 GHz carrier: a bare pi pulse at the full 14.3 MHz Rabi rate,
        // and a phase-sensitive Ramsey-style fragment at 10 MHz.
        let field = FieldConfig::new(0.28, 5e-3, 0.0);
        let s0 = QuantumState::pure(4, 0);

        let p = params();
        let mut pi_only = PulseSequence::new("pi");
        pi_only.push(sequence::pi_pulse(&p, PHASE_X));
        let rot = evolve(&s0, &pi_only, &p, &field, &quiet()).unwrap();
        let lab = evolve_lab_stepped(&s0, &pi_only, &p, &field, 1e-8).unwrap();
        for j in 0..4 {
            let d = (rot.rho[[j, j]].re - lab.rho[[j, j]].re).abs();
            assert!(d < 1e-3, "pi-only population {j} differs by {d:.2e}");
        }

        let slow = NvParams {
            t_pi: 50e-9,
            rabi_rate: 10e6,
            ..params()
        };
        let mut ramsey = PulseSequence::new("ramsey-fragment");
        ramsey.push(sequence::pi_pulse(&slow, PHASE_X));
        ramsey.push(PulseElement::Delay { duration: 50e-9 });
        ramsey.push(sequence::half_pi_pulse(&slow, sequence::PHASE_Y));
        let rot = evolve(&s0, &ramsey, &slow, &field, &quiet()).unwrap();
        let lab = evolve_lab_stepped(&s0, &ramsey, &slow, &field, 1e-8).unwrap();
        for j in 0..4 {
            let d = (rot.rho[[j, j]].re - lab.rho[[j, j]].re).abs();
            assert!(d < 1e-3, "ramsey population {j} differs by {d:.2e}");
        }
    }

    #[test]
    fn detuning_sample_is_deterministic_and_scaled() {
        let noise = NoiseModel {
            detuning_sigma: 1e5,
            seed: 42,
            ..NoiseModel::default()
        };
        let a = noise.sample_detuning();
        let b = noise.sample_detuning();
        assert_eq!(a, b);
        assert!(a.abs() < 6.0 * 1e5);
        assert_ne!(a, 0.0);
    }

    #[test]
    fn transfer_target_limits() {
        let u0 = transfer_target(0.0);
        assert_eq!(u0[[1, 1]], C64::new(0.0, -1.0));
        assert_eq!(u0[[3, 3]], C64::new(-1.0, 0.0));
        let u = transfer_target(std::f64::consts::FRAC_PI_2);
        assert_eq!(u[[1, 2]], C64::new(1.0, 0.0));
        assert!(u[[1, 1]].norm() < 1e-15);
    }

    #[test]
    fn phase_distance_detects_equality_and_orthogonality() {
        let u = transfer_target(std::f64::consts::FRAC_PI_2);
        assert!(phase_optimized_distance(&u, &u) < 1e-6);
        // Dressing with local Z phases must not register as distance.
        let mut z = CMat::zeros((4, 4));
        z[[0, 0]] = C64::new(1.0, 0.0);
        z[[1, 1]] = C64::from_polar(1.0, 0.7);
        z[[2, 2]] = C64::from_polar(1.0, -1.1);
        z[[3, 3]] = C64::from_polar(1.0, 0.7 - 1.1);
        let dressed = z.dot(&u);
        assert!(phase_optimized_distance(&dressed, &u) < 1e-6);
        // A genuinely different gate is far away.
        let id = linalg::identity(4);
        assert!(phase_optimized_distance(&id, &u) > 0.3);
    }
}
