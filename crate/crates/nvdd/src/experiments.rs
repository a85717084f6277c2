//! Reproductions of the headline measurements as deterministic, seeded
//! parameter scans over the exact simulator: decoupling-frequency spectra,
//! coherent nuclear oscillations, coupling maps, correlation measurements
//! with FFT analysis, ensemble averaging, and population-transfer studies.
//!
//! Scan points are independent tasks; results are reduced in x order
//! regardless of scheduling, and every random stream derives from
//! (seed, point index), so identical configurations give bit-identical
//! output.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::effective::{
    self, snap_to_grid, Branch, EffectiveCoupling, GatePlan,
};
use crate::error::{NvError, Result};
use crate::model::{FieldConfig, NuclearTransition, NvParams};
use crate::propagator::{
    conditional_block_angle, evolve, gaussian, normalized_signal, readout_signal,
    NoiseModel, QuantumState, ReadoutModel,
};
use crate::sequence::{
    self, quantum_interpolate, PulseElement, PulseSequence, PHASE_MINUS_X, PHASE_X,
};

/// Default pulse-timing grid, s.
pub const TIMING_GRID: f64 = 0.5e-9;

/// Deterministic per-task stream id (splitmix64 over seed and index).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanMeta {
    pub name: String,
    pub n_p: usize,
    pub tau: f64,
    pub field: FieldConfig,
    pub noise: NoiseModel,
    pub readout: ReadoutModel,
    pub seed: u64,
}

/// One swept measurement: normalized signal plus the raw readout pair per
/// point.
#[derive(Clone, Debug, Serialize)]
pub struct ScanResult {
    /// Swept values, ascending. The unit is named by `x_name`.
    pub x: Vec<f64>,
    pub x_name: String,
    /// Normalized signal per point.
    pub s: Vec<f64>,
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub meta: ScanMeta,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV with a header row naming units.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},signal_norm,s0_raw,s1_raw\n", self.x_name);
        for i in 0..self.x.len() {
            out.push_str(&format!(
                "{:.9e},{:.9e},{:.9e},{:.9e}\n",
                self.x[i], self.s[i], self.s0[i], self.s1[i]
            ));
        }
        out
    }
}

/// Run the phase-flipped readout pair for one decoupling core: S0 wraps the
/// core in (X/2, X/2), S1 in (X/2, -X/2).
fn readout_pair(
    core: &PulseSequence,
    init: &QuantumState,
    params: &NvParams,
    field: &FieldConfig,
    noise: &NoiseModel,
    readout: &ReadoutModel,
) -> Result<(f64, f64, f64)> {
    let s0_seq = sequence::ramsey_wrap(core, PHASE_X, PHASE_X, params);
    let s1_seq = sequence::ramsey_wrap(core, PHASE_X, PHASE_MINUS_X, params);
    let f0 = evolve(init, &s0_seq, params, field, noise)?;
    let f1 = evolve(init, &s1_seq, params, field, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, 0x5184));
    let s0 = readout_signal(&f0, readout, &mut rng);
    let s1 = readout_signal(&f1, readout, &mut rng);
    let s = normalized_signal(s0, s1)?;
    Ok((s0, s1, s))
}

/// Decoupling core at target frequency `f_dd`: n_p / 8 XY8 units whose
/// spacings interpolate the off-grid resonance spacing on the timing grid.
fn interpolated_core(f_dd: f64, n_p: usize, params: &NvParams) -> Result<PulseSequence> {
    let tau_exact = effective::tau_for_target_frequency(f_dd, params.t_pi)?;
    let n_units = n_p / 8;
    let taus = quantum_interpolate(tau_exact, TIMING_GRID, n_units.max(1))?;
    let mut core = PulseSequence::new("xy8-interp");
    core.meta.n_p = n_p;
    core.meta.tau = tau_exact;
    for tau_k in taus.into_iter().take(n_units) {
        let unit = sequence::xy8_block(8, tau_k, params.t_pi, params.rabi_rate, true)?;
        core.extend(&unit);
    }
    Ok(core)
}

/// Sweep window for frequency-style scans.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepRange {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl SweepRange {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.min];
        }
        (0..self.points)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

/// Decoupling-frequency spectrum: the normalized signal against the target
/// frequency f_dd = 1 / (2 (2 tau + t_pi)), with quantum interpolation for
/// off-grid spacings. The nuclear spin starts uninitialized.
pub fn spectrum_scan(
    f_range: &SweepRange,
    n_p: usize,
    params: &NvParams,
    field: &FieldConfig,
    noise: &NoiseModel,
    readout: &ReadoutModel,
) -> Result<ScanResult> {
    if f_range.min <= 0.0 || f_range.max < f_range.min {
        return Err(NvError::InvalidParam {
            name: "f_range",
            value: f_range.min,
            reason: "frequency window must be positive and ordered",
        });
    }
    params.validate()?;
    readout.validate()?;
    let freqs = f_range.values();
    let init = QuantumState::electron0_nuclear_mixed(9);
    let rows: Result<Vec<(f64, f64, f64)>> = freqs
        .par_iter()
        .enumerate()
        .map(|(i, &f_dd)| {
            let core = interpolated_core(f_dd, n_p, params)?;
            let point_noise = NoiseModel {
                seed: mix_seed(noise.seed, i as u64),
                ..*noise
            };
            readout_pair(&core, &init, params, field, &point_noise, readout)
        })
        .collect();
    let rows = rows?;
    Ok(ScanResult {
        x: freqs,
        x_name: "f_dd_hz".into(),
        s0: rows.iter().map(|r| r.0).collect(),
        s1: rows.iter().map(|r| r.1).collect(),
        s: rows.iter().map(|r| r.2).collect(),
        meta: ScanMeta {
            name: "spectrum".into(),
            n_p,
            tau: 0.0,
            field: *field,
            noise: *noise,
            readout: *readout,
            seed: noise.seed,
        },
    })
}

/// A detected scan dip: deviation extremum from the off-resonant baseline.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Dip {
    pub position: f64,
    pub depth: f64,
}

/// Locate dips as grouped baseline deviations above half the maximum
/// deviation, with parabolic refinement of each group's extremum.
pub fn detect_dips(scan: &ScanResult) -> Vec<Dip> {
    let n = scan.s.len();
    if n < 5 {
        return Vec::new();
    }
    let mut sorted = scan.s.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline = sorted[n / 2];
    let dev: Vec<f64> = scan.s.iter().map(|s| (s - baseline).abs()).collect();
    let max_dev = dev.iter().cloned().fold(0.0f64, f64::max);
    if max_dev <= 0.0 {
        return Vec::new();
    }
    let threshold = 0.5 * max_dev;
    let mut dips = Vec::new();
    let mut i = 0;
    while i < n {
        if dev[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && dev[i] > threshold {
            i += 1;
        }
        let group = start..i;
        let k = group
            .clone()
            .max_by(|&a, &b| dev[a].partial_cmp(&dev[b]).unwrap())
            .unwrap();
        let mut position = scan.x[k];
        if k > 0 && k + 1 < n {
            let (a, b, c) = (dev[k - 1], dev[k], dev[k + 1]);
            let denom = a - 2.0 * b + c;
            if denom.abs() > 1e-300 {
                let delta = 0.5 * (a - c) / denom;
                let step = scan.x[k + 1] - scan.x[k];
                position += delta.clamp(-1.0, 1.0) * step;
            }
        }
        dips.push(Dip {
            position,
            depth: dev[k],
        });
    }
    dips
}

/// Cosine fit of an oscillation scan.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OscillationFit {
    /// Signal period in pulse-number units.
    pub period_np: f64,
    /// Coupling implied by the gap-time dial: 1 / (period 2 tau).
    pub implied_g: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub residual_rms: f64,
}

/// Coherent nuclear oscillation against the pulse number at the resonant
/// spacing of the selected peak, with a cosine fit returning the period and
/// the implied coupling strength.
pub fn oscillation_scan(
    n_p_list: &[usize],
    params: &NvParams,
    field: &FieldConfig,
    branch: Branch,
    noise: &NoiseModel,
    readout: &ReadoutModel,
) -> Result<(ScanResult, OscillationFit)> {
    if n_p_list.iter().any(|n| n % 8 != 0) {
        return Err(NvError::InvalidSequence(
            "pulse counts must be multiples of 8".into(),
        ));
    }
    params.validate()?;
    readout.validate()?;
    let tau = snap_to_grid(
        effective::transition_resonance_tau(params, field, branch.transition(), params.t_pi)?,
        TIMING_GRID,
    );
    let init = QuantumState::electron0_nuclear_mixed(9);
    let rows: Result<Vec<(f64, f64, f64)>> = n_p_list
        .par_iter()
        .enumerate()
        .map(|(i, &n_p)| {
            let core = sequence::xy8_block(n_p, tau, params.t_pi, params.rabi_rate, true)?;
            let point_noise = NoiseModel {
                seed: mix_seed(noise.seed, i as u64),
                ..*noise
            };
            readout_pair(&core, &init, params, field, &point_noise, readout)
        })
        .collect();
    let rows = rows?;
    let scan = ScanResult {
        x: n_p_list.iter().map(|&n| n as f64).collect(),
        x_name: "n_pulses".into(),
        s0: rows.iter().map(|r| r.0).collect(),
        s1: rows.iter().map(|r| r.1).collect(),
        s: rows.iter().map(|r| r.2).collect(),
        meta: ScanMeta {
            name: "oscillation".into(),
            n_p: 0,
            tau,
            field: *field,
            noise: *noise,
            readout: *readout,
            seed: noise.seed,
        },
    };
    let slot = 2.0 * tau + params.t_pi;
    let envelope: Vec<f64> = scan
        .x
        .iter()
        .map(|&n| match noise.t2_dd {
            Some(t2) => (-(n * slot / t2).powf(noise.stretch_p)).exp(),
            None => 1.0,
        })
        .collect();
    let fit = fit_cosine(&scan.x, &scan.s, &envelope)?;
    let fit = OscillationFit {
        implied_g: 1.0 / (fit.period_np * 2.0 * tau),
        ..fit
    };
    Ok((scan, fit))
}

/// Least-squares cosine fit s ~ c + env (a cos(2 pi x / P) + b sin(...)),
/// scanning P densely and refining around the best candidate.
fn fit_cosine(x: &[f64], s: &[f64], envelope: &[f64]) -> Result<OscillationFit> {
    let n = x.len();
    if n < 6 {
        return Err(NvError::FitFailure {
            reason: "too few points for a cosine fit".into(),
            residual_rms: f64::NAN,
        });
    }
    let span = x[n - 1] - x[0];
    let sse_at = |period: f64| -> (f64, f64, f64, f64) {
        // normal equations for (a, b, c)
        let mut m = [[0.0f64; 3]; 3];
        let mut v = [0.0f64; 3];
        for i in 0..n {
            let w = std::f64::consts::TAU * x[i] / period;
            let basis = [envelope[i] * w.cos(), envelope[i] * w.sin(), 1.0];
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] += basis[r] * basis[c];
                }
                v[r] += basis[r] * s[i];
            }
        }
        let sol = solve3(m, v);
        let mut sse = 0.0;
        for i in 0..n {
            let w = std::f64::consts::TAU * x[i] / period;
            let model = sol[2] + envelope[i] * (sol[0] * w.cos() + sol[1] * w.sin());
            sse += (s[i] - model).powi(2);
        }
        (sse, sol[0], sol[1], sol[2])
    };

    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0, 0.0);
    let p_min = (x[1] - x[0]) * 4.0;
    let p_max = span * 4.0;
    let steps = 600;
    for k in 0..=steps {
        let period = p_min * (p_max / p_min).powf(k as f64 / steps as f64);
        let (sse, a, b, c) = sse_at(period);
        if sse < best.0 {
            best = (sse, a, b, c, period);
        }
    }
    // golden-section refinement on the period
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (best.4 * 0.8, best.4 * 1.25);
    for _ in 0..80 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if sse_at(m1).0 < sse_at(m2).0 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let period = 0.5 * (lo + hi);
    let (sse, a, b, c) = sse_at(period);
    let amplitude = a.hypot(b);
    let residual_rms = (sse / n as f64).sqrt();
    if !(amplitude > 0.0) || residual_rms > 0.8 * amplitude {
        return Err(NvError::FitFailure {
            reason: format!("cosine fit did not lock (amplitude {amplitude:.3e})"),
            residual_rms,
        });
    }
    Ok(OscillationFit {
        period_np: period,
        implied_g: f64::NAN,
        amplitude,
        offset: c,
        residual_rms,
    })
}

fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        v.swap(col, piv);
        let d = m[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for row in 0..3 {
            if row == col {
                continue;
            }
            let f = m[row][col] / d;
            for k in 0..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    [v[0] / m[0][0], v[1] / m[1][1], v[2] / m[2][2]]
}

/// |g| over an off-axis field grid at fixed axial field; cells inside the
/// GSLAC exclusion zone are flagged as `None` rather than filled.
pub fn coupling_map(
    params: &NvParams,
    b_z: f64,
    b_perp_grid: &[f64],
) -> Result<Vec<Option<f64>>> {
    b_perp_grid
        .iter()
        .map(|&b_perp| {
            match effective::effective_coupling(params, &FieldConfig::new(b_z, b_perp, 0.0)) {
                Ok(EffectiveCoupling { g, .. }) => Ok(Some(g.abs())),
                Err(NvError::GslacProximity { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Planar magnet-stage model: the off-axis field grows linearly with the
/// distance from the aligned stage position, so the coupling map over
/// stage coordinates forms a bowl with its bottom at the aligned point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageGrid {
    pub x_mm: Vec<f64>,
    pub y_mm: Vec<f64>,
    pub center_mm: (f64, f64),
    /// Off-axis field per stage displacement, T/mm.
    pub tilt_t_per_mm: f64,
}

/// |g| over stage coordinates (row-major, y outer). GSLAC cells are `None`.
pub fn coupling_map_stage(
    params: &NvParams,
    b_z: f64,
    stage: &StageGrid,
) -> Result<Vec<Vec<Option<f64>>>> {
    stage
        .y_mm
        .iter()
        .map(|&y| {
            let row: Result<Vec<Option<f64>>> = stage
                .x_mm
                .iter()
                .map(|&x| {
                    let r = ((x - stage.center_mm.0).powi(2) + (y - stage.center_mm.1).powi(2))
                        .sqrt();
                    let field = FieldConfig::new(b_z, stage.tilt_t_per_mm * r, 0.0);
                    match effective::effective_coupling(params, &field) {
                        Ok(c) => Ok(Some(c.g.abs())),
                        Err(NvError::GslacProximity { .. }) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect();
            row
        })
        .collect()
}

/// Correlation measurement: entangling block, variable free evolution,
/// disentangling block; the trace beats at the electron-conditioned nuclear
/// frequencies of the driven transition.
pub fn correlation_scan(
    t_free_range: &SweepRange,
    n_p: usize,
    params: &NvParams,
    field: &FieldConfig,
    noise: &NoiseModel,
    readout: &ReadoutModel,
) -> Result<ScanResult> {
    if t_free_range.min < 0.0 {
        return Err(NvError::InvalidParam {
            name: "t_free",
            value: t_free_range.min,
            reason: "free evolution must be non-negative",
        });
    }
    params.validate()?;
    readout.validate()?;
    let tau = snap_to_grid(
        effective::transition_resonance_tau(
            params,
            field,
            Branch::Minus.transition(),
            params.t_pi,
        )?,
        TIMING_GRID,
    );
    let times = t_free_range.values();
    let init = QuantumState::electron0_nuclear_mixed(9);
    let rows: Result<Vec<(f64, f64, f64)>> = times
        .par_iter()
        .enumerate()
        .map(|(i, &t_free)| {
            let seq = sequence::correlation_sequence(n_p, tau, t_free, params)?;
            let point_noise = NoiseModel {
                seed: mix_seed(noise.seed, i as u64),
                ..*noise
            };
            let f = evolve(&init, &seq, params, field, &point_noise)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(point_noise.seed, 0x5184));
            let s0 = readout_signal(&f, readout, &mut rng);
            // Opposite-phase reference: flip the final pulse of the pair.
            let mut flipped = seq.clone();
            if let Some(PulseElement::Pulse { phase, .. }) = flipped.elements.last_mut() {
                *phase += std::f64::consts::PI;
            }
            let f1 = evolve(&init, &flipped, params, field, &point_noise)?;
            let s1 = readout_signal(&f1, readout, &mut rng);
            let s = normalized_signal(s0, s1)?;
            Ok((s0, s1, s))
        })
        .collect();
    let rows = rows?;
    Ok(ScanResult {
        x: times,
        x_name: "t_free_s".into(),
        s0: rows.iter().map(|r| r.0).collect(),
        s1: rows.iter().map(|r| r.1).collect(),
        s: rows.iter().map(|r| r.2).collect(),
        meta: ScanMeta {
            name: "correlation".into(),
            n_p,
            tau,
            field: *field,
            noise: *noise,
            readout: *readout,
            seed: noise.seed,
        },
    })
}

/// Peaks of a Fourier spectrum of a time trace.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumPeaks {
    /// Peak frequencies, ascending, Hz.
    pub peak_freqs: Vec<f64>,
    pub peak_heights: Vec<f64>,
    /// Separation of the two dominant peaks, if at least two were found.
    pub splitting: Option<f64>,
    /// Set when the trace span is shorter than 3 / splitting.
    pub under_resolved: bool,
}

/// Magnitude spectrum of a uniformly sampled trace: mean-subtracted,
/// Hann-windowed, zero-padded fourfold, with parabolic peak refinement.
pub fn fft_spectrum(trace: &ScanResult) -> Result<SpectrumPeaks> {
    let n = trace.x.len();
    if n < 8 {
        return Err(NvError::InvalidParam {
            name: "trace",
            value: n as f64,
            reason: "need at least 8 points for a spectrum",
        });
    }
    let dt = trace.x[1] - trace.x[0];
    for w in trace.x.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.abs() {
            return Err(NvError::InvalidParam {
                name: "trace",
                value: w[1] - w[0],
                reason: "spectrum requires uniform sampling",
            });
        }
    }
    let mean = trace.s.iter().sum::<f64>() / n as f64;
    let padded = 4 * n;
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = (0..padded)
        .map(|i| {
            if i < n {
                let hann = 0.5
                    - 0.5
                        * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos();
                rustfft::num_complex::Complex::new((trace.s[i] - mean) * hann, 0.0)
            } else {
                rustfft::num_complex::Complex::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let df = 1.0 / (padded as f64 * dt);
    let half = padded / 2;
    let mags: Vec<f64> = buf[..half].iter().map(|z| z.norm()).collect();

    // Skip the DC leakage region (one unpadded bin).
    let k_min = 4;
    let max_mag = mags[k_min..]
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    if max_mag > 0.0 {
        let floor = 0.2 * max_mag;
        for k in k_min..half - 1 {
            if mags[k] > floor && mags[k] > mags[k - 1] && mags[k] >= mags[k + 1] {
                let (a, b, c) = (mags[k - 1], mags[k], mags[k + 1]);
                let denom = a - 2.0 * b + c;
                let delta = if denom.abs() > 1e-300 {
                    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                };
                peaks.push(((k as f64 + delta) * df, b));
            }
        }
    }
    peaks.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let splitting = if peaks.len() >= 2 {
        let mut by_height = peaks.clone();
        by_height.sort_by(|p, q| q.1.partial_cmp(&p.1).unwrap());
        Some((by_height[0].0 - by_height[1].0).abs())
    } else {
        None
    };
    let span = trace.x[n - 1] - trace.x[0];
    let under_resolved = splitting.map_or(false, |sp| sp > 0.0 && span < 3.0 / sp);
    Ok(SpectrumPeaks {
        peak_freqs: peaks.iter().map(|p| p.0).collect(),
        peak_heights: peaks.iter().map(|p| p.1).collect(),
        splitting,
        under_resolved,
    })
}

/// Quasi-static ensemble description: per-member Gaussian field offsets and
/// the ensemble coherence time.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSpec {
    pub n_members: usize,
    pub b_z_sigma: f64,
    pub b_perp_sigma: f64,
    pub t2_dd: Option<f64>,
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_members: 16,
            b_z_sigma: 0.05e-3,
            b_perp_sigma: 0.1e-3,
            t2_dd: Some(10e-6),
            seed: 1,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(NvError::InvalidParam {
                name: "n_members",
                value: 0.0,
                reason: "ensemble needs at least one member",
            });
        }
        if self.b_z_sigma < 0.0 || self.b_perp_sigma < 0.0 {
            return Err(NvError::InvalidParam {
                name: "sigma",
                value: self.b_z_sigma.min(self.b_perp_sigma),
                reason: "field spreads must be non-negative",
            });
        }
        Ok(())
    }

    /// Member field and noise realization `k`, deterministic in the seed.
    pub fn member(
        &self,
        k: usize,
        base_field: &FieldConfig,
        base_noise: &NoiseModel,
    ) -> (FieldConfig, NoiseModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, k as u64));
        let db_z = self.b_z_sigma * gaussian(&mut rng);
        let db_perp = self.b_perp_sigma * gaussian(&mut rng);
        let field = FieldConfig::new(
            base_field.b_z + db_z,
            (base_field.b_perp + db_perp).max(0.0),
            base_field.azimuth,
        );
        let noise = NoiseModel {
            t2_dd: self.t2_dd.or(base_noise.t2_dd),
            seed: mix_seed(self.seed, 0x0e5e_0000 ^ k as u64),
            ..*base_noise
        };
        (field, noise)
    }
}

/// Average a scan over ensemble members with sampled field offsets.
///
/// `run` maps a member's (field, noise) to its scan; members evaluate in
/// parallel and the pointwise mean is deterministic in the seed.
pub fn ensemble_average<F>(
    run: F,
    base_field: &FieldConfig,
    base_noise: &NoiseModel,
    spec: &EnsembleSpec,
) -> Result<ScanResult>
where
    F: Fn(&FieldConfig, &NoiseModel) -> Result<ScanResult> + Sync,
{
    spec.validate()?;
    let members: Result<Vec<ScanResult>> = (0..spec.n_members)
        .into_par_iter()
        .map(|k| {
            let (field, noise) = spec.member(k, base_field, base_noise);
            run(&field, &noise)
        })
        .collect();
    let members = members?;
    let first = &members[0];
    let n = first.len();
    let inv = 1.0 / spec.n_members as f64;
    let mut s = vec![0.0; n];
    let mut s0 = vec![0.0; n];
    let mut s1 = vec![0.0; n];
    for m in &members {
        if m.len() != n {
            return Err(NvError::DimensionMismatch {
                expected: n,
                got: m.len(),
            });
        }
        for i in 0..n {
            s[i] += m.s[i] * inv;
            s0[i] += m.s0[i] * inv;
            s1[i] += m.s1[i] * inv;
        }
    }
    Ok(ScanResult {
        x: first.x.clone(),
        x_name: first.x_name.clone(),
        s,
        s0,
        s1,
        meta: ScanMeta {
            name: format!("ensemble({})", first.meta.name),
            seed: spec.seed,
            ..first.meta.clone()
        },
    })
}

/// One row of a population-transfer study.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TransferPoint {
    pub theta_target: f64,
    pub theta_achieved: f64,
    pub n_p: usize,
    pub p0_sim: f64,
    pub p1_sim: f64,
    pub p0_formula: f64,
    pub p1_formula: f64,
}

/// Run the transfer circuit across rotation angles on the working
/// m_I = {+1, 0} pair (reduced model) and compare the traced-out nuclear
/// populations with the closed forms p0 = |c0|^2 + |c1|^2 cos^2 theta and
/// p1 = |c1|^2 sin^2 theta.
///
/// The conditional angle per XY8 unit is calibrated once from the unit
/// propagator, so each target angle maps to the nearest achievable pulse
/// count and the closed forms are evaluated at the achieved angle.
pub fn transfer_fidelity(
    theta_list: &[f64],
    params: &NvParams,
    field: &FieldConfig,
    c0: C64,
    c1: C64,
) -> Result<Vec<TransferPoint>> {
    params.validate()?;
    let tau = snap_to_grid(
        effective::transition_resonance_tau(
            params,
            field,
            NuclearTransition::PlusOneZero,
            params.t_pi,
        )?,
        TIMING_GRID,
    );
    let theta_unit =
        conditional_block_angle(params, field, 4, tau, NuclearTransition::PlusOneZero)?;
    let z_half = sequence::default_z_half_duration(params, field, TIMING_GRID)?;
    let norm = (c0.norm_sqr() + c1.norm_sqr()).sqrt();
    let (c0n, c1n) = (c0 / norm, c1 / norm);
    let init = QuantumState::electron_superposition(c0n, c1n);
    let noise = NoiseModel::default();

    theta_list
        .iter()
        .map(|&theta_target| {
            let units = (theta_target / theta_unit).round().max(0.0) as usize;
            let n_p = 8 * units;
            let theta_achieved = units as f64 * theta_unit;
            let seq = sequence::transfer_circuit_unchecked(n_p, tau, z_half, params)?;
            let f = evolve(&init, &seq, params, field, &noise)?;
            let p0_sim = f.nuclear_population(1);
            let p1_sim = f.nuclear_population(0);
            let p0_formula =
                c0n.norm_sqr() + c1n.norm_sqr() * theta_achieved.cos().powi(2);
            let p1_formula = c1n.norm_sqr() * theta_achieved.sin().powi(2);
            Ok(TransferPoint {
                theta_target,
                theta_achieved,
                n_p,
                p0_sim,
                p1_sim,
                p0_formula,
                p1_formula,
            })
        })
        .collect()
}

/// Itemized duration accounting of the population-transfer gate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GateTimeReport {
    pub cr_each: f64,
    pub cr_total: f64,
    pub z_segment: f64,
    pub pi_half_each: f64,
    pub pi_half_count: usize,
    pub total: f64,
}

/// Total transfer duration from its parts: two conditional rotations, the
/// nuclear-Z segment, and the electron pi/2 pulses (three in the circuit;
/// four in the conservative bookkeeping).
pub fn estimate_gate_time(
    cr_duration: f64,
    z_segment_duration: f64,
    t_pi_half: f64,
    pi_half_count: usize,
) -> GateTimeReport {
    let cr_total = 2.0 * cr_duration;
    let pulses = pi_half_count as f64 * t_pi_half;
    GateTimeReport {
        cr_each: cr_duration,
        cr_total,
        z_segment: z_segment_duration,
        pi_half_each: t_pi_half,
        pi_half_count,
        total: cr_total + z_segment_duration + pulses,
    }
}

/// Convenience: the gate-time report for a designed plan with the default
/// Z segment.
pub fn plan_gate_time(
    plan: &GatePlan,
    params: &NvParams,
    field: &FieldConfig,
    pi_half_count: usize,
) -> Result<GateTimeReport> {
    let z_half = sequence::default_z_half_duration(params, field, TIMING_GRID)?;
    let z = sequence::ZSegment::from_half_duration(z_half);
    Ok(estimate_gate_time(
        plan.total_time,
        z.total_duration(params),
        0.5 * params.t_pi,
        pi_half_count,
    ))
}
