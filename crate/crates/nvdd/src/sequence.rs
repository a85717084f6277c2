//! Timed pulse-sequence builders: XY8 decoupling blocks, Ramsey wrappers,
//! correlation protocols, the population-transfer circuit, timing
//! quantization, and quantum interpolation.
//!
//! Sequences are flat lists of microwave pulses and free-evolution delays.
//! Pulse phases follow the IQ convention 0 = X, pi/2 = Y, pi = -X,
//! 3 pi/2 = -Y. Builders are pure; sequences are immutable values that scan
//! workers share freely.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::effective::{snap_to_grid, Branch, GatePlan};
use crate::error::{NvError, Result};
use crate::model::{self, FieldConfig, NvParams};

/// Phase of an X pulse.
pub const PHASE_X: f64 = 0.0;
/// Phase of a Y pulse.
pub const PHASE_Y: f64 = FRAC_PI_2;
/// Phase of a -X pulse.
pub const PHASE_MINUS_X: f64 = PI;
/// Phase of a -Y pulse.
pub const PHASE_MINUS_Y: f64 = 3.0 * FRAC_PI_2;

/// The XY8 phase pattern X Y X Y Y X Y X.
pub const XY8_PHASES: [f64; 8] = [
    PHASE_X, PHASE_Y, PHASE_X, PHASE_Y, PHASE_Y, PHASE_X, PHASE_Y, PHASE_X,
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PulseElement {
    /// Resonant microwave pulse of fixed phase and Rabi rate.
    Pulse {
        duration: f64,
        /// Carrier phase, rad.
        phase: f64,
        /// Rabi frequency, Hz.
        rabi_rate: f64,
    },
    /// Free evolution.
    Delay { duration: f64 },
}

impl PulseElement {
    pub fn duration(&self) -> f64 {
        match *self {
            PulseElement::Pulse { duration, .. } => duration,
            PulseElement::Delay { duration } => duration,
        }
    }

    /// Pulse area rabi_rate * duration; 1/2 for a pi pulse.
    pub fn area(&self) -> Option<f64> {
        match *self {
            PulseElement::Pulse {
                duration,
                rabi_rate,
                ..
            } => Some(duration * rabi_rate),
            PulseElement::Delay { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub name: String,
    pub branch: Option<Branch>,
    pub n_p: usize,
    pub tau: f64,
    /// Worst-case single-element rounding error from [`quantize_timing`], s.
    pub rounding_error_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub elements: Vec<PulseElement>,
    pub meta: SequenceMeta,
}

impl PulseSequence {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            elements: Vec::new(),
            meta: SequenceMeta {
                name: name.into(),
                ..SequenceMeta::default()
            },
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.elements.iter().map(PulseElement::duration).sum()
    }

    pub fn pulse_count(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(e, PulseElement::Pulse { .. }))
            .count()
    }

    /// Append an element, dropping zero-duration entries.
    pub fn push(&mut self, element: PulseElement) {
        if element.duration() > 0.0 {
            self.elements.push(element);
        }
    }

    pub fn extend(&mut self, other: &PulseSequence) {
        self.elements.extend_from_slice(&other.elements);
    }

    /// Line-based schedule export: one element per line with columns
    /// `kind duration_ns phase_deg rabi_hz`.
    pub fn to_schedule_text(&self) -> String {
        let mut out = String::from("# kind duration_ns phase_deg rabi_hz\n");
        for e in &self.elements {
            match *e {
                PulseElement::Pulse {
                    duration,
                    phase,
                    rabi_rate,
                } => {
                    out.push_str(&format!(
                        "pulse {:.6} {:.6} {:.6}\n",
                        duration * 1e9,
                        phase.to_degrees(),
                        rabi_rate
                    ));
                }
                PulseElement::Delay { duration } => {
                    out.push_str(&format!("delay {:.6} 0 0\n", duration * 1e9));
                }
            }
        }
        out
    }
}

pub fn pi_pulse(params: &NvParams, phase: f64) -> PulseElement {
    PulseElement::Pulse {
        duration: params.t_pi,
        phase,
        rabi_rate: params.rabi_rate,
    }
}

pub fn half_pi_pulse(params: &NvParams, phase: f64) -> PulseElement {
    PulseElement::Pulse {
        duration: 0.5 * params.t_pi,
        phase,
        rabi_rate: params.rabi_rate,
    }
}

/// XY8 decoupling block of `n_p` pi pulses with half spacing `tau`.
///
/// With `initial_half` the block is symmetric, tau - pi - 2 tau - ... - tau;
/// otherwise every pulse is preceded by a full 2 tau gap. Either way the
/// total duration is n_p (2 tau + t_pi). `n_p` must be a multiple of 8
/// (zero gives an empty block).
pub fn xy8_block(
    n_p: usize,
    tau: f64,
    t_pi: f64,
    rabi_rate: f64,
    initial_half: bool,
) -> Result<PulseSequence> {
    if n_p % 8 != 0 {
        return Err(NvError::InvalidSequence(format!(
            "XY8 pulse count must be a multiple of 8, got {n_p}"
        )));
    }
    let mut seq = PulseSequence::new("xy8");
    seq.meta.n_p = n_p;
    seq.meta.tau = tau;
    if n_p == 0 {
        return Ok(seq);
    }
    if tau <= 0.0 {
        return Err(NvError::InvalidSequence(format!(
            "pulse spacing must be positive, got tau = {tau:.3e}"
        )));
    }
    for k in 0..n_p {
        let gap = if !initial_half {
            2.0 * tau
        } else if k == 0 {
            tau
        } else {
            2.0 * tau
        };
        seq.push(PulseElement::Delay { duration: gap });
        seq.push(PulseElement::Pulse {
            duration: t_pi,
            phase: XY8_PHASES[k % 8],
            rabi_rate,
        });
    }
    if initial_half {
        seq.push(PulseElement::Delay { duration: tau });
    }
    Ok(seq)
}

/// XY8 block of n_p / 8 units whose half spacings interpolate an off-grid
/// target on the timing grid: unit k uses the grid neighbour chosen by the
/// balanced pattern of [`quantum_interpolate`], so the average spacing
/// tracks `tau_target` while every element stays grid-aligned.
pub fn xy8_block_interpolated(
    n_p: usize,
    tau_target: f64,
    grid: f64,
    t_pi: f64,
    rabi_rate: f64,
) -> Result<PulseSequence> {
    if n_p % 8 != 0 {
        return Err(NvError::InvalidSequence(format!(
            "XY8 pulse count must be a multiple of 8, got {n_p}"
        )));
    }
    let mut seq = PulseSequence::new("xy8-interp");
    seq.meta.n_p = n_p;
    seq.meta.tau = tau_target;
    if n_p == 0 {
        return Ok(seq);
    }
    let taus = quantum_interpolate(tau_target, grid, n_p / 8)?;
    for tau_k in taus {
        let unit = xy8_block(8, tau_k, t_pi, rabi_rate, true)?;
        seq.extend(&unit);
    }
    Ok(seq)
}

/// Sandwich a core block between two pi/2 pulses of the given phases.
pub fn ramsey_wrap(
    core: &PulseSequence,
    first_phase: f64,
    last_phase: f64,
    params: &NvParams,
) -> PulseSequence {
    let mut seq = PulseSequence {
        elements: Vec::with_capacity(core.elements.len() + 2),
        meta: SequenceMeta {
            name: format!("ramsey({})", core.meta.name),
            ..core.meta.clone()
        },
    };
    seq.push(half_pi_pulse(params, first_phase));
    seq.extend(core);
    seq.push(half_pi_pulse(params, last_phase));
    seq
}

/// Correlation protocol: two entangling blocks [X/2 - XY8 - Y/2] separated
/// by a free evolution of `t_free`.
pub fn correlation_sequence(
    n_p: usize,
    tau: f64,
    t_free: f64,
    params: &NvParams,
) -> Result<PulseSequence> {
    if t_free < 0.0 {
        return Err(NvError::InvalidSequence(format!(
            "free evolution time must be non-negative, got {t_free:.3e}"
        )));
    }
    let block = xy8_block(n_p, tau, params.t_pi, params.rabi_rate, true)?;
    let entangle = ramsey_wrap(&block, PHASE_X, PHASE_Y, params);
    let mut seq = PulseSequence::new("correlation");
    seq.meta.n_p = n_p;
    seq.meta.tau = tau;
    seq.extend(&entangle);
    seq.push(PulseElement::Delay { duration: t_free });
    seq.extend(&entangle);
    Ok(seq)
}

/// Acceptable deviation of a plan's angle from pi/2 for the transfer gate.
pub const TRANSFER_THETA_TOLERANCE: f64 = 0.1;

/// Durations of the unconditional nuclear-Z segment between the two
/// conditional rotations: `short - pi_X - long - pi_X - short`.
///
/// The pi-pulse pair echoes away the electron-conditional nuclear phase
/// accumulated during the free windows (long = 2 short balances the
/// flipped and unflipped intervals), while the wall-clock length of the
/// whole gap sets the unconditional nuclear Z angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZSegment {
    pub short_delay: f64,
    pub long_delay: f64,
}

impl ZSegment {
    pub fn from_half_duration(z_half_duration: f64) -> Self {
        Self {
            short_delay: z_half_duration,
            long_delay: 2.0 * z_half_duration,
        }
    }

    pub fn total_duration(&self, params: &NvParams) -> f64 {
        2.0 * self.short_delay + self.long_delay + 2.0 * params.t_pi
    }
}

/// Fraction of a nuclear period that the inter-block gap must realize so
/// that the second conditional rotation composes into the transfer
/// propagator: a quarter turn, i.e. the nuclear Z/2.
const Z_GAP_PHASE_TURNS: f64 = 0.75;

/// Default Z-segment delay for the transfer circuit.
///
/// Solves nu_avg * gap = k + [`Z_GAP_PHASE_TURNS`] for the smallest delay
/// with `short_delay` of at least 50 ns (grid-aligned), where the gap spans
/// the middle pi/2 pulse and the whole echo segment.
pub fn default_z_half_duration(params: &NvParams, field: &FieldConfig, grid: f64) -> Result<f64> {
    let nu = model::nuclear_frequency_avg(params, field)?;
    let fixed = 0.5 * params.t_pi + 2.0 * params.t_pi;
    let min_short = 50e-9;
    let mut k = 0.0;
    loop {
        let gap = (k + Z_GAP_PHASE_TURNS) / nu;
        let budget = gap - fixed;
        if budget >= 4.0 * min_short {
            return Ok(snap_to_grid(budget / 4.0, grid));
        }
        k += 1.0;
        if k > 1e6 {
            return Err(NvError::Convergence("no feasible Z-segment length".into()));
        }
    }
}

/// Population-transfer circuit: Y/2 - CR(theta) - X/2 - nuclear Z/2 -
/// CR(theta) - (-Y)/2, with each conditional rotation realized as a
/// resonant XY8 block from `plan` and the nuclear Z/2 as an echoed delay
/// segment.
pub fn transfer_circuit(
    plan: &GatePlan,
    z_half_duration: f64,
    params: &NvParams,
) -> Result<PulseSequence> {
    if (plan.theta - FRAC_PI_2).abs() > TRANSFER_THETA_TOLERANCE {
        return Err(NvError::InvalidSequence(format!(
            "transfer gate needs theta close to pi/2; plan has {:.4} rad",
            plan.theta
        )));
    }
    transfer_circuit_unchecked(plan.n_p, plan.tau, z_half_duration, params)
}

/// Same circuit without the theta guard; used for fidelity studies across
/// arbitrary rotation angles (n_p = 0 gives empty conditional rotations).
/// The conditional-rotation spacing may sit off the timing grid; the
/// blocks interpolate it.
pub fn transfer_circuit_unchecked(
    n_p: usize,
    tau: f64,
    z_half_duration: f64,
    params: &NvParams,
) -> Result<PulseSequence> {
    if z_half_duration <= 0.0 {
        return Err(NvError::InvalidSequence(format!(
            "z segment delay must be positive, got {z_half_duration:.3e}"
        )));
    }
    let cr = xy8_block_interpolated(n_p, tau, 0.5e-9, params.t_pi, params.rabi_rate)?;
    let z = ZSegment::from_half_duration(z_half_duration);

    let mut seq = PulseSequence::new("transfer");
    seq.meta.n_p = n_p;
    seq.meta.tau = tau;
    seq.push(half_pi_pulse(params, PHASE_Y));
    seq.extend(&cr);
    seq.push(half_pi_pulse(params, PHASE_X));
    seq.push(PulseElement::Delay {
        duration: z.short_delay,
    });
    seq.push(pi_pulse(params, PHASE_X));
    seq.push(PulseElement::Delay {
        duration: z.long_delay,
    });
    seq.push(pi_pulse(params, PHASE_X));
    seq.push(PulseElement::Delay {
        duration: z.short_delay,
    });
    seq.extend(&cr);
    seq.push(half_pi_pulse(params, PHASE_MINUS_Y));
    Ok(seq)
}

/// Round every element duration to the nearest grid multiple.
///
/// Elements that round to zero are dropped. The worst-case single-element
/// rounding error is recorded in the metadata (kept monotone so repeated
/// quantization is idempotent).
pub fn quantize_timing(seq: &PulseSequence, grid: f64) -> Result<PulseSequence> {
    if !(grid > 0.0) {
        return Err(NvError::InvalidParam {
            name: "grid",
            value: grid,
            reason: "timing grid must be positive",
        });
    }
    let mut out = PulseSequence {
        elements: Vec::with_capacity(seq.elements.len()),
        meta: seq.meta.clone(),
    };
    let mut worst: f64 = 0.0;
    for e in &seq.elements {
        let d = e.duration();
        let snapped = snap_to_grid(d, grid);
        worst = worst.max((snapped - d).abs());
        if snapped <= 0.0 {
            continue;
        }
        let q = match *e {
            PulseElement::Pulse {
                phase, rabi_rate, ..
            } => PulseElement::Pulse {
                duration: snapped,
                phase,
                rabi_rate,
            },
            PulseElement::Delay { .. } => PulseElement::Delay { duration: snapped },
        };
        out.elements.push(q);
    }
    out.meta.rounding_error_max = seq.meta.rounding_error_max.max(worst);
    Ok(out)
}

/// Per-block pulse spacings approximating an off-grid `tau_target`.
///
/// Alternates the two grid neighbours of the target in a balanced
/// (Bresenham-style) pattern so that the running average tracks the target;
/// the mean over `n_blocks` is within grid / (2 n_blocks) of it.
pub fn quantum_interpolate(tau_target: f64, grid: f64, n_blocks: usize) -> Result<Vec<f64>> {
    if !(grid > 0.0) {
        return Err(NvError::InvalidParam {
            name: "grid",
            value: grid,
            reason: "timing grid must be positive",
        });
    }
    if n_blocks == 0 {
        return Err(NvError::InvalidParam {
            name: "n_blocks",
            value: 0.0,
            reason: "need at least one block",
        });
    }
    let lo = (tau_target / grid).floor() * grid;
    let frac = (tau_target - lo) / grid;
    let mut taus = Vec::with_capacity(n_blocks);
    let mut carried = 0usize;
    for i in 1..=n_blocks {
        // Cumulative rounding: after i blocks, round(i * frac) highs.
        let want = (i as f64 * frac + 0.5).floor() as usize;
        if want > carried {
            taus.push(lo + grid);
            carried = want;
        } else {
            taus.push(lo);
        }
    }
    Ok(taus)
}
