// Temporary development tool: theta-dependence of the ideal transfer
// identity.

use ndarray::linalg::kron;
use num_complex::Complex64 as C64;
use nvdd::linalg::{expi_hermitian, identity, CMat};
use nvdd::propagator::{phase_optimized_distance, transfer_target};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn sig(phi: f64) -> CMat {
    let mut s = CMat::zeros((2, 2));
    s[[0, 1]] = c(phi.cos(), -phi.sin());
    s[[1, 0]] = c(phi.cos(), phi.sin());
    s
}

fn szm() -> CMat {
    let mut m = CMat::zeros((2, 2));
    m[[0, 0]] = c(1.0, 0.0);
    m[[1, 1]] = c(-1.0, 0.0);
    m
}

fn e_rot(phi: f64, angle: f64) -> CMat {
    expi_hermitian(&kron(&sig(phi), &identity(2)), -angle / 2.0).unwrap()
}

fn cr(theta: f64, alpha: f64) -> CMat {
    expi_hermitian(&kron(&szm(), &sig(alpha)), -theta / 2.0).unwrap()
}

fn zn(zeta: f64) -> CMat {
    expi_hermitian(&kron(&identity(2), &szm()), -zeta / 2.0).unwrap()
}

fn main() {
    let fp2 = std::f64::consts::FRAC_PI_2;
    for theta in [0.3, 0.8, 1.0, 1.4024, fp2, 2.0, 2.6, std::f64::consts::PI] {
        let target = transfer_target(theta);
        // best over quarter-phase combos and fine zeta
        let quarter: Vec<f64> = (0..4).map(|k| k as f64 * fp2).collect();
        let mut best = (f64::INFINITY, [0.0f64; 4]);
        for &p1 in &quarter {
            for &p2 in &quarter {
                for &p3 in &quarter {
                    for z in 0..96 {
                        let zeta = z as f64 * std::f64::consts::TAU / 96.0;
                        let v = e_rot(p3, fp2)
                            .dot(&cr(theta, 0.0))
                            .dot(&zn(zeta))
                            .dot(&e_rot(p2, fp2))
                            .dot(&cr(theta, 0.0))
                            .dot(&e_rot(p1, fp2));
                        let d = phase_optimized_distance(&v, &target);
                        if d < best.0 {
                            best = (d, [p1, p2, p3, zeta]);
                        }
                    }
                }
            }
        }
        println!(
            "theta {:.4}: best d = {:.4} at ({:.0},{:.0},{:.0}) zeta/2pi = {:.3}",
            theta,
            best.0,
            best.1[0] / fp2,
            best.1[1] / fp2,
            best.1[2] / fp2,
            best.1[3] / std::f64::consts::TAU
        );
    }

    // Also: nuclear populations from the ideal circuit vs the closed forms,
    // tracing out the electron, input (c0, c1) = (0, 1) and mixed.
    println!("\npopulations from the ideal circuit at the pi/2-family phases:");
    for theta in [0.3, 0.8, 1.4024, fp2, 2.0, 2.6] {
        let v = e_rot(3.0 * fp2, fp2)
            .dot(&cr(theta, 0.0))
            .dot(&zn(fp2))
            .dot(&e_rot(0.0, fp2))
            .dot(&cr(theta, 0.0))
            .dot(&e_rot(fp2, fp2));
        // |psi> = |1_e> (x) |0_n> = basis index 2
        let p1_sim: f64 = (0..4)
            .filter(|i| i % 2 == 1) // n = 1 components (indices 1, 3)
            .map(|i| v[[i, 2]].norm_sqr())
            .sum();
        let p1_formula = theta.sin().powi(2);
        println!(
            "theta {:.4}: p1 circuit {:.4} vs formula {:.4}",
            theta, p1_sim, p1_formula
        );
    }
}
