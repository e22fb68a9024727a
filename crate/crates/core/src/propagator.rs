//! Fixed-step RK4 propagation of the fundamental matrix solution.
//!
//! The first-order system is `(phi, phi')' = (phi', (V - lambda) phi)` from
//! `phi(0) = 0, phi'(0) = I`. With the lambda-derivative flag the state is
//! augmented by `(phidot, phidot')' = (phidot', (V - lambda) phidot - phi)`.
//! Running Gram integrals use composite Simpson on the integrator grid.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{c, hermitian_part, identity, zeros, CMatrix, C64};
use crate::potential::{MatrixPotential, Potential};

pub const DEFAULT_STEPS: usize = 4096;
pub const MIN_STEPS: usize = 16;

pub fn check_steps(steps: usize) -> Result<()> {
    if steps < MIN_STEPS || steps % 2 != 0 {
        return Err(Error::contract(format!("steps must be even and >= {MIN_STEPS}, got {steps}")));
    }
    Ok(())
}

/// `V` sampled at every node and half-node of a uniform grid, which is
/// everything an RK4 sweep touches.
#[derive(Debug, Clone)]
pub struct PotentialSamples {
    steps: usize,
    values: Vec<CMatrix>,
}

impl PotentialSamples {
    pub fn new(v: &dyn MatrixPotential, steps: usize) -> Result<Self> {
        check_steps(steps)?;
        let m = 2 * steps;
        let values = (0..=m).into_par_iter().map(|j| v.value(j as f64 / m as f64)).collect();
        Ok(PotentialSamples { steps, values })
    }

    /// Samples from an arbitrary closure; the result need not be Hermitian.
    pub fn from_fn(steps: usize, f: impl Fn(f64) -> CMatrix) -> Result<Self> {
        check_steps(steps)?;
        let m = 2 * steps;
        let values = (0..=m).map(|j| f(j as f64 / m as f64)).collect();
        Ok(PotentialSamples { steps, values })
    }

    /// Samples of `V#(x) = V(1 - x)`.
    pub fn reflected(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        PotentialSamples { steps: self.steps, values }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// Value at grid node `i` (`x = i h`).
    pub fn node(&self, i: usize) -> &CMatrix {
        &self.values[2 * i]
    }

    fn half(&self, j: usize) -> &CMatrix {
        &self.values[j]
    }
}

/// Fundamental solution `phi(x, lambda)` on a uniform grid.
#[derive(Debug, Clone)]
pub struct MatrixSolution {
    pub lambda: C64,
    pub steps: usize,
    pub phi: Vec<CMatrix>,
    pub dphi: Vec<CMatrix>,
    pub phidot: Option<Vec<CMatrix>>,
    pub dphidot: Option<Vec<CMatrix>>,
    /// `S(x, lambda) = int_0^x phi* phi`.
    pub gram: Vec<CMatrix>,
}

impl MatrixSolution {
    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.steps as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.x(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn phi_end(&self) -> &CMatrix {
        self.phi.last().expect("non-empty solution")
    }

    pub fn dphi_end(&self) -> &CMatrix {
        self.dphi.last().expect("non-empty solution")
    }

    pub fn gram_end(&self) -> &CMatrix {
        self.gram.last().expect("non-empty solution")
    }

    /// Largest `||phi* phi' - (phi')* phi||_F` over nodes, divided by the
    /// largest node norm.
    pub fn wronskian_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (p, d) in self.phi.iter().zip(&self.dphi) {
            worst = worst.max((p.adjoint() * d - d.adjoint() * p).norm());
            scale = scale.max(p.norm() * d.norm());
        }
        worst / scale.max(1e-300)
    }

    /// CSV with columns `x`, then `Re`/`Im` of every `phi` entry, then of
    /// every `phi'` entry (row-major).
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let n = self.phi[0].nrows();
        let mut header = vec!["x".to_string()];
        for name in ["phi", "dphi"] {
            for i in 0..n {
                for j in 0..n {
                    header.push(format!("re_{name}_{}{}", i + 1, j + 1));
                    header.push(format!("im_{name}_{}{}", i + 1, j + 1));
                }
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![format!("{}", self.x(k))];
            for m in [&self.phi[k], &self.dphi[k]] {
                for i in 0..n {
                    for j in 0..n {
                        row.push(format!("{}", m[(i, j)].re));
                        row.push(format!("{}", m[(i, j)].im));
                    }
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn deriv(m: &CMatrix, s: &[CMatrix]) -> Vec<CMatrix> {
    let mut d = Vec::with_capacity(s.len());
    d.push(s[1].clone());
    d.push(m * &s[0]);
    if s.len() == 4 {
        d.push(s[3].clone());
        d.push(m * &s[2] - &s[0]);
    }
    d
}

fn axpy(s: &[CMatrix], k: &[CMatrix], a: f64) -> Vec<CMatrix> {
    s.iter().zip(k).map(|(x, y)| x + y * c(a, 0.0)).collect()
}

fn rk4_step(m0: &CMatrix, mh: &CMatrix, m1: &CMatrix, s: &[CMatrix], h: f64) -> Vec<CMatrix> {
    let k1 = deriv(m0, s);
    let k2 = deriv(mh, &axpy(s, &k1, h / 2.0));
    let k3 = deriv(mh, &axpy(s, &k2, h / 2.0));
    let k4 = deriv(m1, &axpy(s, &k3, h));
    (0..s.len())
        .map(|i| &s[i] + (&k1[i] + (&k2[i] + &k3[i]) * c(2.0, 0.0) + &k4[i]) * c(h / 6.0, 0.0))
        .collect()
}

fn initial_state(n: usize, with_derivative: bool) -> Vec<CMatrix> {
    let mut s = vec![zeros(n, n), identity(n)];
    if with_derivative {
        s.push(zeros(n, n));
        s.push(zeros(n, n));
    }
    s
}

/// Runs RK4 over the sample grid, calling `visit(i, state)` at every node.
fn sweep(samples: &PotentialSamples, lambda: C64, with_derivative: bool, mut visit: impl FnMut(usize, &[CMatrix])) {
    let n = samples.dim();
    let shift = identity(n) * lambda;
    let h = samples.h();
    let mut s = initial_state(n, with_derivative);
    visit(0, &s);
    let mut m0 = samples.half(0) - &shift;
    for i in 0..samples.steps() {
        let mh = samples.half(2 * i + 1) - &shift;
        let m1 = samples.half(2 * i + 2) - &shift;
        s = rk4_step(&m0, &mh, &m1, &s, h);
        visit(i + 1, &s);
        m0 = m1;
    }
}

pub fn propagate_samples(samples: &PotentialSamples, lambda: C64, with_derivative: bool) -> MatrixSolution {
    let cap = samples.steps() + 1;
    let mut phi = Vec::with_capacity(cap);
    let mut dphi = Vec::with_capacity(cap);
    let mut phidot = Vec::new();
    let mut dphidot = Vec::new();
    sweep(samples, lambda, with_derivative, |_, s| {
        phi.push(s[0].clone());
        dphi.push(s[1].clone());
        if with_derivative {
            phidot.push(s[2].clone());
            dphidot.push(s[3].clone());
        }
    });
    let integrand: Vec<CMatrix> = phi.iter().map(|p| p.adjoint() * p).collect();
    let gram = running_simpson(&integrand, samples.h()).iter().map(hermitian_part).collect();
    MatrixSolution {
        lambda,
        steps: samples.steps(),
        phi,
        dphi,
        phidot: with_derivative.then_some(phidot),
        dphidot: with_derivative.then_some(dphidot),
        gram,
    }
}

pub fn propagate(v: &Potential, lambda: f64, steps: usize, with_derivative: bool) -> Result<MatrixSolution> {
    let samples = PotentialSamples::new(v, steps)?;
    Ok(propagate_samples(&samples, c(lambda, 0.0), with_derivative))
}

/// Values at `x = 1`.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub phi: CMatrix,
    pub dphi: CMatrix,
    pub phidot: Option<CMatrix>,
    pub dphidot: Option<CMatrix>,
}

/// `phi(1, lambda)` and friends without storing the trajectory.
pub fn shoot(samples: &PotentialSamples, lambda: C64, with_derivative: bool) -> Endpoint {
    let mut last = Vec::new();
    let steps = samples.steps();
    sweep(samples, lambda, with_derivative, |i, s| {
        if i == steps {
            last = s.to_vec();
        }
    });
    let mut it = last.into_iter();
    let phi = it.next().expect("state");
    let dphi = it.next().expect("state");
    Endpoint { phi, dphi, phidot: it.next(), dphidot: it.next() }
}

/// Integrates over `[0, length]` with `steps` RK4 steps, sampling `v` on the fly.
pub fn shoot_interval(v: &dyn MatrixPotential, lambda: C64, length: f64, steps: usize) -> (CMatrix, CMatrix) {
    let n = v.dim();
    if length <= 0.0 {
        return (zeros(n, n), identity(n));
    }
    let shift = identity(n) * lambda;
    let h = length / steps as f64;
    let mut s = initial_state(n, false);
    let mut m0 = v.value(0.0) - &shift;
    for i in 0..steps {
        let x = i as f64 * h;
        let mh = v.value(x + h / 2.0) - &shift;
        let m1 = v.value(((i + 1) as f64 * h).min(length)) - &shift;
        s = rk4_step(&m0, &mh, &m1, &s, h);
        m0 = m1;
    }
    let mut it = s.into_iter();
    (it.next().unwrap(), it.next().unwrap())
}

/// `(chi(x, lambda), chi'(x, lambda))` through `chi(x, V) = -phi(1 - x, V#)`.
pub fn chi_at(v: &Potential, lambda: C64, x: f64, steps: usize) -> Result<(CMatrix, CMatrix)> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain { x });
    }
    check_steps(steps)?;
    let refl = v.reflect();
    let (p, dp) = shoot_interval(&refl, lambda, 1.0 - x, steps);
    Ok((-p, dp))
}

/// `chi` and `chi'` at every grid node, from one propagation of `V#`.
pub fn chi_on_grid(reflected: &PotentialSamples, lambda: C64) -> (Vec<CMatrix>, Vec<CMatrix>) {
    let sol = propagate_samples(reflected, lambda, false);
    let n = sol.steps;
    let chi = (0..=n).map(|i| -sol.phi[n - i].clone()).collect();
    let dchi = (0..=n).map(|i| sol.dphi[n - i].clone()).collect();
    (chi, dchi)
}

/// Running integral by composite Simpson: exact Simpson at even nodes, the
/// three-point single-interval rule at odd nodes.
pub fn running_simpson(f: &[CMatrix], h: f64) -> Vec<CMatrix> {
    let len = f.len();
    let (r, cc) = f[0].shape();
    let mut out = vec![zeros(r, cc); len];
    for i in 1..len {
        if i % 2 == 0 {
            out[i] = &out[i - 2] + (&f[i - 2] + &f[i - 1] * c(4.0, 0.0) + &f[i]) * c(h / 3.0, 0.0);
        } else if i + 1 < len {
            out[i] = &out[i - 1] + (&f[i - 1] * c(5.0, 0.0) + &f[i] * c(8.0, 0.0) - &f[i + 1]) * c(h / 12.0, 0.0);
        } else {
            out[i] = &out[i - 1] + (&f[i - 1] + &f[i]) * c(h / 2.0, 0.0);
        }
    }
    out
}

/// `T(x, lambda) = int_0^x phi_alpha*(t) phi(t, lambda) dt`.
#[derive(Debug, Clone)]
pub struct CrossGram {
    pub lambda: C64,
    pub lambda_alpha: f64,
    pub steps: usize,
    pub t: Vec<CMatrix>,
}

impl CrossGram {
    pub fn end(&self) -> &CMatrix {
        self.t.last().expect("non-empty")
    }
}

pub fn cross_gram_from(group_phi: &MatrixSolution, sol: &MatrixSolution) -> Result<CrossGram> {
    if group_phi.steps != sol.steps {
        return Err(Error::contract(format!(
            "cross-Gram grids differ: {} vs {} steps",
            group_phi.steps, sol.steps
        )));
    }
    let f: Vec<CMatrix> = group_phi.phi.iter().zip(&sol.phi).map(|(a, p)| a.adjoint() * p).collect();
    Ok(CrossGram {
        lambda: sol.lambda,
        lambda_alpha: group_phi.lambda.re,
        steps: sol.steps,
        t: running_simpson(&f, 1.0 / sol.steps as f64),
    })
}

pub fn cross_gram(v: &Potential, lambda: f64, group_phi: &MatrixSolution, steps: usize) -> Result<CrossGram> {
    if steps != group_phi.steps {
        return Err(Error::contract(format!(
            "cross-Gram needs the group grid ({} steps), got {steps}",
            group_phi.steps
        )));
    }
    let sol = propagate(v, lambda, steps, false)?;
    cross_gram_from(group_phi, &sol)
}

/// `[phi_a* phi' - (phi_a')* phi](1) / (lambda_a - lambda)`.
pub fn cross_gram_boundary(group_phi: &MatrixSolution, sol: &MatrixSolution) -> CMatrix {
    let w = group_phi.phi_end().adjoint() * sol.dphi_end() - group_phi.dphi_end().adjoint() * sol.phi_end();
    w / (group_phi.lambda - sol.lambda)
}

/// `||phi_2h(1) - phi_h(1)|| / ||phi_h(1) - phi_h/2(1)||`; about 16 for RK4.
pub fn step_doubling_ratio(v: &Potential, lambda: f64, steps: usize) -> Result<f64> {
    let end = |s: usize| -> Result<CMatrix> {
        Ok(shoot(&PotentialSamples::new(v, s)?, c(lambda, 0.0), false).phi)
    };
    let coarse = end(steps / 2 / 2 * 2)?;
    let mid = end(steps)?;
    let fine = end(2 * steps)?;
    Ok((&coarse - &mid).norm() / (&mid - &fine).norm().max(1e-300))
}
