//! Dirichlet eigenvalues as the zeros of `sigma_min(phi(1, lambda))`.
//!
//! A block-tridiagonal finite-difference discretisation provides guesses
//! (via Sylvester inertia counts, so degenerate values come out repeated),
//! guesses are clustered, each cluster is refined by shooting, and the
//! multiplicity is read off the kernel of `phi(1, lambda)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::matrix::{c, hermitian_eig, identity, null_space, singular_values, zeros, CMatrix, C64, SubspaceBasis};
use crate::potential::{MatrixPotential, Potential};
use crate::propagator::{shoot, PotentialSamples};
use crate::spectral_data::GroupData;

/// Refined eigenvalues must reach `sigma_min <= REFINE_TOL * max(sigma_max, 1)`.
pub const REFINE_TOL: f64 = 1e-7;

const SCAN_POINTS: usize = 41;

#[derive(Debug, Clone)]
pub struct EigenGroup {
    pub lambda: f64,
    pub k: usize,
    /// Orthonormal basis of `Ker phi(1, lambda)`.
    pub e: SubspaceBasis,
    pub data: Option<GroupData>,
}

impl EigenGroup {
    pub fn data(&self) -> Result<&GroupData> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::contract(format!("group at lambda = {} has no attached spectral data", self.lambda)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumDiagnostics {
    pub steps: usize,
    pub fd_mesh: usize,
    pub sv_tol: f64,
    pub cluster_tol: f64,
    pub coarse_guesses: usize,
    pub clusters: usize,
    /// Clusters whose refinement landed on an already found eigenvalue.
    pub merged_after_refinement: usize,
    /// Eigenvalues whose guess count differs from the kernel dimension.
    pub multiplicity_mismatch: Vec<f64>,
    pub max_sigma_ratio: f64,
    pub weyl_count_ok: bool,
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub groups: Vec<EigenGroup>,
    pub lambda_max: f64,
    pub diagnostics: SpectrumDiagnostics,
}

impl Spectrum {
    pub fn lambdas(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.lambda).collect()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.k).collect()
    }

    /// Group by 1-based index.
    pub fn group(&self, alpha: usize) -> Result<&EigenGroup> {
        alpha
            .checked_sub(1)
            .and_then(|i| self.groups.get(i))
            .ok_or_else(|| Error::contract(format!("no eigenvalue group {alpha} (have {})", self.groups.len())))
    }

    /// Distance from group `alpha` (1-based) to its nearest neighbour.
    pub fn nearest_gap(&self, alpha: usize) -> Option<f64> {
        let i = alpha.checked_sub(1)?;
        let l = self.groups.get(i)?.lambda;
        let left = i.checked_sub(1).and_then(|j| self.groups.get(j)).map(|g| l - g.lambda);
        let right = self.groups.get(i + 1).map(|g| g.lambda - l);
        match (left, right) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Smallest and largest singular value of `phi(1, lambda)`.
pub fn endpoint_sigmas(samples: &PotentialSamples, lambda: f64) -> (f64, f64) {
    let s = singular_values(&shoot(samples, c(lambda, 0.0), false).phi);
    (*s.last().unwrap(), s[0])
}

fn objective(samples: &PotentialSamples, lambda: f64) -> f64 {
    let (lo, hi) = endpoint_sigmas(samples, lambda);
    lo / hi.max(1.0)
}

// ---- finite-difference guesses ----

/// Hermitian LDL* without pivoting; returns the number of negative pivots.
fn negative_pivots(m: &CMatrix) -> usize {
    let n = m.nrows();
    let scale = m.norm().max(1e-300);
    let mut l = zeros(n, n);
    let mut d = vec![0.0f64; n];
    let mut neg = 0;
    for k in 0..n {
        let mut dk = m[(k, k)].re;
        for j in 0..k {
            dk -= l[(k, j)].norm_sqr() * d[j];
        }
        if dk.abs() < 1e-300 + 1e-15 * scale {
            dk = 1e-15 * scale;
        }
        d[k] = dk;
        if dk < 0.0 {
            neg += 1;
        }
        l[(k, k)] = c(1.0, 0.0);
        for i in k + 1..n {
            let mut s = m[(i, k)];
            for j in 0..k {
                s -= l[(i, j)] * l[(k, j)].conj() * d[j];
            }
            l[(i, k)] = s / dk;
        }
    }
    neg
}

struct FdOperator {
    diag: Vec<CMatrix>,
    coupling: f64,
}

impl FdOperator {
    fn new(v: &dyn MatrixPotential, mesh: usize) -> Self {
        let h = 1.0 / mesh as f64;
        let n = v.dim();
        let two = identity(n) * c(2.0 / (h * h), 0.0);
        let diag = (1..mesh).map(|j| &two + v.value(j as f64 * h)).collect();
        FdOperator { diag, coupling: 1.0 / (h * h) }
    }

    /// Number of eigenvalues strictly below `mu`.
    fn count_below(&self, mu: f64) -> usize {
        let n = self.diag[0].nrows();
        let shift = identity(n) * c(mu, 0.0);
        let c2 = c(self.coupling * self.coupling, 0.0);
        let mut count = 0;
        let mut prev_inv: Option<CMatrix> = None;
        for a in &self.diag {
            let mut d = a - &shift;
            if let Some(pi) = &prev_inv {
                d -= pi * c2;
            }
            d = crate::matrix::hermitian_part(&d);
            count += negative_pivots(&d);
            let inv = d.clone().try_inverse().unwrap_or_else(|| {
                // exactly singular block: nudge off the eigenvalue
                let eps = 1e-12 * (1.0 + d.norm());
                (d + identity(n) * c(eps, 0.0)).try_inverse().expect("nudged block invertible")
            });
            prev_inv = Some(inv);
        }
        count
    }

    fn lower_bound(&self) -> f64 {
        // Laplacian part is PSD, so min eig(V) bounds the spectrum
        let two = 2.0 * self.coupling;
        self.diag
            .iter()
            .map(|a| hermitian_eig(a).map(|e| e.values[0] - two).unwrap_or(f64::NEG_INFINITY))
            .fold(f64::INFINITY, f64::min)
            - 1.0
    }

    fn bisect(&self, lo: f64, hi: f64, clo: usize, chi: usize, out: &mut Vec<f64>) {
        if chi <= clo {
            return;
        }
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-11 * (1.0 + mid.abs()) {
            out.extend(std::iter::repeat(mid).take(chi - clo));
            return;
        }
        let cm = self.count_below(mid);
        self.bisect(lo, mid, clo, cm, out);
        self.bisect(mid, hi, cm, chi, out);
    }
}

/// Eigenvalues `<= lambda_max` of the Dirichlet finite-difference operator
/// on `mesh` intervals, ascending, repeated by multiplicity.
pub fn coarse_spectrum(v: &dyn MatrixPotential, lambda_max: f64, mesh: usize) -> Result<Vec<f64>> {
    if mesh < 64 {
        return Err(Error::contract(format!("fd mesh must be >= 64, got {mesh}")));
    }
    let op = FdOperator::new(v, mesh);
    let lo = op.lower_bound();
    if lambda_max <= lo {
        return Ok(vec![]);
    }
    let total = op.count_below(lambda_max);
    let mut out = Vec::with_capacity(total);
    op.bisect(lo, lambda_max, 0, total, &mut out);
    Ok(out)
}

// ---- refinement ----

#[derive(Debug, Clone, Copy)]
pub struct Refined {
    pub lambda: f64,
    /// `sigma_min / max(sigma_max, 1)` at `lambda`.
    pub ratio: f64,
}

/// Minimises `sigma_min(phi(1, .))` on `[lo, hi]`: a uniform scan picks the
/// basin, golden-section search narrows it, a parabolic step polishes.
pub fn refine_in_bracket(samples: &PotentialSamples, lo: f64, hi: f64) -> Result<Refined> {
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let scan: Vec<(f64, f64)> = (0..SCAN_POINTS)
        .map(|i| {
            let x = lo + i as f64 * step;
            (x, objective(samples, x))
        })
        .collect();
    let j = (0..SCAN_POINTS).min_by(|&a, &b| scan[a].1.total_cmp(&scan[b].1)).unwrap();
    let mut a = scan[j.saturating_sub(1)].0;
    let mut b = scan[(j + 1).min(SCAN_POINTS - 1)].0;

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = objective(samples, x1);
    let mut f2 = objective(samples, x2);
    for _ in 0..200 {
        if b - a <= 4.0 * f64::EPSILON * (1.0 + 0.5 * (a + b).abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = objective(samples, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = objective(samples, x2);
        }
    }
    let (mut best, mut fbest) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };

    // parabolic step through (a, best, b)
    let (fa, fb) = (objective(samples, a), objective(samples, b));
    let num = (best - a).powi(2) * (fbest - fb) - (best - b).powi(2) * (fbest - fa);
    let den = (best - a) * (fbest - fb) - (best - b) * (fbest - fa);
    if den.abs() > 0.0 {
        let cand = best - 0.5 * num / den;
        if cand > a && cand < b {
            let fc = objective(samples, cand);
            if fc < fbest {
                best = cand;
                fbest = fc;
            }
        }
    }
    for (x, f) in [(a, fa), (b, fb)] {
        if f < fbest {
            best = x;
            fbest = f;
        }
    }

    if fbest > REFINE_TOL {
        return Err(Error::NotAnEigenvalue { guess: 0.5 * (lo + hi), ratio: fbest });
    }
    Ok(Refined { lambda: best, ratio: fbest })
}

/// Default search half-width for a standalone guess.
pub fn default_half_width(guess: f64) -> f64 {
    1.0f64.max(0.1 * (1.0 + guess.abs()))
}

pub fn refine_eigenvalue(v: &Potential, guess: f64, config: &SolverConfig) -> Result<f64> {
    let samples = PotentialSamples::new(v, config.steps)?;
    let w = default_half_width(guess);
    refine_in_bracket(&samples, guess - w, guess + w)
        .map(|r| r.lambda)
        .map_err(|e| match e {
            Error::NotAnEigenvalue { ratio, .. } => Error::NotAnEigenvalue { guess, ratio },
            e => e,
        })
}

/// `k` singular values of `phi1` at or below `sv_tol * max(sigma_max, 1)` and the matching kernel.
pub fn kernel_of(phi1: &CMatrix, sv_tol: f64) -> (usize, SubspaceBasis) {
    let e = null_space(phi1, sv_tol);
    (e.dim(), e)
}

pub fn multiplicity_and_kernel_sampled(samples: &PotentialSamples, lambda: f64, sv_tol: f64) -> Result<(usize, SubspaceBasis)> {
    let phi1 = shoot(samples, c(lambda, 0.0), false).phi;
    let (k, e) = kernel_of(&phi1, sv_tol);
    if k == 0 {
        let s = singular_values(&phi1);
        return Err(Error::NotAnEigenvalue { guess: lambda, ratio: s.last().unwrap() / s[0].max(1.0) });
    }
    Ok((k, e))
}

pub fn multiplicity_and_kernel(v: &Potential, lambda: f64, config: &SolverConfig) -> Result<(usize, SubspaceBasis)> {
    let samples = PotentialSamples::new(v, config.steps)?;
    multiplicity_and_kernel_sampled(&samples, lambda, config.sv_tol)
}

struct Cluster {
    center: f64,
    members: usize,
}

fn cluster_guesses(guesses: &[f64], tol: f64) -> Vec<Cluster> {
    let mut out: Vec<(f64, usize, f64)> = Vec::new(); // (sum, count, last)
    for &g in guesses {
        match out.last_mut() {
            Some((sum, count, last)) if g - *last <= tol * (1.0 + g.abs()) => {
                *sum += g;
                *count += 1;
                *last = g;
            }
            _ => out.push((g, 1, g)),
        }
    }
    out.into_iter().map(|(s, n, _)| Cluster { center: s / n as f64, members: n }).collect()
}

pub fn compute_spectrum(v: &Potential, lambda_max: f64, config: &SolverConfig) -> Result<Spectrum> {
    config.validate()?;
    let samples = PotentialSamples::new(v, config.steps)?;
    compute_spectrum_sampled(v, &samples, lambda_max, config)
}

pub fn compute_spectrum_sampled(
    v: &Potential,
    samples: &PotentialSamples,
    lambda_max: f64,
    config: &SolverConfig,
) -> Result<Spectrum> {
    let search_max = if lambda_max > 0.0 { lambda_max * config.lambda_margin } else { lambda_max + (config.lambda_margin - 1.0) * (1.0 + lambda_max.abs()) };
    let guesses = coarse_spectrum(v, search_max, config.fd_mesh)?;
    let clusters = cluster_guesses(&guesses, config.cluster_tol);
    let h = 1.0 / config.fd_mesh as f64;

    let brackets: Vec<(f64, f64)> = (0..clusters.len())
        .map(|i| {
            let x = clusters[i].center;
            // finite-difference error is about lambda^2 h^2 / 12
            let w_min = x * x * h * h / 3.0 + 1e-8 * (1.0 + x.abs());
            let gl = i.checked_sub(1).map(|j| x - clusters[j].center);
            let gr = clusters.get(i + 1).map(|cl| cl.center - x);
            let both = match (gl, gr) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => a.or(b).unwrap_or(0.2 * (1.0 + x.abs())),
            };
            let wl = w_min.max(0.45 * gl.unwrap_or(both));
            let wr = w_min.max(0.45 * gr.unwrap_or(both));
            (x - wl, x + wr)
        })
        .collect();

    let refined: Vec<Result<Refined>> = brackets
        .par_iter()
        .map(|&(lo, hi)| {
            refine_in_bracket(samples, lo, hi).or_else(|_| {
                // widen once; a split multiple eigenvalue may sit past the near edge
                let mid = 0.5 * (lo + hi);
                let w = 2.0 * (hi - lo);
                refine_in_bracket(samples, mid - w, mid + w)
            })
        })
        .collect();

    let mut failed = Vec::new();
    let mut found: Vec<(f64, f64, usize)> = Vec::new(); // (lambda, ratio, guess count)
    for (cl, r) in clusters.iter().zip(refined) {
        match r {
            Ok(r) => found.push((r.lambda, r.ratio, cl.members)),
            Err(_) if cl.center > lambda_max => {}
            Err(_) => failed.push(cl.center),
        }
    }
    if !failed.is_empty() {
        return Err(Error::PartialSpectrum { failed });
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut unique: Vec<(f64, f64, usize)> = Vec::new();
    let mut merged = 0;
    for f in found {
        match unique.last_mut() {
            Some(last) if (f.0 - last.0).abs() <= config.cluster_tol * (1.0 + f.0.abs()) => {
                merged += 1;
                last.2 += f.2;
                if f.1 < last.1 {
                    last.0 = f.0;
                    last.1 = f.1;
                }
            }
            _ => unique.push(f),
        }
    }
    unique.retain(|u| u.0 <= lambda_max);

    let kernels: Vec<Result<(usize, SubspaceBasis)>> = unique
        .par_iter()
        .map(|u| multiplicity_and_kernel_sampled(samples, u.0, config.sv_tol))
        .collect();
    let mut groups = Vec::with_capacity(unique.len());
    let mut mismatch = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for (u, kr) in unique.iter().zip(kernels) {
        let (k, e) = kr?;
        if k != u.2 {
            mismatch.push(u.0);
        }
        max_ratio = max_ratio.max(u.1);
        groups.push(EigenGroup { lambda: u.0, k, e, data: None });
    }

    let weyl_count_ok = weyl_count_check(&groups, v, lambda_max);
    Ok(Spectrum {
        groups,
        lambda_max,
        diagnostics: SpectrumDiagnostics {
            steps: samples.steps(),
            fd_mesh: config.fd_mesh,
            sv_tol: config.sv_tol,
            cluster_tol: config.cluster_tol,
            coarse_guesses: guesses.len(),
            clusters: clusters.len(),
            merged_after_refinement: merged,
            multiplicity_mismatch: mismatch,
            max_sigma_ratio: max_ratio,
            weyl_count_ok,
        },
    })
}

/// Loose Weyl-law sanity: groups below `(pi n)^2 + ||V||` carry about `N n`
/// eigenvalues, give or take `N`.
fn weyl_count_check(groups: &[EigenGroup], v: &Potential, lambda_max: f64) -> bool {
    let n = v.dim();
    let vnorm = v.sup_norm(65);
    let pi = std::f64::consts::PI;
    (1..)
        .map(|m: usize| (m, (pi * m as f64).powi(2) + vnorm))
        .take_while(|&(_, b)| b <= lambda_max)
        .all(|(m, bound)| {
            let count: usize = groups.iter().filter(|g| g.lambda <= bound).map(|g| g.k).sum();
            count.abs_diff(n * m) <= n
        })
}

/// `log |det phi(1, lambda_a + delta)|` slope against `log delta`.
pub fn det_log_slope(samples: &PotentialSamples, lambda: f64, deltas: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = deltas
        .iter()
        .map(|&d| {
            let p = shoot(samples, c(lambda + d, 0.0), false).phi;
            let det: C64 = crate::matrix::det(&p);
            (d.ln(), det.norm().ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
