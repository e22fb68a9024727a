//! Per-eigenvalue data: Gram matrices, norming operators, residue matrices,
//! forbidden subspaces; plus the Weyl function `m` and its contour residues.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::matrix::{
    c, hermitian_eig, hermitian_part, identity, inverse, max_principal_angle, projector, rcond, singular_values,
    smallest_right_singular, subspace_complement, subspace_image, CMatrix, SubspaceBasis, C64,
};
use crate::potential::Potential;
use crate::propagator::{propagate_samples, shoot, MatrixSolution, PotentialSamples};
use crate::spectrum::{EigenGroup, Spectrum};

/// Residuals of the identities every attached group should satisfy.
#[derive(Debug, Clone, Serialize)]
pub struct GroupChecks {
    /// `||e* phidot*(1) phi'(1) e - g|| / ||g||`.
    pub norming_identity: f64,
    /// `||chi'(0) phi'(1) P - P||`.
    pub boundary_identity: f64,
    /// `min eig(D) / ||D||` (0 when `D = 0`).
    pub d_min_eig_rel: f64,
    /// `||phi(1) e||`.
    pub kernel_residual: f64,
    /// Largest principal angle between the two constructions of `F`.
    pub forbidden_cross_angle: f64,
    /// `cos` of the smallest principal angle between `E` and `F`.
    pub e_f_max_cosine: f64,
    /// `sigma_min(Z) / sigma_max(Z)`.
    pub z_rcond: f64,
}

#[derive(Debug, Clone)]
pub struct GroupData {
    /// `phi(x, lambda_a)` with the lambda-derivative, on the propagation grid.
    pub phi: MatrixSolution,
    pub p: CMatrix,
    pub s_alpha: CMatrix,
    /// `e* S e`, in the basis of the owning group.
    pub g_alpha: CMatrix,
    pub b_alpha: CMatrix,
    pub d_alpha: CMatrix,
    pub f_alpha: SubspaceBasis,
    /// `C^N minus phidot*(1)(E#)`.
    pub f_alpha_alt: SubspaceBasis,
    pub e_sharp: SubspaceBasis,
    pub z_alpha: CMatrix,
    pub checks: GroupChecks,
}

impl GroupData {
    pub fn steps(&self) -> usize {
        self.phi.steps
    }
}

/// Fills in the spectral data of one group using precomputed samples of `V`
/// and of its reflection.
pub fn attach_group_data_sampled(samples: &PotentialSamples, reflected: &PotentialSamples, group: &EigenGroup) -> Result<EigenGroup> {
    let n = samples.dim();
    let k = group.k;
    let e = group.e.matrix();
    let lambda = c(group.lambda, 0.0);
    let sol = propagate_samples(samples, lambda, true);
    let phi1 = sol.phi_end().clone();
    let dphi1 = sol.dphi_end().clone();
    let phidot1 = sol.phidot.as_ref().and_then(|v| v.last()).cloned().expect("derivative requested");

    let p = projector(&group.e);
    let s_alpha = hermitian_part(sol.gram_end());
    let g_alpha = hermitian_part(&(e.adjoint() * &s_alpha * e));
    let g_inv = inverse(&g_alpha).map_err(|_| {
        Error::InternalConsistency(format!("e* S e is singular at lambda = {}", group.lambda))
    })?;
    let b_alpha = hermitian_part(&(e * &g_inv * e.adjoint()));
    let s_inv = inverse(&s_alpha).map_err(|_| Error::InternalConsistency("S_alpha is singular".into()))?;
    let d_alpha = hermitian_part(&(s_inv - &b_alpha));

    // rank D = N - k is known, so keep the top N - k eigenvectors
    let d_eig = hermitian_eig(&d_alpha)?;
    let f_alpha = SubspaceBasis::from_orthonormal(d_eig.vectors.columns(k, n - k).into_owned());
    let d_norm = d_eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let d_min_eig_rel = if d_norm > 0.0 { d_eig.values[0] / d_norm } else { 0.0 };

    let e_sharp = smallest_right_singular(&phi1.adjoint(), k);
    let img = subspace_image(&phidot1.adjoint(), &e_sharp);
    let f_alpha_alt = subspace_complement(&img);

    let q = identity(n) - &p;
    let z_alpha = &phidot1 * &p + &phi1 * &q;

    // chi'(0, lambda) = phi#'(1, lambda)
    let dchi0 = shoot(reflected, lambda, false).dphi;
    let boundary_identity = (&dchi0 * &dphi1 * &p - &p).norm();
    let g_lident = e.adjoint() * phidot1.adjoint() * &dphi1 * e;
    let norming_identity = (&g_lident - &g_alpha).norm() / g_alpha.norm();
    let e_f_max_cosine = crate::matrix::principal_cosines(&group.e, &f_alpha).first().copied().unwrap_or(0.0);

    let checks = GroupChecks {
        norming_identity,
        boundary_identity,
        d_min_eig_rel,
        kernel_residual: (&phi1 * e).norm(),
        forbidden_cross_angle: max_principal_angle(&f_alpha, &f_alpha_alt),
        e_f_max_cosine,
        z_rcond: rcond(&z_alpha),
    };
    let data = GroupData {
        phi: sol,
        p,
        s_alpha,
        g_alpha,
        b_alpha,
        d_alpha,
        f_alpha,
        f_alpha_alt,
        e_sharp,
        z_alpha,
        checks,
    };
    Ok(EigenGroup { data: Some(data), ..group.clone() })
}

pub fn attach_group_data(v: &Potential, group: &EigenGroup, config: &SolverConfig) -> Result<EigenGroup> {
    let samples = PotentialSamples::new(v, config.steps)?;
    attach_group_data_sampled(&samples, &samples.reflected(), group)
}

/// Attaches data to every group of `spectrum` in parallel.
pub fn attach_all_sampled(samples: &PotentialSamples, spectrum: &Spectrum) -> Result<Spectrum> {
    let reflected = samples.reflected();
    let groups = spectrum
        .groups
        .par_iter()
        .map(|g| attach_group_data_sampled(samples, &reflected, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrum { groups, ..spectrum.clone() })
}

pub fn attach_all(v: &Potential, spectrum: &Spectrum, config: &SolverConfig) -> Result<Spectrum> {
    attach_all_sampled(&PotentialSamples::new(v, config.steps)?, spectrum)
}

/// Spectrum with data attached to every group.
pub fn spectral_data(v: &Potential, lambda_max: f64, config: &SolverConfig) -> Result<Spectrum> {
    config.validate()?;
    let samples = PotentialSamples::new(v, config.steps)?;
    let s = crate::spectrum::compute_spectrum_sampled(v, &samples, lambda_max, config)?;
    attach_all_sampled(&samples, &s)
}

// ---- Weyl function ----

#[derive(Debug, Clone)]
pub struct WeylSample {
    pub lambda: C64,
    pub m: CMatrix,
}

impl WeylSample {
    /// `||m - m*||` (meaningful for real lambda).
    pub fn hermitian_defect(&self) -> f64 {
        crate::matrix::hermitian_defect(&self.m)
    }
}

/// Evaluates `m(lambda) = chi'(0) chi(0)^{-1}` from one set of reflected samples.
pub struct WeylFunction {
    reflected: PotentialSamples,
    eigenvalues: Vec<f64>,
}

impl WeylFunction {
    pub fn new(v: &Potential, steps: usize, spectrum: Option<&Spectrum>) -> Result<Self> {
        let samples = PotentialSamples::new(&v.reflect(), steps)?;
        Ok(Self::from_reflected(samples, spectrum))
    }

    pub fn from_reflected(reflected: PotentialSamples, spectrum: Option<&Spectrum>) -> Self {
        WeylFunction { reflected, eigenvalues: spectrum.map(|s| s.lambdas()).unwrap_or_default() }
    }

    fn nearest(&self, lambda: C64) -> Option<f64> {
        self.eigenvalues
            .iter()
            .copied()
            .min_by(|a, b| (c(*a, 0.0) - lambda).norm().total_cmp(&(c(*b, 0.0) - lambda).norm()))
    }

    pub fn eval(&self, lambda: C64) -> Result<WeylSample> {
        let near_pole = || Error::NearPole { lambda: format!("{lambda}"), nearest: self.nearest(lambda) };
        if let Some(l) = self.nearest(lambda) {
            if (c(l, 0.0) - lambda).norm() < 1e-6 {
                return Err(near_pole());
            }
        }
        let end = shoot(&self.reflected, lambda, false);
        // chi(0) = -phi#(1), chi'(0) = phi#'(1)
        let chi0 = -end.phi;
        let s = singular_values(&chi0);
        if *s.last().unwrap() <= 1e-10 * s[0].max(1.0) {
            return Err(near_pole());
        }
        let inv = chi0.try_inverse().ok_or_else(near_pole)?;
        Ok(WeylSample { lambda, m: end.dphi * inv })
    }
}

pub fn weyl_m(v: &Potential, lambda: C64, config: &SolverConfig, spectrum: Option<&Spectrum>) -> Result<WeylSample> {
    WeylFunction::new(v, config.steps, spectrum)?.eval(lambda)
}

pub fn default_contour_radius(spectrum: &Spectrum, alpha: usize, factor: f64) -> Result<f64> {
    spectrum.group(alpha)?;
    Ok(factor * spectrum.nearest_gap(alpha).unwrap_or(4.0))
}

/// `(1 / 2 pi i)` times the trapezoid-rule integral of `m` around
/// `|lambda - lambda_alpha| = radius`.
pub fn m_residue_with(weyl: &WeylFunction, spectrum: &Spectrum, alpha: usize, radius: f64, nodes: usize) -> Result<CMatrix> {
    if nodes < 32 {
        return Err(Error::contract(format!("contour needs >= 32 nodes, got {nodes}")));
    }
    let center = spectrum.group(alpha)?.lambda;
    if !(radius > 0.0) {
        return Err(Error::contract("contour radius must be positive"));
    }
    if let Some(gap) = spectrum.nearest_gap(alpha) {
        if radius >= 0.5 * gap {
            return Err(Error::Geometry(format!(
                "radius {radius} reaches half the gap {gap} around lambda = {center}"
            )));
        }
    }
    let samples = (0..nodes)
        .into_par_iter()
        .map(|j| {
            let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / nodes as f64);
            weyl.eval(c(center, 0.0) + w * radius).map(|s| s.m * w)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = spectrum.groups[0].e.ambient_dim();
    let sum = samples.into_iter().fold(CMatrix::zeros(n, n), |acc, m| acc + m);
    Ok(sum * c(radius / nodes as f64, 0.0))
}

pub fn m_residue(v: &Potential, spectrum: &Spectrum, alpha: usize, radius: f64, nodes: usize, config: &SolverConfig) -> Result<CMatrix> {
    let weyl = WeylFunction::new(v, config.steps, Some(spectrum))?;
    m_residue_with(&weyl, spectrum, alpha, radius, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{max_abs_diff, real_diag};
    use crate::spectrum::compute_spectrum;
    use std::f64::consts::PI;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    /// Composite Simpson of `sin^2(z t) / z^2` on `[0, 1]`.
    fn scalar_gram_oracle(lambda: f64) -> f64 {
        let z = lambda.sqrt();
        let m = 20000;
        let h = 1.0 / m as f64;
        let f = |t: f64| ((z * t).sin() / z).powi(2);
        let mut s = f(0.0) + f(1.0);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn free_group_data() {
        let v = Potential::zero(2);
        let s = spectral_data(&v, 40.0, &cfg()).unwrap();
        let d = s.groups[0].data().unwrap();
        let want = identity(2) * c(1.0 / (2.0 * PI * PI), 0.0);
        assert!(max_abs_diff(&d.s_alpha, &want) < 1e-9);
        assert!(max_abs_diff(&d.g_alpha, &want) < 1e-9);
        assert!(max_abs_diff(&d.b_alpha, &(identity(2) * c(2.0 * PI * PI, 0.0))) < 1e-6);
        assert!(d.d_alpha.norm() < 1e-6);
        assert_eq!(d.f_alpha.dim(), 0);
        assert!(d.checks.norming_identity < 1e-6);
        assert!(d.checks.boundary_identity < 1e-6);
        let d2 = s.groups[1].data().unwrap();
        let want2 = identity(2) * c(1.0 / (8.0 * PI * PI), 0.0);
        assert!(max_abs_diff(&d2.g_alpha, &want2) < 1e-9);
    }

    #[test]
    fn diagonal_group_data() {
        let v = Potential::constant_diagonal(vec![0.0, 10.0]);
        let s = spectral_data(&v, 30.0, &cfg()).unwrap();
        let l1 = s.groups[0].lambda;
        let d1 = s.groups[0].data().unwrap();
        assert_eq!(d1.g_alpha.shape(), (1, 1));
        assert!((d1.g_alpha[(0, 0)].re - 1.0 / (2.0 * PI * PI)).abs() < 1e-9);
        // channel 2 at lambda = pi^2 sees lambda - 10 < 0
        let mu = 10.0 - l1;
        let z = mu.sqrt();
        let oracle = {
            let m = 20000;
            let h = 1.0 / m as f64;
            let f = |t: f64| ((z * t).sinh() / z).powi(2);
            let mut acc = f(0.0) + f(1.0);
            for i in 1..m {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
            }
            acc * h / 3.0
        };
        assert!((d1.s_alpha[(1, 1)].re - oracle).abs() < 1e-9 * (1.0 + oracle));
        assert!(d1.s_alpha[(0, 1)].norm() < 1e-12);
        assert!(max_principal_angle(&d1.f_alpha, &SubspaceBasis::coordinate(2, 1)) < 1e-8);
        assert!(d1.checks.forbidden_cross_angle < 1e-5);
        let d2 = s.groups[1].data().unwrap();
        assert!(max_principal_angle(&d2.f_alpha, &SubspaceBasis::coordinate(2, 0)) < 1e-8);
        let g2 = scalar_gram_oracle(s.groups[1].lambda - 10.0);
        assert!((d2.g_alpha[(0, 0)].re - g2).abs() < 1e-9);
        for g in &s.groups {
            let ch = &g.data().unwrap().checks;
            assert!(ch.d_min_eig_rel >= -1e-8);
            assert!(ch.e_f_max_cosine < 1e-6);
            assert!(ch.z_rcond > 1e-6);
        }
    }

    #[test]
    fn residue_matrix_is_basis_invariant() {
        let v = Potential::random_fourier(2, 3, 3.0, 7);
        let s = spectral_data(&v, 30.0, &cfg()).unwrap();
        let g = &s.groups[0];
        let b = g.data().unwrap().b_alpha.clone();
        // random unitary change of basis within E
        let theta = 0.7;
        let k = g.k;
        let u = if k == 1 {
            CMatrix::from_element(1, 1, C64::from_polar(1.0, theta))
        } else {
            CMatrix::from_fn(k, k, |i, j| match (i, j) {
                (0, 0) => c(theta.cos(), 0.0),
                (0, 1) => c(0.0, theta.sin()),
                (1, 0) => c(0.0, theta.sin()),
                (1, 1) => c(theta.cos(), 0.0),
                _ => c(if i == j { 1.0 } else { 0.0 }, 0.0),
            })
        };
        let e2 = SubspaceBasis::from_orthonormal(g.e.matrix() * u);
        let g2 = EigenGroup { e: e2, data: None, ..g.clone() };
        let d2 = attach_group_data(&v, &g2, &cfg()).unwrap();
        assert!(max_abs_diff(&d2.data().unwrap().b_alpha, &b) < 1e-9 * (1.0 + b.norm()));
    }

    #[test]
    fn weyl_closed_forms() {
        let one = weyl_m(&Potential::zero(1), c(-1.0, 0.0), &cfg(), None).unwrap();
        let want = -(1.0f64).cosh() / (1.0f64).sinh();
        assert!((one.m[(0, 0)] - c(want, 0.0)).norm() < 1e-9);
        assert!((want + 1.3130).abs() < 1e-4);
        let two = weyl_m(&Potential::zero(2), c(-1.0, 0.0), &cfg(), None).unwrap();
        assert!(max_abs_diff(&two.m, &(identity(2) * c(want, 0.0))) < 1e-9);

        let v = Potential::random_fourier(2, 3, 2.0, 3);
        let w = weyl_m(&v, c(PI * PI + 0.5, 0.0), &cfg(), None).unwrap();
        assert!(w.hermitian_defect() < 1e-7);
        let z = c(3.0, 1.5);
        let a = weyl_m(&v, z, &cfg(), None).unwrap();
        let b = weyl_m(&v, z.conj(), &cfg(), None).unwrap();
        assert!((&a.m - b.m.adjoint()).norm() < 1e-7);
    }

    #[test]
    fn weyl_pole_is_reported() {
        let v = Potential::zero(1);
        let s = compute_spectrum(&v, 12.0, &cfg()).unwrap();
        let e = weyl_m(&v, c(PI * PI + 1e-8, 0.0), &cfg(), Some(&s)).unwrap_err();
        match e {
            Error::NearPole { nearest: Some(l), .. } => assert!((l - PI * PI).abs() < 1e-6),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn residues() {
        let v = Potential::zero(2);
        let s = spectral_data(&v, 40.0, &cfg()).unwrap();
        let r = m_residue(&v, &s, 1, 2.0, 64, &cfg()).unwrap();
        let want = identity(2) * c(-2.0 * PI * PI, 0.0);
        assert!((&r - &want).norm() / want.norm() < 1e-4);

        let v = Potential::constant_diagonal(vec![0.0, 10.0]);
        let s = spectral_data(&v, 30.0, &cfg()).unwrap();
        let r1 = m_residue(&v, &s, 1, 2.0, 64, &cfg()).unwrap();
        assert!((&r1 - real_diag(&[-2.0 * PI * PI, 0.0])).norm() < 1e-3);
        let g2 = s.groups[1].data().unwrap().g_alpha[(0, 0)].re;
        let r2 = m_residue(&v, &s, 2, 2.0, 64, &cfg()).unwrap();
        assert!((&r2 - real_diag(&[0.0, -1.0 / g2])).norm() < 1e-3);

        assert!(matches!(m_residue(&v, &s, 1, 6.0, 64, &cfg()), Err(Error::Geometry(_))));
        assert!(matches!(m_residue(&v, &s, 1, 2.0, 16, &cfg()), Err(Error::ContractViolation(_))));
    }
}
