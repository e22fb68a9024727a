//! Isospectral transforms that replace the residue matrix of one
//! eigenvalue group.
//!
//! With `A = B - B_a` and `K(x) = A (I + S_a(x) A)^{-1}` the new potential is
//! `V - 2 (phi_a K phi_a*)'`, evaluated through `K' = -K phi_a* phi_a K`
//! so that no numerical differentiation is involved.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::SolverConfig;
use crate::error::{Error, Result, TargetCondition};
use crate::matrix::{
    c, hermitian_defect, hermitian_eig, hermitian_part, identity, inverse, is_hermitian, rcond, singular_values,
    CMatrix, SubspaceBasis,
};
use crate::potential::{hermite, matrix_from_json, matrix_to_json, MatrixPotential, Potential};
use crate::propagator::{cross_gram_from, propagate_samples, MatrixSolution, PotentialSamples};
use crate::spectral_data::{attach_group_data_sampled, GroupData};
use crate::spectrum::{compute_spectrum_sampled, EigenGroup, Spectrum};

/// Loewner floor for `B >= 0`, relative to `||B||`.
pub const PSD_FLOOR: f64 = 1e-10;
/// Eigenvalues of `B` below this fraction of `||B||` count as zero.
pub const RANK_TOL: f64 = 1e-8;
/// Retained eigenvalues below this fraction make the target too close to rank-deficient.
pub const RANK_MARGIN: f64 = 1e-6;
/// Smallest admissible sine of the angle between `E(B)` and `F_a`.
pub const TRANSVERSALITY_MARGIN: f64 = 1e-6;
/// `I + S_a(x) A` with reciprocal condition number below this is refused.
pub const RCOND_FLOOR: f64 = 1e-12;

/// Which group to change and the residue matrix it should get.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    /// 1-based group index.
    pub alpha: usize,
    pub b: CMatrix,
}

impl TransformSpec {
    pub fn new(alpha: usize, b: CMatrix) -> Self {
        TransformSpec { alpha, b }
    }

    /// Spec that leaves the group unchanged.
    pub fn identity_for(alpha: usize, data: &GroupData) -> Self {
        TransformSpec { alpha, b: data.b_alpha.clone() }
    }

    /// `E(B)`: the range of `B`.
    pub fn target_subspace(&self) -> SubspaceBasis {
        range_of_hermitian(&self.b)
    }

    pub fn to_json(&self) -> Value {
        json!({ "alpha": self.alpha, "B": matrix_to_json(&self.b) })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::parse("transform", "expected an object"))?;
        let alpha = obj
            .get("alpha")
            .and_then(Value::as_u64)
            .filter(|&a| a >= 1)
            .ok_or_else(|| Error::parse("transform.alpha", "expected a 1-based positive integer"))?
            as usize;
        let b = obj.get("B").ok_or_else(|| Error::parse("transform.B", "missing matrix"))?;
        let n = infer_dim(b).ok_or_else(|| Error::parse("transform.B", "cannot infer a square dimension"))?;
        let b = matrix_from_json(b, n, "transform.B")?;
        Ok(TransformSpec { alpha, b })
    }

    /// One spec or an ordered list of specs.
    pub fn list_from_json_str(text: &str) -> Result<Vec<Self>> {
        let v: Value = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        match &v {
            Value::Array(items) => items
                .iter()
                .enumerate()
                .map(|(i, it)| {
                    Self::from_json(it).map_err(|e| match e {
                        Error::Parse { context, message } => Error::Parse { context: format!("[{i}].{context}"), message },
                        e => e,
                    })
                })
                .collect(),
            _ => Ok(vec![Self::from_json(&v)?]),
        }
    }

    pub fn load_list(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::list_from_json_str(&text).map_err(|e| match e {
            Error::Parse { context, message } => Error::Parse { context: format!("{}: {context}", path.display()), message },
            e => e,
        })
    }

    pub fn list_to_json(specs: &[Self]) -> Value {
        Value::Array(specs.iter().map(Self::to_json).collect())
    }
}

fn infer_dim(v: &Value) -> Option<usize> {
    let arr = v.as_array()?;
    if arr.first().is_some_and(|r| r.as_array().is_some_and(|x| x.first().is_some_and(Value::is_array))) {
        // nested rows of [re, im]
        return Some(arr.len());
    }
    let n = (arr.len() as f64).sqrt().round() as usize;
    (n * n == arr.len()).then_some(n)
}

fn range_of_hermitian(b: &CMatrix) -> SubspaceBasis {
    let n = b.nrows();
    let Ok(eig) = hermitian_eig(&hermitian_part(b)) else {
        return SubspaceBasis::zero(n);
    };
    let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return SubspaceBasis::zero(n);
    }
    let r = eig.values.iter().filter(|&&v| v > RANK_TOL * scale).count();
    SubspaceBasis::from_orthonormal(eig.vectors.columns(n - r, r).into_owned())
}

/// `B = e g^{-1} e*` for an orthonormal basis `e` of `E`.
pub fn target_from_pair(e: &SubspaceBasis, g: &CMatrix) -> Result<CMatrix> {
    let k = e.dim();
    if g.shape() != (k, k) {
        return Err(Error::contract(format!("norming matrix is {:?}, subspace has dimension {k}", g.shape())));
    }
    if !is_hermitian(g, 1e-10) {
        return Err(Error::InvalidNorming("g is not Hermitian".into()));
    }
    let eig = hermitian_eig(g).map_err(|e| Error::InvalidNorming(e.to_string()))?;
    let top = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if eig.values.first().is_some_and(|&v| v <= 1e-14 * top.max(1e-300)) {
        return Err(Error::InvalidNorming(format!("g must be positive definite (min eigenvalue {:.3e})", eig.values[0])));
    }
    let gi = inverse(g).map_err(|e| Error::InvalidNorming(e.to_string()))?;
    let em = e.matrix();
    Ok(hermitian_part(&(em * gi * em.adjoint())))
}

/// Measured margins of the admissibility conditions.
#[derive(Debug, Clone, Serialize)]
pub struct TargetDiagnostics {
    pub hermitian_defect: f64,
    /// `min eig(B) / ||B||`.
    pub min_eig_rel: f64,
    pub rank: usize,
    pub k: usize,
    /// Smallest retained eigenvalue of `B` over `||B||`.
    pub min_retained_rel: f64,
    /// Sine of the smallest principal angle between `E(B)` and `F_a` (1 if `F_a = {0}`).
    pub transversality_sine: f64,
}

fn reject(condition: TargetCondition, detail: String) -> Error {
    Error::RejectedTarget { condition, detail }
}

pub fn validate_target(spec: &TransformSpec, group: &EigenGroup) -> Result<TargetDiagnostics> {
    let data = group.data()?;
    let n = group.e.ambient_dim();
    if spec.b.shape() != (n, n) {
        return Err(Error::contract(format!("B is {:?}, potential dimension is {n}", spec.b.shape())));
    }
    let defect = hermitian_defect(&spec.b);
    if !is_hermitian(&spec.b, PSD_FLOOR) {
        return Err(reject(TargetCondition::Hermitian, format!("||B - B*|| = {defect:.3e}")));
    }
    let eig = hermitian_eig(&hermitian_part(&spec.b))?;
    let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min_eig_rel = if scale > 0.0 { eig.values[0] / scale } else { 0.0 };
    if min_eig_rel < -PSD_FLOOR {
        return Err(reject(
            TargetCondition::PositiveSemidefinite,
            format!("min eigenvalue {:.6e} with ||B|| = {scale:.6e}", eig.values[0]),
        ));
    }
    let retained: Vec<f64> = eig.values.iter().copied().filter(|&v| v > RANK_TOL * scale).collect();
    let rank = retained.len();
    if rank != group.k {
        return Err(reject(TargetCondition::Rank, format!("rank B = {rank}, k_alpha = {}", group.k)));
    }
    let min_retained_rel = retained.first().map_or(0.0, |v| v / scale);
    if min_retained_rel < RANK_MARGIN {
        return Err(reject(
            TargetCondition::Rank,
            format!("smallest retained eigenvalue is {min_retained_rel:.3e} of ||B||, too close to rank deficiency"),
        ));
    }
    let target = SubspaceBasis::from_orthonormal(eig.vectors.columns(n - rank, rank).into_owned());
    let transversality_sine = if data.f_alpha.dim() == 0 {
        1.0
    } else {
        let pf = crate::matrix::projector(&data.f_alpha);
        let r = (identity(n) - pf) * target.matrix();
        singular_values(&r).last().copied().unwrap_or(1.0)
    };
    if transversality_sine <= TRANSVERSALITY_MARGIN {
        return Err(reject(
            TargetCondition::Transversality,
            format!("E(B) meets F_alpha (sine of smallest angle {transversality_sine:.3e})"),
        ));
    }
    Ok(TargetDiagnostics {
        hermitian_defect: defect,
        min_eig_rel,
        rank,
        k: group.k,
        min_retained_rel,
        transversality_sine,
    })
}

/// Per-node data of a built transform.
#[derive(Debug, Clone)]
pub struct TransformCache {
    /// Base potential sampled on the propagation grid.
    pub base_samples: PotentialSamples,
    /// `phi_a`, `phi_a'` and `S_a(x)` at `lambda_a`.
    pub phi_a: MatrixSolution,
    pub k: Vec<CMatrix>,
    /// Smallest `rcond(I + S_a(x) A)` over nodes.
    pub min_rcond: f64,
    /// Largest `||K - K*|| / (1 + ||K||)` over nodes.
    pub k_hermitian_defect: f64,
    /// `||phi_a(1) K(1) phi_a*(1)||`.
    pub boundary_residual: f64,
}

impl TransformCache {
    pub fn steps(&self) -> usize {
        self.phi_a.steps
    }

    pub fn xs(&self) -> Vec<f64> {
        self.phi_a.xs()
    }
}

#[derive(Debug, Clone)]
pub struct DarbouxPotential {
    base: Potential,
    spec: TransformSpec,
    lambda_alpha: f64,
    k_alpha: usize,
    a: CMatrix,
    target: SubspaceBasis,
    diagnostics: TargetDiagnostics,
    cache: TransformCache,
}

impl DarbouxPotential {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &Potential {
        &self.base
    }

    pub fn spec(&self) -> &TransformSpec {
        &self.spec
    }

    pub fn lambda_alpha(&self) -> f64 {
        self.lambda_alpha
    }

    pub fn k_alpha(&self) -> usize {
        self.k_alpha
    }

    /// `A = B - B_a`.
    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn target(&self) -> &SubspaceBasis {
        &self.target
    }

    pub fn diagnostics(&self) -> &TargetDiagnostics {
        &self.diagnostics
    }

    pub fn cache(&self) -> &TransformCache {
        &self.cache
    }

    /// Interpolated `(phi_a, phi_a', S_a, K)` at `x`.
    fn local(&self, x: f64) -> (CMatrix, CMatrix, CMatrix) {
        let sol = &self.cache.phi_a;
        let steps = sol.steps;
        let s = x.clamp(0.0, 1.0) * steps as f64;
        let i = (s.floor() as usize).min(steps - 1);
        let t = s - i as f64;
        if t == 0.0 || t == 1.0 {
            let j = i + t as usize;
            return (sol.phi[j].clone(), sol.dphi[j].clone(), hermitian_part(&self.cache.k[j]));
        }
        let h = 1.0 / steps as f64;
        let l = c(self.lambda_alpha, 0.0);
        let (p0, p1) = (&sol.phi[i], &sol.phi[i + 1]);
        let (d0, d1) = (&sol.dphi[i], &sol.dphi[i + 1]);
        let n = self.dim();
        let dd0 = (self.cache.base_samples.node(i) - identity(n) * l) * p0;
        let dd1 = (self.cache.base_samples.node(i + 1) - identity(n) * l) * p1;
        let phi = hermite(t, h, p0, d0, p1, d1);
        let dphi = hermite(t, h, d0, &dd0, d1, &dd1);
        let gram = hermite(t, h, &sol.gram[i], &(p0.adjoint() * p0), &sol.gram[i + 1], &(p1.adjoint() * p1));
        let m = identity(n) + hermitian_part(&gram) * &self.a;
        let k = match m.try_inverse() {
            Some(inv) => hermitian_part(&(&self.a * inv)),
            None => hermitian_part(&self.cache.k[if t < 0.5 { i } else { i + 1 }]),
        };
        (phi, dphi, k)
    }

    /// `V(x) - 2 [phi_a' K phi_a* + phi_a K phi_a'* - phi_a K phi_a* phi_a K phi_a*](x)`
    /// before Hermitian symmetrisation.
    pub fn raw_value(&self, x: f64) -> CMatrix {
        let (p, dp, k) = self.local(x);
        let pk = &p * &k;
        let pkp = &pk * p.adjoint();
        let w = &dp * &k * p.adjoint() + &pk * dp.adjoint() - &pkp * &pkp;
        self.base.value(x) - w * c(2.0, 0.0)
    }

    pub fn value(&self, x: f64) -> CMatrix {
        hermitian_part(&self.raw_value(x))
    }

    /// Largest `||V~ - V~*||` over the cache grid.
    pub fn hermitian_defect_on_grid(&self) -> f64 {
        self.cache.xs().par_iter().map(|&x| hermitian_defect(&self.raw_value(x))).reduce(|| 0.0, f64::max)
    }
}

/// Builds `V~` from a group with attached data. The cache grid is the grid
/// on which the group data were computed.
pub fn build_transform(v: &Potential, spec: &TransformSpec, group: &EigenGroup) -> Result<Potential> {
    let diagnostics = validate_target(spec, group)?;
    let data = group.data()?;
    let n = v.dim();
    let a = hermitian_part(&(&spec.b - &data.b_alpha));
    let phi_a = data.phi.clone();
    let steps = phi_a.steps;
    let base_samples = PotentialSamples::new(v, steps)?;

    let ks = (0..=steps)
        .into_par_iter()
        .map(|i| {
            let m = identity(n) + hermitian_part(&phi_a.gram[i]) * &a;
            let rc = rcond(&m);
            if rc < RCOND_FLOOR {
                return Err(Error::NumericalConditioning { x: phi_a.x(i), rcond: rc });
            }
            let inv = m.try_inverse().ok_or(Error::NumericalConditioning { x: phi_a.x(i), rcond: rc })?;
            Ok((&a * inv, rc))
        })
        .collect::<Result<Vec<_>>>()?;
    let min_rcond = ks.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let k: Vec<CMatrix> = ks.into_iter().map(|p| p.0).collect();
    let k_hermitian_defect = k.iter().map(|m| hermitian_defect(m) / (1.0 + m.norm())).fold(0.0, f64::max);
    let p1 = phi_a.phi_end();
    let boundary_residual = (p1 * hermitian_part(k.last().unwrap()) * p1.adjoint()).norm();

    let target = spec.target_subspace();
    Ok(Potential::darboux(DarbouxPotential {
        base: v.clone(),
        spec: spec.clone(),
        lambda_alpha: group.lambda,
        k_alpha: group.k,
        a,
        target,
        diagnostics,
        cache: TransformCache { base_samples, phi_a, k, min_rcond, k_hermitian_defect, boundary_residual },
    }))
}

/// `phi~(x, lambda)`, `phi~'` and `S~` from the base solution and the cache,
/// without integrating against `V~`.
pub fn transformed_phi(transform: &Potential, lambda: f64) -> Result<MatrixSolution> {
    let d = transform
        .as_darboux()
        .ok_or_else(|| Error::contract(format!("expected a darboux potential, got `{}`", transform.kind_name())))?;
    let cache = &d.cache;
    let sol = propagate_samples(&cache.base_samples, c(lambda, 0.0), false);
    let t = cross_gram_from(&cache.phi_a, &sol)?;
    let pa = &cache.phi_a;
    let len = sol.len();
    let mut phi = Vec::with_capacity(len);
    let mut dphi = Vec::with_capacity(len);
    let mut gram = Vec::with_capacity(len);
    for i in 0..len {
        let k = hermitian_part(&cache.k[i]);
        let kt = &k * &t.t[i];
        let p = &sol.phi[i] - &pa.phi[i] * &kt;
        let dp = &sol.dphi[i] - &pa.dphi[i] * &kt - &pa.phi[i] * &k * pa.phi[i].adjoint() * &p;
        gram.push(&sol.gram[i] - t.t[i].adjoint() * &kt);
        phi.push(p);
        dphi.push(dp);
    }
    Ok(MatrixSolution { lambda: sol.lambda, steps: sol.steps, phi, dphi, phidot: None, dphidot: None, gram })
}

/// Upper bound on the `alpha`-th eigenvalue by comparison with `-d^2 + ||V||`.
pub fn group_bound(v: &Potential, alpha: usize) -> f64 {
    (std::f64::consts::PI * alpha as f64).powi(2) + v.sup_norm(257) + 1.0
}

/// Spectrum of `v` with data attached, reaching at least group `alpha`.
pub fn spectrum_through(v: &Potential, alpha: usize, config: &SolverConfig) -> Result<(Spectrum, PotentialSamples)> {
    let samples = PotentialSamples::new(v, config.steps)?;
    let s = compute_spectrum_sampled(v, &samples, group_bound(v, alpha), config)?;
    if s.groups.len() < alpha {
        return Err(Error::contract(format!("group {alpha} requested, only {} found", s.groups.len())));
    }
    Ok((s, samples))
}

/// Spectral data of group `alpha` of `v`.
pub fn group_with_data(v: &Potential, alpha: usize, config: &SolverConfig) -> Result<EigenGroup> {
    let (s, samples) = spectrum_through(v, alpha, config)?;
    attach_group_data_sampled(&samples, &samples.reflected(), s.group(alpha)?)
}

pub fn transform(v: &Potential, spec: &TransformSpec, config: &SolverConfig) -> Result<Potential> {
    let g = group_with_data(v, spec.alpha, config)?;
    build_transform(v, spec, &g)
}

/// Applies `specs` in order, each against the spectral data of the previous stage.
pub fn compose(v: &Potential, specs: &[TransformSpec], config: &SolverConfig) -> Result<Potential> {
    let mut cur = v.clone();
    for (i, spec) in specs.iter().enumerate() {
        cur = transform(&cur, spec, config).map_err(|e| Error::Stage { index: i + 1, source: Box::new(e) })?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{max_abs_diff, max_principal_angle, real_diag};
    use crate::propagator::propagate;
    use std::f64::consts::PI;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    fn u_pi6() -> CMatrix {
        let th = PI / 6.0;
        CMatrix::from_column_slice(2, 1, &[c(th.cos(), 0.0), c(th.sin(), 0.0)])
    }

    #[test]
    fn targets_from_pairs() {
        let b = target_from_pair(&SubspaceBasis::full(2), &(identity(2) * c(1.0 / (2.0 * PI * PI), 0.0))).unwrap();
        assert!(max_abs_diff(&b, &(identity(2) * c(2.0 * PI * PI, 0.0))) < 1e-12);
        let b = target_from_pair(&SubspaceBasis::coordinate(2, 0), &real_diag(&[1.0 / (2.0 * PI * PI)])).unwrap();
        assert!(max_abs_diff(&b, &real_diag(&[2.0 * PI * PI, 0.0])) < 1e-12);
        let u = u_pi6();
        let b = target_from_pair(&SubspaceBasis::from_orthonormal(u.clone()), &real_diag(&[1.0])).unwrap();
        assert!(max_abs_diff(&b, &(&u * u.adjoint())) < 1e-15);
        let err = target_from_pair(&SubspaceBasis::coordinate(2, 0), &real_diag(&[0.0])).unwrap_err();
        assert!(matches!(err, Error::InvalidNorming(_)));
    }

    #[test]
    fn validation_examples() {
        let g = group_with_data(&Potential::zero(2), 1, &cfg()).unwrap();
        let d = validate_target(&TransformSpec::new(1, real_diag(&[2.0 * PI * PI, 8.0 * PI * PI])), &g).unwrap();
        assert_eq!(d.rank, 2);

        let v = Potential::constant_diagonal(vec![0.0, 10.0]);
        let g = group_with_data(&v, 1, &cfg()).unwrap();
        let bad = TransformSpec::new(1, real_diag(&[0.0, 2.0 * PI * PI]));
        match validate_target(&bad, &g).unwrap_err() {
            Error::RejectedTarget { condition, .. } => assert_eq!(condition, TargetCondition::Transversality),
            e => panic!("{e}"),
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = CMatrix::from_column_slice(2, 1, &[c(s, 0.0), c(s, 0.0)]);
        let ok = validate_target(&TransformSpec::new(1, &u * u.adjoint() * c(3.0, 0.0)), &g).unwrap();
        assert!((ok.transversality_sine - s).abs() < 1e-8);

        let rank2 = TransformSpec::new(1, real_diag(&[1.0, 1.0]));
        assert!(matches!(validate_target(&rank2, &g), Err(Error::RejectedTarget { condition: TargetCondition::Rank, .. })));
        let neg = TransformSpec::new(1, real_diag(&[-1.0, 0.0]));
        assert!(matches!(
            validate_target(&neg, &g),
            Err(Error::RejectedTarget { condition: TargetCondition::PositiveSemidefinite, .. })
        ));
        let mut nh = real_diag(&[1.0, 0.0]);
        nh[(0, 1)] = c(0.5, 0.0);
        assert!(matches!(
            validate_target(&TransformSpec::new(1, nh), &g),
            Err(Error::RejectedTarget { condition: TargetCondition::Hermitian, .. })
        ));
    }

    #[test]
    fn identity_transform_is_identity() {
        let v = Potential::random_fourier(2, 3, 2.0, 11);
        let g = group_with_data(&v, 1, &cfg()).unwrap();
        let t = build_transform(&v, &TransformSpec::identity_for(1, g.data().unwrap()), &g).unwrap();
        for i in 0..=20 {
            let x = i as f64 / 20.0 + if i < 20 { 0.013 } else { 0.0 };
            assert!(max_abs_diff(&t.value(x), &v.value(x)) < 1e-12);
        }
        let sol = transformed_phi(&t, 30.0).unwrap();
        let base = propagate(&v, 30.0, cfg().steps, false).unwrap();
        assert!(max_abs_diff(sol.phi_end(), base.phi_end()) < 1e-14);
    }

    /// Scalar free-potential transform at n = 1 changing the norming
    /// constant from 1/(2 pi^2) to 1/b, written out by hand.
    fn free_scalar_closed_form(b: f64, x: f64) -> f64 {
        let a = b - 2.0 * PI * PI;
        let z = PI;
        let s = x / (2.0 * z * z) - (2.0 * z * x).sin() / (4.0 * z * z * z);
        let p = (z * x).sin() / z;
        let dp = (z * x).cos();
        let k = a / (1.0 + a * s);
        -2.0 * (2.0 * p * dp * k - p.powi(4) * k * k)
    }

    #[test]
    fn free_norming_change_matches_closed_form() {
        let v = Potential::zero(2);
        let g = group_with_data(&v, 1, &cfg()).unwrap();
        let t = build_transform(&v, &TransformSpec::new(1, real_diag(&[2.0 * PI * PI, 8.0 * PI * PI])), &g).unwrap();
        for i in 0..=40 {
            let x = (i as f64 + 0.37) / 41.0;
            let m = t.value(x);
            assert!(m[(0, 0)].norm() < 1e-9);
            assert!(m[(0, 1)].norm() < 1e-9);
            let want = free_scalar_closed_form(8.0 * PI * PI, x);
            assert!((m[(1, 1)].re - want).abs() < 1e-7, "x={x}: {} vs {want}", m[(1, 1)].re);
        }
        assert!(t.value(0.0).norm() < 1e-12);
        let d = t.as_darboux().unwrap();
        assert!(d.cache().boundary_residual < 1e-7);
        assert!(d.cache().k_hermitian_defect < 1e-9);
        assert!(d.hermitian_defect_on_grid() < 1e-9);
    }

    #[test]
    fn closed_form_solution_matches_direct() {
        let v = Potential::constant_diagonal(vec![0.0, 10.0]);
        let u = u_pi6();
        let spec = TransformSpec::new(1, &u * u.adjoint() * c(4.0 * PI * PI, 0.0));
        let t = transform(&v, &spec, &cfg()).unwrap();
        for lambda in [-3.0, 7.5, 40.0] {
            let closed = transformed_phi(&t, lambda).unwrap();
            let direct = propagate(&t, lambda, cfg().steps, false).unwrap();
            let err = closed.phi.iter().zip(&direct.phi).map(|(a, b)| max_abs_diff(a, b)).fold(0.0, f64::max);
            assert!(err < 1e-5, "lambda={lambda}: {err}");
        }
        // at the transformed eigenvalue: phi~(1) = phi_a(1) (I - K S_a)(1)
        let d = t.as_darboux().unwrap();
        let at = transformed_phi(&t, d.lambda_alpha()).unwrap();
        let c1 = d.cache();
        let want = c1.phi_a.phi_end() * (identity(2) - hermitian_part(c1.k.last().unwrap()) * c1.phi_a.gram_end());
        assert!(max_abs_diff(at.phi_end(), &want) < 1e-6);
    }

    #[test]
    fn phi_at_other_eigenvalue_is_unchanged() {
        let v = Potential::zero(2);
        let t = transform(&v, &TransformSpec::new(1, real_diag(&[2.0 * PI * PI, 8.0 * PI * PI])), &cfg()).unwrap();
        let l = 4.0 * PI * PI;
        let closed = transformed_phi(&t, l).unwrap();
        let base = propagate(&v, l, cfg().steps, false).unwrap();
        assert!(max_abs_diff(closed.phi_end(), base.phi_end()) < 1e-6);
    }

    #[test]
    fn rotation_retargets_eigenspace() {
        let v = Potential::constant_diagonal(vec![0.0, 10.0]);
        let u = u_pi6();
        let spec = TransformSpec::new(1, &u * u.adjoint() * c(4.0 * PI * PI, 0.0));
        let t = transform(&v, &spec, &cfg()).unwrap();
        let off = t.value(0.4);
        assert!(off[(0, 1)].norm() > 1e-3);
        let g = group_with_data(&t, 1, &cfg()).unwrap();
        assert!(max_principal_angle(&g.e, &SubspaceBasis::from_orthonormal(u)) < 1e-4);
        assert!(max_abs_diff(&g.data().unwrap().b_alpha, &spec.b) / spec.b.norm() < 1e-4);
    }

    #[test]
    fn composition() {
        let v = Potential::zero(2);
        assert!(max_abs_diff(&compose(&v, &[], &cfg()).unwrap().value(0.3), &v.value(0.3)) == 0.0);
        let spec = TransformSpec::new(1, real_diag(&[2.0 * PI * PI, 8.0 * PI * PI]));
        let one = compose(&v, std::slice::from_ref(&spec), &cfg()).unwrap();
        assert_eq!(one.depth(), 1);
        let back = TransformSpec::new(1, real_diag(&[2.0 * PI * PI, 2.0 * PI * PI]));
        let two = compose(&v, &[spec, back], &cfg()).unwrap();
        assert_eq!(two.depth(), 2);
        let err = (0..=100).map(|i| two.value(i as f64 / 100.0).norm()).fold(0.0, f64::max);
        assert!(err < 1e-4, "round trip {err}");

        let bad = TransformSpec::new(1, real_diag(&[1.0, 0.0]));
        match compose(&v, &[bad], &cfg()).unwrap_err() {
            Error::Stage { index: 1, source } => assert!(matches!(*source, Error::RejectedTarget { .. })),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let u = u_pi6();
        let spec = TransformSpec::new(2, &u * u.adjoint() * c(3.0, 0.0));
        let text = serde_json::to_string(&TransformSpec::list_to_json(std::slice::from_ref(&spec))).unwrap();
        assert_eq!(TransformSpec::list_from_json_str(&text).unwrap(), vec![spec.clone()]);
        let single = serde_json::to_string(&spec.to_json()).unwrap();
        assert_eq!(TransformSpec::list_from_json_str(&single).unwrap(), vec![spec]);
        let err = TransformSpec::list_from_json_str(r#"[{"alpha": 0, "B": [[1,0]]}]"#).unwrap_err();
        assert!(err.to_string().contains("[0].transform.alpha"));
    }
}
