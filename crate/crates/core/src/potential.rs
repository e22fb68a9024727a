//! Hermitian matrix potentials `V(x)` on `[0, 1]`.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::darboux::DarbouxPotential;
use crate::error::{Error, Result};
use crate::matrix::{c, hermitian_part, is_hermitian, real_diag, zeros, CMatrix, C64};

pub const FILE_FORMAT: u64 = 1;

/// Samples used when a composed potential is materialised to a grid.
pub const MATERIALIZE_NODES: usize = 4097;

/// Anything that can be evaluated pointwise as an `N x N` matrix on `[0, 1]`.
///
/// `value` may assume `0 <= x <= 1`.
pub trait MatrixPotential: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: f64) -> CMatrix;
}

#[derive(Debug, Clone)]
pub struct Potential {
    n: usize,
    kind: PotentialKind,
}

#[derive(Debug, Clone)]
pub enum PotentialKind {
    Zero,
    ConstantDiagonal(Vec<f64>),
    /// `V(x) = sum_j C_j cos(j pi x)`.
    Fourier(Vec<CMatrix>),
    Grid(GridPotential),
    Darboux(Arc<DarbouxPotential>),
}

impl Potential {
    pub fn zero(n: usize) -> Self {
        assert!(n > 0, "potential dimension must be positive");
        Potential { n, kind: PotentialKind::Zero }
    }

    pub fn constant_diagonal(diag: Vec<f64>) -> Self {
        assert!(!diag.is_empty(), "potential dimension must be positive");
        Potential { n: diag.len(), kind: PotentialKind::ConstantDiagonal(diag) }
    }

    pub fn fourier(coeffs: Vec<CMatrix>) -> Result<Self> {
        let n = coeffs.first().map(|m| m.nrows()).ok_or_else(|| Error::contract("fourier potential needs at least one mode"))?;
        for (j, m) in coeffs.iter().enumerate() {
            if m.shape() != (n, n) || !is_hermitian(m, 1e-12) {
                return Err(Error::contract(format!("fourier mode {j} is not a Hermitian {n}x{n} matrix")));
            }
        }
        let coeffs = coeffs.iter().map(hermitian_part).collect();
        Ok(Potential { n, kind: PotentialKind::Fourier(coeffs) })
    }

    /// Seeded random cosine series with Hermitian coefficients of size
    /// `amplitude / (1 + j)` for mode `j`.
    pub fn random_fourier(n: usize, modes: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..modes.max(1))
            .map(|j| {
                let scale = amplitude / (1.0 + j as f64);
                let m = CMatrix::from_fn(n, n, |_, _| {
                    c(rng.gen_range(-1.0..1.0) * scale, rng.gen_range(-1.0..1.0) * scale)
                });
                hermitian_part(&m)
            })
            .collect();
        Potential { n, kind: PotentialKind::Fourier(coeffs) }
    }

    pub fn grid(xs: Vec<f64>, values: Vec<CMatrix>) -> Result<Self> {
        let g = GridPotential::new(xs, values, None)?;
        Ok(Potential { n: g.dim(), kind: PotentialKind::Grid(g) })
    }

    pub(crate) fn darboux(t: DarbouxPotential) -> Self {
        Potential { n: t.dim(), kind: PotentialKind::Darboux(Arc::new(t)) }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            PotentialKind::Zero => "zero",
            PotentialKind::ConstantDiagonal(_) => "constant_diagonal",
            PotentialKind::Fourier(_) => "fourier",
            PotentialKind::Grid(_) => "grid",
            PotentialKind::Darboux(_) => "darboux",
        }
    }

    pub fn as_darboux(&self) -> Option<&DarbouxPotential> {
        match &self.kind {
            PotentialKind::Darboux(d) => Some(d),
            _ => None,
        }
    }

    /// Number of nested isospectral transforms.
    pub fn depth(&self) -> usize {
        match &self.kind {
            PotentialKind::Darboux(d) => 1 + d.base().depth(),
            _ => 0,
        }
    }

    pub fn eval(&self, x: f64) -> Result<CMatrix> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { x });
        }
        Ok(self.value(x))
    }

    pub fn reflect(&self) -> ReflectedPotential<'_> {
        ReflectedPotential { source: self }
    }

    /// `int_0^1 V(t) dt` by composite Simpson.
    pub fn integral(&self, nodes: usize) -> CMatrix {
        let m = nodes.max(2) / 2 * 2;
        let h = 1.0 / m as f64;
        let mut acc = zeros(self.n, self.n);
        for i in 0..=m {
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += self.value(i as f64 * h) * c(w * h / 3.0, 0.0);
        }
        acc
    }

    /// Largest `||V(x)||_F` over a uniform sample.
    pub fn sup_norm(&self, nodes: usize) -> f64 {
        (0..nodes).map(|i| self.value(i as f64 / (nodes - 1) as f64).norm()).fold(0.0, f64::max)
    }

    // ---- serialization ----

    pub fn to_json(&self) -> Value {
        let mut obj = json!({ "format": FILE_FORMAT, "n": self.n, "kind": self.kind_name() });
        let map = obj.as_object_mut().expect("object literal");
        match &self.kind {
            PotentialKind::Zero => {}
            PotentialKind::ConstantDiagonal(d) => {
                map.insert("diag".into(), json!(d));
            }
            PotentialKind::Fourier(cs) => {
                map.insert("coeffs".into(), Value::Array(cs.iter().map(matrix_to_json).collect()));
            }
            PotentialKind::Grid(g) => {
                g.write_fields(map);
            }
            PotentialKind::Darboux(_) => {
                let g = self.materialize(MATERIALIZE_NODES);
                map.insert("kind".into(), json!("grid"));
                map.insert("materialized_from".into(), json!("darboux"));
                map.insert("depth".into(), json!(self.depth()));
                g.write_fields(map);
            }
        }
        obj
    }

    /// Samples this potential on `nodes` uniform points.
    pub fn materialize(&self, nodes: usize) -> GridPotential {
        let xs: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
        let values = xs.iter().map(|&x| self.value(x)).collect();
        let from = match self.kind {
            PotentialKind::Darboux(_) => Some("darboux".to_string()),
            _ => None,
        };
        GridPotential::new(xs, values, from).expect("uniform samples form a valid grid")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("potential json serializes")
    }

    /// Hex SHA-256 of the compact file representation.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_json_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("potential json serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse { context, message } => {
                Error::Parse { context: format!("{}: {context}", path.display()), message }
            }
            e => e,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        Self::from_json(&v)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::parse("<root>", "expected a JSON object"))?;
        let format = obj.get("format").and_then(Value::as_u64).ok_or_else(|| Error::parse("format", "missing or not an integer"))?;
        if format != FILE_FORMAT {
            return Err(Error::parse("format", format!("unsupported version {format}")));
        }
        let n = obj
            .get("n")
            .and_then(Value::as_u64)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::parse("n", "missing or not a positive integer"))? as usize;
        let kind = obj.get("kind").and_then(Value::as_str).ok_or_else(|| Error::parse("kind", "missing or not a string"))?;
        match kind {
            "zero" => Ok(Potential::zero(n)),
            "constant_diagonal" => {
                let d = obj.get("diag").and_then(Value::as_array).ok_or_else(|| Error::parse("diag", "missing array"))?;
                let diag = d
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x.as_f64().ok_or_else(|| Error::parse(format!("diag[{i}]"), "not a number")))
                    .collect::<Result<Vec<_>>>()?;
                if diag.len() != n {
                    return Err(Error::parse("diag", format!("expected {n} entries, got {}", diag.len())));
                }
                Ok(Potential::constant_diagonal(diag))
            }
            "fourier" => {
                let cs = obj.get("coeffs").and_then(Value::as_array).ok_or_else(|| Error::parse("coeffs", "missing array"))?;
                let coeffs = cs
                    .iter()
                    .enumerate()
                    .map(|(j, m)| matrix_from_json(m, n, &format!("coeffs[{j}]")))
                    .collect::<Result<Vec<_>>>()?;
                for (j, m) in coeffs.iter().enumerate() {
                    if !is_hermitian(m, 1e-10) {
                        return Err(Error::parse(format!("coeffs[{j}]"), "matrix is not Hermitian"));
                    }
                }
                Potential::fourier(coeffs)
            }
            "grid" => {
                let xs = obj.get("xs").and_then(Value::as_array).ok_or_else(|| Error::parse("xs", "missing array"))?;
                let xs = xs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x.as_f64().ok_or_else(|| Error::parse(format!("xs[{i}]"), "not a number")))
                    .collect::<Result<Vec<_>>>()?;
                let vals = obj.get("values").and_then(Value::as_array).ok_or_else(|| Error::parse("values", "missing array"))?;
                let values = vals
                    .iter()
                    .enumerate()
                    .map(|(i, m)| matrix_from_json(m, n, &format!("values[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                for (i, m) in values.iter().enumerate() {
                    if !is_hermitian(m, 1e-10) {
                        return Err(Error::parse(format!("values[{i}]"), "matrix is not Hermitian"));
                    }
                }
                let from = obj.get("materialized_from").and_then(Value::as_str).map(str::to_string);
                let g = GridPotential::new(xs, values, from).map_err(|e| Error::parse("xs", e.to_string()))?;
                Ok(Potential { n, kind: PotentialKind::Grid(g) })
            }
            "random_fourier" => {
                let int = |key: &str| obj.get(key).and_then(Value::as_u64).ok_or_else(|| Error::parse(key, "missing or not a non-negative integer"));
                let modes = int("modes")? as usize;
                let seed = int("seed")?;
                let amplitude = obj
                    .get("amplitude")
                    .and_then(Value::as_f64)
                    .filter(|a| a.is_finite())
                    .ok_or_else(|| Error::parse("amplitude", "missing or not a number"))?;
                if modes == 0 {
                    return Err(Error::parse("modes", "must be at least 1"));
                }
                Ok(Potential::random_fourier(n, modes, amplitude, seed))
            }
            other => Err(Error::parse("kind", format!("unknown potential kind `{other}`"))),
        }
    }
}

impl MatrixPotential for Potential {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: f64) -> CMatrix {
        match &self.kind {
            PotentialKind::Zero => zeros(self.n, self.n),
            PotentialKind::ConstantDiagonal(d) => real_diag(d),
            PotentialKind::Fourier(cs) => {
                let mut acc = zeros(self.n, self.n);
                for (j, m) in cs.iter().enumerate() {
                    acc += m * c((j as f64 * std::f64::consts::PI * x).cos(), 0.0);
                }
                acc
            }
            PotentialKind::Grid(g) => g.value(x),
            PotentialKind::Darboux(d) => d.value(x),
        }
    }
}

/// `V#(x) = V(1 - x)`.
#[derive(Debug, Clone, Copy)]
pub struct ReflectedPotential<'a> {
    source: &'a Potential,
}

impl ReflectedPotential<'_> {
    pub fn source(&self) -> &Potential {
        self.source
    }

    pub fn eval(&self, x: f64) -> Result<CMatrix> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { x });
        }
        Ok(self.value(x))
    }
}

impl MatrixPotential for ReflectedPotential<'_> {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn value(&self, x: f64) -> CMatrix {
        self.source.value(1.0 - x)
    }
}

/// Sampled potential with cubic Hermite interpolation between nodes.
#[derive(Debug, Clone)]
pub struct GridPotential {
    xs: Vec<f64>,
    values: Vec<CMatrix>,
    slopes: Vec<CMatrix>,
    materialized_from: Option<String>,
}

impl GridPotential {
    pub fn new(xs: Vec<f64>, values: Vec<CMatrix>, materialized_from: Option<String>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != values.len() {
            return Err(Error::contract(format!(
                "grid needs >= 2 nodes and matching values (xs {}, values {})",
                xs.len(),
                values.len()
            )));
        }
        if xs[0] != 0.0 || *xs.last().unwrap() != 1.0 {
            return Err(Error::contract("grid must start at 0 and end at 1"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("grid nodes must be strictly increasing"));
        }
        let n = values[0].nrows();
        if values.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::contract("grid values must share one square shape"));
        }
        let values: Vec<CMatrix> = values.iter().map(hermitian_part).collect();
        let slopes = fd_slopes(&xs, &values);
        Ok(GridPotential { xs, values, slopes, materialized_from })
    }

    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[CMatrix] {
        &self.values
    }

    pub fn materialized_from(&self) -> Option<&str> {
        self.materialized_from.as_deref()
    }

    pub fn value(&self, x: f64) -> CMatrix {
        let i = match self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => return self.values[i].clone(),
            Err(i) => i.clamp(1, self.xs.len() - 1) - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        hermitian_part(&hermite(
            t,
            h,
            &self.values[i],
            &self.slopes[i],
            &self.values[i + 1],
            &self.slopes[i + 1],
        ))
    }

    fn write_fields(&self, map: &mut serde_json::Map<String, Value>) {
        map.insert("xs".into(), json!(self.xs));
        map.insert("values".into(), Value::Array(self.values.iter().map(matrix_to_json).collect()));
        if let Some(from) = &self.materialized_from {
            map.entry("materialized_from").or_insert_with(|| json!(from));
        }
    }
}

impl MatrixPotential for GridPotential {
    fn dim(&self) -> usize {
        GridPotential::dim(self)
    }

    fn value(&self, x: f64) -> CMatrix {
        GridPotential::value(self, x)
    }
}

/// Cubic Hermite interpolant on `[x_i, x_i + h]` at local coordinate `t`.
pub(crate) fn hermite(t: f64, h: f64, y0: &CMatrix, d0: &CMatrix, y1: &CMatrix, d1: &CMatrix) -> CMatrix {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    y0 * c(h00, 0.0) + d0 * c(h10 * h, 0.0) + y1 * c(h01, 0.0) + d1 * c(h11 * h, 0.0)
}

/// Node slopes: fourth-order stencils on uniform grids with at least five
/// nodes, second-order three-point weights otherwise.
fn fd_slopes(xs: &[f64], ys: &[CMatrix]) -> Vec<CMatrix> {
    let m = xs.len();
    let h = xs[1] - xs[0];
    let uniform = xs.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12);
    let lin = |ws: &[(usize, f64)], scale: f64| -> CMatrix {
        let mut acc = zeros(ys[0].nrows(), ys[0].ncols());
        for &(k, w) in ws {
            acc += &ys[k] * c(w * scale, 0.0);
        }
        acc
    };
    if uniform && m >= 5 {
        let s = 1.0 / (12.0 * h);
        (0..m)
            .map(|i| {
                if i >= 2 && i + 2 < m {
                    lin(&[(i - 2, 1.0), (i - 1, -8.0), (i + 1, 8.0), (i + 2, -1.0)], s)
                } else if i < 2 {
                    // one-sided five-point stencils
                    let b = 0;
                    let w: [f64; 5] = if i == 0 {
                        [-25.0, 48.0, -36.0, 16.0, -3.0]
                    } else {
                        [-3.0, -10.0, 18.0, -6.0, 1.0]
                    };
                    lin(&(0..5).map(|k| (b + k, w[k])).collect::<Vec<_>>(), s)
                } else {
                    let b = m - 5;
                    let w: [f64; 5] = if i == m - 1 {
                        [3.0, -16.0, 36.0, -48.0, 25.0]
                    } else {
                        [-1.0, 6.0, -18.0, 10.0, 3.0]
                    };
                    lin(&(0..5).map(|k| (b + k, w[k])).collect::<Vec<_>>(), s)
                }
            })
            .collect()
    } else if m == 2 {
        let d = (&ys[1] - &ys[0]) * c(1.0 / (xs[1] - xs[0]), 0.0);
        vec![d.clone(), d]
    } else {
        (0..m)
            .map(|i| {
                let (a, b, cc) = if i == 0 {
                    (0, 1, 2)
                } else if i == m - 1 {
                    (m - 3, m - 2, m - 1)
                } else {
                    (i - 1, i, i + 1)
                };
                let x = xs[i];
                let (xa, xb, xc) = (xs[a], xs[b], xs[cc]);
                // derivative of the Lagrange quadratic through a, b, c at x
                let wa = (2.0 * x - xb - xc) / ((xa - xb) * (xa - xc));
                let wb = (2.0 * x - xa - xc) / ((xb - xa) * (xb - xc));
                let wc = (2.0 * x - xa - xb) / ((xc - xa) * (xc - xb));
                lin(&[(a, wa), (b, wb), (cc, wc)], 1.0)
            })
            .collect()
    }
}

/// Row-major list of `[re, im]` pairs.
pub fn matrix_to_json(m: &CMatrix) -> Value {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            out.push(json!([z.re, z.im]));
        }
    }
    Value::Array(out)
}

/// Accepts either a flat row-major list of `n*n` `[re, im]` pairs or a
/// nested list of `n` rows.
pub fn matrix_from_json(v: &Value, n: usize, context: &str) -> Result<CMatrix> {
    let arr = v.as_array().ok_or_else(|| Error::parse(context, "expected an array"))?;
    let flat: Vec<&Value> = if arr.len() == n && n > 1 && arr.iter().all(|r| r.as_array().is_some_and(|r| r.len() == n && r.iter().all(Value::is_array))) {
        arr.iter().flat_map(|r| r.as_array().unwrap().iter()).collect()
    } else {
        arr.iter().collect()
    };
    if flat.len() != n * n {
        return Err(Error::parse(context, format!("expected {} complex entries, got {}", n * n, flat.len())));
    }
    let mut m = zeros(n, n);
    for (k, z) in flat.iter().enumerate() {
        m[(k / n, k % n)] = complex_from_json(z, &format!("{context}[{k}]"))?;
    }
    Ok(m)
}

fn complex_from_json(v: &Value, context: &str) -> Result<C64> {
    match v {
        Value::Number(x) => Ok(c(x.as_f64().unwrap_or(f64::NAN), 0.0)),
        Value::Array(p) if p.len() == 2 => {
            let re = p[0].as_f64().ok_or_else(|| Error::parse(context, "real part is not a number"))?;
            let im = p[1].as_f64().ok_or_else(|| Error::parse(context, "imaginary part is not a number"))?;
            Ok(c(re, im))
        }
        _ => Err(Error::parse(context, "expected [re, im]")),
    }
}
