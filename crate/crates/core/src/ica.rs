//! Linear signature model `x = S·e` fitted by symmetric FastICA.
//!
//! Observations are curve cross-sections `x(day) ∈ R^p`. The expression
//! coefficients `e ∈ R^c` are the independent quantities and the columns of
//! `S` are the signatures. Projection uses the pseudo-inverse of `S`, which
//! is the whitening transform followed by the orthogonal unmixing rotation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::curve::CurveSet;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, SymmetricEigen};
use crate::math::{fabs, sqrt, tanh};
use crate::rng::Rng;

/// `p × m` matrix of curve cross-sections with the provenance of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Matrix,
    variables: Vec<String>,
    meta: Vec<(String, i64)>,
}

impl SampleMatrix {
    pub fn new(data: Matrix, variables: Vec<String>, meta: Vec<(String, i64)>) -> Result<Self> {
        if variables.len() != data.rows() {
            return Err(Error::DimensionMismatch {
                what: "sample matrix variables",
                expected: data.rows(),
                found: variables.len(),
            });
        }
        if meta.len() != data.cols() {
            return Err(Error::DimensionMismatch {
                what: "sample matrix columns",
                expected: data.cols(),
                found: meta.len(),
            });
        }
        if data.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("sample matrix has non-finite entries".into()));
        }
        Ok(Self {
            data,
            variables,
            meta,
        })
    }

    /// Columns with synthetic provenance, for matrices that did not come
    /// from curves.
    pub fn from_matrix(data: Matrix) -> Result<Self> {
        let variables = (0..data.rows()).map(|i| alloc::format!("v{i:04}")).collect();
        let meta = (0..data.cols()).map(|j| (String::new(), j as i64)).collect();
        Self::new(data, variables, meta)
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn meta(&self) -> &[(String, i64)] {
        &self.meta
    }

    pub fn variable_count(&self) -> usize {
        self.data.rows()
    }

    pub fn sample_count(&self) -> usize {
        self.data.cols()
    }
}

/// Days sampled for one subject: `start + r, start + r + stride, …` inside the
/// grid, with `r` uniform in `[0, stride)`.
pub fn sample_days(rng: &mut Rng, start: i64, len: usize, stride: usize) -> Vec<i64> {
    let offset = rng.below(stride as u64) as usize;
    (offset..len).step_by(stride).map(|i| start + i as i64).collect()
}

/// Cross-sections of every subject's curves at a strided, randomly offset
/// set of days, concatenated across the cohort.
pub fn sample_curves(cohort: &[CurveSet], stride_days: usize, seed: u64) -> Result<SampleMatrix> {
    let mut sampler = CurveSampler::new(stride_days, seed)?;
    for set in cohort {
        sampler.push(set)?;
    }
    sampler.finish()
}

/// Incremental form of [`sample_curves`], for cohorts too large to hold
/// every subject's curves at once. Subjects must be pushed in cohort order.
#[derive(Debug, Clone)]
pub struct CurveSampler {
    stride_days: usize,
    rng: Rng,
    variables: Option<Vec<String>>,
    columns: Vec<Vec<f64>>,
    meta: Vec<(String, i64)>,
}

impl CurveSampler {
    pub fn new(stride_days: usize, seed: u64) -> Result<Self> {
        if stride_days == 0 {
            return Err(Error::InvalidConfig("stride_days must be at least 1".into()));
        }
        Ok(Self {
            stride_days,
            rng: Rng::new(seed),
            variables: None,
            columns: Vec::new(),
            meta: Vec::new(),
        })
    }

    pub fn push(&mut self, set: &CurveSet) -> Result<()> {
        let variables = self
            .variables
            .get_or_insert_with(|| set.variables().map(String::from).collect());
        if set.len() != variables.len() || !set.variables().eq(variables.iter().map(String::as_str)) {
            return Err(Error::VocabularyMismatch(alloc::format!(
                "subject `{}` has a different variable set",
                set.subject_id()
            )));
        }
        let grid = set.grid();
        for day in sample_days(&mut self.rng, grid.start(), grid.len(), self.stride_days) {
            self.columns.push(set.cross_section(day)?);
            self.meta.push((String::from(set.subject_id()), day));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.columns.len()
    }

    pub fn finish(self) -> Result<SampleMatrix> {
        let variables = self.variables.ok_or(Error::EmptyCohort)?;
        let p = variables.len();
        let columns = self.columns;
        let data = Matrix::from_fn(p, columns.len(), |i, j| columns[j][i]);
        SampleMatrix::new(data, variables, self.meta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaConfig {
    pub components: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    /// Scale each variable to unit variance before whitening.
    pub standardize: bool,
}

impl IcaConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        Self {
            components,
            seed,
            tol: 1e-4,
            max_iter: 200,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceInfo {
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
}

/// Fitted signatures and everything needed to project new cross-sections.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureModel {
    variables: Vec<String>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    whitening: Matrix,
    signatures: Matrix,
    projector: Matrix,
    convergence: ConvergenceInfo,
}

/// Tolerance on `projector · S = I`.
pub const PROJECTOR_IDENTITY_TOL: f64 = 1e-8;

impl SignatureModel {
    /// Validates shapes, finiteness and the projector identity.
    pub fn from_parts(
        variables: Vec<String>,
        mean: Vec<f64>,
        scale: Vec<f64>,
        whitening: Matrix,
        signatures: Matrix,
        projector: Matrix,
        convergence: ConvergenceInfo,
    ) -> Result<Self> {
        let p = variables.len();
        let c = signatures.cols();
        let check = |what, expected, found| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected,
                    found,
                })
            }
        };
        check("mean", p, mean.len())?;
        check("scale", p, scale.len())?;
        check("signature rows", p, signatures.rows())?;
        check("whitening rows", c, whitening.rows())?;
        check("whitening cols", p, whitening.cols())?;
        check("projector rows", c, projector.rows())?;
        check("projector cols", p, projector.cols())?;
        let all = mean
            .iter()
            .chain(&scale)
            .chain(whitening.as_slice())
            .chain(signatures.as_slice())
            .chain(projector.as_slice());
        if all.into_iter().any(|v| !v.is_finite()) || scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Numerical("signature model has invalid entries".into()));
        }
        let residual = projector.matmul(&signatures).max_abs_diff(&Matrix::identity(c));
        if residual > PROJECTOR_IDENTITY_TOL {
            return Err(Error::Numerical(alloc::format!(
                "projector·S deviates from identity by {residual:e}"
            )));
        }
        Ok(Self {
            variables,
            mean,
            scale,
            whitening,
            signatures,
            projector,
            convergence,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn whitening(&self) -> &Matrix {
        &self.whitening
    }

    /// `p × c`; unit-norm columns with a positive largest-magnitude entry.
    pub fn signatures(&self) -> &Matrix {
        &self.signatures
    }

    pub fn projector(&self) -> &Matrix {
        &self.projector
    }

    pub fn convergence(&self) -> ConvergenceInfo {
        self.convergence
    }

    pub fn components(&self) -> usize {
        self.signatures.cols()
    }

    pub fn variable_count(&self) -> usize {
        self.variables.len()
    }

    /// `projector · (x − mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.variables.len() {
            return Err(Error::DimensionMismatch {
                what: "cross-section",
                expected: self.variables.len(),
                found: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self.projector.mul_vec(&centered))
    }

    /// Expressions for every column of a `p × m` matrix.
    pub fn unmix(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.variables.len() {
            return Err(Error::DimensionMismatch {
                what: "sample rows",
                expected: self.variables.len(),
                found: x.rows(),
            });
        }
        let centered = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - self.mean[i]);
        Ok(self.projector.matmul(&centered))
    }

    /// `mean + S·e`.
    pub fn reconstruct(&self, expression: &[f64]) -> Vec<f64> {
        let mut x = self.signatures.mul_vec(expression);
        for (xi, m) in x.iter_mut().zip(&self.mean) {
            *xi += m;
        }
        x
    }
}

pub fn fit_ica(samples: &SampleMatrix, config: &IcaConfig) -> Result<SignatureModel> {
    let x = samples.data();
    let (p, m) = (x.rows(), x.cols());
    let c = config.components;
    if p < 2 {
        return Err(Error::InvalidConfig("ICA needs at least two variables".into()));
    }
    if c == 0 || c > p.min(m) {
        return Err(Error::InvalidConfig(alloc::format!(
            "component count {c} must be in 1..={}",
            p.min(m)
        )));
    }

    let mean: Vec<f64> = (0..p).map(|i| x.row(i).iter().sum::<f64>() / m as f64).collect();
    let mut centered = Matrix::from_fn(p, m, |i, j| x[(i, j)] - mean[i]);
    let mut scale = vec![1.0; p];
    if config.standardize {
        for (i, s) in scale.iter_mut().enumerate() {
            let var = centered.row(i).iter().map(|v| v * v).sum::<f64>() / m as f64;
            if var > 0.0 {
                *s = sqrt(var);
                centered.row_mut(i).iter_mut().for_each(|v| *v /= *s);
            }
        }
    }

    let mut cov = centered.matmul_t(&centered);
    cov.scale(1.0 / m as f64);
    let eig = SymmetricEigen::new(&cov);
    let top = eig.values[0].max(0.0);
    let rank = eig
        .values
        .iter()
        .take_while(|&&v| top > 0.0 && v > top * 1e-12)
        .count();
    if c > rank {
        return Err(Error::RankDeficient { requested: c, rank });
    }

    // whitening: K = Λ_c^{-1/2} U_cᵀ, dewhitening: K⁺ = U_c Λ_c^{1/2}
    let whitening = Matrix::from_fn(c, p, |k, i| eig.vectors[(i, k)] / sqrt(eig.values[k]));
    let dewhitening = Matrix::from_fn(p, c, |i, k| eig.vectors[(i, k)] * sqrt(eig.values[k]));
    let z = whitening.matmul(&centered);

    let mut rng = Rng::new(config.seed);
    let mut w = symmetric_decorrelation(&Matrix::from_fn(c, c, |_, _| rng.normal()));
    let mut info = ConvergenceInfo {
        iterations: 0,
        final_delta: f64::INFINITY,
        converged: false,
    };
    for iter in 1..=config.max_iter {
        let w_new = symmetric_decorrelation(&fixed_point_update(&w, &z));
        let delta = (0..c)
            .map(|i| fabs(fabs(dot(w_new.row(i), w.row(i))) - 1.0))
            .fold(0.0, f64::max);
        w = w_new;
        info.iterations = iter;
        info.final_delta = delta;
        if delta < config.tol {
            info.converged = true;
            break;
        }
    }

    // unmixing W·K (c × p) and mixing K⁺·Wᵀ (p × c), undoing standardization
    let mut projector = w.matmul(&whitening);
    let mut signatures = dewhitening.matmul_t(&w);
    for i in 0..p {
        for k in 0..c {
            projector[(k, i)] /= scale[i];
            signatures[(i, k)] *= scale[i];
        }
    }
    canonicalize(&mut signatures, &mut projector);

    let variables = samples.variables().to_vec();
    SignatureModel::from_parts(variables, mean, scale, whitening, signatures, projector, info)
}

/// `W⁺ = E[g(WZ) Zᵀ] − diag(E[g'(WZ)]) W` with `g = tanh`.
fn fixed_point_update(w: &Matrix, z: &Matrix) -> Matrix {
    let (c, m) = (z.rows(), z.cols());
    let mut y = w.matmul(z);
    let mut mean_deriv = vec![0.0; c];
    for (k, md) in mean_deriv.iter_mut().enumerate() {
        let row = y.row_mut(k);
        let mut acc = 0.0;
        for v in row.iter_mut() {
            let g = tanh(*v);
            *v = g;
            acc += 1.0 - g * g;
        }
        *md = acc / m as f64;
    }
    let mut next = y.matmul_t(z);
    next.scale(1.0 / m as f64);
    for k in 0..c {
        for j in 0..c {
            next[(k, j)] -= mean_deriv[k] * w[(k, j)];
        }
    }
    next
}

/// `(W Wᵀ)^{-1/2} W`.
pub fn symmetric_decorrelation(w: &Matrix) -> Matrix {
    let gram = w.matmul_t(w);
    let eig = SymmetricEigen::new(&gram);
    let n = gram.rows();
    let inv_sqrt = Matrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| eig.vectors[(i, k)] * eig.vectors[(j, k)] / sqrt(eig.values[k].max(1e-300)))
            .sum()
    });
    inv_sqrt.matmul(w)
}

/// Unit-norm signature columns, largest-magnitude entry positive; projector
/// rows rescaled to keep `projector · S = I`.
fn canonicalize(signatures: &mut Matrix, projector: &mut Matrix) {
    let (p, c) = (signatures.rows(), signatures.cols());
    for k in 0..c {
        let col = signatures.column(k);
        let norm = sqrt(dot(&col, &col));
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if fabs(v) > fabs(best) { v } else { best });
        let factor = if pivot < 0.0 { -norm } else { norm };
        if factor == 0.0 {
            continue;
        }
        for i in 0..p {
            signatures[(i, k)] /= factor;
            projector[(k, i)] *= factor;
        }
    }
}

/// A subject's signature expressions on a list of days.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionSeries {
    pub subject_id: String,
    pub samples: Vec<(i64, Vec<f64>)>,
}

pub fn project_expressions(
    model: &SignatureModel,
    curves: &CurveSet,
    days: &[i64],
) -> Result<ExpressionSeries> {
    if curves.len() != model.variable_count()
        || !curves.variables().eq(model.variables().iter().map(String::as_str))
    {
        return Err(Error::VocabularyMismatch(alloc::format!(
            "curves for `{}` do not match the model's {} variables",
            curves.subject_id(),
            model.variable_count()
        )));
    }
    let samples = days
        .iter()
        .map(|&day| Ok((day, model.project(&curves.cross_section(day)?)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpressionSeries {
        subject_id: String::from(curves.subject_id()),
        samples,
    })
}

/// Pearson correlation; zero when either side has no variance.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / sqrt(saa * sbb)
    }
}

/// Result of pairing recovered components with reference components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMatch {
    /// `(reference row, recovered row, |corr|)`, one per reference row.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl ComponentMatch {
    pub fn mean_abs_corr(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum::<f64>() / self.pairs.len() as f64
    }

    pub fn min_abs_corr(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).fold(f64::INFINITY, f64::min)
    }
}

/// Greedy one-to-one matching of rows by absolute correlation, which absorbs
/// the permutation, sign and scale ambiguity of ICA. `recovered` must have at
/// least as many rows as `reference`.
pub fn match_components(reference: &Matrix, recovered: &Matrix) -> ComponentMatch {
    assert_eq!(reference.cols(), recovered.cols(), "component series length");
    assert!(recovered.rows() >= reference.rows());
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..reference.rows() {
        for j in 0..recovered.rows() {
            cands.push((fabs(correlation(reference.row(i), recovered.row(j))), i, j));
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_ref = vec![false; reference.rows()];
    let mut used_rec = vec![false; recovered.rows()];
    let mut pairs = Vec::new();
    for (corr, i, j) in cands {
        if !used_ref[i] && !used_rec[j] {
            used_ref[i] = true;
            used_rec[j] = true;
            pairs.push((i, j, corr));
        }
    }
    pairs.sort_by_key(|p| p.0);
    ComponentMatch { pairs }
}
