//! Bounded Levenberg–Marquardt least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which datasets a parameter applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Shared,
    Dataset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub initial: f64,
    #[serde(with = "bound")]
    pub lower: f64,
    #[serde(with = "bound")]
    pub upper: f64,
    pub locked: bool,
    pub scope: Scope,
    /// Where a locked value came from.
    pub provenance: Option<String>,
    /// Typical magnitude, used to size finite-difference steps.
    pub scale: f64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, initial: f64) -> Self {
        Self {
            name: name.into(),
            initial,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            locked: false,
            scope: Scope::Shared,
            provenance: None,
            scale: initial.abs().max(1e-3),
        }
    }

    pub fn bounded(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn locked(mut self, provenance: impl Into<String>) -> Self {
        self.locked = true;
        self.provenance = Some(provenance.into());
        self
    }

    pub fn scoped(mut self, tag: impl Into<String>) -> Self {
        self.scope = Scope::Dataset(tag.into());
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn validate(&self) -> Result<()> {
        if !self.initial.is_finite() {
            return Err(Error::Fit(format!("parameter {} has non-finite initial value", self.name)));
        }
        if self.lower > self.upper || self.initial < self.lower || self.initial > self.upper {
            return Err(Error::Fit(format!(
                "parameter {} initial value {} outside bounds [{}, {}]",
                self.name, self.initial, self.lower, self.upper
            )));
        }
        Ok(())
    }
}

type ResidualFn<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a;
type JacobianFn<'a> = dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Sync + 'a;

/// Parameters plus a residual function of the full parameter vector.
pub struct FitProblem<'a> {
    pub params: Vec<Parameter>,
    residual: Box<ResidualFn<'a>>,
    jacobian: Option<Box<JacobianFn<'a>>>,
    /// Residual index ranges per dataset, for per-dataset reporting.
    pub datasets: Vec<(String, std::ops::Range<usize>)>,
}

impl<'a> FitProblem<'a> {
    pub fn new(params: Vec<Parameter>, residual: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a) -> Self {
        Self { params, residual: Box::new(residual), jacobian: None, datasets: Vec::new() }
    }

    /// Analytic Jacobian: rows are residuals, columns all parameters.
    pub fn with_jacobian(mut self, jac: impl Fn(&[f64]) -> Result<DMatrix<f64>> + Sync + 'a) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn with_datasets(mut self, datasets: Vec<(String, std::ops::Range<usize>)>) -> Self {
        self.datasets = datasets;
        self
    }

    pub fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        (self.residual)(x)
    }

    pub fn initial(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.initial).collect()
    }

    /// Forward-difference Jacobian over all parameters.
    pub fn numeric_jacobian(&self, x: &[f64], r0: &[f64], rel_step: f64) -> Result<DMatrix<f64>> {
        let cols: Vec<usize> = (0..x.len()).collect();
        self.fd_columns(x, r0, rel_step, &cols)
    }

    fn fd_columns(&self, x: &[f64], r0: &[f64], rel_step: f64, cols: &[usize]) -> Result<DMatrix<f64>> {
        use rayon::prelude::*;
        let m = r0.len();
        let columns: Vec<Result<Vec<f64>>> = cols
            .par_iter()
            .map(|&j| {
                let p = &self.params[j];
                let mut h = rel_step * x[j].abs().max(p.scale);
                if x[j] + h > p.upper {
                    h = -h;
                }
                let mut xp = x.to_vec();
                xp[j] += h;
                let h = xp[j] - x[j];
                let r = self.residuals(&xp)?;
                if r.len() != m {
                    return Err(Error::Fit("residual length changed between evaluations".into()));
                }
                Ok(r.iter().zip(r0).map(|(a, b)| (a - b) / h).collect())
            })
            .collect();
        let mut jac = DMatrix::zeros(m, cols.len());
        for (c, col) in columns.into_iter().enumerate() {
            let col = col?;
            for (i, v) in col.into_iter().enumerate() {
                jac[(i, c)] = v;
            }
        }
        Ok(jac)
    }

    fn jacobian_free(&self, x: &[f64], r0: &[f64], free: &[usize], rel_step: f64) -> Result<DMatrix<f64>> {
        match &self.jacobian {
            Some(jf) => {
                let full = jf(x)?;
                if full.nrows() != r0.len() || full.ncols() != x.len() {
                    return Err(Error::Fit("analytic Jacobian has the wrong shape".into()));
                }
                Ok(full.select_columns(free))
            }
            None => self.fd_columns(x, r0, rel_step, free),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Scale-invariant gradient tolerance.
    pub gtol: f64,
    /// Relative step tolerance.
    pub xtol: f64,
    /// Relative cost-decrease tolerance.
    pub ftol: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Initial damping relative to diag(JᵀJ).
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 500, gtol: 1e-8, xtol: 1e-10, ftol: 1e-12, fd_step: 1e-6, lambda0: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParameter {
    pub name: String,
    pub value: f64,
    /// One-standard-deviation uncertainty; zero for locked parameters.
    pub sigma: f64,
    pub initial: f64,
    #[serde(with = "bound")]
    pub lower: f64,
    #[serde(with = "bound")]
    pub upper: f64,
    pub locked: bool,
    pub scope: Scope,
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FittedParameter>,
    /// sqrt(Σ r²) at the optimum.
    pub residual_norm: f64,
    pub n_residuals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub termination: String,
    /// ½Σr² after every accepted step, starting with the initial point.
    pub cost_history: Vec<f64>,
    /// Residual norm per dataset.
    pub per_dataset: Vec<(String, f64)>,
    /// Correlation matrix of the free parameters, row-major, in declaration order.
    pub correlation: Vec<Vec<f64>>,
    pub free_names: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&FittedParameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.get(name).map(|p| p.sigma)
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    /// Correlation coefficient between two free parameters.
    pub fn correlation_between(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.free_names.iter().position(|n| n == a)?;
        let j = self.free_names.iter().position(|n| n == b)?;
        Some(self.correlation[i][j])
    }
}

/// JSON has no infinities; unbounded sides are written as strings.
mod bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("invalid bound {other:?}"))),
            },
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn finite(r: &[f64]) -> bool {
    r.iter().all(|v| v.is_finite())
}

/// Minimize ½‖r(x)‖² subject to box bounds; locked parameters never move.
pub fn least_squares(problem: &FitProblem<'_>, opts: &LmOptions) -> Result<FitResult> {
    for p in &problem.params {
        p.validate()?;
    }
    let free: Vec<usize> = (0..problem.params.len()).filter(|&j| !problem.params[j].locked).collect();
    let mut x = problem.initial();
    let mut r = problem.residuals(&x)?;
    if !finite(&r) {
        return Err(Error::Fit("residuals are not finite at the initial point".into()));
    }
    if r.is_empty() {
        return Err(Error::Fit("no residuals to fit".into()));
    }
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut termination = String::from("maximum iterations reached");
    let mut converged = false;
    let mut iterations = 0;
    let mut lambda = opts.lambda0;
    let mut nu = 2.0;
    let mut nonfinite_streak = 0usize;

    if free.is_empty() {
        termination = "no free parameters".into();
        converged = true;
    }

    'outer: while !converged && iterations < opts.max_iter {
        let jac = problem.jacobian_free(&x, &r, &free, opts.fd_step)?;
        let rv = DVector::from_column_slice(&r);
        let g = jac.transpose() * &rv;
        let jtj = jac.transpose() * &jac;
        let rnorm = rv.norm();
        if rnorm == 0.0 {
            termination = "zero residual".into();
            converged = true;
            break;
        }
        let gscaled = (0..free.len())
            .map(|c| {
                let cn = jac.column(c).norm();
                if cn > 0.0 {
                    g[c].abs() / (cn * rnorm)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if gscaled <= opts.gtol {
            termination = "gradient tolerance".into();
            converged = true;
            break;
        }
        let diag: Vec<f64> = (0..free.len()).map(|c| jtj[(c, c)].max(1e-300)).collect();

        loop {
            let mut a = jtj.clone();
            for c in 0..free.len() {
                a[(c, c)] += lambda * diag[c];
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda = (lambda * nu).max(1e-12);
                    nu *= 2.0;
                    if lambda > 1e30 {
                        termination = "damped normal equations are singular".into();
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut xn = x.clone();
            for (c, &j) in free.iter().enumerate() {
                let p = &problem.params[j];
                xn[j] = (x[j] + step[c]).clamp(p.lower, p.upper);
            }
            let s = DVector::from_iterator(free.len(), free.iter().map(|&j| xn[j] - x[j]));
            let xnorm = free.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt();
            if s.norm() <= opts.xtol * (xnorm + opts.xtol) {
                termination = "step tolerance".into();
                converged = true;
                break 'outer;
            }
            let rn = match problem.residuals(&xn) {
                Ok(v) if finite(&v) && v.len() == r.len() => {
                    nonfinite_streak = 0;
                    Some(v)
                }
                _ => {
                    nonfinite_streak += 1;
                    None
                }
            };
            if nonfinite_streak > 60 {
                return Err(Error::Fit(format!(
                    "residuals stayed non-finite for {nonfinite_streak} consecutive trial steps near x = {xn:?}"
                )));
            }
            let accepted = rn.as_ref().map(|v| (cost_of(v), v));
            match accepted {
                Some((cn, v)) if cn < cost => {
                    let js = &jac * &s;
                    let predicted = -(g.dot(&s) + 0.5 * js.norm_squared());
                    let rho = if predicted > 0.0 { (cost - cn) / predicted } else { 1.0 };
                    let small_gain = (cost - cn) <= opts.ftol * cost;
                    x = xn;
                    r = v.clone();
                    cost = cn;
                    history.push(cost);
                    iterations += 1;
                    lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                    nu = 2.0;
                    if small_gain {
                        termination = "cost tolerance".into();
                        converged = true;
                    }
                    break;
                }
                _ => {
                    lambda *= nu;
                    nu *= 2.0;
                    if lambda > 1e30 {
                        termination = "damping saturated".into();
                        converged = gscaled < 1e-4;
                        break 'outer;
                    }
                }
            }
        }
    }

    let (sigmas, correlation) = covariance(problem, &x, &r, &free, opts)?;
    let params = problem
        .params
        .iter()
        .enumerate()
        .map(|(j, p)| FittedParameter {
            name: p.name.clone(),
            value: x[j],
            sigma: free.iter().position(|&f| f == j).map_or(0.0, |c| sigmas[c]),
            initial: p.initial,
            lower: p.lower,
            upper: p.upper,
            locked: p.locked,
            scope: p.scope.clone(),
            provenance: p.provenance.clone(),
        })
        .collect();
    let per_dataset = problem
        .datasets
        .iter()
        .map(|(tag, range)| (tag.clone(), r[range.clone()].iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    Ok(FitResult {
        params,
        residual_norm: (2.0 * cost).sqrt(),
        n_residuals: r.len(),
        iterations,
        converged,
        termination,
        cost_history: history,
        per_dataset,
        correlation,
        free_names: free.iter().map(|&j| problem.params[j].name.clone()).collect(),
    })
}

/// s²(JᵀJ)⁺ via SVD; returns (sigmas, correlation matrix).
fn covariance(
    problem: &FitProblem<'_>,
    x: &[f64],
    r: &[f64],
    free: &[usize],
    opts: &LmOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = free.len();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let jac = problem.jacobian_free(x, r, free, opts.fd_step)?;
    let jtj = jac.transpose() * &jac;
    let svd = jtj.svd(true, true);
    let smax = svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(smax * 1e-14 * n as f64)
        .map_err(|e| Error::Fit(format!("covariance pseudo-inverse failed: {e}")))?;
    let dof = r.len().saturating_sub(n).max(1) as f64;
    let s2 = r.iter().map(|v| v * v).sum::<f64>() / dof;
    let cov = pinv * s2;
    let sig: Vec<f64> = (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let corr = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = sig[i] * sig[j];
                    if d > 0.0 {
                        cov[(i, j)] / d
                    } else if i == j {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok((sig, corr))
}
