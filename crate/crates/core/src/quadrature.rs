//! Gauss–Legendre rules and adaptive panel integration.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// An n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Build the rule by Newton iteration on the Legendre polynomial roots.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    pub fn integrate_complex<F: FnMut(f64) -> Complex64>(&self, a: f64, b: f64, mut f: F) -> Complex64 {
        self.mapped(a, b).map(|(x, w)| f(x) * w).sum()
    }
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tolerances and node budget for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_nodes: usize,
    /// Points of the Gauss–Legendre rule used on each panel.
    pub order: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-14, max_nodes: 1 << 14, order: 16 }
    }
}

/// Converged panel partition returned by [`integrate_adaptive`].
#[derive(Debug, Clone)]
pub struct AdaptiveIntegral {
    pub value: Complex64,
    pub error: f64,
    pub nodes: usize,
    /// Final panel boundaries, ascending.
    pub panels: Vec<(f64, f64)>,
}

struct Panel {
    a: f64,
    b: f64,
    left: Complex64,
    right: Complex64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Integrate a complex function over [a, b] on adaptively bisected panels.
///
/// Each panel is compared against the sum over its two halves; the panel with
/// the largest discrepancy is split until the summed discrepancy meets the
/// tolerance. Exceeding the node budget returns [`Error::Quadrature`] with
/// the best estimate reached.
pub fn integrate_adaptive<F>(
    mut f: F,
    a: f64,
    b: f64,
    initial_panels: usize,
    opts: &AdaptiveOptions,
) -> Result<AdaptiveIntegral>
where
    F: FnMut(f64) -> Complex64,
{
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::Domain(format!("invalid integration range [{a}, {b}]")));
    }
    let rule = GaussLegendre::new(opts.order);
    let per_rule = rule.len();
    let n0 = initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let mut nodes = 0usize;

    let mut eval_panel = |lo: f64, hi: f64, whole: Option<Complex64>, nodes: &mut usize| {
        let mid = 0.5 * (lo + hi);
        let whole = whole.unwrap_or_else(|| {
            *nodes += per_rule;
            rule.integrate_complex(lo, hi, &mut f)
        });
        let left = rule.integrate_complex(lo, mid, &mut f);
        let right = rule.integrate_complex(mid, hi, &mut f);
        *nodes += 2 * per_rule;
        let err = (whole - left - right).norm();
        Panel { a: lo, b: hi, left, right, err }
    };

    let mut heap = BinaryHeap::with_capacity(n0);
    for i in 0..n0 {
        let lo = a + width * i as f64;
        let hi = if i + 1 == n0 { b } else { a + width * (i + 1) as f64 };
        heap.push(eval_panel(lo, hi, None, &mut nodes));
    }

    loop {
        let value: Complex64 = heap.iter().map(|p| p.left + p.right).sum();
        let error: f64 = heap.iter().map(|p| p.err).sum();
        if error <= opts.abs_tol.max(opts.rel_tol * value.norm()) {
            let mut panels: Vec<(f64, f64)> = heap.iter().map(|p| (p.a, p.b)).collect();
            panels.sort_by(|x, y| x.0.total_cmp(&y.0));
            return Ok(AdaptiveIntegral { value, error, nodes, panels });
        }
        if nodes + 4 * per_rule > opts.max_nodes {
            return Err(Error::Quadrature { estimate: value.norm(), error, nodes });
        }
        let worst = heap.pop().expect("heap holds at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(eval_panel(worst.a, mid, Some(worst.left), &mut nodes));
        heap.push(eval_panel(mid, worst.b, Some(worst.right), &mut nodes));
    }
}

/// Composite rule: `order`-point Gauss–Legendre on every panel.
pub fn composite_nodes(panels: &[(f64, f64)], order: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(order);
    panels
        .iter()
        .flat_map(|&(a, b)| rule.mapped(a, b).collect::<Vec<_>>())
        .collect()
}
