//! Closed-form REML for two nested random intercepts.
//!
//! With variance ratios `theta = (s2_subject, s2_cell) / s2_resid`, the
//! scaled covariance of subject `s` is `V_s = I + theta2 * sum_c 1_c 1_c' +
//! theta1 * 1 1'`. Both levels invert in closed form, so every quadratic form
//! the likelihood needs reduces to per-cell sums of `[X y]` computed once.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::MixedDesign;
use super::StatsError;

/// Bounds on `ln(theta)`.
pub const LOG_THETA_BOUNDS: (f64, f64) = (-30.0, 20.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemlOptions {
    pub max_iter: usize,
    /// Stop when the log-ratio step falls below this.
    pub step_tol: f64,
    /// Hold `theta2` at zero (single random intercept).
    pub fix_cell_zero: bool,
}

impl Default for RemlOptions {
    fn default() -> Self {
        RemlOptions {
            max_iter: 200,
            step_tol: 1e-9,
            fix_cell_zero: false,
        }
    }
}

/// Per-cell sufficient statistics of `M = [X y]`.
#[derive(Debug, Clone)]
pub(crate) struct CellStats {
    /// Rows per cell.
    m: Vec<f64>,
    /// Cell means of `M`, one row per cell.
    mean: DMatrix<f64>,
    /// Subject owning each cell.
    owner: Vec<usize>,
    /// Pooled within-cell scatter of `M`.
    within: DMatrix<f64>,
    n_subjects: usize,
    n: usize,
    p: usize,
}

impl CellStats {
    pub(crate) fn new(d: &MixedDesign) -> Self {
        let n = d.n_obs();
        let p = d.x.ncols();
        let (cell, owner): (Vec<usize>, Vec<usize>) = match &d.cell {
            Some(c) => (c.clone(), d.cell_subject.clone()),
            None => (d.subject.clone(), (0..d.n_subjects()).collect()),
        };
        let n_cells = owner.len();
        let q = p + 1;
        let row = |i: usize, j: usize| if j < p { d.x[(i, j)] } else { d.y[i] };
        let mut m = vec![0.0; n_cells];
        let mut mean = DMatrix::zeros(n_cells, q);
        for i in 0..n {
            m[cell[i]] += 1.0;
            for j in 0..q {
                mean[(cell[i], j)] += row(i, j);
            }
        }
        for c in 0..n_cells {
            for j in 0..q {
                mean[(c, j)] /= m[c];
            }
        }
        let mut within = DMatrix::zeros(q, q);
        let mut dev = vec![0.0; q];
        for i in 0..n {
            for (j, v) in dev.iter_mut().enumerate() {
                *v = row(i, j) - mean[(cell[i], j)];
            }
            for a in 0..q {
                if dev[a] == 0.0 {
                    continue;
                }
                for b in a..q {
                    within[(a, b)] += dev[a] * dev[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                within[(a, b)] = within[(b, a)];
            }
        }
        CellStats {
            m,
            mean,
            owner,
            within,
            n_subjects: d.n_subjects(),
            n,
            p,
        }
    }
}

/// Everything the likelihood, its gradient and the BLUPs need at one `theta`.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    /// Gradient with respect to `theta` (not its logarithm).
    pub grad_theta: [f64; 2],
    pub beta: DVector<f64>,
    /// `(X' V^-1 X)^-1` with `V` scaled by the residual variance.
    pub xtvx_inv: DMatrix<f64>,
    /// `r' V^-1 r / (n - p)`.
    pub sigma2: f64,
    /// `theta1 * Z1' V^-1 r` per subject.
    pub blup_subject: Vec<f64>,
    /// `theta2 * Z2' V^-1 r` per cell.
    pub blup_cell: Vec<f64>,
}

pub(crate) fn evaluate(stats: &CellStats, theta: [f64; 2]) -> Option<Evaluation> {
    let (t1, t2) = (theta[0], theta[1]);
    let p = stats.p;
    let q = p + 1;
    let n_cells = stats.m.len();
    let ns = stats.n_subjects;

    let omega: Vec<f64> = stats.m.iter().map(|&m| m / (1.0 + t2 * m)).collect();
    let mut tau = vec![0.0; ns];
    let mut sub_mean = DMatrix::zeros(ns, q);
    for c in 0..n_cells {
        let s = stats.owner[c];
        tau[s] += omega[c];
        for j in 0..q {
            sub_mean[(s, j)] += omega[c] * stats.mean[(c, j)];
        }
    }
    for s in 0..ns {
        if tau[s] > 0.0 {
            for j in 0..q {
                sub_mean[(s, j)] /= tau[s];
            }
        }
    }

    // Q = M' V^-1 M.
    let mut big_q = stats.within.clone();
    let mut dev = vec![0.0; q];
    for c in 0..n_cells {
        let s = stats.owner[c];
        for (j, v) in dev.iter_mut().enumerate() {
            *v = stats.mean[(c, j)] - sub_mean[(s, j)];
        }
        add_outer(&mut big_q, omega[c], &dev);
    }
    let mut logdet = stats.m.iter().map(|&m| (t2 * m).ln_1p()).sum::<f64>();
    let mut shrink = vec![0.0; ns];
    for s in 0..ns {
        shrink[s] = tau[s] / (1.0 + t1 * tau[s]);
        let row: Vec<f64> = (0..q).map(|j| sub_mean[(s, j)]).collect();
        add_outer(&mut big_q, shrink[s], &row);
        logdet += (t1 * tau[s]).ln_1p();
    }

    let xtvx = big_q.view((0, 0), (p, p)).into_owned();
    let xtvy = big_q.view((0, p), (p, 1)).column(0).into_owned();
    let yty = big_q[(p, p)];
    let chol = xtvx.clone().cholesky()?;
    let beta = chol.solve(&xtvy);
    let rss = yty - beta.dot(&xtvy);
    let dof = (stats.n - p) as f64;
    if !(rss > 0.0) || !rss.is_finite() {
        return None;
    }
    let logdet_x = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let loglik = -0.5
        * (logdet + logdet_x + dof * (1.0 + (2.0 * std::f64::consts::PI * rss / dof).ln()));
    let xtvx_inv = chol.inverse();

    let resid_of = |v: &[f64]| v[p] - (0..p).map(|j| beta[j] * v[j]).sum::<f64>();

    // Subject level: Z1' V^-1 M rows are e_s = shrink_s * subject mean.
    let mut trace1 = 0.0;
    let mut quad1 = 0.0;
    let mut adj1 = 0.0;
    let mut blup_subject = vec![0.0; ns];
    let mut e = vec![0.0; q];
    for s in 0..ns {
        for (j, v) in e.iter_mut().enumerate() {
            *v = shrink[s] * sub_mean[(s, j)];
        }
        trace1 += shrink[s];
        let rho = resid_of(&e);
        quad1 += rho * rho;
        adj1 += quad_form(&xtvx_inv, &e[..p]);
        blup_subject[s] = t1 * rho;
    }

    // Cell level: Z2' V^-1 M rows are f_c = omega_c (cell mean - kappa_s subject mean).
    let mut trace2 = 0.0;
    let mut quad2 = 0.0;
    let mut adj2 = 0.0;
    let mut blup_cell = vec![0.0; n_cells];
    let mut f = vec![0.0; q];
    for c in 0..n_cells {
        let s = stats.owner[c];
        let kappa = t1 * tau[s] / (1.0 + t1 * tau[s]);
        for (j, v) in f.iter_mut().enumerate() {
            *v = omega[c] * (stats.mean[(c, j)] - kappa * sub_mean[(s, j)]);
        }
        let b = t1 / (1.0 + t1 * tau[s]);
        trace2 += omega[c] - b * omega[c] * omega[c];
        let rho = resid_of(&f);
        quad2 += rho * rho;
        adj2 += quad_form(&xtvx_inv, &f[..p]);
        blup_cell[c] = t2 * rho;
    }

    let g1 = -0.5 * ((trace1 - adj1) - dof * quad1 / rss);
    let g2 = -0.5 * ((trace2 - adj2) - dof * quad2 / rss);
    Some(Evaluation {
        loglik,
        grad_theta: [g1, g2],
        beta,
        xtvx_inv,
        sigma2: rss / dof,
        blup_subject,
        blup_cell,
    })
}

fn add_outer(m: &mut DMatrix<f64>, w: f64, v: &[f64]) {
    if w == 0.0 {
        return;
    }
    let q = v.len();
    for a in 0..q {
        let wa = w * v[a];
        if wa == 0.0 {
            continue;
        }
        for b in 0..q {
            m[(a, b)] += wa * v[b];
        }
    }
}

fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let mut total = 0.0;
    for a in 0..v.len() {
        if v[a] == 0.0 {
            continue;
        }
        let row: f64 = (0..v.len()).map(|b| m[(a, b)] * v[b]).sum();
        total += v[a] * row;
    }
    total
}

/// Fitted model. Variance components are on the response scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub column_names: Vec<String>,
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub cov_beta: Vec<Vec<f64>>,
    pub sigma2_subject: f64,
    pub sigma2_subject_stage: f64,
    pub sigma2_resid: f64,
    /// Variance ratios relative to the residual variance.
    pub theta: [f64; 2],
    pub reml_loglik: f64,
    pub n_obs: usize,
    pub n_subjects: usize,
    pub n_cells: usize,
    pub rank_x: usize,
    pub df_resid: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Which ratios sit on the zero boundary.
    pub at_boundary: [bool; 2],
    /// REML log-likelihood after each accepted optimizer step.
    pub trace: Vec<f64>,
    /// Gradient in `theta` at the reported optimum.
    pub gradient: [f64; 2],
    pub blup_subject: Vec<f64>,
    pub blup_cell: Vec<f64>,
}

impl ModelFit {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.column_names.iter().position(|c| c == name)?;
        Some((self.beta[i], self.std_errors[i]))
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.cov_beta[i][j]
    }
}

/// REML log-likelihood at the given ratios (profiled over the residual variance).
pub fn reml_loglik(design: &MixedDesign, theta: [f64; 2]) -> Result<f64, StatsError> {
    let stats = CellStats::new(design);
    evaluate(&stats, theta)
        .map(|e| e.loglik)
        .ok_or(StatsError::Singular)
}

/// Analytic gradient of [`reml_loglik`] with respect to `theta`.
pub fn reml_gradient(design: &MixedDesign, theta: [f64; 2]) -> Result<[f64; 2], StatsError> {
    let stats = CellStats::new(design);
    evaluate(&stats, theta)
        .map(|e| e.grad_theta)
        .ok_or(StatsError::Singular)
}

struct RunResult {
    theta: [f64; 2],
    loglik: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Maximize over `ln(theta)` for the free components, holding the rest at zero.
fn maximize(stats: &CellStats, free: [bool; 2], opts: &RemlOptions) -> Option<RunResult> {
    let (lo, hi) = LOG_THETA_BOUNDS;
    let to_theta = |phi: [f64; 2]| -> [f64; 2] {
        [0, 1].map(|k| if free[k] { phi[k].exp() } else { 0.0 })
    };
    let ll = |phi: [f64; 2]| evaluate(stats, to_theta(phi)).map_or(f64::NEG_INFINITY, |e| e.loglik);
    let grad_phi = |phi: [f64; 2]| -> [f64; 2] {
        match evaluate(stats, to_theta(phi)) {
            Some(e) => {
                let th = to_theta(phi);
                [0, 1].map(|k| if free[k] { e.grad_theta[k] * th[k] } else { 0.0 })
            }
            None => [0.0; 2],
        }
    };

    let free_idx: Vec<usize> = (0..2).filter(|&k| free[k]).collect();
    if free_idx.is_empty() {
        let l = ll([lo; 2]);
        return l.is_finite().then(|| RunResult {
            theta: [0.0; 2],
            loglik: l,
            trace: vec![l],
            iterations: 0,
            converged: true,
        });
    }

    // Coarse grid start.
    let grid = [-12.0, -8.0, -5.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 5.0];
    let mut best = ([lo; 2], f64::NEG_INFINITY);
    let mut consider = |phi: [f64; 2]| {
        let l = ll(phi);
        if l > best.1 {
            best = (phi, l);
        }
    };
    match free_idx.as_slice() {
        [k] => {
            for &g in &grid {
                let mut phi = [lo; 2];
                phi[*k] = g;
                consider(phi);
            }
        }
        _ => {
            for &a in &grid {
                for &b in &grid {
                    consider([a, b]);
                }
            }
        }
    }
    let (mut phi, mut cur) = best;
    if !cur.is_finite() {
        return None;
    }
    let mut trace = vec![cur];
    let mut converged = false;
    let mut iterations = 0;
    let h = 1e-5;
    while iterations < opts.max_iter {
        iterations += 1;
        let g = grad_phi(phi);
        // Components pinned at a bound with the gradient pushing outward stay put.
        let active: Vec<usize> = free_idx
            .iter()
            .copied()
            .filter(|&k| !((phi[k] <= lo && g[k] <= 0.0) || (phi[k] >= hi && g[k] >= 0.0)))
            .collect();
        if active.is_empty() || active.iter().all(|&k| g[k].abs() < 1e-10) {
            converged = true;
            break;
        }
        let m = active.len();
        let mut hess = DMatrix::zeros(m, m);
        for (col, &k) in active.iter().enumerate() {
            let mut up = phi;
            let mut down = phi;
            up[k] = (phi[k] + h).min(hi);
            down[k] = (phi[k] - h).max(lo);
            let (gu, gd) = (grad_phi(up), grad_phi(down));
            for (row, &r) in active.iter().enumerate() {
                hess[(row, col)] = (gu[r] - gd[r]) / (up[k] - down[k]);
            }
        }
        let hess = 0.5 * (&hess + hess.transpose());
        let gv = DVector::from_iterator(m, active.iter().map(|&k| g[k]));
        let newton = (-&hess).cholesky().map(|c| c.solve(&gv));
        let mut step = match newton {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => gv.clone() / gv.norm().max(1.0),
        };
        let norm = step.norm();
        if norm > 4.0 {
            step *= 4.0 / norm;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let mut cand = phi;
            for (i, &k) in active.iter().enumerate() {
                cand[k] = (phi[k] + t * step[i]).clamp(lo, hi);
            }
            let l = ll(cand);
            if l > cur {
                accepted = Some((cand, l));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, l)) = accepted else {
            converged = true;
            break;
        };
        let moved = active.iter().map(|&k| (cand[k] - phi[k]).abs()).fold(0.0, f64::max);
        phi = cand;
        cur = l;
        trace.push(l);
        if moved < opts.step_tol {
            converged = true;
            break;
        }
    }
    let mut theta = to_theta(phi);
    for k in 0..2 {
        if free[k] && phi[k] <= lo {
            theta[k] = lo.exp();
        }
    }
    Some(RunResult {
        theta,
        loglik: cur,
        trace,
        iterations,
        converged,
    })
}

/// Fit by REML. Interior and boundary candidates (each ratio free or held at
/// zero) are optimized separately and the best likelihood wins.
pub fn fit_reml(design: &MixedDesign, opts: &RemlOptions) -> Result<ModelFit, StatsError> {
    let n = design.n_obs();
    let p = design.x.ncols();
    if n <= p {
        return Err(StatsError::TooFewObservations { n, p });
    }
    let aliased = super::design::aliased_columns(&design.x, &design.column_names);
    if !aliased.is_empty() {
        return Err(StatsError::RankDeficient(aliased));
    }
    let stats = CellStats::new(design);
    let has_cells = design.cell.is_some() && !opts.fix_cell_zero;
    let mut patterns = vec![[true, false], [false, false]];
    if has_cells {
        patterns.insert(0, [true, true]);
        patterns.push([false, true]);
    }
    let mut best: Option<(RunResult, [bool; 2])> = None;
    for free in patterns {
        if let Some(run) = maximize(&stats, free, opts) {
            if best.as_ref().is_none_or(|(b, _)| run.loglik > b.loglik) {
                best = Some((run, free));
            }
        }
    }
    let (run, free) = best.ok_or(StatsError::Singular)?;
    let ev = evaluate(&stats, run.theta).ok_or(StatsError::Singular)?;

    // KKT at zero-held components: the likelihood must not increase into the interior.
    let at_zero = [0, 1].map(|k| !free[k] || run.theta[k] <= LOG_THETA_BOUNDS.0.exp());
    let eval_zero = evaluate(&stats, [0, 1].map(|k| if at_zero[k] { 0.0 } else { run.theta[k] }));
    let kkt = eval_zero.is_some_and(|e| {
        (0..2).all(|k| !at_zero[k] || (k == 1 && !has_cells) || e.grad_theta[k] <= 1e-6 * (1.0 + e.loglik.abs()))
    });

    let sigma2 = ev.sigma2;
    let cov = &ev.xtvx_inv * sigma2;
    let cov_beta: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect()).collect();
    let std_errors = (0..p).map(|i| cov_beta[i][i].max(0.0).sqrt()).collect();
    let theta = [0, 1].map(|k| if at_zero[k] && !free[k] { 0.0 } else { run.theta[k] });
    Ok(ModelFit {
        column_names: design.column_names.clone(),
        beta: ev.beta.iter().copied().collect(),
        std_errors,
        cov_beta,
        sigma2_subject: theta[0] * sigma2,
        sigma2_subject_stage: theta[1] * sigma2,
        sigma2_resid: sigma2,
        theta,
        reml_loglik: ev.loglik,
        n_obs: n,
        n_subjects: design.n_subjects(),
        n_cells: if design.cell.is_some() { design.cell_subject.len() } else { 0 },
        rank_x: p,
        df_resid: n - p,
        converged: run.converged && kkt,
        iterations: run.iterations,
        at_boundary: at_zero,
        trace: run.trace,
        gradient: ev.grad_theta,
        blup_subject: ev.blup_subject,
        blup_cell: if design.cell.is_some() { ev.blup_cell } else { Vec::new() },
    })
}
