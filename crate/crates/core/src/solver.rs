//! Weighted L1-regularized logistic regression by proximal gradient.
//!
//! Minimizes `F(w, w0) = Σ ω_n log(1 + exp(-ỹ_n (w·x_n + w0))) + λ‖w‖₁` with
//! soft-thresholding on `w` only (the bias is unpenalized) and a backtracking
//! step size. Every accepted iterate satisfies the sufficient-decrease bound,
//! so the objective sequence never increases.

use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::tree::linear_value;

#[derive(Debug, Clone, Copy)]
pub struct LabeledPoint<'a> {
    pub x: &'a [f64],
    /// +1 (route right) or -1 (route left).
    pub target: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct WeightedBinaryProblem<'a> {
    pub points: Vec<LabeledPoint<'a>>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub w0: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            w: vec![0.0; dim],
            w0: 0.0,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        linear_value(&self.w, self.w0, x)
    }

    /// +1 when the value is >= 0, matching the route-right tie rule.
    pub fn side(&self, x: &[f64]) -> f64 {
        if self.value(x) < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop once the relative objective decrease of an iteration falls below this.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iter: 1000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub model: LinearModel,
    /// `F` at the initial point followed by `F` after each accepted iteration.
    pub objective: Vec<f64>,
}

impl WeightedBinaryProblem<'_> {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.x.len())
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Config("weighted binary problem has no points".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        let d = self.dim();
        for p in &self.points {
            if p.x.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: p.x.len(),
                });
            }
            if !(p.weight > 0.0 && p.weight.is_finite()) || (p.target != 1.0 && p.target != -1.0) {
                return Err(Error::Config(format!("bad point: target {} weight {}", p.target, p.weight)));
            }
        }
        Ok(())
    }

    /// Smooth part: weighted logistic loss.
    pub fn smooth_loss(&self, m: &LinearModel) -> f64 {
        self.points.iter().map(|p| p.weight * softplus(-p.target * margin(m, p.x))).sum()
    }

    /// Gradient of [`Self::smooth_loss`] with respect to `(w, w0)`.
    pub fn smooth_gradient(&self, m: &LinearModel) -> (Vec<f64>, f64) {
        let mut gw = vec![0.0; m.w.len()];
        let mut gb = 0.0;
        for p in &self.points {
            // d/dm softplus(-y m) = -y σ(-y m)
            let s = -p.target * p.weight * sigmoid(-p.target * margin(m, p.x));
            for (g, x) in gw.iter_mut().zip(p.x) {
                *g += s * x;
            }
            gb += s;
        }
        (gw, gb)
    }

    pub fn objective(&self, m: &LinearModel) -> f64 {
        self.smooth_loss(m) + self.lambda * m.w.iter().map(|v| v.abs()).sum::<f64>()
    }
}

#[inline]
fn margin(m: &LinearModel, x: &[f64]) -> f64 {
    m.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + m.w0
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Proximal operator of `t·λ‖·‖₁`: elementwise `sign(v) max(|v| - tλ, 0)`.
pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

pub fn solve(problem: &WeightedBinaryProblem<'_>, init: &LinearModel, cfg: &SolverConfig) -> Result<LinearModel> {
    solve_traced(problem, init, cfg).map(|r| r.model)
}

pub fn solve_traced(problem: &WeightedBinaryProblem<'_>, init: &LinearModel, cfg: &SolverConfig) -> Result<SolveReport> {
    problem.validate()?;
    if cfg.max_iter == 0 || !(cfg.tol > 0.0) {
        return Err(Error::Config(format!("solver needs max_iter >= 1 and tol > 0, got {cfg:?}")));
    }
    if init.w.len() != problem.dim() {
        return Err(Error::Dimension {
            expected: problem.dim(),
            got: init.w.len(),
        });
    }
    let lambda = problem.lambda;
    let lipschitz: f64 = 0.25
        * problem
            .points
            .iter()
            .map(|p| p.weight * (1.0 + p.x.iter().map(|v| v * v).sum::<f64>()))
            .sum::<f64>();
    let mut step = 1.0 / lipschitz;

    let mut cur = init.clone();
    let mut f = problem.smooth_loss(&cur);
    let mut obj = f + lambda * l1(&cur.w);
    check_finite(obj)?;
    let mut trace = vec![obj];

    for _ in 0..cfg.max_iter {
        let (gw, gb) = problem.smooth_gradient(&cur);
        if gw.iter().any(|g| !g.is_finite()) || !gb.is_finite() {
            return Err(Error::Numeric("non-finite gradient in logistic solver".into()));
        }
        let mut accepted = None;
        while step > 1e-30 / lipschitz {
            let cand = LinearModel {
                w: cur
                    .w
                    .iter()
                    .zip(&gw)
                    .map(|(w, g)| soft_threshold(w - step * g, step * lambda))
                    .collect(),
                w0: cur.w0 - step * gb,
            };
            let dw: Vec<f64> = cand.w.iter().zip(&cur.w).map(|(a, b)| a - b).collect();
            let db = cand.w0 - cur.w0;
            let lin: f64 = dw.iter().zip(&gw).map(|(d, g)| d * g).sum::<f64>() + db * gb;
            let sq: f64 = dw.iter().map(|d| d * d).sum::<f64>() + db * db;
            let f_cand = problem.smooth_loss(&cand);
            check_finite(f_cand)?;
            if f_cand <= f + lin + sq / (2.0 * step) {
                let obj_cand = f_cand + lambda * l1(&cand.w);
                if obj_cand <= obj {
                    accepted = Some((cand, f_cand, obj_cand, sq));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, f_cand, obj_cand, moved)) = accepted else { break };
        let decrease = obj - obj_cand;
        debug_assert!(decrease >= 0.0);
        cur = cand;
        f = f_cand;
        obj = obj_cand;
        trace.push(obj);
        if moved == 0.0 || decrease <= cfg.tol * obj.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        step *= 2.0;
    }
    Ok(SolveReport {
        model: cur,
        objective: trace,
    })
}

fn l1(w: &[f64]) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(
            "non-finite objective in logistic solver; check feature scaling".into(),
        ))
    }
}

/// `Σ ω_n · 1[model misroutes point n]`, with a zero value counted as +1. Summed exactly.
pub fn weighted_01_loss(model: &LinearModel, problem: &WeightedBinaryProblem<'_>) -> f64 {
    let mut acc = ExactSum::new();
    for p in &problem.points {
        if model.side(p.x) != p.target {
            acc.add(p.weight);
        }
    }
    acc.value()
}

/// Weighted 0/1 loss plus `λ‖w‖₁`, as one exact sum of `ω_n` and `λ|w_j|` terms.
pub fn penalized_01_loss(model: &LinearModel, problem: &WeightedBinaryProblem<'_>) -> f64 {
    let mut acc = ExactSum::new();
    for p in &problem.points {
        if model.side(p.x) != p.target {
            acc.add(p.weight);
        }
    }
    acc.extend(model.w.iter().map(|v| problem.lambda * v.abs()));
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn owned_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let ws = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        (xs, ys, ws)
    }

    fn borrow<'a>(xs: &'a [Vec<f64>], ys: &[f64], ws: &[f64], lambda: f64) -> WeightedBinaryProblem<'a> {
        WeightedBinaryProblem {
            points: xs
                .iter()
                .zip(ys.iter().zip(ws))
                .map(|(x, (y, w))| LabeledPoint { x, target: *y, weight: *w })
                .collect(),
            lambda,
        }
    }

    #[test]
    fn soft_threshold_closed_form() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
    }

    #[test]
    fn separable_pair() {
        let xs = vec![vec![-1.0], vec![1.0]];
        let p = borrow(&xs, &[-1.0, 1.0], &[1.0, 1.0], 0.0);
        let m = solve(&p, &LinearModel::zeros(1), &SolverConfig::default()).unwrap();
        assert!(m.w[0] > 0.0);
        assert_eq!(weighted_01_loss(&m, &p), 0.0);
    }

    #[test]
    fn monotone_objective_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for lambda in [0.0, 0.1, 3.0] {
            let (xs, ys, ws) = owned_problem(&mut rng, 60, 4);
            let p = borrow(&xs, &ys, &ws, lambda);
            let r = solve_traced(&p, &LinearModel::zeros(4), &SolverConfig::default()).unwrap();
            assert!(r.objective.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn l1_path_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (xs, ys, ws) = owned_problem(&mut rng, 80, 4);
        let cfg = SolverConfig {
            max_iter: 20_000,
            tol: 1e-14,
        };
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0] {
            let p = borrow(&xs, &ys, &ws, lambda);
            let m = solve(&p, &LinearModel::zeros(4), &cfg).unwrap();
            let norm = l1(&m.w);
            assert!(norm <= prev + 1e-8, "lambda {lambda}: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn all_zero_model_routes_right() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..8).map(|i| if i < 3 { 1.0 } else { -1.0 }).collect();
        let p = borrow(&xs, &ys, &[1.0; 8], 0.0);
        assert_eq!(weighted_01_loss(&LinearModel::zeros(1), &p), 5.0);
    }

    #[test]
    fn rejects_bad_input() {
        let xs = vec![vec![f64::NAN]];
        let p = borrow(&xs, &[1.0], &[1.0], 0.0);
        assert!(solve(&p, &LinearModel::zeros(1), &SolverConfig::default()).is_err());
        let empty = WeightedBinaryProblem {
            points: vec![],
            lambda: 0.0,
        };
        assert!(solve(&empty, &LinearModel::zeros(1), &SolverConfig::default()).is_err());
    }
}
