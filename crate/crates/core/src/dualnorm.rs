//! Perturbation regularizers `h(delta)`, their Fenchel conjugates
//! `h*(g)` evaluated on loss gradients, closed-form maximizers of
//! `delta . g - h(delta)`, ball projections, and a grid oracle that
//! certifies the conjugates numerically.
//!
//! | rule          | `h(delta)`                           | `h*(g)`                    |
//! |---------------|--------------------------------------|----------------------------|
//! | `LinfBall`    | indicator of `||delta||_inf <= eps`    | `eps ||g||_1`              |
//! | `GroupBall`   | indicator of `||delta||_{2,inf} <= eps`| `eps ||g||_{2,1}`          |
//! | `ElasticNet`  | `sum_i PQ(delta_i)`                  | `eps1 ||g||_1 + eps2 ||g||_2^2` |
//! | `WeightedL2`  | `||delta / sqrt(w)||^2 / (4 eps)`    | `eps ||sqrt(w) g||_2^2`    |

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradnet::{smoothness_bound, Network};
use crate::tensor::{dot, norm_l1, norm_l2, Tensor};

const FEASIBILITY_TOL: f64 = 1e-12;
/// Largest per-block grid the oracle will enumerate.
const MAX_BLOCK_EVALS: u128 = 200_000_000;

/// Disjoint index sets covering `0..dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Groups {
    sets: Vec<Vec<usize>>,
    dim: usize,
}

impl Groups {
    pub fn new(sets: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for set in &sets {
            if set.is_empty() {
                return Err(Error::invalid("empty group"));
            }
            for &i in set {
                if i >= dim {
                    return Err(Error::invalid(format!("group index {i} >= dimension {dim}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("index {i} appears in two groups")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("index {i} is not covered by any group")));
        }
        Ok(Self { sets, dim })
    }

    pub fn singletons(dim: usize) -> Self {
        Self {
            sets: (0..dim).map(|i| vec![i]).collect(),
            dim,
        }
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Spatial `patch x patch` blocks over a `[channels, height, width]` tensor,
/// each spanning all channels. Edge blocks are truncated when `patch` does
/// not divide the image.
pub fn make_patch_groups(height: usize, width: usize, channels: usize, patch: usize) -> Result<Groups> {
    if patch == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(Error::invalid("patch groups need positive sizes"));
    }
    let mut sets = Vec::new();
    for by in (0..height).step_by(patch) {
        for bx in (0..width).step_by(patch) {
            let mut set = Vec::new();
            for c in 0..channels {
                for y in by..(by + patch).min(height) {
                    for x in bx..(bx + patch).min(width) {
                        set.push((c * height + y) * width + x);
                    }
                }
            }
            sets.push(set);
        }
    }
    Groups::new(sets, channels * height * width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightVariant {
    /// Strictly positive weights `max(A) - A + sigma`; the conjugate pair holds.
    DualValid,
    /// Signed weights `max(A)/2 - A` applied to the L2-normalized gradient.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PerturbRule {
    LinfBall { eps: f64 },
    GroupBall { eps: f64, groups: Groups },
    ElasticNet { eps1: f64, eps2: f64 },
    WeightedL2 {
        eps: f64,
        weights: Vec<f64>,
        variant: WeightVariant,
    },
}

fn check_coef(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Piecewise-quadratic conjugate of the scalar elastic net
/// `eps1 |x| + eps2 x^2`: zero on `[-eps1, eps1]`, `(|z| - eps1)^2 / (4 eps2)` outside.
pub fn pq_value(z: f64, eps1: f64, eps2: f64) -> f64 {
    let excess = (z.abs() - eps1).max(0.0);
    excess * excess / (4.0 * eps2)
}

pub fn pq_derivative(z: f64, eps1: f64, eps2: f64) -> f64 {
    sign(z) * (z.abs() - eps1).max(0.0) / (2.0 * eps2)
}

impl PerturbRule {
    pub fn linf(eps: f64) -> Result<Self> {
        check_coef("eps", eps)?;
        Ok(PerturbRule::LinfBall { eps })
    }

    pub fn group(eps: f64, groups: Groups) -> Result<Self> {
        check_coef("eps", eps)?;
        Ok(PerturbRule::GroupBall { eps, groups })
    }

    pub fn elastic_net(eps1: f64, eps2: f64) -> Result<Self> {
        check_coef("eps1", eps1)?;
        check_coef("eps2", eps2)?;
        Ok(PerturbRule::ElasticNet { eps1, eps2 })
    }

    pub fn weighted(eps: f64, weights: Vec<f64>, variant: WeightVariant) -> Result<Self> {
        check_coef("eps", eps)?;
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and non-empty"));
        }
        if variant == WeightVariant::DualValid && weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::invalid("dual-valid weights must be strictly positive"));
        }
        Ok(PerturbRule::WeightedL2 {
            eps,
            weights,
            variant,
        })
    }

    /// Positive weights `max(A) - A + sigma` from an attention map;
    /// `sigma` defaults to 1% of `max(A)`.
    pub fn harmonize_dual_valid(eps: f64, attention: &[f64], sigma: Option<f64>) -> Result<Self> {
        let max = attention_max(attention)?;
        let sigma = sigma.unwrap_or(0.01 * max);
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma must be > 0"));
        }
        let w = attention.iter().map(|&a| max - a + sigma).collect();
        Self::weighted(eps, w, WeightVariant::DualValid)
    }

    /// Signed weights `max(A)/2 - A` from an attention map.
    pub fn harmonize_empirical(eps: f64, attention: &[f64]) -> Result<Self> {
        let max = attention_max(attention)?;
        let w = attention.iter().map(|&a| 0.5 * max - a).collect();
        Self::weighted(eps, w, WeightVariant::Empirical)
    }

    /// Copy with every perturbation coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut r = self.clone();
        match &mut r {
            PerturbRule::LinfBall { eps } | PerturbRule::GroupBall { eps, .. } | PerturbRule::WeightedL2 { eps, .. } => {
                *eps *= factor
            }
            PerturbRule::ElasticNet { eps1, eps2 } => {
                *eps1 *= factor;
                *eps2 *= factor;
            }
        }
        r
    }

    pub fn name(&self) -> &'static str {
        match self {
            PerturbRule::LinfBall { .. } => "linf",
            PerturbRule::GroupBall { .. } => "group",
            PerturbRule::ElasticNet { .. } => "elastic",
            PerturbRule::WeightedL2 {
                variant: WeightVariant::DualValid,
                ..
            } => "weighted",
            PerturbRule::WeightedL2 { .. } => "harmonize",
        }
    }

    /// Dimension fixed by the rule, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            PerturbRule::GroupBall { groups, .. } => Some(groups.dim()),
            PerturbRule::WeightedL2 { weights, .. } => Some(weights.len()),
            _ => None,
        }
    }

    pub fn is_ball(&self) -> bool {
        matches!(self, PerturbRule::LinfBall { .. } | PerturbRule::GroupBall { .. })
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        match self.dim() {
            Some(d) if d != len => Err(Error::Shape(format!(
                "rule {} has dimension {d}, vector has {len}",
                self.name()
            ))),
            _ if len == 0 => Err(Error::Shape("empty vector".into())),
            _ => Ok(()),
        }
    }

    fn require_convex(&self) -> Result<()> {
        if let PerturbRule::WeightedL2 {
            variant: WeightVariant::Empirical,
            ..
        } = self
        {
            return Err(Error::Unsupported(
                "signed harmonization weights define no convex penalty or conjugate".into(),
            ));
        }
        Ok(())
    }

    /// `h(delta)`; `+inf` outside the ball for ball rules.
    pub fn penalty(&self, delta: &[f64]) -> Result<f64> {
        self.check_dim(delta.len())?;
        self.require_convex()?;
        Ok(match self {
            PerturbRule::LinfBall { eps } => {
                let limit = eps * (1.0 + FEASIBILITY_TOL);
                if delta.iter().all(|d| d.abs() <= limit) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PerturbRule::GroupBall { eps, groups } => {
                let limit = eps * (1.0 + FEASIBILITY_TOL);
                if groups.sets().iter().all(|s| group_norm(delta, s) <= limit) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PerturbRule::ElasticNet { eps1, eps2 } => {
                delta.iter().map(|&d| pq_value(d, *eps1, *eps2)).sum()
            }
            PerturbRule::WeightedL2 { eps, weights, .. } => delta
                .iter()
                .zip(weights)
                .map(|(d, w)| d * d / (4.0 * eps * w))
                .sum(),
        })
    }

    /// Gradient of the penalty; only defined for penalty-type rules.
    pub fn penalty_grad(&self, delta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(delta.len())?;
        self.require_convex()?;
        match self {
            PerturbRule::ElasticNet { eps1, eps2 } => {
                Ok(delta.iter().map(|&d| pq_derivative(d, *eps1, *eps2)).collect())
            }
            PerturbRule::WeightedL2 { eps, weights, .. } => Ok(delta
                .iter()
                .zip(weights)
                .map(|(d, w)| d / (2.0 * eps * w))
                .collect()),
            _ => Err(Error::Unsupported(format!(
                "{} is a ball constraint without a penalty gradient",
                self.name()
            ))),
        }
    }

    /// `h*(g)`.
    pub fn conj_value(&self, g: &[f64]) -> Result<f64> {
        self.check_dim(g.len())?;
        self.require_convex()?;
        Ok(match self {
            PerturbRule::LinfBall { eps } => eps * norm_l1(g),
            PerturbRule::GroupBall { eps, groups } => {
                eps * groups.sets().iter().map(|s| group_norm(g, s)).sum::<f64>()
            }
            PerturbRule::ElasticNet { eps1, eps2 } => {
                eps1 * norm_l1(g) + eps2 * g.iter().map(|v| v * v).sum::<f64>()
            }
            PerturbRule::WeightedL2 { eps, weights, .. } => {
                eps * g.iter().zip(weights).map(|(v, w)| w * v * v).sum::<f64>()
            }
        })
    }

    /// Closed-form maximizer of `delta . g - h(delta)`. Zero gradients (or
    /// zero groups) map to a zero perturbation block.
    pub fn argmax_perturb(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g.len())?;
        Ok(match self {
            PerturbRule::LinfBall { eps } => g.iter().map(|&v| eps * sign(v)).collect(),
            PerturbRule::GroupBall { eps, groups } => {
                let mut out = vec![0.0; g.len()];
                for set in groups.sets() {
                    let n = group_norm(g, set);
                    if n > 0.0 {
                        for &i in set {
                            out[i] = eps * g[i] / n;
                        }
                    }
                }
                out
            }
            PerturbRule::ElasticNet { eps1, eps2 } => g
                .iter()
                .map(|&v| eps1 * sign(v) + 2.0 * eps2 * v)
                .collect(),
            PerturbRule::WeightedL2 {
                eps,
                weights,
                variant: WeightVariant::DualValid,
            } => g.iter().zip(weights).map(|(v, w)| 2.0 * eps * w * v).collect(),
            PerturbRule::WeightedL2 { eps, weights, .. } => {
                let n = norm_l2(g);
                if n == 0.0 {
                    vec![0.0; g.len()]
                } else {
                    g.iter()
                        .zip(weights)
                        .map(|(v, w)| 2.0 * eps * w * v / n)
                        .collect()
                }
            }
        })
    }

    /// Euclidean projection onto the constraint set of a ball rule.
    pub fn project(&self, delta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(delta.len())?;
        match self {
            PerturbRule::LinfBall { eps } => Ok(delta.iter().map(|d| d.clamp(-eps, *eps)).collect()),
            PerturbRule::GroupBall { eps, groups } => {
                let mut out = delta.to_vec();
                for set in groups.sets() {
                    let n = group_norm(delta, set);
                    if n > eps * (1.0 + FEASIBILITY_TOL) {
                        for &i in set {
                            out[i] = delta[i] * eps / n;
                        }
                    }
                }
                Ok(out)
            }
            _ => Err(Error::Unsupported(format!(
                "{} is a penalty rule and has no projection",
                self.name()
            ))),
        }
    }

    /// Independent coordinate blocks of the rule's penalty over dimension `d`.
    fn blocks(&self, d: usize) -> Vec<Vec<usize>> {
        match self {
            PerturbRule::GroupBall { groups, .. } => groups.sets().to_vec(),
            _ => (0..d).map(|i| vec![i]).collect(),
        }
    }

    /// The penalty restricted to a block, for a block-local vector.
    fn block_penalty(&self, block: &[usize], local: &[f64]) -> f64 {
        match self {
            PerturbRule::LinfBall { eps } => {
                let limit = eps * (1.0 + FEASIBILITY_TOL);
                if local.iter().all(|v| v.abs() <= limit) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PerturbRule::GroupBall { eps, .. } => {
                if norm_l2(local) <= eps * (1.0 + FEASIBILITY_TOL) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PerturbRule::ElasticNet { eps1, eps2 } => {
                local.iter().map(|&v| pq_value(v, *eps1, *eps2)).sum()
            }
            PerturbRule::WeightedL2 { eps, weights, .. } => block
                .iter()
                .zip(local)
                .map(|(&i, v)| v * v / (4.0 * eps * weights[i]))
                .sum(),
        }
    }
}

fn attention_max(attention: &[f64]) -> Result<f64> {
    if attention.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::invalid("attention map must be finite and non-negative"));
    }
    let max = attention.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::invalid("attention map must have a positive entry"));
    }
    Ok(max)
}

fn group_norm(v: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt()
}

/// Grid-oracle result: the best grid value and the grid point attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMax {
    pub value: f64,
    pub maximizer: Vec<f64>,
}

/// Grid-oracle maximum of `delta . g - h(delta)` over
/// `[-grid_bound, grid_bound]^d` with `grid_steps` points per axis.
pub fn brute_force_conj(rule: &PerturbRule, g: &[f64], grid_bound: f64, grid_steps: usize) -> Result<f64> {
    Ok(brute_force_argmax(rule, g, grid_bound, grid_steps)?.value)
}

/// Exhaustive maximization over the Cartesian grid.
///
/// Every rule's penalty is a sum over independent coordinate blocks
/// (coordinates, or groups for `GroupBall`), so the maximum over the product
/// grid is exactly the sum of per-block grid maxima. Each block is still
/// enumerated point by point; ties resolve to the lowest grid index.
pub fn brute_force_argmax(
    rule: &PerturbRule,
    g: &[f64],
    grid_bound: f64,
    grid_steps: usize,
) -> Result<GridMax> {
    let d = g.len();
    if d > 4 {
        return Err(Error::invalid(format!(
            "grid oracle is limited to d <= 4 (got {d}); use conj_value for the closed form"
        )));
    }
    rule.check_dim(d)?;
    rule.require_convex()?;
    if grid_steps < 2 || !(grid_bound > 0.0) {
        return Err(Error::invalid("grid needs >= 2 steps and a positive bound"));
    }
    let step = 2.0 * grid_bound / (grid_steps - 1) as f64;
    let axis: Vec<f64> = (0..grid_steps).map(|i| -grid_bound + i as f64 * step).collect();

    let mut value = 0.0;
    let mut maximizer = vec![0.0; d];
    for block in rule.blocks(d) {
        let m = block.len();
        let total = (grid_steps as u128).pow(m as u32);
        if total > MAX_BLOCK_EVALS {
            return Err(Error::invalid(format!(
                "block of size {m} needs {total} grid evaluations; use conj_value for the closed form"
            )));
        }
        let gb: Vec<f64> = block.iter().map(|&i| g[i]).collect();
        let inner = (grid_steps as u64).pow(m as u32 - 1);
        // Parallel over the first axis; reduction keeps the lowest index on ties.
        let best = (0..grid_steps)
            .into_par_iter()
            .map(|first| {
                let mut local = vec![0.0; m];
                let mut best = (f64::NEG_INFINITY, u64::MAX);
                for rest in 0..inner {
                    local[0] = axis[first];
                    let mut r = rest;
                    for slot in local.iter_mut().skip(1).rev() {
                        *slot = axis[(r % grid_steps as u64) as usize];
                        r /= grid_steps as u64;
                    }
                    let v = dot(&local, &gb) - rule.block_penalty(&block, &local);
                    let idx = first as u64 * inner + rest;
                    if v > best.0 {
                        best = (v, idx);
                    }
                }
                best
            })
            .reduce(
                || (f64::NEG_INFINITY, u64::MAX),
                |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        if !best.0.is_finite() {
            return Err(Error::invalid("no feasible grid point; enlarge the grid"));
        }
        value += best.0;
        let mut r = best.1;
        for &i in block.iter().rev() {
            maximizer[i] = axis[(r % grid_steps as u64) as usize];
            r /= grid_steps as u64;
        }
    }
    Ok(GridMax { value, maximizer })
}

/// A twice-differentiable scalar loss of the input with a known smoothness constant.
pub trait SmoothLoss {
    fn value_grad(&self, x: &Tensor) -> Result<(f64, Tensor)>;

    fn value(&self, x: &Tensor) -> Result<f64> {
        Ok(self.value_grad(x)?.0)
    }

    /// `lambda` such that the gradient is `lambda`-Lipschitz.
    fn smoothness(&self) -> Result<f64>;
}

/// Cross-entropy of a softplus network at a fixed label.
pub struct NetworkLoss<'a> {
    pub net: &'a Network,
    pub label: usize,
}

impl SmoothLoss for NetworkLoss<'_> {
    fn value_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        let (loss, _, grad) = self.net.loss_input_grad(x, self.label)?;
        Ok((loss, grad))
    }

    fn value(&self, x: &Tensor) -> Result<f64> {
        self.net.loss(x, self.label)
    }

    fn smoothness(&self) -> Result<f64> {
        smoothness_bound(self.net)
    }
}

/// `L(x) = lambda/2 ||x - center||^2`.
pub struct QuadraticLoss {
    pub lambda: f64,
    pub center: Vec<f64>,
}

impl SmoothLoss for QuadraticLoss {
    fn value_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        if x.len() != self.center.len() {
            return Err(Error::Shape("quadratic loss dimension mismatch".into()));
        }
        let diff: Vec<f64> = x.data().iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let value = 0.5 * self.lambda * diff.iter().map(|v| v * v).sum::<f64>();
        let grad = diff.iter().map(|v| self.lambda * v).collect();
        Ok((value, Tensor::new(x.shape().to_vec(), grad)?))
    }

    fn smoothness(&self) -> Result<f64> {
        Ok(self.lambda)
    }
}

/// First-order Taylor error of a loss at `x` along `delta`, with its bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorGap {
    pub gap: f64,
    pub bound: f64,
    pub lambda: f64,
    /// `||delta||_2`.
    pub radius: f64,
}

impl TaylorGap {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound
    }
}

/// `|L(x + delta) - L(x) - delta . grad L(x)|` against `lambda ||delta||^2 / 2`.
pub fn taylor_gap(loss: &dyn SmoothLoss, x: &Tensor, delta: &Tensor) -> Result<TaylorGap> {
    x.expect_shape(delta.shape())?;
    let lambda = loss.smoothness()?;
    let (l0, g) = loss.value_grad(x)?;
    let l1 = loss.value(&x.add(delta)?)?;
    let radius = delta.norm_l2();
    Ok(TaylorGap {
        gap: (l1 - l0 - delta.dot(&g)?).abs(),
        bound: 0.5 * lambda * radius * radius,
        lambda,
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn groups_01_2() -> Groups {
        Groups::new(vec![vec![0, 1], vec![2]], 3).unwrap()
    }

    #[test]
    fn conjugate_values() {
        let g = [1.0, -2.0];
        assert!(close(PerturbRule::linf(0.1).unwrap().conj_value(&g).unwrap(), 0.3, 1e-15));
        let r = PerturbRule::group(1.0, groups_01_2()).unwrap();
        assert!(close(r.conj_value(&[3.0, 4.0, -2.0]).unwrap(), 7.0, 1e-15));
        let r = PerturbRule::elastic_net(0.1, 0.05).unwrap();
        assert!(close(r.conj_value(&g).unwrap(), 0.55, 1e-15));
    }

    #[test]
    fn pq_examples() {
        assert_eq!(pq_value(0.1, 0.1, 0.05), 0.0);
        assert!(close(pq_value(0.3, 0.1, 0.05), 0.2, 1e-15));
        assert!(close(pq_value(-0.3, 0.1, 0.05), 0.2, 1e-15));
        assert_eq!(pq_derivative(0.1, 0.1, 0.05), 0.0);
        assert_eq!(pq_derivative(-0.1, 0.1, 0.05), 0.0);
    }

    #[test]
    fn argmax_examples() {
        let g = [1.0, -2.0];
        assert_eq!(PerturbRule::linf(0.1).unwrap().argmax_perturb(&g).unwrap(), vec![0.1, -0.1]);
        let r = PerturbRule::group(1.0, groups_01_2()).unwrap();
        let d = r.argmax_perturb(&[3.0, 4.0, -2.0]).unwrap();
        assert!(close(d[0], 0.6, 1e-15) && close(d[1], 0.8, 1e-15) && d[2] == -1.0);
        let r = PerturbRule::elastic_net(0.1, 0.05).unwrap();
        let d = r.argmax_perturb(&g).unwrap();
        assert!(close(d[0], 0.2, 1e-15) && close(d[1], -0.3, 1e-15));
    }

    #[test]
    fn zero_blocks_give_zero_perturbation() {
        let r = PerturbRule::group(1.0, groups_01_2()).unwrap();
        assert_eq!(r.argmax_perturb(&[0.0, 0.0, 2.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        let r = PerturbRule::harmonize_empirical(0.5, &[1.0, 0.0]).unwrap();
        assert_eq!(r.argmax_perturb(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(PerturbRule::linf(0.1).unwrap().argmax_perturb(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn projection_examples() {
        let r = PerturbRule::linf(0.1).unwrap();
        assert_eq!(r.project(&[0.2, -0.05]).unwrap(), vec![0.1, -0.05]);
        let r = PerturbRule::group(1.0, Groups::singletons(1)).unwrap();
        assert_eq!(r.project(&[3.0]).unwrap(), vec![1.0]);
        let one = Groups::new(vec![vec![0, 1]], 2).unwrap();
        let r = PerturbRule::group(1.0, one).unwrap();
        let p = r.project(&[3.0, 4.0]).unwrap();
        assert!(close(p[0], 0.6, 1e-15) && close(p[1], 0.8, 1e-15));
        assert_eq!(r.project(&[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
        assert!(PerturbRule::elastic_net(0.1, 0.1).unwrap().project(&[1.0]).is_err());
    }

    #[test]
    fn grid_oracle_examples() {
        let r = PerturbRule::linf(0.1).unwrap();
        let v = brute_force_conj(&r, &[1.0, -2.0], 0.2, 401).unwrap();
        assert!(close(v, 0.3, 1e-3), "{v}");
        let r = PerturbRule::elastic_net(0.1, 0.05).unwrap();
        let m = brute_force_argmax(&r, &[1.0], 1.0, 401).unwrap();
        assert!(close(m.value, 0.15, 1e-4), "{}", m.value);
        assert!(close(m.maximizer[0], 0.2, 1e-9));
        for rule in [
            PerturbRule::linf(0.1).unwrap(),
            PerturbRule::group(0.1, groups_01_2()).unwrap(),
        ] {
            let d = rule.dim().unwrap_or(3);
            assert_eq!(brute_force_conj(&rule, &vec![0.0; d], 0.2, 41).unwrap(), 0.0);
        }
        assert!(brute_force_conj(&PerturbRule::linf(0.1).unwrap(), &[0.0; 5], 0.2, 11).is_err());
        let big = PerturbRule::group(1.0, Groups::new(vec![vec![0, 1, 2, 3]], 4).unwrap()).unwrap();
        assert!(brute_force_conj(&big, &[1.0; 4], 1.0, 401).is_err());
    }

    #[test]
    fn patch_groups() {
        let g = make_patch_groups(4, 4, 1, 2).unwrap();
        assert_eq!(g.sets().len(), 4);
        assert!(g.sets().iter().all(|s| s.len() == 4));
        assert_eq!(g.sets()[0], vec![0, 1, 4, 5]);
        let g = make_patch_groups(2, 2, 3, 1).unwrap();
        assert_eq!(g.sets().len(), 4);
        assert_eq!(g.sets()[1], vec![1, 5, 9]);
        let g = make_patch_groups(5, 5, 1, 2).unwrap();
        assert_eq!(g.sets().len(), 9);
        assert_eq!(g.sets().iter().map(Vec::len).sum::<usize>(), 25);
        assert_eq!(g.sets()[8], vec![24]);
    }

    #[test]
    fn groups_must_partition() {
        assert!(Groups::new(vec![vec![0], vec![0, 1]], 2).is_err());
        assert!(Groups::new(vec![vec![0]], 2).is_err());
        assert!(Groups::new(vec![vec![2]], 2).is_err());
    }

    #[test]
    fn harmonization_sign_pattern() {
        let r = PerturbRule::harmonize_empirical(0.5, &[1.0, 0.0]).unwrap();
        match &r {
            PerturbRule::WeightedL2 { weights, .. } => assert_eq!(weights, &vec![-0.5, 0.5]),
            _ => unreachable!(),
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let d = r.argmax_perturb(&[h, h]).unwrap();
        assert!(d[0] < 0.0 && d[1] > 0.0);
        // (eps max(A) - 2 eps A) * g/||g||
        assert!(close(d[0], (0.5 - 1.0) * h, 1e-15));
        assert!(close(d[1], 0.5 * h, 1e-15));
        assert!(r.conj_value(&[1.0, 1.0]).is_err());
        assert!(PerturbRule::harmonize_empirical(0.5, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_harmonization_weights_give_no_perturbation() {
        let r = PerturbRule::weighted(0.5, vec![0.0; 3], WeightVariant::Empirical).unwrap();
        assert_eq!(r.argmax_perturb(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn dual_valid_weights() {
        let r = PerturbRule::harmonize_dual_valid(0.5, &[1.0, 0.0], None).unwrap();
        match &r {
            PerturbRule::WeightedL2 { weights, .. } => {
                assert!(close(weights[0], 0.01, 1e-15) && close(weights[1], 1.01, 1e-15))
            }
            _ => unreachable!(),
        }
        assert!(PerturbRule::weighted(1.0, vec![1.0, -1.0], WeightVariant::DualValid).is_err());
    }

    #[test]
    fn quadratic_taylor_gap_is_tight() {
        let q = QuadraticLoss {
            lambda: 2.0,
            center: vec![0.0, 0.0],
        };
        let x = Tensor::vector(vec![0.3, -0.2]);
        let delta = Tensor::vector(vec![0.06, 0.08]);
        let t = taylor_gap(&q, &x, &delta).unwrap();
        assert!(close(t.gap, 0.01, 1e-12) && close(t.bound, 0.01, 1e-12));
        let zero = taylor_gap(&q, &x, &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(zero.gap, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let r = PerturbRule::group(1.0, groups_01_2()).unwrap();
        assert!(r.conj_value(&[1.0, 2.0]).is_err());
    }
}
