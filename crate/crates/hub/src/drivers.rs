//! Composite experiments built from the core modules.
//!
//! Every driver returns typed rows; the command layer turns them into CSV.

use rand::Rng;
use rayon::prelude::*;

use advsal_core::dualnorm::{brute_force_argmax, Groups, PerturbRule, WeightVariant};
use advsal_core::evalmetrics::{
    aopc_lerf, aopc_morf, area_fractions, binary_scores, channel_means, diffroar, five_band_scores, gini,
    interp_attack, label_sanity, ssim, topk_dice, topk_intersection, AttackConfig, DiffRoarPoint, RetrainSpec,
    SanityReport, SanityThresholds,
};
use advsal_core::evalmetrics::cascading_randomization;
use advsal_core::gradnet::{parse_arch, Network, OutputMode};
use advsal_core::rng::{self, derive_seed};
use advsal_core::saliency::simple_grad;
use advsal_core::synthgen::SynthSample;
use advsal_core::trainloop::{evaluate, train, Dataset, Protocol, TrainConfig};
use advsal_core::Tensor;

use crate::config::RunConfig;
use crate::error::{HubError, Result};
use crate::setup::{self, Budget, Data};

/// Simple-gradient maps for the true label of each sample.
pub fn label_maps(net: &Network, inputs: &[Tensor], labels: &[usize]) -> Result<Vec<Tensor>> {
    Ok(inputs
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| simple_grad(net, x, y).map(|m| m.values))
        .collect::<advsal_core::Result<_>>()?)
}

fn is_zero(map: &Tensor) -> bool {
    map.data().iter().all(|&v| v == 0.0)
}

/// Gini index, with an all-zero map scored 0.
pub fn gini_or_zero(map: &Tensor) -> Result<f64> {
    if is_zero(map) {
        Ok(0.0)
    } else {
        Ok(gini(map.data())?)
    }
}

/// Top-k intersection, with an all-zero operand scored 0.
pub fn overlap_or_zero(a: &Tensor, b: &Tensor, k: f64) -> Result<f64> {
    if is_zero(a) || is_zero(b) {
        Ok(0.0)
    } else {
        Ok(topk_intersection(a.data(), b.data(), k)?)
    }
}

fn dice_or_zero(a: &Tensor, b: &Tensor, k: f64) -> Result<f64> {
    match (is_zero(a), is_zero(b)) {
        (true, true) => Ok(1.0),
        (false, false) => Ok(topk_dice(a.data(), b.data(), k)?),
        _ => Ok(0.0),
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityRow {
    pub rule: String,
    pub samples: usize,
    /// Closed-form conjugate at the sample with the largest gap.
    pub closed_form: f64,
    /// Grid-oracle value at that sample.
    pub brute_force: f64,
    /// Largest `|brute_force - closed_form|` over samples.
    pub abs_gap: f64,
    /// Largest `|delta* . g - h(delta*) - closed_form|` over samples.
    pub certificate_gap: f64,
    /// Largest max-norm distance between grid and closed-form maximizers.
    pub maximizer_gap: f64,
}

/// Smallest grid half-width containing the rule's maximizer for every
/// gradient in `[-1, 1]^d`.
pub fn duality_grid_bound(rule: &PerturbRule) -> f64 {
    match rule {
        PerturbRule::LinfBall { eps } | PerturbRule::GroupBall { eps, .. } => *eps,
        PerturbRule::ElasticNet { eps1, eps2 } => eps1 + 2.0 * eps2,
        PerturbRule::WeightedL2 { eps, weights, .. } => 2.0 * eps * weights.iter().cloned().fold(0.0, f64::max),
    }
}

/// Rules checked by [`verify_duality`] for gradients of dimension `dim`.
pub fn duality_rules(dim: usize, seed: u64) -> Result<Vec<PerturbRule>> {
    let pairs: Vec<Vec<usize>> = (0..dim).collect::<Vec<_>>().chunks(2).map(<[usize]>::to_vec).collect();
    let mut rng = rng::stream(seed, "duality-weights");
    let weights = (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect();
    Ok(vec![
        PerturbRule::linf(0.1)?,
        PerturbRule::group(0.1, Groups::new(pairs, dim)?)?,
        PerturbRule::elastic_net(0.1, 0.05)?,
        PerturbRule::weighted(0.1, weights, WeightVariant::DualValid)?,
    ])
}

/// Compares closed-form conjugates against the grid oracle on `samples`
/// gradients drawn uniformly from `[-1, 1]^dim`.
pub fn verify_duality(samples: usize, steps: usize, dim: usize, seed: u64) -> Result<Vec<DualityRow>> {
    if dim == 0 || dim > 4 {
        return Err(HubError::Config(format!("duality.dim must be in 1..=4, got {dim}")));
    }
    let mut rows = Vec::new();
    for rule in duality_rules(dim, seed)? {
        let mut rng = rng::stream(seed, rule.name());
        let mut row = DualityRow {
            rule: rule.name().to_string(),
            samples,
            closed_form: 0.0,
            brute_force: 0.0,
            abs_gap: 0.0,
            certificate_gap: 0.0,
            maximizer_gap: 0.0,
        };
        for _ in 0..samples {
            let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let closed = rule.conj_value(&g)?;
            let grid = brute_force_argmax(&rule, &g, duality_grid_bound(&rule), steps)?;
            let delta = rule.argmax_perturb(&g)?;
            let dot: f64 = delta.iter().zip(&g).map(|(d, gi)| d * gi).sum();
            let cert = (dot - rule.penalty(&delta)? - closed).abs();
            let gap = (grid.value - closed).abs();
            if gap >= row.abs_gap {
                row.abs_gap = gap;
                row.closed_form = closed;
                row.brute_force = grid.value;
            }
            row.certificate_gap = row.certificate_gap.max(cert);
            let mgap = grid
                .maximizer
                .iter()
                .zip(&delta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            row.maximizer_gap = row.maximizer_gap.max(mgap);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Ground-truth and sparsity scores of one simple-gradient map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapScores {
    pub gini: f64,
    pub binary_acc: f64,
    pub binary_recall: f64,
    pub binary_precision: f64,
    pub band_acc: f64,
    pub band_recall: f64,
    pub band_precision: f64,
    pub band_fpr: f64,
}

/// Scores the true-label simple-gradient map of every sample against its
/// ternary mask, using the mask's own area fractions as quantiles.
pub fn map_scores(net: &Network, samples: &[SynthSample]) -> Result<Vec<MapScores>> {
    Ok(samples
        .par_iter()
        .map(|s| -> Result<MapScores> {
            let map = simple_grad(net, &s.image, s.label)?.values;
            let (q2, q1) = area_fractions(&s.mask);
            let b = binary_scores(map.data(), &s.mask, q2)?;
            let f = five_band_scores(map.data(), &s.mask, q2, q1)?;
            Ok(MapScores {
                gini: gini_or_zero(&map)?,
                binary_acc: b.pixel_acc,
                binary_recall: b.recall,
                binary_precision: b.precision,
                band_acc: f.pixel_acc,
                band_recall: f.recall,
                band_precision: f.precision,
                band_fpr: f.fpr,
            })
        })
        .collect::<Result<_>>()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityScores {
    pub aopc_morf: f64,
    pub aopc_lerf: f64,
    /// Top-k intersection with the attention map, when present.
    pub attention_overlap: Option<f64>,
}

/// AOPC curves of the predicted-class logit and attention overlap per sample.
pub fn fidelity_scores(
    net: &Network,
    samples: &[SynthSample],
    baseline: &[f64],
    steps: usize,
    topk: f64,
) -> Result<Vec<FidelityScores>> {
    Ok(samples
        .par_iter()
        .map(|s| -> Result<FidelityScores> {
            let class = net.predict(&s.image)?;
            let map = simple_grad(net, &s.image, class)?.values;
            let morf = aopc_morf(net, &s.image, map.data(), steps, baseline, class, OutputMode::Logit)?;
            let lerf = aopc_lerf(net, &s.image, map.data(), steps, baseline, class, OutputMode::Logit)?;
            let attention_overlap = match &s.attention {
                Some(a) => Some(overlap_or_zero(&simple_grad(net, &s.image, s.label)?.values, a, topk)?),
                None => None,
            };
            Ok(FidelityScores {
                aopc_morf: morf,
                aopc_lerf: lerf,
                attention_overlap,
            })
        })
        .collect::<Result<_>>()?)
}

pub fn dataset_baseline(data: &Data) -> Result<Vec<f64>> {
    Ok(channel_means(&data.train_set.inputs)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRow {
    pub index: usize,
    pub intersection: f64,
    pub ssim: f64,
    pub drop_intersection: f64,
    pub drop_ssim: f64,
    pub accepted_steps: usize,
    pub x_adv: Tensor,
}

/// Attacks every sample with `base`; sample `i` uses seed `derive_seed(base.seed, i)`.
pub fn attack_rows(net: &Network, inputs: &[Tensor], base: &AttackConfig) -> Result<Vec<AttackRow>> {
    Ok(inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<AttackRow> {
            let cfg = AttackConfig {
                seed: derive_seed(base.seed, i as u64),
                ..base.clone()
            };
            let r = interp_attack(net, x, &cfg)?;
            Ok(AttackRow {
                index: i,
                intersection: r.intersection,
                ssim: r.ssim,
                drop_intersection: r.drop_intersection,
                drop_ssim: r.drop_ssim,
                accepted_steps: r.accepted_steps,
                x_adv: r.x_adv,
            })
        })
        .collect::<Result<_>>()?)
}

pub fn attack_config(cfg: &RunConfig) -> Result<AttackConfig> {
    Ok(AttackConfig {
        budget: cfg.get("attack.budget")?,
        steps: cfg.get("attack.steps")?,
        seed: cfg.get("seed")?,
        k_fraction: cfg.get("attack.k")?,
        ..AttackConfig::default()
    })
}

/// Per-image map similarity between two runs; `image` is `None` on the mean row.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub protocol: String,
    pub image: Option<usize>,
    pub ssim: f64,
    pub dice: f64,
}

/// Indices of the swapped training and test samples and of the shared
/// evaluation set (test samples that stay in the test split).
#[derive(Debug, Clone, PartialEq)]
pub struct SwapPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Seeded choice of `round(fraction * train_len)` samples swapped between splits.
pub fn swap_plan(train_len: usize, test_len: usize, fraction: f64, seed: u64) -> Result<SwapPlan> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(HubError::Config("stability.swap must lie in [0, 1]".into()));
    }
    let n = (fraction * train_len as f64).round() as usize;
    if n >= test_len {
        return Err(HubError::Input(format!(
            "swapping {n} samples leaves no evaluation set out of {test_len} test samples"
        )));
    }
    let mut tr = rng::permutation(&mut rng::stream(seed, "swap-train"), train_len);
    let mut te = rng::permutation(&mut rng::stream(seed, "swap-test"), test_len);
    tr.truncate(n);
    te.truncate(n);
    tr.sort_unstable();
    te.sort_unstable();
    let eval = (0..test_len).filter(|i| te.binary_search(i).is_err()).collect();
    Ok(SwapPlan {
        train: tr,
        test: te,
        eval,
    })
}

/// Trains each protocol twice: once on the original training split with
/// the first seed, once on the swapped split with the second, and compares
/// their true-label maps on the shared evaluation set.
pub fn stability(cfg: &RunConfig, data: &Data, budget: &Budget) -> Result<Vec<StabilityRow>> {
    let protocols: Vec<String> = cfg.list("stability.protocols")?;
    let seeds: Vec<u64> = cfg.list("stability.seeds")?;
    if seeds.len() != 2 {
        return Err(HubError::Config("stability.seeds needs exactly two seeds".into()));
    }
    if protocols.is_empty() {
        return Err(HubError::Config("stability.protocols is empty".into()));
    }
    let k: f64 = cfg.get("stability.topk")?;
    let plan = swap_plan(data.train.len(), data.test.len(), cfg.get("stability.swap")?, cfg.get("data.seed")?)?;
    let mut swapped = data.train_set.clone();
    for (&a, &b) in plan.train.iter().zip(&plan.test) {
        swapped.inputs[a] = data.test_set.inputs[b].clone();
        swapped.labels[a] = data.test_set.labels[b];
        if let (Some(att), Some(test_att)) = (swapped.attention.as_mut(), data.test_set.attention.as_ref()) {
            att[a] = test_att[b].clone();
        }
    }
    let eval_x: Vec<Tensor> = plan.eval.iter().map(|&i| data.test_set.inputs[i].clone()).collect();
    let eval_y: Vec<usize> = plan.eval.iter().map(|&i| data.test_set.labels[i]).collect();
    let shape = data.input_shape();
    let classes = cfg.get("data.classes")?;
    let mut rows = Vec::new();
    for p in &protocols {
        let pc = cfg.clone().with("protocol", p)?;
        let run = |train_set: &Dataset, seed: u64| -> Result<Network> {
            let tc = setup::train_config(&pc, &shape, seed)?;
            let net = setup::init_network(&pc, &shape, classes, seed)?;
            let (net, _) = train(net, train_set, None, &tc, None)?;
            budget.check("stability training")?;
            Ok(net)
        };
        let a = run(&data.train_set, seeds[0])?;
        let b = run(&swapped, seeds[1])?;
        let ma = label_maps(&a, &eval_x, &eval_y)?;
        let mb = label_maps(&b, &eval_x, &eval_y)?;
        let per: Vec<(f64, f64)> = ma
            .iter()
            .zip(&mb)
            .map(|(x, y)| Ok((ssim(x, y)?, dice_or_zero(x, y, k)?)))
            .collect::<Result<_>>()?;
        for (&i, &(s, d)) in plan.eval.iter().zip(&per) {
            rows.push(StabilityRow {
                protocol: p.clone(),
                image: Some(i),
                ssim: s,
                dice: d,
            });
        }
        rows.push(StabilityRow {
            protocol: p.clone(),
            image: None,
            ssim: mean(&per.iter().map(|v| v.0).collect::<Vec<_>>()),
            dice: mean(&per.iter().map(|v| v.1).collect::<Vec<_>>()),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub top5: f64,
    pub top10: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub pairs: usize,
    /// Consecutive pairs whose top-5% overlap does not decrease.
    pub nondecreasing: usize,
    /// Top-5% overlap at the largest scale minus that at scale 0.
    pub gain: f64,
    /// Accuracy at scale 0 minus the lowest accuracy on the grid.
    pub accuracy_drop: f64,
}

/// Trains one harmonized model per `sweep.eps` entry and scores its maps
/// against the attention maps of the evaluation samples.
pub fn harmonize_sweep(cfg: &RunConfig, data: &Data, budget: &Budget) -> Result<Vec<SweepRow>> {
    let mut grid: Vec<f64> = cfg.list("sweep.eps")?;
    if !grid.contains(&0.0) {
        return Err(HubError::Config("sweep.eps must include 0".into()));
    }
    if grid.iter().any(|e| !(*e >= 0.0)) {
        return Err(HubError::Config("sweep.eps entries must be >= 0".into()));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let eval = data.eval_samples(cfg.get("eval.count")?);
    if eval.iter().any(|s| s.attention.is_none()) {
        return Err(HubError::Input("harmonization sweep needs attention maps".into()));
    }
    let seed = cfg.get("seed")?;
    let mut rows = Vec::new();
    for &eps in &grid {
        let ec = cfg.clone().with("protocol", "harmonize")?.with("harmonize_eps", eps)?;
        let (net, _) = setup::train_model(&ec, data, seed, budget)?;
        let per: Vec<(f64, f64)> = eval
            .par_iter()
            .map(|s| -> Result<(f64, f64)> {
                let m = simple_grad(&net, &s.image, s.label)?.values;
                let a = s.attention.as_ref().expect("checked");
                Ok((overlap_or_zero(&m, a, 0.05)?, overlap_or_zero(&m, a, 0.10)?))
            })
            .collect::<Result<_>>()?;
        rows.push(SweepRow {
            eps,
            top5: mean(&per.iter().map(|v| v.0).collect::<Vec<_>>()),
            top10: mean(&per.iter().map(|v| v.1).collect::<Vec<_>>()),
            accuracy: evaluate(&net, &data.test_set)?.accuracy,
        });
    }
    Ok(rows)
}

/// Trend summary of sweep rows sorted by scale.
pub fn sweep_summary(rows: &[SweepRow]) -> SweepSummary {
    let pairs = rows.len().saturating_sub(1);
    let nondecreasing = rows.windows(2).filter(|w| w[1].top5 >= w[0].top5).count();
    let (gain, accuracy_drop) = match (rows.first(), rows.last()) {
        (Some(first), Some(last)) => (
            last.top5 - first.top5,
            first.accuracy - rows.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min),
        ),
        _ => (0.0, 0.0),
    };
    SweepSummary {
        pairs,
        nondecreasing,
        gain,
        accuracy_drop,
    }
}

/// DiffROAR of `net`'s true-label maps, retraining standard models for
/// `roar.epochs` with each of `seeds`.
pub fn diffroar_run(cfg: &RunConfig, data: &Data, net: &Network, seeds: &[u64]) -> Result<Vec<DiffRoarPoint>> {
    if data.test.is_empty() {
        return Err(HubError::Input("DiffROAR needs a test split".into()));
    }
    let train_maps = label_maps(net, &data.train_set.inputs, &data.train_set.labels)?;
    let test_maps = label_maps(net, &data.test_set.inputs, &data.test_set.labels)?;
    let spec = RetrainSpec {
        input_shape: data.input_shape(),
        arch: parse_arch(cfg.str("arch")?).map_err(|e| HubError::Config(e.to_string()))?,
        classes: cfg.get("data.classes")?,
        cfg: TrainConfig {
            epochs: cfg.get("roar.epochs")?,
            batch_size: cfg.get("batch_size")?,
            learning_rate: cfg.get("lr")?,
            optimizer: setup::optimizer(cfg)?,
            protocol: Protocol::Standard,
            ..TrainConfig::default()
        },
        seeds: seeds.to_vec(),
    };
    let ks: Vec<f64> = cfg.list("roar.k")?;
    Ok(diffroar(&data.train_set, &data.test_set, &train_maps, &test_maps, &ks, &spec)?)
}

/// Mean difference over removal fractions.
pub fn diffroar_score(points: &[DiffRoarPoint]) -> f64 {
    mean(&points.iter().map(|p| p.diff).collect::<Vec<_>>())
}

/// Training split with labels permuted by a seeded shuffle.
pub fn permuted_labels(data: &Dataset, seed: u64) -> Dataset {
    let pi = rng::permutation(&mut rng::stream(seed, "label-permutation"), data.len());
    Dataset {
        labels: pi.iter().map(|&i| data.labels[i]).collect(),
        ..data.clone()
    }
}

pub fn sanity_thresholds(cfg: &RunConfig) -> Result<SanityThresholds> {
    Ok(SanityThresholds {
        chance_margin: cfg.get("sanity.chance_margin")?,
        norm_ratio: cfg.get("sanity.norm_ratio")?,
        ssim: cfg.get("sanity.ssim")?,
    })
}

/// Trains on permuted labels and compares against `reference` on the test split.
pub fn label_sanity_run(cfg: &RunConfig, data: &Data, reference: &Network, budget: &Budget) -> Result<SanityReport> {
    let seed = cfg.get("seed")?;
    let shape = data.input_shape();
    let tc = setup::train_config(cfg, &shape, seed)?;
    let net = setup::init_network(cfg, &shape, cfg.get("data.classes")?, seed)?;
    let (randomized, _) = train(net, &permuted_labels(&data.train_set, seed), None, &tc, None)?;
    budget.check("label-permuted training")?;
    Ok(label_sanity(&randomized, reference, &data.test_set, &sanity_thresholds(cfg)?)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeRow {
    pub seed: u64,
    pub randomized: usize,
    pub layer: Option<usize>,
    /// SSIM to the original map, averaged over samples.
    pub ssim: f64,
}

/// Cascading randomization averaged over `samples` for each seed.
pub fn cascade_run(net: &Network, samples: &[SynthSample], seeds: &[u64]) -> Result<Vec<CascadeRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let per: Vec<Vec<advsal_core::evalmetrics::CascadeStep>> = samples
            .par_iter()
            .map(|s| cascading_randomization(net, &s.image, s.label, seed))
            .collect::<advsal_core::Result<_>>()?;
        let Some(first) = per.first() else {
            return Err(HubError::Input("cascade check needs samples".into()));
        };
        for (j, step) in first.iter().enumerate() {
            rows.push(CascadeRow {
                seed,
                randomized: step.randomized,
                layer: step.layer,
                ssim: mean(&per.iter().map(|p| p[j].ssim).collect::<Vec<_>>()),
            });
        }
    }
    Ok(rows)
}
