//! Two-stage training: the shaping layer first, then the confidence module
//! and size gate jointly against the final combined prediction. Mini-batch
//! Adam over hand-coded gradients; dev accuracy picks the checkpoint.

// Loss functions take every piece of shared state explicitly; folding the
// parameter lists into context structs would hide what a gradient reads.
#![allow(clippy::too_many_arguments)]

use crate::adaptive::{combine, Combiner, DweNetwork, GateTrace, Predictor, PreparedView};
use crate::confidence::{cd_distribution, padded_input, BiasTrace, ConfidenceModule, TempTrace};
use crate::dist::{ensemble_average, log_sum_exp_weights, Distribution};
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Mat};
use crate::metrics::{evaluate, DEFAULT_NUM_BINS};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::retrieval::{interpolate, knn_distribution, Neighbor};
use crate::rng::{stream, SeededRng};
use crate::scalar::{cast, Scalar};
use crate::shaping::{
    retrieval_distribution, shaping_loss, LabeledEmbedding, ShapingExample, ShapingLayer,
    GOLD_PROB_FLOOR,
};

/// Optimizer settings shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig<S: Scalar> {
    pub lr: S,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: S,
    pub adam_beta2: S,
    pub adam_eps: S,
    pub seed: u64,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        Self {
            lr: cast(1e-3),
            batch_size: 32,
            epochs: 10,
            adam_beta1: cast(0.9),
            adam_beta2: cast(0.999),
            adam_eps: cast(1e-8),
            seed: 0,
        }
    }
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        self.adam_config().validate()
    }

    fn adam_config(&self) -> AdamConfig<S> {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// One line of the training log, in print order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog<S: Scalar> {
    pub epoch: usize,
    pub stage: usize,
    pub train_loss: S,
    pub dev_acc: S,
    pub dev_ece: S,
}

/// Deterministic per-epoch example order.
fn epoch_order(n: usize, seed: u64, stage_tag: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed)
        .derive(stage_tag)
        .derive(epoch as u64)
        .shuffle(&mut order);
    order
}

/// Trains the shaping layer in place and returns the per-epoch log. The
/// layer ends at the checkpoint with the best dev retrieval accuracy
/// (strict improvement, earliest epoch on ties); `epochs` 0 is a no-op.
#[allow(clippy::too_many_arguments)]
pub fn train_shaping<S: Scalar>(
    layer: &mut ShapingLayer<S>,
    examples: &[ShapingExample<S>],
    store: &[LabeledEmbedding<S>],
    dev: &[ShapingExample<S>],
    tau: S,
    k: usize,
    num_classes: usize,
    cfg: &TrainConfig<S>,
) -> Result<Vec<EpochLog<S>>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyList {
            context: "shaping training examples".into(),
        });
    }
    if dev.is_empty() {
        return Err(Error::EmptyDev);
    }
    let acfg = cfg.adam_config();
    let w_len = layer.input_dim() * layer.output_dim();
    let mut state = AdamState::new(&[w_len, layer.output_dim()]);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(S, ShapingLayer<S>)> = None;

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(examples.len(), cfg.seed, stream::STAGE1, epoch);
        let mut loss_sum = S::zero();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ShapingExample<S>> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = shaping_loss(layer, &batch, store, tau, k, num_classes)?;
            loss_sum = loss_sum + loss * cast::<S>(batch.len() as f64);
            let (w, b) = layer.params_mut();
            adam_step(
                &mut [w, b],
                &[grads.w.as_slice(), &grads.b],
                &mut state,
                &acfg,
            )?;
        }
        let train_loss = loss_sum / cast::<S>(examples.len() as f64);
        let (dev_acc, dev_ece) = shaping_dev_eval(layer, dev, store, tau, k, num_classes)?;
        logs.push(EpochLog {
            epoch,
            stage: 1,
            train_loss,
            dev_acc,
            dev_ece,
        });
        if best.as_ref().is_none_or(|(b, _)| dev_acc > *b) {
            best = Some((dev_acc, layer.clone()));
        }
    }
    if let Some((_, chosen)) = best {
        *layer = chosen;
    }
    Ok(logs)
}

fn shaping_dev_eval<S: Scalar>(
    layer: &ShapingLayer<S>,
    dev: &[ShapingExample<S>],
    store: &[LabeledEmbedding<S>],
    tau: S,
    k: usize,
    num_classes: usize,
) -> Result<(S, S)> {
    let preds = dev
        .iter()
        .map(|ex| {
            retrieval_distribution(layer, &ex.views, store, tau, k, num_classes)
                .map(|d| (d, ex.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let result = evaluate(&preds, DEFAULT_NUM_BINS)?;
    Ok((result.accuracy, result.ece))
}

/// One stage-2 training example: views already shaped and retrieved against
/// the frozen store, so epochs only repeat the combiner forward pass.
#[derive(Debug, Clone)]
pub struct Stage2Example<S: Scalar> {
    pub views: Vec<PreparedView<S>>,
    pub label: usize,
}

/// How per-size distributions get folded in stage 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CombineMode<S: Scalar> {
    /// Learned gate over all candidate sizes.
    Learned,
    /// Fixed-size interpolation; trains only the confidence module.
    Fixed { m: usize, lambda: S },
}

/// Stage-2 objective variant. The confidence module trains exactly when it
/// is used; the gate trains exactly when the combiner is learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Mode<S: Scalar> {
    pub use_cd: bool,
    pub combiner: CombineMode<S>,
}

impl<S: Scalar> Stage2Mode<S> {
    pub fn full() -> Self {
        Self {
            use_cd: true,
            combiner: CombineMode::Learned,
        }
    }

    pub fn trains_gate(&self) -> bool {
        matches!(self.combiner, CombineMode::Learned)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_cd && !self.trains_gate() {
            return Err(Error::InvalidConfig(
                "stage 2 has nothing to train: confidence disabled and combiner fixed".into(),
            ));
        }
        Ok(())
    }
}

/// Stage-2 gradients, same shapes as the trainable tensors.
#[derive(Debug, Clone)]
pub struct Stage2Grads<S: Scalar> {
    pub w1: Mat<S>,
    pub w2: Mat<S>,
    pub w3: Mat<S>,
    pub w4: Mat<S>,
    pub l1: Mat<S>,
    pub l2: Mat<S>,
}

impl<S: Scalar> Stage2Grads<S> {
    fn zeros(confidence: &ConfidenceModule<S>, gate: &DweNetwork<S>) -> Self {
        let like = |m: &Mat<S>| Mat::zeros(m.rows(), m.cols());
        Self {
            w1: like(confidence.w1()),
            w2: like(confidence.w2()),
            w3: like(confidence.w3()),
            w4: like(confidence.w4()),
            l1: like(gate.l1()),
            l2: like(gate.l2()),
        }
    }

    fn scale(&mut self, factor: S) {
        for m in [
            &mut self.w1,
            &mut self.w2,
            &mut self.w3,
            &mut self.w4,
            &mut self.l1,
            &mut self.l2,
        ] {
            for g in m.as_mut_slice() {
                *g = *g * factor;
            }
        }
    }
}

struct OptionTrace<S: Scalar> {
    m_eff: usize,
    dist: Distribution<S>,
    /// Softmax weight of each retained neighbor under this option.
    pis: Vec<S>,
    temp: Option<(S, TempTrace<S>)>,
}

struct ViewTrace<S: Scalar> {
    combined: Distribution<S>,
    gate: Option<GateTrace<S>>,
    options: Vec<OptionTrace<S>>,
    biases: Option<Vec<(S, BiasTrace<S>)>>,
}

fn option_forward<S: Scalar>(
    confidence: &ConfidenceModule<S>,
    pv: &PreparedView<S>,
    use_cd: bool,
    bias_vals: Option<&[S]>,
    m_eff: usize,
    tau: S,
    k_max: usize,
    num_classes: usize,
) -> Result<OptionTrace<S>> {
    let ns = &pv.retrieval.neighbors;
    let (dist, temp) = if use_cd {
        let f_m = padded_input(&pv.retrieval.feats, m_eff, k_max, pv.retrieval.normalizer)?;
        let (t, trace) = confidence.temperature_traced(&f_m)?;
        let biases = bias_vals.expect("bias values present when the module is used");
        let dist = cd_distribution(ns, m_eff, tau, t, biases, num_classes)?;
        (dist, Some((t, trace)))
    } else {
        (knn_distribution(ns, m_eff, tau, num_classes)?, None)
    };
    // Same exponents the distribution used, kept per neighbor for backward.
    let exponents: Vec<S> = ns.neighbors()[..m_eff]
        .iter()
        .enumerate()
        .map(|(i, n)| match &temp {
            Some((t, _)) => -n.distance / (tau * *t) + bias_vals.unwrap()[i],
            None => -n.distance / tau,
        })
        .collect();
    let weights = log_sum_exp_weights(&exponents)?;
    let total = weights.iter().copied().sum::<S>();
    let pis = weights.iter().map(|&w| w / total).collect();
    Ok(OptionTrace {
        m_eff,
        dist,
        pis,
        temp,
    })
}

/// Forward pass for one view under the current parameters, with every
/// intermediate needed by the backward pass. The returned distribution is
/// computed through the same primitives as [`Predictor::predict_prepared_view`],
/// so training and inference cannot drift apart.
fn view_forward<S: Scalar>(
    confidence: &ConfidenceModule<S>,
    gate: &DweNetwork<S>,
    pv: &PreparedView<S>,
    mode: &Stage2Mode<S>,
    sizes: &[usize],
    tau: S,
    k_max: usize,
    num_classes: usize,
) -> Result<ViewTrace<S>> {
    let ns = &pv.retrieval.neighbors;
    let biases = if mode.use_cd {
        let feats = &pv.retrieval.feats;
        Some(
            feats
                .query_label_probs
                .iter()
                .zip(&feats.self_probs)
                .map(|(&pq, &sp)| confidence.bias_traced(pq, sp))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let bias_vals: Option<Vec<S>> = biases
        .as_ref()
        .map(|bs| bs.iter().map(|(c, _)| *c).collect());

    match mode.combiner {
        CombineMode::Fixed { m, lambda } => {
            let m_eff = m.min(ns.len());
            if m_eff == 0 {
                return Ok(ViewTrace {
                    combined: pv.base_dist.clone(),
                    gate: None,
                    options: Vec::new(),
                    biases,
                });
            }
            let opt = option_forward(
                confidence,
                pv,
                mode.use_cd,
                bias_vals.as_deref(),
                m_eff,
                tau,
                k_max,
                num_classes,
            )?;
            let combined = interpolate(&opt.dist, &pv.base_dist, lambda)?;
            Ok(ViewTrace {
                combined,
                gate: None,
                options: vec![opt],
                biases,
            })
        }
        CombineMode::Learned => {
            if gate.num_options() != sizes.len() {
                return Err(Error::LengthMismatch {
                    context: "gate options".into(),
                    left: gate.num_options(),
                    right: sizes.len(),
                });
            }
            let f_full = padded_input(
                &pv.retrieval.feats,
                ns.len(),
                k_max,
                pv.retrieval.normalizer,
            )?;
            let (weights, gtrace) = gate.weights_traced(&f_full)?;
            let mut options = Vec::with_capacity(sizes.len().saturating_sub(1));
            for &m in sizes.iter().filter(|&&m| m > 0) {
                options.push(option_forward(
                    confidence,
                    pv,
                    mode.use_cd,
                    bias_vals.as_deref(),
                    m.min(ns.len()),
                    tau,
                    k_max,
                    num_classes,
                )?);
            }
            let per_size: Vec<Distribution<S>> = options.iter().map(|o| o.dist.clone()).collect();
            let combined = combine(&weights, &pv.base_dist, &per_size)?;
            Ok(ViewTrace {
                combined,
                gate: Some(gtrace),
                options,
                biases,
            })
        }
    }
}

/// Backward through one option's retrieval distribution into temperature and
/// per-neighbor bias gradients; `d_gold` is the loss gradient at this
/// option's gold probability.
fn option_backward<S: Scalar>(
    confidence: &ConfidenceModule<S>,
    opt: &OptionTrace<S>,
    neighbors: &[Neighbor<S>],
    tau: S,
    gold: usize,
    d_gold: S,
    grads: &mut Stage2Grads<S>,
    d_bias: &mut [S],
) {
    let (t, trace) = opt
        .temp
        .as_ref()
        .expect("option backward only runs with the confidence module");
    let cd_gold = opt.dist.get(gold);
    let mut d_t = S::zero();
    for i in 0..opt.m_eff {
        let indicator = if neighbors[i].label == gold {
            S::one()
        } else {
            S::zero()
        };
        let d_e = d_gold * opt.pis[i] * (indicator - cd_gold);
        d_t = d_t + d_e * neighbors[i].distance / (tau * *t * *t);
        d_bias[i] = d_bias[i] + d_e;
    }
    let d_raw = d_t * sigmoid(trace.raw);
    for h in 0..trace.act.len() {
        let a = trace.act[h];
        *grads.w1.at_mut(0, h) = grads.w1.at(0, h) + d_raw * a;
        let d_pre = d_raw * confidence.w1().at(0, h) * (S::one() - a * a);
        for (x, &fx) in trace.input.iter().enumerate() {
            *grads.w2.at_mut(h, x) = grads.w2.at(h, x) + d_pre * fx;
        }
    }
}

fn view_backward<S: Scalar>(
    confidence: &ConfidenceModule<S>,
    gate: &DweNetwork<S>,
    pv: &PreparedView<S>,
    trace: &ViewTrace<S>,
    mode: &Stage2Mode<S>,
    tau: S,
    gold: usize,
    g_view: S,
    grads: &mut Stage2Grads<S>,
) {
    let neighbors = pv.retrieval.neighbors.neighbors();
    let mut d_bias = vec![S::zero(); neighbors.len()];

    match mode.combiner {
        CombineMode::Fixed { lambda, .. } => {
            if let Some(opt) = trace.options.first() {
                if mode.use_cd {
                    let d_gold = g_view * (S::one() - lambda);
                    option_backward(
                        confidence,
                        opt,
                        neighbors,
                        tau,
                        gold,
                        d_gold,
                        grads,
                        &mut d_bias,
                    );
                }
            }
        }
        CombineMode::Learned => {
            let gtrace = trace.gate.as_ref().expect("gate trace present");
            let w = &gtrace.weights;
            let comb_gold = trace.combined.get(gold);
            // Softmax backward: d logit_j = g * w_j * (q_j[gold] - combined[gold]).
            let d_logits: Vec<S> = (0..w.len())
                .map(|j| {
                    let q_gold = if j == 0 {
                        pv.base_dist.get(gold)
                    } else {
                        trace.options[j - 1].dist.get(gold)
                    };
                    g_view * w[j] * (q_gold - comb_gold)
                })
                .collect();
            let act = &gtrace.act;
            let mut d_act = vec![S::zero(); act.len()];
            for (j, &dz) in d_logits.iter().enumerate() {
                for (h, &a) in act.iter().enumerate() {
                    *grads.l2.at_mut(j, h) = grads.l2.at(j, h) + dz * a;
                    d_act[h] = d_act[h] + dz * gate.l2().at(j, h);
                }
            }
            for h in 0..act.len() {
                let d_pre = d_act[h] * (S::one() - act[h] * act[h]);
                for (x, &fx) in gtrace.input.iter().enumerate() {
                    *grads.l1.at_mut(h, x) = grads.l1.at(h, x) + d_pre * fx;
                }
            }
            if mode.use_cd {
                for (j_m1, opt) in trace.options.iter().enumerate() {
                    let d_gold = g_view * w[j_m1 + 1];
                    option_backward(
                        confidence,
                        opt,
                        neighbors,
                        tau,
                        gold,
                        d_gold,
                        grads,
                        &mut d_bias,
                    );
                }
            }
        }
    }

    if let Some(biases) = &trace.biases {
        for ((_, btrace), &d_c) in biases.iter().zip(&d_bias) {
            if d_c == S::zero() {
                continue;
            }
            for h in 0..btrace.act.len() {
                let a = btrace.act[h];
                *grads.w3.at_mut(0, h) = grads.w3.at(0, h) + d_c * a;
                let d_pre = d_c * confidence.w3().at(0, h) * (S::one() - a * a);
                *grads.w4.at_mut(h, 0) = grads.w4.at(h, 0) + d_pre * btrace.input[0];
                *grads.w4.at_mut(h, 1) = grads.w4.at(h, 1) + d_pre * btrace.input[1];
            }
        }
    }
}

/// Mean cross-entropy of the combined prediction over a batch, plus its
/// analytic gradient for every confidence and gate tensor.
#[allow(clippy::too_many_arguments)]
pub fn stage2_loss_and_grads<S: Scalar>(
    confidence: &ConfidenceModule<S>,
    gate: &DweNetwork<S>,
    batch: &[&Stage2Example<S>],
    mode: &Stage2Mode<S>,
    sizes: &[usize],
    tau: S,
    k_max: usize,
    num_classes: usize,
) -> Result<(S, Stage2Grads<S>)> {
    mode.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyList {
            context: "stage-2 batch".into(),
        });
    }
    let floor = cast::<S>(GOLD_PROB_FLOOR);
    let mut loss = S::zero();
    let mut grads = Stage2Grads::zeros(confidence, gate);

    for example in batch {
        if example.views.is_empty() {
            return Err(Error::EmptyList {
                context: "example views".into(),
            });
        }
        if example.label >= num_classes {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range for {num_classes} classes",
                example.label
            )));
        }
        let traces = example
            .views
            .iter()
            .map(|pv| view_forward(confidence, gate, pv, mode, sizes, tau, k_max, num_classes))
            .collect::<Result<Vec<_>>>()?;
        let combined: Vec<Distribution<S>> = traces.iter().map(|t| t.combined.clone()).collect();
        let p_rec = ensemble_average(&combined)?;
        let p_gold = p_rec.get(example.label);
        loss = loss - p_gold.max(floor).ln();
        if p_gold <= floor {
            // Clamped region: treat the loss as locally constant.
            continue;
        }
        let g_view = -(S::one() / (cast::<S>(example.views.len() as f64) * p_gold));
        for (pv, trace) in example.views.iter().zip(&traces) {
            view_backward(
                confidence,
                gate,
                pv,
                trace,
                mode,
                tau,
                example.label,
                g_view,
                &mut grads,
            );
        }
    }

    let inv = S::one() / cast::<S>(batch.len() as f64);
    loss = loss * inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "stage-2 loss".into(),
        });
    }
    grads.scale(inv);
    Ok((loss, grads))
}

fn stage2_dev_eval<S: Scalar>(
    confidence: &ConfidenceModule<S>,
    gate: &DweNetwork<S>,
    dev: &[Stage2Example<S>],
    mode: &Stage2Mode<S>,
    sizes: &[usize],
    tau: S,
    k_max: usize,
    num_classes: usize,
) -> Result<(S, S)> {
    let combiner = match mode.combiner {
        CombineMode::Learned => Combiner::Learned(gate),
        CombineMode::Fixed { m, lambda } => Combiner::Fixed { m, lambda },
    };
    let predictor = Predictor {
        shaper: None,
        confidence: if mode.use_cd { Some(confidence) } else { None },
        combiner,
        sizes,
        tau,
        k_max,
        // Irrelevant on prepared views; their normalizer is already fixed.
        normalize_distances: false,
        num_classes,
    };
    let preds = dev
        .iter()
        .map(|ex| predictor.predict_prepared(&ex.views).map(|d| (d, ex.label)))
        .collect::<Result<Vec<_>>>()?;
    let result = evaluate(&preds, DEFAULT_NUM_BINS)?;
    Ok((result.accuracy, result.ece))
}

/// Trains the confidence module and gate in place over prepared examples
/// and returns the per-epoch log; checkpointing as in [`train_shaping`].
/// Tensors outside the mode's trainable set are left untouched.
#[allow(clippy::too_many_arguments)]
pub fn train_stage2<S: Scalar>(
    confidence: &mut ConfidenceModule<S>,
    gate: &mut DweNetwork<S>,
    examples: &[Stage2Example<S>],
    dev: &[Stage2Example<S>],
    mode: &Stage2Mode<S>,
    sizes: &[usize],
    tau: S,
    k_max: usize,
    num_classes: usize,
    cfg: &TrainConfig<S>,
) -> Result<Vec<EpochLog<S>>> {
    cfg.validate()?;
    mode.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyList {
            context: "stage-2 training examples".into(),
        });
    }
    if dev.is_empty() {
        return Err(Error::EmptyDev);
    }
    let acfg = cfg.adam_config();
    let mut tensor_lens = Vec::new();
    if mode.use_cd {
        for m in [
            confidence.w1(),
            confidence.w2(),
            confidence.w3(),
            confidence.w4(),
        ] {
            tensor_lens.push(m.rows() * m.cols());
        }
    }
    if mode.trains_gate() {
        for m in [gate.l1(), gate.l2()] {
            tensor_lens.push(m.rows() * m.cols());
        }
    }
    let mut state = AdamState::new(&tensor_lens);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(S, ConfidenceModule<S>, DweNetwork<S>)> = None;

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(examples.len(), cfg.seed, stream::STAGE2, epoch);
        let mut loss_sum = S::zero();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Stage2Example<S>> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = stage2_loss_and_grads(
                confidence,
                gate,
                &batch,
                mode,
                sizes,
                tau,
                k_max,
                num_classes,
            )?;
            loss_sum = loss_sum + loss * cast::<S>(batch.len() as f64);
            let mut params: Vec<&mut [S]> = Vec::with_capacity(tensor_lens.len());
            let mut grad_slices: Vec<&[S]> = Vec::with_capacity(tensor_lens.len());
            if mode.use_cd {
                let [w1, w2, w3, w4] = confidence.params_mut();
                params.extend([w1, w2, w3, w4]);
                grad_slices.extend([
                    grads.w1.as_slice(),
                    grads.w2.as_slice(),
                    grads.w3.as_slice(),
                    grads.w4.as_slice(),
                ]);
            }
            if mode.trains_gate() {
                let [l1, l2] = gate.params_mut();
                params.extend([l1, l2]);
                grad_slices.extend([grads.l1.as_slice(), grads.l2.as_slice()]);
            }
            adam_step(&mut params, &grad_slices, &mut state, &acfg)?;
        }
        let train_loss = loss_sum / cast::<S>(examples.len() as f64);
        let (dev_acc, dev_ece) =
            stage2_dev_eval(confidence, gate, dev, mode, sizes, tau, k_max, num_classes)?;
        logs.push(EpochLog {
            epoch,
            stage: 2,
            train_loss,
            dev_acc,
            dev_ece,
        });
        if best.as_ref().is_none_or(|(b, _, _)| dev_acc > *b) {
            best = Some((dev_acc, confidence.clone(), gate.clone()));
        }
    }
    if let Some((_, c, g)) = best {
        *confidence = c;
        *gate = g;
    }
    Ok(logs)
}
