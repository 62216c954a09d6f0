//! Training stages: HQ-encoder pretraining, DAFE alignment of the LQ encoder,
//! and alternating hinge-GAN training of the generator.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::{
    dafe_alignment_loss, hinge_disc_loss, hinge_gen_loss, reconstruction_loss, style_loss, total_gen_loss_var, LossReport, LossWeights,
};
use crate::networks::state::{
    FLAG_DAFE_ALIGNED, FLAG_GAN_TRAINED, FLAG_HQ_PRETRAINED, GROUP_DISCRIMINATOR, GROUP_GENERATOR, GROUP_HQ_PRETRAIN, GROUP_LQ_ENCODER,
};
use crate::networks::{Ablation, GradAccum, Graph, Mode, ModelState, Owner};
use crate::rng::{derive_indexed, substream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::RunConfig;
use super::corpus::Pair;

/// Owners the generator step may update.
pub const GENERATOR_TRAINABLE: [Owner; 2] = [Owner::Generator, Owner::FcHead];

/// Batch indices of `step` in `stage`, derived only from the master seed.
pub fn batch_indices(seed: u64, stage: &str, step: usize, corpus: usize, batch: usize) -> Vec<usize> {
    let mut rng = substream(derive_indexed(seed, stage, step as u64), "batch");
    (0..batch).map(|_| rng.random_range(0..corpus)).collect()
}

fn scalar<T: Scalar>(t: &Tensor<T>) -> f64 {
    t.data()[0].as_f64()
}

fn require_nonempty<T: Scalar>(corpus: &[Pair<T>], what: &str) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::invalid(format!("{what} corpus is empty")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub steps: usize,
    /// Mean reconstruction MSE of each step's batch.
    pub losses: Vec<f64>,
}

/// Trains the HQ encoder as the encoder half of an autoencoder on HQ faces
/// (pixel MSE), then marks it pretrained.
pub fn pretrain_hq_encoder<T: Scalar>(cfg: &RunConfig, state: &mut ModelState<T>, corpus: &[Pair<T>]) -> Result<PretrainReport> {
    require_nonempty(corpus, "pretraining")?;
    state.ensure_optimizer(GROUP_HQ_PRETRAIN, cfg.lr_encoder)?;
    let mut losses = Vec::with_capacity(cfg.pretrain_steps);
    let w = T::lit(1.0 / cfg.batch_size as f64);
    for step in 0..cfg.pretrain_steps {
        let mut acc = GradAccum::new(&state.store);
        let mut total = 0.0;
        for i in batch_indices(cfg.seed, "pretrain", step, corpus.len(), cfg.batch_size) {
            let mut g = Graph::new(&state.store, &[Owner::HqEncoder, Owner::HqDecoder]);
            let x = g.constant(corpus[i].hq().clone());
            let v = state.nets.hq_encoder.embed(&mut g, x)?;
            let y = state.nets.hq_decoder.forward(&mut g, v)?;
            let loss = g.tape.mse(y, x)?;
            total += scalar(g.value(loss));
            acc.add(g.backward(loss)?, w)?;
        }
        state.apply_grads(GROUP_HQ_PRETRAIN, &acc)?;
        losses.push(total / cfg.batch_size as f64);
    }
    state.flags.insert(FLAG_HQ_PRETRAINED.into());
    Ok(PretrainReport { steps: cfg.pretrain_steps, losses })
}

/// Embedding MSE before and after alignment on a held-out set.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentReport {
    pub steps: usize,
    pub initial_mse: f64,
    pub final_mse: f64,
}

impl AlignmentReport {
    pub fn ratio(&self) -> f64 {
        if self.initial_mse == 0.0 {
            return 0.0;
        }
        self.final_mse / self.initial_mse
    }
}

fn embed<T: Scalar>(state: &ModelState<T>, owner: Owner, image: &Tensor<T>) -> Result<Tensor<T>> {
    let enc = match owner {
        Owner::HqEncoder => &state.nets.hq_encoder,
        Owner::LqEncoder => state
            .nets
            .lq_encoder
            .as_ref()
            .ok_or_else(|| Error::State("this model has no LQ encoder (sfft_only ablation)".into()))?,
        other => return Err(Error::invalid(format!("{other} is not an encoder"))),
    };
    let mut g = Graph::new(&state.store, &[]);
    let x = g.constant(image.clone());
    let v = enc.embed(&mut g, x)?;
    Ok(g.value(v).clone())
}

pub fn hq_embedding<T: Scalar>(state: &ModelState<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    embed(state, Owner::HqEncoder, image)
}

pub fn lq_embedding<T: Scalar>(state: &ModelState<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    embed(state, Owner::LqEncoder, image)
}

/// Mean over `pairs` of the per-sample embedding MSE between `E_HQ(H)` and
/// `E_LQ(I)`.
pub fn mean_alignment_mse<T: Scalar>(state: &ModelState<T>, pairs: &[Pair<T>]) -> Result<f64> {
    require_nonempty(pairs, "alignment")?;
    let mut total = 0.0;
    for p in pairs {
        let (a, b) = (hq_embedding(state, p.hq())?, lq_embedding(state, &p.lq)?);
        total += a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / a.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

fn ensure_unchanged<T: Scalar>(state: &ModelState<T>, owner: Owner, before: &[Tensor<T>]) -> Result<()> {
    if state.store.snapshot(owner) != before {
        return Err(Error::Contract(format!("{owner} weights changed during a stage that must keep them frozen")));
    }
    Ok(())
}

/// Updates only the LQ encoder so that `E_LQ(I)` matches the frozen `E_HQ(H)`.
pub fn run_dafe_training<T: Scalar>(cfg: &RunConfig, state: &mut ModelState<T>, train: &[Pair<T>], heldout: &[Pair<T>]) -> Result<AlignmentReport> {
    if !state.has_flag(FLAG_HQ_PRETRAINED) {
        return Err(Error::State("DAFE alignment needs a pretrained HQ encoder; run pretrain-encoder first".into()));
    }
    if state.nets.lq_encoder.is_none() {
        return Err(Error::State("the sfft_only ablation has no LQ encoder to align".into()));
    }
    require_nonempty(train, "DAFE training")?;
    let hq_before = state.store.snapshot(Owner::HqEncoder);
    let targets: Vec<Tensor<T>> = train.iter().map(|p| hq_embedding(state, p.hq())).collect::<Result<_>>()?;
    let initial_mse = mean_alignment_mse(state, heldout)?;
    state.ensure_optimizer(GROUP_LQ_ENCODER, cfg.lr_encoder)?;
    let w = T::lit(1.0 / cfg.batch_size as f64);
    for step in 0..cfg.dafe_steps {
        let mut acc = GradAccum::new(&state.store);
        for i in batch_indices(cfg.seed, "dafe", step, train.len(), cfg.batch_size) {
            let lq_encoder = state.nets.lq_encoder.as_ref().expect("checked above");
            let mut g = Graph::new(&state.store, &[Owner::LqEncoder]);
            let target = g.constant(targets[i].clone());
            let x = g.constant(train[i].lq.clone());
            let v = lq_encoder.embed(&mut g, x)?;
            let loss = dafe_alignment_loss(&mut g, target, v)?;
            acc.add(g.backward(loss)?, w)?;
        }
        state.apply_grads(GROUP_LQ_ENCODER, &acc)?;
    }
    ensure_unchanged(state, Owner::HqEncoder, &hq_before)?;
    let final_mse = mean_alignment_mse(state, heldout)?;
    if cfg.dafe_steps > 0 {
        state.flags.insert(FLAG_DAFE_ALIGNED.into());
    }
    Ok(AlignmentReport { steps: cfg.dafe_steps, initial_mse, final_mse })
}

/// Rejects any trainable set that would let an encoder move.
pub fn check_generator_trainable(trainable: &[Owner]) -> Result<()> {
    if let Some(o) = trainable.iter().find(|o| o.is_encoder()) {
        return Err(Error::Contract(format!("{o} must stay frozen during GAN training")));
    }
    Ok(())
}

/// Loss terms of one generator evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GenTerms {
    pub style: f64,
    pub reconstruction: f64,
    pub adversarial: f64,
    pub total: f64,
}

/// Records the generator objective for one sample on `g` and returns the
/// weighted total (`None` when every weight is zero) with all term values.
pub fn generator_objective<T: Scalar>(g: &mut Graph<'_, T>, state: &ModelState<T>, pair: &Pair<T>, weights: LossWeights) -> Result<(crate::tensor::Var, GenTerms)> {
    let nets = &state.nets;
    let fake = nets.generate(g, &pair.lq, &pair.face.parsing, Mode::Train { hq: pair.hq() })?;
    let real = g.constant(pair.hq().clone());
    let rec = reconstruction_loss(g, real, fake, &nets.discriminators)?;
    let sty = style_loss(g, real, fake, &pair.face.parsing, &nets.hq_encoder)?;
    let mut scores = Vec::with_capacity(nets.discriminators.len());
    for d in &nets.discriminators {
        let x = d.rescale(g, fake)?;
        scores.push(d.forward(g, x)?.0);
    }
    let adv = hinge_gen_loss(g, &scores)?;
    let total = total_gen_loss_var(g, [Some(sty), Some(rec), Some(adv)], weights)?;
    let terms = GenTerms {
        style: scalar(g.value(sty)),
        reconstruction: scalar(g.value(rec)),
        adversarial: scalar(g.value(adv)),
        total: scalar(g.value(total)),
    };
    Ok((total, terms))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanReport {
    pub rows: Vec<LossReport>,
}

/// Alternating hinge-GAN training. Each step updates the discriminators with
/// the generator frozen, then the generator and FC heads with discriminators
/// and encoders frozen. Rows are appended to `log` as CSV when given.
pub fn run_gan_training<T: Scalar>(cfg: &RunConfig, state: &mut ModelState<T>, train: &[Pair<T>], mut log: Option<&mut dyn Write>) -> Result<GanReport> {
    require_nonempty(train, "GAN training")?;
    if state.config.ablation == Ablation::SfftDafe && !state.has_flag(FLAG_DAFE_ALIGNED) && cfg.gan_steps > 0 {
        return Err(Error::State("GAN training with DAFE needs an aligned LQ encoder; run align-dafe first".into()));
    }
    if cfg.weights.lambda_s > 0.0 && !state.has_flag(FLAG_HQ_PRETRAINED) && cfg.gan_steps > 0 {
        return Err(Error::State("the style loss needs a pretrained HQ encoder; run pretrain-encoder first".into()));
    }
    check_generator_trainable(&GENERATOR_TRAINABLE)?;
    state.ensure_optimizer(GROUP_GENERATOR, cfg.lr_generator)?;
    state.ensure_optimizer(GROUP_DISCRIMINATOR, cfg.lr_discriminator)?;
    if let Some(l) = log.as_deref_mut() {
        writeln!(l, "{}", LossReport::CSV_HEADER)?;
    }
    let frozen: Vec<(Owner, Vec<Tensor<T>>)> = [Owner::HqEncoder, Owner::LqEncoder].iter().map(|&o| (o, state.store.snapshot(o))).collect();
    let b = cfg.batch_size as f64;
    let w = T::lit(1.0 / b);
    let mut report = GanReport::default();
    for step in 0..cfg.gan_steps {
        let batch = batch_indices(cfg.seed, "gan", step, train.len(), cfg.batch_size);

        let mut acc = GradAccum::new(&state.store);
        let mut l_d = 0.0;
        for &i in &batch {
            let pair = &train[i];
            let mut g = Graph::new(&state.store, &[Owner::Discriminator]);
            let fake = state.nets.generate(&mut g, &pair.lq, &pair.face.parsing, Mode::Train { hq: pair.hq() })?;
            let real = g.constant(pair.hq().clone());
            let (mut rs, mut fs) = (Vec::new(), Vec::new());
            for d in &state.nets.discriminators {
                let (r, f) = (d.rescale(&mut g, real)?, d.rescale(&mut g, fake)?);
                rs.push(d.forward(&mut g, r)?.0);
                fs.push(d.forward(&mut g, f)?.0);
            }
            let loss = hinge_disc_loss(&mut g, &rs, &fs)?;
            l_d += scalar(g.value(loss));
            acc.add(g.backward(loss)?, w)?;
        }
        state.apply_grads(GROUP_DISCRIMINATOR, &acc)?;

        let mut acc = GradAccum::new(&state.store);
        let mut sums = GenTerms::default();
        for &i in &batch {
            let mut g = Graph::new(&state.store, &GENERATOR_TRAINABLE);
            let (total, terms) = generator_objective(&mut g, state, &train[i], cfg.weights)?;
            sums.style += terms.style;
            sums.reconstruction += terms.reconstruction;
            sums.adversarial += terms.adversarial;
            sums.total += terms.total;
            if g.tape.requires_grad(total) {
                acc.add(g.backward(total)?, w)?;
            }
        }
        state.apply_grads(GROUP_GENERATOR, &acc)?;
        for (o, before) in &frozen {
            ensure_unchanged(state, *o, before)?;
        }

        let row = LossReport {
            style: sums.style / b,
            reconstruction: sums.reconstruction / b,
            adversarial: sums.adversarial / b,
            total: sums.total / b,
            discriminator: l_d / b,
        };
        if let Some(l) = log.as_deref_mut() {
            writeln!(l, "{}", row.csv_row(step))?;
        }
        report.rows.push(row);
    }
    if cfg.gan_steps > 0 {
        state.flags.insert(FLAG_GAN_TRAINED.into());
    }
    Ok(report)
}

/// Mean generator terms over a corpus in train mode, without updating anything.
pub fn mean_generator_terms<T: Scalar>(state: &ModelState<T>, pairs: &[Pair<T>], weights: LossWeights) -> Result<GenTerms> {
    require_nonempty(pairs, "evaluation")?;
    let mut sums = GenTerms::default();
    for p in pairs {
        let mut g = Graph::new(&state.store, &[]);
        let (_, t) = generator_objective(&mut g, state, p, weights)?;
        sums.style += t.style;
        sums.reconstruction += t.reconstruction;
        sums.adversarial += t.adversarial;
        sums.total += t.total;
    }
    let n = pairs.len() as f64;
    Ok(GenTerms {
        style: sums.style / n,
        reconstruction: sums.reconstruction / n,
        adversarial: sums.adversarial / n,
        total: sums.total / n,
    })
}
