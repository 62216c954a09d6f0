//! Analytic-vs-finite-difference checks of every differentiable operation,
//! every loss, and a two-scale generator with DAFE statistics.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::facegen::{generate_face, FaceSample, ParsingMap};
use crate::losses::{dafe_alignment_loss, hinge_disc_loss, hinge_gen_loss, masked_gram, reconstruction_loss, style_loss, total_gen_loss_var, LossWeights};
use crate::networks::{Discriminator, Encoder, FcHead, Generator, GeneratorConfig, Graph, Owner, ParamId, ParamStore};
use crate::rng::{derive_seed, substream};
use crate::sfft::{facial_attention, normalize, sft_apply, weighted_sum, AttentionNet, Sff};
use crate::tensor::{relative_error, resize_bilinear, ConvGeom, Tensor, UpsampleMode, Var, DEFAULT_FD_STEP};

/// Largest acceptable relative error.
pub const GRADSUITE_TOLERANCE: f64 = 1e-4;
/// Coordinates probed per parameter tensor; inputs are probed in full.
pub const PARAM_COORDS: usize = 24;

const SEED: u64 = 0x6772_6164;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub rel_error: f64,
    pub coords: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error < GRADSUITE_TOLERANCE
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed() { "ok" } else { "FAIL" };
        format!("{verdict:4} {:32} rel_err={:.3e} coords={}", self.name, self.rel_error, self.coords)
    }
}

type Build<'a> = Box<dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var> + 'a>;

struct Probe<'a> {
    name: &'static str,
    store: ParamStore<f64>,
    trainable: Vec<Owner>,
    inputs: Vec<Tensor<f64>>,
    params: Vec<ParamId>,
    build: Build<'a>,
}

fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = substream(seed, "gradsuite");
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

impl Probe<'_> {
    /// Root value `sum(out ⊙ W)` with a fixed random `W`, plus gradients when asked.
    fn eval(&self, store: &ParamStore<f64>, inputs: &[Tensor<f64>], grad: bool) -> Result<(f64, Vec<Tensor<f64>>, Vec<Tensor<f64>>)> {
        let mut g = Graph::new(store, &self.trainable);
        let vars: Vec<Var> = inputs.iter().map(|t| if grad { g.tape.param(t.clone()) } else { g.constant(t.clone()) }).collect();
        let out = (self.build)(&mut g, &vars)?;
        let w = g.constant(uniform(SEED ^ 0x77, g.value(out).shape(), -1.0, 1.0));
        let prod = g.tape.mul(out, w)?;
        let root = g.tape.sum(prod);
        let value = g.value(root).data()[0];
        if !grad {
            return Ok((value, Vec::new(), Vec::new()));
        }
        let mut tape_grads = g.tape.backward(root)?;
        let input_grads = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| tape_grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        let pg = g.backward(root)?;
        let param_grads = self.params.iter().map(|&id| pg.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))).collect();
        Ok((value, input_grads, param_grads))
    }

    fn run(&self) -> Result<GradCheck> {
        let h = DEFAULT_FD_STEP;
        let (_, input_grads, param_grads) = self.eval(&self.store, &self.inputs, true)?;
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());

        let mut inputs = self.inputs.clone();
        for k in 0..inputs.len() {
            for i in 0..inputs[k].len() {
                let orig = inputs[k].data()[i];
                inputs[k].data_mut()[i] = orig + h;
                let plus = self.eval(&self.store, &inputs, false)?.0;
                inputs[k].data_mut()[i] = orig - h;
                let minus = self.eval(&self.store, &inputs, false)?.0;
                inputs[k].data_mut()[i] = orig;
                analytic.push(input_grads[k].data()[i]);
                numeric.push((plus - minus) / (2.0 * h));
            }
        }

        let mut store = self.store.clone();
        for (k, &id) in self.params.iter().enumerate() {
            let n = store.get(id).len();
            let mut rng = substream(derive_seed(SEED, self.name), &format!("coords/{k}"));
            let coords = if n <= PARAM_COORDS { (0..n).collect() } else { sample(&mut rng, n, PARAM_COORDS).into_vec() };
            for i in coords {
                let orig = store.get(id).data()[i];
                store.get_mut(id).data_mut()[i] = orig + h;
                let plus = self.eval(&store, &self.inputs, false)?.0;
                store.get_mut(id).data_mut()[i] = orig - h;
                let minus = self.eval(&store, &self.inputs, false)?.0;
                store.get_mut(id).data_mut()[i] = orig;
                analytic.push(param_grads[k].data()[i]);
                numeric.push((plus - minus) / (2.0 * h));
            }
        }

        let coords = analytic.len();
        let rel_error = relative_error(&Tensor::vector(analytic), &Tensor::vector(numeric));
        Ok(GradCheck { name: self.name.to_string(), rel_error, coords })
    }
}

fn op<'a>(name: &'static str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var> + 'a) -> Probe<'a> {
    Probe { name, store: ParamStore::new(), trainable: Vec::new(), inputs, params: Vec::new(), build: Box::new(build) }
}

/// Zero-initialized biases put ReLU inputs exactly on the kink wherever the
/// incoming activations vanish, and zero-initialized output layers would make
/// every upstream gradient trivially zero. Small random values replace every
/// all-zero parameter tensor.
fn jitter_zero_params(store: &mut ParamStore<f64>, seed: u64) {
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.get(id).data().iter().all(|&v| v == 0.0)).collect();
    for (k, id) in ids.into_iter().enumerate() {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = uniform(derive_seed(seed, "bias") ^ k as u64, &shape, -0.1, 0.1);
    }
}

fn small_face() -> Result<(Tensor<f64>, ParsingMap)> {
    let face: FaceSample<f64> = generate_face(SEED, 32)?;
    Ok((resize_bilinear(&face.image, 8, 8)?, face.parsing.resize_nearest(8, 8)))
}

fn op_probes<'a>() -> Vec<Probe<'a>> {
    let u = |seed: u64, shape: &[usize]| uniform(seed, shape, -1.0, 1.0);
    let pos = |seed: u64, shape: &[usize]| uniform(seed, shape, 0.5, 1.5);
    let x = || u(1, &[2, 4, 4]);
    vec![
        op("add", vec![x(), u(2, &[2, 4, 4])], |g, v| g.tape.add(v[0], v[1])),
        op("sub", vec![x(), u(2, &[2, 4, 4])], |g, v| g.tape.sub(v[0], v[1])),
        op("mul", vec![x(), u(2, &[2, 4, 4])], |g, v| g.tape.mul(v[0], v[1])),
        op("scale", vec![x()], |g, v| Ok(g.tape.scale(v[0], -1.7))),
        op("offset", vec![x()], |g, v| Ok(g.tape.offset(v[0], 0.3))),
        op("recip", vec![pos(3, &[2, 4, 4])], |g, v| Ok(g.tape.recip(v[0]))),
        op("relu", vec![x()], |g, v| Ok(g.tape.relu(v[0]))),
        op("sigmoid", vec![u(4, &[2, 4, 4]).map(|t| 3.0 * t)], |g, v| Ok(g.tape.sigmoid(v[0]))),
        op("conv2d_same_bias", vec![u(5, &[2, 6, 6]), u(6, &[3, 2, 3, 3]), u(7, &[3])], |g, v| {
            g.tape.conv2d(v[0], v[1], Some(v[2]), ConvGeom::same(3))
        }),
        op("conv2d_stride2", vec![u(8, &[2, 7, 7]), u(9, &[2, 2, 3, 3])], |g, v| {
            g.tape.conv2d(v[0], v[1], None, ConvGeom { stride: 2, pad: 1 })
        }),
        op("upsample_nearest", vec![x()], |g, v| g.tape.upsample(v[0], 2, UpsampleMode::Nearest)),
        op("upsample_bilinear", vec![x()], |g, v| g.tape.upsample(v[0], 2, UpsampleMode::Bilinear)),
        op("resize_bilinear_down", vec![u(10, &[2, 8, 8])], |g, v| g.tape.resize_bilinear(v[0], 3, 5)),
        op("channel_mean", vec![x()], |g, v| g.tape.channel_mean(v[0])),
        op("channel_std", vec![x()], |g, v| g.tape.channel_std(v[0])),
        op("channel_affine", vec![x(), u(11, &[2]), u(12, &[2])], |g, v| g.tape.channel_affine(v[0], v[1], v[2])),
        op("mask_mul", vec![x(), u(13, &[1, 4, 4])], |g, v| g.tape.mask_mul(v[0], v[1])),
        op("linear", vec![u(14, &[6]), u(15, &[4, 6]), u(16, &[4])], |g, v| g.tape.linear(v[0], v[1], v[2])),
        op("concat", vec![x(), u(17, &[3, 4, 4])], |g, v| g.tape.concat(&[v[0], v[1]])),
        op("slice", vec![u(18, &[5, 4, 4])], |g, v| g.tape.slice(v[0], 1, 3)),
        op("reshape", vec![x()], |g, v| g.tape.reshape(v[0], &[4, 8])),
        op("sum", vec![x()], |g, v| Ok(g.tape.sum(v[0]))),
        op("mean", vec![x()], |g, v| Ok(g.tape.mean(v[0]))),
        op("gram", vec![u(19, &[3, 4, 4])], |g, v| g.tape.gram(v[0], 1.0 / 48.0)),
        op("mse", vec![x(), u(20, &[2, 4, 4])], |g, v| g.tape.mse(v[0], v[1])),
        op("sq_dist", vec![x(), u(21, &[2, 4, 4])], |g, v| g.tape.sq_dist(v[0], v[1])),
        op("sft_normalize", vec![u(22, &[4, 8, 8])], |g, v| normalize(g, v[0])),
        op("sft_apply", vec![u(23, &[4, 8, 8]), u(24, &[4]), u(25, &[4])], |g, v| {
            sft_apply(g, v[0], &Sff { scale: v[1], bias: v[2] })
        }),
        op("weighted_sum", vec![x(), u(26, &[2, 4, 4]), pos(27, &[1, 4, 4]), pos(28, &[1, 4, 4])], |g, v| {
            weighted_sum(g, &v[0..2], &v[2..4])
        }),
    ]
}

fn loss_probes<'a>() -> Result<Vec<Probe<'a>>> {
    let (face, parsing) = small_face()?;
    let restored = uniform(30, &[3, 8, 8], 0.0, 1.0);
    let mut probes = Vec::new();

    let mut store = ParamStore::new();
    let discs: Vec<Discriminator> = [1, 2, 4].iter().map(|&d| Discriminator::new(&mut store, SEED, d)).collect::<Result<_>>()?;
    jitter_zero_params(&mut store, 1);
    {
        let (discs, hq) = (discs.clone(), face.clone());
        probes.push(Probe {
            name: "loss_reconstruction",
            store: store.clone(),
            trainable: Vec::new(),
            inputs: vec![restored.clone()],
            params: Vec::new(),
            build: Box::new(move |g, v| {
                let h = g.constant(hq.clone());
                reconstruction_loss(g, h, v[0], &discs)
            }),
        });
    }
    {
        let discs2 = discs.clone();
        let hq = face.clone();
        let params = store.ids_of(&[Owner::Discriminator]);
        probes.push(Probe {
            name: "loss_hinge_discriminator",
            store: store.clone(),
            trainable: vec![Owner::Discriminator],
            inputs: vec![restored.clone()],
            params,
            build: Box::new(move |g, v| {
                let real = g.constant(hq.clone());
                let (mut rs, mut fs) = (Vec::new(), Vec::new());
                for d in &discs2 {
                    let (r, f) = (d.rescale(g, real)?, d.rescale(g, v[0])?);
                    rs.push(d.forward(g, r)?.0);
                    fs.push(d.forward(g, f)?.0);
                }
                hinge_disc_loss(g, &rs, &fs)
            }),
        });
    }
    {
        let discs3 = discs.clone();
        probes.push(Probe {
            name: "loss_hinge_generator",
            store: store.clone(),
            trainable: Vec::new(),
            inputs: vec![restored.clone()],
            params: Vec::new(),
            build: Box::new(move |g, v| {
                let mut scores = Vec::new();
                for d in &discs3 {
                    let x = d.rescale(g, v[0])?;
                    scores.push(d.forward(g, x)?.0);
                }
                hinge_gen_loss(g, &scores)
            }),
        });
    }
    // Scores straddling the hinge kinks would make central differences
    // meaningless, so plain scalar scores stay well inside each branch.
    probes.push(op("loss_hinge_scores", vec![Tensor::scalar(0.4), Tensor::scalar(-0.3), Tensor::scalar(2.5)], |g, v| {
        let d = hinge_disc_loss(g, &v[0..1], &v[1..2])?;
        let gen = hinge_gen_loss(g, &v[1..3])?;
        g.tape.add(d, gen)
    }));
    // Masks are parsing indicators, constant with respect to training.
    let mask = uniform(32, &[1, 4, 4], 0.0, 1.0).map(|m| if m > 0.5 { 1.0 } else { 0.0 });
    probes.push(op("loss_masked_gram", vec![uniform(31, &[3, 4, 4], -1.0, 1.0)], move |g, v| {
        let m = g.constant(mask.clone());
        masked_gram(g, v[0], m)
    }));

    let mut enc_store = ParamStore::new();
    let enc = Encoder::new(&mut enc_store, SEED, Owner::HqEncoder, 8)?;
    jitter_zero_params(&mut enc_store, 2);
    {
        let (enc, hq, parsing) = (enc.clone(), face.clone(), parsing.clone());
        probes.push(Probe {
            name: "loss_style",
            store: enc_store.clone(),
            trainable: Vec::new(),
            inputs: vec![restored.clone()],
            params: Vec::new(),
            build: Box::new(move |g, v| {
                let h = g.constant(hq.clone());
                style_loss(g, h, v[0], &parsing, &enc)
            }),
        });
    }

    let mut lq_store = ParamStore::new();
    let lq_enc = Encoder::new(&mut lq_store, SEED ^ 1, Owner::LqEncoder, 8)?;
    jitter_zero_params(&mut lq_store, 3);
    let lq_params = lq_store.ids_of(&[Owner::LqEncoder]);
    probes.push(Probe {
        name: "loss_dafe_alignment",
        store: lq_store,
        trainable: vec![Owner::LqEncoder],
        inputs: vec![uniform(33, &[8], -1.0, 1.0), restored.clone()],
        params: lq_params,
        build: Box::new(move |g, v| {
            let e = lq_enc.embed(g, v[1])?;
            dafe_alignment_loss(g, v[0], e)
        }),
    });

    probes.push(op("loss_total_generator", vec![Tensor::scalar(0.7), Tensor::scalar(0.2), Tensor::scalar(-0.4)], |g, v| {
        let w = LossWeights { lambda_s: 1.3, lambda_rec: 10.0, lambda_g: 0.1 };
        total_gen_loss_var(g, [Some(v[0]), Some(v[1]), Some(v[2])], w)
    }));
    Ok(probes)
}

fn network_probes<'a>() -> Result<Vec<Probe<'a>>> {
    let (face, parsing) = small_face()?;
    let mut probes = Vec::new();

    let mut store = ParamStore::new();
    let att = AttentionNet::new(&mut store, SEED, "attention", Owner::Generator, 2, 3)?;
    jitter_zero_params(&mut store, 4);
    let params = store.ids_of(&[Owner::Generator]);
    probes.push(Probe {
        name: "sfft_facial_attention",
        store,
        trainable: vec![Owner::Generator],
        inputs: (0..3).map(|k| uniform(40 + k, &[2, 4, 4], -1.0, 1.0)).collect(),
        params,
        build: Box::new(move |g, v| {
            let maps = facial_attention(g, v, &att)?;
            g.tape.concat(&maps)
        }),
    });

    let config = GeneratorConfig { scales: 2, base_channels: 4, channels: vec![4, 4], resolution: 8 };
    let mut store = ParamStore::new();
    let generator = Generator::new(&mut store, SEED, config)?;
    let heads: Vec<FcHead> = (0..2).map(|i| FcHead::new(&mut store, SEED, i + 1, 8, 4)).collect::<Result<_>>()?;
    jitter_zero_params(&mut store, 5);
    let mut params = generator.trainable_ids(&store);
    params.extend(store.ids_of(&[Owner::FcHead]));
    probes.push(Probe {
        name: "generator_two_scale_sfft_dafe",
        store,
        trainable: vec![Owner::Generator, Owner::FcHead],
        inputs: vec![uniform(50, &[8], -1.0, 1.0)],
        params,
        build: Box::new(move |g, v| {
            let stats: Vec<Sff> = heads.iter().map(|h| h.forward(g, v[0])).collect::<Result<_>>()?;
            generator.forward(g, &face, &parsing, Some(&stats))
        }),
    });
    Ok(probes)
}

/// Runs every check and reports one entry per probe.
pub fn run_gradsuite() -> Result<Vec<GradCheck>> {
    let mut probes = op_probes();
    probes.extend(loss_probes()?);
    probes.extend(network_probes()?);
    probes.iter().map(Probe::run).collect()
}
