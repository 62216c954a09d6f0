//! Training objectives, recorded on a [`Graph`] so they can be differentiated.

use crate::error::{Error, Result};
use crate::facegen::{ParsingMap, NUM_COMPONENTS};
use crate::networks::{Discriminator, Encoder, Graph};
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Encoder blocks (0-based) whose activations feed the style loss.
pub const STYLE_LAYERS: [usize; 3] = [1, 2, 3];

/// `(λ_s, λ_rec, λ_G)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_rec: f64,
    pub lambda_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_s: 1.0, lambda_rec: 10.0, lambda_g: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_rec", self.lambda_rec), ("lambda_g", self.lambda_g)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-step loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub style: f64,
    pub reconstruction: f64,
    pub adversarial: f64,
    pub total: f64,
    pub discriminator: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,L_s,L_rec,L_G,total,L_D";

    pub fn csv_row(&self, step: usize) -> String {
        format!("{step},{},{},{},{},{}", self.style, self.reconstruction, self.adversarial, self.total, self.discriminator)
    }
}

/// `λ_s·L_s + λ_rec·L_rec + λ_G·L_G` on plain values.
pub fn total_gen_loss(style: f64, reconstruction: f64, adversarial: f64, weights: LossWeights) -> LossReport {
    LossReport {
        style,
        reconstruction,
        adversarial,
        total: weights.lambda_s * style + weights.lambda_rec * reconstruction + weights.lambda_g * adversarial,
        discriminator: 0.0,
    }
}

/// The same weighted sum on the tape. Terms with zero weight may be `None`.
pub fn total_gen_loss_var<T: Scalar>(g: &mut Graph<'_, T>, terms: [Option<Var>; 3], weights: LossWeights) -> Result<Var> {
    let lambdas = [weights.lambda_s, weights.lambda_rec, weights.lambda_g];
    let mut total: Option<Var> = None;
    for (term, lambda) in terms.into_iter().zip(lambdas) {
        if lambda == 0.0 {
            continue;
        }
        let t = term.ok_or_else(|| Error::invalid("loss term with nonzero weight was not computed"))?;
        let scaled = g.tape.scale(t, T::lit(lambda));
        total = Some(match total {
            Some(acc) => g.tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => g.constant(crate::tensor::Tensor::scalar(T::zero())),
    })
}

/// Pixel MSE plus feature MSE over every discriminator block at every scale.
pub fn reconstruction_loss<T: Scalar>(g: &mut Graph<'_, T>, hq: Var, restored: Var, discs: &[Discriminator]) -> Result<Var> {
    let mut total = g.tape.mse(restored, hq)?;
    for d in discs {
        let real = d.rescale(g, hq)?;
        let fake = d.rescale(g, restored)?;
        let (_, real_feats) = d.forward(g, real)?;
        let (_, fake_feats) = d.forward(g, fake)?;
        for (r, f) in real_feats.into_iter().zip(fake_feats) {
            let term = g.tape.mse(f, r)?;
            total = g.tape.add(total, term)?;
        }
    }
    Ok(total)
}

/// `Σ_s −score_s`.
pub fn hinge_gen_loss<T: Scalar>(g: &mut Graph<'_, T>, scores: &[Var]) -> Result<Var> {
    let mut total = g.constant(crate::tensor::Tensor::scalar(T::zero()));
    for &s in scores {
        let m = g.tape.mean(s);
        total = g.tape.sub(total, m)?;
    }
    Ok(total)
}

/// `Σ_s [mean(max(0, 1 − real_s)) + mean(max(0, 1 + fake_s))]`.
pub fn hinge_disc_loss<T: Scalar>(g: &mut Graph<'_, T>, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::shape("hinge_disc_loss", format!("{} fake scores", real.len()), fake.len().to_string()));
    }
    let mut total = g.constant(crate::tensor::Tensor::scalar(T::zero()));
    for (&r, &f) in real.iter().zip(fake) {
        let neg = g.tape.scale(r, -T::one());
        let r_margin = g.tape.offset(neg, T::one());
        let r_hinge = g.tape.relu(r_margin);
        let r_mean = g.tape.mean(r_hinge);
        let f_margin = g.tape.offset(f, T::one());
        let f_hinge = g.tape.relu(f_margin);
        let f_mean = g.tape.mean(f_hinge);
        total = g.tape.add(total, r_mean)?;
        total = g.tape.add(total, f_mean)?;
    }
    Ok(total)
}

/// `(F ⊙ M)(F ⊙ M)ᵀ / max(1, Σ M)` for a `[C,H,W]` feature and `[1,H,W]` mask.
pub fn masked_gram<T: Scalar>(g: &mut Graph<'_, T>, feat: Var, mask: Var) -> Result<Var> {
    let masked = g.tape.mask_mul(feat, mask)?;
    let count = g.value(mask).sum().max(T::one());
    g.tape.gram(masked, count.recip())
}

/// Squared Frobenius distances between masked Gram matrices of the
/// extractor's activations, summed over style layers and parsing classes.
pub fn style_loss<T: Scalar>(g: &mut Graph<'_, T>, hq: Var, restored: Var, parsing: &ParsingMap, extractor: &Encoder) -> Result<Var> {
    let (_, real_feats) = extractor.net.forward(g, hq)?;
    let (_, fake_feats) = extractor.net.forward(g, restored)?;
    let mut total = g.constant(crate::tensor::Tensor::scalar(T::zero()));
    for &layer in &STYLE_LAYERS {
        let (rf, ff) = (real_feats[layer], fake_feats[layer]);
        let (_, h, w) = g.value(rf).chw()?;
        let scaled = parsing.resize_nearest(h, w);
        for j in 0..NUM_COMPONENTS as u8 {
            let mask = g.constant(scaled.mask(j));
            let gr = masked_gram(g, rf, mask)?;
            let gf = masked_gram(g, ff, mask)?;
            let d = g.tape.sq_dist(gf, gr)?;
            total = g.tape.add(total, d)?;
        }
    }
    Ok(total)
}

/// Mean squared difference between two embeddings.
pub fn dafe_alignment_loss<T: Scalar>(g: &mut Graph<'_, T>, v_hq: Var, v_lq: Var) -> Result<Var> {
    let (a, b) = (g.value(v_hq).len(), g.value(v_lq).len());
    if a != b {
        return Err(Error::shape("dafe_alignment_loss", format!("[{a}] embedding"), format!("[{b}]")));
    }
    g.tape.mse(v_lq, v_hq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facegen::generate_face;
    use crate::networks::{Owner, ParamStore};
    use crate::rng::substream;
    use crate::tensor::{finite_diff_grad, relative_error, Tensor, DEFAULT_FD_STEP};
    use rand::Rng;

    fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
        let mut r = substream(seed, "loss-test");
        Tensor::from_fn(shape, |_| r.random_range(0.0..1.0))
    }

    fn scalar_of<T: Scalar>(g: &Graph<'_, T>, v: Var) -> f64 {
        g.value(v).data()[0].as_f64()
    }

    fn discs(store: &mut ParamStore) -> Vec<Discriminator> {
        [1, 2, 4].iter().map(|&d| Discriminator::new(store, 3, d).unwrap()).collect()
    }

    #[test]
    fn hinge_examples() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store, &[]);
        let s: Vec<Var> = [0.5, 0.2, 0.1].iter().map(|&v| g.constant(Tensor::scalar(v))).collect();
        let l = hinge_gen_loss(&mut g, &s).unwrap();
        assert!((scalar_of(&g, l) + 0.8).abs() < 1e-15);
        let ones: Vec<Var> = (0..3).map(|_| g.constant(Tensor::scalar(1.0))).collect();
        let l = hinge_gen_loss(&mut g, &ones).unwrap();
        assert_eq!(scalar_of(&g, l), -3.0);

        let mk = |g: &mut Graph<'_, f64>, v: f64| -> Vec<Var> { (0..3).map(|_| g.constant(Tensor::full(&[4], v))).collect() };
        for (real, fake, expected) in [(1.0, -1.0, 0.0), (0.0, 0.0, 6.0), (2.0, -2.0, 0.0)] {
            let (r, f) = (mk(&mut g, real), mk(&mut g, fake));
            let l = hinge_disc_loss(&mut g, &r, &f).unwrap();
            assert_eq!(scalar_of(&g, l), expected);
        }
    }

    #[test]
    fn masked_gram_cases() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store, &[]);
        let f = g.constant(rand_tensor(1, &[3, 4, 4]));
        let zero = g.constant(Tensor::zeros(&[1, 4, 4]));
        let gm = masked_gram(&mut g, f, zero).unwrap();
        assert!(g.value(gm).data().iter().all(|&v| v == 0.0));

        let one = g.constant(Tensor::full(&[1, 5, 5], 1.0));
        let c = g.constant(Tensor::full(&[1, 5, 5], 1.0));
        let gm = masked_gram(&mut g, c, one).unwrap();
        assert_eq!(g.value(gm).data(), &[1.0]);

        let m = g.constant(rand_tensor(2, &[1, 4, 4]).map(|v| if v > 0.5 { 1.0 } else { 0.0 }));
        let gm = masked_gram(&mut g, f, m).unwrap();
        let d = g.value(gm).data();
        for i in 0..3 {
            assert!(d[i * 3 + i] >= 0.0);
            for j in 0..3 {
                assert_eq!(d[i * 3 + j], d[j * 3 + i]);
            }
        }
    }

    #[test]
    fn weighted_total() {
        let r = total_gen_loss(2.0, 3.0, 4.0, LossWeights { lambda_s: 1.0, lambda_rec: 1.0, lambda_g: 1.0 });
        assert_eq!(r.total, 9.0);
        let r = total_gen_loss(2.0, 3.0, 4.0, LossWeights { lambda_s: 0.0, lambda_rec: 0.0, lambda_g: 0.0 });
        assert_eq!(r.total, 0.0);
        let r = total_gen_loss(2.0, 3.0, 4.0, LossWeights { lambda_s: 0.0, lambda_rec: 1.0, lambda_g: 0.0 });
        assert_eq!(r.total, 3.0);
        assert!(LossWeights { lambda_s: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn reconstruction_zero_and_constant_cases() {
        let mut store = ParamStore::new();
        let ds = discs(&mut store);
        let h = rand_tensor(3, &[3, 16, 16]);
        let mut g = Graph::new(&store, &[]);
        let (a, b) = (g.constant(h.clone()), g.constant(h.clone()));
        let l = reconstruction_loss(&mut g, a, b, &ds).unwrap();
        assert_eq!(scalar_of(&g, l), 0.0);

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            *store.get_mut(id) = Tensor::zeros(store.get(id).shape());
        }
        let mut g = Graph::new(&store, &[]);
        let a = g.constant(Tensor::full(&[3, 16, 16], 0.2));
        let b = g.constant(Tensor::full(&[3, 16, 16], 0.5));
        let l = reconstruction_loss(&mut g, a, b, &ds).unwrap();
        assert!((scalar_of(&g, l) - 0.09).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_gradient_matches_fd() {
        let mut store = ParamStore::new();
        let ds = discs(&mut store);
        let h = rand_tensor(4, &[3, 8, 8]);
        let x0 = rand_tensor(5, &[3, 8, 8]);
        let eval = |x: &Tensor, grad: bool| {
            let mut g = Graph::new(&store, &[]);
            let hv = g.constant(h.clone());
            let xv = if grad { g.tape.param(x.clone()) } else { g.constant(x.clone()) };
            let l = reconstruction_loss(&mut g, hv, xv, &ds).unwrap();
            (scalar_of(&g, l), grad.then(|| g.tape.backward(l).unwrap().take(xv).unwrap()))
        };
        let analytic = eval(&x0, true).1.unwrap();
        let numeric = finite_diff_grad(|x| Ok(eval(x, false).0), &x0, DEFAULT_FD_STEP).unwrap();
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn style_zero_symmetric_and_gradient() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, 9, Owner::HqEncoder, 8).unwrap();
        let face: crate::facegen::FaceSample = generate_face(2, 32).unwrap();
        let parsing = face.parsing.resize_nearest(8, 8);
        let image = crate::tensor::resize_bilinear(&face.image, 8, 8).unwrap();
        let other = rand_tensor(6, &[3, 8, 8]);
        let eval = |a: &Tensor, b: &Tensor, grad: bool| {
            let mut g = Graph::new(&store, &[]);
            let av = g.constant(a.clone());
            let bv = if grad { g.tape.param(b.clone()) } else { g.constant(b.clone()) };
            let l = style_loss(&mut g, av, bv, &parsing, &enc).unwrap();
            (scalar_of(&g, l), grad.then(|| g.tape.backward(l).unwrap().take(bv).unwrap()))
        };
        assert_eq!(eval(&image, &image, false).0, 0.0);
        let (ab, ba) = (eval(&image, &other, false).0, eval(&other, &image, false).0);
        assert!(ab > 0.0 && (ab - ba).abs() <= 1e-12 * ab);
        let analytic = eval(&image, &other, true).1.unwrap();
        let numeric = finite_diff_grad(|x| Ok(eval(&image, x, false).0), &other, DEFAULT_FD_STEP).unwrap();
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn dafe_alignment_cases() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store, &[]);
        let a = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let b = g.tape.param(Tensor::vector(vec![0.0, 0.0]));
        let l = dafe_alignment_loss(&mut g, a, b).unwrap();
        assert_eq!(scalar_of(&g, l), 1.0);
        // d/dv_LQ = 2 (v_LQ − v_HQ) / E
        assert_eq!(g.tape.backward(l).unwrap().get(b).unwrap().data(), &[-1.0, -1.0]);
        let same = dafe_alignment_loss(&mut g, a, a).unwrap();
        assert_eq!(scalar_of(&g, same), 0.0);
        let c = g.constant(Tensor::vector(vec![1.0]));
        assert!(dafe_alignment_loss(&mut g, a, c).is_err());
    }
}
