//! Named parameter storage and per-forward binding onto a [`Tape`].

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// The subnetwork a parameter belongs to; freezing is decided per owner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    Generator,
    FcHead,
    Discriminator,
    HqEncoder,
    HqDecoder,
    LqEncoder,
}

impl Owner {
    pub const ALL: [Owner; 6] = [
        Owner::Generator,
        Owner::FcHead,
        Owner::Discriminator,
        Owner::HqEncoder,
        Owner::HqDecoder,
        Owner::LqEncoder,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Owner::Generator => "generator",
            Owner::FcHead => "fc_head",
            Owner::Discriminator => "discriminator",
            Owner::HqEncoder => "hq_encoder",
            Owner::HqDecoder => "hq_decoder",
            Owner::LqEncoder => "lq_encoder",
        }
    }

    pub fn is_encoder(self) -> bool {
        matches!(self, Owner::HqEncoder | Owner::LqEncoder)
    }
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Owner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Owner::ALL
            .into_iter()
            .find(|o| o.tag() == s)
            .ok_or_else(|| Error::format("owner tag", s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Scalar = f64> {
    pub name: String,
    pub owner: Owner,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f64> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, owner: Owner, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::State(format!("duplicate parameter {name}")));
        }
        self.entries.push(ParamEntry { name, owner, value });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// He-normal initialization from a substream named after the parameter.
    pub fn init_normal(&mut self, seed: u64, name: &str, owner: Owner, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let mut rng = substream(seed, &format!("init/{name}"));
        let t = Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(std * z)
        });
        self.insert(name, owner, t)
    }

    pub fn init_zeros(&mut self, name: &str, owner: Owner, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, owner, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids owned by any of `owners`, in insertion order.
    pub fn ids_of(&self, owners: &[Owner]) -> Vec<ParamId> {
        self.ids().filter(|&id| owners.contains(&self.entries[id.0].owner)).collect()
    }

    pub fn has_owner(&self, owner: Owner) -> bool {
        self.entries.iter().any(|e| e.owner == owner)
    }

    /// Copies of every tensor owned by `owner`, for before/after comparisons.
    pub fn snapshot(&self, owner: Owner) -> Vec<Tensor<T>> {
        self.entries.iter().filter(|e| e.owner == owner).map(|e| e.value.clone()).collect()
    }

    /// Mutable access to several distinct parameters at once; `ids` must be
    /// strictly increasing.
    pub fn many_mut(&mut self, ids: &[ParamId]) -> Result<Vec<&mut Tensor<T>>> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("many_mut: ids must be strictly increasing"));
        }
        let mut out = Vec::with_capacity(ids.len());
        let mut want = ids.iter().peekable();
        for (i, e) in self.entries.iter_mut().enumerate() {
            if want.peek().is_some_and(|id| id.0 == i) {
                want.next();
                out.push(&mut e.value);
            }
        }
        if want.peek().is_some() {
            return Err(Error::invalid("many_mut: unknown parameter id"));
        }
        Ok(out)
    }

    /// Replaces every tensor owned by `owner` with the corresponding entry of
    /// `other` (matched by name).
    pub fn copy_owner_from(&mut self, other: &ParamStore<T>, owner: Owner) -> Result<()> {
        for e in self.entries.iter_mut().filter(|e| e.owner == owner) {
            let src = other
                .find(&e.name)
                .ok_or_else(|| Error::State(format!("missing parameter {}", e.name)))?;
            let src = other.get(src);
            e.value.expect_same_shape("copy_owner_from", src)?;
            e.value = src.clone();
        }
        Ok(())
    }
}

/// Gradients of the trainable parameters touched by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads<T: Scalar = f64> {
    pub grads: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.iter().find(|(i, _)| *i == id).map(|(_, g)| g)
    }
}

/// Sums scaled gradients across samples of a batch.
#[derive(Clone, Debug)]
pub struct GradAccum<T: Scalar = f64> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradAccum<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self { slots: vec![None; store.len()] }
    }

    pub fn add(&mut self, grads: ParamGrads<T>, weight: T) -> Result<()> {
        for (id, g) in grads.grads {
            let g = g.map(|v| v * weight);
            match &mut self.slots[id.0] {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradient of `id`, or zeros shaped like the parameter when untouched.
    pub fn get_or_zero(&self, store: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        self.slots[id.0].clone().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }
}

/// A tape plus the binding of stored parameters onto it. Parameters whose
/// owner is not trainable enter as constants and receive no gradient.
pub struct Graph<'s, T: Scalar = f64> {
    pub tape: Tape<T>,
    store: &'s ParamStore<T>,
    trainable: Vec<Owner>,
    bound: Vec<Option<Var>>,
    trace: Vec<&'static str>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>, trainable: &[Owner]) -> Self {
        Self {
            tape: Tape::new(),
            store,
            trainable: trainable.to_vec(),
            bound: vec![None; store.len()],
            trace: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn trainable(&self) -> &[Owner] {
        &self.trainable
    }

    /// The tape variable of a stored parameter, bound on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = self.store.entry(id);
        let v = if self.trainable.contains(&e.owner) {
            self.tape.param(e.value.clone())
        } else {
            self.tape.constant(e.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub fn record(&mut self, event: &'static str) {
        self.trace.push(event);
    }

    /// Subnetwork invocations recorded during this forward pass.
    pub fn trace(&self) -> &[&'static str] {
        &self.trace
    }

    pub fn backward(&self, root: Var) -> Result<ParamGrads<T>> {
        let mut g = self.tape.backward(root)?;
        let grads = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .filter(|&(_, v)| self.tape.requires_grad(v))
            .map(|(id, v)| (id, g.take(v).unwrap_or_else(|| Tensor::zeros(self.tape.value(v).shape()))))
            .collect();
        Ok(ParamGrads { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_owners_get_no_gradient() {
        let mut s = ParamStore::<f64>::new();
        let a = s.insert("a", Owner::Generator, Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = s.insert("b", Owner::HqEncoder, Tensor::vector(vec![3.0, 4.0])).unwrap();
        assert!(s.insert("a", Owner::Generator, Tensor::scalar(0.0)).is_err());
        let mut g = Graph::new(&s, &[Owner::Generator]);
        let (va, vb) = (g.p(a), g.p(b));
        assert_eq!(g.p(a), va);
        let prod = g.tape.mul(va, vb).unwrap();
        let root = g.tape.sum(prod);
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn init_is_seeded_by_name() {
        let mut s1 = ParamStore::<f64>::new();
        let mut s2 = ParamStore::<f64>::new();
        s1.init_normal(7, "x", Owner::Generator, &[3, 3], 9).unwrap();
        s2.init_normal(7, "other", Owner::Generator, &[2], 2).unwrap();
        s2.init_normal(7, "x", Owner::Generator, &[3, 3], 9).unwrap();
        assert_eq!(s1.get(ParamId(0)), s2.get(ParamId(1)));
    }

    #[test]
    fn many_mut_and_accum() {
        let mut s = ParamStore::<f64>::new();
        let ids: Vec<_> = (0..3).map(|i| s.insert(format!("p{i}"), Owner::FcHead, Tensor::scalar(i as f64)).unwrap()).collect();
        assert_eq!(s.many_mut(&[ids[0], ids[2]]).unwrap().len(), 2);
        assert!(s.many_mut(&[ids[2], ids[0]]).is_err());
        let mut acc = GradAccum::new(&s);
        acc.add(ParamGrads { grads: vec![(ids[1], Tensor::scalar(2.0))] }, 0.5).unwrap();
        acc.add(ParamGrads { grads: vec![(ids[1], Tensor::scalar(4.0))] }, 0.5).unwrap();
        assert_eq!(acc.get_or_zero(&s, ids[1]).data(), &[3.0]);
        assert_eq!(acc.get_or_zero(&s, ids[0]).data(), &[0.0]);
    }

    #[test]
    fn owner_tags_roundtrip() {
        for o in Owner::ALL {
            assert_eq!(o.tag().parse::<Owner>().unwrap(), o);
        }
        assert!("nobody".parse::<Owner>().is_err());
    }
}
