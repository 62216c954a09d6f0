use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{ConvGeom, Var};

use super::params::{Graph, Owner, ParamId, ParamStore};

/// 2-D convolution with bias; weights are `[cout, cin, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, name: &str, owner: Owner, cin: usize, cout: usize, k: usize, geom: ConvGeom) -> Result<Self> {
        Ok(Self {
            kernel: store.init_normal(seed, &format!("{name}.weight"), owner, &[cout, cin, k, k], cin * k * k)?,
            bias: store.init_zeros(&format!("{name}.bias"), owner, &[cout])?,
            geom,
        })
    }

    pub fn same<T: Scalar>(store: &mut ParamStore<T>, seed: u64, name: &str, owner: Owner, cin: usize, cout: usize) -> Result<Self> {
        Self::new(store, seed, name, owner, cin, cout, 3, ConvGeom::same(3))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (k, b) = (g.p(self.kernel), g.p(self.bias));
        g.tape.conv2d(x, k, Some(b), self.geom)
    }

    pub fn forward_relu<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.forward(g, x)?;
        Ok(g.tape.relu(y))
    }
}

/// Fully connected layer; weights are `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, name: &str, owner: Owner, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: store.init_normal(seed, &format!("{name}.weight"), owner, &[output, input], input)?,
            bias: store.init_zeros(&format!("{name}.bias"), owner, &[output])?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.p(self.weight), g.p(self.bias));
        g.tape.linear(x, w, b)
    }
}

/// Spatial mean of every channel: `[C,H,W] -> [C]`.
pub fn global_avg_pool<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    g.tape.channel_mean(x)
}
