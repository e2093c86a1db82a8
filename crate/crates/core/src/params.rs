//! Named parameter storage, per-graph leaf binding, and the optimizer.
//!
//! Parameters live in an insertion-ordered map of shared arrays. Each
//! forward pass binds the arrays it touches as graph leaves through a
//! [`GraphCtx`]; leaves whose names match the context's trainable prefixes
//! receive gradients, everything else enters the graph as a constant.

use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::Rng as _;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use std::cell::RefCell;
use std::sync::Arc;

use crate::container::Container;
use crate::rng::Rng;
use crate::tensor::{conv2d, maxpool2, Pad, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: IndexMap<String, Arc<ArrayD<f64>>>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.entries.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Result<Arc<ArrayD<f64>>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Data(format!("unknown parameter '{name}'")))
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(slot) => {
                *slot = Arc::new(value);
                Ok(())
            }
            None => Err(Error::Data(format!("unknown parameter '{name}'"))),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<ArrayD<f64>>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all arrays.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }

    /// SHA-256 over names, shapes and raw values, in storage order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, value) in &self.entries {
            hasher.update(name.as_bytes());
            for &d in value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in value.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies entries with the given prefix into a container, preserving order.
    pub fn export(&self, container: &mut Container, prefix: &str) {
        for (name, value) in &self.entries {
            if name.starts_with(prefix) {
                container.insert(name.clone(), (**value).clone());
            }
        }
    }

    /// Restores values for all existing entries from a container, validating
    /// shapes. Entries missing from the container are an error.
    pub fn import(&mut self, container: &Container) -> Result<()> {
        let names: Vec<String> = self.entries.keys().cloned().collect();
        for name in names {
            let expected = self.entries[&name].shape().to_vec();
            let value = container.get_shaped(&name, &expected)?;
            self.entries[&name] = Arc::new(value.clone());
        }
        Ok(())
    }
}

/// Binds parameters as graph leaves for one forward/backward pass.
pub struct GraphCtx<'a> {
    params: &'a Params,
    trainable_prefixes: Vec<String>,
    leaves: RefCell<IndexMap<String, Tensor>>,
}

impl<'a> GraphCtx<'a> {
    pub fn new(params: &'a Params, trainable_prefixes: &[&str]) -> Self {
        GraphCtx {
            params,
            trainable_prefixes: trainable_prefixes.iter().map(|s| s.to_string()).collect(),
            leaves: RefCell::new(IndexMap::new()),
        }
    }

    /// Inference context: nothing is trainable.
    pub fn frozen(params: &'a Params) -> Self {
        GraphCtx::new(params, &[])
    }

    pub fn leaf(&self, name: &str) -> Tensor {
        if let Some(t) = self.leaves.borrow().get(name) {
            return t.clone();
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|_| panic!("parameter '{name}' not initialised"));
        let trainable = self
            .trainable_prefixes
            .iter()
            .any(|p| name.starts_with(p.as_str()));
        let t = Tensor::leaf(value, trainable);
        self.leaves.borrow_mut().insert(name.to_string(), t.clone());
        t
    }

    /// Collects gradients for trainable leaves after a backward pass.
    /// Leaves the graph never reached get zeros.
    pub fn grads(&self) -> IndexMap<String, ArrayD<f64>> {
        let mut out = IndexMap::new();
        for (name, leaf) in self.leaves.borrow().iter() {
            if !leaf.requires_grad() {
                continue;
            }
            let g = leaf
                .take_grad()
                .unwrap_or_else(|| ArrayD::zeros(IxDyn(leaf.shape())));
            out.insert(name.clone(), g);
        }
        out
    }
}

/// A named convolution layer: weights `(out, k, k, in)` plus bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_amount: usize,
    pub pad: Pad,
}

impl Conv {
    /// 3x3, stride 1, reflection padding: the workhorse layer.
    pub fn same(name: impl Into<String>, in_ch: usize, out_ch: usize) -> Self {
        Conv {
            name: name.into(),
            in_ch,
            out_ch,
            k: 3,
            stride: 1,
            pad_amount: 1,
            pad: Pad::Reflect,
        }
    }

    pub fn strided(name: impl Into<String>, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        Conv {
            name: name.into(),
            in_ch,
            out_ch,
            k,
            stride,
            pad_amount: (k - 1) / 2,
            pad: Pad::Zero,
        }
    }

    fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    /// He-normal initialisation scaled by `gain`, zero bias.
    pub fn init(&self, params: &mut Params, rng: &mut Rng, gain: f64) {
        self.init_with_bias(params, rng, gain, 0.0);
    }

    pub fn init_with_bias(&self, params: &mut Params, rng: &mut Rng, gain: f64, bias: f64) {
        let fan_in = (self.k * self.k * self.in_ch) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let n = self.out_ch * self.k * self.k * self.in_ch;
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        params.insert(
            self.weight_name(),
            ArrayD::from_shape_vec(IxDyn(&[self.out_ch, self.k, self.k, self.in_ch]), values)
                .expect("conv weight shape"),
        );
        params.insert(
            self.bias_name(),
            ArrayD::from_elem(IxDyn(&[self.out_ch]), bias),
        );
    }

    /// All-zero initialisation (weights and bias).
    pub fn init_zero(&self, params: &mut Params) {
        params.insert(
            self.weight_name(),
            ArrayD::zeros(IxDyn(&[self.out_ch, self.k, self.k, self.in_ch])),
        );
        params.insert(self.bias_name(), ArrayD::zeros(IxDyn(&[self.out_ch])));
    }

    pub fn forward(&self, ctx: &GraphCtx, x: &Tensor) -> Tensor {
        conv2d(
            x,
            &ctx.leaf(&self.weight_name()),
            &ctx.leaf(&self.bias_name()),
            self.stride,
            self.pad_amount,
            self.pad,
        )
    }
}

pub use crate::tensor::Pad as PadMode;

/// Re-exported pooling so module code can stay on one import.
pub fn pool2(x: &Tensor) -> Tensor {
    maxpool2(x)
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: IndexMap<String, ArrayD<f64>>,
    v: IndexMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// One update over the given gradients. Parameters not named in
    /// `grads` are untouched.
    pub fn step(&mut self, params: &mut Params, grads: &IndexMap<String, ArrayD<f64>>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get(name)?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(IxDyn(p.shape())));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(IxDyn(p.shape())));
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let mut new_p = p.as_ref().clone();
            ndarray::Zip::from(&mut new_p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
                });
            params.set(name, new_p)?;
        }
        Ok(())
    }

    /// Serialises moment estimates under `opt.<tag>.` names.
    pub fn export(&self, container: &mut Container, tag: &str) {
        for (name, m) in &self.m {
            container.insert(format!("opt.{tag}.m.{name}"), m.clone());
        }
        for (name, v) in &self.v {
            container.insert(format!("opt.{tag}.v.{name}"), v.clone());
        }
    }

    pub fn import(&mut self, container: &Container, tag: &str) {
        let m_prefix = format!("opt.{tag}.m.");
        let v_prefix = format!("opt.{tag}.v.");
        for (name, value) in &container.arrays {
            if let Some(stripped) = name.strip_prefix(&m_prefix) {
                self.m.insert(stripped.to_string(), value.clone());
            } else if let Some(stripped) = name.strip_prefix(&v_prefix) {
                self.v.insert(stripped.to_string(), value.clone());
            }
        }
    }
}
