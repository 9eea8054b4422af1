use super::layers::{BatchNorm, Conv, Dense, Forward};
use super::params::ParamStore;
use super::spec::{BackboneSpec, InceptionModuleSpec, SeGateSpec};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::{Padding, Tensor, Var};
use rand::Rng;

/// Named FLOP entry for one layer at a given sequence length.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub flops: u64,
}

fn push(out: &mut Vec<LayerFlops>, name: String, flops: u64) {
    out.push(LayerFlops { name, flops });
}

/// Multi-branch block: a shared 1×1 bottleneck feeds each convolution
/// branch, the pool branch runs max-pool(3) then a 1×1 projection of the
/// raw input, and the concatenation goes through BN and ReLU.
#[derive(Clone, Debug)]
pub struct InceptionModule {
    pub spec: InceptionModuleSpec,
    pub name: String,
    pub bottleneck: Option<Conv>,
    pub branches: Vec<Conv>,
    pub pool_proj: Option<Conv>,
    pub bn: BatchNorm,
}

impl InceptionModule {
    pub fn new(store: &mut ParamStore<f64>, rng: &mut impl Rng, name: &str, spec: &InceptionModuleSpec) -> Result<Self> {
        spec.validate()?;
        let (din, db, df) = (spec.input_channels, spec.bottleneck, spec.filters);
        let bottleneck =
            (!spec.conv_kernels.is_empty()).then(|| Conv::new(store, rng, &format!("{name}.bottleneck"), din, db, 1, false));
        let branches = spec
            .conv_kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| Conv::new(store, rng, &format!("{name}.branch{i}_k{k}"), db, df, k, false))
            .collect();
        let pool_proj = spec.use_maxpool_branch.then(|| Conv::new(store, rng, &format!("{name}.pool_proj"), din, df, 1, false));
        let bn = BatchNorm::new(store, &format!("{name}.bn"), spec.output_channels());
        Ok(Self { spec: spec.clone(), name: name.to_string(), bottleneck, branches, pool_proj, bn })
    }

    pub fn forward<R: Real>(&self, f: &mut Forward<R>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.spec.conv_kernels.len() + 1);
        if let Some(b) = &self.bottleneck {
            let z = b.forward(f, x)?;
            for br in &self.branches {
                outs.push(br.forward(f, z)?);
            }
        }
        if let Some(p) = &self.pool_proj {
            let pooled = f.tape.maxpool1d(x, 3, 1, Padding::Same)?;
            outs.push(p.forward(f, pooled)?);
        }
        let mut cat = outs[0];
        for &o in &outs[1..] {
            cat = f.tape.concat_channels(cat, o)?;
        }
        let y = self.bn.forward(f, cat)?;
        Ok(f.tape.relu(y))
    }

    /// All convolution weights of the module, excluding BN.
    pub fn convs(&self) -> Vec<&Conv> {
        self.bottleneck.iter().chain(&self.branches).chain(&self.pool_proj).collect()
    }

    pub fn flops(&self, t: usize, out: &mut Vec<LayerFlops>) {
        let n = &self.name;
        if let Some(b) = &self.bottleneck {
            push(out, format!("{n}.bottleneck"), b.flops(t));
        }
        for (i, br) in self.branches.iter().enumerate() {
            push(out, format!("{n}.branch{i}_k{}", br.k), br.flops(t));
        }
        if let Some(p) = &self.pool_proj {
            push(out, format!("{n}.maxpool"), (t * self.spec.input_channels) as u64);
            push(out, format!("{n}.pool_proj"), p.flops(t));
        }
        let c = (t * self.spec.output_channels()) as u64;
        push(out, format!("{n}.bn"), c);
        push(out, format!("{n}.relu"), c);
    }
}

/// Skip path added at a residual junction.
#[derive(Clone, Debug)]
pub enum Shortcut {
    Identity,
    Project { conv: Conv, bn: BatchNorm },
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub modules: Vec<InceptionModule>,
    /// One entry per junction, in order.
    pub shortcuts: Vec<Shortcut>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore<f64>, rng: &mut impl Rng, spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let mut modules = Vec::with_capacity(spec.depth);
        let mut shortcuts = Vec::new();
        let mut res_in = spec.input_channels;
        for i in 0..spec.depth {
            let ms = spec.module_spec(i);
            modules.push(InceptionModule::new(store, rng, &format!("module{i}"), &ms)?);
            if spec.junction_after(i) {
                let out = ms.output_channels();
                let j = shortcuts.len();
                shortcuts.push(if res_in == out {
                    Shortcut::Identity
                } else {
                    Shortcut::Project {
                        conv: Conv::new(store, rng, &format!("shortcut{j}.conv"), res_in, out, 1, false),
                        bn: BatchNorm::new(store, &format!("shortcut{j}.bn"), out),
                    }
                });
                res_in = out;
            }
        }
        Ok(Self { spec: spec.clone(), modules, shortcuts })
    }

    /// Feature map `[B, Cf, T]` after the last module (and its junction).
    pub fn forward<R: Real>(&self, f: &mut Forward<R>, x: Var) -> Result<Var> {
        let mut h = x;
        let mut res = x;
        let mut j = 0;
        for (i, m) in self.modules.iter().enumerate() {
            h = m.forward(f, h)?;
            if self.spec.junction_after(i) {
                let s = match &self.shortcuts[j] {
                    Shortcut::Identity => res,
                    Shortcut::Project { conv, bn } => {
                        let p = conv.forward(f, res)?;
                        bn.forward(f, p)?
                    }
                };
                let sum = f.tape.add(h, s)?;
                h = f.tape.relu(sum);
                res = h;
                j += 1;
            }
        }
        Ok(h)
    }

    pub fn flops(&self, t: usize, out: &mut Vec<LayerFlops>) {
        let mut j = 0;
        for (i, m) in self.modules.iter().enumerate() {
            m.flops(t, out);
            if self.spec.junction_after(i) {
                let c = (t * m.spec.output_channels()) as u64;
                if let Shortcut::Project { conv, .. } = &self.shortcuts[j] {
                    push(out, format!("shortcut{j}.conv"), conv.flops(t));
                    push(out, format!("shortcut{j}.bn"), c);
                }
                push(out, format!("shortcut{j}.add"), c);
                push(out, format!("shortcut{j}.relu"), c);
                j += 1;
            }
        }
    }
}

/// Squeeze-and-excitation gate on the raw input channels. The output layer
/// starts at zero so a fresh gate is the identity (ŝ = 1).
#[derive(Clone, Debug)]
pub struct SeGate {
    pub spec: SeGateSpec,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl SeGate {
    pub fn new(store: &mut ParamStore<f64>, rng: &mut impl Rng, spec: &SeGateSpec) -> Result<Self> {
        spec.validate()?;
        let h = spec.hidden();
        let mut fc1 = Dense::new(store, rng, "gate.fc1", spec.channels, h, false);
        fc1.b = None;
        let fc2 = Dense::zeroed(store, "gate.fc2", h, spec.channels);
        Ok(Self { spec: spec.clone(), fc1, fc2 })
    }

    /// Returns the gated input and the per-sample weights ŝ `[B, M]`.
    pub fn forward<R: Real>(&self, f: &mut Forward<R>, x: Var) -> Result<(Var, Var)> {
        let z = f.tape.gap(x)?;
        let h = self.fc1.forward(f, z)?;
        let h = f.tape.relu(h);
        let s = self.fc2.forward(f, h)?;
        let s = f.tape.sigmoid(s);
        let s_hat = f.tape.add_const(s, &Tensor::scalar(R::of(0.5)))?;
        let y = f.tape.scale_channels(x, s_hat)?;
        Ok((y, s_hat))
    }

    pub fn flops(&self, t: usize, out: &mut Vec<LayerFlops>) {
        let m = self.spec.channels as u64;
        push(out, "gate.gap".into(), m);
        push(out, "gate.fc1".into(), self.fc1.flops(1));
        push(out, "gate.relu".into(), self.spec.hidden() as u64);
        push(out, "gate.fc2".into(), self.fc2.flops(1));
        push(out, "gate.sigmoid".into(), m);
        push(out, "gate.shift".into(), m);
        push(out, "gate.scale".into(), m * t as u64);
    }
}
