//! The three-headed apprentice network.
//!
//! A stack of 3×3 convolutions (stride 1, zero padding 1, ReLU) turns the
//! encoded board into a feature vector. Each opponent-model head runs its own
//! ReLU stack on the features and ends in a masked softmax. The actor-critic
//! stack reads the features concatenated with the last hidden layer of every
//! opponent-model head, and ends in a masked-softmax actor and a tanh critic.
//!
//! All parameters live in one flat vector so that gradients, clipping and
//! the optimizer work on plain slices. Parameter values are kept at f32
//! precision (see [`optim`]) so checkpoints store them losslessly.

mod backprop;
pub mod checkpoint;
pub mod optim;

pub use backprop::{LossBreakdown, LossExample, Objective, OmExample, LAMBDA_EPSILON};
pub use checkpoint::Checkpoint;
pub use optim::{clip_gradient_norm, Adam};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::EncodedState;

/// Shape of the apprentice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub height: usize,
    pub width: usize,
    pub num_actions: usize,
    /// Output channels of each convolution; the first one reads 3 planes.
    pub channels: Vec<usize>,
    /// `[i, j]` adds the output of convolution `i` to the pre-activation of
    /// convolution `j`.
    pub residual: Vec<[usize; 2]>,
    pub om_hidden: Vec<usize>,
    pub ac_hidden: Vec<usize>,
    /// Number of opponent-model heads; 0 gives a plain actor-critic.
    pub num_opponents: usize,
}

impl NetworkConfig {
    pub fn new(height: usize, width: usize, num_actions: usize, num_opponents: usize) -> Self {
        Self {
            height,
            width,
            num_actions,
            channels: vec![12, 15, 20, 20, 20, 1],
            residual: vec![[2, 3], [3, 4]],
            om_hidden: vec![128, 64],
            ac_hidden: vec![128, 64],
            num_opponents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("network: {m}")));
        if self.height == 0 || self.width == 0 || self.num_actions == 0 {
            return bad("board and action space must be non-empty".into());
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be a non-empty list of positive counts".into());
        }
        if self.ac_hidden.is_empty() || self.ac_hidden.contains(&0) {
            return bad("ac_hidden must be a non-empty list of positive sizes".into());
        }
        if self.num_opponents > 0 && (self.om_hidden.is_empty() || self.om_hidden.contains(&0)) {
            return bad("om_hidden must be a non-empty list of positive sizes".into());
        }
        for &[i, j] in &self.residual {
            if i >= j || j >= self.channels.len() {
                return bad(format!("residual pair [{i}, {j}] is out of order or range"));
            }
            if self.channels[i] != self.channels[j] {
                return bad(format!(
                    "residual pair [{i}, {j}] joins {} and {} channels",
                    self.channels[i], self.channels[j]
                ));
            }
        }
        Ok(())
    }

    fn feature_len(&self) -> usize {
        self.channels.last().unwrap() * self.height * self.width
    }
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    w: usize,
    b: usize,
    inputs: usize,
    outputs: usize,
}

#[derive(Debug, Clone)]
struct Conv {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
    residual_from: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    He,
    Small,
}

#[derive(Debug, Clone)]
struct Layout {
    specs: Vec<ParamSpec>,
    inits: Vec<Init>,
    total: usize,
}

impl Layout {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let offset = self.total;
        let spec = ParamSpec {
            name,
            shape,
            offset,
        };
        self.total += spec.len();
        self.specs.push(spec);
        self.inits.push(init);
        offset
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize, init: Init) -> Dense {
        let w = self.add(format!("{name}.weight"), vec![outputs, inputs], init);
        let b = self.add(format!("{name}.bias"), vec![outputs], Init::Small);
        Dense {
            w,
            b,
            inputs,
            outputs,
        }
    }
}

#[derive(Debug, Clone)]
struct Architecture {
    convs: Vec<Conv>,
    om_stacks: Vec<Vec<Dense>>,
    om_outputs: Vec<Dense>,
    ac_stack: Vec<Dense>,
    actor: Dense,
    critic: Dense,
    layout: Layout,
}

impl Architecture {
    fn build(cfg: &NetworkConfig) -> Self {
        let mut layout = Layout {
            specs: vec![],
            inits: vec![],
            total: 0,
        };
        let mut convs = Vec::new();
        let mut cin = EncodedState::PLANES;
        for (l, &cout) in cfg.channels.iter().enumerate() {
            let w = layout.add(
                format!("trunk.conv{l}.weight"),
                vec![cout, cin, 3, 3],
                Init::He,
            );
            let b = layout.add(format!("trunk.conv{l}.bias"), vec![cout], Init::Small);
            let residual_from = cfg
                .residual
                .iter()
                .filter(|p| p[1] == l)
                .map(|p| p[0])
                .collect();
            convs.push(Conv {
                w,
                b,
                cin,
                cout,
                residual_from,
            });
            cin = cout;
        }
        let features = cfg.feature_len();

        let mut om_stacks = Vec::new();
        let mut om_outputs = Vec::new();
        let mut shared = 0;
        for j in 0..cfg.num_opponents {
            let mut stack = Vec::new();
            let mut width = features;
            for (k, &h) in cfg.om_hidden.iter().enumerate() {
                stack.push(layout.dense(&format!("om{j}.hidden{k}"), width, h, Init::He));
                width = h;
            }
            om_outputs.push(layout.dense(
                &format!("om{j}.policy"),
                width,
                cfg.num_actions,
                Init::Small,
            ));
            om_stacks.push(stack);
            shared += width;
        }

        let mut ac_stack = Vec::new();
        let mut width = features + shared;
        for (k, &h) in cfg.ac_hidden.iter().enumerate() {
            ac_stack.push(layout.dense(&format!("ac.hidden{k}"), width, h, Init::He));
            width = h;
        }
        let actor = layout.dense("ac.actor", width, cfg.num_actions, Init::Small);
        let critic = layout.dense("ac.critic", width, 1, Init::Small);

        Self {
            convs,
            om_stacks,
            om_outputs,
            ac_stack,
            actor,
            critic,
            layout,
        }
    }
}

/// Apprentice forward-pass result.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub actor: Vec<f64>,
    pub critic: f64,
    pub opponent_models: Vec<Vec<f64>>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct Trace {
    input: Vec<f64>,
    conv_pre: Vec<Vec<f64>>,
    conv_act: Vec<Vec<f64>>,
    om_acts: Vec<Vec<Vec<f64>>>,
    om_logits: Vec<Vec<f64>>,
    ac_input: Vec<f64>,
    ac_acts: Vec<Vec<f64>>,
    actor_logits: Vec<f64>,
    critic: f64,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    arch: Architecture,
    params: Vec<f64>,
}

pub(crate) fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl Network {
    /// Network with freshly initialized weights: He-uniform for hidden and
    /// convolution weights, small-uniform for output heads, zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::build(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.layout.total];
        for (spec, init) in arch.layout.specs.iter().zip(&arch.layout.inits) {
            let is_bias = spec.shape.len() == 1;
            let bound = match (init, is_bias) {
                (_, true) => 0.0,
                (Init::He, false) => {
                    let fan_in: usize = spec.shape[1..].iter().product();
                    (6.0 / fan_in as f64).sqrt()
                }
                (Init::Small, false) => 1e-2,
            };
            for p in &mut params[spec.range()] {
                *p = if bound > 0.0 {
                    round_f32(rng.random_range(-bound..bound))
                } else {
                    0.0
                };
            }
        }
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.arch.layout.specs
    }

    pub fn num_opponents(&self) -> usize {
        self.config.num_opponents
    }

    pub fn check_input(&self, input: &EncodedState, mask: &[bool]) -> Result<()> {
        let c = &self.config;
        if input.height != c.height
            || input.width != c.width
            || input.data.len() != EncodedState::PLANES * c.height * c.width
        {
            return Err(Error::ShapeMismatch(format!(
                "input is {}x{} ({} values), network expects {}x{}",
                input.height,
                input.width,
                input.data.len(),
                c.height,
                c.width
            )));
        }
        if mask.len() != c.num_actions {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries, network has {} actions",
                mask.len(),
                c.num_actions
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("mask has no legal action".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &EncodedState, mask: &[bool]) -> Result<NetworkOutput> {
        self.check_input(input, mask)?;
        let trace = self.trace(&input.data, true);
        Ok(NetworkOutput {
            actor: masked_softmax(&trace.actor_logits, mask),
            critic: trace.critic,
            opponent_models: trace
                .om_logits
                .iter()
                .map(|l| masked_softmax(l, mask))
                .collect(),
        })
    }

    /// Forward passes for a batch; each output equals [`Network::forward`] on
    /// the same input.
    pub fn forward_batch(
        &self,
        inputs: &[(EncodedState, Vec<bool>)],
    ) -> Result<Vec<NetworkOutput>> {
        inputs.iter().map(|(x, m)| self.forward(x, m)).collect()
    }

    pub(crate) fn trace(&self, input: &[f64], with_ac: bool) -> Trace {
        let (h, w) = (self.config.height, self.config.width);
        let p = &self.params;
        let mut t = Trace {
            input: input.to_vec(),
            ..Default::default()
        };
        for (l, conv) in self.arch.convs.iter().enumerate() {
            let x = if l == 0 { input } else { &t.conv_act[l - 1] };
            let mut z = conv_forward(conv, p, x, h, w);
            for &src in &conv.residual_from {
                for (zi, ai) in z.iter_mut().zip(&t.conv_act[src]) {
                    *zi += ai;
                }
            }
            let a = z.iter().map(|&v| v.max(0.0)).collect();
            t.conv_pre.push(z);
            t.conv_act.push(a);
        }
        let features = t.conv_act.last().unwrap().clone();

        for (stack, out) in self.arch.om_stacks.iter().zip(&self.arch.om_outputs) {
            let acts = mlp_forward(stack, p, &features);
            t.om_logits
                .push(dense_forward(out, p, acts.last().unwrap()));
            t.om_acts.push(acts);
        }

        if with_ac {
            let mut ac_input = features;
            for acts in &t.om_acts {
                ac_input.extend_from_slice(acts.last().unwrap());
            }
            t.ac_acts = mlp_forward(&self.arch.ac_stack, p, &ac_input);
            let top = t.ac_acts.last().unwrap();
            t.actor_logits = dense_forward(&self.arch.actor, p, top);
            t.critic = dense_forward(&self.arch.critic, p, top)[0].tanh();
            t.ac_input = ac_input;
        }
        t
    }
}

pub(crate) fn dense_forward(d: &Dense, p: &[f64], x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), d.inputs);
    (0..d.outputs)
        .map(|o| {
            let row = &p[d.w + o * d.inputs..d.w + (o + 1) * d.inputs];
            p[d.b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// ReLU stack; returns the activation of every layer.
fn mlp_forward(stack: &[Dense], p: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(stack.len());
    for d in stack {
        let input = acts.last().map(Vec::as_slice).unwrap_or(x);
        let mut z = dense_forward(d, p, input);
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        acts.push(z);
    }
    acts
}

/// Calls `f(out_offset, in_offset, len)` for every output row segment that a
/// 3×3 kernel tap (kr, kc) touches, with zero padding 1.
#[inline]
fn for_each_tap(h: usize, w: usize, kr: usize, kc: usize, mut f: impl FnMut(usize, usize, usize)) {
    let r_lo = 1usize.saturating_sub(kr);
    let r_hi = (h + 1 - kr).min(h);
    let c_lo = 1usize.saturating_sub(kc);
    let c_hi = (w + 1 - kc).min(w);
    if c_lo >= c_hi {
        return;
    }
    for r in r_lo..r_hi {
        let src_r = r + kr - 1;
        f(r * w + c_lo, src_r * w + c_lo + kc - 1, c_hi - c_lo);
    }
}

fn conv_forward(conv: &Conv, p: &[f64], x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; conv.cout * n];
    for o in 0..conv.cout {
        let plane = &mut out[o * n..(o + 1) * n];
        plane.iter_mut().for_each(|v| *v = p[conv.b + o]);
        for i in 0..conv.cin {
            let src = &x[i * n..(i + 1) * n];
            for kr in 0..3 {
                for kc in 0..3 {
                    let wt = p[conv.w + ((o * conv.cin + i) * 3 + kr) * 3 + kc];
                    for_each_tap(h, w, kr, kc, |dst, s, len| {
                        for (d, v) in plane[dst..dst + len].iter_mut().zip(&src[s..s + len]) {
                            *d += wt * v;
                        }
                    });
                }
            }
        }
    }
    out
}

/// Softmax over legal entries; illegal entries get exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Log-probabilities over legal entries; illegal entries are -inf.
pub(crate) fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&l, _)| (l - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - lse } else { f64::NEG_INFINITY })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{encode_state, ConnectFour, Game};

    #[test]
    fn default_plain_network_has_about_27k_parameters() {
        let g = ConnectFour::standard();
        let plain = Network::new(NetworkConfig::new(6, 7, 7, 0), 0).unwrap();
        let n = plain.num_params() as f64;
        assert!((n - 27_000.0).abs() / 27_000.0 < 0.05, "{n}");
        let with_om = Network::new(NetworkConfig::new(6, 7, 7, 1), 0).unwrap();
        assert!(with_om.num_params() > plain.num_params());
        let x = encode_state(&g.initial_state(), 0);
        let out = with_om.forward(&x, &[true; 7]).unwrap();
        assert_eq!(out.opponent_models.len(), 1);
    }

    #[test]
    fn outputs_are_normalized_and_masked() {
        let g = ConnectFour::small();
        let net = Network::new(NetworkConfig::new(4, 5, 5, 1), 3).unwrap();
        let s = g.play(&g.play(&g.initial_state(), 2), 1);
        let x = encode_state(&s, s.to_move());
        let out = net.forward(&x, &[true; 5]).unwrap();
        assert!((out.actor.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((out.opponent_models[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.critic.abs() <= 1.0);

        let mask = [false, false, true, false, false];
        let out = net.forward(&x, &mask).unwrap();
        assert_eq!(out.actor, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn masking_preserves_logit_order() {
        let logits = [0.3, -1.0, 2.0, 0.5];
        let mask = [true, false, true, true];
        let p = masked_softmax(&logits, &mask);
        assert_eq!(p[1], 0.0);
        assert!(p[2] > p[3] && p[3] > p[0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = Network::new(NetworkConfig::new(4, 5, 5, 0), 0).unwrap();
        let g = ConnectFour::standard();
        let x = encode_state(&g.initial_state(), 0);
        assert!(matches!(
            net.forward(&x, &[true; 5]),
            Err(Error::ShapeMismatch(_))
        ));
        let x = encode_state(&ConnectFour::small().initial_state(), 0);
        assert!(net.forward(&x, &[true; 7]).is_err());
        assert!(net.forward(&x, &[false; 5]).is_err());
    }

    #[test]
    fn rejects_mismatched_residual() {
        let mut cfg = NetworkConfig::new(4, 5, 5, 0);
        cfg.residual = vec![[0, 1]];
        assert!(Network::new(cfg, 0).is_err());
    }

    #[test]
    fn conv_matches_direct_definition() {
        let cfg = NetworkConfig {
            channels: vec![2],
            residual: vec![],
            ac_hidden: vec![3],
            ..NetworkConfig::new(3, 4, 4, 0)
        };
        let net = Network::new(cfg, 11).unwrap();
        let conv = &net.arch.convs[0];
        let x: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = conv_forward(conv, &net.params, &x, 3, 4);
        for o in 0..2 {
            for r in 0..3i64 {
                for c in 0..4i64 {
                    let mut want = net.params[conv.b + o];
                    for i in 0..3 {
                        for kr in 0..3i64 {
                            for kc in 0..3i64 {
                                let (sr, sc) = (r + kr - 1, c + kc - 1);
                                if (0..3).contains(&sr) && (0..4).contains(&sc) {
                                    let wi = ((o * 3 + i) * 3 + kr as usize) * 3 + kc as usize;
                                    want += net.params[conv.w + wi]
                                        * x[i * 12 + sr as usize * 4 + sc as usize];
                                }
                            }
                        }
                    }
                    let idx = o * 12 + r as usize * 4 + c as usize;
                    assert!((got[idx] - want).abs() < 1e-12);
                }
            }
        }
    }
}
