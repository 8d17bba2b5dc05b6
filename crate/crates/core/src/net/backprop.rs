//! Losses and their exact gradients.
//!
//! With opponent models active the objective is
//! `L_total = λ (L_v + L_π) + L_PI` with `λ = 1 / sqrt(L_PI + ε)`, and the
//! gradient flows through λ as well: `∂L_total/∂L_PI = 1 - ½ (L_v + L_π)
//! (L_PI + ε)^(-3/2)`.

use rayon::prelude::*;

use super::{masked_log_softmax, Conv, Dense, Network, Trace};
use crate::error::{Error, Result};
use crate::game::EncodedState;

/// ε inside the adaptive weight λ = 1/sqrt(L_PI + ε).
pub const LAMBDA_EPSILON: f64 = 1e-8;

/// Examples per parallel work unit; sums are always taken in example order.
const CHUNK: usize = 8;

/// One opponent-model target: the state an opponent acted in (encoded from
/// that opponent's perspective) and its action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct OmExample {
    pub head: usize,
    pub input: EncodedState,
    pub mask: Vec<bool>,
    pub target: Vec<f64>,
}

/// Network-ready training example.
#[derive(Debug, Clone, PartialEq)]
pub struct LossExample {
    pub input: EncodedState,
    pub mask: Vec<bool>,
    pub policy_target: Vec<f64>,
    pub value_target: f64,
    /// `None` when the example carries no opponent-model targets at all.
    pub opponents: Option<Vec<OmExample>>,
}

/// What the update minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `L_v + L_π` (plain expert iteration).
    ActorCritic,
    /// `λ (L_v + L_π) + L_PI`.
    Weighted,
    /// `L_PI` alone; only the trunk and opponent-model heads receive gradient.
    PolicyInference,
}

impl Objective {
    fn uses_opponents(self) -> bool {
        !matches!(self, Objective::ActorCritic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub value_loss: f64,
    pub policy_loss: f64,
    pub policy_inference_loss: Option<f64>,
    pub lambda: Option<f64>,
    pub total: f64,
}

struct RecordForward {
    head: usize,
    trace: Trace,
    log_q: Vec<f64>,
}

struct ExampleForward {
    trace: Trace,
    log_pi: Vec<f64>,
    value_sq: f64,
    policy_ce: f64,
    records: Vec<RecordForward>,
    record_ce: f64,
}

fn cross_entropy(target: &[f64], log_p: &[f64], head: &'static str) -> Result<f64> {
    let mut ce = 0.0;
    for (&t, &lp) in target.iter().zip(log_p) {
        if t > 0.0 {
            ce -= t * lp;
        }
    }
    if !ce.is_finite() {
        return Err(Error::NonFinite { head, what: "loss" });
    }
    Ok(ce)
}

struct Coefficients {
    value: f64,
    policy: f64,
    inference: f64,
}

impl Network {
    fn check_example(&self, ex: &LossExample, objective: Objective) -> Result<()> {
        self.check_input(&ex.input, &ex.mask)?;
        let a = self.config.num_actions;
        if ex.policy_target.len() != a {
            return Err(Error::ShapeMismatch(format!(
                "policy target has {} entries, network has {a} actions",
                ex.policy_target.len()
            )));
        }
        if objective.uses_opponents() {
            if self.config.num_opponents == 0 {
                return Err(Error::MissingOpponentTargets(
                    "network has no opponent-model heads".into(),
                ));
            }
            let records = ex.opponents.as_ref().ok_or_else(|| {
                Error::MissingOpponentTargets("example has no opponent records".into())
            })?;
            for r in records {
                if r.head >= self.config.num_opponents {
                    return Err(Error::ShapeMismatch(format!(
                        "opponent head {} out of range",
                        r.head
                    )));
                }
                self.check_input(&r.input, &r.mask)?;
                if r.target.len() != a {
                    return Err(Error::ShapeMismatch("opponent target length".into()));
                }
            }
        }
        Ok(())
    }

    fn forward_example(&self, ex: &LossExample, objective: Objective) -> Result<ExampleForward> {
        let trace = self.trace(&ex.input.data, true);
        let log_pi = masked_log_softmax(&trace.actor_logits, &ex.mask);
        let policy_ce = cross_entropy(&ex.policy_target, &log_pi, "actor")?;
        let z = ex.value_target.clamp(-1.0, 1.0);
        let value_sq = (trace.critic - z).powi(2);
        if !value_sq.is_finite() {
            return Err(Error::NonFinite {
                head: "critic",
                what: "loss",
            });
        }
        let mut records = Vec::new();
        let mut record_ce = 0.0;
        if objective.uses_opponents() {
            for r in ex.opponents.iter().flatten() {
                let rt = self.trace(&r.input.data, false);
                let log_q = masked_log_softmax(&rt.om_logits[r.head], &r.mask);
                record_ce += cross_entropy(&r.target, &log_q, "opponent-model")?;
                records.push(RecordForward {
                    head: r.head,
                    trace: rt,
                    log_q,
                });
            }
        }
        Ok(ExampleForward {
            trace,
            log_pi,
            value_sq,
            policy_ce,
            records,
            record_ce,
        })
    }

    fn forward_all(
        &self,
        batch: &[LossExample],
        objective: Objective,
    ) -> Result<(Vec<ExampleForward>, LossBreakdown, Coefficients)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        for ex in batch {
            self.check_example(ex, objective)?;
        }
        let fwd: Vec<ExampleForward> = batch
            .par_iter()
            .with_min_len(CHUNK)
            .map(|ex| self.forward_example(ex, objective))
            .collect::<Result<_>>()?;

        let n = batch.len() as f64;
        let value_loss = fwd.iter().map(|f| f.value_sq).sum::<f64>() / n;
        let policy_loss = fwd.iter().map(|f| f.policy_ce).sum::<f64>() / n;
        let n_records: usize = fwd.iter().map(|f| f.records.len()).sum();
        let inference_loss = (n_records > 0)
            .then(|| fwd.iter().map(|f| f.record_ce).sum::<f64>() / n_records as f64);
        let s = value_loss + policy_loss;

        let (breakdown, coef) = match (objective, inference_loss) {
            (Objective::Weighted, Some(pi)) => {
                let lambda = 1.0 / (pi + LAMBDA_EPSILON).sqrt();
                (
                    LossBreakdown {
                        value_loss,
                        policy_loss,
                        policy_inference_loss: Some(pi),
                        lambda: Some(lambda),
                        total: lambda * s + pi,
                    },
                    Coefficients {
                        value: lambda,
                        policy: lambda,
                        inference: 1.0 - 0.5 * s * (pi + LAMBDA_EPSILON).powf(-1.5),
                    },
                )
            }
            (Objective::PolicyInference, Some(pi)) => (
                LossBreakdown {
                    value_loss,
                    policy_loss,
                    policy_inference_loss: Some(pi),
                    lambda: None,
                    total: pi,
                },
                Coefficients {
                    value: 0.0,
                    policy: 0.0,
                    inference: 1.0,
                },
            ),
            (Objective::PolicyInference, None) => return Err(Error::Empty("opponent records")),
            // A batch whose samples all ended the game before any opponent
            // replied has no L_PI term; it falls back to the unweighted sum.
            (Objective::ActorCritic | Objective::Weighted, _) => (
                LossBreakdown {
                    value_loss,
                    policy_loss,
                    policy_inference_loss: None,
                    lambda: None,
                    total: s,
                },
                Coefficients {
                    value: 1.0,
                    policy: 1.0,
                    inference: 0.0,
                },
            ),
        };
        let coef = Coefficients {
            value: coef.value / n,
            policy: coef.policy / n,
            inference: if n_records > 0 {
                coef.inference / n_records as f64
            } else {
                0.0
            },
        };
        Ok((fwd, breakdown, coef))
    }

    /// Mean losses over a batch.
    pub fn losses(&self, batch: &[LossExample], objective: Objective) -> Result<LossBreakdown> {
        Ok(self.forward_all(batch, objective)?.1)
    }

    /// Losses and the gradient of `total` with respect to every parameter.
    pub fn gradient(
        &self,
        batch: &[LossExample],
        objective: Objective,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        let (fwd, breakdown, coef) = self.forward_all(batch, objective)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite {
                head: "total",
                what: "loss",
            });
        }
        let partials: Vec<Vec<f64>> = batch
            .par_chunks(CHUNK)
            .zip(fwd.par_chunks(CHUNK))
            .map(|(exs, fs)| {
                let mut g = vec![0.0; self.params.len()];
                for (ex, f) in exs.iter().zip(fs) {
                    self.backward_example(ex, f, &coef, &mut g);
                }
                g
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        for part in partials {
            for (g, p) in grad.iter_mut().zip(part) {
                *g += p;
            }
        }
        Ok((breakdown, grad))
    }

    fn backward_example(
        &self,
        ex: &LossExample,
        f: &ExampleForward,
        coef: &Coefficients,
        grad: &mut [f64],
    ) {
        let t = &f.trace;
        let features = self.config.feature_len();
        let mut d_features = vec![0.0; features];

        if coef.value != 0.0 || coef.policy != 0.0 {
            let top = t.ac_acts.last().unwrap();
            let target_mass: f64 = ex.policy_target.iter().sum();
            let d_logits: Vec<f64> = f
                .log_pi
                .iter()
                .zip(&ex.policy_target)
                .zip(&ex.mask)
                .map(|((&lp, &tg), &m)| {
                    if m {
                        coef.policy * (lp.exp() * target_mass - tg)
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut d_top = dense_backward(&self.arch.actor, &self.params, top, &d_logits, grad);
            let z = ex.value_target.clamp(-1.0, 1.0);
            let d_pre = coef.value * 2.0 * (t.critic - z) * (1.0 - t.critic * t.critic);
            let d_top_v = dense_backward(&self.arch.critic, &self.params, top, &[d_pre], grad);
            add_into(&mut d_top, &d_top_v);

            let d_in = mlp_backward(
                &self.arch.ac_stack,
                &self.params,
                &t.ac_input,
                &t.ac_acts,
                d_top,
                grad,
            );
            d_features.copy_from_slice(&d_in[..features]);
            let mut offset = features;
            for (j, stack) in self.arch.om_stacks.iter().enumerate() {
                let width = stack.last().unwrap().outputs;
                let d_om_top = d_in[offset..offset + width].to_vec();
                offset += width;
                let trunk_out = t.conv_act.last().unwrap();
                let d = mlp_backward(
                    stack,
                    &self.params,
                    trunk_out,
                    &t.om_acts[j],
                    d_om_top,
                    grad,
                );
                add_into(&mut d_features, &d);
            }
            self.trunk_backward(t, d_features, grad);
        }

        if coef.inference != 0.0 {
            let records = ex.opponents.iter().flatten();
            for (r, rf) in records.zip(&f.records) {
                debug_assert_eq!(r.head, rf.head);
                let target_mass: f64 = r.target.iter().sum();
                let d_logits: Vec<f64> = rf
                    .log_q
                    .iter()
                    .zip(&r.target)
                    .zip(&r.mask)
                    .map(|((&lq, &tg), &m)| {
                        if m {
                            coef.inference * (lq.exp() * target_mass - tg)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let acts = &rf.trace.om_acts[r.head];
                let d_top = dense_backward(
                    &self.arch.om_outputs[r.head],
                    &self.params,
                    acts.last().unwrap(),
                    &d_logits,
                    grad,
                );
                let trunk_out = rf.trace.conv_act.last().unwrap();
                let d_feat = mlp_backward(
                    &self.arch.om_stacks[r.head],
                    &self.params,
                    trunk_out,
                    acts,
                    d_top,
                    grad,
                );
                self.trunk_backward(&rf.trace, d_feat, grad);
            }
        }
    }

    fn trunk_backward(&self, t: &Trace, d_out: Vec<f64>, grad: &mut [f64]) {
        let (h, w) = (self.config.height, self.config.width);
        let layers = self.arch.convs.len();
        let mut d_acts: Vec<Vec<f64>> = t.conv_act.iter().map(|a| vec![0.0; a.len()]).collect();
        d_acts[layers - 1] = d_out;
        for l in (0..layers).rev() {
            let conv = &self.arch.convs[l];
            let dz: Vec<f64> = d_acts[l]
                .iter()
                .zip(&t.conv_pre[l])
                .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                .collect();
            for &src in &conv.residual_from {
                add_into(&mut d_acts[src], &dz);
            }
            if l == 0 {
                conv_backward(conv, &self.params, &t.input, &dz, h, w, grad, None);
            } else {
                let (before, _) = d_acts.split_at_mut(l);
                conv_backward(
                    conv,
                    &self.params,
                    &t.conv_act[l - 1],
                    &dz,
                    h,
                    w,
                    grad,
                    Some(&mut before[l - 1]),
                );
            }
        }
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Accumulates parameter gradients of `y = W x + b` and returns dL/dx.
fn dense_backward(d: &Dense, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; d.inputs];
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad[d.b + o] += g;
        let row = d.w + o * d.inputs;
        for i in 0..d.inputs {
            grad[row + i] += g * x[i];
            dx[i] += p[row + i] * g;
        }
    }
    dx
}

/// Backpropagates through a ReLU stack given dL/d(last activation).
fn mlp_backward(
    stack: &[Dense],
    p: &[f64],
    input: &[f64],
    acts: &[Vec<f64>],
    d_out: Vec<f64>,
    grad: &mut [f64],
) -> Vec<f64> {
    let mut d = d_out;
    for k in (0..stack.len()).rev() {
        let dz: Vec<f64> = d
            .iter()
            .zip(&acts[k])
            .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
            .collect();
        let x = if k == 0 { input } else { &acts[k - 1] };
        d = dense_backward(&stack[k], p, x, &dz, grad);
    }
    d
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    conv: &Conv,
    p: &[f64],
    x: &[f64],
    dz: &[f64],
    h: usize,
    w: usize,
    grad: &mut [f64],
    mut dx: Option<&mut Vec<f64>>,
) {
    let n = h * w;
    for o in 0..conv.cout {
        let dplane = &dz[o * n..(o + 1) * n];
        grad[conv.b + o] += dplane.iter().sum::<f64>();
        for i in 0..conv.cin {
            let src = &x[i * n..(i + 1) * n];
            for kr in 0..3 {
                for kc in 0..3 {
                    let wi = conv.w + ((o * conv.cin + i) * 3 + kr) * 3 + kc;
                    let wt = p[wi];
                    let mut gw = 0.0;
                    super::for_each_tap(h, w, kr, kc, |dst, s, len| {
                        for (d, v) in dplane[dst..dst + len].iter().zip(&src[s..s + len]) {
                            gw += d * v;
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let din = &mut dx[i * n + s..i * n + s + len];
                            for (di, d) in din.iter_mut().zip(&dplane[dst..dst + len]) {
                                *di += wt * d;
                            }
                        }
                    });
                    grad[wi] += gw;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{encode_state, ConnectFour, Game};
    use crate::net::NetworkConfig;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_net(opponents: usize) -> Network {
        let cfg = NetworkConfig {
            channels: vec![4, 4, 1],
            residual: vec![[0, 1]],
            om_hidden: vec![6],
            ac_hidden: vec![8, 5],
            ..NetworkConfig::new(4, 5, 5, opponents)
        };
        Network::new(cfg, 5).unwrap()
    }

    fn random_dist(rng: &mut ChaCha8Rng, mask: &[bool]) -> Vec<f64> {
        let raw: Vec<f64> = mask
            .iter()
            .map(|&m| if m { rng.random::<f64>() + 0.05 } else { 0.0 })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn examples(n: usize, seed: u64) -> Vec<LossExample> {
        let g = ConnectFour::small();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut s = g.initial_state();
                for _ in 0..rng.random_range(0..6) {
                    let acts = g.legal_actions(&s).unwrap();
                    let next = g.play(&s, *acts.choose(&mut rng).unwrap());
                    if next.is_terminal() {
                        break;
                    }
                    s = next;
                }
                let mask = g.legal_mask(&s);
                let reply = g.play(&s, g.legal_actions(&s).unwrap()[0]);
                let opponents = if reply.is_terminal() {
                    vec![]
                } else {
                    let m = g.legal_mask(&reply);
                    vec![OmExample {
                        head: 0,
                        input: encode_state(&reply, reply.to_move()),
                        target: random_dist(&mut rng, &m),
                        mask: m,
                    }]
                };
                LossExample {
                    input: encode_state(&s, s.to_move()),
                    policy_target: random_dist(&mut rng, &mask),
                    mask,
                    value_target: rng.random_range(-1.0..1.0),
                    opponents: Some(opponents),
                }
            })
            .collect()
    }

    #[test]
    fn lambda_and_total_are_consistent() {
        let net = small_net(1);
        let b = net.losses(&examples(6, 1), Objective::Weighted).unwrap();
        let pi = b.policy_inference_loss.unwrap();
        let lambda = b.lambda.unwrap();
        assert!((lambda - 1.0 / (pi + LAMBDA_EPSILON).sqrt()).abs() < 1e-10);
        assert!((lambda * (b.value_loss + b.policy_loss) + pi - b.total).abs() < 1e-10);

        let plain = net.losses(&examples(6, 1), Objective::ActorCritic).unwrap();
        assert!(plain.lambda.is_none() && plain.policy_inference_loss.is_none());
        assert!((plain.total - plain.value_loss - plain.policy_loss).abs() < 1e-12);
    }

    #[test]
    fn missing_opponent_targets_are_rejected() {
        let net = small_net(1);
        let mut batch = examples(2, 2);
        batch[1].opponents = None;
        assert!(matches!(
            net.losses(&batch, Objective::Weighted),
            Err(Error::MissingOpponentTargets(_))
        ));
        assert!(net.losses(&batch, Objective::ActorCritic).is_ok());
        assert!(matches!(
            net.losses(&[], Objective::ActorCritic),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn cross_entropy_and_mse_identities() {
        let net = small_net(0);
        let mut batch = examples(1, 3);
        batch[0].opponents = None;
        let x = &batch[0];
        let out = net.forward(&x.input, &x.mask).unwrap();
        batch[0].value_target = out.critic;
        let b = net.losses(&batch, Objective::ActorCritic).unwrap();
        assert!(b.value_loss < 1e-20);

        // one legal action gives a one-hot actor that matches a one-hot target
        let mut mask = vec![false; 5];
        mask[3] = true;
        batch[0].mask = mask;
        batch[0].policy_target = vec![0.0, 0.0, 0.0, 1.0, 0.0];
        let b = net.losses(&batch, Objective::ActorCritic).unwrap();
        assert_eq!(b.policy_loss, 0.0);
    }

    #[test]
    fn target_mass_on_illegal_action_is_non_finite() {
        let net = small_net(0);
        let mut batch = examples(1, 4);
        batch[0].mask = vec![true, true, true, true, false];
        batch[0].policy_target = vec![0.0, 0.0, 0.0, 0.0, 1.0];
        assert!(matches!(
            net.gradient(&batch, Objective::ActorCritic),
            Err(Error::NonFinite { head: "actor", .. })
        ));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let net = small_net(1);
        let batch = examples(5, 6);
        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        for obj in [Objective::ActorCritic, Objective::Weighted] {
            let (_, g1) = net.gradient(&batch, obj).unwrap();
            let (_, g2) = net.gradient(&doubled, obj).unwrap();
            for (a, b) in g1.iter().zip(&g2) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn unused_opponent_output_gets_no_gradient_in_actor_critic_mode() {
        let net = small_net(1);
        let (_, g) = net
            .gradient(&examples(4, 7), Objective::ActorCritic)
            .unwrap();
        for spec in net
            .param_specs()
            .iter()
            .filter(|s| s.name.starts_with("om0.policy"))
        {
            assert!(g[spec.range()].iter().all(|&v| v == 0.0), "{}", spec.name);
        }
        // hidden OM layers feed the actor-critic stack and do get gradient
        let hidden = net
            .param_specs()
            .iter()
            .find(|s| s.name == "om0.hidden0.weight")
            .unwrap();
        assert!(g[hidden.range()].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn policy_inference_objective_leaves_actor_critic_untouched() {
        let net = small_net(1);
        let (_, g) = net
            .gradient(&examples(4, 8), Objective::PolicyInference)
            .unwrap();
        for spec in net
            .param_specs()
            .iter()
            .filter(|s| s.name.starts_with("ac."))
        {
            assert!(g[spec.range()].iter().all(|&v| v == 0.0), "{}", spec.name);
        }
    }
}
