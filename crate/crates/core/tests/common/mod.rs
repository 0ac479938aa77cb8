//! Test-side oracles shared by the integration targets.
#![allow(dead_code)]

use aoc_core::agent::{
    improvement_grads, AttentionObjective, Grads, LossInputs, TapeCache, TransitionInput,
};
use aoc_core::network::Dense;
use aoc_core::{AttentionBank, NetShape, NetworkParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matvec_relu(d: &Dense, x: &[f64], relu: bool) -> Vec<f64> {
    (0..d.outputs)
        .map(|o| {
            let mut z = d.bias[o];
            for i in 0..d.inputs {
                z += d.weight[o * d.inputs + i] * x[i];
            }
            if relu { z.max(0.0) } else { z }
        })
        .collect()
}

/// `(q, log_pi row, beta)` for one option on input `x`, computed from scratch.
pub fn naive_option(p: &NetworkParams, x: &[f64], option: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let h1 = matvec_relu(&p.layers[0], x, true);
    let h2 = matvec_relu(&p.layers[1], &h1, true);
    let q = matvec_relu(&p.layers[2], &h2, false);
    let logits = matvec_relu(&p.layers[3], &h2, false);
    let a = p.shape.num_actions;
    let row = &logits[option * a..(option + 1) * a];
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let log_pi = row.iter().map(|z| z - lse).collect();
    let b = matvec_relu(&p.layers[4], &h2, false)[option];
    (q, log_pi, 1.0 / (1.0 + (-b).exp()))
}

fn masked(h: &[f64], dim: usize, option: usize, state: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    x[state] = h[option * dim + state];
    x
}

/// The scalar whose gradient `improvement_grads` accumulates, evaluated from scratch.
/// Network parameters descend the network terms; attention descends the same scalar
/// plus its own terms (they do not depend on the network).
pub fn naive_loss(p: &NetworkParams, logits: &[f64], inputs: &LossInputs) -> (f64, f64) {
    let n_opt = p.shape.num_options;
    let dim = p.shape.input_dim;
    let h: Vec<f64> = logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
    let scale = 1.0 / inputs.transitions.len() as f64;
    let mut net = 0.0;
    let mut value_term = 0.0;
    for tr in &inputs.transitions {
        let (q, log_pi, _) = naive_option(p, &masked(&h, dim, tr.option, tr.state), tr.option);
        net += 0.5 * (q[tr.option] - tr.target).powi(2) * scale;
        net -= log_pi[tr.action] * tr.signal * scale;
        let entropy: f64 = -log_pi.iter().map(|lp| lp.exp() * lp).sum::<f64>();
        net -= inputs.entropy_coef * entropy * scale;
        if let Some(next) = tr.next_state {
            let (_, _, beta) = naive_option(p, &masked(&h, dim, tr.option, next), tr.option);
            net += beta * tr.advantage * scale;
        }
        value_term -= q[tr.option] * scale;
    }
    let mut att = 0.0;
    if inputs.learn_attention {
        if inputs.attention_objective.uses_loss() {
            att += net;
        }
        if inputs.attention_objective.uses_value() {
            att += value_term;
        }
        let norm = |o: usize| h[o * dim..(o + 1) * dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..n_opt {
            for j in i + 1..n_opt {
                let dot: f64 = (0..dim).map(|k| h[i * dim + k] * h[j * dim + k]).sum();
                att += inputs.w1 * dot / (norm(i) * norm(j) + 1e-8);
            }
        }
        for seg in &inputs.segments {
            for w in seg.windows(2) {
                for o in 0..n_opt {
                    att += inputs.w2 / inputs.num_workers as f64
                        * (h[o * dim + w[0]] - h[o * dim + w[1]]).abs();
                }
            }
        }
    }
    (net, att)
}

pub struct GradCase {
    pub params: NetworkParams,
    pub logits: Vec<f64>,
    pub inputs: LossInputs,
}

/// A small random network, attention bank and batch.
pub fn random_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(3..9);
    let n_opt = rng.gen_range(1..5);
    let mut shape = NetShape::new(dim, n_opt, 4);
    shape.hidden = [rng.gen_range(3..8), rng.gen_range(3..8)];
    let mut params = NetworkParams::init(shape, &mut rng);
    // Nonzero biases keep most rectifiers active and away from their kinks.
    for l in params.layers.iter_mut() {
        for b in l.bias.iter_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let logits: Vec<f64> = (0..n_opt * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let n = rng.gen_range(1..7);
    let transitions = (0..n)
        .map(|_| TransitionInput {
            state: rng.gen_range(0..dim),
            option: rng.gen_range(0..n_opt),
            action: rng.gen_range(0..4),
            next_state: if rng.gen_bool(0.8) { Some(rng.gen_range(0..dim)) } else { None },
            target: rng.gen_range(-5.0..5.0),
            signal: rng.gen_range(-3.0..3.0),
            advantage: rng.gen_range(-2.0..2.0),
        })
        .collect();
    let segments = (0..rng.gen_range(1..3))
        .map(|_| (0..rng.gen_range(2..6)).map(|_| rng.gen_range(0..dim)).collect())
        .collect();
    let objective = [
        AttentionObjective::CompositeLoss,
        AttentionObjective::ValueAscent,
        AttentionObjective::Both,
    ][rng.gen_range(0..3)];
    let inputs = LossInputs {
        transitions,
        segments,
        entropy_coef: rng.gen_range(0.0..2.0),
        w1: rng.gen_range(0.0..4.0),
        w2: rng.gen_range(0.0..2.0),
        num_workers: rng.gen_range(1..6),
        learn_attention: true,
        attention_objective: objective,
    };
    GradCase { params, logits, inputs }
}

/// Largest `|a - b| / max(1, |a|, |b|)` between analytic and central-difference
/// gradients over every network parameter and attention logit.
pub fn max_gradient_error(case: &GradCase) -> f64 {
    let GradCase { params, logits, inputs } = case;
    let n_opt = params.shape.num_options;
    let dim = params.shape.input_dim;
    let bank = AttentionBank::from_logits(n_opt, dim, logits.clone());
    let mut grads = Grads::zeros(params, &bank);
    improvement_grads(params, &bank, inputs, &mut TapeCache::new(), &mut grads).unwrap();
    let d_logits = bank.logit_grads(&grads.attention);

    let eps = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / 1f64.max(a.abs()).max(b.abs());
    let mut worst = 0.0f64;
    let analytic: Vec<&aoc_core::network::Dense> = grads.network.layers.iter().collect();
    for l in 0..params.layers.len() {
        let nw = params.layers[l].weight.len();
        for k in 0..nw + params.layers[l].bias.len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                if k < nw {
                    p.layers[l].weight[k] += delta;
                } else {
                    p.layers[l].bias[k - nw] += delta;
                }
                naive_loss(&p, logits, inputs).0
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let an = if k < nw { analytic[l].weight[k] } else { analytic[l].bias[k - nw] };
            worst = worst.max(rel(an, fd));
        }
    }
    for k in 0..logits.len() {
        let eval = |delta: f64| {
            let mut z = logits.clone();
            z[k] += delta;
            naive_loss(params, &z, inputs).1
        };
        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
        worst = worst.max(rel(d_logits[k], fd));
    }
    worst
}

/// Largest absolute gap between the agent's one-step target and
/// `r + γ[(1-β) Q(o'_ω, ω) + β max_ω̄ Q(o'_ω̄, ω̄)]` computed with [`naive_option`].
pub fn target_oracle_error(cases: u64) -> f64 {
    use aoc_core::agent::{td_target, Agent, AgentConfig, Arrival};
    use aoc_core::GridLayout;

    let layout = GridLayout::four_rooms();
    let dim = layout.num_states();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let config = AgentConfig {
            num_options: rng.gen_range(1..9),
            gamma: rng.gen_range(0.0..0.999),
            attention_init_scale: rng.gen_range(0.0..4.0),
            ..AgentConfig::default()
        };
        let gamma = config.gamma;
        let mut agent = Agent::new(config, &layout, case).unwrap();
        // Spread the heads so β and the argmax vary between cases.
        for l in agent.params.layers.iter_mut().skip(2) {
            for b in l.bias.iter_mut() {
                *b = rng.gen_range(-3.0..3.0);
            }
        }
        let next = rng.gen_range(0..dim);
        let option = rng.gen_range(0..agent.config.num_options);
        let reward = rng.gen_range(-1.0..20.0);
        let heads = agent.heads_at(&mut TapeCache::new(), next).unwrap();
        let got = td_target(reward, Some(Arrival::from_heads(&heads, option, false)), gamma);

        let h = agent.bank.values();
        let own = |o: usize| naive_option(&agent.params, &masked(h, dim, o, next), o);
        let (q_own, _, beta) = own(option);
        let q_max = (0..agent.config.num_options)
            .map(|o| own(o).0[o])
            .fold(f64::NEG_INFINITY, f64::max);
        let want = reward + gamma * ((1.0 - beta) * q_own[option] + beta * q_max);
        worst = worst.max((got - want).abs());
        assert_eq!(td_target(reward, None, gamma), reward);
    }
    worst
}

/// Number of network parameters whose bits differ between an OC agent and an AOC agent
/// with identity attention and zero attention weights after `updates` updates.
pub fn reduction_mismatches(seed: u64, updates: u64) -> usize {
    use aoc_core::agent::{AgentConfig, NullSink};
    use aoc_core::{Agent, AttentionMode, EnvConfig, GoalSpec, GridLayout, Mode, Task, Trainer};
    use std::sync::Arc;

    let layout = Arc::new(GridLayout::four_rooms());
    let task = Task::resolve(layout.clone(), EnvConfig::default(), GoalSpec::Random, None, seed).unwrap();
    let run = |config: AgentConfig| {
        let agent = Agent::new(config, &layout, seed).unwrap();
        let mut trainer = Trainer::new(agent, task.clone(), seed).unwrap();
        trainer.run_updates(updates, &mut NullSink).unwrap();
        trainer.agent
    };
    let oc = run(AgentConfig { mode: Mode::Oc, ..AgentConfig::default() });
    let aoc = run(AgentConfig {
        mode: Mode::Aoc,
        attention: AttentionMode::Identity,
        w1: 0.0,
        w2: 0.0,
        ..AgentConfig::default()
    });
    assert_eq!(oc.updates, updates);
    let flat = |p: &NetworkParams| -> Vec<f64> {
        p.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect()
    };
    flat(&oc.params)
        .iter()
        .zip(&flat(&aoc.params))
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count()
        + usize::from(oc.frames != aoc.frames)
}
