//! Stacked dilated causal convolutions with residual connections.
//!
//! Block `l` (0-based) computes
//!
//! ```text
//! h_l[t] = dropout(relu(b + Σ_k W[:, :, k] · h_{l-1}[t - (K-1-k)·d_l])) + res(h_{l-1}[t])
//! ```
//!
//! with `d_l = base^l`, zero left padding, and `res` a 1x1 projection on the
//! first block (one input channel) and the identity elsewhere.
//!
//! The downstream representation is the top level at the last position.
//! With doubling dilations that output depends on a sparse tree of lower
//! positions, so an [`EncoderPlan`] records, level by level, only the
//! positions that feed the requested outputs. A full plan keeps every
//! position and is used where the whole output sequence is needed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{Gradients, ModelParams, INPUT_CHANNELS};
use crate::error::{Error, Result};

const PAD: u32 = u32::MAX;

/// Which positions are evaluated at each level for inputs of one length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderPlan {
    n: usize,
    kernel: usize,
    channels: usize,
    /// Level 0 is the input, level `l` the output of block `l - 1`.
    positions: Vec<Vec<usize>>,
    /// Per block: `slots_out * K` input-slot indices, `PAD` for padding.
    taps: Vec<Vec<u32>>,
    /// Per block: the input slot at the same position.
    residual: Vec<Vec<u32>>,
}

impl EncoderPlan {
    /// Plan for the top-level output at position `n - 1` only.
    pub fn last_step(cfg: &ModelConfig, n: usize) -> Result<Self> {
        let mut top = vec![false; n];
        if let Some(last) = top.last_mut() {
            *last = true;
        }
        Self::build(cfg, n, top)
    }

    /// Plan evaluating every position at every level.
    pub fn full(cfg: &ModelConfig, n: usize) -> Result<Self> {
        Self::build(cfg, n, vec![true; n])
    }

    fn build(cfg: &ModelConfig, n: usize, top: Vec<bool>) -> Result<Self> {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::InvalidInput("cannot encode an empty sequence".into()));
        }
        let k = cfg.kernel_k;
        let layers = cfg.layers_l;
        let mut needed = vec![top];
        for block in (0..layers).rev() {
            let d = cfg.dilation(block);
            let above = needed.last().unwrap();
            let mut below = vec![false; n];
            for (p, _) in above.iter().enumerate().filter(|(_, &x)| x) {
                for tap in 0..k {
                    if let Some(q) = p.checked_sub((k - 1 - tap) * d) {
                        below[q] = true;
                    }
                }
            }
            needed.push(below);
        }
        needed.reverse();
        let positions: Vec<Vec<usize>> = needed
            .iter()
            .map(|mask| mask.iter().enumerate().filter(|(_, &x)| x).map(|(p, _)| p).collect())
            .collect();
        let slot_maps: Vec<Vec<u32>> = positions
            .iter()
            .map(|pos| {
                let mut map = vec![PAD; n];
                for (slot, &p) in pos.iter().enumerate() {
                    map[p] = slot as u32;
                }
                map
            })
            .collect();
        let mut taps = Vec::with_capacity(layers);
        let mut residual = Vec::with_capacity(layers);
        for block in 0..layers {
            let d = cfg.dilation(block);
            let below = &slot_maps[block];
            let mut t = Vec::with_capacity(positions[block + 1].len() * k);
            let mut r = Vec::with_capacity(positions[block + 1].len());
            for &p in &positions[block + 1] {
                for tap in 0..k {
                    t.push(match p.checked_sub((k - 1 - tap) * d) {
                        Some(q) => below[q],
                        None => PAD,
                    });
                }
                r.push(below[p]);
            }
            taps.push(t);
            residual.push(r);
        }
        Ok(Self {
            n,
            kernel: k,
            channels: cfg.hidden_channels,
            positions,
            taps,
            residual,
        })
    }

    /// Input length the plan was built for.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn positions(&self, level: usize) -> &[usize] {
        &self.positions[level]
    }

    /// Multiply-accumulates in one forward pass, ignoring padding.
    pub fn forward_macs(&self) -> usize {
        self.taps
            .iter()
            .enumerate()
            .map(|(block, t)| {
                let cin = if block == 0 { INPUT_CHANNELS } else { self.channels };
                t.iter().filter(|&&s| s != PAD).count() * cin * self.channels
            })
            .sum()
    }
}

pub enum Mode<'a> {
    Eval,
    /// Training forward; the generator drives dropout masks.
    Train(&'a mut ChaCha8Rng),
}

/// Activations recorded by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    channels: usize,
    levels: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Per-block dropout multipliers; empty when dropout is off.
    masks: Vec<Vec<f64>>,
}

impl EncoderTrace {
    /// Top-level features at every planned output position.
    pub fn top(&self) -> &[f64] {
        self.levels.last().unwrap()
    }

    /// Representation `o`: top-level features at the last position.
    pub fn output(&self) -> &[f64] {
        let top = self.top();
        &top[top.len() - self.channels..]
    }
}

/// `[k][co][ci]` copy of a `[co][ci][k]` kernel.
fn transpose_kernel(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for tap in 0..k {
                out[(tap * cout + co) * cin + ci] = w[(co * cin + ci) * k + tap];
            }
        }
    }
    out
}

/// Convolution sums (bias included) for every output slot.
#[allow(clippy::too_many_arguments)]
fn conv_slots(
    wt: &[f64],
    bias: &[f64],
    input: &[f64],
    taps: &[u32],
    cin: usize,
    cout: usize,
    k: usize,
    out: &mut [f64],
) {
    for (slot, z) in out.chunks_exact_mut(cout).enumerate() {
        z.copy_from_slice(bias);
        for tap in 0..k {
            let s = taps[slot * k + tap];
            if s == PAD {
                continue;
            }
            let x = &input[s as usize * cin..(s as usize + 1) * cin];
            let w = &wt[tap * cout * cin..(tap + 1) * cout * cin];
            for (zc, row) in z.iter_mut().zip(w.chunks_exact(cin)) {
                *zc += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

/// One dilated causal convolution over a whole sequence, `input` laid out
/// position-major (`n x cin`), `weight` as `cout x cin x k`. This is the
/// kernel every encoder block uses.
#[allow(clippy::too_many_arguments)]
pub fn dilated_causal_conv(
    input: &[f64],
    n: usize,
    cin: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
    dilation: usize,
) -> Vec<f64> {
    assert_eq!(input.len(), n * cin);
    assert_eq!(weight.len(), cout * cin * k);
    let mut taps = Vec::with_capacity(n * k);
    for p in 0..n {
        for tap in 0..k {
            taps.push(match p.checked_sub((k - 1 - tap) * dilation) {
                Some(q) => q as u32,
                None => PAD,
            });
        }
    }
    let wt = transpose_kernel(weight, cout, cin, k);
    let mut out = vec![0.0; n * cout];
    conv_slots(&wt, bias, input, &taps, cin, cout, k, &mut out);
    out
}

/// Runs the encoder over log-scaled input `x` (length `plan.len()`).
pub fn forward(params: &ModelParams, plan: &EncoderPlan, x: &[f64], mut mode: Mode<'_>) -> Result<EncoderTrace> {
    if x.len() != plan.n {
        return Err(Error::InvalidInput(format!(
            "input length {} does not match plan length {}",
            x.len(),
            plan.n
        )));
    }
    let cfg = params.config();
    let layout = params.layout();
    let c = cfg.hidden_channels;
    let k = cfg.kernel_k;
    let p_drop = cfg.dropout_p;
    let mut levels = Vec::with_capacity(cfg.layers_l + 1);
    levels.push(plan.positions[0].iter().map(|&p| x[p]).collect::<Vec<f64>>());
    let mut pre = Vec::with_capacity(cfg.layers_l);
    let mut masks = Vec::new();
    for block in 0..cfg.layers_l {
        let cin = if block == 0 { INPUT_CHANNELS } else { c };
        let slots = plan.positions[block + 1].len();
        let wt = transpose_kernel(params.data(layout.conv_w[block]), c, cin, k);
        let mut z = vec![0.0; slots * c];
        conv_slots(
            &wt,
            params.data(layout.conv_b[block]),
            &levels[block],
            &plan.taps[block],
            cin,
            c,
            k,
            &mut z,
        );
        let mut h: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        if let (Mode::Train(rng), true) = (&mut mode, p_drop > 0.0) {
            let keep = 1.0 / (1.0 - p_drop);
            let mask: Vec<f64> = (0..h.len())
                .map(|_| if rng.random::<f64>() < p_drop { 0.0 } else { keep })
                .collect();
            h.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            masks.push(mask);
        }
        let prev = &levels[block];
        let res = &plan.residual[block];
        match (block, layout.downsample) {
            (0, Some((wd, bd))) => {
                let wd = params.data(wd);
                let bd = params.data(bd);
                for (slot, hv) in h.chunks_exact_mut(c).enumerate() {
                    let xin = &prev[res[slot] as usize * cin..(res[slot] as usize + 1) * cin];
                    for co in 0..c {
                        hv[co] += bd[co]
                            + wd[co * cin..(co + 1) * cin]
                                .iter()
                                .zip(xin)
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                    }
                }
            }
            _ => {
                for (slot, hv) in h.chunks_exact_mut(c).enumerate() {
                    let xin = &prev[res[slot] as usize * c..(res[slot] as usize + 1) * c];
                    hv.iter_mut().zip(xin).for_each(|(a, b)| *a += b);
                }
            }
        }
        pre.push(z);
        levels.push(h);
    }
    Ok(EncoderTrace {
        channels: c,
        levels,
        pre,
        masks,
    })
}

/// Accumulates encoder parameter gradients given `grad_top`, the loss
/// gradient for every top-level planned output (`slots x channels`).
pub fn backward(
    params: &ModelParams,
    plan: &EncoderPlan,
    trace: &EncoderTrace,
    grad_top: &[f64],
    grads: &mut Gradients,
) {
    let cfg = params.config();
    let layout = params.layout();
    let c = cfg.hidden_channels;
    let k = cfg.kernel_k;
    assert_eq!(grad_top.len(), trace.top().len());
    let mut g_cur = grad_top.to_vec();
    for block in (0..cfg.layers_l).rev() {
        let cin = if block == 0 { INPUT_CHANNELS } else { c };
        let prev = &trace.levels[block];
        let z = &trace.pre[block];
        let taps = &plan.taps[block];
        let res = &plan.residual[block];
        let need_input_grad = block > 0;
        let mut g_prev = if need_input_grad { vec![0.0; prev.len()] } else { Vec::new() };
        let w = params.data(layout.conv_w[block]);
        let wt = transpose_kernel(w, c, cin, k);
        let mut gwt = vec![0.0; wt.len()];
        let mut gb = vec![0.0; c];
        let mut gz = vec![0.0; c];

        let downsample = if block == 0 { layout.downsample } else { None };
        let mut gwd = vec![0.0; c * cin];
        let mut gbd = vec![0.0; c];

        for slot in 0..g_cur.len() / c {
            let gh = &g_cur[slot * c..(slot + 1) * c];
            let r = res[slot] as usize;
            match downsample {
                Some(_) => {
                    let xin = &prev[r * cin..(r + 1) * cin];
                    for co in 0..c {
                        gbd[co] += gh[co];
                        for ci in 0..cin {
                            gwd[co * cin + ci] += gh[co] * xin[ci];
                        }
                    }
                    // the input level carries no parameters; its gradient is not needed
                }
                None if need_input_grad => {
                    for co in 0..c {
                        g_prev[r * c + co] += gh[co];
                    }
                }
                None => {}
            }
            for co in 0..c {
                let idx = slot * c + co;
                let mut g = if z[idx] > 0.0 { gh[co] } else { 0.0 };
                if let Some(mask) = trace.masks.get(block) {
                    g *= mask[idx];
                }
                gz[co] = g;
                gb[co] += g;
            }
            for tap in 0..k {
                let s = taps[slot * k + tap];
                if s == PAD {
                    continue;
                }
                let s = s as usize;
                let x = &prev[s * cin..(s + 1) * cin];
                let base = tap * c * cin;
                for co in 0..c {
                    let g = gz[co];
                    if g == 0.0 {
                        continue;
                    }
                    let gw = &mut gwt[base + co * cin..base + (co + 1) * cin];
                    gw.iter_mut().zip(x).for_each(|(a, b)| *a += g * b);
                    if need_input_grad {
                        let wrow = &wt[base + co * cin..base + (co + 1) * cin];
                        let gp = &mut g_prev[s * cin..(s + 1) * cin];
                        gp.iter_mut().zip(wrow).for_each(|(a, b)| *a += g * b);
                    }
                }
            }
        }

        let gw = &mut grads.tensors[layout.conv_w[block]];
        for co in 0..c {
            for ci in 0..cin {
                for tap in 0..k {
                    gw[(co * cin + ci) * k + tap] += gwt[(tap * c + co) * cin + ci];
                }
            }
        }
        grads.tensors[layout.conv_b[block]]
            .iter_mut()
            .zip(&gb)
            .for_each(|(a, b)| *a += b);
        if let Some((wd, bd)) = downsample {
            grads.tensors[wd].iter_mut().zip(&gwd).for_each(|(a, b)| *a += b);
            grads.tensors[bd].iter_mut().zip(&gbd).for_each(|(a, b)| *a += b);
        }
        g_cur = g_prev;
    }
}

/// Eval-mode representation `o` of one input.
pub fn encode(params: &ModelParams, plan: &EncoderPlan, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(params, plan, x, Mode::Eval)?.output().to_vec())
}
