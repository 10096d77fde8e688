//! Time-conditioned per-frame denoiser with one temporal mixing stage.
//!
//! Per frame `k` with latent `x_k` (flattened `h*w*c`):
//!
//! ```text
//! u_k  = x_k + emb[label]
//! h_k  = W_in u_k + W_time tau(t) + b_in
//! m_k  = sum_o mix[o] * h_{k+o-1}        (depthwise, taps at k-1, k, k+1)
//! y_k  = W_out tanh(m_k) + b_out + skip * x_k
//! ```
//!
//! There is no constant path: all-zero parameters give an all-zero output.
//! Gradients are computed by hand so the flat parameter layout below is
//! stable; sketches and checkpoints depend on it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIX_TAPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Flattened latent frame size `h*w*c`.
    pub frame_dim: usize,
    pub hidden: usize,
    /// Number of sinusoidal timestep features (even).
    pub time_features: usize,
    pub categories: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            frame_dim: 8 * 8 * 4,
            hidden: 192,
            time_features: 16,
            categories: 7,
        }
    }
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w_in: usize,
    w_time: usize,
    b_in: usize,
    mix: usize,
    w_out: usize,
    b_out: usize,
    skip: usize,
    emb: usize,
    total: usize,
}

impl Architecture {
    /// Layout in order: `w_in [H x P]`, `w_time [H x S]`, `b_in [H]`,
    /// `mix [3 x H]`, `w_out [P x H]`, `b_out [P]`, `skip [P]`, `emb [K x P]`.
    pub fn layers(&self) -> Vec<LayerSlot> {
        let (p, h, s, k) = (self.frame_dim, self.hidden, self.time_features, self.categories);
        let sizes = [
            ("w_in", h * p),
            ("w_time", h * s),
            ("b_in", h),
            ("mix", MIX_TAPS * h),
            ("w_out", p * h),
            ("b_out", p),
            ("skip", p),
            ("emb", k * p),
        ];
        let mut offset = 0;
        sizes
            .iter()
            .map(|&(name, len)| {
                let slot = LayerSlot { name, offset, len };
                offset += len;
                slot
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.offsets().total
    }

    fn offsets(&self) -> Offsets {
        let l = self.layers();
        let last = l.last().unwrap();
        Offsets {
            w_in: l[0].offset,
            w_time: l[1].offset,
            b_in: l[2].offset,
            mix: l[3].offset,
            w_out: l[4].offset,
            b_out: l[5].offset,
            skip: l[6].offset,
            emb: l[7].offset,
            total: last.offset + last.len,
        }
    }

    /// Sinusoidal features of the raw timestep.
    pub fn time_embedding(&self, t: f64) -> Vec<f64> {
        let half = self.time_features / 2;
        let mut out = Vec::with_capacity(self.time_features);
        for j in 0..half {
            let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
            out.push((t * freq).sin());
        }
        for j in 0..half {
            let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
            out.push((t * freq).cos());
        }
        out
    }
}

/// Flat parameter vector `theta` plus its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        ModelParams {
            arch,
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let o = arch.offsets();
        let mut values = vec![0.0; o.total];
        let (p, h, s) = (arch.frame_dim as f64, arch.hidden as f64, arch.time_features as f64);
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            let dist = Normal::new(0.0, std).unwrap();
            for v in &mut values[range] {
                *v = dist.sample(&mut r);
            }
        };
        fill(o.w_in..o.w_time, 1.0 / p.sqrt());
        fill(o.w_time..o.b_in, 0.5 / s.sqrt());
        fill(o.w_out..o.b_out, 0.5 / h.sqrt());
        fill(o.emb..o.total, 0.1);
        fill(o.mix..o.w_out, 0.1);
        let hidden = arch.hidden;
        for v in &mut values[o.mix + hidden..o.mix + 2 * hidden] {
            *v += 1.0;
        }
        ModelParams { arch, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rounds every value through f32, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = f64::from(*v as f32);
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    frames: usize,
    label: usize,
    input: Vec<f64>,
    time: Vec<f64>,
    embedded: Vec<f64>,
    hidden: Vec<f64>,
    act: Vec<f64>,
    pub output: Vec<f64>,
}

fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Forward pass over `frames` latent frames laid out `[F][P]`.
pub fn forward(params: &ModelParams, x: &[f64], frames: usize, label: u32, t: f64) -> Result<Activations> {
    let arch = params.arch;
    let (p, h) = (arch.frame_dim, arch.hidden);
    if x.len() != frames * p {
        return Err(Error::DimensionMismatch(format!(
            "input has {} values, expected {frames}x{p}",
            x.len()
        )));
    }
    let label = label as usize;
    if label >= arch.categories {
        return Err(Error::InvalidParam(format!("label {label} out of range")));
    }
    let o = arch.offsets();
    let th = &params.values;
    let emb = &th[o.emb + label * p..o.emb + (label + 1) * p];
    let time = arch.time_embedding(t);
    let mut time_drive = th[o.b_in..o.b_in + h].to_vec();
    matvec(&th[o.w_time..o.b_in], &time, &mut time_drive);

    let mut embedded = Vec::with_capacity(frames * p);
    let mut hidden = vec![0.0; frames * h];
    for k in 0..frames {
        let start = embedded.len();
        embedded.extend(x[k * p..(k + 1) * p].iter().zip(emb).map(|(a, b)| a + b));
        let hk = &mut hidden[k * h..(k + 1) * h];
        hk.copy_from_slice(&time_drive);
        matvec(&th[o.w_in..o.w_time], &embedded[start..], hk);
    }

    let mix = &th[o.mix..o.w_out];
    let mut act = vec![0.0; frames * h];
    for k in 0..frames {
        let ak = &mut act[k * h..(k + 1) * h];
        for (tap, weights) in mix.chunks_exact(h).enumerate() {
            let src = k as isize + tap as isize - 1;
            if src < 0 || src >= frames as isize {
                continue;
            }
            let hs = &hidden[src as usize * h..(src as usize + 1) * h];
            for ((a, w), v) in ak.iter_mut().zip(weights).zip(hs) {
                *a += w * v;
            }
        }
        for a in ak.iter_mut() {
            *a = a.tanh();
        }
    }

    let skip = &th[o.skip..o.emb];
    let mut output = Vec::with_capacity(frames * p);
    for k in 0..frames {
        let start = output.len();
        output.extend_from_slice(&th[o.b_out..o.skip]);
        matvec(&th[o.w_out..o.b_out], &act[k * h..(k + 1) * h], &mut output[start..]);
        for ((y, s), xv) in output[start..].iter_mut().zip(skip).zip(&x[k * p..(k + 1) * p]) {
            *y += s * xv;
        }
    }
    if output.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation);
    }
    Ok(Activations {
        frames,
        label,
        input: x.to_vec(),
        time,
        embedded,
        hidden,
        act,
        output,
    })
}

/// Accumulates `d loss / d theta` into `grad` given `d loss / d output`.
pub fn backward(params: &ModelParams, acts: &Activations, d_out: &[f64], grad: &mut [f64]) {
    let arch = params.arch;
    let (p, h) = (arch.frame_dim, arch.hidden);
    let o = arch.offsets();
    let th = &params.values;
    let frames = acts.frames;
    debug_assert_eq!(d_out.len(), frames * p);
    debug_assert_eq!(grad.len(), o.total);

    let w_out = &th[o.w_out..o.b_out];
    let mut d_pre = vec![0.0; frames * h];
    for k in 0..frames {
        let dy = &d_out[k * p..(k + 1) * p];
        let ak = &acts.act[k * h..(k + 1) * h];
        let xk = &acts.input[k * p..(k + 1) * p];
        for (i, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad[o.w_out + i * h..o.w_out + (i + 1) * h];
            for (r, a) in row.iter_mut().zip(ak) {
                *r += g * a;
            }
            grad[o.b_out + i] += g;
            grad[o.skip + i] += g * xk[i];
        }
        let dk = &mut d_pre[k * h..(k + 1) * h];
        for (i, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, w) in dk.iter_mut().zip(&w_out[i * h..(i + 1) * h]) {
                *d += g * w;
            }
        }
        for (d, a) in dk.iter_mut().zip(ak) {
            *d *= 1.0 - a * a;
        }
    }

    let mix = &th[o.mix..o.w_out];
    let mut d_hidden = vec![0.0; frames * h];
    for k in 0..frames {
        let dk = &d_pre[k * h..(k + 1) * h];
        for tap in 0..MIX_TAPS {
            let src = k as isize + tap as isize - 1;
            if src < 0 || src >= frames as isize {
                continue;
            }
            let src = src as usize;
            let weights = &mix[tap * h..(tap + 1) * h];
            let hs = &acts.hidden[src * h..(src + 1) * h];
            let gm = &mut grad[o.mix + tap * h..o.mix + (tap + 1) * h];
            for i in 0..h {
                gm[i] += dk[i] * hs[i];
            }
            let dh = &mut d_hidden[src * h..(src + 1) * h];
            for i in 0..h {
                dh[i] += dk[i] * weights[i];
            }
        }
    }

    let w_in = &th[o.w_in..o.w_time];
    let mut d_hidden_sum = vec![0.0; h];
    let mut d_emb = vec![0.0; p];
    for k in 0..frames {
        let dh = &d_hidden[k * h..(k + 1) * h];
        let uk = &acts.embedded[k * p..(k + 1) * p];
        for (i, &g) in dh.iter().enumerate() {
            d_hidden_sum[i] += g;
            let row = &mut grad[o.w_in + i * p..o.w_in + (i + 1) * p];
            for (r, u) in row.iter_mut().zip(uk) {
                *r += g * u;
            }
            for (d, w) in d_emb.iter_mut().zip(&w_in[i * p..(i + 1) * p]) {
                *d += g * w;
            }
        }
    }
    let s = arch.time_features;
    for (i, &g) in d_hidden_sum.iter().enumerate() {
        grad[o.b_in + i] += g;
        let row = &mut grad[o.w_time + i * s..o.w_time + (i + 1) * s];
        for (r, tf) in row.iter_mut().zip(&acts.time) {
            *r += g * tf;
        }
    }
    let emb = &mut grad[o.emb + acts.label * p..o.emb + (acts.label + 1) * p];
    for (e, d) in emb.iter_mut().zip(&d_emb) {
        *e += d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn small() -> Architecture {
        Architecture {
            frame_dim: 12,
            hidden: 6,
            time_features: 4,
            categories: 3,
        }
    }

    #[test]
    fn default_size_is_about_1e5() {
        let n = Architecture::default().param_count();
        assert_eq!(n, 104_448);
        let layers = Architecture::default().layers();
        assert_eq!(layers.iter().map(|l| l.len).sum::<usize>(), n);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let params = ModelParams::zeros(small());
        let x = rng::gaussian_vec(&mut rng::chacha(1), 4 * 12);
        let acts = forward(&params, &x, 4, 1, 751.0).unwrap();
        assert!(acts.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let arch = small();
        let mut params = ModelParams::init(arch, 3);
        for v in &mut params.values {
            *v += 0.05;
        }
        let x = rng::gaussian_vec(&mut rng::chacha(2), 5 * 12);
        let probe = rng::gaussian_vec(&mut rng::chacha(4), 5 * 12);
        let objective = |p: &ModelParams| -> f64 {
            let out = forward(p, &x, 5, 2, 300.0).unwrap().output;
            out.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let acts = forward(&params, &x, 5, 2, 300.0).unwrap();
        let mut grad = vec![0.0; params.len()];
        backward(&params, &acts, &probe, &mut grad);
        for i in (0..params.len()).step_by(7) {
            let mut plus = params.clone();
            plus.values[i] += 1e-5;
            let mut minus = params.clone();
            minus.values[i] -= 1e-5;
            let fd = (objective(&plus) - objective(&minus)) / 2e-5;
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
