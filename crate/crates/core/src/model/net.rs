//! Forward pass and backpropagation through time for one utterance.

use rayon::prelude::*;

use super::{GruWeights, ModelError, Parameters, RegressorModel, Result};
use crate::corpus::EmbeddingSequence;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out = bias + W x` for a row-major `rows × cols` matrix.
fn affine(w: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = bias[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += Wᵀ dy`.
fn add_transposed(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (i, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy xᵀ`.
fn add_outer(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let row = &mut dw[i * cols..(i + 1) * cols];
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

/// Intermediates of one GRU layer over a sequence.
#[derive(Clone, Debug)]
struct GruTrace {
    /// `(M + 1) × H`; row 0 is the zero initial state.
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// Recurrent part of the candidate pre-activation, `W_hn h + b_hn`.
    ghn: Vec<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    frames: usize,
    cols: usize,
    /// `M × C` after tanh.
    conv: Vec<f64>,
    layers: Vec<GruTrace>,
    pooled: Vec<f64>,
    emb: Vec<f64>,
}

/// Zero-padded window of `kernel` frames centred on `t`, flattened.
fn window(seq: &EmbeddingSequence, t: usize, kernel: usize, buf: &mut [f64]) {
    let n = seq.cols();
    let pad = kernel / 2;
    for o in 0..kernel {
        let dst = &mut buf[o * n..(o + 1) * n];
        match (t + o).checked_sub(pad).filter(|&s| s < seq.rows()) {
            Some(s) => dst.copy_from_slice(seq.row(s)),
            None => dst.fill(0.0),
        }
    }
}

fn gru_forward(w: &GruWeights, input: &[f64], frames: usize, hidden: usize) -> GruTrace {
    let in_dim = input.len() / frames;
    let mut trace = GruTrace {
        h: vec![0.0; (frames + 1) * hidden],
        r: vec![0.0; frames * hidden],
        z: vec![0.0; frames * hidden],
        n: vec![0.0; frames * hidden],
        ghn: vec![0.0; frames * hidden],
    };
    let mut gi = vec![0.0; 3 * hidden];
    let mut gh = vec![0.0; 3 * hidden];
    for t in 0..frames {
        let x = &input[t * in_dim..(t + 1) * in_dim];
        affine(&w.w_ih, &w.b_ih, x, &mut gi);
        affine(&w.w_hh, &w.b_hh, &trace.h[t * hidden..(t + 1) * hidden], &mut gh);
        for i in 0..hidden {
            let r = sigmoid(gi[i] + gh[i]);
            let z = sigmoid(gi[hidden + i] + gh[hidden + i]);
            let ghn = gh[2 * hidden + i];
            let n = (gi[2 * hidden + i] + r * ghn).tanh();
            let prev = trace.h[t * hidden + i];
            let k = t * hidden + i;
            trace.r[k] = r;
            trace.z[k] = z;
            trace.n[k] = n;
            trace.ghn[k] = ghn;
            trace.h[(t + 1) * hidden + i] = (1.0 - z) * n + z * prev;
        }
    }
    trace
}

/// Runs one utterance through the network; returns the head outputs.
pub fn forward(model: &RegressorModel, seq: &EmbeddingSequence) -> Result<(Vec<f64>, ForwardCache)> {
    let cfg = &model.config;
    let p = &model.params;
    if seq.cols() != cfg.input_dim {
        return Err(ModelError::DimensionMismatch {
            expected: cfg.input_dim,
            found: seq.cols(),
        });
    }
    let m = seq.rows();
    let c = cfg.conv_channels;
    let h = cfg.gru_units;

    let mut conv = vec![0.0; m * c];
    let mut win = vec![0.0; cfg.conv_kernel * cfg.input_dim];
    for t in 0..m {
        window(seq, t, cfg.conv_kernel, &mut win);
        let out = &mut conv[t * c..(t + 1) * c];
        affine(&p.conv_w, &p.conv_b, &win, out);
        out.iter_mut().for_each(|v| *v = v.tanh());
    }

    let mut layers: Vec<GruTrace> = Vec::with_capacity(cfg.gru_layers);
    for w in &p.gru {
        let input = match layers.last() {
            Some(prev) => &prev.h[h..],
            None => &conv[..],
        };
        layers.push(gru_forward(w, input, m, h));
    }
    let top = &layers.last().expect("at least one GRU layer").h[h..];
    let mut pooled = vec![0.0; h];
    for t in 0..m {
        for (a, v) in pooled.iter_mut().zip(&top[t * h..(t + 1) * h]) {
            *a += v;
        }
    }
    pooled.iter_mut().for_each(|v| *v /= m as f64);

    let mut emb = vec![0.0; cfg.embedding_dim];
    affine(&p.emb_w, &p.emb_b, &pooled, &mut emb);
    emb.iter_mut().for_each(|v| *v = v.tanh());
    let mut out = vec![0.0; cfg.heads];
    affine(&p.head_w, &p.head_b, &emb, &mut out);

    if !out.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite("head outputs"));
    }
    if !pooled.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite("pooled GRU state"));
    }
    Ok((
        out,
        ForwardCache {
            generation: model.generation(),
            frames: m,
            cols: seq.cols(),
            conv,
            layers,
            pooled,
            emb,
        },
    ))
}

/// Backpropagates `d_out` (gradient of the loss at the head outputs) and
/// returns the gradient of every parameter.
pub fn backward(
    model: &RegressorModel,
    seq: &EmbeddingSequence,
    cache: &ForwardCache,
    d_out: &[f64],
) -> Result<Parameters> {
    let cfg = &model.config;
    let p = &model.params;
    if cache.generation != model.generation() {
        return Err(ModelError::StaleCache("parameters changed since forward"));
    }
    if cache.frames != seq.rows() || cache.cols != seq.cols() {
        return Err(ModelError::StaleCache("sequence shape differs"));
    }
    if d_out.len() != cfg.heads {
        return Err(ModelError::StaleCache("output gradient has the wrong length"));
    }
    let m = cache.frames;
    let c = cfg.conv_channels;
    let h = cfg.gru_units;
    let mut g = Parameters::zeros(cfg);

    // heads
    add_outer(&mut g.head_w, d_out, &cache.emb);
    g.head_b.copy_from_slice(d_out);
    let mut d_emb = vec![0.0; cfg.embedding_dim];
    add_transposed(&p.head_w, d_out, &mut d_emb);

    // embedding
    let d_emb_pre: Vec<f64> = d_emb
        .iter()
        .zip(&cache.emb)
        .map(|(d, e)| d * (1.0 - e * e))
        .collect();
    add_outer(&mut g.emb_w, &d_emb_pre, &cache.pooled);
    g.emb_b.copy_from_slice(&d_emb_pre);
    let mut d_pooled = vec![0.0; h];
    add_transposed(&p.emb_w, &d_emb_pre, &mut d_pooled);

    // mean pooling spreads the gradient evenly over time
    let share: Vec<f64> = d_pooled.iter().map(|v| v / m as f64).collect();
    let mut d_seq: Vec<f64> = (0..m).flat_map(|_| share.iter().copied()).collect();

    for l in (0..cfg.gru_layers).rev() {
        let trace = &cache.layers[l];
        let input: &[f64] = if l == 0 { &cache.conv } else { &cache.layers[l - 1].h[h..] };
        let in_dim = if l == 0 { c } else { h };
        d_seq = gru_backward(&p.gru[l], &mut g.gru[l], trace, input, in_dim, h, &d_seq);
    }

    // convolution
    let mut win = vec![0.0; cfg.conv_kernel * cfg.input_dim];
    let mut d_pre = vec![0.0; c];
    for t in 0..m {
        let a = &cache.conv[t * c..(t + 1) * c];
        let da = &d_seq[t * c..(t + 1) * c];
        for i in 0..c {
            d_pre[i] = da[i] * (1.0 - a[i] * a[i]);
        }
        window(seq, t, cfg.conv_kernel, &mut win);
        add_outer(&mut g.conv_w, &d_pre, &win);
        for (b, d) in g.conv_b.iter_mut().zip(&d_pre) {
            *b += d;
        }
    }
    Ok(g)
}

/// BPTT through one GRU layer. `d_out` is the gradient at each output
/// state (`M × H`); returns the gradient at each input (`M × in_dim`).
fn gru_backward(
    w: &GruWeights,
    g: &mut GruWeights,
    trace: &GruTrace,
    input: &[f64],
    in_dim: usize,
    hidden: usize,
    d_out: &[f64],
) -> Vec<f64> {
    let frames = d_out.len() / hidden;
    let mut d_input = vec![0.0; frames * in_dim];
    let mut carry = vec![0.0; hidden];
    let mut dgi = vec![0.0; 3 * hidden];
    let mut dgh = vec![0.0; 3 * hidden];
    for t in (0..frames).rev() {
        let prev = &trace.h[t * hidden..(t + 1) * hidden];
        let mut d_prev = vec![0.0; hidden];
        for i in 0..hidden {
            let k = t * hidden + i;
            let (r, z, n, ghn) = (trace.r[k], trace.z[k], trace.n[k], trace.ghn[k]);
            let dh = d_out[k] + carry[i];
            let dn = dh * (1.0 - z);
            let dz = dh * (prev[i] - n);
            d_prev[i] = dh * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr_pre = dn_pre * ghn * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            dgi[i] = dr_pre;
            dgi[hidden + i] = dz_pre;
            dgi[2 * hidden + i] = dn_pre;
            dgh[i] = dr_pre;
            dgh[hidden + i] = dz_pre;
            dgh[2 * hidden + i] = dn_pre * r;
        }
        let x = &input[t * in_dim..(t + 1) * in_dim];
        add_outer(&mut g.w_ih, &dgi, x);
        add_outer(&mut g.w_hh, &dgh, prev);
        for (b, d) in g.b_ih.iter_mut().zip(&dgi) {
            *b += d;
        }
        for (b, d) in g.b_hh.iter_mut().zip(&dgh) {
            *b += d;
        }
        add_transposed(&w.w_ih, &dgi, &mut d_input[t * in_dim..(t + 1) * in_dim]);
        add_transposed(&w.w_hh, &dgh, &mut d_prev);
        carry = d_prev;
    }
    d_input
}

/// Forward over a batch. Returns predictions as `heads × batch` rows plus
/// one cache per utterance. Utterances run in parallel; results are
/// independent of scheduling.
pub fn forward_batch(
    model: &RegressorModel,
    seqs: &[&EmbeddingSequence],
) -> Result<(Vec<Vec<f64>>, Vec<ForwardCache>)> {
    let outs = seqs
        .par_iter()
        .map(|s| forward(model, s))
        .collect::<Result<Vec<_>>>()?;
    let heads = model.config.heads;
    let mut pred = vec![Vec::with_capacity(seqs.len()); heads];
    let mut caches = Vec::with_capacity(seqs.len());
    for (o, cache) in outs {
        for (row, v) in pred.iter_mut().zip(o) {
            row.push(v);
        }
        caches.push(cache);
    }
    Ok((pred, caches))
}

/// Gradient summed over a batch, given `d_pred` shaped `heads × batch`.
/// Per-utterance gradients are added in batch order.
pub fn backward_batch(
    model: &RegressorModel,
    seqs: &[&EmbeddingSequence],
    caches: &[ForwardCache],
    d_pred: &[Vec<f64>],
) -> Result<Parameters> {
    if caches.len() != seqs.len() || d_pred.iter().any(|r| r.len() != seqs.len()) {
        return Err(ModelError::StaleCache("batch size differs"));
    }
    let grads = (0..seqs.len())
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> = d_pred.iter().map(|row| row[i]).collect();
            backward(model, seqs[i], &caches[i], &d)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Parameters::zeros(&model.config);
    for g in &grads {
        total.add_assign(g);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            conv_kernel: 3,
            conv_channels: 4,
            gru_layers: 2,
            gru_units: 3,
            embedding_dim: 2,
            heads: 3,
            seed,
        }
    }

    fn random_seq(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingSequence {
        EmbeddingSequence::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Straight-line recomputation of the network using nested loops and
    /// explicit gate equations, independent of the cached implementation.
    fn reference_forward(model: &RegressorModel, seq: &EmbeddingSequence) -> Vec<f64> {
        let cfg = &model.config;
        let p = &model.params;
        let (m, n, c, h) = (seq.rows(), seq.cols(), cfg.conv_channels, cfg.gru_units);
        let k = cfg.conv_kernel;
        let mut layer_in: Vec<Vec<f64>> = (0..m)
            .map(|t| {
                (0..c)
                    .map(|ch| {
                        let mut s = p.conv_b[ch];
                        for o in 0..k {
                            let src = t as isize + o as isize - (k / 2) as isize;
                            if src < 0 || src >= m as isize {
                                continue;
                            }
                            for j in 0..n {
                                s += p.conv_w[(ch * k + o) * n + j] * seq.get(src as usize, j);
                            }
                        }
                        s.tanh()
                    })
                    .collect()
            })
            .collect();
        for gw in &p.gru {
            let i_dim = layer_in[0].len();
            let mut state = vec![0.0; h];
            let mut outs = Vec::new();
            for x in &layer_in {
                let dot = |w: &[f64], row: usize, v: &[f64], cols: usize| -> f64 {
                    (0..cols).map(|j| w[row * cols + j] * v[j]).sum()
                };
                let mut next = vec![0.0; h];
                for u in 0..h {
                    let r = 1.0
                        / (1.0
                            + (-(dot(&gw.w_ih, u, x, i_dim) + gw.b_ih[u] + dot(&gw.w_hh, u, &state, h) + gw.b_hh[u]))
                                .exp());
                    let z = 1.0
                        / (1.0
                            + (-(dot(&gw.w_ih, h + u, x, i_dim)
                                + gw.b_ih[h + u]
                                + dot(&gw.w_hh, h + u, &state, h)
                                + gw.b_hh[h + u]))
                                .exp());
                    let cand = (dot(&gw.w_ih, 2 * h + u, x, i_dim)
                        + gw.b_ih[2 * h + u]
                        + r * (dot(&gw.w_hh, 2 * h + u, &state, h) + gw.b_hh[2 * h + u]))
                        .tanh();
                    next[u] = (1.0 - z) * cand + z * state[u];
                }
                state = next.clone();
                outs.push(next);
            }
            layer_in = outs;
        }
        let pooled: Vec<f64> = (0..h).map(|u| layer_in.iter().map(|r| r[u]).sum::<f64>() / m as f64).collect();
        let emb: Vec<f64> = (0..cfg.embedding_dim)
            .map(|e| (p.emb_b[e] + (0..h).map(|u| p.emb_w[e * h + u] * pooled[u]).sum::<f64>()).tanh())
            .collect();
        (0..cfg.heads)
            .map(|o| p.head_b[o] + (0..cfg.embedding_dim).map(|e| p.head_w[o * cfg.embedding_dim + e] * emb[e]).sum::<f64>())
            .collect()
    }

    #[test]
    fn matches_reference_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for seed in 0..3 {
            let model = RegressorModel::new(tiny(seed)).unwrap();
            let seq = random_seq(&mut rng, 5, 3);
            let (out, _) = forward(&model, &seq).unwrap();
            let expect = reference_forward(&model, &seq);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let model = RegressorModel::new(tiny(1)).unwrap();
        let seq = EmbeddingSequence::new(4, 3, vec![0.0; 12]).unwrap();
        let (out, _) = forward(&model, &seq).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_frame_pooling_is_identity() {
        let model = RegressorModel::new(tiny(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let seq = random_seq(&mut rng, 1, 3);
        let (_, cache) = forward(&model, &seq).unwrap();
        assert_eq!(cache.pooled, cache.layers[1].h[3..6].to_vec());
    }

    #[test]
    fn batch_forward_equals_single() {
        let model = RegressorModel::new(tiny(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let seqs: Vec<EmbeddingSequence> = (1..6).map(|m| random_seq(&mut rng, m, 3)).collect();
        let refs: Vec<&EmbeddingSequence> = seqs.iter().collect();
        let (pred, _) = forward_batch(&model, &refs).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let (one, _) = forward(&model, s).unwrap();
            for o in 0..3 {
                assert_eq!(pred[o][i], one[o]);
            }
        }
    }

    #[test]
    fn zero_gradient_in_zero_gradient_out() {
        let model = RegressorModel::new(tiny(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let seq = random_seq(&mut rng, 3, 3);
        let (_, cache) = forward(&model, &seq).unwrap();
        let g = backward(&model, &seq, &cache, &[0.0; 3]).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_mismatch_and_stale_cache() {
        let mut model = RegressorModel::new(tiny(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        assert!(matches!(
            forward(&model, &random_seq(&mut rng, 2, 4)),
            Err(ModelError::DimensionMismatch { .. })
        ));
        let seq = random_seq(&mut rng, 3, 3);
        let (_, cache) = forward(&model, &seq).unwrap();
        let other = random_seq(&mut rng, 4, 3);
        assert!(matches!(
            backward(&model, &other, &cache, &[1.0; 3]),
            Err(ModelError::StaleCache(_))
        ));
        model.params_mut().head_b[0] += 1.0;
        assert!(matches!(
            backward(&model, &seq, &cache, &[1.0; 3]),
            Err(ModelError::StaleCache(_))
        ));
    }

    #[test]
    fn output_gradient_matches_finite_differences() {
        let model = RegressorModel::new(tiny(6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let seq = random_seq(&mut rng, 4, 3);
        let d_out = [0.3, -1.2, 0.7];
        let (_, cache) = forward(&model, &seq).unwrap();
        let g = backward(&model, &seq, &cache, &d_out).unwrap();
        let objective = |m: &RegressorModel| -> f64 {
            let (o, _) = forward(m, &seq).unwrap();
            o.iter().zip(&d_out).map(|(a, b)| a * b).sum()
        };
        let mut probe = model.clone();
        let h = 1e-5;
        let n_tensors = g.tensors().len();
        for ti in 0..n_tensors {
            let len = g.tensors()[ti].len();
            for j in 0..len {
                let orig = probe.params.tensors()[ti][j];
                probe.params_mut().tensors_mut()[ti][j] = orig + h;
                let up = objective(&probe);
                probe.params_mut().tensors_mut()[ti][j] = orig - h;
                let down = objective(&probe);
                probe.params_mut().tensors_mut()[ti][j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = g.tensors()[ti][j];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-5, "tensor {ti} idx {j}: fd {fd} vs {an}");
            }
        }
    }
}
