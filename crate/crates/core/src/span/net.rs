//! Forward and backward passes of the span classifier.

use std::ops::Range;

use rand::Rng;

use crate::linalg::{gemm, softmax_in_place, Real};
use crate::nn::{dropout_mask, Linear, MaxoutLn, MaxoutLnCache, Param};
use crate::textproc::{hash_attr, TokenizedDocument};

use super::SpanModelConfig;

pub const ATTR_NAMES: [&str; 4] = ["norm", "prefix", "suffix", "shape"];

/// Hashed attribute rows of each token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocFeatures {
    pub ids: Vec<[u32; 4]>,
}

impl DocFeatures {
    pub fn new(doc: &TokenizedDocument, rows: [usize; 4]) -> Self {
        let ids = doc
            .tokens
            .iter()
            .map(|t| {
                let a = t.attrs();
                std::array::from_fn(|i| hash_attr(a[i], i, rows[i]) as u32)
            })
            .collect();
        DocFeatures { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Net<F> {
    pub params: Vec<Param<F>>,
    pub rows: [usize; 4],
    pub width: usize,
    pub mix: MaxoutLn,
    pub encoder: Vec<MaxoutLn>,
    pub hidden: MaxoutLn,
    pub output: Linear,
    pub n_classes: usize,
    pub embed_dropout: f64,
    pub pool_dropout: f64,
}

/// Everything the backward pass needs from a forward pass.
pub struct Trace<F> {
    x0: Vec<F>,
    emb_mask: Option<Vec<F>>,
    mix_cache: MaxoutLnCache<F>,
    windows: Vec<Vec<F>>,
    layer_caches: Vec<MaxoutLnCache<F>>,
    h: Vec<F>,
    pool_mask: Option<Vec<F>>,
    /// Hidden weights for the mean half, masked (`units × width`).
    mean_w: Vec<F>,
    /// Hidden weights for the max half, masked (`units × width`).
    max_w: Vec<F>,
    /// Max-pooled vectors (`spans × width`) and the token holding each entry.
    pooled_max: Vec<F>,
    argmax: Vec<u32>,
    hid_cache: MaxoutLnCache<F>,
    hid_out: Vec<F>,
    /// Rows of class probabilities, one per span.
    pub probs: Vec<F>,
}

/// Spans sharing a start token, as `(length, span index)` sorted by length.
struct StartGroup {
    start: usize,
    members: Vec<(usize, usize)>,
}

impl StartGroup {
    fn max_len(&self) -> usize {
        self.members.last().map_or(0, |m| m.0)
    }
}

fn group_spans(spans: &[Range<usize>], l: usize) -> Vec<StartGroup> {
    let mut by_start: Vec<Vec<(usize, usize)>> = vec![Vec::new(); l];
    for (i, r) in spans.iter().enumerate() {
        assert!(
            !r.is_empty() && r.end <= l,
            "span {r:?} outside document of {l} tokens"
        );
        by_start[r.start].push((r.len(), i));
    }
    by_start
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(start, mut members)| {
            members.sort_unstable();
            StartGroup { start, members }
        })
        .collect()
}

fn axpy<F: Real>(y: &mut [F], x: &[F], a: F) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * *xv;
    }
}

impl<F: Real> Net<F> {
    pub fn new<R: Rng>(cfg: &SpanModelConfig, n_classes: usize, rng: &mut R) -> Self {
        let w = cfg.width;
        let piece = w / 4;
        let mut params = Vec::new();
        for (i, name) in ATTR_NAMES.iter().enumerate() {
            params.push(Param::uniform(
                format!("embed.{name}"),
                &[cfg.embed_rows[i], piece],
                0.1,
                rng,
            ));
        }
        let mix = MaxoutLn::init(&mut params, "mix", w, w, cfg.maxout_pieces, rng);
        let n_window = (2 * cfg.window + 1) * w;
        let encoder = (0..cfg.encoder_depth)
            .map(|d| {
                MaxoutLn::init(
                    &mut params,
                    &format!("encoder.{d}"),
                    n_window,
                    w,
                    cfg.maxout_pieces,
                    rng,
                )
            })
            .collect();
        let hidden = MaxoutLn::init(
            &mut params,
            "hidden",
            2 * w,
            cfg.hidden,
            cfg.maxout_pieces,
            rng,
        );
        let output = Linear::init(&mut params, "output", cfg.hidden, n_classes, rng);
        Net {
            params,
            rows: cfg.embed_rows,
            width: w,
            mix,
            encoder,
            hidden,
            output,
            n_classes,
            embed_dropout: cfg.dropout,
            pool_dropout: cfg.dropout,
        }
    }

    fn window_of(&self) -> usize {
        self.encoder
            .first()
            .map_or(1, |l| (l.n_in / self.width - 1) / 2)
    }

    /// Encoded token matrix (`L × width`) plus the trace pieces it needs.
    fn encode<R: Rng>(&self, feats: &DocFeatures, mut rng: Option<&mut R>) -> EncodeOut<F> {
        let w = self.width;
        let piece = w / 4;
        let l = feats.len();
        let mut x0 = vec![F::ZERO; l * w];
        for (t, ids) in feats.ids.iter().enumerate() {
            for a in 0..4 {
                let row = ids[a] as usize;
                x0[t * w + a * piece..t * w + (a + 1) * piece]
                    .copy_from_slice(&self.params[a].value[row * piece..(row + 1) * piece]);
            }
        }
        let emb_mask = match rng.as_deref_mut() {
            Some(r) if self.embed_dropout > 0.0 => {
                let m = dropout_mask::<F, R>(l * w, self.embed_dropout, r);
                x0.iter_mut().zip(&m).for_each(|(x, k)| *x *= *k);
                Some(m)
            }
            _ => None,
        };
        let (mut h, mix_cache) = self.mix.forward(&self.params, &x0, l);
        let win = self.window_of();
        let mut windows = Vec::with_capacity(self.encoder.len());
        let mut layer_caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let c = window_concat(&h, l, w, win);
            let (out, cache) = layer.forward(&self.params, &c, l);
            h.iter_mut().zip(&out).for_each(|(a, b)| *a += *b);
            windows.push(c);
            layer_caches.push(cache);
        }
        EncodeOut {
            x0,
            emb_mask,
            mix_cache,
            windows,
            layer_caches,
            h,
        }
    }

    /// Class probabilities for `spans`; pass an RNG to enable dropout.
    ///
    /// The mean half of the hidden layer over `mean ‖ max` pooling goes
    /// through per-token projections and prefix sums, so mean-pooled vectors
    /// are never built; max pooling is updated incrementally as spans sharing
    /// a start grow. Pooled-feature dropout is folded into the hidden weights
    /// and therefore uses one mask per document.
    pub fn forward<R: Rng>(
        &self,
        feats: &DocFeatures,
        spans: &[Range<usize>],
        mut rng: Option<&mut R>,
    ) -> Trace<F> {
        let w = self.width;
        let l = feats.len();
        let units = self.hidden.pieces * self.hidden.width;
        let groups = group_spans(spans, l);
        let enc = self.encode(feats, rng.as_deref_mut());
        let h = enc.h;
        let pool_mask = match rng.as_deref_mut() {
            Some(r) if self.pool_dropout > 0.0 => {
                Some(dropout_mask::<F, R>(2 * w, self.pool_dropout, r))
            }
            _ => None,
        };
        let weight = &self.params[self.hidden.weight].value;
        let mut mean_w = vec![F::ZERO; units * w];
        let mut max_w = vec![F::ZERO; units * w];
        for u in 0..units {
            for d in 0..w {
                let (ma, mb) = pool_mask
                    .as_ref()
                    .map_or((F::ONE, F::ONE), |m| (m[d], m[w + d]));
                mean_w[u * w + d] = weight[u * 2 * w + d] * ma;
                max_w[u * w + d] = weight[u * 2 * w + w + d] * mb;
            }
        }
        let mut proj = vec![F::ZERO; l * units];
        gemm(l, w, units, &h, false, &mean_w, true, F::ZERO, &mut proj);
        let mut prefix = vec![F::ZERO; (l + 1) * units];
        for t in 0..l {
            let (lo, hi) = prefix.split_at_mut((t + 1) * units);
            for ((out, a), b) in hi[..units]
                .iter_mut()
                .zip(&lo[t * units..])
                .zip(&proj[t * units..(t + 1) * units])
            {
                *out = *a + *b;
            }
        }
        let bias = &self.params[self.hidden.bias].value;
        let n = spans.len();
        let mut z = vec![F::ZERO; n * units];
        let mut pooled_max = vec![F::ZERO; n * w];
        let mut argmax = vec![0u32; n * w];
        let mut m = vec![F::ZERO; w];
        let mut arg = vec![0u32; w];
        for g in &groups {
            let mut next = 0;
            for k in 1..=g.max_len() {
                let t = g.start + k - 1;
                let ht = &h[t * w..(t + 1) * w];
                if k == 1 {
                    m.copy_from_slice(ht);
                    arg.fill(t as u32);
                } else {
                    for d in 0..w {
                        if ht[d] > m[d] {
                            m[d] = ht[d];
                            arg[d] = t as u32;
                        }
                    }
                }
                let inv = F::ONE / F::from_f64(k as f64);
                while next < g.members.len() && g.members[next].0 == k {
                    let i = g.members[next].1;
                    pooled_max[i * w..(i + 1) * w].copy_from_slice(&m);
                    argmax[i * w..(i + 1) * w].copy_from_slice(&arg);
                    let row = &mut z[i * units..(i + 1) * units];
                    let hi = &prefix[(t + 1) * units..(t + 2) * units];
                    let lo = &prefix[g.start * units..(g.start + 1) * units];
                    for (((out, a), b), bv) in row.iter_mut().zip(hi).zip(lo).zip(bias) {
                        *out = (*a - *b) * inv + *bv;
                    }
                    next += 1;
                }
            }
        }
        gemm(
            n,
            w,
            units,
            &pooled_max,
            false,
            &max_w,
            true,
            F::ONE,
            &mut z,
        );
        let (hid_out, hid_cache) = self.hidden.activate(&self.params, &z, spans.len());
        let mut probs = self.output.forward(&self.params, &hid_out, spans.len());
        for row in probs.chunks_mut(self.n_classes) {
            softmax_in_place(row);
        }
        Trace {
            x0: enc.x0,
            emb_mask: enc.emb_mask,
            mix_cache: enc.mix_cache,
            windows: enc.windows,
            layer_caches: enc.layer_caches,
            h,
            pool_mask,
            mean_w,
            max_w,
            pooled_max,
            argmax,
            hid_cache,
            hid_out,
            probs,
        }
    }

    /// Weighted cross-entropy `Σ weight_i · CE_i / norm`, where span `i` has
    /// class `targets[i]` and weight `negative_weight` when that class is 0.
    pub fn loss(
        trace: &Trace<F>,
        n_classes: usize,
        targets: &[usize],
        negative_weight: f64,
        norm: f64,
    ) -> f64 {
        let mut total = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let p = trace.probs[i * n_classes + y].to_f64();
            let w = if y == 0 { negative_weight } else { 1.0 };
            total -= w * p.max(f64::MIN_POSITIVE).ln();
        }
        total / norm
    }

    /// Accumulates gradients of [`Net::loss`] into the parameters.
    pub fn backward(
        &mut self,
        feats: &DocFeatures,
        spans: &[Range<usize>],
        trace: &Trace<F>,
        targets: &[usize],
        negative_weight: f64,
        norm: f64,
    ) {
        let w = self.width;
        let c = self.n_classes;
        let l = feats.len();
        let s = spans.len();
        let mut dlogits = trace.probs.clone();
        for (i, &y) in targets.iter().enumerate() {
            let scale = F::from_f64(if y == 0 { negative_weight } else { 1.0 } / norm);
            let row = &mut dlogits[i * c..(i + 1) * c];
            row[y] -= F::ONE;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        let dhid = self
            .output
            .backward(&mut self.params, &trace.hid_out, s, &dlogits);
        let dz = self
            .hidden
            .deactivate(&mut self.params, s, &trace.hid_cache, &dhid);
        let units = self.hidden.pieces * self.hidden.width;
        {
            let db = &mut self.params[self.hidden.bias].grad;
            for row in dz.chunks(units) {
                for (g, &d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let h = &trace.h;
        let mut dh = vec![F::ZERO; l * w];

        // Mean half: each span spreads dz / len over its tokens.
        let mut spread = vec![F::ZERO; (l + 1) * units];
        for (i, r) in spans.iter().enumerate() {
            let inv = F::ONE / F::from_f64(r.len() as f64);
            let g = &dz[i * units..(i + 1) * units];
            axpy(&mut spread[r.start * units..(r.start + 1) * units], g, inv);
            axpy(&mut spread[r.end * units..(r.end + 1) * units], g, -inv);
        }
        let mut gtok = vec![F::ZERO; l * units];
        let mut run = vec![F::ZERO; units];
        for t in 0..l {
            for ((acc, s), out) in run
                .iter_mut()
                .zip(&spread[t * units..(t + 1) * units])
                .zip(&mut gtok[t * units..(t + 1) * units])
            {
                *acc += *s;
                *out = *acc;
            }
        }
        let mut dmean_w = vec![F::ZERO; units * w];
        gemm(units, l, w, &gtok, true, h, false, F::ZERO, &mut dmean_w);
        gemm(
            l,
            units,
            w,
            &gtok,
            false,
            &trace.mean_w,
            false,
            F::ONE,
            &mut dh,
        );

        // Max half: each pooled entry sends its gradient to the token that
        // held the maximum.
        let mut dmax_w = vec![F::ZERO; units * w];
        gemm(
            units,
            s,
            w,
            &dz,
            true,
            &trace.pooled_max,
            false,
            F::ZERO,
            &mut dmax_w,
        );
        let mut dpool = vec![F::ZERO; s * w];
        gemm(
            s,
            units,
            w,
            &dz,
            false,
            &trace.max_w,
            false,
            F::ZERO,
            &mut dpool,
        );
        for (g, at) in dpool.chunks(w).zip(trace.argmax.chunks(w)) {
            for d in 0..w {
                dh[at[d] as usize * w + d] += g[d];
            }
        }

        let wgrad = &mut self.params[self.hidden.weight].grad;
        for u in 0..units {
            for d in 0..w {
                let (ma, mb) = trace
                    .pool_mask
                    .as_ref()
                    .map_or((F::ONE, F::ONE), |m| (m[d], m[w + d]));
                wgrad[u * 2 * w + d] += dmean_w[u * w + d] * ma;
                wgrad[u * 2 * w + w + d] += dmax_w[u * w + d] * mb;
            }
        }

        let win = self.window_of();
        for k in (0..self.encoder.len()).rev() {
            let layer = self.encoder[k];
            let dc = layer.backward(
                &mut self.params,
                &trace.windows[k],
                l,
                &trace.layer_caches[k],
                &dh,
            );
            window_scatter(&dc, &mut dh, l, w, win);
        }
        let mut dx0 = self
            .mix
            .backward(&mut self.params, &trace.x0, l, &trace.mix_cache, &dh);
        if let Some(m) = &trace.emb_mask {
            dx0.iter_mut().zip(m).for_each(|(g, k)| *g *= *k);
        }
        let piece = w / 4;
        for (t, ids) in feats.ids.iter().enumerate() {
            for a in 0..4 {
                let row = ids[a] as usize;
                let g = &mut self.params[a].grad[row * piece..(row + 1) * piece];
                for (gv, dv) in g
                    .iter_mut()
                    .zip(&dx0[t * w + a * piece..t * w + (a + 1) * piece])
                {
                    *gv += *dv;
                }
            }
        }
    }
}

struct EncodeOut<F> {
    x0: Vec<F>,
    emb_mask: Option<Vec<F>>,
    mix_cache: MaxoutLnCache<F>,
    windows: Vec<Vec<F>>,
    layer_caches: Vec<MaxoutLnCache<F>>,
    h: Vec<F>,
}

/// Row `t` becomes `[h[t-win], …, h[t], …, h[t+win]]`, zero beyond the edges.
fn window_concat<F: Real>(h: &[F], l: usize, w: usize, win: usize) -> Vec<F> {
    let n = 2 * win + 1;
    let mut out = vec![F::ZERO; l * n * w];
    for t in 0..l {
        for k in 0..n {
            let src = t as isize + k as isize - win as isize;
            if src >= 0 && (src as usize) < l {
                let src = src as usize;
                out[(t * n + k) * w..(t * n + k + 1) * w]
                    .copy_from_slice(&h[src * w..(src + 1) * w]);
            }
        }
    }
    out
}

fn window_scatter<F: Real>(dc: &[F], dh: &mut [F], l: usize, w: usize, win: usize) {
    let n = 2 * win + 1;
    for t in 0..l {
        for k in 0..n {
            let dst = t as isize + k as isize - win as isize;
            if dst >= 0 && (dst as usize) < l {
                let dst = dst as usize;
                for d in 0..w {
                    dh[dst * w + d] += dc[(t * n + k) * w + d];
                }
            }
        }
    }
}
