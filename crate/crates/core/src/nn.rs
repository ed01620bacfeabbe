//! Layers, parameters and the optimizer shared by the span and CNN models.

use rand::Rng;

use crate::linalg::{gemm, Real};

pub const LN_EPS: f64 = 1e-5;

/// A named parameter tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Real> Param<F> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![F::ZERO; n],
            grad: vec![F::ZERO; n],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: F) -> Self {
        let mut p = Param::zeros(name, shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    /// Uniform in `[-scale, scale]`.
    pub fn uniform<R: Rng>(
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Param::zeros(name, shape);
        for x in &mut p.value {
            *x = F::from_f64(rng.random_range(-scale..=scale));
        }
        p
    }

    /// Glorot-uniform for a `[fan_out, fan_in]` matrix.
    pub fn glorot<R: Rng>(
        name: impl Into<String>,
        fan_out: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Param::uniform(name, &[fan_out, fan_in], scale, rng)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::ZERO);
    }

    pub fn cast<G: Real>(&self) -> Param<G> {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            value: self.value.iter().map(|v| G::from_f64(v.to_f64())).collect(),
            grad: vec![G::ZERO; self.grad.len()],
        }
    }
}

/// Inverted dropout mask: zero with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<F: Real, R: Rng>(n: usize, rate: f64, rng: &mut R) -> Vec<F> {
    let keep = F::from_f64(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random_bool(rate) { F::ZERO } else { keep })
        .collect()
}

/// Affine map to `pieces * width` units, max over pieces, then layer norm.
/// Parameter indices point into the owning model's parameter list.
#[derive(Debug, Clone, Copy)]
pub struct MaxoutLn {
    pub n_in: usize,
    pub width: usize,
    pub pieces: usize,
    pub weight: usize,
    pub bias: usize,
    pub gain: usize,
    pub shift: usize,
}

pub struct MaxoutLnCache<F> {
    argmax: Vec<u8>,
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

impl MaxoutLn {
    /// Registers parameters: weight `[pieces*width, n_in]`, bias, LN gain/shift.
    pub fn init<F: Real, R: Rng>(
        params: &mut Vec<Param<F>>,
        prefix: &str,
        n_in: usize,
        width: usize,
        pieces: usize,
        rng: &mut R,
    ) -> MaxoutLn {
        let weight = params.len();
        params.push(Param::glorot(
            format!("{prefix}.W"),
            pieces * width,
            n_in,
            rng,
        ));
        params.push(Param::zeros(format!("{prefix}.b"), &[pieces * width]));
        params.push(Param::filled(format!("{prefix}.ln_g"), &[width], F::ONE));
        params.push(Param::zeros(format!("{prefix}.ln_b"), &[width]));
        MaxoutLn {
            n_in,
            width,
            pieces,
            weight,
            bias: weight + 1,
            gain: weight + 2,
            shift: weight + 3,
        }
    }

    /// `x` is `rows × n_in`; returns `rows × width`.
    pub fn forward<F: Real>(
        &self,
        params: &[Param<F>],
        x: &[F],
        rows: usize,
    ) -> (Vec<F>, MaxoutLnCache<F>) {
        let units = self.pieces * self.width;
        let mut z = vec![F::ZERO; rows * units];
        for r in 0..rows {
            z[r * units..(r + 1) * units].copy_from_slice(&params[self.bias].value);
        }
        gemm(
            rows,
            self.n_in,
            units,
            x,
            false,
            &params[self.weight].value,
            true,
            F::ONE,
            &mut z,
        );
        self.activate(params, &z, rows)
    }

    /// Maxout and layer norm applied to precomputed pre-activations
    /// (`rows × pieces*width`, bias included).
    pub fn activate<F: Real>(
        &self,
        params: &[Param<F>],
        z: &[F],
        rows: usize,
    ) -> (Vec<F>, MaxoutLnCache<F>) {
        let units = self.pieces * self.width;
        let gain = &params[self.gain].value;
        let shift = &params[self.shift].value;
        let w = self.width;
        let mut out = vec![F::ZERO; rows * w];
        let mut argmax = vec![0u8; rows * w];
        let mut xhat = vec![F::ZERO; rows * w];
        let mut inv_std = vec![F::ZERO; rows];
        let eps = F::from_f64(LN_EPS);
        let inv_w = F::ONE / F::from_f64(w as f64);
        for r in 0..rows {
            let zr = &z[r * units..(r + 1) * units];
            let m = &mut xhat[r * w..(r + 1) * w];
            for j in 0..w {
                let pieces = &zr[j * self.pieces..(j + 1) * self.pieces];
                let mut best = 0;
                for p in 1..self.pieces {
                    if pieces[p] > pieces[best] {
                        best = p;
                    }
                }
                argmax[r * w + j] = best as u8;
                m[j] = pieces[best];
            }
            let mut mean = F::ZERO;
            for &v in m.iter() {
                mean += v;
            }
            mean *= inv_w;
            let mut var = F::ZERO;
            for &v in m.iter() {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_w;
            let inv = F::ONE / (var + eps).sqrt();
            inv_std[r] = inv;
            let o = &mut out[r * w..(r + 1) * w];
            for j in 0..w {
                m[j] = (m[j] - mean) * inv;
                o[j] = gain[j] * m[j] + shift[j];
            }
        }
        (
            out,
            MaxoutLnCache {
                argmax,
                xhat,
                inv_std,
            },
        )
    }

    /// Accumulates parameter gradients; returns `d x` (`rows × n_in`).
    pub fn backward<F: Real>(
        &self,
        params: &mut [Param<F>],
        x: &[F],
        rows: usize,
        cache: &MaxoutLnCache<F>,
        dout: &[F],
    ) -> Vec<F> {
        let units = self.pieces * self.width;
        let dz = self.deactivate(params, rows, cache, dout);
        {
            let db = &mut params[self.bias].grad;
            for r in 0..rows {
                for (g, &d) in db.iter_mut().zip(&dz[r * units..(r + 1) * units]) {
                    *g += d;
                }
            }
        }
        gemm(
            units,
            rows,
            self.n_in,
            &dz,
            true,
            x,
            false,
            F::ONE,
            &mut params[self.weight].grad,
        );
        let mut dx = vec![F::ZERO; rows * self.n_in];
        gemm(
            rows,
            units,
            self.n_in,
            &dz,
            false,
            &params[self.weight].value,
            false,
            F::ZERO,
            &mut dx,
        );
        dx
    }

    /// Backward through layer norm and maxout only: accumulates the LN
    /// gradients and returns `d z`. Affine gradients are left to the caller.
    pub fn deactivate<F: Real>(
        &self,
        params: &mut [Param<F>],
        rows: usize,
        cache: &MaxoutLnCache<F>,
        dout: &[F],
    ) -> Vec<F> {
        let w = self.width;
        let units = self.pieces * w;
        let inv_w = F::ONE / F::from_f64(w as f64);
        let mut dz = vec![F::ZERO; rows * units];
        let gain = params[self.gain].value.clone();
        let (dgain, dshift) = {
            let (a, b) = params.split_at_mut(self.shift);
            (&mut a[self.gain].grad, &mut b[0].grad)
        };
        let mut dxhat = vec![F::ZERO; w];
        for r in 0..rows {
            let dy = &dout[r * w..(r + 1) * w];
            let xh = &cache.xhat[r * w..(r + 1) * w];
            let mut mean_d = F::ZERO;
            let mut mean_dx = F::ZERO;
            for j in 0..w {
                dgain[j] += dy[j] * xh[j];
                dshift[j] += dy[j];
                dxhat[j] = dy[j] * gain[j];
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xh[j];
            }
            mean_d *= inv_w;
            mean_dx *= inv_w;
            let inv = cache.inv_std[r];
            for j in 0..w {
                let dm = inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
                let p = cache.argmax[r * w + j] as usize;
                dz[r * units + j * self.pieces + p] = dm;
            }
        }
        dz
    }
}

/// Plain affine layer `y = x Wᵀ + b` with weight `[n_out, n_in]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn init<F: Real, R: Rng>(
        params: &mut Vec<Param<F>>,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Linear {
        let weight = params.len();
        params.push(Param::glorot(format!("{prefix}.W"), n_out, n_in, rng));
        params.push(Param::zeros(format!("{prefix}.b"), &[n_out]));
        Linear {
            n_in,
            n_out,
            weight,
            bias: weight + 1,
        }
    }

    pub fn forward<F: Real>(&self, params: &[Param<F>], x: &[F], rows: usize) -> Vec<F> {
        let mut y = vec![F::ZERO; rows * self.n_out];
        for r in 0..rows {
            y[r * self.n_out..(r + 1) * self.n_out].copy_from_slice(&params[self.bias].value);
        }
        gemm(
            rows,
            self.n_in,
            self.n_out,
            x,
            false,
            &params[self.weight].value,
            true,
            F::ONE,
            &mut y,
        );
        y
    }

    pub fn backward<F: Real>(
        &self,
        params: &mut [Param<F>],
        x: &[F],
        rows: usize,
        dy: &[F],
    ) -> Vec<F> {
        {
            let db = &mut params[self.bias].grad;
            for r in 0..rows {
                for (g, &d) in db.iter_mut().zip(&dy[r * self.n_out..(r + 1) * self.n_out]) {
                    *g += d;
                }
            }
        }
        gemm(
            self.n_out,
            rows,
            self.n_in,
            dy,
            true,
            x,
            false,
            F::ONE,
            &mut params[self.weight].grad,
        );
        let mut dx = vec![F::ZERO; rows * self.n_in];
        gemm(
            rows,
            self.n_out,
            self.n_in,
            dy,
            false,
            &params[self.weight].value,
            false,
            F::ZERO,
            &mut dx,
        );
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64, params: &[Param<F>]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params
                .iter()
                .map(|p| vec![F::ZERO; p.value.len()])
                .collect(),
            v: params
                .iter()
                .map(|p| vec![F::ZERO; p.value.len()])
                .collect(),
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn update(&mut self, params: &mut [Param<F>]) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one_b1 = F::ONE - b1;
        let one_b2 = F::ONE - b2;
        let lr_t =
            F::from_f64(self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t)));
        let eps = F::from_f64(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((x, g), m), v) in p
                .value
                .iter_mut()
                .zip(p.grad.iter_mut())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + one_b1 * *g;
                *v = b2 * *v + one_b2 * *g * *g;
                *x -= lr_t * *m / (v.sqrt() + eps);
                *g = F::ZERO;
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences over every parameter entry.
    use super::Param;

    /// Largest relative error between analytic and numeric gradients, where
    /// the error is measured against `max(|analytic|, |numeric|, floor)`.
    pub fn max_rel_error<L>(
        params: &mut [Param<f64>],
        analytic: &[Vec<f64>],
        h: f64,
        floor: f64,
        mut loss: L,
    ) -> f64
    where
        L: FnMut(&[Param<f64>]) -> f64,
    {
        let mut worst: f64 = 0.0;
        for pi in 0..params.len() {
            for i in 0..params[pi].value.len() {
                let orig = params[pi].value[i];
                params[pi].value[i] = orig + h;
                let up = loss(params);
                params[pi].value[i] = orig - h;
                let down = loss(params);
                params[pi].value[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[pi][i];
                let denom = a.abs().max(numeric.abs()).max(floor);
                let rel = (a - numeric).abs() / denom;
                worst = worst.max(rel);
            }
        }
        worst
    }
}
