//! Linear, single-head attention and feed-forward layers, each with a
//! forward pass that keeps what its backward pass needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Tensor2D,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub w: Tensor2D,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn new(w: Tensor2D, b: Vec<f64>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::shape(format!(
                "bias length {} for {} outputs",
                b.len(),
                w.rows()
            )));
        }
        Ok(Self { w, b })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            w: Tensor2D::zeros(out_dim, in_dim),
            b: vec![0.0; out_dim],
        }
    }

    /// Weights `N(0, 1/in)`, biases `N(0, 0.1^2)`.
    pub fn random<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let w = Tensor2D::random(out_dim, in_dim, 1.0 / (in_dim as f64).sqrt(), rng);
        let b = Tensor2D::random(1, out_dim, 0.1, rng).data().to_vec();
        Self { w, b }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "linear expects {} input columns, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        x.matmul_t(&self.w)?.add_row(&self.b)
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, x: &Tensor2D, dy: &Tensor2D) -> Result<(Tensor2D, LinearGrad)> {
        let dw = dy.t_matmul(x)?;
        let db = dy.col_sums();
        let dx = dy.matmul(&self.w)?;
        Ok((dx, LinearGrad { w: dw, b: db }))
    }
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(s: &Tensor2D) -> Tensor2D {
    let mut out = s.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Single-head attention with query/key/value maps and an output map, all
/// `d x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrad {
    pub q: LinearGrad,
    pub k: LinearGrad,
    pub v: LinearGrad,
    pub o: LinearGrad,
}

/// Intermediates of one attention call.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub queries: Tensor2D,
    pub context: Tensor2D,
    pub q: Tensor2D,
    pub k: Tensor2D,
    pub v: Tensor2D,
    /// Softmax weights, `query rows x context rows`.
    pub weights: Tensor2D,
    pub mixed: Tensor2D,
    pub out: Tensor2D,
}

impl AttentionParams {
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::random(d, d, rng),
            k: Linear::random(d, d, rng),
            v: Linear::random(d, d, rng),
            o: Linear::random(d, d, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.in_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, l) in [("q", &self.q), ("k", &self.k), ("v", &self.v), ("o", &self.o)] {
            if l.w.shape() != (d, d) || l.b.len() != d {
                return Err(Error::shape(format!(
                    "attention map {name} is {:?}, expected {d}x{d}",
                    l.w.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, queries: &Tensor2D, context: &Tensor2D) -> Result<AttentionCache> {
        self.validate()?;
        let d = self.dim();
        if queries.cols() != d || context.cols() != d {
            return Err(Error::shape(format!(
                "attention of width {d} got queries {:?} and context {:?}",
                queries.shape(),
                context.shape()
            )));
        }
        if context.rows() == 0 {
            return Err(Error::shape("attention needs at least one context row"));
        }
        let q = self.q.forward(queries)?;
        let k = self.k.forward(context)?;
        let v = self.v.forward(context)?;
        let scores = q.matmul_t(&k)?.scale(1.0 / (d as f64).sqrt());
        let weights = softmax_rows(&scores);
        let mixed = weights.matmul(&v)?;
        let out = self.o.forward(&mixed)?;
        Ok(AttentionCache {
            queries: queries.clone(),
            context: context.clone(),
            q,
            k,
            v,
            weights,
            mixed,
            out,
        })
    }

    /// Gradients for the queries, the context and the parameters.
    pub fn backward(&self, c: &AttentionCache, dout: &Tensor2D) -> Result<(Tensor2D, Tensor2D, AttentionGrad)> {
        let d = self.dim();
        let (dmixed, go) = self.o.backward(&c.mixed, dout)?;
        let dweights = dmixed.matmul_t(&c.v)?;
        let dv = c.weights.t_matmul(&dmixed)?;
        // softmax Jacobian, row by row
        let mut dscores = Tensor2D::zeros(c.weights.rows(), c.weights.cols());
        for r in 0..c.weights.rows() {
            let a = c.weights.row(r);
            let g = dweights.row(r);
            let dot: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
            for (j, out) in dscores.row_mut(r).iter_mut().enumerate() {
                *out = a[j] * (g[j] - dot);
            }
        }
        let dscores = dscores.scale(1.0 / (d as f64).sqrt());
        let dq = dscores.matmul(&c.k)?;
        let dk = dscores.t_matmul(&c.q)?;
        let (dqueries, gq) = self.q.backward(&c.queries, &dq)?;
        let (mut dcontext, gk) = self.k.backward(&c.context, &dk)?;
        let (dctx_v, gv) = self.v.backward(&c.context, &dv)?;
        dcontext.add_assign(&dctx_v)?;
        Ok((
            dqueries,
            dcontext,
            AttentionGrad {
                q: gq,
                k: gk,
                v: gv,
                o: go,
            },
        ))
    }
}

pub fn self_attention(x: &Tensor2D, p: &AttentionParams) -> Result<Tensor2D> {
    Ok(p.forward(x, x)?.out)
}

pub fn cross_attention(queries: &Tensor2D, context: &Tensor2D, p: &AttentionParams) -> Result<Tensor2D> {
    Ok(p.forward(queries, context)?.out)
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// `GELU(x W1^T + b1) W2^T + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardGrad {
    pub l1: LinearGrad,
    pub l2: LinearGrad,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    pub input: Tensor2D,
    pub pre: Tensor2D,
    pub act: Tensor2D,
    pub out: Tensor2D,
}

impl FeedForward {
    pub fn random<R: Rng + ?Sized>(d: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            l1: Linear::random(hidden, d, rng),
            l2: Linear::random(d, hidden, rng),
        }
    }

    pub fn forward(&self, x: &Tensor2D) -> Result<FeedForwardCache> {
        if self.l2.in_dim() != self.l1.out_dim() {
            return Err(Error::shape(format!(
                "feed-forward hidden widths differ: {} vs {}",
                self.l1.out_dim(),
                self.l2.in_dim()
            )));
        }
        let pre = self.l1.forward(x)?;
        let act = pre.map(gelu);
        let out = self.l2.forward(&act)?;
        Ok(FeedForwardCache {
            input: x.clone(),
            pre,
            act,
            out,
        })
    }

    pub fn backward(&self, c: &FeedForwardCache, dout: &Tensor2D) -> Result<(Tensor2D, FeedForwardGrad)> {
        let (dact, g2) = self.l2.backward(&c.act, dout)?;
        let mut dpre = dact;
        for (g, &p) in dpre.data_mut().iter_mut().zip(c.pre.data()) {
            *g *= gelu_grad(p);
        }
        let (dx, g1) = self.l1.backward(&c.input, &dpre)?;
        Ok((dx, FeedForwardGrad { l1: g1, l2: g2 }))
    }
}

pub fn feed_forward(x: &Tensor2D, p: &FeedForward) -> Result<Tensor2D> {
    Ok(p.forward(x)?.out)
}
