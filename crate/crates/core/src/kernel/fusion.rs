//! Prompt/image fusion forward and backward passes.
//!
//! ```text
//! V_img    = concat(views)
//! E_prompt = ffn_s(selfattn_s(patches(mask) We^T + be))
//! V_sa     = selfattn_1(V_img)
//! E_ff     = ffn(E_prompt)
//! H_ca     = crossattn(queries = E_ff, context = V_sa)
//! hybrid   = selfattn_2(H_ca + E_ff)
//! proj     = hybrid Wp^T + bp
//! ```
//!
//! No normalization layers or residual paths beyond the single sum above.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    AttentionCache, AttentionGrad, AttentionParams, FeedForward, FeedForwardCache, FeedForwardGrad, Linear,
    LinearGrad,
};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::text::normalize_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Width of image features, prompt embeddings and every attention block.
    pub d_v: usize,
    /// Language-side width after projection.
    pub d_l: usize,
    /// Number of image views concatenated into `V_img`.
    pub n_views: usize,
    /// Side of the square prompt-mask patches.
    pub patch: usize,
    pub ffn_hidden: usize,
    pub seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            d_v: 8,
            d_l: 6,
            n_views: 2,
            patch: 2,
            ffn_hidden: 16,
            seed: 7,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_v == 0 || self.d_l == 0 || self.n_views == 0 || self.patch == 0 || self.ffn_hidden == 0 {
            return Err(Error::invalid(format!("kernel dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Spatial-aware prompt encoder: patch embedding, one self-attention layer,
/// one feed-forward layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeParams {
    pub patch: usize,
    pub embed: Linear,
    pub attn: AttentionParams,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridParams {
    pub self1: AttentionParams,
    pub ffn: FeedForward,
    pub cross: AttentionParams,
    pub self2: AttentionParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub sae: SaeParams,
    pub hybrid: HybridParams,
    /// Vision-to-language projection, `d_l x d_v`.
    pub proj: Linear,
}

impl From<LinearGrad> for Linear {
    fn from(g: LinearGrad) -> Self {
        Linear { w: g.w, b: g.b }
    }
}

impl From<AttentionGrad> for AttentionParams {
    fn from(g: AttentionGrad) -> Self {
        AttentionParams {
            q: g.q.into(),
            k: g.k.into(),
            v: g.v.into(),
            o: g.o.into(),
        }
    }
}

impl From<FeedForwardGrad> for FeedForward {
    fn from(g: FeedForwardGrad) -> Self {
        FeedForward {
            l1: g.l1.into(),
            l2: g.l2.into(),
        }
    }
}

fn visit_linear(prefix: &str, l: &Linear, f: &mut dyn FnMut(&str, &[f64])) {
    f(&format!("{prefix}.w"), l.w.data());
    f(&format!("{prefix}.b"), &l.b);
}

fn visit_linear_mut(prefix: &str, l: &mut Linear, f: &mut dyn FnMut(&str, &mut [f64])) {
    f(&format!("{prefix}.w"), l.w.data_mut());
    f(&format!("{prefix}.b"), &mut l.b);
}

fn visit_attn(prefix: &str, a: &AttentionParams, f: &mut dyn FnMut(&str, &[f64])) {
    for (n, l) in [("q", &a.q), ("k", &a.k), ("v", &a.v), ("o", &a.o)] {
        visit_linear(&format!("{prefix}.{n}"), l, f);
    }
}

fn visit_attn_mut(prefix: &str, a: &mut AttentionParams, f: &mut dyn FnMut(&str, &mut [f64])) {
    for (n, l) in [("q", &mut a.q), ("k", &mut a.k), ("v", &mut a.v), ("o", &mut a.o)] {
        visit_linear_mut(&format!("{prefix}.{n}"), l, f);
    }
}

impl FusionParams {
    /// Random initialization from `cfg.seed`; no pretrained weights.
    pub fn init(cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.d_v;
        Ok(Self {
            sae: SaeParams {
                patch: cfg.patch,
                embed: Linear::random(d, cfg.patch * cfg.patch, &mut rng),
                attn: AttentionParams::random(d, &mut rng),
                ffn: FeedForward::random(d, cfg.ffn_hidden, &mut rng),
            },
            hybrid: HybridParams {
                self1: AttentionParams::random(d, &mut rng),
                ffn: FeedForward::random(d, cfg.ffn_hidden, &mut rng),
                cross: AttentionParams::random(d, &mut rng),
                self2: AttentionParams::random(d, &mut rng),
            },
            proj: Linear::random(cfg.d_l, d, &mut rng),
        })
    }

    /// Every parameter block with a dotted name, in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        visit_linear("sae.embed", &self.sae.embed, f);
        visit_attn("sae.attn", &self.sae.attn, f);
        visit_linear("sae.ffn.l1", &self.sae.ffn.l1, f);
        visit_linear("sae.ffn.l2", &self.sae.ffn.l2, f);
        visit_attn("hybrid.self1", &self.hybrid.self1, f);
        visit_linear("hybrid.ffn.l1", &self.hybrid.ffn.l1, f);
        visit_linear("hybrid.ffn.l2", &self.hybrid.ffn.l2, f);
        visit_attn("hybrid.cross", &self.hybrid.cross, f);
        visit_attn("hybrid.self2", &self.hybrid.self2, f);
        visit_linear("proj", &self.proj, f);
    }

    /// Same order as [`FusionParams::visit`].
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_linear_mut("sae.embed", &mut self.sae.embed, f);
        visit_attn_mut("sae.attn", &mut self.sae.attn, f);
        visit_linear_mut("sae.ffn.l1", &mut self.sae.ffn.l1, f);
        visit_linear_mut("sae.ffn.l2", &mut self.sae.ffn.l2, f);
        visit_attn_mut("hybrid.self1", &mut self.hybrid.self1, f);
        visit_linear_mut("hybrid.ffn.l1", &mut self.hybrid.ffn.l1, f);
        visit_linear_mut("hybrid.ffn.l2", &mut self.hybrid.ffn.l2, f);
        visit_attn_mut("hybrid.cross", &mut self.hybrid.cross, f);
        visit_attn_mut("hybrid.self2", &mut self.hybrid.self2, f);
        visit_linear_mut("proj", &mut self.proj, f);
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }

    /// `(block name, values)` pairs, flattened.
    pub fn blocks(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, v| out.push((name.to_string(), v.to_vec())));
        out
    }

    /// Adds `delta` to the `index`-th scalar in visiting order.
    pub fn nudge(&mut self, index: usize, delta: f64) {
        let mut offset = 0;
        self.visit_mut(&mut |_, v| {
            if index >= offset && index < offset + v.len() {
                v[index - offset] += delta;
            }
            offset += v.len();
        });
    }
}

/// Row-wise concatenation of per-view feature matrices, in input order.
pub fn concat_views(views: &[Tensor2D]) -> Result<Tensor2D> {
    let (first, rest) = views
        .split_first()
        .ok_or_else(|| Error::invalid("concat_views needs at least one view"))?;
    rest.iter().try_fold(first.clone(), |acc, v| acc.vstack(v))
}

/// Splits `mask` (zero-padded to a multiple of `patch`) into square
/// patches in raster order, each flattened row-major into one row.
pub fn extract_patches(mask: &Tensor2D, patch: usize) -> Result<Tensor2D> {
    if mask.rows() == 0 || mask.cols() == 0 {
        return Err(Error::invalid("prompt mask is empty"));
    }
    if patch == 0 {
        return Err(Error::invalid("patch must be positive"));
    }
    let (ph, pw) = (mask.rows().div_ceil(patch), mask.cols().div_ceil(patch));
    Ok(Tensor2D::from_fn(ph * pw, patch * patch, |r, c| {
        let (py, px) = (r / pw, r % pw);
        let (y, x) = (py * patch + c / patch, px * patch + c % patch);
        if y < mask.rows() && x < mask.cols() {
            mask.get(y, x)
        } else {
            0.0
        }
    }))
}

/// Adjoint of [`extract_patches`]: scatters patch gradients back onto the
/// unpadded mask.
fn scatter_patches(dpatches: &Tensor2D, rows: usize, cols: usize, patch: usize) -> Tensor2D {
    let pw = cols.div_ceil(patch);
    let mut out = Tensor2D::zeros(rows, cols);
    for r in 0..dpatches.rows() {
        let (py, px) = (r / pw, r % pw);
        for c in 0..patch * patch {
            let (y, x) = (py * patch + c / patch, px * patch + c % patch);
            if y < rows && x < cols {
                let v = out.get(y, x) + dpatches.get(r, c);
                out.set(y, x, v);
            }
        }
    }
    out
}

struct SaeTrace {
    patches: Tensor2D,
    embedded: Tensor2D,
    attn: AttentionCache,
    ffn: FeedForwardCache,
}

fn sae_forward(mask: &Tensor2D, p: &SaeParams) -> Result<SaeTrace> {
    let patches = extract_patches(mask, p.patch)?;
    let embedded = p.embed.forward(&patches)?;
    let attn = p.attn.forward(&embedded, &embedded)?;
    let ffn = p.ffn.forward(&attn.out)?;
    Ok(SaeTrace {
        patches,
        embedded,
        attn,
        ffn,
    })
}

/// Encodes a prompt raster into one `d_v` row per patch.
pub fn sae_encode(mask: &Tensor2D, p: &SaeParams) -> Result<Tensor2D> {
    Ok(sae_forward(mask, p)?.ffn.out)
}

struct HybridTrace {
    sa1: AttentionCache,
    ff: FeedForwardCache,
    ca: AttentionCache,
    sa2: AttentionCache,
}

fn hybrid_forward(v_img: &Tensor2D, e_prompt: &Tensor2D, p: &HybridParams) -> Result<HybridTrace> {
    if v_img.cols() != e_prompt.cols() {
        return Err(Error::shape(format!(
            "image width {} differs from prompt width {}",
            v_img.cols(),
            e_prompt.cols()
        )));
    }
    let sa1 = p.self1.forward(v_img, v_img)?;
    let ff = p.ffn.forward(e_prompt)?;
    let ca = p.cross.forward(&ff.out, &sa1.out)?;
    let sum = ca.out.add(&ff.out)?;
    let sa2 = p.self2.forward(&sum, &sum)?;
    Ok(HybridTrace { sa1, ff, ca, sa2 })
}

/// Output has one row per prompt row.
pub fn hybrid_fuse(v_img: &Tensor2D, e_prompt: &Tensor2D, p: &HybridParams) -> Result<Tensor2D> {
    Ok(hybrid_forward(v_img, e_prompt, p)?.sa2.out)
}

pub fn project_vl(h: &Tensor2D, proj: &Linear) -> Result<Tensor2D> {
    proj.forward(h)
}

/// `[VP_proj; L_instruct]`.
pub fn assemble_llm_input(vp_proj: &Tensor2D, l_instruct: &Tensor2D) -> Result<Tensor2D> {
    if l_instruct.rows() == 0 {
        return Ok(vp_proj.clone());
    }
    vp_proj.vstack(l_instruct)
}

/// Stand-in tokenizer: normalized words hashed with FNV-1a into `vocab`.
pub fn tokenize_stub(text: &str, vocab: usize) -> Result<Vec<usize>> {
    if vocab == 0 {
        return Err(Error::invalid("vocabulary size must be positive"));
    }
    Ok(normalize_tokens(text)
        .iter()
        .map(|t| (fnv1a64(t.as_bytes()) % vocab as u64) as usize)
        .collect())
}

/// Row `i` is row `ids[i]` of `table` (`vocab x d_l`).
pub fn embed_tokens(ids: &[usize], table: &Tensor2D) -> Result<Tensor2D> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= table.rows()) {
        return Err(Error::shape(format!(
            "token id {bad} outside a {}-row table",
            table.rows()
        )));
    }
    let mut data = Vec::with_capacity(ids.len() * table.cols());
    for &i in ids {
        data.extend_from_slice(table.row(i));
    }
    Tensor2D::new(ids.len(), table.cols(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionInputs {
    pub views: Vec<Tensor2D>,
    /// Prompt raster; 1 inside the prompt, 0 outside.
    pub mask: Tensor2D,
}

/// Where the scalar loss `upstream * sum(out^2)` is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPoint {
    Hybrid,
    Projected,
}

pub struct FusionOutput {
    pub v_img: Tensor2D,
    pub e_prompt: Tensor2D,
    pub hybrid: Tensor2D,
    pub projected: Tensor2D,
}

struct FusionTrace {
    v_img: Tensor2D,
    sae: SaeTrace,
    hybrid: HybridTrace,
    projected: Tensor2D,
}

fn forward_trace(inputs: &FusionInputs, p: &FusionParams) -> Result<FusionTrace> {
    let v_img = concat_views(&inputs.views)?;
    let sae = sae_forward(&inputs.mask, &p.sae)?;
    let hybrid = hybrid_forward(&v_img, &sae.ffn.out, &p.hybrid)?;
    let projected = p.proj.forward(&hybrid.sa2.out)?;
    Ok(FusionTrace {
        v_img,
        sae,
        hybrid,
        projected,
    })
}

pub fn fuse_forward(inputs: &FusionInputs, p: &FusionParams) -> Result<FusionOutput> {
    let t = forward_trace(inputs, p)?;
    Ok(FusionOutput {
        v_img: t.v_img,
        e_prompt: t.sae.ffn.out,
        hybrid: t.hybrid.sa2.out,
        projected: t.projected,
    })
}

pub fn fuse_loss(inputs: &FusionInputs, p: &FusionParams, point: LossPoint, upstream: f64) -> Result<f64> {
    let out = fuse_forward(inputs, p)?;
    Ok(upstream
        * match point {
            LossPoint::Hybrid => out.hybrid.sum_squares(),
            LossPoint::Projected => out.projected.sum_squares(),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub loss: f64,
    /// Same layout as the parameters.
    pub params: FusionParams,
    pub v_img: Tensor2D,
    pub mask: Tensor2D,
}

/// Analytic gradients of `upstream * sum(out^2)`.
pub fn fuse_backward(inputs: &FusionInputs, p: &FusionParams, point: LossPoint, upstream: f64) -> Result<FusionGrads> {
    let t = forward_trace(inputs, p)?;
    let h = &t.hybrid;
    let hybrid_out = &h.sa2.out;

    let (loss, dhybrid, gproj) = match point {
        LossPoint::Hybrid => (
            upstream * hybrid_out.sum_squares(),
            hybrid_out.scale(2.0 * upstream),
            Linear::zeros(p.proj.out_dim(), p.proj.in_dim()),
        ),
        LossPoint::Projected => {
            let dproj = t.projected.scale(2.0 * upstream);
            let (dh, g) = p.proj.backward(hybrid_out, &dproj)?;
            (upstream * t.projected.sum_squares(), dh, g.into())
        }
    };

    // hybrid = self2(H_ca + E_ff)
    let (dq2, dc2, g_self2) = p.hybrid.self2.backward(&h.sa2, &dhybrid)?;
    let dsum = dq2.add(&dc2)?;
    // H_ca = cross(E_ff, V_sa)
    let (dq_ca, dv_sa, g_cross) = p.hybrid.cross.backward(&h.ca, &dsum)?;
    let mut de_ff = dsum;
    de_ff.add_assign(&dq_ca)?;
    let (de_prompt, g_ffn) = p.hybrid.ffn.backward(&h.ff, &de_ff)?;
    let (dq1, dc1, g_self1) = p.hybrid.self1.backward(&h.sa1, &dv_sa)?;
    let dv_img = dq1.add(&dc1)?;

    // SAE
    let (d_attn_out, g_sae_ffn) = p.sae.ffn.backward(&t.sae.ffn, &de_prompt)?;
    let (dqs, dcs, g_sae_attn) = p.sae.attn.backward(&t.sae.attn, &d_attn_out)?;
    let dembedded = dqs.add(&dcs)?;
    debug_assert_eq!(dembedded.shape(), t.sae.embedded.shape());
    let (dpatches, g_embed) = p.sae.embed.backward(&t.sae.patches, &dembedded)?;
    let dmask = scatter_patches(&dpatches, inputs.mask.rows(), inputs.mask.cols(), p.sae.patch);

    Ok(FusionGrads {
        loss,
        params: FusionParams {
            sae: SaeParams {
                patch: p.sae.patch,
                embed: g_embed.into(),
                attn: g_sae_attn.into(),
                ffn: g_sae_ffn.into(),
            },
            hybrid: HybridParams {
                self1: g_self1.into(),
                ffn: g_ffn.into(),
                cross: g_cross.into(),
                self2: g_self2.into(),
            },
            proj: gproj,
        },
        v_img: dv_img,
        mask: dmask,
    })
}
