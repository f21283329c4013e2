//! Micro pre-norm transformer shared by the causal LM and the bidirectional
//! masked denoiser. Hand-rolled forward and backward in f64; caches expose the
//! residual stream at every layer boundary so objectives and SAEs can read it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mat::{self, AdamState, Mat};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ctx: usize,
    pub causal: bool,
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.vocab < 4 {
            return Err(format!("vocab {} < 4", self.vocab));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(format!("width {} not divisible by {} heads", self.d, self.heads));
        }
        if self.layers == 0 || self.ctx == 0 {
            return Err("layers and ctx must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub cfg: TransformerConfig,
    pub emb: Mat,
    pub pos: Mat,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    pub unemb: Mat,
}

impl TransformerParams {
    pub fn init<R: Rng>(cfg: TransformerConfig, rng: &mut R) -> Self {
        let d = cfg.d;
        let ff = 4 * d;
        let ws = 1.0 / (d as f64).sqrt();
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                wq: Mat::randn(d, d, ws, rng),
                wk: Mat::randn(d, d, ws, rng),
                wv: Mat::randn(d, d, ws, rng),
                wo: Mat::randn(d, d, ws, rng),
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w1: Mat::randn(d, ff, ws, rng),
                b1: vec![0.0; ff],
                w2: Mat::randn(ff, d, 1.0 / (ff as f64).sqrt(), rng),
                b2: vec![0.0; d],
            })
            .collect();
        TransformerParams {
            cfg,
            emb: Mat::randn(cfg.vocab, d, 0.05, rng),
            pos: Mat::randn(cfg.ctx, d, 0.05, rng),
            layers,
            lnf_g: vec![1.0; d],
            lnf_b: vec![0.0; d],
            unemb: Mat::randn(d, cfg.vocab, ws, rng),
        }
    }

    pub fn is_finite(&self) -> bool {
        let vecs_ok = |v: &[f64]| v.iter().all(|x| x.is_finite());
        self.emb.is_finite()
            && self.pos.is_finite()
            && self.unemb.is_finite()
            && vecs_ok(&self.lnf_g)
            && vecs_ok(&self.lnf_b)
            && self.layers.iter().all(|l| {
                l.wq.is_finite()
                    && l.wk.is_finite()
                    && l.wv.is_finite()
                    && l.wo.is_finite()
                    && l.w1.is_finite()
                    && l.w2.is_finite()
                    && vecs_ok(&l.ln1_g)
                    && vecs_ok(&l.ln1_b)
                    && vecs_ok(&l.ln2_g)
                    && vecs_ok(&l.ln2_b)
                    && vecs_ok(&l.b1)
                    && vecs_ok(&l.b2)
            })
    }

    /// Visits every parameter tensor in a fixed canonical order.
    pub fn visit_tensors<'a>(&'a self, mut f: impl FnMut(&str, TensorRef<'a>)) {
        f("emb", TensorRef::Mat(&self.emb));
        f("pos", TensorRef::Mat(&self.pos));
        for (i, l) in self.layers.iter().enumerate() {
            let tag = move |name: &str| format!("layer{i}.{name}");
            f(&tag("ln1_g"), TensorRef::Vec(&l.ln1_g));
            f(&tag("ln1_b"), TensorRef::Vec(&l.ln1_b));
            f(&tag("wq"), TensorRef::Mat(&l.wq));
            f(&tag("wk"), TensorRef::Mat(&l.wk));
            f(&tag("wv"), TensorRef::Mat(&l.wv));
            f(&tag("wo"), TensorRef::Mat(&l.wo));
            f(&tag("ln2_g"), TensorRef::Vec(&l.ln2_g));
            f(&tag("ln2_b"), TensorRef::Vec(&l.ln2_b));
            f(&tag("w1"), TensorRef::Mat(&l.w1));
            f(&tag("b1"), TensorRef::Vec(&l.b1));
            f(&tag("w2"), TensorRef::Mat(&l.w2));
            f(&tag("b2"), TensorRef::Vec(&l.b2));
        }
        f("lnf_g", TensorRef::Vec(&self.lnf_g));
        f("lnf_b", TensorRef::Vec(&self.lnf_b));
        f("unemb", TensorRef::Mat(&self.unemb));
    }

    fn flat_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(&mut self.emb.data);
        out.push(&mut self.pos.data);
        for l in &mut self.layers {
            out.push(&mut l.ln1_g);
            out.push(&mut l.ln1_b);
            out.push(&mut l.wq.data);
            out.push(&mut l.wk.data);
            out.push(&mut l.wv.data);
            out.push(&mut l.wo.data);
            out.push(&mut l.ln2_g);
            out.push(&mut l.ln2_b);
            out.push(&mut l.w1.data);
            out.push(&mut l.b1);
            out.push(&mut l.w2.data);
            out.push(&mut l.b2);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out.push(&mut self.unemb.data);
        out
    }
}

pub enum TensorRef<'a> {
    Mat(&'a Mat),
    Vec(&'a [f64]),
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct LnCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

struct LayerCache {
    a: Mat,
    ln1: LnCache,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    ctxcat: Mat,
    ln2: LnCache,
    b: Mat,
    hpre: Mat,
    hact: Mat,
}

pub struct ForwardCache {
    n: usize,
    /// residuals[k]: the residual stream after k layers; residuals[0] is the
    /// embedding output.
    residuals: Vec<Mat>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    xf: Mat,
    pub logits: Mat,
}

impl ForwardCache {
    pub fn residual(&self, layer: usize) -> &Mat {
        &self.residuals[layer]
    }

    pub fn num_read_points(&self) -> usize {
        self.residuals.len()
    }

    pub fn seq_len(&self) -> usize {
        self.n
    }
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> (Mat, LnCache) {
    let (n, d) = (x.rows, x.cols);
    let mut out = Mat::zeros(n, d);
    let mut xhat = Mat::zeros(n, d);
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = x.row(i);
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        let xh = xhat.row_mut(i);
        let o = out.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mu) * is;
            o[j] = g[j] * xh[j] + b[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Mat,
    cache: &LnCache,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Mat {
    let (n, d) = (dy.rows, dy.cols);
    let mut dx = Mat::zeros(n, d);
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
        }
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let is = cache.inv_std[i];
        let dxr = dx.row_mut(i);
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dxr[j] = is * (dxh - m1 - xh[j] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Runs the transformer on an embedded input (n x d, already token + position)
/// and returns logits plus every intermediate needed for backward.
pub fn forward_embedded(params: &TransformerParams, x0: Mat) -> ForwardCache {
    let cfg = &params.cfg;
    let n = x0.rows;
    let (h, dh) = (cfg.heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut residuals = Vec::with_capacity(cfg.layers + 1);
    let mut layer_caches = Vec::with_capacity(cfg.layers);
    residuals.push(x0);

    for l in &params.layers {
        let x = residuals.last().unwrap();
        let (a, ln1) = layer_norm(x, &l.ln1_g, &l.ln1_b);
        let q = a.matmul(&l.wq);
        let k = a.matmul(&l.wk);
        let v = a.matmul(&l.wv);

        let mut probs = Vec::with_capacity(h);
        let mut ctxcat = Mat::zeros(n, cfg.d);
        for head in 0..h {
            let off = head * dh;
            let mut p = Mat::zeros(n, n);
            for i in 0..n {
                let qi = &q.row(i)[off..off + dh];
                let limit = if cfg.causal { i + 1 } else { n };
                let prow = p.row_mut(i);
                for (j, pj) in prow.iter_mut().enumerate().take(limit) {
                    let kj = &k.row(j)[off..off + dh];
                    *pj = mat::dot(qi, kj) * scale;
                }
                mat::softmax_inplace(&mut prow[..limit]);
            }
            for i in 0..n {
                let limit = if cfg.causal { i + 1 } else { n };
                for j in 0..limit {
                    let pij = p.get(i, j);
                    if pij == 0.0 {
                        continue;
                    }
                    let vj = &v.row(j)[off..off + dh];
                    let c = &mut ctxcat.row_mut(i)[off..off + dh];
                    mat::axpy(pij, vj, c);
                }
            }
            probs.push(p);
        }
        let att_out = ctxcat.matmul(&l.wo);

        let mut x_mid = residuals.last().unwrap().clone();
        for (xm, ao) in x_mid.data.iter_mut().zip(att_out.data.iter()) {
            *xm += ao;
        }

        let (b, ln2) = layer_norm(&x_mid, &l.ln2_g, &l.ln2_b);
        let mut hpre = b.matmul(&l.w1);
        for i in 0..n {
            let row = hpre.row_mut(i);
            for (hj, bj) in row.iter_mut().zip(l.b1.iter()) {
                *hj += bj;
            }
        }
        let mut hact = hpre.clone();
        hact.data.iter_mut().for_each(|x| *x = gelu(*x));
        let mut ff_out = hact.matmul(&l.w2);
        for i in 0..n {
            let row = ff_out.row_mut(i);
            for (fj, bj) in row.iter_mut().zip(l.b2.iter()) {
                *fj += bj;
            }
        }

        let mut x_out = x_mid.clone();
        for (xo, fo) in x_out.data.iter_mut().zip(ff_out.data.iter()) {
            *xo += fo;
        }

        // x_mid moves into the cache as the LN2 input; b is the LN2 output.
        layer_caches.push(LayerCache { a, ln1, q, k, v, probs, ctxcat, ln2, b, hpre, hact });
        residuals.push(x_out);
    }

    let (xf, lnf) = layer_norm(residuals.last().unwrap(), &params.lnf_g, &params.lnf_b);
    let logits = xf.matmul(&params.unemb);
    ForwardCache { n, residuals, layers: layer_caches, lnf, xf, logits }
}

/// Embeds token ids (token embedding + positional) and runs the forward pass.
pub fn forward_ids(params: &TransformerParams, ids: &[u32]) -> ForwardCache {
    let d = params.cfg.d;
    let mut x0 = Mat::zeros(ids.len(), d);
    for (i, &id) in ids.iter().enumerate() {
        let e = params.emb.row(id as usize);
        let p = params.pos.row(i);
        let row = x0.row_mut(i);
        for j in 0..d {
            row[j] = e[j] + p[j];
        }
    }
    forward_embedded(params, x0)
}

/// Embeds a relaxed one-hot matrix X (n x V): x0 = X @ emb + pos.
pub fn forward_relaxed(params: &TransformerParams, x_relaxed: &Mat) -> ForwardCache {
    let d = params.cfg.d;
    let n = x_relaxed.rows;
    let mut x0 = x_relaxed.matmul(&params.emb);
    for i in 0..n {
        let p = params.pos.row(i);
        let row = x0.row_mut(i);
        for j in 0..d {
            row[j] += p[j];
        }
    }
    forward_embedded(params, x0)
}

pub fn one_hot(ids: &[u32], vocab: usize) -> Mat {
    let mut x = Mat::zeros(ids.len(), vocab);
    for (i, &id) in ids.iter().enumerate() {
        x.set(i, id as usize, 1.0);
    }
    x
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

pub struct Grads {
    pub emb: Mat,
    pub pos: Mat,
    pub layers: Vec<LayerGrads>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    pub unemb: Mat,
}

pub struct LayerGrads {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl Grads {
    pub fn zeros(params: &TransformerParams) -> Self {
        let cfg = &params.cfg;
        let d = cfg.d;
        let ff = 4 * d;
        Grads {
            emb: Mat::zeros(cfg.vocab, d),
            pos: Mat::zeros(cfg.ctx, d),
            layers: (0..cfg.layers)
                .map(|_| LayerGrads {
                    ln1_g: vec![0.0; d],
                    ln1_b: vec![0.0; d],
                    wq: Mat::zeros(d, d),
                    wk: Mat::zeros(d, d),
                    wv: Mat::zeros(d, d),
                    wo: Mat::zeros(d, d),
                    ln2_g: vec![0.0; d],
                    ln2_b: vec![0.0; d],
                    w1: Mat::zeros(d, ff),
                    b1: vec![0.0; ff],
                    w2: Mat::zeros(ff, d),
                    b2: vec![0.0; d],
                })
                .collect(),
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            unemb: Mat::zeros(d, cfg.vocab),
        }
    }

    fn flat_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.push(&self.emb.data);
        out.push(&self.pos.data);
        for l in &self.layers {
            out.push(&l.ln1_g);
            out.push(&l.ln1_b);
            out.push(&l.wq.data);
            out.push(&l.wk.data);
            out.push(&l.wv.data);
            out.push(&l.wo.data);
            out.push(&l.ln2_g);
            out.push(&l.ln2_b);
            out.push(&l.w1.data);
            out.push(&l.b1);
            out.push(&l.w2.data);
            out.push(&l.b2);
        }
        out.push(&self.lnf_g);
        out.push(&self.lnf_b);
        out.push(&self.unemb.data);
        out
    }
}

/// Backpropagates dlogits (n x V) plus optional residual-stream seeds
/// (dresiduals[k] is added to the gradient at read point k) through the
/// network. Returns gradients for every parameter plus d(x0), the gradient at
/// the embedded input. `accumulate_params` skips parameter-gradient work when
/// only d(x0) is needed (the optimizer hot path).
pub fn backward(
    params: &TransformerParams,
    cache: &ForwardCache,
    dlogits: &Mat,
    dresiduals: &[Option<Mat>],
    accumulate_params: bool,
) -> (Option<Grads>, Mat) {
    let cfg = &params.cfg;
    let n = cache.n;
    let (h, dh) = (cfg.heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut grads = if accumulate_params { Some(Grads::zeros(params)) } else { None };

    // logits = xf @ unemb
    let dxf = dlogits.matmul_transpose(&params.unemb);
    if let Some(g) = grads.as_mut() {
        mat::matmul_at_b_accum(&cache.xf, dlogits, &mut g.unemb);
    }

    let mut sink_g = vec![0.0; cfg.d];
    let mut sink_b = vec![0.0; cfg.d];
    let mut dx = {
        let (dg, db) = match grads.as_mut() {
            Some(g) => (&mut g.lnf_g, &mut g.lnf_b),
            None => (&mut sink_g, &mut sink_b),
        };
        layer_norm_backward(&dxf, &cache.lnf, &params.lnf_g, dg, db)
    };
    if let Some(Some(seed)) = dresiduals.get(cfg.layers) {
        for (d, s) in dx.data.iter_mut().zip(seed.data.iter()) {
            *d += s;
        }
    }

    for l in (0..cfg.layers).rev() {
        let lp = &params.layers[l];
        let lc = &cache.layers[l];

        // dx is d(x_out) where x_out = x_mid + ff_out.
        // ff_out = gelu(b @ w1 + b1) @ w2 + b2
        let mut dhact = dx.matmul_transpose(&lp.w2);
        if let Some(g) = grads.as_mut() {
            let lg = &mut g.layers[l];
            mat::matmul_at_b_accum(&lc.hact, &dx, &mut lg.w2);
            for i in 0..n {
                let row = dx.row(i);
                for (bj, rj) in lg.b2.iter_mut().zip(row.iter()) {
                    *bj += rj;
                }
            }
        }
        for (dh_, hp) in dhact.data.iter_mut().zip(lc.hpre.data.iter()) {
            *dh_ *= gelu_grad(*hp);
        }
        let dhpre = dhact;
        let db_out = dhpre.matmul_transpose(&lp.w1);
        if let Some(g) = grads.as_mut() {
            let lg = &mut g.layers[l];
            mat::matmul_at_b_accum(&lc.b, &dhpre, &mut lg.w1);
            for i in 0..n {
                let row = dhpre.row(i);
                for (bj, rj) in lg.b1.iter_mut().zip(row.iter()) {
                    *bj += rj;
                }
            }
        }
        let dln2_in = match grads.as_mut() {
            Some(g) => {
                let lg = &mut g.layers[l];
                layer_norm_backward(&db_out, &lc.ln2, &lp.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b)
            }
            None => {
                sink_g.iter_mut().for_each(|x| *x = 0.0);
                sink_b.iter_mut().for_each(|x| *x = 0.0);
                layer_norm_backward(&db_out, &lc.ln2, &lp.ln2_g, &mut sink_g, &mut sink_b)
            }
        };
        // d(x_mid) = dx (residual path) + LN2 path
        let mut dx_mid = dx;
        for (dm, dl) in dx_mid.data.iter_mut().zip(dln2_in.data.iter()) {
            *dm += dl;
        }

        // x_mid = x_in + ctxcat @ wo
        let dctxcat = dx_mid.matmul_transpose(&lp.wo);
        if let Some(g) = grads.as_mut() {
            mat::matmul_at_b_accum(&lc.ctxcat, &dx_mid, &mut g.layers[l].wo);
        }

        let mut dq = Mat::zeros(n, cfg.d);
        let mut dk = Mat::zeros(n, cfg.d);
        let mut dv = Mat::zeros(n, cfg.d);
        for head in 0..h {
            let off = head * dh;
            let p = &lc.probs[head];
            for i in 0..n {
                let limit = if cfg.causal { i + 1 } else { n };
                let dctx_i = &dctxcat.row(i)[off..off + dh];
                // d(probs[i,j]) = dctx_i . v_j ; dv_j += p_ij * dctx_i
                let mut dp = vec![0.0; limit];
                for (j, dpj) in dp.iter_mut().enumerate() {
                    let vj = &lc.v.row(j)[off..off + dh];
                    *dpj = mat::dot(dctx_i, vj);
                    let pij = p.get(i, j);
                    if pij != 0.0 {
                        let dvj = &mut dv.row_mut(j)[off..off + dh];
                        mat::axpy(pij, dctx_i, dvj);
                    }
                }
                // softmax backward: ds_j = p_j * (dp_j - sum_k dp_k p_k)
                let mut inner = 0.0;
                for j in 0..limit {
                    inner += dp[j] * p.get(i, j);
                }
                for (j, dpj) in dp.iter().enumerate() {
                    let ds = p.get(i, j) * (dpj - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    // scores[i,j] = q_i . k_j * scale
                    let kj = &lc.k.row(j)[off..off + dh];
                    let dqi = &mut dq.row_mut(i)[off..off + dh];
                    mat::axpy(ds, kj, dqi);
                    let qi = &lc.q.row(i)[off..off + dh];
                    let dkj = &mut dk.row_mut(j)[off..off + dh];
                    mat::axpy(ds, qi, dkj);
                }
            }
        }

        let mut da = dq.matmul_transpose(&lp.wq);
        let da_k = dk.matmul_transpose(&lp.wk);
        let da_v = dv.matmul_transpose(&lp.wv);
        for ((a, b), c) in da.data.iter_mut().zip(da_k.data.iter()).zip(da_v.data.iter()) {
            *a += b + c;
        }
        if let Some(g) = grads.as_mut() {
            let lg = &mut g.layers[l];
            mat::matmul_at_b_accum(&lc.a, &dq, &mut lg.wq);
            mat::matmul_at_b_accum(&lc.a, &dk, &mut lg.wk);
            mat::matmul_at_b_accum(&lc.a, &dv, &mut lg.wv);
        }
        let dln1_in = match grads.as_mut() {
            Some(g) => {
                let lg = &mut g.layers[l];
                layer_norm_backward(&da, &lc.ln1, &lp.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b)
            }
            None => {
                sink_g.iter_mut().for_each(|x| *x = 0.0);
                sink_b.iter_mut().for_each(|x| *x = 0.0);
                layer_norm_backward(&da, &lc.ln1, &lp.ln1_g, &mut sink_g, &mut sink_b)
            }
        };
        let mut dx_in = dx_mid;
        for (di, dl) in dx_in.data.iter_mut().zip(dln1_in.data.iter()) {
            *di += dl;
        }
        if let Some(Some(seed)) = dresiduals.get(l) {
            for (d, s) in dx_in.data.iter_mut().zip(seed.data.iter()) {
                *d += s;
            }
        }
        dx = dx_in;
    }

    (grads, dx)
}

/// Scatters d(x0) into embedding-row and positional gradients (training path).
pub fn accumulate_input_grads(ids: &[u32], dx0: &Mat, grads: &mut Grads) {
    for (i, &id) in ids.iter().enumerate() {
        let src = dx0.row(i);
        let erow = grads.emb.row_mut(id as usize);
        for (e, s) in erow.iter_mut().zip(src.iter()) {
            *e += s;
        }
        let prow = grads.pos.row_mut(i);
        for (p, s) in prow.iter_mut().zip(src.iter()) {
            *p += s;
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

pub struct AdamTrainer {
    states: Vec<AdamState>,
    step: usize,
    pub lr: f64,
}

impl AdamTrainer {
    pub fn new(params: &mut TransformerParams, lr: f64) -> Self {
        let states = params.flat_tensors_mut().iter().map(|t| AdamState::new(t.len())).collect();
        AdamTrainer { states, step: 0, lr }
    }

    pub fn apply(&mut self, params: &mut TransformerParams, grads: &Grads) {
        self.step += 1;
        let gts = grads.flat_tensors();
        let pts = params.flat_tensors_mut();
        assert_eq!(gts.len(), pts.len());
        for ((p, g), st) in pts.into_iter().zip(gts).zip(self.states.iter_mut()) {
            st.update(p, g, self.lr, self.step);
        }
    }
}

/// dlogits for mean cross-entropy over `targets`: at each (position, label)
/// entry, softmax(logits_row) minus the one-hot label, scaled by weight.
/// Returns the summed weighted CE.
pub fn cross_entropy_backward(
    logits: &Mat,
    targets: &[(usize, u32, f64)],
    dlogits: &mut Mat,
) -> f64 {
    let mut loss = 0.0;
    for &(pos, label, w) in targets {
        let row = logits.row(pos);
        let lse = mat::log_sum_exp(row);
        loss += w * (lse - row[label as usize]);
        let drow = dlogits.row_mut(pos);
        for (j, dj) in drow.iter_mut().enumerate() {
            *dj += w * ((row[j] - lse).exp() - if j == label as usize { 1.0 } else { 0.0 });
        }
    }
    loss
}
