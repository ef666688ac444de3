//! Layers assembled from graph primitives.

use rand::Rng;

use super::{Graph, ParamId, ParamStore, Scalar, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Standard deviation used for weight initialization.
pub const INIT_STD: f64 = 0.02;

/// `x·w + b` with `w: in×out` and `b: 1×out`.
pub fn affine<T: Scalar>(g: &mut Graph<'_, T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// `softmax(q·kᵀ/√d_k)·v`, returning the output and the weight matrix.
pub fn scaled_dot_attention<T: Scalar>(g: &mut Graph<'_, T>, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (_, dk) = g.dims(q);
    let (m, kc) = g.dims(k);
    let (vm, _) = g.dims(v);
    if dk != kc || m != vm {
        return Err(TensorError::shape(
            "scaled_dot_attention",
            format!("q {:?}, k {:?}, v {:?}", g.dims(q), g.dims(k), g.dims(v)),
        ));
    }
    if m == 0 {
        return Err(TensorError::shape("scaled_dot_attention", "no keys"));
    }
    let scores = g.matmul_nt(q, k)?;
    let scaled = g.scale(scores, T::one() / T::from_usize(dk).unwrap().sqrt());
    let weights = g.softmax_rows(scaled);
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            w: store.add_normal(format!("{name}.w"), vec![input, output], INIT_STD, rng),
            b: Some(store.add_constant(format!("{name}.b"), vec![output], 0.0)),
        }
    }

    pub fn without_bias<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            w: store.add_normal(format!("{name}.w"), vec![input, output], INIT_STD, rng),
            b: None,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                affine(g, x, w, b)
            }
            None => g.matmul(x, w),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        LayerNorm {
            gamma: store.add_constant(format!("{name}.gamma"), vec![width], 1.0),
            beta: store.add_constant(format!("{name}.beta"), vec![width], 0.0),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// Projection matrices of a multi-head self-attention block.
///
/// `w_q`, `w_k`, `w_v` are `hz×hz`; the key projection has no bias, since
/// softmax is invariant to the per-query shift it would add. Head `h` uses columns
/// `[h·d_k, (h+1)·d_k)` of each projection. Heads are concatenated and
/// passed through the output projection `w_o`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub hidden: usize,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(TensorError::shape(
                "AttentionParams",
                format!("hidden size {hidden} not divisible by {heads} heads"),
            ));
        }
        Ok(AttentionParams {
            q: Linear::new(store, &format!("{name}.q"), hidden, hidden, rng),
            k: Linear::without_bias(store, &format!("{name}.k"), hidden, hidden, rng),
            v: Linear::new(store, &format!("{name}.v"), hidden, hidden, rng),
            o: Linear::new(store, &format!("{name}.o"), hidden, hidden, rng),
            hidden,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Multi-head self-attention over the rows of `x` (`l×hz`).
    pub fn self_attention<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (_, c) = g.dims(x);
        if c != self.hidden {
            return Err(TensorError::shape(
                "self_attention",
                format!("input has {c} columns, expected {}", self.hidden),
            ));
        }
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let dk = self.head_dim();
        let heads = if self.heads == 1 {
            vec![scaled_dot_attention(g, q, k, v)?.0]
        } else {
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = g.slice_cols(q, h * dk, dk)?;
                let kh = g.slice_cols(k, h * dk, dk)?;
                let vh = g.slice_cols(v, h * dk, dk)?;
                heads.push(scaled_dot_attention(g, qh, kh, vh)?.0);
            }
            heads
        };
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        self.o.forward(g, joined)
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, hidden: usize, inner: usize, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), hidden, inner, rng),
            down: Linear::new(store, &format!("{name}.down"), inner, hidden, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}
