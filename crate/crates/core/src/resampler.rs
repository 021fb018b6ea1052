//! Unified 3D resampler.
//!
//! A fixed set of learnable queries cross-attends over every patch feature of
//! every frame in one package and returns exactly `num_queries` tokens, no
//! matter how many frames or patches went in. Position enters only through
//! the keys: each key row gets the 2-D sinusoidal embedding of its patch and
//! the 1-D embedding of its frame's position inside the package. A single
//! image is a package of one frame.
//!
//! ```text
//! X  = features as [(T·N) × d_in], row t·N + n
//! K  = X·W_k + spatial_pe[n] + temporal_pe[t0 + t]
//! V  = X·W_v
//! Q' = queries·W_q
//! out = softmax(Q'·Kᵀ / √d)·V·W_out
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    attention_with_weights, finite_diff_grad, matmul, DenseArray, NumericsError,
};

pub const DEFAULT_NUM_QUERIES: usize = 64;
pub const DEFAULT_MAX_PACKAGE: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum ResamplerError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ResamplerError>;

fn dim_err(msg: String) -> ResamplerError {
    ResamplerError::Numerics(NumericsError::Dimension(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplerConfig {
    pub num_queries: usize,
    pub feature_dim: usize,
    pub model_dim: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub max_package: usize,
    /// Only 1 is implemented.
    pub num_heads: usize,
}

impl ResamplerConfig {
    pub fn new(feature_dim: usize, model_dim: usize, patch_rows: usize, patch_cols: usize) -> Self {
        Self {
            num_queries: DEFAULT_NUM_QUERIES,
            feature_dim,
            model_dim,
            patch_rows,
            patch_cols,
            max_package: DEFAULT_MAX_PACKAGE,
            num_heads: 1,
        }
    }

    pub fn patches(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_queries", self.num_queries),
            ("feature_dim", self.feature_dim),
            ("model_dim", self.model_dim),
            ("patch_rows", self.patch_rows),
            ("patch_cols", self.patch_cols),
            ("max_package", self.max_package),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(ResamplerError::Config(format!("{name} must be >= 1")));
        }
        if self.num_heads != 1 {
            return Err(ResamplerError::Config(format!(
                "num_heads = {} is not supported; only single-head attention is implemented",
                self.num_heads
            )));
        }
        Ok(())
    }
}

/// Names of the arrays in [`ResamplerWeights`], in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightName {
    Queries,
    WQ,
    WK,
    WV,
    WOut,
    SpatialPe,
    TemporalPe,
}

impl WeightName {
    pub const ALL: [WeightName; 7] = [
        WeightName::Queries,
        WeightName::WQ,
        WeightName::WK,
        WeightName::WV,
        WeightName::WOut,
        WeightName::SpatialPe,
        WeightName::TemporalPe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightName::Queries => "queries",
            WeightName::WQ => "w_q",
            WeightName::WK => "w_k",
            WeightName::WV => "w_v",
            WeightName::WOut => "w_out",
            WeightName::SpatialPe => "spatial_pe",
            WeightName::TemporalPe => "temporal_pe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplerWeights {
    pub queries: DenseArray,
    pub w_q: DenseArray,
    pub w_k: DenseArray,
    pub w_v: DenseArray,
    pub w_out: DenseArray,
    pub spatial_pe: DenseArray,
    pub temporal_pe: DenseArray,
}

impl ResamplerWeights {
    pub fn get(&self, name: WeightName) -> &DenseArray {
        match name {
            WeightName::Queries => &self.queries,
            WeightName::WQ => &self.w_q,
            WeightName::WK => &self.w_k,
            WeightName::WV => &self.w_v,
            WeightName::WOut => &self.w_out,
            WeightName::SpatialPe => &self.spatial_pe,
            WeightName::TemporalPe => &self.temporal_pe,
        }
    }

    pub fn get_mut(&mut self, name: WeightName) -> &mut DenseArray {
        match name {
            WeightName::Queries => &mut self.queries,
            WeightName::WQ => &mut self.w_q,
            WeightName::WK => &mut self.w_k,
            WeightName::WV => &mut self.w_v,
            WeightName::WOut => &mut self.w_out,
            WeightName::SpatialPe => &mut self.spatial_pe,
            WeightName::TemporalPe => &mut self.temporal_pe,
        }
    }

    pub fn zero_positional(&mut self) {
        self.spatial_pe.data_mut().fill(0.0);
        self.temporal_pe.data_mut().fill(0.0);
    }
}

/// 1-D sinusoidal table: interleaved `(sin, cos)` pairs with frequencies
/// `10000^(-i/pairs)`. An odd trailing dimension stays zero.
pub fn sinusoidal_1d(positions: usize, dim: usize) -> DenseArray {
    let mut table = DenseArray::zeros(vec![positions, dim]);
    fill_sinusoid(&mut table, 0, dim, |p| p as f64);
    table
}

/// 2-D table for a `rows × cols` patch grid, indexed row-major. The first
/// `dim / 2` channels encode the row, the rest the column.
pub fn sinusoidal_2d(rows: usize, cols: usize, dim: usize) -> DenseArray {
    let mut table = DenseArray::zeros(vec![rows * cols, dim]);
    let half = dim / 2;
    fill_sinusoid(&mut table, 0, half, |p| (p / cols) as f64);
    fill_sinusoid(&mut table, half, dim - half, |p| (p % cols) as f64);
    table
}

fn fill_sinusoid(
    table: &mut DenseArray,
    offset: usize,
    width: usize,
    coord: impl Fn(usize) -> f64,
) {
    let pairs = width / 2;
    let positions = table.shape()[0];
    for p in 0..positions {
        let pos = coord(p);
        let row = table.row_mut(p);
        for i in 0..pairs {
            let freq = 10000f64.powf(-(i as f64) / pairs as f64);
            row[offset + 2 * i] = (pos * freq).sin();
            row[offset + 2 * i + 1] = (pos * freq).cos();
        }
    }
}

pub fn init_weights(cfg: &ResamplerConfig, seed: u64) -> Result<ResamplerWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        DenseArray::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
    };
    let d = cfg.model_dim;
    Ok(ResamplerWeights {
        queries: uniform(cfg.num_queries, d, d),
        w_q: uniform(d, d, d),
        w_k: uniform(cfg.feature_dim, d, cfg.feature_dim),
        w_v: uniform(cfg.feature_dim, d, cfg.feature_dim),
        w_out: uniform(d, d, d),
        spatial_pe: sinusoidal_2d(cfg.patch_rows, cfg.patch_cols, d),
        temporal_pe: sinusoidal_1d(cfg.max_package, d),
    })
}

fn check_weights(w: &ResamplerWeights, cfg: &ResamplerConfig) -> Result<()> {
    let d = cfg.model_dim;
    let expected = [
        (WeightName::Queries, [cfg.num_queries, d]),
        (WeightName::WQ, [d, d]),
        (WeightName::WK, [cfg.feature_dim, d]),
        (WeightName::WV, [cfg.feature_dim, d]),
        (WeightName::WOut, [d, d]),
        (WeightName::SpatialPe, [cfg.patches(), d]),
        (WeightName::TemporalPe, [cfg.max_package, d]),
    ];
    for (name, shape) in expected {
        if w.get(name).shape() != shape {
            return Err(dim_err(format!(
                "{} has shape {:?}, config expects {shape:?}",
                name.as_str(),
                w.get(name).shape()
            )));
        }
    }
    Ok(())
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub frames: usize,
    pub t0: usize,
    /// `[(T·N) × d_in]`
    pub inputs: DenseArray,
    pub keys: DenseArray,
    pub values: DenseArray,
    pub projected_queries: DenseArray,
    pub weights: DenseArray,
    /// Attention output before `W_out`.
    pub hidden: DenseArray,
    pub output: DenseArray,
}

fn package_dims(features: &DenseArray, cfg: &ResamplerConfig) -> Result<usize> {
    let [t, n, d_in] = features.shape() else {
        return Err(dim_err(format!(
            "package features must be [T, N, d_in], got {:?}",
            features.shape()
        )));
    };
    if *n != cfg.patches() {
        return Err(dim_err(format!(
            "package has {n} patches per frame, config expects {}",
            cfg.patches()
        )));
    }
    if *d_in != cfg.feature_dim {
        return Err(dim_err(format!(
            "feature dim {d_in} does not match config {}",
            cfg.feature_dim
        )));
    }
    if *t == 0 {
        return Err(dim_err("package has no frames".into()));
    }
    Ok(*t)
}

pub fn forward(
    features: &DenseArray,
    t0: usize,
    w: &ResamplerWeights,
    cfg: &ResamplerConfig,
) -> Result<ForwardTrace> {
    cfg.validate()?;
    check_weights(w, cfg)?;
    let frames = package_dims(features, cfg)?;
    if t0 + frames > cfg.max_package {
        return Err(ResamplerError::Config(format!(
            "package of {frames} frames at offset {t0} exceeds max_package {}",
            cfg.max_package
        )));
    }
    let n = cfg.patches();
    let inputs = features
        .clone()
        .reshape(vec![frames * n, cfg.feature_dim])?;
    let mut keys = matmul(&inputs, &w.w_k)?;
    for t in 0..frames {
        for p in 0..n {
            let row = keys.row_mut(t * n + p);
            for ((k, s), tp) in row
                .iter_mut()
                .zip(w.spatial_pe.row(p))
                .zip(w.temporal_pe.row(t0 + t))
            {
                *k = *k + s + tp;
            }
        }
    }
    let values = matmul(&inputs, &w.w_v)?;
    let projected_queries = matmul(&w.queries, &w.w_q)?;
    let att = attention_with_weights(&projected_queries, &keys, &values)?;
    let output = matmul(&att.output, &w.w_out)?;
    Ok(ForwardTrace {
        frames,
        t0,
        inputs,
        keys,
        values,
        projected_queries,
        weights: att.weights,
        hidden: att.output,
        output,
    })
}

/// Compresses one package of frame features `[T × N × d_in]` into
/// `[num_queries × model_dim]` tokens.
pub fn resample_package(
    features: &DenseArray,
    t0: usize,
    w: &ResamplerWeights,
    cfg: &ResamplerConfig,
) -> Result<DenseArray> {
    forward(features, t0, w, cfg).map(|t| t.output)
}

/// Image path, written directly over a `[N × d_in]` feature map. The image
/// occupies frame slot 0 of the temporal table.
pub fn resample_image(
    features: &DenseArray,
    w: &ResamplerWeights,
    cfg: &ResamplerConfig,
) -> Result<DenseArray> {
    cfg.validate()?;
    check_weights(w, cfg)?;
    let (n, d_in) = features.dims2()?;
    if n != cfg.patches() || d_in != cfg.feature_dim {
        return Err(dim_err(format!(
            "image features {n}x{d_in} do not match config {}x{}",
            cfg.patches(),
            cfg.feature_dim
        )));
    }
    let mut keys = matmul(features, &w.w_k)?;
    let frame_slot = w.temporal_pe.row(0);
    for p in 0..n {
        let spatial = w.spatial_pe.row(p);
        for (c, k) in keys.row_mut(p).iter_mut().enumerate() {
            *k = *k + spatial[c] + frame_slot[c];
        }
    }
    let values = matmul(features, &w.w_v)?;
    let queries = matmul(&w.queries, &w.w_q)?;
    let att = attention_with_weights(&queries, &keys, &values)?;
    Ok(matmul(&att.output, &w.w_out)?)
}

/// Resamples each package and concatenates the tokens in package order.
pub fn encode_video(
    packages: &[DenseArray],
    w: &ResamplerWeights,
    cfg: &ResamplerConfig,
) -> Result<DenseArray> {
    let mut data = Vec::with_capacity(packages.len() * cfg.num_queries * cfg.model_dim);
    for p in packages {
        data.extend_from_slice(resample_package(p, 0, w, cfg)?.data());
    }
    Ok(DenseArray::new(
        vec![packages.len() * cfg.num_queries, cfg.model_dim],
        data,
    )?)
}

/// `‖out‖²`, the scalar used for gradient checks.
pub fn squared_norm_loss(
    features: &DenseArray,
    t0: usize,
    w: &ResamplerWeights,
    cfg: &ResamplerConfig,
) -> Result<f64> {
    Ok(resample_package(features, t0, w, cfg)?.sum_squares())
}

/// Gradients of `‖out‖²` with respect to every weight array, chained by
/// hand through the attention softmax.
pub fn loss_gradients(
    trace: &ForwardTrace,
    w: &ResamplerWeights,
    cfg: &ResamplerConfig,
) -> Result<ResamplerWeights> {
    let d = cfg.model_dim;
    let n = cfg.patches();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let d_out = trace.output.scale(2.0);
    let g_w_out = matmul(&trace.hidden.transpose()?, &d_out)?;
    let d_hidden = matmul(&d_out, &w.w_out.transpose()?)?;

    let a = &trace.weights;
    let d_weights = matmul(&d_hidden, &trace.values.transpose()?)?;
    let d_values = matmul(&a.transpose()?, &d_hidden)?;

    let (q, keys) = a.dims2()?;
    let mut d_scores = DenseArray::zeros(vec![q, keys]);
    for i in 0..q {
        let ar = a.row(i);
        let dr = d_weights.row(i);
        let dot: f64 = ar.iter().zip(dr).map(|(x, y)| x * y).sum();
        for (j, s) in d_scores.row_mut(i).iter_mut().enumerate() {
            *s = ar[j] * (dr[j] - dot);
        }
    }

    let d_proj_q = matmul(&d_scores, &trace.keys)?.scale(inv_sqrt_d);
    let d_keys = matmul(&d_scores.transpose()?, &trace.projected_queries)?.scale(inv_sqrt_d);

    let g_queries = matmul(&d_proj_q, &w.w_q.transpose()?)?;
    let g_w_q = matmul(&w.queries.transpose()?, &d_proj_q)?;
    let x_t = trace.inputs.transpose()?;
    let g_w_k = matmul(&x_t, &d_keys)?;
    let g_w_v = matmul(&x_t, &d_values)?;

    let mut g_spatial = DenseArray::zeros(w.spatial_pe.shape().to_vec());
    let mut g_temporal = DenseArray::zeros(w.temporal_pe.shape().to_vec());
    for t in 0..trace.frames {
        for p in 0..n {
            let dk = d_keys.row(t * n + p);
            for (g, v) in g_spatial.row_mut(p).iter_mut().zip(dk) {
                *g += v;
            }
            for (g, v) in g_temporal.row_mut(trace.t0 + t).iter_mut().zip(dk) {
                *g += v;
            }
        }
    }

    Ok(ResamplerWeights {
        queries: g_queries,
        w_q: g_w_q,
        w_k: g_w_k,
        w_v: g_w_v,
        w_out: g_w_out,
        spatial_pe: g_spatial,
        temporal_pe: g_temporal,
    })
}

/// Worst-case agreement between analytic and finite-difference gradients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub per_array: Vec<(WeightName, f64)>,
}

impl GradCheckReport {
    pub fn error_for(&self, name: WeightName) -> f64 {
        self.per_array
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, e)| *e)
            .unwrap_or(f64::NAN)
    }
}

/// Per-array error `max|analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞, floor)`.
/// Two identical gradients count as exact agreement.
pub fn relative_error(analytic: &DenseArray, numeric: &DenseArray, floor: f64) -> f64 {
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic
        .max_abs()
        .max(numeric.max_abs())
        .max(floor)
        .max(1e-300)
}

/// Denominator floor relative to the largest gradient entry over all arrays.
/// Arrays whose exact gradient vanishes (the temporal table of a one-frame
/// package only shifts every logit equally) otherwise compare round-off
/// against round-off.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub fn grad_check_instance(
    features: &DenseArray,
    t0: usize,
    w: &ResamplerWeights,
    cfg: &ResamplerConfig,
    eps: f64,
) -> Result<GradCheckReport> {
    let trace = forward(features, t0, w, cfg)?;
    let analytic = loss_gradients(&trace, w, cfg)?;
    let mut numeric = Vec::with_capacity(WeightName::ALL.len());
    for name in WeightName::ALL {
        numeric.push(finite_diff_grad(
            |x| {
                let mut probe = w.clone();
                *probe.get_mut(name) = x.clone();
                squared_norm_loss(features, t0, &probe, cfg).unwrap_or(f64::NAN)
            },
            w.get(name),
            eps,
        )?);
    }
    let scale = WeightName::ALL
        .iter()
        .zip(&numeric)
        .fold(0.0f64, |m, (name, n)| {
            m.max(analytic.get(*name).max_abs()).max(n.max_abs())
        });
    let per_array: Vec<(WeightName, f64)> = WeightName::ALL
        .iter()
        .zip(&numeric)
        .map(|(name, n)| {
            (
                *name,
                relative_error(analytic.get(*name), n, GRAD_CHECK_FLOOR * scale),
            )
        })
        .collect();
    let max_relative_error = per_array.iter().fold(0.0f64, |m, (_, e)| m.max(*e));
    Ok(GradCheckReport {
        max_relative_error,
        per_array,
    })
}

/// Largest instance `grad_check` accepts.
pub const GRAD_CHECK_MAX: (usize, usize, usize) = (4, 8, 3);

/// Random small instance (weights and features from `seed`) checked against
/// central differences.
pub fn grad_check(
    cfg: &ResamplerConfig,
    frames: usize,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    let (max_q, max_n, max_t) = GRAD_CHECK_MAX;
    if cfg.num_queries > max_q || cfg.patches() > max_n || frames > max_t || frames == 0 {
        return Err(ResamplerError::Config(format!(
            "gradient check needs Q <= {max_q}, N <= {max_n}, 1 <= T <= {max_t}"
        )));
    }
    let w = init_weights(cfg, seed)?;
    let features = random_features(frames, cfg, seed ^ 0x9e37_79b9_7f4a_7c15);
    grad_check_instance(&features, 0, &w, cfg, eps)
}

/// Uniform `[-1, 1)` features of shape `[frames × N × d_in]`.
pub fn random_features(frames: usize, cfg: &ResamplerConfig, seed: u64) -> DenseArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = frames * cfg.patches() * cfg.feature_dim;
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseArray::new(vec![frames, cfg.patches(), cfg.feature_dim], data)
        .expect("shape matches length")
}
