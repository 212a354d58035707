//! Stochastic minimization of the penalized graph-drawing objective over
//! mini-batches of positive and negative state pairs.
//!
//! The loss on a batch is `attractive + beta * repulsive`, where the
//! attractive term pulls embeddings of temporally close states together and
//! the repulsive term softly enforces orthonormality (with diagonal target
//! `c` instead of 1) using only independently sampled state pairs.

use crate::grid::{GridSpec, GridState, ReprKind};
use crate::nn::{self, AdamState, Grads, Mlp, NnError};
use crate::replay::{ReplayBuffer, ReplayError};
use crate::rng::substream;
use ndarray::Array2;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Settings for one representation-learning run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub d: usize,
    /// Penalty weight; `None` means the `d/20` default.
    pub beta: Option<f64>,
    /// Diagonal target of the soft orthonormality constraint.
    pub delta_scale: f64,
    /// Discount for multi-step positive pairs.
    pub lambda: f64,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Hidden layer sizes; `None` picks the per-representation default
    /// (linear for one-hot inputs, 200-200 for positions).
    pub hidden: Option<Vec<usize>>,
    /// Reuse the positive batch's `u` as the first element of each negative
    /// pair instead of drawing it fresh.
    pub reuse_positive_states: bool,
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(d: usize) -> TrainConfig {
        TrainConfig {
            d,
            beta: None,
            delta_scale: 1.0,
            lambda: 0.0,
            batch: 32,
            steps: 100_000,
            lr: 0.001,
            seed: 0,
            hidden: None,
            reuse_positive_states: false,
            log_every: 1000,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.d as f64 / 20.0)
    }

    pub fn hidden_for(&self, kind: ReprKind) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| default_hidden(kind))
    }
}

pub fn default_hidden(kind: ReprKind) -> Vec<usize> {
    match kind {
        ReprKind::Index => vec![],
        ReprKind::Position => vec![200, 200],
    }
}

/// Per-interval training record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub attractive: f64,
    pub repulsive: f64,
    pub total: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub attractive: f64,
    pub repulsive: f64,
    pub total: f64,
}

/// Mean over the batch of `1/2 * sum_k (pu_k - pv_k)^2`.
pub fn attractive_term(pu: &Array2<f64>, pv: &Array2<f64>) -> f64 {
    assert_eq!(pu.dim(), pv.dim(), "attractive_term: shape mismatch");
    let batch = pu.nrows() as f64;
    let mut total = 0.0;
    for (a, b) in pu.iter().zip(pv.iter()) {
        let diff = a - b;
        total += 0.5 * diff * diff;
    }
    total / batch
}

/// Mean over the batch of
/// `(pu . pw)^2 - c ||pu||^2 - c ||pw||^2 + c^2 d`,
/// the closed form of the soft-orthonormality penalty with diagonal target `c`.
pub fn repulsive_term(pu: &Array2<f64>, pw: &Array2<f64>, c: f64, d: usize) -> f64 {
    assert_eq!(pu.dim(), pw.dim(), "repulsive_term: shape mismatch");
    assert_eq!(pu.ncols(), d, "repulsive_term: embedding dim mismatch");
    let batch = pu.nrows();
    let mut total = 0.0;
    for b in 0..batch {
        let (mut dot, mut nu, mut nw) = (0.0, 0.0, 0.0);
        for k in 0..d {
            let u = pu[[b, k]];
            let w = pw[[b, k]];
            dot += u * w;
            nu += u * u;
            nw += w * w;
        }
        total += dot * dot - c * nu - c * nw + c * c * d as f64;
    }
    total / batch as f64
}

/// Loss value and gradients with respect to the four embedding batches.
pub fn penalized_loss_grads(
    pu: &Array2<f64>,
    pv: &Array2<f64>,
    pw1: &Array2<f64>,
    pw2: &Array2<f64>,
    beta: f64,
    c: f64,
) -> (LossParts, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = pu.ncols();
    let attractive = attractive_term(pu, pv);
    let repulsive = repulsive_term(pw1, pw2, c, d);
    let parts = LossParts {
        attractive,
        repulsive,
        total: attractive + beta * repulsive,
    };

    let inv_b = 1.0 / pu.nrows() as f64;
    let mut gu = pu - pv;
    gu.mapv_inplace(|x| x * inv_b);
    let gv = gu.mapv(|x| -x);

    let inv_bn = 1.0 / pw1.nrows() as f64;
    let mut g1 = Array2::<f64>::zeros(pw1.dim());
    let mut g2 = Array2::<f64>::zeros(pw2.dim());
    for b in 0..pw1.nrows() {
        let mut dot = 0.0;
        for k in 0..d {
            dot += pw1[[b, k]] * pw2[[b, k]];
        }
        for k in 0..d {
            g1[[b, k]] = beta * inv_bn * (2.0 * dot * pw2[[b, k]] - 2.0 * c * pw1[[b, k]]);
            g2[[b, k]] = beta * inv_bn * (2.0 * dot * pw1[[b, k]] - 2.0 * c * pw2[[b, k]]);
        }
    }
    (parts, gu, gv, g1, g2)
}

/// Feature rows for a list of states.
pub fn encode_batch(spec: &GridSpec, states: &[GridState], kind: ReprKind) -> Array2<f64> {
    let dim = spec.feature_dim(kind);
    let mut x = Array2::<f64>::zeros((states.len(), dim));
    for (i, &s) in states.iter().enumerate() {
        spec.encode_into(s, kind, x.row_mut(i).as_slice_mut().unwrap());
    }
    x
}

/// Loss and parameter gradients for fixed feature batches. Shared by the
/// training loop and the finite-difference checks.
pub fn loss_and_param_grads(
    mlp: &Mlp,
    xu: &Array2<f64>,
    xv: &Array2<f64>,
    xw1: &Array2<f64>,
    xw2: &Array2<f64>,
    beta: f64,
    c: f64,
) -> (LossParts, Grads) {
    let (pu, cache_u) = mlp.forward_cached(xu);
    let (pv, cache_v) = mlp.forward_cached(xv);
    let (pw1, cache_w1) = mlp.forward_cached(xw1);
    let (pw2, cache_w2) = mlp.forward_cached(xw2);
    let (parts, gu, gv, g1, g2) = penalized_loss_grads(&pu, &pv, &pw1, &pw2, beta, c);
    let mut grads = mlp.backward(&cache_u, &gu);
    grads.add(&mlp.backward(&cache_v, &gv));
    grads.add(&mlp.backward(&cache_w1, &g1));
    grads.add(&mlp.backward(&cache_w2, &g2));
    (parts, grads)
}

/// Runs `steps` Adam updates of the penalized objective and returns the final
/// parameters plus a training log. Deterministic given the config seed.
pub fn train_repr(
    cfg: &TrainConfig,
    buffer: &ReplayBuffer,
    spec: &GridSpec,
    kind: ReprKind,
) -> Result<(Mlp, TrainLog), TrainError> {
    let mut dims = vec![spec.feature_dim(kind)];
    dims.extend(cfg.hidden_for(kind));
    dims.push(cfg.d);

    let mut init_rng = substream(cfg.seed, "repr-init");
    let mut mlp = nn::init(&dims, &mut init_rng)?;
    let mut adam = AdamState::new(&mlp, cfg.lr);
    let mut rng = substream(cfg.seed, "repr-train");

    let beta = cfg.beta();
    let c = cfg.delta_scale;
    let mut log = TrainLog::default();
    let start = Instant::now();

    let mut us = Vec::with_capacity(cfg.batch);
    let mut vs = Vec::with_capacity(cfg.batch);
    let mut w1s = Vec::with_capacity(cfg.batch);
    let mut w2s = Vec::with_capacity(cfg.batch);

    for step in 0..cfg.steps {
        us.clear();
        vs.clear();
        w1s.clear();
        w2s.clear();
        for _ in 0..cfg.batch {
            let pair = buffer.sample_pair(cfg.lambda, &mut rng)?;
            us.push(pair.u);
            vs.push(pair.v);
        }
        for i in 0..cfg.batch {
            if cfg.reuse_positive_states {
                w1s.push(us[i]);
                w2s.push(buffer.sample_state(&mut rng)?);
            } else {
                let (a, b) = buffer.sample_negative_pair(&mut rng)?;
                w1s.push(a);
                w2s.push(b);
            }
        }
        let xu = encode_batch(spec, &us, kind);
        let xv = encode_batch(spec, &vs, kind);
        let xw1 = encode_batch(spec, &w1s, kind);
        let xw2 = encode_batch(spec, &w2s, kind);

        let (parts, grads) = loss_and_param_grads(&mlp, &xu, &xv, &xw1, &xw2, beta, c);
        nn::adam_step(&mut mlp, &grads, &mut adam)?;

        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            log.records.push(LogRecord {
                step: done,
                attractive: parts.attractive,
                repulsive: parts.repulsive,
                total: parts.total,
                wall_secs: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok((mlp, log))
}
