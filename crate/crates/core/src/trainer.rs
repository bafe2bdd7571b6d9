//! Full-batch multi-task pretraining with Adam.

use alloc::vec::Vec;
use core::time::Duration;

use crate::autodiff::{self, Tape, Var};
use crate::data::{self, Dataset};
use crate::graph::{self, GraphConfig, HeteroGraph, View};
use crate::losses::{self, LossBreakdown, LossConfig, MobilityDivergence};
use crate::model::{self, HyperParams, ModelParams, ParamVars};
use crate::rng::{derive_seed, SplitMix64};
use crate::synth::{self, SynthSpec};
use crate::{Error, Matrix, Result};

const INIT_STREAM: u64 = 0x1_0000;
const NEGATIVE_STREAM: u64 = 0x2_0000;
const GRADCHECK_STREAM: u64 = 0x3_0000;
const GRADCHECK_ATTEMPTS: u64 = 64;
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub views: Vec<View>,
    pub hp: HyperParams,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub k_demo: usize,
    pub k_mobility: usize,
    pub seed: u64,
    /// Observer cadence in epochs; 0 disables.
    pub log_every: usize,
    pub mobility_divergence: MobilityDivergence,
}

impl TrainConfig {
    pub fn new(views: Vec<View>) -> Self {
        Self {
            views,
            hp: HyperParams::default(),
            epochs: 1000,
            lr: 1e-3,
            weight_decay: 1e-5,
            margin: 1.0,
            k_demo: 10,
            k_mobility: 20,
            seed: 0,
            log_every: 0,
            mobility_divergence: MobilityDivergence::Js,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.hp.check()?;
        if self.views.is_empty() {
            return Err(Error::EmptyViews);
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "weight decay must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            views: self.views.clone(),
            k_demo: self.k_demo,
            k_mobility: self.k_mobility,
        }
    }

    /// Loss settings for a given epoch (1-based); negatives are resampled per epoch.
    pub fn loss_config(&self, epoch: usize) -> LossConfig {
        LossConfig {
            margin: self.margin,
            seed: derive_seed(self.seed, NEGATIVE_STREAM + epoch as u64),
            mobility_divergence: self.mobility_divergence,
        }
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, INIT_STREAM)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, then decoupled weight decay on the
/// tensors whose `decay` flag is set.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    decay: &[bool],
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        let shrink = if decay[k] {
            cfg.lr * cfg.weight_decay
        } else {
            0.0
        };
        for (i, x) in p.as_mut_slice().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *x -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
            *x -= shrink * *x;
        }
    }
}

/// Loss breakdown and gradients (in [`ModelParams::tensors`] order) for one
/// full-batch evaluation.
pub fn loss_and_grads(
    graph: &HeteroGraph,
    params: &ModelParams,
    hp: &HyperParams,
    loss_cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = model::forward(&mut tape, graph, &vars, hp)?;
    let loss = losses::total_loss(&mut tape, graph, &out, loss_cfg)?;
    tape.backward(loss.total)?;
    let grads = vars
        .flat()
        .into_iter()
        .map(|v| tape.grad(v).expect("param leaf").clone())
        .collect();
    Ok((loss.breakdown(&tape), grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub relations: usize,
    /// Scalar parameters probed.
    pub coordinates: usize,
}

/// Central-difference check (step 1e-5) of the full pretraining loss on a
/// synthetic city of `regions` regions with every view active.
///
/// The probe point draws matrices from U(−1, 1) and row vectors from
/// U(−0.5, 0.5), redrawing until every leaky-relu and hinge input sits at
/// least 1e-3 from its kink.
pub fn gradient_check(regions: usize, seed: u64, dim: usize) -> Result<GradCheck> {
    let city = synth::generate_city(&SynthSpec::with_regions(regions, seed))?;
    let mut views = alloc::vec![View::Neighbor, View::Poi, View::Mobility];
    views.extend(
        city.dataset
            .demographics
            .keys()
            .map(|a| View::Demo(a.clone())),
    );
    let mut cfg = TrainConfig::new(views);
    cfg.hp.dim = dim;
    cfg.seed = seed;
    cfg.check()?;
    let graph = graph::build(&city.dataset, &cfg.graph_config())?;
    let loss_cfg = cfg.loss_config(1);
    let template = model::init_params(cfg.init_seed(), graph.n, &graph.relations(), &cfg.hp)?;
    let loss = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let out = model::forward(tape, &graph, &ParamVars::from_flat(vars), &cfg.hp)?;
        Ok(losses::total_loss(tape, &graph, &out, &loss_cfg)?.total)
    };

    for attempt in 0..GRADCHECK_ATTEMPTS {
        let mut rng = SplitMix64::new(derive_seed(seed, GRADCHECK_STREAM + attempt));
        let point: Vec<Matrix> = template
            .tensors()
            .into_iter()
            .map(|t| {
                let bound = if t.rows() == 1 { 0.5 } else { 1.0 };
                Matrix::from_fn(t.rows(), t.cols(), |_, _| rng.uniform(-bound, bound))
            })
            .collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|m| tape.param(m.clone())).collect();
        loss(&mut tape, &vars)?;
        if tape.kink_margin() < GRADCHECK_MARGIN {
            continue;
        }
        return Ok(GradCheck {
            max_rel_error: autodiff::grad_check(loss, &point, GRADCHECK_STEP)?,
            relations: graph.relations().len(),
            coordinates: point.iter().map(|m| m.as_slice().len()).sum(),
        });
    }
    Err(Error::InvalidConfig(
        "no probe point clear of activation kinks".into(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Unified n × d embeddings after the last epoch.
    pub embeddings: Matrix,
    /// One entry per epoch, measured before that epoch's update.
    pub history: Vec<LossBreakdown>,
    pub config: TrainConfig,
    pub params: ModelParams,
    /// Zero unless filled in by a caller with a clock.
    pub wall_time: Duration,
}

/// Trains on `dataset`; see [`train_with`].
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    train_with(dataset, cfg, |_, _| {})
}

/// Builds the graph, initializes parameters and runs `cfg.epochs` Adam
/// steps. `observe(epoch, losses)` fires every `cfg.log_every` epochs.
pub fn train_with(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainResult> {
    cfg.check()?;
    data::validate(dataset).into_result()?;
    let graph = graph::build(dataset, &cfg.graph_config())?;
    let mut params = model::init_params(cfg.init_seed(), graph.n, &graph.relations(), &cfg.hp)?;
    let decay = params.decay_mask();
    let mut state = AdamState::new(params.tensors());
    let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let (losses, grads) = loss_and_grads(&graph, &params, &cfg.hp, &cfg.loss_config(epoch))?;
        if !losses.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(epoch));
        }
        adam_step(&mut params.tensors_mut(), &grads, &decay, &mut state, &adam);
        if !params.is_finite() {
            return Err(Error::NonFinite(epoch));
        }
        if cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch == 1) {
            observe(epoch, &losses);
        }
        history.push(losses);
    }

    let embeddings = model::embed(&graph, &params, &cfg.hp)?;
    Ok(TrainResult {
        embeddings,
        history,
        config: cfg.clone(),
        params,
        wall_time: Duration::ZERO,
    })
}
