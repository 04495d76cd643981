use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{LossBreakdown, LossConfig, LossEvaluation, LossTargets};
use crate::error::{Error, Result};
use crate::image_io::PreprocessSpec;
use crate::network::{ActivationTrace, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Seeded uniform noise on `[-noise_amplitude, noise_amplitude]`.
    Noise,
    /// Start from the content image.
    Content,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerParams {
    pub max_iters: usize,
    /// Initial step size δ, in preprocessed units.
    pub step: f32,
    /// Halve δ until the loss decreases; rejects every non-decreasing step.
    pub line_search: bool,
    pub max_halvings: u32,
    /// Factor applied to δ after an accepted line-search step.
    pub step_growth: f32,
    /// Stop when the relative loss decrease over `window` iterations drops
    /// below this.
    pub tol: f64,
    pub window: usize,
    pub seed: u64,
    pub init: Init,
    pub noise_amplitude: f32,
    /// Per-channel pixel bounds enforced after every step.
    pub clamp: Option<[(f32, f32); 3]>,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            max_iters: 500,
            step: 1.0,
            line_search: true,
            max_halvings: 20,
            step_growth: 2.0,
            tol: 1e-6,
            window: 25,
            seed: 0,
            init: Init::Noise,
            noise_amplitude: 50.0,
            clamp: Some(PreprocessSpec::default().valid_range()),
        }
    }
}

impl OptimizerParams {
    fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step
            )));
        }
        if !(self.step_growth.is_finite() && self.step_growth >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "step growth must be at least 1, got {}",
                self.step_growth
            )));
        }
        if !(self.noise_amplitude.is_finite() && self.noise_amplitude >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise amplitude must be non-negative".into(),
            ));
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    /// Relative improvement over the window fell below `tol`.
    Converged,
    /// Zero loss or zero gradient.
    Stationary,
    /// The line search exhausted its halvings without a decrease.
    LineSearchFailed,
}

/// Optimizer state after a run (or at the point it diverged).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisState {
    pub image: Tensor,
    pub iteration: usize,
    /// Step size in effect after the last iteration.
    pub step: f32,
    /// Loss at the starting image.
    pub initial: LossBreakdown,
    /// Loss after each iteration; `history.len() == iteration`.
    pub history: Vec<LossBreakdown>,
    pub seed: u64,
    pub stop: Option<StopReason>,
}

impl SynthesisState {
    pub fn final_loss(&self) -> LossBreakdown {
        self.history.last().copied().unwrap_or(self.initial)
    }
}

/// Writes `iteration,total,content,style` rows; row 0 is the starting image.
pub fn write_loss_csv<W: Write>(state: &SynthesisState, mut out: W) -> io::Result<()> {
    writeln!(out, "iteration,total,content,style")?;
    for (i, l) in std::iter::once(&state.initial)
        .chain(&state.history)
        .enumerate()
    {
        writeln!(out, "{i},{},{},{}", l.total, l.content, l.style)?;
    }
    Ok(())
}

fn clamp_image(x: &mut Tensor, bounds: Option<[(f32, f32); 3]>) {
    let Some(bounds) = bounds else { return };
    let per_channel = x.len() / x.shape()[0];
    for (c, plane) in x.data_mut().chunks_mut(per_channel).enumerate() {
        let (lo, hi) = bounds[c.min(2)];
        for v in plane {
            *v = v.clamp(lo, hi);
        }
    }
}

struct Objective<'a> {
    net: &'a Network,
    cfg: &'a LossConfig,
    targets: LossTargets,
    layers: Vec<String>,
}

impl Objective<'_> {
    fn loss(&self, x: &Tensor) -> Result<(ActivationTrace, LossEvaluation)> {
        let trace = self.net.forward(x, &self.layers)?;
        let eval = self.targets.evaluate(&trace, self.cfg)?;
        Ok((trace, eval))
    }

    fn gradient(&self, trace: &ActivationTrace, eval: &LossEvaluation) -> Result<Tensor> {
        self.net.backward_to_input(trace, &eval.cotangents)
    }
}

/// Descends the combined content/style loss starting from white noise (or
/// the content image). `content` and `style` are preprocessed `[3, H, W]`
/// tensors of equal shape; at least one must be given.
///
/// Each iteration takes `x ← clamp(x − δ·∇L)`. With the line search on, δ
/// is halved until the loss strictly decreases and grown by `step_growth`
/// after each accepted step, so the loss history never increases.
pub fn synthesize(
    net: &Network,
    content: Option<&Tensor>,
    style: Option<&Tensor>,
    cfg: &LossConfig,
    opt: &OptimizerParams,
) -> Result<(Tensor, SynthesisState)> {
    cfg.validate()?;
    opt.validate()?;
    let shape = match (content, style) {
        (Some(c), Some(s)) if c.shape() != s.shape() => {
            return Err(Error::Shape(format!(
                "content {:?} and style {:?} images differ in shape",
                c.shape(),
                s.shape()
            )))
        }
        (Some(t), _) | (None, Some(t)) => t.shape().to_vec(),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "synthesis needs a content or a style image".into(),
            ))
        }
    };

    let capture_for =
        |names: &[(String, f64)]| -> Vec<String> { names.iter().map(|(n, _)| n.clone()).collect() };
    let content_trace = content
        .map(|c| net.forward(c, &capture_for(&cfg.content_layers)))
        .transpose()?;
    let style_trace = style
        .map(|s| net.forward(s, &capture_for(&cfg.style_layers)))
        .transpose()?;
    let targets = LossTargets::new(cfg, content_trace.as_ref(), style_trace.as_ref())?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument(
            "no loss term is active for the given images and weights".into(),
        ));
    }
    let objective = Objective {
        net,
        cfg,
        layers: targets.layers(),
        targets,
    };

    let mut x = match opt.init {
        Init::Content => content
            .ok_or_else(|| Error::InvalidArgument("content init needs a content image".into()))?
            .clone(),
        Init::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
            let amp = opt.noise_amplitude;
            Tensor::from_fn(shape, |_| {
                if amp > 0.0 {
                    rng.random_range(-amp..=amp)
                } else {
                    0.0
                }
            })?
        }
    };
    clamp_image(&mut x, opt.clamp);

    let (mut trace, mut eval) = objective.loss(&x)?;
    let mut state = SynthesisState {
        image: x,
        iteration: 0,
        step: opt.step,
        initial: eval.loss,
        history: Vec::new(),
        seed: opt.seed,
        stop: None,
    };
    if !eval.loss.total.is_finite() {
        return Err(Error::Diverged {
            state: Box::new(state),
        });
    }

    while state.iteration < opt.max_iters {
        let current = eval.loss.total;
        if current == 0.0 {
            state.stop = Some(StopReason::Stationary);
            break;
        }
        let grad = objective.gradient(&trace, &eval)?;
        if grad.data().iter().all(|&g| g == 0.0) {
            state.stop = Some(StopReason::Stationary);
            break;
        }

        let mut delta = state.step;
        let mut accepted = None;
        for attempt in 0..=opt.max_halvings {
            let mut trial = state.image.zip_map(&grad, |v, g| v - delta * g)?;
            clamp_image(&mut trial, opt.clamp);
            let (t, e) = objective.loss(&trial)?;
            if !opt.line_search {
                accepted = Some((trial, t, e));
                break;
            }
            if trial.is_finite() && e.loss.total < current {
                accepted = Some((trial, t, e));
                break;
            }
            if attempt < opt.max_halvings {
                delta *= 0.5;
            }
        }
        let Some((next, t, e)) = accepted else {
            state.step = delta;
            state.stop = Some(StopReason::LineSearchFailed);
            break;
        };

        state.image = next;
        state.iteration += 1;
        state.history.push(e.loss);
        state.step = if opt.line_search {
            delta * opt.step_growth
        } else {
            delta
        };
        trace = t;
        eval = e;
        if !eval.loss.total.is_finite() || !state.image.is_finite() {
            return Err(Error::Diverged {
                state: Box::new(state),
            });
        }

        if state.iteration >= opt.window {
            let past = if state.iteration == opt.window {
                state.initial.total
            } else {
                state.history[state.iteration - opt.window - 1].total
            };
            let gain = (past - eval.loss.total) / past.abs().max(f64::MIN_POSITIVE);
            if gain < opt.tol {
                state.stop = Some(StopReason::Converged);
                break;
            }
        }
    }
    if state.stop.is_none() {
        state.stop = Some(StopReason::MaxIterations);
    }
    Ok((state.image.clone(), state))
}
