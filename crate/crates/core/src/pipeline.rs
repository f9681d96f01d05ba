//! The streaming training loop: preprocess, optional region sampling,
//! sparse coding, accumulation, dictionary update and periodic evaluation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cbpdn::{cbpdn_objective, CbpdnConfig, CbpdnSolver};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::learner::{
    fista_d_update, forgetting_factor, Accumulator, FistaConfig, ForgettingSchedule,
};
use crate::transforms::{Fft2d, Signal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preprocess {
    MeanSubtract,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionStrategy {
    /// Non-overlapping tiles in row-major order; partial edge tiles dropped.
    Grid,
    /// `count` windows at independent uniform top-left offsets.
    UniformRandom { count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    WholeImage,
    Regions {
        size: (usize, usize),
        strategy: RegionStrategy,
    },
}

/// Default forgetting exponents: 5 for whole images, 40 for region samples.
pub fn default_schedule(mode: &SampleMode) -> ForgettingSchedule {
    match mode {
        SampleMode::WholeImage => ForgettingSchedule::Exponent(5.0),
        SampleMode::Regions { .. } => ForgettingSchedule::Exponent(40.0),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub filters: usize,
    pub filter_size: (usize, usize),
    pub schedule: ForgettingSchedule,
    pub cbpdn: CbpdnConfig,
    pub fista: FistaConfig,
    pub sample_mode: SampleMode,
    pub eval_every: u64,
    pub seed: u64,
    pub preprocess: Preprocess,
}

impl TrainConfig {
    /// Whole-image training with default solver settings and `p = 5`.
    pub fn new(filters: usize, filter_size: (usize, usize), lambda: f64, total_steps: u64) -> Self {
        TrainConfig {
            total_steps,
            filters,
            filter_size,
            schedule: ForgettingSchedule::Exponent(5.0),
            cbpdn: CbpdnConfig::new(lambda),
            fista: FistaConfig::default(),
            sample_mode: SampleMode::WholeImage,
            eval_every: 5,
            seed: 0,
            preprocess: Preprocess::MeanSubtract,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.cbpdn.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::invalid("total steps must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be >= 1"));
        }
        if self.filters == 0 || self.filter_size.0 == 0 || self.filter_size.1 == 0 {
            return Err(Error::invalid("need at least one filter of size >= 1x1"));
        }
        if let SampleMode::Regions { size, strategy } = self.sample_mode {
            if size.0 < self.filter_size.0 || size.1 < self.filter_size.1 {
                return Err(Error::invalid(format!(
                    "region {:?} is smaller than the filters {:?}",
                    size, self.filter_size
                )));
            }
            if strategy == (RegionStrategy::UniformRandom { count: 0 }) {
                return Err(Error::invalid("random region count must be >= 1"));
            }
        }
        self.cbpdn.validate()?;
        self.fista.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRecord {
    pub t: u64,
    pub elapsed_seconds: f64,
    pub alpha: f64,
    pub cbpdn_iters: usize,
    pub fista_iters: usize,
    pub test_functional: Option<f64>,
}

/// Everything carried from one step to the next.
#[derive(Clone, Debug)]
pub struct TrainState {
    dictionary: Dictionary,
    accumulator: Option<Accumulator>,
    plan: Option<Fft2d>,
    t: u64,
    rng: ChaCha8Rng,
    clock: Instant,
    last_elapsed: f64,
}

impl TrainState {
    /// Seeds the generator and draws the initial random dictionary from it.
    /// The working dimensions are fixed later by the first sample.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dictionary = Dictionary::random(cfg.filters, cfg.filter_size, &mut rng)?;
        Ok(TrainState {
            dictionary,
            accumulator: None,
            plan: None,
            t: 0,
            rng,
            clock: Instant::now(),
            last_elapsed: 0.0,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn accumulator(&self) -> Option<&Accumulator> {
        self.accumulator.as_ref()
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn working_dims(&self) -> Option<(usize, usize)> {
        self.plan.as_ref().map(Fft2d::dims)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Bytes owned by the accumulator and the dictionary plus fixed headers.
    pub fn footprint_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self
                .accumulator
                .as_ref()
                .map_or(0, Accumulator::footprint_bytes)
            + self.dictionary.filters().len() * std::mem::size_of::<f64>()
    }

    fn elapsed(&mut self) -> f64 {
        let now = self.clock.elapsed().as_secs_f64();
        let e = if now > self.last_elapsed {
            now
        } else {
            self.last_elapsed.next_up()
        };
        self.last_elapsed = e;
        e
    }
}

/// Cuts `size` windows from `image` as exact pixel copies.
pub fn sample_regions<R: Rng + ?Sized>(
    image: &Signal,
    size: (usize, usize),
    strategy: RegionStrategy,
    rng: &mut R,
) -> Result<Vec<Signal>> {
    let (n1, n2) = image.dims();
    let (r1, r2) = size;
    if r1 == 0 || r2 == 0 || r1 > n1 || r2 > n2 {
        return Err(Error::invalid(format!(
            "region {:?} does not fit in image {:?}",
            size,
            (n1, n2)
        )));
    }
    let window = |i: usize, j: usize| {
        Signal::new(
            image
                .values()
                .slice(ndarray::s![i..i + r1, j..j + r2])
                .to_owned(),
        )
    };
    match strategy {
        RegionStrategy::Grid => {
            let mut out = Vec::with_capacity((n1 / r1) * (n2 / r2));
            for bi in 0..n1 / r1 {
                for bj in 0..n2 / r2 {
                    out.push(window(bi * r1, bj * r2)?);
                }
            }
            Ok(out)
        }
        RegionStrategy::UniformRandom { count } => (0..count)
            .map(|_| {
                let i = rng.random_range(0..=n1 - r1);
                let j = rng.random_range(0..=n2 - r2);
                window(i, j)
            })
            .collect(),
    }
}

pub fn preprocess(image: &Signal, mode: Preprocess) -> Signal {
    match mode {
        Preprocess::None => image.clone(),
        Preprocess::MeanSubtract => {
            let values = image.values();
            let mean = values.sum() / values.len() as f64;
            Signal::new(values.mapv(|v| v - mean)).expect("shifting finite values stays finite")
        }
    }
}

/// One pass of the loop body on an already preprocessed sample: sparse
/// code under the current dictionary, transform, accumulate with
/// `alpha_t`, update the dictionary. The returned record has no test
/// functional; [`online_train`] fills it in on evaluation steps.
pub fn train_step(
    state: &mut TrainState,
    sample: &Signal,
    cfg: &TrainConfig,
) -> Result<TrainLogRecord> {
    let step = state.t + 1;
    run_step(state, sample, cfg, step).map_err(|e| Error::Step {
        step: step as usize,
        source: Box::new(e),
    })
}

fn run_step(
    state: &mut TrainState,
    sample: &Signal,
    cfg: &TrainConfig,
    step: u64,
) -> Result<TrainLogRecord> {
    let dims = sample.dims();
    match state.plan.as_ref().map(Fft2d::dims) {
        None => {
            state.dictionary.check_fits(dims)?;
            state.plan = Some(Fft2d::new(dims)?);
            state.accumulator = Some(Accumulator::new(state.dictionary.count(), dims)?);
        }
        Some(fixed) if fixed != dims => {
            return Err(Error::invalid(format!(
                "sample is {:?}, run is fixed to {:?}",
                dims, fixed
            )));
        }
        Some(_) => {}
    }
    let plan = state.plan.as_ref().expect("set above");
    let acc = state.accumulator.as_mut().expect("set above");

    let solver = CbpdnSolver::new(&state.dictionary, dims, &cfg.cbpdn)?;
    let (maps, coding) = solver.solve(sample)?;
    let x_hat = maps.spectra(plan)?;
    let s_hat = plan.forward(sample.view())?;
    let alpha = forgetting_factor(step, cfg.schedule)?;
    acc.accumulate(&x_hat, &s_hat, alpha)?;

    // Nothing to fit while every sample seen so far coded to zero.
    let fista_iters = if acc.is_zero() {
        0
    } else {
        let (next, stats) = fista_d_update(acc, &state.dictionary, dims, &cfg.fista)?;
        state.dictionary = next;
        stats.iterations
    };
    state.t = step;
    Ok(TrainLogRecord {
        t: step,
        elapsed_seconds: state.elapsed(),
        alpha,
        cbpdn_iters: coding.iterations,
        fista_iters,
        test_functional: None,
    })
}

/// Summed test functional; `empty_test_set` flags the degenerate case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub empty_test_set: bool,
}

/// Sum over the test images of the CBPDN objective at the sparse-coding
/// solution under `dict`. Images are coded in parallel and summed in order.
pub fn evaluate_dictionary(
    dict: &Dictionary,
    test_set: &[Signal],
    cbpdn: &CbpdnConfig,
) -> Result<Evaluation> {
    if test_set.is_empty() {
        log::warn!("empty test set, test functional is 0");
        return Ok(Evaluation {
            value: 0.0,
            empty_test_set: true,
        });
    }
    let values: Vec<f64> = test_set
        .par_iter()
        .map(|s| {
            let solver = CbpdnSolver::new(dict, s.dims(), cbpdn)?;
            let (maps, _) = solver.solve(s)?;
            cbpdn_objective(s, dict, &maps, cbpdn.lambda)
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        value: values.iter().sum(),
        empty_test_set: false,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub dictionary: Dictionary,
    pub records: Vec<TrainLogRecord>,
}

/// Runs the whole streaming loop. See [`online_train_with`].
pub fn online_train<I>(stream: I, test_set: &[Signal], cfg: &TrainConfig) -> Result<TrainOutcome>
where
    I: IntoIterator<Item = Result<Signal>>,
{
    online_train_with(stream, test_set, cfg, |_, _| {})
}

/// Streams images through [`train_step`] until `cfg.total_steps` samples
/// were used or the stream ends. Images are preprocessed, then cut into
/// regions when configured; regions enter the sequence in tile order. The
/// test set gets the same preprocessing and is evaluated every
/// `eval_every` steps and after the last step. `observe` sees the state
/// and record after every step.
pub fn online_train_with<I, F>(
    stream: I,
    test_set: &[Signal],
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<TrainOutcome>
where
    I: IntoIterator<Item = Result<Signal>>,
    F: FnMut(&TrainState, &TrainLogRecord),
{
    cfg.validate()?;
    let mut state = TrainState::new(cfg)?;
    let test: Vec<Signal> = test_set
        .iter()
        .map(|s| preprocess(s, cfg.preprocess))
        .collect();
    let mut records = Vec::new();

    'images: for image in stream {
        let image = preprocess(&image?, cfg.preprocess);
        let samples = match cfg.sample_mode {
            SampleMode::WholeImage => vec![image],
            SampleMode::Regions { size, strategy } => {
                sample_regions(&image, size, strategy, state.rng_mut())?
            }
        };
        for sample in samples {
            let mut record = train_step(&mut state, &sample, cfg)?;
            let last = record.t == cfg.total_steps;
            if record.t % cfg.eval_every == 0 || last {
                let eval = evaluate_dictionary(&state.dictionary, &test, &cfg.cbpdn)?;
                record.test_functional = Some(eval.value);
            }
            observe(&state, &record);
            records.push(record);
            if last {
                break 'images;
            }
        }
    }

    if records.is_empty() {
        return Err(Error::invalid("training stream yielded no samples"));
    }
    if let Some(last) = records.last_mut() {
        if last.test_functional.is_none() {
            last.test_functional =
                Some(evaluate_dictionary(&state.dictionary, &test, &cfg.cbpdn)?.value);
        }
    }
    Ok(TrainOutcome {
        dictionary: state.dictionary,
        records,
    })
}
