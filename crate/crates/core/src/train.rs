//! Training configuration and the Adam training loop.
//!
//! Batches and noise are addressed by step number rather than drawn from a
//! running generator: sample `s = step·B + j` reads position `s mod N` of the
//! permutation for epoch `s / N`, and its Gumbel noise comes from the stream
//! keyed by `(step, j)`. A resumed run therefore replays exactly.

use std::fmt;

use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::data::{common_dim, FeatureSet};
use crate::error::{Error, Result};
use crate::gumbel::{sample_gumbel_noise, MaskPath};
use crate::networks::{init_networks, NetworkConfig, ReconstructorNetwork, SelectorNetwork};
use crate::objective::{assign_parameters, batch_loss, named_parameters, validate_retention};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Retention target in `(0, 1]`.
    pub p: f64,
    /// Gumbel-Softmax temperature at step 0.
    pub tau: f64,
    /// Optional final temperature, reached geometrically after
    /// `tau_anneal_steps` steps.
    pub tau_end: Option<f64>,
    pub tau_anneal_steps: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub dim: usize,
    pub max_tokens: usize,
    pub heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            p: 0.5,
            tau: 1.0,
            tau_end: None,
            tau_anneal_steps: 0,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps_adam: adam.eps,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            dim: 32,
            max_tokens: 64,
            heads: NetworkConfig::default_heads(32),
        }
    }
}

fn field_err(key: &str, msg: impl fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| field_err(key, format!("cannot parse {value:?}: {e}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 14] = [
        "p",
        "tau",
        "tau_end",
        "tau_anneal_steps",
        "learning_rate",
        "beta1",
        "beta2",
        "eps_adam",
        "batch_size",
        "steps",
        "seed",
        "dim",
        "max_tokens",
        "heads",
    ];

    /// Every invalid field as `key: reason`, in [`Self::KEYS`] order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if validate_retention(self.p).is_err() {
            out.push(format!("p: must lie in (0, 1], got {}", self.p));
        }
        let mut positive = |key: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{key}: must be positive, got {v}"));
            }
        };
        positive("tau", self.tau);
        if let Some(end) = self.tau_end {
            positive("tau_end", end);
        }
        positive("learning_rate", self.learning_rate);
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("{key}: must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps_adam > 0.0 && self.eps_adam.is_finite()) {
            out.push(format!("eps_adam: must be positive, got {}", self.eps_adam));
        }
        if self.batch_size == 0 {
            out.push("batch_size: must be at least 1".to_string());
        }
        if let Err(e) = self.network() {
            out.push(format!("dim/max_tokens/heads: {e}"));
        }
        out
    }

    /// Fails with the first entry of [`Self::problems`].
    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            Some(p) => Err(Error::Config(p)),
            None => Ok(()),
        }
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        NetworkConfig::new(self.dim, self.max_tokens, self.heads)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    /// Temperature used for the update at 0-based `step`.
    pub fn tau_at(&self, step: u64) -> f64 {
        match self.tau_end {
            Some(end) if self.tau_anneal_steps > 0 => {
                let frac = (step as f64 / self.tau_anneal_steps as f64).min(1.0);
                self.tau * (end / self.tau).powf(frac)
            }
            _ => self.tau,
        }
    }

    /// Every field as `key=value` pairs in [`Self::KEYS`] order. Floats use
    /// shortest round-trip formatting.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let tau_end = self.tau_end.map_or("none".to_string(), |v| v.to_string());
        let values = [
            self.p.to_string(),
            self.tau.to_string(),
            tau_end,
            self.tau_anneal_steps.to_string(),
            self.learning_rate.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.eps_adam.to_string(),
            self.batch_size.to_string(),
            self.steps.to_string(),
            self.seed.to_string(),
            self.dim.to_string(),
            self.max_tokens.to_string(),
            self.heads.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "p" => self.p = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "tau_end" => {
                self.tau_end = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "tau_anneal_steps" => self.tau_anneal_steps = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps_adam" => self.eps_adam = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "max_tokens" => self.max_tokens = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            _ => return Err(field_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key=value` lines over `self`. Blank lines and `#` comments
    /// are skipped.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_kv_lines(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Loss terms of one optimizer step; `step` counts from 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub reconstruction: f64,
    pub l_pr: f64,
    pub clamped_reg: f64,
    pub total: f64,
    pub tau: f64,
}

pub const METRICS_HEADER: &str = "step,reconstruction,l_pr,clamped_reg,total";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.reconstruction, self.l_pr, self.clamped_reg, self.total
        )
    }
}

/// Metrics log as CSV text with header.
pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

pub struct Trainer<T> {
    config: TrainConfig,
    selector: SelectorNetwork<T>,
    reconstructor: ReconstructorNetwork<T>,
    adam: AdamState<T>,
    data: Vec<Tensor<T>>,
    permutation: Option<(u64, Vec<usize>)>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh networks drawn from `config.seed`.
    pub fn new(config: TrainConfig, data: &[FeatureSet<T>]) -> Result<Self> {
        config.validate()?;
        let (selector, reconstructor) = init_networks(&config.network()?, config.seed)?;
        let params = named_parameters(&selector, &reconstructor);
        let adam = AdamState::new(params.iter().map(|(_, t)| t));
        Self::assemble(config, selector, reconstructor, adam, data)
    }

    /// Restores networks, optimizer moments and step count. `config`
    /// replaces the stored one; only `steps` may differ.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: Option<TrainConfig>, data: &[FeatureSet<T>]) -> Result<Self> {
        let config = match config {
            Some(c) => {
                let mut stored = ckpt.config.clone();
                stored.steps = c.steps;
                if stored != c {
                    return Err(Error::config(
                        "resume configuration differs from the checkpoint in more than `steps`",
                    ));
                }
                c
            }
            None => ckpt.config.clone(),
        };
        config.validate()?;
        let (selector, reconstructor) = ckpt.networks::<T>()?;
        let expected = named_parameters(&selector, &reconstructor);
        let cast = |ts: &[Tensor<f32>]| ts.iter().map(|t| t.cast::<T>()).collect::<Vec<_>>();
        let adam = AdamState {
            m: cast(&ckpt.adam_m),
            v: cast(&ckpt.adam_v),
            step: ckpt.step,
        };
        for ((_, p), (m, v)) in expected.iter().zip(adam.m.iter().zip(&adam.v)) {
            p.same_shape(m, "checkpoint moments")?;
            p.same_shape(v, "checkpoint moments")?;
        }
        Self::assemble(config, selector, reconstructor, adam, data)
    }

    fn assemble(
        config: TrainConfig,
        selector: SelectorNetwork<T>,
        reconstructor: ReconstructorNetwork<T>,
        adam: AdamState<T>,
        data: &[FeatureSet<T>],
    ) -> Result<Self> {
        let dim = common_dim(data)?;
        if dim != config.dim {
            return Err(Error::Data {
                record: data[0].id.clone(),
                msg: format!("feature width {dim} differs from configured dim {}", config.dim),
            });
        }
        if let Some(s) = data.iter().find(|s| s.tokens() > config.max_tokens) {
            return Err(Error::Data {
                record: s.id.clone(),
                msg: format!("{} tokens exceed max_tokens {}", s.tokens(), config.max_tokens),
            });
        }
        Ok(Trainer {
            config,
            selector,
            reconstructor,
            adam,
            data: data.iter().map(|s| s.features.clone()).collect(),
            permutation: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn selector(&self) -> &SelectorNetwork<T> {
        &self.selector
    }

    pub fn reconstructor(&self) -> &ReconstructorNetwork<T> {
        &self.reconstructor
    }

    fn record_for(&mut self, sample: u64) -> usize {
        let n = self.data.len() as u64;
        let epoch = sample / n;
        if self.permutation.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..self.data.len()).collect();
            perm.shuffle(&mut seed::rng(self.config.seed, seed::SHUFFLE, &[epoch]));
            self.permutation = Some((epoch, perm));
        }
        self.permutation.as_ref().expect("set above").1[(sample % n) as usize]
    }

    /// One optimizer update on the next mini-batch.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let step = self.adam.step;
        let b = self.config.batch_size as u64;
        let tau = self.config.tau_at(step);
        let mut batch = Vec::with_capacity(b as usize);
        for j in 0..b {
            let idx = self.record_for(step * b + j);
            let l = self.data[idx].rows();
            let mut rng = seed::rng(self.config.seed, seed::GUMBEL, &[step, j]);
            let noise = Tensor::new(vec![l, 2], sample_gumbel_noise(l * 2, &mut rng))?;
            batch.push((idx, noise));
        }
        let refs: Vec<(&Tensor<T>, Tensor<T>)> =
            batch.into_iter().map(|(i, n)| (&self.data[i], n)).collect();
        let (loss, grads) = batch_loss(
            &self.selector,
            &self.reconstructor,
            &refs,
            T::of(tau),
            T::of(self.config.p),
            MaskPath::StraightThrough,
        )?;
        let mut params: Vec<Tensor<T>> = named_parameters(&self.selector, &self.reconstructor)
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        {
            let mut refs: Vec<&mut Tensor<T>> = params.iter_mut().collect();
            adam_step(&mut refs, &grads, &mut self.adam, &self.config.adam())?;
        }
        assign_parameters(&mut self.selector, &mut self.reconstructor, &params)?;
        Ok(StepMetrics {
            step: self.adam.step,
            reconstruction: loss.reconstruction.as_f64(),
            l_pr: loss.l_pr.as_f64(),
            clamped_reg: loss.clamped_reg.as_f64(),
            total: loss.total.as_f64(),
            tau,
        })
    }

    /// Trains until `config.steps` updates have been applied, reporting each
    /// step to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepMetrics)) -> Result<Vec<StepMetrics>> {
        self.run_until(self.config.steps, &mut on_step)
    }

    pub fn run_until(&mut self, step: u64, mut on_step: impl FnMut(&StepMetrics)) -> Result<Vec<StepMetrics>> {
        let mut log = Vec::new();
        while self.adam.step < step {
            let m = self.train_step()?;
            on_step(&m);
            log.push(m);
        }
        Ok(log)
    }

    /// Snapshot of every tensor, moment and counter, stored as `f32`.
    pub fn checkpoint(&self) -> Checkpoint {
        let params = named_parameters(&self.selector, &self.reconstructor)
            .into_iter()
            .map(|(n, t)| (n, t.cast::<f32>()))
            .collect();
        Checkpoint {
            config: self.config.clone(),
            step: self.adam.step,
            params,
            adam_m: self.adam.m.iter().map(|t| t.cast()).collect(),
            adam_v: self.adam.v.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Fresh networks trained on `data` per `config`.
pub fn train<T: Scalar>(
    config: TrainConfig,
    data: &[FeatureSet<T>],
    on_step: impl FnMut(&StepMetrics),
) -> Result<(Checkpoint, Vec<StepMetrics>)> {
    let mut trainer = Trainer::new(config, data)?;
    let log = trainer.run(on_step)?;
    Ok((trainer.checkpoint(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_planted_redundancy, PlantedSpec};

    fn corpus(sets: usize) -> Vec<FeatureSet<f32>> {
        generate_planted_redundancy(&PlantedSpec {
            sets,
            tokens: 6,
            dim: 8,
            rank: 3,
            noise_sigma: 0.01,
            seed: 1,
        })
        .unwrap()
        .sets
    }

    fn small_config(steps: u64) -> TrainConfig {
        TrainConfig {
            dim: 8,
            max_tokens: 8,
            heads: 2,
            batch_size: 4,
            steps,
            seed: 5,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut c = small_config(17);
        c.tau_end = Some(0.1);
        c.tau_anneal_steps = 9;
        c.learning_rate = 3.0e-4;
        let mut back = TrainConfig::default();
        back.apply_kv_text(&c.to_kv_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation_names_the_field() {
        let c = TrainConfig { p: 1.5, ..TrainConfig::default() };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("p:"), "{msg}");
        let c = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("batch_size"));
        let mut c = TrainConfig::default();
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("tau", "abc").unwrap_err().to_string().contains("tau"));
    }

    #[test]
    fn tau_anneals_geometrically() {
        let c = TrainConfig {
            tau: 1.0,
            tau_end: Some(0.25),
            tau_anneal_steps: 10,
            ..TrainConfig::default()
        };
        assert_eq!(c.tau_at(0), 1.0);
        assert!((c.tau_at(5) - 0.5).abs() < 1e-12);
        assert!((c.tau_at(10) - 0.25).abs() < 1e-12);
        assert!((c.tau_at(100) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_keep_initialization() {
        let data = corpus(4);
        let (ckpt, log) = train(small_config(0), &data, |_| {}).unwrap();
        assert!(log.is_empty());
        let fresh = Trainer::new(small_config(0), &data).unwrap().checkpoint();
        assert_eq!(ckpt, fresh);
        assert_eq!(ckpt.step, 0);
    }

    #[test]
    fn identical_runs_produce_identical_logs() {
        let data = corpus(6);
        let (a, la) = train(small_config(5), &data, |_| {}).unwrap();
        let (b, lb) = train(small_config(5), &data, |_| {}).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(la.len(), 5);
        assert_eq!(la[0].step, 1);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = corpus(6);
        let (full, full_log) = train(small_config(8), &data, |_| {}).unwrap();
        let (half, _) = train(small_config(4), &data, |_| {}).unwrap();
        let mut resumed = Trainer::from_checkpoint(&half, Some(small_config(8)), &data).unwrap();
        let tail = resumed.run(|_| {}).unwrap();
        assert_eq!(tail, full_log[4..]);
        assert_eq!(resumed.checkpoint(), full);
    }

    #[test]
    fn resume_rejects_changed_config() {
        let data = corpus(4);
        let (ckpt, _) = train(small_config(1), &data, |_| {}).unwrap();
        let changed = TrainConfig { p: 0.3, ..small_config(2) };
        assert!(Trainer::<f32>::from_checkpoint(&ckpt, Some(changed), &data).is_err());
    }

    #[test]
    fn epoch_permutation_covers_every_record() {
        let data = corpus(5);
        let mut t = Trainer::new(small_config(1), &data).unwrap();
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..5).map(|j| t.record_for(epoch * 5 + j)).collect();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn inconsistent_width_is_a_data_error() {
        let mut data = corpus(2);
        data.push(FeatureSet::new("wide", Tensor::zeros(&[6, 4]), None).unwrap());
        assert!(matches!(Trainer::new(small_config(1), &data), Err(Error::Data { .. })));
    }

    #[test]
    fn metrics_csv_has_header_and_rows() {
        let m = StepMetrics {
            step: 1,
            reconstruction: 0.5,
            l_pr: 0.25,
            clamped_reg: 0.5,
            total: 1.0,
            tau: 1.0,
        };
        assert_eq!(metrics_csv(&[m]), format!("{METRICS_HEADER}\n1,0.5,0.25,0.5,1\n"));
        assert_eq!(metrics_csv(&[]), format!("{METRICS_HEADER}\n"));
    }
}
