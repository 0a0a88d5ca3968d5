use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::config::{lr_schedule, LossKind, TrainConfig};
use super::data::{sample_batch, Dataset, Sampling};
use super::log::{LogRecord, TrainLog};
use crate::error::{Error, Result};
use crate::imaging::{psnr, EvalProtocol};
use crate::net::{save_checkpoint, Checkpoint, DbpnNetwork};
use crate::tensor::{seeded_rng, Adam, AdamConfig, Graph, Tensor};

/// Network, optimizer and progress of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    net: DbpnNetwork<f32>,
    adam: Adam<f32>,
    iteration: u64,
    log: TrainLog,
}

impl Trainer {
    /// Fresh network initialized from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = DbpnNetwork::build(&config.network, config.seed)?;
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            net.params(),
        );
        Ok(Trainer {
            config,
            net,
            adam,
            iteration: 0,
            log: TrainLog::default(),
        })
    }

    /// Continue from a checkpoint. The checkpoint's network must match
    /// `config.network`; missing optimizer state starts from zero.
    pub fn resume(config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ck.network.config() != &config.network {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?} x{}, but the run is configured for {:?} x{}",
                ck.network.config().name,
                ck.network.config().scale,
                config.network.name,
                config.network.scale
            )));
        }
        let adam = match ck.optimizer {
            Some(a) => a,
            None => Adam::new(AdamConfig::default(), ck.network.params()),
        };
        Ok(Trainer {
            config,
            net: ck.network,
            adam,
            iteration: ck.iteration,
            log: TrainLog::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn network(&self) -> &DbpnNetwork<f32> {
        &self.net
    }

    pub fn optimizer(&self) -> &Adam<f32> {
        &self.adam
    }

    /// Updates completed so far.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn into_network(self) -> DbpnNetwork<f32> {
        self.net
    }

    /// Random stream for update `iteration`, independent of how the run was
    /// split into resumed segments.
    pub fn batch_rng(&self, iteration: u64) -> ChaCha8Rng {
        let mut rng = seeded_rng(self.config.seed);
        rng.set_stream(iteration + 1);
        rng
    }

    fn sampling(&self) -> Sampling {
        Sampling {
            batch_size: self.config.batch_size,
            patch_size: self.config.patch_size,
            augment: self.config.augment,
            scale_jitter: self.config.scale_jitter,
        }
    }

    /// Loss of the current network on a batch, without updating anything.
    pub fn loss_on(&self, lr: &Tensor<f32>, hr: &Tensor<f32>) -> Result<f64> {
        let y = self.net.infer(lr)?;
        let n = y.len() as f64;
        if y.shape() != hr.shape() {
            return Err(Error::Dimension(format!(
                "prediction {:?} vs target {:?}",
                y.shape(),
                hr.shape()
            )));
        }
        let total: f64 = y
            .data()
            .iter()
            .zip(hr.data())
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                match self.config.loss {
                    LossKind::L1 => d.abs(),
                    LossKind::Mse => d * d,
                }
            })
            .sum();
        Ok(total / n)
    }

    /// One Adam update on the given batch with the scheduled learning rate.
    /// Returns the batch loss before the update. A non-finite loss aborts
    /// without touching the parameters.
    pub fn step_on(&mut self, lr: Tensor<f32>, hr: Tensor<f32>) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(lr);
        let target = g.constant(hr);
        let y = self.net.forward_graph(&mut g, x)?;
        let loss = match self.config.loss {
            LossKind::L1 => g.l1_loss(y, target)?,
            LossKind::Mse => g.mse_loss(y, target)?,
        };
        let value = g.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                value,
            });
        }
        self.net.params_mut().zero_grad();
        g.backward_into(loss, self.net.params_mut())?;
        self.adam.set_lr(lr_schedule(self.iteration, &self.config));
        self.adam.step(self.net.params_mut())?;
        self.iteration += 1;
        Ok(value)
    }

    /// Draw this iteration's batch from `ds` and update.
    pub fn step(&mut self, ds: &Dataset) -> Result<f64> {
        let mut rng = self.batch_rng(self.iteration);
        let (lr, hr) = sample_batch(ds, &self.sampling(), &mut rng)?;
        self.step_on(lr, hr)
    }

    /// Mean Y PSNR (border crop `scale`) of the network over whole images.
    pub fn validate(&self, ds: &Dataset) -> Result<f64> {
        mean_psnr(&self.net, ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(
            path,
            &self.net,
            self.iteration,
            Some(&self.adam),
            &self.config.to_kv(),
        )
    }

    /// Train until `config.iterations` updates are done, logging every
    /// `log_interval` updates (with validation PSNR when `validation` is
    /// given) and checkpointing every `checkpoint_interval` updates and at
    /// the end when a checkpoint path is configured. `observe` sees every
    /// log record as it is produced.
    pub fn run(
        &mut self,
        ds: &Dataset,
        validation: Option<&Dataset>,
        mut observe: impl FnMut(&LogRecord),
    ) -> Result<()> {
        if ds.scale() != self.config.scale() || ds.color() != self.config.network.color {
            return Err(Error::Dataset(format!(
                "dataset is x{} {:?}, network is x{} {:?}",
                ds.scale(),
                ds.color(),
                self.config.scale(),
                self.config.network.color
            )));
        }
        let (mut sum, mut count) = (0.0, 0u64);
        while self.iteration < self.config.iterations {
            let lr = lr_schedule(self.iteration, &self.config);
            sum += self.step(ds)?;
            count += 1;
            let done = self.iteration == self.config.iterations;
            if self.iteration.is_multiple_of(self.config.log_interval) || done {
                let val_psnr = validation.map(|v| self.validate(v)).transpose()?;
                let record = LogRecord {
                    iteration: self.iteration,
                    lr,
                    loss: sum / count as f64,
                    val_psnr,
                };
                self.log.push(record);
                observe(&record);
                (sum, count) = (0.0, 0);
            }
            if let Some(path) = &self.config.checkpoint {
                let interval = self.config.checkpoint_interval;
                if done || (interval > 0 && self.iteration.is_multiple_of(interval)) {
                    self.save(path)?;
                }
            }
        }
        Ok(())
    }
}

/// Mean PSNR of `net` over the pairs of `ds` under the standard protocol.
pub fn mean_psnr(net: &DbpnNetwork<f32>, ds: &Dataset) -> Result<f64> {
    let proto = EvalProtocol::for_scale(ds.scale());
    let mut total = 0.0;
    for pair in ds.pairs() {
        let sr = net.upscale_image(&pair.lr)?;
        total += psnr(&sr, &pair.hr, &proto)?;
    }
    Ok(total / ds.len() as f64)
}

/// Build a trainer for `config` and run it to completion on `ds`.
pub fn train(config: TrainConfig, ds: &Dataset, validation: Option<&Dataset>) -> Result<Trainer> {
    let mut t = Trainer::new(config)?;
    t.run(ds, validation, |_| {})?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{ColorSpace, ImagePlane};
    use crate::net::{load_checkpoint, NetworkConfig, RecurrentMode};
    use crate::projection::{PreluMode, ScalePreset};

    fn tiny_net() -> NetworkConfig {
        NetworkConfig {
            name: "tiny".into(),
            scale: 2,
            n0: 4,
            n_r: 3,
            stages: 2,
            color: ColorSpace::Y,
            dense: false,
            error_feedback: true,
            recurrent: RecurrentMode::None,
            iterations: 1,
            residual: false,
            prelu: PreluMode::Shared,
            projection: ScalePreset::for_scale(2).unwrap(),
            recon_kernel: 1,
        }
    }

    fn dataset() -> Dataset {
        let img = ImagePlane::from_fn(32, 32, ColorSpace::Y, |_, y, x| {
            0.5 + 0.4 * ((y as f64 * 0.4).sin() * (x as f64 * 0.3).cos())
        });
        Dataset::from_hr_images(vec![img], 2, ColorSpace::Y).unwrap()
    }

    fn config(iterations: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            patch_size: 6,
            iterations,
            lr: 1e-3,
            decay_interval: 0,
            log_interval: 5,
            seed: 3,
            ..TrainConfig::new(tiny_net())
        }
    }

    fn values(net: &DbpnNetwork<f32>) -> Vec<u32> {
        let p = net.params();
        p.ids()
            .flat_map(|id| {
                p.value(id)
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let ds = dataset();
        let mut t = Trainer::new(config(60)).unwrap();
        let (lr, hr) = sample_batch::<f32, _>(&ds, &t.sampling(), &mut seeded_rng(1)).unwrap();
        let before = t.loss_on(&lr, &hr).unwrap();
        for _ in 0..60 {
            t.step_on(lr.clone(), hr.clone()).unwrap();
        }
        assert!(t.loss_on(&lr, &hr).unwrap() < 0.5 * before);
        assert_eq!(t.iteration(), 60);
    }

    #[test]
    fn runs_are_deterministic() {
        let ds = dataset();
        let a = train(config(12), &ds, None).unwrap();
        let b = train(config(12), &ds, None).unwrap();
        assert_eq!(values(a.network()), values(b.network()));
        assert_eq!(a.log(), b.log());
        assert_eq!(a.log().records.len(), 3);
    }

    #[test]
    fn resume_is_bit_exact() {
        let ds = dataset();
        let dir = std::env::temp_dir().join(format!("dbpn-train-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("half.ckpt");
        let full = train(config(10), &ds, None).unwrap();

        let first = TrainConfig {
            checkpoint: Some(path.clone()),
            ..config(5)
        };
        train(first, &ds, None).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.iteration, 5);
        assert_eq!(TrainConfig::parse_pairs(&ck.metadata).unwrap().len(), 10);
        let mut resumed = Trainer::resume(config(10), ck).unwrap();
        resumed.run(&ds, None, |_| {}).unwrap();
        assert_eq!(values(resumed.network()), values(full.network()));
        assert_eq!(resumed.optimizer(), full.optimizer());
    }

    #[test]
    fn validation_is_logged() {
        let ds = dataset();
        let t = train(config(5), &ds, Some(&ds)).unwrap();
        let r = t.log().last().unwrap();
        assert_eq!(r.iteration, 5);
        assert!(r.val_psnr.unwrap().is_finite());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut t = Trainer::new(config(1)).unwrap();
        let lr = Tensor::full([1, 1, 4, 4], f32::NAN);
        let hr = Tensor::zeros([1, 1, 8, 8]);
        let before = values(t.network());
        assert!(matches!(
            t.step_on(lr, hr),
            Err(Error::NonFinite { iteration: 0, .. })
        ));
        assert_eq!(values(t.network()), before);
    }

    #[test]
    fn mismatched_resume_is_rejected() {
        let t = Trainer::new(config(1)).unwrap();
        let ck = Checkpoint {
            network: t.network().clone(),
            iteration: 0,
            optimizer: None,
            metadata: String::new(),
        };
        let mut other = config(1);
        other.network.n_r = 4;
        assert!(matches!(
            Trainer::resume(other, ck),
            Err(Error::Checkpoint(_))
        ));
    }
}
