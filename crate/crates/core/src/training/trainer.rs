use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fields::{AmbientField, Model};
use crate::image::Image;
use crate::nn::{Adam, Checkpoint, StepOutcome, TensorData};
use crate::preconv::{load_or_build_levels, BlurLevel};
use crate::renderer::{render_image, EnvView, ObjectMode, ObjectView, Placement};
use crate::scenes::{Dataset, Frame, Split};
use crate::training::config::TrainConfig;
use crate::training::data::{Provenance, TrainBatch, TrainData};
use crate::training::metrics::{format_psnr, psnr, ssim};
use crate::training::pipeline::{BatchLoss, Pipeline};

const META: &str = "meta";
const JITTER_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Training state stored next to the parameters of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub train: TrainConfig,
}

pub fn save_checkpoint(path: &Path, model: &Model, adam: Option<&Adam>, meta: &CheckpointMeta) -> Result<()> {
    let mut ck = Checkpoint::new();
    let text = serde_json::to_vec(meta)?;
    ck.push(META, vec![text.len() as u64], TensorData::U8(text))?;
    ck.put_params(&model.store, adam)?;
    ck.save(path)
}

/// Model, optimizer state (if stored) and metadata of a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<Adam>, CheckpointMeta)> {
    let ck = Checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_slice(ck.bytes(META)?)
        .map_err(|e| Error::Checkpoint(format!("{}: bad metadata: {e}", path.display())))?;
    let mut model = Model::new(meta.train.model.clone())?;
    let adam = if ck.get("adam.counters").is_some() {
        let mut a = Adam::new(model.store.len(), meta.train.adam);
        ck.get_params(&mut model.store, Some(&mut a))?;
        Some(a)
    } else {
        ck.get_params(&mut model.store, None)?;
        None
    };
    Ok((model, adam, meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Iteration count after the step.
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub parts: BatchLoss,
    pub image_rays: usize,
    pub background_rays: usize,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub iteration: u64,
    pub split: Split,
    pub views: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub iteration: u64,
    pub data: TrainData,
    test: Vec<Frame>,
    /// Where a batch with a non-finite loss is written.
    pub dump_dir: Option<PathBuf>,
}

impl Trainer {
    /// Fresh model; blur levels come from (or go to) the scene's cache.
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let (levels, cached) = load_or_build_levels(dataset, &config.sigmas, config.write_preconv_cache)?;
        if cached {
            log::info!("using cached pre-convolved backgrounds");
        }
        Self::with_levels(config, dataset, levels)
    }

    pub fn with_levels(config: TrainConfig, dataset: &Dataset, levels: Vec<Vec<BlurLevel>>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone())?;
        let adam = Adam::new(model.store.len(), config.adam);
        Ok(Trainer {
            data: TrainData::new(dataset, levels)?,
            test: dataset.split(Split::Test).map(|(_, f)| f.clone()).collect(),
            config,
            model,
            adam,
            iteration: 0,
            dump_dir: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::save`], with the
    /// configuration stored in it.
    pub fn resume(path: &Path, dataset: &Dataset) -> Result<Self> {
        let (model, adam, meta) = load_checkpoint(path)?;
        let adam = adam.ok_or_else(|| Error::Checkpoint(format!("{} holds no optimizer state", path.display())))?;
        let mut t = Trainer::new(meta.train, dataset)?;
        t.model = model;
        t.adam = adam;
        t.iteration = meta.iteration;
        Ok(t)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            iteration: self.iteration,
            train: self.config.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.model, Some(&self.adam), &self.meta())
    }

    pub fn batch(&self) -> Result<TrainBatch> {
        let c = &self.config;
        self.data
            .sample_batch(c.seed, self.iteration, c.batch_size, c.image_fraction)
    }

    fn run_pipeline<A: AmbientField>(
        &self,
        coarse: &A,
        fine: &A,
        batch: &TrainBatch,
        grad: bool,
    ) -> Result<(BatchLoss, Option<Vec<f64>>)> {
        let c = &self.config;
        let p = Pipeline {
            coarse,
            fine,
            material: &self.model.material,
            params: self.model.params(),
            gamma_index: self.model.gamma_index(),
            settings: &c.render,
            weights: c.weights,
            jitter_seed: Some(c.seed ^ JITTER_SALT),
        };
        p.run(
            &self.data,
            batch,
            c.chunks,
            c.sub_batch,
            self.iteration * c.batch_size as u64,
            grad,
        )
    }

    /// Loss (and gradient) of `batch` at the current parameters and iteration.
    pub fn loss_and_grad(&self, batch: &TrainBatch, grad: bool) -> Result<(BatchLoss, Option<Vec<f64>>)> {
        match &self.config.ambient {
            Some(a) => self.run_pipeline(a, a, batch, grad),
            None => self.run_pipeline(&self.model.coarse, &self.model.fine, batch, grad),
        }
    }

    /// One optimisation step on the batch of the current iteration.
    pub fn step(&mut self) -> Result<StepStats> {
        let batch = self.batch()?;
        let (parts, grads) = self.loss_and_grad(&batch, true)?;
        let loss = parts.total(&self.config.weights);
        if !loss.is_finite() {
            self.dump(&batch, &parts)?;
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} at iteration {}",
                self.iteration
            )));
        }
        let lr = self.config.lr_at(self.iteration);
        let grads = grads.expect("gradient requested");
        let outcome = self.adam.step(self.model.store.values_mut(), &grads, lr)?;
        if outcome == StepOutcome::Skipped {
            log::warn!("iteration {}: non-finite gradient, update skipped", self.iteration);
        }
        self.iteration += 1;
        Ok(StepStats {
            iteration: self.iteration,
            lr,
            loss,
            parts,
            image_rays: batch.count(Provenance::Image),
            background_rays: batch.count(Provenance::Background),
            skipped: outcome == StepOutcome::Skipped,
        })
    }

    fn dump(&self, batch: &TrainBatch, parts: &BatchLoss) -> Result<()> {
        let Some(dir) = &self.dump_dir else {
            return Ok(());
        };
        let path = dir.join(format!("nonfinite_{:07}.json", self.iteration));
        let body = json!({ "iteration": self.iteration, "loss": parts, "batch": batch });
        std::fs::write(&path, serde_json::to_vec_pretty(&body)?).map_err(|e| Error::io(&path, e))?;
        log::error!("offending batch written to {}", path.display());
        Ok(())
    }

    fn render_with<A: AmbientField>(&self, coarse: &A, fine: &A, frame: &Frame) -> Result<Image> {
        let params = self.model.params();
        let gamma = self.model.gamma();
        let object = ObjectView {
            geometry: frame,
            placement: Placement::default(),
            materials: &self.model.material,
            params,
            material_scale: (1.0, 1.0, 1.0),
            gamma,
        };
        let env = EnvView {
            coarse,
            fine,
            params,
            gamma,
        };
        render_image(
            &frame.camera,
            Some(&object),
            &env,
            &self.config.render,
            ObjectMode::Plain,
            None,
        )
    }

    /// Deterministic render of a frame with the frame's own geometry.
    pub fn render(&self, frame: &Frame) -> Result<Image> {
        match &self.config.ambient {
            Some(a) => self.render_with(a, a, frame),
            None => self.render_with(&self.model.coarse, &self.model.fine, frame),
        }
    }

    /// Mean PSNR and SSIM over (up to `eval_views`) held-out views.
    pub fn evaluate(&self) -> Result<Option<EvalResult>> {
        let n = match self.config.eval_views {
            0 => self.test.len(),
            k => k.min(self.test.len()),
        };
        if n == 0 {
            return Ok(None);
        }
        let (mut p, mut s) = (0.0, 0.0);
        for f in &self.test[..n] {
            let img = self.render(f)?;
            p += psnr(&img, &f.image)?;
            s += ssim(&img, &f.image)?;
        }
        Ok(Some(EvalResult {
            iteration: self.iteration,
            split: Split::Test,
            views: n,
            psnr: p / n as f64,
            ssim: s / n as f64,
        }))
    }

    /// Trains until `stop_at` (default: the configured iteration count),
    /// writing `metrics.jsonl` and checkpoints into `out`. A fresh run first
    /// stores the initial checkpoint.
    pub fn run(&mut self, out: &Path, stop_at: Option<u64>) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        self.dump_dir = Some(out.to_path_buf());
        let log_path = out.join("metrics.jsonl");
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        if self.iteration == 0 {
            self.save_numbered(out)?;
        }
        let end = stop_at.unwrap_or(self.config.iterations).min(self.config.iterations);
        while self.iteration < end {
            let st = self.step()?;
            let parts = st.parts.parts();
            let line = json!({
                "iteration": st.iteration,
                "split": "train",
                "loss": st.loss,
                "rec": parts.rec,
                "smooth": parts.smooth,
                "pre": parts.pre,
                "lr": st.lr,
                "skipped": st.skipped,
            });
            write_line(&mut log, &log_path, &line)?;
            let last = self.iteration == self.config.iterations;
            if last || self.iteration == end || self.iteration.is_multiple_of(self.config.checkpoint_every.max(1)) {
                self.save_numbered(out)?;
            }
            let ev = self.config.eval_every;
            if ev > 0 && (last || self.iteration.is_multiple_of(ev)) {
                if let Some(r) = self.evaluate()? {
                    log::info!(
                        "iteration {}: test PSNR {} SSIM {:.4}",
                        r.iteration,
                        format_psnr(r.psnr),
                        r.ssim
                    );
                    let psnr_v = if r.psnr.is_finite() {
                        json!(r.psnr)
                    } else {
                        json!(format_psnr(r.psnr))
                    };
                    let line = json!({
                        "iteration": r.iteration,
                        "split": r.split,
                        "views": r.views,
                        "psnr": psnr_v,
                        "ssim": r.ssim,
                    });
                    write_line(&mut log, &log_path, &line)?;
                }
            }
        }
        Ok(())
    }

    fn save_numbered(&self, out: &Path) -> Result<()> {
        let path = out.join(format!("ckpt_{:07}.neai", self.iteration));
        self.save(&path)?;
        let latest = out.join("latest.neai");
        std::fs::copy(&path, &latest).map_err(|e| Error::io(&latest, e))?;
        Ok(())
    }
}

fn write_line(f: &mut File, path: &Path, v: &serde_json::Value) -> Result<()> {
    writeln!(f, "{v}").map_err(|e| Error::io(path, e))
}
