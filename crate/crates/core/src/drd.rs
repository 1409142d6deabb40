//! Denoising representation distillation: a student encoder learns to map
//! noisy speech onto a frozen teacher's features of the dry target.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::encoder::{EncoderMeta, PhoneticEncoder, PhoneticRepresentation, ToyEncoder};
use crate::error::{Error, Result};
use crate::mixture::PairSource;
use crate::nn;
use crate::optim::{clip_grad_norm, AdamW, OptimConfig};

/// Mean squared difference over every frame and dimension.
pub fn drd_loss(student: &PhoneticRepresentation, teacher: &PhoneticRepresentation) -> Result<f64> {
    if student.frames() != teacher.frames() || student.dim() != teacher.dim() {
        return Err(Error::Shape(format!(
            "student {}x{} vs teacher {}x{}",
            student.frames(),
            student.dim(),
            teacher.frames(),
            teacher.dim()
        )));
    }
    let n = student.values().len() as f64;
    Ok(student
        .values()
        .iter()
        .zip(teacher.values())
        .map(|(s, t)| (s - t) * (s - t))
        .sum::<f64>()
        / n)
}

pub struct DrdState {
    pub teacher: ToyEncoder,
    pub student: ToyEncoder,
    pub step: usize,
    pub loss_history: Vec<f64>,
    optim: OptimConfig,
    opt: AdamW,
    teacher_checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DrdMeta {
    #[serde(flatten)]
    encoder: EncoderMeta,
    teacher_checksum: String,
    loss_history: Vec<f64>,
    optim: OptimConfig,
}

impl DrdState {
    pub fn new(teacher: ToyEncoder, student: ToyEncoder, optim: OptimConfig) -> Result<Self> {
        if teacher.dim() != student.dim() {
            return Err(Error::Config(format!(
                "teacher dim {} differs from student dim {}",
                teacher.dim(),
                student.dim()
            )));
        }
        optim.validate()?;
        let opt = AdamW::new(student.params(), &optim)?;
        let teacher_checksum = teacher.checksum()?;
        Ok(Self {
            teacher,
            student,
            step: 0,
            loss_history: Vec::new(),
            optim,
            opt,
            teacher_checksum,
        })
    }

    /// Teacher and student both start from the same pretrained weights.
    pub fn from_pretrained(pretrained: ToyEncoder, optim: OptimConfig) -> Result<Self> {
        let student = pretrained.duplicate()?;
        Self::new(pretrained, student, optim)
    }

    pub fn teacher_checksum(&self) -> &str {
        &self.teacher_checksum
    }

    pub fn optim(&self) -> &OptimConfig {
        &self.optim
    }

    /// Student weights, optimizer moments and history, for resuming.
    pub fn to_checkpoint(&self, fingerprint: &str) -> Result<Checkpoint> {
        let enc = self.student.to_checkpoint(self.step, fingerprint)?;
        let meta = DrdMeta {
            encoder: enc.meta_as()?,
            teacher_checksum: self.teacher_checksum.clone(),
            loss_history: self.loss_history.clone(),
            optim: self.optim.clone(),
        };
        let mut tensors: Vec<_> = enc
            .tensors
            .into_iter()
            .map(|(k, t)| (format!("param/{k}"), t))
            .collect();
        tensors.extend(self.opt.state().into_iter().map(|(k, t)| (format!("opt/{k}"), t)));
        Ok(Checkpoint::new(CheckpointKind::TrainingState, self.step, fingerprint)
            .with_meta(&meta)?
            .with_tensors(tensors))
    }

    /// Rebuilds a state saved by [`DrdState::to_checkpoint`]; `teacher`
    /// must be the same frozen model.
    pub fn from_checkpoint(ck: &Checkpoint, teacher: ToyEncoder) -> Result<Self> {
        if ck.kind != CheckpointKind::TrainingState {
            return Err(Error::Data(format!("{:?} checkpoint is not a training state", ck.kind)));
        }
        let meta: DrdMeta = ck.meta_as()?;
        let found = teacher.checksum()?;
        if found != meta.teacher_checksum {
            return Err(Error::Fingerprint {
                expected: meta.teacher_checksum,
                found,
            });
        }
        let student = ToyEncoder::from_checkpoint(ck)?;
        let mut state = Self::new(teacher, student, meta.optim)?;
        state.opt.load_state(&ck.tensors_with_prefix("opt/"), ck.step)?;
        state.step = ck.step;
        state.loss_history = meta.loss_history;
        Ok(state)
    }
}

/// Runs `steps` more optimisation steps. Step `s` draws pairs
/// `s * batch .. (s + 1) * batch` from `source`; the learning rate follows
/// the schedule over `optim.steps`.
pub fn drd_finetune(mut state: DrdState, source: &dyn PairSource, steps: usize) -> Result<DrdState> {
    let batch = state.optim.batch;
    let vars = state.student.params().vars();
    for _ in 0..steps {
        let s = state.step;
        let pairs = (0..batch)
            .map(|b| source.pair((s * batch + b) as u64))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<&Waveform> = pairs.iter().map(|p| &p.target).collect();
        let noisy: Vec<&Waveform> = pairs.iter().map(|p| &p.noisy).collect();

        let teacher_out = state.teacher.forward_waves(&targets)?.detach();
        let student_out = state.student.forward_waves(&noisy)?;
        let loss = (student_out - teacher_out)?.sqr()?.mean_all()?;
        let value = nn::scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step: s,
                seed: pairs[0].seed,
                detail: "distillation loss".into(),
            });
        }
        let mut grads = loss.backward()?;
        clip_grad_norm(&mut grads, &vars, state.optim.clip_norm)?;
        let lr = if s < state.optim.steps { state.optim.lr_at(s)? } else { state.optim.final_lr };
        state.opt.step(&grads, lr)?;
        state.loss_history.push(value);
        state.step += 1;
        if s % 50 == 0 {
            log::debug!("drd step {s} loss {value:.5} lr {lr:.2e}");
        }
    }
    let now = state.teacher.checksum()?;
    if now != state.teacher_checksum {
        return Err(Error::Fingerprint {
            expected: state.teacher_checksum.clone(),
            found: now,
        });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(values: Vec<f64>, frames: usize, dim: usize) -> PhoneticRepresentation {
        PhoneticRepresentation::new(values, frames, dim, 50.0).unwrap()
    }

    #[test]
    fn loss_identities() {
        let a = rep(vec![0.3, -1.0, 2.0, 4.0, 0.0, 1.0], 2, 3);
        assert_eq!(drd_loss(&a, &a).unwrap(), 0.0);
        let z = rep(vec![0.0; 12], 3, 4);
        let o = rep(vec![1.0; 12], 3, 4);
        assert_eq!(drd_loss(&o, &z).unwrap(), 1.0);
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let a = rep(vec![0.0; 6], 2, 3);
        let b = rep(vec![0.0; 6], 3, 2);
        assert!(drd_loss(&a, &b).is_err());
    }
}
