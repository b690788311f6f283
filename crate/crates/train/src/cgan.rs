use refinegan_core::pbn::build_batch_plan;
use refinegan_nets::{Checkpoint, NetConfig, NetKind, Network, Tensor};

use crate::config::RunConfig;
use crate::data::{normalize_input, PatientSlices};
use crate::error::{Result, TrainError};
use crate::optim::Optimizer;
use crate::steps::{discriminator_pass, generator_pass};
use crate::trace::LossRecord;

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";
pub const REFINEMENT: &str = "refinement";

/// Networks and trace of a finished adversarial run.
#[derive(Debug)]
pub struct CganRun {
    pub generator: Network<f32>,
    pub discriminator: Network<f32>,
    pub trace: Vec<LossRecord>,
    pub checkpoint: Checkpoint,
}

pub(crate) fn finite(step: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::Divergence { step, what: what.to_string() })
    }
}

/// Normalized image and truth slices of one planned batch.
pub(crate) fn batch_tensors(
    patients: &[PatientSlices],
    patient_id: &str,
    start: usize,
    end: usize,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let p = patients
        .iter()
        .find(|p| p.patient_id == patient_id)
        .ok_or_else(|| TrainError::Data(format!("planned patient {patient_id} missing")))?;
    let x = normalize_input(&p.image.slice_batch(start, end), None)?;
    Ok((x, p.truth.slice_batch(start, end)))
}

pub fn cgan_checkpoint(seed: u64, g: &Network<f32>, d: &Network<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new(seed);
    ck.insert(GENERATOR, g);
    ck.insert(DISCRIMINATOR, d);
    ck
}

/// Alternating adversarial training: per batch `d_steps` discriminator
/// updates, then one generator update. `on_epoch` receives the checkpoint
/// after every epoch (and once for the untrained networks when `epochs` is 0).
pub fn train_cgan(
    patients: &[PatientSlices],
    net_cfg: &NetConfig,
    run: &RunConfig,
    mut on_epoch: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<CganRun> {
    run.validate()?;
    if patients.is_empty() {
        return Err(refinegan_core::CoreError::EmptyDataset.into());
    }
    let mut g = Network::<f32>::build(NetKind::Generator, net_cfg)?;
    let mut d = Network::<f32>::build(NetKind::Discriminator, net_cfg)?;
    let mut g_opt = Optimizer::new(run.generator_opt)?;
    let mut d_opt = Optimizer::new(run.discriminator_opt)?;
    let entries: Vec<_> = patients.iter().map(PatientSlices::plan_entry).collect();
    let plan = build_batch_plan(&entries, run.images_per_batch)?;
    let mut trace = Vec::new();
    let mut step = 0;
    if run.epochs == 0 {
        on_epoch(0, &cgan_checkpoint(run.seed, &g, &d))?;
    }
    'epochs: for epoch in 0..run.epochs {
        let order = plan.shuffle_patients(run.seed.wrapping_add(epoch as u64));
        for batch in &order.batches {
            if run.max_steps > 0 && step >= run.max_steps {
                on_epoch(epoch, &cgan_checkpoint(run.seed, &g, &d))?;
                break 'epochs;
            }
            let (x, y) = batch_tensors(patients, &batch.patient_id, batch.start, batch.end)?;
            if net_cfg.noise_input {
                g.set_noise_seed(run.seed.wrapping_add(step as u64));
            }
            let mut dl = 0.0;
            for _ in 0..run.d_steps {
                dl = finite(step, "d_loss", discriminator_pass(&mut g, &mut d, &x, &y)?)?;
                d_opt.step(&mut d)?;
            }
            let gl = generator_pass(&mut g, &mut d, &x, &y, &run.weights)?;
            finite(step, "g_adv", gl.adv)?;
            finite(step, "l1", gl.l1)?;
            finite(step, "total", gl.total)?;
            g_opt.step(&mut g)?;
            trace.push(LossRecord { step, epoch, d_loss: dl, g_adv: gl.adv, l1: gl.l1, total: gl.total });
            step += 1;
        }
        on_epoch(epoch, &cgan_checkpoint(run.seed, &g, &d))?;
    }
    let checkpoint = cgan_checkpoint(run.seed, &g, &d);
    Ok(CganRun { generator: g, discriminator: d, trace, checkpoint })
}
