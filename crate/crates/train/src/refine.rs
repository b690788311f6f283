use refinegan_core::pbn::build_batch_plan;
use refinegan_nets::{Checkpoint, NetConfig, NetKind, Network};

use crate::cgan::{batch_tensors, finite, REFINEMENT};
use crate::config::RunConfig;
use crate::data::PatientSlices;
use crate::error::Result;
use crate::optim::Optimizer;
use crate::steps::refinement_pass;
use crate::trace::RefineRecord;

#[derive(Debug)]
pub struct RefineRun {
    pub refinement: Network<f32>,
    pub trace: Vec<RefineRecord>,
    pub checkpoint: Checkpoint,
}

pub fn refine_checkpoint(seed: u64, r: &Network<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new(seed);
    ck.insert(REFINEMENT, r);
    ck
}

/// Trains the refinement network on the error masks of `generator`, which
/// is only ever evaluated.
pub fn train_refinement(
    generator: &mut Network<f32>,
    patients: &[PatientSlices],
    net_cfg: &NetConfig,
    run: &RunConfig,
    mut on_epoch: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<RefineRun> {
    run.validate()?;
    if patients.is_empty() {
        return Err(refinegan_core::CoreError::EmptyDataset.into());
    }
    let mut r = Network::<f32>::build(NetKind::Refinement, net_cfg)?;
    let mut opt = Optimizer::new(run.refinement_opt)?;
    let entries: Vec<_> = patients.iter().map(PatientSlices::plan_entry).collect();
    let plan = build_batch_plan(&entries, run.images_per_batch)?;
    let mut trace = Vec::new();
    let mut step = 0;
    if run.refine_epochs == 0 {
        on_epoch(0, &refine_checkpoint(run.seed, &r))?;
    }
    'epochs: for epoch in 0..run.refine_epochs {
        let order = plan.shuffle_patients(run.seed.wrapping_add(epoch as u64));
        for batch in &order.batches {
            if run.refine_max_steps > 0 && step >= run.refine_max_steps {
                on_epoch(epoch, &refine_checkpoint(run.seed, &r))?;
                break 'epochs;
            }
            let (x, y) = batch_tensors(patients, &batch.patient_id, batch.start, batch.end)?;
            let bce = finite(step, "bce", refinement_pass(generator, &mut r, &x, &y)?)?;
            opt.step(&mut r)?;
            trace.push(RefineRecord { step, epoch, bce });
            step += 1;
        }
        on_epoch(epoch, &refine_checkpoint(run.seed, &r))?;
    }
    let checkpoint = refine_checkpoint(run.seed, &r);
    Ok(RefineRun { refinement: r, trace, checkpoint })
}
