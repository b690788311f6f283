use std::io::Write;

pub const LOSS_CSV_HEADER: &str = "step,epoch,d_loss,g_adv,l1,total";
pub const REFINE_CSV_HEADER: &str = "step,epoch,bce";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub l1: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineRecord {
    pub step: usize,
    pub epoch: usize,
    pub bce: f64,
}

pub fn write_loss_csv<W: Write>(mut w: W, records: &[LossRecord]) -> std::io::Result<()> {
    writeln!(w, "{LOSS_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{},{},{}", r.step, r.epoch, r.d_loss, r.g_adv, r.l1, r.total)?;
    }
    Ok(())
}

pub fn write_refine_csv<W: Write>(mut w: W, records: &[RefineRecord]) -> std::io::Result<()> {
    writeln!(w, "{REFINE_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{}", r.step, r.epoch, r.bce)?;
    }
    Ok(())
}
