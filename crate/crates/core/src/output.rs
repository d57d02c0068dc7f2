//! CSV serialization. Floats are written with 17 significant digits so they
//! round-trip exactly; every file ends with a newline.

use std::io::Write;

use crate::error::Result;
use crate::fd::FdReport;
use crate::model::{ThetaIndex, N_THETA};
use crate::simulator::Trajectory;
use crate::sweep::{PerturbRow, SweepRecord};

/// Round-trip representation of a double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trajectory_csv<W: Write + ?Sized>(w: &mut W, traj: &Trajectory) -> Result<()> {
    writeln!(w, "t,mode,x1,x2,x3,psa,z1,z2")?;
    for s in &traj.samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(s.t),
            s.mode.label(),
            fmt_f64(s.x1),
            fmt_f64(s.x2),
            fmt_f64(s.x3),
            fmt_f64(s.psa()),
            fmt_f64(s.z1),
            fmt_f64(s.z2)
        )?;
    }
    Ok(())
}

pub fn write_events_csv<W: Write + ?Sized>(w: &mut W, traj: &Trajectory) -> Result<()> {
    writeln!(w, "tau,event,psa,x3,h_pre,drift_sum,delta_f1,delta_f2")?;
    for e in &traj.events {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(e.tau),
            e.kind.label(),
            fmt_f64(e.pre.psa()),
            fmt_f64(e.pre.x3),
            fmt_f64(e.h_pre),
            fmt_f64(e.drift_sum),
            fmt_f64(e.delta_f.hsc),
            fmt_f64(e.delta_f.crc)
        )?;
    }
    Ok(())
}

pub fn write_gradient_csv<W: Write + ?Sized>(w: &mut W, grad: &[f64; N_THETA]) -> Result<()> {
    writeln!(w, "theta_index,ipa_value")?;
    for i in ThetaIndex::ALL {
        writeln!(w, "{},{}", i, fmt_f64(grad[i.slot()]))?;
    }
    Ok(())
}

pub fn write_fd_csv<W: Write + ?Sized>(w: &mut W, reports: &[FdReport]) -> Result<()> {
    writeln!(w, "theta_index,ipa_value,fd_value,rel_err,delta,ipa_se,fd_se,n_reps,verdict")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.theta_index,
            fmt_f64(r.ipa_mean),
            fmt_f64(r.fd_mean),
            fmt_f64(r.rel_err),
            fmt_f64(r.delta),
            fmt_f64(r.ipa_se),
            fmt_f64(r.fd_se),
            r.n_reps,
            r.verdict.label()
        )?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write + ?Sized>(w: &mut W, records: &[SweepRecord]) -> Result<()> {
    writeln!(w, "theta1,theta2,L_mean,dL3,dL4,dL5,dL6,scenario,n_ok,n_diverged")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.theta1),
            fmt_f64(r.theta2),
            fmt_f64(r.cost_mean),
            fmt_f64(r.grad[0]),
            fmt_f64(r.grad[1]),
            fmt_f64(r.grad[2]),
            fmt_f64(r.grad[3]),
            r.scenario.label(),
            r.n_ok,
            r.n_diverged
        )?;
    }
    Ok(())
}

pub fn write_perturb_csv<W: Write + ?Sized>(w: &mut W, rows: &[PerturbRow]) -> Result<()> {
    writeln!(w, "theta_index,percent,scenario,L_mean,n_ok,n_diverged")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.theta_index,
            fmt_f64(r.percent),
            r.scenario.label(),
            fmt_f64(r.cost_mean),
            r.n_ok,
            r.n_diverged
        )?;
    }
    Ok(())
}
