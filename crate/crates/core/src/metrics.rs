//! Relative errors between a fine reference and a prolongated multiscale
//! trajectory, and the weighted norms they are built from.

use crate::error::{Error, Result};
use crate::rt0::FineOperators;
use crate::solver::{Trajectory, TrajectoryKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// `(∫ κ⁻¹ v·v)^{1/2}`.
    A,
    /// `(∫ ρ p²)^{1/2}`.
    Rho,
    /// `(∫ κ̃ p²)^{1/2}`; the weight is passed explicitly.
    S,
    L2,
}

/// Norm of a fine-grid vector. `weight` is required for [`NormKind::S`]
/// (cellwise `κ̃`) and ignored otherwise.
pub fn norm(ops: &FineOperators, x: &[f64], kind: NormKind, weight: Option<&[f64]>) -> Result<f64> {
    let sq = match kind {
        NormKind::A => {
            Error::check_len("a-norm vector", ops.n_velocity(), x.len())?;
            ops.a_norm_sq(x)
        }
        NormKind::Rho => {
            Error::check_len("rho-norm vector", ops.n_pressure(), x.len())?;
            ops.rho_norm_sq(x)
        }
        NormKind::L2 => {
            Error::check_len("L2-norm vector", ops.n_pressure(), x.len())?;
            ops.l2_norm_sq(x)
        }
        NormKind::S => {
            Error::check_len("s-norm vector", ops.n_pressure(), x.len())?;
            let w = weight.ok_or_else(|| Error::InvalidArgument("s-norm needs the cellwise kappa tilde".into()))?;
            Error::check_len("s-norm weight", ops.n_pressure(), w.len())?;
            ops.cell_area * w.iter().zip(x).map(|(k, v)| k * v * v).sum::<f64>()
        }
    };
    Ok(sq.max(0.0).sqrt())
}

/// Per-step relative errors; `None` where the reference norm vanishes.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub e_v: Vec<Option<f64>>,
    pub e_p: Vec<Option<f64>>,
}

impl ErrorSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Errors at the final time.
    pub fn terminal(&self) -> (Option<f64>, Option<f64>) {
        (
            self.e_v.last().copied().flatten(),
            self.e_p.last().copied().flatten(),
        )
    }

    /// `n,t,e_v,e_p` rows; steps where either error is undefined are skipped.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,t,e_v,e_p\n");
        for n in 0..self.len() {
            if let (Some(v), Some(p)) = (self.e_v[n], self.e_p[n]) {
                s.push_str(&format!("{n},{},{v:e},{p:e}\n", self.times[n]));
            }
        }
        s
    }
}

/// `e_v = ‖v_h − v_ms‖_a / ‖v_h‖_a` and `e_p = ‖p_h − p_ms‖_{L²} / ‖p_h‖_{L²}`.
pub fn error_series(ops: &FineOperators, fine: &Trajectory, ms: &Trajectory) -> Result<ErrorSeries> {
    if fine.kind == TrajectoryKind::Multiscale || ms.kind == TrajectoryKind::Multiscale {
        return Err(Error::InvalidArgument("error series needs fine-grid trajectories; prolongate first".into()));
    }
    Error::check_len("trajectory length", fine.times.len(), ms.times.len())?;
    if fine.times.iter().zip(&ms.times).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0)) {
        return Err(Error::InvalidArgument("trajectories are on different time grids".into()));
    }
    let mut out = ErrorSeries {
        times: fine.times.clone(),
        e_v: Vec::with_capacity(fine.times.len()),
        e_p: Vec::with_capacity(fine.times.len()),
    };
    for n in 0..fine.times.len() {
        let (vh, vm) = (&fine.velocity[n], &ms.velocity[n]);
        let (ph, pm) = (&fine.pressure[n], &ms.pressure[n]);
        Error::check_len("velocity size", vh.len(), vm.len())?;
        Error::check_len("pressure size", ph.len(), pm.len())?;
        let dv: Vec<f64> = vh.iter().zip(vm).map(|(a, b)| a - b).collect();
        let dp: Vec<f64> = ph.iter().zip(pm).map(|(a, b)| a - b).collect();
        out.e_v.push(ratio(norm(ops, &dv, NormKind::A, None)?, norm(ops, vh, NormKind::A, None)?));
        out.e_p.push(ratio(norm(ops, &dp, NormKind::L2, None)?, norm(ops, ph, NormKind::L2, None)?));
    }
    Ok(out)
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}
