use crate::error::{Error, Result};
use crate::numerics::param::{GradAccum, ParamStore};

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `name[index]` of the worst scalar.
    pub worst: String,
    pub scalars_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Relative error with a measurement floor: central differences of a loss of
/// magnitude L at step h carry roundoff noise of about eps*L/h, so gradients
/// smaller than noise/tol cannot be resolved and are compared against the
/// floor instead of their own magnitude.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    let scale = a.abs().max(n.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Compares reverse-mode gradients against central finite differences for
/// every trainable scalar in the store.
///
/// `loss_fn` must evaluate the loss (and its gradients) as a pure function of
/// the store contents; the store is restored to its original values before
/// returning.
pub fn grad_check<F>(store: &mut ParamStore, loss_fn: F, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, GradAccum)>,
{
    if step <= 0.0 {
        return Err(Error::Config("grad_check step must be positive".to_string()));
    }
    let (loss0, analytic) = loss_fn(store)?;
    if !loss0.is_finite() {
        return Err(Error::Numeric {
            step: 0,
            detail: format!("non-finite loss {loss0}"),
        });
    }
    let fd_noise = f64::EPSILON * loss0.abs().max(1.0) / step;
    let floor = (fd_noise / tol).max(1e-10);

    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id, p.name.clone(), p.value.numel()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        scalars_checked: 0,
        tol,
    };

    for (id, name, numel) in ids {
        for i in 0..numel {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let (lp, _) = loss_fn(store)?;
            store.value_mut(id).data_mut()[i] = orig - step;
            let (lm, _) = loss_fn(store)?;
            store.value_mut(id).data_mut()[i] = orig;

            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic.get(id).map(|g| g.data()[i]).unwrap_or(0.0);
            let e = rel_err(a, numeric, floor);
            report.scalars_checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("{name}[{i}] analytic={a} numeric={numeric}");
            }
        }
    }
    Ok(report)
}
