use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences at every element of `x`.
///
/// Returns `max_i |g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, step, &all)
}

/// [`finite_diff_check`] restricted to the listed flat element indices.
pub fn finite_diff_check_at<F>(f: F, x: &Tensor, step: f64, indices: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!(
            "finite-difference step {step} must be > 0"
        )));
    }
    let mut g = Graph::new();
    let xv = g.leaf(&x.clone().with_requires_grad(true));
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let zeros = vec![0.0; x.len()];
    let ad = g.grad(xv).unwrap_or(&zeros).to_vec();

    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(t);
        let l = f(&mut g, v)?;
        Ok(g.value(l)[0])
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone().with_requires_grad(false);
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let err = (ad[i] - fd).abs() / (ad[i].abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Outcome of [`finite_diff_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdReport {
    /// Worst relative error over the entries that were compared.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries whose stencil `x ± step` switched some ReLU between its
    /// linear pieces; a central difference there is not a derivative.
    pub kink_skipped: usize,
}

/// [`finite_diff_check_at`] for piecewise-linear composites: entries whose
/// stencil crosses a ReLU kink are counted and left out of the maximum.
pub fn finite_diff_report<F>(f: F, x: &Tensor, step: f64, indices: &[usize]) -> Result<FdReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!(
            "finite-difference step {step} must be > 0"
        )));
    }
    let mut g = Graph::new();
    let xv = g.leaf(&x.clone().with_requires_grad(true));
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let zeros = vec![0.0; x.len()];
    let ad = g.grad(xv).unwrap_or(&zeros).to_vec();
    let base = g.relu_pattern();

    let eval = |t: &Tensor| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new();
        let v = g.leaf(t);
        let l = f(&mut g, v)?;
        Ok((g.value(l)[0], g.relu_pattern()))
    };
    let mut report = FdReport {
        max_rel_err: 0.0,
        checked: 0,
        kink_skipped: 0,
    };
    let mut probe = x.clone().with_requires_grad(false);
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let (up, p_up) = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let (down, p_down) = eval(&probe)?;
        probe.data_mut()[i] = orig;
        if p_up != base || p_down != base {
            report.kink_skipped += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * step);
        let err = (ad[i] - fd).abs() / (ad[i].abs() + fd.abs()).max(1e-8);
        report.max_rel_err = report.max_rel_err.max(err);
        report.checked += 1;
    }
    Ok(report)
}
