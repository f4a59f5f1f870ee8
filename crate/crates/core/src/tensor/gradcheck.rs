use super::{Graph, Mode, NodeId, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`.
    Central,
    /// Ridders' extrapolation of central differences over shrinking steps
    /// starting at `step`; picks the estimate with the lowest error bound,
    /// so both flat and high-curvature elements are resolved.
    Ridders,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    pub stencil: Stencil,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Elements with `|analytic| + |numeric|` at or below this are skipped.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            stencil: Stencil::Central,
            tolerance: 1e-6,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    /// Elements compared against the finite difference.
    pub checked: usize,
    /// Elements whose perturbation crossed a non-differentiable point.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares reverse-mode gradients with finite differences for every
/// element of every parameter. `build` must construct the same scalar
/// loss on each call; it is evaluated in [`Mode::Eval`] so dropout is off.
///
/// Perturbations that change the branch signature (ReLU/ELU sign pattern
/// or a max-pool winner) straddle a kink and are excluded.
pub fn grad_check<F>(
    params: &mut ParamStore<f64>,
    build: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<NodeId>,
{
    let (analytic, base_sig) = {
        let mut g = Graph::new(params, Mode::Eval).with_branch_tracking();
        let loss = build(&mut g)?;
        (g.backward(loss)?, g.branch_signature())
    };

    let eval = |store: &ParamStore<f64>| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::new(store, Mode::Eval).with_branch_tracking();
        let loss = build(&mut g)?;
        Ok((g.value(loss).data()[0], g.branch_signature()))
    };

    let ids: Vec<_> = params.ids().collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let n = params.get(id).len();
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            elements: n,
            checked: 0,
            kinks: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for i in 0..n {
            let orig = params.get(id).data()[i];
            let mut central = |h: f64| -> Result<Option<f64>> {
                params.get_mut(id).data_mut()[i] = orig + h;
                let (plus, sp) = eval(params)?;
                params.get_mut(id).data_mut()[i] = orig - h;
                let (minus, sm) = eval(params)?;
                params.get_mut(id).data_mut()[i] = orig;
                Ok((sp == base_sig && sm == base_sig).then(|| (plus - minus) / (2.0 * h)))
            };
            let numeric = match opts.stencil {
                Stencil::Central => central(opts.step)?,
                Stencil::Ridders => ridders(&mut central, opts.step)?,
            };
            let Some(numeric) = numeric else {
                check.kinks += 1;
                continue;
            };
            let a = analytic.get(id).data()[i];
            let denom = a.abs() + numeric.abs();
            if denom <= opts.floor {
                continue;
            }
            let abs = (a - numeric).abs();
            check.checked += 1;
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(abs / denom);
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}

/// Ridders' method. Steps that straddle a kink restart the tableau at
/// the next smaller step; `None` if no two consecutive steps are smooth.
fn ridders<F>(central: &mut F, h0: f64) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<Option<f64>>,
{
    const CON: f64 = 1.4;
    const LEVELS: usize = 12;
    const SAFE: f64 = 2.0;
    let con2 = CON * CON;
    let mut h = h0;
    let mut table: Vec<Vec<f64>> = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..LEVELS {
        let Some(d) = central(h)? else {
            table.clear();
            h /= CON;
            continue;
        };
        let mut row = vec![d];
        let mut fac = con2;
        if let Some(prev) = table.last() {
            for j in 1..=prev.len() {
                let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
                fac *= con2;
                let err = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
                if best.is_none_or(|(e, _)| err <= e) {
                    best = Some((err, v));
                }
                row.push(v);
            }
            let (err, _) = best.expect("set above");
            let prev_diag = prev[prev.len() - 1];
            if (row[row.len() - 1] - prev_diag).abs() >= SAFE * err {
                break;
            }
        }
        table.push(row);
        h /= CON;
    }
    Ok(best.map(|(_, v)| v))
}
