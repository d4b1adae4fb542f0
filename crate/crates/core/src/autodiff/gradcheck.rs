//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Mode, Tape, Var};
use super::tensor::{ParamStore, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Tensors with more coordinates than this are randomly subsampled to
    /// this many.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_coords: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the loss is not smooth near them.
    pub skipped: usize,
    /// Name of the tensor holding the worst coordinate, with its index.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients of a scalar loss against central
/// differences, over all parameters in `params` and every input.
///
/// `f` receives a fresh evaluation-mode tape and one variable per entry of
/// `inputs`. A coordinate is treated as sitting on a kink, and skipped, when
/// the one-sided difference gap does not halve with the step.
pub fn grad_check<F>(
    params: &mut ParamStore,
    inputs: &[Tensor],
    cfg: GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let eval = |params: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new(params, Mode::Eval, 0);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let (param_grads, input_grads) = {
        let mut tape = Tape::new(params, Mode::Eval, 0);
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.input_with_grad(t.clone()))
            .collect();
        let loss = f(&mut tape, &vars)?;
        let g = tape.backward(loss)?;
        let pg: Vec<Vec<f64>> = params
            .ids()
            .map(|id| {
                g.param(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; params.get(id).numel()])
            })
            .collect();
        let ig: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| g.var(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        (pg, ig)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, cfg.max_coords).into_vec();
            v.sort_unstable();
            v
        }
    };

    let ids: Vec<_> = params.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let name = params.name(id).to_string();
        for c in pick(params.get(id).numel(), &mut rng) {
            let orig = params.get(id).data()[c];
            let at = |delta: f64, params: &mut ParamStore| -> Result<f64> {
                params.get_mut(id).data_mut()[c] = orig + delta;
                let v = eval(params, inputs);
                params.get_mut(id).data_mut()[c] = orig;
                v
            };
            let numeric = probe(cfg.eps, |d| at(d, params))?;
            record(&mut report, numeric, param_grads[pi][c], &name, c);
        }
    }
    let mut work = inputs.to_vec();
    for (ii, grads) in input_grads.iter().enumerate() {
        let name = format!("input{ii}");
        for c in pick(work[ii].numel(), &mut rng) {
            let orig = work[ii].data()[c];
            let numeric = probe(cfg.eps, |d| {
                work[ii].data_mut()[c] = orig + d;
                let v = eval(params, &work);
                work[ii].data_mut()[c] = orig;
                v
            })?;
            record(&mut report, numeric, grads[c], &name, c);
        }
    }
    Ok(report)
}

/// Central difference, or `None` at a kink.
fn probe(eps: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<Option<f64>> {
    let f0 = f(0.0)?;
    let (fp, fm) = (f(eps)?, f(-eps)?);
    let (hp, hm) = (f(eps / 2.0)?, f(-eps / 2.0)?);
    let gap = (fp - f0) / eps - (f0 - fm) / eps;
    let half_gap = (hp - f0) / (eps / 2.0) - (f0 - hm) / (eps / 2.0);
    let scale = ((fp - fm) / (2.0 * eps)).abs().max(1.0);
    if (gap - 2.0 * half_gap).abs() > 0.1 * gap.abs() + 1e-7 * scale {
        return Ok(None);
    }
    Ok(Some((fp - fm) / (2.0 * eps)))
}

fn record(report: &mut GradCheckReport, numeric: Option<f64>, analytic: f64, name: &str, c: usize) {
    let Some(n) = numeric else {
        report.skipped += 1;
        return;
    };
    report.checked += 1;
    let err = (analytic - n).abs() / analytic.abs().max(n.abs()).max(1e-6);
    if err > report.max_rel_error || report.worst.is_none() {
        report.max_rel_error = report.max_rel_error.max(err);
        report.worst = Some((name.to_string(), c));
    }
}
