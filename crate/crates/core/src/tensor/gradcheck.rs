use ndarray::Array2;

use super::{Graph, Result, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that pairs of gradients
    /// that are both ~0 are compared absolutely.
    pub abs_floor: f64,
    /// Check at most this many evenly spaced entries per block. `None`
    /// checks every entry.
    pub max_entries_per_block: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_entries_per_block: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter block.
    pub per_block: Vec<f64>,
    pub max_rel_error: f64,
    /// `(block, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn evaluate<F>(f: &F, params: &[Array2<f64>], track: bool) -> Result<(f64, Option<Vec<Array2<f64>>>)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| if track { g.param(p.clone()) } else { g.constant(p.clone()) })
        .collect();
    let loss = f(&mut g, &vars)?;
    let value = g.scalar(loss);
    if !track {
        return Ok((value, None));
    }
    let mut grads = g.backward(loss)?;
    let analytic = vars
        .iter()
        .map(|&v| grads.take(v).expect("tracked leaf has a gradient"))
        .collect();
    Ok((value, Some(analytic)))
}

/// Compares the tape's gradient of `f` against central finite differences,
/// entry by entry, at 64-bit precision.
///
/// `f` receives one tracked [`Var`] per entry of `params`, in order, and must
/// return a `1 x 1` loss. It is called `1 + 2 * n` times for `n` scalar
/// parameters, so it must be deterministic.
pub fn gradient_check<F>(f: F, params: &[Array2<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = evaluate(&f, params, true)?;
    let analytic = analytic.expect("tracked evaluation");

    let mut work: Vec<Array2<f64>> = params
        .iter()
        .map(|p| p.as_standard_layout().into_owned())
        .collect();
    let mut per_block = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for b in 0..work.len() {
        let analytic_b = analytic[b].as_standard_layout().into_owned();
        let mut block_max = 0.0f64;
        let n = work[b].len();
        let stride = match opts.max_entries_per_block {
            Some(k) if k > 0 && k < n => n.div_ceil(k),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = flat_mut(&mut work[b])[i];
            flat_mut(&mut work[b])[i] = orig + opts.step;
            let (plus, _) = evaluate(&f, &work, false)?;
            flat_mut(&mut work[b])[i] = orig - opts.step;
            let (minus, _) = evaluate(&f, &work, false)?;
            flat_mut(&mut work[b])[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic_b.as_slice().expect("standard layout")[i];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (a - numeric).abs() / denom;
            checked += 1;
            block_max = block_max.max(rel);
            if worst.is_none() || rel > max_rel {
                max_rel = rel;
                worst = Some((b, i));
            }
        }
        per_block.push(block_max);
    }
    Ok(GradCheckReport {
        per_block,
        max_rel_error: max_rel,
        worst,
        checked,
        tolerance: opts.tolerance,
        passed: max_rel < opts.tolerance,
    })
}

fn flat_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_function_is_exact() {
        let w = array![[0.5, -1.5, 2.0]];
        let report = gradient_check(
            |g, v| {
                let c = g.constant(array![[1.0, 2.0, 3.0]]);
                let p = g.mul(v[0], c)?;
                Ok(g.sum(p))
            },
            &[w],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed);
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn entry_cap_subsamples_blocks() {
        let w = Array2::from_elem((10, 10), 0.5);
        let opts = GradCheckOptions {
            max_entries_per_block: Some(7),
            ..Default::default()
        };
        let report = gradient_check(|g, v| Ok(g.sum(v[0])), &[w], &opts).unwrap();
        assert!(report.passed);
        assert_eq!(report.checked, 7);
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        // tanh with a derivative that is off by 10%.
        let x = array![[0.3, -0.7], [1.1, 0.2]];
        let report = gradient_check(
            |g, v| {
                let y = g.map(v[0], f64::tanh, |x| 1.1 * (1.0 - x.tanh().powi(2)));
                Ok(g.sum(y))
            },
            std::slice::from_ref(&x),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.05);

        let ok = gradient_check(
            |g, v| {
                let y = g.map(v[0], f64::tanh, |x| 1.0 - x.tanh().powi(2));
                Ok(g.sum(y))
            },
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(ok.passed);
    }
}
