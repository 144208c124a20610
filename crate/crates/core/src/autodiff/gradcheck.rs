use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Worst coordinate found by a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients against central differences.
///
/// `loss` builds a scalar from the parameter handles it is given. Returns the
/// largest `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)` over
/// every coordinate of every parameter.
pub fn grad_check<F>(params: &[Tensor], h: f64, loss: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.numel()).map(move |j| (i, j)))
        .collect();
    Ok(grad_check_coords(params, h, &coords, loss)?.max_rel_error)
}

/// [`grad_check`] restricted to the listed `(tensor, element)` coordinates.
pub fn grad_check_coords<F>(
    params: &[Tensor],
    h: f64,
    coords: &[(usize, usize)],
    loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_coords_with_floor(params, h, coords, 0.0, loss)
}

/// Like [`grad_check_coords`], but coordinates whose absolute disagreement is
/// within `abs_floor` count as exact. Useful when some true gradients are zero
/// and the finite difference only sees rounding noise of order `eps·|L|/h`.
pub fn grad_check_coords_with_floor<F>(
    params: &[Tensor],
    h: f64,
    coords: &[(usize, usize)],
    abs_floor: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| g.leaf(p.clone().with_requires_grad(true)))
        .collect();
    let out = loss(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = loss(&mut g, &vars)?;
        let v = g.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check probe".into()))
        }
    };

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: coords.len(),
    };
    for &(pi, ci) in coords {
        let a = analytic[pi][ci];
        let orig = probe[pi].data()[ci];
        probe[pi].data_mut()[ci] = orig + h;
        let up = eval(&probe)?;
        probe[pi].data_mut()[ci] = orig - h;
        let down = eval(&probe)?;
        probe[pi].data_mut()[ci] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = if (a - numeric).abs() <= abs_floor {
            0.0
        } else {
            (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8)
        };
        if rel > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: rel,
                worst: (pi, ci),
                analytic: a,
                numeric,
                coords_checked: coords.len(),
            };
        }
    }
    Ok(report)
}
