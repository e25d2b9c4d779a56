use super::{Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};

/// A coordinate left out of the comparison because the perturbation moved
/// some relu input across zero, where only a subgradient exists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgradientWarning {
    pub input: usize,
    pub coord: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|ad - fd| / max(1, |ad|, |fd|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: Vec<SubgradientWarning>,
}

fn eval<F>(f: &F, point: &[Tensor], requires_grad: bool) -> Result<(Graph, Var, Vec<Var>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = point
        .iter()
        .map(|t| g.leaf(t.clone(), requires_grad))
        .collect();
    let root = f(&mut g, &leaves)?;
    if g.value(root).numel() != 1 {
        return shape_err(format!(
            "grad_check: function output has shape {:?}",
            g.value(root).shape()
        ));
    }
    Ok((g, root, leaves))
}

/// Compares reverse-mode gradients of `f` at `point` with central finite
/// differences of step `eps`, one coordinate at a time.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("grad_check: eps must be positive, got {eps}")));
    }
    let (mut g, root, leaves) = eval(&f, point, true)?;
    let center_sig = g.relu_signature();
    g.backward(root)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(point)
        .map(|(&v, p)| g.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: Vec::new(),
    };
    let mut shifted = point.to_vec();
    for (input, base) in point.iter().enumerate() {
        for coord in 0..base.numel() {
            let x0 = base.data()[coord];
            shifted[input].data_mut()[coord] = x0 + eps;
            let (gp, rp, _) = eval(&f, &shifted, false)?;
            shifted[input].data_mut()[coord] = x0 - eps;
            let (gm, rm, _) = eval(&f, &shifted, false)?;
            shifted[input].data_mut()[coord] = x0;

            if gp.relu_signature() != center_sig || gm.relu_signature() != center_sig {
                report.skipped.push(SubgradientWarning { input, coord });
                continue;
            }
            let fd = (gp.value(rp).item()? - gm.value(rm).item()?) / (2.0 * eps);
            let ad = analytic[input].data()[coord];
            let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
