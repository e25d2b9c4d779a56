use crate::autodiff::Tensor;
use crate::backbone::ParamStore;
use crate::error::{Error, Result};

/// SGD with momentum and L2 weight decay, applied uniformly to all
/// parameters: `v = mu * v + g + wd * p`, then `p -= lr * v`.
///
/// `grads[i]` of `None` means the parameter took no part in the loss.
pub fn sgd_update(
    params: &mut ParamStore,
    velocity: &mut [Tensor],
    grads: &[Option<Tensor>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    for (id, grad) in params.ids().zip(grads) {
        if let Some(g) = grad {
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {} at index {pos}",
                    params.name(id)
                )));
            }
        }
    }
    for (id, grad) in params.ids().zip(grads) {
        let v = velocity[id.index()].data_mut();
        let p = params.get_mut(id).data_mut();
        match grad {
            Some(g) => {
                for ((vi, pi), gi) in v.iter_mut().zip(p.iter_mut()).zip(g.data()) {
                    *vi = momentum * *vi + gi + weight_decay * *pi;
                    *pi -= lr * *vi;
                }
            }
            None => {
                for (vi, pi) in v.iter_mut().zip(p.iter_mut()) {
                    *vi = momentum * *vi + weight_decay * *pi;
                    *pi -= lr * *vi;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(p: f64) -> (ParamStore, Vec<Tensor>) {
        let mut s = ParamStore::new();
        s.add("p", Tensor::vector(vec![p]).unwrap()).unwrap();
        (s, vec![Tensor::zeros(vec![1])])
    }

    fn grad(g: f64) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::vector(vec![g]).unwrap())]
    }

    fn value(s: &ParamStore) -> f64 {
        s.get(s.find("p").unwrap()).data()[0]
    }

    #[test]
    fn vanilla_step() {
        let (mut s, mut v) = one(1.0);
        sgd_update(&mut s, &mut v, &grad(0.5), 0.1, 0.0, 0.0).unwrap();
        assert!((value(&s) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_second_step_is_one_point_nine() {
        let (mut s, mut v) = one(0.0);
        let (lr, g) = (0.1, 0.5);
        sgd_update(&mut s, &mut v, &grad(g), lr, 0.9, 0.0).unwrap();
        let after_first = value(&s);
        sgd_update(&mut s, &mut v, &grad(g), lr, 0.9, 0.0).unwrap();
        let second = after_first - value(&s);
        assert!((second - lr * g * 1.9).abs() < 1e-15);
    }

    #[test]
    fn pure_decay() {
        let (mut s, mut v) = one(1.0);
        sgd_update(&mut s, &mut v, &grad(0.0), 0.1, 0.0, 0.005).unwrap();
        assert!((value(&s) - 0.9995).abs() < 1e-15);
        let (mut s, mut v) = one(1.0);
        sgd_update(&mut s, &mut v, &[None], 0.1, 0.0, 0.005).unwrap();
        assert!((value(&s) - 0.9995).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, mut v) = one(1.0);
        let bad = vec![Some(Tensor::from_parts(vec![1], vec![f64::NAN]))];
        match sgd_update(&mut s, &mut v, &bad, 0.1, 0.9, 0.0) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("p")),
            other => panic!("{other:?}"),
        }
        assert_eq!(value(&s), 1.0);
    }
}
