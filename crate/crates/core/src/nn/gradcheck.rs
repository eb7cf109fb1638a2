//! Central finite differences, the oracle for every analytic gradient.

use super::param::ParamBlock;
use crate::error::{Error, Result};

/// Central-difference estimate `(L(p+h) - L(p-h)) / 2h` for every scalar in
/// every block returned by `blocks`. Parameters are restored bit-exactly.
pub fn finite_diff_grad<M>(
    model: &mut M,
    blocks: impl Fn(&mut M) -> Vec<&mut ParamBlock>,
    mut loss: impl FnMut(&mut M) -> Result<f64>,
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let sizes: Vec<usize> = blocks(model).iter().map(|b| b.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (bi, &len) in sizes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = blocks(model)[bi].values[j];
            blocks(model)[bi].values[j] = orig + h;
            let plus = loss(model)?;
            blocks(model)[bi].values[j] = orig - h;
            let minus = loss(model)?;
            blocks(model)[bi].values[j] = orig;
            *gj = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest relative error between analytic and numeric gradients, with the
/// denominator floored at `floor` so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>], floor: f64) -> f64 {
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<ParamBlock> {
        vec![ParamBlock::from_values("p", &[1], vec![v]).unwrap()]
    }

    #[test]
    fn quadratic() {
        let mut p = scalar(3.0);
        let g = finite_diff_grad(
            &mut p,
            |p| p.iter_mut().collect(),
            |p| Ok(p[0].values[0] * p[0].values[0]),
            1e-5,
        )
        .unwrap();
        assert!((g[0][0] - 6.0).abs() < 1e-6);
        assert_eq!(p[0].values[0], 3.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut p = vec![ParamBlock::from_values("p", &[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let g = finite_diff_grad(&mut p, |p| p.iter_mut().collect(), |_| Ok(4.2), 1e-5).unwrap();
        assert!(g[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut p = scalar(1.0);
        assert!(finite_diff_grad(&mut p, |p| p.iter_mut().collect(), |_| Ok(0.0), 0.0).is_err());
    }
}
