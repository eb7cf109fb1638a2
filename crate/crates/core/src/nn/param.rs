//! Named parameter storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, shaped block of parameters together with its gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl ParamBlock {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        ParamBlock {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn from_values(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "block `{name}`: {} values for shape {shape:?}",
                values.len()
            )));
        }
        Ok(ParamBlock {
            name,
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
            trainable: true,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
        self.grad.resize(self.values.len(), 0.0);
    }

    /// Restores the `grad.len() == values.len()` invariant after deserialization.
    pub(crate) fn ensure_grad(&mut self) {
        if self.grad.len() != self.values.len() {
            self.zero_grad();
        }
    }

    pub fn same_layout(&self, other: &ParamBlock) -> bool {
        self.name == other.name && self.shape == other.shape
    }
}

/// Sum of squared differences between two block sets, matched by name.
pub fn param_l2_sq(a: &[ParamBlock], b: &[ParamBlock]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "block count mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for block in a {
        let other = b
            .iter()
            .find(|o| o.name == block.name)
            .ok_or_else(|| Error::Shape(format!("block `{}` missing on one side", block.name)))?;
        if other.shape != block.shape {
            return Err(Error::Shape(format!(
                "block `{}`: shape {:?} vs {:?}",
                block.name, block.shape, other.shape
            )));
        }
        total += block
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(total)
}

/// Euclidean norm of all gradients in the given blocks.
pub fn grad_norm<'a>(blocks: impl IntoIterator<Item = &'a ParamBlock>) -> f64 {
    blocks
        .into_iter()
        .flat_map(|b| b.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_sq_identity_and_arithmetic() {
        let a = vec![ParamBlock::from_values("w", &[2], vec![1.0, 2.0]).unwrap()];
        let z = vec![ParamBlock::zeros("w", &[2])];
        assert_eq!(param_l2_sq(&a, &a).unwrap(), 0.0);
        assert_eq!(param_l2_sq(&a, &z).unwrap(), 5.0);
        assert_eq!(param_l2_sq(&z, &a).unwrap(), 5.0);
    }

    #[test]
    fn l2_sq_ignores_block_order() {
        let a = vec![
            ParamBlock::from_values("x", &[1], vec![3.0]).unwrap(),
            ParamBlock::from_values("y", &[2], vec![1.0, -1.0]).unwrap(),
        ];
        let b = vec![
            ParamBlock::from_values("x", &[1], vec![1.0]).unwrap(),
            ParamBlock::from_values("y", &[2], vec![0.0, 0.0]).unwrap(),
        ];
        let b_rev: Vec<_> = b.iter().rev().cloned().collect();
        assert_eq!(param_l2_sq(&a, &b).unwrap(), param_l2_sq(&a, &b_rev).unwrap());
        assert_eq!(param_l2_sq(&a, &b).unwrap(), 6.0);
    }

    #[test]
    fn l2_sq_rejects_mismatch() {
        let a = vec![ParamBlock::zeros("w", &[2])];
        let b = vec![ParamBlock::zeros("w", &[3])];
        let c = vec![ParamBlock::zeros("v", &[2])];
        assert!(matches!(param_l2_sq(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(param_l2_sq(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_grad_clears() {
        let mut p = ParamBlock::zeros("w", &[2, 3]);
        p.grad.iter_mut().for_each(|g| *g = 1.5);
        p.zero_grad();
        assert_eq!(p.grad.len(), 6);
        assert!(p.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn from_values_checks_shape() {
        assert!(ParamBlock::from_values("w", &[2, 2], vec![0.0; 3]).is_err());
    }
}
