//! Scaled dot-product attention, composed from matmul and softmax so the
//! backward pass comes from the chain rule.

use crate::elem::{lit, Elem};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

impl<E: Elem> Tape<E> {
    /// `softmax(q k^T / sqrt(D)) v` for `q,k,v: [T,D]`. Rows of the attention
    /// matrix sum to 1.
    pub fn scaled_dot_attention(
        &self,
        q: &Tensor<E>,
        k: &Tensor<E>,
        v: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        if q.shape().len() != 2 || k.shape().len() != 2 || v.shape().len() != 2 {
            return Err(Error::shape(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
            ));
        }
        let d = q.shape()[1];
        if k.shape()[1] != d || v.shape()[0] != k.shape()[0] {
            return Err(Error::shape(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
            ));
        }
        let kt = self.transpose2(k)?;
        let logits = self.matmul(q, &kt)?;
        let scaled = self.mul_scalar(&logits, lit::<E>(1.0 / (d as f64).sqrt()));
        let attn = self.softmax_axis(&scaled, 1)?;
        self.matmul(&attn, v)
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn single_token_returns_v() {
        let tape = Tape::<f64>::new();
        let q = Tensor::from_vec(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let k = Tensor::from_vec(vec![1, 3], vec![1.0, 0.0, 0.5]).unwrap();
        let v = Tensor::from_vec(vec![1, 3], vec![7.0, 8.0, 9.0]).unwrap();
        let o = tape.scaled_dot_attention(&q, &k, &v).unwrap();
        assert_eq!(o.values(), v.values());
    }

    #[test]
    fn saturated_one_hot_attention_selects_matching_row() {
        // Orthogonal one-hot q,k scaled large: row i attends to k row i.
        let tape = Tape::<f64>::new();
        let scale = 100.0;
        let q = Tensor::from_vec(vec![2, 2], vec![scale, 0.0, 0.0, scale]).unwrap();
        let k = Tensor::from_vec(vec![2, 2], vec![scale, 0.0, 0.0, scale]).unwrap();
        let v = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let o = tape.scaled_dot_attention(&q, &k, &v).unwrap();
        for (a, b) in o.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
