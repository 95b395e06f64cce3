use crate::error::Result;
use crate::tensor::{numel, MatmulPlan, Tensor};

use super::Var;

impl<'a> Var<'a> {
    /// Batched matrix product `[..., m, k] x [..., k, n]`; batch axes
    /// broadcast.
    pub fn matmul(self, rhs: Var<'a>) -> Result<Var<'a>> {
        let a = self.value();
        let b = rhs.value();
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        let mut out = vec![0.0; numel(&plan.out_shape)];
        plan.forward(a.data(), b.data(), &mut out);
        let value = Tensor::from_parts(plan.out_shape.clone(), out);
        Ok(self.g.push(value, &[self, rhs], "matmul", move |g, mask| {
            let mut ga = mask[0].then(|| vec![0.0; a.len()]);
            let mut gb = mask[1].then(|| vec![0.0; b.len()]);
            plan.backward(a.data(), b.data(), g, ga.as_deref_mut(), gb.as_deref_mut());
            vec![ga, gb]
        }))
    }
}
