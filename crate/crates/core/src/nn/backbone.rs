use alloc::vec::Vec;

use rand::Rng;

use super::Conv;
use crate::autodiff::Var;
use crate::params::{Ctx, ParamStore};
use crate::{Error, Result};

/// Four conv+relu blocks, the second and third with stride 2, mapping an
/// RGB image `[3, H, W]` to features `[D, H/4, W/4]`.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub blocks: Vec<Conv>,
    pub out_channels: usize,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, width: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let plan = [
            (3, width, 1),
            (width, 2 * width, 2),
            (2 * width, 2 * width, 2),
            (2 * width, out_channels, 1),
        ];
        let blocks = plan
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, s))| Conv::new(store, &alloc::format!("backbone.{i}"), ci, co, 3, s, rng))
            .collect();
        Self { blocks, out_channels }
    }

    pub fn forward(&self, ctx: &mut Ctx, image: Var) -> Result<Var> {
        let shape = ctx.tape.shape(image);
        match *shape {
            [3, h, w] if h % 4 == 0 && w % 4 == 0 && h > 0 && w > 0 => {}
            _ => {
                return Err(Error::InvalidShape {
                    op: "backbone",
                    shape: shape.to_vec(),
                    reason: "expected [3, H, W] with H and W divisible by 4",
                })
            }
        }
        let mut x = image;
        for block in &self.blocks {
            x = block.forward(ctx, x)?;
            x = ctx.tape.relu(x);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize) -> (ParamStore, Backbone) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, 4, d, &mut rng);
        (store, bb)
    }

    #[test]
    fn output_is_quarter_resolution() {
        let (store, bb) = setup(16);
        let mut ctx = Ctx::inference(&store);
        let x = ctx.tape.constant(Tensor::full(&[3, 32, 32], 0.3));
        let y = bb.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.tape.shape(y), &[16, 8, 8]);
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let (store, bb) = setup(8);
        let mut ctx = Ctx::inference(&store);
        let x = ctx.tape.constant(Tensor::zeros(&[3, 30, 32]));
        assert!(bb.forward(&mut ctx, x).is_err());
    }

    #[test]
    fn zero_weights_give_bias_pattern() {
        let (mut store, bb) = setup(4);
        for block in &bb.blocks {
            store.get_mut(block.weight).data_mut().fill(0.0);
        }
        let last = bb.blocks.last().unwrap();
        store.get_mut(last.bias).data_mut().copy_from_slice(&[0.5, -1.0, 2.0, 0.0]);
        let mut ctx = Ctx::inference(&store);
        let x = ctx.tape.constant(Tensor::full(&[3, 16, 16], 0.7));
        let y = bb.forward(&mut ctx, x).unwrap();
        let d = ctx.tape.data(y);
        for (c, expect) in [0.5, 0.0, 2.0, 0.0].iter().enumerate() {
            assert!(d[c * 16..(c + 1) * 16].iter().all(|v| v == expect));
        }
    }

    #[test]
    fn gradient_reaches_first_layer() {
        let (mut store, bb) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img: alloc::vec::Vec<f64> = (0..3 * 16 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut ctx = Ctx::new(&store);
        let x = ctx.tape.constant(Tensor::new(alloc::vec![3, 16, 16], img).unwrap());
        let y = bb.forward(&mut ctx, x).unwrap();
        let s = ctx.tape.sum(y);
        ctx.backward_into(s, &mut store).unwrap();
        let g = store.get(bb.blocks[0].weight).grad.as_ref().unwrap();
        assert!(g.iter().any(|v| *v != 0.0));
    }
}
