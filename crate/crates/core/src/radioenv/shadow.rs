use rand_distr::{Distribution, StandardNormal};

use crate::rng;

/// Spatially consistent unit-variance Gaussian field.
///
/// Independent standard normals sit on a square lattice with the given
/// spacing; a point's value is the bilinear blend of its four corner nodes
/// rescaled by the weights' L2 norm, so the marginal variance is exactly 1
/// everywhere and the field is continuous. Node values are hashed from
/// `(seed, field, ix, iy)`, so the field is unbounded and order-independent.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LatticeField {
    seed: u64,
    spacing: f64,
}

impl LatticeField {
    pub(crate) fn new(seed: u64, spacing: f64) -> Self {
        Self { seed, spacing }
    }

    fn node(&self, field: u64, ix: i64, iy: i64) -> f64 {
        let h = rng::hash_words(&[self.seed, field, ix as u64, iy as u64]);
        StandardNormal.sample(&mut rng::rng_from(h))
    }

    pub(crate) fn value(&self, field: u64, pos: [f64; 2]) -> f64 {
        let gx = pos[0] / self.spacing;
        let gy = pos[1] / self.spacing;
        let ix = gx.floor();
        let iy = gy.floor();
        let fx = gx - ix;
        let fy = gy - iy;
        let (ix, iy) = (ix as i64, iy as i64);
        let corners = [
            ((1.0 - fx) * (1.0 - fy), ix, iy),
            (fx * (1.0 - fy), ix + 1, iy),
            ((1.0 - fx) * fy, ix, iy + 1),
            (fx * fy, ix + 1, iy + 1),
        ];
        let mut acc = 0.0;
        let mut norm = 0.0;
        for (w, nx, ny) in corners {
            if w > 0.0 {
                acc += w * self.node(field, nx, ny);
                norm += w * w;
            }
        }
        acc / norm.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_nodes_are_exact() {
        let f = LatticeField::new(3, 10.0);
        let at_node = f.value(0, [20.0, 30.0]);
        assert_eq!(at_node, f.node(0, 2, 3));
    }

    #[test]
    fn field_is_continuous() {
        let f = LatticeField::new(3, 10.0);
        let a = f.value(1, [15.0, 15.0]);
        let b = f.value(1, [15.001, 15.0]);
        assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn unit_variance_over_area() {
        let f = LatticeField::new(11, 5.0);
        let mut vals = Vec::new();
        for i in 0..200 {
            for j in 0..200 {
                vals.push(f.value(2, [i as f64 * 2.3 + 0.7, j as f64 * 2.9 + 0.3]));
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }
}
