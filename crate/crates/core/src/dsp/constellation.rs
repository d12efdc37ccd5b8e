use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square QAM codebook with unit average energy.
///
/// Point `i` carries the bit label `i`: the upper half of the bits selects
/// the in-phase level and the lower half the quadrature level, each Gray
/// coded along its axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    side: usize,
    scale: f64,
    // (in-phase level, quadrature level) -> point index
    grid: Vec<usize>,
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

pub fn make_qam(order: usize) -> Result<Constellation> {
    let side: usize = match order {
        4 => 2,
        16 => 4,
        64 => 8,
        256 => 16,
        _ => return Err(Error::UnsupportedOrder(order)),
    };
    let bits = side.trailing_zeros();
    let level = |l: usize| (2 * l) as f64 - (side - 1) as f64;
    let mut raw = Vec::with_capacity(order);
    let mut grid = vec![0; order];
    for i in 0..order {
        let li = gray_to_binary(i >> bits);
        let lq = gray_to_binary(i & (side - 1));
        raw.push(Complex64::new(level(li), level(lq)));
        grid[li * side + lq] = i;
    }
    let energy = raw.iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
    let scale = energy.sqrt().recip();
    let points = raw.into_iter().map(|p| p * scale).collect();
    Ok(Constellation {
        points,
        side,
        scale,
        grid,
    })
}

impl Constellation {
    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    pub fn energy(&self) -> f64 {
        self.moment(2)
    }

    /// E{|x|^k} under uniform symbol probabilities.
    pub fn moment(&self, k: i32) -> f64 {
        self.points.iter().map(|p| p.norm().powi(k)).sum::<f64>() / self.order() as f64
    }

    /// Dispersion constant E|x|⁴ / E|x|² driving the constant modulus criterion.
    pub fn cma_r2(&self) -> f64 {
        self.moment(4) / self.moment(2)
    }

    /// Minimum distance between distinct points.
    pub fn min_distance(&self) -> f64 {
        2.0 * self.scale
    }

    /// Index of the nearest point in Euclidean distance; exact ties go to the
    /// lowest index.
    pub fn nearest(&self, z: Complex64) -> usize {
        let side = self.side as isize;
        let axis = |v: f64| -> isize {
            let l = ((v / self.scale + (side - 1) as f64) / 2.0).round();
            if l.is_nan() {
                0
            } else {
                (l.max(0.0) as isize).min(side - 1)
            }
        };
        let (ci, cq) = (axis(z.re), axis(z.im));
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for li in (ci - 1).max(0)..=(ci + 1).min(side - 1) {
            for lq in (cq - 1).max(0)..=(cq + 1).min(side - 1) {
                let idx = self.grid[(li * side + lq) as usize];
                let d = (z - self.points[idx]).norm_sqr();
                if d < best_d || (d == best_d && idx < best) {
                    best_d = d;
                    best = idx;
                }
            }
        }
        if best == usize::MAX {
            // non-finite input
            0
        } else {
            best
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qam4_points() {
        let c = make_qam(4).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for p in c.points() {
            assert!((p.re.abs() - s).abs() < 1e-15 && (p.im.abs() - s).abs() < 1e-15);
        }
    }

    #[test]
    fn qam16_levels_and_moments() {
        let c = make_qam(16).unwrap();
        let unit = 10f64.sqrt().recip();
        for p in c.points() {
            let lvl = (p.re / unit).abs();
            assert!((lvl - 1.0).abs() < 1e-12 || (lvl - 3.0).abs() < 1e-12);
        }
        assert!((c.energy() - 1.0).abs() < 1e-12);
        assert!((c.moment(4) - 1.32).abs() < 1e-12);
        assert!((c.cma_r2() - 1.32).abs() < 1e-12);
    }

    #[test]
    fn all_orders_normalized_and_distinct() {
        for m in [4, 16, 64, 256] {
            let c = make_qam(m).unwrap();
            assert!((c.energy() - 1.0).abs() < 1e-12);
            for i in 0..m {
                for j in 0..i {
                    assert!((c.point(i) - c.point(j)).norm() > 1e-9);
                }
            }
        }
    }

    #[test]
    fn unsupported_order() {
        assert!(matches!(make_qam(8), Err(Error::UnsupportedOrder(8))));
        assert!(make_qam(32).is_err());
    }

    #[test]
    fn gray_neighbours_differ_by_one_bit() {
        let c = make_qam(16).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                if ((c.point(i) - c.point(j)).norm() - c.min_distance()).abs() < 1e-9 {
                    assert_eq!((i ^ j).count_ones(), 1, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn nearest_matches_brute_force() {
        let c = make_qam(64).unwrap();
        let mut rng = crate::rng::SeededRng::new(3);
        for _ in 0..5000 {
            let z = Complex64::new(rng.uniform_range(-1.6, 1.6), rng.uniform_range(-1.6, 1.6));
            let brute = (0..64)
                .min_by(|&a, &b| {
                    (z - c.point(a))
                        .norm_sqr()
                        .partial_cmp(&(z - c.point(b)).norm_sqr())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(c.nearest(z), brute);
        }
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let c = make_qam(4).unwrap();
        // the origin is equidistant from all four points
        assert_eq!(c.nearest(Complex64::new(0.0, 0.0)), 0);
    }
}
