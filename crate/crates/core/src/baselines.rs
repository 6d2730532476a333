//! Model-free reference maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::explain::resize_bilinear;
use crate::tensor_io::SaliencyMap;

/// Side of the centre-bias grid.
pub const CB_CAM_SIDE: usize = 7;

/// I.i.d. uniform `[0,1)` values, reproducible from `seed`.
pub fn random_baseline_map(height: usize, width: usize, seed: u64) -> SaliencyMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..height * width).map(|_| rng.random::<f32>()).collect();
    SaliencyMap::new(height, width, values).expect("uniform values lie in [0,1)")
}

/// Centre-bias map: a 7×7 grid with a single 1 at its centre, bilinearly
/// upsampled and normalized.
pub fn cb_cam_map(height: usize, width: usize) -> SaliencyMap {
    let mut grid = vec![0.0; CB_CAM_SIDE * CB_CAM_SIDE];
    let c = CB_CAM_SIDE / 2;
    grid[c * CB_CAM_SIDE + c] = 1.0;
    let up = resize_bilinear(&grid, CB_CAM_SIDE, CB_CAM_SIDE, height, width);
    SaliencyMap::normalized(height, width, &up).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::Grid;

    #[test]
    fn random_is_reproducible() {
        assert_eq!(random_baseline_map(16, 16, 3), random_baseline_map(16, 16, 3));
        assert_ne!(random_baseline_map(16, 16, 3), random_baseline_map(16, 16, 4));
    }

    #[test]
    fn random_mean_is_one_half() {
        let m = random_baseline_map(224, 224, 42);
        let mean = m.to_f64().iter().sum::<f64>() / (224.0 * 224.0);
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn cb_cam_native_size_is_one_hot() {
        let m = cb_cam_map(7, 7);
        for (i, &v) in m.values().iter().enumerate() {
            assert_eq!(v, if i == 24 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn cb_cam_is_flip_symmetric() {
        let m = cb_cam_map(224, 224);
        for r in 0..224 {
            for c in 0..224 {
                let v = m.get(r, c);
                assert_eq!(v, m.get(r, 223 - c));
                assert_eq!(v, m.get(223 - r, c));
            }
        }
    }
}
