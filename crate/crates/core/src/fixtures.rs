//! Reference measures shared by tests, examples and experiments.

use crate::measure::{AtomicMeasure, Block, BlockMeasure};

/// Left endpoints of the `2^depth` intervals of the middle-thirds construction.
pub fn cantor_left_endpoints(depth: u32) -> Vec<f64> {
    let mut pts = vec![0.0];
    let mut scale = 1.0;
    for _ in 0..depth {
        scale /= 3.0;
        pts = pts.iter().flat_map(|&x| [x, x + 2.0 * scale]).collect();
    }
    pts
}

/// Uniform weights on the centers of the depth-`depth` Cantor intervals.
pub fn cantor_atoms(depth: u32) -> AtomicMeasure {
    let w = 3f64.powi(-(depth as i32));
    let m = 0.5f64.powi(depth as i32);
    let atoms: Vec<(f64, f64)> = cantor_left_endpoints(depth).into_iter().map(|x| (x + 0.5 * w, m)).collect();
    AtomicMeasure::canonicalize(&atoms).expect("cantor atoms")
}

/// Uniform blocks filling the depth-`depth` Cantor intervals.
pub fn cantor_blocks(depth: u32) -> BlockMeasure {
    let w = 3f64.powi(-(depth as i32));
    let m = 0.5f64.powi(depth as i32);
    BlockMeasure::new(
        cantor_left_endpoints(depth)
            .into_iter()
            .map(|x| Block { center: x + 0.5 * w, width: w, mass: m })
            .collect(),
    )
    .expect("cantor blocks")
}

/// Lebesgue measure split into `n` equal touching blocks.
pub fn lebesgue_blocks(n: usize) -> BlockMeasure {
    BlockMeasure::uniform_grid(n, 1.0 / n as f64).expect("touching blocks")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cantor_masses() {
        let c = cantor_blocks(6);
        assert_eq!(c.blocks().len(), 64);
        assert!((c.total_mass() - 1.0).abs() < 1e-14);
        assert!((c.ball_mass(1.0 / 6.0, 1.0 / 6.0) - 0.5).abs() < 1e-14);
        assert_eq!(lebesgue_blocks(256).blocks().len(), 256);
    }
}
