//! Square (Gray-coded) and cross QAM constellations normalised to unit mean energy.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

pub const SUPPORTED_ORDERS: [usize; 5] = [64, 128, 256, 512, 1024];

#[derive(Debug, Clone, PartialEq)]
pub struct QamConstellation {
    order: usize,
    points: Vec<Complex64>,
    /// Scale applied to the integer grid to reach unit mean energy.
    unit: f64,
}

impl QamConstellation {
    pub fn new(order: usize) -> Result<Self> {
        let bits = order.trailing_zeros();
        if !order.is_power_of_two() || !(2..=20).contains(&bits) {
            return Err(Error::InvalidParameter(format!(
                "QAM order must be a power of two >= 4, got {order}"
            )));
        }
        let grid = if bits.is_multiple_of(2) {
            square_grid(bits / 2)
        } else {
            cross_grid(bits)
        };
        let energy = grid
            .iter()
            .map(|&(i, q)| (i * i + q * q) as f64)
            .sum::<f64>()
            / order as f64;
        let unit = 1.0 / energy.sqrt();
        let points = grid
            .into_iter()
            .map(|(i, q)| Complex64::new(i as f64 * unit, q as f64 * unit))
            .collect();
        Ok(Self {
            order,
            points,
            unit,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Distance between adjacent grid levels after normalisation.
    pub fn min_distance(&self) -> f64 {
        2.0 * self.unit
    }

    pub fn point(&self, index: usize) -> Result<Complex64> {
        self.points.get(index).copied().ok_or_else(|| {
            invalid(format!(
                "symbol index {index} out of range for {}-QAM",
                self.order
            ))
        })
    }
}

fn gray(n: i64) -> i64 {
    n ^ (n >> 1)
}

/// Index bits split as [I bits | Q bits]; each half is the Gray code of the level position.
fn square_grid(bits_per_axis: u32) -> Vec<(i64, i64)> {
    let side = 1i64 << bits_per_axis;
    let mut position_of_code = vec![0i64; side as usize];
    for p in 0..side {
        position_of_code[gray(p) as usize] = p;
    }
    let level = |code: i64| 2 * position_of_code[code as usize] - (side - 1);
    (0..side * side)
        .map(|idx| (level(idx >> bits_per_axis), level(idx & (side - 1))))
        .collect()
}

/// Rectangular grid of side 3·2^(m-1) with a 2^(m-2) square cut from each corner,
/// enumerated row-major from the top-left.
fn cross_grid(bits: u32) -> Vec<(i64, i64)> {
    let m = (bits - 1) / 2;
    if m < 2 {
        // 8-QAM and 2-QAM have no cross form; fall back to a 2×(order/2) rectangle.
        let cols = 1i64 << (bits - 1);
        return (0..2)
            .flat_map(|r| (0..cols).map(move |c| (2 * c - (cols - 1), 2 * r - 1)))
            .collect();
    }
    let side = 3 * (1i64 << (m - 1));
    let cut = 1i64 << (m - 2);
    let mut out = Vec::with_capacity(1 << bits);
    for row in 0..side {
        for col in 0..side {
            let edge_r = row < cut || row >= side - cut;
            let edge_c = col < cut || col >= side - cut;
            if edge_r && edge_c {
                continue;
            }
            out.push((2 * col - (side - 1), (side - 1) - 2 * row));
        }
    }
    out
}

pub fn qam_map(indices: &[usize], constellation: &QamConstellation) -> Result<Vec<Complex64>> {
    indices.iter().map(|&i| constellation.point(i)).collect()
}

/// Nearest-point decision; ties resolve to the lower index.
pub fn qam_slice(estimates: &[Complex64], constellation: &QamConstellation) -> Vec<usize> {
    estimates
        .iter()
        .map(|z| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, p) in constellation.points.iter().enumerate() {
                let d = (z - p).norm_sqr();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect()
}
