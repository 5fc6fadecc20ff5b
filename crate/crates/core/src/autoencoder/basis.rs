//! Six signed axis bases and the directional weights that route a neighbor's
//! contribution onto them.

/// `+z, −z, +y, −y, +x, −x`; parameter blocks follow this order.
pub const BASES: [[f64; 3]; 6] = [
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
];

pub const NUM_BASES: usize = 6;

/// Squared cosine to each basis, restricted to the hemisphere the direction
/// points into. Since `Σ_a cos²(u, e_a) = 1` over the three axes, the weights
/// sum to one.
///
/// `u` must be nonzero; see [`member_weights`] for the zero-offset case.
pub fn dir_weights(u: &[f64; 3]) -> [f64; 6] {
    let n2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    debug_assert!(n2 > 0.0, "direction of a zero vector");
    let mut w = [0.0; 6];
    // basis pairs (2k, 2k+1) live on axis 2-k
    for k in 0..3 {
        let c = u[2 - k];
        let c2 = c * c / n2;
        if c > 0.0 {
            w[2 * k] = c2;
        } else if c < 0.0 {
            w[2 * k + 1] = c2;
        }
    }
    w
}

/// Weights for a member at `offset` from the center; the center itself is
/// spread evenly over all six bases.
pub fn member_weights(offset: &[f64; 3]) -> [f64; 6] {
    if offset.iter().all(|&c| c == 0.0) {
        [1.0 / 6.0; 6]
    } else {
        dir_weights(offset)
    }
}

/// Weights for the reversed direction (member → center).
pub fn reversed_weights(offset: &[f64; 3]) -> [f64; 6] {
    member_weights(&[-offset[0], -offset[1], -offset[2]])
}
