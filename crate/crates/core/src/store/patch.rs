use super::frame::ParticleFrame;
use crate::{Error, Result};

/// Particles within `radius` of `center`, in the frame's normalized coordinates.
///
/// Members are ordered by particle index. `rel_positions` map the fixed
/// `2r` box around the center onto `[0,1]³`, so identical local shapes give
/// identical network inputs wherever they occur.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: [f64; 3],
    pub radius: f64,
    pub members: Vec<usize>,
    /// `member − center`, normalized frame units.
    pub offsets: Vec<[f64; 3]>,
    pub rel_positions: Vec<[f64; 3]>,
    /// Row-major `n × d`.
    pub attributes: Vec<f64>,
    pub attr_dim: usize,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn attribute_row(&self, j: usize) -> &[f64] {
        &self.attributes[j * self.attr_dim..(j + 1) * self.attr_dim]
    }

    /// Translation applied before scaling (the patch center).
    pub fn translation(&self) -> [f64; 3] {
        self.center
    }

    /// Edge length of the box mapped onto `[0,1]`.
    pub fn scale(&self) -> f64 {
        2.0 * self.radius
    }

    /// Inverse of the rel-position mapping.
    pub fn to_frame_coords(&self, rel: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (rel[a] - 0.5) * self.scale() + self.center[a])
    }

    /// Builds a patch from explicit member data (offsets relative to the center).
    pub fn from_members(
        center: [f64; 3],
        radius: f64,
        members: Vec<usize>,
        offsets: Vec<[f64; 3]>,
        attributes: Vec<f64>,
        attr_dim: usize,
    ) -> Self {
        let scale = 2.0 * radius;
        let rel_positions = offsets
            .iter()
            .map(|o| std::array::from_fn(|a| (o[a] / scale + 0.5).clamp(0.0, 1.0)))
            .collect();
        Patch {
            center,
            radius,
            members,
            offsets,
            rel_positions,
            attributes,
            attr_dim,
        }
    }
}

fn check_query(center: &[f64; 3], radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(Error::invalid(format!("radius {radius} outside (0,1]")));
    }
    if !center.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::invalid(format!("center {center:?} outside [0,1]^3")));
    }
    Ok(())
}

/// Exact radius neighborhood `{q : ‖center − q‖ ≤ radius}` via the frame's kd-tree.
pub fn query_patch(frame: &ParticleFrame, center: [f64; 3], radius: f64) -> Result<Patch> {
    check_query(&center, radius)?;
    let members = frame.index().within_radius(&center, radius);
    if members.is_empty() {
        return Err(Error::EmptyPatch { center, radius });
    }
    let d = frame.attr_dim();
    let offsets = members
        .iter()
        .map(|&i| {
            let p = frame.position(i);
            [p[0] - center[0], p[1] - center[1], p[2] - center[2]]
        })
        .collect();
    let mut attributes = Vec::with_capacity(members.len() * d);
    for &i in &members {
        attributes.extend_from_slice(frame.attribute_row(i));
    }
    Ok(Patch::from_members(
        center, radius, members, offsets, attributes, d,
    ))
}

/// Patch centered on particle `i`; never empty since it contains `i`.
pub fn particle_patch(frame: &ParticleFrame, i: usize, radius: f64) -> Result<Patch> {
    query_patch(frame, *frame.position(i), radius)
}
