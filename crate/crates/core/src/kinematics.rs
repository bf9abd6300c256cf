//! Planar roto-translation between an intrinsic joint state `[θ, l]` and an
//! extrinsic limb pose `[p_x, p_y, φ]`, with its analytic Jacobians.

use nalgebra::{Matrix3, Matrix3x2, Vector2, Vector3};

/// `[θ, l]`: joint angle relative to the parent limb and limb length.
pub type Joint = Vector2<f64>;
/// `[p_x, p_y, φ]`: position of the limb extremity and absolute orientation.
pub type Pose = Vector3<f64>;

/// `T(x_i, x_e) = [p_x + l cos(θ+φ), p_y + l sin(θ+φ), φ + θ]`.
#[inline]
pub fn roto_translate(joint: &Joint, parent: &Pose) -> Pose {
    let (theta, len) = (joint[0], joint[1]);
    let a = theta + parent[2];
    Pose::new(
        parent[0] + len * a.cos(),
        parent[1] + len * a.sin(),
        a,
    )
}

/// `∂T/∂[θ, l]`.
#[inline]
pub fn jacobian_joint(joint: &Joint, parent: &Pose) -> Matrix3x2<f64> {
    let (theta, len) = (joint[0], joint[1]);
    let (s, c) = (theta + parent[2]).sin_cos();
    Matrix3x2::new(-len * s, c, len * c, s, 1.0, 0.0)
}

/// `∂T/∂[p_x, p_y, φ]` of the parent pose.
#[inline]
pub fn jacobian_parent(joint: &Joint, parent: &Pose) -> Matrix3<f64> {
    let (theta, len) = (joint[0], joint[1]);
    let (s, c) = (theta + parent[2]).sin_cos();
    Matrix3::new(1.0, 0.0, -len * s, 0.0, 1.0, len * c, 0.0, 0.0, 1.0)
}

/// Poses of every link of a serial chain rooted at `base`.
pub fn forward_chain(base: &Pose, joints: &[Joint]) -> Vec<Pose> {
    let mut out = Vec::with_capacity(joints.len());
    let mut pose = *base;
    for j in joints {
        pose = roto_translate(j, &pose);
        out.push(pose);
    }
    out
}
