//! The 15-joint skeleton used throughout (PoseTrack joint order).

pub const JOINT_COUNT: usize = 15;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "head_bottom",
    "nose",
    "head_top",
];

pub const HEAD_BOTTOM: usize = 12;
pub const HEAD_TOP: usize = 14;

pub const EDGES: [(usize, usize); 15] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (4, 5),
    (6, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (2, 8),
    (3, 9),
    (8, 12),
    (9, 12),
    (12, 14),
];

/// Left/right joint pairs exchanged by a horizontal flip.
pub const FLIP_PAIRS: [(usize, usize); 6] = [(0, 5), (1, 4), (2, 3), (6, 11), (7, 10), (8, 9)];

/// Joints kept by an upper-body truncation; the rest form the lower body.
pub const UPPER_BODY: [usize; 9] = [6, 7, 8, 9, 10, 11, 12, 13, 14];

/// Rest pose in person-height units, pelvis centre at the origin, y down.
/// The person's right side is on the image left.
pub const TEMPLATE: [(f64, f64); JOINT_COUNT] = [
    (-0.12, 0.50),
    (-0.10, 0.25),
    (-0.08, 0.0),
    (0.08, 0.0),
    (0.10, 0.25),
    (0.12, 0.50),
    (-0.25, -0.05),
    (-0.20, -0.22),
    (-0.13, -0.40),
    (0.13, -0.40),
    (0.20, -0.22),
    (0.25, -0.05),
    (0.0, -0.45),
    (0.0, -0.53),
    (0.0, -0.62),
];

/// Index permutation applied to joints under a horizontal flip.
pub fn flip_permutation(joints: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..joints).collect();
    if joints == JOINT_COUNT {
        for (a, b) in FLIP_PAIRS {
            perm.swap(a, b);
        }
    }
    perm
}

/// Column groups of the evaluation table and the joints pooled into each.
pub fn table_columns() -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("Head", vec![12, 13, 14]),
        ("Shoulder", vec![8, 9]),
        ("Elbow", vec![7, 10]),
        ("Wrist", vec![6, 11]),
        ("Hip", vec![2, 3]),
        ("Knee", vec![1, 4]),
        ("Ankle", vec![0, 5]),
    ]
}
