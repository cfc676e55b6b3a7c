//! The 21-joint skeleton and the 63-dim motion frame layout.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub const N_JOINTS: usize = 21;
pub const MOTION_DIM: usize = 63;
pub const AUDIO_DIM: usize = 35;
pub const FPS: f64 = 30.0;
pub const LAYOUT_VERSION: u32 = 1;

/// Joint whose exp-map x component is not stored.
pub const DROPPED_JOINT: usize = 12;
/// Number of joint-rotation dims in a motion frame.
pub const JOINT_DIMS: usize = 59;
pub const DIM_VERTICAL: usize = 59;
pub const DIM_FORWARD: usize = 60;
pub const DIM_LATERAL: usize = 61;
pub const DIM_HEADING: usize = 62;

pub const JOINT_NAMES: [&str; N_JOINTS] = [
    "Hips",
    "Spine",
    "Spine1",
    "Neck",
    "Head",
    "LeftShoulder",
    "LeftArm",
    "LeftForeArm",
    "LeftHand",
    "RightShoulder",
    "RightArm",
    "RightForeArm",
    "RightHand",
    "LeftUpLeg",
    "LeftLeg",
    "LeftFoot",
    "LeftToe",
    "RightUpLeg",
    "RightLeg",
    "RightFoot",
    "RightToe",
];

const PARENTS: [Option<usize>; N_JOINTS] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(2),
    Some(5),
    Some(6),
    Some(7),
    Some(2),
    Some(9),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
    Some(15),
    Some(0),
    Some(17),
    Some(18),
    Some(19),
];

const OFFSETS: [[f64; 3]; N_JOINTS] = [
    [0.0, 0.95, 0.0],
    [0.0, 0.10, 0.0],
    [0.0, 0.15, 0.0],
    [0.0, 0.22, 0.0],
    [0.0, 0.10, 0.0],
    [0.05, 0.18, 0.0],
    [0.12, 0.0, 0.0],
    [0.28, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.05, 0.18, 0.0],
    [-0.12, 0.0, 0.0],
    [-0.28, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
    [0.09, -0.05, 0.0],
    [0.0, -0.42, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, -0.05, 0.12],
    [-0.09, -0.05, 0.0],
    [0.0, -0.42, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, -0.05, 0.12],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub parent: Vec<Option<usize>>,
    /// Rest offset of each joint from its parent, in meters.
    pub offsets: Vec<[f64; 3]>,
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::standard()
    }
}

impl Skeleton {
    pub fn standard() -> Self {
        Self {
            joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            parent: PARENTS.to_vec(),
            offsets: OFFSETS.to_vec(),
        }
    }

    /// Checks the joint count and that `parent` describes one rooted tree.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.joint_names.len() == N_JOINTS
                && self.parent.len() == N_JOINTS
                && self.offsets.len() == N_JOINTS,
            "skeleton must have exactly {N_JOINTS} joints (got {} names, {} parents, {} offsets)",
            self.joint_names.len(),
            self.parent.len(),
            self.offsets.len()
        );
        let roots = self.parent.iter().filter(|p| p.is_none()).count();
        ensure!(roots == 1, "skeleton must have exactly one root, found {roots}");
        ensure!(self.parent[0].is_none(), "joint 0 must be the root");
        for (j, p) in self.parent.iter().enumerate() {
            if let Some(p) = *p {
                ensure!(p < N_JOINTS, "joint {j} has parent {p} out of range");
            }
            // walking up must reach the root within N_JOINTS steps
            let mut cur = j;
            let mut steps = 0;
            while let Some(p) = self.parent[cur] {
                cur = p;
                steps += 1;
                ensure!(steps <= N_JOINTS, "joint {j} is on a parent cycle");
            }
        }
        ensure!(
            self.offsets.iter().flatten().all(|v| v.is_finite()),
            "skeleton offsets must be finite"
        );
        Ok(())
    }
}

/// Frame dims holding the exp-map of `joint` (1..21), paired with the
/// exp-map component index each dim stores.
pub fn joint_slots(joint: usize) -> Vec<(usize, usize)> {
    assert!((1..N_JOINTS).contains(&joint));
    let mut base = 3 * (joint - 1);
    if joint > DROPPED_JOINT {
        base -= 1;
    }
    if joint == DROPPED_JOINT {
        vec![(base, 1), (base + 1, 2)]
    } else {
        vec![(base, 0), (base + 1, 1), (base + 2, 2)]
    }
}
