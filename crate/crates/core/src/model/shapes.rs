//! Output sizes of the full convolutional architecture, stage by stage.
//!
//! The desk-scale model does not run this network; the table documents the layout the
//! attention head was built for and lets tests pin it down.

use std::fmt;

use super::{ModelError, Result};

pub const INPUT_DIM: usize = 23;
pub const FULL_HEADS: usize = 32;
pub const FULL_CHANNELS: usize = 128;
pub const FULL_FC: usize = 400;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: &'static str,
    pub dims: Vec<usize>,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        f.write_str(&dims.join("x"))
    }
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Stage output sizes for `frames` input frames and `num_classes` outputs.
pub fn validate_table1_shapes(frames: usize, num_classes: usize) -> Result<Vec<Stage>> {
    if frames == 0 {
        return Err(ModelError::NonPositiveFrames);
    }
    let mut stages = vec![
        Stage {
            name: "input",
            dims: vec![frames, INPUT_DIM],
        },
        Stage {
            name: "conv 3x3, stride 1",
            dims: vec![frames, INPUT_DIM],
        },
    ];
    let (mut t, mut f) = (frames, INPUT_DIM);
    for name in [
        "residual block, stride 2",
        "residual block, stride 2",
        "residual block, stride 2",
    ] {
        t = half(t);
        f = half(f);
        stages.push(Stage {
            name,
            dims: vec![t, f],
        });
    }
    stages.push(Stage {
        name: "average pool 1x3",
        dims: vec![t],
    });
    stages.push(Stage {
        name: "attention pooling",
        dims: vec![FULL_HEADS, FULL_CHANNELS],
    });
    stages.push(Stage {
        name: "fc",
        dims: vec![FULL_FC],
    });
    stages.push(Stage {
        name: "fc (classes)",
        dims: vec![num_classes],
    });
    Ok(stages)
}

/// Renders the table as `name<TAB>size` lines.
pub fn shapes_to_text(stages: &[Stage]) -> String {
    stages
        .iter()
        .map(|s| format!("{}\t{}\n", s.name, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(frames: usize) -> Vec<Vec<usize>> {
        validate_table1_shapes(frames, 4)
            .unwrap()
            .into_iter()
            .map(|s| s.dims)
            .collect()
    }

    #[test]
    fn reference_column_for_160_frames() {
        let expected: Vec<Vec<usize>> = vec![
            vec![160, 23],
            vec![160, 23],
            vec![80, 12],
            vec![40, 6],
            vec![20, 3],
            vec![20],
            vec![32, 128],
            vec![400],
            vec![4],
        ];
        assert_eq!(dims(160), expected);
        let text: Vec<String> = validate_table1_shapes(160, 4)
            .unwrap()
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(text[2], "80x12");
    }

    #[test]
    fn frequency_axis_halves_with_ceiling() {
        let d = dims(8);
        assert_eq!(d[2..5], [vec![4, 12], vec![2, 6], vec![1, 3]]);
    }

    #[test]
    fn doubling_frames_doubles_time_axis() {
        let (a, b) = (dims(80), dims(160));
        for i in 0..6 {
            assert_eq!(b[i][0], 2 * a[i][0]);
        }
        assert_eq!(a[6..], b[6..]);
    }

    #[test]
    fn zero_frames_is_an_error() {
        assert!(validate_table1_shapes(0, 4).is_err());
    }
}
