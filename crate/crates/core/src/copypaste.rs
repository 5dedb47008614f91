//! The CopyPaste primitive: random fixed-length crops, feature-level concatenation
//! and the label rule for concatenated items.
//!
//! A concatenation of an emotional utterance (emotion E) with a neutral one is labelled E
//! (N-CP); two utterances sharing emotion E concatenate to E (SE-CP).

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Axis};
use rand::Rng;
use thiserror::Error;

use crate::corpus::EmotionLabel;
use crate::features::FeatureMatrix;

#[derive(Error, Debug, PartialEq)]
pub enum CopyPasteError {
    #[error("cannot concatenate {a}-dim and {b}-dim features")]
    DimensionMismatch { a: usize, b: usize },
    #[error("SE-CP pair has different labels {0:?} and {1:?}")]
    MismatchedSameEmotion(String, String),
    #[error("N-CP pair has two non-neutral labels {0:?} and {1:?}")]
    NoNeutralInPair(String, String),
    #[error("scheme {0} does not label individual pairs")]
    NotAPairScheme(Scheme),
    #[error("unknown scheme {0:?}, expected none, n-cp, se-cp or n+se-cp")]
    UnknownScheme(String),
}

pub type Result<T> = std::result::Result<T, CopyPasteError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    None,
    /// Neutral CopyPaste.
    NCp,
    /// Same-emotion CopyPaste.
    SeCp,
    /// N-CP and SE-CP on separate halves of the augmented batches.
    NPlusSeCp,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::None, Scheme::NCp, Scheme::SeCp, Scheme::NPlusSeCp];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::None => "none",
            Scheme::NCp => "n-cp",
            Scheme::SeCp => "se-cp",
            Scheme::NPlusSeCp => "n+se-cp",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = CopyPasteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Scheme::None),
            "n-cp" | "ncp" => Ok(Scheme::NCp),
            "se-cp" | "secp" => Ok(Scheme::SeCp),
            "n+se-cp" | "nsecp" => Ok(Scheme::NPlusSeCp),
            _ => Err(CopyPasteError::UnknownScheme(s.to_string())),
        }
    }
}

/// Number of frames in a crop of `crop_seconds` at the matrix's frame shift.
pub fn crop_frames(crop_seconds: f64, frame_shift_s: f64) -> usize {
    // the epsilon keeps 4.0 / 0.01 from landing on 399
    ((crop_seconds / frame_shift_s) + 1e-6).floor() as usize
}

/// Random contiguous crop of `crop_seconds`; matrices that are not longer than that are
/// returned whole.
pub fn random_crop<R: Rng + ?Sized>(
    feats: &FeatureMatrix,
    crop_seconds: f64,
    rng: &mut R,
) -> FeatureMatrix {
    let len = crop_frames(crop_seconds, feats.frame_shift_s()).max(1);
    let t = feats.frames();
    if t <= len {
        return feats.clone();
    }
    let start = rng.gen_range(0..=t - len);
    feats.with_values(feats.values().slice(s![start..start + len, ..]).to_owned())
}

/// Stacks `a` then `b` in time, or `b` then `a` when `order_swap` is set.
pub fn concat_features(
    a: &FeatureMatrix,
    b: &FeatureMatrix,
    order_swap: bool,
) -> Result<FeatureMatrix> {
    if a.dim() != b.dim() {
        return Err(CopyPasteError::DimensionMismatch {
            a: a.dim(),
            b: b.dim(),
        });
    }
    let (first, second) = if order_swap { (b, a) } else { (a, b) };
    let values = concatenate(Axis(0), &[first.values().view(), second.values().view()])
        .expect("column counts checked");
    Ok(first.with_values(values))
}

/// Label of a concatenated pair under `scheme`.
pub fn concat_label(la: &EmotionLabel, lb: &EmotionLabel, scheme: Scheme) -> Result<EmotionLabel> {
    match scheme {
        Scheme::NCp => match (la.is_neutral, lb.is_neutral) {
            (true, _) => Ok(lb.clone()),
            (false, true) => Ok(la.clone()),
            (false, false) => Err(CopyPasteError::NoNeutralInPair(
                la.name.clone(),
                lb.name.clone(),
            )),
        },
        Scheme::SeCp => {
            if la == lb {
                Ok(la.clone())
            } else {
                Err(CopyPasteError::MismatchedSameEmotion(
                    la.name.clone(),
                    lb.name.clone(),
                ))
            }
        }
        other => Err(CopyPasteError::NotAPairScheme(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(t: usize, tag: f64) -> FeatureMatrix {
        FeatureMatrix::from_values(Array2::from_shape_fn((t, 23), |(r, c)| {
            tag + r as f64 + c as f64 / 100.0
        }))
        .unwrap()
    }

    fn five_labels() -> Vec<EmotionLabel> {
        let mut v = vec![EmotionLabel::new("neutral", true)];
        for n in ["angry", "happy", "sad", "disgust"] {
            v.push(EmotionLabel::new(n, false));
        }
        v
    }

    #[test]
    fn crop_is_400_frames_with_offset_in_range() {
        let m = matrix(600, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen_hi = false;
        for _ in 0..500 {
            let c = random_crop(&m, 4.0, &mut rng);
            assert_eq!(c.frames(), 400);
            let offset = c.values()[(0, 0)] as usize;
            assert!(offset <= 200);
            seen_hi |= offset > 150;
            // contiguous
            assert_eq!(c.values()[(399, 0)] as usize, offset + 399);
        }
        assert!(seen_hi);
    }

    #[test]
    fn short_matrix_is_not_cropped() {
        let m = matrix(300, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_crop(&m, 4.0, &mut rng), m);
        let m = matrix(400, 0.0);
        assert_eq!(random_crop(&m, 4.0, &mut rng), m);
    }

    #[test]
    fn crop_is_seed_deterministic() {
        let m = matrix(900, 0.0);
        let a = random_crop(&m, 4.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = random_crop(&m, 4.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn concat_order_and_shape() {
        let a = matrix(10, 1000.0);
        let b = matrix(400, 0.0);
        let ab = concat_features(&a, &b, false).unwrap();
        assert_eq!(ab.frames(), 410);
        assert_eq!(ab.values().slice(s![0..10, ..]), a.values());
        assert_eq!(
            concat_features(&a, &b, true).unwrap(),
            concat_features(&b, &a, false).unwrap()
        );
        let narrow = FeatureMatrix::from_values(Array2::zeros((3, 13))).unwrap();
        assert!(matches!(
            concat_features(&a, &narrow, false),
            Err(CopyPasteError::DimensionMismatch { a: 23, b: 13 })
        ));
    }

    #[test]
    fn label_rule_examples() {
        let l = five_labels();
        let (neutral, angry, happy) = (&l[0], &l[1], &l[2]);
        assert_eq!(concat_label(neutral, angry, Scheme::NCp).unwrap(), *angry);
        assert_eq!(
            concat_label(neutral, neutral, Scheme::NCp).unwrap(),
            *neutral
        );
        assert_eq!(concat_label(happy, happy, Scheme::SeCp).unwrap(), *happy);
        assert!(concat_label(angry, happy, Scheme::NCp).is_err());
        assert!(concat_label(angry, happy, Scheme::SeCp).is_err());
        assert!(concat_label(angry, angry, Scheme::None).is_err());
        assert!(concat_label(angry, angry, Scheme::NPlusSeCp).is_err());
    }

    #[test]
    fn label_rule_is_symmetric_and_neutral_only_for_neutral_pair() {
        let l = five_labels();
        for a in &l {
            for b in &l {
                for scheme in [Scheme::NCp, Scheme::SeCp] {
                    assert_eq!(
                        concat_label(a, b, scheme).ok(),
                        concat_label(b, a, scheme).ok()
                    );
                }
                if let Ok(out) = concat_label(a, b, Scheme::NCp) {
                    assert_eq!(out.is_neutral, a.is_neutral && b.is_neutral);
                }
            }
        }
    }

    #[test]
    fn scheme_parsing() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("mixup".parse::<Scheme>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn concat_length_adds(ta in 1usize..200, tb in 1usize..200, swap in proptest::bool::ANY) {
            let out = concat_features(&matrix(ta, 0.0), &matrix(tb, 0.0), swap).unwrap();
            prop_assert_eq!(out.frames(), ta + tb);
        }
    }
}
