use serde::{Deserialize, Serialize};

use super::StoreError;

/// Rounding rule for the half-integer midpoints that arise from frame arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rounding {
    /// `x.5` rounds toward +infinity. Commutes with integer shifts.
    #[default]
    HalfUp,
    /// `x.5` rounds to the even neighbour.
    HalfEven,
}

impl Rounding {
    /// Rounds `n / 2` to an integer.
    fn half(self, n: i64) -> i64 {
        let floor = n.div_euclid(2);
        if n.rem_euclid(2) == 0 {
            return floor;
        }
        match self {
            Rounding::HalfUp => floor + 1,
            Rounding::HalfEven => {
                if floor % 2 == 0 {
                    floor
                } else {
                    floor + 1
                }
            }
        }
    }
}

/// Frame indices around one annotated ES (`i0`) / ED (`i2`) pair.
///
/// `i1` is the ES–ED midpoint, `i4` the estimated next ES frame (the ED–ES
/// phase is taken as half the ES–ED span, i.e. diastole is two thirds of the
/// cycle) and `i3` the ED–next-ES midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameIndices {
    pub i0: i64,
    pub i1: i64,
    pub i2: i64,
    pub i3: i64,
    pub i4: i64,
}

impl FrameIndices {
    /// False when the chain `i0 < i1 < i2 < i3 <= i4` does not hold, which
    /// happens for spans too short to have distinct midpoints.
    pub fn is_ordered(&self) -> bool {
        self.i0 < self.i1 && self.i1 < self.i2 && self.i2 < self.i3 && self.i3 <= self.i4
    }

    pub fn is_degenerate(&self) -> bool {
        !self.is_ordered()
    }
}

pub fn derive_frame_indices(i0: i64, i2: i64) -> Result<FrameIndices, StoreError> {
    derive_frame_indices_with(i0, i2, Rounding::default())
}

pub fn derive_frame_indices_with(i0: i64, i2: i64, rounding: Rounding) -> Result<FrameIndices, StoreError> {
    if i0 < 0 || i2 <= i0 {
        return Err(StoreError::FrameOrder { i0, i2 });
    }
    let i1 = rounding.half(i0 + i2);
    let i4 = i2 + rounding.half(i2 - i0);
    let i3 = rounding.half(i2 + i4);
    Ok(FrameIndices { i0, i1, i2, i3, i4 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let f = derive_frame_indices(10, 40).unwrap();
        assert_eq!((f.i1, f.i3, f.i4), (25, 48, 55));
        assert!(f.is_ordered());

        let f = derive_frame_indices(12, 36).unwrap();
        assert_eq!((f.i1, f.i3, f.i4), (24, 42, 48));
    }

    #[test]
    fn smallest_span() {
        let f = derive_frame_indices(0, 2).unwrap();
        assert_eq!((f.i1, f.i3, f.i4), (1, 3, 3));
        assert!(f.is_ordered());

        // Half-even lands i3 on i2 here.
        let f = derive_frame_indices_with(0, 2, Rounding::HalfEven).unwrap();
        assert_eq!((f.i1, f.i3, f.i4), (1, 2, 3));
        assert!(f.is_degenerate());

        let f = derive_frame_indices(4, 5).unwrap();
        assert!(f.is_degenerate());
    }

    #[test]
    fn half_even_matches_on_worked_example() {
        let f = derive_frame_indices_with(10, 40, Rounding::HalfEven).unwrap();
        assert_eq!((f.i1, f.i3, f.i4), (25, 48, 55));
    }

    #[test]
    fn ordering_errors() {
        assert!(matches!(derive_frame_indices(5, 5), Err(StoreError::FrameOrder { .. })));
        assert!(matches!(derive_frame_indices(9, 3), Err(StoreError::FrameOrder { .. })));
        assert!(matches!(derive_frame_indices(-1, 3), Err(StoreError::FrameOrder { .. })));
    }

    #[test]
    fn rounding_half() {
        assert_eq!(Rounding::HalfUp.half(5), 3);
        assert_eq!(Rounding::HalfUp.half(-5), -2);
        assert_eq!(Rounding::HalfEven.half(5), 2);
        assert_eq!(Rounding::HalfEven.half(7), 4);
        assert_eq!(Rounding::HalfEven.half(8), 4);
    }

    proptest! {
        #[test]
        fn translation_equivariant(i0 in 0i64..10_000, span in 1i64..2_000, k in 0i64..10_000) {
            let a = derive_frame_indices(i0, i0 + span).unwrap();
            let b = derive_frame_indices(i0 + k, i0 + span + k).unwrap();
            prop_assert_eq!(
                (b.i0, b.i1, b.i2, b.i3, b.i4),
                (a.i0 + k, a.i1 + k, a.i2 + k, a.i3 + k, a.i4 + k)
            );
        }

        #[test]
        fn ordered_for_span_at_least_two(i0 in 0i64..10_000, span in 2i64..2_000) {
            prop_assert!(derive_frame_indices(i0, i0 + span).unwrap().is_ordered());
        }
    }
}
