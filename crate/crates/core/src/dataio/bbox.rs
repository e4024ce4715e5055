use serde::{Deserialize, Serialize};

use crate::error::{HireError, Result};

/// Axis-aligned box in pixel coordinates, `x2 > x1` and `y2 > y1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BoundingBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(HireError::InvalidBox(self.to_array()));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 as f64 - self.x1 as f64) * (self.y2 as f64 - self.y1 as f64)
    }
}

/// Intersection over union, in `[0, 1]`. Disjoint boxes give 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x2.min(b.x2) as f64 - a.x1.max(b.x1) as f64).max(0.0);
    let h = (a.y2.min(b.y2) as f64 - a.y1.max(b.y1) as f64).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f32, y1: f32, x2: f32, y2: f32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &b(10.0, 0.0, 20.0, 10.0)), 0.0);
        // 50 / (100 + 100 - 50)
        let v = iou(&a, &b(5.0, 0.0, 15.0, 10.0));
        assert!((v - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(1.0, 1.0, 1.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 2.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f32::NAN, 1.0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0f32..100.0, 0f32..100.0, 0.5f32..50.0, 0.5f32..50.0)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
