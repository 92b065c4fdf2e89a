use serde::{Deserialize, Serialize};

/// One labeled object in image-pixel space.
///
/// `w`/`h` are present only for box labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub class_id: usize,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

impl ObjectAnnotation {
    pub fn point(class_id: usize, x: f64, y: f64) -> Self {
        Self {
            class_id,
            x,
            y,
            w: None,
            h: None,
        }
    }

    pub fn boxed(class_id: usize, x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            class_id,
            x,
            y,
            w: Some(w),
            h: Some(h),
        }
    }

    pub fn is_box(&self) -> bool {
        self.w.is_some() && self.h.is_some()
    }

    /// Same object shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

/// A decoded, image-space detection with its confidence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub score: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Grid cell `[row, col]` that emitted this detection, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<[usize; 2]>,
}

impl Detection {
    pub fn annotation(&self) -> ObjectAnnotation {
        ObjectAnnotation {
            class_id: self.class_id,
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
        }
    }
}
