//! Landmark-driven face-part cropping.
//!
//! Slices are half-open `rows[a,b) x cols[c,d)`. Offsets use integer division
//! truncating toward zero. Every bound is clamped to the image; a part whose
//! clamped width or height is below 20 pixels is kept but flagged invalid.

use image::{ImageBuffer, Pixel};
use serde::{Deserialize, Serialize};

use crate::backend::{BoundingBox, Landmarks68};
use crate::error::{Error, Result};
use crate::raster::{self, Rect};

pub const MIN_PATCH_SIDE: i64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatchKind {
    /// Eye band (`ep`).
    Eye,
    /// Head / hair region above the brows (`hp`).
    Head,
    /// Chin and jaw below the mouth corners (`bp`).
    Beard,
    /// Between nose base and mouth corners (`mp`).
    Mustache,
}

impl PatchKind {
    pub const ALL: [PatchKind; 4] = [PatchKind::Eye, PatchKind::Head, PatchKind::Beard, PatchKind::Mustache];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            PatchKind::Eye => "ep",
            PatchKind::Head => "hp",
            PatchKind::Beard => "bp",
            PatchKind::Mustache => "mp",
        }
    }
}

/// The landmark coordinates the cropping rule reads, named by landmark index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropPoints {
    pub jaw_left: (i64, i64),      // l[0]
    pub jaw_right: (i64, i64),     // l[16]
    pub nose_bridge: (i64, i64),   // l[29], read but unused
    pub brow_left: (i64, i64),     // l[19]
    pub brow_right: (i64, i64),    // l[24]
    pub jaw_low_left: (i64, i64),  // l[4]
    pub jaw_low_right: (i64, i64), // l[12]
    pub chin: (i64, i64),          // l[8]
    pub nose_tip: (i64, i64),      // l[30]
    pub nose_base: (i64, i64),     // l[33]
    pub nostril_left: (i64, i64),  // l[31]
    pub lower_lip: (i64, i64),     // l[57], read but unused
}

impl CropPoints {
    pub fn from_landmarks(l: &Landmarks68) -> Self {
        CropPoints {
            jaw_left: l.point(0),
            jaw_right: l.point(16),
            nose_bridge: l.point(29),
            brow_left: l.point(19),
            brow_right: l.point(24),
            jaw_low_left: l.point(4),
            jaw_low_right: l.point(12),
            chin: l.point(8),
            nose_tip: l.point(30),
            nose_base: l.point(33),
            nostril_left: l.point(31),
            lower_lip: l.point(57),
        }
    }
}

/// Intermediate integers of the cropping rule, exposed for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropOffsets {
    pub up: i64,
    pub down: i64,
    pub left: i64,
    pub head: i64,
    /// Top of the head patch after the `max(0, y - head)` adjustment.
    pub head_top: i64,
}

/// Unclamped rectangles (in face-image coordinates) plus the offsets that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub rects: [Rect; 4],
    pub offsets: CropOffsets,
    pub points: CropPoints,
}

impl PatchGeometry {
    pub fn rect(&self, kind: PatchKind) -> Rect {
        self.rects[kind.index()]
    }
}

/// Computes the four part rectangles from the face rect and its landmarks.
pub fn patch_geometry(rect: &BoundingBox, landmarks: &Landmarks68) -> Result<PatchGeometry> {
    if rect.w() <= 0 || rect.h() <= 0 {
        return Err(Error::InvalidInput(format!("degenerate face rect {:?}", rect.rect)));
    }
    let (x, y) = (rect.x(), rect.y());
    let p = CropPoints::from_landmarks(landmarks);
    let (x1, y1) = p.jaw_left;
    let (x2, _) = p.jaw_right;
    let (_, y5) = p.brow_right;
    let (x6, y6) = p.jaw_low_left;
    let (x7, _) = p.jaw_low_right;
    let (_, y8) = p.chin;
    let (_, y9) = p.nose_tip;
    let (_, y10) = p.nose_base;
    let (_, y11) = p.nostril_left;

    let up = (y8 - y1) / 3;
    let down = (y11 - y9) / 3;
    let left = (x1 - x) / 2;
    let ep = Rect::new(x1 - left, y1 - up, x2 + left, y6 + down);

    let head = y8 - y1;
    let head_top = if y - head <= 0 { 0 } else { y - head };
    // The raw rect keeps `y - head`; clamping to the image reproduces the
    // `max(0, .)` step exactly and keeps the raw geometry translation-equivariant.
    let hp = Rect::new(x, y - head, x2, y5);
    let bp = Rect::new(x6, y6, x7, y8);
    let mp = Rect::new(x6, y10, x7, y6);

    Ok(PatchGeometry {
        rects: [ep, hp, bp, mp],
        offsets: CropOffsets {
            up,
            down,
            left,
            head,
            head_top,
        },
        points: p,
    })
}

/// The four cropped parts of one face.
#[derive(Debug, Clone)]
pub struct FacePatches<P: Pixel> {
    pub patches: [ImageBuffer<P, Vec<P::Subpixel>>; 4],
    /// Rectangles after clamping to the image.
    pub rects: [Rect; 4],
    pub geometry: PatchGeometry,
    pub valid: [bool; 4],
}

impl<P: Pixel> FacePatches<P> {
    pub fn get(&self, kind: PatchKind) -> Option<&ImageBuffer<P, Vec<P::Subpixel>>> {
        self.valid[kind.index()].then(|| &self.patches[kind.index()])
    }

    pub fn rect(&self, kind: PatchKind) -> Rect {
        self.rects[kind.index()]
    }

    pub fn is_valid(&self, kind: PatchKind) -> bool {
        self.valid[kind.index()]
    }
}

/// Crops eye, head, beard and mustache parts out of `face_image`.
pub fn crop_face_patches<P: Pixel>(
    face_image: &ImageBuffer<P, Vec<P::Subpixel>>,
    rect: &BoundingBox,
    landmarks: &Landmarks68,
) -> Result<FacePatches<P>> {
    let geometry = patch_geometry(rect, landmarks)?;
    let (w, h) = face_image.dimensions();
    let rects = geometry.rects.map(|r| r.clamp_to(w, h));
    let valid = rects.map(|r| r.width() >= MIN_PATCH_SIDE && r.height() >= MIN_PATCH_SIDE);
    let patches = rects.map(|r| raster::crop(face_image, r));
    Ok(FacePatches {
        patches,
        rects,
        geometry,
        valid,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use image::{GrayImage, Luma};
    use proptest::prelude::*;

    /// Hand-placed landmarks; indices not read by the cropping rule sit at the face center.
    pub(crate) fn trace_landmarks() -> Landmarks68 {
        let mut l = Landmarks68::new([[200, 250]; 68]);
        for (i, x, y) in [
            (0, 100, 200),
            (16, 300, 200),
            (19, 140, 160),
            (24, 260, 160),
            (4, 110, 290),
            (12, 290, 290),
            (8, 200, 340),
            (30, 200, 250),
            (33, 200, 270),
            (31, 180, 262),
        ] {
            l.set(i, x, y);
        }
        l
    }

    pub(crate) fn trace_rect() -> BoundingBox {
        BoundingBox::new(100, 80, 200, 240, 1.0)
    }

    #[test]
    fn hand_trace() {
        let img = GrayImage::new(400, 400);
        let p = crop_face_patches(&img, &trace_rect(), &trace_landmarks()).unwrap();
        let o = p.geometry.offsets;
        assert_eq!((o.up, o.down, o.left, o.head, o.head_top), (46, 4, 0, 140, 0));
        assert_eq!(p.rect(PatchKind::Eye), Rect::new(100, 154, 300, 294));
        assert_eq!(p.rect(PatchKind::Head), Rect::new(100, 0, 300, 160));
        assert_eq!(p.rect(PatchKind::Beard), Rect::new(110, 290, 290, 340));
        assert_eq!(p.rect(PatchKind::Mustache), Rect::new(110, 270, 290, 290));
        assert_eq!(p.valid, [true; 4]);
        assert_eq!(p.patches[0].dimensions(), (200, 140));
    }

    #[test]
    fn short_mustache_patch_is_flagged() {
        let mut l = trace_landmarks();
        l.set(33, 200, 272);
        let p = crop_face_patches(&GrayImage::new(400, 400), &trace_rect(), &l).unwrap();
        assert_eq!(p.rect(PatchKind::Mustache).height(), 18);
        assert_eq!(p.valid, [true, true, true, false]);
        assert!(p.get(PatchKind::Mustache).is_none());
    }

    #[test]
    fn translation_by_fifty() {
        let a = patch_geometry(&trace_rect(), &trace_landmarks()).unwrap();
        let r = trace_rect();
        let moved = BoundingBox::new(r.x() + 50, r.y() + 50, r.w(), r.h(), 1.0);
        let b = patch_geometry(&moved, &trace_landmarks().translate(50, 50)).unwrap();
        for k in PatchKind::ALL {
            assert_eq!(b.rect(k), a.rect(k).translate(50, 50));
        }
        // After clamping the head patch still starts at row 0 (130 - 140 < 0).
        let p = crop_face_patches(&GrayImage::new(500, 500), &moved, &trace_landmarks().translate(50, 50)).unwrap();
        assert_eq!(p.rect(PatchKind::Head), Rect::new(150, 0, 350, 210));
        assert_eq!(p.rect(PatchKind::Eye), Rect::new(150, 204, 350, 344));
    }

    #[test]
    fn degenerate_rect_is_error() {
        let r = BoundingBox::new(0, 0, 0, 10, 1.0);
        assert!(matches!(
            crop_face_patches(&GrayImage::new(10, 10), &r, &trace_landmarks()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn inverted_rows_flag_not_error() {
        let mut l = trace_landmarks();
        l.set(33, 200, 300); // nose base below jaw point 4
        let p = crop_face_patches(&GrayImage::new(400, 400), &trace_rect(), &l).unwrap();
        assert!(!p.is_valid(PatchKind::Mustache));
        assert!(p.rect(PatchKind::Mustache).is_empty());
    }

    #[test]
    fn patches_copy_the_right_pixels() {
        let img = GrayImage::from_fn(400, 400, |x, y| Luma([((x + y) % 256) as u8]));
        let p = crop_face_patches(&img, &trace_rect(), &trace_landmarks()).unwrap();
        let bp = &p.patches[PatchKind::Beard.index()];
        assert_eq!(bp.get_pixel(0, 0), img.get_pixel(110, 290));
        assert_eq!(bp.dimensions(), (180, 50));
    }

    fn arb_landmarks() -> impl Strategy<Value = Landmarks68> {
        proptest::collection::vec((-50i64..450, -50i64..450), 68).prop_map(|v| {
            let mut pts = [[0i64; 2]; 68];
            for (p, (x, y)) in pts.iter_mut().zip(v) {
                *p = [x, y];
            }
            Landmarks68::new(pts)
        })
    }

    proptest! {
        #[test]
        fn rects_stay_in_bounds_and_share_columns(
            l in arb_landmarks(),
            (x, y, w, h) in (-20i64..300, -20i64..300, 1i64..200, 1i64..200),
            (iw, ih) in (1u32..400, 1u32..400),
        ) {
            let img = GrayImage::new(iw, ih);
            let p = crop_face_patches(&img, &BoundingBox::new(x, y, w, h, 1.0), &l).unwrap();
            for (i, r) in p.rects.iter().enumerate() {
                prop_assert!(r.x0 >= 0 && r.y0 >= 0 && r.x1 <= i64::from(iw) && r.y1 <= i64::from(ih));
                prop_assert_eq!(p.patches[i].width() as i64, r.width());
                prop_assert_eq!(p.valid[i], r.width() >= 20 && r.height() >= 20);
            }
            let g = p.geometry;
            prop_assert_eq!(
                (g.rect(PatchKind::Beard).x0, g.rect(PatchKind::Beard).x1),
                (g.rect(PatchKind::Mustache).x0, g.rect(PatchKind::Mustache).x1)
            );
        }

        #[test]
        fn geometry_is_translation_equivariant(
            l in arb_landmarks(),
            (x, y, w, h) in (-20i64..300, -20i64..300, 1i64..200, 1i64..200),
            (dx, dy) in (-100i64..100, -100i64..100),
        ) {
            let a = patch_geometry(&BoundingBox::new(x, y, w, h, 1.0), &l).unwrap();
            let b = patch_geometry(&BoundingBox::new(x + dx, y + dy, w, h, 1.0), &l.translate(dx, dy)).unwrap();
            for k in PatchKind::ALL {
                prop_assert_eq!(b.rect(k), a.rect(k).translate(dx, dy));
            }
        }
    }
}
