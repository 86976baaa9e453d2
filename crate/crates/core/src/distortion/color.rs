//! HSV conversions and the hue / saturation distortions.

use crate::image_plane::ImagePlane;

/// RGB in [0,1] to (h, s, v) with hue as a fraction of a full turn.
pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return [0.0, s, max];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    [sector / 6.0, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    if s == 0.0 {
        return [v, v, v];
    }
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Rotates hue by `delta` turns.
pub fn shift_hue(img: &ImagePlane, delta: f64) -> ImagePlane {
    img.map_pixels(|px| {
        let [h, s, v] = rgb_to_hsv(px);
        hsv_to_rgb([(h + delta as f32).rem_euclid(1.0), s, v])
    })
    .clipped()
}

/// Multiplies HSV saturation by `factor`, clamped to [0, 1].
pub fn scale_saturation(img: &ImagePlane, factor: f64) -> ImagePlane {
    img.map_pixels(|px| {
        let [h, s, v] = rgb_to_hsv(px);
        hsv_to_rgb([h, (s * factor as f32).clamp(0.0, 1.0), v])
    })
    .clipped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn primaries() {
        assert_eq!(rgb_to_hsv([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
        let [h, s, v] = rgb_to_hsv([0.0, 1.0, 0.0]);
        assert!((h - 1.0 / 3.0).abs() < 1e-6 && s == 1.0 && v == 1.0);
        assert_eq!(hsv_to_rgb([0.5, 1.0, 1.0]), [0.0, 1.0, 1.0]);
        // A half turn maps red to cyan.
        let img = ImagePlane::filled(8, 8, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(shift_hue(&img, 0.5).pixel(3, 3), [0.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn hsv_round_trip(r in 0f32..=1.0, g in 0f32..=1.0, b in 0f32..=1.0) {
            let back = hsv_to_rgb(rgb_to_hsv([r, g, b]));
            for (x, y) in back.iter().zip([r, g, b]) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }

        #[test]
        fn gray_is_fixed(v in 0f32..=1.0, delta in 0f64..1.0, factor in 0f64..20.0) {
            let img = ImagePlane::filled(8, 8, [v; 3]).unwrap();
            prop_assert_eq!(shift_hue(&img, delta), img.clone());
            prop_assert_eq!(scale_saturation(&img, factor), img);
        }
    }
}
