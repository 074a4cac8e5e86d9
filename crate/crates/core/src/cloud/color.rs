use crate::error::{Error, Result};

// sRGB primaries to CIE XYZ, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB (0-255 per channel) to CIELAB under D65. Returns `[L, a, b]`.
pub fn rgb_to_cielab(r: i32, g: i32, b: i32) -> Result<[f64; 3]> {
    for (name, v) in [("red", r), ("green", g), ("blue", b)] {
        if !(0..=255).contains(&v) {
            return Err(Error::param(format!("{name} channel {v} outside 0..=255")));
        }
    }
    Ok(lab_from_rgb8([r as u8, g as u8, b as u8]))
}

pub(crate) fn lab_from_rgb8(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c as f64 / 255.0));
    let mut xyz = [0.0; 3];
    let mut white = [0.0; 3];
    for (row, m) in RGB_TO_XYZ.iter().enumerate() {
        xyz[row] = m[0] * lin[0] + m[1] * lin[1] + m[2] * lin[2];
        // Reference white is the image of RGB (1,1,1), so greys land on a = b = 0.
        white[row] = m[0] + m[1] + m[2];
    }
    let fx = lab_f(xyz[0] / white[0]);
    let fy = lab_f(xyz[1] / white[1]);
    let fz = lab_f(xyz[2] / white[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn references() {
        let w = rgb_to_cielab(255, 255, 255).unwrap();
        assert!((w[0] - 100.0).abs() < 0.01 && w[1].abs() < 0.01 && w[2].abs() < 0.01);
        assert_eq!(rgb_to_cielab(0, 0, 0).unwrap(), [0.0, 0.0, 0.0]);
        // Values from the published sRGB/D65 formulas evaluated independently.
        let r = rgb_to_cielab(255, 0, 0).unwrap();
        assert!((r[0] - 53.24).abs() < 0.05, "{r:?}");
        assert!((r[1] - 80.09).abs() < 0.05, "{r:?}");
        assert!((r[2] - 67.20).abs() < 0.05, "{r:?}");
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(rgb_to_cielab(256, 0, 0), Err(Error::Param(_))));
        assert!(rgb_to_cielab(0, -1, 0).is_err());
    }

    #[test]
    fn greys_are_neutral() {
        for v in (0..=255).step_by(5) {
            let [l, a, b] = rgb_to_cielab(v, v, v).unwrap();
            assert!(a.abs() < 0.01 && b.abs() < 0.01, "{v}: {a} {b}");
            assert!((0.0..=100.0 + 1e-9).contains(&l));
        }
    }
}
