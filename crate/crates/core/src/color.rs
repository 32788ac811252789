//! sRGB (D65) to CIELab conversion.

const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
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

/// Converts an sRGB triple with channels on the 0..=255 scale (fractional
/// values allowed, e.g. averaged colors) to CIELab.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let linear = rgb.map(|c| srgb_to_linear((c / 255.0).clamp(0.0, 1.0)));
    let mut xyz = [0.0; 3];
    for (row, out) in SRGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row.iter().zip(linear.iter()).map(|(m, c)| m * c).sum();
    }
    let [fx, fy, fz] = [0, 1, 2].map(|i| lab_f(xyz[i] / WHITE_D65[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_colors() {
        let white = rgb_to_lab([255.0; 3]);
        assert_abs_diff_eq!(white[0], 100.0, epsilon = 1e-3);
        assert_abs_diff_eq!(white[1], 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(white[2], 0.0, epsilon = 1e-3);

        assert_eq!(rgb_to_lab([0.0; 3]), [0.0, 0.0, 0.0]);

        // published sRGB red: L*=53.24, a*=80.09, b*=67.20
        let red = rgb_to_lab([255.0, 0.0, 0.0]);
        assert_abs_diff_eq!(red[0], 53.24, epsilon = 0.01);
        assert_abs_diff_eq!(red[1], 80.09, epsilon = 0.01);
        assert_abs_diff_eq!(red[2], 67.20, epsilon = 0.01);
    }

    #[test]
    fn gray_ramp_is_neutral_and_monotone() {
        let mut last = -1.0;
        for g in (0..=255).step_by(5) {
            let lab = rgb_to_lab([g as f64; 3]);
            assert!(lab[0] > last);
            assert!(lab[1].abs() < 1e-2 && lab[2].abs() < 1e-2);
            last = lab[0];
        }
    }
}
