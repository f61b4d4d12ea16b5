//! Pseudo-color rendering: blue encodes small values, red large ones.

/// Jet-style ramp through blue, cyan, green, yellow and red for `t` in [0, 1].
pub fn blue_to_red(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 1.0 };
    let channel = |center: f64| ((1.5 - (4.0 * t - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

/// Color of a zero difference.
pub const ZERO_COLOR: [u8; 3] = [0, 0, 128];

/// RGB image of `|a - b|` scaled by `vmax` (values at or above `vmax` are red).
pub fn difference_map(a: &[f32], b: &[f32], vmax: f64) -> Vec<u8> {
    let scale = if vmax > 0.0 { 1.0 / vmax } else { 0.0 };
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| blue_to_red((f64::from(*x) - f64::from(*y)).abs() * scale))
        .collect()
}

/// RGB image of values mapped linearly from `[0, vmax]`.
pub fn pseudo_color(values: &[f32], vmax: f64) -> Vec<u8> {
    let scale = if vmax > 0.0 { 1.0 / vmax } else { 0.0 };
    values.iter().flat_map(|&v| blue_to_red(f64::from(v) * scale)).collect()
}

/// Gray RGBA bytes of values mapped linearly from `[0, vmax]`.
pub fn gray_rgba(values: &[f32], vmax: f64) -> Vec<u8> {
    let scale = if vmax > 0.0 { 255.0 / vmax } else { 0.0 };
    values
        .iter()
        .flat_map(|&v| {
            let g = (f64::from(v) * scale).clamp(0.0, 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}
