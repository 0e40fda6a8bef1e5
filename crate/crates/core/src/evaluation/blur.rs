use crate::types::SaliencyMap;

/// Index into `0..n` under half-sample symmetric reflection
/// (`d c b a | a b c d | d c b a`), valid for any offset.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian smoothing with reflect padding; σ = 0 is the identity.
pub fn blur_saliency(map: &SaliencyMap, sigma: f64) -> SaliencyMap {
    if sigma <= 0.0 || !sigma.is_finite() {
        return map.clone();
    }
    let (h, w) = (map.height, map.width);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src: Vec<f64> = map.values.iter().map(|&v| f64::from(v)).collect();
    let mut rows = vec![0.0f64; h * w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w {
            rows[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(t, kt)| kt * line[reflect(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for x in 0..w {
        for y in 0..h {
            let v: f64 = k
                .iter()
                .enumerate()
                .map(|(t, kt)| kt * rows[reflect(y as isize + t as isize - r, h) * w + x])
                .sum();
            out[y * w + x] = v as f32;
        }
    }
    SaliencyMap {
        height: h,
        width: w,
        values: out,
    }
}
