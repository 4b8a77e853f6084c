use super::AudioClip;

/// Zero crossings of the prototype sinc on each side, measured at the lower of
/// the two rates. Gives 64 taps per phase when upsampling.
const HALF_TAPS: usize = 32;
const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.92;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let y = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= y / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase bank: `phases[p][k]` weights input sample `base - half + 1 + k`
/// for output positions with fractional offset `p / up`.
struct PolyphaseBank {
    half: usize,
    phases: Vec<Vec<f64>>,
}

impl PolyphaseBank {
    fn new(up: u64, down: u64) -> Self {
        let ratio = (up as f64 / down as f64).min(1.0);
        let cutoff = ROLLOFF * ratio;
        let half = (HALF_TAPS as f64 / ratio).ceil() as usize;
        let i0_beta = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut taps: Vec<f64> = (0..2 * half)
                    .map(|k| {
                        // distance from the output instant to input sample
                        let tau = (k as f64 - (half as f64 - 1.0)) - frac;
                        let r = tau / half as f64;
                        if r.abs() > 1.0 {
                            return 0.0;
                        }
                        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                        cutoff * sinc(cutoff * tau) * w
                    })
                    .collect();
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                taps
            })
            .collect();
        Self { half, phases }
    }
}

/// Windowed-sinc polyphase resampling to `target_hz`.
///
/// Output length is `round(N * target / source)`. Each phase is normalized to
/// unit DC gain. Samples outside the input are treated as zero.
pub fn resample(clip: &AudioClip, target_hz: u32) -> AudioClip {
    assert!(target_hz > 0, "target rate must be positive");
    let source_hz = clip.sample_rate_hz();
    if source_hz == target_hz {
        return clip.clone();
    }
    let g = gcd(source_hz as u64, target_hz as u64);
    let up = target_hz as u64 / g;
    let down = source_hz as u64 / g;
    let x = clip.samples();
    let n_out = ((x.len() as u128 * up as u128 + down as u128 / 2) / down as u128) as usize;
    if x.iter().all(|&s| s == 0.0) {
        return AudioClip::silence(n_out, target_hz);
    }
    let bank = PolyphaseBank::new(up, down);
    let half = bank.half as i64;
    let out = (0..n_out as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let taps = &bank.phases[(pos % up) as usize];
            let start = base - half + 1;
            taps.iter()
                .enumerate()
                .filter_map(|(k, &t)| {
                    let idx = start + k as i64;
                    (idx >= 0 && (idx as usize) < x.len()).then(|| t * x[idx as usize])
                })
                .sum::<f64>()
        })
        .collect();
    AudioClip::from_finite(out, target_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::sine;

    #[test]
    fn identity_rate_is_bit_identical() {
        let c = sine(440.0, 0.3, 0.1, 8000);
        assert_eq!(resample(&c, 8000), c);
    }

    #[test]
    fn zero_signal_stays_zero() {
        let c = AudioClip::silence(1600, 16000);
        let r = resample(&c, 8000);
        assert_eq!(r.len(), 800);
        assert!(r.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn dc_preserved_in_steady_state() {
        let c = AudioClip::new(vec![0.5; 16000], 16000).unwrap();
        let r = resample(&c, 8000);
        assert_eq!(r.len(), 8000);
        let edge = 100;
        let dev = r.samples()[edge..r.len() - edge]
            .iter()
            .map(|s| (s - 0.5).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-3, "max deviation {dev}");
    }

    #[test]
    fn sine_matches_analytic_after_downsampling() {
        let c = sine(1000.0, 0.8, 1.0, 16000);
        let r = resample(&c, 8000);
        let reference = sine(1000.0, 0.8, 1.0, 8000);
        let edge = 100;
        let err = r.samples()[edge..r.len() - edge]
            .iter()
            .zip(&reference.samples()[edge..])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "max error {err}");
    }

    #[test]
    fn length_rounding_for_odd_ratio() {
        let c = sine(300.0, 0.5, 0.0101, 44100);
        let r = resample(&c, 8000);
        let expected = (c.len() as f64 * 8000.0 / 44100.0).round() as usize;
        assert_eq!(r.len(), expected);
    }

    #[test]
    fn rejects_aliases_when_downsampling() {
        // 6 kHz at 16 kHz would fold to 2 kHz at 8 kHz
        let c = sine(6000.0, 1.0, 0.5, 16000);
        let r = resample(&c, 8000);
        let edge = 200;
        let rms = (r.samples()[edge..r.len() - edge]
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            / (r.len() - 2 * edge) as f64)
            .sqrt();
        assert!(rms < 0.01, "alias rms {rms}");
    }
}
