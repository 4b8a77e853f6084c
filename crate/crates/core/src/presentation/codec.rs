// G.711 companding on 16-bit linear PCM.
//
// Mu-law (mu = 255) uses the biased segment encoding: add 0x84, find the
// segment from the leading one, keep four mantissa bits and complement.
// A-law (A = 87.6) uses the same segment layout without bias and with the
// alternate-mark-inversion mask 0x55.

use serde::{Deserialize, Serialize};

use crate::audio::{to_pcm16, AudioClip, CANONICAL_RATE_HZ};

use super::PresentError;

const ULAW_BIAS: i32 = 0x84;
const ALAW_AMI_MASK: u8 = 0x55;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    #[default]
    Mulaw,
    Alaw,
    None,
}

#[inline]
fn top_bit(x: u32) -> i32 {
    31 - x.leading_zeros() as i32
}

pub fn linear_to_ulaw(linear: i16) -> u8 {
    let (linear, mask) = if linear < 0 {
        (ULAW_BIAS - linear as i32 - 1, 0x7F)
    } else {
        (ULAW_BIAS + linear as i32, 0xFF)
    };
    let seg = top_bit(linear as u32 | 0xFF) - 7;
    let u = if seg >= 8 {
        0x7F
    } else {
        (seg << 4) | ((linear >> (seg + 3)) & 0xF)
    };
    (u ^ mask) as u8
}

pub fn ulaw_to_linear(ulaw: u8) -> i16 {
    let u = !ulaw as i32;
    let t = (((u & 0x0F) << 3) + ULAW_BIAS) << ((u & 0x70) >> 4);
    (if u & 0x80 != 0 { ULAW_BIAS - t } else { t - ULAW_BIAS }) as i16
}

pub fn linear_to_alaw(linear: i16) -> u8 {
    let (linear, mask) = if linear >= 0 {
        (linear as i32, ALAW_AMI_MASK | 0x80)
    } else {
        (-(linear as i32) - 1, ALAW_AMI_MASK)
    };
    let seg = top_bit(linear as u32 | 0xFF) - 7;
    if seg >= 8 {
        return 0x7F ^ mask;
    }
    let shift = if seg != 0 { seg + 3 } else { 4 };
    (((seg << 4) | ((linear >> shift) & 0x0F)) as u8) ^ mask
}

pub fn alaw_to_linear(alaw: u8) -> i16 {
    let a = alaw ^ ALAW_AMI_MASK;
    let mantissa = (a as i32 & 0x0F) << 4;
    let seg = (a as i32 & 0x70) >> 4;
    let mag = if seg != 0 {
        (mantissa + 0x108) << (seg - 1)
    } else {
        mantissa + 8
    };
    (if a & 0x80 != 0 { mag } else { -mag }) as i16
}

/// Encodes to 8-bit G.711 and decodes back. Input must be at 8 kHz.
pub fn codec_roundtrip(clip: &AudioClip, codec: Codec) -> Result<AudioClip, PresentError> {
    if clip.sample_rate_hz() != CANONICAL_RATE_HZ {
        return Err(PresentError::RateMismatch {
            expected: CANONICAL_RATE_HZ,
            got: clip.sample_rate_hz(),
        });
    }
    let f: fn(i16) -> i16 = match codec {
        Codec::None => return Ok(clip.clone()),
        Codec::Mulaw => |v| ulaw_to_linear(linear_to_ulaw(v)),
        Codec::Alaw => |v| alaw_to_linear(linear_to_alaw(v)),
    };
    Ok(clip.map(|s| f(to_pcm16(s)) as f64 / 32768.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::sine;

    fn snr_db(reference: &AudioClip, test: &AudioClip) -> f64 {
        let noise: f64 = reference
            .samples()
            .iter()
            .zip(test.samples())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        10.0 * (reference.power() * reference.len() as f64 / noise).log10()
    }

    #[test]
    fn zero_maps_to_zero_for_mulaw() {
        let z = AudioClip::silence(100, 8000);
        assert_eq!(codec_roundtrip(&z, Codec::Mulaw).unwrap(), z);
    }

    #[test]
    fn known_code_points() {
        assert_eq!(linear_to_ulaw(0), 0xFF);
        assert_eq!(ulaw_to_linear(0xFF), 0);
        assert_eq!(ulaw_to_linear(0x80), 32124);
        assert_eq!(ulaw_to_linear(0x00), -32124);
        assert_eq!(linear_to_alaw(0), 0xD5);
        assert_eq!(alaw_to_linear(0xD5), 8);
        assert_eq!(alaw_to_linear(0xAA), 32256);
    }

    #[test]
    fn decoded_levels_are_fixed_points() {
        for code in 0..=255u8 {
            let v = ulaw_to_linear(code);
            assert_eq!(ulaw_to_linear(linear_to_ulaw(v)), v, "ulaw code {code:#x}");
            let a = alaw_to_linear(code);
            assert_eq!(alaw_to_linear(linear_to_alaw(a)), a, "alaw code {code:#x}");
        }
    }

    #[test]
    fn full_scale_sine_snr() {
        let x = sine(1000.0, 1.0, 1.0, 8000);
        for codec in [Codec::Mulaw, Codec::Alaw] {
            let y = codec_roundtrip(&x, codec).unwrap();
            let snr = snr_db(&x, &y);
            assert!(snr >= 30.0, "{codec:?} snr {snr}");
            let y2 = codec_roundtrip(&y, codec).unwrap();
            for (a, b) in y.samples().iter().zip(y2.samples()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn requires_8k() {
        let x = sine(1000.0, 0.5, 0.1, 16000);
        assert!(matches!(
            codec_roundtrip(&x, Codec::Mulaw),
            Err(PresentError::RateMismatch { .. })
        ));
    }
}
