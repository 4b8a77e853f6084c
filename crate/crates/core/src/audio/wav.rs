use std::io::ErrorKind;
use std::path::Path;

use super::{AudioClip, AudioError};

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e)
            if e.kind() == ErrorKind::UnexpectedEof
                || e.to_string().contains("enough bytes") =>
        {
            AudioError::Truncated(e.to_string())
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::UnfinishedSample => AudioError::Truncated("unfinished sample".into()),
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("unsupported wav feature".into()),
        hound::Error::TooWide => AudioError::UnsupportedEncoding("sample too wide".into()),
        hound::Error::InvalidSampleFormat => {
            AudioError::UnsupportedEncoding("invalid sample format".into())
        }
        hound::Error::FormatError(msg) if msg.contains("unexpected eof") => {
            AudioError::Truncated(msg.to_string())
        }
        hound::Error::FormatError(msg) => AudioError::Malformed(msg.to_string()),
    }
}

/// Reads a mono RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float samples.
///
/// PCM16 is normalized by 32768 so that -32768 maps exactly to -1.0.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::Io(std::io::Error::new(
            ErrorKind::NotFound,
            format!("{} not found", path.display()),
        )));
    }
    let mut reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::Multichannel(spec.channels));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "{fmt:?} {bits}-bit"
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Quantizes to 16-bit PCM (round to nearest, saturating).
pub fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in clip.samples() {
        writer.write_sample(to_pcm16(s)).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, bits: u16, fmt: hound::SampleFormat, n: usize) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 8000,
            bits_per_sample: bits,
            sample_format: fmt,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for i in 0..n * channels as usize {
            match (fmt, bits) {
                (hound::SampleFormat::Float, _) => w.write_sample(i as f32 * 0.001).unwrap(),
                (_, 8) => w.write_sample(i as i8).unwrap(),
                _ => w.write_sample(i as i16).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for s in [0i16, 16384, -32768] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate_hz(), 8000);
    }

    #[test]
    fn float32_and_length_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        write_raw(&p, 1, 32, hound::SampleFormat::Float, 1234);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.len(), 1234);
        assert!((clip.samples()[10] - 0.01).abs() < 1e-7);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        write_raw(&stereo, 2, 16, hound::SampleFormat::Int, 10);
        assert!(matches!(load_wav(&stereo), Err(AudioError::Multichannel(2))));

        let eight = dir.path().join("e.wav");
        write_raw(&eight, 1, 8, hound::SampleFormat::Int, 10);
        assert!(matches!(
            load_wav(&eight),
            Err(AudioError::UnsupportedEncoding(_))
        ));

        let full = dir.path().join("t.wav");
        write_raw(&full, 1, 16, hound::SampleFormat::Int, 1000);
        let bytes = std::fs::read(&full).unwrap();
        let cut = dir.path().join("cut.wav");
        std::fs::write(&cut, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(load_wav(&cut), Err(AudioError::Truncated(_))));

        let header_only = dir.path().join("h.wav");
        std::fs::write(&header_only, &bytes[..20]).unwrap();
        assert!(load_wav(&header_only).is_err());
    }

    #[test]
    fn write_then_read_is_pcm16_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let clip = AudioClip::new(vec![0.0, 0.25, -0.5, 32767.0 / 32768.0, -1.0], 8000).unwrap();
        write_wav(&p, &clip).unwrap();
        assert_eq!(load_wav(&p).unwrap(), clip);
    }
}
