//! WAV reading and writing against a minimal RIFF codec written here.

use std::path::Path;

use simgraph_inpaint::audio_io::{read_audio, write_audio, AudioBuffer, SampleFormat};
use simgraph_inpaint::Error;

struct Parsed {
    format_tag: u16,
    channels: u16,
    rate: u32,
    bits: u16,
    data: Vec<u8>,
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

fn parse_riff(bytes: &[u8]) -> Parsed {
    assert_eq!(&bytes[0..4], b"RIFF");
    assert_eq!(u32_at(bytes, 4) as usize, bytes.len() - 8);
    assert_eq!(&bytes[8..12], b"WAVE");
    let mut pos = 12;
    let mut fmt = None;
    let mut data = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = &bytes[pos + 8..pos + 8 + size];
        match id {
            b"fmt " => {
                let mut tag = u16_at(body, 0);
                if tag == 0xFFFE {
                    // extensible: the sub-format GUID starts with the tag
                    tag = u16_at(body, 24);
                }
                fmt = Some((tag, u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body.to_vec()),
            _ => {}
        }
        pos += 8 + size + (size & 1);
    }
    let (format_tag, channels, rate, bits) = fmt.expect("fmt chunk");
    Parsed {
        format_tag,
        channels,
        rate,
        bits,
        data: data.expect("data chunk"),
    }
}

fn decode(p: &Parsed) -> Vec<Vec<f64>> {
    let nch = usize::from(p.channels);
    let width = usize::from(p.bits / 8);
    let values: Vec<f64> = p
        .data
        .chunks_exact(width)
        .map(|c| match (p.format_tag, p.bits) {
            (1, 16) => f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0,
            (1, 24) => f64::from(i32::from_le_bytes([0, c[0], c[1], c[2]]) >> 8) / 8_388_608.0,
            (3, 32) => f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            other => panic!("unexpected encoding {other:?}"),
        })
        .collect();
    (0..nch).map(|ch| values.iter().skip(ch).step_by(nch).copied().collect()).collect()
}

/// Plain 16-bit PCM file with the canonical 44-byte header.
fn encode_pcm16(channels: &[Vec<i16>], rate: u32) -> Vec<u8> {
    let nch = channels.len() as u16;
    let frames = channels[0].len();
    let data_len = (frames * channels.len() * 2) as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&nch.to_le_bytes());
    b.extend_from_slice(&rate.to_le_bytes());
    b.extend_from_slice(&(rate * u32::from(nch) * 2).to_le_bytes());
    b.extend_from_slice(&(nch * 2).to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..frames {
        for ch in channels {
            b.extend_from_slice(&ch[i].to_le_bytes());
        }
    }
    b
}

fn test_channels(len: usize, nch: usize) -> Vec<Vec<f64>> {
    (0..nch)
        .map(|c| {
            (0..len)
                .map(|i| 0.9 * ((i as f64 * 0.01 * (c + 1) as f64).sin() * (1.0 - i as f64 / len as f64)))
                .collect()
        })
        .collect()
}

fn write(path: &Path, channels: Vec<Vec<f64>>, rate: u32, format: SampleFormat) -> AudioBuffer {
    let buf = AudioBuffer::new(channels, rate).unwrap().with_format(format);
    write_audio(path, &buf).unwrap();
    buf
}

#[test]
fn written_files_decode_with_independent_parser() {
    let dir = tempfile::tempdir().unwrap();
    for (format, bits, tag, lsb) in [
        (SampleFormat::Pcm16, 16, 1, 1.0 / 32768.0),
        (SampleFormat::Pcm24, 24, 1, 1.0 / 8_388_608.0),
        (SampleFormat::Float32, 32, 3, 0.0),
    ] {
        for nch in [1, 2] {
            let path = dir.path().join(format!("{bits}_{nch}.wav"));
            let buf = write(&path, test_channels(100, nch), 22050, format);
            let parsed = parse_riff(&std::fs::read(&path).unwrap());
            assert_eq!((parsed.format_tag, parsed.bits, parsed.rate), (tag, bits, 22050));
            assert_eq!(usize::from(parsed.channels), nch);
            let decoded = decode(&parsed);
            for (ours, theirs) in buf.channels().iter().zip(&decoded) {
                assert_eq!(ours.len(), theirs.len());
                for (a, b) in ours.iter().zip(theirs) {
                    let tol = if lsb == 0.0 { f64::from(f32::EPSILON) } else { lsb / 2.0 + 1e-15 };
                    assert!((a - b).abs() <= tol, "{format:?}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn reads_independently_encoded_stereo() {
    let dir = tempfile::tempdir().unwrap();
    let left: Vec<i16> = (0..100).map(|i| (i * 300 - 15000) as i16).collect();
    let right: Vec<i16> = left.iter().map(|v| -v).collect();
    let path = dir.path().join("stereo.wav");
    std::fs::write(&path, encode_pcm16(&[left.clone(), right.clone()], 8000)).unwrap();
    let buf = read_audio(&path).unwrap();
    assert_eq!(buf.num_channels(), 2);
    assert_eq!(buf.len(), 100);
    assert_eq!(buf.sample_rate(), 8000);
    assert_eq!(buf.format(), SampleFormat::Pcm16);
    for (ch, want) in [&left, &right].iter().enumerate() {
        for (a, &b) in buf.channel(ch).iter().zip(want.iter()) {
            assert_eq!(*a, f64::from(b) / 32768.0);
        }
    }
}

#[test]
fn fixed_point_scaling_and_zero_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("max.wav");
    std::fs::write(&path, encode_pcm16(&[vec![32767, -32768, 0]], 44100)).unwrap();
    let buf = read_audio(&path).unwrap();
    assert_eq!(buf.channel(0), &[32767.0 / 32768.0, -1.0, 0.0]);

    let path = dir.path().join("zeros.wav");
    std::fs::write(&path, encode_pcm16(&[vec![0; 44100]], 44100)).unwrap();
    let buf = read_audio(&path).unwrap();
    assert_eq!(buf.len(), 44100);
    assert!(buf.channel(0).iter().all(|&v| v == 0.0));
}

#[test]
fn round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for (format, tol) in [(SampleFormat::Pcm16, 1.0 / 32768.0), (SampleFormat::Pcm24, 1.0 / 8_388_608.0), (SampleFormat::Float32, 0.0)] {
        let first = dir.path().join("a.wav");
        let second = dir.path().join("b.wav");
        write(&first, test_channels(500, 2), 44100, format);
        let a = read_audio(&first).unwrap();
        write_audio(&second, &a).unwrap();
        let b = read_audio(&second).unwrap();
        assert_eq!(b.format(), format);
        for (x, y) in a.channels().iter().flatten().zip(b.channels().iter().flatten()) {
            assert!((x - y).abs() <= tol, "{format:?}");
        }
        if format == SampleFormat::Float32 {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn integer_writes_clip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.wav");
    write(&path, vec![vec![1.5, -1.5, 0.5]], 8000, SampleFormat::Pcm16);
    let decoded = decode(&parse_riff(&std::fs::read(&path).unwrap()));
    assert_eq!(decoded[0], vec![32767.0 / 32768.0, -1.0, 0.5]);
}

#[test]
fn rejects_unsupported_files() {
    let dir = tempfile::tempdir().unwrap();

    let path = dir.path().join("8bit.wav");
    let spec = hound_spec(1, 8);
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for v in [0i8, 10, -10] {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    assert!(matches!(read_audio(&path), Err(Error::UnsupportedFormat(_))));

    let path = dir.path().join("surround.wav");
    let mut w = hound::WavWriter::create(&path, hound_spec(3, 16)).unwrap();
    for _ in 0..9 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    assert!(matches!(read_audio(&path), Err(Error::UnsupportedFormat(_))));

    let path = dir.path().join("text.wav");
    std::fs::write(&path, b"this is not a wave file at all").unwrap();
    assert!(matches!(read_audio(&path), Err(Error::UnsupportedFormat(_))));

    let path = dir.path().join("empty.wav");
    std::fs::write(&path, encode_pcm16(&[vec![]], 8000)).unwrap();
    assert!(matches!(read_audio(&path), Err(Error::EmptySignal)));

    assert!(matches!(read_audio(dir.path().join("missing.wav")), Err(Error::Io(_))));
}

fn hound_spec(channels: u16, bits: u16) -> hound::WavSpec {
    hound::WavSpec {
        channels,
        sample_rate: 8000,
        bits_per_sample: bits,
        sample_format: hound::SampleFormat::Int,
    }
}
