//! Binary trial files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "MIRP"
//! version      u32
//! n_channels   u32
//! n_samples    u32
//! fs           f32
//! label        i32      -1 when absent
//! name table   (n_channels + 2) entries of u16 byte length + UTF-8 bytes:
//!              channel names in row order, then subject id, then session id
//! payload      n_channels * n_samples f32, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::trial::Trial;
use crate::error::{Error, Result};

pub const TRIAL_MAGIC: [u8; 4] = *b"MIRP";
pub const TRIAL_FORMAT_VERSION: u32 = 1;

pub fn encode_trial(trial: &Trial) -> Result<Vec<u8>> {
    trial.check_finite()?;
    if trial.data.nrows() != trial.channels.len() {
        return Err(Error::InvalidTrial("row count differs from channel list".into()));
    }
    let (c, t) = trial.data.dim();
    let mut buf = Vec::with_capacity(24 + c * 8 + c * t * 4);
    buf.extend_from_slice(&TRIAL_MAGIC);
    buf.extend_from_slice(&TRIAL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(trial.fs as f32).to_le_bytes());
    let label: i32 = trial.label.map(|l| l as i32).unwrap_or(-1);
    buf.extend_from_slice(&label.to_le_bytes());
    for name in trial
        .channels
        .iter()
        .chain([&trial.subject_id, &trial.session_id])
    {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::InvalidTrial(format!("name too long: {name:?}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    for v in trial.data.iter() {
        let x = *v as f32;
        if !x.is_finite() {
            return Err(Error::InvalidTrial(format!("sample {v} overflows f32")));
        }
        buf.extend_from_slice(&x.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_trial_file(trial: &Trial, path: &Path) -> Result<()> {
    let buf = encode_trial(trial)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_trial(buf: &[u8]) -> Result<Trial> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "header")?.try_into().unwrap();
    if magic != TRIAL_MAGIC {
        return Err(Error::BadMagic {
            expected: TRIAL_MAGIC,
            found: magic,
        });
    }
    let version = cur.u32("header")?;
    if version != TRIAL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: TRIAL_FORMAT_VERSION,
            found: version,
        });
    }
    let c = cur.u32("header")? as usize;
    let t = cur.u32("header")? as usize;
    let fs = f32::from_le_bytes(cur.take(4, "header")?.try_into().unwrap());
    let label = i32::from_le_bytes(cur.take(4, "header")?.try_into().unwrap());

    let mut names = Vec::with_capacity(c + 2);
    for _ in 0..c + 2 {
        let len = u16::from_le_bytes(cur.take(2, "name table")?.try_into().unwrap()) as usize;
        let raw = cur.take(len, "name table")?;
        let s = std::str::from_utf8(raw)
            .map_err(|_| Error::InvalidTrial("name table is not UTF-8".into()))?;
        names.push(s.to_string());
    }
    let session_id = names.pop().unwrap();
    let subject_id = names.pop().unwrap();

    let need = c
        .checked_mul(t)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::InvalidTrial("header dimensions overflow".into()))?;
    let remaining = buf.len() - cur.pos;
    if remaining < need {
        return Err(Error::Truncated(format!(
            "payload: header declares {need} bytes, file holds {remaining}"
        )));
    }
    let payload = cur.take(need, "payload")?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let data = Array2::from_shape_vec((c, t), data).expect("payload length checked");
    let label = if label < 0 { None } else { Some(label as u32) };
    Trial::new(data, label, fs as f64, names, subject_id, session_id)
}

pub fn read_trial_file(path: &Path) -> Result<Trial> {
    let buf = fs::read(path)?;
    decode_trial(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn small_trial() -> Trial {
        let data = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.5 - 1.0);
        Trial::new(
            data,
            Some(1),
            250.0,
            vec!["C3".into(), "Cz".into(), "C4".into()],
            "S01",
            "sess0",
        )
        .unwrap()
    }

    #[test]
    fn payload_is_four_bytes_per_sample() {
        let trial = small_trial();
        let buf = encode_trial(&trial).unwrap();
        let names: usize = ["C3", "Cz", "C4", "S01", "sess0"].iter().map(|s| 2 + s.len()).sum();
        assert_eq!(buf.len() - 24 - names, 48);
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mirp");
        let trial = small_trial();
        write_trial_file(&trial, &path).unwrap();
        assert_eq!(read_trial_file(&path).unwrap(), trial);
    }

    #[test]
    fn nan_is_rejected_on_write() {
        let mut trial = small_trial();
        trial.data[[1, 2]] = f64::NAN;
        let err = encode_trial(&trial).unwrap_err();
        assert!(err.to_string().contains("non-finite sample"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let mut buf = encode_trial(&small_trial()).unwrap();
        buf[..4].copy_from_slice(b"XXXX");
        let err = decode_trial(&buf).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn version_mismatch() {
        let mut buf = encode_trial(&small_trial()).unwrap();
        buf[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_trial(&buf),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn declared_length_beyond_payload_is_truncated() {
        let mut buf = encode_trial(&small_trial()).unwrap();
        buf[12..16].copy_from_slice(&5u32.to_le_bytes());
        let err = decode_trial(&buf).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let full = encode_trial(&small_trial()).unwrap();
        assert!(decode_trial(&full[..full.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_identity(
            c in 1usize..6,
            t in 1usize..40,
            seed in any::<u64>(),
            label in proptest::option::of(0u32..5),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // f32-representable values survive the 32-bit payload exactly
            let data = Array2::from_shape_fn((c, t), |_| rng.random_range(-1e3f32..1e3) as f64);
            let channels = (0..c).map(|i| format!("E{i}")).collect();
            let trial = Trial::new(data, label, 512.0, channels, "subj", "s1").unwrap();
            let back = decode_trial(&encode_trial(&trial).unwrap()).unwrap();
            prop_assert_eq!(back, trial);
        }
    }
}
