//! Emulator persistence: a little-endian binary parameter file plus a JSON
//! sidecar holding the fitting configuration and final losses.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::NormStats;
use crate::config::RunConfig;
use crate::error::{Error, Result};

use super::model::{BehaviourModel, EmulatorLosses};

const MAGIC: &[u8; 4] = b"SSEM";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config: std::collections::BTreeMap<String, String>,
    losses: EmulatorLosses,
}

pub(crate) fn write_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

pub(crate) fn write_f64_slice(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data(format!(
                "{}: truncated at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(Error::Data(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.path.display(),
                got,
                expect
            )));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Data(format!(
                "{}: {} trailing bytes after payload",
                self.path.display(),
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes the model parameters to `path` and the config/loss sidecar next to
/// it.
pub fn save_model(model: &BehaviourModel, config: &RunConfig, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    write_u64(&mut buf, model.window() as u64);
    write_u64(&mut buf, model.slot_count() as u64);
    write_u64(&mut buf, model.input_dim() as u64);
    write_u64(&mut buf, model.hidden() as u64);
    let s = model.stats();
    write_f64_slice(&mut buf, &[s.n_min, s.n_max, s.m_min, s.m_max, s.v_min, s.v_max]);
    let l = model.losses();
    write_f64_slice(&mut buf, &[l.engagement_mse, l.adoption_mse, l.slot_cross_entropy]);
    for group in model.flat() {
        write_u64(&mut buf, group.len() as u64);
        write_f64_slice(&mut buf, &group);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;

    let sidecar = Sidecar {
        config: config.to_kv().into_iter().collect(),
        losses: *model.losses(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Data(format!("sidecar serialization: {e}")))?;
    let sc_path = sidecar_path(path);
    fs::write(&sc_path, json).map_err(|e| Error::io(&sc_path, e))?;
    Ok(())
}

/// Loads a model written by [`save_model`]. The sidecar is informational and
/// not required for loading.
pub fn load_model(path: &Path) -> Result<BehaviourModel> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&buf, path);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let window = r.u64()? as usize;
    let slot_count = r.u64()? as usize;
    let input_dim = r.u64()? as usize;
    let hidden = r.u64()? as usize;
    let stats = NormStats {
        n_min: r.f64()?,
        n_max: r.f64()?,
        m_min: r.f64()?,
        m_max: r.f64()?,
        v_min: r.f64()?,
        v_max: r.f64()?,
    };
    let losses = EmulatorLosses {
        engagement_mse: r.f64()?,
        adoption_mse: r.f64()?,
        slot_cross_entropy: r.f64()?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = BehaviourModel::new_untrained(
        input_dim, hidden, slot_count, window, stats, &mut rng,
    )?;
    let expected: Vec<usize> = model.flat().iter().map(|g| g.len()).collect();
    let mut groups = Vec::with_capacity(4);
    for want in expected {
        let len = r.u64()? as usize;
        if len != want {
            return Err(Error::Data(format!(
                "{}: parameter group of {len} values, expected {want}",
                path.display()
            )));
        }
        groups.push(r.f64_vec(len)?);
    }
    r.finish()?;
    model.set_flat(&groups)?;
    model.set_losses(losses);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{aggregate_events, generate_synthetic, SynthConfig, TimezoneComponent};

    fn fitted() -> (BehaviourModel, RunConfig, crate::events::EventLog) {
        let mut cfg = RunConfig::default();
        cfg.window = 3;
        cfg.slot_count = 6;
        cfg.emulator_hidden = 8;
        cfg.emulator_epochs = 2;
        cfg.emulator_batch = 8;
        cfg.synth = SynthConfig {
            viewers: 30,
            events: 40,
            slot_count: 6,
            mixture: vec![TimezoneComponent {
                label: "one".into(),
                weight: 1.0,
                preferred_slot: 2,
                spread: 1.0,
            }],
            ..SynthConfig::default()
        };
        let (sessions, metas, vocab, _) = generate_synthetic(&cfg.synth, 4).unwrap();
        let log = aggregate_events(&sessions, &metas, &vocab, cfg.slot_count).unwrap();
        let model = super::super::model::fit_behaviour_model(&log, &cfg, 8).unwrap();
        (model, cfg, log)
    }

    #[test]
    fn round_trip_preserves_predictions_bitwise() {
        let (model, cfg, log) = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emu.bin");
        save_model(&model, &cfg, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model.flat(), loaded.flat());
        assert_eq!(model.losses(), loaded.losses());
        assert_eq!(model.stats(), loaded.stats());
        let window = &log.events[..3];
        let a = model.outputs(window, 4).unwrap();
        let b = loaded.outputs(window, 4).unwrap();
        assert_eq!(a.engagement, b.engagement);
        assert_eq!(a.adoption, b.adoption);
        assert_eq!(a.slot_probs, b.slot_probs);
        assert!(sidecar_path(&path).exists());
        let sidecar: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(sidecar.losses, *model.losses());
        assert_eq!(sidecar.config.get("window").map(String::as_str), Some("3"));
    }

    #[test]
    fn rejects_corrupted_files() {
        let (model, cfg, _) = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emu.bin");
        save_model(&model, &cfg, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad_magic = dir.path().join("bad_magic.bin");
        std::fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(load_model(&bad_magic), Err(Error::Data(_))));

        let mut truncated = std::fs::read(&path).unwrap();
        truncated.truncate(truncated.len() - 9);
        let trunc = dir.path().join("trunc.bin");
        std::fs::write(&trunc, &truncated).unwrap();
        assert!(matches!(load_model(&trunc), Err(Error::Data(_))));

        let missing = dir.path().join("nope.bin");
        assert!(matches!(load_model(&missing), Err(Error::Io { .. })));
    }
}
