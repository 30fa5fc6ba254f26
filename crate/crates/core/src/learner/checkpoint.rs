//! Agent persistence: parameters, optimizer accumulators, feature scaling
//! and the originating config in one little-endian binary file.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::NormStats;
use crate::config::RunConfig;
use crate::emulator::io::{write_f64_slice, write_u64, Reader};
use crate::error::{Error, Result};
use crate::nn::AdamState;

use super::params::{AgentParams, OptimizerState, ParamGroup, GROUPS};
use super::train::TrainedAgent;

const MAGIC: &[u8; 4] = b"SSAG";
const VERSION: u32 = 1;

/// Writes the agent. Curves are not part of the file; they live in the
/// curves CSV the training run emits.
pub fn save_agent(agent: &TrainedAgent, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    write_u64(&mut buf, agent.seed);
    write_u64(&mut buf, agent.input_dim as u64);
    let s = &agent.stats;
    write_f64_slice(&mut buf, &[s.n_min, s.n_max, s.m_min, s.m_max, s.v_min, s.v_max]);
    let config_json = serde_json::to_vec(&agent.config)
        .map_err(|e| Error::Data(format!("encode config: {e}")))?;
    write_u64(&mut buf, config_json.len() as u64);
    buf.extend_from_slice(&config_json);
    for g in GROUPS {
        let name = g.name().as_bytes();
        write_u64(&mut buf, name.len() as u64);
        buf.extend_from_slice(name);
        let flat = agent.params.group(g);
        write_u64(&mut buf, flat.len() as u64);
        write_f64_slice(&mut buf, &flat);
        let adam = agent.opt.state(g);
        write_f64_slice(&mut buf, adam.first_moment());
        write_f64_slice(&mut buf, adam.second_moment());
        write_u64(&mut buf, adam.step_count());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an agent back. Curves and the update log come back empty; training
/// history is not stored here.
pub fn load_agent(path: &Path) -> Result<TrainedAgent> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&buf, path);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported agent file version {version}",
            path.display()
        )));
    }
    let seed = r.u64()?;
    let input_dim = r.u64()? as usize;
    let s = r.f64_vec(6)?;
    let stats = NormStats { n_min: s[0], n_max: s[1], m_min: s[2], m_max: s[3], v_min: s[4], v_max: s[5] };
    let config_len = r.u64()? as usize;
    let config_bytes = r.bytes(config_len)?;
    let config: RunConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::Data(format!("{}: config block: {e}", path.display())))?;
    config.validate()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = AgentParams::new(&config, input_dim, &mut init_rng)?;
    let mut opt = OptimizerState::new(&params);
    for g in GROUPS {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.bytes(name_len)?)
            .map_err(|e| Error::Data(format!("{}: group name: {e}", path.display())))?;
        let parsed = ParamGroup::from_name(name).ok_or_else(|| {
            Error::Data(format!("{}: unknown parameter group {name}", path.display()))
        })?;
        if parsed != g {
            return Err(Error::Data(format!(
                "{}: group {name} out of order, expected {}",
                path.display(),
                g.name()
            )));
        }
        let len = r.u64()? as usize;
        if len != params.group_len(g) {
            return Err(Error::Data(format!(
                "{}: group {name} holds {len} values, expected {}",
                path.display(),
                params.group_len(g)
            )));
        }
        let flat = r.f64_vec(len)?;
        params.set_group(g, &flat)?;
        let m = r.f64_vec(len)?;
        let v = r.f64_vec(len)?;
        let t = r.u64()?;
        *opt.state_mut(g) = AdamState::from_parts(m, v, t)?;
    }
    r.finish()?;
    Ok(TrainedAgent {
        params,
        opt,
        config,
        stats,
        input_dim,
        seed,
        curves: Vec::new(),
        updates: Vec::new(),
    })
}
