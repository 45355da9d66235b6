//! Versioned text checkpoint container for [`AgentParams`].
//!
//! Layout: a magic/version line, the config hash, the agent config as JSON,
//! then one `tensor <name> <len>` header per tensor followed by its values on
//! one line. Values use the shortest round-trip decimal form, so
//! `load(save(p)) == p` bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, AgentParams};
use crate::error::{Error, Result};
use crate::rng;

const MAGIC: &str = "mhcg-checkpoint";
const VERSION: &str = "v1";

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_string(params: &AgentParams, config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}\t{VERSION}");
    let _ = writeln!(out, "config_hash\t{config_hash}");
    let _ = writeln!(out, "agent_config\t{}", serde_json::to_string(&params.config).expect("config serializes"));
    for (name, data) in params.tensors() {
        let _ = writeln!(out, "tensor\t{name}\t{}", data.len());
        let vals: Vec<String> = data.iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    out
}

/// Parse a checkpoint; returns the parameters and the stored config hash.
pub fn from_str(text: &str) -> Result<(AgentParams, String)> {
    let perr = |m: String| Error::Parse(format!("checkpoint: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some(&format!("{MAGIC}\t{VERSION}")) {
        return Err(perr("bad magic/version line".into()));
    }
    let hash = lines
        .next()
        .and_then(|l| l.strip_prefix("config_hash\t"))
        .ok_or_else(|| perr("missing config_hash".into()))?
        .to_string();
    let cfg_json = lines
        .next()
        .and_then(|l| l.strip_prefix("agent_config\t"))
        .ok_or_else(|| perr("missing agent_config".into()))?;
    let config: AgentConfig = serde_json::from_str(cfg_json)?;
    // Shapes come from the config; values are overwritten below.
    let mut params = AgentParams::init(&config, &mut rng::stream(0, &[]))?;
    let mut stored = Vec::new();
    while let Some(header) = lines.next() {
        if header.is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split('\t').collect();
        if parts.len() != 3 || parts[0] != "tensor" {
            return Err(perr(format!("bad tensor header {header:?}")));
        }
        let len: usize = parts[2].parse().map_err(|_| perr(format!("bad length in {header:?}")))?;
        let body = lines.next().ok_or_else(|| perr(format!("missing values for {}", parts[1])))?;
        let vals = body
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| perr(format!("bad float {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != len {
            return Err(perr(format!("tensor {} has {} values, header says {len}", parts[1], vals.len())));
        }
        stored.push((parts[1].to_string(), vals));
    }
    let mut idx = 0;
    let mut failure = None;
    params.for_each_tensor_mut(|name, t| {
        if failure.is_some() {
            return;
        }
        match stored.get(idx) {
            Some((n, v)) if n == name && v.len() == t.len() => t.copy_from_slice(v),
            Some((n, v)) => failure = Some(format!("expected tensor {name}[{}], found {n}[{}]", t.len(), v.len())),
            None => failure = Some(format!("missing tensor {name}")),
        }
        idx += 1;
    });
    if let Some(f) = failure {
        return Err(perr(f));
    }
    if idx != stored.len() {
        return Err(perr("unexpected extra tensors".into()));
    }
    Ok((params, hash))
}

pub fn save(path: &Path, params: &AgentParams, config_hash: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, to_string(params, config_hash))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(AgentParams, String)> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, DecodeMode};

    #[test]
    fn round_trip_is_bit_exact_and_preserves_decodes() {
        let cfg = AgentConfig { vocab: 7, seq_len: 3, feat_dim: 4, ..AgentConfig::default() };
        let mut p = AgentParams::init(&cfg, &mut rng::stream(42, &[])).unwrap();
        p.itc_temp = 0.1 + 1e-17;
        p.proj_vis.b[0] = -0.0;
        p.token_embed.data[1] = f64::MIN_POSITIVE / 3.0;
        let text = to_string(&p, "abc");
        let (q, hash) = from_str(&text).unwrap();
        assert_eq!(hash, "abc");
        for ((_, a), (_, b)) in p.tensors().iter().zip(q.tensors().iter()) {
            let ab: Vec<u64> = a.iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u64> = b.iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        let feat = [0.3, -0.2, 0.9, 0.0];
        let mut r = rng::stream(0, &[]);
        assert_eq!(
            p.decode(&feat, DecodeMode::Greedy, &mut r).unwrap(),
            q.decode(&feat, DecodeMode::Greedy, &mut r).unwrap()
        );
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let p = AgentParams::init(&AgentConfig::default(), &mut rng::stream(1, &[])).unwrap();
        let text = to_string(&p, "h");
        assert!(from_str(&text.replacen("v1", "v9", 1)).is_err());
        let truncated: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(from_str(&truncated).is_err());
    }

    #[test]
    fn config_hash_is_stable_hex() {
        let h = config_hash("a=1");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("a=1"));
        assert_ne!(h, config_hash("a=2"));
    }
}
