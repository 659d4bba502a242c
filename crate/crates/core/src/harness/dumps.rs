//! Learned-structure dumps and closed-loop replay.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::{snapshot, Session};
use crate::error::Result;
use crate::math::argmax;
use crate::topology::Network;

/// Writes `centers_{l}_{i}.csv`, `graph_{l}_{i}.dot` and `usage_{l}_{i}.csv`
/// for every Expert.
pub fn write_dumps(network: &Network, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for [l, i] in network.addresses() {
        let e = network.expert([l, i]);
        e.spatial()
            .write_centers_csv(BufWriter::new(File::create(dir.join(format!("centers_{l}_{i}.csv")))?))?;
        std::fs::write(
            dir.join(format!("graph_{l}_{i}.dot")),
            e.library().to_dot(&format!("expert_{l}_{i}")),
        )?;
        let mut w = csv::Writer::from_path(dir.join(format!("usage_{l}_{i}.csv")))?;
        w.write_record(["cluster_id", "usage"])?;
        for (k, u) in e.usage().iter().enumerate() {
            w.write_record([k.to_string(), u.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Loads a snapshot and writes its dumps into `dir`.
pub fn inspect(snapshot_path: &Path, dir: &Path) -> Result<()> {
    let session: Session = snapshot::load(snapshot_path)?;
    write_dumps(&session.network, dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    /// Generated observations, one per closed-loop tick.
    pub generated: Vec<Vec<f64>>,
    pub warning: Option<String>,
}

/// Observation the bottom layer expects next: the center of each bottom
/// Expert's most likely next cluster, placed in its receptive field.
pub fn predicted_observation(network: &Network) -> Vec<f64> {
    let mut obs = vec![0.0; network.config().input_dim];
    for (i, e) in network.layers()[0].iter().enumerate() {
        let k = argmax(e.prediction()).unwrap_or(0);
        let field = network.receptive_field([0, i]);
        obs[field].iter_mut().zip(e.spatial().center(k)).for_each(|(o, c)| *o += c);
    }
    obs
}

/// Freezes the model, primes it on `prime` real observations, then feeds
/// its own greedy predictions back for `generate` ticks.
pub fn replay(session: &mut Session, prime: u64, generate: u64) -> Result<ReplayOutput> {
    session.freeze();
    let lookbehind = session.network.layers()[0]
        .iter()
        .map(|e| e.params().temporal.lookbehind + 1)
        .max()
        .unwrap_or(1) as u64;
    let warning = (prime < lookbehind).then(|| {
        format!("prime steps ({prime}) shorter than the lookbehind window ({lookbehind}); history starts neutral")
    });
    for _ in 0..prime {
        if session.step()?.is_none() {
            break;
        }
    }
    let mut generated = Vec::with_capacity(generate as usize);
    for _ in 0..generate {
        let obs = predicted_observation(&session.network);
        session.network.tick(&obs, 0.0)?;
        generated.push(obs);
    }
    Ok(ReplayOutput { generated, warning })
}

pub fn write_rows(rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
