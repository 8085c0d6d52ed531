//! Binary checkpoint format.
//!
//! ```text
//! magic "GNTCKPT\0"
//! u32   format version
//! u64 x 10  feat, context, enc_hidden, enc_dim, embed, pred, joiner, vocab,
//!           predictor kind, predictor order
//! f64   alpha
//! u64   parameter count
//! f64 x count  parameters in canonical tensor order
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::params::{ModelConfig, ModelParams};
use crate::model::predictor::{predictor_registry, predictor_spec_from_code};

pub const MAGIC: &[u8; 8] = b"GNTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    let c = &params.config;
    let (kind, order) = predictor_registry().build_str(&c.predictor)?.code();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in [
        c.feat_dim,
        c.context,
        c.enc_hidden,
        c.enc_dim,
        c.embed_dim,
        c.pred_dim,
        c.joiner_dim,
        c.vocab,
    ] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&order.to_le_bytes())?;
    w.write_all(&params.alpha.to_le_bytes())?;
    let values = params.flatten();
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CheckpointCorrupt(format!("truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })?;
    Ok(buf)
}

fn dim(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = u64::from_le_bytes(take::<8>(r, what)?);
    usize::try_from(v).map_err(|_| Error::CheckpointCorrupt(format!("{what} out of range")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let magic = take::<8>(&mut r, "magic")?;
    if &magic != MAGIC {
        return Err(Error::CheckpointVersion("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take::<4>(&mut r, "version")?);
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let feat_dim = dim(&mut r, "feat_dim")?;
    let context = dim(&mut r, "context")?;
    let enc_hidden = dim(&mut r, "enc_hidden")?;
    let enc_dim = dim(&mut r, "enc_dim")?;
    let embed_dim = dim(&mut r, "embed_dim")?;
    let pred_dim = dim(&mut r, "pred_dim")?;
    let joiner_dim = dim(&mut r, "joiner_dim")?;
    let vocab = dim(&mut r, "vocab")?;
    let kind = u64::from_le_bytes(take::<8>(&mut r, "predictor kind")?);
    let order = u64::from_le_bytes(take::<8>(&mut r, "predictor order")?);
    let config = ModelConfig {
        feat_dim,
        context,
        enc_hidden,
        enc_dim,
        embed_dim,
        pred_dim,
        joiner_dim,
        vocab,
        predictor: predictor_spec_from_code(kind, order)?,
    };
    config
        .validate()
        .map_err(|e| Error::CheckpointCorrupt(format!("bad header: {e}")))?;
    let alpha = f64::from_le_bytes(take::<8>(&mut r, "alpha")?);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::CheckpointCorrupt(format!("alpha {alpha} outside [0, 1]")));
    }
    let count = dim(&mut r, "parameter count")?;
    let mut params = ModelParams::zeros(&config)?;
    if count != params.num_values() {
        return Err(Error::CheckpointCorrupt(format!(
            "header implies {} parameters, file declares {count}",
            params.num_values()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(f64::from_le_bytes(take::<8>(&mut r, "parameters")?));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::CheckpointCorrupt("trailing bytes after parameters".into()));
    }
    params.unflatten(&values)?;
    params.alpha = alpha;
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(params, std::io::BufWriter::new(f))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(p: &ModelParams) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(p, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for spec in ["recurrent", "limited:3"] {
            let mut cfg = ModelConfig::small(3, 5);
            cfg.predictor = spec.into();
            let mut p = ModelParams::init(&cfg, 9).unwrap();
            p.alpha = 0.3;
            let buf = bytes(&p);
            let q = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(q.config, p.config);
            assert_eq!(q.alpha.to_bits(), p.alpha.to_bits());
            let a: Vec<u64> = p.flatten().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = q.flatten().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(bytes(&q), buf);
        }
    }

    #[test]
    fn rejects_wrong_version_and_magic() {
        let p = ModelParams::init(&ModelConfig::small(2, 2), 0).unwrap();
        let mut buf = bytes(&p);
        buf[8] = 99;
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::CheckpointVersion(_))));
        let mut buf = bytes(&p);
        buf[0] = b'X';
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::CheckpointVersion(_))));
    }

    #[test]
    fn rejects_truncation_and_inconsistency() {
        let p = ModelParams::init(&ModelConfig::small(2, 2), 0).unwrap();
        let buf = bytes(&p);
        for cut in [3, 20, buf.len() - 1] {
            assert!(matches!(
                read_checkpoint(&buf[..cut]),
                Err(Error::CheckpointCorrupt(_))
            ));
        }
        // Bump vocab in the header so the declared count no longer matches.
        let mut bad = buf.clone();
        let off = 12 + 7 * 8;
        bad[off..off + 8].copy_from_slice(&3u64.to_le_bytes());
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::CheckpointCorrupt(_))));
        let mut long = buf;
        long.push(0);
        assert!(matches!(read_checkpoint(long.as_slice()), Err(Error::CheckpointCorrupt(_))));
    }
}
