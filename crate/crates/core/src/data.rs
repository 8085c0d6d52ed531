//! Utterances, the two toy corpora, and the dataset file container.
//!
//! File layout: a one-line UTF-8 header
//! `GNTDATA 1 <binary|text> feat_dim=D vocab=K utterances=N [symbols=a,b,..]`,
//! then one record per utterance.
//!
//! Binary record (little-endian): `u64` id length, id bytes, `u64` frames,
//! `u64` token count, `u64` tokens, `u64` window count (`u64::MAX` for none),
//! `(u64, u64)` windows, `u64` termination (0 free, 1 final blank), then
//! `frames * D` `f64` features, row-major.
//!
//! Text record: `utt <id> frames=<n> tokens=<ids,comma-separated> windows=<lo-hi,...|none> termination=<free|final-blank>`
//! followed by `n` lines of `D` space-separated floats.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Termination, TokenSequence, Topology};
use crate::model::Matrix;
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Matrix,
    pub tokens: TokenSequence,
    pub topology: Topology,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feat_dim: usize,
    pub vocab: usize,
    pub utterances: Vec<Utterance>,
    /// Optional display names for tokens `1..=K`.
    pub symbols: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.id.as_str()).collect()
    }

    pub fn render(&self, z: &TokenSequence) -> String {
        if self.symbols.len() == self.vocab {
            z.iter()
                .map(|&k| self.symbols[k - 1].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        } else {
            z.to_text()
        }
    }

    /// Splits off the last `heldout` utterances.
    pub fn split(mut self, heldout: usize) -> (Dataset, Dataset) {
        let cut = self.utterances.len().saturating_sub(heldout);
        let rest = self.utterances.split_off(cut);
        let test = Dataset {
            utterances: rest,
            ..self.clone()
        };
        (self, test)
    }

    pub fn validate(&self) -> Result<()> {
        for u in &self.utterances {
            if u.frames() > 0 && u.features.cols() != self.feat_dim {
                return Err(Error::Dataset(format!(
                    "utterance {} has feature dim {}, expected {}",
                    u.id,
                    u.features.cols(),
                    self.feat_dim
                )));
            }
            if u.features.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("utterance {} has non-finite features", u.id)));
            }
            if let Some(&k) = u.tokens.iter().find(|&&k| k > self.vocab) {
                return Err(Error::Dataset(format!(
                    "utterance {} has token {k} > vocab {}",
                    u.id, self.vocab
                )));
            }
        }
        Ok(())
    }
}

pub const MAIL: usize = 1;
pub const NAIL: usize = 2;
pub const ORDER: usize = 3;
pub const POLISH: usize = 4;
pub const MAIL_NAIL_SYMBOLS: [&str; 4] = ["mail", "nail", "order", "polish"];
pub const CHUNK_FRAMES: usize = 10;
const MAIL_NAIL_DIM: usize = 4;

/// Emission windows of the two words: the first word must be emitted while
/// only the first chunk has been heard, the second afterwards.
pub fn mail_nail_topology() -> Topology {
    Topology::with_windows(vec![(0, CHUNK_FRAMES - 1), (CHUNK_FRAMES, 2 * CHUNK_FRAMES)])
}

fn class_signature(class: usize) -> [f64; MAIL_NAIL_DIM] {
    if class == 0 {
        [1.5, -1.5, 1.0, 0.0]
    } else {
        [-1.5, 1.5, 0.0, 1.0]
    }
}

/// `copies` pairs of "mail order" / "nail polish". Within a pair the first
/// ten frames share one noise draw; the class signature is mixed into them
/// with weight `1 - ambiguity`, so `ambiguity = 1` makes them bit-identical.
/// The last ten frames always carry the full class signature.
pub fn make_mail_nail_dataset(ambiguity: f64, copies: usize, seed: u64) -> Dataset {
    let a = ambiguity.clamp(0.0, 1.0);
    let mut rng = substream(seed, "dataset");
    let mut utterances = Vec::with_capacity(2 * copies);
    for c in 0..copies {
        let shared: Vec<f64> = (0..CHUNK_FRAMES * MAIL_NAIL_DIM)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        for class in 0..2 {
            let sig = class_signature(class);
            let mut data = Vec::with_capacity(2 * CHUNK_FRAMES * MAIL_NAIL_DIM);
            for f in 0..CHUNK_FRAMES {
                for d in 0..MAIL_NAIL_DIM {
                    data.push(shared[f * MAIL_NAIL_DIM + d] + (1.0 - a) * sig[d]);
                }
            }
            for _ in 0..CHUNK_FRAMES {
                for s in sig {
                    data.push(rng.gen_range(-0.5..0.5) + s);
                }
            }
            let (tokens, name) = if class == 0 {
                (vec![MAIL, ORDER], "mail")
            } else {
                (vec![NAIL, POLISH], "nail")
            };
            utterances.push(Utterance {
                id: format!("{name}-{c:04}"),
                features: Matrix::from_vec(2 * CHUNK_FRAMES, MAIL_NAIL_DIM, data),
                tokens: TokenSequence::new(tokens).expect("non-blank"),
                topology: mail_nail_topology(),
            });
        }
    }
    Dataset {
        feat_dim: MAIL_NAIL_DIM,
        vocab: 4,
        utterances,
        symbols: MAIL_NAIL_SYMBOLS.iter().map(|s| s.to_string()).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub vocab: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub frames_per_token: usize,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub feat_dim: usize,
    pub count: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab: 4,
            min_tokens: 1,
            max_tokens: 4,
            frames_per_token: 3,
            noise: 0.5,
            feat_dim: 6,
            count: 64,
        }
    }
}

/// Random token embeddings shared by every utterance of a seed.
pub fn synthetic_embeddings(spec: &SyntheticSpec, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, "embeddings");
    (0..spec.vocab)
        .map(|_| (0..spec.feat_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Random token sequences rendered as per-token embeddings held for
/// `frames_per_token` frames, plus noise.
pub fn make_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.vocab < 2 {
        return Err(Error::InvalidArgument("synthetic vocabulary needs K >= 2".into()));
    }
    if spec.min_tokens > spec.max_tokens || spec.frames_per_token == 0 || spec.feat_dim == 0 {
        return Err(Error::InvalidArgument(format!("bad synthetic spec {spec:?}")));
    }
    let emb = synthetic_embeddings(spec, seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0))
        .map_err(|e| Error::InvalidArgument(format!("noise: {e}")))?;
    let mut rng = substream(seed, "dataset");
    let mut utterances = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let len = rng.gen_range(spec.min_tokens..=spec.max_tokens);
        let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=spec.vocab)).collect();
        let frames = len * spec.frames_per_token;
        let mut data = Vec::with_capacity(frames * spec.feat_dim);
        for &k in &tokens {
            for _ in 0..spec.frames_per_token {
                for &e in &emb[k - 1] {
                    let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push(e + n);
                }
            }
        }
        utterances.push(Utterance {
            id: format!("syn-{i:05}"),
            features: Matrix::from_vec(frames, spec.feat_dim, data),
            tokens: TokenSequence::new(tokens)?,
            topology: Topology::default(),
        });
    }
    Ok(Dataset {
        feat_dim: spec.feat_dim,
        vocab: spec.vocab,
        utterances,
        symbols: Vec::new(),
    })
}

/// Greedy batches in dataset order, each with summed frames `<= budget`
/// (a single longer utterance forms its own batch).
pub fn make_batches(frames: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for (i, &f) in frames.iter().enumerate() {
        if !cur.is_empty() && used + f > budget {
            out.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += f;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Deterministic per-epoch shuffle of utterance indices.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9), "batching");
    idx.shuffle(&mut rng);
    idx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Binary,
    Text,
}

const HEADER_TAG: &str = "GNTDATA";
const FILE_VERSION: u32 = 1;

fn header(ds: &Dataset, enc: Encoding) -> String {
    let kind = match enc {
        Encoding::Binary => "binary",
        Encoding::Text => "text",
    };
    let mut h = format!(
        "{HEADER_TAG} {FILE_VERSION} {kind} feat_dim={} vocab={} utterances={}",
        ds.feat_dim,
        ds.vocab,
        ds.len()
    );
    if !ds.symbols.is_empty() {
        h.push_str(&format!(" symbols={}", ds.symbols.join(",")));
    }
    h.push('\n');
    h
}

fn termination_code(t: Termination) -> u64 {
    match t {
        Termination::Free => 0,
        Termination::FinalBlank => 1,
    }
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Free => "free",
        Termination::FinalBlank => "final-blank",
    }
}

pub fn write_dataset<W: Write>(ds: &Dataset, enc: Encoding, mut w: W) -> Result<()> {
    if let Some(s) = ds.symbols.iter().find(|s| s.is_empty() || s.contains(|c: char| c == ',' || c.is_whitespace())) {
        return Err(bad(format!("symbol '{s}' cannot be stored in a header")));
    }
    w.write_all(header(ds, enc).as_bytes())?;
    for u in &ds.utterances {
        match enc {
            Encoding::Binary => {
                let put = |w: &mut W, v: u64| w.write_all(&v.to_le_bytes());
                put(&mut w, u.id.len() as u64)?;
                w.write_all(u.id.as_bytes())?;
                put(&mut w, u.frames() as u64)?;
                put(&mut w, u.tokens.len() as u64)?;
                for &k in u.tokens.iter() {
                    put(&mut w, k as u64)?;
                }
                match &u.topology.windows {
                    None => put(&mut w, u64::MAX)?,
                    Some(ws) => {
                        put(&mut w, ws.len() as u64)?;
                        for &(lo, hi) in ws {
                            put(&mut w, lo as u64)?;
                            put(&mut w, hi as u64)?;
                        }
                    }
                }
                put(&mut w, termination_code(u.topology.termination))?;
                for v in u.features.as_slice() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Encoding::Text => {
                let tokens: Vec<String> = u.tokens.iter().map(|k| k.to_string()).collect();
                let windows = match &u.topology.windows {
                    None => "none".to_string(),
                    Some(ws) => ws
                        .iter()
                        .map(|(lo, hi)| format!("{lo}-{hi}"))
                        .collect::<Vec<_>>()
                        .join(","),
                };
                writeln!(
                    w,
                    "utt {} frames={} tokens={} windows={} termination={}",
                    u.id,
                    u.frames(),
                    tokens.join(","),
                    windows,
                    termination_name(u.topology.termination)
                )?;
                for r in 0..u.frames() {
                    let row: Vec<String> = u.features.row(r).iter().map(|v| format!("{v:?}")).collect();
                    writeln!(w, "{}", row.join(" "))?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Dataset(msg.into())
}

fn field<'a>(parts: &[&'a str], key: &str) -> Result<&'a str> {
    parts
        .iter()
        .find_map(|p| p.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| bad(format!("missing field {key}")))
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| bad(format!("bad {what} '{s}'")))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated binary record"))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_dataset<R: BufRead>(mut r: R) -> Result<Dataset> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() < 3 || parts[0] != HEADER_TAG {
        return Err(bad("missing dataset header"));
    }
    if num::<u32>(parts[1], "version")? != FILE_VERSION {
        return Err(bad(format!("unsupported dataset version {}", parts[1])));
    }
    let feat_dim: usize = num(field(&parts, "feat_dim")?, "feat_dim")?;
    let vocab: usize = num(field(&parts, "vocab")?, "vocab")?;
    let count: usize = num(field(&parts, "utterances")?, "utterances")?;
    let symbols: Vec<String> = match field(&parts, "symbols") {
        Ok(s) => s.split(',').map(str::to_string).collect(),
        Err(_) => Vec::new(),
    };
    let mut utterances = Vec::with_capacity(count);
    match parts[2] {
        "binary" => {
            for _ in 0..count {
                let id_len = read_u64(&mut r)? as usize;
                let mut id = vec![0u8; id_len];
                r.read_exact(&mut id).map_err(|_| bad("truncated id"))?;
                let id = String::from_utf8(id).map_err(|_| bad("id is not UTF-8"))?;
                let frames = read_u64(&mut r)? as usize;
                let ntok = read_u64(&mut r)? as usize;
                let mut tokens = Vec::with_capacity(ntok);
                for _ in 0..ntok {
                    tokens.push(read_u64(&mut r)? as usize);
                }
                let nwin = read_u64(&mut r)?;
                let windows = if nwin == u64::MAX {
                    None
                } else {
                    let mut ws = Vec::new();
                    for _ in 0..nwin {
                        ws.push((read_u64(&mut r)? as usize, read_u64(&mut r)? as usize));
                    }
                    Some(ws)
                };
                let termination = match read_u64(&mut r)? {
                    0 => Termination::Free,
                    1 => Termination::FinalBlank,
                    c => return Err(bad(format!("bad termination code {c}"))),
                };
                let mut data = Vec::with_capacity(frames * feat_dim);
                for _ in 0..frames * feat_dim {
                    data.push(f64::from_bits(read_u64(&mut r)?));
                }
                utterances.push(Utterance {
                    id,
                    features: Matrix::from_vec(frames, feat_dim, data),
                    tokens: TokenSequence::with_vocab(tokens, vocab)?,
                    topology: Topology { termination, windows },
                });
            }
        }
        "text" => {
            let mut lines = r.lines();
            let mut next = || -> Result<String> {
                lines.next().ok_or_else(|| bad("unexpected end of file"))?.map_err(Error::from)
            };
            for _ in 0..count {
                let head = next()?;
                let hp: Vec<&str> = head.split_whitespace().collect();
                if hp.len() < 2 || hp[0] != "utt" {
                    return Err(bad(format!("expected utterance line, got '{head}'")));
                }
                let frames: usize = num(field(&hp, "frames")?, "frames")?;
                let tok = field(&hp, "tokens")?;
                let tokens = tok
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| num::<usize>(s, "token"))
                    .collect::<Result<Vec<_>>>()?;
                let win = field(&hp, "windows")?;
                let windows = if win == "none" {
                    None
                } else {
                    Some(
                        win.split(',')
                            .map(|p| {
                                let (lo, hi) = p.split_once('-').ok_or_else(|| bad("bad window"))?;
                                Ok((num(lo, "window")?, num(hi, "window")?))
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                };
                let termination = match field(&hp, "termination") {
                    Err(_) | Ok("free") => Termination::Free,
                    Ok("final-blank") => Termination::FinalBlank,
                    Ok(other) => return Err(bad(format!("bad termination '{other}'"))),
                };
                let mut data = Vec::with_capacity(frames * feat_dim);
                for _ in 0..frames {
                    let row = next()?;
                    let vals = row
                        .split_whitespace()
                        .map(|s| num::<f64>(s, "feature"))
                        .collect::<Result<Vec<_>>>()?;
                    if vals.len() != feat_dim {
                        return Err(bad(format!("feature row has {} values, expected {feat_dim}", vals.len())));
                    }
                    data.extend(vals);
                }
                utterances.push(Utterance {
                    id: hp[1].to_string(),
                    features: Matrix::from_vec(frames, feat_dim, data),
                    tokens: TokenSequence::with_vocab(tokens, vocab)?,
                    topology: Topology { termination, windows },
                });
            }
        }
        other => return Err(bad(format!("unknown dataset encoding '{other}'"))),
    }
    let ds = Dataset {
        feat_dim,
        vocab,
        utterances,
        symbols,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, enc: Encoding, path: &Path) -> Result<()> {
    write_dataset(ds, enc, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mail_nail_ambiguity() {
        let ds = make_mail_nail_dataset(1.0, 3, 5);
        assert_eq!(ds.len(), 6);
        for pair in ds.utterances.chunks(2) {
            let (a, b) = (&pair[0].features, &pair[1].features);
            for f in 0..CHUNK_FRAMES {
                assert_eq!(a.row(f), b.row(f));
            }
            assert_ne!(a.row(CHUNK_FRAMES), b.row(CHUNK_FRAMES));
            assert_eq!(ds.render(&pair[0].tokens), "mail order");
            assert_eq!(ds.render(&pair[1].tokens), "nail polish");
        }
        let sep = make_mail_nail_dataset(0.0, 20, 5);
        // First dimension alone separates the classes in every first-chunk frame.
        for u in &sep.utterances {
            for f in 0..CHUNK_FRAMES {
                let v = u.features.row(f)[0];
                if u.tokens[0] == MAIL {
                    assert!(v > 0.9);
                } else {
                    assert!(v < -0.9);
                }
            }
        }
        assert_eq!(make_mail_nail_dataset(1.0, 100, 9), make_mail_nail_dataset(1.0, 100, 9));
    }

    #[test]
    fn synthetic_noise_free_is_embeddings() {
        let spec = SyntheticSpec {
            noise: 0.0,
            count: 5,
            ..SyntheticSpec::default()
        };
        let ds = make_synthetic_dataset(&spec, 3).unwrap();
        let emb = synthetic_embeddings(&spec, 3);
        for u in &ds.utterances {
            for (i, &k) in u.tokens.iter().enumerate() {
                for f in 0..spec.frames_per_token {
                    assert_eq!(u.features.row(i * spec.frames_per_token + f), emb[k - 1].as_slice());
                }
            }
        }
        assert_eq!(ds, make_synthetic_dataset(&spec, 3).unwrap());
        assert!(make_synthetic_dataset(&SyntheticSpec { vocab: 1, ..spec }, 3).is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let ds = make_synthetic_dataset(&SyntheticSpec::default(), 1).unwrap();
        let (train, test) = ds.split(10);
        assert_eq!(test.len(), 10);
        let ids: std::collections::HashSet<_> = train.ids().into_iter().collect();
        assert!(test.ids().iter().all(|i| !ids.contains(i)));
    }

    #[test]
    fn batches_respect_budget() {
        let b = make_batches(&[5, 5, 5, 12, 1], 10);
        assert_eq!(b, vec![vec![0, 1], vec![2], vec![3], vec![4]]);
    }

    #[test]
    fn file_round_trips() {
        let mut ds = make_mail_nail_dataset(0.5, 2, 1);
        ds.utterances[0].topology = Topology {
            termination: Termination::FinalBlank,
            windows: None,
        };
        for enc in [Encoding::Binary, Encoding::Text] {
            let mut buf = Vec::new();
            write_dataset(&ds, enc, &mut buf).unwrap();
            let back = read_dataset(buf.as_slice()).unwrap();
            assert_eq!(back, ds);
        }
        assert!(read_dataset(&b"nonsense\n"[..]).is_err());
    }
}
