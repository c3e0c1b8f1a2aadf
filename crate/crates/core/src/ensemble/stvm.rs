//! Binary model container (`STVM`).
//!
//! Little-endian layout:
//!
//! ```text
//! "STVM"  u32 version
//! u32 n_components  u32 scales_per_band  u8 overlapping  u8 mode (0 tree, 1 forest)
//! u32 forest_size  f64 cutoff  f64 p_enh  u32 learner count
//! per learner:  u32 tree count, then per tree:
//!     u64 seed  u32 n_features  u32 node count
//!     nodes in preorder: u8 0 + 3 x u64 class counts (leaf)
//!                      | u8 1 + u32 feature + f64 threshold (split)
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use super::cart::{DecisionTree, Node};
use super::{BandConfig, EnsembleConfig, EnsembleModel, Learner, Mode};
use crate::error::{Result, StvError};

pub const MAGIC: &[u8; 4] = b"STVM";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| StvError::Format(format!("{v} exceeds u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &EnsembleModel) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    let c = &model.config;
    w.u32(c.bands.n_components)?;
    w.u32(c.bands.scales_per_band)?;
    w.u8(c.bands.overlapping as u8);
    w.u8(match c.mode {
        Mode::Tree => 0,
        Mode::Forest => 1,
    });
    w.u32(c.forest_size)?;
    w.f64(c.cutoff);
    w.f64(c.p_enh);
    w.u32(model.learners.len())?;
    for learner in &model.learners {
        let (trees, seeds): (&[DecisionTree], Vec<u64>) = match learner {
            Learner::Tree(t) => (std::slice::from_ref(t), vec![0]),
            Learner::Forest { trees, seeds } => (trees, seeds.clone()),
        };
        w.u32(trees.len())?;
        for (tree, seed) in trees.iter().zip(seeds) {
            w.u64(seed);
            w.u32(tree.n_features())?;
            w.u32(tree.nodes().len())?;
            for node in tree.nodes() {
                match node {
                    Node::Leaf { counts } => {
                        w.u8(0);
                        counts.iter().for_each(|&c| w.u64(c));
                    }
                    Node::Split { feature, threshold, .. } => {
                        w.u8(1);
                        w.u32(*feature)?;
                        w.f64(*threshold);
                    }
                }
            }
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    Ok(w.0)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| StvError::Format(format!("model truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Fills in right-child indices of a preorder list; returns one past the subtree end.
fn link(nodes: &mut [Node], i: usize) -> Result<usize> {
    match nodes.get(i) {
        None => Err(StvError::Format("tree node list ends inside a subtree".into())),
        Some(Node::Leaf { .. }) => Ok(i + 1),
        Some(Node::Split { .. }) => {
            let right_at = link(nodes, i + 1)?;
            if let Node::Split { right, .. } = &mut nodes[i] {
                *right = right_at;
            }
            link(nodes, right_at)
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<EnsembleModel> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(StvError::Format("missing STVM magic".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(StvError::Format(format!(
            "CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(StvError::Format(format!("unsupported STVM version {version}")));
    }
    let bands = BandConfig {
        n_components: r.u32()?,
        scales_per_band: r.u32()?,
        overlapping: match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(StvError::Format(format!("bad overlapping flag {b}"))),
        },
    };
    let mode = match r.u8()? {
        0 => Mode::Tree,
        1 => Mode::Forest,
        b => return Err(StvError::Format(format!("bad mode byte {b}"))),
    };
    let config = EnsembleConfig {
        bands,
        mode,
        forest_size: r.u32()?,
        cutoff: r.f64()?,
        p_enh: r.f64()?,
    };
    config
        .validate()
        .map_err(|e| StvError::Format(format!("stored configuration: {e}")))?;
    let n_learners = r.u32()?;
    if n_learners != bands.band_count() {
        return Err(StvError::Format(format!(
            "{n_learners} learners for {} bands",
            bands.band_count()
        )));
    }
    let mut learners = Vec::with_capacity(n_learners);
    for _ in 0..n_learners {
        let n_trees = r.u32()?;
        if n_trees == 0 || (mode == Mode::Tree && n_trees != 1) {
            return Err(StvError::Format(format!("{n_trees} trees in a {mode} learner")));
        }
        let mut trees = Vec::with_capacity(n_trees);
        let mut seeds = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            seeds.push(r.u64()?);
            let n_features = r.u32()?;
            let n_nodes = r.u32()?;
            let mut nodes = Vec::with_capacity(n_nodes.min(body.len()));
            for _ in 0..n_nodes {
                nodes.push(match r.u8()? {
                    0 => Node::Leaf {
                        counts: [r.u64()?, r.u64()?, r.u64()?],
                    },
                    1 => Node::Split {
                        feature: r.u32()?,
                        threshold: r.f64()?,
                        right: 0,
                    },
                    t => return Err(StvError::Format(format!("bad node tag {t}"))),
                });
            }
            if link(&mut nodes, 0)? != nodes.len() {
                return Err(StvError::Format("trailing nodes after tree".into()));
            }
            trees.push(DecisionTree::from_nodes(n_features, nodes)?);
        }
        learners.push(match mode {
            Mode::Tree => Learner::Tree(trees.pop().expect("one tree")),
            Mode::Forest => Learner::Forest { trees, seeds },
        });
    }
    if r.pos != body.len() {
        return Err(StvError::Format(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    Ok(EnsembleModel { config, learners })
}

pub fn write(path: &Path, model: &EnsembleModel) -> Result<()> {
    std::fs::write(path, encode(model)?).map_err(|e| StvError::io(path, e))
}

pub fn read(path: &Path) -> Result<EnsembleModel> {
    let bytes = std::fs::read(path).map_err(|e| StvError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        StvError::Format(m) => StvError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
