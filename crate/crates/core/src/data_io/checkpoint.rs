//! Versioned binary model file.
//!
//! Layout: `EMOFUSE\0` magic, `u32` format version, one endianness byte, then
//! sections `tag: u8, len: u64, payload`, then a CRC-32 of every preceding
//! byte. All integers and floats are little-endian; floats are stored as their
//! IEEE-754 bits so they round-trip exactly.

use std::fs;
use std::path::Path;

use crate::bayes::{BayesModel, BernoulliCpt, ClassPrior, CnnEvidenceCpt, DescriptorVocabulary, EvidenceMode};
use crate::emotion::{EmotionDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, LrnParams, Network, NetworkSpec};
use crate::tensor::Tensor;
use crate::train::OptimizerConfig;

pub const MAGIC: [u8; 8] = *b"EMOFUSE\0";
pub const FORMAT_VERSION: u32 = 1;
const LITTLE_ENDIAN: u8 = 1;
const HEADER_LEN: usize = MAGIC.len() + 4 + 1;
const CRC_LEN: usize = 4;

const SEC_NETWORK: u8 = 1;
const SEC_OPTIMIZER: u8 = 2;
const SEC_BAYES: u8 = 3;
const SEC_CNN_CPT: u8 = 4;

/// Everything a trained system needs; each component is optional so the
/// pipeline stages can fill the file in one at a time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelBundle {
    pub network: Option<Network>,
    /// Optimizer settings the network was trained with.
    pub optimizer: Option<OptimizerConfig>,
    pub bayes: Option<BayesModel>,
    pub cnn_cpt: Option<CnnEvidenceCpt>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &Tensor) {
        self.usize(t.shape().len());
        t.shape().iter().for_each(|&d| self.usize(d));
        t.data().iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A length or count; rejected when it could not possibly fit in the remaining bytes.
    fn len(&mut self, elem_size: usize) -> Result<usize> {
        let v = self.u64()?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if v.saturating_mul(elem_size.max(1) as u64) > remaining {
            return Err(Error::Integrity(format!("length {v} exceeds remaining {remaining} bytes")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f64()?;
        }
        Ok(out)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("string is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.len(8)?;
        let shape = (0..rank).map(|_| self.len(0)).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Integrity("tensor size overflows".into()))?;
        if count.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(Error::Integrity("tensor data truncated".into()));
        }
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Integrity(format!("{} trailing bytes in {what}", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn encode_layer(w: &mut Writer, layer: &LayerSpec) {
    match *layer {
        LayerSpec::Conv { kernel, out_channels } => {
            w.u8(0);
            w.usize(kernel);
            w.usize(out_channels);
        }
        LayerSpec::MaxPool { kernel, stride } => {
            w.u8(1);
            w.usize(kernel);
            w.usize(stride);
        }
        LayerSpec::Lrn(p) => {
            w.u8(2);
            w.f64(p.k);
            w.usize(p.n);
            w.f64(p.alpha);
            w.f64(p.beta);
        }
        LayerSpec::Relu => w.u8(3),
        LayerSpec::Dense { units } => {
            w.u8(4);
            w.usize(units);
        }
        LayerSpec::Dropout { keep_prob } => {
            w.u8(5);
            w.f64(keep_prob);
        }
        LayerSpec::Softmax => w.u8(6),
    }
}

fn decode_layer(r: &mut Reader) -> Result<LayerSpec> {
    Ok(match r.u8()? {
        0 => LayerSpec::Conv {
            kernel: r.len(0)?,
            out_channels: r.len(0)?,
        },
        1 => LayerSpec::MaxPool {
            kernel: r.len(0)?,
            stride: r.len(0)?,
        },
        2 => LayerSpec::Lrn(LrnParams {
            k: r.f64()?,
            n: r.len(0)?,
            alpha: r.f64()?,
            beta: r.f64()?,
        }),
        3 => LayerSpec::Relu,
        4 => LayerSpec::Dense { units: r.len(0)? },
        5 => LayerSpec::Dropout { keep_prob: r.f64()? },
        6 => LayerSpec::Softmax,
        t => return Err(Error::Integrity(format!("unknown layer tag {t}"))),
    })
}

fn encode_network(w: &mut Writer, net: &Network) {
    let spec = net.spec();
    spec.input_shape.iter().for_each(|&d| w.usize(d));
    w.usize(spec.layers.len());
    spec.layers.iter().for_each(|l| encode_layer(w, l));
    w.usize(net.params().len());
    net.params().iter().for_each(|t| w.tensor(t));
}

fn decode_network(r: &mut Reader) -> Result<Network> {
    let input_shape = [r.len(0)?, r.len(0)?, r.len(0)?];
    let n = r.len(1)?;
    let layers = (0..n).map(|_| decode_layer(r)).collect::<Result<Vec<_>>>()?;
    let n = r.len(16)?;
    let params = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    Network::new(NetworkSpec { input_shape, layers }, params)
}

fn encode_optimizer(w: &mut Writer, c: &OptimizerConfig) {
    w.f64(c.learning_rate);
    w.f64(c.decay);
    w.f64(c.epsilon);
    w.usize(c.iterations);
    w.usize(c.batch_size);
    w.usize(c.per_class);
    w.u64(c.seed);
}

fn decode_optimizer(r: &mut Reader) -> Result<OptimizerConfig> {
    Ok(OptimizerConfig {
        learning_rate: r.f64()?,
        decay: r.f64()?,
        epsilon: r.f64()?,
        iterations: r.u64()? as usize,
        batch_size: r.u64()? as usize,
        per_class: r.u64()? as usize,
        seed: r.u64()?,
    })
}

fn encode_bayes(w: &mut Writer, m: &BayesModel) {
    w.u8(match m.mode() {
        EvidenceMode::Full => 0,
        EvidenceMode::PresenceOnly => 1,
    });
    w.usize(m.vocabulary().len());
    m.vocabulary().names().iter().for_each(|s| w.str(s));
    w.f64(m.cpt().smoothing());
    m.cpt().rows().iter().flatten().for_each(|&p| w.f64(p));
    m.prior().0.probs().iter().for_each(|&p| w.f64(p));
}

fn decode_bayes(r: &mut Reader) -> Result<BayesModel> {
    let mode = match r.u8()? {
        0 => EvidenceMode::Full,
        1 => EvidenceMode::PresenceOnly,
        t => return Err(Error::Integrity(format!("unknown evidence mode tag {t}"))),
    };
    let n = r.len(8)?;
    let names = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let vocab = DescriptorVocabulary::from_descriptors(&names);
    if vocab.names() != names.as_slice() {
        return Err(Error::Integrity("stored vocabulary is not normalized and sorted".into()));
    }
    let smoothing = r.f64()?;
    let rows = (0..n).map(|_| r.f64s::<NUM_CLASSES>()).collect::<Result<Vec<_>>>()?;
    let prior = EmotionDistribution::new(r.f64s()?)?;
    BayesModel::new(vocab, BernoulliCpt::new(rows, smoothing)?, ClassPrior(prior), mode)
}

fn encode_cnn_cpt(w: &mut Writer, c: &CnnEvidenceCpt) {
    c.rows().iter().flatten().for_each(|&p| w.f64(p));
}

fn decode_cnn_cpt(r: &mut Reader) -> Result<CnnEvidenceCpt> {
    CnnEvidenceCpt::new([r.f64s()?, r.f64s()?, r.f64s()?])
}

fn section(out: &mut Writer, tag: u8, body: impl FnOnce(&mut Writer)) {
    let mut w = Writer::default();
    body(&mut w);
    out.u8(tag);
    out.usize(w.0.len());
    out.0.extend_from_slice(&w.0);
}

/// Serializes a bundle to bytes.
pub fn encode(bundle: &ModelBundle) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(&MAGIC);
    w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.u8(LITTLE_ENDIAN);
    if let Some(n) = &bundle.network {
        section(&mut w, SEC_NETWORK, |w| encode_network(w, n));
    }
    if let Some(o) = &bundle.optimizer {
        section(&mut w, SEC_OPTIMIZER, |w| encode_optimizer(w, o));
    }
    if let Some(b) = &bundle.bayes {
        section(&mut w, SEC_BAYES, |w| encode_bayes(w, b));
    }
    if let Some(c) = &bundle.cnn_cpt {
        section(&mut w, SEC_CNN_CPT, |w| encode_cnn_cpt(w, c));
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

/// Parses bytes produced by [`encode`]. Checks magic, version, endianness and
/// checksum before reading any section.
pub fn decode(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(Error::Integrity(format!("{} bytes is too short for a model file", bytes.len())));
    }
    let mut header = Reader::new(&bytes[..HEADER_LEN]);
    if header.take(MAGIC.len())? != MAGIC {
        return Err(Error::Integrity("not a model file (bad magic)".into()));
    }
    let version = header.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let endian = header.u8()?;
    if endian != LITTLE_ENDIAN {
        return Err(Error::Integrity(format!("unknown endianness tag {endian}")));
    }
    let (content, crc) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(content);
    if stored != actual {
        return Err(Error::Integrity(format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})")));
    }

    let mut bundle = ModelBundle::default();
    let mut r = Reader::new(&content[HEADER_LEN..]);
    while r.pos < r.bytes.len() {
        let tag = r.u8()?;
        let len = r.len(1)?;
        let mut s = Reader::new(r.take(len)?);
        let dup = match tag {
            SEC_NETWORK => bundle.network.replace(decode_network(&mut s)?).is_some(),
            SEC_OPTIMIZER => bundle.optimizer.replace(decode_optimizer(&mut s)?).is_some(),
            SEC_BAYES => bundle.bayes.replace(decode_bayes(&mut s)?).is_some(),
            SEC_CNN_CPT => bundle.cnn_cpt.replace(decode_cnn_cpt(&mut s)?).is_some(),
            t => return Err(Error::Integrity(format!("unknown section tag {t}"))),
        };
        if dup {
            return Err(Error::Integrity(format!("section {tag} appears twice")));
        }
        s.finish("section")?;
    }
    Ok(bundle)
}

pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<()> {
    fs::write(path, encode(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.context(format!("model {}", path.display())))
}
