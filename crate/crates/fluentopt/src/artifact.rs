//! Versioned binary container for trained weights. Layout: magic "FLOPT1",
//! version, artifact kind, a kind-specific config header, then named tensor
//! sections as little-endian f64 with a shape header. Writes are canonical,
//! so identical params produce identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::denoiser::DenoiserParams;
use crate::error::{Error, Result};
use crate::lm::LMParams;
use crate::mat::Mat;
use crate::sae::SAEParams;
use crate::transformer::{LayerParams, TensorRef, TransformerConfig, TransformerParams};

const MAGIC: &[u8; 6] = b"FLOPT1";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArtifactKind {
    Lm = 1,
    Sae = 2,
    Denoiser = 3,
}

impl ArtifactKind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(ArtifactKind::Lm),
            2 => Some(ArtifactKind::Sae),
            3 => Some(ArtifactKind::Denoiser),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Lm => "lm",
            ArtifactKind::Sae => "sae",
            ArtifactKind::Denoiser => "denoiser",
        }
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedArtifact { path: path.display().to_string(), reason: reason.into() }
}

// ---------------------------------------------------------------------------
// Primitive IO
// ---------------------------------------------------------------------------

struct Writer<'a> {
    w: BufWriter<File>,
    path: &'a Path,
}

impl<'a> Writer<'a> {
    fn create(path: &'a Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Writer { w: BufWriter::new(f), path })
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.w.write_all(b).map_err(|e| Error::io(self.path, e))
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn section(&mut self, name: &str, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
        self.u32(name.len() as u32)?;
        self.bytes(name.as_bytes())?;
        self.u32(rows as u32)?;
        self.u32(cols as u32)?;
        for &v in data {
            self.f64(v)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(self.path, e))
    }
}

struct Reader<'a> {
    r: BufReader<File>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Reader { r: BufReader::new(f), path })
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r
            .read_exact(&mut buf)
            .map_err(|_| bad(self.path, "truncated file"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.bytes(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn at_eof(&mut self) -> Result<bool> {
        Ok(self.r.fill_buf().map_err(|e| Error::io(self.path, e))?.is_empty())
    }
}

fn read_sections(r: &mut Reader) -> Result<BTreeMap<String, Mat>> {
    let count = r.u32()? as usize;
    if count > 10_000 {
        return Err(bad(r.path, format!("implausible section count {count}")));
    }
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > 256 {
            return Err(bad(r.path, format!("implausible section name length {name_len}")));
        }
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| bad(r.path, "section name is not UTF-8"))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows.saturating_mul(cols) > 64_000_000 {
            return Err(bad(r.path, format!("implausible shape {rows}x{cols} for {name}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        if out.insert(name.clone(), Mat::from_vec(rows, cols, data)).is_some() {
            return Err(bad(r.path, format!("duplicate section {name}")));
        }
    }
    if !r.at_eof()? {
        return Err(bad(r.path, "trailing bytes after final section"));
    }
    Ok(out)
}

fn take_mat(
    sections: &mut BTreeMap<String, Mat>,
    name: &str,
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<Mat> {
    let m = sections
        .remove(name)
        .ok_or_else(|| bad(path, format!("missing section {name}")))?;
    if m.rows != rows || m.cols != cols {
        return Err(bad(
            path,
            format!("section {name} has shape {}x{}, expected {rows}x{cols}", m.rows, m.cols),
        ));
    }
    Ok(m)
}

fn take_vec(
    sections: &mut BTreeMap<String, Mat>,
    name: &str,
    len: usize,
    path: &Path,
) -> Result<Vec<f64>> {
    Ok(take_mat(sections, name, 1, len, path)?.data)
}

// ---------------------------------------------------------------------------
// Transformer payload
// ---------------------------------------------------------------------------

fn write_header(w: &mut Writer, kind: ArtifactKind) -> Result<()> {
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(kind as u32)
}

fn read_header(r: &mut Reader, expect: ArtifactKind) -> Result<()> {
    let magic = r.bytes(6)?;
    if magic != MAGIC {
        return Err(bad(r.path, "bad magic bytes"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(r.path, format!("unsupported version {version}")));
    }
    let kind = r.u32()?;
    match ArtifactKind::from_u32(kind) {
        Some(k) if k == expect => Ok(()),
        Some(k) => Err(bad(r.path, format!("artifact is {}, expected {}", k.name(), expect.name()))),
        None => Err(bad(r.path, format!("unknown artifact kind {kind}"))),
    }
}

fn write_transformer(path: &Path, kind: ArtifactKind, t: &TransformerParams) -> Result<()> {
    let mut w = Writer::create(path)?;
    write_header(&mut w, kind)?;
    let cfg = &t.cfg;
    w.u32(cfg.vocab as u32)?;
    w.u32(cfg.d as u32)?;
    w.u32(cfg.layers as u32)?;
    w.u32(cfg.heads as u32)?;
    w.u32(cfg.ctx as u32)?;
    w.u32(cfg.causal as u32)?;

    let mut count = 0u32;
    t.visit_tensors(|_, _| count += 1);
    w.u32(count)?;
    let mut err = None;
    t.visit_tensors(|name, tensor| {
        if err.is_some() {
            return;
        }
        let res = match tensor {
            TensorRef::Mat(m) => w.section(name, m.rows, m.cols, &m.data),
            TensorRef::Vec(v) => w.section(name, 1, v.len(), v),
        };
        if let Err(e) = res {
            err = Some(e);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    w.finish()
}

fn read_transformer(path: &Path, kind: ArtifactKind) -> Result<TransformerParams> {
    let mut r = Reader::open(path)?;
    read_header(&mut r, kind)?;
    let vocab = r.u32()? as usize;
    let d = r.u32()? as usize;
    let layers = r.u32()? as usize;
    let heads = r.u32()? as usize;
    let ctx = r.u32()? as usize;
    let causal = match r.u32()? {
        0 => false,
        1 => true,
        v => return Err(bad(path, format!("bad causal flag {v}"))),
    };
    let cfg = TransformerConfig { vocab, d, layers, heads, ctx, causal };
    cfg.validate().map_err(|reason| bad(path, reason))?;

    let mut sections = read_sections(&mut r)?;
    let ff = 4 * d;
    let mut layer_params = Vec::with_capacity(layers);
    for i in 0..layers {
        let tag = |name: &str| format!("layer{i}.{name}");
        layer_params.push(LayerParams {
            ln1_g: take_vec(&mut sections, &tag("ln1_g"), d, path)?,
            ln1_b: take_vec(&mut sections, &tag("ln1_b"), d, path)?,
            wq: take_mat(&mut sections, &tag("wq"), d, d, path)?,
            wk: take_mat(&mut sections, &tag("wk"), d, d, path)?,
            wv: take_mat(&mut sections, &tag("wv"), d, d, path)?,
            wo: take_mat(&mut sections, &tag("wo"), d, d, path)?,
            ln2_g: take_vec(&mut sections, &tag("ln2_g"), d, path)?,
            ln2_b: take_vec(&mut sections, &tag("ln2_b"), d, path)?,
            w1: take_mat(&mut sections, &tag("w1"), d, ff, path)?,
            b1: take_vec(&mut sections, &tag("b1"), ff, path)?,
            w2: take_mat(&mut sections, &tag("w2"), ff, d, path)?,
            b2: take_vec(&mut sections, &tag("b2"), d, path)?,
        });
    }
    let params = TransformerParams {
        cfg,
        emb: take_mat(&mut sections, "emb", vocab, d, path)?,
        pos: take_mat(&mut sections, "pos", ctx, d, path)?,
        layers: layer_params,
        lnf_g: take_vec(&mut sections, "lnf_g", d, path)?,
        lnf_b: take_vec(&mut sections, "lnf_b", d, path)?,
        unemb: take_mat(&mut sections, "unemb", d, vocab, path)?,
    };
    if let Some(name) = sections.keys().next() {
        return Err(bad(path, format!("unexpected section {name}")));
    }
    if !params.is_finite() {
        return Err(bad(path, "non-finite parameter values"));
    }
    Ok(params)
}

pub fn save_lm(path: &Path, params: &LMParams) -> Result<()> {
    write_transformer(path, ArtifactKind::Lm, &params.t)
}

pub fn load_lm(path: &Path) -> Result<LMParams> {
    let t = read_transformer(path, ArtifactKind::Lm)?;
    if !t.cfg.causal {
        return Err(bad(path, "lm artifact is not causal"));
    }
    Ok(LMParams { t })
}

pub fn save_denoiser(path: &Path, params: &DenoiserParams) -> Result<()> {
    write_transformer(path, ArtifactKind::Denoiser, &params.t)
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserParams> {
    let t = read_transformer(path, ArtifactKind::Denoiser)?;
    if t.cfg.causal {
        return Err(bad(path, "denoiser artifact is causal"));
    }
    Ok(DenoiserParams { t })
}

// ---------------------------------------------------------------------------
// SAE payload
// ---------------------------------------------------------------------------

pub fn save_sae(path: &Path, params: &SAEParams) -> Result<()> {
    let mut w = Writer::create(path)?;
    write_header(&mut w, ArtifactKind::Sae)?;
    let (m, d) = (params.latent_count(), params.input_width());
    w.u32(d as u32)?;
    w.u32(m as u32)?;
    w.u32(params.layer as u32)?;
    w.f64(params.theta)?;
    w.u32(4)?;
    w.section("enc", m, d, &params.enc.data)?;
    w.section("enc_bias", 1, m, &params.enc_bias)?;
    w.section("dec", m, d, &params.dec.data)?;
    w.section("dec_bias", 1, d, &params.dec_bias)?;
    w.finish()
}

pub fn load_sae(path: &Path) -> Result<SAEParams> {
    let mut r = Reader::open(path)?;
    read_header(&mut r, ArtifactKind::Sae)?;
    let d = r.u32()? as usize;
    let m = r.u32()? as usize;
    let layer = r.u32()? as usize;
    let theta = r.f64()?;
    if m <= d {
        return Err(bad(path, format!("latent count {m} not overcomplete for width {d}")));
    }
    if !(theta >= 0.0) {
        return Err(bad(path, format!("bad threshold {theta}")));
    }
    let mut sections = read_sections(&mut r)?;
    let params = SAEParams {
        enc: take_mat(&mut sections, "enc", m, d, path)?,
        enc_bias: take_vec(&mut sections, "enc_bias", m, path)?,
        dec: take_mat(&mut sections, "dec", m, d, path)?,
        dec_bias: take_vec(&mut sections, "dec_bias", d, path)?,
        theta,
        layer,
    };
    if let Some(name) = sections.keys().next() {
        return Err(bad(path, format!("unexpected section {name}")));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lm_fixture(seed: u64) -> LMParams {
        let cfg =
            TransformerConfig { vocab: 9, d: 8, layers: 2, heads: 2, ctx: 10, causal: true };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LMParams { t: TransformerParams::init(cfg, &mut rng) }
    }

    #[test]
    fn lm_round_trip_is_exact() {
        let params = lm_fixture(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.flopt");
        save_lm(&path, &params).unwrap();
        let back = load_lm(&path).unwrap();
        assert_eq!(back.t, params.t);
    }

    #[test]
    fn writes_are_byte_identical() {
        let params = lm_fixture(2);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.flopt");
        let b = dir.path().join("b.flopt");
        save_lm(&a, &params).unwrap();
        save_lm(&b, &params).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn sae_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = SAEParams {
            enc: Mat::randn(12, 8, 1.0, &mut rng),
            enc_bias: (0..12).map(|i| i as f64).collect(),
            dec: Mat::randn(12, 8, 1.0, &mut rng),
            dec_bias: vec![0.5; 8],
            theta: 0.25,
            layer: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sae.flopt");
        save_sae(&path, &params).unwrap();
        assert_eq!(load_sae(&path).unwrap(), params);
    }

    #[test]
    fn denoiser_round_trip_and_kind_guard() {
        let cfg =
            TransformerConfig { vocab: 9, d: 8, layers: 1, heads: 2, ctx: 10, causal: false };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = DenoiserParams { t: TransformerParams::init(cfg, &mut rng) };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("den.flopt");
        save_denoiser(&path, &params).unwrap();
        assert_eq!(load_denoiser(&path).unwrap().t, params.t);
        // Kind mismatch is rejected.
        assert!(matches!(load_lm(&path), Err(Error::MalformedArtifact { .. })));
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.flopt");

        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(matches!(load_lm(&path), Err(Error::MalformedArtifact { .. })));

        // Valid artifact truncated halfway.
        let params = lm_fixture(5);
        save_lm(&path, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_lm(&path), Err(Error::MalformedArtifact { .. })));

        // Trailing garbage.
        save_lm(&path, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 16]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_lm(&path), Err(Error::MalformedArtifact { .. })));
    }
}
