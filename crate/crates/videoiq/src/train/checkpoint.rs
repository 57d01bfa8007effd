//! Binary checkpoint format.
//!
//! Layout: magic "VIQ1", version, section count, then CRC-guarded sections:
//! config echo, teacher weights, the truncation code store (codes packed
//! little-endian at the widest width, norm scale as f32, mean offsets),
//! batch-norm banks, clip params, the live full-precision weights, policy
//! weights, optimizer state, rng state and the training-log tail. All
//! numeric payloads round-trip bit-identically.

use super::stages::StageLog;
use super::{ClipSetting, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::policy::{PolicyConfig, PolicyNet};
use crate::quant::{pack_codes, unpack_codes, AnyPrecisionStore, ClipParam, StoredLayer};
use crate::recognizer::{BnBank, RecognitionNet, RecognizerConfig, NUM_BLOCKS};
use crate::tensor::Tensor;
use std::io::{Read, Write as IoWrite};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"VIQ1";
pub const VERSION: u16 = 1;

mod section {
    pub const CONFIG: u32 = 1;
    pub const TEACHER: u32 = 2;
    pub const STORE: u32 = 3;
    pub const BN_BANKS: u32 = 4;
    pub const CLIPS: u32 = 5;
    pub const RAW_WEIGHTS: u32 = 6;
    pub const POLICY: u32 = 7;
    pub const OPTIMIZER: u32 = 8;
    pub const RNG: u32 = 9;
    pub const LOG_TAIL: u32 = 10;
}

/// Reproducibility state: streams are derived from (seed, stage, epoch), so
/// the master seed plus the epoch cursor pins every later draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub master_seed: u64,
    pub stage2_epochs_done: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub teacher: Option<RecognitionNet>,
    pub recognizer: Option<RecognitionNet>,
    pub policy: Option<PolicyNet>,
    /// Stage-2 momentum buffers, in the policy's parameter order.
    pub optimizer_velocities: Vec<Tensor>,
    pub rng: RngState,
    pub log_tail: Vec<String>,
}

impl Checkpoint {
    pub fn new(config: TrainConfig) -> Self {
        Checkpoint {
            config,
            teacher: None,
            recognizer: None,
            policy: None,
            optimizer_velocities: Vec::new(),
            rng: RngState::default(),
            log_tail: Vec::new(),
        }
    }

    pub fn with_log_tail(mut self, log: &StageLog, n: usize) -> Self {
        self.log_tail = log.tail(n);
        self
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

// ── little-endian writer/reader ─────────────────────────────────────

#[derive(Default)]
struct W {
    buf: Vec<u8>,
}

impl W {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.len(v.len());
        self.buf.extend_from_slice(v);
    }
    fn string(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        for &x in v {
            self.f64(x);
        }
    }
    fn tensor(&mut self, t: &Tensor) {
        self.len(t.shape().len());
        for &d in t.shape() {
            self.len(d);
        }
        for &x in t.data() {
            self.f64(x);
        }
    }
}

struct R<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> R<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u64()? as usize)
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|e| Error::format("checkpoint", e.to_string()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.len()?;
        let shape: Vec<usize> = (0..rank).map(|_| self.len()).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.f64()).collect::<Result<_>>()?;
        Tensor::new(shape, data)
    }
}

// ── per-structure serialization ─────────────────────────────────────

fn put_train_config(w: &mut W, c: &TrainConfig) {
    w.len(c.teacher_epochs);
    w.len(c.stage1_epochs);
    w.len(c.stage2_epochs);
    w.f64(c.teacher_lr);
    w.f64(c.stage1_lr);
    w.f64(c.stage2_lr);
    w.f64(c.momentum);
    w.f64(c.weight_decay);
    w.len(c.batch_size);
    w.f64(c.alpha_init);
    w.len(c.clip_settings.len());
    for (b, s) in &c.clip_settings {
        w.u32(*b);
        w.f64(s.lr);
        w.f64(s.wd);
    }
    w.f64(c.loss_weights.efficiency);
    w.f64(c.loss_weights.balance);
    w.f64(c.loss_weights.entropy);
    w.f64(c.tau_initial);
    w.f64(c.tau_floor);
    w.f64(c.grad_clip);
    w.u64(c.seed);
    w.u8(c.parallel_precisions as u8);
}

fn get_train_config(r: &mut R) -> Result<TrainConfig> {
    Ok(TrainConfig {
        teacher_epochs: r.len()?,
        stage1_epochs: r.len()?,
        stage2_epochs: r.len()?,
        teacher_lr: r.f64()?,
        stage1_lr: r.f64()?,
        stage2_lr: r.f64()?,
        momentum: r.f64()?,
        weight_decay: r.f64()?,
        batch_size: r.len()?,
        alpha_init: r.f64()?,
        clip_settings: {
            let n = r.len()?;
            (0..n)
                .map(|_| Ok((r.u32()?, ClipSetting { lr: r.f64()?, wd: r.f64()? })))
                .collect::<Result<_>>()?
        },
        loss_weights: LossWeights { efficiency: r.f64()?, balance: r.f64()?, entropy: r.f64()? },
        tau_initial: r.f64()?,
        tau_floor: r.f64()?,
        grad_clip: r.f64()?,
        seed: r.u64()?,
        parallel_precisions: r.u8()? != 0,
    })
}

fn put_rec_config(w: &mut W, c: &RecognizerConfig) {
    w.len(c.input_h);
    w.len(c.input_w);
    for &ch in &c.channels {
        w.len(ch);
    }
    w.len(c.num_classes);
    w.len(c.widths.len());
    for &b in &c.widths {
        w.u32(b);
    }
    w.f64(c.alpha_init);
    w.f64(c.bn_momentum);
    w.f64(c.bn_eps);
}

fn get_rec_config(r: &mut R) -> Result<RecognizerConfig> {
    let input_h = r.len()?;
    let input_w = r.len()?;
    let mut channels = [0usize; NUM_BLOCKS];
    for ch in channels.iter_mut() {
        *ch = r.len()?;
    }
    let num_classes = r.len()?;
    let nw = r.len()?;
    let widths = (0..nw).map(|_| r.u32()).collect::<Result<_>>()?;
    Ok(RecognizerConfig {
        input_h,
        input_w,
        channels,
        num_classes,
        widths,
        alpha_init: r.f64()?,
        bn_momentum: r.f64()?,
        bn_eps: r.f64()?,
    })
}

fn put_bank(w: &mut W, b: &BnBank) {
    w.tensor(&b.gamma);
    w.tensor(&b.beta);
    w.f64s(&b.running_mean);
    w.f64s(&b.running_var);
}

fn get_bank(r: &mut R) -> Result<BnBank> {
    Ok(BnBank {
        gamma: r.tensor()?,
        beta: r.tensor()?,
        running_mean: r.f64s()?,
        running_var: r.f64s()?,
    })
}

/// The weight-store wire format: per layer, the widest width, codes packed
/// little-endian at that many bits per code, the f32 normalization scale and
/// the per-width mean offsets.
fn put_store(w: &mut W, s: &AnyPrecisionStore) {
    w.u32(s.widest_bits);
    w.len(s.lower_widths.len());
    for &b in &s.lower_widths {
        w.u32(b);
    }
    w.len(s.layers.len());
    for layer in &s.layers {
        w.len(layer.shape.len());
        for &d in &layer.shape {
            w.len(d);
        }
        w.len(layer.codes.len());
        w.bytes(&pack_codes(&layer.codes, s.widest_bits));
        w.f32(layer.norm_scale);
        w.f64s(&layer.mean_offsets);
    }
}

fn get_store(r: &mut R) -> Result<AnyPrecisionStore> {
    let widest_bits = r.u32()?;
    let nl = r.len()?;
    let lower_widths: Vec<u32> = (0..nl).map(|_| r.u32()).collect::<Result<_>>()?;
    let layers = (0..r.len()?)
        .map(|_| {
            let rank = r.len()?;
            let shape: Vec<usize> = (0..rank).map(|_| r.len()).collect::<Result<_>>()?;
            let count = r.len()?;
            let codes = unpack_codes(r.bytes()?, widest_bits, count)?;
            Ok(StoredLayer {
                shape,
                codes,
                norm_scale: r.f32()?,
                mean_offsets: r.f64s()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AnyPrecisionStore { widest_bits, lower_widths, layers })
}

fn put_recognizer(w: &mut W, net: &RecognitionNet, include_store: bool) {
    put_rec_config(w, &net.cfg);
    w.u8(net.is_teacher as u8);
    for c in &net.convs {
        w.tensor(c);
    }
    w.tensor(&net.head_w);
    w.tensor(&net.head_b);
    w.len(net.bn_banks.len());
    for banks in &net.bn_banks {
        for b in banks {
            put_bank(w, b);
        }
    }
    w.len(net.clips.len());
    for clips in &net.clips {
        for c in clips {
            w.f64(c.alpha);
        }
    }
    match (&net.store, include_store) {
        (Some(s), true) => {
            w.u8(1);
            put_store(w, s);
        }
        _ => w.u8(0),
    }
}

fn get_recognizer(r: &mut R) -> Result<RecognitionNet> {
    let cfg = get_rec_config(r)?;
    let is_teacher = r.u8()? != 0;
    let convs = (0..NUM_BLOCKS).map(|_| r.tensor()).collect::<Result<_>>()?;
    let head_w = r.tensor()?;
    let head_b = r.tensor()?;
    let nb = r.len()?;
    let mut bn_banks = Vec::with_capacity(nb);
    for _ in 0..nb {
        bn_banks.push((0..NUM_BLOCKS).map(|_| get_bank(r)).collect::<Result<Vec<_>>>()?);
    }
    let nc = r.len()?;
    let mut clips = Vec::with_capacity(nc);
    for _ in 0..nc {
        clips.push(
            (0..NUM_BLOCKS)
                .map(|_| Ok(ClipParam::new(r.f64()?)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let store = if r.u8()? != 0 { Some(get_store(r)?) } else { None };
    Ok(RecognitionNet { cfg, convs, head_w, head_b, bn_banks, clips, store, is_teacher })
}

fn put_policy(w: &mut W, p: &PolicyNet) {
    w.len(p.cfg.input_h);
    w.len(p.cfg.input_w);
    w.len(p.cfg.conv_channels.0);
    w.len(p.cfg.conv_channels.1);
    w.len(p.cfg.hidden);
    w.len(p.cfg.num_actions);
    for t in p.params() {
        w.tensor(t);
    }
}

fn get_policy(r: &mut R) -> Result<PolicyNet> {
    let cfg = PolicyConfig {
        input_h: r.len()?,
        input_w: r.len()?,
        conv_channels: (r.len()?, r.len()?),
        hidden: r.len()?,
        num_actions: r.len()?,
    };
    let mut net = PolicyNet::zeroed(cfg);
    for t in net.params_mut() {
        *t = r.tensor()?;
    }
    Ok(net)
}

// ── sections ────────────────────────────────────────────────────────

fn push_section(out: &mut Vec<u8>, id: u32, payload: &[u8]) {
    out.extend_from_slice(&id.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32(payload).to_le_bytes());
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut sections: Vec<(u32, Vec<u8>)> = Vec::new();

    let mut w = W::default();
    put_train_config(&mut w, &ck.config);
    sections.push((section::CONFIG, w.buf));

    if let Some(t) = &ck.teacher {
        let mut w = W::default();
        put_recognizer(&mut w, t, true);
        sections.push((section::TEACHER, w.buf));
    }
    if let Some(netr) = &ck.recognizer {
        // decomposed: store / banks / clips / raw weights
        if let Some(s) = &netr.store {
            let mut w = W::default();
            put_store(&mut w, s);
            sections.push((section::STORE, w.buf));
        }
        let mut w = W::default();
        w.len(netr.bn_banks.len());
        for banks in &netr.bn_banks {
            for b in banks {
                put_bank(&mut w, b);
            }
        }
        sections.push((section::BN_BANKS, w.buf));

        let mut w = W::default();
        w.len(netr.clips.len());
        for clips in &netr.clips {
            for c in clips {
                w.f64(c.alpha);
            }
        }
        sections.push((section::CLIPS, w.buf));

        let mut w = W::default();
        put_rec_config(&mut w, &netr.cfg);
        w.u8(netr.is_teacher as u8);
        for c in &netr.convs {
            w.tensor(c);
        }
        w.tensor(&netr.head_w);
        w.tensor(&netr.head_b);
        sections.push((section::RAW_WEIGHTS, w.buf));
    }
    if let Some(p) = &ck.policy {
        let mut w = W::default();
        put_policy(&mut w, p);
        sections.push((section::POLICY, w.buf));
    }
    if !ck.optimizer_velocities.is_empty() {
        let mut w = W::default();
        w.len(ck.optimizer_velocities.len());
        for t in &ck.optimizer_velocities {
            w.tensor(t);
        }
        sections.push((section::OPTIMIZER, w.buf));
    }
    let mut w = W::default();
    w.u64(ck.rng.master_seed);
    w.u32(ck.rng.stage2_epochs_done);
    sections.push((section::RNG, w.buf));

    let mut w = W::default();
    w.len(ck.log_tail.len());
    for line in &ck.log_tail {
        w.string(line);
    }
    sections.push((section::LOG_TAIL, w.buf));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (id, payload) in sections {
        push_section(&mut out, id, &payload);
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = R { buf: bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::format("checkpoint magic", format!("expected {MAGIC:?}, got {magic:?}")));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format("checkpoint version", format!("unsupported version {version}")));
    }
    let n_sections = r.u32()?;

    let mut config: Option<TrainConfig> = None;
    let mut teacher = None;
    let mut store: Option<AnyPrecisionStore> = None;
    let mut banks: Option<Vec<Vec<BnBank>>> = None;
    let mut clips: Option<Vec<Vec<ClipParam>>> = None;
    let mut raw: Option<RecognitionNet> = None;
    let mut policy = None;
    let mut optimizer_velocities = Vec::new();
    let mut rng = RngState::default();
    let mut log_tail = Vec::new();

    for _ in 0..n_sections {
        let id = r.u32()?;
        let len = r.len()?;
        let payload = r.take(len)?;
        let stored_crc = r.u32()?;
        if crc32(payload) != stored_crc {
            return Err(Error::format("checkpoint section", format!("CRC failure in section {id}")));
        }
        let mut sr = R { buf: payload, pos: 0 };
        match id {
            section::CONFIG => config = Some(get_train_config(&mut sr)?),
            section::TEACHER => teacher = Some(get_recognizer(&mut sr)?),
            section::STORE => store = Some(get_store(&mut sr)?),
            section::BN_BANKS => {
                let n = sr.len()?;
                let mut all = Vec::with_capacity(n);
                for _ in 0..n {
                    all.push((0..NUM_BLOCKS).map(|_| get_bank(&mut sr)).collect::<Result<Vec<_>>>()?);
                }
                banks = Some(all);
            }
            section::CLIPS => {
                let n = sr.len()?;
                let mut all = Vec::with_capacity(n);
                for _ in 0..n {
                    all.push(
                        (0..NUM_BLOCKS)
                            .map(|_| Ok(ClipParam::new(sr.f64()?)))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                clips = Some(all);
            }
            section::RAW_WEIGHTS => {
                let cfg = get_rec_config(&mut sr)?;
                let is_teacher = sr.u8()? != 0;
                let convs: Vec<Tensor> =
                    (0..NUM_BLOCKS).map(|_| sr.tensor()).collect::<Result<_>>()?;
                let head_w = sr.tensor()?;
                let head_b = sr.tensor()?;
                let widths = cfg.widths.len();
                raw = Some(RecognitionNet {
                    bn_banks: vec![Vec::new(); widths],
                    clips: vec![Vec::new(); widths],
                    cfg,
                    convs,
                    head_w,
                    head_b,
                    store: None,
                    is_teacher,
                });
            }
            section::POLICY => policy = Some(get_policy(&mut sr)?),
            section::OPTIMIZER => {
                let n = sr.len()?;
                optimizer_velocities = (0..n).map(|_| sr.tensor()).collect::<Result<_>>()?;
            }
            section::RNG => {
                rng = RngState { master_seed: sr.u64()?, stage2_epochs_done: sr.u32()? };
            }
            section::LOG_TAIL => {
                let n = sr.len()?;
                log_tail = (0..n).map(|_| sr.string()).collect::<Result<_>>()?;
            }
            other => return Err(Error::format("checkpoint section", format!("unknown section id {other}"))),
        }
    }

    let recognizer = match raw {
        Some(mut net) => {
            if let Some(b) = banks {
                net.bn_banks = b;
            }
            if let Some(c) = clips {
                net.clips = c;
            }
            net.store = store;
            Some(net)
        }
        None => None,
    };
    Ok(Checkpoint {
        config: config.ok_or_else(|| Error::format("checkpoint", "missing config section".to_string()))?,
        teacher,
        recognizer,
        policy,
        optimizer_velocities,
        rng,
        log_tail,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_to_bytes(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let teacher = RecognitionNet::new_teacher(RecognizerConfig::default(), &mut rng);
        let mut student = RecognitionNet::from_teacher(&teacher, vec![32, 4, 2]);
        student.build_store().unwrap();
        let policy = PolicyNet::new(PolicyConfig::default(), &mut rng);
        Checkpoint {
            config: TrainConfig::default(),
            teacher: Some(teacher),
            recognizer: Some(student),
            policy: Some(policy),
            optimizer_velocities: vec![Tensor::from_vec(vec![0.25, -1.5])],
            rng: RngState { master_seed: 99, stage2_epochs_done: 7 },
            log_tail: vec!["5,0.3".into(), "6,0.2".into()],
        }
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let ck = sample_checkpoint();
        let bytes = checkpoint_to_bytes(&ck);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(ck, back);
        // and byte-stable across serializations
        assert_eq!(bytes, checkpoint_to_bytes(&back));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = checkpoint_to_bytes(&sample_checkpoint());
        bytes[0] = b'X';
        let err = checkpoint_from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn corrupted_section_fails_crc() {
        let bytes = checkpoint_to_bytes(&sample_checkpoint());
        let mut corrupted = bytes.clone();
        // flip one byte inside the first section payload
        corrupted[4 + 2 + 4 + 4 + 8 + 3] ^= 0xFF;
        let err = checkpoint_from_bytes(&corrupted).unwrap_err().to_string();
        assert!(err.contains("CRC"), "{err}");
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = checkpoint_to_bytes(&sample_checkpoint());
        let err = checkpoint_from_bytes(&bytes[..bytes.len() - 10]).unwrap_err().to_string();
        assert!(err.contains("truncated") || err.contains("CRC"), "{err}");
    }

    #[test]
    fn forward_identical_after_roundtrip() {
        let ck = sample_checkpoint();
        let back = checkpoint_from_bytes(&checkpoint_to_bytes(&ck)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame = Tensor::new(
            vec![32, 32],
            (0..1024).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect(),
        )
        .unwrap();
        let a = ck.recognizer.as_ref().unwrap();
        let b = back.recognizer.as_ref().unwrap();
        for width in [32u32, 4, 2] {
            assert_eq!(a.forward_frame(&frame, width).unwrap(), b.forward_frame(&frame, width).unwrap());
        }
        // store codes bit-identical
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn crc32_known_vector() {
        // standard IEEE check value
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }
}
