//! Fully connected tanh networks: architecture, Xavier initialization,
//! flat parameter layout and checkpoint persistence.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::jetdiff::{self, JetBuf, JetLayout, JetVar, Tape, Var};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CPINNCK1";
const INPUT_MAP_KEY: &str = "input_map";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Fixed affine rescaling of the inputs, `x_hat = (x - x_shift) * x_scale`
/// (likewise for t), applied before the first layer. Derivatives are taken
/// with respect to the physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputMap {
    pub x_shift: f64,
    pub x_scale: f64,
    pub t_shift: f64,
    pub t_scale: f64,
}

impl Default for InputMap {
    fn default() -> Self {
        InputMap {
            x_shift: 0.0,
            x_scale: 1.0,
            t_shift: 0.0,
            t_scale: 1.0,
        }
    }
}

impl InputMap {
    /// Maps `[x_min, x_max] x [t_min, t_max]` onto `[-1, 1]^2`.
    pub fn unit_box(x_min: f64, x_max: f64, t_min: f64, t_max: f64) -> Self {
        Self::centered_box(x_min, x_max, t_min, t_max, 1.0, 1.0)
    }

    /// Maps the box onto `[-x_half, x_half] x [-t_half, t_half]`.
    pub fn centered_box(x_min: f64, x_max: f64, t_min: f64, t_max: f64, x_half: f64, t_half: f64) -> Self {
        let scale = |lo: f64, hi: f64, half: f64| if hi > lo { 2.0 * half / (hi - lo) } else { 1.0 };
        InputMap {
            x_shift: 0.5 * (x_min + x_max),
            x_scale: scale(x_min, x_max, x_half),
            t_shift: 0.5 * (t_min + t_max),
            t_scale: scale(t_min, t_max, t_half),
        }
    }

    fn encode(&self) -> String {
        format!("{:?},{:?},{:?},{:?}", self.x_shift, self.x_scale, self.t_shift, self.t_scale)
    }

    fn decode(s: &str) -> Option<Self> {
        let v: Vec<f64> = s.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
        match v[..] {
            [x_shift, x_scale, t_shift, t_scale] => Some(InputMap {
                x_shift,
                x_scale,
                t_shift,
                t_scale,
            }),
            _ => None,
        }
    }
}

/// Offsets of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetArch {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub input_map: InputMap,
}

impl fmt::Display for NetArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(f, "[{}]", w.join(","))
    }
}

impl NetArch {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        let arch = NetArch {
            widths,
            activation: Activation::Tanh,
            input_map: InputMap::default(),
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `2 -> hidden... -> outputs`.
    pub fn mlp(hidden: &[usize], outputs: usize) -> Result<Self> {
        let mut widths = vec![2];
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        Self::new(widths)
    }

    pub fn with_input_map(mut self, map: InputMap) -> Self {
        self.input_map = map;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::InvalidArch(format!(
                "{self} needs at least one hidden layer"
            )));
        }
        if self.widths[0] != 2 {
            return Err(Error::InvalidArch(format!("{self}: input width must be 2 (x, t)")));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArch(format!("{self}: widths must be >= 1")));
        }
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Same layer widths and activation (the input map is not compared).
    pub fn same_shape(&self, other: &NetArch) -> bool {
        self.widths == other.widths && self.activation == other.activation
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let shape = LayerShape {
                    fan_in,
                    fan_out,
                    w_off: off,
                    b_off: off + fan_in * fan_out,
                };
                off += fan_in * fan_out + fan_out;
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(Error::ParamCount {
                expected,
                actual: params.len(),
            });
        }
        Ok(())
    }
}

/// All weights and biases, flattened per layer as row-major `[out x in]`
/// weights followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Per-layer weight matrices (row-major) and bias vectors.
pub type Unflattened = Vec<(Vec<f64>, Vec<f64>)>;

pub fn unflatten(arch: &NetArch, params: &ParamVector) -> Result<Unflattened> {
    arch.check_params(params)?;
    let p = params.as_slice();
    Ok(arch
        .layers()
        .iter()
        .map(|l| {
            (
                p[l.w_off..l.b_off].to_vec(),
                p[l.b_off..l.b_off + l.fan_out].to_vec(),
            )
        })
        .collect())
}

pub fn flatten(layers: &Unflattened) -> ParamVector {
    ParamVector(layers.iter().flat_map(|(w, b)| w.iter().chain(b).copied()).collect())
}

/// Glorot-uniform weights, zero biases, from a ChaCha8 stream seeded with `seed`.
pub fn init_xavier(arch: &NetArch, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; arch.param_count()];
    for l in arch.layers() {
        let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        for w in &mut values[l.w_off..l.b_off] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    ParamVector(values)
}

/// Seeds the input jet for a batch of points.
pub fn input_jet(arch: &NetArch, points: &[(f64, f64)], layout: JetLayout) -> JetBuf {
    let m = &arch.input_map;
    let mut buf = JetBuf::zeros(layout, points.len(), 2);
    for (n, &(x, t)) in points.iter().enumerate() {
        buf.set(0, n, 0, (x - m.x_shift) * m.x_scale);
        buf.set(0, n, 1, (t - m.t_shift) * m.t_scale);
        if let Some(b) = layout.block(jetdiff::Axis::X, 1) {
            buf.set(b, n, 0, m.x_scale);
        }
        if let Some(b) = layout.block(jetdiff::Axis::T, 1) {
            buf.set(b, n, 1, m.t_scale);
        }
    }
    buf
}

/// Records the network on `tape`: affine + tanh per hidden layer, affine output.
pub fn forward_jet(tape: &mut Tape, params: Var, arch: &NetArch, input: JetVar) -> JetVar {
    let layers = arch.layers();
    let mut h = input;
    for (i, l) in layers.iter().enumerate() {
        let z = tape.affine(h, params, l.w_off, l.b_off, l.fan_out);
        h = if i + 1 < layers.len() { tape.tanh_jet(z) } else { z };
    }
    h
}

/// Plain network outputs at one point.
pub fn forward(params: &ParamVector, arch: &NetArch, x: f64, t: f64) -> Result<Vec<f64>> {
    let buf = jetdiff::evaluate_jets(params, arch, &[(x, t)], JetLayout::VALUE)?;
    Ok((0..buf.width).map(|c| buf.coeff(0, 0, c)).collect())
}

/// Plain network outputs at many points; `out[n][channel]`.
pub fn forward_batch(params: &ParamVector, arch: &NetArch, points: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    let buf = jetdiff::evaluate_jets(params, arch, points, JetLayout::VALUE)?;
    Ok((0..points.len())
        .map(|n| (0..buf.width).map(|c| buf.coeff(0, n, c)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: NetArch,
    pub params: ParamVector,
    /// Training provenance (epochs, final loss, seed, problem id, ...).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(arch: NetArch, params: ParamVector) -> Result<Self> {
        arch.check_params(&params)?;
        Ok(Checkpoint {
            arch,
            params,
            meta: BTreeMap::new(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.arch.check_params(&self.params)?;
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') || k == INPUT_MAP_KEY {
                return Err(Error::Validation(format!("meta entry {k:?} cannot be encoded")));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        meta.push_str(&format!("{INPUT_MAP_KEY}={}\n", self.arch.input_map.encode()));

        let layers = self.arch.widths.len() - 1;
        let mut out = Vec::with_capacity(8 + 4 * (layers + 3) + 1 + meta.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(layers as u32).to_le_bytes());
        for &w in &self.arch.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.push(self.arch.activation.code());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for v in self.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |detail: &str| Error::Truncated {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        let mismatch = |detail: String| Error::CheckpointMismatch {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
            });
        }
        let mut cur = Cursor { bytes, pos: 8 };
        let layers = cur.u32().ok_or_else(|| truncated("layer count"))? as usize;
        if layers == 0 || layers > 1024 {
            return Err(mismatch(format!("implausible layer count {layers}")));
        }
        let widths = (0..=layers)
            .map(|_| cur.u32().map(|w| w as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| truncated("widths"))?;
        let code = cur.take(1).ok_or_else(|| truncated("activation"))?[0];
        let activation =
            Activation::from_code(code).ok_or_else(|| mismatch(format!("unknown activation code {code}")))?;
        let meta_len = cur.u32().ok_or_else(|| truncated("meta length"))? as usize;
        let meta_bytes = cur.take(meta_len).ok_or_else(|| truncated("meta text"))?;
        let meta_text =
            std::str::from_utf8(meta_bytes).map_err(|_| mismatch("meta is not UTF-8".to_string()))?;

        let mut meta = BTreeMap::new();
        let mut input_map = InputMap::default();
        for line in meta_text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| mismatch(format!("meta line without '=': {line:?}")))?;
            if k == INPUT_MAP_KEY {
                input_map = InputMap::decode(v).ok_or_else(|| mismatch(format!("bad input map {v:?}")))?;
            } else {
                meta.insert(k.to_string(), v.to_string());
            }
        }

        let arch = NetArch {
            widths,
            activation,
            input_map,
        };
        arch.validate()
            .map_err(|e| mismatch(e.to_string()))?;
        let expected = arch.param_count();
        let payload = &bytes[cur.pos..];
        if payload.len() < expected * 8 {
            return Err(truncated(&format!(
                "payload has {} bytes, arch {arch} needs {}",
                payload.len(),
                expected * 8
            )));
        }
        if payload.len() != expected * 8 {
            return Err(mismatch(format!(
                "payload has {} bytes, arch {arch} needs exactly {}",
                payload.len(),
                expected * 8
            )));
        }
        let params = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Checkpoint {
            arch,
            params: ParamVector(params),
            meta,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> NetArch {
        NetArch::new(vec![2, 8, 8, 1]).unwrap()
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(small().param_count(), (2 * 8 + 8) + (8 * 8 + 8) + (8 + 1));
        assert_eq!(small().param_count(), 105);
    }

    #[test]
    fn arch_validation() {
        assert!(NetArch::new(vec![2, 1]).is_err());
        assert!(NetArch::new(vec![3, 4, 1]).is_err());
        assert!(NetArch::new(vec![2, 0, 1]).is_err());
        assert!(NetArch::new(vec![2, 4, 2]).is_ok());
    }

    #[test]
    fn xavier_is_deterministic_bounded_and_bias_free() {
        let arch = NetArch::mlp(&[200, 200], 1).unwrap();
        let a = init_xavier(&arch, 42);
        assert_eq!(a, init_xavier(&arch, 42));
        assert_ne!(a, init_xavier(&arch, 43));
        let first = arch.layers()[0];
        let bound = (6.0f64 / 202.0).sqrt();
        assert!((bound - 0.17235).abs() < 1e-5);
        assert!(a.as_slice()[first.w_off..first.b_off].iter().all(|w| w.abs() <= bound));
        for l in arch.layers() {
            let b = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            assert!(a.as_slice()[l.w_off..l.b_off].iter().all(|w| w.abs() <= b));
            assert!(a.as_slice()[l.b_off..l.b_off + l.fan_out].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn xavier_mean_is_centered() {
        let arch = NetArch::mlp(&[200, 200], 1).unwrap();
        let l = arch.layers()[1];
        let p = init_xavier(&arch, 3);
        let w = &p.as_slice()[l.w_off..l.b_off];
        let bound = (6.0 / 400.0f64).sqrt();
        let sigma = bound / 3.0f64.sqrt() / (w.len() as f64).sqrt();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(w.len() >= 10_000);
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = NetArch::mlp(&[5], 2).unwrap();
        let out = forward(&ParamVector::zeros(arch.param_count()), &arch, 0.3, -1.2).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_unit_network_is_tanh_of_sum() {
        let arch = NetArch::new(vec![2, 1, 1]).unwrap();
        // w1 = [1, 1], b1 = 0, w2 = [1], b2 = 0
        let p = ParamVector::new(vec![1.0, 1.0, 0.0, 1.0, 0.0]);
        let out = forward(&p, &arch, 0.5, 0.5).unwrap();
        assert_eq!(out[0], 1.0f64.tanh());
        assert!((out[0] - 0.7615941559557649).abs() < 1e-16);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let err = forward(&ParamVector::zeros(3), &small(), 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::ParamCount { expected: 105, actual: 3 }));
    }

    #[test]
    fn checkpoint_roundtrip_and_payload_size() {
        let arch = small().with_input_map(InputMap::unit_box(0.0, 8.0 * std::f64::consts::PI, 0.0, 1.0));
        let mut ck = Checkpoint::new(arch.clone(), init_xavier(&arch, 9)).unwrap();
        ck.meta.insert("epochs".into(), "12".into());
        ck.meta.insert("problem".into(), "euler_bernoulli".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let bits = |p: &ParamVector| p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&ck.params));

        let bytes = ck.to_bytes().unwrap();
        let header = 8 + 4 + 4 * 4 + 1 + 4;
        let meta_len = u32::from_le_bytes(bytes[header - 4..header].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - header - meta_len, 105 * 8);
    }

    #[test]
    fn checkpoint_errors_are_distinct() {
        let arch = small();
        let ck = Checkpoint::new(arch.clone(), init_xavier(&arch, 1)).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let p = Path::new("mem");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::BadMagic { .. })));

        let short = &bytes[..bytes.len() - 8];
        assert!(matches!(Checkpoint::from_bytes(short, p), Err(Error::Truncated { .. })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..15], p), Err(Error::Truncated { .. })));

        let mut long = bytes.clone();
        long.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&long, p), Err(Error::CheckpointMismatch { .. })));
    }

    #[test]
    fn corrupted_magic_on_disk_leaves_no_partial_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOTMAGIC0000").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.category(), "bad magic");
    }

    proptest! {
        #[test]
        fn flatten_unflatten_bijection(seed in any::<u64>(), h1 in 1usize..6, h2 in 1usize..6, out in 1usize..3) {
            let arch = NetArch::mlp(&[h1, h2], out).unwrap();
            let p = init_xavier(&arch, seed);
            let layers = unflatten(&arch, &p).unwrap();
            prop_assert_eq!(layers.len(), 3);
            prop_assert_eq!(flatten(&layers), p);
        }

        #[test]
        fn forward_is_lipschitz_in_params(seed in 0u64..1000, idx in 0usize..105, delta in 1e-7f64..1e-4) {
            let arch = small();
            let p = init_xavier(&arch, seed);
            let mut q = p.clone();
            q.as_mut_slice()[idx] += delta;
            let a = forward(&p, &arch, 0.4, 0.2).unwrap()[0];
            let b = forward(&q, &arch, 0.4, 0.2).unwrap()[0];
            // |d out / d param| is bounded by products of weight norms; 100 is generous here.
            prop_assert!((a - b).abs() <= 100.0 * delta);
        }
    }
}
