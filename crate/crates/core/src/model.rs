//! Parameter containers and forward passes for the shared-bottom two-head
//! architecture and the separate-heads baseline.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::diffcore::{Tape, ValueRef};
use crate::error::{Error, Result};

pub const HIDDEN_WIDTH: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

/// One dense layer: x (b x in) @ weight (in x out) + bias (1 x out).
#[derive(Clone, Debug)]
pub struct Layer {
    pub weight: Array,
    pub bias: Array,
    pub activation: Activation,
}

impl Layer {
    /// Weights uniform on (-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))),
    /// biases zero.
    fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Layer {
        let bound = (6.0 / (spec.input_width + spec.output_width) as f64).sqrt();
        let data: Vec<f64> = (0..spec.input_width * spec.output_width)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Layer {
            weight: Array::from_vec(spec.input_width, spec.output_width, data),
            bias: Array::zeros(1, spec.output_width),
            activation: spec.activation,
        }
    }

    fn apply(&self, x: &Array) -> Result<Array> {
        let z = x.matmul(&self.weight)?;
        let (r, c) = z.shape();
        let mut out = Array::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let v = z.get(i, j) + self.bias.get(0, j);
                out.set(
                    i,
                    j,
                    match self.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Linear => v,
                    },
                );
            }
        }
        Ok(out)
    }
}

fn stack_apply(layers: &[Layer], x: &Array) -> Result<Array> {
    let mut h = x.clone();
    for layer in layers {
        h = layer.apply(&h)?;
    }
    Ok(h)
}

/// Shared bottom h feeding two outcome heads f0, f1.
#[derive(Clone, Debug)]
pub struct TwoHeadModel {
    pub shared: Vec<Layer>,
    pub head0: Vec<Layer>,
    pub head1: Vec<Layer>,
    pub input_dim: usize,
}

/// Two fully independent regressors, one per treatment group.
#[derive(Clone, Debug)]
pub struct SeparateHeadsModel {
    pub net0: Vec<Layer>,
    pub net1: Vec<Layer>,
    pub input_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    TwoHead,
    SeparateHeads,
}

#[derive(Clone, Debug)]
pub enum Model {
    TwoHead(TwoHeadModel),
    Separate(SeparateHeadsModel),
}

fn head_specs(input: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec {
            input_width: input,
            output_width: HIDDEN_WIDTH,
            activation: Activation::Relu,
        },
        LayerSpec {
            input_width: HIDDEN_WIDTH,
            output_width: 1,
            activation: Activation::Linear,
        },
    ]
}

impl TwoHeadModel {
    pub fn init(input_dim: usize, seed: u64) -> TwoHeadModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared_specs = [
            LayerSpec {
                input_width: input_dim,
                output_width: HIDDEN_WIDTH,
                activation: Activation::Relu,
            },
            LayerSpec {
                input_width: HIDDEN_WIDTH,
                output_width: HIDDEN_WIDTH,
                activation: Activation::Relu,
            },
        ];
        TwoHeadModel {
            shared: shared_specs.iter().map(|&s| Layer::init(s, &mut rng)).collect(),
            head0: head_specs(HIDDEN_WIDTH)
                .iter()
                .map(|&s| Layer::init(s, &mut rng))
                .collect(),
            head1: head_specs(HIDDEN_WIDTH)
                .iter()
                .map(|&s| Layer::init(s, &mut rng))
                .collect(),
            input_dim,
        }
    }

    fn check_input(&self, x: &Array) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Dimension {
                op: "forward",
                lhs: x.shape(),
                rhs: (self.input_dim, 0),
            });
        }
        Ok(())
    }

    /// Shared embedding h(x) for each row, no tape.
    pub fn embed_plain(&self, x: &Array) -> Result<Array> {
        self.check_input(x)?;
        stack_apply(&self.shared, x)
    }

    /// Record parameters on `tape` and return handles for taped forwards.
    pub fn record(&self, tape: &mut Tape) -> TapedTwoHead {
        TapedTwoHead {
            shared: TapedStack::record(tape, &self.shared),
            head0: TapedStack::record(tape, &self.head0),
            head1: TapedStack::record(tape, &self.head1),
            input_dim: self.input_dim,
        }
    }
}

impl SeparateHeadsModel {
    pub fn init(input_dim: usize, seed: u64) -> SeparateHeadsModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = [
            LayerSpec {
                input_width: input_dim,
                output_width: HIDDEN_WIDTH,
                activation: Activation::Relu,
            },
            LayerSpec {
                input_width: HIDDEN_WIDTH,
                output_width: HIDDEN_WIDTH,
                activation: Activation::Relu,
            },
            LayerSpec {
                input_width: HIDDEN_WIDTH,
                output_width: HIDDEN_WIDTH,
                activation: Activation::Relu,
            },
            LayerSpec {
                input_width: HIDDEN_WIDTH,
                output_width: 1,
                activation: Activation::Linear,
            },
        ];
        SeparateHeadsModel {
            net0: specs.iter().map(|&s| Layer::init(s, &mut rng)).collect(),
            net1: specs.iter().map(|&s| Layer::init(s, &mut rng)).collect(),
            input_dim,
        }
    }

    pub fn record(&self, tape: &mut Tape) -> TapedSeparate {
        TapedSeparate {
            net0: TapedStack::record(tape, &self.net0),
            net1: TapedStack::record(tape, &self.net1),
            input_dim: self.input_dim,
        }
    }
}

impl Model {
    pub fn init(kind: ModelKind, input_dim: usize, seed: u64) -> Model {
        match kind {
            ModelKind::TwoHead => Model::TwoHead(TwoHeadModel::init(input_dim, seed)),
            ModelKind::SeparateHeads => Model::Separate(SeparateHeadsModel::init(input_dim, seed)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::TwoHead(_) => ModelKind::TwoHead,
            Model::Separate(_) => ModelKind::SeparateHeads,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::TwoHead(m) => m.input_dim,
            Model::Separate(m) => m.input_dim,
        }
    }

    fn layer_stacks(&self) -> Vec<(&'static str, &Vec<Layer>)> {
        match self {
            Model::TwoHead(m) => vec![
                ("shared", &m.shared),
                ("head0", &m.head0),
                ("head1", &m.head1),
            ],
            Model::Separate(m) => vec![("net0", &m.net0), ("net1", &m.net1)],
        }
    }

    fn layer_stacks_mut(&mut self) -> Vec<&mut Vec<Layer>> {
        match self {
            Model::TwoHead(m) => vec![&mut m.shared, &mut m.head0, &mut m.head1],
            Model::Separate(m) => vec![&mut m.net0, &mut m.net1],
        }
    }

    /// All parameter arrays in a fixed order (stack by stack, weight then
    /// bias per layer). Gradients and Adam moments follow this order.
    pub fn params(&self) -> Vec<&Array> {
        let mut out = Vec::new();
        for (_, stack) in self.layer_stacks() {
            for layer in stack.iter() {
                out.push(&layer.weight);
                out.push(&layer.bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array> {
        let mut out = Vec::new();
        for stack in self.layer_stacks_mut() {
            for layer in stack.iter_mut() {
                out.push(&mut layer.weight);
                out.push(&mut layer.bias);
            }
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Array)> {
        let mut out = Vec::new();
        for (stack_name, stack) in self.layer_stacks() {
            for (i, layer) in stack.iter().enumerate() {
                out.push((format!("{stack_name}.{i}.weight"), &layer.weight));
                out.push((format!("{stack_name}.{i}.bias"), &layer.bias));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|p| p.shape()).collect()
    }

    /// Evaluate both heads on every row of `x`, regardless of treatment flag.
    pub fn predict_heads(&self, x: &Array) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension {
                op: "predict_heads",
                lhs: x.shape(),
                rhs: (self.input_dim(), 0),
            });
        }
        let (y0, y1) = match self {
            Model::TwoHead(m) => {
                let h = stack_apply(&m.shared, x)?;
                (stack_apply(&m.head0, &h)?, stack_apply(&m.head1, &h)?)
            }
            Model::Separate(m) => (stack_apply(&m.net0, x)?, stack_apply(&m.net1, x)?),
        };
        Ok((y0.data().to_vec(), y1.data().to_vec()))
    }

    // ---- checkpoint: plain-text header + little-endian f64 payload -----

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let named = self.named_params();
        let mut header = String::from("balancereg-checkpoint v1\n");
        header.push_str(&format!("{}\n", named.len()));
        for (name, arr) in &named {
            header.push_str(&format!("{} {} {}\n", name, arr.rows(), arr.cols()));
        }
        file.write_all(header.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for (_, arr) in &named {
            for &x in arr.data() {
                file.write_all(&x.to_le_bytes())
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
        }
        Ok(())
    }

    /// Load parameters saved by [`Model::save_checkpoint`] into this model.
    /// Names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        // header ends after 2 + count lines
        let mut offset = 0usize;
        let mut next_line = |bytes: &[u8], row: usize| -> Result<String> {
            let start = offset;
            while offset < bytes.len() && bytes[offset] != b'\n' {
                offset += 1;
            }
            if offset >= bytes.len() {
                return Err(Error::Format {
                    row,
                    msg: "truncated checkpoint header".into(),
                });
            }
            let line = String::from_utf8_lossy(&bytes[start..offset]).into_owned();
            offset += 1;
            Ok(line)
        };
        let magic = next_line(&bytes, 1)?;
        if magic != "balancereg-checkpoint v1" {
            return Err(Error::Format {
                row: 1,
                msg: format!("bad magic line {magic:?}"),
            });
        }
        let count: usize = next_line(&bytes, 2)?.parse().map_err(|_| Error::Format {
            row: 2,
            msg: "bad parameter count".into(),
        })?;
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let line = next_line(&bytes, 3 + i)?;
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 3 {
                return Err(Error::Format {
                    row: 3 + i,
                    msg: format!("bad header entry {line:?}"),
                });
            }
            let rows: usize = parts[1].parse().map_err(|_| Error::Format {
                row: 3 + i,
                msg: "bad shape".into(),
            })?;
            let cols: usize = parts[2].parse().map_err(|_| Error::Format {
                row: 3 + i,
                msg: "bad shape".into(),
            })?;
            entries.push((parts[0].to_string(), rows, cols));
        }
        let expected: Vec<(String, (usize, usize))> = self
            .named_params()
            .iter()
            .map(|(n, a)| (n.clone(), a.shape()))
            .collect();
        if entries.len() != expected.len() {
            return Err(Error::contract(format!(
                "checkpoint has {} parameters, model has {}",
                entries.len(),
                expected.len()
            )));
        }
        for (entry, exp) in entries.iter().zip(&expected) {
            if entry.0 != exp.0 || (entry.1, entry.2) != exp.1 {
                return Err(Error::contract(format!(
                    "checkpoint entry {:?} does not match model parameter {:?} {:?}",
                    entry, exp.0, exp.1
                )));
            }
        }
        let mut params = self.params_mut();
        for (i, (_, rows, cols)) in entries.iter().enumerate() {
            let n = rows * cols;
            let data = params[i].data_mut();
            for j in 0..n {
                if offset + 8 > bytes.len() {
                    return Err(Error::Format {
                        row: 0,
                        msg: "truncated checkpoint payload".into(),
                    });
                }
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&bytes[offset..offset + 8]);
                data[j] = f64::from_le_bytes(buf);
                offset += 8;
            }
        }
        Ok(())
    }
}

// ---- taped forwards ----------------------------------------------------

/// A layer stack whose parameters are recorded as leaves on a tape.
pub struct TapedStack {
    layers: Vec<(ValueRef, ValueRef, Activation)>,
}

impl TapedStack {
    fn record(tape: &mut Tape, layers: &[Layer]) -> TapedStack {
        TapedStack {
            layers: layers
                .iter()
                .map(|l| {
                    let w = tape.leaf(l.weight.clone());
                    let b = tape.leaf(l.bias.clone());
                    (w, b, l.activation)
                })
                .collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: ValueRef) -> Result<ValueRef> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = match act {
                Activation::Relu => tape.relu(z),
                Activation::Linear => z,
            };
        }
        Ok(h)
    }

    fn param_refs(&self, out: &mut Vec<ValueRef>) {
        for &(w, b, _) in &self.layers {
            out.push(w);
            out.push(b);
        }
    }
}

pub struct TapedTwoHead {
    pub shared: TapedStack,
    pub head0: TapedStack,
    pub head1: TapedStack,
    input_dim: usize,
}

impl TapedTwoHead {
    /// h(x) for a batch leaf already on the tape.
    pub fn embed(&self, tape: &mut Tape, x: ValueRef) -> Result<ValueRef> {
        if tape.value(x).cols() != self.input_dim {
            return Err(Error::Dimension {
                op: "embed",
                lhs: tape.value(x).shape(),
                rhs: (self.input_dim, 0),
            });
        }
        self.shared.forward(tape, x)
    }

    pub fn head0_on(&self, tape: &mut Tape, h: ValueRef) -> Result<ValueRef> {
        self.head0.forward(tape, h)
    }

    pub fn head1_on(&self, tape: &mut Tape, h: ValueRef) -> Result<ValueRef> {
        self.head1.forward(tape, h)
    }

    pub fn param_refs(&self) -> Vec<ValueRef> {
        let mut out = Vec::new();
        self.shared.param_refs(&mut out);
        self.head0.param_refs(&mut out);
        self.head1.param_refs(&mut out);
        out
    }
}

pub struct TapedSeparate {
    pub net0: TapedStack,
    pub net1: TapedStack,
    input_dim: usize,
}

impl TapedSeparate {
    pub fn net0_on(&self, tape: &mut Tape, x: ValueRef) -> Result<ValueRef> {
        self.check(tape, x)?;
        self.net0.forward(tape, x)
    }

    pub fn net1_on(&self, tape: &mut Tape, x: ValueRef) -> Result<ValueRef> {
        self.check(tape, x)?;
        self.net1.forward(tape, x)
    }

    fn check(&self, tape: &Tape, x: ValueRef) -> Result<()> {
        if tape.value(x).cols() != self.input_dim {
            return Err(Error::Dimension {
                op: "forward",
                lhs: tape.value(x).shape(),
                rhs: (self.input_dim, 0),
            });
        }
        Ok(())
    }

    pub fn param_refs(&self) -> Vec<ValueRef> {
        let mut out = Vec::new();
        self.net0.param_refs(&mut out);
        self.net1.param_refs(&mut out);
        out
    }
}

/// Taped handles for either model kind, with a uniform parameter list.
pub enum TapedModel {
    TwoHead(TapedTwoHead),
    Separate(TapedSeparate),
}

impl Model {
    pub fn record_on(&self, tape: &mut Tape) -> TapedModel {
        match self {
            Model::TwoHead(m) => TapedModel::TwoHead(m.record(tape)),
            Model::Separate(m) => TapedModel::Separate(m.record(tape)),
        }
    }
}

impl TapedModel {
    pub fn param_refs(&self) -> Vec<ValueRef> {
        match self {
            TapedModel::TwoHead(t) => t.param_refs(),
            TapedModel::Separate(t) => t.param_refs(),
        }
    }

    /// Gradients for every parameter, in [`Model::params`] order.
    pub fn grads(&self, tape: &Tape) -> Vec<Array> {
        self.param_refs()
            .iter()
            .map(|&r| tape.grad(r).clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_bitwise_identical_parameters() {
        let a = Model::init(ModelKind::TwoHead, 25, 42);
        let b = Model::init(ModelKind::TwoHead, 25, 42);
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.data(), pb.data());
        }
        let c = Model::init(ModelKind::TwoHead, 25, 43);
        assert_ne!(a.params()[0].data(), c.params()[0].data());
    }

    #[test]
    fn biases_zero_at_init() {
        let m = Model::init(ModelKind::SeparateHeads, 25, 7);
        for (name, p) in m.named_params() {
            if name.ends_with("bias") {
                assert!(p.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn weight_sample_mean_near_zero() {
        // pool >= 1e4 draws across several seeds; uniform(-a, a) has sd a/sqrt(3)
        let mut draws = Vec::new();
        for seed in 0..20 {
            let m = TwoHeadModel::init(25, seed);
            draws.extend_from_slice(m.shared[0].weight.data());
        }
        assert!(draws.len() >= 10_000);
        let bound = (6.0 / 45.0f64).sqrt();
        let sd = bound / 3.0f64.sqrt();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 3.0 * sd / (draws.len() as f64).sqrt());
    }

    #[test]
    fn param_counts() {
        // two hidden shared layers, one hidden layer plus linear output per head
        let two = Model::init(ModelKind::TwoHead, 25, 0);
        let shared = (25 * 20 + 20) + (20 * 20 + 20);
        let head = (20 * 20 + 20) + (20 * 1 + 1);
        assert_eq!(two.param_count(), shared + 2 * head);
        let sep = Model::init(ModelKind::SeparateHeads, 25, 0);
        assert_eq!(sep.param_count(), 2 * ((25 * 20 + 20) + 2 * (20 * 20 + 20) + (20 + 1)));
        assert_eq!(sep.param_count(), 2762);
    }

    #[test]
    fn embed_shape_and_zero_input() {
        let m = TwoHeadModel::init(25, 3);
        let x = Array::zeros(1, 25);
        let h = m.embed_plain(&x).unwrap();
        assert_eq!(h.shape(), (1, 20));
        // zero input with zero biases stays zero through relu
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_rejects_wrong_column_count() {
        let m = TwoHeadModel::init(25, 3);
        assert!(m.embed_plain(&Array::zeros(2, 24)).is_err());
    }

    #[test]
    fn predict_heads_shapes_and_copied_head_symmetry() {
        let mut m = TwoHeadModel::init(25, 5);
        m.head1 = m.head0.clone();
        let model = Model::TwoHead(m);
        let x = Array::from_vec(3, 25, (0..75).map(|i| (i as f64) * 0.01 - 0.3).collect());
        let (y0, y1) = model.predict_heads(&x).unwrap();
        assert_eq!(y0.len(), 3);
        assert_eq!(y1.len(), 3);
        assert_eq!(y0, y1);
    }

    #[test]
    fn predict_heads_commutes_with_row_permutation() {
        let model = Model::init(ModelKind::TwoHead, 25, 11);
        let x = Array::from_vec(4, 25, (0..100).map(|i| ((i * 37) % 11) as f64 * 0.1).collect());
        let perm = [2usize, 0, 3, 1];
        let xp = x.select_rows(&perm);
        let (y0, y1) = model.predict_heads(&x).unwrap();
        let (p0, p1) = model.predict_heads(&xp).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(p0[i], y0[src]);
            assert_eq!(p1[i], y1[src]);
        }
    }

    #[test]
    fn checkpoint_roundtrip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = Model::init(ModelKind::TwoHead, 25, 99);
        m.save_checkpoint(&path).unwrap();
        let mut loaded = Model::init(ModelKind::TwoHead, 25, 1);
        loaded.load_checkpoint(&path).unwrap();
        for (a, b) in m.params().iter().zip(loaded.params().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        Model::init(ModelKind::TwoHead, 25, 0)
            .save_checkpoint(&path)
            .unwrap();
        let mut other = Model::init(ModelKind::SeparateHeads, 25, 0);
        assert!(other.load_checkpoint(&path).is_err());
    }
}
