use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Where the output affine map reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One output vector per step: `[batch, steps, output_dim]`.
    PerStep,
    /// One output vector per sequence from the final state of each
    /// direction: `[batch, 1, output_dim]`.
    FinalState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Per direction.
    pub hidden_units: usize,
    pub num_layers: usize,
    pub output_dim: usize,
    pub output_activation: Activation,
    pub bidirectional: bool,
    pub head: Head,
}

impl NetworkConfig {
    /// 32 hidden units, 5 bidirectional layers, sigmoid output, per-step head.
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        NetworkConfig {
            input_dim,
            hidden_units: 32,
            num_layers: 5,
            output_dim,
            output_activation: Activation::Sigmoid,
            bidirectional: true,
            head: Head::PerStep,
        }
    }

    pub fn with_size(mut self, hidden_units: usize, num_layers: usize) -> Self {
        self.hidden_units = hidden_units;
        self.num_layers = num_layers;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.output_activation = activation;
        self
    }

    pub fn unidirectional(mut self) -> Self {
        self.bidirectional = false;
        self
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_units == 0
            || self.num_layers == 0
            || self.output_dim == 0
        {
            return Err(Error::arg(format!(
                "network dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.directions() * self.hidden_units
        }
    }

    /// Width of the concatenated per-step state fed to the head.
    pub fn state_width(&self) -> usize {
        self.directions() * self.hidden_units
    }

    fn block_len(&self, layer: usize) -> usize {
        let h = self.hidden_units;
        4 * h * (self.layer_input_dim(layer) + h + 1)
    }

    fn block_offset(&self, layer: usize, dir: usize) -> usize {
        let before: usize = (0..layer).map(|l| self.block_len(l)).sum();
        self.directions() * before + dir * self.block_len(layer)
    }

    fn head_offset(&self) -> usize {
        (0..self.num_layers)
            .map(|l| self.directions() * self.block_len(l))
            .sum()
    }

    /// Closed-form parameter count: four gates per direction per layer,
    /// each with input weights, recurrent weights and a bias, plus the
    /// affine head.
    pub fn param_count(&self) -> usize {
        self.head_offset() + self.state_width() * self.output_dim + self.output_dim
    }
}

/// Flat parameter store for one network. Per layer and direction the block
/// holds input weights `[in, 4H]`, recurrent weights `[H, 4H]` and the bias
/// `[4H]`, with gates ordered input, forget, candidate, output. The head
/// weights `[state_width, out]` and bias `[out]` come last.
///
/// Gradient stores share this type and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    config: NetworkConfig,
    data: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(config: NetworkConfig) -> Self {
        NetworkParams {
            data: vec![0.0; config.param_count()],
            config,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero except the forget
    /// gate, which starts at 1.
    pub fn init(config: NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = NetworkParams::zeros(config);
        let h = config.hidden_units;
        for layer in 0..config.num_layers {
            let bound = 1.0 / ((config.layer_input_dim(layer) + h) as f64).sqrt();
            for dir in 0..config.directions() {
                let (mut wx, mut wh, bias) = p.block_mut(layer, dir);
                wx.iter_mut()
                    .chain(wh.iter_mut())
                    .for_each(|w| *w = rng.random_range(-bound..bound));
                bias[h..2 * h].fill(1.0);
            }
        }
        let bound = 1.0 / (config.state_width() as f64).sqrt();
        let (mut w, _) = p.head_mut();
        w.iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..bound));
        p
    }

    pub fn from_vec(config: NetworkConfig, data: Vec<f64>) -> Result<Self> {
        if data.len() != config.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                data.len()
            )));
        }
        Ok(NetworkParams { config, data })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.config == other.config
    }

    /// SHA-256 over the little-endian bit patterns of every parameter.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn block_range(&self, layer: usize, dir: usize) -> (usize, usize, usize) {
        let c = &self.config;
        let h4 = 4 * c.hidden_units;
        let start = c.block_offset(layer, dir);
        let wx_len = c.layer_input_dim(layer) * h4;
        let wh_len = c.hidden_units * h4;
        (start, start + wx_len, start + wx_len + wh_len)
    }

    pub fn wx(&self, layer: usize, dir: usize) -> ArrayView2<'_, f64> {
        let (a, b, _) = self.block_range(layer, dir);
        let rows = self.config.layer_input_dim(layer);
        ArrayView2::from_shape((rows, 4 * self.config.hidden_units), &self.data[a..b])
            .expect("layout")
    }

    pub fn wh(&self, layer: usize, dir: usize) -> ArrayView2<'_, f64> {
        let (_, b, c) = self.block_range(layer, dir);
        let h = self.config.hidden_units;
        ArrayView2::from_shape((h, 4 * h), &self.data[b..c]).expect("layout")
    }

    pub fn bias(&self, layer: usize, dir: usize) -> &[f64] {
        let (_, _, c) = self.block_range(layer, dir);
        &self.data[c..c + 4 * self.config.hidden_units]
    }

    /// Mutable `(wx, wh, bias)` of one layer-direction block.
    pub fn block_mut(
        &mut self,
        layer: usize,
        dir: usize,
    ) -> (ArrayViewMut2<'_, f64>, ArrayViewMut2<'_, f64>, &mut [f64]) {
        let (a, b, c) = self.block_range(layer, dir);
        let rows = self.config.layer_input_dim(layer);
        let h = self.config.hidden_units;
        let block = &mut self.data[a..c + 4 * h];
        let (wx, rest) = block.split_at_mut(b - a);
        let (wh, bias) = rest.split_at_mut(c - b);
        (
            ArrayViewMut2::from_shape((rows, 4 * h), wx).expect("layout"),
            ArrayViewMut2::from_shape((h, 4 * h), wh).expect("layout"),
            bias,
        )
    }

    pub fn head_w(&self) -> ArrayView2<'_, f64> {
        let off = self.config.head_offset();
        let (r, c) = (self.config.state_width(), self.config.output_dim);
        ArrayView2::from_shape((r, c), &self.data[off..off + r * c]).expect("layout")
    }

    pub fn head_b(&self) -> &[f64] {
        let off = self.config.head_offset() + self.config.state_width() * self.config.output_dim;
        &self.data[off..]
    }

    pub fn head_mut(&mut self) -> (ArrayViewMut2<'_, f64>, &mut [f64]) {
        let off = self.config.head_offset();
        let (r, c) = (self.config.state_width(), self.config.output_dim);
        let (w, b) = self.data[off..].split_at_mut(r * c);
        (
            ArrayViewMut2::from_shape((r, c), w).expect("layout"),
            b,
        )
    }
}

pub(crate) use super::kernels::sigmoid;

// Nested JSON form: layers -> directions -> {wx, wh, b}, then the head.

#[derive(Serialize, Deserialize)]
struct BlockRepr {
    wx: Vec<Vec<f64>>,
    wh: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HeadRepr {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    config: NetworkConfig,
    layers: Vec<Vec<BlockRepr>>,
    head: HeadRepr,
}

fn rows(v: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    v.outer_iter().map(|r| r.to_vec()).collect()
}

impl Serialize for NetworkParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let c = self.config;
        let layers = (0..c.num_layers)
            .map(|l| {
                (0..c.directions())
                    .map(|d| BlockRepr {
                        wx: rows(self.wx(l, d)),
                        wh: rows(self.wh(l, d)),
                        b: self.bias(l, d).to_vec(),
                    })
                    .collect()
            })
            .collect();
        ParamsRepr {
            config: c,
            layers,
            head: HeadRepr {
                w: rows(self.head_w()),
                b: self.head_b().to_vec(),
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetworkParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ParamsRepr::deserialize(d)?;
        let c = repr.config;
        c.validate().map_err(D::Error::custom)?;
        if repr.layers.len() != c.num_layers
            || repr.layers.iter().any(|l| l.len() != c.directions())
        {
            return Err(D::Error::custom("layer structure does not match config"));
        }
        let mut data = Vec::with_capacity(c.param_count());
        for (l, layer) in repr.layers.iter().enumerate() {
            for block in layer {
                let h4 = 4 * c.hidden_units;
                check_matrix(&block.wx, c.layer_input_dim(l), h4).map_err(D::Error::custom)?;
                check_matrix(&block.wh, c.hidden_units, h4).map_err(D::Error::custom)?;
                if block.b.len() != h4 {
                    return Err(D::Error::custom("bias length does not match config"));
                }
                block.wx.iter().for_each(|r| data.extend_from_slice(r));
                block.wh.iter().for_each(|r| data.extend_from_slice(r));
                data.extend_from_slice(&block.b);
            }
        }
        check_matrix(&repr.head.w, c.state_width(), c.output_dim).map_err(D::Error::custom)?;
        if repr.head.b.len() != c.output_dim {
            return Err(D::Error::custom("head bias length does not match config"));
        }
        repr.head.w.iter().for_each(|r| data.extend_from_slice(r));
        data.extend_from_slice(&repr.head.b);
        NetworkParams::from_vec(c, data).map_err(D::Error::custom)
    }
}

fn check_matrix(m: &[Vec<f64>], rows: usize, cols: usize) -> std::result::Result<(), String> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(format!("expected a {rows}x{cols} matrix"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_count_small_bilstm() {
        let c = NetworkConfig::new(1, 1).with_size(4, 1);
        // per direction: 4 gates x (1 input + 4 recurrent + 1 bias) x 4 units = 96
        // head: 8-wide state -> 1 output, plus bias = 9
        assert_eq!(c.param_count(), 2 * 96 + 9);
        assert_eq!(NetworkParams::zeros(c).len(), 201);
    }

    #[test]
    fn count_matches_layout_for_all_shapes() {
        for &(i, h, l, o, bi) in &[
            (1, 32, 5, 32, true),
            (32, 32, 5, 1, true),
            (32, 16, 2, 32, false),
            (3, 5, 3, 2, true),
        ] {
            let mut c = NetworkConfig::new(i, o).with_size(h, l);
            c.bidirectional = bi;
            let dirs = if bi { 2 } else { 1 };
            let mut expected = 0;
            for layer in 0..l {
                let fan = if layer == 0 { i } else { dirs * h };
                expected += dirs * 4 * h * (fan + h + 1);
            }
            expected += dirs * h * o + o;
            assert_eq!(c.param_count(), expected);
            let p = NetworkParams::init(c, 3);
            let last = p.head_b().as_ptr() as usize + o * 8;
            assert_eq!(last, p.as_slice().as_ptr() as usize + p.len() * 8);
        }
    }

    #[test]
    fn init_is_deterministic_with_forget_bias() {
        let c = NetworkConfig::new(2, 3).with_size(4, 2);
        let a = NetworkParams::init(c, 11);
        let b = NetworkParams::init(c, 11);
        assert_eq!(a, b);
        assert_ne!(a, NetworkParams::init(c, 12));
        for l in 0..2 {
            for d in 0..2 {
                let bias = a.bias(l, d);
                assert!(bias[..4].iter().all(|&v| v == 0.0));
                assert!(bias[4..8].iter().all(|&v| v == 1.0));
                assert!(bias[8..].iter().all(|&v| v == 0.0));
                let bound = 1.0 / ((c.layer_input_dim(l) + 4) as f64).sqrt();
                assert!(a.wx(l, d).iter().all(|w| w.abs() <= bound));
            }
        }
        assert!(a.head_b().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let c = NetworkConfig::new(1, 2).with_size(3, 2);
        let p = NetworkParams::init(c, 5);
        let text = serde_json::to_string(&p).unwrap();
        let back: NetworkParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p.digest(), back.digest());
    }
}
