use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub seq_len: usize,
}

impl NetSpec {
    pub const DEFAULT_HIDDEN: [usize; 3] = [100, 100, 100];
    pub const DEFAULT_SEQ_LEN: usize = 4;

    pub fn new(
        input_dim: usize,
        output_dim: usize,
        hidden_layers: Vec<usize>,
        seq_len: usize,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            output_dim,
            hidden_layers,
            seq_len,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default hidden stack and window length.
    pub fn with_defaults(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(
            input_dim,
            output_dim,
            Self::DEFAULT_HIDDEN.to_vec(),
            Self::DEFAULT_SEQ_LEN,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.seq_len == 0 {
            return Err(Error::config(format!(
                "all network dimensions must be >= 1: {self:?}"
            )));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::config(format!(
                "hidden layers must be nonempty and >= 1: {:?}",
                self.hidden_layers
            )));
        }
        Ok(())
    }

    /// Input width of recurrent layer `index` (0-based).
    pub fn layer_input_dim(&self, index: usize) -> usize {
        if index == 0 {
            self.input_dim
        } else {
            self.hidden_layers[index - 1]
        }
    }

    pub fn top_hidden(&self) -> usize {
        *self.hidden_layers.last().expect("validated")
    }

    pub fn n_params(&self) -> usize {
        let recurrent: usize = self
            .hidden_layers
            .iter()
            .enumerate()
            .map(|(k, &h)| 4 * h * (self.layer_input_dim(k) + h + 1))
            .sum();
        recurrent + self.output_dim * (self.top_hidden() + 1)
    }
}

/// Which of the three tensors of a recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GateBlock {
    /// `W`: `4H × D`, applied to the layer input.
    Input,
    /// `U`: `4H × H`, applied to the previous hidden state.
    Recurrent,
    /// `b`: `4H`.
    Bias,
}

/// Names one parameter tensor. Recurrent layers are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    Lstm { layer: usize, block: GateBlock },
    OutputWeight,
    OutputBias,
}

impl BlockId {
    pub fn lstm(layer: usize, block: GateBlock) -> Self {
        BlockId::Lstm { layer, block }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Lstm { layer, block } => {
                let name = match block {
                    GateBlock::Input => "W",
                    GateBlock::Recurrent => "U",
                    GateBlock::Bias => "b",
                };
                write!(f, "lstm{layer}.{name}")
            }
            BlockId::OutputWeight => f.write_str("out.W"),
            BlockId::OutputBias => f.write_str("out.b"),
        }
    }
}

impl FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::data(format!("unknown parameter block `{s}`"));
        match s {
            "out.W" => return Ok(BlockId::OutputWeight),
            "out.b" => return Ok(BlockId::OutputBias),
            _ => {}
        }
        let rest = s.strip_prefix("lstm").ok_or_else(bad)?;
        let (layer, name) = rest.split_once('.').ok_or_else(bad)?;
        let layer: usize = layer.parse().map_err(|_| bad())?;
        if layer == 0 {
            return Err(bad());
        }
        let block = match name {
            "W" => GateBlock::Input,
            "U" => GateBlock::Recurrent,
            "b" => GateBlock::Bias,
            _ => return Err(bad()),
        };
        Ok(BlockId::Lstm { layer, block })
    }
}

impl Serialize for BlockId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

/// All weights and biases of a stacked LSTM regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LstmLayer>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(spec: &NetSpec) -> Self {
        let layers = spec
            .hidden_layers
            .iter()
            .enumerate()
            .map(|(k, &h)| LstmLayer {
                w: Array2::zeros((4 * h, spec.layer_input_dim(k))),
                u: Array2::zeros((4 * h, h)),
                b: Array1::zeros(4 * h),
            })
            .collect();
        Self {
            layers,
            w_out: Array2::zeros((spec.output_dim, spec.top_hidden())),
            b_out: Array1::zeros(spec.output_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w: Array2::zeros(l.w.raw_dim()),
                    u: Array2::zeros(l.u.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
            w_out: Array2::zeros(self.w_out.raw_dim()),
            b_out: Array1::zeros(self.b_out.raw_dim()),
        }
    }

    /// The network dimensions implied by the tensor shapes.
    pub fn spec(&self, seq_len: usize) -> NetSpec {
        NetSpec {
            input_dim: self.layers.first().map_or(0, |l| l.w.ncols()),
            output_dim: self.b_out.len(),
            hidden_layers: self.layers.iter().map(|l| l.u.ncols()).collect(),
            seq_len,
        }
    }

    pub fn check_shapes(&self, spec: &NetSpec) -> Result<()> {
        let expected = ModelParams::zeros(spec);
        for id in expected.block_ids() {
            let want = expected.block_shape(id);
            let got = self.block_shape(id);
            if want != got {
                return Err(Error::contract(format!(
                    "block {id}: shape {got:?}, spec wants {want:?}"
                )));
            }
        }
        if self.layers.len() != spec.hidden_layers.len() {
            return Err(Error::contract("layer count does not match spec"));
        }
        Ok(())
    }

    /// Block ids in storage order: layer 1 W, U, b, layer 2 ..., out.W, out.b.
    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut ids = Vec::with_capacity(3 * self.layers.len() + 2);
        for layer in 1..=self.layers.len() {
            for block in [GateBlock::Input, GateBlock::Recurrent, GateBlock::Bias] {
                ids.push(BlockId::lstm(layer, block));
            }
        }
        ids.push(BlockId::OutputWeight);
        ids.push(BlockId::OutputBias);
        ids
    }

    pub fn block_shape(&self, id: BlockId) -> Vec<usize> {
        match id {
            BlockId::Lstm { layer, block } => match self.layers.get(layer.wrapping_sub(1)) {
                None => Vec::new(),
                Some(l) => match block {
                    GateBlock::Input => l.w.shape().to_vec(),
                    GateBlock::Recurrent => l.u.shape().to_vec(),
                    GateBlock::Bias => l.b.shape().to_vec(),
                },
            },
            BlockId::OutputWeight => self.w_out.shape().to_vec(),
            BlockId::OutputBias => self.b_out.shape().to_vec(),
        }
    }

    pub fn block(&self, id: BlockId) -> Option<&[f64]> {
        match id {
            BlockId::Lstm { layer, block } => {
                let l = self.layers.get(layer.checked_sub(1)?)?;
                match block {
                    GateBlock::Input => l.w.as_slice(),
                    GateBlock::Recurrent => l.u.as_slice(),
                    GateBlock::Bias => l.b.as_slice(),
                }
            }
            BlockId::OutputWeight => self.w_out.as_slice(),
            BlockId::OutputBias => self.b_out.as_slice(),
        }
    }

    pub fn block_mut(&mut self, id: BlockId) -> Option<&mut [f64]> {
        match id {
            BlockId::Lstm { layer, block } => {
                let l = self.layers.get_mut(layer.checked_sub(1)?)?;
                match block {
                    GateBlock::Input => l.w.as_slice_mut(),
                    GateBlock::Recurrent => l.u.as_slice_mut(),
                    GateBlock::Bias => l.b.as_slice_mut(),
                }
            }
            BlockId::OutputWeight => self.w_out.as_slice_mut(),
            BlockId::OutputBias => self.b_out.as_slice_mut(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.block_ids()
            .into_iter()
            .map(|id| self.block(id).map_or(0, <[f64]>::len))
            .sum()
    }

    /// First block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<BlockId> {
        self.block_ids().into_iter().find(|&id| {
            self.block(id)
                .is_some_and(|b| b.iter().any(|v| !v.is_finite()))
        })
    }

    /// Block name to values, for inspection and tests.
    pub fn to_map(&self) -> BTreeMap<BlockId, Vec<f64>> {
        self.block_ids()
            .into_iter()
            .map(|id| (id, self.block(id).unwrap_or_default().to_vec()))
            .collect()
    }
}
