//! Dense networks with exact first- and second-order reverse passes.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::RandomSource;
use crate::error::{Error, Result};

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }

    pub fn second(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Relu | Activation::LeakyRelu => 0.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::LeakyRelu => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::LeakyRelu),
            _ => Err(Error::Parse(format!("unknown activation tag {t}"))),
        }
    }
}

/// `x -> W x + b` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn new(rows: usize, cols: usize, w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if w.len() != rows * cols || b.len() != rows {
            return Err(Error::Invariant(format!(
                "layer {rows}x{cols} given {} weights and {} biases",
                w.len(),
                b.len()
            )));
        }
        Ok(Layer { rows, cols, w, b })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let row = &self.w[i * self.cols..(i + 1) * self.cols];
                self.b[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// `W^T y`.
    fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.cols..(i + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yi;
            }
        }
        out
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.w)
    }

    fn n_params(&self) -> usize {
        self.rows * (self.cols + 1)
    }
}

/// A dense network. Hidden layers apply `activation`; the last layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer; the last entry is the output.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }
}

impl MlpParams {
    /// Layer widths `sizes = [input, hidden.., output]`, Gaussian weights with variance `1/fan_in`.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut RandomSource) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        for layer in &mut net.layers {
            let scale = if layer.cols == 0 {
                0.0
            } else {
                (1.0 / layer.cols as f64).sqrt()
            };
            for w in &mut layer.w {
                *w = scale * rng.normal();
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Invariant(
                "a network needs an input and an output width".into(),
            ));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                rows: w[1],
                cols: w[0],
                w: vec![0.0; w[0] * w[1]],
                b: vec![0.0; w[1]],
            })
            .collect();
        Self::from_layers(layers, activation)
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let net = MlpParams { layers, activation };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invariant("network without layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows || l.rows == 0 {
                return Err(Error::Invariant(format!(
                    "layer {i} has inconsistent shape"
                )));
            }
            if i > 0 && self.layers[i - 1].rows != l.cols {
                return Err(Error::Invariant(format!(
                    "layer {i} expects {} inputs",
                    l.cols
                )));
            }
        }
        if !self
            .layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
        {
            return Err(Error::Invariant("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated").rows
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Domain(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Domain(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.tape(x).pre.pop().expect("at least one layer"))
    }

    /// Scalar output of a one-output network.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let out = self.forward(x)?;
        if out.len() != 1 {
            return Err(Error::Domain(format!("network has {} outputs", out.len())));
        }
        Ok(out[0])
    }

    /// Forward pass keeping what the reverse passes need. Dimensions are not checked.
    pub fn tape(&self, x: &[f64]) -> Tape {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut a = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.apply(&a);
            inputs.push(a);
            a = if i + 1 < n {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                Vec::new()
            };
            pre.push(z);
        }
        Tape { inputs, pre }
    }

    /// Accumulates `dout . d(output)/d(params)` into `grad`; returns `dout . d(output)/dx`.
    pub fn backward(&self, tape: &Tape, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let offsets = self.offsets();
        let mut delta = dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let off = offsets[l];
            let a = &tape.inputs[l];
            for i in 0..layer.rows {
                if delta[i] == 0.0 {
                    continue;
                }
                let g = &mut grad[off + i * layer.cols..off + (i + 1) * layer.cols];
                for (gj, &aj) in g.iter_mut().zip(a) {
                    *gj += delta[i] * aj;
                }
                grad[off + layer.rows * layer.cols + i] += delta[i];
            }
            let up = layer.apply_t(&delta);
            delta = if l > 0 {
                up.iter()
                    .zip(&tape.pre[l - 1])
                    .map(|(u, &z)| u * self.activation.deriv(z))
                    .collect()
            } else {
                up
            };
        }
        delta
    }

    /// Value and input gradient of a one-output network.
    pub fn input_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let tape = self.tape(x);
        let mut scratch = vec![0.0; self.n_params()];
        let g = self.backward(&tape, &[1.0], &mut scratch);
        (tape.output()[0], g)
    }

    /// Accumulates `d/dparams <gbar, grad_x s(x)>` into `grad` for a one-output network.
    ///
    /// Reverse pass through the input-gradient computation, then through the
    /// forward pass with the injected pre-activation adjoints.
    pub fn input_gradient_backward(&self, tape: &Tape, gbar: &[f64], grad: &mut [f64]) {
        let n = self.layers.len();
        let offsets = self.offsets();
        let act = self.activation;
        // Input-gradient pass: delta[l] is d s / d z_l, v[l] = W_l^T delta[l].
        let mut delta = vec![Vec::new(); n];
        let mut v = vec![Vec::new(); n];
        delta[n - 1] = vec![1.0];
        for l in (0..n).rev() {
            v[l] = self.layers[l].apply_t(&delta[l]);
            if l > 0 {
                delta[l - 1] = v[l]
                    .iter()
                    .zip(&tape.pre[l - 1])
                    .map(|(a, &z)| a * act.deriv(z))
                    .collect();
            }
        }
        // Adjoints of the input-gradient pass.
        let mut zbar: Vec<Vec<f64>> = tape.pre.iter().map(|z| vec![0.0; z.len()]).collect();
        let mut vbar = gbar.to_vec();
        for l in 0..n {
            let layer = &self.layers[l];
            let off = offsets[l];
            for i in 0..layer.rows {
                if delta[l][i] == 0.0 {
                    continue;
                }
                let g = &mut grad[off + i * layer.cols..off + (i + 1) * layer.cols];
                for (gj, &vb) in g.iter_mut().zip(&vbar) {
                    *gj += delta[l][i] * vb;
                }
            }
            let dbar = layer.apply(&vbar);
            // `apply` adds the bias; remove it to get W vbar.
            let dbar: Vec<f64> = dbar.iter().zip(&layer.b).map(|(a, b)| a - b).collect();
            if l + 1 < n {
                let z = &tape.pre[l];
                for i in 0..layer.rows {
                    zbar[l][i] = act.second(z[i]) * v[l + 1][i] * dbar[i];
                }
                vbar = dbar
                    .iter()
                    .zip(z)
                    .map(|(d, &zi)| d * act.deriv(zi))
                    .collect();
            }
        }
        // Forward-pass adjoints with zbar injected; the output itself carries no adjoint.
        let mut total = vec![0.0; 0];
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let mut zt = zbar[l].clone();
            if l + 1 < n {
                for (i, t) in zt.iter_mut().enumerate() {
                    *t += act.deriv(tape.pre[l][i]) * total[i];
                }
            }
            let off = offsets[l];
            let a = &tape.inputs[l];
            for i in 0..layer.rows {
                if zt[i] == 0.0 {
                    continue;
                }
                let g = &mut grad[off + i * layer.cols..off + (i + 1) * layer.cols];
                for (gj, &aj) in g.iter_mut().zip(a) {
                    *gj += zt[i] * aj;
                }
                grad[off + layer.rows * layer.cols + i] += zt[i];
            }
            total = layer.apply_t(&zt);
        }
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.n_params();
                o
            })
            .collect()
    }

    /// Exact largest singular value of every weight matrix.
    pub fn singular_values(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| {
                if l.rows == 0 || l.cols == 0 {
                    0.0
                } else {
                    l.matrix().singular_values().max()
                }
            })
            .collect()
    }

    /// Product of layer spectral norms; a Lipschitz bound for 1-Lipschitz activations.
    pub fn lipschitz_bound(&self) -> f64 {
        self.singular_values().iter().product()
    }

    /// First 16 hex digits of the SHA-256 of the little-endian parameters.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.params() {
            h.update(v.to_le_bytes());
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"DGANSNAP";
/// Version of the snapshot layout written by [`save_snapshot`].
pub const SNAPSHOT_VERSION: u32 = 1;

/// Header, then per layer `rows, cols` as u64 and the parameters as f64, all little-endian.
pub fn save_snapshot(net: &MlpParams, mut out: impl Write) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&[net.activation.tag()])?;
    out.write_all(&(net.layers.len() as u64).to_le_bytes())?;
    for l in &net.layers {
        out.write_all(&(l.rows as u64).to_le_bytes())?;
        out.write_all(&(l.cols as u64).to_le_bytes())?;
        for v in l.w.iter().chain(&l.b) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_snapshot(mut input: impl Read) -> Result<MlpParams> {
    fn u64_from(r: &mut impl Read) -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Parse("not a network snapshot".into()));
    }
    let mut vb = [0u8; 4];
    input.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Parse(format!(
            "snapshot version {version} is not supported"
        )));
    }
    let mut tag = [0u8; 1];
    input.read_exact(&mut tag)?;
    let activation = Activation::from_tag(tag[0])?;
    let n = u64_from(&mut input)? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = u64_from(&mut input)? as usize;
        let cols = u64_from(&mut input)? as usize;
        let mut vals = Vec::with_capacity(rows * (cols + 1));
        for _ in 0..rows * (cols + 1) {
            vals.push(f64::from_bits(u64_from(&mut input)?));
        }
        let b = vals.split_off(rows * cols);
        layers.push(Layer::new(rows, cols, vals, b)?);
    }
    MlpParams::from_layers(layers, activation)
}
