use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { out: usize, activation: Activation },
    /// Batch normalisation over the current width, followed by `activation`.
    BatchNorm { activation: Activation },
    /// Final dense layer to `classes` logits; softmax lives in the loss.
    SoftmaxHead { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: usize, layers: Vec<LayerSpec>) -> Self {
        Self { input, layers }
    }

    /// Checks width chaining and that a softmax head, if any, is terminal.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network spec has no layers"));
        }
        if self.input == 0 {
            return Err(Error::invalid("network input width must be positive"));
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { out, .. } if out == 0 => {
                    return Err(Error::invalid(format!("layer {i}: zero-width dense layer")))
                }
                LayerSpec::SoftmaxHead { classes } if classes < 1 => {
                    return Err(Error::invalid(format!("layer {i}: softmax head needs classes")))
                }
                LayerSpec::SoftmaxHead { .. } if i != last => {
                    return Err(Error::invalid(format!(
                        "layer {i}: softmax head must be the last layer"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Width after each layer, starting from the input.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        for layer in &self.layers {
            let cur = *w.last().unwrap();
            w.push(match *layer {
                LayerSpec::Dense { out, .. } => out,
                LayerSpec::BatchNorm { .. } => cur,
                LayerSpec::SoftmaxHead { classes } => classes,
            });
        }
        w
    }

    pub fn output(&self) -> usize {
        *self.widths().last().unwrap()
    }

    /// Trainable parameter count: `in·out + out` per dense layer and
    /// `2·width` per batch-norm layer.
    pub fn param_count(&self) -> usize {
        let widths = self.widths();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                LayerSpec::Dense { .. } | LayerSpec::SoftmaxHead { .. } => {
                    widths[i] * widths[i + 1] + widths[i + 1]
                }
                LayerSpec::BatchNorm { .. } => 2 * widths[i],
            })
            .sum()
    }
}

fn dense(out: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense { out, activation }
}

/// Dense encoder: hidden ReLU layers then a linear code layer.
pub fn encoder(input: usize, hidden: &[usize], code: usize) -> NetworkSpec {
    let mut layers: Vec<LayerSpec> = hidden.iter().map(|&h| dense(h, Activation::Relu)).collect();
    layers.push(dense(code, Activation::None));
    NetworkSpec::new(input, layers)
}

/// Classifier: `hidden` blocks of dense+ReLU → batch-norm, then a softmax head.
pub fn classifier(input: usize, hidden: &[usize], classes: usize) -> NetworkSpec {
    let mut layers = Vec::new();
    for &h in hidden {
        layers.push(dense(h, Activation::Relu));
        layers.push(LayerSpec::BatchNorm {
            activation: Activation::None,
        });
    }
    layers.push(LayerSpec::SoftmaxHead { classes });
    NetworkSpec::new(input, layers)
}

/// Code and class sizes of a model bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub s: usize,
    pub z: usize,
    pub classes: usize,
}

/// The five network specs of a two-step model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub enc_s: NetworkSpec,
    pub s_classifier: NetworkSpec,
    pub enc_z: NetworkSpec,
    pub decoder: NetworkSpec,
    pub adversary: NetworkSpec,
}

impl BundleSpec {
    /// The dense stock-returns architecture: encoders 100,66,66,code with
    /// ReLU, S classifier 2×50 and adversary 3×50 with batch-norm, decoder
    /// (s+z),66,66,input.
    pub fn stocks(input: usize, s: usize, z: usize, classes: usize) -> Self {
        let dec_in = s + z;
        Self {
            enc_s: encoder(input, &[input, 66, 66], s),
            s_classifier: classifier(s, &[50, 50], classes),
            enc_z: encoder(input, &[input, 66, 66], z),
            decoder: encoder(dec_in, &[dec_in, 66, 66], input),
            adversary: classifier(z, &[50, 50, 50], classes),
        }
    }

    /// Small dense architecture for the synthetic rectangle images.
    pub fn synth(input: usize, s: usize, z: usize, classes: usize) -> Self {
        Self {
            enc_s: encoder(input, &[64, 64, 64], s),
            s_classifier: classifier(s, &[32, 32, 32], classes),
            enc_z: encoder(input, &[64, 64, 64], z),
            decoder: encoder(s + z, &[64, 64, 64], input),
            adversary: classifier(z, &[32, 32, 32], classes),
        }
    }

    pub fn preset(name: &str, dims: Dims) -> Result<Self> {
        match name {
            "stocks" => Ok(Self::stocks(dims.input, dims.s, dims.z, dims.classes)),
            "synth" => Ok(Self::synth(dims.input, dims.s, dims.z, dims.classes)),
            other => Err(Error::invalid(format!(
                "unknown preset `{other}` (expected `stocks` or `synth`)"
            ))),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.enc_s.input,
            s: self.enc_s.output(),
            z: self.enc_z.output(),
            classes: self.s_classifier.output(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, spec) in self.iter() {
            spec.validate()
                .map_err(|e| Error::invalid(format!("{name}: {e}")))?;
        }
        let d = self.dims();
        let checks = [
            (self.enc_z.input == d.input, "enc_z input must match enc_s input"),
            (self.s_classifier.input == d.s, "s_classifier input must equal s_dim"),
            (self.decoder.input == d.s + d.z, "decoder input must equal s_dim + z_dim"),
            (self.decoder.output() == d.input, "decoder output must equal input_dim"),
            (self.adversary.input == d.z, "adversary input must equal z_dim"),
            (self.adversary.output() == d.classes, "both classifiers need n_classes outputs"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(msg));
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &NetworkSpec)> {
        [
            ("enc_s", &self.enc_s),
            ("s_classifier", &self.s_classifier),
            ("enc_z", &self.enc_z),
            ("decoder", &self.decoder),
            ("adversary", &self.adversary),
        ]
        .into_iter()
    }
}
