use sha2::{Digest, Sha256};

use super::network::{Layer, Network};
use super::spec::{BundleSpec, Dims};
use crate::error::Result;

/// The five networks of the two-step model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub enc_s: Network,
    pub s_classifier: Network,
    pub enc_z: Network,
    pub decoder: Network,
    pub adversary: Network,
    pub dims: Dims,
}

impl ModelBundle {
    /// Builds every network from `spec`, each with its own seed stream.
    pub fn build(spec: &BundleSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let sub = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Ok(Self {
            enc_s: Network::build(&spec.enc_s, sub(1))?,
            s_classifier: Network::build(&spec.s_classifier, sub(2))?,
            enc_z: Network::build(&spec.enc_z, sub(3))?,
            decoder: Network::build(&spec.decoder, sub(4))?,
            adversary: Network::build(&spec.adversary, sub(5))?,
            dims: spec.dims(),
        })
    }

    pub fn spec(&self) -> BundleSpec {
        BundleSpec {
            enc_s: self.enc_s.spec().clone(),
            s_classifier: self.s_classifier.spec().clone(),
            enc_z: self.enc_z.spec().clone(),
            decoder: self.decoder.spec().clone(),
            adversary: self.adversary.spec().clone(),
        }
    }

    pub fn networks(&self) -> [(&'static str, &Network); 5] {
        [
            ("enc_s", &self.enc_s),
            ("s_classifier", &self.s_classifier),
            ("enc_z", &self.enc_z),
            ("decoder", &self.decoder),
            ("adversary", &self.adversary),
        ]
    }
}

/// SHA-256 over a network's parameters and running statistics.
pub fn network_hash(net: &Network) -> [u8; 32] {
    let mut h = Sha256::new();
    for layer in net.layers() {
        match layer {
            Layer::Dense { weight, bias, .. } => {
                for v in weight.data().iter().chain(bias.data()) {
                    h.update(v.to_le_bytes());
                }
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running,
                ..
            } => {
                for v in gamma
                    .data()
                    .iter()
                    .chain(beta.data())
                    .chain(&running.mean)
                    .chain(&running.var)
                {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    h.finalize().into()
}
