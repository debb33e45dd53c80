//! JSON document for networks:
//! `{version, budget, emb:{E1,E2}, blocks:[{conv:{W,c1,c2,a1,a2,U}, fnn:[{A,b}]}], clip, decode}`.
//! Matrices are arrays of rows. Floats are written in shortest
//! round-trip form, so a save/load cycle is bit-exact.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::budget::ClassBudget;
use super::layers::{Affine, ConvLayer, EmbeddingLayer, FnnStack};
use super::network::{Block, SsmNetwork, TokenMap};
use crate::constructions::SelectionReadout;
use crate::error::Result;
use crate::numerics::Matrix;

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbDoc {
    #[serde(rename = "E1")]
    e1: Matrix,
    #[serde(rename = "E2")]
    e2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvDoc {
    #[serde(rename = "W")]
    w: Matrix,
    c1: Vec<f64>,
    c2: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    #[serde(rename = "U")]
    u: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    conv: ConvDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fnn: Option<Vec<Affine>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    readout: Option<SelectionReadout>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    version: u32,
    budget: ClassBudget,
    emb: EmbDoc,
    blocks: Vec<BlockDoc>,
    clip: Option<f64>,
    decode: Option<Matrix>,
}

impl SsmNetwork {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Serialize for SsmNetwork {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let c = &b.conv;
                let conv = ConvDoc {
                    w: c.w_mix.clone(),
                    c1: c.c1.clone(),
                    c2: c.c2.clone(),
                    a1: c.a1.clone(),
                    a2: c.a2.clone(),
                    u: c.window,
                };
                match &b.map {
                    TokenMap::Fnn(f) => BlockDoc { conv, fnn: Some(f.layers.clone()), readout: None },
                    TokenMap::Readout(r) => BlockDoc { conv, fnn: None, readout: Some((**r).clone()) },
                }
            })
            .collect();
        NetworkDoc {
            version: NETWORK_FORMAT_VERSION,
            budget: ClassBudget::fitting(self),
            emb: EmbDoc { e1: self.emb.e1.clone(), e2: self.emb.e2.clone() },
            blocks,
            clip: self.clip_bound,
            decode: self.decode.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SsmNetwork {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = NetworkDoc::deserialize(d)?;
        if doc.version != NETWORK_FORMAT_VERSION {
            return Err(D::Error::custom(format!("unsupported network format version {}", doc.version)));
        }
        let emb = EmbeddingLayer::new(doc.emb.e1, doc.emb.e2).map_err(D::Error::custom)?;
        let mut blocks = Vec::with_capacity(doc.blocks.len());
        for b in doc.blocks {
            let c = b.conv;
            let conv = ConvLayer::new(c.w, c.c1, c.c2, c.a1, c.a2, c.u).map_err(D::Error::custom)?;
            let map = match (b.fnn, b.readout) {
                (Some(layers), None) => TokenMap::Fnn(FnnStack::new(layers).map_err(D::Error::custom)?),
                (None, Some(r)) => TokenMap::Readout(Box::new(r)),
                _ => return Err(D::Error::custom("each block needs exactly one of `fnn` or `readout`")),
            };
            blocks.push(Block { conv, map });
        }
        SsmNetwork::new(emb, blocks, doc.clip, doc.decode).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = RngStream::new(3, 0);
        let d = 3;
        let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal() * 1e-3 + 1.0 / 3.0).collect() };
        let conv = ConvLayer::new(
            Matrix::from_vec(d, d, rand_vec(d * d)).unwrap(),
            rand_vec(d),
            rand_vec(d),
            rand_vec(d),
            rand_vec(d),
            5,
        )
        .unwrap();
        let fnn = FnnStack::new(vec![
            Affine::new(Matrix::from_vec(4, d, rand_vec(4 * d)).unwrap(), rand_vec(4)).unwrap(),
            Affine::new(Matrix::from_vec(2, 4, rand_vec(8)).unwrap(), rand_vec(2)).unwrap(),
        ])
        .unwrap();
        let net = SsmNetwork::new(
            EmbeddingLayer::new(Matrix::from_vec(d, 2, rand_vec(2 * d)).unwrap(), rand_vec(d)).unwrap(),
            vec![Block { conv, map: TokenMap::Fnn(fnn) }],
            Some(0.75),
            Some(Matrix::from_vec(2, 2, rand_vec(4)).unwrap()),
        )
        .unwrap();
        let json = net.to_json().unwrap();
        let back = SsmNetwork::from_json(&json).unwrap();
        assert_eq!(back, net);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["version", "budget", "emb", "blocks", "clip", "decode"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["blocks"][0]["conv"].get("U").is_some());
    }

    #[test]
    fn rejects_unknown_fields_and_versions() {
        let net = SsmNetwork::new(
            EmbeddingLayer::identity(1),
            vec![Block { conv: ConvLayer::zeros(1, 0), map: TokenMap::Fnn(FnnStack::identity(1)) }],
            None,
            None,
        )
        .unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&net.to_json().unwrap()).unwrap();
        v["version"] = 99.into();
        assert!(SsmNetwork::from_json(&v.to_string()).is_err());
        v["version"] = 1.into();
        v["extra"] = 1.into();
        assert!(SsmNetwork::from_json(&v.to_string()).is_err());
    }
}
