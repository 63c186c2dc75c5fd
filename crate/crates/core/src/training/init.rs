use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::layers::HatMasker;
use crate::network::HatNetwork;

/// Starting value of mask embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingInit {
    /// Every embedding is 1: all units open at high scale.
    Ones,
    /// Standard normal draws.
    Gaussian,
}

impl FromStr for EmbeddingInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(EmbeddingInit::Ones),
            "gaussian" => Ok(EmbeddingInit::Gaussian),
            other => Err(Error::Validation(format!("unknown embedding init `{other}`"))),
        }
    }
}

impl fmt::Display for EmbeddingInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingInit::Ones => "ones",
            EmbeddingInit::Gaussian => "gaussian",
        })
    }
}

pub fn init_embedding_row(
    masker: &mut HatMasker,
    task: usize,
    kind: EmbeddingInit,
    rng: &mut impl Rng,
) -> Result<()> {
    let row = masker.embedding_mut(task)?;
    for v in row.data_mut() {
        *v = match kind {
            EmbeddingInit::Ones => 1.0,
            EmbeddingInit::Gaussian => rng.sample(StandardNormal),
        };
    }
    Ok(())
}

/// Initializes every embedding row of every masker, layer by layer and
/// task by task.
pub fn init_embeddings(net: &mut HatNetwork, kind: EmbeddingInit, rng: &mut impl Rng) -> Result<()> {
    for masker in net.maskers_mut() {
        for t in 0..masker.task_count() {
            init_embedding_row(masker, t, kind, rng)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::attention;
    use crate::network::MlpSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> HatNetwork {
        let spec = MlpSpec {
            inputs: 4,
            hidden: vec![6, 5],
            classes: 2,
            input_gate: true,
        };
        HatNetwork::mlp(&spec, 3, 400.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn ones_saturate_at_high_scale_and_halve_at_low() {
        let mut n = net();
        init_embeddings(&mut n, EmbeddingInit::Ones, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for m in n.maskers() {
            for e in m.embeddings() {
                assert!(attention(e, 400.0).data().iter().all(|&a| (a - 1.0).abs() < 1e-12));
                assert!(attention(e, 1.0 / 400.0).data().iter().all(|&a| (a - 0.5).abs() < 1e-3));
            }
        }
    }

    #[test]
    fn gaussian_is_reproducible() {
        let draw = |seed| {
            let mut n = net();
            init_embeddings(&mut n, EmbeddingInit::Gaussian, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            n.maskers().flat_map(|m| m.embeddings().to_vec()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }
}
