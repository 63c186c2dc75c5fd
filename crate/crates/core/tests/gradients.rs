//! Finite-difference checks of whole forward passes rather than single ops.

mod common;

use common::{gradcheck, randn};
use hat_core::autograd::NormAxes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn conv_classifier_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels = [0, 2, 1];
    for _ in 0..5 {
        let x = randn(&[3, 2, 5, 5], &mut rng);
        let k = randn(&[4, 2, 3, 3], &mut rng);
        let b = randn(&[4], &mut rng);
        let w = randn(&[36, 3], &mut rng);
        let err = gradcheck(&[x, k, b, w], |t, v| {
            let c = t.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap();
            let c = t.normalize(c, NormAxes::PerSample, 1e-5).unwrap();
            let c = t.sigmoid(c).unwrap();
            let f = t.reshape(c, &[3, 36]).unwrap();
            let o = t.matmul(f, v[3]).unwrap();
            t.softmax_cross_entropy(o, &labels).unwrap()
        });
        assert!(err < 1e-5, "{err}");
    }
}

#[test]
fn masked_mlp_through_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labels = [1, 0, 1, 1];
    for _ in 0..5 {
        let x = randn(&[4, 3], &mut rng);
        let w0 = randn(&[3, 5], &mut rng);
        let e0 = randn(&[5], &mut rng);
        let w1 = randn(&[5, 2], &mut rng);
        let err = gradcheck(&[w0, e0, w1], |t, v| {
            let xc = t.constant(x.clone());
            let h = t.matmul(xc, v[0]).unwrap();
            let se = t.scale(v[1], 2.5).unwrap();
            let a = t.sigmoid(se).unwrap();
            let h = t.mul(h, a).unwrap();
            let h = t.sigmoid(h).unwrap();
            let o = t.matmul(h, v[2]).unwrap();
            t.softmax_cross_entropy(o, &labels).unwrap()
        });
        assert!(err < 1e-5, "{err}");
    }
}
