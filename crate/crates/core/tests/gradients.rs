//! Finite-difference checks of the analytic backward passes through the
//! public API.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vidtext::model::{DualEncoder, ModelDims};
use vidtext::numerics::{dot, Matrix};
use vidtext::objective::{RelevanceMatrix, SmsConfig};
use vidtext::params::ParamSet;
use vidtext::temporal::{encode_video, encode_video_cached, encode_video_backward, FrameSequence, TemporalEncoderParams};

const H: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn random_clip(r: &mut ChaCha8Rng, t: usize, d_in: usize) -> FrameSequence<f64> {
    let feats = Matrix::from_fn(t, d_in, |_, _| r.gen_range(-1.0..1.0));
    let mut mask: Vec<bool> = (0..t).map(|_| r.gen_bool(0.75)).collect();
    mask[0] = true;
    FrameSequence::new(feats, mask).unwrap()
}

#[test]
fn encode_video_backward_matches_central_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..6 {
        let t = r.gen_range(1..=6);
        let dim = [4, 8, 16][r.gen_range(0..3)];
        let layers = r.gen_range(1..=2);
        let d_in = r.gen_range(2..=5);
        let params = TemporalEncoderParams::<f64>::init(&mut r, dim, 2, layers, 6).unwrap();
        let proj = Matrix::from_fn(d_in, dim, |_, _| r.gen_range(-0.5..0.5));
        let clip = random_clip(&mut r, t, d_in);
        let probe: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();

        let (_, cache) = encode_video_cached(&clip, &proj, &params).unwrap();
        let mut g_proj = Matrix::zeros(d_in, dim);
        let mut g = params.zeros_like();
        encode_video_backward(&cache, &probe, &params, &mut g_proj, &mut g).unwrap();

        let f = |p: &TemporalEncoderParams<f64>, w: &Matrix<f64>| dot(&encode_video(&clip, w, p).unwrap(), &probe);
        let analytic: Vec<f64> = g.params().iter().flat_map(|p| p.data.to_vec()).collect();
        for k in 0..params.num_scalars() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            let bump = |p: &mut TemporalEncoderParams<f64>, delta: f64| {
                let mut seen = 0;
                for t in p.params_mut() {
                    if k < seen + t.data.len() {
                        t.data[k - seen] += delta;
                        return;
                    }
                    seen += t.data.len();
                }
            };
            bump(&mut plus, H);
            bump(&mut minus, -H);
            let fd = (f(&plus, &proj) - f(&minus, &proj)) / (2.0 * H);
            assert!(rel_err(analytic[k], fd) < 1e-3, "param {k}: {} vs {fd}", analytic[k]);
        }
        for i in 0..d_in {
            for j in 0..dim {
                let (mut plus, mut minus) = (proj.clone(), proj.clone());
                plus.set(i, j, proj.get(i, j) + H);
                minus.set(i, j, proj.get(i, j) - H);
                let fd = (f(&params, &plus) - f(&params, &minus)) / (2.0 * H);
                assert!(rel_err(g_proj.get(i, j), fd) < 1e-3, "proj ({i},{j}): {} vs {fd}", g_proj.get(i, j));
            }
        }
    }
}

#[test]
fn batch_gradient_matches_central_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let cfg = SmsConfig::default();
    for temporal in [true, false] {
        let dims = ModelDims {
            frame_dim: 3,
            text_dim: 4,
            dim: 8,
            heads: 2,
            layers: 1,
            t_max: 4,
            temporal,
        };
        let mut tr = ChaCha8Rng::seed_from_u64(13);
        let model = DualEncoder::<f64>::init(&mut r, &mut tr, &dims).unwrap();
        let b = 4;
        let clips: Vec<FrameSequence<f64>> = (0..b).map(|_| random_clip(&mut r, 4, 3)).collect();
        let refs: Vec<&FrameSequence<f64>> = clips.iter().collect();
        let text = Matrix::from_fn(b, 4, |_, _| r.gen_range(-1.0..1.0));
        let rel = RelevanceMatrix::new(Matrix::from_fn(b, b, |i, j| if i == j { 1.0 } else { [0.0, 0.25, 0.5][(i + 2 * j) % 3] }))
            .unwrap();
        let (_, grad) = model.batch_loss_and_grad(&refs, &text, &rel, &cfg).unwrap();
        let loss = |m: &DualEncoder<f64>| m.batch_loss_and_grad(&refs, &text, &rel, &cfg).unwrap().0;
        let analytic: Vec<f64> = grad.params().iter().flat_map(|p| p.data.to_vec()).collect();
        let (mut worst, mut checked) = (0.0f64, 0);
        for k in (0..model.num_scalars()).step_by(3) {
            let bump = |m: &mut DualEncoder<f64>, delta: f64| {
                let mut seen = 0;
                for t in m.params_mut() {
                    if k < seen + t.data.len() {
                        t.data[k - seen] += delta;
                        return;
                    }
                    seen += t.data.len();
                }
            };
            let (mut plus, mut minus) = (model.clone(), model.clone());
            bump(&mut plus, H);
            bump(&mut minus, -H);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * H);
            // hinge kinks make an occasional entry unreliable
            if (analytic[k] - fd).abs() > 1e-6 {
                worst = worst.max(rel_err(analytic[k], fd));
            }
            checked += 1;
        }
        assert!(checked > 10);
        assert!(worst < 1e-3, "temporal={temporal}: worst rel err {worst}");
    }
}
