//! Gated fusion of geometry and text embeddings and the regression head.
//!
//! Both branches are projected to width `n` and layer-normalized; a sigmoid
//! gate over their concatenation interpolates per coordinate. Weights in
//! this module are stored `out x in` and applied as `x W^T`.

use thiserror::Error;

use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::params::{Bound, Init, ModelConfig, ParamError, ParamStore};

pub const W_G: &str = "fusion.w_g";
pub const W_T: &str = "fusion.w_t";
pub const LN_G_GAMMA: &str = "fusion.ln_g.gamma";
pub const LN_G_BETA: &str = "fusion.ln_g.beta";
pub const LN_T_GAMMA: &str = "fusion.ln_t.gamma";
pub const LN_T_BETA: &str = "fusion.ln_t.beta";
pub const GATE_W: &str = "fusion.gate.weight";
pub const GATE_B: &str = "fusion.gate.bias";
pub const HEAD1_W: &str = "fusion.head1.weight";
pub const HEAD1_B: &str = "fusion.head1.bias";
pub const HEAD2_W: &str = "fusion.head2.weight";
pub const HEAD2_B: &str = "fusion.head2.bias";

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("{matrix} has shape {found:?}, expected {expected:?}")]
    Dimension {
        matrix: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

pub fn head_width(n: usize) -> usize {
    (n / 2).max(1)
}

fn init_stem_and_head(store: &mut ParamStore, n: usize, seed: u64) {
    let m = head_width(n);
    store.init(W_G, &[n, n], Init::Xavier, seed);
    store.init(LN_G_GAMMA, &[n], Init::Ones, seed);
    store.init(LN_G_BETA, &[n], Init::Zeros, seed);
    store.init(HEAD1_W, &[m, n], Init::Xavier, seed);
    store.init(HEAD1_B, &[m], Init::Zeros, seed);
    store.init(HEAD2_W, &[1, m], Init::Xavier, seed);
    store.init(HEAD2_B, &[1], Init::Zeros, seed);
}

/// Parameters of the geometry-only baseline: the `W_g` + layer-norm stem
/// and the head.
pub fn init_geometry_head(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    init_stem_and_head(store, cfg.hidden, seed);
}

/// All fusion parameters. Shared names start from the same values as in
/// [`init_geometry_head`].
pub fn init_fusion(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    let (n, d) = (cfg.hidden, cfg.text_dim);
    init_stem_and_head(store, n, seed);
    store.init(W_T, &[n, d], Init::Xavier, seed);
    store.init(LN_T_GAMMA, &[n], Init::Ones, seed);
    store.init(LN_T_BETA, &[n], Init::Zeros, seed);
    store.init(GATE_W, &[n, 2 * n], Init::Xavier, seed);
    store.init(GATE_B, &[n], Init::Zeros, seed);
}

fn expect(tape: &Tape, v: Var, matrix: &'static str, expected: &[usize]) -> Result<(), FusionError> {
    let found = tape.value(v).shape();
    if found != expected {
        return Err(FusionError::Dimension {
            matrix,
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

fn cols(tape: &Tape, v: Var, name: &'static str) -> Result<(usize, usize), FusionError> {
    let t = tape.value(v);
    t.rows_cols().ok_or_else(|| FusionError::Dimension {
        matrix: name,
        expected: vec![0, 0],
        found: t.shape().to_vec(),
    })
}

/// Tape handles of one fused batch.
#[derive(Clone, Copy, Debug)]
pub struct FusedVars {
    pub g_tilde: Var,
    pub t_tilde: Var,
    pub gate: Var,
    pub f: Var,
}

/// `g~ = LN(g W_g^T)` for a `B x n` batch.
pub fn geometry_stem(tape: &mut Tape, p: &Bound, g: Var, eps: f64) -> Result<Var, FusionError> {
    let (_, n) = cols(tape, g, "g")?;
    let w_g = p.var(W_G)?;
    expect(tape, w_g, W_G, &[n, n])?;
    let gp = tape.linear_t(g, w_g)?;
    Ok(tape.layer_norm(gp, p.var(LN_G_GAMMA)?, p.var(LN_G_BETA)?, eps)?)
}

/// Fuses `B x n` geometry and `B x d` projected text embeddings.
pub fn fuse(tape: &mut Tape, p: &Bound, g: Var, t_p: Var, eps: f64) -> Result<FusedVars, FusionError> {
    let (bg, n) = cols(tape, g, "g")?;
    let (bt, d) = cols(tape, t_p, "t_p")?;
    if bg != bt {
        return Err(FusionError::Dimension {
            matrix: "t_p",
            expected: vec![bg, d],
            found: vec![bt, d],
        });
    }
    let g_tilde = geometry_stem(tape, p, g, eps)?;

    let w_t = p.var(W_T)?;
    expect(tape, w_t, W_T, &[n, d])?;
    let tp = tape.linear_t(t_p, w_t)?;
    let t_tilde = tape.layer_norm(tp, p.var(LN_T_GAMMA)?, p.var(LN_T_BETA)?, eps)?;

    let gate_w = p.var(GATE_W)?;
    expect(tape, gate_w, GATE_W, &[n, 2 * n])?;
    let gate_b = p.var(GATE_B)?;
    expect(tape, gate_b, GATE_B, &[n])?;
    let cat = tape.concat_cols(g_tilde, t_tilde)?;
    let z = tape.linear_t(cat, gate_w)?;
    let z = tape.add_row(z, gate_b)?;
    let gate = tape.sigmoid(z)?;
    // gate * g~ + (1 - gate) * t~
    let f = tape.interpolate(t_tilde, g_tilde, gate)?;
    Ok(FusedVars {
        g_tilde,
        t_tilde,
        gate,
        f,
    })
}

/// Two-layer head `n -> n/2 -> 1` with shifted softplus; returns `B x 1`.
pub fn predict(tape: &mut Tape, p: &Bound, f: Var) -> Result<Var, FusionError> {
    let (_, n) = cols(tape, f, "f")?;
    let m = head_width(n);
    let w1 = p.var(HEAD1_W)?;
    expect(tape, w1, HEAD1_W, &[m, n])?;
    let w2 = p.var(HEAD2_W)?;
    expect(tape, w2, HEAD2_W, &[1, m])?;
    let h = tape.linear_t(f, w1)?;
    let h = tape.add_row(h, p.var(HEAD1_B)?)?;
    let h = tape.shifted_softplus(h)?;
    let y = tape.linear_t(h, w2)?;
    Ok(tape.add_row(y, p.var(HEAD2_B)?)?)
}

/// Baseline prediction from `g` alone.
pub fn geometry_only_head(tape: &mut Tape, p: &Bound, g: Var, eps: f64) -> Result<Var, FusionError> {
    let g_tilde = geometry_stem(tape, p, g, eps)?;
    predict(tape, p, g_tilde)
}

/// Fused representation of one sample, off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedRepr {
    pub g_tilde: Vec<f64>,
    pub t_tilde: Vec<f64>,
    pub gate: Vec<f64>,
    pub f: Vec<f64>,
}

fn row(v: &[f64]) -> Tensor {
    Tensor::new(vec![1, v.len()], v.to_vec()).expect("row vector")
}

pub fn fuse_vectors(g: &[f64], t_p: &[f64], params: &ParamStore, eps: f64) -> Result<FusedRepr, FusionError> {
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let gv = tape.constant(row(g));
    let tv = tape.constant(row(t_p));
    let out = fuse(&mut tape, &p, gv, tv, eps)?;
    let get = |v: Var| tape.value(v).data().to_vec();
    Ok(FusedRepr {
        g_tilde: get(out.g_tilde),
        t_tilde: get(out.t_tilde),
        gate: get(out.gate),
        f: get(out.f),
    })
}

pub fn predict_vector(f: &[f64], params: &ParamStore) -> Result<f64, FusionError> {
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let fv = tape.constant(row(f));
    let y = predict(&mut tape, &p, fv)?;
    Ok(tape.value(y).data()[0])
}

pub fn geometry_only_vector(g: &[f64], params: &ParamStore, eps: f64) -> Result<f64, FusionError> {
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let gv = tape.constant(row(g));
    let y = geometry_only_head(&mut tape, &p, gv, eps)?;
    Ok(tape.value(y).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check_many;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-5;

    fn cfg(n: usize, d: usize) -> ModelConfig {
        ModelConfig {
            hidden: n,
            text_dim: d,
            ..ModelConfig::tiny()
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// The hand-set parameters used by `oracles/fusion_scalar.py`.
    fn hand_params() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(W_G, mat(&[&[1.0, 0.0], &[1.0, 1.0]]));
        s.insert(W_T, mat(&[&[1.0], &[-1.0]]));
        s.insert(LN_G_GAMMA, Tensor::vector(vec![1.0, 2.0]));
        s.insert(LN_G_BETA, Tensor::vector(vec![0.0, 1.0]));
        s.insert(LN_T_GAMMA, Tensor::vector(vec![1.0, 1.0]));
        s.insert(LN_T_BETA, Tensor::vector(vec![0.5, 0.0]));
        s.insert(GATE_W, mat(&[&[1.0, 0.0, -1.0, 0.0], &[0.0, 1.0, 0.0, 1.0]]));
        s.insert(GATE_B, Tensor::vector(vec![0.0, -1.0]));
        s.insert(HEAD1_W, mat(&[&[1.0, -1.0]]));
        s.insert(HEAD1_B, Tensor::vector(vec![0.5]));
        s.insert(HEAD2_W, mat(&[&[2.0]]));
        s.insert(HEAD2_B, Tensor::vector(vec![-1.0]));
        s
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn hand_computation_matches_scalar_oracle() {
        let p = hand_params();
        let r = fuse_vectors(&[1.0, 3.0], &[2.0], &p, EPS).unwrap();
        assert_close(&r.g_tilde, &[-0.999_997_777_785_185_157_75, 2.999_995_555_570_370_315_5], 1e-12);
        assert_close(&r.t_tilde, &[1.499_998_750_002_343_745_1, -0.999_998_750_002_343_745_12], 1e-12);
        assert_close(&r.gate, &[0.075_858_423_436_600_889_488, 0.731_057_950_566_095_400_84], 1e-12);
        assert_close(&r.f, &[1.310_352_954_807_405_415_7, 1.924_228_889_305_696_551_8], 1e-12);
        let y = predict_vector(&r.f, &p).unwrap();
        assert!((y - -1.110_635_752_558_260_612_6).abs() < 1e-12, "{y}");
        let y0 = geometry_only_vector(&[1.0, 3.0], &p, EPS).unwrap();
        assert!((y0 - -2.326_793_133_744_944_325).abs() < 1e-12, "{y0}");
    }

    #[test]
    fn zero_gate_gives_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::new();
        init_fusion(&mut p, &cfg(6, 3), 4);
        p.insert(GATE_W, Tensor::zeros(&[6, 12]));
        p.insert(GATE_B, Tensor::zeros(&[6]));
        let r = fuse_vectors(&random_vec(&mut rng, 6), &random_vec(&mut rng, 3), &p, EPS).unwrap();
        assert!(r.gate.iter().all(|&x| x == 0.5));
        let mid: Vec<f64> = r.g_tilde.iter().zip(&r.t_tilde).map(|(a, b)| (a + b) / 2.0).collect();
        assert_close(&r.f, &mid, 1e-12);
    }

    #[test]
    fn equal_branches_are_a_fixed_point() {
        // g_proj and t_proj identical by construction
        let mut p = hand_params();
        p.insert(W_G, mat(&[&[1.0, 0.0], &[0.0, 0.0]]));
        p.insert(W_T, mat(&[&[1.0], &[0.0]]));
        p.insert(LN_G_GAMMA, Tensor::vector(vec![1.0, 1.0]));
        p.insert(LN_G_BETA, Tensor::vector(vec![0.5, 0.0]));
        let r = fuse_vectors(&[2.0, 9.0], &[2.0], &p, EPS).unwrap();
        assert_eq!(r.g_tilde, r.t_tilde);
        assert_eq!(r.f, r.g_tilde);
    }

    #[test]
    fn saturated_gate_selects_one_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamStore::new();
        init_fusion(&mut p, &cfg(8, 4), 9);
        let (g, t) = (random_vec(&mut rng, 8), random_vec(&mut rng, 4));
        p.insert(GATE_B, Tensor::filled(&[8], 40.0));
        let r = fuse_vectors(&g, &t, &p, EPS).unwrap();
        assert_close(&r.f, &r.g_tilde, 1e-15);
        p.insert(GATE_B, Tensor::filled(&[8], -40.0));
        let r = fuse_vectors(&g, &t, &p, EPS).unwrap();
        assert_close(&r.f, &r.t_tilde, 1e-15);
    }

    #[test]
    fn fused_coordinates_stay_between_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..500 {
            let mut p = ParamStore::new();
            init_fusion(&mut p, &cfg(4, 2), trial);
            let r = fuse_vectors(&random_vec(&mut rng, 4), &random_vec(&mut rng, 2), &p, EPS).unwrap();
            for i in 0..4 {
                let (lo, hi) = (r.g_tilde[i].min(r.t_tilde[i]), r.g_tilde[i].max(r.t_tilde[i]));
                assert!(lo <= r.f[i] && r.f[i] <= hi);
                assert!(r.gate[i] > 0.0 && r.gate[i] < 1.0);
            }
        }
    }

    #[test]
    fn zero_head_predicts_its_bias() {
        let mut p = ParamStore::new();
        init_fusion(&mut p, &cfg(4, 2), 0);
        p.insert(HEAD1_W, Tensor::zeros(&[2, 4]));
        p.insert(HEAD2_W, Tensor::zeros(&[1, 2]));
        p.insert(HEAD2_B, Tensor::vector(vec![0.75]));
        assert_eq!(predict_vector(&[1.0, -3.0, 2.0, 0.1], &p).unwrap(), 0.75);
    }

    #[test]
    fn baseline_ignores_text() {
        let mut p = ParamStore::new();
        init_fusion(&mut p, &cfg(4, 2), 5);
        let g = [0.3, -1.0, 2.0, 0.5];
        let a = geometry_only_vector(&g, &p, EPS).unwrap();
        p.insert(W_T, Tensor::filled(&[4, 2], 3.0));
        let b = geometry_only_vector(&g, &p, EPS).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn bad_gate_shape_names_the_matrix() {
        let mut p = ParamStore::new();
        init_fusion(&mut p, &cfg(4, 2), 0);
        p.insert(GATE_W, Tensor::zeros(&[4, 6]));
        let err = fuse_vectors(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0], &p, EPS).unwrap_err();
        assert!(err.to_string().contains(GATE_W), "{err}");
        let err = fuse_vectors(&[0.0, 1.0, 2.0, 3.0], &[1.0], &p, EPS).unwrap_err();
        assert!(err.to_string().contains(W_T), "{err}");
    }

    #[test]
    fn gradient_wrt_every_parameter_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ParamStore::new();
        init_fusion(&mut p, &cfg(4, 3), 6);
        // move biases and affine terms off their trivial initial values
        for (_, t) in p.iter_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let names: Vec<String> = p.iter().map(|(n, _)| n.to_string()).collect();
        let mut inputs: Vec<Tensor> = names.iter().map(|n| p.get(n).unwrap().clone()).collect();
        inputs.push(Tensor::new(vec![2, 4], random_vec(&mut rng, 8)).unwrap());
        inputs.push(Tensor::new(vec![2, 3], random_vec(&mut rng, 6)).unwrap());
        let err = grad_check_many(
            |tape, vars| {
                let bound = Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()));
                let k = names.len();
                let out = fuse(tape, &bound, vars[k], vars[k + 1], EPS).map_err(|e| NumericsError::Evaluation(e.to_string()))?;
                let y = predict(tape, &bound, out.f).map_err(|e| NumericsError::Evaluation(e.to_string()))?;
                tape.sum(y)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
