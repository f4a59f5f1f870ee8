use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::Result;
use crate::spatial::SPATIAL_DIM;
use crate::tensor::{ParamStore, Scalar, Tensor};

struct Shape {
    name: String,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
}

fn lin(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Shape {
    Shape {
        name: name.into(),
        fan_in,
        fan_out,
        bias: true,
    }
}

fn nobias(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Shape {
    Shape {
        bias: false,
        ..lin(name, fan_in, fan_out)
    }
}

fn layout(cfg: &ModelConfig) -> Vec<Shape> {
    let hq = cfg.question_dim();
    let h = cfg.lstm_hidden;
    let (dv, dm, w, dh) = (cfg.word_dim, cfg.memory_dim, cfg.width, cfg.head_dim());
    let mut out = Vec::new();
    for l in 0..cfg.lstm_layers {
        let input = if l == 0 { dv } else { hq };
        for dir in ["fw", "bw"] {
            out.push(lin(format!("lstm{l}_{dir}"), input, 4 * h));
            out.push(nobias(format!("lstm{l}_{dir}_rec"), h, 4 * h));
        }
    }
    out.push(nobias("w1", hq, 1));
    out.push(lin("w3", hq, hq));
    for t in 1..=cfg.steps {
        out.push(lin(format!("w2_t{t}"), hq, hq));
    }
    // c^1 comes from the encoder, so W4^t exists for t = 2..T
    for t in 2..=cfg.steps {
        out.push(lin(format!("w4_t{t}"), w, hq));
    }
    out.push(lin("w5", 2 * w, w));
    out.push(lin("w7", hq, dm));
    out.push(lin("w6", dm, dm));
    out.push(lin("w9", dv, dm));
    out.push(lin("w8", dm, dm));
    out.push(lin("w11_mem", dv, dm));
    out.push(lin("w10", dm, dm));
    out.push(lin("w12", hq + dm, w));
    for t in 1..=cfg.steps {
        out.push(lin(format!("w11_t{t}"), w, w));
    }
    out.push(lin("node_proj", dv, w));
    out.push(lin("edge_proj", SPATIAL_DIM, w));
    out.push(lin("w13", w, w));
    out.push(lin("w14", cfg.guide_dim(), w));
    out.push(nobias("omega_v", w, 1));
    out.push(lin("w15", w, w));
    out.push(lin("w16", cfg.guide_dim(), w));
    out.push(nobias("omega_e", w, 1));
    for k in 0..cfg.heads {
        out.push(lin(format!("w17_h{k}"), w, dh));
        out.push(lin(format!("w18_h{k}"), w, dh));
        out.push(lin(format!("w19_h{k}"), 3 * dh, dh));
    }
    out.push(lin("w20", w, dh));
    out.push(lin("w21", w, w));
    out.push(lin("head1", 2 * w, cfg.head_hidden));
    out.push(lin("head2", cfg.head_hidden, cfg.answers));
    out
}

/// Xavier-uniform weights, zero biases, unit layer-norm gain.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    for s in layout(cfg) {
        p.insert_xavier(format!("{}.w", s.name), s.fan_in, s.fan_out, &mut rng)?;
        if s.bias {
            p.insert(format!("{}.b", s.name), Tensor::zeros(&[1, s.fan_out]))?;
        }
    }
    p.insert("ln.g", Tensor::full(&[1, cfg.width], T::one()))?;
    p.insert("ln.b", Tensor::zeros(&[1, cfg.width]))?;
    Ok(p)
}

/// Every parameter name the configuration defines, in creation order.
pub fn param_names(cfg: &ModelConfig) -> Vec<String> {
    let mut out = Vec::new();
    for s in layout(cfg) {
        out.push(format!("{}.w", s.name));
        if s.bias {
            out.push(format!("{}.b", s.name));
        }
    }
    out.push("ln.g".into());
    out.push("ln.b".into());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_step_banks() {
        let mut cfg = ModelConfig::small(8, 5);
        cfg.steps = 3;
        let p: ParamStore<f64> = init_params(&cfg, 1).unwrap();
        for t in 1..=3 {
            assert!(p.contains(&format!("w2_t{t}.w")));
            assert!(p.contains(&format!("w11_t{t}.w")));
        }
        assert!(!p.contains("w4_t1.w"));
        assert!(p.contains("w4_t3.w"));
        assert!(!p.contains("w2_t4.w"));
        assert_eq!(param_names(&cfg).len(), p.len());
        assert!(!p.contains("w1.b") && !p.contains("omega_v.b"));
    }
}
