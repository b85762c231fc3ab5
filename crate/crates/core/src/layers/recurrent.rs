use rand::Rng;

use super::params::{glorot, ParamNodes, ParamStore};
use super::SeqMask;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Tensor};

/// Graph handles for one LSTM direction. Gate blocks along the `4H` axis
/// are ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// `[d_in × 4H]`
    pub w_ih: NodeId,
    /// `[H × 4H]`
    pub w_hh: NodeId,
    /// `[4H]`
    pub bias: NodeId,
}

impl LstmParams {
    /// Adds `{prefix}.w_ih`, `{prefix}.w_hh` and `{prefix}.bias` to the
    /// store. The forget-gate bias starts at 1, the rest at 0.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<()> {
        store.insert(format!("{prefix}.w_ih"), glorot(input, 4 * hidden, rng))?;
        store.insert(format!("{prefix}.w_hh"), glorot(hidden, 4 * hidden, rng))?;
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        store.insert(format!("{prefix}.bias"), bias)
    }

    pub fn bind(nodes: &ParamNodes, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_ih: nodes.get(&format!("{prefix}.w_ih"))?,
            w_hh: nodes.get(&format!("{prefix}.w_hh"))?,
            bias: nodes.get(&format!("{prefix}.bias"))?,
        })
    }
}

/// One LSTM direction over `[B×L×d]`, returning `[B×L×H]`.
///
/// Zero initial state. At padded positions the state is carried through
/// unchanged and the output is zero, so a document's outputs do not depend
/// on how much padding follows it. With `reverse`, time runs from the last
/// position to the first and outputs stay aligned with input positions.
pub fn lstm(
    g: &mut Graph,
    x: NodeId,
    p: &LstmParams,
    mask: &SeqMask,
    reverse: bool,
) -> Result<NodeId> {
    let &[b, l, d] = g.shape(x) else {
        return Err(Error::Dimension(format!(
            "lstm input must be [B×L×d], got {:?}",
            g.shape(x)
        )));
    };
    if (b, l) != (mask.batch(), mask.len()) {
        return Err(Error::Dimension(format!(
            "lstm input [{b}×{l}] does not match mask [{}×{}]",
            mask.batch(),
            mask.len()
        )));
    }
    let h_dim = g.shape(p.w_hh)[0];
    if g.shape(p.w_ih) != [d, 4 * h_dim] || g.shape(p.w_hh) != [h_dim, 4 * h_dim] {
        return Err(Error::Dimension(format!(
            "lstm weights {:?}/{:?} inconsistent with input dim {d}",
            g.shape(p.w_ih),
            g.shape(p.w_hh)
        )));
    }

    let flat = g.reshape(x, &[b * l, d])?;
    let proj = g.matmul(flat, p.w_ih)?;
    let proj = g.add(proj, p.bias)?;
    let proj = g.reshape(proj, &[b, l, 4 * h_dim])?;

    let zeros = g.constant(Tensor::zeros(&[b, h_dim]));
    let (mut h, mut c) = (zeros, zeros);
    let mut outputs = vec![zeros; l];
    let steps: Vec<usize> = if reverse {
        (0..l).rev().collect()
    } else {
        (0..l).collect()
    };
    for t in steps {
        let column = mask.column(t);
        let live = column.iter().filter(|&&m| m == 1).count();
        if live == 0 {
            continue;
        }
        let xt = g.select(proj, 1, t)?;
        let rec = g.matmul(h, p.w_hh)?;
        let z = g.add(xt, rec)?;
        let zi = g.narrow(z, 1, 0, h_dim)?;
        let zf = g.narrow(z, 1, h_dim, h_dim)?;
        let zg = g.narrow(z, 1, 2 * h_dim, h_dim)?;
        let zo = g.narrow(z, 1, 3 * h_dim, h_dim)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, cand)?;
        let c_new = g.add(fc, ig)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;

        if live == b {
            h = h_new;
            c = c_new;
            outputs[t] = h_new;
        } else {
            let keep = g.constant(row_mask(&column, h_dim, false));
            let hold = g.constant(row_mask(&column, h_dim, true));
            h = blend(g, h_new, h, keep, hold)?;
            c = blend(g, c_new, c, keep, hold)?;
            outputs[t] = g.mul(h, keep)?;
        }
    }
    g.stack(&outputs, 1)
}

/// Forward and backward directions concatenated per timestep:
/// `[B×L×d]` → `[B×L×2H]`.
pub fn bilstm(
    g: &mut Graph,
    x: NodeId,
    fwd: &LstmParams,
    bwd: &LstmParams,
    mask: &SeqMask,
) -> Result<NodeId> {
    let hf = lstm(g, x, fwd, mask, false)?;
    let hb = lstm(g, x, bwd, mask, true)?;
    g.concat(&[hf, hb], 2)
}

fn row_mask(column: &[u8], width: usize, invert: bool) -> Tensor {
    let mut t = Tensor::zeros(&[column.len(), width]);
    for (r, &m) in column.iter().enumerate() {
        let on = (m == 1) != invert;
        t.row_mut(r).fill(if on { 1.0 } else { 0.0 });
    }
    t
}

fn blend(g: &mut Graph, new: NodeId, old: NodeId, keep: NodeId, hold: NodeId) -> Result<NodeId> {
    let a = g.mul(new, keep)?;
    let b = g.mul(old, hold)?;
    g.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, DEFAULT_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, 0.8, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn lstm_tensors(d: usize, h: usize, seed: u64) -> [Tensor; 3] {
        [
            rand_t(&[d, 4 * h], seed),
            rand_t(&[h, 4 * h], seed + 1),
            rand_t(&[4 * h], seed + 2),
        ]
    }

    fn run_lstm(x: &Tensor, p: &[Tensor; 3], mask: &SeqMask, reverse: bool) -> Tensor {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let params = LstmParams {
            w_ih: g.constant(p[0].clone()),
            w_hh: g.constant(p[1].clone()),
            bias: g.constant(p[2].clone()),
        };
        let out = lstm(&mut g, xi, &params, mask, reverse).unwrap();
        g.value(out).clone()
    }

    fn reverse_time(x: &Tensor) -> Tensor {
        let &[b, l, d] = x.shape() else { panic!() };
        let mut out = x.clone();
        for bi in 0..b {
            for t in 0..l {
                let src = (bi * l + (l - 1 - t)) * d;
                let dst = (bi * l + t) * d;
                out.data_mut()[dst..dst + d].copy_from_slice(&x.data()[src..src + d]);
            }
        }
        out
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let p = [
            Tensor::zeros(&[3, 8]),
            Tensor::zeros(&[2, 8]),
            Tensor::zeros(&[8]),
        ];
        let x = rand_t(&[2, 4, 3], 1);
        let out = run_lstm(&x, &p, &SeqMask::full(2, 4), false);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_recurrence_single_unit() {
        // d = 1, H = 1; gates [i, f, g, o]
        let w_ih = Tensor::new(vec![1, 4], vec![0.5, -0.3, 0.8, 0.2]).unwrap();
        let w_hh = Tensor::new(vec![1, 4], vec![0.1, 0.4, -0.6, 0.7]).unwrap();
        let bias = Tensor::new(vec![4], vec![0.05, 1.0, -0.1, 0.0]).unwrap();
        let xs = [1.5, -0.7];
        let x = Tensor::new(vec![1, 2, 1], xs.to_vec()).unwrap();
        let out = run_lstm(
            &x,
            &[w_ih.clone(), w_hh.clone(), bias.clone()],
            &SeqMask::full(1, 2),
            false,
        );

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut expect = Vec::new();
        for &xt in &xs {
            let z = |k: usize| w_ih.data()[k] * xt + w_hh.data()[k] * h + bias.data()[k];
            let (i, f, gg, o) = (sig(z(0)), sig(z(1)), z(2).tanh(), sig(z(3)));
            c = f * c + i * gg;
            h = o * c.tanh();
            expect.push(h);
        }
        for (a, b) in out.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn bilstm_decomposes_into_two_directions() {
        let (b, l, d, h) = (2, 5, 3, 2);
        let fwd = lstm_tensors(d, h, 10);
        let bwd = lstm_tensors(d, h, 20);
        let x = rand_t(&[b, l, d], 30);
        let mask = SeqMask::full(b, l);

        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let bind = |g: &mut Graph, p: &[Tensor; 3]| LstmParams {
            w_ih: g.constant(p[0].clone()),
            w_hh: g.constant(p[1].clone()),
            bias: g.constant(p[2].clone()),
        };
        let pf = bind(&mut g, &fwd);
        let pb = bind(&mut g, &bwd);
        let out = bilstm(&mut g, xi, &pf, &pb, &mask).unwrap();
        let out = g.value(out).clone();
        assert_eq!(out.shape(), &[b, l, 2 * h]);

        let uni = run_lstm(&x, &fwd, &mask, false);
        let rev = reverse_time(&run_lstm(&reverse_time(&x), &bwd, &mask, false));
        for bi in 0..b {
            for t in 0..l {
                for k in 0..h {
                    assert!((out.get(&[bi, t, k]) - uni.get(&[bi, t, k])).abs() < 1e-14);
                    assert!((out.get(&[bi, t, h + k]) - rev.get(&[bi, t, k])).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn padding_does_not_leak_into_real_positions() {
        let (d, h) = (3, 2);
        let p = lstm_tensors(d, h, 40);
        let x_short = rand_t(&[1, 3, d], 41);
        let mut long = Tensor::zeros(&[1, 7, d]);
        long.data_mut()[..3 * d].copy_from_slice(x_short.data());
        for reverse in [false, true] {
            let a = run_lstm(&x_short, &p, &SeqMask::full(1, 3), reverse);
            let b = run_lstm(
                &long,
                &p,
                &SeqMask::new(1, 7, vec![1, 1, 1, 0, 0, 0, 0]).unwrap(),
                reverse,
            );
            assert!(
                a.max_abs_diff(&Tensor::new(vec![1, 3, h], b.data()[..3 * h].to_vec()).unwrap())
                    < 1e-15
            );
            assert!(b.data()[3 * h..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        let (b, l, d, h) = (2, 4, 3, 2);
        let mask = SeqMask::new(b, l, vec![1, 1, 1, 1, 1, 1, 0, 0]).unwrap();
        let mut params: Vec<Tensor> = lstm_tensors(d, h, 50).into();
        params.extend(lstm_tensors(d, h, 60));
        params.push(rand_t(&[b, l, d], 70));
        let probe = rand_t(&[b, l, 2 * h], 80);
        let err = grad_check(&params, DEFAULT_EPS, |g, p| {
            let f = LstmParams {
                w_ih: p[0],
                w_hh: p[1],
                bias: p[2],
            };
            let r = LstmParams {
                w_ih: p[3],
                w_hh: p[4],
                bias: p[5],
            };
            let out = bilstm(g, p[6], &f, &r, &mask)?;
            let w = g.constant(probe.clone());
            let y = g.mul(out, w)?;
            Ok(g.sum_all(y))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
