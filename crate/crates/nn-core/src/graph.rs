//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and whatever
//! it needs for the backward pass. [`Graph::backward`] walks the tape in
//! reverse, so a node's gradient is complete before it is propagated.

use crate::attention::{attention_backward, attention_forward, HeadLayout};
use crate::error::{shape_err, NnError, Result};
use crate::loss::{cross_entropy_backward, cross_entropy_forward};
use crate::ops::{
    gelu, gelu_grad, layer_norm_backward, layer_norm_forward, matmul, matmul_nt, matmul_tn,
    space_to_depth_map,
};
use crate::rope::{apply_rope, apply_rope_backward};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Rope {
        x: NodeId,
        positions: Vec<usize>,
        inv_freq: Vec<f64>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        probs: Vec<f64>,
        layout: HeadLayout,
        temperature: f64,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<NodeId>),
    SpaceToDepth {
        x: NodeId,
        map: Vec<usize>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        counted: usize,
    },
    WeightedSum {
        x: NodeId,
        weights: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that feeds it.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> NodeId {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "add")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Broadcast a bias vector over the rows of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let w = vx.row_width();
        if vb.len() != w {
            return shape_err(format!("bias of {} for rows of {w}", vb.len()));
        }
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + vb.data()[i % w])
            .collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale(x, factor), &[x])
    }

    /// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| gelu(v)).collect();
        let out = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let fwd = layer_norm_forward(self.value(x), self.value(gain), self.value(bias))?;
        Ok(self.push(
            fwd.output,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized: fwd.normalized,
                inv_std: fwd.inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn rope(&mut self, x: NodeId, positions: &[usize], inv_freq: &[f64]) -> Result<NodeId> {
        let out = apply_rope(self.value(x), positions, inv_freq)?;
        Ok(self.push(
            out,
            Op::Rope {
                x,
                positions: positions.to_vec(),
                inv_freq: inv_freq.to_vec(),
            },
            &[x],
        ))
    }

    /// Multi-head attention over `[seq, heads * head_dim]` inputs.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        causal: bool,
        temperature: f64,
    ) -> Result<NodeId> {
        let fwd = attention_forward(
            self.value(q),
            self.value(k),
            self.value(v),
            Some(heads),
            causal,
            temperature,
        )?;
        Ok(self.push(
            fwd.output,
            Op::Attention {
                q,
                k,
                v,
                probs: fwd.probs,
                layout: fwd.layout,
                temperature,
            },
            &[q, k, v],
        ))
    }

    /// Gather rows of `table` by id.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let (vocab, d) = (vt.rows(), vt.row_width());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(NnError::InvalidArgument(format!(
                    "token id {id} outside table of {vocab}"
                )));
            }
            data.extend_from_slice(vt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Stack matrices with equal row width on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return shape_err("concat of nothing");
        };
        let w = self.value(*first).row_width();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.row_width() != w || v.shape().len() != 2 {
                return shape_err(format!("concat row width {} vs {w}", v.row_width()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows, w], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn space_to_depth(&mut self, x: NodeId, grid: usize, factor: usize) -> Result<NodeId> {
        let out = crate::ops::space_to_depth(self.value(x), grid, factor)?;
        let map = space_to_depth_map(grid, factor)?;
        Ok(self.push(out, Op::SpaceToDepth { x, map }, &[x]))
    }

    /// Mean cross-entropy over positions with `Some(target)`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let fwd = cross_entropy_forward(self.value(logits), targets)?;
        Ok(self.push(
            Tensor::scalar(fwd.loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs: fwd.probs,
                counted: fwd.counted,
            },
            &[logits],
        ))
    }

    /// `sum(x * weights)`, a scalar probe used to test vector-Jacobian products.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Tensor) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.len() != weights.len() {
            return shape_err("weighted_sum weight count");
        }
        let s = vx.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    /// Gradients of the scalar node `loss` with respect to every upstream node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return shape_err("backward needs a scalar loss");
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let ga = matmul_nt(g, self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = matmul_tn(self.value(*a), g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                let w = g.row_width();
                let mut gb = vec![0.0; w];
                for (i, v) in g.data().iter().enumerate() {
                    gb[i % w] += v;
                }
                let shape = self.value(*bias).shape().to_vec();
                self.accumulate(grads, *bias, Tensor::new(shape, gb)?);
            }
            Op::Scale(x, factor) => {
                let data = g.data().iter().map(|v| v * factor).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Gelu(x) => {
                let vx = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), data)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (dx, dg, db) = layer_norm_backward(g, self.value(*gain), normalized, inv_std);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dg.reshape(self.value(*gain).shape())?);
                self.accumulate(grads, *bias, db.reshape(self.value(*bias).shape())?);
            }
            Op::Rope {
                x,
                positions,
                inv_freq,
            } => {
                let gx = apply_rope_backward(g, positions, inv_freq)?;
                self.accumulate(grads, *x, gx);
            }
            Op::Attention {
                q,
                k,
                v,
                probs,
                layout,
                temperature,
            } => {
                let ag = attention_backward(
                    g,
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    probs,
                    *layout,
                    *temperature,
                )?;
                self.accumulate(grads, *q, ag.dq);
                self.accumulate(grads, *k, ag.dk);
                self.accumulate(grads, *v, ag.dv);
            }
            Op::Embedding { table, ids } => {
                let vt = self.value(*table);
                let d = vt.row_width();
                let mut gt = Tensor::zeros(vt.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (a, b) in gt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let v = self.value(*p);
                    let n = v.len();
                    let part = Tensor::new(v.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                    offset += n;
                    self.accumulate(grads, *p, part);
                }
            }
            Op::SpaceToDepth { x, map } => {
                let vx = self.value(*x);
                let c = vx.row_width();
                let mut gx = Tensor::zeros(vx.shape());
                for (slot, &src) in map.iter().enumerate() {
                    gx.data_mut()[src * c..(src + 1) * c]
                        .copy_from_slice(&g.data()[slot * c..(slot + 1) * c]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                counted,
            } => {
                let vl = self.value(*logits);
                let vocab = vl.row_width();
                let data = cross_entropy_backward(g.data()[0], probs, targets, vocab, *counted);
                self.accumulate(grads, *logits, Tensor::new(vl.shape().to_vec(), data)?);
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                let data = weights.data().iter().map(|w| w * s).collect();
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::new(shape, data)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_by_hand() {
        // y = sum(x W), x = [1, 2], W = [[3], [4]] -> dW = x^T, dx = W^T
        let mut g = Graph::new();
        let x = g.param(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let w = g.param(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let y = g.matmul(x, w).unwrap();
        let l = g.weighted_sum(y, Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.value(l).data(), &[11.0]);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn inputs_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(2.0));
        let w = g.param(Tensor::scalar(3.0));
        let x2 = x;
        let s = g.add(x2, w).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[1.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(3.0));
        let s = g.add(w, w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let w = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(w).is_err());
    }
}
