// Copyright (c) 2026 The sfda Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sfda/tape.hpp"

#include <cmath>
#include <utility>

#include "sfda/errors.hpp"
#include "sfda/kernels.hpp"

namespace sfda {
namespace {

const kernels::Ops& kops() { return kernels::active(); }

}  // namespace

Tape::Node& Tape::node(Var v) {
  if (v.index >= nodes_.size()) throw ContractError("Tape: Var does not belong to this tape");
  return nodes_[v.index];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.index >= nodes_.size()) throw ContractError("Tape: Var does not belong to this tape");
  return nodes_[v.index];
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> bwd) {
  Node n;
  n.value = std::move(value);
  n.grad = Tensor::zeros_like(n.value);
  n.requires_grad = requires_grad;
  n.backward = std::move(bwd);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ContractError("matmul: shapes are not [m,k] x [k,n]");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  kops().matmul(av.data(), bv.data(), out.data(), m, k, n);
  const bool rg = requires_grad(a) || requires_grad(b);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [a, b, y, m, k, n](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;  // [m,n]
      if (t.nodes_[a.index].requires_grad) {
        // dA = g . B^T
        const Tensor bt = transpose(t.nodes_[b.index].value);  // [n,k]
        Tensor da({m, k});
        kops().matmul(g.data(), bt.data(), da.data(), m, n, k);
        kops().axpy(1.0, da.data(), t.nodes_[a.index].grad.data(), m * k);
      }
      if (t.nodes_[b.index].requires_grad) {
        // dB = A^T . g
        const Tensor at = transpose(t.nodes_[a.index].value);  // [k,m]
        Tensor db({k, n});
        kops().matmul(at.data(), g.data(), db.data(), k, m, n);
        kops().axpy(1.0, db.data(), t.nodes_[b.index].grad.data(), k * n);
      }
    };
  }
  return y;
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw ContractError("add: shape mismatch");
  Tensor out(av.shape());
  kops().add(av.data(), bv.data(), out.data(), av.numel());
  const bool rg = requires_grad(a) || requires_grad(b);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [a, b, y](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      if (t.nodes_[a.index].requires_grad) {
        kops().axpy(1.0, g.data(), t.nodes_[a.index].grad.data(), g.numel());
      }
      if (t.nodes_[b.index].requires_grad) {
        kops().axpy(1.0, g.data(), t.nodes_[b.index].grad.data(), g.numel());
      }
    };
  }
  return y;
}

Var Tape::add_row_bias(Var m, Var bias) {
  const Tensor& mv = value(m);
  const Tensor& bv = value(bias);
  if (mv.rank() != 2 || bv.rank() != 1 || bv.numel() != mv.cols()) {
    throw ContractError("add_row_bias: expected [b,n] plus [n]");
  }
  const std::size_t rows = mv.rows(), cols = mv.cols();
  Tensor out(mv.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    kops().add(mv.data() + i * cols, bv.data(), out.data() + i * cols, cols);
  }
  const bool rg = requires_grad(m) || requires_grad(bias);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [m, bias, y, rows, cols](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      if (t.nodes_[m.index].requires_grad) {
        kops().axpy(1.0, g.data(), t.nodes_[m.index].grad.data(), g.numel());
      }
      if (t.nodes_[bias.index].requires_grad) {
        double* bg = t.nodes_[bias.index].grad.data();
        for (std::size_t i = 0; i < rows; ++i) {
          kops().axpy(1.0, g.data() + i * cols, bg, cols);
        }
      }
    };
  }
  return y;
}

Var Tape::scalar_mul(Var x, double c) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  kops().scale(xv.data(), c, out.data(), xv.numel());
  const bool rg = requires_grad(x);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [x, y, c](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      kops().axpy(c, g.data(), t.nodes_[x.index].grad.data(), g.numel());
    };
  }
  return y;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw ContractError("mul: shape mismatch");
  Tensor out(av.shape());
  kops().mul(av.data(), bv.data(), out.data(), av.numel());
  const bool rg = requires_grad(a) || requires_grad(b);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [a, b, y](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      const std::size_t n = g.numel();
      if (t.nodes_[a.index].requires_grad) {
        Tensor tmp(g.shape());
        kops().mul(g.data(), t.nodes_[b.index].value.data(), tmp.data(), n);
        kops().axpy(1.0, tmp.data(), t.nodes_[a.index].grad.data(), n);
      }
      if (t.nodes_[b.index].requires_grad) {
        Tensor tmp(g.shape());
        kops().mul(g.data(), t.nodes_[a.index].value.data(), tmp.data(), n);
        kops().axpy(1.0, tmp.data(), t.nodes_[b.index].grad.data(), n);
      }
    };
  }
  return y;
}

Var Tape::relu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  kops().relu(xv.data(), out.data(), xv.numel());
  const bool rg = requires_grad(x);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [x, y](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      kops().relu_backward(t.nodes_[x.index].value.data(), g.data(),
                           t.nodes_[x.index].grad.data(), g.numel());
    };
  }
  return y;
}

Var Tape::exp(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = std::exp(xv[i]);
  const bool rg = requires_grad(x);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [x, y](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      const Tensor& yv = t.nodes_[y.index].value;
      Tensor tmp(g.shape());
      kops().mul(g.data(), yv.data(), tmp.data(), g.numel());
      kops().axpy(1.0, tmp.data(), t.nodes_[x.index].grad.data(), g.numel());
    };
  }
  return y;
}

Var Tape::log(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    out[i] = std::log(xv[i] > kLogClamp ? xv[i] : kLogClamp);
  }
  const bool rg = requires_grad(x);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [x, y](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      const Tensor& xv2 = t.nodes_[x.index].value;
      Tensor& xg = t.nodes_[x.index].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (xv2[i] > kLogClamp) xg[i] += g[i] / xv2[i];
      }
    };
  }
  return y;
}

Var Tape::softmax(Var logits) {
  const Tensor& lv = value(logits);
  if (lv.rank() != 2 || lv.cols() < 2) {
    throw ContractError("softmax: input must be [batch,K] with K >= 2");
  }
  if (!lv.all_finite()) throw NumericError("softmax: non-finite input");
  const std::size_t b = lv.rows(), k = lv.cols();
  Tensor out({b, k});
  for (std::size_t i = 0; i < b; ++i) {
    const auto in = lv.row(i);
    auto o = out.row(i);
    double mx = in[0];
    for (std::size_t j = 1; j < k; ++j) mx = in[j] > mx ? in[j] : mx;
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - mx);
      denom += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= denom;
  }
  const bool rg = requires_grad(logits);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [logits, y, b, k](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      const Tensor& p = t.nodes_[y.index].value;
      Tensor& xg = t.nodes_[logits.index].grad;
      for (std::size_t i = 0; i < b; ++i) {
        const double s = kops().dot(g.data() + i * k, p.data() + i * k, k);
        for (std::size_t j = 0; j < k; ++j) {
          xg[i * k + j] += p[i * k + j] * (g[i * k + j] - s);
        }
      }
    };
  }
  return y;
}

Var Tape::sum(Var x) {
  const Tensor& xv = value(x);
  Tensor out = Tensor::scalar(kops().sum(xv.data(), xv.numel()));
  const bool rg = requires_grad(x);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [x, y](Tape& t) {
      const double g = t.nodes_[y.index].grad[0];
      Tensor& xg = t.nodes_[x.index].grad;
      for (std::size_t i = 0; i < xg.numel(); ++i) xg[i] += g;
    };
  }
  return y;
}

Var Tape::mean(Var x) {
  const Tensor& xv = value(x);
  if (xv.numel() == 0) throw ContractError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(xv.numel());
  Tensor out = Tensor::scalar(kops().sum(xv.data(), xv.numel()) * inv);
  const bool rg = requires_grad(x);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [x, y, inv](Tape& t) {
      const double g = t.nodes_[y.index].grad[0] * inv;
      Tensor& xg = t.nodes_[x.index].grad;
      for (std::size_t i = 0; i < xg.numel(); ++i) xg[i] += g;
    };
  }
  return y;
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows()) {
    throw ContractError("concat_cols: expected [b,m] and [b,n]");
  }
  const std::size_t rows = av.rows(), m = av.cols(), n = bv.cols();
  Tensor out({rows, m + n});
  for (std::size_t i = 0; i < rows; ++i) {
    auto o = out.row(i);
    const auto ra = av.row(i);
    const auto rb = bv.row(i);
    for (std::size_t j = 0; j < m; ++j) o[j] = ra[j];
    for (std::size_t j = 0; j < n; ++j) o[m + j] = rb[j];
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [a, b, y, rows, m, n](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      if (t.nodes_[a.index].requires_grad) {
        Tensor& ag = t.nodes_[a.index].grad;
        for (std::size_t i = 0; i < rows; ++i) {
          kops().axpy(1.0, g.data() + i * (m + n), ag.data() + i * m, m);
        }
      }
      if (t.nodes_[b.index].requires_grad) {
        Tensor& bg = t.nodes_[b.index].grad;
        for (std::size_t i = 0; i < rows; ++i) {
          kops().axpy(1.0, g.data() + i * (m + n) + m, bg.data() + i * n, n);
        }
      }
    };
  }
  return y;
}

Var Tape::batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, bool training) {
  const Tensor& xv = value(x);
  if (xv.rank() != 2) throw ContractError("batch_norm: input must be [batch,d]");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (n == 0) throw ContractError("batch_norm: empty batch");
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  if (gv.numel() != d || bv.numel() != d || state.running_mean.numel() != d ||
      state.running_var.numel() != d) {
    throw ContractError("batch_norm: parameter width mismatch");
  }
  const double eps = state.eps;

  Tensor mean_used({d});
  Tensor invstd({d});
  if (training) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += xv[i * d + j];
      mean_used[j] = s / static_cast<double>(n);
    }
    Tensor var_b({d});
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double c = xv[i * d + j] - mean_used[j];
        s += c * c;
      }
      var_b[j] = s / static_cast<double>(n);
      invstd[j] = 1.0 / std::sqrt(var_b[j] + eps);
    }
    // Running estimates use the unbiased batch variance when possible.
    const double m = state.momentum;
    for (std::size_t j = 0; j < d; ++j) {
      const double unbiased =
          n > 1 ? var_b[j] * static_cast<double>(n) / static_cast<double>(n - 1) : var_b[j];
      state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mean_used[j];
      state.running_var[j] = (1.0 - m) * state.running_var[j] + m * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      mean_used[j] = state.running_mean[j];
      invstd[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
    }
  }

  Tensor xhat({n, d});
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[i * d + j] - mean_used[j]) * invstd[j];
      xhat[i * d + j] = h;
      out[i * d + j] = gv[j] * h + bv[j];
    }
  }

  const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [x, gamma, beta, y, n, d, training,
                                xhat = std::move(xhat),
                                invstd = std::move(invstd)](Tape& t) {
      const Tensor& g = t.nodes_[y.index].grad;
      const Tensor& gv2 = t.nodes_[gamma.index].value;
      if (t.nodes_[gamma.index].requires_grad) {
        Tensor& gg = t.nodes_[gamma.index].grad;
        for (std::size_t j = 0; j < d; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) s += g[i * d + j] * xhat[i * d + j];
          gg[j] += s;
        }
      }
      if (t.nodes_[beta.index].requires_grad) {
        Tensor& bg = t.nodes_[beta.index].grad;
        for (std::size_t j = 0; j < d; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) s += g[i * d + j];
          bg[j] += s;
        }
      }
      if (t.nodes_[x.index].requires_grad) {
        Tensor& xg = t.nodes_[x.index].grad;
        if (training) {
          // Differentiate through the batch statistics.
          for (std::size_t j = 0; j < d; ++j) {
            double sum_dh = 0.0;
            double sum_dh_h = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const double dh = g[i * d + j] * gv2[j];
              sum_dh += dh;
              sum_dh_h += dh * xhat[i * d + j];
            }
            const double invn = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
              const double dh = g[i * d + j] * gv2[j];
              xg[i * d + j] +=
                  invstd[j] * (dh - invn * sum_dh - invn * xhat[i * d + j] * sum_dh_h);
            }
          }
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
              xg[i * d + j] += g[i * d + j] * gv2[j] * invstd[j];
            }
          }
        }
      }
    };
  }
  return y;
}

Var Tape::weight_norm_linear(Var x, Var v, Var g, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& vv = value(v);
  const Tensor& gv = value(g);
  const Tensor& bv = value(bias);
  if (xv.rank() != 2 || vv.rank() != 2 || xv.cols() != vv.cols()) {
    throw ContractError("weight_norm_linear: expected x[b,d] and v[K,d]");
  }
  const std::size_t b = xv.rows(), d = xv.cols(), kk = vv.rows();
  if (gv.numel() != kk || bv.numel() != kk) {
    throw ContractError("weight_norm_linear: g/bias width mismatch");
  }

  // Effective weight W[k] = g_k * v_k / ||v_k||.
  Tensor unit({kk, d});
  Tensor norms({kk});
  Tensor w({kk, d});
  for (std::size_t k2 = 0; k2 < kk; ++k2) {
    double nsq = kops().dot(vv.data() + k2 * d, vv.data() + k2 * d, d);
    double norm = std::sqrt(nsq);
    if (norm < 1e-12) norm = 1e-12;
    norms[k2] = norm;
    kops().scale(vv.data() + k2 * d, 1.0 / norm, unit.data() + k2 * d, d);
    kops().scale(unit.data() + k2 * d, gv[k2], w.data() + k2 * d, d);
  }
  Tensor wt = transpose(w);  // [d,K]
  Tensor out({b, kk});
  kops().matmul(xv.data(), wt.data(), out.data(), b, d, kk);
  for (std::size_t i = 0; i < b; ++i) {
    kops().add(out.data() + i * kk, bv.data(), out.data() + i * kk, kk);
  }

  const bool rg =
      requires_grad(x) || requires_grad(v) || requires_grad(g) || requires_grad(bias);
  Var y = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[y.index].backward = [x, v, g, bias, y, b, d, kk, unit = std::move(unit),
                                norms = std::move(norms), w = std::move(w)](Tape& t) {
      const Tensor& gy = t.nodes_[y.index].grad;  // [b,K]
      const Tensor& xv2 = t.nodes_[x.index].value;
      const Tensor& gv2 = t.nodes_[g.index].value;
      if (t.nodes_[bias.index].requires_grad) {
        Tensor& bg = t.nodes_[bias.index].grad;
        for (std::size_t i = 0; i < b; ++i) {
          kops().axpy(1.0, gy.data() + i * kk, bg.data(), kk);
        }
      }
      if (t.nodes_[x.index].requires_grad) {
        // dX = gy . W
        Tensor dx({b, d});
        kops().matmul(gy.data(), w.data(), dx.data(), b, kk, d);
        kops().axpy(1.0, dx.data(), t.nodes_[x.index].grad.data(), b * d);
      }
      const bool need_v = t.nodes_[v.index].requires_grad;
      const bool need_g = t.nodes_[g.index].requires_grad;
      if (need_v || need_g) {
        // dW[k] = sum_i gy[i,k] * x[i]
        Tensor gyt = transpose(gy);  // [K,b]
        Tensor dw({kk, d});
        kops().matmul(gyt.data(), xv2.data(), dw.data(), kk, b, d);
        for (std::size_t k2 = 0; k2 < kk; ++k2) {
          const double* dwk = dw.data() + k2 * d;
          const double* uk = unit.data() + k2 * d;
          const double proj = kops().dot(dwk, uk, d);
          if (need_g) t.nodes_[g.index].grad[k2] += proj;
          if (need_v) {
            // dv_k = (g_k / ||v_k||) * (dW_k - (dW_k . u_k) u_k)
            double* vg = t.nodes_[v.index].grad.data() + k2 * d;
            const double scale = gv2[k2] / norms[k2];
            for (std::size_t j = 0; j < d; ++j) {
              vg[j] += scale * (dwk[j] - proj * uk[j]);
            }
          }
        }
      }
    };
  }
  return y;
}

void Tape::backward(Var loss) {
  Node& l = node(loss);
  if (!l.value.is_scalar()) throw ContractError("backward: loss must be a scalar tensor");
  for (Node& n : nodes_) n.grad.fill(0.0);
  l.grad[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this);
  }
}

}  // namespace sfda
