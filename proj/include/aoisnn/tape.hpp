#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "aoisnn/common.hpp"
#include "aoisnn/tensor.hpp"

namespace aoisnn {

// A trainable tensor living outside any tape. Gradients accumulate across
// backward passes until zero_grad() is called.
struct Parameter {
  Tensor value;
  Tensor grad;

  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { std::fill(grad.raw().begin(), grad.raw().end(), 0.0); }
};

// Handle to a tape node.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

enum class SpikeMode {
  hard,     // forward = heaviside, backward = boxcar surrogate
  smoothed  // forward = clamped linear whose exact derivative is the boxcar
};

// Reverse-mode autodiff over a recorded computation tape. Single-threaded
// by construction; distinct tapes share nothing mutable.
class Tape {
 public:
  Var constant(Tensor v) { return push(std::move(v), {}, nullptr, nullptr); }

  Var param(Parameter& p) {
    Var v = push(p.value, {}, nullptr, &p);
    param_leaves_.push_back(v.idx);
    return v;
  }

  const Tensor& value(Var v) const { return nodes_[v.idx].value; }
  const Tensor& grad(Var v) const { return nodes_[v.idx].grad; }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return push(std::move(out), {a, b}, [](Tape& t, int self) {
      Node& n = t.nodes_[self];
      t.accumulate(n.parents[0], n.grad);
      t.accumulate(n.parents[1], n.grad);
    });
  }

  Var sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return push(std::move(out), {a, b}, [](Tape& t, int self) {
      Node& n = t.nodes_[self];
      t.accumulate(n.parents[0], n.grad);
      Tensor& pg = t.nodes_[n.parents[1].idx].grad;
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] -= n.grad[i];
    });
  }

  Var mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return push(std::move(out), {a, b}, [](Tape& t, int self) {
      Node& n = t.nodes_[self];
      const Tensor& av = t.value(n.parents[0]);
      const Tensor& bv = t.value(n.parents[1]);
      Tensor& ga = t.nodes_[n.parents[0].idx].grad;
      Tensor& gb = t.nodes_[n.parents[1].idx].grad;
      for (std::size_t i = 0; i < n.grad.numel(); ++i) {
        ga[i] += n.grad[i] * bv[i];
        gb[i] += n.grad[i] * av[i];
      }
    });
  }

  // a*x + b, elementwise with scalar coefficients.
  Var affine_scalar(Var x, double a, double b) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * out[i] + b;
    return push(std::move(out), {x}, [a](Tape& t, int self) {
      Node& n = t.nodes_[self];
      Tensor& g = t.nodes_[n.parents[0].idx].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += a * n.grad[i];
    });
  }

  Var scale(Var x, double a) { return affine_scalar(x, a, 0.0); }

  // Elementwise product with a fixed (non-differentiated) mask.
  Var mask_mul(Var x, Tensor mask) {
    require_same_shape(value(x), mask, "mask_mul");
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    auto m = std::make_shared<Tensor>(std::move(mask));
    return push(std::move(out), {x}, [m](Tape& t, int self) {
      Node& n = t.nodes_[self];
      Tensor& g = t.nodes_[n.parents[0].idx].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (*m)[i];
    });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.shape().size() != 2 || bv.shape().size() != 2 || av.shape()[1] != bv.shape()[0])
      throw shape_error("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                        shape_str(bv.shape()));
    int m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double aval = av[i * k + p];
        if (aval == 0.0) continue;
        for (int j = 0; j < n; ++j) out[i * n + j] += aval * bv[p * n + j];
      }
    return push(std::move(out), {a, b}, [m, k, n](Tape& t, int self) {
      Node& node = t.nodes_[self];
      const Tensor& av = t.value(node.parents[0]);
      const Tensor& bv = t.value(node.parents[1]);
      Tensor& ga = t.nodes_[node.parents[0].idx].grad;
      Tensor& gb = t.nodes_[node.parents[1].idx].grad;
      const Tensor& g = node.grad;
      // dA = g * B^T ; dB = A^T * g
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double gv = g[i * n + j];
          if (gv == 0.0) continue;
          for (int p = 0; p < k; ++p) {
            ga[i * k + p] += gv * bv[p * n + j];
            gb[p * n + j] += gv * av[i * k + p];
          }
        }
    });
  }

  // W[m x n] * x[n] + b[m]
  Var linear(Var w, Var x, Var b) {
    const Tensor& wv = value(w);
    const Tensor& xv = value(x);
    const Tensor& bv = value(b);
    if (wv.shape().size() != 2)
      throw shape_error("linear: weight must be 2-d, got " + shape_str(wv.shape()));
    int m = wv.shape()[0], n = wv.shape()[1];
    if (static_cast<std::size_t>(n) != xv.numel())
      throw shape_error("linear: weight " + shape_str(wv.shape()) + " vs input " +
                        shape_str(xv.shape()));
    if (static_cast<std::size_t>(m) != bv.numel())
      throw shape_error("linear: bias " + shape_str(bv.shape()) + " vs rows " + std::to_string(m));
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
      double acc = bv[i];
      const double* wrow = wv.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) acc += wrow[j] * xv[j];
      out[i] = acc;
    }
    return push(std::move(out), {w, x, b}, [m, n](Tape& t, int self) {
      Node& node = t.nodes_[self];
      const Tensor& wv = t.value(node.parents[0]);
      const Tensor& xv = t.value(node.parents[1]);
      Tensor& gw = t.nodes_[node.parents[0].idx].grad;
      Tensor& gx = t.nodes_[node.parents[1].idx].grad;
      Tensor& gb = t.nodes_[node.parents[2].idx].grad;
      const Tensor& g = node.grad;
      for (int i = 0; i < m; ++i) {
        double gv = g[i];
        gb[i] += gv;
        if (gv == 0.0) continue;
        const double* wrow = wv.data() + static_cast<std::size_t>(i) * n;
        double* gwrow = gw.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          gwrow[j] += gv * xv[j];
          gx[j] += gv * wrow[j];
        }
      }
    });
  }

  // Cross-correlation: x[ci,h,w], kernels[co,ci,k,k] -> [co,h',w'].
  Var conv2d(Var x, Var kernels, int stride, int padding) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(kernels);
    if (xv.shape().size() != 3 || kv.shape().size() != 4)
      throw shape_error("conv2d: expected 3-d input and 4-d kernels, got " +
                        shape_str(xv.shape()) + " and " + shape_str(kv.shape()));
    int ci = xv.shape()[0], h = xv.shape()[1], w = xv.shape()[2];
    int co = kv.shape()[0], k = kv.shape()[2];
    if (kv.shape()[1] != ci)
      throw shape_error("conv2d: kernel channels " + shape_str(kv.shape()) +
                        " do not match input " + shape_str(xv.shape()));
    if (kv.shape()[3] != k) throw shape_error("conv2d: non-square kernel " + shape_str(kv.shape()));
    if (stride < 1) throw config_error("conv2d: stride must be positive");
    if (padding < 0) throw config_error("conv2d: padding must be non-negative");
    if (h + 2 * padding < k || w + 2 * padding < k)
      throw shape_error("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                        shape_str(xv.shape()) + " pad " + std::to_string(padding));
    int ho = (h + 2 * padding - k) / stride + 1;
    int wo = (w + 2 * padding - k) / stride + 1;
    Tensor out({co, ho, wo});
    conv_forward(xv, kv, out, stride, padding);
    return push(std::move(out), {x, kernels}, [stride, padding](Tape& t, int self) {
      Node& node = t.nodes_[self];
      const Tensor& xv = t.value(node.parents[0]);
      const Tensor& kv = t.value(node.parents[1]);
      Tensor& gx = t.nodes_[node.parents[0].idx].grad;
      Tensor& gk = t.nodes_[node.parents[1].idx].grad;
      conv_backward(xv, kv, node.grad, gx, gk, stride, padding);
    });
  }

  // Adds bias[c] to every spatial position of channel c.
  Var add_channel_bias(Var x, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    if (xv.shape().size() != 3 || bv.numel() != static_cast<std::size_t>(xv.shape()[0]))
      throw shape_error("add_channel_bias: input " + shape_str(xv.shape()) + " bias " +
                        shape_str(bv.shape()));
    int c = xv.shape()[0];
    std::size_t plane = xv.numel() / c;
    Tensor out = xv;
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += bv[ch];
    return push(std::move(out), {x, bias}, [c, plane](Tape& t, int self) {
      Node& n = t.nodes_[self];
      Tensor& gx = t.nodes_[n.parents[0].idx].grad;
      Tensor& gb = t.nodes_[n.parents[1].idx].grad;
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          gx[ch * plane + i] += n.grad[ch * plane + i];
          acc += n.grad[ch * plane + i];
        }
        gb[ch] += acc;
      }
    });
  }

  // Non-overlapping k x k average pooling; trailing rows/cols that do not
  // fill a window are dropped.
  Var avg_pool2d(Var x, int k) {
    const Tensor& xv = value(x);
    if (xv.shape().size() != 3)
      throw shape_error("avg_pool2d: expected 3-d input, got " + shape_str(xv.shape()));
    if (k < 1) throw config_error("avg_pool2d: kernel must be positive");
    int c = xv.shape()[0], h = xv.shape()[1], w = xv.shape()[2];
    int ho = h / k, wo = w / k;
    if (ho < 1 || wo < 1)
      throw shape_error("avg_pool2d: kernel " + std::to_string(k) + " larger than input " +
                        shape_str(xv.shape()));
    Tensor out({c, ho, wo});
    double inv = 1.0 / (k * k);
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) acc += xv.at3(ch, oy * k + dy, ox * k + dx);
          out.at3(ch, oy, ox) = acc * inv;
        }
    return push(std::move(out), {x}, [c, ho, wo, k, inv](Tape& t, int self) {
      Node& n = t.nodes_[self];
      Tensor& gx = t.nodes_[n.parents[0].idx].grad;
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            double gv = n.grad.at3(ch, oy, ox) * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) gx.at3(ch, oy * k + dy, ox * k + dx) += gv;
          }
    });
  }

  Var reshape(Var x, Shape shape) {
    const Tensor& xv = value(x);
    if (shape_numel(shape) != xv.numel())
      throw shape_error("reshape: " + shape_str(xv.shape()) + " to " + shape_str(shape));
    Tensor out(std::move(shape), xv.raw());
    return push(std::move(out), {x}, [](Tape& t, int self) {
      Node& n = t.nodes_[self];
      Tensor& gx = t.nodes_[n.parents[0].idx].grad;
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += n.grad[i];
    });
  }

  // ---- spiking ----

  // Forward: hard threshold (spike when v >= v_thr) or its smoothed stand-in
  // clamp((v - v_thr)/width + 0.5, 0, 1). Backward in both modes: boxcar of
  // height 1/width on |v - v_thr| <= width/2.
  Var spike(Var v, double v_thr, double width, SpikeMode mode) {
    if (width <= 0.0) throw config_error("spike: surrogate width must be positive");
    const Tensor& vv = value(v);
    Tensor out(vv.shape());
    if (mode == SpikeMode::hard) {
      for (std::size_t i = 0; i < vv.numel(); ++i) out[i] = vv[i] >= v_thr ? 1.0 : 0.0;
    } else {
      for (std::size_t i = 0; i < vv.numel(); ++i) {
        double s = (vv[i] - v_thr) / width + 0.5;
        out[i] = s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s);
      }
    }
    return push(std::move(out), {v}, [v_thr, width](Tape& t, int self) {
      Node& n = t.nodes_[self];
      const Tensor& vv = t.value(n.parents[0]);
      Tensor& gv = t.nodes_[n.parents[0].idx].grad;
      double half = width / 2.0;
      for (std::size_t i = 0; i < vv.numel(); ++i)
        if (std::fabs(vv[i] - v_thr) <= half) gv[i] += n.grad[i] / width;
    });
  }

  // ---- reductions and probabilistic heads ----

  Var sum(Var x) {
    double s = value(x).sum();
    return push(Tensor::scalar(s), {x}, [](Tape& t, int self) {
      Node& n = t.nodes_[self];
      Tensor& gx = t.nodes_[n.parents[0].idx].grad;
      double g = n.grad[0];
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  }

  Var softmax(Var logits) {
    const Tensor& z = value(logits);
    if (z.numel() < 1) throw contract_error("softmax: empty input");
    z.require_finite("softmax input");
    Tensor out(z.shape());
    double m = z[0];
    for (std::size_t i = 1; i < z.numel(); ++i) m = std::max(m, z[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < z.numel(); ++i) denom += std::exp(z[i] - m);
    for (std::size_t i = 0; i < z.numel(); ++i) out[i] = std::exp(z[i] - m) / denom;
    return push(std::move(out), {logits}, [](Tape& t, int self) {
      Node& n = t.nodes_[self];
      Tensor& gz = t.nodes_[n.parents[0].idx].grad;
      const Tensor& s = n.value;
      double dot = 0.0;
      for (std::size_t i = 0; i < s.numel(); ++i) dot += n.grad[i] * s[i];
      for (std::size_t i = 0; i < s.numel(); ++i) gz[i] += s[i] * (n.grad[i] - dot);
    });
  }

  // -log softmax(logits)[label], fused for numerical stability.
  Var cross_entropy(Var logits, int label) {
    const Tensor& z = value(logits);
    if (label < 0 || static_cast<std::size_t>(label) >= z.numel())
      throw contract_error("cross_entropy: label " + std::to_string(label) + " out of range for " +
                           std::to_string(z.numel()) + " classes");
    z.require_finite("cross_entropy logits");
    double m = z[0];
    for (std::size_t i = 1; i < z.numel(); ++i) m = std::max(m, z[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < z.numel(); ++i) denom += std::exp(z[i] - m);
    double loss = std::log(denom) - (z[label] - m);
    return push(Tensor::scalar(loss), {logits}, [label, m, denom](Tape& t, int self) {
      Node& n = t.nodes_[self];
      const Tensor& z = t.value(n.parents[0]);
      Tensor& gz = t.nodes_[n.parents[0].idx].grad;
      double g = n.grad[0];
      for (std::size_t i = 0; i < z.numel(); ++i) {
        double p = std::exp(z[i] - m) / denom;
        gz[i] += g * (p - (static_cast<int>(i) == label ? 1.0 : 0.0));
      }
    });
  }

  // sqrt(sum x_i^2 + eps^2); gradient bounded at the origin when eps > 0.
  Var l2_norm(Var x, double epsilon) {
    if (epsilon < 0.0) throw config_error("l2_norm: epsilon must be non-negative");
    const Tensor& xv = value(x);
    double acc = epsilon * epsilon;
    for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i] * xv[i];
    double r = std::sqrt(acc);
    return push(Tensor::scalar(r), {x}, [r](Tape& t, int self) {
      Node& n = t.nodes_[self];
      if (r == 0.0) return;
      const Tensor& xv = t.value(n.parents[0]);
      Tensor& gx = t.nodes_[n.parents[0].idx].grad;
      double g = n.grad[0] / r;
      for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += g * xv[i];
    });
  }

  // a / b for scalar nodes.
  Var div_scalar(Var a, Var b) {
    double av = value(a).item();
    double bv = value(b).item();
    if (bv == 0.0) throw numeric_error("div_scalar: division by zero");
    return push(Tensor::scalar(av / bv), {a, b}, [](Tape& t, int self) {
      Node& n = t.nodes_[self];
      double av = t.value(n.parents[0]).item();
      double bv = t.value(n.parents[1]).item();
      double g = n.grad[0];
      t.nodes_[n.parents[0].idx].grad[0] += g / bv;
      t.nodes_[n.parents[1].idx].grad[0] -= g * av / (bv * bv);
    });
  }

  // sum_i coeff_i * term_i over same-shape nodes.
  Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    if (terms.empty()) throw contract_error("weighted_sum: no terms");
    Tensor out(value(terms[0].second).shape());
    for (const auto& [c, v] : terms) {
      const Tensor& tv = value(v);
      require_same_shape(out, tv, "weighted_sum");
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c * tv[i];
    }
    std::vector<Var> parents;
    std::vector<double> coeffs;
    parents.reserve(terms.size());
    for (const auto& [c, v] : terms) {
      parents.push_back(v);
      coeffs.push_back(c);
    }
    return push(std::move(out), std::move(parents), [coeffs](Tape& t, int self) {
      Node& n = t.nodes_[self];
      for (std::size_t p = 0; p < n.parents.size(); ++p) {
        Tensor& g = t.nodes_[n.parents[p].idx].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += coeffs[p] * n.grad[i];
      }
    });
  }

  // ---- backward ----

  // Reverse sweep from a scalar root. Node gradients are reset first, so a
  // second backward on the same tape recomputes rather than doubles them.
  // Gradients are NOT pushed into Parameters here; call
  // accumulate_param_grads() afterwards (kept separate so batch workers can
  // run backward in parallel and accumulate serially in a fixed order).
  void backward(Var root) {
    if (!value(root).is_scalar())
      throw contract_error("backward: root must be scalar, got " + shape_str(value(root).shape()));
    for (Node& n : nodes_) std::fill(n.grad.raw().begin(), n.grad.raw().end(), 0.0);
    nodes_[root.idx].grad[0] = 1.0;
    for (int i = root.idx; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this, i);
  }

  void accumulate_param_grads() {
    for (int idx : param_leaves_) {
      Node& n = nodes_[idx];
      Tensor& g = n.param->grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> parents;
    std::function<void(Tape&, int)> back;
    Parameter* param = nullptr;
  };

  Var push(Tensor value, std::vector<Var> parents, std::function<void(Tape&, int)> back,
           Parameter* param = nullptr) {
    Node n;
    n.grad = Tensor::zeros(value.shape());
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accumulate(Var v, const Tensor& g) {
    Tensor& dst = nodes_[v.idx].grad;
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
  }

  static void conv_forward(const Tensor& x, const Tensor& k, Tensor& out, int stride, int pad) {
    int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    int co = out.shape()[0], ho = out.shape()[1], wo = out.shape()[2];
    int ks = k.shape()[2];
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
          for (int icn = 0; icn < ci; ++icn)
            for (int dy = 0; dy < ks; ++dy) {
              int iy = iy0 + dy;
              if (iy < 0 || iy >= h) continue;
              for (int dx = 0; dx < ks; ++dx) {
                int ix = ix0 + dx;
                if (ix < 0 || ix >= w) continue;
                acc += x.at3(icn, iy, ix) *
                       k[((static_cast<std::size_t>(oc) * ci + icn) * ks + dy) * ks + dx];
              }
            }
          out.at3(oc, oy, ox) = acc;
        }
  }

  static void conv_backward(const Tensor& x, const Tensor& k, const Tensor& gout, Tensor& gx,
                            Tensor& gk, int stride, int pad) {
    int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    int co = gout.shape()[0], ho = gout.shape()[1], wo = gout.shape()[2];
    int ks = k.shape()[2];
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double g = gout.at3(oc, oy, ox);
          if (g == 0.0) continue;
          int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
          for (int icn = 0; icn < ci; ++icn)
            for (int dy = 0; dy < ks; ++dy) {
              int iy = iy0 + dy;
              if (iy < 0 || iy >= h) continue;
              for (int dx = 0; dx < ks; ++dx) {
                int ix = ix0 + dx;
                if (ix < 0 || ix >= w) continue;
                std::size_t ki = ((static_cast<std::size_t>(oc) * ci + icn) * ks + dy) * ks + dx;
                gx.at3(icn, iy, ix) += g * k[ki];
                gk[ki] += g * x.at3(icn, iy, ix);
              }
            }
        }
  }

  std::vector<Node> nodes_;
  std::vector<int> param_leaves_;
};

}  // namespace aoisnn
