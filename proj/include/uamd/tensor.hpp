#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace uamd {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense N-d tensor with a recorded op graph for reverse-mode gradients.
/// Values are immutable after an op produces them; grad accumulates.
template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->values.assign(numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != numel(shape))
      throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  size_t size() const { return n_->values.size(); }
  const std::vector<T>& values() const { return n_->values; }
  std::vector<T>& mutable_values() { return n_->values; }
  bool requires_grad() const { return n_->requires_grad; }
  bool is_leaf() const { return !n_->backward_fn; }

  const std::vector<T>& grad() const {
    if (n_->grad.empty()) n_->grad.assign(n_->values.size(), T(0));
    return n_->grad;
  }
  std::vector<T>& mutable_grad() {
    if (n_->grad.empty()) n_->grad.assign(n_->values.size(), T(0));
    return n_->grad;
  }
  void clear_grad() { n_->grad.clear(); }

  T item() const {
    if (n_->values.size() != 1)
      throw std::invalid_argument("item: tensor has " + std::to_string(n_->values.size()) +
                                  " elements, expected 1");
    return n_->values[0];
  }

  std::shared_ptr<Node> node() const { return n_; }

  /// Reverse-mode pass from a scalar. Interior grads are reset per call;
  /// leaf grads accumulate across calls.
  void backward() const {
    if (n_->values.size() != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                  shape_str(n_->shape));
    // iterative post-order DFS -> topological order
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    visited.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* p = node->parents[idx++].get();
        if (!visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        topo.push_back(node);
        stack.pop_back();
      }
    }
    for (Node* node : topo) {
      if (node->backward_fn)  // interior: fresh accumulator per pass
        node->grad.assign(node->values.size(), T(0));
    }
    n_->grad.assign(1, T(1));
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

 private:
  std::shared_ptr<Node> n_;
};

template <typename T>
std::vector<T>& ensure_grad(typename Tensor<T>::Node& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), T(0));
  return n.grad;
}

/// Builds an op result node. `backward_fn` receives the result node with its
/// grad populated and must accumulate into parent grads via ensure_grad.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> values, std::vector<Tensor<T>> parents,
                  std::function<void(typename Tensor<T>::Node&)> backward_fn) {
  auto n = std::make_shared<typename Tensor<T>::Node>();
  if (values.size() != numel(shape))
    throw std::invalid_argument("make_op: value/shape mismatch");
  n->shape = std::move(shape);
  n->values = std::move(values);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      auto& ga = ensure_grad<T>(*an);
      for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad<T>(*bn);
      for (size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      auto& ga = ensure_grad<T>(*an);
      for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad<T>(*bn);
      for (size_t i = 0; i < n.grad.size(); ++i) gb[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      auto& ga = ensure_grad<T>(*an);
      for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad<T>(*bn);
      for (size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * an->values[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "div");
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      auto& ga = ensure_grad<T>(*an);
      for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] / bn->values[i];
    }
    if (bn->requires_grad) {
      auto& gb = ensure_grad<T>(*bn);
      for (size_t i = 0; i < n.grad.size(); ++i)
        gb[i] -= n.grad[i] * an->values[i] / (bn->values[i] * bn->values[i]);
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {a}, [an, s](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * s;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + s;
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {a}, [an](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(T(0), a.values()[i]);
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {a}, [an](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (an->values[i] > T(0)) ga[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> abs_t(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.values()[i]);
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {a}, [an](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T x = an->values[i];
      if (x > T(0))
        ga[i] += n.grad[i];
      else if (x < T(0))
        ga[i] -= n.grad[i];
      // subgradient at 0 is 0
    }
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * a.values()[i];
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {a}, [an](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += T(2) * an->values[i] * n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.values()) acc += v;
  auto an = a.node();
  return make_op<T>({1}, {acc}, {a}, [an](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[0];
  });
}

/// Mean of a over pixels where mask != 0. Caller guarantees mask has >=1 set
/// entry (checked here as well).
template <typename T>
Tensor<T> masked_mean(const Tensor<T>& a, const std::vector<uint8_t>& mask) {
  if (mask.size() != a.size())
    throw std::invalid_argument("masked_mean: mask size mismatch");
  size_t count = 0;
  T acc = 0;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      acc += a.values()[i];
      ++count;
    }
  if (count == 0) throw std::invalid_argument("masked_mean: empty mask");
  auto an = a.node();
  T inv = T(1) / static_cast<T>(count);
  auto mask_copy = mask;
  return make_op<T>({1}, {acc * inv}, {a}, [an, inv, mask_copy](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t i = 0; i < ga.size(); ++i)
      if (mask_copy[i]) ga[i] += n.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                                shape_str(new_shape));
  auto an = a.node();
  return make_op<T>(std::move(new_shape), a.values(), {a}, [an](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& inputs, size_t axis) {
  if (inputs.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& ref = inputs[0].shape();
  if (axis >= ref.size()) throw std::invalid_argument("concat: axis out of range");
  Shape out_shape = ref;
  size_t axis_total = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.size() != ref.size())
      throw std::invalid_argument("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != ref[i])
        throw std::invalid_argument("concat: extent mismatch on axis " + std::to_string(i) +
                                    ": " + shape_str(s) + " vs " + shape_str(ref));
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];

  std::vector<T> out(numel(out_shape));
  std::vector<size_t> offsets(inputs.size());
  {
    size_t off = 0;
    for (size_t k = 0; k < inputs.size(); ++k) {
      offsets[k] = off;
      off += inputs[k].shape()[axis];
    }
  }
  for (size_t k = 0; k < inputs.size(); ++k) {
    size_t ak = inputs[k].shape()[axis];
    const auto& v = inputs[k].values();
    for (size_t o = 0; o < outer; ++o)
      std::copy(v.begin() + o * ak * inner, v.begin() + (o + 1) * ak * inner,
                out.begin() + (o * axis_total + offsets[k]) * inner);
  }
  std::vector<std::shared_ptr<typename Tensor<T>::Node>> nodes;
  for (const auto& t : inputs) nodes.push_back(t.node());
  return make_op<T>(out_shape, std::move(out), inputs,
                    [nodes, offsets, outer, inner, axis_total, axis](auto& n) {
                      for (size_t k = 0; k < nodes.size(); ++k) {
                        if (!nodes[k]->requires_grad) continue;
                        size_t ak = nodes[k]->shape[axis];
                        auto& g = ensure_grad<T>(*nodes[k]);
                        for (size_t o = 0; o < outer; ++o) {
                          const T* src = n.grad.data() + (o * axis_total + offsets[k]) * inner;
                          T* dst = g.data() + o * ak * inner;
                          for (size_t i = 0; i < ak * inner; ++i) dst[i] += src[i];
                        }
                      }
                    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, size_t axis, size_t start, size_t len) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw std::invalid_argument("slice: axis out of range");
  if (start + len > s[axis]) throw std::invalid_argument("slice: out of range on axis " +
                                                         std::to_string(axis));
  Shape out_shape = s;
  out_shape[axis] = len;
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  size_t ak = s[axis];
  std::vector<T> out(numel(out_shape));
  for (size_t o = 0; o < outer; ++o)
    std::copy(a.values().begin() + (o * ak + start) * inner,
              a.values().begin() + (o * ak + start + len) * inner, out.begin() + o * len * inner);
  auto an = a.node();
  return make_op<T>(out_shape, std::move(out), {a}, [an, outer, inner, ak, start, len](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t o = 0; o < outer; ++o) {
      const T* src = n.grad.data() + o * len * inner;
      T* dst = ga.data() + (o * ak + start) * inner;
      for (size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw std::invalid_argument("softmax: axis out of range");
  size_t outer = 1, inner = 1, ax = s[axis];
  for (size_t i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::vector<T> out(a.size());
  const auto& v = a.values();
  for (size_t o = 0; o < outer; ++o)
    for (size_t in = 0; in < inner; ++in) {
      T mx = -std::numeric_limits<T>::infinity();
      for (size_t k = 0; k < ax; ++k) mx = std::max(mx, v[(o * ax + k) * inner + in]);
      T denom = 0;
      for (size_t k = 0; k < ax; ++k) {
        T e = std::exp(v[(o * ax + k) * inner + in] - mx);
        out[(o * ax + k) * inner + in] = e;
        denom += e;
      }
      T inv = T(1) / denom;
      for (size_t k = 0; k < ax; ++k) out[(o * ax + k) * inner + in] *= inv;
    }
  auto an = a.node();
  auto probs = out;  // captured for backward
  return make_op<T>(s, std::move(out), {a}, [an, probs, outer, inner, ax](auto& n) {
    auto& ga = ensure_grad<T>(*an);
    for (size_t o = 0; o < outer; ++o)
      for (size_t in = 0; in < inner; ++in) {
        T dot = 0;
        for (size_t k = 0; k < ax; ++k) {
          size_t idx = (o * ax + k) * inner + in;
          dot += probs[idx] * n.grad[idx];
        }
        for (size_t k = 0; k < ax; ++k) {
          size_t idx = (o * ax + k) * inner + in;
          ga[idx] += probs[idx] * (n.grad[idx] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// Kernel geometry for 2D/3D convolution. Convolution here is
/// cross-correlation (no kernel flip) with zero padding.
struct ConvSpec {
  std::vector<size_t> kernel;  // 2 or 3 extents, slowest axis first
  std::vector<size_t> stride;
  std::vector<size_t> pad;
  size_t in_ch = 0;
  size_t out_ch = 0;
  bool bias = true;

  size_t out_extent(size_t i, size_t in) const {
    long long o = (static_cast<long long>(in) + 2ll * pad[i] - static_cast<long long>(kernel[i]));
    if (o < 0 || o / static_cast<long long>(stride[i]) < 0)
      throw std::invalid_argument("ConvSpec: non-positive output extent on spatial axis " +
                                  std::to_string(i));
    return static_cast<size_t>(o) / stride[i] + 1;
  }

  static ConvSpec conv2d(size_t in_ch, size_t out_ch, size_t k, size_t stride = 1,
                         size_t pad = 0, bool bias = true) {
    return ConvSpec{{k, k}, {stride, stride}, {pad, pad}, in_ch, out_ch, bias};
  }
  static ConvSpec conv3d(size_t in_ch, size_t out_ch, size_t k, size_t stride = 1,
                         size_t pad = 0, bool bias = true) {
    return ConvSpec{{k, k, k}, {stride, stride, stride}, {pad, pad, pad}, in_ch, out_ch, bias};
  }
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>& bias = Tensor<T>()) {
  if (spec.kernel.size() != 2) throw std::invalid_argument("conv2d: spec is not 2D");
  const Shape& is = input.shape();
  if (is.size() != 3) throw std::invalid_argument("conv2d: input rank must be 3 [C,H,W]");
  if (is[0] != spec.in_ch)
    throw std::invalid_argument("conv2d: input channel axis 0 is " + std::to_string(is[0]) +
                                ", spec expects " + std::to_string(spec.in_ch));
  Shape ws{spec.out_ch, spec.in_ch, spec.kernel[0], spec.kernel[1]};
  if (weight.shape() != ws)
    throw std::invalid_argument("conv2d: weight shape " + shape_str(weight.shape()) +
                                " != " + shape_str(ws));
  if (spec.bias != bias.defined())
    throw std::invalid_argument("conv2d: bias presence does not match spec");
  if (bias.defined() && bias.shape() != Shape{spec.out_ch})
    throw std::invalid_argument("conv2d: bias shape mismatch");

  const size_t C = is[0], H = is[1], W = is[2];
  const size_t OC = spec.out_ch, KH = spec.kernel[0], KW = spec.kernel[1];
  const size_t SY = spec.stride[0], SX = spec.stride[1];
  const long long PY = spec.pad[0], PX = spec.pad[1];
  const size_t OH = spec.out_extent(0, H), OW = spec.out_extent(1, W);

  std::vector<T> out(OC * OH * OW, T(0));
  const T* in = input.values().data();
  const T* w = weight.values().data();
  for (size_t oc = 0; oc < OC; ++oc) {
    T b = bias.defined() ? bias.values()[oc] : T(0);
    for (size_t oy = 0; oy < OH; ++oy)
      for (size_t ox = 0; ox < OW; ++ox) {
        T acc = b;
        for (size_t c = 0; c < C; ++c)
          for (size_t ky = 0; ky < KH; ++ky) {
            long long iy = static_cast<long long>(oy * SY + ky) - PY;
            if (iy < 0 || iy >= static_cast<long long>(H)) continue;
            const T* in_row = in + (c * H + iy) * W;
            const T* w_row = w + ((oc * C + c) * KH + ky) * KW;
            for (size_t kx = 0; kx < KW; ++kx) {
              long long ix = static_cast<long long>(ox * SX + kx) - PX;
              if (ix < 0 || ix >= static_cast<long long>(W)) continue;
              acc += in_row[ix] * w_row[kx];
            }
          }
        out[(oc * OH + oy) * OW + ox] = acc;
      }
  }

  auto in_n = input.node();
  auto w_n = weight.node();
  auto b_n = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op<T>(
      {OC, OH, OW}, std::move(out), parents,
      [=](auto& n) {
        const T* g = n.grad.data();
        if (in_n->requires_grad) {
          auto& gi = ensure_grad<T>(*in_n);
          for (size_t c = 0; c < C; ++c)
            for (size_t oc = 0; oc < OC; ++oc)
              for (size_t oy = 0; oy < OH; ++oy)
                for (size_t ky = 0; ky < KH; ++ky) {
                  long long iy = static_cast<long long>(oy * SY + ky) - PY;
                  if (iy < 0 || iy >= static_cast<long long>(H)) continue;
                  const T* w_row = w_n->values.data() + ((oc * C + c) * KH + ky) * KW;
                  const T* g_row = g + (oc * OH + oy) * OW;
                  T* gi_row = gi.data() + (c * H + iy) * W;
                  for (size_t ox = 0; ox < OW; ++ox)
                    for (size_t kx = 0; kx < KW; ++kx) {
                      long long ix = static_cast<long long>(ox * SX + kx) - PX;
                      if (ix < 0 || ix >= static_cast<long long>(W)) continue;
                      gi_row[ix] += g_row[ox] * w_row[kx];
                    }
                }
        }
        if (w_n->requires_grad) {
          auto& gw = ensure_grad<T>(*w_n);
          const T* in_v = in_n->values.data();
          for (size_t oc = 0; oc < OC; ++oc)
            for (size_t c = 0; c < C; ++c)
              for (size_t ky = 0; ky < KH; ++ky)
                for (size_t kx = 0; kx < KW; ++kx) {
                  T acc = 0;
                  for (size_t oy = 0; oy < OH; ++oy) {
                    long long iy = static_cast<long long>(oy * SY + ky) - PY;
                    if (iy < 0 || iy >= static_cast<long long>(H)) continue;
                    const T* in_row = in_v + (c * H + iy) * W;
                    const T* g_row = g + (oc * OH + oy) * OW;
                    for (size_t ox = 0; ox < OW; ++ox) {
                      long long ix = static_cast<long long>(ox * SX + kx) - PX;
                      if (ix < 0 || ix >= static_cast<long long>(W)) continue;
                      acc += g_row[ox] * in_row[ix];
                    }
                  }
                  gw[((oc * C + c) * KH + ky) * KW + kx] += acc;
                }
        }
        if (b_n && b_n->requires_grad) {
          auto& gb = ensure_grad<T>(*b_n);
          for (size_t oc = 0; oc < OC; ++oc) {
            T acc = 0;
            for (size_t i = 0; i < OH * OW; ++i) acc += g[oc * OH * OW + i];
            gb[oc] += acc;
          }
        }
      });
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>& bias = Tensor<T>()) {
  if (spec.kernel.size() != 3) throw std::invalid_argument("conv3d: spec is not 3D");
  const Shape& is = input.shape();
  if (is.size() != 4) throw std::invalid_argument("conv3d: input rank must be 4 [C,D,H,W]");
  if (is[0] != spec.in_ch)
    throw std::invalid_argument("conv3d: input channel axis 0 is " + std::to_string(is[0]) +
                                ", spec expects " + std::to_string(spec.in_ch));
  Shape ws{spec.out_ch, spec.in_ch, spec.kernel[0], spec.kernel[1], spec.kernel[2]};
  if (weight.shape() != ws)
    throw std::invalid_argument("conv3d: weight shape " + shape_str(weight.shape()) +
                                " != " + shape_str(ws));
  if (spec.bias != bias.defined())
    throw std::invalid_argument("conv3d: bias presence does not match spec");
  if (bias.defined() && bias.shape() != Shape{spec.out_ch})
    throw std::invalid_argument("conv3d: bias shape mismatch");

  const size_t C = is[0], D = is[1], H = is[2], W = is[3];
  const size_t OC = spec.out_ch, KD = spec.kernel[0], KH = spec.kernel[1], KW = spec.kernel[2];
  const size_t SZ = spec.stride[0], SY = spec.stride[1], SX = spec.stride[2];
  const long long PZ = spec.pad[0], PY = spec.pad[1], PX = spec.pad[2];
  const size_t OD = spec.out_extent(0, D), OH = spec.out_extent(1, H), OW = spec.out_extent(2, W);

  std::vector<T> out(OC * OD * OH * OW, T(0));
  const T* in = input.values().data();
  const T* w = weight.values().data();
  for (size_t oc = 0; oc < OC; ++oc) {
    T b = bias.defined() ? bias.values()[oc] : T(0);
    for (size_t od = 0; od < OD; ++od)
      for (size_t oy = 0; oy < OH; ++oy)
        for (size_t ox = 0; ox < OW; ++ox) {
          T acc = b;
          for (size_t c = 0; c < C; ++c)
            for (size_t kd = 0; kd < KD; ++kd) {
              long long iz = static_cast<long long>(od * SZ + kd) - PZ;
              if (iz < 0 || iz >= static_cast<long long>(D)) continue;
              for (size_t ky = 0; ky < KH; ++ky) {
                long long iy = static_cast<long long>(oy * SY + ky) - PY;
                if (iy < 0 || iy >= static_cast<long long>(H)) continue;
                const T* in_row = in + ((c * D + iz) * H + iy) * W;
                const T* w_row = w + (((oc * C + c) * KD + kd) * KH + ky) * KW;
                for (size_t kx = 0; kx < KW; ++kx) {
                  long long ix = static_cast<long long>(ox * SX + kx) - PX;
                  if (ix < 0 || ix >= static_cast<long long>(W)) continue;
                  acc += in_row[ix] * w_row[kx];
                }
              }
            }
          out[((oc * OD + od) * OH + oy) * OW + ox] = acc;
        }
  }

  auto in_n = input.node();
  auto w_n = weight.node();
  auto b_n = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op<T>(
      {OC, OD, OH, OW}, std::move(out), parents,
      [=](auto& n) {
        const T* g = n.grad.data();
        if (in_n->requires_grad) {
          auto& gi = ensure_grad<T>(*in_n);
          for (size_t c = 0; c < C; ++c)
            for (size_t oc = 0; oc < OC; ++oc)
              for (size_t od = 0; od < OD; ++od)
                for (size_t kd = 0; kd < KD; ++kd) {
                  long long iz = static_cast<long long>(od * SZ + kd) - PZ;
                  if (iz < 0 || iz >= static_cast<long long>(D)) continue;
                  for (size_t oy = 0; oy < OH; ++oy)
                    for (size_t ky = 0; ky < KH; ++ky) {
                      long long iy = static_cast<long long>(oy * SY + ky) - PY;
                      if (iy < 0 || iy >= static_cast<long long>(H)) continue;
                      const T* w_row = w_n->values.data() + (((oc * C + c) * KD + kd) * KH + ky) * KW;
                      const T* g_row = g + ((oc * OD + od) * OH + oy) * OW;
                      T* gi_row = gi.data() + ((c * D + iz) * H + iy) * W;
                      for (size_t ox = 0; ox < OW; ++ox)
                        for (size_t kx = 0; kx < KW; ++kx) {
                          long long ix = static_cast<long long>(ox * SX + kx) - PX;
                          if (ix < 0 || ix >= static_cast<long long>(W)) continue;
                          gi_row[ix] += g_row[ox] * w_row[kx];
                        }
                    }
                }
        }
        if (w_n->requires_grad) {
          auto& gw = ensure_grad<T>(*w_n);
          const T* in_v = in_n->values.data();
          for (size_t oc = 0; oc < OC; ++oc)
            for (size_t c = 0; c < C; ++c)
              for (size_t kd = 0; kd < KD; ++kd)
                for (size_t ky = 0; ky < KH; ++ky)
                  for (size_t kx = 0; kx < KW; ++kx) {
                    T acc = 0;
                    for (size_t od = 0; od < OD; ++od) {
                      long long iz = static_cast<long long>(od * SZ + kd) - PZ;
                      if (iz < 0 || iz >= static_cast<long long>(D)) continue;
                      for (size_t oy = 0; oy < OH; ++oy) {
                        long long iy = static_cast<long long>(oy * SY + ky) - PY;
                        if (iy < 0 || iy >= static_cast<long long>(H)) continue;
                        const T* in_row = in_v + ((c * D + iz) * H + iy) * W;
                        const T* g_row = g + ((oc * OD + od) * OH + oy) * OW;
                        for (size_t ox = 0; ox < OW; ++ox) {
                          long long ix = static_cast<long long>(ox * SX + kx) - PX;
                          if (ix < 0 || ix >= static_cast<long long>(W)) continue;
                          acc += g_row[ox] * in_row[ix];
                        }
                      }
                    }
                    gw[(((oc * C + c) * KD + kd) * KH + ky) * KW + kx] += acc;
                  }
        }
        if (b_n && b_n->requires_grad) {
          auto& gb = ensure_grad<T>(*b_n);
          for (size_t oc = 0; oc < OC; ++oc) {
            T acc = 0;
            for (size_t i = 0; i < OD * OH * OW; ++i) acc += g[oc * OD * OH * OW + i];
            gb[oc] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// stereo ops
// ---------------------------------------------------------------------------

/// out[d,y,x] = (1/C) sum_c a[c,y,x] * b[c,y,x - sign*d]; out-of-range -> 0.
/// sign=+1 matches a left reference against a right image (left disparity).
template <typename T>
Tensor<T> correlation1d(const Tensor<T>& a, const Tensor<T>& b, size_t max_disp, int sign = 1) {
  check_same_shape(a, b, "correlation1d");
  if (a.shape().size() != 3) throw std::invalid_argument("correlation1d: rank must be 3");
  const size_t C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  if (max_disp < 1 || max_disp > W)
    throw std::invalid_argument("correlation1d: max_disp " + std::to_string(max_disp) +
                                " out of range for width " + std::to_string(W));
  std::vector<T> out(max_disp * H * W, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  const T inv_c = T(1) / static_cast<T>(C);
  for (size_t d = 0; d < max_disp; ++d)
    for (size_t y = 0; y < H; ++y)
      for (size_t x = 0; x < W; ++x) {
        long long xs = static_cast<long long>(x) - sign * static_cast<long long>(d);
        if (xs < 0 || xs >= static_cast<long long>(W)) continue;
        T acc = 0;
        for (size_t c = 0; c < C; ++c) acc += av[(c * H + y) * W + x] * bv[(c * H + y) * W + xs];
        out[(d * H + y) * W + x] = acc * inv_c;
      }
  auto an = a.node(), bn = b.node();
  return make_op<T>({max_disp, H, W}, std::move(out), {a, b},
                    [an, bn, C, H, W, max_disp, sign, inv_c](auto& n) {
                      const T* g = n.grad.data();
                      for (size_t d = 0; d < max_disp; ++d)
                        for (size_t y = 0; y < H; ++y)
                          for (size_t x = 0; x < W; ++x) {
                            long long xs = static_cast<long long>(x) -
                                           sign * static_cast<long long>(d);
                            if (xs < 0 || xs >= static_cast<long long>(W)) continue;
                            T gd = g[(d * H + y) * W + x] * inv_c;
                            if (gd == T(0)) continue;
                            for (size_t c = 0; c < C; ++c) {
                              size_t ia = (c * H + y) * W + x;
                              size_t ib = (c * H + y) * W + xs;
                              if (an->requires_grad)
                                ensure_grad<T>(*an)[ia] += gd * bn->values[ib];
                              if (bn->requires_grad)
                                ensure_grad<T>(*bn)[ib] += gd * an->values[ia];
                            }
                          }
                    });
}

/// Replicates [C,h,w] features across a new disparity axis -> [C,D,h,w].
template <typename T>
Tensor<T> broadcast_disparity(const Tensor<T>& feat, size_t depth) {
  if (feat.shape().size() != 3) throw std::invalid_argument("broadcast_disparity: rank must be 3");
  const size_t C = feat.shape()[0], H = feat.shape()[1], W = feat.shape()[2];
  std::vector<T> out(C * depth * H * W);
  const T* v = feat.values().data();
  for (size_t c = 0; c < C; ++c)
    for (size_t d = 0; d < depth; ++d)
      std::copy(v + c * H * W, v + (c + 1) * H * W, out.begin() + (c * depth + d) * H * W);
  auto fn = feat.node();
  return make_op<T>({C, depth, H, W}, std::move(out), {feat}, [fn, C, depth, H, W](auto& n) {
    auto& g = ensure_grad<T>(*fn);
    for (size_t c = 0; c < C; ++c)
      for (size_t d = 0; d < depth; ++d) {
        const T* src = n.grad.data() + (c * depth + d) * H * W;
        T* dst = g.data() + c * H * W;
        for (size_t i = 0; i < H * W; ++i) dst[i] += src[i];
      }
  });
}

/// Stacks horizontally shifted copies of [C,h,w] features along a disparity
/// axis -> [C,D,h,w]: out[c,d,y,x] = feat[c,y,x - sign*d], zero out of range.
template <typename T>
Tensor<T> shift_stack(const Tensor<T>& feat, size_t depth, int sign = 1) {
  if (feat.shape().size() != 3) throw std::invalid_argument("shift_stack: rank must be 3");
  const size_t C = feat.shape()[0], H = feat.shape()[1], W = feat.shape()[2];
  std::vector<T> out(C * depth * H * W, T(0));
  const T* v = feat.values().data();
  for (size_t c = 0; c < C; ++c)
    for (size_t d = 0; d < depth; ++d)
      for (size_t y = 0; y < H; ++y)
        for (size_t x = 0; x < W; ++x) {
          long long xs = static_cast<long long>(x) - sign * static_cast<long long>(d);
          if (xs < 0 || xs >= static_cast<long long>(W)) continue;
          out[((c * depth + d) * H + y) * W + x] = v[(c * H + y) * W + xs];
        }
  auto fn = feat.node();
  return make_op<T>({C, depth, H, W}, std::move(out), {feat}, [fn, C, depth, H, W, sign](auto& n) {
    auto& g = ensure_grad<T>(*fn);
    for (size_t c = 0; c < C; ++c)
      for (size_t d = 0; d < depth; ++d)
        for (size_t y = 0; y < H; ++y)
          for (size_t x = 0; x < W; ++x) {
            long long xs = static_cast<long long>(x) - sign * static_cast<long long>(d);
            if (xs < 0 || xs >= static_cast<long long>(W)) continue;
            g[(c * H + y) * W + xs] += n.grad[((c * depth + d) * H + y) * W + x];
          }
  });
}

/// Expected index along axis 0 of a [D,H,W] probability volume -> [H,W].
template <typename T>
Tensor<T> expected_index(const Tensor<T>& probs) {
  if (probs.shape().size() != 3) throw std::invalid_argument("expected_index: rank must be 3");
  const size_t D = probs.shape()[0], H = probs.shape()[1], W = probs.shape()[2];
  std::vector<T> out(H * W, T(0));
  const T* v = probs.values().data();
  for (size_t d = 0; d < D; ++d)
    for (size_t i = 0; i < H * W; ++i) out[i] += static_cast<T>(d) * v[d * H * W + i];
  auto pn = probs.node();
  return make_op<T>({H, W}, std::move(out), {probs}, [pn, D, H, W](auto& n) {
    auto& g = ensure_grad<T>(*pn);
    for (size_t d = 0; d < D; ++d)
      for (size_t i = 0; i < H * W; ++i) g[d * H * W + i] += static_cast<T>(d) * n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// interpolation
// ---------------------------------------------------------------------------

namespace detail {
inline void lin_coeff(size_t out_i, size_t out_n, size_t in_n, size_t& i0, size_t& i1,
                      double& w1) {
  if (out_n == 1 || in_n == 1) {
    i0 = i1 = 0;
    w1 = 0.0;
    return;
  }
  double pos = static_cast<double>(out_i) * static_cast<double>(in_n - 1) /
               static_cast<double>(out_n - 1);  // align corners
  i0 = static_cast<size_t>(pos);
  if (i0 >= in_n - 1) i0 = in_n - 2;
  i1 = i0 + 1;
  w1 = pos - static_cast<double>(i0);
}
}  // namespace detail

/// Align-corners trilinear upsampling of [C,D,H,W] to [C,D2,H2,W2].
template <typename T>
Tensor<T> trilinear_upsample(const Tensor<T>& input, size_t D2, size_t H2, size_t W2) {
  if (input.shape().size() != 4)
    throw std::invalid_argument("trilinear_upsample: rank must be 4");
  const size_t C = input.shape()[0], D = input.shape()[1], H = input.shape()[2],
               W = input.shape()[3];
  if (D2 < D || H2 < H || W2 < W)
    throw std::invalid_argument("trilinear_upsample: target " + shape_str({D2, H2, W2}) +
                                " smaller than source " + shape_str({D, H, W}));
  std::vector<T> out(C * D2 * H2 * W2);
  const T* v = input.values().data();
  for (size_t c = 0; c < C; ++c)
    for (size_t z = 0; z < D2; ++z) {
      size_t z0, z1;
      double wz;
      detail::lin_coeff(z, D2, D, z0, z1, wz);
      for (size_t y = 0; y < H2; ++y) {
        size_t y0, y1;
        double wy;
        detail::lin_coeff(y, H2, H, y0, y1, wy);
        for (size_t x = 0; x < W2; ++x) {
          size_t x0, x1;
          double wx;
          detail::lin_coeff(x, W2, W, x0, x1, wx);
          auto at = [&](size_t zz, size_t yy, size_t xx) {
            return static_cast<double>(v[((c * D + zz) * H + yy) * W + xx]);
          };
          double v00 = at(z0, y0, x0) * (1 - wx) + at(z0, y0, x1) * wx;
          double v01 = at(z0, y1, x0) * (1 - wx) + at(z0, y1, x1) * wx;
          double v10 = at(z1, y0, x0) * (1 - wx) + at(z1, y0, x1) * wx;
          double v11 = at(z1, y1, x0) * (1 - wx) + at(z1, y1, x1) * wx;
          double v0 = v00 * (1 - wy) + v01 * wy;
          double v1 = v10 * (1 - wy) + v11 * wy;
          out[((c * D2 + z) * H2 + y) * W2 + x] = static_cast<T>(v0 * (1 - wz) + v1 * wz);
        }
      }
    }
  auto in_n = input.node();
  return make_op<T>({C, D2, H2, W2}, std::move(out), {input},
                    [in_n, C, D, H, W, D2, H2, W2](auto& n) {
                      auto& g = ensure_grad<T>(*in_n);
                      for (size_t c = 0; c < C; ++c)
                        for (size_t z = 0; z < D2; ++z) {
                          size_t z0, z1;
                          double wz;
                          detail::lin_coeff(z, D2, D, z0, z1, wz);
                          for (size_t y = 0; y < H2; ++y) {
                            size_t y0, y1;
                            double wy;
                            detail::lin_coeff(y, H2, H, y0, y1, wy);
                            for (size_t x = 0; x < W2; ++x) {
                              size_t x0, x1;
                              double wx;
                              detail::lin_coeff(x, W2, W, x0, x1, wx);
                              T go = n.grad[((c * D2 + z) * H2 + y) * W2 + x];
                              if (go == T(0)) continue;
                              auto acc = [&](size_t zz, size_t yy, size_t xx, double w) {
                                g[((c * D + zz) * H + yy) * W + xx] += static_cast<T>(w) * go;
                              };
                              acc(z0, y0, x0, (1 - wz) * (1 - wy) * (1 - wx));
                              acc(z0, y0, x1, (1 - wz) * (1 - wy) * wx);
                              acc(z0, y1, x0, (1 - wz) * wy * (1 - wx));
                              acc(z0, y1, x1, (1 - wz) * wy * wx);
                              acc(z1, y0, x0, wz * (1 - wy) * (1 - wx));
                              acc(z1, y0, x1, wz * (1 - wy) * wx);
                              acc(z1, y1, x0, wz * wy * (1 - wx));
                              acc(z1, y1, x1, wz * wy * wx);
                            }
                          }
                        }
                    });
}

// ---------------------------------------------------------------------------
// spatial helpers
// ---------------------------------------------------------------------------

/// Forward difference along x (axis=0) or y (axis=1) of an [H,W] map; the last
/// column/row of the result is 0.
template <typename T>
Tensor<T> finite_diff(const Tensor<T>& a, int axis) {
  if (a.shape().size() != 2) throw std::invalid_argument("finite_diff: rank must be 2");
  const size_t H = a.shape()[0], W = a.shape()[1];
  std::vector<T> out(H * W, T(0));
  const T* v = a.values().data();
  if (axis == 0) {
    for (size_t y = 0; y < H; ++y)
      for (size_t x = 0; x + 1 < W; ++x) out[y * W + x] = v[y * W + x + 1] - v[y * W + x];
  } else {
    for (size_t y = 0; y + 1 < H; ++y)
      for (size_t x = 0; x < W; ++x) out[y * W + x] = v[(y + 1) * W + x] - v[y * W + x];
  }
  auto an = a.node();
  return make_op<T>({H, W}, std::move(out), {a}, [an, H, W, axis](auto& n) {
    auto& g = ensure_grad<T>(*an);
    if (axis == 0) {
      for (size_t y = 0; y < H; ++y)
        for (size_t x = 0; x + 1 < W; ++x) {
          g[y * W + x + 1] += n.grad[y * W + x];
          g[y * W + x] -= n.grad[y * W + x];
        }
    } else {
      for (size_t y = 0; y + 1 < H; ++y)
        for (size_t x = 0; x < W; ++x) {
          g[(y + 1) * W + x] += n.grad[y * W + x];
          g[y * W + x] -= n.grad[y * W + x];
        }
    }
  });
}

/// Per-channel 3x3 mean with zero padding on [C,H,W].
template <typename T>
Tensor<T> box_filter3(const Tensor<T>& a) {
  if (a.shape().size() != 3) throw std::invalid_argument("box_filter3: rank must be 3");
  const size_t C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  auto run = [C, H, W](const T* v, T* out) {
    const T inv9 = T(1) / T(9);
    for (size_t c = 0; c < C; ++c)
      for (size_t y = 0; y < H; ++y)
        for (size_t x = 0; x < W; ++x) {
          T acc = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            long long yy = static_cast<long long>(y) + dy;
            if (yy < 0 || yy >= static_cast<long long>(H)) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              long long xx = static_cast<long long>(x) + dx;
              if (xx < 0 || xx >= static_cast<long long>(W)) continue;
              acc += v[(c * H + yy) * W + xx];
            }
          }
          out[(c * H + y) * W + x] = acc * inv9;
        }
  };
  std::vector<T> out(a.size());
  run(a.values().data(), out.data());
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {a}, [an, run](auto& n) {
    // the box kernel is symmetric, so the adjoint is the same filter
    std::vector<T> gi(n.grad.size());
    run(n.grad.data(), gi.data());
    auto& g = ensure_grad<T>(*an);
    for (size_t i = 0; i < gi.size(); ++i) g[i] += gi[i];
  });
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, size_t fan_in, std::mt19937& rng) {
  T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> vals(numel(shape));
  for (auto& v : vals) v = static_cast<T>(dist(rng));
  return Tensor<T>::from(shape, std::move(vals), true);
}

}  // namespace uamd
