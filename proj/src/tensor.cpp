#include "lego/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <malloc.h>
#include <numbers>
#include <unordered_set>

#include "lego/errors.hpp"

namespace lego::ag {

namespace {

std::atomic<std::uint64_t> g_sequence{0};

// Activations are multi-megabyte and reallocated every step; keeping them out
// of mmap avoids a page-fault storm on each allocation.
const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
thread_local bool g_grad_enabled = true;

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using CMapM = Eigen::Map<const Mat<T>>;
template <class T>
using MapA = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using CMapA = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

// Output node for an op; it records `inputs` only when one of them needs a
// gradient and recording is enabled.
template <class T>
NodePtr<T> make_output(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(static_cast<std::size_t>(numel(shape)), T(0));
  node->shape = std::move(shape);
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  if (g_grad_enabled) {
    for (const auto* in : inputs) {
      if (in->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const auto* in : inputs) node->inputs.push_back(in->handle());
    }
  }
  return node;
}

template <class T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// Grad buffer of input i when it takes gradients, else nullptr.
template <class T>
T* input_grad(Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer() : nullptr;
}

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <std::floating_point T>
T* Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad.data();
}

template <std::floating_point T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(static_cast<std::size_t>(ag::numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != ag::numel(shape)) {
    throw ShapeError("tensor of shape " + ag::to_string(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value.assign(values.begin(), values.end());
  node->requires_grad = requires_grad;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1) throw ShapeError("item() on tensor of shape " + ag::to_string(shape()));
  return node_->value[0];
}

template <std::floating_point T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::detach_copy(bool requires_grad) const {
  return from(shape(), std::vector<T>(node_->value.begin(), node_->value.end()), requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <std::floating_point T>
void backward(const Tensor<T>& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw TrainingError("backward: loss was not recorded on the tape");

  // Owning references keep every node alive until the graph is dropped.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::shared_ptr<Node<T>>> stack = {loss.handle()};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (const auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->sequence > b->sequence; });

  loss.node()->grad_buffer()[0] += T(1);
  for (const auto& n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (const auto& n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
    }
  }
}

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const bool batched = a.rank() == 3;
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t o = batched ? 1 : 0;
  const std::int64_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) shape_mismatch("matmul", a.shape(), b.shape());
  const std::int64_t m = a.dim(o), k = a.dim(o + 1);
  const std::int64_t bk = transpose_b ? b.dim(o + 1) : b.dim(o);
  const std::int64_t n = transpose_b ? b.dim(o) : b.dim(o + 1);
  if (bk != k) shape_mismatch("matmul", a.shape(), b.shape());

  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  auto out = make_output<T>(std::move(out_shape), {&a, &b});
  const T* av = a.values().data();
  const T* bv = b.values().data();
  const std::int64_t bsz = transpose_b ? n * k : k * n;
  for (std::int64_t i = 0; i < batch; ++i) {
    CMapM<T> A(av + i * m * k, m, k);
    MapM<T> C(out->value.data() + i * m * n, m, n);
    if (transpose_b) {
      C.noalias() = A * CMapM<T>(bv + i * bsz, n, k).transpose();
    } else {
      C.noalias() = A * CMapM<T>(bv + i * bsz, k, n);
    }
  }
  if (out->requires_grad) {
    out->backward = [batch, m, k, n, transpose_b, bsz](Node<T>& self) {
      const auto& A = self.inputs[0]->value;
      const auto& B = self.inputs[1]->value;
      T* da = input_grad(self, 0);
      T* db = input_grad(self, 1);
      for (std::int64_t i = 0; i < batch; ++i) {
        CMapM<T> dC(self.grad.data() + i * m * n, m, n);
        CMapM<T> Am(A.data() + i * m * k, m, k);
        if (transpose_b) {
          CMapM<T> Bm(B.data() + i * bsz, n, k);
          if (da) MapM<T>(da + i * m * k, m, k).noalias() += dC * Bm;
          if (db) MapM<T>(db + i * bsz, n, k).noalias() += dC.transpose() * Am;
        } else {
          CMapM<T> Bm(B.data() + i * bsz, k, n);
          if (da) MapM<T>(da + i * m * k, m, k).noalias() += dC * Bm.transpose();
          if (db) MapM<T>(db + i * bsz, k, n).noalias() += Am.transpose() * dC;
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_defined(x, "linear");
  if (x.rank() < 1 || weight.rank() != 2 || bias.rank() != 1) shape_mismatch("linear", x.shape(), weight.shape());
  const std::int64_t in = weight.dim(0), outw = weight.dim(1);
  if (x.shape().back() != in || bias.dim(0) != outw) shape_mismatch("linear", x.shape(), weight.shape());
  const std::int64_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = outw;
  auto out = make_output<T>(std::move(shape), {&x, &weight, &bias});
  MapM<T> Y(out->value.data(), rows, outw);
  Y.noalias() = CMapM<T>(x.values().data(), rows, in) * CMapM<T>(weight.values().data(), in, outw);
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.values().data(), outw);
  if (out->requires_grad) {
    out->backward = [rows, in, outw](Node<T>& self) {
      CMapM<T> dY(self.grad.data(), rows, outw);
      if (T* dx = input_grad(self, 0)) {
        MapM<T>(dx, rows, in).noalias() += dY * CMapM<T>(self.inputs[1]->value.data(), in, outw).transpose();
      }
      if (T* dw = input_grad(self, 1)) {
        MapM<T>(dw, in, outw).noalias() += CMapM<T>(self.inputs[0]->value.data(), rows, in).transpose() * dY;
      }
      if (T* db = input_grad(self, 2)) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db, outw) += dY.colwise().sum();
      }
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  auto out = make_output<T>(a.shape(), {&a, &b});
  const auto n = static_cast<Eigen::Index>(a.numel());
  MapA<T>(out->value.data(), n) = CMapA<T>(a.values().data(), n) + CMapA<T>(b.values().data(), n);
  if (out->requires_grad) {
    out->backward = [n](Node<T>& self) {
      CMapA<T> g(self.grad.data(), n);
      if (T* da = input_grad(self, 0)) MapA<T>(da, n) += g;
      if (T* db = input_grad(self, 1)) MapA<T>(db, n) += g;
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  auto out = make_output<T>(a.shape(), {&a, &b});
  const auto n = static_cast<Eigen::Index>(a.numel());
  MapA<T>(out->value.data(), n) = CMapA<T>(a.values().data(), n) * CMapA<T>(b.values().data(), n);
  if (out->requires_grad) {
    out->backward = [n](Node<T>& self) {
      CMapA<T> g(self.grad.data(), n);
      if (T* da = input_grad(self, 0)) MapA<T>(da, n) += g * CMapA<T>(self.inputs[1]->value.data(), n);
      if (T* db = input_grad(self, 1)) MapA<T>(db, n) += g * CMapA<T>(self.inputs[0]->value.data(), n);
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_defined(a, "scale");
  auto out = make_output<T>(a.shape(), {&a});
  const auto n = static_cast<Eigen::Index>(a.numel());
  MapA<T>(out->value.data(), n) = CMapA<T>(a.values().data(), n) * factor;
  if (out->requires_grad) {
    out->backward = [n, factor](Node<T>& self) {
      if (T* da = input_grad(self, 0)) MapA<T>(da, n) += CMapA<T>(self.grad.data(), n) * factor;
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a) {
  require_defined(a, "sum");
  auto out = make_output<T>({}, {&a});
  const auto n = static_cast<Eigen::Index>(a.numel());
  out->value[0] = CMapA<T>(a.values().data(), n).sum();
  if (out->requires_grad) {
    out->backward = [n](Node<T>& self) {
      if (T* da = input_grad(self, 0)) MapA<T>(da, n) += self.grad[0];
    };
  }
  return Tensor<T>(out);
}

namespace {

// Row softmax with an optional key mask; rows with no valid key stay zero.
template <class T>
void softmax_rows(const T* x, T* y, std::int64_t rows, std::int64_t width, const std::uint8_t* mask,
                  std::int64_t rows_per_mask) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * width;
    T* yr = y + r * width;
    const std::uint8_t* mr = mask ? mask + (r / rows_per_mask) * width : nullptr;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t c = 0; c < width; ++c) {
      if (!mr || mr[c]) mx = std::max(mx, xr[c]);
    }
    if (mx == -std::numeric_limits<T>::infinity()) {
      std::fill(yr, yr + width, T(0));
      continue;
    }
    T total = 0;
    for (std::int64_t c = 0; c < width; ++c) {
      const T e = (!mr || mr[c]) ? std::exp(xr[c] - mx) : T(0);
      yr[c] = e;
      total += e;
    }
    const T inv = T(1) / total;
    for (std::int64_t c = 0; c < width; ++c) yr[c] *= inv;
  }
}

template <class T>
void softmax_backward(Node<T>& self, std::int64_t rows, std::int64_t width) {
  T* dx = input_grad(self, 0);
  if (!dx) return;
  const T* y = self.value.data();
  const T* dy = self.grad.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* yr = y + r * width;
    const T* gr = dy + r * width;
    T dot = 0;
    for (std::int64_t c = 0; c < width; ++c) dot += yr[c] * gr[c];
    T* dr = dx + r * width;
    for (std::int64_t c = 0; c < width; ++c) dr[c] += yr[c] * (gr[c] - dot);
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& a) {
  require_defined(a, "softmax");
  if (a.rank() < 1) throw ShapeError("softmax needs at least one axis");
  const std::int64_t width = a.shape().back();
  const std::int64_t rows = width == 0 ? 0 : a.numel() / width;
  auto out = make_output<T>(a.shape(), {&a});
  softmax_rows(a.values().data(), out->value.data(), rows, width, static_cast<const std::uint8_t*>(nullptr), 1);
  if (out->requires_grad) {
    out->backward = [rows, width](Node<T>& self) { softmax_backward(self, rows, width); };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> masked_softmax(const Tensor<T>& scores, std::span<const std::uint8_t> key_valid, int heads) {
  require_defined(scores, "masked_softmax");
  if (scores.rank() != 3 || scores.dim(1) != scores.dim(2) || heads < 1 || scores.dim(0) % heads != 0) {
    throw ShapeError("masked_softmax: expected [batch*heads, n, n], got " + to_string(scores.shape()));
  }
  const std::int64_t n = scores.dim(2);
  const std::int64_t batch = scores.dim(0) / heads;
  if (static_cast<std::int64_t>(key_valid.size()) != batch * n) {
    throw ShapeError("masked_softmax: mask has " + std::to_string(key_valid.size()) + " entries, expected " +
                     std::to_string(batch * n));
  }
  const std::int64_t rows = scores.dim(0) * n;
  auto out = make_output<T>(scores.shape(), {&scores});
  softmax_rows(scores.values().data(), out->value.data(), rows, n, key_valid.data(), heads * n);
  if (out->requires_grad) {
    out->backward = [rows, n](Node<T>& self) { softmax_backward(self, rows, n); };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_defined(x, "layer_norm");
  const std::int64_t width = x.shape().back();
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != width || beta.dim(0) != width) {
    shape_mismatch("layer_norm", x.shape(), gamma.shape());
  }
  const std::int64_t rows = x.numel() / width;
  auto out = make_output<T>(x.shape(), {&x, &gamma, &beta});
  Buffer<T> xhat(static_cast<std::size_t>(x.numel()));
  Buffer<T> rstd(static_cast<std::size_t>(rows));
  const T* xv = x.values().data();
  const T* g = gamma.values().data();
  const T* b = beta.values().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * width;
    T mean = 0;
    for (std::int64_t c = 0; c < width; ++c) mean += xr[c];
    mean /= static_cast<T>(width);
    T var = 0;
    for (std::int64_t c = 0; c < width; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(width);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    T* hr = xhat.data() + r * width;
    T* yr = out->value.data() + r * width;
    for (std::int64_t c = 0; c < width; ++c) {
      hr[c] = (xr[c] - mean) * rs;
      yr[c] = hr[c] * g[c] + b[c];
    }
  }
  if (out->requires_grad) {
    out->backward = [rows, width, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
      const T* dy = self.grad.data();
      const T* g = self.inputs[1]->value.data();
      T* dx = input_grad(self, 0);
      T* dg = input_grad(self, 1);
      T* db = input_grad(self, 2);
      Buffer<T> dh(static_cast<std::size_t>(width));
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* gr = dy + r * width;
        const T* hr = xhat.data() + r * width;
        if (dg || db) {
          for (std::int64_t c = 0; c < width; ++c) {
            if (dg) dg[c] += gr[c] * hr[c];
            if (db) db[c] += gr[c];
          }
        }
        if (!dx) continue;
        T mean_dh = 0, mean_dh_h = 0;
        for (std::int64_t c = 0; c < width; ++c) {
          dh[static_cast<std::size_t>(c)] = gr[c] * g[c];
          mean_dh += dh[static_cast<std::size_t>(c)];
          mean_dh_h += dh[static_cast<std::size_t>(c)] * hr[c];
        }
        mean_dh /= static_cast<T>(width);
        mean_dh_h /= static_cast<T>(width);
        const T rs = rstd[static_cast<std::size_t>(r)];
        T* dr = dx + r * width;
        for (std::int64_t c = 0; c < width; ++c) {
          dr[c] += rs * (dh[static_cast<std::size_t>(c)] - mean_dh - hr[c] * mean_dh_h);
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x) {
  require_defined(x, "gelu");
  const auto n = static_cast<Eigen::Index>(x.numel());
  auto out = make_output<T>(x.shape(), {&x});
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T c = static_cast<T>(0.044715);
  CMapA<T> xv(x.values().data(), n);
  Eigen::Array<T, Eigen::Dynamic, 1> th = (k * (xv + c * xv.cube())).tanh();
  MapA<T>(out->value.data(), n) = T(0.5) * xv * (T(1) + th);
  if (out->requires_grad) {
    out->backward = [n, k, c, th = std::move(th)](Node<T>& self) {
      T* dx = input_grad(self, 0);
      if (!dx) return;
      CMapA<T> xv(self.inputs[0]->value.data(), n);
      CMapA<T> g(self.grad.data(), n);
      MapA<T>(dx, n) += g * (T(0.5) * (T(1) + th) +
                             T(0.5) * xv * (T(1) - th.square()) * k * (T(1) + T(3) * c * xv.square()));
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_defined(table, "embedding");
  if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + to_string(table.shape()));
  const std::int64_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw ShapeError("embedding id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
    }
  }
  auto out = make_output<T>({static_cast<std::int64_t>(ids.size()), d}, {&table});
  const T* tv = table.values().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv + ids[i] * d, d, out->value.data() + static_cast<std::int64_t>(i) * d);
  }
  if (out->requires_grad) {
    out->backward = [d, ids = std::vector<int>(ids.begin(), ids.end())](Node<T>& self) {
      T* dt = input_grad(self, 0);
      if (!dt) return;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const T* g = self.grad.data() + static_cast<std::int64_t>(i) * d;
        T* row = dt + ids[i] * d;
        for (std::int64_t c = 0; c < d; ++c) row[c] += g[c];
      }
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  auto out = make_output<T>(std::move(shape), {&x});
  std::copy(x.values().begin(), x.values().end(), out->value.begin());
  if (out->requires_grad) {
    out->backward = [](Node<T>& self) {
      T* dx = input_grad(self, 0);
      if (!dx) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> swap_axes12(const Tensor<T>& x) {
  require_defined(x, "swap_axes12");
  if (x.rank() != 4) throw ShapeError("swap_axes12 needs a 4-D tensor, got " + to_string(x.shape()));
  const std::int64_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  auto out = make_output<T>({A, C, B, D}, {&x});
  const T* src = x.values().data();
  T* dst = out->value.data();
  for (std::int64_t a = 0; a < A; ++a)
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        std::copy_n(src + ((a * B + b) * C + c) * D, D, dst + ((a * C + c) * B + b) * D);
  if (out->requires_grad) {
    out->backward = [A, B, C, D](Node<T>& self) {
      T* dx = input_grad(self, 0);
      if (!dx) return;
      const T* g = self.grad.data();
      for (std::int64_t a = 0; a < A; ++a)
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c) {
            const T* gs = g + ((a * C + c) * B + b) * D;
            T* xs = dx + ((a * B + b) * C + c) * D;
            for (std::int64_t i = 0; i < D; ++i) xs[i] += gs[i];
          }
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_defined(logits, "masked_cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw ShapeError("masked_cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::int64_t rows = logits.dim(0), classes = logits.dim(1);
  std::int64_t count = 0;
  for (int l : labels) {
    if (l >= classes) throw ShapeError("label " + std::to_string(l) + " outside " + std::to_string(classes) + " classes");
    if (l >= 0) ++count;
  }
  if (count == 0) throw TrainingError("masked_cross_entropy: no labeled positions");

  auto out = make_output<T>({}, {&logits});
  Buffer<T> probs(static_cast<std::size_t>(rows * classes), T(0));
  const T* lv = logits.values().data();
  T total = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0) continue;
    softmax_rows(lv + r * classes, probs.data() + r * classes, 1, classes, static_cast<const std::uint8_t*>(nullptr), 1);
    const T* xr = lv + r * classes;
    T mx = *std::max_element(xr, xr + classes);
    T lse = 0;
    for (std::int64_t c = 0; c < classes; ++c) lse += std::exp(xr[c] - mx);
    total += mx + std::log(lse) - xr[label];
  }
  out->value[0] = total / static_cast<T>(count);
  if (out->requires_grad) {
    out->backward = [rows, classes, count, probs = std::move(probs),
                     labels = std::vector<int>(labels.begin(), labels.end())](Node<T>& self) {
      T* dx = input_grad(self, 0);
      if (!dx) return;
      const T g = self.grad[0] / static_cast<T>(count);
      for (std::int64_t r = 0; r < rows; ++r) {
        const int label = labels[static_cast<std::size_t>(r)];
        if (label < 0) continue;
        for (std::int64_t c = 0; c < classes; ++c) {
          const T target = c == label ? T(1) : T(0);
          dx[r * classes + c] += g * (probs[static_cast<std::size_t>(r * classes + c)] - target);
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <std::floating_point T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  require_defined(x, "dropout");
  if (p < 0.0 || p >= 1.0) throw ShapeError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const T factor = static_cast<T>(1.0 / (1.0 - p));
  Buffer<T> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) m = keep(rng) ? factor : T(0);
  auto out = make_output<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < mask.size(); ++i) out->value[i] = x.values()[i] * mask[i];
  if (out->requires_grad) {
    out->backward = [mask = std::move(mask)](Node<T>& self) {
      T* dx = input_grad(self, 0);
      if (!dx) return;
      for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += self.grad[i] * mask[i];
    };
  }
  return Tensor<T>(out);
}

#define LEGO_INSTANTIATE(T)                                                                       \
  template struct Node<T>;                                                                        \
  template class Tensor<T>;                                                                       \
  template void backward<T>(const Tensor<T>&);                                                    \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool);                         \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                               \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                    \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                \
  template Tensor<T> masked_softmax<T>(const Tensor<T>&, std::span<const std::uint8_t>, int);     \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                   \
  template Tensor<T> embedding<T>(const Tensor<T>&, std::span<const int>);                        \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                         \
  template Tensor<T> swap_axes12<T>(const Tensor<T>&);                                            \
  template Tensor<T> masked_cross_entropy<T>(const Tensor<T>&, std::span<const int>);             \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng&);

LEGO_INSTANTIATE(float)
LEGO_INSTANTIATE(double)

#undef LEGO_INSTANTIATE

}  // namespace lego::ag
