#pragma once

#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <new>
#include <vector>

#include "lego/random.hpp"

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Every op whose inputs require gradients records its inputs and a local
// gradient rule on the output node; nodes are stamped with a monotonically
// increasing sequence number, so sorting reachable nodes by that number
// recovers execution order. backward() replays the rules in reverse, then
// drops the recorded graph.
namespace lego::ag {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// 64-byte aligned storage. Vectorized reductions peel a head that depends on
// the buffer address, so unaligned buffers give run-to-run rounding noise.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <std::floating_point T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Gradient buffer, allocated as zeros on first use.
  T* grad_buffer();
};

template <std::floating_point T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad();

  // Independent leaf with copied values.
  Tensor detach_copy(bool requires_grad = false) const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables recording in this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Accumulates d(loss)/d(x) into every reachable tensor that requires grad.
// `loss` must be a scalar produced with recording enabled.
template <std::floating_point T>
void backward(const Tensor<T>& loss);

// --- ops -----------------------------------------------------------------

// 2-D: a[m,k] · b[k,n] (b[n,k] when transpose_b). 3-D: batched over axis 0.
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// x[..., in] · w[in, out] + bias[out]
template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a);

// Softmax over the last axis.
template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& a);

// Attention softmax. scores: [batch*heads, n, n]; key_valid: batch*n flags,
// zero entries receive probability 0.
template <std::floating_point T>
Tensor<T> masked_softmax(const Tensor<T>& scores, std::span<const std::uint8_t> key_valid, int heads);

// Normalizes the last axis then applies gamma/beta.
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// tanh approximation of GELU.
template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x);

// Rows of table[vocab, d] gathered by ids -> [ids.size(), d].
template <std::floating_point T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// [a, b, c, d] -> [a, c, b, d]
template <std::floating_point T>
Tensor<T> swap_axes12(const Tensor<T>& x);

// Mean cross-entropy over rows of logits[N, C] whose label is >= 0; rows
// with a negative label contribute nothing (and receive zero gradient).
template <std::floating_point T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Inverted dropout; identity when p == 0.
template <std::floating_point T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng);

}  // namespace lego::ag
