#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtpt/rng.hpp"

namespace vtpt {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename S>
class Tape;

template <typename S>
struct TensorData {
  Shape shape;
  std::shared_ptr<std::vector<S>> value;
  std::vector<S> grad;  // empty until first accumulation; then value-sized
  bool requires_grad = false;
  const void* tape = nullptr;  // tape that produced this tensor; null for leaves
};

/// Dense row-major tensor handle with value semantics over shared storage.
/// Gradients live beside the values and are accumulated by Tape::backward.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false);
  static Tensor scalar(S v);
  /// Normal(0, stddev) entries drawn from rng (two counter steps per entry).
  static Tensor randn(Shape shape, Rng& rng, S stddev, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int dim(size_t i) const { return d_->shape[i]; }
  int rows() const;  // leading extents collapsed: numel / last extent
  int cols() const { return d_->shape.empty() ? 1 : d_->shape.back(); }
  int64_t numel() const { return static_cast<int64_t>(d_->value->size()); }

  S* data() { return d_->value->data(); }
  const S* data() const { return d_->value->data(); }
  std::vector<S>& values() { return *d_->value; }
  const std::vector<S>& values() const { return *d_->value; }
  S item() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }
  bool grad_allocated() const { return !d_->grad.empty(); }
  /// Gradient buffer, zero-initialised on first access.
  std::vector<S>& grad();
  const std::vector<S>& grad() const;
  void zero_grad();

  /// A tensor sharing this tensor's value buffer but owning its own gradient.
  /// Used by parallel workers so accumulation never races on shared buffers.
  Tensor shadow() const;

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out = Tensor<T>::zeros(d_->shape, d_->requires_grad);
    for (int64_t i = 0; i < numel(); ++i) out.data()[i] = static_cast<T>(data()[i]);
    return out;
  }

  std::shared_ptr<TensorData<S>> raw() const { return d_; }

 private:
  friend class Tape<S>;
  std::shared_ptr<TensorData<S>> d_;
};

/// Named learnable parameters with deterministic (lexicographic) iteration.
template <typename S>
class ParamSet {
 public:
  void add(const std::string& name, Tensor<S> t);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor<S>& at(const std::string& name);
  const Tensor<S>& at(const std::string& name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  int64_t total_elements() const;
  void zero_grads();

  /// Shadow of every tensor: shared values, private grads.
  ParamSet shadow() const;

  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (const auto& [name, t] : params_) out.add(name, t.template cast<T>());
    return out;
  }

 private:
  std::map<std::string, Tensor<S>> params_;
};

/// Records primitive applications in execution order. Entries are closed over
/// their operands, so replaying the list backwards visits each exactly once
/// and accumulates gradients into every requires_grad leaf.
template <typename S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  size_t node_count() const { return nodes_.size(); }

  // ---- primitives ----
  Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
  /// y = x·w (+ bias). x is treated as [rows, in]; any leading shape is kept.
  Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias = {});
  Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> scale(const Tensor<S>& x, S c);
  /// tanh-approximation gelu: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
  Tensor<S> gelu(const Tensor<S>& x);
  /// Last-axis softmax with max subtraction.
  Tensor<S> softmax(const Tensor<S>& x);
  Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                       S eps = S(1e-6));
  /// Multi-head self-attention over fused qkv rows. qkv is [batch*tokens, 3*dim],
  /// laid out [q | k | v]; returns [batch*tokens, dim].
  Tensor<S> attention(const Tensor<S>& qkv, int batch, int tokens, int heads);
  Tensor<S> gather_rows(const Tensor<S>& x, std::vector<int> idx);
  /// out[idx[i]] = x[i]; unindexed rows are zero, duplicate targets sum.
  Tensor<S> scatter_rows(const Tensor<S>& x, std::vector<int> idx, int out_rows);
  Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> reshape(const Tensor<S>& x, Shape shape);
  /// Inverted-dropout mask, deterministic given rng. rate==0 is the identity.
  Tensor<S> dropout(const Tensor<S>& x, double rate, Rng& rng);
  Tensor<S> sum(const Tensor<S>& x);
  /// Mean squared error over all elements, or over keep!=0 elements when a
  /// keep vector (numel-sized) is given. Gradient is 2(pred-target)/n_kept on
  /// kept elements and exactly zero elsewhere.
  Tensor<S> mse(const Tensor<S>& pred, const Tensor<S>& target);
  Tensor<S> mse(const Tensor<S>& pred, const Tensor<S>& target, std::vector<uint8_t> keep);
  /// Mean cross-entropy of row-wise logits against integer labels.
  Tensor<S> cross_entropy(const Tensor<S>& logits, std::vector<int> labels);
  /// Reassembles per-patch rows [batch*gr*gc, 3*p*p] into images [batch, 3, H, W].
  /// Patch rows are channel-major then row-major, matching patchify.
  Tensor<S> unpatchify(const Tensor<S>& x, int batch, int grid_rows, int grid_cols, int patch);
  /// Exact box-overlap (area) resample of [batch, 3, H, W] images.
  Tensor<S> area_resize(const Tensor<S>& x, int out_h, int out_w);

  /// Seeds d(loss)/d(loss)=1 and replays the tape in reverse. Repeated calls
  /// accumulate. loss must be scalar and produced by this tape.
  void backward(const Tensor<S>& loss);

 private:
  Tensor<S> make(Shape shape, bool grad_needed);
  bool track(std::initializer_list<const Tensor<S>*> ins) const;

  struct Node {
    Tensor<S> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  bool recording_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace vtpt
