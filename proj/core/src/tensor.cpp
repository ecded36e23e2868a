#include "vtpt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vtpt {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Map = Eigen::Map<EMat<S>>;
template <typename S>
using CMap = Eigen::Map<const EMat<S>>;

/// True when b's shape is a strict suffix of a's (the only broadcast allowed).
bool suffix_shape(const Shape& a, const Shape& b) {
  if (b.size() >= a.size()) return false;
  for (size_t i = 0; i < b.size(); ++i)
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------- Tensor

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  check(!shape.empty(), "tensor: empty shape");
  for (int e : shape) check(e > 0, "tensor: non-positive extent in " + shape_str(shape));
  auto d = std::make_shared<TensorData<S>>();
  d->shape = std::move(shape);
  d->value = std::make_shared<std::vector<S>>(shape_numel(d->shape), S(0));
  d->requires_grad = requires_grad;
  Tensor t;
  t.d_ = std::move(d);
  return t;
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S fill, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), fill);
  return t;
}

template <typename S>
Tensor<S> Tensor<S>::from(Shape shape, std::vector<S> values, bool requires_grad) {
  check(shape_numel(shape) == static_cast<int64_t>(values.size()),
        "tensor: value count does not match shape " + shape_str(shape));
  Tensor t = zeros(std::move(shape), requires_grad);
  *t.d_->value = std::move(values);
  return t;
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S v) {
  return full({1}, v);
}

template <typename S>
Tensor<S> Tensor<S>::randn(Shape shape, Rng& rng, S stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = static_cast<S>(rng.normal()) * stddev;
  return t;
}

template <typename S>
int Tensor<S>::rows() const {
  return static_cast<int>(numel() / cols());
}

template <typename S>
S Tensor<S>::item() const {
  check(numel() == 1, "item: tensor is not scalar, shape " + shape_str(shape()));
  return data()[0];
}

template <typename S>
std::vector<S>& Tensor<S>::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->value->size(), S(0));
  return d_->grad;
}

template <typename S>
const std::vector<S>& Tensor<S>::grad() const {
  check(!d_->grad.empty(), "grad: no gradient accumulated yet");
  return d_->grad;
}

template <typename S>
void Tensor<S>::zero_grad() {
  std::fill(d_->grad.begin(), d_->grad.end(), S(0));
}

template <typename S>
Tensor<S> Tensor<S>::shadow() const {
  auto d = std::make_shared<TensorData<S>>();
  d->shape = d_->shape;
  d->value = d_->value;  // shared storage
  d->requires_grad = d_->requires_grad;
  Tensor t;
  t.d_ = std::move(d);
  return t;
}

// ---------------------------------------------------------------- ParamSet

template <typename S>
void ParamSet<S>::add(const std::string& name, Tensor<S> t) {
  check(!name.empty(), "params: empty name");
  check(params_.emplace(name, std::move(t)).second, "params: duplicate name " + name);
}

template <typename S>
Tensor<S>& ParamSet<S>::at(const std::string& name) {
  auto it = params_.find(name);
  check(it != params_.end(), "params: unknown name " + name);
  return it->second;
}

template <typename S>
const Tensor<S>& ParamSet<S>::at(const std::string& name) const {
  auto it = params_.find(name);
  check(it != params_.end(), "params: unknown name " + name);
  return it->second;
}

template <typename S>
int64_t ParamSet<S>::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename S>
void ParamSet<S>::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

template <typename S>
ParamSet<S> ParamSet<S>::shadow() const {
  ParamSet out;
  for (const auto& [name, t] : params_) out.add(name, t.shadow());
  return out;
}

// ---------------------------------------------------------------- Tape

template <typename S>
Tensor<S> Tape<S>::make(Shape shape, bool grad_needed) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  t.d_->requires_grad = grad_needed;
  t.d_->tape = this;
  return t;
}

template <typename S>
bool Tape<S>::track(std::initializer_list<const Tensor<S>*> ins) const {
  if (!recording_) return false;
  for (const Tensor<S>* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename S>
void Tape<S>::backward(const Tensor<S>& loss) {
  check(loss.defined() && loss.numel() == 1,
        "backward: loss must be a scalar tensor");
  check(loss.raw()->tape == this, "backward: loss was not produced by this tape");
  // Intermediate grads are transient: clear them so repeated calls accumulate
  // exactly one more unit into the leaves.
  for (auto& node : nodes_) {
    auto& grad = node.out.raw()->grad;
    std::fill(grad.begin(), grad.end(), S(0));
  }
  loss.raw()->grad.resize(1, S(0));
  loss.raw()->grad[0] = S(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
}

// ---- matmul ----

template <typename S>
Tensor<S> Tape<S>::matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2,
        "matmul: expects 2-d operands, got " + shape_str(a.shape()) + " and " +
            shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  check(k == k2, "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<S> out = make({m, n}, track({&a, &b}));
  CMap<S> A(a.data(), m, k), B(b.data(), k, n);
  Map<S>(out.data(), m, n).noalias() = A * B;
  if (out.requires_grad()) {
    nodes_.push_back({out, [a = a, b = b, out, m, k, n]() mutable {
      CMap<S> G(out.grad().data(), m, n);
      if (a.requires_grad()) {
        CMap<S> B(b.data(), k, n);
        Map<S>(a.grad().data(), m, k).noalias() += G * B.transpose();
      }
      if (b.requires_grad()) {
        CMap<S> A(a.data(), m, k);
        Map<S>(b.grad().data(), k, n).noalias() += A.transpose() * G;
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
  check(w.shape().size() == 2, "linear: weight must be 2-d");
  int in = w.dim(0), outc = w.dim(1);
  check(x.cols() == in, "linear: input width " + std::to_string(x.cols()) +
                            " does not match weight " + shape_str(w.shape()));
  if (bias.defined())
    check(bias.numel() == outc, "linear: bias size does not match weight");
  int n = x.rows();
  Shape out_shape = x.shape();
  out_shape.back() = outc;
  Tensor<S> out = make(out_shape, track({&x, &w, &bias}));
  CMap<S> X(x.data(), n, in), W(w.data(), in, outc);
  Map<S> Y(out.data(), n, outc);
  Y.noalias() = X * W;
  if (bias.defined()) {
    CMap<S> B(bias.data(), 1, outc);
    Y.rowwise() += B.row(0);
  }
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, w = w, bias = bias, out, n, in, outc]() mutable {
      CMap<S> G(out.grad().data(), n, outc);
      if (x.requires_grad()) {
        CMap<S> W(w.data(), in, outc);
        Map<S>(x.grad().data(), n, in).noalias() += G * W.transpose();
      }
      if (w.requires_grad()) {
        CMap<S> X(x.data(), n, in);
        Map<S>(w.grad().data(), in, outc).noalias() += X.transpose() * G;
      }
      if (bias.defined() && bias.requires_grad()) {
        // Fixed-order accumulation: Eigen's colwise reduction order varies
        // with buffer alignment, which would break bitwise reproducibility.
        S* gb = bias.grad().data();
        const S* gp = out.grad().data();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < outc; ++j) gb[j] += gp[static_cast<int64_t>(i) * outc + j];
      }
    }});
  }
  return out;
}

// ---- elementwise ----

template <typename S>
static void check_broadcast(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() == b.shape()) return;
  if (suffix_shape(a.shape(), b.shape())) return;
  throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a.shape()) +
                              " and " + shape_str(b.shape()) +
                              " are not broadcast-compatible (suffix broadcast only)");
}

template <typename S>
Tensor<S> Tape<S>::add(const Tensor<S>& a, const Tensor<S>& b) {
  check_broadcast(a, b, "add");
  int64_t n = a.numel(), bn = b.numel();
  Tensor<S> out = make(a.shape(), track({&a, &b}));
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % bn];
  if (out.requires_grad()) {
    nodes_.push_back({out, [a = a, b = b, out, n, bn]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad()) {
        S* ga = a.grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad().data();
        for (int64_t i = 0; i < n; ++i) gb[i % bn] += g[i];
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_broadcast(a, b, "sub");
  int64_t n = a.numel(), bn = b.numel();
  Tensor<S> out = make(a.shape(), track({&a, &b}));
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i % bn];
  if (out.requires_grad()) {
    nodes_.push_back({out, [a = a, b = b, out, n, bn]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad()) {
        S* ga = a.grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad().data();
        for (int64_t i = 0; i < n; ++i) gb[i % bn] -= g[i];
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_broadcast(a, b, "mul");
  int64_t n = a.numel(), bn = b.numel();
  Tensor<S> out = make(a.shape(), track({&a, &b}));
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i % bn];
  if (out.requires_grad()) {
    nodes_.push_back({out, [a = a, b = b, out, n, bn]() mutable {
      const S* g = out.grad().data();
      const S* pa = a.data();
      const S* pb = b.data();
      if (a.requires_grad()) {
        S* ga = a.grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i % bn];
      }
      if (b.requires_grad()) {
        S* gb = b.grad().data();
        for (int64_t i = 0; i < n; ++i) gb[i % bn] += g[i] * pa[i];
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::scale(const Tensor<S>& x, S c) {
  int64_t n = x.numel();
  Tensor<S> out = make(x.shape(), track({&x}));
  const S* px = x.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * c;
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out, c, n]() mutable {
      const S* g = out.grad().data();
      S* gx = x.grad().data();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * c;
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::gelu(const Tensor<S>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  int64_t n = x.numel();
  Tensor<S> out = make(x.shape(), track({&x}));
  const S* px = x.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    double v = px[i];
    po[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
  }
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out, n]() mutable {
      const S* g = out.grad().data();
      const S* px = x.data();
      S* gx = x.grad().data();
      for (int64_t i = 0; i < n; ++i) {
        double v = px[i];
        double t = std::tanh(kC * (v + kA * v * v * v));
        double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
        gx[i] += g[i] * static_cast<S>(d);
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::softmax(const Tensor<S>& x) {
  int c = x.cols(), r = x.rows();
  check(c >= 1, "softmax: empty last axis");
  Tensor<S> out = make(x.shape(), track({&x}));
  const S* px = x.data();
  S* po = out.data();
  for (int i = 0; i < r; ++i) {
    const S* row = px + static_cast<int64_t>(i) * c;
    S* orow = po + static_cast<int64_t>(i) * c;
    S m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0;
    for (int j = 0; j < c; ++j) {
      double e = std::exp(static_cast<double>(row[j] - m));
      orow[j] = static_cast<S>(e);
      z += e;
    }
    double inv = 1.0 / z;
    for (int j = 0; j < c; ++j) orow[j] = static_cast<S>(orow[j] * inv);
  }
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out, r, c]() mutable {
      const S* g = out.grad().data();
      const S* y = out.data();
      S* gx = x.grad().data();
      for (int i = 0; i < r; ++i) {
        int64_t off = static_cast<int64_t>(i) * c;
        double dot = 0;
        for (int j = 0; j < c; ++j) dot += static_cast<double>(g[off + j]) * y[off + j];
        for (int j = 0; j < c; ++j)
          gx[off + j] += static_cast<S>(y[off + j] * (g[off + j] - dot));
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                              const Tensor<S>& beta, S eps) {
  int d = x.cols(), r = x.rows();
  check(d >= 1, "layer_norm: empty last axis");
  check(eps > S(0), "layer_norm: eps must be positive");
  check(gamma.numel() == d && beta.numel() == d,
        "layer_norm: gamma/beta must have the feature width " + std::to_string(d));
  Tensor<S> out = make(x.shape(), track({&x, &gamma, &beta}));
  auto mean = std::make_shared<std::vector<S>>(r);
  auto inv = std::make_shared<std::vector<S>>(r);
  const S* px = x.data();
  const S* pg = gamma.data();
  const S* pb = beta.data();
  S* po = out.data();
  for (int i = 0; i < r; ++i) {
    int64_t off = static_cast<int64_t>(i) * d;
    double mu = 0;
    for (int j = 0; j < d; ++j) mu += px[off + j];
    mu /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) {
      double c = px[off + j] - mu;
      var += c * c;
    }
    var /= d;
    double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*mean)[i] = static_cast<S>(mu);
    (*inv)[i] = static_cast<S>(is);
    for (int j = 0; j < d; ++j)
      po[off + j] = static_cast<S>((px[off + j] - mu) * is) * pg[j] + pb[j];
  }
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, gamma = gamma, beta = beta, out, mean, inv, r, d]() mutable {
      const S* g = out.grad().data();
      const S* px = x.data();
      const S* pg = gamma.data();
      for (int i = 0; i < r; ++i) {
        int64_t off = static_cast<int64_t>(i) * d;
        double mu = (*mean)[i], is = (*inv)[i];
        if (gamma.requires_grad() || beta.requires_grad()) {
          S* gg = gamma.requires_grad() ? gamma.grad().data() : nullptr;
          S* gb = beta.requires_grad() ? beta.grad().data() : nullptr;
          for (int j = 0; j < d; ++j) {
            S xhat = static_cast<S>((px[off + j] - mu) * is);
            if (gg) gg[j] += g[off + j] * xhat;
            if (gb) gb[j] += g[off + j];
          }
        }
        if (x.requires_grad()) {
          double mean_h = 0, mean_hx = 0;
          for (int j = 0; j < d; ++j) {
            double h = static_cast<double>(g[off + j]) * pg[j];
            double xhat = (px[off + j] - mu) * is;
            mean_h += h;
            mean_hx += h * xhat;
          }
          mean_h /= d;
          mean_hx /= d;
          S* gx = x.grad().data();
          for (int j = 0; j < d; ++j) {
            double h = static_cast<double>(g[off + j]) * pg[j];
            double xhat = (px[off + j] - mu) * is;
            gx[off + j] += static_cast<S>((h - mean_h - xhat * mean_hx) * is);
          }
        }
      }
    }});
  }
  return out;
}

// ---- attention ----

template <typename S>
Tensor<S> Tape<S>::attention(const Tensor<S>& qkv, int batch, int tokens, int heads) {
  check(qkv.shape().size() == 2, "attention: qkv must be 2-d");
  check(qkv.dim(0) == batch * tokens,
        "attention: row count != batch*tokens (" + shape_str(qkv.shape()) + ")");
  check(qkv.dim(1) % 3 == 0, "attention: qkv width must be 3*dim");
  int dim = qkv.dim(1) / 3;
  check(dim % heads == 0, "attention: dim not divisible by heads");
  int hd = dim / heads;
  S att_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

  Tensor<S> out = make({batch * tokens, dim}, track({&qkv}));
  // Saved softmax matrices, one T x T block per (batch, head).
  auto probs = std::make_shared<std::vector<S>>(
      static_cast<size_t>(batch) * heads * tokens * tokens);

  const int w = 3 * dim;
  using Stride = Eigen::Stride<Eigen::Dynamic, 1>;
  using StrideMap = Eigen::Map<const EMat<S>, 0, Stride>;
  using StrideMapMut = Eigen::Map<EMat<S>, 0, Stride>;
  EMat<S> scores(tokens, tokens);
  for (int b = 0; b < batch; ++b) {
    const S* base = qkv.data() + static_cast<int64_t>(b) * tokens * w;
    S* obase = out.data() + static_cast<int64_t>(b) * tokens * dim;
    for (int h = 0; h < heads; ++h) {
      StrideMap Q(base + h * hd, tokens, hd, Stride(w, 1));
      StrideMap K(base + dim + h * hd, tokens, hd, Stride(w, 1));
      StrideMap V(base + 2 * dim + h * hd, tokens, hd, Stride(w, 1));
      scores.noalias() = Q * K.transpose();
      scores *= att_scale;
      S* A = probs->data() + (static_cast<size_t>(b) * heads + h) * tokens * tokens;
      for (int i = 0; i < tokens; ++i) {
        S* srow = scores.data() + static_cast<int64_t>(i) * tokens;
        S m = srow[0];
        for (int j = 1; j < tokens; ++j) m = std::max(m, srow[j]);
        double z = 0;
        for (int j = 0; j < tokens; ++j) {
          double e = std::exp(static_cast<double>(srow[j] - m));
          A[static_cast<int64_t>(i) * tokens + j] = static_cast<S>(e);
          z += e;
        }
        double invz = 1.0 / z;
        for (int j = 0; j < tokens; ++j)
          A[static_cast<int64_t>(i) * tokens + j] =
              static_cast<S>(A[static_cast<int64_t>(i) * tokens + j] * invz);
      }
      CMap<S> Amap(A, tokens, tokens);
      StrideMapMut O(obase + h * hd, tokens, hd, Stride(dim, 1));
      O.noalias() = Amap * V;
    }
  }

  if (out.requires_grad()) {
    nodes_.push_back({out, [qkv = qkv, out, probs, batch, tokens, heads, dim, hd, att_scale, w]() mutable {
      if (!qkv.requires_grad()) return;
      S* gq = qkv.grad().data();
      const S* g = out.grad().data();
      EMat<S> dA(tokens, tokens), dS(tokens, tokens);
      for (int b = 0; b < batch; ++b) {
        const S* base = qkv.data() + static_cast<int64_t>(b) * tokens * w;
        S* gbase = gq + static_cast<int64_t>(b) * tokens * w;
        const S* obase = g + static_cast<int64_t>(b) * tokens * dim;
        for (int h = 0; h < heads; ++h) {
          StrideMap Q(base + h * hd, tokens, hd, Stride(w, 1));
          StrideMap K(base + dim + h * hd, tokens, hd, Stride(w, 1));
          StrideMap V(base + 2 * dim + h * hd, tokens, hd, Stride(w, 1));
          StrideMapMut dQ(gbase + h * hd, tokens, hd, Stride(w, 1));
          StrideMapMut dK(gbase + dim + h * hd, tokens, hd, Stride(w, 1));
          StrideMapMut dV(gbase + 2 * dim + h * hd, tokens, hd, Stride(w, 1));
          StrideMap GO(obase + h * hd, tokens, hd, Stride(dim, 1));
          CMap<S> A(probs->data() + (static_cast<size_t>(b) * heads + h) * tokens * tokens,
                    tokens, tokens);
          dV.noalias() += A.transpose() * GO;
          dA.noalias() = GO * V.transpose();
          // softmax backward, rowwise
          for (int i = 0; i < tokens; ++i) {
            double dot = 0;
            for (int j = 0; j < tokens; ++j)
              dot += static_cast<double>(dA(i, j)) * A(i, j);
            for (int j = 0; j < tokens; ++j)
              dS(i, j) = static_cast<S>(A(i, j) * (dA(i, j) - dot)) * att_scale;
          }
          dQ.noalias() += dS * K;
          dK.noalias() += dS.transpose() * Q;
        }
      }
    }});
  }
  return out;
}

// ---- row plumbing ----

template <typename S>
Tensor<S> Tape<S>::gather_rows(const Tensor<S>& x, std::vector<int> idx) {
  int c = x.cols(), r = x.rows();
  for (int i : idx)
    check(i >= 0 && i < r, "gather_rows: index " + std::to_string(i) + " out of range");
  Tensor<S> out = make({static_cast<int>(idx.size()), c}, track({&x}));
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.data() + static_cast<int64_t>(idx[i]) * c, c,
                out.data() + static_cast<int64_t>(i) * c);
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out, idx = std::move(idx), c]() mutable {
      const S* g = out.grad().data();
      S* gx = x.grad().data();
      for (size_t i = 0; i < idx.size(); ++i) {
        const S* src = g + static_cast<int64_t>(i) * c;
        S* dst = gx + static_cast<int64_t>(idx[i]) * c;
        for (int j = 0; j < c; ++j) dst[j] += src[j];
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::scatter_rows(const Tensor<S>& x, std::vector<int> idx, int out_rows) {
  int c = x.cols(), r = x.rows();
  check(static_cast<int>(idx.size()) == r, "scatter_rows: index count != rows");
  for (int i : idx)
    check(i >= 0 && i < out_rows, "scatter_rows: index " + std::to_string(i) + " out of range");
  Tensor<S> out = make({out_rows, c}, track({&x}));
  for (size_t i = 0; i < idx.size(); ++i) {
    const S* src = x.data() + static_cast<int64_t>(i) * c;
    S* dst = out.data() + static_cast<int64_t>(idx[i]) * c;
    for (int j = 0; j < c; ++j) dst[j] += src[j];
  }
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out, idx = std::move(idx), c]() mutable {
      const S* g = out.grad().data();
      S* gx = x.grad().data();
      for (size_t i = 0; i < idx.size(); ++i) {
        const S* src = g + static_cast<int64_t>(idx[i]) * c;
        S* dst = gx + static_cast<int64_t>(i) * c;
        for (int j = 0; j < c; ++j) dst[j] += src[j];
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.cols() == b.cols(), "concat_rows: column widths differ");
  int c = a.cols(), ra = a.rows(), rb = b.rows();
  Tensor<S> out = make({ra + rb, c}, track({&a, &b}));
  std::copy_n(a.data(), static_cast<int64_t>(ra) * c, out.data());
  std::copy_n(b.data(), static_cast<int64_t>(rb) * c,
              out.data() + static_cast<int64_t>(ra) * c);
  if (out.requires_grad()) {
    nodes_.push_back({out, [a = a, b = b, out, ra, rb, c]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad()) {
        S* ga = a.grad().data();
        for (int64_t i = 0; i < static_cast<int64_t>(ra) * c; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad().data();
        const S* gsrc = g + static_cast<int64_t>(ra) * c;
        for (int64_t i = 0; i < static_cast<int64_t>(rb) * c; ++i) gb[i] += gsrc[i];
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::reshape(const Tensor<S>& x, Shape shape) {
  check(shape_numel(shape) == x.numel(),
        "reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<S> out = make(std::move(shape), track({&x}));
  std::copy_n(x.data(), x.numel(), out.data());
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out]() mutable {
      const S* g = out.grad().data();
      S* gx = x.grad().data();
      for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i];
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::dropout(const Tensor<S>& x, double rate, Rng& rng) {
  check(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<S>>(n);
  S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < n; ++i)
    (*mask)[i] = rng.next_double() < rate ? S(0) : keep_scale;
  Tensor<S> out = make(x.shape(), track({&x}));
  const S* px = x.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * (*mask)[i];
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out, mask, n]() mutable {
      const S* g = out.grad().data();
      S* gx = x.grad().data();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * (*mask)[i];
    }});
  }
  return out;
}

// ---- reductions / losses ----

template <typename S>
Tensor<S> Tape<S>::sum(const Tensor<S>& x) {
  Tensor<S> out = make({1}, track({&x}));
  double acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  out.data()[0] = static_cast<S>(acc);
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out]() mutable {
      S g = out.grad()[0];
      S* gx = x.grad().data();
      for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::mse(const Tensor<S>& pred, const Tensor<S>& target) {
  return mse(pred, target, {});
}

template <typename S>
Tensor<S> Tape<S>::mse(const Tensor<S>& pred, const Tensor<S>& target,
                       std::vector<uint8_t> keep) {
  check(pred.shape() == target.shape(),
        "mse: shapes differ, " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  int64_t n = pred.numel();
  check(keep.empty() || static_cast<int64_t>(keep.size()) == n,
        "mse: keep mask must cover every element");
  int64_t selected = keep.empty() ? n : std::count_if(keep.begin(), keep.end(),
                                                      [](uint8_t k) { return k != 0; });
  check(selected > 0, "mse: no elements selected");
  Tensor<S> out = make({1}, track({&pred, &target}));
  const S* p = pred.data();
  const S* t = target.data();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!keep.empty() && !keep[i]) continue;
    double d = static_cast<double>(p[i]) - t[i];
    acc += d * d;
  }
  out.data()[0] = static_cast<S>(acc / selected);
  if (out.requires_grad()) {
    nodes_.push_back({out, [pred = pred, target = target, out, keep = std::move(keep), n, selected]() mutable {
      S g = out.grad()[0];
      const S* p = pred.data();
      const S* t = target.data();
      S c = g * S(2) / static_cast<S>(selected);
      S* gp = pred.requires_grad() ? pred.grad().data() : nullptr;
      S* gt = target.requires_grad() ? target.grad().data() : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        if (!keep.empty() && !keep[i]) continue;
        S d = c * (p[i] - t[i]);
        if (gp) gp[i] += d;
        if (gt) gt[i] -= d;
      }
    }});
  }
  return out;
}

template <typename S>
Tensor<S> Tape<S>::cross_entropy(const Tensor<S>& logits, std::vector<int> labels) {
  check(logits.shape().size() == 2, "cross_entropy: logits must be 2-d");
  int b = logits.dim(0), c = logits.dim(1);
  check(static_cast<int>(labels.size()) == b, "cross_entropy: label count != batch");
  for (int y : labels)
    check(y >= 0 && y < c, "cross_entropy: label " + std::to_string(y) + " out of range");
  Tensor<S> out = make({1}, track({&logits}));
  const S* p = logits.data();
  double acc = 0;
  for (int i = 0; i < b; ++i) {
    const S* row = p + static_cast<int64_t>(i) * c;
    S m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - m));
    acc += m + std::log(z) - row[labels[i]];
  }
  out.data()[0] = static_cast<S>(acc / b);
  if (out.requires_grad()) {
    nodes_.push_back({out, [logits = logits, out, labels = std::move(labels), b, c]() mutable {
      S g = out.grad()[0];
      const S* p = logits.data();
      S* gx = logits.grad().data();
      for (int i = 0; i < b; ++i) {
        const S* row = p + static_cast<int64_t>(i) * c;
        S* grow = gx + static_cast<int64_t>(i) * c;
        S m = row[0];
        for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
        double z = 0;
        for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - m));
        for (int j = 0; j < c; ++j) {
          double soft = std::exp(static_cast<double>(row[j] - m)) / z;
          double onehot = (j == labels[i]) ? 1.0 : 0.0;
          grow[j] += g * static_cast<S>((soft - onehot) / b);
        }
      }
    }});
  }
  return out;
}

// ---- image-shaped ops ----

template <typename S>
Tensor<S> Tape<S>::unpatchify(const Tensor<S>& x, int batch, int grid_rows, int grid_cols,
                              int patch) {
  int pp = patch * patch;
  check(x.cols() == 3 * pp, "unpatchify: patch rows must have 3*p*p values");
  check(x.rows() == batch * grid_rows * grid_cols, "unpatchify: row count mismatch");
  int ih = grid_rows * patch, iw = grid_cols * patch;
  Tensor<S> out = make({batch, 3, ih, iw}, track({&x}));
  auto fwd_index = [=](int b, int r, int c, int ch, int py, int px) {
    int64_t src = (static_cast<int64_t>(b) * grid_rows * grid_cols + r * grid_cols + c) *
                      (3 * pp) +
                  ch * pp + py * patch + px;
    int64_t dst = ((static_cast<int64_t>(b) * 3 + ch) * ih + (r * patch + py)) * iw +
                  (c * patch + px);
    return std::pair<int64_t, int64_t>(src, dst);
  };
  for (int b = 0; b < batch; ++b)
    for (int r = 0; r < grid_rows; ++r)
      for (int c = 0; c < grid_cols; ++c)
        for (int ch = 0; ch < 3; ++ch)
          for (int py = 0; py < patch; ++py)
            for (int px = 0; px < patch; ++px) {
              auto [src, dst] = fwd_index(b, r, c, ch, py, px);
              out.data()[dst] = x.data()[src];
            }
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out, batch, grid_rows, grid_cols, patch,
                      fwd_index]() mutable {
      const S* g = out.grad().data();
      S* gx = x.grad().data();
      for (int b = 0; b < batch; ++b)
        for (int r = 0; r < grid_rows; ++r)
          for (int c = 0; c < grid_cols; ++c)
            for (int ch = 0; ch < 3; ++ch)
              for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px) {
                  auto [src, dst] = fwd_index(b, r, c, ch, py, px);
                  gx[src] += g[dst];
                }
    }});
  }
  return out;
}

namespace {
/// Box-overlap spans for one axis of an area resample: for each destination
/// index, the overlapped source indices with weights summing to 1.
struct AreaSpan {
  int begin = 0;
  std::vector<double> w;
};

std::vector<AreaSpan> area_spans(int src, int dst) {
  std::vector<AreaSpan> spans(dst);
  double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double lo = i * scale, hi = (i + 1) * scale;
    int b = static_cast<int>(std::floor(lo));
    int e = std::min(src, static_cast<int>(std::ceil(hi)));
    spans[i].begin = b;
    for (int y = b; y < e; ++y) {
      double overlap = std::min(hi, static_cast<double>(y + 1)) -
                       std::max(lo, static_cast<double>(y));
      spans[i].w.push_back(overlap / scale);
    }
  }
  return spans;
}
}  // namespace

template <typename S>
Tensor<S> Tape<S>::area_resize(const Tensor<S>& x, int out_h, int out_w) {
  check(x.shape().size() == 4 && x.dim(1) == 3, "area_resize: expects [batch,3,H,W]");
  check(out_h >= 1 && out_w >= 1, "area_resize: output sides must be >= 1");
  int batch = x.dim(0), ih = x.dim(2), iw = x.dim(3);
  auto rows = std::make_shared<std::vector<AreaSpan>>(area_spans(ih, out_h));
  auto cols = std::make_shared<std::vector<AreaSpan>>(area_spans(iw, out_w));
  Tensor<S> out = make({batch, 3, out_h, out_w}, track({&x}));
  for (int p = 0; p < batch * 3; ++p) {
    const S* src = x.data() + static_cast<int64_t>(p) * ih * iw;
    S* dst = out.data() + static_cast<int64_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const AreaSpan& ri = (*rows)[i];
      for (int j = 0; j < out_w; ++j) {
        const AreaSpan& cj = (*cols)[j];
        double acc = 0;
        for (size_t a = 0; a < ri.w.size(); ++a)
          for (size_t b = 0; b < cj.w.size(); ++b)
            acc += ri.w[a] * cj.w[b] *
                   src[static_cast<int64_t>(ri.begin + a) * iw + (cj.begin + b)];
        dst[static_cast<int64_t>(i) * out_w + j] = static_cast<S>(acc);
      }
    }
  }
  if (out.requires_grad()) {
    nodes_.push_back({out, [x = x, out, rows, cols, batch, ih, iw, out_h, out_w]() mutable {
      const S* g = out.grad().data();
      S* gx = x.grad().data();
      for (int p = 0; p < batch * 3; ++p) {
        const S* gsrc = g + static_cast<int64_t>(p) * out_h * out_w;
        S* gdst = gx + static_cast<int64_t>(p) * ih * iw;
        for (int i = 0; i < out_h; ++i) {
          const AreaSpan& ri = (*rows)[i];
          for (int j = 0; j < out_w; ++j) {
            const AreaSpan& cj = (*cols)[j];
            S gv = gsrc[static_cast<int64_t>(i) * out_w + j];
            for (size_t a = 0; a < ri.w.size(); ++a)
              for (size_t b = 0; b < cj.w.size(); ++b)
                gdst[static_cast<int64_t>(ri.begin + a) * iw + (cj.begin + b)] +=
                    static_cast<S>(ri.w[a] * cj.w[b]) * gv;
          }
        }
      }
    }});
  }
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template class ParamSet<float>;
template class ParamSet<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace vtpt
