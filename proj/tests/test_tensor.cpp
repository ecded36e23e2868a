#include "doctest.h"
#include "vtpt/tensor.hpp"

#include <cmath>
#include <vector>

using namespace vtpt;

namespace {

// Independent central-difference oracle over one named tensor.
template <typename Fn>
std::vector<double> central_diff(Fn&& loss_of, Tensor<double> t, double h = 1e-4) {
  std::vector<double> grads(t.numel());
  for (int64_t i = 0; i < t.numel(); ++i) {
    double saved = t.data()[i];
    t.data()[i] = saved + h;
    double up = loss_of();
    t.data()[i] = saved - h;
    double down = loss_of();
    t.data()[i] = saved;
    grads[i] = (up - down) / (2 * h);
  }
  return grads;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and zeros") {
  Tape<float> tp;
  Tensor<float> eye = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
  Tensor<float> x = Tensor<float>::from({2, 2}, {3.5f, -1, 2, 0.25f});
  Tensor<float> y = tp.matmul(eye, x);
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor<float> zeros = Tensor<float>::zeros({2, 2});
  Tensor<float> b = Tensor<float>::from({2, 2}, {1, 2, 3, 4}, true);
  Tensor<float> z = tp.matmul(zeros, b);
  Tensor<float> loss = tp.sum(z);
  tp.backward(loss);
  for (int i = 0; i < 4; ++i) {
    CHECK(z.data()[i] == 0.0f);
    CHECK(b.grad()[i] == 0.0f);  // zero left operand kills the gradient
  }
}

TEST_CASE("matmul gradients match central differences") {
  Rng rng(17);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng r = Rng::derive(seed, "matmul-fd", 0);
    Tensor<double> a = Tensor<double>::randn({3, 4}, r, 1.0, true);
    Tensor<double> b = Tensor<double>::randn({4, 2}, r, 1.0, true);
    Tensor<double> target = Tensor<double>::randn({3, 2}, r, 1.0);
    Tape<double> tp;
    Tensor<double> loss = tp.mse(tp.matmul(a, b), target);
    tp.backward(loss);
    auto eval = [&]() {
      Tape<double> t2(false);
      return t2.mse(t2.matmul(a, b), target).item();
    };
    std::vector<double> fd_a = central_diff(eval, a);
    std::vector<double> fd_b = central_diff(eval, b);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(rel_err(a.grad()[i], fd_a[i]) < 1e-4);
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(rel_err(b.grad()[i], fd_b[i]) < 1e-4);
  }
}

TEST_CASE("matmul rejects shape mismatch") {
  Tape<float> tp;
  Tensor<float> a = Tensor<float>::zeros({2, 3});
  Tensor<float> b = Tensor<float>::zeros({4, 2});
  CHECK_THROWS_AS(tp.matmul(a, b), std::invalid_argument);
}

TEST_CASE("elementwise add/sub/mul with suffix broadcast") {
  Tape<float> tp;
  Tensor<float> x = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<float> zeros = Tensor<float>::zeros({2, 3});
  Tensor<float> y = tp.add(x, zeros);
  for (int i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor<float> bias = Tensor<float>::from({3}, {10, 20, 30});
  Tensor<float> shifted = tp.add(x, bias);
  CHECK(shifted.data()[0] == 11.0f);
  CHECK(shifted.data()[5] == 36.0f);

  Tensor<float> bad = Tensor<float>::zeros({2});
  CHECK_THROWS_AS(tp.add(x, bad), std::invalid_argument);
  CHECK_THROWS_AS(tp.mul(x, Tensor<float>::zeros({3, 2})), std::invalid_argument);

  Tensor<float> d = tp.sub(x, bias);
  CHECK(d.data()[3] == -6.0f);
  Tensor<float> m = tp.mul(x, bias);
  CHECK(m.data()[4] == 100.0f);
  Tensor<float> s = tp.scale(x, 0.5f);
  CHECK(s.data()[1] == 1.0f);
}

TEST_CASE("gelu fixed point and gradient oracle") {
  Tape<double> tp;
  Tensor<double> zero = Tensor<double>::zeros({1});
  CHECK(tp.gelu(zero).item() == 0.0);

  Tensor<double> x = Tensor<double>::from({4}, {-2.0, -0.5, 0.7, 3.0}, true);
  Tape<double> tp2;
  Tensor<double> loss = tp2.sum(tp2.gelu(x));
  tp2.backward(loss);
  auto eval = [&]() {
    Tape<double> t(false);
    return t.sum(t.gelu(x)).item();
  };
  std::vector<double> fd = central_diff(eval, x, 1e-5);
  for (int i = 0; i < 4; ++i) CHECK(rel_err(x.grad()[i], fd[i]) < 1e-4);
}

TEST_CASE("softmax rows: uniformity, normalization, shift invariance") {
  Tape<float> tp;
  Tensor<float> same = Tensor<float>::from({1, 3}, {0.7f, 0.7f, 0.7f});
  Tensor<float> u = tp.softmax(same);
  for (int i = 0; i < 3; ++i) CHECK(u.data()[i] == doctest::Approx(1.0f / 3).epsilon(1e-6));

  Rng r(5);
  Tensor<float> x = Tensor<float>::randn({6, 9}, r, 2.0f);
  Tensor<float> y = tp.softmax(x);
  for (int i = 0; i < 6; ++i) {
    double sum = 0;
    for (int j = 0; j < 9; ++j) {
      float v = y.data()[i * 9 + j];
      CHECK(v >= 0.0f);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  Tensor<float> shifted = tp.add(x, Tensor<float>::full({6, 9}, 13.25f));
  Tensor<float> y2 = tp.softmax(shifted);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(y2.data()[i]).epsilon(1e-5));
}

TEST_CASE("softmax gradient matches central differences") {
  Rng r(23);
  Tensor<double> x = Tensor<double>::randn({2, 5}, r, 1.0, true);
  Tensor<double> target = Tensor<double>::randn({2, 5}, r, 0.5);
  Tape<double> tp;
  Tensor<double> loss = tp.mse(tp.softmax(x), target);
  tp.backward(loss);
  auto eval = [&]() {
    Tape<double> t(false);
    return t.mse(t.softmax(x), target).item();
  };
  std::vector<double> fd = central_diff(eval, x);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(rel_err(x.grad()[i], fd[i]) < 1e-4);
}

TEST_CASE("layer_norm contracts") {
  int d = 8;
  Tensor<float> gamma = Tensor<float>::full({d}, 1.0f);
  Tensor<float> beta = Tensor<float>::zeros({d});
  Tape<float> tp;

  Tensor<float> constant = Tensor<float>::full({1, d}, 0.42f);
  Tensor<float> zeroed = tp.layer_norm(constant, gamma, beta);
  for (int i = 0; i < d; ++i) CHECK(std::abs(zeroed.data()[i]) < 1e-4f);

  Rng r(7);
  Tensor<float> x = Tensor<float>::randn({4, d}, r, 1.5f);
  Tensor<float> y = tp.layer_norm(x, gamma, beta);
  for (int row = 0; row < 4; ++row) {
    double mean = 0, var = 0;
    for (int i = 0; i < d; ++i) mean += y.data()[row * d + i];
    mean /= d;
    for (int i = 0; i < d; ++i) {
      double c = y.data()[row * d + i] - mean;
      var += c * c;
    }
    var /= d;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }

  // Affine form: adding beta shifts the gamma-only output.
  Tensor<float> beta2 = Tensor<float>::full({d}, 0.3f);
  Tensor<float> y2 = tp.layer_norm(x, gamma, beta2);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y2.data()[i] == doctest::Approx(y.data()[i] + 0.3f).epsilon(1e-6));

  CHECK_THROWS_AS(tp.layer_norm(x, Tensor<float>::zeros({d + 1}), beta),
                  std::invalid_argument);
}

TEST_CASE("layer_norm gradients match central differences") {
  Rng r(31);
  Tensor<double> x = Tensor<double>::randn({2, 8}, r, 1.0, true);
  Tensor<double> g = Tensor<double>::randn({8}, r, 0.5, true);
  Tensor<double> b = Tensor<double>::randn({8}, r, 0.5, true);
  Tensor<double> target = Tensor<double>::randn({2, 8}, r, 1.0);
  Tape<double> tp;
  Tensor<double> loss = tp.mse(tp.layer_norm(x, g, b), target);
  tp.backward(loss);
  auto eval = [&]() {
    Tape<double> t(false);
    return t.mse(t.layer_norm(x, g, b), target).item();
  };
  for (auto* t : {&x, &g, &b}) {
    std::vector<double> fd = central_diff(eval, *t);
    for (int64_t i = 0; i < t->numel(); ++i) CHECK(rel_err(t->grad()[i], fd[i]) < 1e-4);
  }
}

TEST_CASE("mse values and mask semantics") {
  Tape<float> tp;
  Tensor<float> p = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  CHECK(tp.mse(p, p).item() == 0.0f);

  Tensor<float> q = Tensor<float>::from({2, 2}, {2, 3, 4, 5});
  CHECK(tp.mse(q, p).item() == doctest::Approx(1.0f));

  // Selected elements: 0 and 3. Perturbing an unselected element changes
  // neither the value nor the selected-element gradients.
  std::vector<uint8_t> keep = {1, 0, 0, 1};
  Tensor<float> pred = Tensor<float>::from({2, 2}, {1, 2, 3, 4}, true);
  Tensor<float> target = Tensor<float>::from({2, 2}, {0, 0, 0, 0});
  Tape<float> t1;
  Tensor<float> l1 = t1.mse(pred, target, keep);
  t1.backward(l1);
  float v1 = l1.item();
  std::vector<float> g1 = pred.grad();

  Tensor<float> pred2 = Tensor<float>::from({2, 2}, {1, 99, -42, 4}, true);
  Tape<float> t2;
  Tensor<float> l2 = t2.mse(pred2, target, keep);
  t2.backward(l2);
  CHECK(l2.item() == v1);
  CHECK(pred2.grad()[0] == g1[0]);
  CHECK(pred2.grad()[3] == g1[3]);
  CHECK(pred2.grad()[1] == 0.0f);
  CHECK(pred2.grad()[2] == 0.0f);

  CHECK_THROWS_AS(tp.mse(p, Tensor<float>::zeros({4})), std::invalid_argument);
}

TEST_CASE("backward: seeds, accumulation, and errors") {
  Tensor<float> theta = Tensor<float>::from({3}, {1, 2, 3}, true);
  Tape<float> tp;
  Tensor<float> loss = tp.sum(theta);
  tp.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(theta.grad()[i] == 1.0f);
  tp.backward(loss);  // repeated call accumulates
  for (int i = 0; i < 3; ++i) CHECK(theta.grad()[i] == 2.0f);

  Tape<float> t2;
  Tensor<float> vec = t2.add(theta, Tensor<float>::zeros({3}));
  CHECK_THROWS_AS(t2.backward(vec), std::invalid_argument);  // not scalar
  CHECK_THROWS_AS(t2.backward(Tensor<float>::scalar(1.0f)),
                  std::invalid_argument);  // not on tape
  CHECK_THROWS_AS(tp.backward(t2.sum(theta)), std::invalid_argument);  // wrong tape
}

TEST_CASE("backward through matmul+mse matches central differences") {
  Rng r(41);
  Tensor<double> x = Tensor<double>::randn({4, 3}, r, 1.0);
  Tensor<double> w = Tensor<double>::randn({3, 2}, r, 1.0, true);
  Tensor<double> target = Tensor<double>::randn({4, 2}, r, 1.0);
  Tape<double> tp;
  Tensor<double> loss = tp.mse(tp.matmul(x, w), target);
  tp.backward(loss);
  auto eval = [&]() {
    Tape<double> t(false);
    return t.mse(t.matmul(x, w), target).item();
  };
  std::vector<double> fd = central_diff(eval, w);
  for (int64_t i = 0; i < w.numel(); ++i) CHECK(rel_err(w.grad()[i], fd[i]) < 1e-4);
}

TEST_CASE("gather/scatter/concat round trips") {
  Tape<float> tp;
  Tensor<float> x = Tensor<float>::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor<float> g = tp.gather_rows(x, {2, 0});
  CHECK(g.data()[0] == 5.0f);
  CHECK(g.data()[3] == 2.0f);
  Tensor<float> s = tp.scatter_rows(g, {1, 1}, 2);  // duplicate targets sum
  CHECK(s.data()[2] == 6.0f);
  CHECK(s.data()[0] == 0.0f);
  Tensor<float> c = tp.concat_rows(x, g);
  CHECK(c.rows() == 5);
  CHECK(c.data()[6] == 5.0f);
  CHECK_THROWS_AS(tp.gather_rows(x, {3}), std::invalid_argument);
  CHECK_THROWS_AS(tp.scatter_rows(g, {0}, 4), std::invalid_argument);
}

TEST_CASE("attention output is deterministic and shape preserving") {
  Rng r(3);
  Tensor<float> qkv = Tensor<float>::randn({8, 12}, r, 1.0f);  // 2 samples x 4 tokens, dim 4
  Tape<float> tp;
  Tensor<float> o1 = tp.attention(qkv, 2, 4, 2);
  Tensor<float> o2 = tp.attention(qkv, 2, 4, 2);
  CHECK(o1.shape() == Shape{8, 4});
  for (int64_t i = 0; i < o1.numel(); ++i) CHECK(o1.data()[i] == o2.data()[i]);
  CHECK_THROWS_AS(tp.attention(qkv, 3, 4, 2), std::invalid_argument);
}

TEST_CASE("dropout identity at rate zero and mask scaling") {
  Rng r(9);
  Tensor<float> x = Tensor<float>::full({100}, 2.0f);
  Tape<float> tp;
  Tensor<float> same = tp.dropout(x, 0.0, r);
  CHECK(same.raw() == x.raw());  // passthrough

  Rng r2(9);
  Tensor<float> y = tp.dropout(x, 0.5, r2);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK((y.data()[i] == 0.0f || y.data()[i] == 4.0f));
  Rng r3(9);
  Tensor<float> y2 = tp.dropout(x, 0.5, r3);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == y2.data()[i]);
}

TEST_CASE("engine determinism: identical inputs give identical bits") {
  for (int trial = 0; trial < 2; ++trial) {
    Rng r(77);
    Tensor<float> a = Tensor<float>::randn({5, 7}, r, 1.0f);
    Tensor<float> b = Tensor<float>::randn({7, 3}, r, 1.0f);
    Tape<float> tp;
    Tensor<float> y = tp.gelu(tp.matmul(a, b));
    static std::vector<float> first;
    if (trial == 0) {
      first = y.values();
    } else {
      CHECK(first == y.values());
    }
  }
}

TEST_SUITE_END();
