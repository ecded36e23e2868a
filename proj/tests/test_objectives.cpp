#include "doctest.h"
#include "vtpt/objectives.hpp"

#include <cmath>

#include "test_util.hpp"

using namespace vtpt;

namespace {

// Brute-force box-overlap oracle for the area resample, independent of the
// engine implementation: integrates source pixels over each destination box.
double area_oracle(const Image& img, int c, int oh, int ow, int i, int j) {
  double sy = static_cast<double>(img.height) / oh;
  double sx = static_cast<double>(img.width) / ow;
  double y0 = i * sy, y1 = (i + 1) * sy, x0 = j * sx, x1 = (j + 1) * sx;
  double acc = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double oy = std::max(0.0, std::min<double>(y + 1, y1) - std::max<double>(y, y0));
      double ox = std::max(0.0, std::min<double>(x + 1, x1) - std::max<double>(x, x0));
      acc += oy * ox * img.at(c, y, x);
    }
  return acc / (sy * sx);
}

Tensor<float> rows_from(const PatchSequence& seq) {
  return Tensor<float>::from({seq.count, seq.row_size()},
                             std::vector<float>(seq.data.begin(), seq.data.end()));
}

}  // namespace

TEST_SUITE_BEGIN("objectives");

TEST_CASE("recovery_loss: zero at perfect prediction, masked restriction") {
  Rng rng(1);
  Image img = testutil::random_image(8, rng);
  PatchSequence target = patchify(img, 4);
  auto [norm, stats] = normalize_targets(target);

  std::vector<std::vector<uint8_t>> all_visible = {{1, 1, 1, 1}};
  Tape<float> tape;
  Tensor<float> perfect = rows_from(norm);
  LossBreakdown<float> zero =
      recovery_loss(tape, perfect, {&target}, all_visible, true);
  CHECK(zero.total.item() == doctest::Approx(0.0f));
  CHECK(zero.selected_tokens == 4);

  // Masked semantics: tokens 1 and 3 hidden; perturbing a visible token's
  // prediction leaves the loss unchanged and its gradients exactly zero.
  std::vector<std::vector<uint8_t>> vis = {{1, 0, 1, 0}};
  Tensor<float> pred = Tensor<float>::from(perfect.shape(), perfect.values(), true);
  Tape<float> t1;
  LossBreakdown<float> l1 = recovery_loss(t1, pred, {&target}, vis, true);
  CHECK(l1.selected_tokens == 2);
  t1.backward(l1.total);
  int rs = target.row_size();
  for (int i = 0; i < rs; ++i) {
    CHECK(pred.grad()[0 * rs + i] == 0.0f);  // visible token 0
    CHECK(pred.grad()[2 * rs + i] == 0.0f);  // visible token 2
  }

  Tensor<float> pred2 = Tensor<float>::from(perfect.shape(), perfect.values(), true);
  pred2.data()[3] += 42.0f;  // visible token 0 perturbed
  Tape<float> t2;
  LossBreakdown<float> l2 = recovery_loss(t2, pred2, {&target}, vis, true);
  CHECK(l2.total.item() == l1.total.item());
}

TEST_CASE("recovery_loss matches a hand-computed two-patch case") {
  // 4x8 image, P=4 -> 2 patches of 48 values. Raw targets, both masked:
  // loss = sum((pred-target)^2) / (2*48), computed here with plain loops.
  Rng rng(2);
  Image img = testutil::random_image(8, rng);  // 8x8 -> 4 patches; use 2 of them
  PatchSequence target = patchify(img, 4);
  Rng rng2(3);
  Tensor<float> pred = Tensor<float>::randn({target.count, target.row_size()}, rng2, 0.5f);

  std::vector<std::vector<uint8_t>> vis = {{0, 0, 1, 1}};  // tokens 0,1 masked
  Tape<float> tape;
  LossBreakdown<float> loss = recovery_loss(tape, pred, {&target}, vis, false);

  double expect = 0.0;
  int rs = target.row_size();
  for (int m = 0; m < 2; ++m)
    for (int i = 0; i < rs; ++i) {
      double d = pred.data()[m * rs + i] - target.row(m)[i];
      expect += d * d;
    }
  expect /= 2.0 * rs;
  CHECK(loss.total.item() == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("area_resize: constants, box average, brute-force oracle") {
  Image constant = Image::zeros(4, 4);
  std::fill(constant.data.begin(), constant.data.end(), 0.42f);
  for (int side : {1, 3, 6, 9}) {
    Image out = area_resize(constant, side);
    for (float v : out.data) CHECK(v == doctest::Approx(0.42f).epsilon(1e-6));
  }

  Image two = Image::zeros(2, 2);
  two.at(0, 0, 0) = 0.1f;
  two.at(0, 0, 1) = 0.2f;
  two.at(0, 1, 0) = 0.3f;
  two.at(0, 1, 1) = 0.8f;
  Image one = area_resize(two, 1);
  CHECK(one.at(0, 0, 0) == doctest::Approx((0.1f + 0.2f + 0.3f + 0.8f) / 4).epsilon(1e-6));

  Rng rng(4);
  for (int src = 1; src <= 8; ++src)
    for (int dst = 1; dst <= 8; ++dst) {
      Image img = testutil::random_image(src, rng);
      Image out = area_resize(img, dst);
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < dst; ++i)
          for (int j = 0; j < dst; ++j)
            CHECK(std::abs(out.at(c, i, j) - area_oracle(img, c, dst, dst, i, j)) < 1e-6);
    }
}

TEST_CASE("integrated_loss: zero weight is bitwise the masked loss") {
  Rng rng(5);
  Image center = testutil::random_image(8, rng);
  Image aux = testutil::random_image(12, rng);
  PatchSequence target = patchify(center, 4);
  Rng rng2(6);
  Tensor<float> pred = Tensor<float>::randn({target.count, target.row_size()}, rng2, 0.5f);
  std::vector<std::vector<uint8_t>> vis = {{0, 1, 0, 1}};

  Tape<float> t1;
  LossBreakdown<float> plain = recovery_loss(t1, pred, {&target}, vis, true);
  Tape<float> t2;
  LossBreakdown<float> integ =
      integrated_loss(t2, pred, {&target}, vis, {&aux}, 4, 0.0);
  CHECK(integ.total.item() == plain.total.item());  // bitwise
  CHECK_FALSE(integ.outer.defined());

  // Non-zero weight decomposes as center + w * outer, all terms nonnegative.
  Tape<float> t3;
  LossBreakdown<float> both =
      integrated_loss(t3, pred, {&target}, vis, {&aux}, 4, 0.7);
  CHECK(both.center.item() >= 0.0f);
  CHECK(both.outer.item() >= 0.0f);
  CHECK(both.total.item() ==
        doctest::Approx(both.center.item() + 0.7 * both.outer.item()).epsilon(1e-6));
}

TEST_CASE("integrated_loss: perfect prediction of both regions is zero") {
  // Constant center: its normalized target is all zeros, so the perfect
  // prediction is zeros; its resize is zero everywhere, so an aux whose band
  // is black is matched exactly. Both terms then vanish.
  Image center = Image::zeros(8, 8);
  std::fill(center.data.begin(), center.data.end(), 0.5f);
  Image aux = Image::zeros(12, 12);  // band is zero; center region irrelevant
  PatchSequence target = patchify(center, 4);

  Tensor<float> pred = Tensor<float>::zeros({target.count, target.row_size()});
  std::vector<std::vector<uint8_t>> vis = {{0, 1, 1, 0}};
  Tape<float> tape;
  LossBreakdown<float> loss = integrated_loss(tape, pred, {&target}, vis, {&aux}, 4, 1.0);
  CHECK(loss.center.item() == doctest::Approx(0.0f));
  CHECK(loss.outer.item() == doctest::Approx(0.0f));
  CHECK(loss.total.item() == doctest::Approx(0.0f));
}

TEST_SUITE_END();
