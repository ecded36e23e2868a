#include "vtpt/gradsuite.hpp"

#include <algorithm>
#include <numeric>

#include "vtpt/degrade.hpp"
#include "vtpt/objectives.hpp"
#include "vtpt/parallel.hpp"
#include "vtpt/patch.hpp"
#include "vtpt/vit.hpp"

namespace vtpt {

namespace {

Tensor<double> randt(Shape shape, Rng& rng, double stddev = 1.0, bool grad = true) {
  return Tensor<double>::randn(std::move(shape), rng, stddev, grad);
}

struct NamedCheck {
  std::string name;
  ScalarFn fn;
  ParamSet<double> point;
  GradCheckOptions opts;
};

/// One primitive check per engine op family, built at the given seed.
std::vector<NamedCheck> primitive_checks(uint64_t seed, double tol) {
  std::vector<NamedCheck> checks;
  auto add = [&](const std::string& name, ParamSet<double> point, ScalarFn fn,
                 double step = 1e-3) {
    NamedCheck c;
    c.name = name;
    c.point = std::move(point);
    c.fn = std::move(fn);
    c.opts.step = step;
    c.opts.tolerance = tol;
    checks.push_back(std::move(c));
  };
  Rng rng = Rng::derive(seed, "gradsuite-primitives", 0);

  {
    ParamSet<double> p;
    p.add("a", randt({3, 4}, rng));
    p.add("b", randt({4, 2}, rng));
    Tensor<double> target = randt({3, 2}, rng, 1.0, false);
    add("matmul", std::move(p), [target](Tape<double>& t, ParamSet<double>& p) {
      return t.mse(t.matmul(p.at("a"), p.at("b")), target);
    });
  }
  {
    ParamSet<double> p;
    p.add("x", randt({2, 6}, rng));
    p.add("y", randt({6}, rng));
    add("elementwise", std::move(p), [](Tape<double>& t, ParamSet<double>& p) {
      Tensor<double> u = t.add(p.at("x"), p.at("y"));  // suffix broadcast
      Tensor<double> v = t.sub(p.at("x"), p.at("y"));
      return t.sum(t.mul(u, t.scale(v, 0.5)));
    });
  }
  {
    ParamSet<double> p;
    p.add("x", Tensor<double>::from({4}, {-2.0, -0.5, 0.7, 3.0}, true));
    add("gelu", std::move(p),
        [](Tape<double>& t, ParamSet<double>& p) { return t.sum(t.gelu(p.at("x"))); });
  }
  {
    ParamSet<double> p;
    p.add("x", randt({3, 5}, rng));
    Tensor<double> target = randt({3, 5}, rng, 0.3, false);
    add("softmax", std::move(p), [target](Tape<double>& t, ParamSet<double>& p) {
      return t.mse(t.softmax(p.at("x")), target);
    });
  }
  {
    ParamSet<double> p;
    p.add("x", randt({2, 8}, rng));
    p.add("g", randt({8}, rng, 0.5));
    p.add("b", randt({8}, rng, 0.5));
    Tensor<double> target = randt({2, 8}, rng, 1.0, false);
    add("layer_norm", std::move(p), [target](Tape<double>& t, ParamSet<double>& p) {
      return t.mse(t.layer_norm(p.at("x"), p.at("g"), p.at("b")), target);
    });
  }
  {
    ParamSet<double> p;
    p.add("x", randt({4, 6}, rng));
    Tensor<double> target = randt({4, 6}, rng, 1.0, false);
    std::vector<uint8_t> keep(24, 0);
    for (int i = 0; i < 24; i += 2) keep[i] = 1;
    add("mse_masked", std::move(p), [target, keep](Tape<double>& t, ParamSet<double>& p) {
      return t.mse(p.at("x"), target, keep);
    });
  }
  {
    ParamSet<double> p;
    p.add("x", randt({5, 4}, rng));
    p.add("w", randt({4, 3}, rng));
    p.add("b", randt({3}, rng, 0.5));
    Tensor<double> target = randt({5, 3}, rng, 1.0, false);
    add("linear", std::move(p), [target](Tape<double>& t, ParamSet<double>& p) {
      return t.mse(t.linear(p.at("x"), p.at("w"), p.at("b")), target);
    });
  }
  {
    // 2 samples x 5 tokens, width 8, 2 heads.
    ParamSet<double> p;
    p.add("qkv", randt({10, 24}, rng, 0.7));
    Tensor<double> target = randt({10, 8}, rng, 1.0, false);
    add("attention", std::move(p), [target](Tape<double>& t, ParamSet<double>& p) {
      return t.mse(t.attention(p.at("qkv"), 2, 5, 2), target);
    });
  }
  {
    ParamSet<double> p;
    p.add("x", randt({6, 4}, rng));
    Tensor<double> target = randt({5, 4}, rng, 1.0, false);
    add("rows", std::move(p), [target](Tape<double>& t, ParamSet<double>& p) {
      Tensor<double> g = t.gather_rows(p.at("x"), {0, 2, 2, 5});
      Tensor<double> s = t.scatter_rows(g, {3, 1, 0, 3}, 4);
      return t.mse(t.concat_rows(s, t.gather_rows(p.at("x"), {1})), target);
    });
  }
  {
    // patch rows -> image -> area resize, 2x2 grid of 2px patches.
    ParamSet<double> p;
    p.add("x", randt({4, 12}, rng));
    Tensor<double> target = randt({1, 3, 5, 5}, rng, 1.0, false);
    add("unpatchify_area_resize", std::move(p),
        [target](Tape<double>& t, ParamSet<double>& p) {
          Tensor<double> img = t.unpatchify(p.at("x"), 1, 2, 2, 2);
          return t.mse(t.area_resize(img, 5, 5), target);
        });
  }
  {
    ParamSet<double> p;
    p.add("logits", randt({3, 4}, rng));
    std::vector<int> labels = {2, 0, 3};
    add("cross_entropy", std::move(p), [labels](Tape<double>& t, ParamSet<double>& p) {
      return t.cross_entropy(p.at("logits"), labels);
    });
  }
  return checks;
}

/// End-to-end toy pipeline check: embed -> encode -> insert -> decode -> loss.
NamedCheck pipeline_check(uint64_t seed, double tol, bool integrated) {
  ViTConfig vit = ViTConfig::toy_scale();
  Rng init = Rng::derive(seed, "gradsuite-vit", integrated ? 1 : 0);
  ParamSet<double> point = init_params(vit, init).cast<double>();

  DegradationSpec spec;
  spec.task = integrated ? Task::integrated : Task::masked;
  spec.patch = vit.patch;
  spec.canvas_side = vit.image_side;
  spec.aux_side = 44;
  spec.mask_ratio = 0.75;

  Rng img_rng = Rng::derive(seed, "gradsuite-image", integrated ? 1 : 0);
  int side = integrated ? spec.aux_side : vit.image_side;
  Image img = Image::zeros(side, side);
  for (float& v : img.data) v = static_cast<float>(img_rng.next_double());
  Rng deg_rng = Rng::derive(seed, "gradsuite-degrade", integrated ? 1 : 0);
  auto sample = std::make_shared<DegradedSample>(make_sample(spec, img, deg_rng));

  auto input_seq = std::make_shared<PatchSequence>(patchify(sample->input, vit.patch));
  auto target_seq = std::make_shared<PatchSequence>(patchify(sample->target, vit.patch));
  std::vector<int> vis_idx;
  for (size_t i = 0; i < sample->visible.size(); ++i)
    if (sample->visible[i]) vis_idx.push_back(static_cast<int>(i));

  NamedCheck c;
  c.name = integrated ? "toy_vit_integrated" : "toy_vit_masked";
  c.point = std::move(point);
  c.opts.step = 1e-3;
  c.opts.tolerance = tol;
  c.opts.max_components_per_tensor = 3;
  c.opts.sample_seed = seed;
  c.fn = [vit, spec, sample, input_seq, target_seq, vis_idx](Tape<double>& tape,
                                                             ParamSet<double>& p) {
    EmbedInput<double> in = make_embed_input<double>({input_seq.get()}, {vis_idx});
    TokenBatch<double> tb = embed_tokens(tape, vit, p, in);
    tb = encode(tape, vit, p, tb);
    tb = insert_mask_tokens(tape, vit, p, tb);
    Tensor<double> pred = decode(tape, vit, p, tb);
    std::vector<std::vector<uint8_t>> visible = {sample->visible};
    std::vector<const PatchSequence*> targets = {target_seq.get()};
    if (spec.task == Task::integrated) {
      std::vector<const Image*> aux = {&*sample->aux};
      return integrated_loss(tape, pred, targets, visible, aux, vit.patch, spec.outer_weight)
          .total;
    }
    return recovery_loss(tape, pred, targets, visible, true).total;
  };
  return c;
}

}  // namespace

GradSuiteResult run_gradient_suite(int seeds, double tol_primitive, double tol_e2e) {
  struct SeedOutcome {
    std::vector<GradCheckReport> reports;
    std::vector<std::string> names;
  };
  std::vector<SeedOutcome> outcomes(seeds);
  parallel_chunks(seeds, [&](int s) {
    uint64_t seed = static_cast<uint64_t>(s) + 1;
    std::vector<NamedCheck> checks = primitive_checks(seed, tol_primitive);
    checks.push_back(pipeline_check(seed, tol_e2e, false));
    checks.push_back(pipeline_check(seed, tol_e2e, true));
    for (auto& c : checks) {
      outcomes[s].reports.push_back(grad_check(c.fn, c.point, c.opts));
      outcomes[s].names.push_back(c.name);
    }
  });

  GradSuiteResult result;
  if (seeds <= 0) return result;
  for (size_t i = 0; i < outcomes[0].names.size(); ++i) {
    GradSuiteCheck check;
    check.name = outcomes[0].names[i];
    check.tolerance = outcomes[0].reports[i].tolerance;
    check.passed = true;
    for (int s = 0; s < seeds; ++s) {
      const GradCheckReport& rep = outcomes[s].reports[i];
      if (rep.max_rel_err >= check.worst_rel_err) {
        check.worst_rel_err = rep.max_rel_err;
        check.detail = "seed " + std::to_string(s + 1) + ", " + rep.worst;
      }
      check.passed = check.passed && rep.passed;
    }
    result.all_passed = result.all_passed && check.passed;
    result.checks.push_back(std::move(check));
  }
  return result;
}

}  // namespace vtpt
