#include "vtpt/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "vtpt/vit.hpp"

namespace vtpt {

AdamW::AdamW(const ParamSet<float>& params, std::vector<std::string> trainable) {
  if (trainable.empty()) {
    for (const auto& [name, t] : params)
      if (t.requires_grad()) trainable.push_back(name);
  }
  names_ = std::move(trainable);
  for (const auto& name : names_) {
    const Tensor<float>& t = params.at(name);
    m_.emplace(name, Tensor<float>::zeros(t.shape()));
    v_.emplace(name, Tensor<float>::zeros(t.shape()));
  }
}

void AdamW::step(ParamSet<float>& params, const AdamConfig& cfg,
                 const std::map<std::string, double>* lr_scales) {
  if (cfg.lr < 0.0) throw std::invalid_argument("adamw: negative learning rate");
  ++step_count_;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count_));
  for (const auto& name : names_) {
    Tensor<float>& p = params.at(name);
    Tensor<float>& m = m_.at(name);
    Tensor<float>& v = v_.at(name);
    if (m.numel() != p.numel())
      throw std::invalid_argument("adamw: state shape mismatch for " + name);
    double lr = cfg.lr;
    if (lr_scales != nullptr) {
      auto it = lr_scales->find(name);
      if (it != lr_scales->end()) lr *= it->second;
    }
    bool decay = cfg.weight_decay != 0.0 && decay_param(name, p.shape());
    const std::vector<float>& g = p.grad();  // zero-filled if never touched
    float* pd = p.data();
    float* md = m.data();
    float* vd = v.data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      float gi = g[i];
      if (!std::isfinite(gi))
        throw std::runtime_error("adamw: non-finite gradient in " + name + " at element " +
                                 std::to_string(i));
      md[i] = static_cast<float>(cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi);
      vd[i] = static_cast<float>(cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi);
      double mhat = md[i] / bc1;
      double vhat = vd[i] / bc2;
      double update = mhat / (std::sqrt(vhat) + cfg.eps);
      if (decay) update += cfg.weight_decay * pd[i];
      pd[i] = static_cast<float>(pd[i] - lr * update);
    }
  }
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw std::invalid_argument("cosine_lr: warmup fraction must be in [0,1)");
  if (step < 0) step = 0;
  if (step >= total_steps) step = total_steps - 1;
  int64_t warmup = static_cast<int64_t>(std::floor(warmup_fraction * total_steps));
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / warmup;
  int64_t span = total_steps - 1 - warmup;
  double progress = span > 0 ? static_cast<double>(step - warmup) / span : 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

double layer_scale(int layer, int depth, double rate) {
  if (rate <= 0.0 || rate > 1.0) throw std::invalid_argument("layer_scale: rate must be in (0,1]");
  if (layer < 0) return std::pow(rate, depth + 1);
  int exp = depth - std::min(layer, depth);
  return std::pow(rate, exp);
}

std::vector<double> layerwise_scales(int depth, double rate) {
  std::vector<double> out;
  out.push_back(layer_scale(-1, depth, rate));
  for (int i = 0; i < depth; ++i) out.push_back(layer_scale(i, depth, rate));
  out.push_back(layer_scale(depth, depth, rate));
  return out;
}

std::map<std::string, double> layerwise_lr_scales(const ParamSet<float>& params, int depth,
                                                  double rate) {
  std::map<std::string, double> scales;
  for (const auto& [name, t] : params)
    scales[name] = layer_scale(param_layer(name, depth), depth, rate);
  return scales;
}

}  // namespace vtpt
