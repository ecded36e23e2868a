#include "vtpt/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vtpt/rng.hpp"

namespace vtpt {

namespace {

struct KeyInfo {
  const char* key;
  const char* def;  // nullptr: default depends on preset/phase or is empty
};

const std::vector<KeyInfo>& registry() {
  static const std::vector<KeyInfo> keys = {
      {"seed", "0"},
      {"out", ""},
      {"model.preset", "toy"},
      {"model.patch", nullptr},
      {"model.image_side", nullptr},
      {"model.depth", nullptr},
      {"model.dim", nullptr},
      {"model.heads", nullptr},
      {"model.decoder_depth", nullptr},
      {"model.decoder_dim", nullptr},
      {"model.decoder_heads", nullptr},
      {"model.mlp_ratio", nullptr},
      {"model.classes", nullptr},
      {"model.dropout", "0"},
      {"model.drop_path", "0"},
      {"task.name", "masked"},
      {"task.mask_ratio", "0.75"},
      {"task.block_mask", "false"},
      {"task.scale_s", nullptr},
      {"task.scale_random", "false"},
      {"task.zoom_location", "center"},
      {"task.pad_mode", "mirror"},
      {"task.align_tokens", "true"},
      {"task.twist_lo", "0.20"},
      {"task.twist_hi", "0.25"},
      {"task.kernel_size", nullptr},
      {"task.kernel_mode", "random_normal"},
      {"task.saturation", "0.3"},
      {"task.wave_amplitude", "8"},
      {"task.wave_period", "64"},
      {"task.aux_side", nullptr},
      {"task.outer_weight", "1.0"},
      {"task.normalized_targets", "true"},
      {"train.epochs", nullptr},
      {"train.batch_size", "256"},
      {"train.base_lr", nullptr},
      {"train.weight_decay", "0.05"},
      {"train.beta1", "0.9"},
      {"train.beta2", nullptr},
      {"train.warmup_fraction", "0.1"},
      {"train.layerwise_decay", "0.75"},
      {"train.checkpoint_every", "0"},
      {"train.augment", nullptr},
      {"train.log_wall_time", "true"},
      {"train.probe_blocks", "2"},
      {"train.eval_every", "1"},
      {"train.threads", "0"},
      {"data.train", ""},
      {"data.test", ""},
  };
  return keys;
}

bool known_key(const std::string& key) {
  for (const auto& k : registry())
    if (key == k.key) return true;
  return false;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void fail_all(const std::string& origin, const std::vector<std::string>& problems) {
  if (problems.empty()) return;
  std::ostringstream os;
  os << "invalid configuration (" << origin << "):";
  for (const auto& p : problems) os << "\n  - " << p;
  throw std::invalid_argument(os.str());
}

}  // namespace

std::string phase_name(Phase p) {
  switch (p) {
    case Phase::pretrain: return "pretrain";
    case Phase::finetune: return "finetune";
    case Phase::probe: return "probe";
  }
  return "?";
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& k : registry()) out.push_back(k.key);
    return out;
  }();
  return keys;
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!known_key(key)) {
      problems.push_back("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      continue;
    }
    if (cfg.values_.count(key)) {
      problems.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      continue;
    }
    cfg.values_[key] = value;
  }
  fail_all(origin, problems);
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), path);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known_key(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::gets(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw std::invalid_argument("config: key '" + key + "' not set (config not resolved?)");
  return it->second;
}

int RunConfig::geti(const std::string& key) const {
  const std::string& v = gets(key);
  size_t pos = 0;
  int out;
  try {
    out = std::stoi(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "': not an integer: '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: key '" + key + "': not an integer: '" + v + "'");
  return out;
}

double RunConfig::getd(const std::string& key) const {
  const std::string& v = gets(key);
  size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "': not a number: '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: key '" + key + "': not a number: '" + v + "'");
  return out;
}

bool RunConfig::getb(const std::string& key) const {
  const std::string& v = gets(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: key '" + key + "': not a boolean: '" + v + "'");
}

uint64_t RunConfig::getu(const std::string& key) const {
  const std::string& v = gets(key);
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "': not an unsigned integer: '" + v +
                                "'");
  }
}

RunConfig RunConfig::resolved(Phase phase) const {
  RunConfig out = *this;
  std::vector<std::string> problems;

  std::string preset = out.values_.count("model.preset") ? out.values_.at("model.preset") : "toy";
  bool toy = preset == "toy";
  if (!toy && preset != "paper") {
    problems.push_back("model.preset must be 'toy' or 'paper', got '" + preset + "'");
    toy = true;
  }
  ViTConfig base = toy ? ViTConfig::toy_scale() : ViTConfig::paper_scale();

  auto def = [&](const std::string& key, const std::string& value) {
    if (!out.values_.count(key)) out.values_[key] = value;
  };
  def("model.preset", preset);
  def("model.patch", std::to_string(base.patch));
  def("model.image_side", std::to_string(base.image_side));
  def("model.depth", std::to_string(base.depth));
  def("model.dim", std::to_string(base.dim));
  def("model.heads", std::to_string(base.heads));
  def("model.decoder_depth", std::to_string(base.decoder_depth));
  def("model.decoder_dim", std::to_string(base.decoder_dim));
  def("model.decoder_heads", std::to_string(base.decoder_heads));
  def("model.mlp_ratio", std::to_string(base.mlp_ratio));
  def("model.classes", std::to_string(base.classes));
  // Task defaults that scale with the canvas.
  def("task.scale_s", toy ? "24" : "160");
  def("task.kernel_size", toy ? "5" : "9");
  def("task.aux_side", toy ? "44" : "320");
  // Phase-dependent training defaults.
  switch (phase) {
    case Phase::pretrain:
      def("train.epochs", "300");
      def("train.base_lr", "1.5e-4");
      def("train.beta2", "0.95");
      def("train.augment", "true");
      break;
    case Phase::finetune:
      def("train.epochs", "100");
      def("train.base_lr", "1e-3");
      def("train.beta2", "0.999");
      def("train.augment", "true");
      break;
    case Phase::probe:
      def("train.epochs", "50");
      def("train.base_lr", "1e-3");
      def("train.beta2", "0.999");
      def("train.augment", "false");
      break;
  }
  for (const auto& k : registry())
    if (k.def != nullptr) def(k.key, k.def);

  // Value validation, all findings together.
  auto try_parse = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  };
  try_parse([&] { out.vit_config().validate(); });
  try_parse([&] { out.degradation_spec().validate(); });
  try_parse([&] {
    TrainConfig t = out.train_config();
    if (t.epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (t.batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (t.base_lr <= 0) throw std::invalid_argument("train.base_lr must be positive");
    if (t.warmup_fraction < 0 || t.warmup_fraction >= 1)
      throw std::invalid_argument("train.warmup_fraction must be in [0,1)");
    if (t.layerwise_decay <= 0 || t.layerwise_decay > 1)
      throw std::invalid_argument("train.layerwise_decay must be in (0,1]");
    if (t.probe_blocks < 1) throw std::invalid_argument("train.probe_blocks must be >= 1");
  });
  try_parse([&] { out.seed(); });
  fail_all("resolved config", problems);
  return out;
}

std::string RunConfig::text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

void RunConfig::write(const std::string& path) const {
  std::string tmp = path + ".tmp";
  {
    std::ofstream outf(tmp, std::ios::trunc);
    if (!outf) throw std::runtime_error("config: cannot write " + tmp);
    outf << text();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("config: cannot rename " + tmp + " to " + path);
}

ViTConfig RunConfig::vit_config() const {
  ViTConfig cfg;
  cfg.patch = geti("model.patch");
  cfg.image_side = geti("model.image_side");
  cfg.depth = geti("model.depth");
  cfg.dim = geti("model.dim");
  cfg.heads = geti("model.heads");
  cfg.decoder_depth = geti("model.decoder_depth");
  cfg.decoder_dim = geti("model.decoder_dim");
  cfg.decoder_heads = geti("model.decoder_heads");
  cfg.mlp_ratio = geti("model.mlp_ratio");
  cfg.classes = geti("model.classes");
  cfg.dropout = getd("model.dropout");
  cfg.drop_path = getd("model.drop_path");
  return cfg;
}

DegradationSpec RunConfig::degradation_spec() const {
  DegradationSpec spec;
  spec.task = task_from_name(gets("task.name"));
  spec.patch = geti("model.patch");
  spec.canvas_side = geti("model.image_side");
  spec.mask_ratio = getd("task.mask_ratio");
  spec.block_mask = getb("task.block_mask");
  spec.scale_s = geti("task.scale_s");
  spec.scale_random = getb("task.scale_random");
  std::string loc = gets("task.zoom_location");
  if (loc == "center") {
    spec.zoom_location = ZoomLocation::center;
  } else if (loc == "random") {
    spec.zoom_location = ZoomLocation::random;
  } else {
    throw std::invalid_argument("task.zoom_location must be center or random");
  }
  spec.pad_mode = pad_mode_from_name(gets("task.pad_mode"));
  spec.align_tokens = getb("task.align_tokens");
  spec.twist_lo = getd("task.twist_lo");
  spec.twist_hi = getd("task.twist_hi");
  spec.kernel_size = geti("task.kernel_size");
  std::string km = gets("task.kernel_mode");
  if (km == "random_normal") {
    spec.kernel_mode = KernelMode::random_normal;
  } else if (km == "random_raw") {
    spec.kernel_mode = KernelMode::random_raw;
  } else if (km == "delta") {
    spec.kernel_mode = KernelMode::delta;
  } else {
    throw std::invalid_argument("task.kernel_mode must be random_normal, random_raw or delta");
  }
  spec.saturation = getd("task.saturation");
  spec.wave_amplitude = getd("task.wave_amplitude");
  spec.wave_period = getd("task.wave_period");
  spec.aux_side = geti("task.aux_side");
  spec.outer_weight = getd("task.outer_weight");
  spec.normalized_targets = getb("task.normalized_targets");
  return spec;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = geti("train.epochs");
  t.batch_size = geti("train.batch_size");
  t.base_lr = getd("train.base_lr");
  t.weight_decay = getd("train.weight_decay");
  t.beta1 = getd("train.beta1");
  t.beta2 = getd("train.beta2");
  t.warmup_fraction = getd("train.warmup_fraction");
  t.layerwise_decay = getd("train.layerwise_decay");
  t.checkpoint_every = geti("train.checkpoint_every");
  t.augment = getb("train.augment");
  t.log_wall_time = getb("train.log_wall_time");
  t.probe_blocks = geti("train.probe_blocks");
  t.eval_every = geti("train.eval_every");
  t.threads = geti("train.threads");
  return t;
}

std::string run_id_for(const RunConfig& resolved) {
  uint64_t h = hash_bytes(resolved.text());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vtpt
