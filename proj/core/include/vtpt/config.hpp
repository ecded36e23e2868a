#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtpt/degrade.hpp"
#include "vtpt/vit.hpp"

namespace vtpt {

enum class Phase { pretrain, finetune, probe };
std::string phase_name(Phase p);

/// Training-loop knobs shared by all phases. Defaults that differ per phase
/// (epochs, base_lr, beta2, augment) are filled during config resolution.
struct TrainConfig {
  int epochs = 300;
  int batch_size = 256;
  double base_lr = 1.5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double warmup_fraction = 0.1;
  double layerwise_decay = 0.75;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 keeps only the final
  bool augment = true;
  bool log_wall_time = true;
  int probe_blocks = 2;
  bool probe_linear = true;
  int eval_every = 1;
  int threads = 0;  // 0 = auto
};

/// Flat key=value run configuration. Unknown keys are rejected; resolution
/// fills every registered key (preset- and phase-aware defaults) so the file
/// written next to the outputs replays the run exactly.
class RunConfig {
 public:
  RunConfig() = default;

  /// Parses `key = value` lines; '#' starts a comment. Unknown keys and
  /// duplicate keys are collected and reported together.
  static RunConfig load(const std::string& path);
  static RunConfig from_text(const std::string& text, const std::string& origin);

  /// Sets one key (validated against the registry).
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Fills defaults for the phase and validates every value; failures are
  /// listed all at once. The result contains every registered key.
  RunConfig resolved(Phase phase) const;

  std::string text() const;  // sorted key=value lines
  void write(const std::string& path) const;

  // Typed access (key must exist — use on resolved configs).
  const std::string& gets(const std::string& key) const;
  int geti(const std::string& key) const;
  double getd(const std::string& key) const;
  bool getb(const std::string& key) const;
  uint64_t getu(const std::string& key) const;

  ViTConfig vit_config() const;
  DegradationSpec degradation_spec() const;
  TrainConfig train_config() const;
  uint64_t seed() const { return getu("seed"); }

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

/// Deterministic run identity: a hash of the resolved config text.
std::string run_id_for(const RunConfig& resolved);

}  // namespace vtpt
