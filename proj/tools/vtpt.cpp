#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vtpt/checkpoint.hpp"
#include "vtpt/config.hpp"
#include "vtpt/dataset.hpp"
#include "vtpt/degrade.hpp"
#include "vtpt/gradsuite.hpp"
#include "vtpt/metrics.hpp"
#include "vtpt/train.hpp"

namespace fs = std::filesystem;
using namespace vtpt;

namespace {

// Exit codes: 0 success, 1 usage, 2 validation (also failed verification
// commands), 3 runtime.
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

void apply_task_param(DegradationSpec& spec, const std::string& kv) {
  size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("--param expects key=value, got '" + kv + "'");
  std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("--param " + key + ": not a boolean: " + value);
  };
  if (key == "S") {
    spec.scale_s = as_int();
  } else if (key == "twist") {
    spec.twist_lo = spec.twist_hi = as_double();
  } else if (key == "twist_lo") {
    spec.twist_lo = as_double();
  } else if (key == "twist_hi") {
    spec.twist_hi = as_double();
  } else if (key == "mask_ratio") {
    spec.mask_ratio = as_double();
  } else if (key == "block_mask") {
    spec.block_mask = as_bool();
  } else if (key == "pad_mode") {
    spec.pad_mode = pad_mode_from_name(value);
  } else if (key == "location") {
    spec.zoom_location = value == "random" ? ZoomLocation::random : ZoomLocation::center;
  } else if (key == "align_tokens") {
    spec.align_tokens = as_bool();
  } else if (key == "scale_random") {
    spec.scale_random = as_bool();
  } else if (key == "kernel_size") {
    spec.kernel_size = as_int();
  } else if (key == "kernel_mode") {
    if (value == "random_normal") spec.kernel_mode = KernelMode::random_normal;
    else if (value == "random_raw") spec.kernel_mode = KernelMode::random_raw;
    else if (value == "delta") spec.kernel_mode = KernelMode::delta;
    else throw std::invalid_argument("--param kernel_mode: unknown mode " + value);
  } else if (key == "saturation") {
    spec.saturation = as_double();
  } else if (key == "amplitude") {
    spec.wave_amplitude = as_double();
  } else if (key == "period") {
    spec.wave_period = as_double();
  } else if (key == "aux_side") {
    spec.aux_side = as_int();
  } else if (key == "outer_weight") {
    spec.outer_weight = as_double();
  } else if (key == "patch") {
    spec.patch = as_int();
  } else if (key == "normalized_targets") {
    spec.normalized_targets = as_bool();
  } else {
    throw std::invalid_argument("--param: unknown key '" + key + "'");
  }
}

std::string tag_letter(Task task) {
  switch (task) {
    case Task::masked: return "m";
    case Task::zoomed_in: return "a";
    case Task::zoomed_out: return "b";
    case Task::distorted: return "c";
    case Task::blurred: return "d";
    case Task::decolorized: return "e";
    default: return "?";
  }
}

std::string tag_display_name(Task task) {
  switch (task) {
    case Task::masked: return "masked";
    case Task::zoomed_in: return "zoomed-in";
    case Task::zoomed_out: return "zoomed-out";
    case Task::distorted: return "distorted";
    case Task::blurred: return "blurred";
    case Task::decolorized: return "de-colorized";
    default: return task_name(task);
  }
}

std::string tag_row(Task task) {
  FactorTags t = factor_tags(task);
  auto yn = [](bool b) { return b ? "Y" : "N"; };
  return "(" + tag_letter(task) + ") " + tag_display_name(task) + ": IM=" +
         yn(t.information_missing) + " ST=" + yn(t.spatial_transform) +
         " SC=" + yn(t.style_change);
}

// Embedded copy of the reference factor table; cmd_tags diffs the computed
// rows against these bytes.
const std::vector<std::string>& tag_reference() {
  static const std::vector<std::string> rows = {
      "(m) masked: IM=Y ST=N SC=N",       "(a) zoomed-in: IM=Y ST=Y SC=N",
      "(b) zoomed-out: IM=N ST=Y SC=N",   "(c) distorted: IM=N ST=Y SC=Y",
      "(d) blurred: IM=N ST=N SC=Y",      "(e) de-colorized: IM=N ST=N SC=Y",
  };
  return rows;
}

ParamSet<float> init_from_config(const RunConfig& resolved, ViTConfig& vit) {
  vit = resolved.vit_config();
  Rng rng = Rng::derive(resolved.seed(), "init", 0);
  return init_params(vit, rng);
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
  RunConfig cfg;
  for (const auto& [k, v] : ckpt.config) cfg.set(k, v);
  return cfg;
}

struct TrainCommandArgs {
  std::string config_path;
  std::string init_path;
  std::string out_dir;
};

struct PreparedRun {
  RunConfig resolved;
  ViTConfig vit;
  TrainConfig tcfg;
  RunContext ctx;
  std::unique_ptr<MetricsWriter> metrics;
};

PreparedRun prepare_run(const TrainCommandArgs& args, Phase phase) {
  PreparedRun run;
  run.resolved = RunConfig::load(args.config_path).resolved(phase);
  fs::create_directories(args.out_dir);
  run.resolved.write(args.out_dir + "/config.resolved");
  run.vit = run.resolved.vit_config();
  run.tcfg = run.resolved.train_config();
  run.metrics = std::make_unique<MetricsWriter>(args.out_dir + "/metrics.csv");
  run.ctx.out_dir = args.out_dir;
  run.ctx.metrics = run.metrics.get();
  run.ctx.resolved_config = &run.resolved;
  run.ctx.run_id = run_id_for(run.resolved);
  run.ctx.seed = run.resolved.seed();
  run.ctx.log_wall_time = run.tcfg.log_wall_time;
  return run;
}

Dataset load_named_dataset(const RunConfig& resolved, const std::string& key) {
  const std::string& path = resolved.gets(key);
  if (path.empty())
    throw std::invalid_argument("config: " + key + " must point at a dataset");
  return ingest_dataset(path);
}

int cmd_degrade(const std::string& task, const std::string& in_path,
                const std::string& out_path, uint64_t seed,
                const std::vector<std::string>& params, const std::string& other_path) {
  Image img = load_ppm(in_path);
  DegradationSpec spec;
  spec.task = task_from_name(task);
  spec.patch = 16;
  for (const auto& kv : params) apply_task_param(spec, kv);
  spec.canvas_side = spec.task == Task::integrated
                         ? (img.height * 224) / 320 / spec.patch * spec.patch
                         : img.height;
  if (spec.task == Task::integrated) spec.aux_side = img.height;
  Image other;
  const Image* other_ptr = nullptr;
  if (!other_path.empty()) {
    other = load_ppm(other_path);
    other_ptr = &other;
  }
  Rng rng = Rng::derive(seed, "degrade", 0);
  DegradedSample sample = make_sample(spec, img, rng, other_ptr);
  save_ppm(sample.input, out_path);
  bool any_masked =
      std::any_of(sample.visible.begin(), sample.visible.end(), [](uint8_t v) { return !v; });
  if (any_masked) {
    std::string sidecar = out_path + ".mask.txt";
    std::string text;
    for (size_t i = 0; i < sample.visible.size(); ++i)
      if (!sample.visible[i]) text += std::to_string(i) + "\n";
    std::ofstream f(sidecar, std::ios::trunc);
    if (!f) throw std::runtime_error("degrade: cannot write " + sidecar);
    f << text;
    std::cout << "wrote " << out_path << " and " << sidecar << "\n";
  } else {
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_pretrain(const TrainCommandArgs& args) {
  PreparedRun run = prepare_run(args, Phase::pretrain);
  DegradationSpec spec = run.resolved.degradation_spec();
  Dataset train = load_named_dataset(run.resolved, "data.train");

  ParamSet<float> params = init_from_config(run.resolved, run.vit);
  AdamW opt(params, pretrain_trainable_names(params));
  int start_epoch = 0;
  if (!args.init_path.empty()) {
    Checkpoint ckpt = Checkpoint::load(args.init_path);
    if (ckpt.meta.count("phase") && ckpt.meta.at("phase") != "pretrain")
      throw std::invalid_argument("pretrain: cannot resume from a " + ckpt.meta.at("phase") +
                                  " checkpoint");
    restore_checkpoint(ckpt, params, &opt);
    start_epoch = static_cast<int>(ckpt.meta_int("epoch", 0));
    std::cout << "resuming from epoch " << start_epoch << "\n";
  }
  TrainResult result =
      pretrain(run.ctx, run.vit, spec, run.tcfg, train, params, opt, start_epoch);
  if (!result.epochs.empty())
    std::printf("pretrain done: %zu epochs, final mean loss %.6f\n", result.epochs.size(),
                result.epochs.back().loss_total);
  return 0;
}

int cmd_finetune(const TrainCommandArgs& args) {
  PreparedRun run = prepare_run(args, Phase::finetune);
  Dataset train = load_named_dataset(run.resolved, "data.train");
  Dataset test = load_named_dataset(run.resolved, "data.test");

  ParamSet<float> params = init_from_config(run.resolved, run.vit);
  if (!args.init_path.empty()) {
    Checkpoint ckpt = Checkpoint::load(args.init_path);
    restore_checkpoint(ckpt, params, nullptr);
  }
  AdamW opt(params, finetune_trainable_names(params));
  TrainResult result = finetune(run.ctx, run.vit, run.tcfg, train, test, params, opt, 0);
  std::printf("finetune done: top-1 accuracy %.4f (%lld/%lld)\n", result.final_eval.accuracy,
              static_cast<long long>(result.final_eval.correct),
              static_cast<long long>(result.final_eval.total));
  return 0;
}

int cmd_probe(const TrainCommandArgs& args, const std::string& mode, int blocks) {
  PreparedRun run = prepare_run(args, Phase::probe);
  Dataset train = load_named_dataset(run.resolved, "data.train");
  Dataset test = load_named_dataset(run.resolved, "data.test");

  ParamSet<float> params = init_from_config(run.resolved, run.vit);
  if (!args.init_path.empty()) {
    Checkpoint ckpt = Checkpoint::load(args.init_path);
    restore_checkpoint(ckpt, params, nullptr);
  }
  if (blocks > 0) run.tcfg.probe_blocks = blocks;
  ProbeMode pm = mode == "nonlinear" ? ProbeMode::nonlinear : ProbeMode::linear;
  ProbeResult result = probe(run.ctx, run.vit, run.tcfg, train, test, params, pm);
  std::printf("probe (%s) done: top-1 accuracy %.4f (%lld/%lld)\n", mode.c_str(),
              result.train.final_eval.accuracy,
              static_cast<long long>(result.train.final_eval.correct),
              static_cast<long long>(result.train.final_eval.total));
  return 0;
}

int cmd_recover(const std::string& init_path, const std::string& in_path,
                const std::string& task, const std::vector<std::string>& params,
                const std::string& out_dir, uint64_t seed) {
  Checkpoint ckpt = Checkpoint::load(init_path);
  RunConfig stored = config_from_checkpoint(ckpt).resolved(Phase::pretrain);
  ViTConfig vit = stored.vit_config();
  Rng init_rng = Rng::derive(stored.seed(), "init", 0);
  ParamSet<float> model = init_params(vit, init_rng);
  restore_checkpoint(ckpt, model, nullptr);

  DegradationSpec spec = stored.degradation_spec();
  if (!task.empty()) {
    Task requested = task_from_name(task);
    if (requested != spec.task)
      std::cerr << "warning: checkpoint was trained on task '" << task_name(spec.task)
                << "', recovering with task '" << task << "'\n";
    spec.task = requested;
  }
  for (const auto& kv : params) apply_task_param(spec, kv);

  std::vector<std::string> inputs;
  if (fs::is_directory(in_path)) {
    for (const auto& entry : fs::directory_iterator(in_path))
      if (entry.is_regular_file() && entry.path().extension() == ".ppm")
        inputs.push_back(entry.path().string());
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty())
      throw std::runtime_error("recover: no .ppm files in " + in_path);
  } else {
    inputs.push_back(in_path);
  }
  fs::create_directories(out_dir);

  double mse_sum = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Image img = load_ppm(inputs[i]);
    Rng rng = Rng::derive(seed, "recover", i);
    RecoverResult res = recover_image(vit, model, spec, img, rng);
    std::string stem = fs::path(inputs[i]).stem().string();
    save_ppm(res.degraded, out_dir + "/" + stem + ".degraded.ppm");
    save_ppm(res.reconstruction, out_dir + "/" + stem + ".recon.ppm");
    std::printf("MSE %s %.6f\n", stem.c_str(), res.mse_raw);
    mse_sum += res.mse_raw;
  }
  if (inputs.size() > 1)
    std::printf("average MSE over %zu images: %.6f\n", inputs.size(),
                mse_sum / static_cast<double>(inputs.size()));
  return 0;
}

int cmd_gradcheck(int seeds) {
  GradSuiteResult result = run_gradient_suite(seeds);
  for (const auto& c : result.checks)
    std::printf("[%s] %s: max rel err %.3g (tol %.3g, %s)\n", c.passed ? "PASS" : "FAIL",
                c.name.c_str(), c.worst_rel_err, c.tolerance, c.detail.c_str());
  std::printf("%s\n", result.all_passed ? "gradcheck: all checks passed"
                                        : "gradcheck: FAILURES detected");
  return result.all_passed ? 0 : kExitValidation;
}

int cmd_tags() {
  const std::vector<Task> canonical = {Task::masked,  Task::zoomed_in, Task::zoomed_out,
                                       Task::distorted, Task::blurred, Task::decolorized};
  const std::vector<std::string>& expected = tag_reference();
  bool ok = true;
  for (size_t i = 0; i < canonical.size(); ++i) {
    std::string row = tag_row(canonical[i]);
    std::cout << row << "\n";
    if (row != expected[i]) {
      std::cerr << "tags: row " << i << " differs from the reference: expected '"
                << expected[i] << "'\n";
      ok = false;
    }
  }
  return ok ? 0 : kExitValidation;
}

int cmd_synth(const std::string& out_path, int count, int side, uint64_t seed, bool as_dirs) {
  Dataset ds = synth_dataset(count, side, seed);
  if (as_dirs) {
    fs::create_directories(out_path);
    std::vector<int> per_class(ds.class_names.size(), 0);
    for (const auto& s : ds.samples) {
      std::string dir = out_path + "/" + ds.class_names[s.label];
      fs::create_directories(dir);
      char name[32];
      std::snprintf(name, sizeof(name), "%06d.ppm", per_class[s.label]++);
      save_ppm(s.image, dir + "/" + name);
    }
  } else {
    save_packed(ds, out_path);
  }
  std::cout << "wrote " << count << " samples (" << side << "x" << side << ", 10 classes) to "
            << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-based self-supervised pre-training lab for small vision transformers"};
  app.require_subcommand(1);

  // degrade
  auto* degrade = app.add_subcommand("degrade", "Apply one degradation operator to an image");
  std::string dg_task, dg_in, dg_out, dg_other;
  uint64_t dg_seed = 0;
  std::vector<std::string> dg_params;
  degrade->add_option("--task", dg_task, "Task name")->required();
  degrade->add_option("--in", dg_in, "Input P6 PPM")->required();
  degrade->add_option("--out", dg_out, "Output P6 PPM")->required();
  degrade->add_option("--seed", dg_seed, "Random seed");
  degrade->add_option("--param", dg_params, "Task parameter key=value (repeatable)");
  degrade->add_option("--other", dg_other, "Second image for other_image padding");

  // pretrain / finetune / probe
  TrainCommandArgs pt_args, ft_args, pb_args;
  auto add_train_flags = [](CLI::App* cmd, TrainCommandArgs& args, bool init_required) {
    cmd->add_option("--config", args.config_path, "Run configuration file")->required();
    auto* init = cmd->add_option("--init", args.init_path, "Initial checkpoint");
    if (init_required) init->required();
    cmd->add_option("--out", args.out_dir, "Output directory")->required();
  };
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Self-supervised recovery pre-training");
  add_train_flags(pretrain_cmd, pt_args, false);
  auto* finetune_cmd = app.add_subcommand("finetune", "Supervised fine-tuning");
  add_train_flags(finetune_cmd, ft_args, false);
  auto* probe_cmd = app.add_subcommand("probe", "Frozen-backbone probing");
  add_train_flags(probe_cmd, pb_args, false);
  std::string pb_mode = "linear";
  int pb_blocks = 0;
  probe_cmd->add_option("--mode", pb_mode, "linear or nonlinear")
      ->check(CLI::IsMember({"linear", "nonlinear"}));
  probe_cmd->add_option("--blocks", pb_blocks, "Inserted blocks for nonlinear probing");

  // recover
  auto* recover = app.add_subcommand("recover", "Degrade and reconstruct images");
  std::string rc_init, rc_in, rc_task, rc_out;
  uint64_t rc_seed = 0;
  std::vector<std::string> rc_params;
  recover->add_option("--init", rc_init, "Model checkpoint")->required();
  recover->add_option("--in", rc_in, "Input image or directory of PPMs")->required();
  recover->add_option("--task", rc_task, "Override the checkpoint's task");
  recover->add_option("--param", rc_params, "Task parameter key=value (repeatable)");
  recover->add_option("--out", rc_out, "Output directory")->required();
  recover->add_option("--seed", rc_seed, "Random seed");

  // gradcheck / tags / synth
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  int gc_seeds = 20;
  gradcheck->add_option("--seeds", gc_seeds, "Number of random seeds")
      ->check(CLI::PositiveNumber);
  auto* tags = app.add_subcommand("tags", "Print the degradation factor table");
  auto* synth = app.add_subcommand("synth", "Generate the procedural 10-class dataset");
  std::string sy_out;
  int sy_count = 5000, sy_side = 32;
  uint64_t sy_seed = 0;
  bool sy_dirs = false;
  synth->add_option("--out", sy_out, "Output packed file (or directory with --dirs)")
      ->required();
  synth->add_option("--count", sy_count, "Sample count")->check(CLI::PositiveNumber);
  synth->add_option("--side", sy_side, "Image side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--seed", sy_seed, "Random seed");
  synth->add_flag("--dirs", sy_dirs, "Write class directories of PPMs instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (degrade->parsed())
      return cmd_degrade(dg_task, dg_in, dg_out, dg_seed, dg_params, dg_other);
    if (pretrain_cmd->parsed()) return cmd_pretrain(pt_args);
    if (finetune_cmd->parsed()) return cmd_finetune(ft_args);
    if (probe_cmd->parsed()) return cmd_probe(pb_args, pb_mode, pb_blocks);
    if (recover->parsed()) return cmd_recover(rc_init, rc_in, rc_task, rc_params, rc_out, rc_seed);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seeds);
    if (tags->parsed()) return cmd_tags();
    if (synth->parsed()) return cmd_synth(sy_out, sy_count, sy_side, sy_seed, sy_dirs);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
