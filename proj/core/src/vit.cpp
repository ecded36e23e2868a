#include "vtpt/vit.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace vtpt {

ViTConfig ViTConfig::paper_scale() {
  ViTConfig cfg;
  cfg.patch = 16;
  cfg.image_side = 224;
  cfg.depth = 12;
  cfg.dim = 768;
  cfg.heads = 12;
  cfg.decoder_depth = 4;
  cfg.decoder_dim = 384;
  cfg.decoder_heads = 8;
  cfg.classes = 1000;
  return cfg;
}

ViTConfig ViTConfig::toy_scale() {
  ViTConfig cfg;
  cfg.patch = 4;
  cfg.image_side = 32;
  cfg.depth = 4;
  cfg.dim = 96;
  cfg.heads = 4;
  cfg.decoder_depth = 2;
  cfg.decoder_dim = 48;
  cfg.decoder_heads = 4;
  cfg.classes = 10;
  return cfg;
}

void ViTConfig::validate() const {
  if (patch <= 0 || image_side <= 0 || image_side % patch != 0)
    throw std::invalid_argument("vit config: image_side must be a positive multiple of patch");
  if (depth < 1 || decoder_depth < 1)
    throw std::invalid_argument("vit config: depths must be >= 1");
  if (dim < 4 || dim % heads != 0)
    throw std::invalid_argument("vit config: dim must divide by heads");
  if (decoder_dim < 4 || decoder_dim % decoder_heads != 0)
    throw std::invalid_argument("vit config: decoder_dim must divide by decoder_heads");
  if (dim % 4 != 0 || decoder_dim % 4 != 0)
    throw std::invalid_argument("vit config: widths must divide by 4 (position embedding)");
  if (mlp_ratio < 1) throw std::invalid_argument("vit config: mlp_ratio must be >= 1");
  if (classes < 2) throw std::invalid_argument("vit config: classes must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0 || drop_path < 0.0 || drop_path >= 1.0)
    throw std::invalid_argument("vit config: rates must be in [0,1)");
}

namespace {

constexpr float kInitStd = 0.02f;

std::string block_prefix(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s.%02d.", stem, i);
  return buf;
}

void add_block_params(ParamSet<float>& p, const std::string& prefix, int dim, int mlp_ratio,
                      Rng& rng, bool zero_residual) {
  int hidden = dim * mlp_ratio;
  p.add(prefix + "ln1.g", Tensor<float>::full({dim}, 1.0f, true));
  p.add(prefix + "ln1.b", Tensor<float>::zeros({dim}, true));
  p.add(prefix + "qkv.w", Tensor<float>::randn({dim, 3 * dim}, rng, kInitStd, true));
  p.add(prefix + "qkv.b", Tensor<float>::zeros({3 * dim}, true));
  p.add(prefix + "proj.w", zero_residual
                               ? Tensor<float>::zeros({dim, dim}, true)
                               : Tensor<float>::randn({dim, dim}, rng, kInitStd, true));
  p.add(prefix + "proj.b", Tensor<float>::zeros({dim}, true));
  p.add(prefix + "ln2.g", Tensor<float>::full({dim}, 1.0f, true));
  p.add(prefix + "ln2.b", Tensor<float>::zeros({dim}, true));
  p.add(prefix + "fc1.w", Tensor<float>::randn({dim, hidden}, rng, kInitStd, true));
  p.add(prefix + "fc1.b", Tensor<float>::zeros({hidden}, true));
  p.add(prefix + "fc2.w", zero_residual
                              ? Tensor<float>::zeros({hidden, dim}, true)
                              : Tensor<float>::randn({hidden, dim}, rng, kInitStd, true));
  p.add(prefix + "fc2.b", Tensor<float>::zeros({dim}, true));
}

int64_t block_param_count(int dim, int mlp_ratio) {
  int64_t d = dim, h = static_cast<int64_t>(dim) * mlp_ratio;
  return 2 * d                    // ln1
         + d * 3 * d + 3 * d      // qkv
         + d * d + d              // proj
         + 2 * d                  // ln2
         + d * h + h              // fc1
         + h * d + d;             // fc2
}

}  // namespace

ParamSet<float> init_params(const ViTConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet<float> p;
  p.add("embed.w", Tensor<float>::randn({cfg.patch_values(), cfg.dim}, rng, kInitStd, true));
  p.add("embed.b", Tensor<float>::zeros({cfg.dim}, true));
  p.add("cls", Tensor<float>::randn({1, cfg.dim}, rng, kInitStd, true));
  for (int i = 0; i < cfg.depth; ++i)
    add_block_params(p, block_prefix("enc", i), cfg.dim, cfg.mlp_ratio, rng, false);
  p.add("enc.norm.g", Tensor<float>::full({cfg.dim}, 1.0f, true));
  p.add("enc.norm.b", Tensor<float>::zeros({cfg.dim}, true));
  p.add("mask_token", Tensor<float>::randn({1, cfg.dim}, rng, kInitStd, true));
  p.add("dec.embed.w", Tensor<float>::randn({cfg.dim, cfg.decoder_dim}, rng, kInitStd, true));
  p.add("dec.embed.b", Tensor<float>::zeros({cfg.decoder_dim}, true));
  for (int i = 0; i < cfg.decoder_depth; ++i)
    add_block_params(p, block_prefix("dec", i), cfg.decoder_dim, cfg.mlp_ratio, rng, false);
  p.add("dec.norm.g", Tensor<float>::full({cfg.decoder_dim}, 1.0f, true));
  p.add("dec.norm.b", Tensor<float>::zeros({cfg.decoder_dim}, true));
  p.add("dec.head.w",
        Tensor<float>::randn({cfg.decoder_dim, cfg.patch_values()}, rng, kInitStd, true));
  p.add("dec.head.b", Tensor<float>::zeros({cfg.patch_values()}, true));
  p.add("head.w", Tensor<float>::randn({cfg.dim, cfg.classes}, rng, kInitStd, true));
  p.add("head.b", Tensor<float>::zeros({cfg.classes}, true));
  return p;
}

ParamSet<float> init_probe_params(const ViTConfig& cfg, int blocks, Rng& rng) {
  if (blocks < 1) throw std::invalid_argument("probe: block count must be >= 1");
  ParamSet<float> p;
  for (int i = 0; i < blocks; ++i)
    add_block_params(p, block_prefix("probe", i), cfg.dim, cfg.mlp_ratio, rng, true);
  p.add("head.w", Tensor<float>::randn({cfg.dim, cfg.classes}, rng, kInitStd, true));
  p.add("head.b", Tensor<float>::zeros({cfg.classes}, true));
  return p;
}

int64_t param_count(const ViTConfig& cfg) {
  int64_t pv = cfg.patch_values();
  int64_t n = pv * cfg.dim + cfg.dim;  // embed
  n += cfg.dim;                        // cls
  n += cfg.depth * block_param_count(cfg.dim, cfg.mlp_ratio);
  n += 2 * cfg.dim;  // enc.norm
  n += cfg.dim;      // mask token
  n += static_cast<int64_t>(cfg.dim) * cfg.decoder_dim + cfg.decoder_dim;  // dec.embed
  n += cfg.decoder_depth * block_param_count(cfg.decoder_dim, cfg.mlp_ratio);
  n += 2 * cfg.decoder_dim;                                // dec.norm
  n += static_cast<int64_t>(cfg.decoder_dim) * pv + pv;    // dec.head
  n += static_cast<int64_t>(cfg.dim) * cfg.classes + cfg.classes;  // head
  return n;
}

int64_t probe_param_count(const ViTConfig& cfg, int blocks) {
  return blocks * block_param_count(cfg.dim, cfg.mlp_ratio) +
         static_cast<int64_t>(cfg.dim) * cfg.classes + cfg.classes;
}

bool decay_param(const std::string& name, const Shape& shape) {
  if (shape.size() == 1) return false;  // biases and norm gains
  if (name == "cls" || name == "mask_token") return false;
  return true;
}

int param_layer(const std::string& name, int depth) {
  if (name.rfind("embed.", 0) == 0 || name == "cls") return -1;
  if (name.rfind("enc.", 0) == 0 && name.size() > 6 && std::isdigit(name[4]) &&
      std::isdigit(name[5]))
    return std::stoi(name.substr(4, 2));
  return depth;
}

// ---------------------------------------------------------------- forward

namespace {

template <typename S>
Tensor<S> pos_table(const ViTConfig& cfg) {
  Tensor<float> t = sincos_pos_embed(cfg.grid(), cfg.grid(), cfg.dim);
  if constexpr (std::is_same_v<S, float>) return t;
  else return t.template cast<S>();
}

/// Per-sample drop-path mask as a dense constant, or undefined when inactive.
template <typename S>
Tensor<S> drop_path_mask(int batch, int tokens, int width, double rate, ForwardRng frng) {
  if (rate <= 0.0 || frng.rng == nullptr) return {};
  Tensor<S> mask = Tensor<S>::zeros({batch * tokens, width});
  S keep = static_cast<S>(1.0 / (1.0 - rate));
  for (int b = 0; b < batch; ++b) {
    S v = frng.rng->next_double() < rate ? S(0) : keep;
    std::fill_n(mask.data() + static_cast<int64_t>(b) * tokens * width,
                static_cast<int64_t>(tokens) * width, v);
  }
  return mask;
}

template <typename S>
Tensor<S> transformer_block(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& p,
                            const std::string& prefix, Tensor<S> x, int batch, int tokens,
                            int heads, ForwardRng frng) {
  auto maybe_dropout = [&](Tensor<S> t) {
    if (cfg.dropout > 0.0 && frng.rng != nullptr)
      return tape.dropout(t, cfg.dropout, *frng.rng);
    return t;
  };
  auto maybe_drop_path = [&](Tensor<S> t) {
    Tensor<S> mask = drop_path_mask<S>(batch, tokens, t.cols(), cfg.drop_path, frng);
    return mask.defined() ? tape.mul(t, mask) : t;
  };

  Tensor<S> h = tape.layer_norm(x, p.at(prefix + "ln1.g"), p.at(prefix + "ln1.b"));
  Tensor<S> qkv = tape.linear(h, p.at(prefix + "qkv.w"), p.at(prefix + "qkv.b"));
  Tensor<S> att = tape.attention(qkv, batch, tokens, heads);
  att = tape.linear(att, p.at(prefix + "proj.w"), p.at(prefix + "proj.b"));
  att = maybe_drop_path(maybe_dropout(att));
  x = tape.add(x, att);

  Tensor<S> h2 = tape.layer_norm(x, p.at(prefix + "ln2.g"), p.at(prefix + "ln2.b"));
  Tensor<S> f = tape.linear(h2, p.at(prefix + "fc1.w"), p.at(prefix + "fc1.b"));
  f = maybe_dropout(tape.gelu(f));
  f = tape.linear(f, p.at(prefix + "fc2.w"), p.at(prefix + "fc2.b"));
  f = maybe_drop_path(f);
  return tape.add(x, f);
}

}  // namespace

template <typename S>
EmbedInput<S> make_embed_input(const std::vector<const PatchSequence*>& seqs,
                               const std::vector<std::vector<int>>& visible) {
  if (seqs.empty() || seqs.size() != visible.size())
    throw std::invalid_argument("embed input: sample count mismatch");
  const PatchSequence& first = *seqs[0];
  size_t v = visible[0].size();
  if (v == 0) throw std::invalid_argument("embed input: no visible tokens");
  EmbedInput<S> input;
  input.grid_rows = first.grid_rows;
  input.grid_cols = first.grid_cols;
  input.visible = visible;
  int rs = first.row_size();
  Tensor<S> patches = Tensor<S>::zeros({static_cast<int>(seqs.size() * v), rs});
  S* dst = patches.data();
  for (size_t b = 0; b < seqs.size(); ++b) {
    const PatchSequence& seq = *seqs[b];
    if (seq.grid_rows != first.grid_rows || seq.grid_cols != first.grid_cols ||
        seq.patch != first.patch)
      throw std::invalid_argument("embed input: mixed patch geometry in batch");
    if (visible[b].size() != v)
      throw std::invalid_argument("embed input: visible counts differ across batch");
    for (int i : visible[b]) {
      if (i < 0 || i >= seq.count)
        throw std::invalid_argument("embed input: visible index out of range");
      const float* src = seq.row(i);
      for (int j = 0; j < rs; ++j) dst[j] = static_cast<S>(src[j]);
      dst += rs;
    }
  }
  input.patches = patches;
  return input;
}

template <typename S>
TokenBatch<S> embed_tokens(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& params,
                           const EmbedInput<S>& input, bool use_pos) {
  if (input.grid_rows != cfg.grid() || input.grid_cols != cfg.grid())
    throw std::invalid_argument("embed: patch grid does not match the model config");
  if (input.patches.cols() != cfg.patch_values())
    throw std::invalid_argument("embed: patch width does not match the model config");
  int batch = static_cast<int>(input.visible.size());
  int v = static_cast<int>(input.visible[0].size());

  Tensor<S> tokens = tape.linear(input.patches, params.at("embed.w"), params.at("embed.b"));
  if (use_pos) {
    Tensor<S> table = pos_table<S>(cfg);
    Tensor<S> pos = Tensor<S>::zeros({batch * v, cfg.dim});
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < v; ++i)
        std::copy_n(table.data() + static_cast<int64_t>(input.visible[b][i]) * cfg.dim,
                    cfg.dim, pos.data() + (static_cast<int64_t>(b) * v + i) * cfg.dim);
    tokens = tape.add(tokens, pos);
  }

  Tensor<S> ones = Tensor<S>::full({batch, 1}, S(1));
  Tensor<S> cls = tape.matmul(ones, params.at("cls"));  // [batch, dim]
  Tensor<S> stacked = tape.concat_rows(cls, tokens);
  std::vector<int> order(static_cast<size_t>(batch) * (v + 1));
  for (int b = 0; b < batch; ++b) {
    order[static_cast<size_t>(b) * (v + 1)] = b;
    for (int i = 0; i < v; ++i)
      order[static_cast<size_t>(b) * (v + 1) + 1 + i] = batch + b * v + i;
  }

  TokenBatch<S> tb;
  tb.tokens = tape.gather_rows(stacked, order);
  tb.batch = batch;
  tb.tokens_per_sample = v + 1;
  tb.visible = input.visible;
  tb.has_cls = true;
  tb.grid_rows = input.grid_rows;
  tb.grid_cols = input.grid_cols;
  return tb;
}

template <typename S>
TokenBatch<S> encode(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& params,
                     const TokenBatch<S>& tb, ForwardRng frng) {
  TokenBatch<S> out = tb;
  Tensor<S> x = tb.tokens;
  for (int i = 0; i < cfg.depth; ++i)
    x = transformer_block(tape, cfg, params, block_prefix("enc", i), x, tb.batch,
                          tb.tokens_per_sample, cfg.heads, frng);
  out.tokens = tape.layer_norm(x, params.at("enc.norm.g"), params.at("enc.norm.b"));
  return out;
}

template <typename S>
TokenBatch<S> insert_mask_tokens(Tape<S>& tape, const ViTConfig& cfg,
                                 const ParamSet<S>& params, const TokenBatch<S>& tb) {
  if (!tb.has_cls) throw std::invalid_argument("insert_mask_tokens: class token required");
  int grid_total = tb.grid_rows * tb.grid_cols;
  int v = tb.tokens_per_sample - 1;
  int out_t = 1 + grid_total;
  int batch = tb.batch;

  std::vector<int> target(static_cast<size_t>(batch) * tb.tokens_per_sample);
  std::vector<uint8_t> filled(static_cast<size_t>(batch) * out_t, 0);
  for (int b = 0; b < batch; ++b) {
    if (static_cast<int>(tb.visible[b].size()) != v)
      throw std::invalid_argument("insert_mask_tokens: visible list inconsistent with batch");
    target[static_cast<size_t>(b) * tb.tokens_per_sample] = b * out_t;
    filled[static_cast<size_t>(b) * out_t] = 1;
    for (int i = 0; i < v; ++i) {
      int slot = tb.visible[b][i];
      if (slot < 0 || slot >= grid_total)
        throw std::invalid_argument("insert_mask_tokens: grid slot out of range");
      size_t pos = static_cast<size_t>(b) * out_t + 1 + slot;
      if (filled[pos])
        throw std::invalid_argument("insert_mask_tokens: duplicate grid slot");
      filled[pos] = 1;
      target[static_cast<size_t>(b) * tb.tokens_per_sample + 1 + i] =
          static_cast<int>(pos);
    }
  }

  Tensor<S> restored = tape.scatter_rows(tb.tokens, target, batch * out_t);
  int missing = batch * out_t - static_cast<int>(std::count(filled.begin(), filled.end(), 1));
  if (missing > 0) {
    Tensor<S> indicator = Tensor<S>::zeros({batch * out_t, 1});
    Tensor<S> table = pos_table<S>(cfg);
    Tensor<S> pos = Tensor<S>::zeros({batch * out_t, cfg.dim});
    for (int b = 0; b < batch; ++b)
      for (int slot = 0; slot < grid_total; ++slot) {
        size_t row = static_cast<size_t>(b) * out_t + 1 + slot;
        if (filled[row]) continue;
        indicator.data()[row] = S(1);
        std::copy_n(table.data() + static_cast<int64_t>(slot) * cfg.dim, cfg.dim,
                    pos.data() + row * cfg.dim);
      }
    Tensor<S> masks = tape.matmul(indicator, params.at("mask_token"));
    restored = tape.add(tape.add(restored, masks), pos);
  }

  TokenBatch<S> out;
  out.tokens = restored;
  out.batch = batch;
  out.tokens_per_sample = out_t;
  out.visible.assign(batch, {});
  for (int b = 0; b < batch; ++b) {
    out.visible[b].resize(grid_total);
    for (int i = 0; i < grid_total; ++i) out.visible[b][i] = i;
  }
  out.has_cls = true;
  out.grid_rows = tb.grid_rows;
  out.grid_cols = tb.grid_cols;
  return out;
}

template <typename S>
Tensor<S> decode(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& params,
                 const TokenBatch<S>& tb, ForwardRng frng) {
  int grid_total = tb.grid_rows * tb.grid_cols;
  if (tb.tokens_per_sample != 1 + grid_total)
    throw std::invalid_argument("decode: expects 1+M tokens per sample, got " +
                                std::to_string(tb.tokens_per_sample));
  Tensor<S> x = tape.linear(tb.tokens, params.at("dec.embed.w"), params.at("dec.embed.b"));
  for (int i = 0; i < cfg.decoder_depth; ++i)
    x = transformer_block(tape, cfg, params, block_prefix("dec", i), x, tb.batch,
                          tb.tokens_per_sample, cfg.decoder_heads, frng);
  x = tape.layer_norm(x, params.at("dec.norm.g"), params.at("dec.norm.b"));
  x = tape.linear(x, params.at("dec.head.w"), params.at("dec.head.b"));
  std::vector<int> patch_rows(static_cast<size_t>(tb.batch) * grid_total);
  for (int b = 0; b < tb.batch; ++b)
    for (int i = 0; i < grid_total; ++i)
      patch_rows[static_cast<size_t>(b) * grid_total + i] =
          b * tb.tokens_per_sample + 1 + i;
  return tape.gather_rows(x, patch_rows);
}

template <typename S>
Tensor<S> classify_linear(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& params,
                          const TokenBatch<S>& tb) {
  (void)cfg;
  if (!tb.has_cls) throw std::invalid_argument("classify: class token missing");
  std::vector<int> cls_rows(tb.batch);
  for (int b = 0; b < tb.batch; ++b) cls_rows[b] = b * tb.tokens_per_sample;
  Tensor<S> features = tape.gather_rows(tb.tokens, cls_rows);
  return tape.linear(features, params.at("head.w"), params.at("head.b"));
}

template <typename S>
Tensor<S> probe_nonlinear(Tape<S>& tape, const ViTConfig& cfg,
                          const ParamSet<S>& probe_params, const TokenBatch<S>& tb,
                          int blocks, ForwardRng frng) {
  if (blocks < 1) throw std::invalid_argument("probe: block count must be >= 1");
  Tensor<S> x = tb.tokens;
  for (int i = 0; i < blocks; ++i)
    x = transformer_block(tape, cfg, probe_params, block_prefix("probe", i), x, tb.batch,
                          tb.tokens_per_sample, cfg.heads, frng);
  TokenBatch<S> probed = tb;
  probed.tokens = x;
  return classify_linear(tape, cfg, probe_params, probed);
}

#define VTPT_INSTANTIATE(S)                                                                  \
  template EmbedInput<S> make_embed_input<S>(const std::vector<const PatchSequence*>&,       \
                                             const std::vector<std::vector<int>>&);          \
  template TokenBatch<S> embed_tokens<S>(Tape<S>&, const ViTConfig&, const ParamSet<S>&,     \
                                         const EmbedInput<S>&, bool);                        \
  template TokenBatch<S> encode<S>(Tape<S>&, const ViTConfig&, const ParamSet<S>&,           \
                                   const TokenBatch<S>&, ForwardRng);                        \
  template TokenBatch<S> insert_mask_tokens<S>(Tape<S>&, const ViTConfig&,                   \
                                               const ParamSet<S>&, const TokenBatch<S>&);    \
  template Tensor<S> decode<S>(Tape<S>&, const ViTConfig&, const ParamSet<S>&,               \
                               const TokenBatch<S>&, ForwardRng);                            \
  template Tensor<S> classify_linear<S>(Tape<S>&, const ViTConfig&, const ParamSet<S>&,      \
                                        const TokenBatch<S>&);                               \
  template Tensor<S> probe_nonlinear<S>(Tape<S>&, const ViTConfig&, const ParamSet<S>&,      \
                                        const TokenBatch<S>&, int, ForwardRng);

VTPT_INSTANTIATE(float)
VTPT_INSTANTIATE(double)
#undef VTPT_INSTANTIATE

}  // namespace vtpt
