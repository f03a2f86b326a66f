#pragma once

// The full network: per-feature embeddings, one Mamba stack for numeric and
// one for categorical features, intra-group attention, inter-group attention
// over pooled group tokens, and a dense prediction head.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mac/attention.hpp"
#include "mac/autodiff.hpp"
#include "mac/data.hpp"
#include "mac/errors.hpp"
#include "mac/groups.hpp"
#include "mac/mamba.hpp"
#include "mac/random.hpp"

namespace mac {

/// Stage toggles matching the ablation variants.
struct Ablation {
  bool use_mamba = true;
  bool use_intra = true;
  bool use_inter = true;
  std::optional<Group> drop_group;

  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  std::size_t embed_dim = 16;    ///< D
  std::size_t expansion = 2;     ///< S
  std::size_t state_dim = 8;     ///< N
  std::size_t attn_layers = 3;   ///< L
  std::size_t attn_heads = 4;    ///< H
  std::size_t conv_width = 4;    ///< W
  std::size_t mamba_blocks = 1;  ///< blocks per feature category
  double huber_delta = 10.0;     ///< δ
  double rms_epsilon = 1e-6;
  /// Reject inputs with |value| above input_limit, which indicates data that
  /// skipped normalization.
  bool validate_inputs = true;
  double input_limit = 100.0;
  Ablation ablation;

  void validate() const {
    if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
    check_heads(embed_dim, attn_heads);
    if (expansion < 1) throw ConfigError("expansion factor S must be at least 1");
    if (state_dim < 1) throw ConfigError("state dimension N must be at least 1");
    if (attn_layers < 1) throw ConfigError("attention layers L must be at least 1");
    if (conv_width < 1) throw ConfigError("convolution width must be at least 1");
    if (!(huber_delta > 0.0)) throw ConfigError("huber delta must be positive");
  }
};

inline Json config_to_json(const ModelConfig& c) {
  Json j{{"embed_dim", c.embed_dim},       {"expansion", c.expansion},
         {"state_dim", c.state_dim},       {"attn_layers", c.attn_layers},
         {"attn_heads", c.attn_heads},     {"conv_width", c.conv_width},
         {"mamba_blocks", c.mamba_blocks}, {"huber_delta", c.huber_delta},
         {"rms_epsilon", c.rms_epsilon},   {"validate_inputs", c.validate_inputs},
         {"input_limit", c.input_limit},   {"use_mamba", c.ablation.use_mamba},
         {"use_intra", c.ablation.use_intra}, {"use_inter", c.ablation.use_inter}};
  j["drop_group"] = c.ablation.drop_group ? Json(std::string(group_name(*c.ablation.drop_group))) : Json(nullptr);
  return j;
}

/// Reads known keys over `base`; absent keys keep their current values.
inline ModelConfig config_from_json(const Json& j, ModelConfig c = {}) {
  try {
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.expansion = j.value("expansion", c.expansion);
    c.state_dim = j.value("state_dim", c.state_dim);
    c.attn_layers = j.value("attn_layers", c.attn_layers);
    c.attn_heads = j.value("attn_heads", c.attn_heads);
    c.conv_width = j.value("conv_width", c.conv_width);
    c.mamba_blocks = j.value("mamba_blocks", c.mamba_blocks);
    c.huber_delta = j.value("huber_delta", c.huber_delta);
    c.rms_epsilon = j.value("rms_epsilon", c.rms_epsilon);
    c.validate_inputs = j.value("validate_inputs", c.validate_inputs);
    c.input_limit = j.value("input_limit", c.input_limit);
    c.ablation.use_mamba = j.value("use_mamba", c.ablation.use_mamba);
    c.ablation.use_intra = j.value("use_intra", c.ablation.use_intra);
    c.ablation.use_inter = j.value("use_inter", c.ablation.use_inter);
    if (j.contains("drop_group")) {
      if (j.at("drop_group").is_null()) {
        c.ablation.drop_group.reset();
      } else {
        const auto name = j.at("drop_group").get<std::string>();
        c.ablation.drop_group = parse_group(name);
        if (!c.ablation.drop_group) throw ConfigError("unknown drop_group '" + name + "'");
      }
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

/// All trainable state plus the structural information needed to run it.
struct MacParams {
  ModelConfig config;
  FeatureLayout layout;
  std::vector<std::size_t> vocab_sizes;  ///< per categorical feature, including the unknown id

  Tensor numeric_weight;  ///< [F_num×D], token = x·w_f + b_f
  Tensor numeric_bias;    ///< [F_num×D]
  std::vector<Tensor> embedding_tables;  ///< [V_f×D] per categorical feature
  std::vector<MambaBlockParams> numeric_blocks;
  std::vector<MambaBlockParams> char_blocks;
  GroupStacks intra;
  std::vector<AttentionLayerParams> inter;
  Tensor head_weight;  ///< [(G·D)×n_outputs]
  Tensor head_bias;    ///< [1×n_outputs]

  std::size_t output_count() const { return layout.outputs.size(); }

  /// Groups that produce an inter-group token, in canonical order.
  std::vector<Group> active_groups() const {
    std::vector<Group> out;
    for (Group g : kAllGroups) {
      if (config.ablation.drop_group == g) continue;
      const bool present = std::any_of(layout.features.begin(), layout.features.end(),
                                       [g](const ResolvedFeature& f) { return f.group == g; });
      if (present) out.push_back(g);
    }
    return out;
  }

  GroupPartition partition() const {
    GroupPartition p;
    for (const auto& f : layout.features) p.feature_groups.push_back(f.group);
    return p;
  }

  template <class Fn>
  void for_each_parameter(Fn&& fn) {
    if (numeric_weight.defined()) {
      fn("embed.numeric.weight", numeric_weight);
      fn("embed.numeric.bias", numeric_bias);
    }
    for (std::size_t f = 0; f < embedding_tables.size(); ++f) {
      fn("embed.char." + std::to_string(f), embedding_tables[f]);
    }
    for (std::size_t b = 0; b < numeric_blocks.size(); ++b) {
      mac::for_each_parameter(numeric_blocks[b], "mamba.numeric." + std::to_string(b) + ".", fn);
    }
    for (std::size_t b = 0; b < char_blocks.size(); ++b) {
      mac::for_each_parameter(char_blocks[b], "mamba.char." + std::to_string(b) + ".", fn);
    }
    for (Group g : kAllGroups) {
      auto& stack = intra[group_index(g)];
      for (std::size_t l = 0; l < stack.size(); ++l) {
        mac::for_each_parameter(stack[l], "attn.intra." + std::string(group_name(g)) + "." + std::to_string(l) + ".", fn);
      }
    }
    for (std::size_t l = 0; l < inter.size(); ++l) {
      mac::for_each_parameter(inter[l], "attn.inter." + std::to_string(l) + ".", fn);
    }
    fn("head.weight", head_weight);
    fn("head.bias", head_bias);
  }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    for_each_parameter([&](const std::string&, Tensor& t) { out.push_back(t); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, Tensor& t) { n += t.size(); });
    return n;
  }

  /// Deep copy; the copy shares no storage with this one.
  MacParams clone() const {
    MacParams out = *this;
    out.for_each_parameter([](const std::string&, Tensor& t) { t = t.clone(); });
    return out;
  }

  void zero_grad() {
    for_each_parameter([](const std::string&, Tensor& t) { t.zero_grad(); });
  }
};

/// Parameter count as a function of layout and configuration alone.
inline std::size_t expected_parameter_count(const FeatureLayout& layout,
                                            const std::vector<std::size_t>& vocab_sizes,
                                            const ModelConfig& c) {
  const std::size_t d = c.embed_dim;
  const std::size_t f_num = layout.numeric_count();
  const std::size_t f_cat = layout.categorical_count();
  std::size_t groups = 0;
  for (Group g : kAllGroups) {
    if (c.ablation.drop_group == g) continue;
    if (std::any_of(layout.features.begin(), layout.features.end(), [g](const auto& f) { return f.group == g; })) ++groups;
  }
  std::size_t n = 2 * f_num * d;
  for (std::size_t v : vocab_sizes) n += v * d;
  if (c.ablation.use_mamba) {
    const std::size_t block = mamba_parameter_count(d, c.expansion, c.state_dim, c.conv_width);
    n += c.mamba_blocks * block * ((f_num > 0 ? 1 : 0) + (f_cat > 0 ? 1 : 0));
  }
  const std::size_t layer = attention_layer_parameter_count(d);
  if (c.ablation.use_intra) n += groups * c.attn_layers * layer;
  if (c.ablation.use_inter) n += c.attn_layers * layer;
  n += groups * d * layout.outputs.size() + layout.outputs.size();
  return n;
}

/// Deterministic initialization: linear maps uniform in ±1/sqrt(fan_in),
/// A = -(i+1), zero residual output projections and a zero head.
inline MacParams init_params(const FeatureLayout& layout, const std::vector<std::size_t>& vocab_sizes,
                             const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (vocab_sizes.size() != layout.categorical_count()) {
    throw SchemaError("expected " + std::to_string(layout.categorical_count()) + " vocabulary sizes, got " +
                      std::to_string(vocab_sizes.size()));
  }
  if (layout.outputs.empty()) throw SchemaError("layout has no outputs");
  Rng rng(seed);
  MacParams p;
  p.config = config;
  p.layout = layout;
  p.vocab_sizes = vocab_sizes;
  const std::size_t d = config.embed_dim;
  const std::size_t f_num = layout.numeric_count();

  if (f_num > 0) {
    std::vector<double> w(f_num * d), b(f_num * d);
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);
    p.numeric_weight = Tensor::matrix(f_num, d, std::move(w), true);
    p.numeric_bias = Tensor::matrix(f_num, d, std::move(b), true);
  }
  for (std::size_t v : vocab_sizes) {
    std::vector<double> table(v * d);
    for (auto& x : table) x = rng.normal();
    p.embedding_tables.push_back(Tensor::matrix(v, d, std::move(table), true));
  }
  if (config.ablation.use_mamba) {
    for (std::size_t b = 0; b < config.mamba_blocks; ++b) {
      if (f_num > 0) {
        p.numeric_blocks.push_back(
            init_mamba_block(d, config.expansion, config.state_dim, config.conv_width, rng, config.rms_epsilon));
      }
      if (layout.categorical_count() > 0) {
        p.char_blocks.push_back(
            init_mamba_block(d, config.expansion, config.state_dim, config.conv_width, rng, config.rms_epsilon));
      }
    }
  }
  const auto groups = p.active_groups();
  if (config.ablation.use_intra) {
    for (Group g : groups) {
      for (std::size_t l = 0; l < config.attn_layers; ++l) {
        p.intra[group_index(g)].push_back(init_attention_layer(d, config.attn_heads, rng, config.rms_epsilon));
      }
    }
  }
  if (config.ablation.use_inter) {
    for (std::size_t l = 0; l < config.attn_layers; ++l) {
      p.inter.push_back(init_attention_layer(d, config.attn_heads, rng, config.rms_epsilon));
    }
  }
  if (groups.empty()) throw SchemaError("no feature group is left for the prediction head");
  p.head_weight = Tensor::zeros({groups.size() * d, layout.outputs.size()}, true);
  p.head_bias = Tensor::zeros({1, layout.outputs.size()}, true);
  return p;
}

/// Attention matrices captured during one forward pass.
struct AttentionTrace {
  struct GroupWeights {
    Group group = Group::Other;
    std::vector<std::string> features;
    std::vector<HeadWeights> layers;  ///< [layer][head] -> F_g×F_g
  };
  std::vector<GroupWeights> intra;
  std::vector<Group> inter_groups;
  std::vector<HeadWeights> inter;  ///< [layer][head] -> G×G
};

/// Prediction for a single encoded sample as a [1×n_outputs] row.
inline Tensor forward_sample(const MacParams& p, const EncodedSample& sample, AttentionTrace* trace = nullptr) {
  const auto& layout = p.layout;
  const std::size_t f_num = layout.numeric_count();
  const std::size_t f_cat = layout.categorical_count();
  if (sample.numeric.size() != f_num || sample.tokens.size() != f_cat) {
    throw SchemaError("sample has " + std::to_string(sample.numeric.size()) + " numeric and " +
                      std::to_string(sample.tokens.size()) + " categorical values; model expects " +
                      std::to_string(f_num) + " and " + std::to_string(f_cat));
  }
  if (p.config.validate_inputs) {
    for (double v : sample.numeric) {
      if (!std::isfinite(v) || std::abs(v) > p.config.input_limit) {
        throw DataError("input value " + std::to_string(v) + " in row " + std::to_string(sample.row) +
                        " looks unnormalized");
      }
    }
  }
  for (std::size_t f = 0; f < f_cat; ++f) {
    if (sample.tokens[f] >= p.vocab_sizes[f]) throw DataError("token id out of vocabulary range");
  }

  std::vector<Tensor> parts;
  if (f_num > 0) {
    const Tensor values = Tensor::matrix(f_num, 1, sample.numeric);
    Tensor seq = add(mul_rows(p.numeric_weight, values), p.numeric_bias);
    for (const auto& block : p.numeric_blocks) seq = mamba_forward(seq, block);
    parts.push_back(seq);
  }
  if (f_cat > 0) {
    std::vector<Tensor> rows;
    for (std::size_t f = 0; f < f_cat; ++f) rows.push_back(gather_rows(p.embedding_tables[f], {sample.tokens[f]}));
    Tensor seq = rows.size() == 1 ? rows[0] : concat_rows(rows);
    for (const auto& block : p.char_blocks) seq = mamba_forward(seq, block);
    parts.push_back(seq);
  }

  // Restore schema order: numeric rows come first in `merged`, then categorical.
  std::vector<std::size_t> order;
  std::size_t ni = 0, ci = 0;
  for (const auto& f : layout.features) order.push_back(f.kind == FeatureKind::Numeric ? ni++ : f_num + ci++);
  const Tensor merged = gather_rows(parts.size() == 1 ? parts[0] : concat_rows(parts), order);

  const auto groups = p.active_groups();
  GroupStacks no_layers;
  const auto intra = intra_group_attention(merged, p.partition(), p.config.ablation.use_intra ? p.intra : no_layers, groups);
  std::vector<Tensor> group_outputs;
  for (const auto& g : intra) group_outputs.push_back(g.output);
  const StackResult inter = inter_group_attention(
      group_outputs, p.config.ablation.use_inter ? std::span<const AttentionLayerParams>(p.inter)
                                                 : std::span<const AttentionLayerParams>());

  if (trace) {
    trace->intra.clear();
    for (const auto& g : intra) {
      AttentionTrace::GroupWeights gw;
      gw.group = g.group;
      for (std::size_t m : g.members) gw.features.push_back(layout.features[m].name);
      gw.layers = g.layers;
      trace->intra.push_back(std::move(gw));
    }
    trace->inter_groups = groups;
    trace->inter = inter.layers;
  }

  const Tensor fused = reshape(inter.output, {1, inter.output.size()});
  return prediction_head(fused, p.head_weight, p.head_bias);
}

/// Predictions for a batch as a [B×n_outputs] matrix, in standardized units.
inline Tensor forward(const MacParams& p, std::span<const EncodedSample> batch) {
  if (batch.empty()) throw ContractError("forward: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const auto& s : batch) rows.push_back(forward_sample(p, s));
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  MacParams params;
  std::optional<Transform> transform;
};

inline Json checkpoint_to_json(const Checkpoint& ck) {
  MacParams params = ck.params;
  Json tensors = Json::object();
  params.for_each_parameter([&](const std::string& name, Tensor& t) {
    tensors[name] = Json{{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
  });
  Json j{{"format", "mac-checkpoint"},
         {"version", kCheckpointVersion},
         {"config", config_to_json(params.config)},
         {"layout", layout_to_json(params.layout)},
         {"schema_hash", layout_hash(params.layout)},
         {"vocab_sizes", params.vocab_sizes},
         {"parameters", tensors}};
  if (ck.transform) j["transform"] = transform_to_json(*ck.transform);
  return j;
}

/// Rebuilds a checkpoint. When `expected` is given, its hash must match the
/// stored layout hash.
inline Checkpoint checkpoint_from_json(const Json& j, const FeatureLayout* expected = nullptr) {
  Checkpoint ck;
  try {
    if (j.value("format", std::string{}) != "mac-checkpoint") throw ParseError("not a checkpoint document");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const FeatureLayout layout = layout_from_json(j.at("layout"));
    const std::string stored_hash = j.at("schema_hash").get<std::string>();
    if (layout_hash(layout) != stored_hash) throw CheckpointError("checkpoint layout does not match its schema hash");
    if (expected && layout_hash(*expected) != stored_hash) {
      throw CheckpointError("incompatible checkpoint: schema hash " + stored_hash + " differs from expected " +
                            layout_hash(*expected));
    }
    const ModelConfig config = config_from_json(j.at("config"));
    const auto vocab = j.at("vocab_sizes").get<std::vector<std::size_t>>();
    ck.params = init_params(layout, vocab, config, 0);
    const Json& tensors = j.at("parameters");
    std::size_t matched = 0;
    ck.params.for_each_parameter([&](const std::string& name, Tensor& t) {
      if (!tensors.contains(name)) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
      const auto& jt = tensors.at(name);
      const auto shape = jt.at("shape").get<Shape>();
      const auto data = jt.at("data").get<std::vector<double>>();
      if (shape != t.shape() || data.size() != t.size()) {
        throw CheckpointError("parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                              shape_string(t.shape()));
      }
      std::copy(data.begin(), data.end(), t.mutable_data().begin());
      ++matched;
    });
    if (matched != tensors.size()) throw CheckpointError("checkpoint holds parameters the model does not define");
    if (j.contains("transform")) ck.transform = transform_from_json(j.at("transform"));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(ck).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const FeatureLayout* expected = nullptr) {
  return checkpoint_from_json(read_json_file(path), expected);
}

}  // namespace mac
