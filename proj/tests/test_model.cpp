#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mac/model.hpp"
#include "model_fixture.hpp"

using namespace mac;
using mac::testing::Suite;

namespace {

// 30 numeric and 5 categorical features with four tokens each.
Suite full_suite(std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.samples = 40;
  auto synth = synthesize(spec, seed);
  auto [t, enc] = fit_transform(synth.data);
  return {std::move(t), std::move(enc)};
}

void expect_same_values(MacParams& a, MacParams& b) {
  std::vector<std::vector<double>> va, vb;
  a.for_each_parameter([&](const std::string&, Tensor& t) { va.emplace_back(t.data().begin(), t.data().end()); });
  b.for_each_parameter([&](const std::string&, Tensor& t) { vb.emplace_back(t.data().begin(), t.data().end()); });
  EXPECT_EQ(va, vb);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mac_test_model_" + name);
}

}  // namespace

TEST(Model, InitIsDeterministic) {
  const Suite s = full_suite();
  MacParams a = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 42);
  MacParams b = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 42);
  expect_same_values(a, b);
  MacParams c = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 43);
  EXPECT_NE(a.numeric_weight.data()[0], c.numeric_weight.data()[0]);
}

TEST(Model, ParameterCountMatchesClosedForm) {
  const Suite s = full_suite();
  ASSERT_EQ(s.transform.model_layout.numeric_count(), 30u);
  ASSERT_EQ(s.transform.model_layout.categorical_count(), 5u);
  for (auto v : s.transform.vocab_sizes()) ASSERT_EQ(v, 5u);
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 0);

  // D=16, E=32, N=8, W=4, L=3, four groups, one output.
  const std::size_t d = 16, e = 32, n = 8, w = 4;
  const std::size_t embed = 2 * 30 * d + 5 * 5 * d;
  const std::size_t block = d + d * e + w * e + e + e * e + e + 2 * (e * n + n) + e * n + e * d;
  const std::size_t layer = 4 * d * d + d;
  const std::size_t head = 4 * d + 1;
  const std::size_t total = embed + 2 * block + (4 * 3 + 3) * layer + head;
  EXPECT_EQ(block, 3040u);
  EXPECT_EQ(total, 23105u);
  EXPECT_EQ(p.parameter_count(), total);
  EXPECT_EQ(expected_parameter_count(s.transform.model_layout, s.transform.vocab_sizes(), {}), total);
}

TEST(Model, InitialOutputIsHeadBias) {
  const Suite s = full_suite();
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 5);
  p.head_bias.mutable_data()[0] = 3.25;
  for (const auto& sample : s.data.samples) {
    const Tensor y = forward_sample(p, sample);
    EXPECT_EQ(y.data()[0], 3.25);
  }
}

TEST(Model, ZeroEmbeddingsAndHeadGiveBias) {
  Suite s = mac::testing::small_suite({2, 3, 2, 1}, 10, 3, 4);
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 5);
  mac::testing::randomize(p, 6);
  p.for_each_parameter([](const std::string& name, Tensor& t) {
    if (name.starts_with("embed.") || name == "head.weight") {
      for (auto& v : t.mutable_data()) v = 0.0;
    }
  });
  const std::vector<double> beta{1.5, -2.0, 0.25};
  std::copy(beta.begin(), beta.end(), p.head_bias.mutable_data().begin());
  const Tensor y = forward(p, std::span<const EncodedSample>(s.data.samples.data(), 1));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), beta);
}

TEST(Model, DimensionMustDivideHeads) {
  const Suite s = full_suite();
  ModelConfig c;
  c.attn_heads = 3;
  EXPECT_THROW(init_params(s.transform.model_layout, s.transform.vocab_sizes(), c, 0), ConfigError);
}

TEST(Model, AblationsRemoveTheirParameters) {
  const Suite s = full_suite();
  const auto& layout = s.transform.model_layout;
  const auto vocab = s.transform.vocab_sizes();
  const std::size_t layer = 4 * 16 * 16 + 16;
  auto count = [&](const ModelConfig& c) {
    MacParams p = init_params(layout, vocab, c, 0);
    EXPECT_EQ(p.parameter_count(), expected_parameter_count(layout, vocab, c));
    return p.parameter_count();
  };
  const std::size_t full = count({});

  ModelConfig no_mamba;
  no_mamba.ablation.use_mamba = false;
  EXPECT_EQ(full - count(no_mamba), 2u * 3040u);

  ModelConfig no_intra;
  no_intra.ablation.use_intra = false;
  EXPECT_EQ(full - count(no_intra), 4u * 3u * layer);

  ModelConfig no_inter;
  no_inter.ablation.use_inter = false;
  EXPECT_EQ(full - count(no_inter), 3u * layer);

  ModelConfig mamba_only;
  mamba_only.ablation.use_intra = false;
  mamba_only.ablation.use_inter = false;
  EXPECT_EQ(full - count(mamba_only), 15u * layer);

  // Memory loses its intra stack and its 16 head inputs.
  ModelConfig no_mem;
  no_mem.ablation.drop_group = Group::Memory;
  EXPECT_EQ(full - count(no_mem), 3u * layer + 16u);
}

TEST(Model, AblatedModelsStillRun) {
  const Suite s = full_suite();
  for (int variant = 0; variant < 4; ++variant) {
    ModelConfig c;
    c.ablation.use_mamba = variant != 0;
    c.ablation.use_intra = variant != 1;
    c.ablation.use_inter = variant != 2;
    if (variant == 3) c.ablation.drop_group = Group::Cpu;
    MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), c, 1);
    mac::testing::randomize(p, 2);
    const Tensor y = forward(p, std::span<const EncodedSample>(s.data.samples.data(), 2));
    EXPECT_EQ(y.shape(), (Shape{2, 1}));
    for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Model, DroppedGroupLeavesAttention) {
  const Suite s = full_suite();
  ModelConfig c;
  c.ablation.drop_group = Group::Memory;
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), c, 1);
  mac::testing::randomize(p, 2);
  AttentionTrace trace;
  forward_sample(p, s.data.samples[0], &trace);
  EXPECT_EQ(trace.inter_groups, (std::vector<Group>{Group::Char, Group::Cpu, Group::Other}));
  for (const auto& g : trace.intra) EXPECT_NE(g.group, Group::Memory);
  for (const auto& w : trace.inter[0]) EXPECT_EQ(w.size(), 9u);

  // Memory features still feed the numeric Mamba scan, so they only vanish
  // from the prediction once that stage is off too.
  p.config.ablation.use_mamba = false;
  p.numeric_blocks.clear();
  p.char_blocks.clear();
  EncodedSample changed = s.data.samples[0];
  for (std::size_t i = 0, ni = 0; i < p.layout.features.size(); ++i) {
    if (p.layout.features[i].kind != FeatureKind::Numeric) continue;
    if (p.layout.features[i].group == Group::Memory) changed.numeric[ni] += 1.0;
    ++ni;
  }
  EXPECT_EQ(forward_sample(p, changed).data()[0], forward_sample(p, s.data.samples[0]).data()[0]);
}

TEST(Model, TraceShapes) {
  const Suite s = full_suite();
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 1);
  AttentionTrace trace;
  forward_sample(p, s.data.samples[0], &trace);
  ASSERT_EQ(trace.intra.size(), 4u);
  const std::array<std::size_t, 4> sizes{5, 20, 6, 4};
  for (const auto& g : trace.intra) {
    const std::size_t f = sizes[group_index(g.group)];
    EXPECT_EQ(g.features.size(), f);
    ASSERT_EQ(g.layers.size(), 3u);
    for (const auto& layer : g.layers) {
      ASSERT_EQ(layer.size(), 4u);
      for (const auto& w : layer) EXPECT_EQ(w.size(), f * f);
    }
  }
  ASSERT_EQ(trace.inter.size(), 3u);
  for (const auto& layer : trace.inter) {
    for (const auto& w : layer) EXPECT_EQ(w.size(), 16u);
  }
}

TEST(Model, UnnormalizedInputIsRejected) {
  const Suite s = full_suite();
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 1);
  EncodedSample bad = s.data.samples[0];
  bad.numeric[3] = 250.0;
  EXPECT_THROW(forward_sample(p, bad), DataError);
  p.config.validate_inputs = false;
  EXPECT_NO_THROW(forward_sample(p, bad));
}

TEST(Model, WrongSampleWidthIsSchemaError) {
  const Suite s = full_suite();
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 1);
  EncodedSample bad = s.data.samples[0];
  bad.numeric.pop_back();
  EXPECT_THROW(forward_sample(p, bad), SchemaError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Suite s = full_suite();
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 1);
  mac::testing::randomize(p, 9);
  const auto path = temp_path("roundtrip.json");
  save_checkpoint({p, s.transform}, path);
  Checkpoint back = load_checkpoint(path, &s.transform.model_layout);
  std::filesystem::remove(path);
  expect_same_values(p, back.params);
  EXPECT_EQ(config_to_json(back.params.config), config_to_json(p.config));
  ASSERT_TRUE(back.transform.has_value());
  EXPECT_EQ(transform_to_json(*back.transform), transform_to_json(s.transform));
  for (const auto& sample : s.data.samples) {
    EXPECT_EQ(forward_sample(back.params, sample).data()[0], forward_sample(p, sample).data()[0]);
  }
}

TEST(Checkpoint, DifferentSchemaIsRejected) {
  const Suite s = full_suite();
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 1);
  const Json j = checkpoint_to_json({p, std::nullopt});
  FeatureLayout other = s.transform.model_layout;
  other.features[0].name = "renamed";
  EXPECT_THROW(checkpoint_from_json(j, &other), CheckpointError);

  Json tampered = j;
  tampered["layout"]["features"][0]["name"] = "renamed";
  EXPECT_THROW(checkpoint_from_json(tampered), CheckpointError);
}

TEST(Checkpoint, MalformedInputIsParseError) {
  const auto path = temp_path("broken.json");
  {
    std::ofstream out(path);
    out << "{\"format\": \"mac-checkpoint\", \"version\": ";
  }
  EXPECT_THROW(load_checkpoint(path), ParseError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(temp_path("missing.json")), ParseError);
  EXPECT_THROW(checkpoint_from_json(Json{{"format", "mac-checkpoint"}, {"version", 1}}), ParseError);
  EXPECT_THROW(checkpoint_from_json(Json{{"format", "other"}}), ParseError);
}

TEST(Checkpoint, WrongShapeOrVersionIsRejected) {
  const Suite s = full_suite();
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), {}, 1);
  Json j = checkpoint_to_json({p, std::nullopt});
  Json v = j;
  v["version"] = 99;
  EXPECT_THROW(checkpoint_from_json(v), CheckpointError);
  j["parameters"]["head.bias"]["shape"] = {1, 2};
  j["parameters"]["head.bias"]["data"] = {0.0, 0.0};
  EXPECT_THROW(checkpoint_from_json(j), CheckpointError);
}

class FullModelGradient : public ::testing::TestWithParam<int> {};

TEST_P(FullModelGradient, RandomBatchAllParameters) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  ModelConfig cfg;
  cfg.embed_dim = 4;
  cfg.state_dim = 2;
  cfg.attn_layers = 1;
  cfg.attn_heads = 2;
  Suite s = mac::testing::small_suite({3, 4, 3, 2}, 12, 2, seed);
  MacParams p = init_params(s.transform.model_layout, s.transform.vocab_sizes(), cfg, seed);
  mac::testing::randomize(p, seed + 50);
  const auto batch = mac::testing::near_targets(p, std::span<const EncodedSample>(s.data.samples.data(), 3), 0.1, seed);
  std::vector<std::string> names;
  p.for_each_parameter([&](const std::string& n, Tensor&) { names.push_back(n); });
  const auto r = finite_diff_check([&] { return mac::testing::batch_loss(p, batch); }, p.parameters(), 1e-6, 0, seed);
  EXPECT_EQ(r.coordinates_checked, p.parameter_count());
  EXPECT_LT(r.max_relative_error, 1e-4) << names[r.worst_tensor] << "[" << r.worst_index << "] analytic "
                                        << r.worst_analytic << " numeric " << r.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, FullModelGradient, ::testing::Range(0, 10));
