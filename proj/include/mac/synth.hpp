#pragma once

// Synthetic suites with a known generating function, used where the real
// benchmark data is unavailable.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mac/data.hpp"
#include "mac/groups.hpp"
#include "mac/random.hpp"

namespace mac {

struct SynthSpec {
  std::size_t samples = 500;
  /// Features per group; Char features are categorical, the rest numeric.
  std::array<std::size_t, kGroupCount> group_features{5, 20, 6, 4};
  std::size_t outputs = 1;
  double base = 100.0;
  double linear_scale = 3.0;       ///< linear weights ~ U(-s, s)
  std::size_t interactions = 0;    ///< number of pairwise product terms
  double interaction_scale = 6.0;  ///< |coefficient| ~ U(s/2, s)
  double category_scale = 4.0;     ///< per-token offsets ~ U(-s, s)
  std::size_t vocab = 4;           ///< tokens per categorical feature
  double noise_sigma = 0.5;
  /// Groups whose features do not influence the target.
  std::array<bool, kGroupCount> silent{false, false, false, false};
};

struct InteractionTerm {
  std::size_t i = 0, j = 0;        ///< numeric feature indices
  std::vector<double> coefficient; ///< per output
};

/// The recorded generating function. Numeric feature f is drawn uniformly on
/// [lo[f], hi[f]] and enters the target through c_f = 2(x - lo)/(hi - lo) - 1.
struct Generator {
  std::vector<double> base;                           ///< per output
  std::vector<double> lo, hi;                         ///< per numeric feature
  std::vector<std::vector<double>> linear;            ///< [output][numeric feature]
  std::vector<InteractionTerm> interactions;
  std::vector<std::vector<std::vector<double>>> category_offset;  ///< [output][feature][token]
  std::vector<std::vector<std::string>> tokens;       ///< [feature][token]
  double noise_sigma = 0.0;

  double centered(std::size_t f, double x) const { return 2.0 * (x - lo[f]) / (hi[f] - lo[f]) - 1.0; }

  /// Noise-free target of one sample.
  double evaluate(const RawSample& s, std::size_t output) const {
    double y = base[output];
    for (std::size_t f = 0; f < lo.size(); ++f) y += linear[output][f] * centered(f, s.numeric[f]);
    for (const auto& term : interactions) {
      y += term.coefficient[output] * centered(term.i, s.numeric[term.i]) * centered(term.j, s.numeric[term.j]);
    }
    for (std::size_t f = 0; f < tokens.size(); ++f) {
      const auto& toks = tokens[f];
      const auto it = std::find(toks.begin(), toks.end(), s.categorical[f]);
      if (it != toks.end()) y += category_offset[output][f][static_cast<std::size_t>(it - toks.begin())];
    }
    return y;
  }
};

inline Json generator_to_json(const Generator& g) {
  Json terms = Json::array();
  for (const auto& t : g.interactions) terms.push_back(Json{{"i", t.i}, {"j", t.j}, {"coefficient", t.coefficient}});
  return Json{{"base", g.base},   {"lo", g.lo},
              {"hi", g.hi},       {"linear", g.linear},
              {"interactions", terms}, {"category_offset", g.category_offset},
              {"tokens", g.tokens}, {"noise_sigma", g.noise_sigma}};
}

struct SyntheticSuite {
  FeatureSchema schema;
  Dataset data;
  Generator generator;
};

inline SyntheticSuite synthesize(const SynthSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticSuite suite;
  auto& schema = suite.schema;
  schema.suite = "synthetic";
  for (std::size_t o = 0; o < spec.outputs; ++o) schema.outputs.push_back("score_" + std::to_string(o));

  // Numeric groups first in schema order, categorical (Char) features last.
  std::vector<Group> numeric_group;
  for (Group g : {Group::Cpu, Group::Memory, Group::Other}) {
    for (std::size_t i = 0; i < spec.group_features[group_index(g)]; ++i) {
      std::string prefix = g == Group::Cpu ? "cpu" : g == Group::Memory ? "mem" : "other";
      schema.features.push_back({prefix + "_" + std::to_string(i), FeatureKind::Numeric, g, false, std::nullopt});
      numeric_group.push_back(g);
    }
  }
  const std::size_t n_cat = spec.group_features[group_index(Group::Char)];
  for (std::size_t i = 0; i < n_cat; ++i) {
    schema.features.push_back({"char_" + std::to_string(i), FeatureKind::Categorical, Group::Char, false, std::nullopt});
  }
  const std::size_t n_num = numeric_group.size();
  const auto silent = [&](Group g) { return spec.silent[group_index(g)]; };

  Generator& gen = suite.generator;
  gen.noise_sigma = spec.noise_sigma;
  for (std::size_t f = 0; f < n_num; ++f) {
    const double lo = rng.uniform(0.0, 50.0);
    gen.lo.push_back(lo);
    gen.hi.push_back(lo + rng.uniform(1.0, 100.0));
  }
  for (std::size_t f = 0; f < n_cat; ++f) {
    std::vector<std::string> toks;
    for (std::size_t t = 0; t < spec.vocab; ++t) toks.push_back("c" + std::to_string(f) + "v" + std::to_string(t));
    gen.tokens.push_back(std::move(toks));
  }
  for (std::size_t o = 0; o < spec.outputs; ++o) {
    gen.base.push_back(spec.base * (1.0 + 0.25 * static_cast<double>(o)));
    std::vector<double> w(n_num);
    for (std::size_t f = 0; f < n_num; ++f) {
      w[f] = silent(numeric_group[f]) ? 0.0 : rng.uniform(-spec.linear_scale, spec.linear_scale);
    }
    gen.linear.push_back(std::move(w));
    std::vector<std::vector<double>> offsets(n_cat, std::vector<double>(spec.vocab, 0.0));
    if (!silent(Group::Char)) {
      for (auto& per_feature : offsets) {
        for (auto& v : per_feature) v = rng.uniform(-spec.category_scale, spec.category_scale);
      }
    }
    gen.category_offset.push_back(std::move(offsets));
  }
  std::vector<std::size_t> eligible;
  for (std::size_t f = 0; f < n_num; ++f) {
    if (!silent(numeric_group[f])) eligible.push_back(f);
  }
  for (std::size_t t = 0; t < spec.interactions && eligible.size() >= 2; ++t) {
    InteractionTerm term;
    term.i = eligible[rng.index(eligible.size())];
    do {
      term.j = eligible[rng.index(eligible.size())];
    } while (term.j == term.i);
    for (std::size_t o = 0; o < spec.outputs; ++o) {
      const double mag = rng.uniform(spec.interaction_scale / 2.0, spec.interaction_scale);
      term.coefficient.push_back(rng.uniform() < 0.5 ? -mag : mag);
    }
    gen.interactions.push_back(std::move(term));
  }

  suite.data.layout = resolve_layout(schema, {});
  suite.data.source = "synthetic";
  for (std::size_t r = 0; r < spec.samples; ++r) {
    RawSample s;
    s.row = r + 1;
    for (std::size_t f = 0; f < n_num; ++f) s.numeric.push_back(rng.uniform(gen.lo[f], gen.hi[f]));
    for (std::size_t f = 0; f < n_cat; ++f) s.categorical.push_back(gen.tokens[f][rng.index(spec.vocab)]);
    for (std::size_t o = 0; o < spec.outputs; ++o) {
      s.targets.push_back(gen.evaluate(s, o) + spec.noise_sigma * rng.normal());
    }
    suite.data.samples.push_back(std::move(s));
  }
  return suite;
}

}  // namespace mac
