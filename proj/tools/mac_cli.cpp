// mac: command-line front end for the MaC library.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mac/mac.hpp"

namespace fs = std::filesystem;
using namespace mac;

namespace {

const std::vector<std::string> kVariants{"mamba-only", "mamba+intra", "full", "w/o-char",
                                         "w/o-mem",    "w/o-cpu",     "w/o-other"};
const std::vector<std::string> kSplits{"train", "validation", "test"};

struct Options {
  std::string out;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool verbose = false;

  ModelConfig model;
  TrainConfig train;

  // Inputs.
  std::string schema, input, data, checkpoint, split = "test";
  double z_threshold = 3.0;

  // synth
  SynthSpec synth;
  std::vector<std::string> silent_groups;

  // cv
  std::size_t folds = 5;

  // export-attention
  std::size_t sample = 0;
  bool csv = false;

  // ablate / baseline / sweep
  std::vector<std::string> variants{"all"};
  std::string baseline_kind = "all";
  std::optional<double> lambda;
  std::string grid;
};

std::uint64_t resolve_seed(const Options& o) {
  if (o.seed) return *o.seed;
  if (const char* env = std::getenv("MAC_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("MAC_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

/// Applies the --config document, which takes precedence over flags.
void apply_config_file(Options& o) {
  o.train.seed = resolve_seed(o);
  if (o.config_path.empty()) return;
  const Json j = read_json_file(o.config_path);
  if (!j.is_object()) throw ConfigError(o.config_path + ": expected a JSON object");
  if (j.contains("model")) o.model = config_from_json(j.at("model"), o.model);
  if (j.contains("train")) o.train = train_config_from_json(j.at("train"), o.train);
  try {
    if (j.contains("seed")) {
      o.seed = j.at("seed").get<std::uint64_t>();
      o.train.seed = *o.seed;
    }
    o.z_threshold = j.value("z_threshold", o.z_threshold);
  } catch (const Json::exception& e) {
    throw ConfigError(o.config_path + ": " + e.what());
  }
}

void add_model_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--embed-dim", o.model.embed_dim, "Token width D")->capture_default_str();
  cmd->add_option("-S,--expansion", o.model.expansion, "Mamba expansion factor")->capture_default_str();
  cmd->add_option("-N,--state-dim", o.model.state_dim, "SSM state dimension")->capture_default_str();
  cmd->add_option("-L,--layers", o.model.attn_layers, "Attention layers")->capture_default_str();
  cmd->add_option("-H,--heads", o.model.attn_heads, "Attention heads")->capture_default_str();
  cmd->add_option("--delta", o.model.huber_delta, "Huber threshold")->capture_default_str();
  cmd->add_option("--mamba-blocks", o.model.mamba_blocks, "Mamba blocks per category")->capture_default_str();
}

void add_train_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--epochs", o.train.epochs)->capture_default_str();
  cmd->add_option("--lr", o.train.lr0, "Initial learning rate")->capture_default_str();
  cmd->add_option("--decay-rate", o.train.decay_rate)->capture_default_str();
  cmd->add_option("--decay-every", o.train.decay_every)->capture_default_str();
  cmd->add_option("--batch-size", o.train.batch_size)->capture_default_str();
  cmd->add_flag("!--last-epoch", o.train.select_best, "Keep the final epoch instead of the best validation epoch");
  cmd->add_flag("-v,--verbose", o.verbose, "Print per-epoch progress");
}

void add_common_flags(CLI::App* cmd, Options& o, bool needs_out = true) {
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", o.seed, "Random seed (falls back to MAC_SEED, then 0)");
  cmd->add_option("--config", o.config_path, "JSON file overriding flags")->check(CLI::ExistingFile);
}

fs::path prepare_out(const Options& o) {
  const fs::path out(o.out);
  fs::create_directories(out);
  return out;
}

void write_run_config(const fs::path& out, const std::string& command, const Options& o, Json extra = Json::object()) {
  Json j{{"command", command},
         {"seed", o.train.seed},
         {"model", config_to_json(o.model)},
         {"train", train_config_to_json(o.train)},
         {"schema", o.schema},
         {"input", o.input},
         {"data", o.data},
         {"checkpoint", o.checkpoint},
         {"out", o.out}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_json_file(out / "run_config.json", j);
}

// ---------------------------------------------------------------------------
// Preprocessed data directories
// ---------------------------------------------------------------------------

struct Prepared {
  Transform transform;
  std::map<std::string, Dataset> raw;
  std::map<std::string, EncodedDataset> encoded;
};

Prepared load_prepared(const fs::path& dir, const Transform* transform = nullptr) {
  Prepared p;
  const fs::path tpath = dir / "transform.json";
  if (transform) {
    p.transform = *transform;
  } else {
    if (!fs::exists(tpath)) throw DataError(dir.string() + " has no transform.json; run preprocess first");
    p.transform = transform_from_json(read_json_file(tpath));
  }
  for (const auto& name : kSplits) {
    const fs::path csv = dir / (name + ".csv");
    if (!fs::exists(csv)) throw DataError("missing preprocessed file " + csv.string());
    p.raw[name] = load_csv(csv, p.transform.input_layout);
    p.encoded[name] = apply_transform(p.transform, p.raw[name]);
  }
  return p;
}

const EncodedDataset& pick_split(const Prepared& p, const std::string& split) { return p.encoded.at(split); }

Checkpoint require_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path);
  Checkpoint ck = load_checkpoint(path);
  if (!ck.transform) throw CheckpointError(path + " carries no transform; it was not written by 'mac train'");
  return ck;
}

TrainResult run_training(const Options& o, const Prepared& data, const ModelConfig& model) {
  const MacParams init =
      init_params(data.transform.model_layout, data.transform.vocab_sizes(), model, o.train.seed);
  EpochCallback progress;
  if (o.verbose) {
    progress = [](const EpochRecord& r) {
      std::cerr << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.train_loss;
      if (r.val_mae) std::cerr << " val_mae " << *r.val_mae;
      std::cerr << "\n";
    };
  }
  return train(init, data.encoded.at("train"), data.encoded.at("validation"), data.transform, o.train, progress);
}

Ablation variant_ablation(const std::string& v) {
  Ablation a;
  if (v == "mamba-only") {
    a.use_intra = false;
    a.use_inter = false;
  } else if (v == "mamba+intra") {
    a.use_inter = false;
  } else if (v == "w/o-char") {
    a.drop_group = Group::Char;
  } else if (v == "w/o-mem") {
    a.drop_group = Group::Memory;
  } else if (v == "w/o-cpu") {
    a.drop_group = Group::Cpu;
  } else if (v == "w/o-other") {
    a.drop_group = Group::Other;
  } else if (v != "full") {
    throw ConfigError("unknown variant '" + v + "'");
  }
  return a;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string fmt_mape(const std::optional<double>& v) { return v ? fmt(*v, 3) : std::string("n/a"); }

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(Options& o) {
  apply_config_file(o);
  for (const auto& name : o.silent_groups) {
    const auto g = parse_group(name);
    if (!g) throw ConfigError("unknown group '" + name + "'");
    o.synth.silent[group_index(*g)] = true;
  }
  const fs::path out = prepare_out(o);
  const SyntheticSuite suite = synthesize(o.synth, o.train.seed);
  write_json_file(out / "schema.json", schema_to_json(suite.schema));
  write_csv(suite.data, out / "data.csv");
  write_json_file(out / "generator.json", generator_to_json(suite.generator));
  Json silent = Json::array();
  for (const auto& g : o.silent_groups) silent.push_back(g);
  write_run_config(out, "synth", o,
                   Json{{"synth",
                         {{"samples", o.synth.samples},
                          {"group_features", o.synth.group_features},
                          {"outputs", o.synth.outputs},
                          {"interactions", o.synth.interactions},
                          {"interaction_scale", o.synth.interaction_scale},
                          {"linear_scale", o.synth.linear_scale},
                          {"noise_sigma", o.synth.noise_sigma},
                          {"vocab", o.synth.vocab},
                          {"silent", silent}}}});
  std::cout << "wrote " << suite.data.size() << " samples with " << suite.data.layout.features.size()
            << " features to " << (out / "data.csv").string() << "\n";
  return 0;
}

int cmd_preprocess(Options& o) {
  apply_config_file(o);
  const FeatureSchema schema = load_schema(o.schema);
  const Dataset raw = load_csv(o.input, schema);
  const CleanResult cleaned = clean_outliers(raw, o.z_threshold);
  for (const auto& w : cleaned.warnings) std::cerr << "warning: " << w << "\n";
  const SplitResult parts = split(cleaned.dataset, o.train.seed);
  const auto [transform, train_enc] = fit_transform(parts.train);

  const fs::path out = prepare_out(o);
  Json removed = Json::array();
  for (const auto& r : cleaned.removed) removed.push_back(Json{{"row", r.row}, {"output", r.output}, {"z", r.z}});
  write_json_file(out / "removed.json",
                  Json{{"threshold", o.z_threshold}, {"removed", removed}, {"warnings", cleaned.warnings}});
  write_json_file(out / "transform.json", transform_to_json(transform));
  const std::map<std::string, const Dataset*> files{
      {"train", &parts.train}, {"validation", &parts.validation}, {"test", &parts.test}};
  for (const auto& [name, d] : files) {
    write_csv(*d, out / (name + ".csv"));
    write_json_file(out / (name + ".encoded.json"), encoded_to_json(apply_transform(transform, *d)));
  }
  write_run_config(out, "preprocess", o, Json{{"z_threshold", o.z_threshold}});

  std::cout << "rows read " << raw.size() << ", removed " << cleaned.removed.size() << "\n";
  for (const auto& r : cleaned.removed) {
    std::cout << "  removed row " << r.row << " (" << r.output << ", z = " << fmt(r.z, 3) << ")\n";
  }
  if (!transform.trimmed.empty()) {
    std::cout << "trimmed zero-variance features:";
    for (const auto& t : transform.trimmed) std::cout << " " << t;
    std::cout << "\n";
  }
  std::cout << "split train/validation/test = " << parts.train.size() << "/" << parts.validation.size() << "/"
            << parts.test.size() << "\n";
  return 0;
}

int cmd_train(Options& o) {
  apply_config_file(o);
  o.model.validate();
  const Prepared data = load_prepared(o.data);
  const fs::path out = prepare_out(o);
  write_run_config(out, "train", o);
  const TrainResult r = run_training(o, data, o.model);
  save_checkpoint(Checkpoint{r.params, data.transform}, out / "checkpoint.json");
  write_json_file(out / "history.json",
                  Json{{"best_epoch", r.best_epoch ? Json(*r.best_epoch) : Json(nullptr)},
                       {"epochs", history_to_json(r.history)}});
  MacParams params = r.params;
  std::cout << "parameters " << params.parameter_count() << "\n";
  if (r.best_epoch) std::cout << "best epoch " << *r.best_epoch << "\n";
  for (const std::string split : {"validation", "test"}) {
    const auto& set = data.encoded.at(split);
    if (set.samples.empty()) continue;
    const MetricsReport rep = evaluate(r.params, set, data.transform);
    write_json_file(out / ("metrics_" + split + ".json"), report_to_json(rep));
    std::cout << format_report(rep, split);
  }
  return 0;
}

int cmd_evaluate(Options& o) {
  apply_config_file(o);
  const Checkpoint ck = require_checkpoint(o.checkpoint);
  const Prepared data = load_prepared(o.data, &*ck.transform);
  const MetricsReport rep = evaluate(ck.params, pick_split(data, o.split), *ck.transform);
  std::cout << format_report(rep, o.split);
  if (!o.out.empty()) {
    const fs::path out = prepare_out(o);
    write_json_file(out / ("metrics_" + o.split + ".json"), report_to_json(rep));
    write_run_config(out, "evaluate", o, Json{{"split", o.split}});
  }
  return 0;
}

/// Reads a CSV for prediction. Output columns are optional; missing ones are
/// filled with a placeholder 0 so the layout still matches the checkpoint.
Dataset load_for_prediction(const Options& o, const Transform& t, bool& has_truth) {
  std::ifstream in(o.input);
  if (!in) throw ParseError("cannot open " + o.input);
  std::string header;
  std::getline(in, header);
  const auto columns = csv::split_record(header);
  std::vector<std::string> missing;
  for (const auto& name : t.input_layout.outputs) {
    if (std::find(columns.begin(), columns.end(), name) == columns.end()) missing.push_back(name);
  }
  has_truth = missing.empty();
  std::stringstream text;
  text << header;
  for (const auto& m : missing) text << "," << csv::quote(m);
  text << "\n";
  std::string line;
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    text << line;
    for (std::size_t i = 0; i < missing.size(); ++i) text << ",0";
    text << "\n";
  }
  FeatureSchema schema = o.schema.empty() ? schema_from_json(layout_to_json(t.input_layout)) : load_schema(o.schema);
  Dataset d = load_csv(text, schema, load_mappings(schema), o.input);
  if (!(d.layout == t.input_layout)) {
    throw SchemaError(o.input + ": resolved features do not match the checkpoint's schema");
  }
  return d;
}

int cmd_predict(Options& o) {
  apply_config_file(o);
  const Checkpoint ck = require_checkpoint(o.checkpoint);
  const Transform& t = *ck.transform;
  bool has_truth = false;
  const Dataset raw = load_for_prediction(o, t, has_truth);
  const EncodedDataset enc = apply_transform(t, raw);
  const std::vector<double> pred = predict(ck.params, enc, t);
  const auto& outputs = t.model_layout.outputs;

  const fs::path out = prepare_out(o);
  std::ostringstream csv_text;
  csv_text << "row";
  for (const auto& name : outputs) {
    csv_text << "," << csv::quote(name + "_pred");
    if (has_truth) csv_text << "," << csv::quote(name);
  }
  csv_text << "\n";
  for (std::size_t i = 0; i < enc.size(); ++i) {
    csv_text << enc.samples[i].row;
    for (std::size_t j = 0; j < outputs.size(); ++j) {
      csv_text << "," << csv::format_number(pred[i * outputs.size() + j]);
      if (has_truth) csv_text << "," << csv::format_number(enc.samples[i].raw_targets[j]);
    }
    csv_text << "\n";
  }
  write_text_file(out / "predictions.csv", csv_text.str());
  write_run_config(out, "predict", o);
  if (has_truth) std::cout << format_report(evaluate(ck.params, enc, t), "input");
  std::cout << "wrote " << enc.size() << " predictions to " << (out / "predictions.csv").string() << "\n";
  return 0;
}

int cmd_cv(Options& o) {
  apply_config_file(o);
  o.model.validate();
  const Prepared data = load_prepared(o.data);
  // Folds are drawn from everything outside the held-out test split.
  const Dataset pool = concat(data.raw.at("train"), data.raw.at("validation"));
  const fs::path out = prepare_out(o);
  write_run_config(out, "cv", o, Json{{"folds", o.folds}});
  const CvResult r = cross_validate(pool, o.model, o.train, o.folds, o.train.seed);
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    write_json_file(out / ("fold_" + std::to_string(f + 1) + ".json"), report_to_json(r.folds[f]));
    std::cout << format_report(r.folds[f], "fold " + std::to_string(f + 1));
  }
  write_json_file(out / "average.json", report_to_json(r.average));
  std::cout << format_report(r.average, "average");
  return 0;
}

Json matrix_json(const std::vector<double>& flat, std::size_t n) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < n; ++i) {
    rows.push_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(i * n),
                                       flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
  }
  return rows;
}

void write_matrix_csv(const fs::path& path, const std::vector<std::string>& labels, const std::vector<double>& flat) {
  std::ostringstream os;
  os << "\"\"";
  for (const auto& l : labels) os << "," << csv::quote(l);
  os << "\n";
  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    os << csv::quote(labels[i]);
    for (std::size_t j = 0; j < n; ++j) os << "," << csv::format_number(flat[i * n + j]);
    os << "\n";
  }
  write_text_file(path, os.str());
}

int cmd_export_attention(Options& o) {
  apply_config_file(o);
  const Checkpoint ck = require_checkpoint(o.checkpoint);
  EncodedDataset set;
  if (!o.input.empty()) {
    bool has_truth = false;
    set = apply_transform(*ck.transform, load_for_prediction(o, *ck.transform, has_truth));
  } else {
    set = pick_split(load_prepared(o.data, &*ck.transform), o.split);
  }
  if (o.sample >= set.size()) {
    throw DataError("sample " + std::to_string(o.sample) + " is out of range; the set has " +
                    std::to_string(set.size()) + " samples");
  }
  const EncodedSample& sample = set.samples[o.sample];
  AttentionTrace trace;
  {
    NoGradGuard no_grad;
    forward_sample(ck.params, sample, &trace);
  }

  const fs::path out = prepare_out(o);
  const std::string suite = ck.params.layout.suite;
  Json matrices = Json::array();
  auto emit = [&](const std::string& group, const std::vector<std::string>& labels, std::size_t layer,
                  std::size_t head, const std::vector<double>& flat) {
    matrices.push_back(Json{{"suite", suite},
                            {"sample_id", sample.row},
                            {"group", group},
                            {"layer", layer},
                            {"head", head},
                            {"labels", labels},
                            {"matrix", matrix_json(flat, labels.size())}});
    if (o.csv) {
      std::string stem = group == "inter" ? "inter" : "intra_" + group;
      write_matrix_csv(out / (stem + "_l" + std::to_string(layer) + "_h" + std::to_string(head) + ".csv"), labels,
                       flat);
    }
  };
  for (const auto& g : trace.intra) {
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      for (std::size_t h = 0; h < g.layers[l].size(); ++h) {
        emit(std::string(group_name(g.group)), g.features, l, h, g.layers[l][h]);
      }
    }
  }
  std::vector<std::string> group_labels;
  for (Group g : trace.inter_groups) group_labels.emplace_back(group_name(g));
  for (std::size_t l = 0; l < trace.inter.size(); ++l) {
    for (std::size_t h = 0; h < trace.inter[l].size(); ++h) emit("inter", group_labels, l, h, trace.inter[l][h]);
  }
  write_json_file(out / "attention.json", Json{{"suite", suite}, {"sample_id", sample.row}, {"matrices", matrices}});
  write_run_config(out, "export-attention", o, Json{{"sample", o.sample}, {"split", o.split}, {"csv", o.csv}});
  std::cout << "wrote " << matrices.size() << " attention matrices to " << (out / "attention.json").string() << "\n";
  return 0;
}

int cmd_ablate(Options& o) {
  apply_config_file(o);
  std::vector<std::string> variants = o.variants;
  if (std::find(variants.begin(), variants.end(), "all") != variants.end()) variants = kVariants;
  if (std::find(variants.begin(), variants.end(), "full") == variants.end()) variants.push_back("full");
  const Prepared data = load_prepared(o.data);
  const fs::path out = prepare_out(o);
  write_run_config(out, "ablate", o, Json{{"variants", variants}});

  Json rows = Json::array();
  std::cout << std::left << std::setw(14) << "variant" << std::right << std::setw(10) << "params" << std::setw(14)
            << "MAE" << std::setw(16) << "MSE" << std::setw(10) << "MAPE" << "\n";
  for (const auto& v : variants) {
    ModelConfig model = o.model;
    model.ablation = variant_ablation(v);
    model.validate();
    const TrainResult r = run_training(o, data, model);
    MacParams params = r.params;
    const MetricsReport rep = evaluate(r.params, data.encoded.at("test"), data.transform);
    rows.push_back(Json{{"variant", v},
                        {"parameters", params.parameter_count()},
                        {"best_epoch", r.best_epoch ? Json(*r.best_epoch) : Json(nullptr)},
                        {"test", report_to_json(rep)}});
    std::cout << std::left << std::setw(14) << v << std::right << std::setw(10) << params.parameter_count()
              << std::setw(14) << fmt(rep.aggregate.mae) << std::setw(16) << fmt(rep.aggregate.mse) << std::setw(10)
              << fmt_mape(rep.aggregate.mape) << "\n";
  }
  write_json_file(out / "ablation.json", Json{{"rows", rows}});
  return 0;
}

int cmd_baseline(Options& o) {
  apply_config_file(o);
  const Prepared data = load_prepared(o.data);
  std::vector<BaselineKind> kinds;
  if (o.baseline_kind == "all") {
    kinds = {BaselineKind::Lasso, BaselineKind::Ridge, BaselineKind::ElasticNet};
  } else {
    kinds = {parse_baseline(o.baseline_kind)};
  }
  const auto vocab = data.transform.vocab_sizes();
  const Eigen::MatrixXd xt = design_matrix(data.encoded.at("test"), vocab);
  const Eigen::MatrixXd yt = target_matrix(data.encoded.at("test"));
  const fs::path out = prepare_out(o);
  write_run_config(out, "baseline", o,
                   Json{{"kind", o.baseline_kind}, {"lambda", o.lambda ? Json(*o.lambda) : Json(nullptr)}});
  for (BaselineKind kind : kinds) {
    const std::vector<double> grid = o.lambda ? std::vector<double>{*o.lambda} : default_lambda_grid();
    const BaselineSelection sel =
        select_baseline(kind, data.encoded.at("train"), data.encoded.at("validation"), vocab, grid);
    const MetricsReport rep = linear_report(sel.model, xt, yt, data.transform.model_layout.outputs);
    Json grid_json = Json::array();
    for (const auto& [lambda, mae] : sel.grid_mae) grid_json.push_back(Json{{"lambda", lambda}, {"val_mae", mae}});
    const std::string name = baseline_name(kind);
    write_json_file(out / ("baseline_" + name + ".json"), Json{{"kind", name},
                                                                {"lambda", sel.lambda},
                                                                {"converged", sel.model.converged},
                                                                {"grid", grid_json},
                                                                {"test", report_to_json(rep)}});
    if (!sel.model.converged) std::cerr << "warning: " << name << " hit max_iter before converging\n";
    std::cout << format_report(rep, name + " (lambda " + csv::format_number(sel.lambda) + ")");
  }
  return 0;
}

/// Parses "S=1,2;N=8;L=1,2,3;H=4;delta=0.1,1,10".
std::map<std::string, std::vector<double>> parse_grid(const std::string& text) {
  static const std::vector<std::string> keys{"S", "N", "L", "H", "delta"};
  std::map<std::string, std::vector<double>> grid;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ';')) {
    part = csv::trim(part);
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("grid entry '" + part + "' lacks '='");
    const std::string key = csv::trim(part.substr(0, eq));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown grid key '" + key + "' (expected S, N, L, H or delta)");
    }
    std::stringstream vs(part.substr(eq + 1));
    std::string item;
    while (std::getline(vs, item, ',')) {
      const auto v = csv::parse_number(csv::trim(item));
      if (!v || !(*v > 0)) throw ConfigError("grid value '" + item + "' for " + key + " is not a positive number");
      if (key != "delta" && *v != std::floor(*v)) throw ConfigError("grid value for " + key + " must be an integer");
      grid[key].push_back(*v);
    }
  }
  if (grid.empty()) throw ConfigError("empty grid");
  return grid;
}

int cmd_sweep(Options& o) {
  apply_config_file(o);
  auto grid = parse_grid(o.grid);
  const double base_s = static_cast<double>(o.model.expansion), base_n = static_cast<double>(o.model.state_dim);
  const double base_l = static_cast<double>(o.model.attn_layers), base_h = static_cast<double>(o.model.attn_heads);
  for (const auto& [key, base] : std::map<std::string, double>{
           {"S", base_s}, {"N", base_n}, {"L", base_l}, {"H", base_h}, {"delta", o.model.huber_delta}}) {
    if (!grid.count(key)) grid[key] = {base};
  }
  const Prepared data = load_prepared(o.data);
  const fs::path out = prepare_out(o);
  write_run_config(out, "sweep", o, Json{{"grid", o.grid}});

  Json rows = Json::array();
  std::cout << std::setw(4) << "S" << std::setw(4) << "N" << std::setw(4) << "L" << std::setw(4) << "H"
            << std::setw(8) << "delta" << std::setw(14) << "val MAE" << std::setw(14) << "test MAE" << std::setw(10)
            << "MAPE" << "\n";
  for (double s : grid["S"]) {
    for (double n : grid["N"]) {
      for (double l : grid["L"]) {
        for (double h : grid["H"]) {
          for (double d : grid["delta"]) {
            ModelConfig m = o.model;
            m.expansion = static_cast<std::size_t>(s);
            m.state_dim = static_cast<std::size_t>(n);
            m.attn_layers = static_cast<std::size_t>(l);
            m.attn_heads = static_cast<std::size_t>(h);
            m.huber_delta = d;
            Json row{{"S", m.expansion}, {"N", m.state_dim}, {"L", m.attn_layers}, {"H", m.attn_heads}, {"delta", d}};
            std::cout << std::setw(4) << m.expansion << std::setw(4) << m.state_dim << std::setw(4) << m.attn_layers
                      << std::setw(4) << m.attn_heads << std::setw(8) << d;
            try {
              m.validate();
            } catch (const ConfigError& e) {
              row["skipped"] = e.what();
              rows.push_back(row);
              std::cout << "  skipped: " << e.what() << "\n";
              continue;
            }
            const TrainResult r = run_training(o, data, m);
            const MetricsReport val = evaluate(r.params, data.encoded.at("validation"), data.transform);
            const MetricsReport test = evaluate(r.params, data.encoded.at("test"), data.transform);
            row["validation"] = report_to_json(val);
            row["test"] = report_to_json(test);
            rows.push_back(row);
            std::cout << std::setw(14) << fmt(val.aggregate.mae) << std::setw(14) << fmt(test.aggregate.mae)
                      << std::setw(10) << fmt_mape(test.aggregate.mape) << "\n";
          }
        }
      }
    }
  }
  write_json_file(out / "sweep.json", Json{{"rows", rows}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MaC: CPU performance prediction with Mamba blocks and grouped attention"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mac 0.1.0");
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic suite with a known generator");
  add_common_flags(synth, o);
  synth->add_option("--samples", o.synth.samples)->capture_default_str();
  synth->add_option("--outputs", o.synth.outputs)->capture_default_str();
  synth->add_option("--interactions", o.synth.interactions, "Pairwise product terms")->capture_default_str();
  synth->add_option("--interaction-scale", o.synth.interaction_scale)->capture_default_str();
  synth->add_option("--linear-scale", o.synth.linear_scale)->capture_default_str();
  synth->add_option("--noise", o.synth.noise_sigma)->capture_default_str();
  synth->add_option("--vocab", o.synth.vocab, "Tokens per categorical feature")->capture_default_str();
  synth->add_option("--silent", o.silent_groups, "Groups that do not influence the target");

  auto* pre = app.add_subcommand("preprocess", "Clean, split and standardize a CSV");
  add_common_flags(pre, o);
  pre->add_option("--schema", o.schema)->required()->check(CLI::ExistingFile);
  pre->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  pre->add_option("--z-threshold", o.z_threshold, "Outlier |z| threshold")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train on a preprocessed directory");
  add_common_flags(tr, o);
  tr->add_option("--data", o.data, "Preprocessed directory")->required()->check(CLI::ExistingDirectory);
  add_model_flags(tr, o);
  add_train_flags(tr, o);

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a preprocessed split");
  add_common_flags(ev, o, false);
  ev->add_option("--checkpoint", o.checkpoint)->required();
  ev->add_option("--data", o.data)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", o.split)->check(CLI::IsMember(kSplits))->capture_default_str();

  auto* pr = app.add_subcommand("predict", "Write predictions in original units");
  add_common_flags(pr, o);
  pr->add_option("--checkpoint", o.checkpoint)->required();
  pr->add_option("--input", o.input, "CSV with the checkpoint's feature columns")->required()->check(CLI::ExistingFile);
  pr->add_option("--schema", o.schema, "Raw schema, needed when columns expand via mapping files")
      ->check(CLI::ExistingFile);

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation over train+validation");
  add_common_flags(cv, o);
  cv->add_option("--data", o.data)->required()->check(CLI::ExistingDirectory);
  cv->add_option("--folds", o.folds)->capture_default_str()->check(CLI::Range(2, 1000));
  add_model_flags(cv, o);
  add_train_flags(cv, o);

  auto* ex = app.add_subcommand("export-attention", "Dump attention matrices for one sample");
  add_common_flags(ex, o);
  ex->add_option("--checkpoint", o.checkpoint)->required();
  auto* ex_data = ex->add_option("--data", o.data, "Preprocessed directory")->check(CLI::ExistingDirectory);
  auto* ex_input = ex->add_option("--input", o.input, "CSV instead of a preprocessed split")->check(CLI::ExistingFile);
  ex_data->excludes(ex_input);
  ex->add_option("--schema", o.schema)->check(CLI::ExistingFile);
  ex->add_option("--split", o.split)->check(CLI::IsMember(kSplits))->capture_default_str();
  ex->add_option("--sample", o.sample, "Sample index within the split")->capture_default_str();
  ex->add_flag("--csv", o.csv, "Also write one CSV per matrix");

  auto* ab = app.add_subcommand("ablate", "Train and compare ablation variants");
  add_common_flags(ab, o);
  ab->add_option("--data", o.data)->required()->check(CLI::ExistingDirectory);
  std::vector<std::string> variant_choices = kVariants;
  variant_choices.push_back("all");
  ab->add_option("--variant", o.variants, "One or more variants, or 'all'")
      ->check(CLI::IsMember(variant_choices))
      ->capture_default_str();
  add_model_flags(ab, o);
  add_train_flags(ab, o);

  auto* bl = app.add_subcommand("baseline", "Fit linear baselines with lambda chosen on validation");
  add_common_flags(bl, o);
  bl->add_option("--data", o.data)->required()->check(CLI::ExistingDirectory);
  bl->add_option("--kind", o.baseline_kind)
      ->check(CLI::IsMember({"ridge", "lasso", "elasticnet", "all"}))
      ->capture_default_str();
  bl->add_option("--lambda", o.lambda, "Fixed regularization strength instead of the grid");

  auto* sw = app.add_subcommand("sweep", "Grid over S, N, L, H and delta");
  add_common_flags(sw, o);
  sw->add_option("--data", o.data)->required()->check(CLI::ExistingDirectory);
  sw->add_option("--grid", o.grid, "e.g. \"S=1,2,4;N=8;L=1,2,3;H=4;delta=0.1,1,10\"")->required();
  add_model_flags(sw, o);
  add_train_flags(sw, o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (ex->parsed() && o.data.empty() && o.input.empty()) throw ConfigError("export-attention needs --data or --input");
    if (synth->parsed()) return cmd_synth(o);
    if (pre->parsed()) return cmd_preprocess(o);
    if (tr->parsed()) return cmd_train(o);
    if (ev->parsed()) return cmd_evaluate(o);
    if (pr->parsed()) return cmd_predict(o);
    if (cv->parsed()) return cmd_cv(o);
    if (ex->parsed()) return cmd_export_attention(o);
    if (ab->parsed()) return cmd_ablate(o);
    if (bl->parsed()) return cmd_baseline(o);
    if (sw->parsed()) return cmd_sweep(o);
  } catch (const mac::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
