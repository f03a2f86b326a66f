// Train a small MaC model on a synthetic suite and compare it with ridge.
//
//   ./build/example/quickstart [epochs]

#include <cstdio>
#include <cstdlib>

#include "mac/mac.hpp"

int main(int argc, char** argv) {
  using namespace mac;
  const std::size_t epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 40;

  SynthSpec spec;
  spec.interactions = 1;
  spec.interaction_scale = 30.0;
  const SyntheticSuite suite = synthesize(spec, 7);

  const SplitResult parts = split(suite.data, 11);
  const auto [transform, train_set] = fit_transform(parts.train);
  const EncodedDataset val = apply_transform(transform, parts.validation);
  const EncodedDataset test = apply_transform(transform, parts.test);
  std::printf("split %zu/%zu/%zu\n", train_set.size(), val.size(), test.size());

  ModelConfig model;
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = 5;
  MacParams init = init_params(transform.model_layout, transform.vocab_sizes(), model, 3);
  std::printf("parameters: %zu\n", init.parameter_count());
  const TrainResult trained = train(init, train_set, val, transform, cfg);
  const ErrorSummary mac_err = evaluate(trained.params, test, transform).aggregate;

  const auto vocab = transform.vocab_sizes();
  const BaselineSelection ridge = select_baseline(BaselineKind::Ridge, train_set, val, vocab);
  const ErrorSummary ridge_err =
      linear_report(ridge.model, design_matrix(test, vocab), target_matrix(test), test.layout.outputs).aggregate;

  std::printf("best epoch %zu\n", trained.best_epoch.value_or(epochs));
  std::printf("MaC   test MAE %.3f  MAPE %.2f%%\n", mac_err.mae, mac_err.mape.value_or(0.0));
  std::printf("ridge test MAE %.3f  MAPE %.2f%%\n", ridge_err.mae, ridge_err.mape.value_or(0.0));
}
