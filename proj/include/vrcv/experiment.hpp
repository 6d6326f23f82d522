#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrcv/bayes.hpp"
#include "vrcv/dataset.hpp"
#include "vrcv/net.hpp"
#include "vrcv/resampler.hpp"

namespace vrcv::exp {

struct MetricsRecord {
  std::string run_id;
  std::string splitter;  // vgmm | random
  std::string model;
  int fold = 0;
  int epoch = 0;
  std::string split;  // train | val | test
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Append-safe metrics CSV with header
/// run_id,splitter,model,fold,epoch,split,accuracy,loss; flushed per call.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void append(std::span<const MetricsRecord> records);

 private:
  std::string path_;
};

std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

/// Classifier topologies. `mlp-small` is the fast desk-scale net; `lenet`
/// and `3conv3fc` are the conventional stride-2 conv stacks; `alexnet-small`
/// is a best-effort 28x28 adaptation and makes no fidelity claim.
nn::Sequential build_frequentist(const std::string& name, std::size_t image_side,
                                 std::size_t classes, SeededRng& rng);
bayes::BayesNet build_bayesian(const std::string& name, std::size_t image_side,
                               std::size_t classes, const bayes::PriorSpec& prior, double sigma0,
                               SeededRng& rng);

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch = 64;
  double lr = 1e-3;
  bool per_epoch_test = true;
  bool debug_batch_log = false;
  std::string debug_log_path;
  std::size_t train_samples = 1;  // bayes forward samples during training
  std::size_t eval_samples = 10;  // bayes predictive samples at evaluation
  double kl_weight = -1.0;        // < 0: batch_size / train_set_size
  double prior_std = 0.1;
  double sigma0 = 0.05;
};

/// The outer cross-validation loop: per fold a fresh model trains on
/// D_train, train/val are evaluated every epoch, test per epoch or once at
/// the end. Records stream through `writer` when given; checkpoints land in
/// `checkpoint_dir` when non-empty. A non-finite training loss aborts just
/// that fold with a note in `events`.
std::vector<MetricsRecord> run_cv_experiment(
    const data::Dataset& dataset, const resample::FoldAssignment& folds,
    const std::string& splitter_name, const std::string& model_name, const std::string& family,
    double val_fraction, const TrainConfig& train_cfg, std::uint64_t seed, std::size_t threads,
    MetricsWriter* writer = nullptr, const std::string& checkpoint_dir = "",
    std::vector<std::string>* events = nullptr);

}  // namespace vrcv::exp
