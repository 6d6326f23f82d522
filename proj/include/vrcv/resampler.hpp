#pragma once

#include <span>
#include <string>
#include <vector>

#include "vrcv/dataset.hpp"
#include "vrcv/vae.hpp"
#include "vrcv/vgmm.hpp"

namespace vrcv::resample {

/// Per-class cluster ids for every instance of that class; the d_k^c sets.
/// Cluster indices are canonical: within each class they are ordered by
/// descending size, ties broken by the smallest contained global index.
struct ClassClusterAssignment {
  std::size_t num_classes = 0;
  std::size_t folds = 0;
  std::vector<std::vector<std::size_t>> class_instances;  // global ids, ascending
  std::vector<std::vector<int>> cluster_ids;              // parallel, values in [0, folds)
};

/// The central artifact output: instance -> (class label, fold id).
struct FoldAssignment {
  std::size_t folds = 0;
  std::vector<std::size_t> instance;  // sorted ascending
  std::vector<int> label;
  std::vector<int> fold;
  std::uint64_t seed = 0;
  int repeat_index = 0;
};

struct SplitConfig {
  std::size_t folds = 5;
  int repeat = 1;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  vae::VaeConfig vae;  // image_side is overridden from the dataset
  vgmm::FitOptions vgmm;
  std::size_t pca_cap = 16;  // dimensionality-guard target
  std::size_t threads = 1;
};

/// Non-fatal events worth surfacing in the run manifest (k-means fallbacks,
/// PCA guards, restarts).
struct SplitEvents {
  std::vector<std::string> notes;
};

/// Instance ids per class, ascending.
std::vector<std::vector<std::size_t>> instances_by_class(std::span<const int> labels);

/// Trains one VAE per class and extracts that class's latent means.
/// latents[c] is [n_c, d_z] aligned with instances_by_class order.
std::vector<Tensor> per_class_latents(const data::Dataset& dataset, const SplitConfig& config,
                                      std::vector<vae::VaeModel>* models = nullptr);

/// Per-class VGMM clustering of precomputed latents, with the PCA guard,
/// component-death restarts and canonical reindexing. The per-class
/// posteriors and priors come back through the optional out-params for
/// diagnostic reporting.
ClassClusterAssignment cluster_latents(const std::vector<Tensor>& latents,
                                       const std::vector<std::vector<std::size_t>>& class_instances,
                                       std::size_t folds, const SplitConfig& config,
                                       SplitEvents* events = nullptr,
                                       std::vector<vgmm::VgmmPosterior>* posteriors = nullptr,
                                       std::vector<vgmm::VgmmPrior>* priors = nullptr);

/// The full per-class VAE -> latents -> VGMM pipeline.
ClassClusterAssignment vgmm_vae_split(const data::Dataset& dataset, std::size_t folds,
                                      const SplitConfig& config, SplitEvents* events = nullptr);

/// Fold k = union over classes of cluster k. repeat > 1 reshuffles the
/// cluster indices independently per class before every union; repeat == 1
/// is shuffle-free.
std::vector<FoldAssignment> merge(const ClassClusterAssignment& assignment, int repeat,
                                  SeededRng& rng);

struct TrainValTest {
  std::vector<std::size_t> train, val, test;
};

/// test = fold k; the rest splits uniformly at random into train/validation
/// at the given fraction, stratified by class.
TrainValTest make_train_val_test(const FoldAssignment& assignment, std::size_t test_fold,
                                 double val_fraction, SeededRng& rng);

/// Plain class-stratified uniform K-way partition.
FoldAssignment random_split_baseline(std::span<const int> labels, std::size_t folds,
                                     SeededRng& rng);

/// CSV: header instance_index,class_label,fold_id, rows sorted by
/// instance_index.
void write_folds_csv(const std::string& path, const FoldAssignment& assignment);
FoldAssignment read_folds_csv(const std::string& path);

}  // namespace vrcv::resample
