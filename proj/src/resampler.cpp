#include "vrcv/resampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "vrcv/csv.hpp"
#include "vrcv/linalg.hpp"

namespace vrcv::resample {

std::vector<std::vector<std::size_t>> instances_by_class(std::span<const int> labels) {
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("instances_by_class: negative label");
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[static_cast<std::size_t>(labels[i])].push_back(i);
  return out;
}

namespace {

// run class-indexed jobs on up to `threads` workers; each job depends only
// on its own derived seed, so results are order-independent
void for_each_class(std::size_t count, std::size_t threads,
                    const std::function<void(std::size_t)>& job) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t c = 0; c < count; ++c) job(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t c = next.fetch_add(1);
      if (c >= count) return;
      job(c);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_workers = std::min(threads, count);
  pool.reserve(n_workers);
  for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace

std::vector<Tensor> per_class_latents(const data::Dataset& dataset, const SplitConfig& config,
                                      std::vector<vae::VaeModel>* models) {
  const auto by_class = instances_by_class(dataset.labels);
  const std::size_t c_count = by_class.size();
  std::vector<Tensor> latents(c_count);
  if (models) models->resize(c_count);

  SeededRng root(config.seed);
  std::vector<std::string> errors(c_count);
  for_each_class(c_count, config.threads, [&](std::size_t c) {
    try {
      vae::VaeConfig cfg = config.vae;
      cfg.image_side = dataset.image_side();
      Tensor imgs = dataset.gather_images(by_class[c]);
      vae::VaeModel model = vae::train_vae(imgs, cfg, root.derive("vae.class", c));
      latents[c] = vae::extract_latents(model, imgs);
      if (models) (*models)[c] = std::move(model);
    } catch (const std::exception& e) {
      errors[c] = e.what();
    }
  });
  for (std::size_t c = 0; c < c_count; ++c)
    if (!errors[c].empty())
      throw std::runtime_error("per_class_latents: class " + std::to_string(c) + ": " +
                               errors[c]);
  return latents;
}

namespace {

std::vector<int> canonicalize_clusters(const std::vector<int>& raw, std::size_t k,
                                       const std::vector<std::size_t>& global_ids) {
  struct Bucket {
    std::size_t size = 0;
    std::size_t min_global = static_cast<std::size_t>(-1);
    int old_id = 0;
  };
  std::vector<Bucket> buckets(k);
  for (std::size_t c = 0; c < k; ++c) buckets[c].old_id = static_cast<int>(c);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    Bucket& b = buckets[static_cast<std::size_t>(raw[i])];
    ++b.size;
    b.min_global = std::min(b.min_global, global_ids[i]);
  }
  std::sort(buckets.begin(), buckets.end(), [](const Bucket& a, const Bucket& b) {
    if (a.size != b.size) return a.size > b.size;
    return a.min_global < b.min_global;
  });
  std::vector<int> remap(k);
  for (std::size_t rank = 0; rank < k; ++rank)
    remap[static_cast<std::size_t>(buckets[rank].old_id)] = static_cast<int>(rank);
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = remap[static_cast<std::size_t>(raw[i])];
  return out;
}

}  // namespace

ClassClusterAssignment cluster_latents(const std::vector<Tensor>& latents,
                                       const std::vector<std::vector<std::size_t>>& class_instances,
                                       std::size_t folds, const SplitConfig& config,
                                       SplitEvents* events,
                                       std::vector<vgmm::VgmmPosterior>* posteriors,
                                       std::vector<vgmm::VgmmPrior>* priors) {
  if (latents.size() != class_instances.size())
    throw std::invalid_argument("cluster_latents: class count mismatch");
  const std::size_t c_count = latents.size();

  ClassClusterAssignment assign;
  assign.num_classes = c_count;
  assign.folds = folds;
  assign.class_instances = class_instances;
  assign.cluster_ids.resize(c_count);
  if (posteriors) posteriors->clear();
  if (priors) priors->clear();

  SeededRng root(config.seed);
  for (std::size_t c = 0; c < c_count; ++c) {
    const std::size_t n_c = latents[c].dim(0);
    if (n_c < 10 * folds)
      throw std::invalid_argument("cluster_latents: class " + std::to_string(c) + " has " +
                                  std::to_string(n_c) + " instances, needs at least " +
                                  std::to_string(10 * folds));

    Tensor feats = latents[c];
    // ill-conditioned Wishart guard: shrink wide latents on small slices
    if (feats.dim(1) > n_c / 10) {
      const std::size_t target = std::min(feats.dim(1), config.pca_cap);
      if (target < feats.dim(1)) {
        feats = pca_project(feats, target);
        if (events)
          events->notes.push_back("class " + std::to_string(c) + ": PCA guard " +
                                  std::to_string(latents[c].dim(1)) + " -> " +
                                  std::to_string(target));
      }
    }

    SeededRng rng = root.derive("vgmm.class", c);
    vgmm::VgmmPrior prior = vgmm::VgmmPrior::data_driven(feats, folds);
    vgmm::FitResult fit = vgmm::fit(feats, folds, prior, rng, config.vgmm);
    if (events) {
      if (fit.used_kmeans_fallback)
        events->notes.push_back("class " + std::to_string(c) +
                                ": VGMM degenerate, fell back to k-means");
      else if (fit.restarts_used > 0)
        events->notes.push_back("class " + std::to_string(c) + ": VGMM reseeded " +
                                std::to_string(fit.restarts_used) + " time(s)");
    }
    assign.cluster_ids[c] =
        canonicalize_clusters(vgmm::hard_assign(fit.resp), folds, class_instances[c]);
    if (posteriors) posteriors->push_back(std::move(fit.post));
    if (priors) priors->push_back(std::move(prior));
  }
  return assign;
}

ClassClusterAssignment vgmm_vae_split(const data::Dataset& dataset, std::size_t folds,
                                      const SplitConfig& config, SplitEvents* events) {
  const auto by_class = instances_by_class(dataset.labels);
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (by_class[c].size() < 10 * folds)
      throw std::invalid_argument("vgmm_vae_split: class " + std::to_string(c) + " has " +
                                  std::to_string(by_class[c].size()) +
                                  " instances, needs at least " + std::to_string(10 * folds));
  const std::vector<Tensor> latents = per_class_latents(dataset, config);
  return cluster_latents(latents, by_class, folds, config, events);
}

std::vector<FoldAssignment> merge(const ClassClusterAssignment& assignment, int repeat,
                                  SeededRng& rng) {
  if (repeat < 1) throw std::invalid_argument("merge: repeat must be >= 1");
  const std::size_t k = assignment.folds;

  std::vector<FoldAssignment> out;
  for (int rep = 0; rep < repeat; ++rep) {
    std::vector<std::vector<int>> perm(assignment.num_classes);
    for (std::size_t c = 0; c < assignment.num_classes; ++c) {
      perm[c].resize(k);
      std::iota(perm[c].begin(), perm[c].end(), 0);
      if (repeat > 1) rng.shuffle(perm[c]);
    }

    FoldAssignment fa;
    fa.folds = k;
    fa.repeat_index = rep;
    fa.seed = rng.seed();
    std::vector<std::pair<std::size_t, std::pair<int, int>>> rows;  // instance -> (label, fold)
    for (std::size_t c = 0; c < assignment.num_classes; ++c)
      for (std::size_t i = 0; i < assignment.class_instances[c].size(); ++i) {
        const int fold = perm[c][static_cast<std::size_t>(assignment.cluster_ids[c][i])];
        rows.push_back({assignment.class_instances[c][i], {static_cast<int>(c), fold}});
      }
    std::sort(rows.begin(), rows.end());
    for (auto& [inst, lf] : rows) {
      fa.instance.push_back(inst);
      fa.label.push_back(lf.first);
      fa.fold.push_back(lf.second);
    }
    out.push_back(std::move(fa));
  }
  return out;
}

TrainValTest make_train_val_test(const FoldAssignment& assignment, std::size_t test_fold,
                                 double val_fraction, SeededRng& rng) {
  if (assignment.folds < 2)
    throw std::invalid_argument("make_train_val_test: need at least 2 folds");
  if (test_fold >= assignment.folds)
    throw std::invalid_argument("make_train_val_test: fold index out of range");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("make_train_val_test: validation fraction must be in (0,1)");

  TrainValTest split;
  // remaining instances per class, for stratified val carving
  std::vector<std::vector<std::size_t>> rest_by_class;
  for (std::size_t i = 0; i < assignment.instance.size(); ++i) {
    if (assignment.fold[i] == static_cast<int>(test_fold)) {
      split.test.push_back(assignment.instance[i]);
      continue;
    }
    const std::size_t c = static_cast<std::size_t>(assignment.label[i]);
    if (rest_by_class.size() <= c) rest_by_class.resize(c + 1);
    rest_by_class[c].push_back(assignment.instance[i]);
  }
  for (auto& ids : rest_by_class) {
    rng.shuffle(ids);
    const std::size_t val_count =
        static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(ids.size()) + 0.5));
    for (std::size_t i = 0; i < ids.size(); ++i)
      (i < val_count ? split.val : split.train).push_back(ids[i]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

FoldAssignment random_split_baseline(std::span<const int> labels, std::size_t folds,
                                     SeededRng& rng) {
  if (labels.size() < folds)
    throw std::invalid_argument("random_split_baseline: fewer instances than folds");
  const auto by_class = instances_by_class(labels);

  FoldAssignment fa;
  fa.folds = folds;
  fa.seed = rng.seed();
  std::vector<int> fold_of(labels.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::vector<std::size_t> ids = by_class[c];
    rng.shuffle(ids);
    for (std::size_t i = 0; i < ids.size(); ++i)
      fold_of[ids[i]] = static_cast<int>(i % folds);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    fa.instance.push_back(i);
    fa.label.push_back(labels[i]);
    fa.fold.push_back(fold_of[i]);
  }
  return fa;
}

void write_folds_csv(const std::string& path, const FoldAssignment& assignment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_folds_csv: cannot open " + path);
  out << "instance_index,class_label,fold_id\n";
  for (std::size_t i = 0; i < assignment.instance.size(); ++i)
    out << assignment.instance[i] << "," << assignment.label[i] << "," << assignment.fold[i]
        << "\n";
  if (!out.good()) throw std::runtime_error("write_folds_csv: write failed for " + path);
}

FoldAssignment read_folds_csv(const std::string& path) {
  const csv::Table table = csv::read_table(path);
  const std::size_t ci = table.column("instance_index");
  const std::size_t cl = table.column("class_label");
  const std::size_t cf = table.column("fold_id");
  FoldAssignment fa;
  int max_fold = -1;
  for (const auto& row : table.rows) {
    fa.instance.push_back(static_cast<std::size_t>(std::stoull(row[ci])));
    fa.label.push_back(std::stoi(row[cl]));
    fa.fold.push_back(std::stoi(row[cf]));
    max_fold = std::max(max_fold, fa.fold.back());
  }
  fa.folds = static_cast<std::size_t>(max_fold + 1);
  return fa;
}

}  // namespace vrcv::resample
