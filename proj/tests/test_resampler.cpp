#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "vrcv/dataset.hpp"
#include "vrcv/kmeans.hpp"
#include "vrcv/resampler.hpp"

using namespace vrcv;
using namespace vrcv::resample;

namespace {

// the hand-worked C=2, K=2 merge fixture: class 0 = {a,b | c}, class 1 = {d | e,f}
ClassClusterAssignment worked_example() {
  ClassClusterAssignment a;
  a.num_classes = 2;
  a.folds = 2;
  a.class_instances = {{0, 1, 2}, {3, 4, 5}};  // a..c, d..f
  a.cluster_ids = {{0, 0, 1}, {0, 1, 1}};
  return a;
}

void check_partition(const FoldAssignment& fa, std::size_t n, std::size_t classes) {
  REQUIRE(fa.instance.size() == n);
  std::set<std::size_t> seen;
  for (std::size_t id : fa.instance) seen.insert(id);
  CHECK(seen.size() == n);  // disjoint and exhaustive over 0..n-1
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == n - 1);
  // every class present in every fold
  std::vector<std::vector<int>> class_count(fa.folds, std::vector<int>(classes, 0));
  for (std::size_t i = 0; i < n; ++i)
    ++class_count[static_cast<std::size_t>(fa.fold[i])][static_cast<std::size_t>(fa.label[i])];
  for (std::size_t f = 0; f < fa.folds; ++f)
    for (std::size_t c = 0; c < classes; ++c) CHECK(class_count[f][c] > 0);
}

SplitConfig desk_split_config(std::uint64_t seed) {
  SplitConfig cfg;
  cfg.seed = seed;
  cfg.vae.arch = "desk";
  cfg.vae.latent_dim = 8;
  cfg.vae.hidden = 64;
  cfg.vae.epochs = 12;
  cfg.vae.batch = 64;
  return cfg;
}

}  // namespace

TEST_CASE("merge reproduces the worked example exactly") {
  SeededRng rng(1);
  auto folds = merge(worked_example(), 1, rng);
  REQUIRE(folds.size() == 1);
  const FoldAssignment& fa = folds[0];
  // D0 = {a,b,d} = {0,1,3}; D1 = {c,e,f} = {2,4,5}
  std::vector<int> expect_fold{0, 0, 1, 0, 1, 1};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(fa.instance[i] == i);
    CHECK(fa.fold[i] == expect_fold[i]);
  }
  CHECK(fa.label[2] == 0);
  CHECK(fa.label[3] == 1);
}

TEST_CASE("merge with repeat=1 ignores the generator state entirely") {
  SeededRng r1(7), r2(999);
  r2.next_u64();  // desynchronize
  auto a = merge(worked_example(), 1, r1);
  auto b = merge(worked_example(), 1, r2);
  for (std::size_t i = 0; i < 6; ++i) CHECK(a[0].fold[i] == b[0].fold[i]);
}

TEST_CASE("merge with repeat=3 yields three valid partitions") {
  SeededRng rng(2);
  auto folds = merge(worked_example(), 3, rng);
  REQUIRE(folds.size() == 3);
  for (const auto& fa : folds) {
    CHECK(fa.folds == 2);
    check_partition(fa, 6, 2);
  }
  CHECK(folds[0].repeat_index == 0);
  CHECK(folds[2].repeat_index == 2);
}

TEST_CASE("make_train_val_test: arithmetic on equal folds") {
  // K=5, 1000 instances, folds perfectly balanced, 2 classes interleaved
  FoldAssignment fa;
  fa.folds = 5;
  for (std::size_t i = 0; i < 1000; ++i) {
    fa.instance.push_back(i);
    fa.label.push_back(static_cast<int>(i % 2));
    fa.fold.push_back(static_cast<int>(i / 200));
  }
  SeededRng rng(3);
  TrainValTest split = make_train_val_test(fa, 2, 0.2, rng);
  CHECK(split.test.size() == 200);
  CHECK(split.val.size() == 160);
  CHECK(split.train.size() == 640);

  // disjoint and exhaustive
  std::set<std::size_t> all;
  for (auto id : split.train) all.insert(id);
  for (auto id : split.val) all.insert(id);
  for (auto id : split.test) all.insert(id);
  CHECK(all.size() == 1000);

  // stratification: class proportions in train and val within one instance
  auto count_class = [&](const std::vector<std::size_t>& ids, int c) {
    std::size_t k = 0;
    for (auto id : ids) k += (fa.label[id] == c) ? 1 : 0;
    return k;
  };
  for (int c : {0, 1}) {
    const double train_frac = static_cast<double>(count_class(split.train, c)) /
                              static_cast<double>(split.train.size());
    const double val_frac =
        static_cast<double>(count_class(split.val, c)) / static_cast<double>(split.val.size());
    CHECK(std::abs(train_frac - val_frac) <= 1.0 / static_cast<double>(split.val.size()) + 1e-12);
  }
  CHECK_THROWS_AS(make_train_val_test(fa, 5, 0.2, rng), std::invalid_argument);
}

TEST_CASE("random_split_baseline: near-equal stratified folds") {
  SeededRng rng(4);
  std::vector<int> labels;
  for (int i = 0; i < 701; ++i) labels.push_back(i % 3);
  FoldAssignment fa = random_split_baseline(labels, 5, rng);
  check_partition(fa, labels.size(), 3);
  std::vector<std::size_t> sizes(5, 0);
  for (int f : fa.fold) ++sizes[static_cast<std::size_t>(f)];
  const auto [mn, mx] = std::minmax_element(sizes.begin(), sizes.end());
  CHECK(*mx - *mn <= 3);  // at most C instances apart

  // per fold, class proportions match the dataset up to rounding
  for (std::size_t f = 0; f < 5; ++f) {
    std::vector<std::size_t> by_class(3, 0);
    std::size_t total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (fa.fold[i] == static_cast<int>(f)) {
        ++by_class[static_cast<std::size_t>(labels[i])];
        ++total;
      }
    for (std::size_t c = 0; c < 3; ++c) {
      const double frac = static_cast<double>(by_class[c]) / static_cast<double>(total);
      CHECK(std::abs(frac - 1.0 / 3.0) < 2.0 / static_cast<double>(total));
    }
  }
}

TEST_CASE("folds CSV roundtrip") {
  namespace fs = std::filesystem;
  SeededRng rng(5);
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(i % 3);
  FoldAssignment fa = random_split_baseline(labels, 4, rng);
  const std::string path = (fs::temp_directory_path() / "vrcv_folds_test.csv").string();
  write_folds_csv(path, fa);
  FoldAssignment back = read_folds_csv(path);
  CHECK(back.folds == fa.folds);
  REQUIRE(back.instance.size() == fa.instance.size());
  for (std::size_t i = 0; i < fa.instance.size(); ++i) {
    CHECK(back.instance[i] == fa.instance[i]);
    CHECK(back.label[i] == fa.label[i]);
    CHECK(back.fold[i] == fa.fold[i]);
  }
  fs::remove(path);
}

TEST_CASE("vgmm_vae_split: single class degenerates to one VAE + one VGMM") {
  data::SyntheticSpec spec;
  spec.classes = 1;
  spec.subdomains = 2;
  spec.n = 200;
  spec.dims = 10;
  spec.seed = 11;
  data::Dataset ds = data::gen_synthetic(spec);
  SplitConfig cfg = desk_split_config(21);
  cfg.vae.epochs = 6;
  ClassClusterAssignment assign = vgmm_vae_split(ds, 2, cfg);
  CHECK(assign.num_classes == 1);
  CHECK(assign.class_instances[0].size() == 200);
  std::set<int> distinct(assign.cluster_ids[0].begin(), assign.cluster_ids[0].end());
  CHECK(distinct.size() == 2);
}

TEST_CASE("vgmm_vae_split is deterministic in the config seed") {
  data::SyntheticSpec spec;
  spec.classes = 2;
  spec.subdomains = 2;
  spec.n = 400;
  spec.dims = 10;
  spec.seed = 12;
  data::Dataset ds = data::gen_synthetic(spec);
  SplitConfig cfg = desk_split_config(31);
  cfg.vae.epochs = 5;
  ClassClusterAssignment a = vgmm_vae_split(ds, 2, cfg);
  ClassClusterAssignment b = vgmm_vae_split(ds, 2, cfg);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < a.cluster_ids[c].size(); ++i)
      CHECK(a.cluster_ids[c][i] == b.cluster_ids[c][i]);
}

TEST_CASE("vgmm_vae_split rejects classes that are too small") {
  data::SyntheticSpec spec;
  spec.classes = 2;
  spec.subdomains = 2;
  spec.n = 56;  // 28 per class < 10*3
  spec.dims = 10;
  data::Dataset ds = data::gen_synthetic(spec);
  SplitConfig cfg = desk_split_config(1);
  CHECK_THROWS_AS(vgmm_vae_split(ds, 3, cfg), std::invalid_argument);
}

TEST_CASE("vgmm_vae_split recovers planted subdomains on separated data") {
  data::SyntheticSpec spec;
  spec.classes = 3;
  spec.subdomains = 3;
  spec.n = 1200;
  spec.dims = 10;
  spec.separation = 8.0;
  spec.seed = 13;
  data::Dataset ds = data::gen_synthetic(spec);

  SplitConfig cfg = desk_split_config(41);
  ClassClusterAssignment assign = vgmm_vae_split(ds, 3, cfg);

  const auto by_class = instances_by_class(ds.labels);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<int> truth;
    for (std::size_t id : by_class[c]) truth.push_back(ds.planted[id]);
    const double ari = testutil::adjusted_rand_index(assign.cluster_ids[c], truth);
    CHECK(ari >= 0.9);
  }

  // the merged folds form a labeled partition
  SeededRng rng(6);
  auto folds = merge(assign, 1, rng);
  check_partition(folds[0], ds.size(), 3);
}

TEST_CASE("per-class pipeline respects the thread knob deterministically") {
  data::SyntheticSpec spec;
  spec.classes = 2;
  spec.subdomains = 2;
  spec.n = 240;
  spec.dims = 10;
  spec.seed = 14;
  data::Dataset ds = data::gen_synthetic(spec);
  SplitConfig seq = desk_split_config(51);
  seq.vae.epochs = 4;
  seq.vae.batch = 32;
  SplitConfig par = seq;
  par.threads = 2;
  ClassClusterAssignment a = vgmm_vae_split(ds, 2, seq);
  ClassClusterAssignment b = vgmm_vae_split(ds, 2, par);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < a.cluster_ids[c].size(); ++i)
      CHECK(a.cluster_ids[c][i] == b.cluster_ids[c][i]);
}
