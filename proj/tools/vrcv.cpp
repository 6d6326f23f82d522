// vrcv: resampling benchmark driver.
//
// Pipeline subcommands, all working inside --out <dir>:
//   synth     generate the synthetic benchmark dataset (IDX files)
//   embed     train the per-class and all-class VAEs, dump latent CSVs
//   split     per-class VGMM clustering -> fold CSVs (plus random baseline)
//   shiftdist pairwise Wasserstein distance matrices between folds
//   tsne      2-D embedding CSV of the all-class latents
//   runcv     cross-validation experiment -> metrics.csv + checkpoints
//   report    SVG report + summary.txt from the CSVs
//
// Every config key doubles as a CLI flag of the same dotted name.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vrcv/config.hpp"
#include "vrcv/csv.hpp"
#include "vrcv/dataset.hpp"
#include "vrcv/experiment.hpp"
#include "vrcv/report.hpp"
#include "vrcv/resampler.hpp"
#include "vrcv/transport.hpp"
#include "vrcv/tsne.hpp"
#include "vrcv/vae.hpp"

namespace fs = std::filesystem;
using namespace vrcv;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Paths {
  fs::path out;
  fs::path images() const { return out / "images.idx"; }
  fs::path labels() const { return out / "labels.idx"; }
  fs::path planted() const { return out / "planted_subdomains.csv"; }
  fs::path latents() const { return out / "latents.csv"; }
  fs::path latents_class(std::size_t c) const {
    return out / ("latents_class" + std::to_string(c) + ".csv");
  }
  fs::path folds(const std::string& splitter, int repeat) const {
    const std::string stem =
        splitter == "vgmm" ? "folds_r" + std::to_string(repeat)
                           : "folds_" + splitter + "_r" + std::to_string(repeat);
    return out / (stem + ".csv");
  }
  fs::path distances(const std::string& splitter) const {
    return out / ("distances_" + splitter + ".csv");
  }
  fs::path tsne() const { return out / "tsne.csv"; }
  fs::path metrics() const { return out / "metrics.csv"; }
  fs::path manifest() const { return out / "manifest.txt"; }
  fs::path report_svg() const { return out / "report.svg"; }
  fs::path summary() const { return out / "summary.txt"; }
  fs::path checkpoints() const { return out / "checkpoints"; }
};

void append_manifest(const Paths& paths, const Config& cfg, const std::string& command,
                     const std::vector<std::string>& events,
                     const std::string& dataset_hash = "") {
  std::ofstream out(paths.manifest(), std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + paths.manifest().string());
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  out << "[" << command << "] version=" << kVersion << " time=" << stamp << "\n";
  if (!dataset_hash.empty()) out << "  dataset_hash=" << dataset_hash << "\n";
  for (const auto& [k, v] : cfg.items()) out << "  " << k << " = " << v << "\n";
  for (const auto& e : events) out << "  event: " << e << "\n";
  out << "\n";
}

data::Dataset load_dataset(const Config& cfg, const Paths& paths) {
  data::Dataset ds;
  if (cfg.str("dataset.kind") == "synthetic") {
    ds = data::load_idx(paths.images().string(), paths.labels().string());
    if (fs::exists(paths.planted())) {
      const csv::Table t = csv::read_table(paths.planted().string());
      const std::size_t cs = t.column("subdomain_id");
      for (const auto& row : t.rows) ds.planted.push_back(std::stoi(row[cs]));
    }
  } else if (cfg.str("dataset.kind") == "idx") {
    ds = data::load_idx(cfg.str("dataset.images"), cfg.str("dataset.labels"));
    if (!cfg.str("dataset.images2").empty())
      ds = data::concat(ds, data::load_idx(cfg.str("dataset.images2"),
                                           cfg.str("dataset.labels2")));
  } else {
    throw std::invalid_argument("dataset.kind must be synthetic or idx");
  }
  return ds;
}

resample::SplitConfig split_config(const Config& cfg) {
  resample::SplitConfig sc;
  sc.folds = cfg.index("splitter.folds");
  sc.repeat = static_cast<int>(cfg.index("splitter.repeat"));
  sc.val_fraction = cfg.num("splitter.val_fraction");
  sc.seed = cfg.u64("seed");
  sc.threads = cfg.index("threads");
  sc.vae.arch = cfg.str("vae.arch");
  sc.vae.latent_dim = cfg.index("vae.latent_dim");
  sc.vae.hidden = cfg.index("vae.hidden");
  sc.vae.likelihood = cfg.str("vae.likelihood");
  sc.vae.epochs = cfg.index("vae.epochs");
  sc.vae.batch = cfg.index("vae.batch");
  sc.vae.lr = cfg.num("vae.lr");
  sc.vgmm.max_iter = static_cast<int>(cfg.index("vgmm.max_iter"));
  sc.vgmm.tol = cfg.num("vgmm.tol");
  sc.vgmm.restarts = static_cast<int>(cfg.index("vgmm.restarts"));
  sc.pca_cap = cfg.index("vgmm.pca_cap");
  return sc;
}

void write_latents_csv(const std::string& path, const Tensor& latents,
                       std::span<const std::size_t> instance_ids,
                       std::span<const int> class_labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "instance_index";
  if (!class_labels.empty()) out << ",class_label";
  for (std::size_t j = 0; j < latents.dim(1); ++j) out << ",z" << j;
  out << "\n";
  for (std::size_t i = 0; i < latents.dim(0); ++i) {
    out << instance_ids[i];
    if (!class_labels.empty()) out << "," << class_labels[i];
    for (std::size_t j = 0; j < latents.dim(1); ++j) out << "," << csv::fmt(latents(i, j));
    out << "\n";
  }
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

struct LoadedLatents {
  Tensor z;
  std::vector<std::size_t> instance;
  std::vector<int> label;  // only in the all-class file
};

LoadedLatents read_latents_csv(const std::string& path) {
  const csv::Table t = csv::read_table(path);
  const std::size_t ci = t.column("instance_index");
  const bool has_label = std::find(t.header.begin(), t.header.end(), "class_label") !=
                         t.header.end();
  const std::size_t z0 = has_label ? 2 : 1;
  const std::size_t dz = t.header.size() - z0;
  LoadedLatents out;
  out.z = Tensor({t.rows.size(), dz});
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    out.instance.push_back(static_cast<std::size_t>(std::stoull(t.rows[i][ci])));
    if (has_label) out.label.push_back(std::stoi(t.rows[i][t.column("class_label")]));
    for (std::size_t j = 0; j < dz; ++j) out.z(i, j) = std::stod(t.rows[i][z0 + j]);
  }
  return out;
}

int cmd_synth(const Config& cfg, const Paths& paths) {
  data::SyntheticSpec spec;
  spec.classes = cfg.index("dataset.classes");
  spec.subdomains = cfg.index("dataset.subdomains");
  spec.dims = cfg.index("dataset.dims");
  spec.n = cfg.index("dataset.n");
  spec.separation = cfg.num("dataset.separation");
  spec.seed = cfg.u64("seed");
  data::Dataset ds = data::gen_synthetic(spec);
  data::write_idx(paths.images().string(), paths.labels().string(), ds);
  {
    std::ofstream out(paths.planted());
    out << "instance_index,class_label,subdomain_id\n";
    for (std::size_t i = 0; i < ds.size(); ++i)
      out << i << "," << ds.labels[i] << "," << ds.planted[i] << "\n";
  }
  append_manifest(paths, cfg, "synth", {}, std::to_string(ds.content_hash()));
  std::cout << "synth: wrote " << ds.size() << " instances to " << paths.out << "\n";
  return 0;
}

int cmd_embed(const Config& cfg, const Paths& paths) {
  const data::Dataset ds = load_dataset(cfg, paths);
  resample::SplitConfig sc = split_config(cfg);
  sc.vae.image_side = ds.image_side();

  const auto by_class = resample::instances_by_class(ds.labels);
  std::vector<vae::VaeModel> models;
  const std::vector<Tensor> latents = resample::per_class_latents(ds, sc, &models);
  fs::create_directories(paths.checkpoints());
  for (std::size_t c = 0; c < latents.size(); ++c) {
    write_latents_csv(paths.latents_class(c).string(), latents[c], by_class[c], {});
    vae::save_vae(models[c], (paths.checkpoints() / ("vae_class" + std::to_string(c))).string());
  }

  // all-class VAE for the shared latent space (t-SNE, Wasserstein reporting)
  vae::VaeConfig all_cfg = sc.vae;
  vae::VaeModel all_model =
      vae::train_vae(ds.images, all_cfg, SeededRng(sc.seed).derive("vae.all"));
  Tensor all_latents = vae::extract_latents(all_model, ds.images);
  std::vector<std::size_t> ids(ds.size());
  std::iota(ids.begin(), ids.end(), 0);
  write_latents_csv(paths.latents().string(), all_latents, ids, ds.labels);
  vae::save_vae(all_model, (paths.checkpoints() / "vae_all").string());

  append_manifest(paths, cfg, "embed", {}, std::to_string(ds.content_hash()));
  std::cout << "embed: " << latents.size() << " class VAEs + all-class VAE -> "
            << paths.latents() << "\n";
  return 0;
}

int cmd_split(const Config& cfg, const Paths& paths) {
  const data::Dataset ds = load_dataset(cfg, paths);
  resample::SplitConfig sc = split_config(cfg);
  const auto by_class = resample::instances_by_class(ds.labels);

  std::vector<Tensor> latents;
  std::vector<std::vector<std::size_t>> instances;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    LoadedLatents ll = read_latents_csv(paths.latents_class(c).string());
    latents.push_back(std::move(ll.z));
    instances.push_back(std::move(ll.instance));
  }

  resample::SplitEvents events;
  std::vector<vgmm::VgmmPosterior> posteriors;
  std::vector<vgmm::VgmmPrior> priors;
  const resample::ClassClusterAssignment assign =
      resample::cluster_latents(latents, instances, sc.folds, sc, &events, &posteriors, &priors);
  for (std::size_t c = 0; c < posteriors.size(); ++c)
    vgmm::write_posterior_report(
        (paths.out / ("vgmm_class" + std::to_string(c) + "_report.txt")).string(),
        posteriors[c], priors[c]);
  SeededRng merge_rng = SeededRng(sc.seed).derive("merge");
  const auto fold_sets = resample::merge(assign, sc.repeat, merge_rng);
  for (const auto& fa : fold_sets)
    resample::write_folds_csv(paths.folds("vgmm", fa.repeat_index).string(), fa);

  SeededRng base_rng = SeededRng(sc.seed).derive("random_baseline");
  for (int rep = 0; rep < sc.repeat; ++rep) {
    resample::FoldAssignment fa = resample::random_split_baseline(ds.labels, sc.folds, base_rng);
    fa.repeat_index = rep;
    resample::write_folds_csv(paths.folds("random", rep).string(), fa);
  }

  // per-fold class proportions, the p(y)-preservation diagnostic
  for (const auto& fa : fold_sets) {
    std::vector<std::vector<std::size_t>> counts(fa.folds,
                                                 std::vector<std::size_t>(by_class.size(), 0));
    for (std::size_t i = 0; i < fa.instance.size(); ++i)
      ++counts[static_cast<std::size_t>(fa.fold[i])][static_cast<std::size_t>(fa.label[i])];
    for (std::size_t f = 0; f < fa.folds; ++f) {
      std::size_t total = 0;
      for (std::size_t v : counts[f]) total += v;
      std::string note = "vgmm r" + std::to_string(fa.repeat_index) + " fold " +
                         std::to_string(f) + " size " + std::to_string(total) +
                         " class proportions";
      for (std::size_t cls = 0; cls < by_class.size(); ++cls)
        note += " " + csv::fmt(static_cast<double>(counts[f][cls]) /
                               static_cast<double>(total));
      events.notes.push_back(note);
    }
  }

  append_manifest(paths, cfg, "split", events.notes, std::to_string(ds.content_hash()));
  std::cout << "split: wrote " << fold_sets.size() << " vgmm fold set(s) and " << sc.repeat
            << " random baseline(s)\n";
  return 0;
}

int cmd_shiftdist(const Config& cfg, const Paths& paths) {
  const LoadedLatents all = read_latents_csv(paths.latents().string());
  SeededRng rng(cfg.u64("seed"));
  for (const std::string splitter : {"vgmm", "random"}) {
    const resample::FoldAssignment fa =
        resample::read_folds_csv(paths.folds(splitter, 0).string());
    std::vector<int> fold_of(all.z.dim(0));
    for (std::size_t i = 0; i < fa.instance.size(); ++i) fold_of[fa.instance[i]] = fa.fold[i];
    SeededRng sub = rng.derive("shiftdist." + splitter);
    const Tensor m = ot::pairwise_fold_distances(all.z, fold_of, fa.folds,
                                                 cfg.index("transport.subsample"), sub);
    ot::write_distance_csv(paths.distances(splitter).string(), m);
  }
  append_manifest(paths, cfg, "shiftdist", {});
  std::cout << "shiftdist: wrote " << paths.distances("vgmm") << " and "
            << paths.distances("random") << "\n";
  return 0;
}

int cmd_tsne(const Config& cfg, const Paths& paths) {
  const LoadedLatents all = read_latents_csv(paths.latents().string());
  const resample::FoldAssignment fa = resample::read_folds_csv(paths.folds("vgmm", 0).string());
  std::vector<int> fold_of(all.z.dim(0));
  for (std::size_t i = 0; i < fa.instance.size(); ++i) fold_of[fa.instance[i]] = fa.fold[i];

  tsne::TsneConfig tc;
  tc.perplexity = cfg.num("tsne.perplexity");
  tc.iters = static_cast<int>(cfg.index("tsne.iters"));
  tc.subsample_cap = cfg.index("tsne.cap");
  tc.learning_rate = cfg.num("tsne.lr");
  SeededRng rng = SeededRng(cfg.u64("seed")).derive("tsne");
  const tsne::TsneResult res = tsne::run_tsne(all.z, tc, rng);
  tsne::write_tsne_csv(paths.tsne().string(), res, all.label, fold_of);
  append_manifest(paths, cfg, "tsne", {});
  std::cout << "tsne: embedded " << res.y.dim(0) << " points -> " << paths.tsne() << "\n";
  return 0;
}

int cmd_runcv(const Config& cfg, const Paths& paths) {
  const data::Dataset ds = load_dataset(cfg, paths);
  exp::TrainConfig tc;
  tc.epochs = cfg.index("train.epochs");
  tc.batch = cfg.index("train.batch");
  tc.lr = cfg.num("train.lr");
  tc.per_epoch_test = cfg.flag("train.per_epoch_test");
  tc.debug_batch_log = cfg.flag("train.debug_batch_log");
  if (tc.debug_batch_log) tc.debug_log_path = (paths.out / "batch_log").string();
  tc.train_samples = cfg.index("model.train_samples");
  tc.eval_samples = cfg.index("model.eval_samples");
  tc.prior_std = cfg.num("model.prior_std");
  tc.sigma0 = cfg.num("model.sigma0");
  tc.kl_weight = cfg.str("model.kl_weight") == "auto" ? -1.0 : cfg.num("model.kl_weight");

  fs::create_directories(paths.checkpoints());
  exp::MetricsWriter writer(paths.metrics().string());
  std::vector<std::string> events;

  std::vector<std::string> splitters;
  if (cfg.str("splitter.kind") == "both")
    splitters = {"vgmm", "random"};
  else
    splitters = {cfg.str("splitter.kind")};

  for (const std::string& splitter : splitters) {
    const resample::FoldAssignment fa =
        resample::read_folds_csv(paths.folds(splitter, 0).string());
    exp::run_cv_experiment(ds, fa, splitter, cfg.str("model.name"), cfg.str("model.family"),
                           cfg.num("splitter.val_fraction"), tc, cfg.u64("seed"),
                           cfg.index("threads"), &writer, paths.checkpoints().string(), &events);
  }
  append_manifest(paths, cfg, "runcv", events, std::to_string(ds.content_hash()));
  std::cout << "runcv: metrics -> " << paths.metrics() << "\n";
  return 0;
}

int cmd_report(const Config& cfg, const Paths& paths) {
  report::ReportInputs in;
  in.metrics_csv = paths.metrics().string();
  if (fs::exists(paths.tsne())) in.tsne_csv = paths.tsne().string();
  if (fs::exists(paths.distances("vgmm"))) in.dist_vgmm_csv = paths.distances("vgmm").string();
  if (fs::exists(paths.distances("random")))
    in.dist_random_csv = paths.distances("random").string();
  report::ReportOutputs out{paths.report_svg().string(), paths.summary().string()};
  const std::string summary = report::render_report(in, out);
  append_manifest(paths, cfg, "report", {});
  std::cout << summary;
  std::cout << "report: " << paths.report_svg() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational resampling benchmark (VGMM-VAE cross-validation)"};
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "flat key=value config file");

  Config cfg = Config::defaults();
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& [key, value] : cfg.items()) {
    const std::string k = key;
    app.add_option_function<std::string>(
           "--" + k, [&overrides, k](const std::string& v) { overrides.emplace_back(k, v); },
           "config key (default: " + (value.empty() ? "<empty>" : value) + ")")
        ->type_name("VALUE");
  }

  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark dataset");
  auto* embed = app.add_subcommand("embed", "train VAEs and dump latent CSVs");
  auto* split = app.add_subcommand("split", "produce fold CSVs for both splitters");
  auto* shiftdist = app.add_subcommand("shiftdist", "pairwise Wasserstein fold distances");
  auto* tsnecmd = app.add_subcommand("tsne", "2-D embedding CSV of the latents");
  auto* runcv = app.add_subcommand("runcv", "cross-validation experiment loop");
  auto* reportcmd = app.add_subcommand("report", "render the SVG report and summary");
  app.require_subcommand(1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);

    Paths paths{fs::path(cfg.str("out"))};
    fs::create_directories(paths.out);

    if (synth->parsed()) return cmd_synth(cfg, paths);
    if (embed->parsed()) return cmd_embed(cfg, paths);
    if (split->parsed()) return cmd_split(cfg, paths);
    if (shiftdist->parsed()) return cmd_shiftdist(cfg, paths);
    if (tsnecmd->parsed()) return cmd_tsne(cfg, paths);
    if (runcv->parsed()) return cmd_runcv(cfg, paths);
    if (reportcmd->parsed()) return cmd_report(cfg, paths);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
