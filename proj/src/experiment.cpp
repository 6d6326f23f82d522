#include "vrcv/experiment.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <thread>

#include "vrcv/checkpoint.hpp"
#include "vrcv/csv.hpp"
#include "vrcv/loss.hpp"
#include "vrcv/optim.hpp"

namespace vrcv::exp {

namespace {

constexpr const char* kMetricsHeader = "run_id,splitter,model,fold,epoch,split,accuracy,loss";

std::string record_line(const MetricsRecord& r) {
  return r.run_id + "," + r.splitter + "," + r.model + "," + std::to_string(r.fold) + "," +
         std::to_string(r.epoch) + "," + r.split + "," + csv::fmt(r.accuracy) + "," +
         csv::fmt(r.loss);
}

}  // namespace

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path_, ec) ||
                     std::filesystem::file_size(path_, ec) == 0;
  if (fresh) {
    std::ofstream out(path_);
    if (!out) throw std::runtime_error("metrics: cannot open " + path_);
    out << kMetricsHeader << "\n";
  }
}

void MetricsWriter::append(std::span<const MetricsRecord> records) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("metrics: cannot append to " + path_);
  for (const auto& r : records) out << record_line(r) << "\n";
  out.flush();
  if (!out.good()) throw std::runtime_error("metrics: write failed for " + path_);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  const csv::Table t = csv::read_table(path);
  const std::size_t c_run = t.column("run_id"), c_splitter = t.column("splitter"),
                    c_model = t.column("model"), c_fold = t.column("fold"),
                    c_epoch = t.column("epoch"), c_split = t.column("split"),
                    c_acc = t.column("accuracy"), c_loss = t.column("loss");
  std::vector<MetricsRecord> out;
  for (const auto& row : t.rows) {
    MetricsRecord r;
    r.run_id = row[c_run];
    r.splitter = row[c_splitter];
    r.model = row[c_model];
    r.fold = std::stoi(row[c_fold]);
    r.epoch = std::stoi(row[c_epoch]);
    r.split = row[c_split];
    r.accuracy = std::stod(row[c_acc]);
    r.loss = std::stod(row[c_loss]);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

struct Topology {
  std::vector<nn::LayerSpec> compute;  // dense / conv layers, in order
};

// shared layer plan for both families; activations get inserted between
// compute layers (relu for frequentist, softplus for bayes)
Topology classifier_topology(const std::string& name, std::size_t side, std::size_t classes) {
  using nn::LayerSpec;
  Topology t;
  auto dense_in = [&](const std::vector<LayerSpec>& convs) {
    std::vector<std::size_t> shape{1, 1, side, side};
    for (const auto& spec : convs) shape = nn::output_shape(spec, shape);
    return shape[1] * shape[2] * shape[3];
  };
  if (name == "mlp-small") {
    t.compute.push_back(LayerSpec::dense(side * side, 128));
    t.compute.push_back(LayerSpec::dense(128, 64));
    t.compute.push_back(LayerSpec::dense(64, classes));
  } else if (name == "lenet") {
    std::vector<LayerSpec> convs{LayerSpec::conv2d(1, 6, 5, 2, 2),
                                 LayerSpec::conv2d(6, 16, 5, 2, 2)};
    const std::size_t flat = dense_in(convs);
    t.compute = convs;
    t.compute.push_back(LayerSpec::dense(flat, 120));
    t.compute.push_back(LayerSpec::dense(120, 84));
    t.compute.push_back(LayerSpec::dense(84, classes));
  } else if (name == "3conv3fc") {
    std::vector<LayerSpec> convs{LayerSpec::conv2d(1, 32, 3, 2, 1),
                                 LayerSpec::conv2d(32, 64, 3, 2, 1),
                                 LayerSpec::conv2d(64, 64, 3, 2, 1)};
    const std::size_t flat = dense_in(convs);
    t.compute = convs;
    t.compute.push_back(LayerSpec::dense(flat, 256));
    t.compute.push_back(LayerSpec::dense(256, 128));
    t.compute.push_back(LayerSpec::dense(128, classes));
  } else if (name == "alexnet-small") {
    std::vector<LayerSpec> convs{LayerSpec::conv2d(1, 64, 3, 2, 1),
                                 LayerSpec::conv2d(64, 192, 3, 2, 1),
                                 LayerSpec::conv2d(192, 256, 3, 2, 1)};
    const std::size_t flat = dense_in(convs);
    t.compute = convs;
    t.compute.push_back(LayerSpec::dense(flat, 512));
    t.compute.push_back(LayerSpec::dense(512, 256));
    t.compute.push_back(LayerSpec::dense(256, classes));
  } else {
    throw std::invalid_argument("unknown model name '" + name + "'");
  }
  return t;
}

}  // namespace

nn::Sequential build_frequentist(const std::string& name, std::size_t side, std::size_t classes,
                                 SeededRng& rng) {
  const Topology topo = classifier_topology(name, side, classes);
  nn::Sequential net;
  for (std::size_t i = 0; i < topo.compute.size(); ++i) {
    net.add(topo.compute[i]);
    if (i + 1 < topo.compute.size()) net.add(nn::LayerSpec::relu());
  }
  net.init(rng);
  return net;
}

bayes::BayesNet build_bayesian(const std::string& name, std::size_t side, std::size_t classes,
                               const bayes::PriorSpec& prior, double sigma0, SeededRng& rng) {
  const Topology topo = classifier_topology(name, side, classes);
  bayes::BayesNet net;
  net.prior = prior;
  for (std::size_t i = 0; i < topo.compute.size(); ++i) {
    net.add(topo.compute[i]);
    if (i + 1 < topo.compute.size()) net.add(nn::LayerSpec::softplus());
  }
  net.init(rng, sigma0);
  return net;
}

namespace {

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

EvalResult evaluate_frequentist(nn::Sequential& net, const Tensor& images,
                                std::span<const int> labels, std::size_t batch) {
  const std::size_t n = images.dim(0);
  const std::size_t px = images.size() / n;
  double loss_sum = 0.0, acc_sum = 0.0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t bs = std::min(batch, n - start);
    Tensor b({bs, 1, images.dim(2), images.dim(3)});
    for (std::size_t i = 0; i < bs * px; ++i) b[i] = images[start * px + i];
    std::vector<int> lab(labels.begin() + static_cast<long>(start),
                         labels.begin() + static_cast<long>(start + bs));
    Tensor logits = net.forward(b, nn::Mode::Eval);
    auto xent = nn::softmax_xent(logits, lab);
    loss_sum += xent.loss * static_cast<double>(bs);
    acc_sum += nn::accuracy(logits, lab) * static_cast<double>(bs);
  }
  return {acc_sum / static_cast<double>(n), loss_sum / static_cast<double>(n)};
}

EvalResult evaluate_bayesian(bayes::BayesNet& net, const Tensor& images,
                             std::span<const int> labels, std::size_t batch,
                             std::size_t samples, SeededRng rng) {
  const std::size_t n = images.dim(0);
  const std::size_t px = images.size() / n;
  double loss_sum = 0.0, acc_sum = 0.0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t bs = std::min(batch, n - start);
    Tensor b({bs, 1, images.dim(2), images.dim(3)});
    for (std::size_t i = 0; i < bs * px; ++i) b[i] = images[start * px + i];
    std::vector<int> lab(labels.begin() + static_cast<long>(start),
                         labels.begin() + static_cast<long>(start + bs));
    Tensor probs = bayes::predictive_mc(net, b, rng, samples);
    loss_sum += nn::nll_from_probs(probs, lab) * static_cast<double>(bs);
    acc_sum += nn::accuracy(probs, lab) * static_cast<double>(bs);
  }
  return {acc_sum / static_cast<double>(n), loss_sum / static_cast<double>(n)};
}

struct FoldData {
  Tensor train_x, val_x, test_x;
  std::vector<int> train_y, val_y, test_y;
  std::vector<std::size_t> train_ids;
};

FoldData gather_fold(const data::Dataset& dataset, const resample::TrainValTest& split) {
  FoldData fd;
  fd.train_x = dataset.gather_images(split.train);
  fd.val_x = dataset.gather_images(split.val);
  fd.test_x = dataset.gather_images(split.test);
  fd.train_y = dataset.gather_labels(split.train);
  fd.val_y = dataset.gather_labels(split.val);
  fd.test_y = dataset.gather_labels(split.test);
  fd.train_ids = split.train;
  return fd;
}

}  // namespace

std::vector<MetricsRecord> run_cv_experiment(
    const data::Dataset& dataset, const resample::FoldAssignment& folds,
    const std::string& splitter_name, const std::string& model_name, const std::string& family,
    double val_fraction, const TrainConfig& train_cfg, std::uint64_t seed, std::size_t threads,
    MetricsWriter* writer, const std::string& checkpoint_dir,
    std::vector<std::string>* events) {
  if (family != "frequentist" && family != "bayes")
    throw std::invalid_argument("run_cv_experiment: family must be frequentist or bayes");
  const std::size_t k = folds.folds;
  const std::size_t side = dataset.image_side();
  const std::size_t classes = dataset.num_classes();
  const std::string run_id =
      "run" + std::to_string(seed) + "_" + splitter_name + "_" + model_name + "_" + family;
  const std::string model_tag = model_name + "-" + family;

  SeededRng root(seed);
  std::vector<std::vector<MetricsRecord>> per_fold(k);
  std::vector<std::string> fold_events(k);
  const bool stream = writer != nullptr && threads <= 1;

  auto run_fold = [&](std::size_t fold_idx) {
    SeededRng fold_rng = root.derive("fold", fold_idx);
    SeededRng split_rng = fold_rng.derive("split");
    SeededRng init_rng = fold_rng.derive("init");
    SeededRng shuffle_rng = fold_rng.derive("shuffle");
    SeededRng noise_rng = fold_rng.derive("noise");

    const resample::TrainValTest split =
        resample::make_train_val_test(folds, fold_idx, val_fraction, split_rng);
    const FoldData fd = gather_fold(dataset, split);
    const std::size_t n_train = fd.train_ids.size();

    nn::Sequential freq;
    bayes::BayesNet bay;
    std::vector<std::string> names;
    if (family == "frequentist") {
      freq = build_frequentist(model_name, side, classes, init_rng);
      names = freq.param_names("");
    } else {
      bay = build_bayesian(model_name, side, classes, bayes::PriorSpec{train_cfg.prior_std},
                           train_cfg.sigma0, init_rng);
      names = bay.param_names("");
    }
    nn::Adam opt(nn::AdamConfig{.lr = train_cfg.lr});

    std::ofstream batch_log;
    if (train_cfg.debug_batch_log && !train_cfg.debug_log_path.empty())
      batch_log.open(train_cfg.debug_log_path + ".fold" + std::to_string(fold_idx));

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t px = side * side;

    for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      bool aborted = false;
      for (std::size_t start = 0; start < n_train; start += train_cfg.batch) {
        const std::size_t bs = std::min(train_cfg.batch, n_train - start);
        Tensor batch({bs, 1, side, side});
        std::vector<int> lab(bs);
        for (std::size_t i = 0; i < bs; ++i) {
          const std::size_t src = order[start + i];
          for (std::size_t p = 0; p < px; ++p) batch[i * px + p] = fd.train_x[src * px + p];
          lab[i] = fd.train_y[src];
          if (batch_log.is_open()) batch_log << fd.train_ids[src] << "\n";
        }
        double loss = 0.0;
        std::vector<Tensor> grads;
        if (family == "frequentist") {
          std::vector<nn::FwdCache> caches;
          Tensor logits = freq.forward(batch, nn::Mode::Train, &caches);
          auto xent = nn::softmax_xent(logits, lab);
          loss = xent.loss;
          freq.backward(xent.grad, caches, grads);
        } else {
          const double kl_w = train_cfg.kl_weight >= 0.0
                                  ? train_cfg.kl_weight
                                  : static_cast<double>(bs) / static_cast<double>(n_train);
          auto parts = bayes::free_energy(bay, batch, lab, noise_rng, train_cfg.train_samples,
                                          kl_w, &grads);
          loss = parts.total;
        }
        if (!std::isfinite(loss)) {
          fold_events[fold_idx] = "fold " + std::to_string(fold_idx) +
                                  " aborted: non-finite loss at epoch " + std::to_string(epoch);
          aborted = true;
          break;
        }
        auto params = family == "frequentist" ? freq.params() : bay.params();
        opt.step(params, grads, names);
      }
      if (aborted) break;
      if (batch_log.is_open()) batch_log.flush();

      // per-epoch evaluation; the bayes predictive stream is derived per
      // (epoch, split) so evaluation order cannot matter
      auto eval_split = [&](const Tensor& x, const std::vector<int>& y,
                            const char* tag) -> EvalResult {
        if (family == "frequentist") return evaluate_frequentist(freq, x, y, 256);
        return evaluate_bayesian(bay, x, y, 256, train_cfg.eval_samples,
                                 fold_rng.derive(std::string("eval.") + tag, epoch));
      };
      const bool last_epoch = epoch + 1 == train_cfg.epochs;
      std::vector<MetricsRecord> epoch_records;
      auto push = [&](const char* split_name, const EvalResult& r) {
        epoch_records.push_back({run_id, splitter_name, model_tag, static_cast<int>(fold_idx),
                                 static_cast<int>(epoch), split_name, r.accuracy, r.loss});
      };
      push("train", eval_split(fd.train_x, fd.train_y, "train"));
      push("val", eval_split(fd.val_x, fd.val_y, "val"));
      if (train_cfg.per_epoch_test || last_epoch)
        push("test", eval_split(fd.test_x, fd.test_y, "test"));
      for (auto& r : epoch_records) per_fold[fold_idx].push_back(r);
      if (stream) writer->append(epoch_records);
    }

    if (!checkpoint_dir.empty() && fold_events[fold_idx].empty()) {
      const std::string stem = checkpoint_dir + "/" + model_tag + "_" + splitter_name + "_fold" +
                               std::to_string(fold_idx);
      if (family == "frequentist") {
        std::vector<const Tensor*> tensors;
        for (Tensor* t : freq.params()) tensors.push_back(t);
        nn::save_checkpoint(stem, names, tensors);
      } else {
        std::vector<const Tensor*> tensors;
        for (Tensor* t : bay.params()) tensors.push_back(t);
        nn::save_checkpoint(stem, names, tensors, bay.param_tags());
      }
    }
  };

  if (threads <= 1 || k <= 1) {
    for (std::size_t f = 0; f < k; ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      while (true) {
        const std::size_t f = next.fetch_add(1);
        if (f >= k) return;
        run_fold(f);
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, k); ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<MetricsRecord> all;
  for (std::size_t f = 0; f < k; ++f)
    for (auto& r : per_fold[f]) all.push_back(std::move(r));
  if (writer && !stream) writer->append(all);
  if (events)
    for (const auto& e : fold_events)
      if (!e.empty()) events->push_back(e);
  return all;
}

}  // namespace vrcv::exp
