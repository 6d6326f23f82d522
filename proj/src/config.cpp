#include "vrcv/config.hpp"

#include <fstream>
#include <stdexcept>

namespace vrcv {

Config Config::defaults() {
  Config c;
  auto& v = c.values_;
  v["dataset.kind"] = "synthetic";  // synthetic | idx
  v["dataset.images"] = "";
  v["dataset.labels"] = "";
  v["dataset.images2"] = "";  // optional second IDX pair, concatenated
  v["dataset.labels2"] = "";
  v["dataset.n"] = "3000";
  v["dataset.classes"] = "3";
  v["dataset.subdomains"] = "3";
  v["dataset.dims"] = "10";
  v["dataset.separation"] = "8";

  v["splitter.kind"] = "both";  // vgmm | random | both (runcv splitter selection)
  v["splitter.folds"] = "5";
  v["splitter.repeat"] = "1";
  v["splitter.val_fraction"] = "0.2";

  v["vae.arch"] = "desk";  // desk | paper
  v["vae.latent_dim"] = "8";
  v["vae.hidden"] = "256";
  v["vae.likelihood"] = "bernoulli";  // bernoulli | gaussian
  v["vae.epochs"] = "20";
  v["vae.batch"] = "64";
  v["vae.lr"] = "0.001";

  v["vgmm.max_iter"] = "500";
  v["vgmm.tol"] = "1e-6";
  v["vgmm.restarts"] = "5";
  v["vgmm.pca_cap"] = "16";

  v["transport.subsample"] = "2000";

  v["tsne.perplexity"] = "30";
  v["tsne.iters"] = "1000";
  v["tsne.cap"] = "3000";
  v["tsne.lr"] = "200";

  v["model.name"] = "mlp-small";  // mlp-small | lenet | 3conv3fc | alexnet-small
  v["model.family"] = "frequentist";  // frequentist | bayes
  v["model.prior_std"] = "0.1";
  v["model.sigma0"] = "0.05";
  v["model.train_samples"] = "1";
  v["model.eval_samples"] = "10";
  v["model.kl_weight"] = "auto";  // auto = batch_size / train_set_size

  v["train.epochs"] = "15";
  v["train.batch"] = "64";
  v["train.lr"] = "0.001";
  v["train.per_epoch_test"] = "true";
  v["train.debug_batch_log"] = "false";

  v["report.panel_width"] = "360";
  v["report.panel_height"] = "220";

  v["seed"] = "0";
  v["threads"] = "1";
  v["out"] = "run";
  return c;
}

Config Config::from_file(const std::string& path) {
  Config c = defaults();
  c.load_file(path);
  return c;
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key = value at " + path + ":" +
                               std::to_string(lineno));
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second = value;
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second;
}

double Config::num(const std::string& key) const {
  const std::string& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' is not numeric: '" + s + "'");
  }
}

std::size_t Config::index(const std::string& key) const {
  const double v = num(key);
  if (v < 0) throw std::invalid_argument("config: key '" + key + "' must be nonnegative");
  return static_cast<std::size_t>(v);
}

std::uint64_t Config::u64(const std::string& key) const {
  const std::string& s = str(key);
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' is not an integer: '" + s + "'");
  }
}

bool Config::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' is not boolean: '" + s + "'");
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

}  // namespace vrcv
