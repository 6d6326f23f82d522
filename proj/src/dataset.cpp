#include "vrcv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "vrcv/rng.hpp"

namespace vrcv::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;  // 2051
constexpr std::uint32_t kLabelMagic = 0x00000801;  // 2049

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("load_idx: truncated header in " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

unsigned char quantize(double v) {
  const double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(scaled);
}

}  // namespace

std::size_t Dataset::num_classes() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx + 1);
}

Tensor Dataset::gather_images(std::span<const std::size_t> ids) const {
  const std::size_t side = image_side();
  const std::size_t px = side * side;
  Tensor out({ids.size(), 1, side, side});
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t p = 0; p < px; ++p) out[i * px + p] = images[ids[i] * px + p];
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> ids) const {
  std::vector<int> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = labels[ids[i]];
  return out;
}

std::uint64_t Dataset::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  for (double v : images.data()) mix(quantize(v));
  for (int l : labels) {
    mix(static_cast<unsigned char>(l & 0xFF));
    mix(static_cast<unsigned char>((l >> 8) & 0xFF));
  }
  return h;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
  const std::uint32_t img_magic = read_be_u32(img, images_path);
  if (img_magic != kImageMagic)
    throw std::runtime_error("load_idx: bad image magic in " + images_path + " (got " +
                             std::to_string(img_magic) + ", want 2051)");
  const std::uint32_t n = read_be_u32(img, images_path);
  const std::uint32_t rows = read_be_u32(img, images_path);
  const std::uint32_t cols = read_be_u32(img, images_path);
  if (rows != cols) throw std::runtime_error("load_idx: only square images are supported");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);
  const std::uint32_t lab_magic = read_be_u32(lab, labels_path);
  if (lab_magic != kLabelMagic)
    throw std::runtime_error("load_idx: bad label magic in " + labels_path + " (got " +
                             std::to_string(lab_magic) + ", want 2049)");
  const std::uint32_t n_lab = read_be_u32(lab, labels_path);
  if (n != n_lab)
    throw std::runtime_error("load_idx: image/label count mismatch (" + std::to_string(n) +
                             " vs " + std::to_string(n_lab) + ")");

  Dataset ds;
  ds.source = images_path;
  ds.images = Tensor({n, 1, rows, cols});
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!img) throw std::runtime_error("load_idx: truncated image data in " + images_path);
    for (std::size_t p = 0; p < buf.size(); ++p)
      ds.images[static_cast<std::size_t>(i) * buf.size() + p] =
          static_cast<double>(buf[p]) / 255.0;
  }
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    char c;
    lab.read(&c, 1);
    if (!lab) throw std::runtime_error("load_idx: truncated label data in " + labels_path);
    ds.labels[i] = static_cast<int>(static_cast<unsigned char>(c));
  }

  // class ids must be contiguous from 0
  std::vector<bool> present(ds.num_classes(), false);
  for (int l : ds.labels) present[static_cast<std::size_t>(l)] = true;
  for (std::size_t c = 0; c < present.size(); ++c)
    if (!present[c])
      throw std::runtime_error("load_idx: class ids are not contiguous (class " +
                               std::to_string(c) + " is empty)");
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& dataset) {
  const std::size_t n = dataset.size(), side = dataset.image_side();
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("write_idx: cannot open " + images_path);
  write_be_u32(img, kImageMagic);
  write_be_u32(img, static_cast<std::uint32_t>(n));
  write_be_u32(img, static_cast<std::uint32_t>(side));
  write_be_u32(img, static_cast<std::uint32_t>(side));
  std::vector<unsigned char> buf(side * side);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < buf.size(); ++p)
      buf[p] = quantize(dataset.images[i * buf.size() + p]);
    img.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!img.good()) throw std::runtime_error("write_idx: write failed for " + images_path);

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("write_idx: cannot open " + labels_path);
  write_be_u32(lab, kLabelMagic);
  write_be_u32(lab, static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const char c = static_cast<char>(dataset.labels[i] & 0xFF);
    lab.write(&c, 1);
  }
  if (!lab.good()) throw std::runtime_error("write_idx: write failed for " + labels_path);
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.image_side() != b.image_side())
    throw std::invalid_argument("concat: image extents disagree");
  Dataset out;
  out.source = a.source + "+" + b.source;
  out.images = Tensor({a.size() + b.size(), 1, a.image_side(), a.image_side()});
  const std::size_t px = a.image_side() * a.image_side();
  for (std::size_t i = 0; i < a.images.size(); ++i) out.images[i] = a.images[i];
  for (std::size_t i = 0; i < b.images.size(); ++i) out.images[a.size() * px + i] = b.images[i];
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  const std::size_t c_count = spec.classes, k_count = spec.subdomains;
  if (c_count == 0 || k_count == 0 || spec.dims == 0)
    throw std::invalid_argument("gen_synthetic: classes, subdomains, dims must be positive");
  if (spec.n % c_count != 0)
    throw std::invalid_argument("gen_synthetic: n must be divisible by the class count");
  if (spec.n < c_count * k_count * 10)
    throw std::invalid_argument("gen_synthetic: need at least 10 instances per subdomain");
  if (spec.separation < 0.0) throw std::invalid_argument("gen_synthetic: negative separation");

  // one grid cell per (class, subdomain) pair
  std::size_t grid = 1;
  while (grid * grid < c_count * k_count) ++grid;
  const std::size_t cell = spec.dims / grid;
  if (cell < 2)
    throw std::invalid_argument("gen_synthetic: dims too small for " +
                                std::to_string(c_count * k_count) + " blob cells");
  const std::size_t blob = cell - 1;

  const double noise_sigma = 0.05;
  const double base = 0.12;
  const double blob_gain = std::min(0.75, spec.separation * noise_sigma);

  SeededRng rng = SeededRng(spec.seed).derive("synthetic");
  const std::size_t per_class = spec.n / c_count;

  Dataset ds;
  ds.source = "synthetic";
  ds.images = Tensor({spec.n, 1, spec.dims, spec.dims});
  ds.labels.resize(spec.n);
  ds.planted.resize(spec.n);

  std::size_t row = 0;
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      const std::size_t mode = i % k_count;  // balanced up to remainder
      ds.labels[row] = static_cast<int>(c);
      ds.planted[row] = static_cast<int>(mode);
      const std::size_t cell_idx = c * k_count + mode;
      const std::size_t r0 = (cell_idx / grid) * cell;
      const std::size_t c0 = (cell_idx % grid) * cell;
      for (std::size_t y = 0; y < spec.dims; ++y)
        for (std::size_t x = 0; x < spec.dims; ++x) {
          double v = base + noise_sigma * rng.next_normal();
          if (y >= r0 && y < r0 + blob && x >= c0 && x < c0 + blob) v += blob_gain;
          ds.images(row, 0, y, x) = std::clamp(v, 0.0, 1.0);
        }
    }
  }
  return ds;
}

}  // namespace vrcv::data
