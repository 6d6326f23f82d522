#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vrcv/tensor.hpp"

namespace vrcv::data {

/// In-memory dataset: images scaled to [0,1], class ids contiguous from 0.
struct Dataset {
  Tensor images;             // [n, 1, side, side]
  std::vector<int> labels;   // length n
  std::vector<int> planted;  // synthetic subdomain ids (empty otherwise)
  std::string source;

  std::size_t size() const { return labels.size(); }
  std::size_t image_side() const { return images.rank() == 4 ? images.dim(2) : 0; }
  std::size_t num_classes() const;

  Tensor gather_images(std::span<const std::size_t> ids) const;
  std::vector<int> gather_labels(std::span<const std::size_t> ids) const;

  /// FNV-1a over the quantized pixel bytes and label bytes.
  std::uint64_t content_hash() const;
};

/// IDX ingestion: big-endian magic 2051 (0x00000803) for images and 2049
/// (0x00000801) for labels, then extents, then raw bytes. Pixels scale by
/// 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes the dataset back out in the same IDX layout (pixels quantized to
/// bytes).
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& dataset);

/// Row-wise concatenation; the paper-style "combine train and test before
/// splitting" step.
Dataset concat(const Dataset& a, const Dataset& b);

struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t subdomains = 3;  // planted modes per class
  std::size_t dims = 10;       // image side length
  std::size_t n = 3000;
  double separation = 8.0;     // mode signal in units of the pixel noise sigma
  std::uint64_t seed = 0;
};

/// Each class is a `subdomains`-component mixture: one bright blob at a
/// (class, subdomain)-specific grid cell, intensity separation * noise
/// sigma, over a noisy background. separation = 0 makes the subdomains of a
/// class identically distributed. Class counts are exactly n / classes.
Dataset gen_synthetic(const SyntheticSpec& spec);

}  // namespace vrcv::data
