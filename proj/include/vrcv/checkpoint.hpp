#pragma once

#include <string>
#include <vector>

#include "vrcv/tensor.hpp"

namespace vrcv::nn {

/// Checkpoint = `<stem>.manifest` + `<stem>.bin`.
/// Manifest lines: `name dtype dim0xdim1x... byte_offset [tag]`, one per
/// tensor, in write order. The blob is the little-endian IEEE-754 f64
/// payload concatenated in manifest order.
struct CheckpointEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::string tag;  // empty, or "bayes" for variational (mu, rho) pairs
};

void save_checkpoint(const std::string& stem, const std::vector<std::string>& names,
                     const std::vector<const Tensor*>& tensors,
                     const std::vector<std::string>& tags = {});

struct LoadedCheckpoint {
  std::vector<CheckpointEntry> entries;
  std::vector<Tensor> tensors;

  const Tensor& at(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& stem);

}  // namespace vrcv::nn
