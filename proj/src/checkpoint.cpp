#include "vrcv/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vrcv::nn {

namespace {

void put_le_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_le_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated blob");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string shape_field(const std::vector<std::size_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s.empty() ? "1" : s;
}

std::vector<std::size_t> parse_shape_field(const std::string& field) {
  std::vector<std::size_t> shape;
  std::size_t pos = 0;
  while (pos < field.size()) {
    std::size_t next = field.find('x', pos);
    if (next == std::string::npos) next = field.size();
    shape.push_back(static_cast<std::size_t>(std::stoull(field.substr(pos, next - pos))));
    pos = next + 1;
  }
  return shape;
}

}  // namespace

void save_checkpoint(const std::string& stem, const std::vector<std::string>& names,
                     const std::vector<const Tensor*>& tensors,
                     const std::vector<std::string>& tags) {
  if (names.size() != tensors.size())
    throw std::invalid_argument("save_checkpoint: names/tensors length mismatch");
  if (!tags.empty() && tags.size() != names.size())
    throw std::invalid_argument("save_checkpoint: tags length mismatch");

  std::ofstream manifest(stem + ".manifest");
  std::ofstream blob(stem + ".bin", std::ios::binary);
  if (!manifest || !blob)
    throw std::runtime_error("save_checkpoint: cannot open output files at " + stem);

  std::size_t offset = 0;
  for (std::size_t k = 0; k < names.size(); ++k) {
    manifest << names[k] << " f64 " << shape_field(tensors[k]->shape()) << " " << offset;
    if (!tags.empty() && !tags[k].empty()) manifest << " " << tags[k];
    manifest << "\n";
    for (double v : tensors[k]->data()) put_le_f64(blob, v);
    offset += tensors[k]->size() * 8;
  }
  if (!manifest.good() || !blob.good())
    throw std::runtime_error("save_checkpoint: write failed at " + stem);
}

const Tensor& LoadedCheckpoint::at(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return tensors[i];
  throw std::invalid_argument("checkpoint: no tensor named " + name);
}

LoadedCheckpoint load_checkpoint(const std::string& stem) {
  std::ifstream manifest(stem + ".manifest");
  std::ifstream blob(stem + ".bin", std::ios::binary);
  if (!manifest) throw std::runtime_error("load_checkpoint: missing " + stem + ".manifest");
  if (!blob) throw std::runtime_error("load_checkpoint: missing " + stem + ".bin");

  LoadedCheckpoint ck;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    CheckpointEntry e;
    std::string dtype, shape_f;
    ss >> e.name >> dtype >> shape_f >> e.offset;
    ss >> e.tag;  // optional
    if (e.name.empty() || dtype != "f64")
      throw std::runtime_error("load_checkpoint: bad manifest line '" + line + "'");
    e.shape = parse_shape_field(shape_f);
    ck.entries.push_back(e);
  }
  for (const auto& e : ck.entries) {
    blob.seekg(static_cast<std::streamoff>(e.offset));
    Tensor t(e.shape);
    for (double& v : t.data()) v = get_le_f64(blob);
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

}  // namespace vrcv::nn
