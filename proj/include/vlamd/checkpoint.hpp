#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vlamd/errors.hpp"
#include "vlamd/model.hpp"

namespace vlamd {

inline uint64_t fnv1a(const uint8_t* data, size_t n) {
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <class Real>
constexpr const char* dtype_name() {
  return sizeof(Real) == 4 ? "f32" : "f64";
}

struct CheckpointMeta {
  int64_t step = 0;
  std::string dtype;
  std::map<std::string, std::string> config;
};

namespace ckpt_detail {

struct TensorEntry {
  std::string name;
  std::string dtype;
  int64_t offset = 0;
  int64_t numel = 0;
  Shape shape;
};

struct Parsed {
  CheckpointMeta meta;
  std::vector<TensorEntry> tensors;
  std::vector<uint8_t> blob;
};

inline Parsed parse(const std::string& path, bool want_blob) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  Parsed out;
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw DataError(path + ": truncated checkpoint, expected " + what);
    return line;
  };
  if (next_line("magic") != "vlamd-checkpoint v1")
    throw DataError(path + ": not a vlamd checkpoint");
  int64_t blob_size = -1;
  uint64_t blob_hash = 0;
  int64_t tensor_count = -1;
  while (std::getline(in, line)) {
    if (line == "blob") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "step") ls >> out.meta.step;
    else if (key == "dtype") ls >> out.meta.dtype;
    else if (key == "blob_size") ls >> blob_size;
    else if (key == "blob_hash") ls >> std::hex >> blob_hash >> std::dec;
    else if (key == "config_begin") {
      while (std::getline(in, line) && line != "config_end") {
        auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError(path + ": bad config line '" + line + "'");
        out.meta.config[line.substr(0, eq)] = line.substr(eq + 1);
      }
    } else if (key == "tensors") {
      ls >> tensor_count;
      for (int64_t i = 0; i < tensor_count; ++i) {
        next_line("tensor entry");
        std::istringstream ts(line);
        TensorEntry e;
        int rank = 0;
        ts >> e.name >> e.dtype >> e.offset >> e.numel >> rank;
        for (int r = 0; r < rank; ++r) {
          int64_t d;
          ts >> d;
          e.shape.push_back(d);
        }
        if (!ts) throw DataError(path + ": bad tensor entry '" + line + "'");
        out.tensors.push_back(std::move(e));
      }
    }
  }
  if (blob_size < 0 || tensor_count < 0) throw DataError(path + ": missing checkpoint sections");
  if (!want_blob) return out;
  out.blob.resize(static_cast<size_t>(blob_size));
  in.read(reinterpret_cast<char*>(out.blob.data()), blob_size);
  if (in.gcount() != blob_size) throw DataError(path + ": truncated blob");
  if (fnv1a(out.blob.data(), out.blob.size()) != blob_hash)
    throw DataError(path + ": blob hash mismatch, checkpoint is corrupt");
  return out;
}

}  // namespace ckpt_detail

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  return ckpt_detail::parse(path, false).meta;
}

// Text manifest (step, config snapshot, tensor directory) followed by the
// concatenated little-endian tensor data. Saving the same model twice yields
// byte-identical files.
template <class Real>
void save_checkpoint(const std::string& path, VlamdModel<Real>& model, int64_t step,
                     const std::map<std::string, std::string>& config) {
  auto params = model.parameters();
  std::vector<uint8_t> blob;
  std::ostringstream dir;
  int64_t offset = 0;
  for (auto& p : params) {
    const auto& data = p.t.data();
    size_t bytes = data.size() * sizeof(Real);
    size_t at = blob.size();
    blob.resize(at + bytes);
    std::memcpy(blob.data() + at, data.data(), bytes);
    dir << p.name << ' ' << dtype_name<Real>() << ' ' << offset << ' ' << data.size() << ' '
        << p.t.rank();
    for (int64_t d : p.t.shape()) dir << ' ' << d;
    dir << '\n';
    offset += static_cast<int64_t>(bytes);
  }

  std::ostringstream head;
  head << "vlamd-checkpoint v1\n";
  head << "step " << step << '\n';
  head << "dtype " << dtype_name<Real>() << '\n';
  head << "blob_size " << blob.size() << '\n';
  head << "blob_hash " << std::hex << fnv1a(blob.data(), blob.size()) << std::dec << '\n';
  head << "config_begin\n";
  for (const auto& [k, v] : config) head << k << '=' << v << '\n';
  head << "config_end\n";
  head << "tensors " << params.size() << '\n';
  head << dir.str();
  head << "blob\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  auto text = head.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("short write to " + path);
}

// Loads tensors by name into an already-built model of matching architecture.
template <class Real>
CheckpointMeta load_checkpoint(const std::string& path, VlamdModel<Real>& model) {
  auto parsed = ckpt_detail::parse(path, true);
  if (parsed.meta.dtype != dtype_name<Real>())
    throw DataError(path + ": checkpoint dtype " + parsed.meta.dtype + " does not match model " +
                    dtype_name<Real>());
  auto params = model.parameters();
  std::map<std::string, ckpt_detail::TensorEntry*> index;
  for (auto& e : parsed.tensors) index[e.name] = &e;
  if (index.size() != params.size())
    throw DataError(path + ": checkpoint holds " + std::to_string(index.size()) + " tensors, model has " +
                    std::to_string(params.size()));
  for (auto& p : params) {
    auto it = index.find(p.name);
    if (it == index.end()) throw DataError(path + ": checkpoint is missing tensor " + p.name);
    const auto& e = *it->second;
    if (e.shape != p.t.shape())
      throw DataError(path + ": tensor " + p.name + " has shape " + shape_str(e.shape) +
                      ", model expects " + shape_str(p.t.shape()));
    auto& dst = p.t.mutable_data();
    std::memcpy(dst.data(), parsed.blob.data() + e.offset, dst.size() * sizeof(Real));
  }
  return parsed.meta;
}

}  // namespace vlamd
