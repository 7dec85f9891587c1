#pragma once

#include <map>
#include <string>
#include <vector>

#include "efoent/tensor.hpp"

namespace efoent {

// Versioned binary container of named tensors. Layout: 8-byte magic,
// uint32 format version, uint64 JSON header length, header, then the raw
// little-endian tensor payloads the header points into. The header carries
// per-tensor name/dtype/shape/offset plus a free-form "meta" object used for
// things like the frozen-embedding symbol manifest.
class TensorFile {
 public:
  // Stores a copy under `name` with dtype "f32" or "f64" per S.
  template <class S>
  void put(const std::string& name, const Tensor<S>& t);

  // Loads a tensor, converting between f32 and f64 when needed.
  template <class S>
  Tensor<S> get(const std::string& name) const;

  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  const std::vector<int>& shape(const std::string& name) const;
  const std::string& dtype(const std::string& name) const;
  std::vector<std::string> names() const;

  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
  void set_meta_list(const std::string& key, const std::vector<std::string>& values);
  std::string meta(const std::string& key) const;
  std::vector<std::string> meta_list(const std::string& key) const;
  bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }

  void save(const std::string& path) const;
  static TensorFile load(const std::string& path);

 private:
  struct Entry {
    std::string dtype;        // "f32" or "f64"
    std::vector<int> shape;
    std::vector<char> raw;    // little-endian payload
  };
  const Entry& entry(const std::string& name) const;

  std::map<std::string, Entry> entries_;
  std::map<std::string, std::vector<std::string>> meta_lists_;
  std::map<std::string, std::string> meta_;
};

}  // namespace efoent
