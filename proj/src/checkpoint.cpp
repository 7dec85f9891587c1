#include "efoent/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

#include "efoent/errors.hpp"

namespace efoent {

namespace {

constexpr char kMagic[8] = {'E', 'F', 'O', 'T', 'N', 'S', 'R', '1'};
constexpr uint32_t kVersion = 1;

template <class S>
const char* dtype_name();
template <>
const char* dtype_name<float>() {
  return "f32";
}
template <>
const char* dtype_name<double>() {
  return "f64";
}

}  // namespace

template <class S>
void TensorFile::put(const std::string& name, const Tensor<S>& t) {
  Entry e;
  e.dtype = dtype_name<S>();
  e.shape = t.shape;
  e.raw.resize(size_t(t.numel()) * sizeof(S));
  std::memcpy(e.raw.data(), t.ptr(), e.raw.size());
  entries_[name] = std::move(e);
}

template <class S>
Tensor<S> TensorFile::get(const std::string& name) const {
  const Entry& e = entry(name);
  Tensor<S> t(e.shape);
  if (e.dtype == dtype_name<S>()) {
    std::memcpy(t.ptr(), e.raw.data(), e.raw.size());
  } else if (e.dtype == "f32") {
    const float* src = reinterpret_cast<const float*>(e.raw.data());
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = S(src[i]);
  } else if (e.dtype == "f64") {
    const double* src = reinterpret_cast<const double*>(e.raw.data());
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = S(src[i]);
  } else {
    throw DataError("tensor '" + name + "' has unsupported dtype " + e.dtype);
  }
  return t;
}

const TensorFile::Entry& TensorFile::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DataError("checkpoint has no tensor named '" + name + "'");
  return it->second;
}

const std::vector<int>& TensorFile::shape(const std::string& name) const {
  return entry(name).shape;
}

const std::string& TensorFile::dtype(const std::string& name) const {
  return entry(name).dtype;
}

std::vector<std::string> TensorFile::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void TensorFile::set_meta_list(const std::string& key, const std::vector<std::string>& values) {
  meta_lists_[key] = values;
}

std::string TensorFile::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw DataError("checkpoint has no meta entry '" + key + "'");
  return it->second;
}

std::vector<std::string> TensorFile::meta_list(const std::string& key) const {
  auto it = meta_lists_.find(key);
  if (it == meta_lists_.end()) throw DataError("checkpoint has no meta list '" + key + "'");
  return it->second;
}

void TensorFile::save(const std::string& path) const {
  nlohmann::json header;
  header["meta"] = meta_;
  header["meta_lists"] = meta_lists_;
  nlohmann::json tensors = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    nlohmann::json t;
    t["name"] = name;
    t["dtype"] = e.dtype;
    t["shape"] = e.shape;
    t["offset"] = offset;
    t["bytes"] = e.raw.size();
    tensors.push_back(std::move(t));
    offset += e.raw.size();
  }
  header["tensors"] = std::move(tensors);
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  uint32_t ver = kVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  uint64_t hlen = head.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(head.data(), std::streamsize(head.size()));
  for (const auto& [name, e] : entries_) {
    out.write(e.raw.data(), std::streamsize(e.raw.size()));
  }
  if (!out) throw DataError("failed writing checkpoint to '" + path + "'");
}

TensorFile TensorFile::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("'" + path + "' is not a tensor checkpoint (bad magic)");
  }
  uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (!in || ver != kVersion) {
    throw DataError("checkpoint '" + path + "' has unsupported format version " +
                    std::to_string(ver));
  }
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw DataError("checkpoint '" + path + "' is truncated");
  std::string head(hlen, '\0');
  in.read(head.data(), std::streamsize(hlen));
  if (!in) throw DataError("checkpoint '" + path + "' is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path + "' has a corrupt header: " + e.what());
  }

  TensorFile file;
  if (header.contains("meta")) {
    for (auto& [k, v] : header["meta"].items()) file.meta_[k] = v.get<std::string>();
  }
  if (header.contains("meta_lists")) {
    for (auto& [k, v] : header["meta_lists"].items())
      file.meta_lists_[k] = v.get<std::vector<std::string>>();
  }
  for (const auto& t : header["tensors"]) {
    Entry e;
    e.dtype = t["dtype"].get<std::string>();
    e.shape = t["shape"].get<std::vector<int>>();
    const uint64_t bytes = t["bytes"].get<uint64_t>();
    const std::string name = t["name"].get<std::string>();
    uint64_t numel = e.shape.empty() ? 0 : 1;
    for (int d : e.shape) {
      if (d < 0) throw DataError("checkpoint tensor '" + name + "' has a negative dimension");
      numel *= uint64_t(d);
    }
    const uint64_t want = numel * (e.dtype == "f64" ? 8 : 4);
    if (e.dtype != "f32" && e.dtype != "f64") {
      throw DataError("checkpoint tensor '" + name + "' has unsupported dtype " + e.dtype);
    }
    if (bytes != want) {
      throw DataError("checkpoint tensor '" + name + "' payload size " + std::to_string(bytes) +
                      " does not match shape " + shape_str(e.shape));
    }
    e.raw.resize(bytes);
    // Entries were written in the same (sorted) order they appear here.
    in.read(e.raw.data(), std::streamsize(bytes));
    if (!in) throw DataError("checkpoint '" + path + "' is truncated in tensor '" + name + "'");
    file.entries_[name] = std::move(e);
  }
  return file;
}

template void TensorFile::put<float>(const std::string&, const Tensor<float>&);
template void TensorFile::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> TensorFile::get<float>(const std::string&) const;
template Tensor<double> TensorFile::get<double>(const std::string&) const;

}  // namespace efoent
