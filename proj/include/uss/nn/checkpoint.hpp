#pragma once

// Checkpoint archive: a one-line magic, a JSON text header listing
// {name, dtype, shape, offset, bytes} per tensor plus free-form metadata,
// a NUL separator, then raw little-endian blobs. Round-trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "uss/autograd/graph.hpp"
#include "uss/core/error.hpp"
#include "uss/core/tensor.hpp"

namespace uss::nn {

inline constexpr const char* kArchiveMagic = "USSARC1";

namespace detail {
template <typename T>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
  return "f32";
}
template <>
inline const char* dtype_name<double>() {
  return "f64";
}
}  // namespace detail

class ArchiveWriter {
public:
  template <typename T>
  void add(const std::string& name, const Tensor<T>& t) {
    check(!index_.count(name), "archive: duplicate tensor '" + name + "'");
    nlohmann::json e;
    e["name"] = name;
    e["dtype"] = detail::dtype_name<T>();
    e["shape"] = t.shape();
    e["offset"] = blobs_.size();
    const size_t bytes = sizeof(T) * static_cast<size_t>(t.size());
    e["bytes"] = bytes;
    entries_.push_back(e);
    index_[name] = entries_.size() - 1;
    const char* raw = reinterpret_cast<const char*>(t.data());
    blobs_.insert(blobs_.end(), raw, raw + bytes);
  }

  void set_meta(nlohmann::json meta) { meta_ = std::move(meta); }

  void save(const std::string& path) const {
    nlohmann::json header;
    header["meta"] = meta_;
    header["tensors"] = entries_;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check(f.good(), "archive: cannot open '" + path + "' for writing");
    f << kArchiveMagic << "\n" << header.dump() << '\0';
    f.write(blobs_.data(), static_cast<std::streamsize>(blobs_.size()));
    check(f.good(), "archive: write failed for '" + path + "'");
  }

private:
  nlohmann::json meta_;
  std::vector<nlohmann::json> entries_;
  std::map<std::string, size_t> index_;
  std::vector<char> blobs_;
};

class Archive {
public:
  struct Entry {
    std::string name, dtype;
    Shape shape;
    uint64_t offset = 0, bytes = 0;
  };

  static Archive load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "archive: cannot open '" + path + "'");
    std::string magic;
    std::getline(f, magic);
    check(magic == kArchiveMagic,
          "archive: '" + path + "' has bad magic (corrupt or wrong format)");
    std::string header_text;
    std::getline(f, header_text, '\0');
    check(f.good(), "archive: truncated header in '" + path + "'");
    Archive a;
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(header_text);
      a.meta_ = header.value("meta", nlohmann::json::object());
      for (const auto& e : header.at("tensors")) {
        Entry entry;
        entry.name = e.at("name").get<std::string>();
        entry.dtype = e.at("dtype").get<std::string>();
        entry.shape = e.at("shape").get<Shape>();
        entry.offset = e.at("offset").get<uint64_t>();
        entry.bytes = e.at("bytes").get<uint64_t>();
        a.index_[entry.name] = a.entries_.size();
        a.entries_.push_back(std::move(entry));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("archive: malformed header in '" + path + "': " + e.what());
    }
    const auto data_start = f.tellg();
    f.seekg(0, std::ios::end);
    const uint64_t data_bytes = static_cast<uint64_t>(f.tellg() - data_start);
    for (const auto& e : a.entries_)
      check(e.offset + e.bytes <= data_bytes,
            "archive: blob '" + e.name + "' extends past end of '" + path + "'");
    f.seekg(data_start);
    a.blobs_.resize(data_bytes);
    f.read(a.blobs_.data(), static_cast<std::streamsize>(data_bytes));
    check(f.good() || f.eof(), "archive: read failed for '" + path + "'");
    return a;
  }

  const nlohmann::json& meta() const { return meta_; }
  const std::vector<Entry>& entries() const { return entries_; }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "archive: missing tensor '" + name + "'");
    const Entry& e = entries_[it->second];
    check(e.dtype == detail::dtype_name<T>(),
          "archive: tensor '" + name + "' has dtype " + e.dtype);
    const int64_t n = shape_numel(e.shape);
    check(e.bytes == sizeof(T) * static_cast<uint64_t>(n),
          "archive: byte count mismatch for '" + name + "'");
    Tensor<T> t(e.shape);
    std::memcpy(t.data(), blobs_.data() + e.offset, e.bytes);
    return t;
  }

private:
  nlohmann::json meta_;
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
  std::vector<char> blobs_;
};

// Convenience: snapshot a parameter set under a key prefix.
template <typename T>
void add_parameters(ArchiveWriter& w, const std::string& prefix,
                    const std::vector<ag::Parameter<T>*>& params) {
  for (const auto* p : params) w.add(prefix + p->name, p->value);
}

template <typename T>
void load_parameters(const Archive& a, const std::string& prefix,
                     const std::vector<ag::Parameter<T>*>& params) {
  for (ag::Parameter<T>* p : params) {
    Tensor<T> t = a.get<T>(prefix + p->name);
    check(t.shape() == p->value.shape(),
          "archive: shape mismatch for '" + p->name + "': stored " +
              shape_str(t.shape()) + ", expected " + shape_str(p->value.shape()));
    p->value = std::move(t);
  }
}

}  // namespace uss::nn
