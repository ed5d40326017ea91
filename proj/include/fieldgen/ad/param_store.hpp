#pragma once

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fieldgen/ad/tensor.hpp"

namespace fieldgen::ad {

// Named parameter registry. Entry order is registration order and is part of
// the serialized layout, so it must be deterministic.
template <class T>
struct ParamStore {
  std::vector<std::pair<std::string, Tensor<T>>> entries;

  void add(const std::string& name, const Tensor<T>& t) {
    for (const auto& e : entries)
      if (e.first == name)
        throw std::logic_error("ParamStore: duplicate name " + name);
    entries.emplace_back(name, t);
  }

  Tensor<T>* find(const std::string& name) {
    for (auto& e : entries)
      if (e.first == name) return &e.second;
    return nullptr;
  }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries)
      if (e.second.requires_grad()) out.push_back(e.second);
    return out;
  }

  std::vector<Tensor<T>> all() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries) out.push_back(e.second);
    return out;
  }

  // Hash over names and raw value bytes; used by the freeze contract.
  std::uint64_t value_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : entries) {
      h = fnv1a64(e.first, h);
      h = fnv1a64(e.second.value().data(),
                  sizeof(T) * static_cast<std::size_t>(e.second.numel()), h);
    }
    return h;
  }
};

namespace detail {

template <class V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw io_error("checkpoint: unexpected end of stream");
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kParamMagic = 0x31504746;  // "FGP1"

// Layout: magic/version, dtype width, count, then per parameter:
// name length, name bytes, rank, dims, raw little-endian values.
template <class T>
void save_params(const ParamStore<T>& store, std::ostream& os) {
  detail::write_pod(os, kParamMagic);
  detail::write_pod(os, static_cast<std::uint8_t>(sizeof(T)));
  detail::write_pod(os, static_cast<std::uint64_t>(store.entries.size()));
  for (const auto& [name, t] : store.entries) {
    detail::write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(os, static_cast<std::uint32_t>(t.rank()));
    for (long d : t.shape())
      detail::write_pod(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.value().data()),
             static_cast<std::streamsize>(sizeof(T) * t.numel()));
  }
  if (!os) throw io_error("checkpoint: write failed");
}

// Loads values by name into the existing store; every stored name must be
// registered with a matching shape.
template <class T>
void load_params(ParamStore<T>& store, std::istream& is) {
  if (detail::read_pod<std::uint32_t>(is) != kParamMagic)
    throw io_error("checkpoint: bad magic/version tag");
  if (detail::read_pod<std::uint8_t>(is) != sizeof(T))
    throw io_error("checkpoint: scalar width mismatch");
  const auto count = detail::read_pod<std::uint64_t>(is);
  if (count != store.entries.size())
    throw io_error("checkpoint: holds " + std::to_string(count) +
                   " params, expected " +
                   std::to_string(store.entries.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = detail::read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape)
      d = static_cast<long>(detail::read_pod<std::uint64_t>(is));
    Tensor<T>* t = store.find(name);
    if (!t) throw io_error("checkpoint: unknown parameter " + name);
    if (t->shape() != shape)
      throw io_error("checkpoint: shape mismatch for " + name + ": stored " +
                     shape_str(shape) + " vs model " + shape_str(t->shape()));
    is.read(reinterpret_cast<char*>(t->mutable_value().data()),
            static_cast<std::streamsize>(sizeof(T) * t->numel()));
    if (!is) throw io_error("checkpoint: truncated values for " + name);
  }
}

template <class T>
void save_params_file(const ParamStore<T>& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for write: " + path);
  save_params(store, os);
}

template <class T>
void load_params_file(ParamStore<T>& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open for read: " + path);
  load_params(store, is);
}

}  // namespace fieldgen::ad
