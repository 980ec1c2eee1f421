#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lookalike/error.hpp"

namespace lookalike {

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T(0))
      : shape(std::move(s)), data(element_count(shape), fill) {}

  std::size_t size() const { return data.size(); }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
};

// Insertion-ordered collection of named tensors. The order is the
// serialization order of checkpoints.
template <typename T>
class NamedTensors {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T>& add(std::string name, std::vector<std::size_t> shape, T fill = T(0)) {
    if (find(name) != nullptr) throw Error(ErrorCode::InvalidConfig, "duplicate tensor name " + name);
    entries_.emplace_back(std::move(name), Tensor<T>(std::move(shape), fill));
    return entries_.back().second;
  }

  const Tensor<T>* find(std::string_view name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
    return it == entries_.end() ? nullptr : &it->second;
  }
  Tensor<T>* find(std::string_view name) {
    return const_cast<Tensor<T>*>(static_cast<const NamedTensors&>(*this).find(name));
  }

  const Tensor<T>& at(std::string_view name) const {
    const auto* t = find(name);
    if (t == nullptr) throw Error(ErrorCode::ShapeError, "missing tensor " + std::string(name));
    return *t;
  }
  Tensor<T>& at(std::string_view name) {
    return const_cast<Tensor<T>&>(static_cast<const NamedTensors&>(*this).at(name));
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Same names and shapes, every value set to `fill`.
  NamedTensors like(T fill = T(0)) const {
    NamedTensors out;
    for (const auto& [name, t] : entries_) out.add(name, t.shape, fill);
    return out;
  }

  template <typename U>
  NamedTensors<U> cast() const {
    NamedTensors<U> out;
    for (const auto& [name, t] : entries_) {
      auto& dst = out.add(name, t.shape);
      std::transform(t.data.begin(), t.data.end(), dst.data.begin(), [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace lookalike
