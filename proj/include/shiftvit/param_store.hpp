#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "shiftvit/tensor.hpp"

namespace shiftvit {

/// Named learnable arrays in registration order. Names are unique.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  std::size_t add(std::string name, Tensor<T> value) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value)});
    return entries_.size() - 1;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor<T>& get(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor<T>& get(const std::string& name) const { return entries_[index_of(name)].value; }

  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Total scalar count over every array.
  std::size_t numel() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.value.numel();
    return total;
  }

  /// Scalar count over arrays whose name starts with `prefix`.
  std::size_t numel_with_prefix(const std::string& prefix) const {
    std::size_t total = 0;
    for (const auto& e : entries_)
      if (e.name.compare(0, prefix.size(), prefix) == 0) total += e.value.numel();
    return total;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace shiftvit
