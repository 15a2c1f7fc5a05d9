#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tdcmn/autodiff.hpp"
#include "tdcmn/error.hpp"
#include "tdcmn/tensor.hpp"

namespace tdcmn {

using Rng = std::mt19937_64;

/// Ordered collection of named learnable tensors. Insertion order is the
/// canonical order used by optimizers and checkpoints.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  std::size_t add(std::string name, Tensor value) {
    if (index_.count(name)) {
      throw ConfigError("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value)});
    return entries_.size() - 1;
  }

  /// Uniform in +-1/sqrt(fan_in).
  std::size_t add_uniform(std::string name, Shape shape, std::size_t fan_in,
                          Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = dist(rng);
    return add(std::move(name), std::move(t));
  }

  std::size_t size() const { return entries_.size(); }
  const Entry& operator[](std::size_t i) const { return entries_.at(i); }
  Entry& operator[](std::size_t i) { return entries_.at(i); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw CheckpointError("missing parameter '" + name + "'");
    }
    return it->second;
  }

  Tensor& value(const std::string& name) { return entries_[index(name)].value; }
  const Tensor& value(const std::string& name) const {
    return entries_[index(name)].value;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::deque<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters of a store placed on a tape, indexed like the store.
struct BoundParameters {
  std::vector<Var> vars;

  Var operator[](std::size_t i) const { return vars.at(i); }
  std::size_t size() const { return vars.size(); }
};

/// Leaves reference the store's tensors; the store must outlive the tape.
inline BoundParameters bind(Tape& tape, const ParameterStore& store,
                            bool trainable) {
  BoundParameters out;
  out.vars.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    out.vars.push_back(tape.watch(store[i].value, trainable));
  }
  return out;
}

}  // namespace tdcmn
