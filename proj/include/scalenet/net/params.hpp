#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "scalenet/core/tensor.hpp"
#include "scalenet/net/tape.hpp"

namespace scalenet::net {

/// Named trainable tensors with parallel gradient storage. Registration
/// order is stable and defines the checkpoint layout.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> init) {
    if (values_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    names_.push_back(name);
    grads_[name] = Tensor<T>::zeros(init.shape);
    return values_[name] = std::move(init);
  }

  bool has(const std::string& name) const { return values_.count(name) != 0; }

  Tensor<T>& value(const std::string& name) { return lookup(values_, name); }
  const Tensor<T>& value(const std::string& name) const { return lookup(values_, name); }
  Tensor<T>& grad(const std::string& name) { return lookup(grads_, name); }

  const std::vector<std::string>& names() const { return names_; }

  void zero_grads() {
    for (auto& [k, g] : grads_) g.fill(T(0));
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& [k, v] : values_) n += v.size();
    return n;
  }

 private:
  template <typename M>
  static auto& lookup(M& map, const std::string& name) {
    auto it = map.find(name);
    if (it == map.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor<T>> values_;
  std::unordered_map<std::string, Tensor<T>> grads_;
};

/// Lazily binds store parameters as leaves of one tape, at most once each,
/// so that shared use inside a graph accumulates gradients correctly.
template <typename T>
class TapeBinding {
 public:
  TapeBinding(Tape<T>& tape, ParamStore<T>& store) : tape_(tape), store_(store) {}

  typename Tape<T>::Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    auto v = tape_.param(store_.value(name), &store_.grad(name));
    bound_.emplace(name, v);
    return v;
  }

 private:
  Tape<T>& tape_;
  ParamStore<T>& store_;
  std::unordered_map<std::string, typename Tape<T>::Var> bound_;
};

}  // namespace scalenet::net
