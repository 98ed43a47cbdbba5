#pragma once

#include <deque>
#include <stdexcept>
#include <string>

#include "basilisk/numerics/tape.hpp"

namespace basilisk {

/// Owns named parameters with stable addresses.
template <class S>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<S>& add(std::string name, Tensor<S> value, bool decay = true) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back(Parameter<S>{std::move(name), std::move(value), {}, decay});
    return params_.back();
  }

  Parameter<S>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter<S>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  Parameter<S>& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("unknown parameter: " + name);
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter<S>> params_;
};

}  // namespace basilisk
