#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "transzero/tensor.hpp"

namespace tz {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
};

// Named parameter tensors in registration order. Storage is reserved up front
// so references handed to a Tape stay valid while the set is alive.
template <typename Scalar>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) : params_(other.params_) {}
  ParameterSet& operator=(const ParameterSet& other) {
    if (this != &other) {
      if (!same_layout(other)) {
        throw DimensionError("cannot assign parameter sets with different layouts");
      }
      for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
    }
    return *this;
  }

  std::size_t add(std::string name, Tensor<Scalar> value) {
    for (const auto& p : params_) {
      if (p.name == name) throw UsageError("duplicate parameter name " + name);
    }
    params_.push_back({std::move(name), std::move(value)});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Parameter<Scalar>* find(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  bool same_layout(const ParameterSet& other) const {
    if (other.params_.size() != params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != other.params_[i].name || params_[i].value.rows() != other.params_[i].value.rows() ||
          params_[i].value.cols() != other.params_[i].value.cols()) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Parameter<Scalar>> params_;
};

}  // namespace tz
