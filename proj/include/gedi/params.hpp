#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gedi/rng.hpp"
#include "gedi/tensor.hpp"

namespace gedi {

/// Ordered collection of named parameter matrices.
class ParamSet {
 public:
  void add(std::string name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  Matrix& operator[](const std::string& name) { return values_[index_of(name)]; }
  const Matrix& at(const std::string& name) const { return values_[index_of(name)]; }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }
  const Matrix& value(std::size_t i) const { return values_[i]; }
  const std::vector<Matrix>& values() const { return values_; }
  std::vector<Matrix>& values() { return values_; }
  Index total_size() const;

  bool operator==(const ParamSet& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape; those accepted by `trainable` become variables,
/// the rest constants.
class BoundParams {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  BoundParams(Tape& tape, const ParamSet& params, const Predicate& trainable = nullptr);
  /// Wraps tensors already on a tape, one per parameter in ParamSet order.
  BoundParams(const ParamSet& params, std::span<const Tensor> tensors);

  const Tensor& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return params_->contains(name); }
  Tape& tape() const { return *tape_; }

  /// Gradient per parameter, in ParamSet order (zeros for constants).
  std::vector<Matrix> grads() const;

 private:
  Tape* tape_;
  const ParamSet* params_;
  std::vector<Tensor> tensors_;
};

/// Glorot-uniform matrix.
Matrix glorot(Index fan_in, Index fan_out, Rng& rng);

}  // namespace gedi
