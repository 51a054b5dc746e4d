#include "gedi/params.hpp"

#include <cmath>
#include <string>

#include "gedi/errors.hpp"

namespace gedi {

void ParamSet::add(std::string name, Matrix value) {
  if (contains(name)) throw UsageError("duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

std::size_t ParamSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

Index ParamSet::total_size() const {
  Index n = 0;
  for (const Matrix& m : values_) n += m.size();
  return n;
}

BoundParams::BoundParams(Tape& tape, const ParamSet& params, const Predicate& trainable)
    : tape_(&tape), params_(&params) {
  tensors_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool var = !trainable || trainable(params.name(i));
    tensors_.push_back(var ? tape.variable(params.value(i)) : tape.constant(params.value(i)));
  }
}

BoundParams::BoundParams(const ParamSet& params, std::span<const Tensor> tensors)
    : tape_(nullptr), params_(&params), tensors_(tensors.begin(), tensors.end()) {
  if (tensors_.size() != params.size())
    throw DimensionError("BoundParams: " + std::to_string(tensors_.size()) + " tensors for " +
                         std::to_string(params.size()) + " parameters");
  if (tensors_.empty()) throw UsageError("BoundParams: no tensors");
  tape_ = tensors_.front().tape();
}

const Tensor& BoundParams::operator[](const std::string& name) const {
  return tensors_[params_->index_of(name)];
}

std::vector<Matrix> BoundParams::grads() const {
  std::vector<Matrix> out;
  out.reserve(tensors_.size());
  for (const Tensor& t : tensors_) out.push_back(t.grad());
  return out;
}

Matrix glorot(Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace gedi
