#include "telescopic/model/params.hpp"

#include <algorithm>

#include "telescopic/core/errors.hpp"

namespace telescopic {

Tensor ParamSet::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(trainable);
  index_[name] = entries_.size();
  entries_.push_back({name, value});
  buffer_.push_back(false);
  return value;
}

Tensor ParamSet::add_buffer(const std::string& name, Tensor value) {
  Tensor t = add(name, std::move(value), false);
  buffer_.back() = true;
  return t;
}

bool ParamSet::is_buffer(const std::string& name) const {
  auto it = index_.find(name);
  return it != index_.end() && buffer_[it->second];
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

std::vector<Tensor> ParamSet::trainable() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_)
    if (e.tensor.requires_grad()) out.push_back(e.tensor);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

std::size_t ParamSet::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.tensor.requires_grad()) n += e.tensor.numel();
  return n;
}

void ParamSet::set_trainable(bool on) {
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].tensor.set_requires_grad(on && !buffer_[i]);
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamSet::load_values(const std::vector<io::NamedTensor>& source, const std::string& context) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.tensor;
  for (auto& e : entries_) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw CorruptionError(context + ": missing parameter '" + e.name + "'");
    if (it->second->shape() != e.tensor.shape())
      throw CorruptionError(context + ": parameter '" + e.name + "' has shape " + shape_str(it->second->shape()) +
                            ", expected " + shape_str(e.tensor.shape()));
    auto dst = e.tensor.mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
  }
}

std::vector<io::NamedTensor> ParamSet::snapshot() const {
  std::vector<io::NamedTensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back({e.name, e.tensor.detach()});
  return out;
}

Tensor normal_init(const Shape& shape, Real stddev, RngStream& rng) {
  Tensor t(shape);
  for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace telescopic
