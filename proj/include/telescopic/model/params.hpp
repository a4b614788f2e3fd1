#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "telescopic/core/rng.hpp"
#include "telescopic/core/serialize.hpp"
#include "telescopic/core/tensor.hpp"

namespace telescopic {

// Insertion-ordered collection of named parameter tensors.
class ParamSet {
 public:
  // Registers a parameter (tracked by default) and returns a handle to it.
  Tensor add(const std::string& name, Tensor value, bool trainable = true);
  // Saved and restored with the parameters but never trainable (running statistics).
  Tensor add_buffer(const std::string& name, Tensor value);
  bool is_buffer(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  const std::vector<io::NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> trainable() const;
  std::size_t scalar_count() const;
  std::size_t trainable_scalar_count() const;

  // Buffers are left untracked.
  void set_trainable(bool on);
  void zero_grad();
  // Copies values (not handles) from `source`; names and shapes must match.
  void load_values(const std::vector<io::NamedTensor>& source, const std::string& context);
  // Deep copy of the current values.
  std::vector<io::NamedTensor> snapshot() const;

 private:
  std::vector<io::NamedTensor> entries_;
  std::map<std::string, std::size_t> index_;
  std::vector<bool> buffer_;
};

Tensor normal_init(const Shape& shape, Real stddev, RngStream& rng);

}  // namespace telescopic
