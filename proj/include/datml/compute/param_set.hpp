#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "datml/compute/random.hpp"
#include "datml/compute/tensor.hpp"

namespace datml::inline DATML_ABI {

/// Named trainable tensors in insertion order. Copying a ParamSet aliases the
/// tensors; clone() produces independent storage.
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  /// Registers a leaf. The tensor is marked requires_grad.
  Tensor& add(const std::string& name, Tensor value);
  /// Registers a [rows, cols] (or [rows] when cols == 0) tensor with
  /// uniform(-scale, scale) entries.
  Tensor& add_uniform(const std::string& name, Shape shape, double scale, Rng& rng);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& operator[](const std::string& name) const { return get(name); }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t element_count() const;
  std::vector<std::string> names() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  ParamSet clone() const;
  /// Same names in the same order with matching shapes.
  bool shape_compatible(const ParamSet& other) const;
  /// Throws ContractViolation naming the first offending parameter.
  void require_shape_compatible(const ParamSet& other) const;
  /// Overwrites values with `other`'s (shape-compatible) values.
  void assign_values(const ParamSet& other);
  bool values_equal(const ParamSet& other) const;

  void zero_grad();
  void clear_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace datml::inline DATML_ABI
