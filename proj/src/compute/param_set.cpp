#include "datml/compute/param_set.hpp"

#include <algorithm>
#include <cstring>

#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

Tensor& ParamSet::add(const std::string& name, Tensor value) {
  if (name.empty()) throw ContractViolation("parameter name must not be empty");
  if (contains(name)) throw ContractViolation("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor& ParamSet::add_uniform(const std::string& name, Shape shape, double scale, Rng& rng) {
  std::vector<Scalar> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * scale);
  return add(name, Tensor::from(std::move(shape), std::move(values)));
}

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParamSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) out.add(name, t.clone());
  return out;
}

bool ParamSet::shape_compatible(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
  }
  return true;
}

void ParamSet::require_shape_compatible(const ParamSet& other) const {
  for (std::size_t i = 0; i < std::max(size(), other.size()); ++i) {
    if (i >= size()) throw ContractViolation("parameter '" + other.entries_[i].first + "' missing on the left");
    if (i >= other.size()) throw ContractViolation("parameter '" + entries_[i].first + "' missing on the right");
    const auto& [name, t] = entries_[i];
    const auto& [oname, ot] = other.entries_[i];
    if (name != oname) throw ContractViolation("parameter '" + name + "' does not match '" + oname + "'");
    if (t.shape() != ot.shape()) {
      throw ContractViolation("parameter '" + name + "' shape " + shape_string(t.shape()) + " vs " +
                              shape_string(ot.shape()));
    }
  }
}

void ParamSet::assign_values(const ParamSet& other) {
  require_shape_compatible(other);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].second.mutable_data();
    auto src = other.entries_[i].second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

bool ParamSet::values_equal(const ParamSet& other) const {
  if (!shape_compatible(other)) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto a = entries_[i].second.data();
    auto b = other.entries_[i].second.data();
    if (std::memcmp(a.data(), b.data(), a.size_bytes()) != 0) return false;
  }
  return true;
}

void ParamSet::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamSet::clear_grad() {
  for (auto& [_, t] : entries_) t.clear_grad();
}

}  // namespace datml::inline DATML_ABI
