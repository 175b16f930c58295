#pragma once

#include "bapt/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace bapt {

/// Owns every trainable tensor of a model under a unique name.
/// Addresses are stable for the store's lifetime, so layers hold raw pointers.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  /// Registers a zero-filled trainable tensor. Names must be unique.
  Tensor& add(const std::string& name, Shape shape);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Tensor& at(std::size_t i) { return *entries_[i].tensor; }
  const Tensor& at(std::size_t i) const { return *entries_[i].tensor; }

  std::size_t total_values() const;
  void zero_grad();

 private:
  struct Entry {
    std::string name;
    std::unique_ptr<Tensor> tensor;
  };
  std::vector<Entry> entries_;
};

}  // namespace bapt
