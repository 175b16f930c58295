#include "bapt/parameters.hpp"

#include <stdexcept>

namespace bapt {

Tensor& ParameterStore::add(const std::string& name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  auto t = std::make_unique<Tensor>(std::move(shape));
  t->requires_grad = true;
  t->zero_grad();
  entries_.push_back({name, std::move(t)});
  return *entries_.back().tensor;
}

Tensor& ParameterStore::get(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return *e.tensor;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

const Tensor& ParameterStore::get(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor->numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor->zero_grad();
}

}  // namespace bapt
