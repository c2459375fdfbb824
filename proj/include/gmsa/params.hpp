#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "gmsa/tensor.hpp"

namespace gmsa {

// Named parameter tensors in registration order. Trainability lives on the
// tensor itself (requires_grad); the store is the unit of checkpointing,
// freezing masks, and gradient checks.
class ParameterStore {
 public:
  struct Item {
    std::string name;
    Tensor tensor;
  };

  void add(const std::string& name, const Tensor& t) {
    if (index_.count(name)) {
      throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
    }
    index_[name] = items_.size();
    items_.push_back({name, t});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::out_of_range("ParameterStore: unknown parameter '" + name + "'");
    }
    return items_[it->second].tensor;
  }

  const std::vector<Item>& items() const { return items_; }
  std::vector<Item>& items() { return items_; }
  size_t size() const { return items_.size(); }

  void zero_grads() {
    for (auto& it : items_) it.tensor.zero_grad();
  }

  void set_all_trainable(bool v) {
    for (auto& it : items_) it.tensor.set_requires_grad(v);
  }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace gmsa
