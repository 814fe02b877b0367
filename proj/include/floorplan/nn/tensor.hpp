#pragma once

#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "floorplan/errors.hpp"

namespace floorplan::nn {

// One sample's C x H x W activation, row-major within each plane.
template <typename T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  T* channel(int k) { return data.data() + k * plane(); }
  const T* channel(int k) const { return data.data() + k * plane(); }
  T& at(int k, int r, int c) { return data[k * plane() + static_cast<std::size_t>(r) * width + c]; }
  T at(int k, int r, int c) const {
    return data[k * plane() + static_cast<std::size_t>(r) * width + c];
  }

  bool operator==(const FeatureMap&) const = default;
};

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }
  int fan_in() const {
    int f = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) f *= shape[i];
    return shape.size() == 2 ? shape[0] : f;  // linear weights are stored in x out
  }
  bool operator==(const Tensor&) const = default;
};

// Ordered collection of named tensors. Order is registration order and is
// the serialization order.
template <typename T>
class TensorSet {
 public:
  Tensor<T>& add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw ConfigError("duplicate tensor name " + name);
    index_[name] = tensors_.size();
    Tensor<T> t{name, std::move(shape), {}};
    t.data.assign(t.numel(), T{});
    tensors_.push_back(std::move(t));
    return tensors_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& operator[](const std::string& name) { return tensors_[lookup(name)]; }
  const Tensor<T>& operator[](const std::string& name) const { return tensors_[lookup(name)]; }
  std::vector<Tensor<T>>& all() { return tensors_; }
  const std::vector<Tensor<T>>& all() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.data.size();
    return n;
  }

  // Same names and shapes, zero-filled.
  TensorSet zeros_like() const {
    TensorSet out;
    for (const auto& t : tensors_) out.add(t.name, t.shape);
    return out;
  }

  void set_zero() {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), T{});
  }

  template <typename U>
  TensorSet<U> cast() const {
    TensorSet<U> out;
    for (const auto& t : tensors_) {
      auto& d = out.add(t.name, t.shape);
      for (std::size_t i = 0; i < t.data.size(); ++i) d.data[i] = static_cast<U>(t.data[i]);
    }
    return out;
  }

  bool operator==(const TensorSet& o) const { return tensors_ == o.tensors_; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no tensor named " + name);
    return it->second;
  }

  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace floorplan::nn
