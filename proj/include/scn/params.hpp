#pragma once

#include <string>
#include <vector>

#include "scn/tensor.hpp"

namespace scn {

// A learnable tensor paired with its gradient accumulator.
template <typename T>
struct Param {
  Tensor<T> v;
  Tensor<T> g;

  void build(int n, int c, int h, int w) {
    v.resize(n, c, h, w);
    g.resize(n, c, h, w);
  }
  bool empty() const { return v.empty(); }
};

// Flat view over a model's parameters, used by the optimiser, the weight
// file round trip and gradient checks. `decay` is off for biases.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
  bool decay = true;
  bool trainable = true;
};

template <typename T>
void add_param(std::vector<ParamRef<T>>& out, const std::string& name, Param<T>& p, bool decay,
               bool trainable = true) {
  out.push_back(ParamRef<T>{name, &p.v, &p.g, decay, trainable});
}

}  // namespace scn
