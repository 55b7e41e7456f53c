// Copyright 2026 cifst authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cifst::numerics {

// Dense row-major tensor of 64-bit reals. Rank is arbitrary for storage;
// the op library in graph.hpp works on rank-1 and rank-2 values.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until a backward pass populates it

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, double fill = 0.0);

  static Tensor scalar(double v);
  static Tensor from(std::vector<int64_t> s, std::vector<double> values);

  Tensor& set_requires_grad(bool flag) {
    requires_grad = flag;
    return *this;
  }

  int64_t numel() const;
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }

  // rank-2 accessors; rank-1 tensors behave as a single row
  int64_t rows() const;
  int64_t cols() const;
  double& at(int64_t r, int64_t c);
  double at(int64_t r, int64_t c) const;

  double item() const;
  void zero();
  bool all_finite() const;
  std::string shape_str() const;
};

bool same_shape(const Tensor& a, const Tensor& b);

// Plain (ungraphed) rank-2 matrix product for inference-side code.
Tensor matmul_plain(const Tensor& a, const Tensor& b);

// Seeded fills. All randomness in the project flows through explicitly
// seeded engines; no global RNG state.
Tensor randn(std::vector<int64_t> shape, std::mt19937_64& rng, double stddev = 1.0);
Tensor rand_uniform(std::vector<int64_t> shape, std::mt19937_64& rng, double lo, double hi);

// splitmix64: stable stream-splitting hash for deriving per-item seeds.
uint64_t splitmix64(uint64_t x);
uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace cifst::numerics
