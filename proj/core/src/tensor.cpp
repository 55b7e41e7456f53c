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

#include "cifst/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cifst::numerics {

namespace {
int64_t product(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) throw std::invalid_argument("Tensor: negative extent");
    n *= e;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> s, double fill)
    : shape(std::move(s)), data(static_cast<size_t>(product(shape)), fill) {}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::from(std::vector<int64_t> s, std::vector<double> values) {
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(values);
  if (product(t.shape) != static_cast<int64_t>(t.data.size())) {
    throw std::invalid_argument("Tensor::from: shape/data size mismatch");
  }
  return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

int64_t Tensor::rows() const {
  if (shape.size() == 2) return shape[0];
  if (shape.size() == 1) return 1;
  throw std::invalid_argument("Tensor::rows: rank must be 1 or 2, got " + shape_str());
}

int64_t Tensor::cols() const {
  if (shape.size() == 2) return shape[1];
  if (shape.size() == 1) return shape[0];
  throw std::invalid_argument("Tensor::cols: rank must be 1 or 2, got " + shape_str());
}

double& Tensor::at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }

double Tensor::at(int64_t r, int64_t c) const {
  return data[static_cast<size_t>(r * cols() + c)];
}

double Tensor::item() const {
  if (!is_scalar()) throw std::invalid_argument("Tensor::item: tensor is not scalar");
  return data[0];
}

void Tensor::zero() { std::fill(data.begin(), data.end(), 0.0); }

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
    throw std::invalid_argument("matmul_plain: shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  const int64_t m = a.shape[0], k = a.shape[1], c = b.shape[1];
  Tensor out({m, c});
  for (int64_t i = 0; i < m; ++i) {
    double* orow = &out.data[i * c];
    const double* arow = &a.data[i * k];
    for (int64_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = &b.data[l * c];
      for (int64_t j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor randn(std::vector<int64_t> shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data) v = dist(rng);
  return t;
}

Tensor rand_uniform(std::vector<int64_t> shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data) v = dist(rng);
  return t;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) { return splitmix64(seed ^ splitmix64(stream)); }

}  // namespace cifst::numerics
