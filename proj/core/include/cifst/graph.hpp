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

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cifst/tensor.hpp"

namespace cifst::numerics {

class Graph;

// Lightweight handle to a node owned by a Graph.
class Value {
 public:
  Value() = default;
  Value(Graph* g, int32_t id) : g_(g), id_(id) {}

  const Tensor& t() const;
  const std::vector<double>& grad() const;
  int32_t id() const { return id_; }
  Graph* graph() const { return g_; }
  bool valid() const { return g_ != nullptr; }

  int64_t rows() const { return t().rows(); }
  int64_t cols() const { return t().cols(); }
  double item() const { return t().item(); }

 private:
  Graph* g_ = nullptr;
  int32_t id_ = -1;
};

// Define-by-run computation graph. Forward values are computed eagerly at
// op construction; backward() runs reverse-mode accumulation over the tape
// (creation order is already a topological order). Shapes are validated at
// construction and mismatches throw.
//
// Single-threaded per graph; distinct graphs are independent.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Value leaf(Tensor t);              // requires_grad taken from the tensor
  Value constant(Tensor t);          // never receives gradient
  Value constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  // elementwise / shape ops
  Value add(Value a, Value b);       // same shape, or b a row vector [n] against a [m,n]
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);       // elementwise, same shape
  Value scale(Value a, double c);
  Value add_const(Value a, double c);
  Value sigmoid(Value a);
  Value gelu(Value a);
  Value reciprocal(Value a);
  Value abs(Value a);                // subgradient 0 at the kink
  Value transpose(Value a);
  Value reshape(Value a, std::vector<int64_t> shape);  // same numel
  Value slice_cols(Value a, int64_t c0, int64_t c1);
  Value slice_rows(Value a, int64_t r0, int64_t r1);
  Value scale_rows(Value a, Value v);   // row i of a times v[i]
  Value scalar_mul(Value a, Value s);   // s is a scalar node

  // reductions / linear algebra
  Value matmul(Value a, Value b);
  Value sum(Value a);
  Value mean(Value a);
  Value cumsum(Value a);             // rank-1
  Value softmax_rows(Value a);
  Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5);

  // indexed ops (indices are constants captured by the node)
  Value embedding(Value table, std::span<const int> ids);
  Value gather_rows(Value a, std::span<const int> ids);
  Value segment_sum(Value rows, std::span<const int> segment_of_row, int64_t n_segments);
  Value cross_entropy(Value logits, std::span<const int> targets);  // mean NLL over rows

  // x: [T, d_in], w: [kernel*d_in, d_out], b: [d_out]. Output row i sees
  // inputs (i*stride - kernel + 1 .. i*stride), zero-padded on the left,
  // so the op is causal; output length is ceil(T/stride).
  Value causal_conv1d(Value x, Value w, Value b, int64_t kernel, int64_t stride);

  // Populates grad buffers of every requires_grad node reachable from loss.
  // loss must be scalar. Repeated calls accumulate.
  void backward(Value loss);

  size_t size() const { return nodes_.size(); }
  const Tensor& tensor_of(int32_t id) const { return nodes_[static_cast<size_t>(id)].t; }
  const std::vector<double>& grad_of(int32_t id) const;

 private:
  enum class Op : uint8_t {
    kLeaf,
    kAdd,
    kAddRow,
    kMul,
    kScale,
    kAddConst,
    kSigmoid,
    kGelu,
    kReciprocal,
    kAbs,
    kTranspose,
    kReshape,
    kSliceCols,
    kSliceRows,
    kScaleRows,
    kScalarMul,
    kMatmul,
    kSum,
    kMean,
    kCumSum,
    kSoftmaxRows,
    kLayerNorm,
    kGatherRows,
    kSegmentSum,
    kCrossEntropy,
    kCausalConv1d,
  };

  struct Node {
    Tensor t;
    Op op = Op::kLeaf;
    std::array<int32_t, 3> parent{-1, -1, -1};
    int n_parents = 0;
    std::vector<int64_t> iaux;  // indices, slice bounds, conv geometry
    double daux = 0.0;
    bool needs_grad = false;
  };

  Value push(Node n);
  Node& node(Value v) { return nodes_[static_cast<size_t>(v.id())]; }
  const Node& node(Value v) const { return nodes_[static_cast<size_t>(v.id())]; }
  void ensure_grad(int32_t id);
  void backward_node(int32_t id);

  std::vector<Node> nodes_;
  friend class Value;
};

// Central-difference gradient check. f is evaluated 2*numel(x) times at
// x +- h*e_i; the result is the max over coordinates of
// |fd_i - analytic_i| / (|analytic_i| + 1e-8). A non-finite f(x) is a
// check failure (ok == false), not a crash.
struct FdReport {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  bool ok = true;
};

FdReport finite_difference_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                 std::span<const double> analytic_grad, double h);

// Shared forward kernels. The graph ops and the streaming encoder both use
// these, which keeps incremental and batch paths bit-identical.
double gelu_scalar(double x);
// Computes rows [row_begin, row_end) of the causal strided conv into out
// (dense, (row_end - row_begin) * d_out doubles). Row i reads inputs
// (i*stride - kernel + 1 .. i*stride), zero-padded on the left.
void causal_conv1d_rows(const Tensor& x, const Tensor& w, const Tensor& b, int64_t kernel,
                        int64_t stride, int64_t row_begin, int64_t row_end, double* out);

}  // namespace cifst::numerics
