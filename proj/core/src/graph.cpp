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

#include "cifst/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cifst::numerics {

namespace {

constexpr double kGeluCoef = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / M_PI);

}  // namespace

double gelu_scalar(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCoef * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

void causal_conv1d_rows(const Tensor& x, const Tensor& w, const Tensor& b, int64_t kernel,
                        int64_t stride, int64_t row_begin, int64_t row_end, double* out) {
  const int64_t t_in = x.shape[0], d_in = x.shape[1], d_out = w.shape[1];
  for (int64_t i = row_begin; i < row_end; ++i) {
    double* orow = out + (i - row_begin) * d_out;
    for (int64_t o = 0; o < d_out; ++o) orow[o] = b.data[static_cast<size_t>(o)];
    for (int64_t j = 0; j < kernel; ++j) {
      const int64_t t = i * stride - (kernel - 1) + j;
      if (t < 0 || t >= t_in) continue;
      const double* in = &x.data[static_cast<size_t>(t * d_in)];
      for (int64_t c = 0; c < d_in; ++c) {
        const double xv = in[c];
        if (xv == 0.0) continue;
        const double* wrow = &w.data[static_cast<size_t>((j * d_in + c) * d_out)];
        for (int64_t o = 0; o < d_out; ++o) orow[o] += xv * wrow[o];
      }
    }
  }
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a) {
  throw std::invalid_argument(op + ": bad shape " + a.shape_str());
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(op + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

const Tensor& Value::t() const { return g_->tensor_of(id_); }
const std::vector<double>& Value::grad() const { return g_->grad_of(id_); }

const std::vector<double>& Graph::grad_of(int32_t id) const {
  return nodes_[static_cast<size_t>(id)].t.grad;
}

Value Graph::push(Node n) {
  if (nodes_.size() >= static_cast<size_t>(INT32_MAX)) {
    throw std::runtime_error("Graph: node limit exceeded");
  }
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<int32_t>(nodes_.size() - 1));
}

Value Graph::leaf(Tensor t) {
  Node n;
  n.needs_grad = t.requires_grad;
  n.t = std::move(t);
  n.t.grad.clear();
  return push(std::move(n));
}

Value Graph::constant(Tensor t) {
  t.requires_grad = false;
  return leaf(std::move(t));
}

Value Graph::add(Value a, Value b) {
  const Tensor& ta = node(a).t;
  const Tensor& tb = node(b).t;
  Node n;
  if (same_shape(ta, tb)) {
    n.op = Op::kAdd;
    n.t = Tensor(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = ta.data[i] + tb.data[i];
  } else if (ta.rank() == 2 && tb.rank() == 1 && ta.shape[1] == tb.shape[0]) {
    n.op = Op::kAddRow;
    n.t = Tensor(ta.shape);
    const int64_t m = ta.shape[0], c = ta.shape[1];
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < c; ++j) n.t.data[i * c + j] = ta.data[i * c + j] + tb.data[j];
  } else {
    shape_error("add", ta, tb);
  }
  n.parent = {a.id(), b.id(), -1};
  n.n_parents = 2;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Value Graph::sub(Value a, Value b) { return add(a, scale(b, -1.0)); }

Value Graph::mul(Value a, Value b) {
  const Tensor& ta = node(a).t;
  const Tensor& tb = node(b).t;
  if (!same_shape(ta, tb)) shape_error("mul", ta, tb);
  Node n;
  n.op = Op::kMul;
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = ta.data[i] * tb.data[i];
  n.parent = {a.id(), b.id(), -1};
  n.n_parents = 2;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Value Graph::scale(Value a, double c) {
  const Tensor& ta = node(a).t;
  Node n;
  n.op = Op::kScale;
  n.daux = c;
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = c * ta.data[i];
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::add_const(Value a, double c) {
  const Tensor& ta = node(a).t;
  Node n;
  n.op = Op::kAddConst;
  n.daux = c;
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = ta.data[i] + c;
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::sigmoid(Value a) {
  const Tensor& ta = node(a).t;
  Node n;
  n.op = Op::kSigmoid;
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = stable_sigmoid(ta.data[i]);
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::gelu(Value a) {
  const Tensor& ta = node(a).t;
  Node n;
  n.op = Op::kGelu;
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = gelu_scalar(ta.data[i]);
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::reciprocal(Value a) {
  const Tensor& ta = node(a).t;
  Node n;
  n.op = Op::kReciprocal;
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = 1.0 / ta.data[i];
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::abs(Value a) {
  const Tensor& ta = node(a).t;
  Node n;
  n.op = Op::kAbs;
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = std::fabs(ta.data[i]);
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::transpose(Value a) {
  const Tensor& ta = node(a).t;
  if (ta.rank() != 2) shape_error("transpose", ta);
  Node n;
  n.op = Op::kTranspose;
  const int64_t m = ta.shape[0], c = ta.shape[1];
  n.t = Tensor({c, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < c; ++j) n.t.data[j * m + i] = ta.data[i * c + j];
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::reshape(Value a, std::vector<int64_t> shape) {
  const Tensor& ta = node(a).t;
  Node n;
  n.op = Op::kReshape;
  n.t = Tensor::from(std::move(shape), ta.data);  // throws on numel mismatch
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::slice_cols(Value a, int64_t c0, int64_t c1) {
  const Tensor& ta = node(a).t;
  if (ta.rank() != 2 || c0 < 0 || c1 > ta.shape[1] || c0 >= c1) shape_error("slice_cols", ta);
  Node n;
  n.op = Op::kSliceCols;
  n.iaux = {c0, c1};
  const int64_t m = ta.shape[0], c = ta.shape[1], w = c1 - c0;
  n.t = Tensor({m, w});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < w; ++j) n.t.data[i * w + j] = ta.data[i * c + c0 + j];
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::slice_rows(Value a, int64_t r0, int64_t r1) {
  const Tensor& ta = node(a).t;
  if (ta.rank() != 2 || r0 < 0 || r1 > ta.shape[0] || r0 >= r1) shape_error("slice_rows", ta);
  Node n;
  n.op = Op::kSliceRows;
  n.iaux = {r0, r1};
  const int64_t c = ta.shape[1];
  n.t = Tensor({r1 - r0, c});
  std::copy(ta.data.begin() + r0 * c, ta.data.begin() + r1 * c, n.t.data.begin());
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::scale_rows(Value a, Value v) {
  const Tensor& ta = node(a).t;
  const Tensor& tv = node(v).t;
  if (ta.rank() != 2 || tv.rank() != 1 || tv.shape[0] != ta.shape[0]) {
    shape_error("scale_rows", ta, tv);
  }
  Node n;
  n.op = Op::kScaleRows;
  const int64_t m = ta.shape[0], c = ta.shape[1];
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < c; ++j) n.t.data[i * c + j] = ta.data[i * c + j] * tv.data[i];
  n.parent = {a.id(), v.id(), -1};
  n.n_parents = 2;
  n.needs_grad = node(a).needs_grad || node(v).needs_grad;
  return push(std::move(n));
}

Value Graph::scalar_mul(Value a, Value s) {
  const Tensor& ta = node(a).t;
  const Tensor& ts = node(s).t;
  if (!ts.is_scalar()) shape_error("scalar_mul", ts);
  Node n;
  n.op = Op::kScalarMul;
  n.t = Tensor(ta.shape);
  const double sv = ts.data[0];
  for (int64_t i = 0; i < ta.numel(); ++i) n.t.data[i] = sv * ta.data[i];
  n.parent = {a.id(), s.id(), -1};
  n.n_parents = 2;
  n.needs_grad = node(a).needs_grad || node(s).needs_grad;
  return push(std::move(n));
}

Value Graph::matmul(Value a, Value b) {
  const Tensor& ta = node(a).t;
  const Tensor& tb = node(b).t;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0]) {
    shape_error("matmul", ta, tb);
  }
  const int64_t m = ta.shape[0], k = ta.shape[1], c = tb.shape[1];
  Node n;
  n.op = Op::kMatmul;
  n.t = Tensor({m, c});
  for (int64_t i = 0; i < m; ++i) {
    double* out = &n.t.data[i * c];
    const double* arow = &ta.data[i * k];
    for (int64_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = &tb.data[l * c];
      for (int64_t j = 0; j < c; ++j) out[j] += av * brow[j];
    }
  }
  n.parent = {a.id(), b.id(), -1};
  n.n_parents = 2;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Value Graph::sum(Value a) {
  const Tensor& ta = node(a).t;
  Node n;
  n.op = Op::kSum;
  double s = 0.0;
  for (double v : ta.data) s += v;
  n.t = Tensor::scalar(s);
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::mean(Value a) {
  const Tensor& ta = node(a).t;
  if (ta.numel() == 0) shape_error("mean", ta);
  Node n;
  n.op = Op::kMean;
  double s = 0.0;
  for (double v : ta.data) s += v;
  n.t = Tensor::scalar(s / static_cast<double>(ta.numel()));
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::cumsum(Value a) {
  const Tensor& ta = node(a).t;
  if (ta.rank() != 1) shape_error("cumsum", ta);
  Node n;
  n.op = Op::kCumSum;
  n.t = Tensor(ta.shape);
  double acc = 0.0;
  for (int64_t i = 0; i < ta.numel(); ++i) {
    acc += ta.data[i];
    n.t.data[i] = acc;
  }
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::softmax_rows(Value a) {
  const Tensor& ta = node(a).t;
  if (ta.rank() != 2) shape_error("softmax_rows", ta);
  const int64_t m = ta.shape[0], c = ta.shape[1];
  Node n;
  n.op = Op::kSoftmaxRows;
  n.t = Tensor(ta.shape);
  for (int64_t i = 0; i < m; ++i) {
    const double* row = &ta.data[i * c];
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - mx);
      n.t.data[i * c + j] = e;
      z += e;
    }
    for (int64_t j = 0; j < c; ++j) n.t.data[i * c + j] /= z;
  }
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::layer_norm(Value x, Value gain, Value bias, double eps) {
  const Tensor& tx = node(x).t;
  const Tensor& tg = node(gain).t;
  const Tensor& tb = node(bias).t;
  if (tx.rank() != 2 || tg.rank() != 1 || tb.rank() != 1 || tg.shape[0] != tx.shape[1] ||
      tb.shape[0] != tx.shape[1]) {
    shape_error("layer_norm", tx, tg);
  }
  const int64_t m = tx.shape[0], c = tx.shape[1];
  Node n;
  n.op = Op::kLayerNorm;
  n.daux = eps;
  n.t = Tensor(tx.shape);
  for (int64_t i = 0; i < m; ++i) {
    const double* row = &tx.data[i * c];
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < c; ++j) {
      n.t.data[i * c + j] = (row[j] - mu) * inv * tg.data[j] + tb.data[j];
    }
  }
  n.parent = {x.id(), gain.id(), bias.id()};
  n.n_parents = 3;
  n.needs_grad = node(x).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
  return push(std::move(n));
}

Value Graph::embedding(Value table, std::span<const int> ids) {
  return gather_rows(table, ids);
}

Value Graph::gather_rows(Value a, std::span<const int> ids) {
  const Tensor& ta = node(a).t;
  if (ta.rank() != 2) shape_error("gather_rows", ta);
  const int64_t m = ta.shape[0], c = ta.shape[1];
  Node n;
  n.op = Op::kGatherRows;
  n.iaux.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= m) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(id) +
                                  " out of range for " + ta.shape_str());
    }
    n.iaux.push_back(id);
  }
  n.t = Tensor({static_cast<int64_t>(ids.size()), c});
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy(ta.data.begin() + ids[i] * c, ta.data.begin() + (ids[i] + 1) * c,
              n.t.data.begin() + static_cast<int64_t>(i) * c);
  }
  n.parent = {a.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Value Graph::segment_sum(Value rows, std::span<const int> segment_of_row, int64_t n_segments) {
  const Tensor& ta = node(rows).t;
  if (ta.rank() != 2 || static_cast<int64_t>(segment_of_row.size()) != ta.shape[0]) {
    shape_error("segment_sum", ta);
  }
  const int64_t c = ta.shape[1];
  Node n;
  n.op = Op::kSegmentSum;
  n.iaux.reserve(segment_of_row.size());
  for (int s : segment_of_row) {
    if (s >= n_segments) throw std::invalid_argument("segment_sum: segment id out of range");
    n.iaux.push_back(s);  // negative ids mean the row is dropped
  }
  n.t = Tensor({n_segments, c});
  for (int64_t i = 0; i < ta.shape[0]; ++i) {
    const int64_t s = n.iaux[static_cast<size_t>(i)];
    if (s < 0) continue;
    for (int64_t j = 0; j < c; ++j) n.t.data[s * c + j] += ta.data[i * c + j];
  }
  n.parent = {rows.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(rows).needs_grad;
  return push(std::move(n));
}

Value Graph::cross_entropy(Value logits, std::span<const int> targets) {
  const Tensor& ta = node(logits).t;
  if (ta.rank() != 2 || static_cast<int64_t>(targets.size()) != ta.shape[0] || targets.empty()) {
    shape_error("cross_entropy", ta);
  }
  const int64_t m = ta.shape[0], v = ta.shape[1];
  Node n;
  n.op = Op::kCrossEntropy;
  n.iaux.reserve(targets.size());
  for (int t : targets) {
    if (t < 0 || t >= v) {
      throw std::invalid_argument("cross_entropy: target id " + std::to_string(t) +
                                  " outside vocabulary of size " + std::to_string(v));
    }
    n.iaux.push_back(t);
  }
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    const double* row = &ta.data[i * v];
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[n.iaux[static_cast<size_t>(i)]];
  }
  n.t = Tensor::scalar(total / static_cast<double>(m));
  n.parent = {logits.id(), -1, -1};
  n.n_parents = 1;
  n.needs_grad = node(logits).needs_grad;
  return push(std::move(n));
}

Value Graph::causal_conv1d(Value x, Value w, Value b, int64_t kernel, int64_t stride) {
  const Tensor& tx = node(x).t;
  const Tensor& tw = node(w).t;
  const Tensor& tb = node(b).t;
  if (tx.rank() != 2 || tw.rank() != 2 || tb.rank() != 1 || kernel < 1 || stride < 1 ||
      tw.shape[0] != kernel * tx.shape[1] || tb.shape[0] != tw.shape[1]) {
    shape_error("causal_conv1d", tx, tw);
  }
  const int64_t t_in = tx.shape[0], d_out = tw.shape[1];
  const int64_t t_out = (t_in + stride - 1) / stride;
  Node n;
  n.op = Op::kCausalConv1d;
  n.iaux = {kernel, stride};
  n.t = Tensor({t_out, d_out});
  causal_conv1d_rows(tx, tw, tb, kernel, stride, 0, t_out, n.t.data.data());
  n.parent = {x.id(), w.id(), b.id()};
  n.n_parents = 3;
  n.needs_grad = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

void Graph::ensure_grad(int32_t id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.t.grad.empty()) n.t.grad.assign(n.t.data.size(), 0.0);
}

void Graph::backward(Value loss) {
  if (!loss.valid() || loss.graph() != this) {
    throw std::invalid_argument("backward: value does not belong to this graph");
  }
  if (!node(loss).t.is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                node(loss).t.shape_str());
  }
  if (!node(loss).needs_grad) return;  // no trainable leaf upstream

  // Mark ancestors of the loss; the tape index order is topological, so a
  // reverse scan over marked nodes visits each exactly once, children first.
  std::vector<uint8_t> reachable(nodes_.size(), 0);
  std::vector<int32_t> stack = {loss.id()};
  reachable[static_cast<size_t>(loss.id())] = 1;
  while (!stack.empty()) {
    const Node& n = nodes_[static_cast<size_t>(stack.back())];
    stack.pop_back();
    for (int p = 0; p < n.n_parents; ++p) {
      const int32_t pid = n.parent[static_cast<size_t>(p)];
      if (!reachable[static_cast<size_t>(pid)]) {
        reachable[static_cast<size_t>(pid)] = 1;
        stack.push_back(pid);
      }
    }
  }

  ensure_grad(loss.id());
  nodes_[static_cast<size_t>(loss.id())].t.grad[0] += 1.0;
  for (int32_t id = loss.id(); id >= 0; --id) {
    if (!reachable[static_cast<size_t>(id)]) continue;
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.t.grad.empty()) continue;
    backward_node(id);
  }
}

void Graph::backward_node(int32_t id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  const std::vector<double>& gy = n.t.grad;

  auto parent_needs = [&](int p) {
    return nodes_[static_cast<size_t>(n.parent[static_cast<size_t>(p)])].needs_grad;
  };
  auto pgrad = [&](int p) -> std::vector<double>& {
    ensure_grad(n.parent[static_cast<size_t>(p)]);
    return nodes_[static_cast<size_t>(n.parent[static_cast<size_t>(p)])].t.grad;
  };
  auto pval = [&](int p) -> const Tensor& {
    return nodes_[static_cast<size_t>(n.parent[static_cast<size_t>(p)])].t;
  };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (parent_needs(1)) {
        auto& gb = pgrad(1);
        for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
      break;
    }
    case Op::kAddRow: {
      const int64_t m = n.t.shape[0], c = n.t.shape[1];
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (parent_needs(1)) {
        auto& gb = pgrad(1);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) gb[static_cast<size_t>(j)] += gy[i * c + j];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& a = pval(0);
      const Tensor& b = pval(1);
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b.data[i];
      }
      if (parent_needs(1)) {
        auto& gb = pgrad(1);
        for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a.data[i];
      }
      break;
    }
    case Op::kScale: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += n.daux * gy[i];
      }
      break;
    }
    case Op::kAddConst: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      break;
    }
    case Op::kSigmoid: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) {
          const double y = n.t.data[i];
          ga[i] += gy[i] * y * (1.0 - y);
        }
      }
      break;
    }
    case Op::kGelu: {
      if (parent_needs(0)) {
        const Tensor& a = pval(0);
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) {
          const double x = a.data[i];
          const double u = kSqrt2OverPi * (x + kGeluCoef * x * x * x);
          const double th = std::tanh(u);
          const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoef * x * x);
          ga[i] += gy[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
        }
      }
      break;
    }
    case Op::kReciprocal: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) {
          const double y = n.t.data[i];
          ga[i] -= gy[i] * y * y;
        }
      }
      break;
    }
    case Op::kAbs: {
      if (parent_needs(0)) {
        const Tensor& a = pval(0);
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) {
          const double x = a.data[i];
          const double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
          ga[i] += gy[i] * s;
        }
      }
      break;
    }
    case Op::kTranspose: {
      if (parent_needs(0)) {
        const int64_t m = n.t.shape[0], c = n.t.shape[1];  // output is [m, c]
        auto& ga = pgrad(0);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) ga[static_cast<size_t>(j * m + i)] += gy[i * c + j];
      }
      break;
    }
    case Op::kReshape: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      break;
    }
    case Op::kSliceCols: {
      if (parent_needs(0)) {
        const int64_t c0 = n.iaux[0];
        const int64_t m = n.t.shape[0], w = n.t.shape[1];
        const int64_t c = pval(0).shape[1];
        auto& ga = pgrad(0);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < w; ++j) ga[static_cast<size_t>(i * c + c0 + j)] += gy[i * w + j];
      }
      break;
    }
    case Op::kSliceRows: {
      if (parent_needs(0)) {
        const int64_t r0 = n.iaux[0];
        const int64_t m = n.t.shape[0], c = n.t.shape[1];
        auto& ga = pgrad(0);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) ga[static_cast<size_t>((r0 + i) * c + j)] += gy[i * c + j];
      }
      break;
    }
    case Op::kScaleRows: {
      const Tensor& a = pval(0);
      const Tensor& v = pval(1);
      const int64_t m = n.t.shape[0], c = n.t.shape[1];
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) ga[static_cast<size_t>(i * c + j)] += gy[i * c + j] * v.data[i];
      }
      if (parent_needs(1)) {
        auto& gv = pgrad(1);
        for (int64_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (int64_t j = 0; j < c; ++j) s += gy[i * c + j] * a.data[i * c + j];
          gv[static_cast<size_t>(i)] += s;
        }
      }
      break;
    }
    case Op::kScalarMul: {
      const Tensor& a = pval(0);
      const double sv = pval(1).data[0];
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += sv * gy[i];
      }
      if (parent_needs(1)) {
        auto& gs = pgrad(1);
        double s = 0.0;
        for (size_t i = 0; i < gy.size(); ++i) s += gy[i] * a.data[i];
        gs[0] += s;
      }
      break;
    }
    case Op::kMatmul: {
      const Tensor& a = pval(0);
      const Tensor& b = pval(1);
      const int64_t m = a.shape[0], k = a.shape[1], c = b.shape[1];
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t l = 0; l < k; ++l) {
            double s = 0.0;
            const double* gr = &gy[static_cast<size_t>(i * c)];
            const double* br = &b.data[l * c];
            for (int64_t j = 0; j < c; ++j) s += gr[j] * br[j];
            ga[static_cast<size_t>(i * k + l)] += s;
          }
      }
      if (parent_needs(1)) {
        auto& gb = pgrad(1);
        for (int64_t i = 0; i < m; ++i) {
          const double* ar = &a.data[i * k];
          const double* gr = &gy[static_cast<size_t>(i * c)];
          for (int64_t l = 0; l < k; ++l) {
            const double av = ar[l];
            if (av == 0.0) continue;
            double* gbr = &gb[static_cast<size_t>(l * c)];
            for (int64_t j = 0; j < c; ++j) gbr[j] += av * gr[j];
          }
        }
      }
      break;
    }
    case Op::kSum: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        const double g = gy[0];
        for (double& v : ga) v += g;
      }
      break;
    }
    case Op::kMean: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        const double g = gy[0] / static_cast<double>(ga.size());
        for (double& v : ga) v += g;
      }
      break;
    }
    case Op::kCumSum: {
      if (parent_needs(0)) {
        auto& ga = pgrad(0);
        double acc = 0.0;
        for (int64_t i = static_cast<int64_t>(gy.size()) - 1; i >= 0; --i) {
          acc += gy[static_cast<size_t>(i)];
          ga[static_cast<size_t>(i)] += acc;
        }
      }
      break;
    }
    case Op::kSoftmaxRows: {
      if (parent_needs(0)) {
        const int64_t m = n.t.shape[0], c = n.t.shape[1];
        auto& ga = pgrad(0);
        for (int64_t i = 0; i < m; ++i) {
          const double* y = &n.t.data[i * c];
          const double* g = &gy[static_cast<size_t>(i * c)];
          double dot = 0.0;
          for (int64_t j = 0; j < c; ++j) dot += g[j] * y[j];
          for (int64_t j = 0; j < c; ++j) ga[static_cast<size_t>(i * c + j)] += y[j] * (g[j] - dot);
        }
      }
      break;
    }
    case Op::kLayerNorm: {
      const Tensor& x = pval(0);
      const Tensor& gain = pval(1);
      const int64_t m = x.shape[0], c = x.shape[1];
      const double eps = n.daux;
      for (int64_t i = 0; i < m; ++i) {
        const double* row = &x.data[i * c];
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        const double* g = &gy[static_cast<size_t>(i * c)];
        if (parent_needs(1)) {
          auto& gg = pgrad(1);
          for (int64_t j = 0; j < c; ++j) gg[static_cast<size_t>(j)] += g[j] * (row[j] - mu) * inv;
        }
        if (parent_needs(2)) {
          auto& gb = pgrad(2);
          for (int64_t j = 0; j < c; ++j) gb[static_cast<size_t>(j)] += g[j];
        }
        if (parent_needs(0)) {
          auto& gx = pgrad(0);
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            const double xhat = (row[j] - mu) * inv;
            const double dxhat = g[j] * gain.data[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
          }
          mean_dxhat /= static_cast<double>(c);
          mean_dxhat_xhat /= static_cast<double>(c);
          for (int64_t j = 0; j < c; ++j) {
            const double xhat = (row[j] - mu) * inv;
            const double dxhat = g[j] * gain.data[j];
            gx[static_cast<size_t>(i * c + j)] +=
                inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
          }
        }
      }
      break;
    }
    case Op::kGatherRows: {
      if (parent_needs(0)) {
        const int64_t c = n.t.shape[1];
        auto& ga = pgrad(0);
        for (size_t i = 0; i < n.iaux.size(); ++i) {
          const int64_t r = n.iaux[i];
          for (int64_t j = 0; j < c; ++j)
            ga[static_cast<size_t>(r * c + j)] += gy[i * static_cast<size_t>(c) + static_cast<size_t>(j)];
        }
      }
      break;
    }
    case Op::kSegmentSum: {
      if (parent_needs(0)) {
        const int64_t c = n.t.shape[1];
        auto& ga = pgrad(0);
        for (size_t i = 0; i < n.iaux.size(); ++i) {
          const int64_t s = n.iaux[i];
          if (s < 0) continue;
          for (int64_t j = 0; j < c; ++j)
            ga[i * static_cast<size_t>(c) + static_cast<size_t>(j)] += gy[static_cast<size_t>(s * c + j)];
        }
      }
      break;
    }
    case Op::kCrossEntropy: {
      if (parent_needs(0)) {
        const Tensor& a = pval(0);
        const int64_t m = a.shape[0], v = a.shape[1];
        auto& ga = pgrad(0);
        const double g = gy[0] / static_cast<double>(m);
        for (int64_t i = 0; i < m; ++i) {
          const double* row = &a.data[i * v];
          double mx = row[0];
          for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
          double z = 0.0;
          for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
          for (int64_t j = 0; j < v; ++j) {
            const double p = std::exp(row[j] - mx) / z;
            const double ind = (j == n.iaux[static_cast<size_t>(i)]) ? 1.0 : 0.0;
            ga[static_cast<size_t>(i * v + j)] += g * (p - ind);
          }
        }
      }
      break;
    }
    case Op::kCausalConv1d: {
      const Tensor& x = pval(0);
      const Tensor& w = pval(1);
      const int64_t kernel = n.iaux[0], stride = n.iaux[1];
      const int64_t t_out = n.t.shape[0], d_out = n.t.shape[1];
      const int64_t d_in = x.shape[1];
      for (int64_t i = 0; i < t_out; ++i) {
        const double* g = &gy[static_cast<size_t>(i * d_out)];
        if (parent_needs(2)) {
          auto& gb = pgrad(2);
          for (int64_t o = 0; o < d_out; ++o) gb[static_cast<size_t>(o)] += g[o];
        }
        for (int64_t j = 0; j < kernel; ++j) {
          const int64_t t = i * stride - (kernel - 1) + j;
          if (t < 0) continue;
          if (parent_needs(1)) {
            auto& gw = pgrad(1);
            for (int64_t c = 0; c < d_in; ++c) {
              const double xv = x.data[t * d_in + c];
              if (xv == 0.0) continue;
              double* gwr = &gw[static_cast<size_t>((j * d_in + c) * d_out)];
              for (int64_t o = 0; o < d_out; ++o) gwr[o] += xv * g[o];
            }
          }
          if (parent_needs(0)) {
            auto& gx = pgrad(0);
            for (int64_t c = 0; c < d_in; ++c) {
              const double* wr = &w.data[(j * d_in + c) * d_out];
              double s = 0.0;
              for (int64_t o = 0; o < d_out; ++o) s += wr[o] * g[o];
              gx[static_cast<size_t>(t * d_in + c)] += s;
            }
          }
        }
      }
      break;
    }
  }
}

FdReport finite_difference_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                 std::span<const double> analytic_grad, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_check: h must be positive");
  if (analytic_grad.size() != x.data.size()) {
    throw std::invalid_argument("finite_difference_check: gradient size mismatch");
  }
  FdReport report;
  Tensor probe = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    probe.data[i] = x.data[i] + h;
    const double fp = f(probe);
    probe.data[i] = x.data[i] - h;
    const double fm = f(probe);
    probe.data[i] = x.data[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      report.ok = false;
      report.max_rel_err = std::numeric_limits<double>::infinity();
      report.worst_index = static_cast<int64_t>(i);
      return report;
    }
    const double fd = (fp - fm) / (2.0 * h);
    const double rel = std::fabs(fd - analytic_grad[i]) / (std::fabs(analytic_grad[i]) + 1e-8);
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = static_cast<int64_t>(i);
    }
  }
  return report;
}

}  // namespace cifst::numerics
