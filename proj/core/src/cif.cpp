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

#include "cifst/cif.hpp"

#include <cmath>
#include <stdexcept>

namespace cifst::cif {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_states(const AcousticStates& states) {
  if (states.values.rank() != 2 || states.values.shape[0] < 1 || states.values.shape[1] < 2) {
    throw std::invalid_argument("AcousticStates: need [T >= 1, d >= 2], got " +
                                states.values.shape_str());
  }
}

}  // namespace

std::vector<double> compute_weights(const AcousticStates& states) {
  check_states(states);
  const int64_t t_len = states.length(), d = states.dim();
  std::vector<double> alpha(static_cast<size_t>(t_len));
  for (int64_t t = 0; t < t_len; ++t) alpha[static_cast<size_t>(t)] = stable_sigmoid(states.values.at(t, d - 1));
  return alpha;
}

ScaledWeights scale_weights(std::span<const double> alpha, int64_t n_star) {
  if (n_star < 1) throw std::invalid_argument("scale_weights: n_star must be >= 1");
  ScaledWeights out;
  for (double a : alpha) out.n_hat += a;
  if (out.n_hat <= 0.0) {
    throw std::domain_error("scale_weights: sum of weights is zero, no alignment possible");
  }
  const double s = static_cast<double>(n_star) / out.n_hat;
  out.scaled.reserve(alpha.size());
  for (double a : alpha) out.scaled.push_back(s * a);
  return out;
}

std::vector<double> inference_rescale(std::span<const double> alpha) {
  double n_hat = 0.0;
  for (double a : alpha) n_hat += a;
  const int64_t rounded = static_cast<int64_t>(std::llround(n_hat));
  if (rounded == 0) return {};
  const double s = static_cast<double>(rounded) / n_hat;
  std::vector<double> out;
  out.reserve(alpha.size());
  for (double a : alpha) out.push_back(s * a);
  return out;
}

FiringSchedule integrate_and_fire(std::span<const double> alpha_eff,
                                  std::optional<double> tail_residue_threshold) {
  FiringSchedule schedule;
  schedule.scaled_weights.assign(alpha_eff.begin(), alpha_eff.end());
  const int64_t t_len = static_cast<int64_t>(alpha_eff.size());
  double acc = 0.0;
  int64_t begin = 0;
  for (int64_t t = 0; t < t_len; ++t) {
    acc += alpha_eff[static_cast<size_t>(t)];
    while (acc >= kFireThreshold - kFireEps) {
      schedule.segments.emplace_back(begin, t + 1);
      acc -= kFireThreshold;
      begin = t + 1;
    }
  }
  if (tail_residue_threshold.has_value() && acc >= *tail_residue_threshold) {
    schedule.segments.emplace_back(begin, t_len);
  }
  return schedule;
}

Tensor integrate_segments(const AcousticStates& states, std::span<const double> alpha_eff,
                          const FiringSchedule& schedule) {
  check_states(states);
  const int64_t d = states.dim();
  const int64_t content = d - 1;
  const int64_t u_len = schedule.fired_count();
  Tensor out({u_len, content});
  for (int64_t u = 0; u < u_len; ++u) {
    const auto [b, e] = schedule.segments[static_cast<size_t>(u)];
    for (int64_t t = b; t < e; ++t) {
      const double w = alpha_eff[static_cast<size_t>(t)];
      for (int64_t c = 0; c < content; ++c) out.at(u, c) += w * states.values.at(t, c);
    }
  }
  return out;
}

double quantity_loss(double n_hat, int64_t n_star) {
  return std::fabs(static_cast<double>(n_star) - n_hat);
}

Tensor project(const Tensor& embeddings, const Tensor& projection) {
  return numerics::matmul_plain(embeddings, projection);
}

std::vector<int> segment_ids(const FiringSchedule& schedule, int64_t n_states) {
  std::vector<int> ids(static_cast<size_t>(n_states), -1);
  for (size_t u = 0; u < schedule.segments.size(); ++u) {
    const auto [b, e] = schedule.segments[u];
    for (int64_t t = b; t < e; ++t) ids[static_cast<size_t>(t)] = static_cast<int>(u);
  }
  return ids;
}

CifGraphOut cif_forward_train(Graph& g, Value states, int64_t n_star) {
  const Tensor& sv = states.t();
  if (sv.rank() != 2 || sv.shape[0] < 1 || sv.shape[1] < 2) {
    throw std::invalid_argument("cif_forward_train: need [T >= 1, d >= 2] states");
  }
  const int64_t t_len = sv.shape[0], d = sv.shape[1];

  Value alpha = g.reshape(g.sigmoid(g.slice_cols(states, d - 1, d)), {t_len});
  Value n_hat = g.sum(alpha);
  if (n_hat.item() <= 0.0) {
    throw std::domain_error("cif_forward_train: zero weight mass");
  }
  // alpha' = (n_star / n_hat) * alpha
  Value scale_node = g.scale(g.reciprocal(n_hat), static_cast<double>(n_star));
  Value alpha_prime = g.scalar_mul(alpha, scale_node);

  CifGraphOut out;
  out.schedule = integrate_and_fire(alpha_prime.t().data);
  out.schedule.weights = alpha.t().data;
  out.schedule.n_hat = n_hat.item();

  const std::vector<int> ids = segment_ids(out.schedule, t_len);
  Value content = g.slice_cols(states, 0, d - 1);
  Value weighted = g.scale_rows(content, alpha_prime);
  out.integrated = g.segment_sum(weighted, ids, out.schedule.fired_count());
  out.n_hat = n_hat;
  return out;
}

CifAccumulator::CifAccumulator(int64_t content_dim)
    : content_dim_(content_dim), pending_sum_(static_cast<size_t>(content_dim), 0.0) {}

void CifAccumulator::fire(int64_t end_state) {
  segments_.emplace_back(segment_begin_, end_state);
  fired_.insert(fired_.end(), pending_sum_.begin(), pending_sum_.end());
  std::fill(pending_sum_.begin(), pending_sum_.end(), 0.0);
  segment_begin_ = end_state;
}

void CifAccumulator::advance(double alpha_t, std::span<const double> content_row) {
  if (static_cast<int64_t>(content_row.size()) != content_dim_) {
    throw std::invalid_argument("CifAccumulator: content width mismatch");
  }
  acc_ += alpha_t;
  for (int64_t c = 0; c < content_dim_; ++c) {
    pending_sum_[static_cast<size_t>(c)] += alpha_t * content_row[static_cast<size_t>(c)];
  }
  ++next_state_;
  while (acc_ >= kFireThreshold - kFireEps) {
    fire(next_state_);
    acc_ -= kFireThreshold;
  }
}

void CifAccumulator::force_fire_tail(double threshold) {
  if (acc_ >= threshold) {
    fire(next_state_);
    acc_ = 0.0;
  }
}

Tensor CifAccumulator::fired_embeddings() const {
  Tensor out({fired_count(), content_dim_});
  out.data = fired_;
  return out;
}

}  // namespace cifst::cif
