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

#include <span>
#include <vector>

namespace cifst {

// Closed-vocabulary reserved ids. Content tokens start at kNumReservedTokens.
// The two indicator tokens select the decoding task (transcription vs
// translation) in the shared decoder.
constexpr int kPadId = 0;
constexpr int kEosId = 1;
constexpr int kSrcIndicatorId = 2;
constexpr int kTgtIndicatorId = 3;
constexpr int kNumReservedTokens = 4;

inline std::vector<int> with_indicator_and_eos(std::span<const int> content, int indicator) {
  std::vector<int> out;
  out.reserve(content.size() + 2);
  out.push_back(indicator);
  out.insert(out.end(), content.begin(), content.end());
  out.push_back(kEosId);
  return out;
}

}  // namespace cifst
