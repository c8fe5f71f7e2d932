/* Copyright 2026 The shardopt Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace shardopt {

// Strategy value not present in the action-space domain, or an index vector
// that does not decode.
class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A (layout, shard axis) combination that cannot be executed. Raised by the
// layout engine; the simulator turns it into an invalid SimResult.
class LayoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Config that cannot be parsed or whose values break an invariant.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BudgetExhausted : public std::runtime_error {
 public:
  BudgetExhausted() : std::runtime_error("simulator call budget exhausted") {}
};

class NoEvaluations : public std::runtime_error {
 public:
  NoEvaluations() : std::runtime_error("no evaluations logged") {}
  explicit NoEvaluations(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf inside the policy or the PPO loss. Always a bug, never data.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace shardopt
