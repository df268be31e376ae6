// Copyright (c) 2026 The sfda Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace sfda {

// Error taxonomy. The CLI maps these onto exit codes:
//   ContractError / ConfigError / ParseError -> 1
//   IoError                                  -> 2
//   NumericError / ClusteringError / StatisticsError -> 3

class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ClusteringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StatisticsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sfda
