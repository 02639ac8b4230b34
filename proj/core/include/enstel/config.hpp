// Copyright 2026 The enstel Authors
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

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "enstel/simulator.hpp"

namespace enstel::run {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything one run needs: physics knobs, timing, the per-target cycle
/// schedule and execution options. Parsed from flat `key = value` text with
/// `[section]` headers; every key is listed by documented_keys().
struct ExperimentConfig {
  simulator::NoiseConfig noise;
  simulator::TimingConfig timing;
  simulator::Schedule schedule;

  bool seed_set = false;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 1;
  simulator::TrialLogMode log_mode = simulator::TrialLogMode::Heralds;
  bool inject_sigma_z = false;
  /// Cycles per target for the preparation reference run inside `teleport`;
  /// 0 means reuse the teleport schedule counts.
  std::uint64_t prep_cycles = 0;
  double regime_threshold = 0.2;

  std::uint64_t schedule_cycles(protocol::Target t) const;
  void set_schedule_cycles(protocol::Target t, std::uint64_t n);

  /// Throws ConfigError (missing seed, bad probability, timing overrun...).
  void validate() const;
};

/// Parses `key = value` text; errors carry the source name and line number.
ExperimentConfig parse_config(std::istream& is, const std::string& source_name);
ExperimentConfig parse_config_file(const std::string& path);

/// Canonical text form; parse(serialize(c)) reproduces c on every documented
/// key. With `canonical_only`, execution-local keys (threads, out_dir,
/// trial_log) are omitted; that form feeds the provenance hash so reruns on
/// more workers keep the same identity.
std::string serialize_config(const ExperimentConfig& config, bool canonical_only = false);

/// FNV-1a over the canonical serialization.
std::uint64_t config_hash(const ExperimentConfig& config);
std::string config_hash_hex(const ExperimentConfig& config);

/// Dotted key paths ("noise.p_a", "schedule.up", ...) usable with the sweep
/// command and get/set below.
std::vector<std::string> documented_keys();
std::string get_key(const ExperimentConfig& config, const std::string& key);
void set_key(ExperimentConfig& config, const std::string& key, const std::string& value);

}  // namespace enstel::run
