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

#include "enstel/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace enstel::run {

namespace {

// Shortest decimal form that round-trips the double exactly.
std::string format_double(double v) {
  char buf[64];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double out = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not a number: " + v);
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::size_t pos = 0;
  auto out = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an integer: " + v);
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true/false: " + v);
}

struct KeySpec {
  std::string key;  // "section.name"
  bool canonical;   // part of the provenance hash
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::vector<KeySpec> build_key_table() {
  std::vector<KeySpec> t;
  auto dbl = [&t](const std::string& key, auto member) {
    t.push_back({key, true,
                 [member](const ExperimentConfig& c) { return format_double(c.*member); },
                 [member](ExperimentConfig& c, const std::string& v) { c.*member = parse_double(v); }});
  };
  auto noise_dbl = [&t](const std::string& key, auto member) {
    t.push_back({key, true,
                 [member](const ExperimentConfig& c) { return format_double(c.noise.*member); },
                 [member](ExperimentConfig& c, const std::string& v) {
                   c.noise.*member = parse_double(v);
                 }});
  };
  auto timing_dbl = [&t](const std::string& key, auto member) {
    t.push_back({key, true,
                 [member](const ExperimentConfig& c) { return format_double(c.timing.*member); },
                 [member](ExperimentConfig& c, const std::string& v) {
                   c.timing.*member = parse_double(v);
                 }});
  };

  noise_dbl("noise.eta_a", &simulator::NoiseConfig::eta_a);
  noise_dbl("noise.eta_b", &simulator::NoiseConfig::eta_b);
  noise_dbl("noise.p_a", &simulator::NoiseConfig::p_a);
  noise_dbl("noise.p_b", &simulator::NoiseConfig::p_b);
  noise_dbl("noise.p_pair_b", &simulator::NoiseConfig::p_pair_b);
  noise_dbl("noise.fiber_transmission", &simulator::NoiseConfig::fiber_transmission);
  for (int axis = 0; axis < 3; ++axis) {
    const char* names[] = {"noise.rotation_x_rad", "noise.rotation_y_rad",
                           "noise.rotation_z_rad"};
    t.push_back({names[axis], true,
                 [axis](const ExperimentConfig& c) {
                   return format_double(c.noise.residual_rotation_rad[static_cast<std::size_t>(axis)]);
                 },
                 [axis](ExperimentConfig& c, const std::string& v) {
                   c.noise.residual_rotation_rad[static_cast<std::size_t>(axis)] = parse_double(v);
                 }});
  }
  noise_dbl("noise.dark_count_prob", &simulator::NoiseConfig::dark_count_prob);
  noise_dbl("noise.background_prob", &simulator::NoiseConfig::background_prob);
  noise_dbl("noise.readout_noise_factor", &simulator::NoiseConfig::readout_noise_factor);

  timing_dbl("timing.cycle_rate_hz", &simulator::TimingConfig::cycle_rate_hz);
  timing_dbl("timing.trap_duration_ms", &simulator::TimingConfig::trap_duration_ms);
  timing_dbl("timing.window_duration_ms", &simulator::TimingConfig::window_duration_ms);
  timing_dbl("timing.trial_a_us", &simulator::TimingConfig::trial_a_us);
  timing_dbl("timing.trial_b_ns", &simulator::TimingConfig::trial_b_ns);
  timing_dbl("timing.hold_a_us", &simulator::TimingConfig::hold_a_us);
  timing_dbl("timing.lifetime_tau_us", &simulator::TimingConfig::lifetime_tau_us);
  t.push_back({"timing.decay_law", true,
               [](const ExperimentConfig& c) {
                 return c.timing.decay_law == simulator::DecayLaw::Exponential
                            ? std::string("exp")
                            : std::string("gauss");
               },
               [](ExperimentConfig& c, const std::string& v) {
                 if (v == "exp") c.timing.decay_law = simulator::DecayLaw::Exponential;
                 else if (v == "gauss") c.timing.decay_law = simulator::DecayLaw::Gaussian;
                 else throw std::invalid_argument("decay_law must be exp or gauss");
               }});

  t.push_back({"run.seed", true,
               [](const ExperimentConfig& c) { return std::to_string(c.seed); },
               [](ExperimentConfig& c, const std::string& v) {
                 c.seed = parse_u64(v);
                 c.seed_set = true;
               }});
  t.push_back({"run.prep_cycles", true,
               [](const ExperimentConfig& c) { return std::to_string(c.prep_cycles); },
               [](ExperimentConfig& c, const std::string& v) { c.prep_cycles = parse_u64(v); }});
  t.push_back({"run.inject_sigma_z", true,
               [](const ExperimentConfig& c) {
                 return c.inject_sigma_z ? std::string("true") : std::string("false");
               },
               [](ExperimentConfig& c, const std::string& v) { c.inject_sigma_z = parse_bool(v); }});
  dbl("run.regime_threshold", &ExperimentConfig::regime_threshold);
  t.push_back({"run.threads", false,
               [](const ExperimentConfig& c) { return std::to_string(c.threads); },
               [](ExperimentConfig& c, const std::string& v) {
                 c.threads = static_cast<int>(parse_u64(v));
               }});
  t.push_back({"run.out_dir", false,
               [](const ExperimentConfig& c) { return c.out_dir; },
               [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }});
  t.push_back({"run.trial_log", false,
               [](const ExperimentConfig& c) {
                 switch (c.log_mode) {
                   case simulator::TrialLogMode::None: return std::string("none");
                   case simulator::TrialLogMode::Heralds: return std::string("heralds");
                   case simulator::TrialLogMode::Preps: return std::string("preps");
                   case simulator::TrialLogMode::All: return std::string("all");
                 }
                 return std::string("heralds");
               },
               [](ExperimentConfig& c, const std::string& v) {
                 if (v == "none") c.log_mode = simulator::TrialLogMode::None;
                 else if (v == "heralds") c.log_mode = simulator::TrialLogMode::Heralds;
                 else if (v == "preps") c.log_mode = simulator::TrialLogMode::Preps;
                 else if (v == "all") c.log_mode = simulator::TrialLogMode::All;
                 else throw std::invalid_argument("trial_log must be none|heralds|preps|all");
               }});

  for (protocol::Target target : protocol::kAllTargets) {
    std::string key = "schedule." + std::string(protocol::target_name(target));
    t.push_back({key, true,
                 [target](const ExperimentConfig& c) {
                   return std::to_string(c.schedule_cycles(target));
                 },
                 [target](ExperimentConfig& c, const std::string& v) {
                   c.set_schedule_cycles(target, parse_u64(v));
                 }});
  }
  return t;
}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = build_key_table();
  return table;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& spec : key_table()) {
    if (spec.key == key) return &spec;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::uint64_t ExperimentConfig::schedule_cycles(protocol::Target t) const {
  for (const auto& [target, n] : schedule.entries) {
    if (target == t) return n;
  }
  return 0;
}

void ExperimentConfig::set_schedule_cycles(protocol::Target t, std::uint64_t n) {
  for (auto& [target, cycles] : schedule.entries) {
    if (target == t) {
      cycles = n;
      return;
    }
  }
  if (n > 0) schedule.entries.emplace_back(t, n);
}

void ExperimentConfig::validate() const {
  if (!seed_set) throw ConfigError("run.seed is required; there is no wall-clock default");
  if (threads < 1) throw ConfigError("run.threads must be >= 1");
  if (regime_threshold <= 0.0) throw ConfigError("run.regime_threshold must be positive");
  try {
    noise.validate();
    timing.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_config(std::istream& is, const std::string& source_name) {
  ExperimentConfig config;
  config.schedule.entries.clear();
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto fail = [&](const std::string& message) {
      throw ConfigError(source_name + ":" + std::to_string(line_no) + ": " + message);
    };
    auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    std::string name = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (name.empty()) fail("empty key");
    if (section.empty()) fail("key outside any [section]");
    std::string key = section + "." + name;
    const KeySpec* spec = find_key(key);
    if (spec == nullptr) fail("unknown key '" + name + "' in section [" + section + "]");
    try {
      spec->set(config, value);
    } catch (const std::exception& e) {
      fail(std::string(e.what()));
    }
  }
  return config;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open config file");
  return parse_config(f, path);
}

std::string serialize_config(const ExperimentConfig& config, bool canonical_only) {
  std::ostringstream os;
  std::string section;
  for (const auto& spec : key_table()) {
    if (canonical_only && !spec.canonical) continue;
    auto dot = spec.key.find('.');
    std::string sec = spec.key.substr(0, dot);
    std::string name = spec.key.substr(dot + 1);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << name << " = " << spec.get(config) << '\n';
  }
  return os.str();
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  std::string canon = serialize_config(config, /*canonical_only=*/true);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash_hex(const ExperimentConfig& config) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  return buf;
}

std::vector<std::string> documented_keys() {
  std::vector<std::string> keys;
  keys.reserve(key_table().size());
  for (const auto& spec : key_table()) keys.push_back(spec.key);
  return keys;
}

std::string get_key(const ExperimentConfig& config, const std::string& key) {
  const KeySpec* spec = find_key(key);
  if (spec == nullptr) throw ConfigError("unknown config key: " + key);
  return spec->get(config);
}

void set_key(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (spec == nullptr) throw ConfigError("unknown config key: " + key);
  try {
    spec->set(config, value);
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace enstel::run
