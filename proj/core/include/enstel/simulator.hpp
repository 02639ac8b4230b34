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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "enstel/protocol.hpp"
#include "enstel/qcore.hpp"
#include "enstel/rng.hpp"
#include "enstel/tomography.hpp"

// Stochastic trial-by-trial engine for the two-node experiment: excitation
// statistics, optical losses, fake-herald channels, memory dephasing and the
// analytic rate budget. All times are handled internally in microseconds.
namespace enstel::simulator {

enum class DecayLaw { Exponential, Gaussian };

/// Detection and noise parameters. Probabilities are per write trial or per
/// detection window as noted. p_a and p_b are *detected* write-out
/// probabilities (they include coupling, fiber and detector losses);
/// p_pair_b is the bare entanglement-creation probability that sets the
/// waiting-time statistics at node B.
struct NoiseConfig {
  double eta_a = 0.07;  // detected retrieval efficiency, node A
  double eta_b = 0.25;  // detected retrieval efficiency, node B (fitted; not published)
  double p_a = 3e-3;    // detected write-out probability per A write trial
  double p_b = 3e-3;    // detected write-out probability per B write trial (post-fiber)
  double p_pair_b = 0.01;            // pair-creation probability per B write trial
  double fiber_transmission = 0.886; // 150 m fiber, node B -> BSM
  // Residual polarization rotation after active drift compensation, applied
  // to photon 3. Also absorbs source-entanglement and BSM-interference
  // imperfections when fitting. Angles are (x, y, z) in radians, composed as
  // Rx * Ry * Rz.
  std::array<double, 3> residual_rotation_rad{0.0, 0.0, 0.0};
  double dark_count_prob = 0.0;   // per detection window, per detector
  double background_prob = 0.0;   // per detection window, split over the watching detectors
  double readout_noise_factor = 1.0;  // A-readout noise photon probability = factor * p_a

  void validate() const;  // throws std::invalid_argument with the offending key

  /// Conditional detection probability of a B write-out photon that survived
  /// the fiber: p_b / (p_pair_b * fiber_transmission).
  double detection_after_fiber() const;
};

/// Cycle timing. Defaults give a 71.4 Hz cycle with an 11 ms trap phase and
/// a 3 ms measurement window.
struct TimingConfig {
  double cycle_rate_hz = 71.4;
  double trap_duration_ms = 11.0;
  double window_duration_ms = 3.0;
  double trial_a_us = 3.38;   // one A write trial
  double trial_b_ns = 975.0;  // one B write trial
  double hold_a_us = 1.6;     // A storage between preparation-loop steps and readout
  double lifetime_tau_us = 129.0;
  DecayLaw decay_law = DecayLaw::Exponential;

  void validate() const;

  double trial_b_us() const { return trial_b_ns * 1e-3; }
  double window_us() const { return window_duration_ms * 1e3; }
};

/// How one cycle ended. The Herald* classes tell which photon sources fed
/// the D2-D3 coincidence: AB is the genuine teleportation signal, AA means
/// both photons came from node A (retrieved signal plus readout noise), BB
/// means a double excitation at node B, Dark means a dark or background
/// click completed the coincidence.
enum class TrialClass { NoPrep, PrepOnly, HeraldAB, HeraldAA, HeraldBB, HeraldDark };

std::string_view trial_class_name(TrialClass c);

struct TrialRecord {
  std::uint64_t cycle = 0;
  TrialClass cls = TrialClass::NoPrep;
  bool d1 = false;
  double t_prep_us = -1.0;
  bool d2 = false;
  bool d3 = false;
  double t_herald_us = -1.0;
  protocol::BellOutcome herald = protocol::BellOutcome::NoHerald;
  bool d4 = false;
  int basis = -1;     // tomo::Setting index of the photon-4 analyzer
  int outcome4 = -1;  // 0/1 when d4
  double wait_b_us = -1.0;  // B write trials until first pair creation
};

/// One line per record; see trial_log_header() for the field order.
std::string trial_record_line(const TrialRecord& r);
std::string trial_log_header();

struct RunSummary {
  std::uint64_t n_cycles = 0;
  std::uint64_t n_prep = 0;    // cycles with a D1 click
  std::uint64_t n_herald = 0;  // cycles with a D2-D3 coincidence
  std::uint64_t n_herald_ab = 0;
  std::uint64_t n_herald_aa = 0;
  std::uint64_t n_herald_bb = 0;
  std::uint64_t n_herald_dark = 0;
  std::uint64_t n_triple = 0;  // heralds with a D4 click
  std::uint64_t total_b_trials = 0;
  std::uint64_t n_pair_cycles = 0;  // cycles in which node B created a pair

  double p23 = 0.0;   // P(D2 D3 | D1)
  double p234 = 0.0;  // P(D2 D3 D4 | D1)
  double herald_ab_fraction = 0.0;
  double herald_aa_fraction = 0.0;
  double herald_bb_fraction = 0.0;
  double estimated_success_prob = 0.0;  // AB heralds per executed B write trial
  double mean_prep_time_us = 0.0;       // mean B wait until pair creation
};

/// Photon-4 data and diagnostics collected for one scheduled target.
struct TargetRun {
  protocol::Target target = protocol::Target::Up;
  std::uint64_t n_cycles = 0;
  std::uint64_t heralds = 0;
  std::array<std::uint64_t, 2> heralds_by_sign{};  // PhiPlus, PhiMinus
  tomo::TomoDataset dataset;                       // D4 counts, both heralds combined
  std::array<tomo::TomoDataset, 2> dataset_by_sign{};
  /// Exact ensemble average of the simulated post-feed-forward B state over
  /// herald events that left an excitation at B, per herald sign. This is
  /// the simulation-side oracle the tomography estimates are checked
  /// against; it is empty (maximally mixed, zero weight) when no such event
  /// occurred.
  std::array<qcore::DensityMatrix, 2> mean_state{qcore::DensityMatrix::maximally_mixed(2),
                                                 qcore::DensityMatrix::maximally_mixed(2)};
  std::array<std::uint64_t, 2> mean_state_weight{};
};

enum class TrialLogMode { None, Heralds, Preps, All };

struct RunOptions {
  std::uint64_t seed = 0;
  int threads = 1;
  TrialLogMode log_mode = TrialLogMode::Heralds;
  bool inject_sigma_z = false;  // debug: extra sigma_z on B after feed-forward
};

struct Schedule {
  std::vector<std::pair<protocol::Target, std::uint64_t>> entries;
  std::uint64_t total_cycles() const;
};

struct ExperimentResult {
  RunSummary summary;
  std::vector<TargetRun> targets;
  std::vector<TrialRecord> records;
};

/// Off-diagonal decay by exp(-t/tau) or exp(-t^2 / 2 tau^2); diagonal
/// entries are untouched. Models motional dephasing of a stored spinwave.
qcore::DensityMatrix decohere(const qcore::DensityMatrix& rho, double t_us,
                              const TimingConfig& timing);

struct FiberTransit {
  bool survived;
  qcore::DensityMatrix state;
};

/// Bernoulli survival at the fiber transmission plus the residual rotation
/// on the surviving photon.
FiberTransit fiber_transit(const qcore::DensityMatrix& photon, const NoiseConfig& noise,
                           Xoshiro256& rng);

qcore::Matrix residual_rotation_unitary(const NoiseConfig& noise);

/// One full measurement window: repeated A write trials until the D1 herald,
/// then per B write trial a joint readout/BSM opportunity, classification of
/// the first D2-D3 coincidence and the photon-4 measurement. Deterministic
/// given the rng state.
TrialRecord run_cycle(const protocol::TargetState& target, const NoiseConfig& noise,
                      const TimingConfig& timing, Xoshiro256& rng);

/// Runs the scheduled targets. Cycles derive independent random streams from
/// (seed, flat cycle index), so the result is bit-identical for any thread
/// count.
ExperimentResult run_experiment(const Schedule& schedule, const NoiseConfig& noise,
                                const TimingConfig& timing, const RunOptions& options);

/// State-preparation-only variant: RSP followed by immediate readout of
/// photon 2 into the analyzer. Feeds the preparation-fidelity tomography.
struct PrepareTargetRun {
  protocol::Target target = protocol::Target::Up;
  std::uint64_t n_cycles = 0;
  std::uint64_t n_prep = 0;
  std::uint64_t n_detected = 0;  // analyzer clicks
  tomo::TomoDataset dataset;
};

struct PrepareResult {
  std::uint64_t n_cycles = 0;
  std::uint64_t n_prep = 0;
  double mean_prep_time_a_us = 0.0;
  std::vector<PrepareTargetRun> targets;
};

PrepareResult run_prepare_experiment(const Schedule& schedule, const NoiseConfig& noise,
                                     const TimingConfig& timing, const RunOptions& options);

/// The three per-trial coincidence contributions (genuine A&B, both-from-A,
/// both-from-B): (eta_a p_b, eta_a p_a, p_b^2). The simulated AA channel
/// additionally scales with readout_noise_factor.
std::array<double, 3> bsm_contributions(const NoiseConfig& noise);

/// eta_a * p_b / 2: genuine herald probability per B write trial.
double success_probability(const NoiseConfig& noise);

/// p234 / (p23 * eta_b). Throws when a denominator vanishes.
double heralding_efficiency(const RunSummary& run, const NoiseConfig& noise);

/// f * eta_her.
double heralded_fidelity(double fidelity, double eta_her);

/// The operating-regime requirement p_a << p_b << eta_a, with a configurable
/// reading of "<<".
struct RegimeReport {
  double threshold = 0.2;
  double ratio_pa_pb = 0.0;
  double ratio_pb_eta = 0.0;
  bool first_ok = false;
  bool second_ok = false;
  bool all_ok() const { return first_ok && second_ok; }
};

RegimeReport regime_check(const NoiseConfig& noise, double threshold = 0.2);

/// Best classical measure-and-resend strategy: measure photon 2 in a random
/// basis and prepare the outcome state at B. Returns the mean fidelity over
/// n runs cycling through the six reference states; approaches 2/3.
double classical_benchmark(std::uint64_t n_runs, std::uint64_t seed);

}  // namespace enstel::simulator
