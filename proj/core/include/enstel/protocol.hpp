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
#include <optional>
#include <string_view>

#include "enstel/qcore.hpp"

// The quantum mechanics of one teleportation attempt between two memory
// nodes, with every basis convention pinned here:
//   |0> = |H> = |up spinwave>,  |1> = |V> = |down spinwave>.
// Node A holds the state to send; node B holds the receiving memory. Photon
// indices follow the beam-line order: 1 = A write-out (consumed by remote
// state preparation), 2 = A read-out, 3 = B write-out, 4 = B read-out.
namespace enstel::protocol {

enum class Target { Up, Down, Plus, Minus, R, L };

inline constexpr std::array<Target, 6> kAllTargets = {
    Target::Up, Target::Down, Target::Plus, Target::Minus, Target::R, Target::L};

/// One of the six reference states: Up=(1,0), Down=(0,1),
/// Plus/Minus=(1,+-1)/sqrt2, R/L=(1,+-i)/sqrt2.
struct TargetState {
  Target label;
  qcore::Ket ket;  // dim 2

  qcore::Complex alpha() const { return ket[0]; }
  qcore::Complex beta() const { return ket[1]; }
};

TargetState target_state(Target t);

/// Arbitrary-amplitude variant used by property tests; amplitudes are
/// normalized, label is the nearest-ignored placeholder Up.
TargetState custom_target(qcore::Complex alpha, qcore::Complex beta);

std::string_view target_name(Target t);
std::optional<Target> parse_target(std::string_view name);

/// Result of the polarizing-beam-splitter Bell measurement. Only PhiPlus and
/// PhiMinus herald success; the Psi-type components never give a
/// two-detector coincidence.
enum class BellOutcome { PhiPlus, PhiMinus, NoHerald };

std::string_view bell_outcome_name(BellOutcome o);

/// Joint photon/spinwave state, subsystem order (photon, spinwave).
struct AtomPhotonPair {
  qcore::DensityMatrix joint;  // dim 4
};

/// Photon-spinwave singlet (|H down> - |V up>)/sqrt2 produced by the write
/// process at node A. The singlet's basis-independent anti-correlation is
/// what makes remote state preparation work: projecting the photon onto the
/// complement of the target leaves the spinwave in the target.
AtomPhotonPair make_rsp_pair();

/// (|H up> + |V down>)/sqrt2 shared between write-out photon 3 and the
/// node-B spinwave.
AtomPhotonPair make_entangled_pair_b();

/// beta* |H> - alpha* |V>, orthogonal to alpha |H> + beta |V>.
qcore::Ket perp_state(const TargetState& target);

struct Projection {
  double probability;
  qcore::DensityMatrix spinwave;  // dim 2, normalized conditional state
};

/// Projects the photon half onto |proj>. Throws if the conditional
/// probability is below 1e-15 (impossible conditioning).
Projection project_photon(const AtomPhotonPair& pair, const qcore::Ket& proj);

/// Spinwave -> photon polarization. Identity under the fixed conventions;
/// retrieval efficiency is the simulator's business.
qcore::DensityMatrix readout_map(const qcore::DensityMatrix& spinwave);

struct BsmDistribution {
  double p_phi_plus;
  double p_phi_minus;
  double p_no_herald;
};

/// PBS Bell-state measurement on a two-photon state (photon 2, photon 3):
/// H transmits, V reflects, so a two-output coincidence arises only from the
/// HH and VV components; the +/- analysis behind the outputs then separates
/// PhiPlus from PhiMinus. Equivalent to the projector set
/// {|Phi+><Phi+|, |Phi-><Phi-|, I - both}.
BsmDistribution pbs_bsm(const qcore::DensityMatrix& joint23);

struct SteeredBsm {
  double p_phi_plus;
  double p_phi_minus;
  double p_no_herald;
  qcore::DensityMatrix b_given_plus;   // conditional bystander state
  qcore::DensityMatrix b_given_minus;
};

/// Same measurement with the bystander tracked: photon 2 carries `photon2`,
/// photon 3 is half of `pair3b` (order photon 3, spinwave B). Returns the
/// outcome distribution plus the conditional post-measurement state of B.
/// Works for any pair state, not just the ideal one, so fiber rotation and
/// decoherence can be applied upstream.
SteeredBsm pbs_bsm_steered(const qcore::DensityMatrix& photon2,
                           const qcore::DensityMatrix& pair3b);

/// Classically-fed-forward correction at B: identity for PhiPlus, a pi phase
/// shift on |down> (sigma_z) for PhiMinus. NoHerald is rejected.
qcore::DensityMatrix feed_forward(const qcore::DensityMatrix& state_b, BellOutcome outcome);

struct TeleportResult {
  double p_phi_plus;
  double p_phi_minus;
  qcore::DensityMatrix after_phi_plus;   // B state after feed-forward
  qcore::DensityMatrix after_phi_minus;
};

/// Whole noiseless protocol for one target: RSP at A, readout to photon 2,
/// BSM against the B pair, feed-forward. Both herald branches must equal the
/// target; this is the module-level oracle the simulator is checked against.
TeleportResult ideal_teleport(const TargetState& target);

}  // namespace enstel::protocol
