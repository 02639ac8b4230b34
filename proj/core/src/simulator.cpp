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

#include "enstel/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

namespace enstel::simulator {

using protocol::BellOutcome;
using qcore::Complex;
using qcore::DensityMatrix;
using qcore::Matrix;

namespace {

void require(bool ok, const char* message) {
  if (!ok) throw std::invalid_argument(message);
}

void require_prob(double v, const char* key) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument(std::string("NoiseConfig: ") + key + " must be in [0, 1]");
  }
}

}  // namespace

void NoiseConfig::validate() const {
  require_prob(eta_a, "eta_a");
  require_prob(eta_b, "eta_b");
  require_prob(p_a, "p_a");
  require_prob(p_b, "p_b");
  require_prob(p_pair_b, "p_pair_b");
  require_prob(fiber_transmission, "fiber_transmission");
  require_prob(dark_count_prob, "dark_count_prob");
  require_prob(background_prob, "background_prob");
  require(readout_noise_factor >= 0.0, "NoiseConfig: readout_noise_factor must be >= 0");
  require(readout_noise_factor * p_a <= 1.0,
          "NoiseConfig: readout_noise_factor * p_a exceeds 1");
  if (p_b > 0.0) {
    require(p_pair_b * fiber_transmission > 0.0,
            "NoiseConfig: p_b > 0 requires nonzero p_pair_b and fiber_transmission");
    require(detection_after_fiber() <= 1.0 + 1e-12,
            "NoiseConfig: p_b exceeds p_pair_b * fiber_transmission");
  }
}

double NoiseConfig::detection_after_fiber() const {
  if (p_b == 0.0) return 0.0;
  return p_b / (p_pair_b * fiber_transmission);
}

void TimingConfig::validate() const {
  require(cycle_rate_hz > 0.0, "TimingConfig: cycle_rate_hz must be positive");
  require(trap_duration_ms >= 0.0, "TimingConfig: trap_duration_ms must be >= 0");
  require(window_duration_ms > 0.0, "TimingConfig: window_duration_ms must be positive");
  require(trial_a_us > 0.0, "TimingConfig: trial_a_us must be positive");
  require(trial_b_ns > 0.0, "TimingConfig: trial_b_ns must be positive");
  require(hold_a_us >= 0.0, "TimingConfig: hold_a_us must be >= 0");
  require(lifetime_tau_us > 0.0, "TimingConfig: lifetime_tau_us must be positive");
  double cycle_ms = 1e3 / cycle_rate_hz;
  require(trap_duration_ms + window_duration_ms <= cycle_ms + 1e-9,
          "TimingConfig: trap + window exceeds the cycle period");
}

std::string_view trial_class_name(TrialClass c) {
  switch (c) {
    case TrialClass::NoPrep: return "noprep";
    case TrialClass::PrepOnly: return "preponly";
    case TrialClass::HeraldAB: return "ab";
    case TrialClass::HeraldAA: return "aa";
    case TrialClass::HeraldBB: return "bb";
    case TrialClass::HeraldDark: return "dark";
  }
  return "?";
}

std::string trial_log_header() {
  return "# cycle class d1 t_prep_us d2 d3 t_herald_us herald d4 basis outcome wait_b_us";
}

std::string trial_record_line(const TrialRecord& r) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%llu %s %d %.4f %d %d %.4f %s %d %d %d %.4f",
                static_cast<unsigned long long>(r.cycle),
                std::string(trial_class_name(r.cls)).c_str(), r.d1 ? 1 : 0, r.t_prep_us,
                r.d2 ? 1 : 0, r.d3 ? 1 : 0, r.t_herald_us,
                std::string(protocol::bell_outcome_name(r.herald)).c_str(), r.d4 ? 1 : 0,
                r.basis, r.outcome4, r.wait_b_us);
  return buf;
}

std::uint64_t Schedule::total_cycles() const {
  std::uint64_t n = 0;
  for (const auto& [t, c] : entries) n += c;
  return n;
}

DensityMatrix decohere(const DensityMatrix& rho, double t_us, const TimingConfig& timing) {
  if (t_us < 0.0) throw std::invalid_argument("decohere: negative time");
  if (rho.dim() != 2) throw std::invalid_argument("decohere: state must be dim 2");
  double x = t_us / timing.lifetime_tau_us;
  double d = timing.decay_law == DecayLaw::Exponential ? std::exp(-x)
                                                       : std::exp(-x * x / 2.0);
  Matrix m = rho.entries();
  m(0, 1) *= d;
  m(1, 0) *= d;
  return DensityMatrix(m);
}

Matrix residual_rotation_unitary(const NoiseConfig& noise) {
  const auto& a = noise.residual_rotation_rad;
  return qcore::pauli_rotation(1, a[0]) * qcore::pauli_rotation(2, a[1]) *
         qcore::pauli_rotation(3, a[2]);
}

FiberTransit fiber_transit(const DensityMatrix& photon, const NoiseConfig& noise,
                           Xoshiro256& rng) {
  if (photon.dim() != 2) throw std::invalid_argument("fiber_transit: state must be dim 2");
  bool survived = rng.bernoulli(noise.fiber_transmission);
  return {survived, qcore::apply_unitary(photon, residual_rotation_unitary(noise))};
}

// ---------------------------------------------------------------------------
// Cycle kernel: everything about a cycle that does not depend on the dice is
// precomputed once, so the trial loop is pure sampling.
// ---------------------------------------------------------------------------

namespace {

struct BornTable {
  std::array<double, 3> p0{};  // P(outcome 0) per analyzer setting
};

BornTable born_table(const DensityMatrix& photon) {
  BornTable t;
  for (tomo::Setting s : tomo::kAllSettings) {
    auto projs = tomo::setting_projectors(s);
    t.p0[static_cast<std::size_t>(s)] =
        std::clamp((photon.entries() * projs[0]).trace().real(), 0.0, 1.0);
  }
  return t;
}

Matrix kron2(const Matrix& a, const Matrix& b) {
  Matrix out(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
  return out;
}

// Which excitation sits at node B when a fake herald fires.
enum class BBranch { None, Mixed, PoleUp, PoleDown };

struct TargetKernel {
  protocol::TargetState target;
  double p_plus = 0.0;   // steered BSM outcome probs, both photons at the PBS
  double p_minus = 0.0;
  DensityMatrix state_plus;   // stored B state after feed-forward and hold
  DensityMatrix state_minus;
  BornTable born_plus;   // photon-4 statistics per herald sign
  BornTable born_minus;
  double p2_h = 0.0;     // P(photon 2 measures H), for fake-coincidence polarization

  TargetKernel()
      : target(protocol::target_state(protocol::Target::Up)),
        state_plus(DensityMatrix::maximally_mixed(2)),
        state_minus(DensityMatrix::maximally_mixed(2)) {}
};

struct CycleKernel {
  TimingConfig timing;
  double eta_a = 0.0;
  double eta_b = 0.0;
  // A preparation loop
  double p_d1 = 0.0;    // real or fake D1 click per A write trial
  double p_real = 0.0;  // P(real | D1)
  std::uint64_t max_a_trials = 0;
  // B loop event streams, per write trial
  double p_pair = 0.0;
  double p_double = 0.0;
  double p_noise_a = 0.0;
  double p_fake_bsm = 0.0;  // per BSM detector
  double det_b = 0.0;       // detection of a fiber-surviving B photon
  double trans = 0.0;
  double q4 = 0.0;  // fake click per photon-4 analyzer port
  double trial_b_us = 0.0;
  BornTable born_mixed;
  BornTable born_up;
  BornTable born_down;
  bool inject_sigma_z = false;
};

TargetKernel make_target_kernel(const protocol::TargetState& target, const NoiseConfig& noise,
                                const TimingConfig& timing, bool inject_sigma_z) {
  TargetKernel k;
  k.target = target;

  auto rsp = protocol::project_photon(protocol::make_rsp_pair(), protocol::perp_state(target));
  DensityMatrix held = decohere(rsp.spinwave, timing.hold_a_us, timing);
  DensityMatrix photon2 = protocol::readout_map(held);
  k.p2_h = std::clamp(photon2(0, 0).real(), 0.0, 1.0);

  Matrix rot = kron2(residual_rotation_unitary(noise), Matrix::Identity(2, 2));
  DensityMatrix pair = qcore::apply_unitary(protocol::make_entangled_pair_b().joint, rot);

  auto steered = protocol::pbs_bsm_steered(photon2, pair);
  k.p_plus = steered.p_phi_plus;
  k.p_minus = steered.p_phi_minus;

  auto finish = [&](const DensityMatrix& b, BellOutcome o) {
    DensityMatrix corrected = protocol::feed_forward(b, o);
    if (inject_sigma_z) corrected = qcore::apply_unitary(corrected, qcore::pauli::z());
    return decohere(corrected, timing.hold_a_us, timing);
  };
  k.state_plus = finish(steered.b_given_plus, BellOutcome::PhiPlus);
  k.state_minus = finish(steered.b_given_minus, BellOutcome::PhiMinus);
  k.born_plus = born_table(protocol::readout_map(k.state_plus));
  k.born_minus = born_table(protocol::readout_map(k.state_minus));
  return k;
}

CycleKernel make_cycle_kernel(const NoiseConfig& noise, const TimingConfig& timing,
                              bool inject_sigma_z) {
  noise.validate();
  timing.validate();
  CycleKernel k;
  k.timing = timing;
  k.eta_a = noise.eta_a;
  k.eta_b = noise.eta_b;
  k.inject_sigma_z = inject_sigma_z;

  double q1 = std::min(1.0, noise.dark_count_prob + noise.background_prob);
  k.p_d1 = noise.p_a + (1.0 - noise.p_a) * q1;
  k.p_real = k.p_d1 > 0.0 ? noise.p_a / k.p_d1 : 0.0;
  k.max_a_trials = static_cast<std::uint64_t>(timing.window_us() / timing.trial_a_us);

  k.p_pair = noise.p_pair_b;
  // Leading-order thermal statistics; meaningless in the deterministic-pair
  // idealization, so switched off there.
  k.p_double = noise.p_pair_b < 0.5 ? noise.p_pair_b * noise.p_pair_b : 0.0;
  k.p_noise_a = std::min(1.0, noise.readout_noise_factor * noise.p_a);
  k.p_fake_bsm = std::min(1.0, noise.dark_count_prob + noise.background_prob / 2.0);
  k.det_b = std::min(1.0, noise.detection_after_fiber());
  k.trans = noise.fiber_transmission;
  k.q4 = std::min(1.0, noise.dark_count_prob + noise.background_prob / 2.0);
  k.trial_b_us = timing.trial_b_us();

  k.born_mixed = born_table(DensityMatrix::maximally_mixed(2));
  k.born_up = born_table(DensityMatrix::pure(qcore::Ket{1.0, 0.0}));
  k.born_down = born_table(DensityMatrix::pure(qcore::Ket{0.0, 1.0}));
  return k;
}

struct CycleOutcome {
  TrialRecord record;
  std::uint64_t b_trials = 0;
  bool pair_created = false;
  std::uint64_t pair_wait_trials = 0;
  int herald_sign = -1;         // 0 = PhiPlus, 1 = PhiMinus
  BBranch branch = BBranch::None;  // excitation at B behind the herald
  bool is_ab = false;
  bool counted4 = false;
  int basis = -1;
  int outcome4 = -1;
};

CycleOutcome simulate_cycle(const CycleKernel& k, const TargetKernel& tk, Xoshiro256& rng,
                            std::uint64_t cycle_index) {
  CycleOutcome out;
  TrialRecord& r = out.record;
  r.cycle = cycle_index;
  int basis = static_cast<int>(rng.below(3));
  r.basis = basis;
  out.basis = basis;

  // --- node A preparation loop ---
  std::uint64_t ka = rng.geometric(k.p_d1);
  if (ka > k.max_a_trials) {
    r.cls = TrialClass::NoPrep;
    return out;
  }
  r.d1 = true;
  r.t_prep_us = static_cast<double>(ka) * k.timing.trial_a_us;
  r.cls = TrialClass::PrepOnly;
  bool real_prep = rng.bernoulli(k.p_real);

  std::uint64_t max_b = static_cast<std::uint64_t>(
      std::max(0.0, (k.timing.window_us() - r.t_prep_us) / k.trial_b_us));
  if (max_b == 0) return out;

  // --- node B write loop ---
  // Five independent per-trial event streams; everything in between is
  // skipped with exact geometric waiting times. The A readout runs once per
  // B trial, but a lone retrieved photon has no observable effect, so the
  // eta_a draw is deferred to event trials.
  std::uint64_t next_pair = rng.geometric(k.p_pair);
  std::uint64_t next_double = rng.geometric(k.p_double);
  std::uint64_t next_noise = rng.geometric(k.p_noise_a);
  std::uint64_t next_fake2 = rng.geometric(k.p_fake_bsm);
  std::uint64_t next_fake3 = rng.geometric(k.p_fake_bsm);

  bool herald = false;
  BellOutcome outcome = BellOutcome::NoHerald;
  TrialClass herald_class = TrialClass::PrepOnly;
  BBranch branch = BBranch::None;

  auto fake_sign = [&rng]() {
    return rng.bernoulli(0.5) ? BellOutcome::PhiPlus : BellOutcome::PhiMinus;
  };

  while (true) {
    std::uint64_t m = std::min({next_pair, next_double, next_noise, next_fake2, next_fake3});
    if (m > max_b) {
      out.b_trials = max_b;
      break;
    }
    bool pair1 = m == next_pair;
    bool pair2 = m == next_double;
    bool noi_a = m == next_noise;
    bool fake2 = m == next_fake2;
    bool fake3 = m == next_fake3;

    bool bexists = pair1 || pair2;
    if (bexists && !out.pair_created) {
      out.pair_created = true;
      out.pair_wait_trials = m;
      r.wait_b_us = static_cast<double>(m) * k.trial_b_us;
    }

    int ndet = 0;
    if (pair2) {
      ndet = (rng.bernoulli(k.trans) && rng.bernoulli(k.det_b) ? 1 : 0) +
             (rng.bernoulli(k.trans) && rng.bernoulli(k.det_b) ? 1 : 0);
    } else if (pair1) {
      ndet = rng.bernoulli(k.trans) && rng.bernoulli(k.det_b) ? 1 : 0;
    }
    bool sig2 = real_prep && rng.bernoulli(k.eta_a);

    if (pair1 && !pair2 && ndet == 1 && sig2) {
      // Genuine two-photon interference at the PBS.
      double u = rng.uniform();
      if (u < tk.p_plus) {
        herald = true;
        outcome = BellOutcome::PhiPlus;
        herald_class = TrialClass::HeraldAB;
        branch = BBranch::None;  // AB handled via the target kernel
      } else if (u < tk.p_plus + tk.p_minus) {
        herald = true;
        outcome = BellOutcome::PhiMinus;
        herald_class = TrialClass::HeraldAB;
        branch = BBranch::None;
      } else if (fake2 || fake3) {
        // Both photons left through one port; a fake click on the other
        // detector completes a false coincidence. The unheralded partial
        // measurement leaves B effectively mixed.
        herald = true;
        outcome = fake_sign();
        herald_class = TrialClass::HeraldDark;
        branch = BBranch::Mixed;
      }
    } else if (ndet == 2) {
      // Two write-out photons from a double excitation at B.
      if (rng.bernoulli(0.5)) {
        herald = true;
        outcome = fake_sign();
        herald_class = TrialClass::HeraldBB;
        branch = BBranch::Mixed;
      } else if (fake2 || fake3) {
        herald = true;
        outcome = fake_sign();
        herald_class = TrialClass::HeraldDark;
        branch = BBranch::Mixed;
      }
    } else if (ndet == 1) {
      // One B photon without a quantum partner. Its H/V "measurement" at the
      // PBS projects a single excitation onto a pole state.
      bool pol3_h = rng.bernoulli(0.5);
      BBranch b_here = pair2 ? BBranch::Mixed : (pol3_h ? BBranch::PoleUp : BBranch::PoleDown);
      if (sig2) {
        // Only reachable alongside a double excitation; classify as BB.
        bool pol2_h = rng.bernoulli(tk.p2_h);
        if (pol2_h == pol3_h) {
          herald = true;
          outcome = fake_sign();
          herald_class = TrialClass::HeraldBB;
          branch = BBranch::Mixed;
        }
      } else if (noi_a) {
        bool poln_h = rng.bernoulli(0.5);
        if (poln_h == pol3_h) {
          herald = true;
          outcome = fake_sign();
          herald_class = TrialClass::HeraldAA;
          branch = b_here;
        }
      } else if (pol3_h ? fake2 : fake3) {
        herald = true;
        outcome = fake_sign();
        herald_class = TrialClass::HeraldDark;
        branch = b_here;
      }
    } else {
      // No B photon at the PBS this trial.
      BBranch b_here = bexists ? BBranch::Mixed : BBranch::None;
      if (sig2 && noi_a) {
        bool pol2_h = rng.bernoulli(tk.p2_h);
        bool poln_h = rng.bernoulli(0.5);
        if (pol2_h != poln_h) {
          herald = true;
          outcome = fake_sign();
          herald_class = TrialClass::HeraldAA;
          branch = b_here;
        }
      } else if (sig2 && !noi_a) {
        bool pol2_h = rng.bernoulli(tk.p2_h);
        if (pol2_h ? fake3 : fake2) {
          herald = true;
          outcome = fake_sign();
          herald_class = TrialClass::HeraldDark;
          branch = b_here;
        }
      } else if (noi_a && !sig2) {
        bool poln_h = rng.bernoulli(0.5);
        if (poln_h ? fake3 : fake2) {
          herald = true;
          outcome = fake_sign();
          herald_class = TrialClass::HeraldDark;
          branch = b_here;
        }
      } else if (fake2 && fake3) {
        herald = true;
        outcome = fake_sign();
        herald_class = TrialClass::HeraldDark;
        branch = b_here;
      }
    }

    if (herald) {
      out.b_trials = m;
      r.cls = herald_class;
      r.d2 = r.d3 = true;
      r.t_herald_us = r.t_prep_us + static_cast<double>(m) * k.trial_b_us;
      r.herald = outcome;
      break;
    }
    if (bexists) {
      // The excitation is spent without a coincidence; the cycle is over.
      out.b_trials = m;
      break;
    }
    // Re-draw the streams that fired; the rest keep their schedule.
    if (pair1) next_pair = m + rng.geometric(k.p_pair);
    if (pair2) next_double = m + rng.geometric(k.p_double);
    if (noi_a) next_noise = m + rng.geometric(k.p_noise_a);
    if (fake2) next_fake2 = m + rng.geometric(k.p_fake_bsm);
    if (fake3) next_fake3 = m + rng.geometric(k.p_fake_bsm);
  }

  if (!herald) return out;

  out.herald_sign = outcome == BellOutcome::PhiPlus ? 0 : 1;
  out.is_ab = herald_class == TrialClass::HeraldAB;
  out.branch = branch;

  // --- photon-4 readout ---
  const BornTable* table = nullptr;
  if (out.is_ab) {
    table = out.herald_sign == 0 ? &tk.born_plus : &tk.born_minus;
  } else {
    switch (branch) {
      case BBranch::Mixed: table = &k.born_mixed; break;
      case BBranch::PoleUp: table = &k.born_up; break;
      case BBranch::PoleDown: table = &k.born_down; break;
      case BBranch::None: break;
    }
  }
  int o4 = -1;
  if (table != nullptr && rng.bernoulli(k.eta_b)) {
    o4 = rng.bernoulli(table->p0[static_cast<std::size_t>(basis)]) ? 0 : 1;
  } else {
    bool f0 = rng.bernoulli(k.q4);
    bool f1 = rng.bernoulli(k.q4);
    if (f0 && f1) o4 = rng.bernoulli(0.5) ? 0 : 1;
    else if (f0) o4 = 0;
    else if (f1) o4 = 1;
  }
  if (o4 >= 0) {
    r.d4 = true;
    r.outcome4 = o4;
    out.counted4 = true;
    out.outcome4 = o4;
  }
  return out;
}

// Integer-only accumulators; parallel reduction stays bit-exact.
struct TargetTally {
  std::uint64_t n_cycles = 0;
  std::array<std::uint64_t, 2> heralds_by_sign{};
  std::uint64_t counts4[2][3][2] = {};
  // AB, Mixed, PoleUp, PoleDown occupation behind heralds with a B excitation
  std::uint64_t branch_counts[2][4] = {};

  void add(const TargetTally& o) {
    n_cycles += o.n_cycles;
    for (int s = 0; s < 2; ++s) {
      heralds_by_sign[static_cast<std::size_t>(s)] +=
          o.heralds_by_sign[static_cast<std::size_t>(s)];
      for (int b = 0; b < 3; ++b)
        for (int v = 0; v < 2; ++v) counts4[s][b][v] += o.counts4[s][b][v];
      for (int b = 0; b < 4; ++b) branch_counts[s][b] += o.branch_counts[s][b];
    }
  }
};

struct Tally {
  std::uint64_t n_cycles = 0;
  std::uint64_t n_prep = 0;
  std::uint64_t n_herald = 0;
  std::uint64_t n_ab = 0, n_aa = 0, n_bb = 0, n_dark = 0;
  std::uint64_t n_triple = 0;
  std::uint64_t total_b_trials = 0;
  std::uint64_t n_pair_cycles = 0;
  std::uint64_t sum_pair_wait_trials = 0;
  std::vector<TargetTally> targets;

  explicit Tally(std::size_t n_targets) : targets(n_targets) {}

  void add(const Tally& o) {
    n_cycles += o.n_cycles;
    n_prep += o.n_prep;
    n_herald += o.n_herald;
    n_ab += o.n_ab;
    n_aa += o.n_aa;
    n_bb += o.n_bb;
    n_dark += o.n_dark;
    n_triple += o.n_triple;
    total_b_trials += o.total_b_trials;
    n_pair_cycles += o.n_pair_cycles;
    sum_pair_wait_trials += o.sum_pair_wait_trials;
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i].add(o.targets[i]);
  }
};

void tally_cycle(Tally& t, std::size_t target_index, const CycleOutcome& o) {
  t.n_cycles += 1;
  TargetTally& tt = t.targets[target_index];
  tt.n_cycles += 1;
  const TrialRecord& r = o.record;
  if (!r.d1) return;
  t.n_prep += 1;
  t.total_b_trials += o.b_trials;
  if (o.pair_created) {
    t.n_pair_cycles += 1;
    t.sum_pair_wait_trials += o.pair_wait_trials;
  }
  if (r.cls == TrialClass::NoPrep || r.cls == TrialClass::PrepOnly) return;
  t.n_herald += 1;
  switch (r.cls) {
    case TrialClass::HeraldAB: t.n_ab += 1; break;
    case TrialClass::HeraldAA: t.n_aa += 1; break;
    case TrialClass::HeraldBB: t.n_bb += 1; break;
    case TrialClass::HeraldDark: t.n_dark += 1; break;
    default: break;
  }
  int s = o.herald_sign;
  tt.heralds_by_sign[static_cast<std::size_t>(s)] += 1;
  if (o.is_ab) {
    tt.branch_counts[s][0] += 1;
  } else {
    switch (o.branch) {
      case BBranch::Mixed: tt.branch_counts[s][1] += 1; break;
      case BBranch::PoleUp: tt.branch_counts[s][2] += 1; break;
      case BBranch::PoleDown: tt.branch_counts[s][3] += 1; break;
      case BBranch::None: break;
    }
  }
  if (o.counted4) {
    t.n_triple += 1;
    tt.counts4[s][o.basis][o.outcome4] += 1;
  }
}

bool should_log(TrialLogMode mode, const TrialRecord& r) {
  switch (mode) {
    case TrialLogMode::None: return false;
    case TrialLogMode::Heralds: return r.d2 && r.d3;
    case TrialLogMode::Preps: return r.d1;
    case TrialLogMode::All: return true;
  }
  return false;
}

}  // namespace

TrialRecord run_cycle(const protocol::TargetState& target, const NoiseConfig& noise,
                      const TimingConfig& timing, Xoshiro256& rng) {
  CycleKernel kernel = make_cycle_kernel(noise, timing, false);
  TargetKernel tk = make_target_kernel(target, noise, timing, false);
  return simulate_cycle(kernel, tk, rng, 0).record;
}

ExperimentResult run_experiment(const Schedule& schedule, const NoiseConfig& noise,
                                const TimingConfig& timing, const RunOptions& options) {
  if (schedule.entries.empty()) throw std::invalid_argument("run_experiment: empty schedule");
  CycleKernel kernel = make_cycle_kernel(noise, timing, options.inject_sigma_z);

  std::vector<TargetKernel> target_kernels;
  std::vector<std::uint64_t> first_cycle;  // flat index of each entry's first cycle
  target_kernels.reserve(schedule.entries.size());
  std::uint64_t total = 0;
  for (const auto& [t, n] : schedule.entries) {
    target_kernels.push_back(
        make_target_kernel(protocol::target_state(t), noise, timing, options.inject_sigma_z));
    first_cycle.push_back(total);
    total += n;
  }
  first_cycle.push_back(total);

  constexpr std::uint64_t kChunk = 16384;
  std::uint64_t n_chunks = total == 0 ? 0 : (total - 1) / kChunk + 1;
  std::vector<Tally> chunk_tallies(n_chunks, Tally(schedule.entries.size()));
  std::vector<std::vector<TrialRecord>> chunk_records(n_chunks);

  auto process_chunk = [&](std::uint64_t c) {
    std::uint64_t begin = c * kChunk;
    std::uint64_t end = std::min(total, begin + kChunk);
    Tally& tally = chunk_tallies[c];
    auto& records = chunk_records[c];
    std::size_t entry = static_cast<std::size_t>(
        std::upper_bound(first_cycle.begin(), first_cycle.end(), begin) -
        first_cycle.begin() - 1);
    for (std::uint64_t f = begin; f < end; ++f) {
      while (f >= first_cycle[entry + 1]) ++entry;
      Xoshiro256 rng(options.seed, f + 1);
      CycleOutcome o = simulate_cycle(kernel, target_kernels[entry], rng, f);
      tally_cycle(tally, entry, o);
      if (should_log(options.log_mode, o.record)) records.push_back(o.record);
    }
  };

  int threads = std::max(1, options.threads);
  if (threads == 1 || n_chunks <= 1) {
    for (std::uint64_t c = 0; c < n_chunks; ++c) process_chunk(c);
  } else {
    std::atomic<std::uint64_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::uint64_t c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) {
          process_chunk(c);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  Tally tally(schedule.entries.size());
  for (const auto& ct : chunk_tallies) tally.add(ct);

  ExperimentResult result;
  RunSummary& s = result.summary;
  s.n_cycles = tally.n_cycles;
  s.n_prep = tally.n_prep;
  s.n_herald = tally.n_herald;
  s.n_herald_ab = tally.n_ab;
  s.n_herald_aa = tally.n_aa;
  s.n_herald_bb = tally.n_bb;
  s.n_herald_dark = tally.n_dark;
  s.n_triple = tally.n_triple;
  s.total_b_trials = tally.total_b_trials;
  s.n_pair_cycles = tally.n_pair_cycles;
  if (s.n_prep > 0) {
    s.p23 = static_cast<double>(s.n_herald) / static_cast<double>(s.n_prep);
    s.p234 = static_cast<double>(s.n_triple) / static_cast<double>(s.n_prep);
  }
  if (s.n_herald > 0) {
    s.herald_ab_fraction = static_cast<double>(s.n_herald_ab) / static_cast<double>(s.n_herald);
    s.herald_aa_fraction = static_cast<double>(s.n_herald_aa) / static_cast<double>(s.n_herald);
    s.herald_bb_fraction = static_cast<double>(s.n_herald_bb) / static_cast<double>(s.n_herald);
  }
  if (s.total_b_trials > 0) {
    s.estimated_success_prob =
        static_cast<double>(s.n_herald_ab) / static_cast<double>(s.total_b_trials);
  }
  if (s.n_pair_cycles > 0) {
    s.mean_prep_time_us = static_cast<double>(tally.sum_pair_wait_trials) *
                          timing.trial_b_us() / static_cast<double>(s.n_pair_cycles);
  }

  for (std::size_t i = 0; i < schedule.entries.size(); ++i) {
    const TargetTally& tt = tally.targets[i];
    TargetRun run;
    run.target = schedule.entries[i].first;
    run.n_cycles = tt.n_cycles;
    run.heralds_by_sign = tt.heralds_by_sign;
    run.heralds = tt.heralds_by_sign[0] + tt.heralds_by_sign[1];
    for (int sign = 0; sign < 2; ++sign) {
      for (tomo::Setting set : tomo::kAllSettings) {
        auto b = static_cast<std::size_t>(set);
        auto& counts = run.dataset_by_sign[static_cast<std::size_t>(sign)][set];
        counts.n0 = tt.counts4[sign][b][0];
        counts.n1 = tt.counts4[sign][b][1];
        run.dataset[set].n0 += counts.n0;
        run.dataset[set].n1 += counts.n1;
      }
      // Exact ensemble average over the B-excitation branches.
      const std::uint64_t* bc = tt.branch_counts[sign];
      std::uint64_t weight = bc[0] + bc[1] + bc[2] + bc[3];
      run.mean_state_weight[static_cast<std::size_t>(sign)] = weight;
      if (weight > 0) {
        const TargetKernel& tk = target_kernels[i];
        Matrix mean = Matrix::Zero(2, 2);
        const DensityMatrix& ab_state = sign == 0 ? tk.state_plus : tk.state_minus;
        mean += static_cast<double>(bc[0]) * ab_state.entries();
        mean += static_cast<double>(bc[1]) *
                DensityMatrix::maximally_mixed(2).entries();
        Matrix up = Matrix::Zero(2, 2), down = Matrix::Zero(2, 2);
        up(0, 0) = 1.0;
        down(1, 1) = 1.0;
        mean += static_cast<double>(bc[2]) * up;
        mean += static_cast<double>(bc[3]) * down;
        run.mean_state[static_cast<std::size_t>(sign)] =
            DensityMatrix(mean / static_cast<double>(weight));
      }
    }
    result.targets.push_back(std::move(run));
  }

  for (auto& records : chunk_records) {
    result.records.insert(result.records.end(), records.begin(), records.end());
  }
  return result;
}

PrepareResult run_prepare_experiment(const Schedule& schedule, const NoiseConfig& noise,
                                     const TimingConfig& timing, const RunOptions& options) {
  if (schedule.entries.empty()) {
    throw std::invalid_argument("run_prepare_experiment: empty schedule");
  }
  noise.validate();
  timing.validate();

  double q1 = std::min(1.0, noise.dark_count_prob + noise.background_prob);
  double p_d1 = noise.p_a + (1.0 - noise.p_a) * q1;
  double p_real = p_d1 > 0.0 ? noise.p_a / p_d1 : 0.0;
  auto max_a_trials = static_cast<std::uint64_t>(timing.window_us() / timing.trial_a_us);
  // The A readout noise photon enters the same analyzer as photon 2.
  double q_port = std::min(1.0, noise.dark_count_prob + noise.background_prob / 2.0 +
                                    noise.readout_noise_factor * noise.p_a / 2.0);

  PrepareResult result;
  result.targets.reserve(schedule.entries.size());
  std::uint64_t flat = 0;
  std::uint64_t sum_prep_trials = 0;
  for (const auto& [t, n] : schedule.entries) {
    PrepareTargetRun run;
    run.target = t;
    run.n_cycles = n;
    BornTable born = born_table(
        DensityMatrix::pure(protocol::target_state(t).ket));
    for (std::uint64_t c = 0; c < n; ++c, ++flat) {
      Xoshiro256 rng(options.seed, flat + 1);
      int basis = static_cast<int>(rng.below(3));
      std::uint64_t ka = rng.geometric(p_d1);
      if (ka > max_a_trials) continue;
      run.n_prep += 1;
      sum_prep_trials += ka;
      bool real = rng.bernoulli(p_real);
      int outcome = -1;
      if (real && rng.bernoulli(noise.eta_a)) {
        outcome = rng.bernoulli(born.p0[static_cast<std::size_t>(basis)]) ? 0 : 1;
      } else {
        bool f0 = rng.bernoulli(q_port);
        bool f1 = rng.bernoulli(q_port);
        if (f0 && f1) outcome = rng.bernoulli(0.5) ? 0 : 1;
        else if (f0) outcome = 0;
        else if (f1) outcome = 1;
      }
      if (outcome >= 0) {
        run.n_detected += 1;
        auto s = static_cast<tomo::Setting>(basis);
        if (outcome == 0) run.dataset[s].n0 += 1;
        else run.dataset[s].n1 += 1;
      }
    }
    result.n_cycles += run.n_cycles;
    result.n_prep += run.n_prep;
    result.targets.push_back(std::move(run));
  }
  if (result.n_prep > 0) {
    result.mean_prep_time_a_us = static_cast<double>(sum_prep_trials) * timing.trial_a_us /
                                 static_cast<double>(result.n_prep);
  }
  return result;
}

std::array<double, 3> bsm_contributions(const NoiseConfig& noise) {
  return {noise.eta_a * noise.p_b, noise.eta_a * noise.p_a, noise.p_b * noise.p_b};
}

double success_probability(const NoiseConfig& noise) {
  return noise.eta_a * noise.p_b / 2.0;
}

double heralding_efficiency(const RunSummary& run, const NoiseConfig& noise) {
  if (run.p23 <= 0.0) throw std::invalid_argument("heralding_efficiency: p23 is zero");
  if (noise.eta_b <= 0.0) throw std::invalid_argument("heralding_efficiency: eta_b is zero");
  return run.p234 / (run.p23 * noise.eta_b);
}

double heralded_fidelity(double fidelity, double eta_her) {
  return fidelity * eta_her;
}

RegimeReport regime_check(const NoiseConfig& noise, double threshold) {
  RegimeReport rep;
  rep.threshold = threshold;
  rep.ratio_pa_pb = noise.p_b > 0.0 ? noise.p_a / noise.p_b
                                    : (noise.p_a == 0.0 ? 0.0 : 1e9);
  rep.ratio_pb_eta = noise.eta_a > 0.0 ? noise.p_b / noise.eta_a
                                       : (noise.p_b == 0.0 ? 0.0 : 1e9);
  rep.first_ok = rep.ratio_pa_pb <= threshold;
  rep.second_ok = rep.ratio_pb_eta <= threshold;
  return rep;
}

double classical_benchmark(std::uint64_t n_runs, std::uint64_t seed) {
  if (n_runs == 0) throw std::invalid_argument("classical_benchmark: need n_runs >= 1");
  Xoshiro256 rng(seed, 0x636c61737369ULL);
  double sum = 0.0;
  for (std::uint64_t i = 0; i < n_runs; ++i) {
    const protocol::TargetState target =
        protocol::target_state(protocol::kAllTargets[i % protocol::kAllTargets.size()]);
    // Haar-random measurement direction.
    double z = 2.0 * rng.uniform() - 1.0;
    double phi = 2.0 * M_PI * rng.uniform();
    double theta = std::acos(std::clamp(z, -1.0, 1.0));
    qcore::Ket m{std::cos(theta / 2.0), std::exp(Complex(0.0, phi)) * std::sin(theta / 2.0)};
    qcore::Ket m_perp{-std::exp(Complex(0.0, -phi)) * std::sin(theta / 2.0),
                      std::cos(theta / 2.0)};
    double p = std::norm(m.overlap(target.ket));
    // Measure, then resend the outcome state.
    sum += rng.bernoulli(p) ? p : std::norm(m_perp.overlap(target.ket));
  }
  return sum / static_cast<double>(n_runs);
}

}  // namespace enstel::simulator
