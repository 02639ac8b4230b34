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

#include "enstel/protocol.hpp"

#include <cmath>
#include <stdexcept>

namespace enstel::protocol {

using qcore::Complex;
using qcore::DensityMatrix;
using qcore::Ket;
using qcore::Matrix;

namespace {

const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
const Complex kI(0.0, 1.0);

// Bell-state amplitudes c[a][b] of |a>_2 |b>_3, for PhiPlus and PhiMinus.
std::array<std::array<Complex, 2>, 2> bell_amplitudes(BellOutcome s) {
  double sign = (s == BellOutcome::PhiMinus) ? -1.0 : 1.0;
  return {{{kInvSqrt2, 0.0}, {0.0, sign * kInvSqrt2}}};
}

}  // namespace

TargetState target_state(Target t) {
  switch (t) {
    case Target::Up:
      return {t, Ket{1.0, 0.0}};
    case Target::Down:
      return {t, Ket{0.0, 1.0}};
    case Target::Plus:
      return {t, Ket{kInvSqrt2, kInvSqrt2}};
    case Target::Minus:
      return {t, Ket{kInvSqrt2, -kInvSqrt2}};
    case Target::R:
      return {t, Ket{kInvSqrt2, kI * kInvSqrt2}};
    case Target::L:
      return {t, Ket{kInvSqrt2, -kI * kInvSqrt2}};
  }
  throw std::invalid_argument("target_state: bad label");
}

TargetState custom_target(Complex alpha, Complex beta) {
  return {Target::Up, Ket{alpha, beta}};
}

std::string_view target_name(Target t) {
  switch (t) {
    case Target::Up: return "up";
    case Target::Down: return "down";
    case Target::Plus: return "plus";
    case Target::Minus: return "minus";
    case Target::R: return "r";
    case Target::L: return "l";
  }
  return "?";
}

std::optional<Target> parse_target(std::string_view name) {
  for (Target t : kAllTargets) {
    if (name == target_name(t)) return t;
  }
  return std::nullopt;
}

std::string_view bell_outcome_name(BellOutcome o) {
  switch (o) {
    case BellOutcome::PhiPlus: return "phi_plus";
    case BellOutcome::PhiMinus: return "phi_minus";
    case BellOutcome::NoHerald: return "no_herald";
  }
  return "?";
}

AtomPhotonPair make_rsp_pair() {
  // (|H down> - |V up>)/sqrt2, index = 2*photon + spinwave.
  Ket psi{0.0, kInvSqrt2, -kInvSqrt2, 0.0};
  return {DensityMatrix::pure(psi)};
}

AtomPhotonPair make_entangled_pair_b() {
  // (|H up> + |V down>)/sqrt2.
  Ket psi{kInvSqrt2, 0.0, 0.0, kInvSqrt2};
  return {DensityMatrix::pure(psi)};
}

qcore::Ket perp_state(const TargetState& target) {
  return Ket{std::conj(target.beta()), -std::conj(target.alpha())};
}

Projection project_photon(const AtomPhotonPair& pair, const qcore::Ket& proj) {
  if (proj.dim() != 2) throw std::invalid_argument("project_photon: projector must be dim 2");
  const auto& rho = pair.joint;
  // M(b,b') = <proj, b| rho |proj, b'>
  Matrix m = Matrix::Zero(2, 2);
  for (int b = 0; b < 2; ++b)
    for (int bp = 0; bp < 2; ++bp)
      for (int a = 0; a < 2; ++a)
        for (int ap = 0; ap < 2; ++ap)
          m(b, bp) += std::conj(proj[a]) * rho(2 * a + b, 2 * ap + bp) * proj[ap];
  double p = m.trace().real();
  if (p < 1e-15) throw std::runtime_error("project_photon: conditioning on a zero-probability outcome");
  return {p, DensityMatrix(m / p)};
}

qcore::DensityMatrix readout_map(const qcore::DensityMatrix& spinwave) {
  if (spinwave.dim() != 2) throw std::invalid_argument("readout_map: state must be dim 2");
  return spinwave;
}

BsmDistribution pbs_bsm(const qcore::DensityMatrix& joint23) {
  if (joint23.dim() != 4) throw std::invalid_argument("pbs_bsm: input must be dim 4");
  auto born = [&](BellOutcome s) {
    auto c = bell_amplitudes(s);
    Complex p = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int ap = 0; ap < 2; ++ap)
          for (int bp = 0; bp < 2; ++bp)
            p += std::conj(c[a][b]) * joint23(2 * a + b, 2 * ap + bp) * c[ap][bp];
    return std::max(0.0, p.real());
  };
  BsmDistribution d{};
  d.p_phi_plus = born(BellOutcome::PhiPlus);
  d.p_phi_minus = born(BellOutcome::PhiMinus);
  d.p_no_herald = std::max(0.0, 1.0 - d.p_phi_plus - d.p_phi_minus);
  return d;
}

SteeredBsm pbs_bsm_steered(const qcore::DensityMatrix& photon2,
                           const qcore::DensityMatrix& pair3b) {
  if (photon2.dim() != 2 || pair3b.dim() != 4) {
    throw std::invalid_argument("pbs_bsm_steered: expected dim-2 photon and dim-4 pair");
  }
  // Unnormalized conditional operator on B for Bell outcome s:
  //   O_s(beta,beta') = sum_{a,a',b,b'} rho2(a,a') conj(c_ab) c_a'b'
  //                     pair((b,beta),(b',beta'))
  auto conditional = [&](BellOutcome s) {
    auto c = bell_amplitudes(s);
    Matrix o = Matrix::Zero(2, 2);
    for (int beta = 0; beta < 2; ++beta)
      for (int betap = 0; betap < 2; ++betap)
        for (int a = 0; a < 2; ++a)
          for (int ap = 0; ap < 2; ++ap)
            for (int b = 0; b < 2; ++b)
              for (int bp = 0; bp < 2; ++bp)
                o(beta, betap) += photon2(a, ap) * std::conj(c[a][b]) * c[ap][bp] *
                                  pair3b(2 * b + beta, 2 * bp + betap);
    return o;
  };

  Matrix o_plus = conditional(BellOutcome::PhiPlus);
  Matrix o_minus = conditional(BellOutcome::PhiMinus);
  SteeredBsm out{
      std::max(0.0, o_plus.trace().real()),
      std::max(0.0, o_minus.trace().real()),
      0.0,
      DensityMatrix::maximally_mixed(2),
      DensityMatrix::maximally_mixed(2),
  };
  out.p_no_herald = std::max(0.0, 1.0 - out.p_phi_plus - out.p_phi_minus);
  if (out.p_phi_plus > 1e-15) out.b_given_plus = DensityMatrix(o_plus / o_plus.trace());
  if (out.p_phi_minus > 1e-15) out.b_given_minus = DensityMatrix(o_minus / o_minus.trace());
  return out;
}

qcore::DensityMatrix feed_forward(const qcore::DensityMatrix& state_b, BellOutcome outcome) {
  switch (outcome) {
    case BellOutcome::PhiPlus:
      return state_b;
    case BellOutcome::PhiMinus:
      return qcore::apply_unitary(state_b, qcore::pauli::z());
    case BellOutcome::NoHerald:
      break;
  }
  throw std::invalid_argument("feed_forward: NoHerald is not a correctable outcome");
}

TeleportResult ideal_teleport(const TargetState& target) {
  auto rsp = project_photon(make_rsp_pair(), perp_state(target));
  DensityMatrix photon2 = readout_map(rsp.spinwave);
  SteeredBsm bsm = pbs_bsm_steered(photon2, make_entangled_pair_b().joint);
  return {
      bsm.p_phi_plus,
      bsm.p_phi_minus,
      feed_forward(bsm.b_given_plus, BellOutcome::PhiPlus),
      feed_forward(bsm.b_given_minus, BellOutcome::PhiMinus),
  };
}

}  // namespace enstel::protocol
