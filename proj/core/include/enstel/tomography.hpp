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
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "enstel/qcore.hpp"
#include "enstel/rng.hpp"

// Single-qubit state and process reconstruction from polarization counts in
// the three mutually unbiased analysis bases.
namespace enstel::tomo {

/// Analysis basis: HV is the computational (sigma_z) eigenbasis, PM the
/// sigma_x eigenbasis, RL the sigma_y eigenbasis. Outcome 0 is the +1
/// eigenstate of the corresponding Pauli (H, +, R).
enum class Setting { HV = 0, PM = 1, RL = 2 };

inline constexpr std::array<Setting, 3> kAllSettings = {Setting::HV, Setting::PM, Setting::RL};

std::string_view setting_name(Setting s);

/// Pauli axis (1=x, 2=y, 3=z) measured by a setting.
int setting_axis(Setting s);

/// Rank-1 projectors (outcome 0, outcome 1) for a setting.
std::array<qcore::Matrix, 2> setting_projectors(Setting s);

struct SettingCounts {
  std::uint64_t n0 = 0;
  std::uint64_t n1 = 0;
  std::uint64_t total() const { return n0 + n1; }
};

/// Outcome counts for one reconstructed state, one entry per analysis basis.
struct TomoDataset {
  std::array<SettingCounts, 3> counts{};

  SettingCounts& operator[](Setting s) { return counts[static_cast<std::size_t>(s)]; }
  const SettingCounts& operator[](Setting s) const {
    return counts[static_cast<std::size_t>(s)];
  }
  std::uint64_t total() const;
};

/// Plain text serialization, one line per (state-label, setting, outcome,
/// count). Lines starting with '#' are comments.
void write_datasets(std::ostream& os,
                    std::span<const std::pair<std::string, TomoDataset>> datasets);
std::vector<std::pair<std::string, TomoDataset>> read_datasets(std::istream& is);

/// 4x4 Hermitian PSD process matrix in the sigma_0..sigma_3 basis:
/// rho_out = sum_ij chi_ij sigma_i rho_in sigma_j.
class ChiMatrix {
 public:
  explicit ChiMatrix(const Eigen::Matrix4cd& entries);

  const Eigen::Matrix4cd& entries() const { return m_; }
  qcore::Complex operator()(int i, int j) const { return m_(i, j); }

  /// max |sum_ij chi_ij sigma_j sigma_i - I|; zero for a trace-preserving map.
  double trace_preservation_defect() const;

 private:
  Eigen::Matrix4cd m_;
};

/// chi of the ideal identity process (chi_00 = 1).
ChiMatrix chi_identity();

/// chi of the unitary channel rho -> u rho u^dag.
ChiMatrix chi_from_unitary(const qcore::Matrix& u);

struct MleOptions {
  int max_iterations = 5000;
  double rel_tol = 1e-10;        // relative log-likelihood change
  bool trace_preserving = true;  // process MLE only; false allows trace-non-increasing maps
};

struct StateReport {
  qcore::DensityMatrix estimate;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct ProcessReport {
  ChiMatrix estimate;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Draws binomial counts from the Born probabilities of `rho` for each of the
/// three settings, n per setting.
TomoDataset simulate_counts(const qcore::DensityMatrix& rho, std::uint64_t n_per_setting,
                            Xoshiro256& rng);

/// (I + r_hat . sigma)/2 from empirical expectation values. May violate
/// positivity; returned raw for diagnostics. Throws if a setting has no
/// counts.
qcore::Matrix linear_inversion(const TomoDataset& data);

/// Maximum-likelihood state estimate over physical states, using the
/// factorized parameterization rho = T^dag T / tr(T^dag T) with
/// lower-triangular T and monotone gradient ascent with backtracking.
StateReport mle_state(const TomoDataset& data, const MleOptions& options = {});

/// Multinomial log-likelihood of `data` under state `rho`.
double state_log_likelihood(const qcore::DensityMatrix& rho, const TomoDataset& data);

/// Analytic gradient of the state likelihood in the 4 T-parameters,
/// exposed for the finite-difference cross-check.
std::array<double, 4> state_likelihood_gradient(const std::array<double, 4>& t,
                                                const TomoDataset& data);
double state_likelihood_at(const std::array<double, 4>& t, const TomoDataset& data);

/// The defining sum rho_out = sum_ij chi_ij sigma_i rho_in sigma_j,
/// re-hermitized. The result has trace 1 only for trace-preserving chi.
qcore::DensityMatrix apply_chi(const ChiMatrix& chi, const qcore::DensityMatrix& rho_in);

/// Joint maximum-likelihood process estimate from the datasets measured
/// behind each input state. Positivity via a Cholesky-style factorization
/// chi = A^dag A; trace preservation eliminated exactly by construction
/// (right-normalizing the Kraus operators), not penalized.
ProcessReport mle_process(std::span<const qcore::DensityMatrix> inputs,
                          std::span<const TomoDataset> outputs,
                          const MleOptions& options = {});

/// Joint log-likelihood of the output datasets under `chi`.
double process_log_likelihood(const ChiMatrix& chi,
                              std::span<const qcore::DensityMatrix> inputs,
                              std::span<const TomoDataset> outputs);

/// Re tr(chi chi_ideal), clamped to [0, 1].
double process_fidelity(const ChiMatrix& chi, const ChiMatrix& chi_ideal);

struct FidelityStats {
  std::vector<double> per_pair;
  double mean = 0.0;
};

/// Uhlmann fidelity of each pair plus the arithmetic mean.
FidelityStats average_state_fidelity(
    std::span<const std::pair<qcore::DensityMatrix, qcore::DensityMatrix>> pairs);

/// Standard error of `metric` under Poisson resampling of the raw counts.
/// A resample on which the metric throws is retried with a fresh draw
/// (at most 10 times) before the whole call gives up.
double bootstrap_error(const TomoDataset& data, int n_resamples, Xoshiro256& rng,
                       const std::function<double(const TomoDataset&)>& metric);

/// Same, for metrics of a whole six-dataset bundle (process fidelity).
double bootstrap_error(std::span<const TomoDataset> bundle, int n_resamples, Xoshiro256& rng,
                       const std::function<double(std::span<const TomoDataset>)>& metric);

}  // namespace enstel::tomo
