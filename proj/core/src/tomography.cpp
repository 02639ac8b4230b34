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

#include "enstel/tomography.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace enstel::tomo {

using qcore::Complex;
using qcore::DensityMatrix;
using qcore::Matrix;

namespace {

constexpr double kProbFloor = 1e-15;

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

// sigma_j * sigma_i, indexed [j][i]; the trace-preservation condition reads
// sum_ij chi_ij (sigma_j sigma_i) = I.
const std::array<std::array<Eigen::Matrix2cd, 4>, 4>& pauli_products() {
  static const auto table = [] {
    std::array<std::array<Eigen::Matrix2cd, 4>, 4> t;
    const auto& p = qcore::pauli::all();
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i)
        t[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
            p[static_cast<std::size_t>(j)] * p[static_cast<std::size_t>(i)];
    return t;
  }();
  return table;
}

Eigen::Matrix2cd tp_operator(const Eigen::Matrix4cd& chi) {
  Eigen::Matrix2cd s = Eigen::Matrix2cd::Zero();
  const auto& prod = pauli_products();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      s += chi(i, j) * prod[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
  return ((s + s.adjoint()) / 2.0).eval();
}

// Lower-triangular T with T^dag T = P (P Hermitian PSD), via Cholesky of the
// index-reversed matrix.
template <typename Mat>
Mat reverse_cholesky(const Mat& p, double ridge) {
  const int n = static_cast<int>(p.rows());
  Mat flipped(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) flipped(i, j) = p(n - 1 - i, n - 1 - j);
  flipped += ridge * Mat::Identity(n, n);
  Eigen::LLT<Mat> llt(flipped);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("reverse_cholesky: factorization failed");
  }
  Mat l = llt.matrixL();
  Mat upper(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) upper(i, j) = l(n - 1 - i, n - 1 - j);
  return upper.adjoint();
}

}  // namespace

std::string_view setting_name(Setting s) {
  switch (s) {
    case Setting::HV: return "hv";
    case Setting::PM: return "pm";
    case Setting::RL: return "rl";
  }
  return "?";
}

int setting_axis(Setting s) {
  switch (s) {
    case Setting::HV: return 3;
    case Setting::PM: return 1;
    case Setting::RL: return 2;
  }
  throw std::invalid_argument("setting_axis: bad setting");
}

std::array<qcore::Matrix, 2> setting_projectors(Setting s) {
  return qcore::pauli::eigenprojectors(setting_axis(s));
}

std::uint64_t TomoDataset::total() const {
  std::uint64_t n = 0;
  for (const auto& c : counts) n += c.total();
  return n;
}

void write_datasets(std::ostream& os,
                    std::span<const std::pair<std::string, TomoDataset>> datasets) {
  os << "# state setting outcome count (outcome 0 = +1 eigenstate)\n";
  for (const auto& [label, data] : datasets) {
    for (Setting s : kAllSettings) {
      os << label << ' ' << setting_name(s) << " 0 " << data[s].n0 << '\n';
      os << label << ' ' << setting_name(s) << " 1 " << data[s].n1 << '\n';
    }
  }
}

std::vector<std::pair<std::string, TomoDataset>> read_datasets(std::istream& is) {
  std::vector<std::pair<std::string, TomoDataset>> out;
  auto find = [&out](const std::string& label) -> TomoDataset& {
    for (auto& [l, d] : out) {
      if (l == label) return d;
    }
    out.emplace_back(label, TomoDataset{});
    return out.back().second;
  };
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string label, setting;
    int outcome = 0;
    std::uint64_t count = 0;
    if (!(ls >> label >> setting >> outcome >> count)) {
      throw std::runtime_error("read_datasets: malformed line: " + line);
    }
    Setting s;
    if (setting == "hv") s = Setting::HV;
    else if (setting == "pm") s = Setting::PM;
    else if (setting == "rl") s = Setting::RL;
    else throw std::runtime_error("read_datasets: unknown setting: " + setting);
    auto& sc = find(label)[s];
    if (outcome == 0) sc.n0 = count;
    else if (outcome == 1) sc.n1 = count;
    else throw std::runtime_error("read_datasets: outcome must be 0 or 1");
  }
  return out;
}

ChiMatrix::ChiMatrix(const Eigen::Matrix4cd& entries) : m_(entries) {
  double asym = (m_ - m_.adjoint()).cwiseAbs().maxCoeff();
  if (asym > 1e-10) throw std::invalid_argument("ChiMatrix: not Hermitian");
  m_ = ((m_ + m_.adjoint()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> es(m_, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-9) {
    throw std::invalid_argument("ChiMatrix: negative eigenvalue");
  }
  if (m_.trace().real() > 1.0 + 1e-9) {
    throw std::invalid_argument("ChiMatrix: trace exceeds 1");
  }
}

double ChiMatrix::trace_preservation_defect() const {
  return (tp_operator(m_) - Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff();
}

ChiMatrix chi_identity() {
  Eigen::Matrix4cd m = Eigen::Matrix4cd::Zero();
  m(0, 0) = 1.0;
  return ChiMatrix(m);
}

ChiMatrix chi_from_unitary(const qcore::Matrix& u) {
  if (u.rows() != 2 || u.cols() != 2) throw std::invalid_argument("chi_from_unitary: dim 2 only");
  Eigen::Vector4cd a;
  const auto& p = qcore::pauli::all();
  for (int i = 0; i < 4; ++i) a(i) = (p[static_cast<std::size_t>(i)] * u).trace() / 2.0;
  return ChiMatrix(a * a.adjoint());
}

TomoDataset simulate_counts(const DensityMatrix& rho, std::uint64_t n_per_setting,
                            Xoshiro256& rng) {
  if (n_per_setting < 1) throw std::invalid_argument("simulate_counts: n must be >= 1");
  TomoDataset out;
  for (Setting s : kAllSettings) {
    auto projs = setting_projectors(s);
    double p0 = std::clamp((rho.entries() * projs[0]).trace().real(), 0.0, 1.0);
    std::binomial_distribution<std::uint64_t> binom(n_per_setting, p0);
    std::uint64_t n0 = binom(rng);
    out[s] = {n0, n_per_setting - n0};
  }
  return out;
}

qcore::Matrix linear_inversion(const TomoDataset& data) {
  qcore::BlochVector r;
  for (Setting s : kAllSettings) {
    const auto& c = data[s];
    if (c.total() == 0) {
      throw std::invalid_argument(std::string("linear_inversion: no counts for setting ") +
                                  std::string(setting_name(s)));
    }
    double expval = (static_cast<double>(c.n0) - static_cast<double>(c.n1)) /
                    static_cast<double>(c.total());
    switch (s) {
      case Setting::HV: r.z = expval; break;
      case Setting::PM: r.x = expval; break;
      case Setting::RL: r.y = expval; break;
    }
  }
  return (qcore::pauli::id() + r.x * qcore::pauli::x() + r.y * qcore::pauli::y() +
          r.z * qcore::pauli::z()) /
         2.0;
}

// ---------------------------------------------------------------------------
// State MLE
// ---------------------------------------------------------------------------

namespace {

// rho = T^dag T / tr(T^dag T),  T = [[t0, 0], [t2 + i t3, t1]].
Eigen::Matrix2cd state_gram(const std::array<double, 4>& t) {
  const Complex c(t[2], t[3]);
  Eigen::Matrix2cd g;
  g(0, 0) = t[0] * t[0] + std::norm(c);
  g(0, 1) = std::conj(c) * t[1];
  g(1, 0) = t[1] * c;
  g(1, 1) = t[1] * t[1];
  return g;
}

std::array<Eigen::Matrix2cd, 4> state_gram_derivatives(const std::array<double, 4>& t) {
  const Complex i(0.0, 1.0);
  std::array<Eigen::Matrix2cd, 4> d;
  d[0] << 2.0 * t[0], 0.0, 0.0, 0.0;
  d[1] << 0.0, Complex(t[2], -t[3]), Complex(t[2], t[3]), 2.0 * t[1];
  d[2] << 2.0 * t[2], t[1], t[1], 0.0;
  d[3] << 2.0 * t[3], -i * t[1], i * t[1], 0.0;
  return d;
}

struct SettingProbe {
  Eigen::Matrix2cd proj0;
  Eigen::Matrix2cd proj1;
};

const std::array<SettingProbe, 3>& setting_probes() {
  static const auto probes = [] {
    std::array<SettingProbe, 3> out;
    for (Setting s : kAllSettings) {
      auto p = setting_projectors(s);
      out[static_cast<std::size_t>(s)] = {p[0], p[1]};
    }
    return out;
  }();
  return probes;
}

}  // namespace

double state_likelihood_at(const std::array<double, 4>& t, const TomoDataset& data) {
  Eigen::Matrix2cd g = state_gram(t);
  double n = g.trace().real();
  if (n < 1e-300) return -1e300;
  double ll = 0.0;
  const auto& probes = setting_probes();
  for (Setting s : kAllSettings) {
    const auto& probe = probes[static_cast<std::size_t>(s)];
    double p0 = (g * probe.proj0).trace().real() / n;
    const auto& c = data[s];
    ll += static_cast<double>(c.n0) * safe_log(p0) +
          static_cast<double>(c.n1) * safe_log(1.0 - p0);
  }
  return ll;
}

std::array<double, 4> state_likelihood_gradient(const std::array<double, 4>& t,
                                                const TomoDataset& data) {
  Eigen::Matrix2cd g = state_gram(t);
  double n = g.trace().real();
  auto dg = state_gram_derivatives(t);
  std::array<double, 4> grad{};
  const auto& probes = setting_probes();
  for (Setting s : kAllSettings) {
    const auto& probe = probes[static_cast<std::size_t>(s)];
    double p0 = (g * probe.proj0).trace().real() / n;
    double p1 = 1.0 - p0;
    const auto& c = data[s];
    for (int k = 0; k < 4; ++k) {
      double tr_dg = dg[static_cast<std::size_t>(k)].trace().real();
      double dp0 = ((dg[static_cast<std::size_t>(k)] * probe.proj0).trace().real() -
                    p0 * tr_dg) /
                   n;
      grad[static_cast<std::size_t>(k)] +=
          static_cast<double>(c.n0) / std::max(p0, kProbFloor) * dp0 -
          static_cast<double>(c.n1) / std::max(p1, kProbFloor) * dp0;
    }
  }
  return grad;
}

double state_log_likelihood(const DensityMatrix& rho, const TomoDataset& data) {
  double ll = 0.0;
  for (Setting s : kAllSettings) {
    auto projs = setting_projectors(s);
    double p0 = std::clamp((rho.entries() * projs[0]).trace().real(), 0.0, 1.0);
    const auto& c = data[s];
    ll += static_cast<double>(c.n0) * safe_log(p0) +
          static_cast<double>(c.n1) * safe_log(1.0 - p0);
  }
  return ll;
}

StateReport mle_state(const TomoDataset& data, const MleOptions& options) {
  if (data.total() == 0) {
    // Degenerate likelihood: every state is a maximum. Return the unbiased
    // tie-break.
    return {DensityMatrix::maximally_mixed(2), 0.0, 0, true};
  }

  // Interior starting point: linear inversion with eigenvalues clamped away
  // from zero. Settings with no counts contribute expectation zero.
  qcore::BlochVector r;
  for (Setting s : kAllSettings) {
    const auto& c = data[s];
    if (c.total() == 0) continue;
    double expval = (static_cast<double>(c.n0) - static_cast<double>(c.n1)) /
                    static_cast<double>(c.total());
    switch (s) {
      case Setting::HV: r.z = expval; break;
      case Setting::PM: r.x = expval; break;
      case Setting::RL: r.y = expval; break;
    }
  }
  double len = r.norm();
  if (len > 0.999) {
    double scale = 0.999 / len;
    r.x *= scale;
    r.y *= scale;
    r.z *= scale;
  }
  Eigen::Matrix2cd rho0 = ((qcore::pauli::id() + r.x * qcore::pauli::x() +
                            r.y * qcore::pauli::y() + r.z * qcore::pauli::z()) /
                           2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es(rho0);
  Eigen::Vector2d lam = es.eigenvalues().cwiseMax(5e-4);
  rho0 = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().adjoint();
  rho0 /= rho0.trace().real();

  std::array<double, 4> t{};
  {
    double t1 = std::sqrt(std::max(rho0(1, 1).real(), 1e-6));
    Complex c = rho0(1, 0) / t1;
    double t0sq = rho0(0, 0).real() - std::norm(c);
    t[0] = std::sqrt(std::max(t0sq, 1e-6));
    t[1] = t1;
    t[2] = c.real();
    t[3] = c.imag();
  }

  double ll = state_likelihood_at(t, data);
  double step = 1.0;
  int iter = 0;
  bool converged = false;
  for (; iter < options.max_iterations; ++iter) {
    auto grad = state_likelihood_gradient(t, data);
    double gnorm = std::sqrt(grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2] +
                             grad[3] * grad[3]);
    if (gnorm < 1e-14) {
      converged = true;
      break;
    }
    // Backtracking ascent; accepted steps never decrease the likelihood.
    double trial_step = step * 2.0;
    bool accepted = false;
    for (int back = 0; back < 70; ++back) {
      std::array<double, 4> cand{};
      for (int k = 0; k < 4; ++k) {
        cand[static_cast<std::size_t>(k)] =
            t[static_cast<std::size_t>(k)] +
            trial_step * grad[static_cast<std::size_t>(k)] / gnorm;
      }
      double cand_ll = state_likelihood_at(cand, data);
      if (cand_ll >= ll) {
        double gain = cand_ll - ll;
        t = cand;
        ll = cand_ll;
        step = trial_step;
        accepted = true;
        if (gain <= options.rel_tol * (std::abs(ll) + 1.0)) converged = true;
        break;
      }
      trial_step /= 2.0;
    }
    if (!accepted || converged) {
      converged = true;
      break;
    }
    // The parameterization is scale invariant; keep it O(1).
    double tnorm = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2] + t[3] * t[3]);
    if (tnorm > 0) {
      for (auto& v : t) v /= tnorm;
    }
  }

  Eigen::Matrix2cd g = state_gram(t);
  g /= g.trace().real();
  return {DensityMatrix(g), ll, iter, converged};
}

// ---------------------------------------------------------------------------
// Process MLE
// ---------------------------------------------------------------------------

DensityMatrix apply_chi(const ChiMatrix& chi, const DensityMatrix& rho_in) {
  if (rho_in.dim() != 2) throw std::invalid_argument("apply_chi: input must be dim 2");
  const auto& p = qcore::pauli::all();
  Eigen::Matrix2cd out = Eigen::Matrix2cd::Zero();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      out += chi(i, j) * p[static_cast<std::size_t>(i)] * rho_in.entries() *
             p[static_cast<std::size_t>(j)];
  out = ((out + out.adjoint()) / 2.0).eval();
  return DensityMatrix(out);
}

namespace {

constexpr int kChiParams = 16;

// Lower-triangular complex 4x4 from the 16 real parameters: four real
// diagonal entries first, then (re, im) for each below-diagonal entry in
// row-major order.
Eigen::Matrix4cd chi_factor(const std::array<double, kChiParams>& x) {
  Eigen::Matrix4cd a = Eigen::Matrix4cd::Zero();
  for (int i = 0; i < 4; ++i) a(i, i) = x[static_cast<std::size_t>(i)];
  int k = 4;
  for (int row = 1; row < 4; ++row) {
    for (int col = 0; col < row; ++col) {
      a(row, col) = Complex(x[static_cast<std::size_t>(k)], x[static_cast<std::size_t>(k + 1)]);
      k += 2;
    }
  }
  return a;
}

std::array<double, kChiParams> chi_factor_params(const Eigen::Matrix4cd& a) {
  std::array<double, kChiParams> x{};
  for (int i = 0; i < 4; ++i) x[static_cast<std::size_t>(i)] = a(i, i).real();
  int k = 4;
  for (int row = 1; row < 4; ++row) {
    for (int col = 0; col < row; ++col) {
      x[static_cast<std::size_t>(k)] = a(row, col).real();
      x[static_cast<std::size_t>(k + 1)] = a(row, col).imag();
      k += 2;
    }
  }
  return x;
}

// chi with the constraint applied. In trace-preserving mode the Kraus
// operators are right-normalized by S^(-1/2) (exact constraint elimination);
// otherwise the map is rescaled only if it would increase trace.
Eigen::Matrix4cd constrained_chi(const std::array<double, kChiParams>& x,
                                 bool trace_preserving) {
  Eigen::Matrix4cd a = chi_factor(x);
  Eigen::Matrix4cd chi = a.adjoint() * a;
  Eigen::Matrix2cd s = tp_operator(chi);
  if (trace_preserving) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es(s);
    Eigen::Vector2d lam = es.eigenvalues().cwiseMax(1e-12);
    Eigen::Matrix2cd w = es.eigenvectors() * lam.cwiseSqrt().cwiseInverse().asDiagonal() *
                         es.eigenvectors().adjoint();
    const auto& prod = pauli_products();
    Eigen::Matrix4cd m;
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i)
        m(j, i) = (prod[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] * w)
                      .trace() /
                  2.0;
    chi = (m * chi * m.adjoint()).eval();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es(s, Eigen::EigenvaluesOnly);
    double top = es.eigenvalues().maxCoeff();
    if (top > 1.0) chi /= top;
  }
  return ((chi + chi.adjoint()) / 2.0).eval();
}

struct ProcessProblem {
  // probabilities are linear in chi: p(i,s,o) = Re sum_jk chi_jk basis(i,s,o)(j,k)
  std::vector<Eigen::Matrix4cd> response;  // index = ((input*3)+setting)*2+outcome
  std::vector<double> counts;
  double total_counts = 0.0;

  double log_likelihood(const Eigen::Matrix4cd& chi) const {
    double ll = 0.0;
    for (std::size_t r = 0; r < response.size(); ++r) {
      if (counts[r] == 0.0) continue;
      double p = (chi.array() * response[r].array()).sum().real();
      ll += counts[r] * safe_log(p);
    }
    return ll;
  }
};

ProcessProblem build_problem(std::span<const DensityMatrix> inputs,
                             std::span<const TomoDataset> outputs) {
  const auto& p = qcore::pauli::all();
  ProcessProblem prob;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Setting s : kAllSettings) {
      auto projs = setting_projectors(s);
      for (int o = 0; o < 2; ++o) {
        Eigen::Matrix4cd basis;
        for (int j = 0; j < 4; ++j)
          for (int k = 0; k < 4; ++k)
            basis(j, k) = (p[static_cast<std::size_t>(j)] * inputs[i].entries() *
                           p[static_cast<std::size_t>(k)] * projs[static_cast<std::size_t>(o)])
                              .trace();
        // p = sum_jk chi_jk * basis_jk, an elementwise product-sum.
        prob.response.push_back(basis);
        const auto& c = outputs[i][s];
        prob.counts.push_back(static_cast<double>(o == 0 ? c.n0 : c.n1));
      }
    }
  }
  for (double c : prob.counts) prob.total_counts += c;
  return prob;
}

// Hermitian least-squares seed for the ascent, from empirical frequencies.
Eigen::Matrix4cd least_squares_chi(const ProcessProblem& prob) {
  // 16 real coordinates: 4 diagonal + (re, im) of the strict upper triangle.
  auto coord_matrix = [](int q) {
    Eigen::Matrix4cd m = Eigen::Matrix4cd::Zero();
    if (q < 4) {
      m(q, q) = 1.0;
      return m;
    }
    int k = 4;
    for (int row = 0; row < 4; ++row) {
      for (int col = row + 1; col < 4; ++col) {
        if (k == q) {
          m(row, col) = 1.0;
          m(col, row) = 1.0;
          return m;
        }
        if (k + 1 == q) {
          m(row, col) = Complex(0.0, 1.0);
          m(col, row) = Complex(0.0, -1.0);
          return m;
        }
        k += 2;
      }
    }
    return m;
  };

  const int rows = static_cast<int>(prob.response.size());
  Eigen::MatrixXd design(rows, kChiParams);
  Eigen::VectorXd target(rows);
  for (int r = 0; r < rows; ++r) {
    double setting_total = prob.counts[static_cast<std::size_t>(r)] +
                           prob.counts[static_cast<std::size_t>(r ^ 1)];
    target(r) = setting_total > 0
                    ? prob.counts[static_cast<std::size_t>(r)] / setting_total
                    : 0.5;
    for (int q = 0; q < kChiParams; ++q) {
      design(r, q) = (coord_matrix(q).array() * prob.response[static_cast<std::size_t>(r)].array())
                         .sum()
                         .real();
    }
  }
  Eigen::VectorXd sol = design.colPivHouseholderQr().solve(target);
  Eigen::Matrix4cd chi = Eigen::Matrix4cd::Zero();
  for (int q = 0; q < kChiParams; ++q) chi += sol(q) * coord_matrix(q);
  return ((chi + chi.adjoint()) / 2.0).eval();
}

}  // namespace

double process_log_likelihood(const ChiMatrix& chi, std::span<const DensityMatrix> inputs,
                              std::span<const TomoDataset> outputs) {
  return build_problem(inputs, outputs).log_likelihood(chi.entries());
}

ProcessReport mle_process(std::span<const DensityMatrix> inputs,
                          std::span<const TomoDataset> outputs, const MleOptions& options) {
  if (inputs.size() != outputs.size() || inputs.empty()) {
    throw std::invalid_argument("mle_process: need one output dataset per input state");
  }
  // The inputs must affinely span the state space, else chi is not
  // identifiable.
  Eigen::MatrixXd span_check(static_cast<int>(inputs.size()), 4);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto r = qcore::bloch_vector(inputs[i]);
    span_check(static_cast<int>(i), 0) = 1.0;
    span_check(static_cast<int>(i), 1) = r.x;
    span_check(static_cast<int>(i), 2) = r.y;
    span_check(static_cast<int>(i), 3) = r.z;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(span_check);
  lu.setThreshold(1e-8);
  if (lu.rank() < 4) {
    throw std::invalid_argument("mle_process: rank-deficient input set");
  }

  ProcessProblem prob = build_problem(inputs, outputs);
  if (prob.total_counts == 0.0) {
    // Degenerate likelihood: return the fully depolarizing tie-break.
    return {ChiMatrix(Eigen::Matrix4cd::Identity() / 4.0), 0.0, 0, true};
  }

  // Seed: PSD projection of the least-squares estimate, pulled slightly into
  // the interior so the factorization is well conditioned.
  Eigen::Matrix4cd seed = least_squares_chi(prob);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> es(seed);
  Eigen::Vector4d lam = es.eigenvalues().cwiseMax(1e-4);
  seed = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().adjoint();
  std::array<double, kChiParams> x =
      chi_factor_params(reverse_cholesky<Eigen::Matrix4cd>(seed, 1e-10));

  auto objective = [&](const std::array<double, kChiParams>& params) {
    return prob.log_likelihood(constrained_chi(params, options.trace_preserving));
  };

  double ll = objective(x);
  double step = 0.1;
  int iter = 0;
  bool converged = false;
  std::array<double, kChiParams> grad{};
  for (; iter < options.max_iterations; ++iter) {
    // Central-difference gradient; the constraint map makes the analytic
    // form unwieldy and the problem is only 16-dimensional.
    double gnorm2 = 0.0;
    for (int q = 0; q < kChiParams; ++q) {
      double h = 1e-6 * (1.0 + std::abs(x[static_cast<std::size_t>(q)]));
      auto xp = x;
      auto xm = x;
      xp[static_cast<std::size_t>(q)] += h;
      xm[static_cast<std::size_t>(q)] -= h;
      grad[static_cast<std::size_t>(q)] = (objective(xp) - objective(xm)) / (2.0 * h);
      gnorm2 += grad[static_cast<std::size_t>(q)] * grad[static_cast<std::size_t>(q)];
    }
    double gnorm = std::sqrt(gnorm2);
    if (gnorm < 1e-12) {
      converged = true;
      break;
    }
    double trial_step = step * 2.0;
    bool accepted = false;
    for (int back = 0; back < 70; ++back) {
      auto cand = x;
      for (int q = 0; q < kChiParams; ++q) {
        cand[static_cast<std::size_t>(q)] += trial_step * grad[static_cast<std::size_t>(q)] / gnorm;
      }
      double cand_ll = objective(cand);
      if (cand_ll >= ll) {
        double gain = cand_ll - ll;
        x = cand;
        ll = cand_ll;
        step = trial_step;
        accepted = true;
        if (gain <= options.rel_tol * (std::abs(ll) + 1.0)) converged = true;
        break;
      }
      trial_step /= 2.0;
    }
    if (!accepted || converged) {
      converged = true;
      break;
    }
  }

  ChiMatrix chi(constrained_chi(x, options.trace_preserving));
  return {chi, ll, iter, converged};
}

double process_fidelity(const ChiMatrix& chi, const ChiMatrix& chi_ideal) {
  double f = (chi.entries() * chi_ideal.entries()).trace().real();
  return std::clamp(f, 0.0, 1.0);
}

FidelityStats average_state_fidelity(
    std::span<const std::pair<DensityMatrix, DensityMatrix>> pairs) {
  FidelityStats out;
  out.per_pair.reserve(pairs.size());
  for (const auto& [a, b] : pairs) out.per_pair.push_back(qcore::fidelity(a, b));
  if (!out.per_pair.empty()) {
    double sum = 0.0;
    for (double f : out.per_pair) sum += f;
    out.mean = sum / static_cast<double>(out.per_pair.size());
  }
  return out;
}

namespace {

std::uint64_t poisson_resample(std::uint64_t count, Xoshiro256& rng) {
  if (count == 0) return 0;
  std::poisson_distribution<std::uint64_t> pois(static_cast<double>(count));
  return pois(rng);
}

double sample_stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double bootstrap_error(const TomoDataset& data, int n_resamples, Xoshiro256& rng,
                       const std::function<double(const TomoDataset&)>& metric) {
  if (n_resamples < 100) throw std::invalid_argument("bootstrap_error: need >= 100 resamples");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n_resamples));
  for (int i = 0; i < n_resamples; ++i) {
    for (int attempt = 0;; ++attempt) {
      TomoDataset resampled;
      for (Setting s : kAllSettings) {
        resampled[s] = {poisson_resample(data[s].n0, rng), poisson_resample(data[s].n1, rng)};
      }
      try {
        values.push_back(metric(resampled));
        break;
      } catch (const std::exception&) {
        if (attempt >= 10) throw;
      }
    }
  }
  return sample_stddev(values);
}

double bootstrap_error(std::span<const TomoDataset> bundle, int n_resamples, Xoshiro256& rng,
                       const std::function<double(std::span<const TomoDataset>)>& metric) {
  if (n_resamples < 100) throw std::invalid_argument("bootstrap_error: need >= 100 resamples");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n_resamples));
  std::vector<TomoDataset> resampled(bundle.size());
  for (int i = 0; i < n_resamples; ++i) {
    for (int attempt = 0;; ++attempt) {
      for (std::size_t d = 0; d < bundle.size(); ++d) {
        for (Setting s : kAllSettings) {
          resampled[d][s] = {poisson_resample(bundle[d][s].n0, rng),
                             poisson_resample(bundle[d][s].n1, rng)};
        }
      }
      try {
        values.push_back(metric(resampled));
        break;
      } catch (const std::exception&) {
        if (attempt >= 10) throw;
      }
    }
  }
  return sample_stddev(values);
}

}  // namespace enstel::tomo
