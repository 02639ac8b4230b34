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
#include <complex>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace enstel::qcore {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

/// Pure-state amplitude vector of dimension 2 or 4. Normalized on
/// construction; immutable afterwards.
class Ket {
 public:
  explicit Ket(Vector amplitudes);
  Ket(std::initializer_list<Complex> amplitudes);

  int dim() const { return static_cast<int>(amp_.size()); }
  const Vector& amplitudes() const { return amp_; }
  Complex operator[](int i) const { return amp_(i); }

  /// <this|other>
  Complex overlap(const Ket& other) const;

 private:
  Vector amp_;
};

/// Hermitian, PSD, trace-one matrix of dimension 2 or 4. The constructor
/// re-hermitizes ((M + M^dag)/2) and rescales the trace instead of rejecting
/// numerical noise at the 1e-13 level, because reconstruction output is only
/// approximately Hermitian. Genuinely invalid input (trace far from one,
/// eigenvalue below -1e-9) throws std::invalid_argument.
class DensityMatrix {
 public:
  explicit DensityMatrix(const Matrix& entries);

  static DensityMatrix pure(const Ket& psi);
  static DensityMatrix maximally_mixed(int dim);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& entries() const { return m_; }
  Complex operator()(int r, int c) const { return m_(r, c); }

 private:
  struct unchecked_tag {};
  DensityMatrix(Matrix m, unchecked_tag) : m_(std::move(m)) {}
  Matrix m_;
};

/// Bloch-sphere coordinates of a dim-2 state; |r| <= 1 up to numerical slop.
struct BlochVector {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double norm() const;
};

namespace pauli {

/// sigma_0 .. sigma_3 = I, X, Y, Z.
const std::array<Matrix, 4>& all();
const Matrix& id();
const Matrix& x();
const Matrix& y();
const Matrix& z();

/// Rank-1 eigenprojectors of sigma_axis (axis in {1,2,3}), ordered
/// (+1 eigenstate, -1 eigenstate). axis=3 is the computational (H/V) basis.
std::array<Matrix, 2> eigenprojectors(int axis);

}  // namespace pauli

/// Kronecker product; first argument is the slower-varying subsystem.
DensityMatrix tensor(const DensityMatrix& a, const DensityMatrix& b);

enum class Subsystem { First, Second };

/// Reduced state of the kept subsystem of a dim-4 state.
DensityMatrix partial_trace(const DensityMatrix& rho, Subsystem keep);

/// u rho u^dag. Throws if u is not unitary to 1e-10.
DensityMatrix apply_unitary(const DensityMatrix& rho, const Matrix& u);

/// Uhlmann fidelity {tr[(sqrt(rho1) rho2 sqrt(rho1))^(1/2)]}^2, via
/// eigendecomposition of the Hermitian square roots with eigenvalue clamping
/// at zero.
double fidelity(const DensityMatrix& rho1, const DensityMatrix& rho2);

BlochVector bloch_vector(const DensityMatrix& rho);

/// Inverse of bloch_vector: (I + r . sigma) / 2.
DensityMatrix from_bloch(const BlochVector& r);

/// Born probabilities tr(rho P_i) for a complete projector set
/// (sum P_i = I to 1e-10, else throws). Values clamped to [0, 1].
std::vector<double> measure_projectors(const DensityMatrix& rho,
                                       std::span<const Matrix> projectors);

/// 2x2 rotation exp(-i theta/2 sigma_axis), axis in {1,2,3}.
Matrix pauli_rotation(int axis, double theta);

}  // namespace enstel::qcore
