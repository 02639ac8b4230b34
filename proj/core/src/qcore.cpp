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

#include "enstel/qcore.hpp"

#include <cmath>
#include <stdexcept>

namespace enstel::qcore {

namespace {

constexpr double kHermTol = 1e-10;
constexpr double kTraceTol = 1e-6;
constexpr double kEigTol = 1e-9;

void check_dim(int d, const char* what) {
  if (d != 2 && d != 4) {
    throw std::invalid_argument(std::string(what) + ": dimension must be 2 or 4");
  }
}

// Smallest eigenvalue of a Hermitian matrix.
double min_eigenvalue(const Matrix& m) {
  if (m.rows() == 2) {
    // Closed form keeps the constructor cheap in the trial loop.
    double t = m(0, 0).real() + m(1, 1).real();
    double det = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)).real();
    double disc = std::sqrt(std::max(0.0, t * t / 4.0 - det));
    return t / 2.0 - disc;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Hermitian square root with eigenvalues clamped at zero.
Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() *
         es.eigenvectors().adjoint();
}

}  // namespace

Ket::Ket(Vector amplitudes) : amp_(std::move(amplitudes)) {
  check_dim(dim(), "Ket");
  double n = amp_.norm();
  if (n < 1e-12) throw std::invalid_argument("Ket: zero vector");
  amp_ /= n;
}

Ket::Ket(std::initializer_list<Complex> amplitudes)
    : Ket(Eigen::Map<const Vector>(std::data(amplitudes),
                                   static_cast<Eigen::Index>(amplitudes.size()))) {}

Complex Ket::overlap(const Ket& other) const {
  if (dim() != other.dim()) throw std::invalid_argument("Ket::overlap: dimension mismatch");
  return amp_.dot(other.amp_);  // Eigen's dot conjugates the left argument
}

DensityMatrix::DensityMatrix(const Matrix& entries) : m_(entries) {
  if (m_.rows() != m_.cols()) throw std::invalid_argument("DensityMatrix: not square");
  check_dim(dim(), "DensityMatrix");
  double asym = (m_ - m_.adjoint()).cwiseAbs().maxCoeff();
  if (asym > kHermTol) throw std::invalid_argument("DensityMatrix: not Hermitian");
  m_ = ((m_ + m_.adjoint()) / 2.0).eval();
  double tr = m_.trace().real();
  if (std::abs(tr - 1.0) > kTraceTol) {
    throw std::invalid_argument("DensityMatrix: trace is not 1");
  }
  m_ /= tr;
  if (min_eigenvalue(m_) < -kEigTol) {
    throw std::invalid_argument("DensityMatrix: negative eigenvalue");
  }
}

DensityMatrix DensityMatrix::pure(const Ket& psi) {
  Matrix m = psi.amplitudes() * psi.amplitudes().adjoint();
  return DensityMatrix(m, unchecked_tag{});
}

DensityMatrix DensityMatrix::maximally_mixed(int dim) {
  check_dim(dim, "maximally_mixed");
  Matrix m = Matrix::Identity(dim, dim) / static_cast<double>(dim);
  return DensityMatrix(m, unchecked_tag{});
}

double BlochVector::norm() const { return std::sqrt(x * x + y * y + z * z); }

namespace pauli {

const std::array<Matrix, 4>& all() {
  static const std::array<Matrix, 4> ops = [] {
    std::array<Matrix, 4> p;
    for (auto& m : p) m = Matrix(2, 2);
    const Complex i(0.0, 1.0);
    p[0] << 1, 0, 0, 1;
    p[1] << 0, 1, 1, 0;
    p[2] << 0, -i, i, 0;
    p[3] << 1, 0, 0, -1;
    return p;
  }();
  return ops;
}

const Matrix& id() { return all()[0]; }
const Matrix& x() { return all()[1]; }
const Matrix& y() { return all()[2]; }
const Matrix& z() { return all()[3]; }

std::array<Matrix, 2> eigenprojectors(int axis) {
  if (axis < 1 || axis > 3) throw std::invalid_argument("eigenprojectors: axis must be 1..3");
  const Matrix& s = all()[static_cast<std::size_t>(axis)];
  Matrix plus = (Matrix::Identity(2, 2) + s) / 2.0;
  Matrix minus = (Matrix::Identity(2, 2) - s) / 2.0;
  return {plus, minus};
}

}  // namespace pauli

DensityMatrix tensor(const DensityMatrix& a, const DensityMatrix& b) {
  if (a.dim() != 2 || b.dim() != 2) {
    throw std::invalid_argument("tensor: both factors must be dim 2");
  }
  Matrix out(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b.entries();
  return DensityMatrix(out);
}

DensityMatrix partial_trace(const DensityMatrix& rho, Subsystem keep) {
  if (rho.dim() != 4) throw std::invalid_argument("partial_trace: input must be dim 4");
  Matrix out = Matrix::Zero(2, 2);
  // Index (i, j) with i the first (slow) subsystem, j the second.
  for (int i = 0; i < 2; ++i) {
    for (int ip = 0; ip < 2; ++ip) {
      for (int k = 0; k < 2; ++k) {
        if (keep == Subsystem::First) {
          out(i, ip) += rho(2 * i + k, 2 * ip + k);
        } else {
          out(i, ip) += rho(2 * k + i, 2 * k + ip);
        }
      }
    }
  }
  return DensityMatrix(out);
}

DensityMatrix apply_unitary(const DensityMatrix& rho, const Matrix& u) {
  if (u.rows() != rho.dim() || u.cols() != rho.dim()) {
    throw std::invalid_argument("apply_unitary: dimension mismatch");
  }
  double dev = (u.adjoint() * u - Matrix::Identity(u.rows(), u.cols()))
                   .cwiseAbs()
                   .maxCoeff();
  if (dev > 1e-10) throw std::invalid_argument("apply_unitary: matrix is not unitary");
  return DensityMatrix(u * rho.entries() * u.adjoint());
}

double fidelity(const DensityMatrix& rho1, const DensityMatrix& rho2) {
  if (rho1.dim() != rho2.dim()) throw std::invalid_argument("fidelity: dimension mismatch");
  Matrix s1 = psd_sqrt(rho1.entries());
  Matrix inner = s1 * rho2.entries() * s1;
  Eigen::SelfAdjointEigenSolver<Matrix> es(inner, Eigen::EigenvaluesOnly);
  double sum = 0.0;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    sum += std::sqrt(std::max(0.0, es.eigenvalues()(i)));
  }
  double f = sum * sum;
  return std::clamp(f, 0.0, 1.0);
}

BlochVector bloch_vector(const DensityMatrix& rho) {
  if (rho.dim() != 2) throw std::invalid_argument("bloch_vector: state must be dim 2");
  BlochVector r;
  r.x = (rho.entries() * pauli::x()).trace().real();
  r.y = (rho.entries() * pauli::y()).trace().real();
  r.z = (rho.entries() * pauli::z()).trace().real();
  return r;
}

DensityMatrix from_bloch(const BlochVector& r) {
  if (r.norm() > 1.0 + 1e-9) throw std::invalid_argument("from_bloch: |r| > 1");
  Matrix m = (pauli::id() + r.x * pauli::x() + r.y * pauli::y() + r.z * pauli::z()) / 2.0;
  return DensityMatrix(m);
}

std::vector<double> measure_projectors(const DensityMatrix& rho,
                                       std::span<const Matrix> projectors) {
  Matrix sum = Matrix::Zero(rho.dim(), rho.dim());
  for (const auto& p : projectors) {
    if (p.rows() != rho.dim() || p.cols() != rho.dim()) {
      throw std::invalid_argument("measure_projectors: projector dimension mismatch");
    }
    sum += p;
  }
  if ((sum - Matrix::Identity(rho.dim(), rho.dim())).cwiseAbs().maxCoeff() > 1e-10) {
    throw std::invalid_argument("measure_projectors: projectors do not sum to identity");
  }
  std::vector<double> probs;
  probs.reserve(projectors.size());
  for (const auto& p : projectors) {
    double v = (rho.entries() * p).trace().real();
    probs.push_back(std::clamp(v, 0.0, 1.0));
  }
  return probs;
}

Matrix pauli_rotation(int axis, double theta) {
  if (axis < 1 || axis > 3) throw std::invalid_argument("pauli_rotation: axis must be 1..3");
  const Matrix& s = pauli::all()[static_cast<std::size_t>(axis)];
  const Complex i(0.0, 1.0);
  return std::cos(theta / 2.0) * pauli::id() - i * std::sin(theta / 2.0) * s;
}

}  // namespace enstel::qcore
