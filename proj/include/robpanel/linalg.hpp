#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <sstream>
#include <string>

namespace robpanel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace linalg {

// Right singular vector of the smallest singular value of `x`, i.e. the
// direction along which the columns of x are (nearly) linearly dependent.
inline Vector null_direction(const Matrix& x) {
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinV);
  return svd.matrixV().col(svd.matrixV().cols() - 1);
}

inline std::string format_vector(const Vector& v) {
  std::ostringstream os;
  os.precision(6);
  os << '(';
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k) os << ", ";
    os << v(k);
  }
  os << ')';
  return os.str();
}

// Solves min_b sum_j w_j (y_j - x_j' b)^2 through a column-pivoted Householder
// QR of diag(sqrt(w)) x. Returns nullopt when the weighted design is rank
// deficient.
inline std::optional<Vector> weighted_least_squares(const Matrix& x, const Vector& y,
                                                    const Vector* weights = nullptr) {
  Matrix a = x;
  Vector b = y;
  if (weights) {
    const Vector root = weights->array().sqrt().matrix();
    a = root.asDiagonal() * x;
    b = root.cwiseProduct(y);
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  if (qr.rank() < x.cols()) return std::nullopt;
  return Vector(qr.solve(b));
}

// Relative conditioning test used for K x K systems that are inverted
// explicitly (ESL information matrix, cross-product inverses).
inline bool numerically_singular(const Matrix& m, double rel_tol = 1e-12) {
  const auto k = static_cast<double>(m.rows());
  const double scale = std::abs(m.trace()) / k;
  if (!(scale > 0.0)) return true;
  return std::abs(m.determinant()) < rel_tol * std::pow(scale, k);
}

}  // namespace linalg
}  // namespace robpanel
