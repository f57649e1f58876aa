#pragma once
// Complex linear algebra, seeded random numbers and a central-difference
// gradient oracle.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace wiretap {

using cdouble = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;
using RMatrix = Eigen::MatrixXd;

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SingularMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

inline void require_same_dims(Eigen::Index ra, Eigen::Index ca, Eigen::Index rb, Eigen::Index cb,
                              const char* where) {
  if (ra != rb || ca != cb) {
    throw InvalidArgument(std::string(where) + ": dimension mismatch (" + std::to_string(ra) + "x" +
                          std::to_string(ca) + " vs " + std::to_string(rb) + "x" + std::to_string(cb) +
                          ")");
  }
}

/// SplitMix64 finaliser; used to derive independent child seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Portable seeded generator.
///
/// The raw stream is std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. Uniform doubles take the top 53 bits; normals use the
/// Marsaglia polar method (std::normal_distribution is implementation
/// defined and therefore not used). Child streams are keyed:
/// child(k).seed() == splitmix64(seed ^ splitmix64(k)).
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64+polar";

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Rng child(std::uint64_t key) const { return Rng(splitmix64(seed_ ^ splitmix64(key))); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// I.i.d. circularly-symmetric complex Gaussian entries with per-entry
/// variance `variance` (each part variance/2).
inline CMatrix sample_complex_gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double variance) {
  if (!(variance > 0.0)) throw InvalidArgument("sample_complex_gaussian: variance must be > 0");
  require(rows >= 0 && cols >= 0, "sample_complex_gaussian: negative dimension");
  const double sd = std::sqrt(variance / 2.0);
  CMatrix out(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double re = rng.normal() * sd;
      const double im = rng.normal() * sd;
      out(i, j) = cdouble(re, im);
    }
  return out;
}

inline constexpr double kRankTolerance = 1e-12;

/// min ||A x - b||_2 for a full-column-rank A (rows >= cols).
inline CVector solve_least_squares(const CMatrix& a, const CVector& b) {
  if (a.rows() < a.cols()) throw InvalidArgument("solve_least_squares: need rows >= cols");
  if (b.size() != a.rows()) throw InvalidArgument("solve_least_squares: rhs length mismatch");
  if (a.cols() == 0) return CVector(0);
  Eigen::JacobiSVD<CMatrix> svd(a);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smax > 0.0) || smin / smax < kRankTolerance) {
    throw SingularMatrix("solve_least_squares: rank-deficient matrix (sigma_min/sigma_max = " +
                         std::to_string(smax > 0.0 ? smin / smax : 0.0) + ")");
  }
  return a.colPivHouseholderQr().solve(b);
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
template <class F>
RVector finite_diff_gradient(F&& f, const RVector& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_gradient: h must be > 0");
  RVector g(x.size());
  RVector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x(i);
    probe(i) = xi + h;
    const double fp = f(static_cast<const RVector&>(probe));
    probe(i) = xi - h;
    const double fm = f(static_cast<const RVector&>(probe));
    probe(i) = xi;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Stacked real view [Re(vec(M)); Im(vec(M))] of a complex matrix.
inline RVector stack_real(const CMatrix& m) {
  const Eigen::Index n = m.size();
  RVector out(2 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out(k) = m.data()[k].real();
    out(n + k) = m.data()[k].imag();
  }
  return out;
}

inline CMatrix unstack_real(const RVector& v, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index n = rows * cols;
  if (v.size() != 2 * n) throw InvalidArgument("unstack_real: length mismatch");
  CMatrix m(rows, cols);
  for (Eigen::Index k = 0; k < n; ++k) m.data()[k] = cdouble(v(k), v(n + k));
  return m;
}

inline double relative_error(const RVector& approx, const RVector& reference) {
  const double denom = reference.norm();
  const double diff = (approx - reference).norm();
  if (denom == 0.0) return diff;
  return diff / denom;
}

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace wiretap
