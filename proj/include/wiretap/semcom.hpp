#pragma once
// Differentiable toy semantic encoders with power normalisation, BCR
// bookkeeping and the legitimate receiver's decoder.

#include "wiretap/image.hpp"
#include "wiretap/numerics.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace wiretap {

enum class EncoderKind { Linear, Mlp };
enum class PowerNormalization { Global, PerStream };

inline std::string to_string(EncoderKind k) { return k == EncoderKind::Linear ? "linear" : "mlp"; }
inline EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "linear") return EncoderKind::Linear;
  if (s == "mlp") return EncoderKind::Mlp;
  throw InvalidArgument("unknown encoder kind '" + s + "'");
}

struct DegenerateCodeword : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// T = BCR * N / N_t, required to be an integer.
inline int channel_uses_for_bcr(int source_dim, int n_tx, double bcr) {
  require(source_dim > 0 && n_tx > 0 && bcr > 0.0 && std::isfinite(bcr), "channel_uses_for_bcr: arguments must be positive and finite");
  const double t = bcr * source_dim / n_tx;
  const double rounded = std::round(t);
  if (rounded < 1.0 || std::abs(t - rounded) > 1e-9 * std::max(1.0, t)) {
    throw InvalidArgument("BCR " + std::to_string(bcr) + " with N=" + std::to_string(source_dim) +
                          " and N_t=" + std::to_string(n_tx) + " gives non-integer T=" + std::to_string(t));
  }
  return static_cast<int>(rounded);
}

struct EncoderConfig {
  EncoderKind kind = EncoderKind::Linear;
  int height = 16;
  int width = 16;
  int n_tx = 2;
  int channel_uses = 32;  // T
  std::uint64_t seed = 1;
  int hidden = 256;  // mlp only
  PowerNormalization normalization = PowerNormalization::Global;

  int input_dim() const noexcept { return 3 * height * width; }
  int codeword_length() const noexcept { return n_tx * channel_uses; }
  double bcr() const noexcept { return static_cast<double>(codeword_length()) / input_dim(); }
};

/// Power-normalised encoder output. `gains[g]` is the factor applied to the
/// raw output of normalisation group g (one group, or one per stream).
struct Codeword {
  CVector symbols;
  std::vector<double> gains;

  Eigen::Index size() const noexcept { return symbols.size(); }
  double average_power() const { return symbols.squaredNorm() / static_cast<double>(symbols.size()); }
};

/// Glass-box encoder handle. Immutable after construction; weights are a
/// pure function of the config, so Alice's and Eve's copies are identical.
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg) : cfg_(cfg) {
    require(cfg.height > 0 && cfg.width > 0 && cfg.n_tx > 0 && cfg.channel_uses > 0, "Encoder: bad dimensions");
    Rng rng(cfg.seed);
    const Eigen::Index n = cfg.input_dim(), l = cfg.codeword_length();
    if (cfg.kind == EncoderKind::Linear) {
      set_complex(sample_complex_gaussian(rng, l, n, 1.0 / static_cast<double>(n)));
    } else {
      require(cfg.hidden > 0, "Encoder: hidden width must be positive");
      u_.resize(cfg.hidden, n);
      const double su = 1.0 / std::sqrt(static_cast<double>(n));
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < cfg.hidden; ++i) u_(i, j) = su * rng.normal();
      set_complex(sample_complex_gaussian(rng, l, cfg.hidden, 1.0 / static_cast<double>(cfg.hidden)));
    }
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  EncoderKind kind() const noexcept { return cfg_.kind; }
  int input_dim() const noexcept { return cfg_.input_dim(); }
  int codeword_length() const noexcept { return cfg_.codeword_length(); }
  int n_tx() const noexcept { return cfg_.n_tx; }
  int channel_uses() const noexcept { return cfg_.channel_uses; }

  /// Output weights: W (linear) or V (mlp).
  CMatrix output_weights() const {
    CMatrix m(wr_.rows(), wr_.cols());
    m.real() = wr_;
    m.imag() = wi_;
    return m;
  }
  const RMatrix& hidden_weights() const noexcept { return u_; }

  Codeword encode(const Image& x) const { return forward(as_input(x)).codeword; }
  Codeword encode(const RVector& x) const { return forward(x).codeword; }

  /// Forward pass with everything the vector-Jacobian product needs.
  struct Linearization {
    RVector input;
    CVector raw;
    RVector hidden;  // tanh activations (mlp)
    std::vector<double> norms;
    Codeword codeword;
  };

  Linearization linearize(const RVector& x) const { return forward(x); }
  Linearization linearize(const Image& x) const { return forward(as_input(x)); }

  /// d Re<c, encode(x)> / dx with <c, z> = c^H z, including the
  /// normalisation Jacobian.
  RVector vjp(const Linearization& f, const CVector& cotangent) const {
    if (cotangent.size() != codeword_length()) throw InvalidArgument("encode_vjp: cotangent length mismatch");
    // Back through z_g = a_g * raw_g / ||raw_g|| for each group g.
    CVector g_raw(cotangent.size());
    for_each_group([&](int group, Eigen::Index idx, Eigen::Index stride, Eigen::Index count) {
      const double nraw = f.norms[group];
      const double a = std::sqrt(static_cast<double>(count));
      double proj = 0.0;  // Re(u^H c) over the group
      for (Eigen::Index k = 0; k < count; ++k) {
        const Eigen::Index i = idx + k * stride;
        proj += (std::conj(f.raw(i)) * cotangent(i)).real() / nraw;
      }
      for (Eigen::Index k = 0; k < count; ++k) {
        const Eigen::Index i = idx + k * stride;
        g_raw(i) = (a / nraw) * (cotangent(i) - (f.raw(i) / nraw) * proj);
      }
    });
    // Re(W^H g) = Wr^T Re(g) + Wi^T Im(g).
    RVector g_pre = wr_.transpose() * g_raw.real() + wi_.transpose() * g_raw.imag();
    if (cfg_.kind == EncoderKind::Linear) return g_pre;
    const RVector gh = g_pre.array() * (1.0 - f.hidden.array().square());
    return u_.transpose() * gh;
  }

  RVector vjp(const RVector& x, const CVector& cotangent) const { return vjp(forward(x), cotangent); }
  RVector vjp(const Image& x, const CVector& cotangent) const { return vjp(as_input(x), cotangent); }

 private:

  RVector as_input(const Image& x) const {
    if (x.height() != cfg_.height || x.width() != cfg_.width)
      throw InvalidArgument("encode: image is " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                            ", encoder expects " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width));
    return x.as_vector();
  }

  void set_complex(const CMatrix& m) {
    wr_ = m.real();
    wi_ = m.imag();
  }

  /// Visits the normalisation groups as strided index sets.
  template <class Fn>
  void for_each_group(Fn&& fn) const {
    const Eigen::Index l = codeword_length();
    if (cfg_.normalization == PowerNormalization::Global) {
      fn(0, Eigen::Index{0}, Eigen::Index{1}, l);
    } else {
      for (int s = 0; s < cfg_.n_tx; ++s) fn(s, Eigen::Index{s}, Eigen::Index{cfg_.n_tx}, Eigen::Index{cfg_.channel_uses});
    }
  }

  Linearization forward(const RVector& x) const {
    if (x.size() != input_dim()) throw InvalidArgument("encode: input dimension mismatch");
    Linearization f;
    f.input = x;
    RVector pre;
    if (cfg_.kind == EncoderKind::Linear) {
      pre = x;
    } else {
      f.hidden = (u_ * x).array().tanh();
      pre = f.hidden;
    }
    f.raw.resize(codeword_length());
    f.raw.real() = wr_ * pre;
    f.raw.imag() = wi_ * pre;
    const int groups = cfg_.normalization == PowerNormalization::Global ? 1 : cfg_.n_tx;
    f.norms.assign(groups, 0.0);
    f.codeword.symbols.resize(codeword_length());
    f.codeword.gains.assign(groups, 0.0);
    for_each_group([&](int group, Eigen::Index idx, Eigen::Index stride, Eigen::Index count) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < count; ++k) s += std::norm(f.raw(idx + k * stride));
      const double nraw = std::sqrt(s);
      if (!(nraw >= 1e-30)) throw DegenerateCodeword("encode: raw codeword has zero norm");
      f.norms[group] = nraw;
      const double gain = std::sqrt(static_cast<double>(count)) / nraw;
      f.codeword.gains[group] = gain;
      for (Eigen::Index k = 0; k < count; ++k) f.codeword.symbols(idx + k * stride) = gain * f.raw(idx + k * stride);
    });
    return f;
  }

  EncoderConfig cfg_;
  RMatrix wr_, wi_;  // output weights split into real and imaginary parts
  RMatrix u_;        // mlp hidden weights
};

/// s_t[i] = z[t * N_t + i]; column t of the result is s_t.
inline CMatrix reshape_codeword(const CVector& z, int n_tx, int channel_uses) {
  if (z.size() != static_cast<Eigen::Index>(n_tx) * channel_uses)
    throw InvalidArgument("reshape_codeword: length " + std::to_string(z.size()) + " != N_t*T = " +
                          std::to_string(n_tx * channel_uses));
  return Eigen::Map<const CMatrix>(z.data(), n_tx, channel_uses);
}

inline CVector flatten_transmit(const CMatrix& s) { return Eigen::Map<const CVector>(s.data(), s.size()); }

struct DecodeResult {
  Image image;
  bool flagged = false;
  std::string warning;
};

struct BobDecoderConfig {
  int mlp_steps = 1500;
  double mlp_learning_rate = 1e-2;
  double mlp_tolerance = 1e-6;  // relative squared residual considered converged
};

namespace detail {

inline RMatrix stacked_real_system(const Encoder& enc) {
  const CMatrix w = enc.output_weights();
  RMatrix a(2 * w.rows(), w.cols());
  a.topRows(w.rows()) = w.real();
  a.bottomRows(w.rows()) = w.imag();
  return a;
}

}  // namespace detail

/// Legitimate decoder. Linear: least-squares (least-norm when
/// underdetermined) solve of the stacked real system after undoing the
/// normalisation gain. Mlp: gradient-descent inversion of the encoder.
/// Output is clipped to [0,1].
inline DecodeResult bob_decode(const Encoder& enc, const CVector& zhat, std::span<const double> gains,
                               const BobDecoderConfig& cfg = {}) {
  const auto& ec = enc.config();
  if (zhat.size() != enc.codeword_length()) throw InvalidArgument("bob_decode: codeword length mismatch");
  DecodeResult out;
  if (zhat.norm() == 0.0) {
    out.image = Image(ec.height, ec.width, 0.0);
    out.flagged = true;
    out.warning = "zero codeword: least-norm solution";
    return out;
  }
  if (enc.kind() == EncoderKind::Linear) {
    const int groups = ec.normalization == PowerNormalization::Global ? 1 : ec.n_tx;
    if (static_cast<int>(gains.size()) != groups) throw InvalidArgument("bob_decode: gain count mismatch");
    CVector raw = zhat;
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw(i) /= gains[groups == 1 ? 0 : i % ec.n_tx];
    const RMatrix a = detail::stacked_real_system(enc);
    RVector b(2 * raw.size());
    b.head(raw.size()) = raw.real();
    b.tail(raw.size()) = raw.imag();
    Eigen::CompleteOrthogonalDecomposition<RMatrix> cod(a);
    cod.setThreshold(kRankTolerance);
    if (cod.rank() < std::min(a.rows(), a.cols())) throw SingularMatrix("bob_decode: rank-deficient encoder");
    if (a.rows() < a.cols()) {
      out.flagged = true;
      out.warning = "underdetermined system: least-norm solution";
    }
    const RVector x = cod.solve(b);
    out.image = Image::from_vector(ec.height, ec.width, x).clipped();
    return out;
  }

  // Decoder-by-inversion: Adam on ||encode(x) - zhat||^2.
  RVector x = RVector::Constant(enc.input_dim(), 0.5);
  RVector m = RVector::Zero(x.size()), v = RVector::Zero(x.size());
  RVector best = x;
  double best_loss = std::numeric_limits<double>::infinity();
  const double ref = zhat.squaredNorm();
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int k = 1; k <= cfg.mlp_steps; ++k) {
    const CVector e = enc.encode(x).symbols - zhat;
    const double loss = e.squaredNorm();
    if (loss < best_loss) {
      best_loss = loss;
      best = x;
    }
    if (loss / ref < cfg.mlp_tolerance) break;
    const RVector g = enc.vjp(x, 2.0 * e);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    const double c1 = 1 - std::pow(b1, k), c2 = 1 - std::pow(b2, k);
    x.array() -= cfg.mlp_learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
  const double final_loss = (enc.encode(x).symbols - zhat).squaredNorm();
  if (final_loss < best_loss) {
    best_loss = final_loss;
    best = x;
  }
  if (best_loss / ref >= cfg.mlp_tolerance) {
    out.flagged = true;
    out.warning = "decoder-by-inversion did not converge within budget";
  }
  out.image = Image::from_vector(ec.height, ec.width, best).clipped();
  return out;
}

}  // namespace wiretap
