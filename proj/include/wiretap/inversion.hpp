#pragma once
// Joint semantic/channel inversion: loss, analytic gradients, the three
// update modes and a plain Adam implementation.

#include "wiretap/channel.hpp"
#include "wiretap/image.hpp"
#include "wiretap/numerics.hpp"
#include "wiretap/semcom.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace wiretap {

enum class UpdateMode { ImageOnly, ChannelOnly, Joint };

inline std::string to_string(UpdateMode m) {
  switch (m) {
    case UpdateMode::ImageOnly: return "image_only";
    case UpdateMode::ChannelOnly: return "channel_only";
    case UpdateMode::Joint: return "joint";
  }
  return "?";
}

inline UpdateMode update_mode_from_string(const std::string& s) {
  if (s == "image_only") return UpdateMode::ImageOnly;
  if (s == "channel_only") return UpdateMode::ChannelOnly;
  if (s == "joint") return UpdateMode::Joint;
  throw InvalidArgument("unknown update mode '" + s + "'");
}

inline bool updates_image(UpdateMode m) { return m != UpdateMode::ChannelOnly; }
inline bool updates_channel(UpdateMode m) { return m != UpdateMode::ImageOnly; }

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct InversionHyper {
  double lambda_tv = 5e-4;
  double lr_x = 5e-2;
  double lr_g = 1e-2;
  AdamConfig adam;
};

/// Everything a burst reads and writes. G~'s second moment keeps the real
/// and imaginary parts' accumulators in the real and imaginary slots.
struct OptimState {
  int height = 0;
  int width = 0;
  RVector x;  // CHW, unconstrained
  CMatrix g;  // N_e x N_t
  RVector m_x, v_x;
  CMatrix m_g, v_g;
  std::uint64_t t_x = 0, t_g = 0;
  InversionHyper hyper;

  static OptimState create(const Image& x0, const CMatrix& g0, InversionHyper h = {}) {
    OptimState s;
    s.height = x0.height();
    s.width = x0.width();
    s.x = x0.as_vector();
    s.g = g0;
    s.m_x = RVector::Zero(s.x.size());
    s.v_x = RVector::Zero(s.x.size());
    s.m_g = CMatrix::Zero(g0.rows(), g0.cols());
    s.v_g = CMatrix::Zero(g0.rows(), g0.cols());
    s.hyper = h;
    s.validate();
    return s;
  }

  void validate() const {
    require(height > 0 && width > 0 && x.size() == 3 * height * width, "OptimState: image shape mismatch");
    require(m_x.size() == x.size() && v_x.size() == x.size(), "OptimState: image moments mismatch");
    require(m_g.rows() == g.rows() && m_g.cols() == g.cols() && v_g.rows() == g.rows() && v_g.cols() == g.cols(),
            "OptimState: channel moments mismatch");
    require(hyper.lambda_tv >= 0.0, "OptimState: lambda_tv must be >= 0");
    // Zero rates are allowed so a group can be pinned while its moments run.
    require(hyper.lr_x >= 0.0 && hyper.lr_g >= 0.0, "OptimState: learning rates must be >= 0");
  }

  Image image() const { return Image::from_vector(height, width, x); }
  Image snapshot() const { return image().clipped(); }

  bool operator==(const OptimState& o) const {
    return height == o.height && width == o.width && x == o.x && g == o.g && m_x == o.m_x && v_x == o.v_x &&
           m_g == o.m_g && v_g == o.v_g && t_x == o.t_x && t_g == o.t_g && hyper.lambda_tv == o.hyper.lambda_tv &&
           hyper.lr_x == o.hyper.lr_x && hyper.lr_g == o.hyper.lr_g && hyper.adam.beta1 == o.hyper.adam.beta1 &&
           hyper.adam.beta2 == o.hyper.adam.beta2 && hyper.adam.eps == o.hyper.adam.eps;
  }
};

struct LossTerms {
  double total = 0.0;
  double data_residual = 0.0;
  double tv_term = 0.0;  // lambda_tv * smoothed TV
};

struct Gradients {
  LossTerms loss;
  RVector d_x;
  CMatrix d_g;
};

namespace detail {

inline void check_problem(const OptimState& st, const CMatrix& r, const Encoder& enc) {
  if (st.height != enc.config().height || st.width != enc.config().width)
    throw InvalidArgument("inversion: image variable does not match the encoder input size");
  if (st.g.cols() != enc.n_tx()) throw InvalidArgument("inversion: G~ must have N_t columns");
  require_same_dims(r.rows(), r.cols(), st.g.rows(), enc.channel_uses(), "inversion observations");
}

inline CMatrix residual(const OptimState& st, const CMatrix& r, const CMatrix& s) { return wiretap_forward(st.g, s) - r; }

}  // namespace detail

inline LossTerms loss(const OptimState& st, const CMatrix& r, const Encoder& enc) {
  detail::check_problem(st, r, enc);
  const Codeword cw = enc.encode(st.x);
  const CMatrix e = detail::residual(st, r, reshape_codeword(cw.symbols, enc.n_tx(), enc.channel_uses()));
  LossTerms out;
  out.data_residual = e.squaredNorm();
  out.tv_term = st.hyper.lambda_tv == 0.0 ? 0.0 : st.hyper.lambda_tv * smoothed_total_variation(st.image()).value;
  out.total = out.data_residual + out.tv_term;
  return out;
}

/// Gradients in the stacked-real convention: G~ - eta * d_g decreases the
/// loss to first order.
inline Gradients gradients(const OptimState& st, const CMatrix& r, const Encoder& enc) {
  detail::check_problem(st, r, enc);
  const auto lin = enc.linearize(st.x);
  const CMatrix s = reshape_codeword(lin.codeword.symbols, enc.n_tx(), enc.channel_uses());
  const CMatrix e = detail::residual(st, r, s);
  Gradients out;
  out.loss.data_residual = e.squaredNorm();
  const auto pulled = wiretap_forward_vjp(st.g, s, 2.0 * e);
  out.d_g = pulled.d_g;
  out.d_x = enc.vjp(lin, flatten_transmit(pulled.d_s));
  if (st.hyper.lambda_tv != 0.0) {
    const SmoothedTv tv = smoothed_total_variation(st.image());
    out.loss.tv_term = st.hyper.lambda_tv * tv.value;
    out.d_x += st.hyper.lambda_tv * tv.gradient;
  }
  out.loss.total = out.loss.data_residual + out.loss.tv_term;
  return out;
}

namespace detail {

inline double adam_update(double& p, double& m, double& v, double grad, double lr, const AdamConfig& a, double bc1,
                          double bc2) {
  m = a.beta1 * m + (1.0 - a.beta1) * grad;
  v = a.beta2 * v + (1.0 - a.beta2) * grad * grad;
  const double delta = lr * (m / bc1) / (std::sqrt(v / bc2) + a.eps);
  p -= delta;
  return delta;
}

}  // namespace detail

/// One Adam step on the group(s) selected by `mode`. Returns the loss at the
/// state *before* the update. Throws NonFiniteError (state untouched) if the
/// loss or a gradient is non-finite.
inline LossTerms step(OptimState& st, UpdateMode mode, const CMatrix& r, const Encoder& enc) {
  const Gradients gr = gradients(st, r, enc);
  if (!std::isfinite(gr.loss.total)) throw NonFiniteError("inversion step: non-finite loss");
  if (updates_image(mode) && !all_finite(gr.d_x)) throw NonFiniteError("inversion step: non-finite image gradient");
  if (updates_channel(mode) && !all_finite(gr.d_g)) throw NonFiniteError("inversion step: non-finite channel gradient");

  const AdamConfig& a = st.hyper.adam;
  if (updates_image(mode)) {
    const std::uint64_t t = ++st.t_x;
    const double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(t));
    for (Eigen::Index i = 0; i < st.x.size(); ++i)
      detail::adam_update(st.x(i), st.m_x(i), st.v_x(i), gr.d_x(i), st.hyper.lr_x, a, bc1, bc2);
  }
  if (updates_channel(mode)) {
    const std::uint64_t t = ++st.t_g;
    const double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(t));
    for (Eigen::Index k = 0; k < st.g.size(); ++k) {
      cdouble& p = st.g.data()[k];
      cdouble& m = st.m_g.data()[k];
      cdouble& v = st.v_g.data()[k];
      double pr = p.real(), pi = p.imag(), mr = m.real(), mi = m.imag(), vr = v.real(), vi = v.imag();
      detail::adam_update(pr, mr, vr, gr.d_g.data()[k].real(), st.hyper.lr_g, a, bc1, bc2);
      detail::adam_update(pi, mi, vi, gr.d_g.data()[k].imag(), st.hyper.lr_g, a, bc1, bc2);
      p = {pr, pi};
      m = {mr, mi};
      v = {vr, vi};
    }
  }
  return gr.loss;
}

inline constexpr int kMaxBurstSteps = 1000;
inline constexpr int kDefaultBurstSteps = 40;

struct BurstResult {
  std::vector<LossTerms> trace;
  bool aborted = false;
  std::string reason;

  double last_total() const { return trace.empty() ? 0.0 : trace.back().total; }
};

/// n sequential steps. A non-finite value stops the burst; the state is left
/// at the last good iterate and the partial trace is returned.
inline BurstResult run_burst(OptimState& st, UpdateMode mode, int n_steps, const CMatrix& r, const Encoder& enc) {
  if (n_steps < 1 || n_steps > kMaxBurstSteps)
    throw InvalidArgument("run_burst: n_steps must be in [1, 1000], got " + std::to_string(n_steps));
  BurstResult out;
  out.trace.reserve(static_cast<std::size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i) {
    try {
      out.trace.push_back(step(st, mode, r, enc));
    } catch (const NonFiniteError& e) {
      out.aborted = true;
      out.reason = e.what();
      break;
    }
  }
  return out;
}

}  // namespace wiretap
