#pragma once
// MIMO Rayleigh block fading for the legitimate (H) and wiretap (G) links,
// AWGN injection and zero-forcing reception.

#include "wiretap/numerics.hpp"
#include "wiretap/semcom.hpp"

#include <cmath>
#include <optional>

namespace wiretap {

/// sigma^2 = 10^(-SNR_dB/10) for unit-power symbols.
inline double noise_variance_from_snr_db(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

struct ChannelConfig {
  int n_tx = 2;
  int n_rx = 2;
  int n_eve = 2;
  double snr_db = 10.0;
  std::optional<double> eve_snr_db;  // defaults to snr_db

  void validate() const {
    require(n_tx >= 1, "ChannelConfig: N_t must be >= 1");
    require(n_rx >= n_tx, "ChannelConfig: zero-forcing requires N_r >= N_t");
    require(n_eve >= 1, "ChannelConfig: N_e must be >= 1");
  }
  double noise_variance() const { return noise_variance_from_snr_db(snr_db); }
  double eve_noise_variance() const { return noise_variance_from_snr_db(eve_snr_db.value_or(snr_db)); }
};

/// One block-fading transmission. Contains the channel realisations and is
/// therefore never handed to the attacker; see AttackContext.
struct Transmission {
  CMatrix h;          // N_r x N_t
  CMatrix g;          // N_e x N_t
  CMatrix s;          // N_t x T transmit vectors
  CMatrix noise_bob;  // N_r x T
  CMatrix noise_eve;  // N_e x T
  CMatrix y;          // Bob's observations, N_r x T
  CMatrix r;          // Eve's observations, N_e x T
};

/// y_t = H s_t + n_t, r_t = G s_t + w_t. Draw order from `rng`: H, G,
/// Bob noise, Eve noise (each column-major).
inline Transmission transmit(const CVector& z, const ChannelConfig& cfg, Rng& rng) {
  cfg.validate();
  if (z.size() % cfg.n_tx != 0) throw InvalidArgument("transmit: codeword length not a multiple of N_t");
  const int t = static_cast<int>(z.size() / cfg.n_tx);
  Transmission tr;
  tr.s = reshape_codeword(z, cfg.n_tx, t);
  tr.h = sample_complex_gaussian(rng, cfg.n_rx, cfg.n_tx, 1.0);
  tr.g = sample_complex_gaussian(rng, cfg.n_eve, cfg.n_tx, 1.0);
  const double sb = cfg.noise_variance(), se = cfg.eve_noise_variance();
  // Extremely high SNRs underflow to sigma^2 == 0; keep the draws so the
  // stream layout is SNR-independent.
  tr.noise_bob = sample_complex_gaussian(rng, cfg.n_rx, t, 1.0) * std::sqrt(sb);
  tr.noise_eve = sample_complex_gaussian(rng, cfg.n_eve, t, 1.0) * std::sqrt(se);
  tr.y = tr.h * tr.s + tr.noise_bob;
  tr.r = tr.g * tr.s + tr.noise_eve;
  return tr;
}

/// s-hat_t = argmin ||H s - y_t||, concatenated column-major.
inline CVector zf_receive(const CMatrix& y, const CMatrix& h) {
  if (y.rows() != h.rows()) throw InvalidArgument("zf_receive: observation rows != N_r");
  if (h.rows() < h.cols()) throw InvalidArgument("zf_receive: N_r < N_t");
  Eigen::JacobiSVD<CMatrix> svd(h);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(sv.size() - 1) / sv(0) < kRankTolerance)
    throw SingularMatrix("zf_receive: channel matrix is not full column rank");
  const CMatrix shat = h.colPivHouseholderQr().solve(y);
  return flatten_transmit(shat);
}

inline CVector zf_receive(const Transmission& tr, const CMatrix& h) { return zf_receive(tr.y, h); }

/// Predicted wiretap observations G~ s_t for every channel use.
inline CMatrix wiretap_forward(const CMatrix& g_est, const CMatrix& s) {
  if (g_est.cols() != s.rows())
    throw InvalidArgument("wiretap_forward: G~ has " + std::to_string(g_est.cols()) + " columns, s has " +
                          std::to_string(s.rows()) + " rows");
  return g_est * s;
}

struct WiretapVjp {
  CMatrix d_g;  // N_e x N_t
  CMatrix d_s;  // N_t x T
};

/// Pulls back a cotangent on G~ s (stacked-real gradient convention,
/// cotangent = dL/dRe + i dL/dIm) to cotangents on G~ and s.
inline WiretapVjp wiretap_forward_vjp(const CMatrix& g_est, const CMatrix& s, const CMatrix& cotangent) {
  require_same_dims(cotangent.rows(), cotangent.cols(), g_est.rows(), s.cols(), "wiretap_forward_vjp");
  return {cotangent * s.adjoint(), g_est.adjoint() * cotangent};
}

}  // namespace wiretap
