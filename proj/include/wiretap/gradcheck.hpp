#pragma once
// Analytic loss gradients against central differences on tiny instances.
// Only loss() is used on the reference side.

#include "wiretap/inversion.hpp"

#include <memory>

namespace wiretap {

struct GradcheckInstance {
  std::shared_ptr<const Encoder> enc;
  OptimState state;
  CMatrix r;
};

/// 4x4x3 image (N = 48), N_t = N_e = 2, T = 6. The optimisation point is
/// away from the truth so neither gradient vanishes.
inline GradcheckInstance make_gradcheck_instance(EncoderKind kind, std::uint64_t seed, double lambda_tv = 5e-4) {
  Rng rng(seed);
  EncoderConfig ec;
  ec.kind = kind;
  ec.height = 4;
  ec.width = 4;
  ec.n_tx = 2;
  ec.channel_uses = 6;
  ec.hidden = 16;
  ec.seed = rng.next_u64();
  GradcheckInstance out;
  out.enc = std::make_shared<const Encoder>(ec);
  RVector truth(ec.input_dim()), x(ec.input_dim());
  for (Eigen::Index i = 0; i < truth.size(); ++i) truth(i) = rng.uniform(0.1, 0.9);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(0.1, 0.9);
  const CMatrix g = sample_complex_gaussian(rng, 2, 2, 1.0);
  const CMatrix s = reshape_codeword(out.enc->encode(truth).symbols, 2, 6);
  out.r = g * s + sample_complex_gaussian(rng, 2, 6, 0.1);
  InversionHyper h;
  h.lambda_tv = lambda_tv;
  out.state = OptimState::create(Image::from_vector(4, 4, x), sample_complex_gaussian(rng, 2, 2, 1.0), h);
  return out;
}

struct GradcheckResult {
  double rel_err_x = 0.0;
  double rel_err_g = 0.0;
};

inline GradcheckResult gradcheck(const GradcheckInstance& inst, double h = 1e-6) {
  const Gradients an = gradients(inst.state, inst.r, *inst.enc);
  auto fx = [&](const RVector& x) {
    OptimState s = inst.state;
    s.x = x;
    return loss(s, inst.r, *inst.enc).total;
  };
  const Eigen::Index rows = inst.state.g.rows(), cols = inst.state.g.cols();
  auto fg = [&](const RVector& gs) {
    OptimState s = inst.state;
    s.g = unstack_real(gs, rows, cols);
    return loss(s, inst.r, *inst.enc).total;
  };
  GradcheckResult out;
  out.rel_err_x = relative_error(an.d_x, finite_diff_gradient(fx, inst.state.x, h));
  out.rel_err_g = relative_error(stack_real(an.d_g), finite_diff_gradient(fg, stack_real(inst.state.g), h));
  return out;
}

}  // namespace wiretap
