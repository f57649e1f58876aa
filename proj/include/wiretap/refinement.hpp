#pragma once
// Generative refinement with a consistency check: caption the candidate,
// compose a restoration prompt, generate, then re-anchor the generated image
// against the intercepted signal and keep it only if it still explains r.

#include "wiretap/perception.hpp"
#include "wiretap/session.hpp"
#include "wiretap/wire.hpp"

#include <memory>
#include <optional>
#include <string>

namespace wiretap {

struct RestorationPrompt {
  std::string text;
  bool operator==(const RestorationPrompt&) const = default;
};

inline const std::string kRestorationDirective =
    "Restore this degraded face photograph. This is restoration, not imagination: recover only what is already "
    "present.";
inline const std::string kNoNewDetails = "Do not add new details.";
inline constexpr std::size_t kMaxPromptLength = 4096;

inline RestorationPrompt compose_prompt(const AttributeDescription& d, const std::string& directive = kRestorationDirective,
                                        const std::string& negative = kNoNewDetails) {
  std::string t = directive + "\n";
  t += "Identity cues: " + d.identity_cues + "\n";
  t += "Appearance: " + d.appearance + "\n";
  t += "Pose: " + d.pose + "\n";
  t += "Lighting: " + d.lighting + "\n";
  t += "Background: " + d.background + "\n";
  t += "Quality issues to fix: " + d.quality_issues + "\n";
  t += negative;
  if (t.size() > kMaxPromptLength) {
    // Keep the negative instruction even when the attributes are long.
    t = t.substr(0, kMaxPromptLength - negative.size() - 1) + "\n" + negative;
  }
  return {t};
}

struct GenerationUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Reference-conditioned generator. Sees an image and a prompt only; the
/// intercepted observations are not part of this interface.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual Image generate(const Image& reference, const RestorationPrompt& prompt) = 0;
};

class IdentityGenerator : public Generator {
 public:
  Image generate(const Image& reference, const RestorationPrompt&) override { return reference; }
};

/// Gaussian blur (sigma 1) followed by an unsharp mask.
class DenoiseGenerator : public Generator {
 public:
  explicit DenoiseGenerator(double amount = 0.5, double sigma = 1.0) : amount_(amount), sigma_(sigma) {}
  Image generate(const Image& reference, const RestorationPrompt&) override {
    const Image b = gaussian_blur(reference, sigma_);
    const Image bb = gaussian_blur(b, sigma_);
    Image out = b;
    auto o = out.values();
    const auto v1 = b.values(), v2 = bb.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = v1[i] + amount_ * (v1[i] - v2[i]);
    return out.clipped();
  }

 private:
  double amount_, sigma_;
};

/// Returns an unrelated synthetic face: a hallucinating generator.
class AdversarialGenerator : public Generator {
 public:
  explicit AdversarialGenerator(std::uint64_t seed) : rng_(seed) {}
  Image generate(const Image& reference, const RestorationPrompt&) override {
    return synth_face(rng_, reference.height(), reference.width()).image;
  }

 private:
  Rng rng_;
};

/// Generator over the wire protocol.
class RemoteGenerator : public Generator {
 public:
  explicit RemoteGenerator(std::shared_ptr<Transport> t, RetryPolicy retry = {}, int max_inflight = 4)
      : client_(std::move(t), "generator", retry, max_inflight) {}

  Image generate(const Image& reference, const RestorationPrompt& prompt) override {
    json doc;
    try {
      doc = client_.call(json{{"task", "generate"}, {"image", image_to_base64(reference.clipped())}, {"prompt", prompt.text}});
    } catch (const ServiceUnavailable& e) {
      throw GenerationUnavailable(e.what());
    }
    return parse_generate_response(doc, reference.height(), reference.width());
  }

  static Image parse_generate_response(const json& doc, int height, int width) {
    StrictReader rd(doc);
    if (rd.has("request_id")) rd.raw("request_id");
    rd.expect_version();
    Image img = read_wire_image(rd, "image", height, width);
    rd.finish();
    return img;
  }

 private:
  WireClient client_;
};

inline FunctionTransport::Handler generator_handler(std::shared_ptr<Generator> gen) {
  return [gen](const std::string& body) {
    const json req = parse_document(body);
    StrictReader rd(req);
    rd.expect_version();
    const std::string id = rd.nonempty_string("request_id");
    rd.one_of("task", {"generate"});
    const std::string b64 = rd.string("image");
    const std::string prompt = rd.string("prompt");
    rd.finish();
    const Image img = decode_ppm(base64_decode(b64));
    const Image out = gen->generate(img, RestorationPrompt{prompt});
    return json{{"schema_version", kSchemaVersion}, {"request_id", id}, {"image", image_to_base64(out)}}.dump();
  };
}

// ---------------------------------------------------------------------------
// Re-anchoring

struct ReanchorConfig {
  int steps = 40;        // K
  double rho_accept = 1.1;
  bool inherit_moments = true;  // warm-start Adam from the source checkpoint

  void validate() const {
    require(steps >= 1 && steps <= kMaxBurstSteps, "ReanchorConfig: steps must be in [1, 1000]");
    require(rho_accept > 0.0, "ReanchorConfig: rho_accept must be > 0");
  }
};

enum class RefinementDecision { Accepted, Rejected };

struct RefinementOutcome {
  std::size_t source = 0;
  Image generated;
  double residual_before = 0.0;
  double residual_after = 0.0;
  RefinementDecision decision = RefinementDecision::Rejected;
  std::string reason;
  std::optional<SessionId> session;
  std::optional<std::size_t> pool_index;  // accepted only
  std::optional<Perception> perception;   // of the post-burst snapshot
  std::uint64_t steps = 0;

  bool accepted() const noexcept { return decision == RefinementDecision::Accepted; }
};

/// Warm-starts a probe session at x~ = x_g with the source candidate's G~,
/// runs a Joint burst of K steps and accepts iff the clipped post-burst
/// snapshot keeps residual <= rho * residual(source) and is judged plausible.
/// Rejection leaves the pool and every other session untouched.
inline RefinementOutcome reanchor(const Image& generated, std::size_t source_index, SessionManager& mgr, const CMatrix& r,
                                  const Encoder& enc, const PerceptionAgent& perception, const ReanchorConfig& cfg = {},
                                  std::optional<int> max_steps = std::nullopt) {
  cfg.validate();
  const Candidate src = mgr.pool().at(source_index);
  RefinementOutcome out;
  out.source = source_index;
  out.generated = generated;
  out.residual_before = src.data_residual;
  if (!generated.same_shape(src.image) || !generated.all_finite()) {
    out.reason = "generated image has the wrong shape or non-finite values";
    return out;
  }
  const Checkpoint& cp = mgr.get(src.session).checkpoint_by_id(src.checkpoint);
  OptimState init = cp.state;
  init.x = generated.as_vector();
  if (!cfg.inherit_moments) {
    init.m_x.setZero();
    init.v_x.setZero();
    init.m_g.setZero();
    init.v_g.setZero();
    init.t_x = init.t_g = 0;
  }
  const int k = std::min(cfg.steps, max_steps.value_or(cfg.steps));
  if (k < 1) {
    out.reason = "no step budget left for re-anchoring";
    return out;
  }
  Session& probe = mgr.spawn(std::move(init), src.session);
  out.session = probe.id();
  const BurstResult burst = probe.burst(UpdateMode::Joint, k, r, enc);
  out.steps = burst.trace.size();
  if (burst.aborted) {
    probe.terminate();
    out.reason = "re-anchoring burst aborted: " + burst.reason;
    return out;
  }
  out.residual_after = SessionManager::snapshot_residual(probe.state(), r, enc);
  out.perception = perception.perceive(probe.state().snapshot());
  const bool residual_ok = out.residual_after <= cfg.rho_accept * out.residual_before;
  const bool plausible = out.perception->feedback.plausible;
  if (residual_ok && plausible) {
    out.decision = RefinementDecision::Accepted;
    out.reason = "residual within bound and plausible";
    const auto [cid, idx] = mgr.checkpoint(probe.id(), r, enc, [&](Candidate& c) {
      c.origin = CandidateOrigin::Refined;
      c.refined_from = source_index;
      c.residual_before = out.residual_before;
      c.residual_after = out.residual_after;
    });
    (void)cid;
    mgr.pool().attach_perception(idx, *out.perception);
    out.pool_index = idx;
  } else {
    out.reason = !residual_ok ? "residual grew beyond the acceptance bound" : "post-burst snapshot judged implausible";
  }
  probe.terminate();
  return out;
}

}  // namespace wiretap
