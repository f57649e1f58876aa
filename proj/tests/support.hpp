#pragma once
// Shared set-ups for the refinement experiments (unit tests and acceptance).

#include "wiretap/harness.hpp"

namespace wiretap::testing {

struct GuardCase {
  TrialSetup trial;
  SessionManager mgr{0};
  std::size_t candidate = 0;
};

/// One pool candidate for a default-config trial. steps == 0 anchors the
/// candidate at the true image and channel (residual at the noise floor);
/// otherwise it is the snapshot after `steps` blind Joint steps.
inline std::unique_ptr<GuardCase> guard_case(const ExperimentConfig& cfg, const std::shared_ptr<const Encoder>& enc, double snr,
                                             int trial, int steps, const PerceptionAgent& perception) {
  auto c = std::make_unique<GuardCase>();
  c->trial = make_trial(cfg, *enc, snr, trial);
  Rng rng = Rng(c->trial.seed).child(9);
  OptimState st = fresh_state(rng, cfg.height, cfg.width, cfg.n_eve, cfg.n_tx, cfg.orchestrator.hyper);
  if (steps == 0) st = OptimState::create(c->trial.source, c->trial.tx.g, cfg.orchestrator.hyper);
  Session& s = c->mgr.create_root(st);
  for (int done = 0; done < steps; done += kDefaultBurstSteps)
    s.burst(UpdateMode::Joint, std::min(kDefaultBurstSteps, steps - done), c->trial.tx.r, *enc);
  const auto [cid, idx] = c->mgr.checkpoint(s.id(), c->trial.tx.r, *enc);
  (void)cid;
  c->mgr.pool().attach_perception(idx, perception.perceive(c->mgr.pool().at(idx).image));
  c->candidate = idx;
  return c;
}

inline RefinementOutcome refine_with(GuardCase& c, Generator& gen, const Encoder& enc, const PerceptionAgent& perception,
                                     const ReanchorConfig& rc = {}) {
  const Image src = c.mgr.pool().at(c.candidate).image;
  return reanchor(gen.generate(src, compose_prompt(AttributeDescription{})), c.candidate, c.mgr, c.trial.tx.r, enc, perception, rc);
}

}  // namespace wiretap::testing
