#include "pch.hpp"

using namespace wiretap;

namespace {

StateSummary progressing() {
  StateSummary s;
  s.steps_remaining = 1000;
  s.branches_remaining = 2;
  s.refinements_remaining = 1;
  s.mode = UpdateMode::Joint;
  s.bursts = 5;
  s.relative_improvement = 0.2;
  s.fused = 0.6;
  s.session_best_fused = 0.6;
  s.plausible = true;
  return s;
}

// Random summary that could come out of the runner: warm sessions sit in
// channel_only, a frozen channel forces image_only, and ids point at things
// that exist.
StateSummary random_summary(Rng& rng) {
  StateSummary s;
  auto coin = [&](double p) { return rng.uniform() < p; };
  auto pick = [&](int n) { return static_cast<int>(rng.uniform() * n); };
  s.steps_remaining = coin(0.1) ? pick(20) : pick(4000);
  s.branches_remaining = pick(3);
  s.refinements_remaining = pick(3);
  s.channel_frozen = coin(0.2);
  s.warmup = coin(0.3);
  s.warmup_steps = pick(900);
  const UpdateMode modes[] = {UpdateMode::Joint, UpdateMode::ImageOnly, UpdateMode::ChannelOnly};
  s.mode = s.channel_frozen ? UpdateMode::ImageOnly : (s.warmup ? UpdateMode::ChannelOnly : modes[pick(3)]);
  s.bursts = pick(50);
  s.relative_improvement = rng.uniform() - 0.2;
  s.fused = rng.uniform();
  s.session_best_fused = std::max(s.fused, rng.uniform());
  s.stagnant = coin(0.5);
  s.plausible = coin(0.5);
  s.switches_this_plateau = pick(4);
  for (int k = 0, n = pick(5); k < n; ++k) s.checkpoints.push_back(static_cast<CheckpointId>(10 * k + pick(10)));
  if (!s.checkpoints.empty() && coin(0.7)) s.best_checkpoint = s.checkpoints[static_cast<std::size_t>(pick(static_cast<int>(s.checkpoints.size())))];
  s.rolled_back_to_best = s.best_checkpoint && coin(0.4);
  for (int k = 0, n = pick(4); k < n; ++k) s.refinable.push_back(static_cast<std::size_t>(3 * k + pick(3)));
  if (!s.refinable.empty() && coin(0.8)) s.refine_candidate = s.refinable.back();
  return s;
}

struct AttackSetup {
  ExperimentConfig cfg;
  std::shared_ptr<const Encoder> enc;
  TrialSetup trial;
  std::unique_ptr<AttackContext> ctx;
};

std::unique_ptr<AttackSetup> attack_setup(int max_steps, double snr = 20.0, int trial = 0) {
  auto a = std::make_unique<AttackSetup>();
  a->cfg.budgets.max_steps = max_steps;
  a->cfg.budgets.max_branches = 2;
  a->enc = std::make_shared<const Encoder>(a->cfg.encoder_config());
  a->trial = make_trial(a->cfg, *a->enc, snr, trial);
  WiretapStatistics stats{1.0, a->cfg.n_eve, a->cfg.n_tx, a->trial.channel.eve_noise_variance()};
  a->ctx = std::make_unique<AttackContext>(a->trial.tx.r, a->enc, stats, a->cfg.budgets);
  return a;
}

AttackAgents agents(const AttackSetup& a, std::shared_ptr<Policy> policy) {
  AttackAgents ag = make_agents(a.cfg, a.trial.seed);
  ag.policy = std::move(policy);
  return ag;
}

// Policy endpoint that answers every request with the same document.
std::shared_ptr<FunctionTransport> constant_policy(json reply, std::vector<json>* seen = nullptr) {
  return std::make_shared<FunctionTransport>([reply, seen](const std::string& body) {
    const json req = json::parse(body);
    if (seen) seen->push_back(req);
    json out = reply;
    out["request_id"] = req.at("request_id");
    out["schema_version"] = kSchemaVersion;
    return out.dump();
  });
}

}  // namespace

TEST(Rules, ProgressContinuesInCurrentMode) {
  const auto d = rule_policy(progressing());
  EXPECT_EQ(d.rule, "continue_progress");
  EXPECT_EQ(d.action, Action::cont(UpdateMode::Joint, 40));
}

TEST(Rules, BurstShortenedNearBudgetEnd) {
  StateSummary s = progressing();
  s.steps_remaining = 25;
  EXPECT_EQ(rule_policy(s).action, Action::cont(UpdateMode::Joint, 25));
  s.steps_remaining = 19;
  EXPECT_EQ(rule_policy(s).rule, "finalize_out_of_steps");
}

TEST(Rules, Warmup) {
  StateSummary s = progressing();
  s.warmup = true;
  s.mode = UpdateMode::ChannelOnly;
  s.warmup_steps = 200;
  EXPECT_EQ(rule_policy(s).action, Action::cont(UpdateMode::ChannelOnly, 40));
  s.warmup_steps = 600;
  EXPECT_EQ(rule_policy(s).action, Action::switch_to(UpdateMode::Joint));
  s.warmup_steps = 200;
  s.stagnant = true;
  EXPECT_EQ(rule_policy(s).rule, "warmup_exit");
}

TEST(Rules, ScoreDropRollsBackOnce) {
  StateSummary s = progressing();
  s.checkpoints = {3, 4, 5};
  s.best_checkpoint = 4;
  s.session_best_fused = 0.8;
  s.fused = 0.6;
  EXPECT_EQ(rule_policy(s).action, Action::rollback(4));
  // Still down after going back: treated as a plateau.
  s.rolled_back_to_best = true;
  EXPECT_EQ(rule_policy(s).rule, "switch_mode");
}

TEST(Rules, StagnantBranches) {
  StateSummary s = progressing();
  s.stagnant = true;
  s.plausible = false;
  EXPECT_EQ(rule_policy(s).action, Action::branch());
  s.branches_remaining = 0;
  EXPECT_EQ(rule_policy(s).rule, "finalize_implausible");
}

TEST(Rules, StagnantPlausibleCyclesModesThenRefines) {
  StateSummary s = progressing();
  s.stagnant = true;
  EXPECT_EQ(rule_policy(s).action, Action::switch_to(UpdateMode::ImageOnly));
  s.mode = UpdateMode::ImageOnly;
  EXPECT_EQ(rule_policy(s).action, Action::switch_to(UpdateMode::ChannelOnly));
  s.switches_this_plateau = 2;
  s.refinable = {7};
  s.refine_candidate = 7;
  EXPECT_EQ(rule_policy(s).action, Action::refine(7));
  s.refinements_remaining = 0;
  EXPECT_EQ(rule_policy(s).rule, "branch_exhausted");
  s.branches_remaining = 0;
  EXPECT_EQ(rule_policy(s).rule, "finalize_exhausted");
}

TEST(Rules, FrozenChannelNeverSwitches) {
  StateSummary s = progressing();
  s.channel_frozen = true;
  s.mode = UpdateMode::ImageOnly;
  s.stagnant = true;
  EXPECT_NE(rule_policy(s).action.kind, ActionKind::Switch);
}

TEST(Rules, ExactlyOneRuleFiresAndItIsLegal) {
  Rng rng(2024);
  for (int k = 0; k < 10000; ++k) {
    const StateSummary s = random_summary(rng);
    const auto hits = matching_rules(s);
    ASSERT_EQ(hits.size(), 1u) << summary_to_json(s).dump();
    const auto d = rule_policy(s);
    EXPECT_FALSE(validate_action(s, d.action).has_value()) << d.rule << " " << summary_to_json(s).dump();
  }
}

TEST(Validate, Continue) {
  StateSummary s = progressing();
  EXPECT_FALSE(validate_action(s, Action::cont(UpdateMode::Joint, 20)));
  EXPECT_FALSE(validate_action(s, Action::cont(UpdateMode::Joint, 80)));
  EXPECT_TRUE(validate_action(s, Action::cont(UpdateMode::Joint, 19)));
  EXPECT_TRUE(validate_action(s, Action::cont(UpdateMode::Joint, 81)));
  s.steps_remaining = 30;
  EXPECT_TRUE(validate_action(s, Action::cont(UpdateMode::Joint, 40)));
  s.channel_frozen = true;
  EXPECT_TRUE(validate_action(s, Action::cont(UpdateMode::Joint, 20)));
  EXPECT_FALSE(validate_action(s, Action::cont(UpdateMode::ImageOnly, 20)));
}

TEST(Validate, OtherActions) {
  StateSummary s = progressing();
  s.checkpoints = {1, 2};
  s.refinable = {4};
  EXPECT_TRUE(validate_action(s, Action::switch_to(UpdateMode::Joint)));
  EXPECT_FALSE(validate_action(s, Action::switch_to(UpdateMode::ImageOnly)));
  EXPECT_FALSE(validate_action(s, Action::rollback(2)));
  EXPECT_TRUE(validate_action(s, Action::rollback(3)));
  EXPECT_FALSE(validate_action(s, Action::refine(4)));
  EXPECT_TRUE(validate_action(s, Action::refine(5)));
  s.branches_remaining = 0;
  EXPECT_TRUE(validate_action(s, Action::branch()));
  EXPECT_FALSE(validate_action(s, Action::finalize()));
}

TEST(ActionJson, RoundTrip) {
  for (const Action& a : {Action::cont(UpdateMode::ImageOnly, 33), Action::switch_to(UpdateMode::ChannelOnly), Action::rollback(12),
                          Action::branch(), Action::refine(3), Action::finalize()})
    EXPECT_EQ(action_from_json(action_to_json(a)), a) << action_to_json(a).dump();
  const json doc = action_to_json(Action::cont(UpdateMode::Joint, 40));
  EXPECT_EQ(doc, json::parse(R"({"action":"continue","parameters":{"mode":"joint","n_steps":40}})"));
}

TEST(ActionJson, Strict) {
  auto field = [](const json& doc) {
    try {
      action_from_json(doc);
    } catch (const ProtocolError& e) {
      return e.field();
    }
    return std::string("<accepted>");
  };
  EXPECT_EQ(field(json::parse(R"({"action":"jump","parameters":{}})")), "action");
  EXPECT_EQ(field(json::parse(R"({"action":"continue","parameters":{"mode":"joint"}})")), "parameters.n_steps");
  EXPECT_EQ(field(json::parse(R"({"action":"switch","parameters":{"mode":"both"}})")), "parameters.mode");
  EXPECT_EQ(field(json::parse(R"({"action":"finalize","parameters":{"x":1}})")), "parameters.x");
  EXPECT_EQ(field(json::parse(R"({"action":"finalize","parameters":{},"why":"done"})")), "why");
  EXPECT_EQ(field(json::parse(R"({"action":"finalize"})")), "parameters");
  EXPECT_EQ(field(json::parse(R"({"action":"rollback","parameters":{"checkpoint_id":-1}})")), "parameters.checkpoint_id");
}

TEST(LlmPolicy, LegalActionExecutedVerbatim) {
  std::vector<json> seen;
  LlmPolicy p(constant_policy(action_to_json(Action::cont(UpdateMode::ImageOnly, 20)), &seen));
  const auto d = p.decide(progressing());
  EXPECT_EQ(d.action, Action::cont(UpdateMode::ImageOnly, 20));
  EXPECT_EQ(d.source, "llm");
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(seen[0].at("summary"), summary_to_json(progressing()));
  for (const char* k : {"steps_remaining", "branches_remaining", "refinements_remaining", "mode", "channel_frozen", "warmup", "stagnant",
                        "plausible", "fused", "fused_trend", "checkpoints", "refinable"})
    EXPECT_TRUE(seen[0].at("summary").contains(k)) << k;
}

TEST(LlmPolicy, IllegalActionFallsBack) {
  LlmPolicy p(constant_policy(action_to_json(Action::cont(UpdateMode::Joint, 500))));
  const auto d = p.decide(progressing());
  EXPECT_EQ(d.source, "fallback");
  EXPECT_EQ(d.action, rule_policy(progressing()).action);
  EXPECT_EQ(d.note.rfind("illegal action", 0), 0u) << d.note;
  EXPECT_NE(d.note.find("rule continue_progress"), std::string::npos);
}

TEST(LlmPolicy, MalformedDocumentFallsBack) {
  LlmPolicy p(constant_policy(json{{"action", "continue"}, {"parameters", {{"mode", "sideways"}, {"n_steps", 40}}}}));
  const auto d = p.decide(progressing());
  EXPECT_EQ(d.source, "fallback");
  EXPECT_EQ(d.note.rfind("malformed action document", 0), 0u) << d.note;
  EXPECT_NE(d.note.find("mode"), std::string::npos);
}

TEST(LlmPolicy, TransportFailureFallsBack) {
  auto t = std::make_shared<ScriptedTransport>();
  for (int i = 0; i < 3; ++i) t->push_failure();
  LlmPolicy p(t);
  const auto d = p.decide(progressing());
  EXPECT_EQ(d.source, "fallback");
  EXPECT_EQ(t->requests().size(), 3u);
  EXPECT_EQ(d.action, rule_policy(progressing()).action);
}

TEST(Replay, ExhaustedLogFinalizes) {
  ReplayPolicy p({});
  const auto d = p.decide(progressing());
  EXPECT_EQ(d.action, Action::finalize());
  EXPECT_EQ(d.source, "replay");
}

TEST(Attack, ZeroStepBudgetFailsCleanly) {
  auto a = attack_setup(0);
  const AttackResult res = run_attack(*a->ctx, agents(*a, std::make_shared<RulePolicy>()), a->cfg.orchestrator, Rng(1));
  EXPECT_TRUE(res.failed);
  EXPECT_TRUE(res.pool.empty());
  EXPECT_EQ(res.steps_used, 0u);
  ASSERT_EQ(res.audit.size(), 1u);
  EXPECT_EQ(res.audit[0].action, Action::finalize());
  EXPECT_NE(res.diagnostics.find("no steps"), std::string::npos);
}

TEST(Attack, DeterministicAndBudgetBound) {
  auto a = attack_setup(600);
  const AttackResult r1 = run_attack(*a->ctx, agents(*a, std::make_shared<RulePolicy>()), a->cfg.orchestrator, Rng(5));
  const AttackResult r2 = run_attack(*a->ctx, agents(*a, std::make_shared<RulePolicy>()), a->cfg.orchestrator, Rng(5));
  ASSERT_FALSE(r1.failed) << r1.diagnostics;
  EXPECT_EQ(r1.final_image, r2.final_image);
  EXPECT_EQ(r1.audit.size(), r2.audit.size());
  EXPECT_LE(r1.steps_used, 600u);
  EXPECT_LE(r1.branches_used, 2);
  EXPECT_FALSE(r1.pool.empty());
  for (const auto& e : r1.audit) EXPECT_EQ(e.source, "rule");
}

TEST(Attack, ReplayReproducesFinalImage) {
  auto a = attack_setup(600, 10.0, 1);
  const AttackResult first = run_attack(*a->ctx, agents(*a, std::make_shared<RulePolicy>()), a->cfg.orchestrator, Rng(8));
  const AttackResult again = run_attack(*a->ctx, agents(*a, std::make_shared<ReplayPolicy>(first.audit)), a->cfg.orchestrator, Rng(8));
  ASSERT_FALSE(first.failed);
  EXPECT_EQ(again.final_image, first.final_image);
  EXPECT_EQ(again.steps_used, first.steps_used);
}

TEST(Attack, AuditCarriesNoReferenceMetrics) {
  auto a = attack_setup(400);
  const AttackResult res = run_attack(*a->ctx, agents(*a, std::make_shared<RulePolicy>()), a->cfg.orchestrator, Rng(3));
  const std::string dump = audit_log_json(res).dump();
  for (const char* word : {"psnr", "cosine", "ms_ssim", "source_image"}) EXPECT_EQ(dump.find(word), std::string::npos) << word;
}

TEST(Attack, RemotePolicyDrivesTheLoop) {
  auto a = attack_setup(400);
  // A policy that always asks for a legal image-only burst; after the
  // steps run out it has to be overridden.
  auto policy = std::make_shared<LlmPolicy>(constant_policy(action_to_json(Action::cont(UpdateMode::ImageOnly, 40))));
  const AttackResult res = run_attack(*a->ctx, agents(*a, policy), a->cfg.orchestrator, Rng(4));
  ASSERT_FALSE(res.failed);
  EXPECT_EQ(res.steps_used, 400u);
  EXPECT_EQ(res.audit.front().source, "llm");
  EXPECT_EQ(res.audit.front().action, Action::cont(UpdateMode::ImageOnly, 40));
  EXPECT_EQ(res.audit.back().action, Action::finalize());
  EXPECT_EQ(res.audit.back().source, "fallback");
}

TEST(Attack, OracleChannelUsedAsStart) {
  auto a = attack_setup(200);
  OrchestratorConfig oc = a->cfg.orchestrator;
  const AttackResult blind = run_attack(*a->ctx, agents(*a, std::make_shared<RulePolicy>()), oc, Rng(6));
  const AttackResult csi = run_attack(*a->ctx, agents(*a, std::make_shared<RulePolicy>()), oc, Rng(6), ChannelOracle{a->trial.tx.g});
  ASSERT_FALSE(blind.failed);
  ASSERT_FALSE(csi.failed);
  EXPECT_LT(csi.pool.back().data_residual, blind.pool.back().data_residual);
}
