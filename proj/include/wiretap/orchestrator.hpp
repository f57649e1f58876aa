#pragma once
// Closed-loop attack controller: burst -> snapshot -> perception -> policy ->
// action, with a rule-table policy, an optional remote policy client and an
// audit log that can be replayed.

#include "wiretap/inversion.hpp"
#include "wiretap/perception.hpp"
#include "wiretap/refinement.hpp"
#include "wiretap/session.hpp"
#include "wiretap/wire.hpp"

#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace wiretap {

/// What Eve knows about G: its entry distribution, never a realisation.
struct WiretapStatistics {
  double entry_variance = 1.0;  // CN(0, 1)
  int n_eve = 2;
  int n_tx = 2;
  double noise_variance = 0.1;
};

struct AttackBudgets {
  int max_steps = 4000;
  int max_branches = 5;
  int max_refinements = 3;

  void validate() const {
    require(max_steps >= 0 && max_branches >= 0 && max_refinements >= 0, "AttackBudgets: budgets must be >= 0");
  }
};

/// Everything the attacker may use. Constructed from observations, the
/// glass-box encoder and channel statistics only; there is no field for a
/// channel realisation or the source image.
class AttackContext {
 public:
  AttackContext(CMatrix observations, std::shared_ptr<const Encoder> encoder, WiretapStatistics stats, AttackBudgets budgets,
                std::string policy_id = "rule")
      : r_(std::move(observations)), enc_(std::move(encoder)), stats_(stats), budgets_(budgets), policy_id_(std::move(policy_id)) {
    require(enc_ != nullptr, "AttackContext: encoder is null");
    budgets_.validate();
    require(stats_.n_tx == enc_->n_tx(), "AttackContext: N_t does not match the encoder");
    require_same_dims(r_.rows(), r_.cols(), stats_.n_eve, enc_->channel_uses(), "AttackContext observations");
  }

  const CMatrix& observations() const noexcept { return r_; }
  const Encoder& encoder() const noexcept { return *enc_; }
  const WiretapStatistics& statistics() const noexcept { return stats_; }
  const AttackBudgets& budgets() const noexcept { return budgets_; }
  const std::string& policy_id() const noexcept { return policy_id_; }

 private:
  CMatrix r_;
  std::shared_ptr<const Encoder> enc_;
  WiretapStatistics stats_;
  AttackBudgets budgets_;
  std::string policy_id_;
};

/// Perfect wiretap CSI for the CSI-aware variants. Deliberately a separate
/// argument so AttackContext stays realisation-free.
struct ChannelOracle {
  CMatrix g;
};

// ---------------------------------------------------------------------------
// Actions

enum class ActionKind { Continue, Switch, Rollback, TerminateAndBranch, Refine, Finalize };

inline std::string to_string(ActionKind k) {
  switch (k) {
    case ActionKind::Continue: return "continue";
    case ActionKind::Switch: return "switch";
    case ActionKind::Rollback: return "rollback";
    case ActionKind::TerminateAndBranch: return "terminate_and_branch";
    case ActionKind::Refine: return "refine";
    case ActionKind::Finalize: return "finalize";
  }
  return "?";
}

inline constexpr int kMinPolicyBurst = 20;
inline constexpr int kMaxPolicyBurst = 80;

struct Action {
  ActionKind kind = ActionKind::Finalize;
  UpdateMode mode = UpdateMode::Joint;  // Continue, Switch
  int n_steps = 0;                      // Continue
  CheckpointId checkpoint = 0;          // Rollback
  std::size_t candidate = 0;            // Refine

  static Action cont(UpdateMode m, int n) { return {ActionKind::Continue, m, n, 0, 0}; }
  static Action switch_to(UpdateMode m) { return {ActionKind::Switch, m, 0, 0, 0}; }
  static Action rollback(CheckpointId id) { return {ActionKind::Rollback, UpdateMode::Joint, 0, id, 0}; }
  static Action branch() { return {ActionKind::TerminateAndBranch, UpdateMode::Joint, 0, 0, 0}; }
  static Action refine(std::size_t c) { return {ActionKind::Refine, UpdateMode::Joint, 0, 0, c}; }
  static Action finalize() { return {}; }

  bool operator==(const Action& o) const {
    if (kind != o.kind) return false;
    switch (kind) {
      case ActionKind::Continue: return mode == o.mode && n_steps == o.n_steps;
      case ActionKind::Switch: return mode == o.mode;
      case ActionKind::Rollback: return checkpoint == o.checkpoint;
      case ActionKind::Refine: return candidate == o.candidate;
      default: return true;
    }
  }
};

inline json action_to_json(const Action& a) {
  json p = json::object();
  switch (a.kind) {
    case ActionKind::Continue:
      p["mode"] = to_string(a.mode);
      p["n_steps"] = a.n_steps;
      break;
    case ActionKind::Switch: p["mode"] = to_string(a.mode); break;
    case ActionKind::Rollback: p["checkpoint_id"] = a.checkpoint; break;
    case ActionKind::Refine: p["candidate"] = a.candidate; break;
    default: break;
  }
  return json{{"action", to_string(a.kind)}, {"parameters", p}};
}

/// Strict parse of {action, parameters}. Range checks against the current
/// state are a separate step (validate_action).
inline Action action_from_json(const json& doc) {
  StrictReader rd(doc);
  if (rd.has("schema_version")) rd.expect_version();
  if (rd.has("request_id")) rd.raw("request_id");
  const std::string kind =
      rd.one_of("action", {"continue", "switch", "rollback", "terminate_and_branch", "refine", "finalize"});
  StrictReader p = rd.object("parameters");
  Action a;
  auto mode = [&] { return update_mode_from_string(p.one_of("mode", {"image_only", "channel_only", "joint"})); };
  if (kind == "continue") {
    a.kind = ActionKind::Continue;
    a.mode = mode();
    a.n_steps = static_cast<int>(p.integer("n_steps", std::numeric_limits<int>::min(), std::numeric_limits<int>::max()));
  } else if (kind == "switch") {
    a.kind = ActionKind::Switch;
    a.mode = mode();
  } else if (kind == "rollback") {
    a.kind = ActionKind::Rollback;
    a.checkpoint = static_cast<CheckpointId>(p.integer("checkpoint_id", 0, std::numeric_limits<std::int64_t>::max()));
  } else if (kind == "refine") {
    a.kind = ActionKind::Refine;
    a.candidate = static_cast<std::size_t>(p.integer("candidate", 0, std::numeric_limits<std::int64_t>::max()));
  } else if (kind == "terminate_and_branch") {
    a.kind = ActionKind::TerminateAndBranch;
  } else {
    a.kind = ActionKind::Finalize;
  }
  p.finish();
  rd.finish();
  return a;
}

// ---------------------------------------------------------------------------
// State summary

struct StateSummary {
  int steps_remaining = 0;
  int branches_remaining = 0;
  int refinements_remaining = 0;
  UpdateMode mode = UpdateMode::Joint;
  bool channel_frozen = false;
  bool warmup = false;
  int warmup_steps = 0;
  int bursts = 0;  // in the current session
  double relative_improvement = 0.0;
  double fused = 0.0;
  double fused_trend = 0.0;
  double session_best_fused = 0.0;
  bool stagnant = false;
  bool plausible = false;
  int switches_this_plateau = 0;
  std::optional<CheckpointId> best_checkpoint;
  bool rolled_back_to_best = false;
  std::vector<CheckpointId> checkpoints;
  std::optional<std::size_t> refine_candidate;
  std::vector<std::size_t> refinable;  // every legal Refine target
};

inline json summary_to_json(const StateSummary& s) {
  return json{{"steps_remaining", s.steps_remaining},
              {"branches_remaining", s.branches_remaining},
              {"refinements_remaining", s.refinements_remaining},
              {"mode", to_string(s.mode)},
              {"channel_frozen", s.channel_frozen},
              {"warmup", s.warmup},
              {"warmup_steps", s.warmup_steps},
              {"bursts", s.bursts},
              {"relative_improvement", s.relative_improvement},
              {"fused", s.fused},
              {"fused_trend", s.fused_trend},
              {"session_best_fused", s.session_best_fused},
              {"stagnant", s.stagnant},
              {"plausible", s.plausible},
              {"switches_this_plateau", s.switches_this_plateau},
              {"best_checkpoint", s.best_checkpoint ? json(*s.best_checkpoint) : json(nullptr)},
              {"rolled_back_to_best", s.rolled_back_to_best},
              {"checkpoints", s.checkpoints},
              {"refine_candidate", s.refine_candidate ? json(*s.refine_candidate) : json(nullptr)},
              {"refinable", s.refinable}};
}

struct RulePolicyConfig {
  int burst = kDefaultBurstSteps;
  int warmup_steps = 600;
  double score_drop = 0.1;
  double improvement = 0.01;  // relative per-burst gain that opens a new plateau
  int max_switches = 2;

  void validate() const {
    require(burst >= kMinPolicyBurst && burst <= kMaxPolicyBurst, "RulePolicyConfig: burst must be in [20, 80]");
    require(warmup_steps >= 0, "RulePolicyConfig: warmup_steps must be >= 0");
    require(score_drop > 0.0 && improvement > 0.0 && max_switches >= 0, "RulePolicyConfig: thresholds must be positive");
  }
};

inline UpdateMode next_mode(UpdateMode m) {
  switch (m) {
    case UpdateMode::Joint: return UpdateMode::ImageOnly;
    case UpdateMode::ImageOnly: return UpdateMode::ChannelOnly;
    case UpdateMode::ChannelOnly: return UpdateMode::Joint;
  }
  return UpdateMode::Joint;
}

/// nullopt if `a` is legal in state `s`, otherwise the reason.
inline std::optional<std::string> validate_action(const StateSummary& s, const Action& a) {
  switch (a.kind) {
    case ActionKind::Continue:
      if (a.n_steps < kMinPolicyBurst || a.n_steps > kMaxPolicyBurst) return "n_steps outside [20, 80]";
      if (a.n_steps > s.steps_remaining) return "n_steps exceeds the remaining step budget";
      if (s.channel_frozen && a.mode != UpdateMode::ImageOnly) return "channel is frozen; only image_only is allowed";
      return std::nullopt;
    case ActionKind::Switch:
      if (a.mode == s.mode) return "already in that mode";
      if (s.channel_frozen) return "channel is frozen; mode switches are not allowed";
      return std::nullopt;
    case ActionKind::Rollback:
      if (std::find(s.checkpoints.begin(), s.checkpoints.end(), a.checkpoint) == s.checkpoints.end())
        return "checkpoint " + std::to_string(a.checkpoint) + " does not exist in the current session";
      return std::nullopt;
    case ActionKind::TerminateAndBranch:
      if (s.branches_remaining <= 0) return "branch budget exhausted";
      return std::nullopt;
    case ActionKind::Refine:
      if (s.refinements_remaining <= 0) return "refinement budget exhausted";
      if (s.steps_remaining < kMinPolicyBurst) return "not enough steps left to re-anchor";
      if (std::find(s.refinable.begin(), s.refinable.end(), a.candidate) == s.refinable.end())
        return "candidate " + std::to_string(a.candidate) + " is not eligible for refinement";
      return std::nullopt;
    case ActionKind::Finalize: return std::nullopt;
  }
  return "unknown action";
}

// ---------------------------------------------------------------------------
// Rule table

struct Rule {
  std::string name;
  std::function<bool(const StateSummary&, const RulePolicyConfig&)> when;
  std::function<Action(const StateSummary&, const RulePolicyConfig&)> then;
};

namespace detail {

struct RuleTerms {
  bool out_of_steps, warm, warm_go_on, needs_rollback, stagnant, switch_ok, refine_ok, branch_ok;
};

inline RuleTerms rule_terms(const StateSummary& s, const RulePolicyConfig& c) {
  RuleTerms t{};
  t.out_of_steps = s.steps_remaining < kMinPolicyBurst;
  t.warm = s.warmup && !s.channel_frozen;
  t.warm_go_on = s.warmup_steps < c.warmup_steps && !s.stagnant;
  const bool dropped = s.best_checkpoint.has_value() && s.session_best_fused - s.fused > c.score_drop;
  t.needs_rollback = dropped && !s.rolled_back_to_best;
  // A drop that survives a rollback to the best checkpoint is a plateau.
  t.stagnant = s.stagnant || (dropped && s.rolled_back_to_best);
  t.switch_ok = !s.channel_frozen && s.switches_this_plateau < c.max_switches;
  t.refine_ok = s.refinements_remaining > 0 && s.refine_candidate.has_value();
  t.branch_ok = s.branches_remaining > 0;
  return t;
}

inline int burst_len(const StateSummary& s, const RulePolicyConfig& c) { return std::min(c.burst, s.steps_remaining); }

}  // namespace detail

/// Mutually exclusive, jointly exhaustive rules; exactly one fires for any
/// summary.
inline const std::vector<Rule>& rule_table() {
  using detail::rule_terms;
  static const std::vector<Rule> table = [] {
    std::vector<Rule> t;
    auto live = [](const detail::RuleTerms& k) { return !k.out_of_steps && !k.warm && !k.needs_rollback; };
    t.push_back({"finalize_out_of_steps", [](const StateSummary& s, const RulePolicyConfig& c) { return rule_terms(s, c).out_of_steps; },
                 [](const StateSummary&, const RulePolicyConfig&) { return Action::finalize(); }});
    t.push_back({"warmup_continue",
                 [](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return !k.out_of_steps && k.warm && k.warm_go_on;
                 },
                 [](const StateSummary& s, const RulePolicyConfig& c) { return Action::cont(UpdateMode::ChannelOnly, detail::burst_len(s, c)); }});
    t.push_back({"warmup_exit",
                 [](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return !k.out_of_steps && k.warm && !k.warm_go_on;
                 },
                 [](const StateSummary&, const RulePolicyConfig&) { return Action::switch_to(UpdateMode::Joint); }});
    t.push_back({"rollback_score_drop",
                 [](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return !k.out_of_steps && !k.warm && k.needs_rollback;
                 },
                 [](const StateSummary& s, const RulePolicyConfig&) { return Action::rollback(*s.best_checkpoint); }});
    t.push_back({"continue_progress",
                 [live](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return live(k) && !k.stagnant;
                 },
                 [](const StateSummary& s, const RulePolicyConfig& c) { return Action::cont(s.mode, detail::burst_len(s, c)); }});
    t.push_back({"branch_implausible",
                 [live](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return live(k) && k.stagnant && !s.plausible && k.branch_ok;
                 },
                 [](const StateSummary&, const RulePolicyConfig&) { return Action::branch(); }});
    t.push_back({"finalize_implausible",
                 [live](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return live(k) && k.stagnant && !s.plausible && !k.branch_ok;
                 },
                 [](const StateSummary&, const RulePolicyConfig&) { return Action::finalize(); }});
    t.push_back({"switch_mode",
                 [live](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return live(k) && k.stagnant && s.plausible && k.switch_ok;
                 },
                 [](const StateSummary& s, const RulePolicyConfig&) { return Action::switch_to(next_mode(s.mode)); }});
    t.push_back({"refine_best",
                 [live](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return live(k) && k.stagnant && s.plausible && !k.switch_ok && k.refine_ok;
                 },
                 [](const StateSummary& s, const RulePolicyConfig&) { return Action::refine(*s.refine_candidate); }});
    t.push_back({"branch_exhausted",
                 [live](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return live(k) && k.stagnant && s.plausible && !k.switch_ok && !k.refine_ok && k.branch_ok;
                 },
                 [](const StateSummary&, const RulePolicyConfig&) { return Action::branch(); }});
    t.push_back({"finalize_exhausted",
                 [live](const StateSummary& s, const RulePolicyConfig& c) {
                   const auto k = rule_terms(s, c);
                   return live(k) && k.stagnant && s.plausible && !k.switch_ok && !k.refine_ok && !k.branch_ok;
                 },
                 [](const StateSummary&, const RulePolicyConfig&) { return Action::finalize(); }});
    return t;
  }();
  return table;
}

inline std::vector<std::string> matching_rules(const StateSummary& s, const RulePolicyConfig& c = {}) {
  std::vector<std::string> out;
  for (const auto& r : rule_table())
    if (r.when(s, c)) out.push_back(r.name);
  return out;
}

struct RuleDecision {
  Action action;
  std::string rule;
};

inline RuleDecision rule_policy(const StateSummary& s, const RulePolicyConfig& c = {}) {
  const Rule* hit = nullptr;
  for (const auto& r : rule_table())
    if (r.when(s, c)) {
      if (hit != nullptr) throw std::logic_error("rule table ambiguous: " + hit->name + " and " + r.name);
      hit = &r;
    }
  if (hit == nullptr) throw std::logic_error("rule table not exhaustive");
  return {hit->then(s, c), hit->name};
}

// ---------------------------------------------------------------------------
// Policies

struct PolicyDecision {
  Action action;
  std::string source;  // rule | llm | fallback | replay
  std::string note;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual PolicyDecision decide(const StateSummary& s) = 0;
};

class RulePolicy : public Policy {
 public:
  explicit RulePolicy(RulePolicyConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }
  PolicyDecision decide(const StateSummary& s) override {
    auto d = rule_policy(s, cfg_);
    return {d.action, "rule", d.rule};
  }
  const RulePolicyConfig& config() const noexcept { return cfg_; }

 private:
  RulePolicyConfig cfg_;
};

/// Remote policy over the wire schema. Anything unusable (transport
/// failure, bad document, illegal action) falls back to the rule table and
/// says why.
class LlmPolicy : public Policy {
 public:
  LlmPolicy(std::shared_ptr<Transport> t, RulePolicyConfig fallback = {}, RetryPolicy retry = {})
      : client_(std::move(t), "policy", retry, 1), fallback_(fallback) {}

  PolicyDecision decide(const StateSummary& s) override {
    std::string why;
    try {
      const json doc = client_.call(json{{"summary", summary_to_json(s)}});
      const Action a = action_from_json(doc);
      if (auto bad = validate_action(s, a); !bad) return {a, "llm", ""};
      else why = "illegal action " + action_to_json(a).dump() + ": " + *bad;
    } catch (const ProtocolError& e) {
      why = std::string("malformed action document: ") + e.what();
    } catch (const ServiceUnavailable& e) {
      why = e.what();
    } catch (const InvalidArgument& e) {
      why = std::string("malformed action document: ") + e.what();
    }
    auto d = rule_policy(s, fallback_);
    return {d.action, "fallback", why + "; rule " + d.rule};
  }

 private:
  WireClient client_;
  RulePolicyConfig fallback_;
};

struct AuditEntry {
  std::size_t seq = 0;
  json summary;
  Action action;
  std::string source;
  std::string note;
  json outcome;
};

inline json audit_to_json(const AuditEntry& e) {
  return json{{"seq", e.seq}, {"summary", e.summary}, {"action", action_to_json(e.action)},
              {"source", e.source}, {"note", e.note}, {"outcome", e.outcome}};
}

/// Feeds back the actions of a previous run, in order.
class ReplayPolicy : public Policy {
 public:
  explicit ReplayPolicy(std::vector<AuditEntry> log) : log_(std::move(log)) {}
  PolicyDecision decide(const StateSummary&) override {
    if (pos_ >= log_.size()) return {Action::finalize(), "replay", "log exhausted"};
    return {log_[pos_++].action, "replay", ""};
  }

 private:
  std::vector<AuditEntry> log_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Attack loop

struct OrchestratorConfig {
  InversionHyper hyper;
  StagnationConfig stagnation;
  RulePolicyConfig rules;
  ReanchorConfig reanchor;
  BranchInit branch_init;
  double final_residual_ratio = 2.0;
  bool warmup = true;
  bool refinement = true;
  int max_idle_decisions = 16;  // consecutive step-free actions before the rule table takes over

  void validate() const {
    stagnation.validate();
    rules.validate();
    reanchor.validate();
    require(final_residual_ratio >= 1.0, "OrchestratorConfig: final_residual_ratio must be >= 1");
    require(max_idle_decisions >= 1, "OrchestratorConfig: max_idle_decisions must be >= 1");
  }
};

struct AttackAgents {
  std::shared_ptr<PerceptionAgent> perception;
  std::shared_ptr<Generator> generator;
  std::shared_ptr<Policy> policy;
};

struct AttackResult {
  bool failed = false;
  std::string diagnostics;
  Image final_image;
  std::optional<std::size_t> final_index;
  std::vector<Candidate> pool;
  std::vector<AuditEntry> audit;
  std::vector<RefinementOutcome> refinements;
  std::uint64_t steps_used = 0;
  int branches_used = 0;
  int sessions = 0;
};

namespace detail {

/// Per-session bookkeeping the policy summary is built from.
struct SessionTrack {
  SessionId id = 0;
  UpdateMode mode = UpdateMode::Joint;
  bool warmup = false;
  int warmup_steps = 0;
  int bursts = 0;
  std::vector<double> plateau;  // burst-end losses since the last switch
  double last_end = 0.0;
  double relative_improvement = 0.0;
  double fused = 0.0;
  double prev_fused = 0.0;
  bool plausible = false;
  int switches = 0;
  std::optional<CheckpointId> best_checkpoint;
  double best_fused = -1.0;
  bool rolled_back_to_best = false;
  std::map<CheckpointId, std::pair<double, bool>> scores;  // fused, plausible
};

}  // namespace detail

class AttackRunner {
 public:
  AttackRunner(const AttackContext& ctx, AttackAgents agents, OrchestratorConfig cfg, Rng rng,
               std::optional<ChannelOracle> oracle = std::nullopt)
      : ctx_(ctx), agents_(std::move(agents)), cfg_(cfg), rng_(rng), oracle_(std::move(oracle)),
        mgr_(ctx.budgets().max_branches) {
    cfg_.validate();
    require(agents_.perception && agents_.policy, "AttackRunner: perception and policy are required");
    if (oracle_)
      require_same_dims(oracle_->g.rows(), oracle_->g.cols(), ctx.statistics().n_eve, ctx.statistics().n_tx, "ChannelOracle");
  }

  AttackResult run() {
    AttackResult res;
    if (ctx_.budgets().max_steps >= 1) {
      start_session(std::nullopt);
      loop(res);
    } else {
      log(res, summarize(), {Action::finalize(), "rule", "no step budget"}, json{{"result", "finalized"}});
    }
    finish(res);
    return res;
  }

 private:
  const Encoder& enc() const { return ctx_.encoder(); }
  const CMatrix& r() const { return ctx_.observations(); }
  bool frozen() const { return oracle_.has_value(); }

  int steps_remaining() const {
    const auto used = static_cast<std::int64_t>(mgr_.total_steps());
    return static_cast<int>(std::max<std::int64_t>(0, ctx_.budgets().max_steps - used));
  }

  void start_session(std::optional<SessionId> parent) {
    Rng srng = rng_.child(session_counter_++);
    const auto& st = ctx_.statistics();
    OptimState init;
    Session* s = nullptr;
    if (!parent) {
      init = fresh_state(srng, enc().config().height, enc().config().width, st.n_eve, st.n_tx, cfg_.hyper, cfg_.branch_init);
      if (oracle_) init.g = oracle_->g;
      s = &mgr_.create_root(std::move(init));
    } else {
      s = &mgr_.branch(*parent, srng, st.n_eve, st.n_tx, cfg_.hyper, cfg_.branch_init);
      if (oracle_) s->mutable_state_before_start().g = oracle_->g;
    }
    track_ = {};
    track_.id = s->id();
    track_.warmup = cfg_.warmup && !frozen();
    track_.mode = frozen() ? UpdateMode::ImageOnly : (track_.warmup ? UpdateMode::ChannelOnly : UpdateMode::Joint);
  }

  StateSummary summarize() const {
    StateSummary s;
    s.steps_remaining = steps_remaining();
    s.branches_remaining = mgr_.branches_remaining();
    s.refinements_remaining = cfg_.refinement ? ctx_.budgets().max_refinements - refinements_used_ : 0;
    s.channel_frozen = frozen();
    if (!has_session()) return s;
    s.mode = track_.mode;
    s.warmup = track_.warmup;
    s.warmup_steps = track_.warmup_steps;
    s.bursts = track_.bursts;
    s.relative_improvement = track_.relative_improvement;
    s.fused = track_.fused;
    s.fused_trend = track_.fused - track_.prev_fused;
    s.session_best_fused = std::max(0.0, track_.best_fused);
    s.stagnant = !track_.plateau.empty() && is_stagnant(track_.plateau, cfg_.stagnation);
    s.plausible = track_.plausible;
    s.switches_this_plateau = track_.switches;
    s.best_checkpoint = track_.best_checkpoint;
    s.rolled_back_to_best = track_.rolled_back_to_best;
    for (const auto& c : mgr_.get(track_.id).checkpoints()) s.checkpoints.push_back(c.id);
    if (s.refinements_remaining > 0 && !mgr_.pool().empty()) {
      const auto entries = mgr_.pool().entries();
      const double mn = mgr_.pool().min_residual();
      double best = -1.0;
      for (const auto& e : entries) {
        if (e.data_residual > cfg_.final_residual_ratio * mn || !e.perception) continue;
        if (e.index < refined_.size() && refined_[e.index]) continue;
        s.refinable.push_back(e.index);
        if (e.perception->feedback.fused > best) {
          best = e.perception->feedback.fused;
          s.refine_candidate = e.index;
        }
      }
    }
    return s;
  }

  bool has_session() const { return session_counter_ > 0; }

  void log(AttackResult& res, const StateSummary& s, const PolicyDecision& d, json outcome) {
    AuditEntry e;
    e.seq = res.audit.size();
    e.summary = summary_to_json(s);
    e.action = d.action;
    e.source = d.source;
    e.note = d.note;
    e.outcome = std::move(outcome);
    res.audit.push_back(std::move(e));
  }

  void loop(AttackResult& res) {
    int idle = 0;
    // Each action either consumes budget or changes bookkeeping that the
    // next decision depends on; the cap is a backstop against a policy that
    // does neither.
    const std::size_t max_decisions = 64 + 8 * static_cast<std::size_t>(ctx_.budgets().max_steps);
    for (std::size_t n = 0; n < max_decisions; ++n) {
      const StateSummary s = summarize();
      PolicyDecision d = idle >= cfg_.max_idle_decisions ? forced(s, "too many step-free actions") : agents_.policy->decide(s);
      if (auto bad = validate_action(s, d.action)) {
        d = forced(s, "illegal " + d.source + " action " + action_to_json(d.action).dump() + ": " + *bad);
        if (auto still = validate_action(s, d.action)) d = {Action::finalize(), "fallback", "rule table produced an illegal action: " + *still};
      }
      const std::uint64_t before = mgr_.total_steps();
      json outcome = execute(d.action, res);
      log(res, s, d, std::move(outcome));
      if (d.action.kind == ActionKind::Finalize) return;
      idle = mgr_.total_steps() == before && d.action.kind != ActionKind::TerminateAndBranch ? idle + 1 : 0;
    }
    log(res, summarize(), {Action::finalize(), "rule", "decision cap reached"}, json{{"result", "finalized"}});
  }

  PolicyDecision forced(const StateSummary& s, const std::string& why) const {
    auto d = rule_policy(s, cfg_.rules);
    return {d.action, "fallback", why + "; rule " + d.rule};
  }

  json execute(const Action& a, AttackResult& res) {
    switch (a.kind) {
      case ActionKind::Continue: return do_burst(a.mode, a.n_steps);
      case ActionKind::Switch: {
        track_.mode = a.mode;
        track_.warmup = false;
        track_.plateau.clear();
        ++track_.switches;
        return json{{"mode", to_string(a.mode)}};
      }
      case ActionKind::Rollback: {
        Session& s = mgr_.get(track_.id);
        const auto& rec = s.rollback(a.checkpoint);
        track_.rolled_back_to_best = track_.best_checkpoint && a.checkpoint == *track_.best_checkpoint;
        if (!track_.rolled_back_to_best) recompute_best(s);
        const auto it = track_.scores.find(a.checkpoint);
        if (it != track_.scores.end()) {
          track_.prev_fused = track_.fused;
          track_.fused = it->second.first;
          track_.plausible = it->second.second;
        }
        track_.plateau.clear();
        return json{{"discarded_from", rec.from_step}, {"discarded_to", rec.to_step}};
      }
      case ActionKind::TerminateAndBranch: {
        const SessionId old = track_.id;
        mgr_.get(old).terminate();
        start_session(old);
        return json{{"terminated", old}, {"new_session", track_.id}};
      }
      case ActionKind::Refine: return do_refine(a.candidate, res);
      case ActionKind::Finalize: return json{{"result", "finalized"}};
    }
    return json();
  }

  /// Best scored checkpoint still on the live trajectory.
  void recompute_best(const Session& s) {
    track_.best_checkpoint.reset();
    track_.best_fused = -1.0;
    for (const auto& c : s.checkpoints()) {
      const auto it = track_.scores.find(c.id);
      if (it != track_.scores.end() && it->second.first > track_.best_fused) {
        track_.best_fused = it->second.first;
        track_.best_checkpoint = c.id;
      }
    }
  }

  json do_burst(UpdateMode mode, int n) {
    Session& s = mgr_.get(track_.id);
    track_.mode = mode;
    const BurstResult b = s.burst(mode, n, r(), enc());
    json out{{"steps", b.trace.size()}};
    if (b.aborted) out["aborted"] = b.reason;
    if (b.trace.empty()) {
      // Nothing moved; make sure the next decision sees a plateau.
      track_.plateau.assign(static_cast<std::size_t>(cfg_.stagnation.window), track_.last_end);
      return out;
    }
    if (track_.warmup) track_.warmup_steps += static_cast<int>(b.trace.size());
    ++track_.bursts;
    const auto [cid, idx] = mgr_.checkpoint(s.id(), r(), enc());
    const Candidate c = mgr_.pool().at(idx);
    Perception p = agents_.perception->perceive(c.image);
    const FusedFeedback fb = p.feedback;
    mgr_.pool().attach_perception(idx, std::move(p));
    const double end = s.burst_end_losses().back();
    track_.relative_improvement = track_.bursts > 1 && track_.last_end > 0.0 ? (track_.last_end - end) / track_.last_end : 1.0;
    if (track_.relative_improvement >= cfg_.rules.improvement) track_.switches = 0;
    track_.last_end = end;
    track_.plateau.push_back(end);
    if (b.aborted) track_.plateau.assign(static_cast<std::size_t>(cfg_.stagnation.window), end);
    track_.prev_fused = track_.bursts > 1 ? track_.fused : fb.fused;
    track_.fused = fb.fused;
    track_.plausible = fb.plausible;
    track_.scores[cid] = {fb.fused, fb.plausible};
    if (fb.fused > track_.best_fused) {
      track_.best_fused = fb.fused;
      track_.best_checkpoint = cid;
      track_.rolled_back_to_best = false;
    }
    out["checkpoint"] = cid;
    out["candidate"] = idx;
    out["loss"] = end;
    out["residual"] = c.data_residual;
    out["fused"] = fb.fused;
    out["plausible"] = fb.plausible;
    if (!fb.judge_scored) out["judge"] = fb.note;
    return out;
  }

  json do_refine(std::size_t candidate, AttackResult& res) {
    ++refinements_used_;
    if (refined_.size() <= candidate) refined_.resize(candidate + 1, false);
    refined_[candidate] = true;
    const Candidate src = mgr_.pool().at(candidate);
    json out{{"source", candidate}};
    if (!agents_.generator) {
      out["skipped"] = "no generator configured";
      return out;
    }
    RestorationPrompt prompt;
    try {
      prompt = compose_prompt(agents_.perception->judge().describe(src.image, kDescribePrompt));
    } catch (const std::exception& e) {
      out["skipped"] = std::string("describe failed: ") + e.what();
      return out;
    }
    Image gen;
    try {
      gen = agents_.generator->generate(src.image, prompt);
    } catch (const std::exception& e) {
      out["skipped"] = std::string("generation unavailable: ") + e.what();
      return out;
    }
    RefinementOutcome o = reanchor(gen, candidate, mgr_, r(), enc(), *agents_.perception, cfg_.reanchor, steps_remaining());
    out["accepted"] = o.accepted();
    out["reason"] = o.reason;
    out["residual_before"] = o.residual_before;
    out["residual_after"] = o.residual_after;
    out["steps"] = o.steps;
    if (o.pool_index) out["candidate"] = *o.pool_index;
    res.refinements.push_back(std::move(o));
    return out;
  }

  void finish(AttackResult& res) {
    res.pool = mgr_.pool().entries();
    res.steps_used = mgr_.total_steps();
    res.branches_used = mgr_.branches_used();
    res.sessions = static_cast<int>(mgr_.ids().size());
    const auto pick = select_candidate(res.pool, cfg_.final_residual_ratio);
    if (!pick) {
      res.failed = true;
      res.diagnostics = res.steps_used == 0 ? "attack failed: no steps were run, candidate pool is empty"
                                            : "attack failed: candidate pool is empty (every burst was aborted)";
      return;
    }
    res.final_index = pick;
    res.final_image = res.pool[*pick].image;
  }

  const AttackContext& ctx_;
  AttackAgents agents_;
  OrchestratorConfig cfg_;
  Rng rng_;
  std::optional<ChannelOracle> oracle_;
  SessionManager mgr_;
  detail::SessionTrack track_;
  std::uint64_t session_counter_ = 0;
  int refinements_used_ = 0;
  std::vector<bool> refined_;
};

inline AttackResult run_attack(const AttackContext& ctx, AttackAgents agents, const OrchestratorConfig& cfg, Rng rng,
                               std::optional<ChannelOracle> oracle = std::nullopt) {
  return AttackRunner(ctx, std::move(agents), cfg, rng, std::move(oracle)).run();
}

}  // namespace wiretap
