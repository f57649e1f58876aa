#pragma once
// Experiment configuration, baselines, SNR sweeps with resumable CSV output.

#include "wiretap/channel.hpp"
#include "wiretap/http_transport.hpp"
#include "wiretap/inversion.hpp"
#include "wiretap/metrics.hpp"
#include "wiretap/orchestrator.hpp"
#include "wiretap/perception.hpp"
#include "wiretap/refinement.hpp"
#include "wiretap/semcom.hpp"
#include "wiretap/session.hpp"

#include <bit>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace wiretap {

enum class MethodId { Bob, MiaNoCsi, MiaCsi, AgenticNoRefine, Agentic, AgenticCsi };

inline const std::vector<MethodId>& all_methods() {
  static const std::vector<MethodId> m{MethodId::Bob,          MethodId::MiaNoCsi, MethodId::MiaCsi,
                                       MethodId::AgenticNoRefine, MethodId::Agentic,  MethodId::AgenticCsi};
  return m;
}

inline std::string to_string(MethodId m) {
  switch (m) {
    case MethodId::Bob: return "bob";
    case MethodId::MiaNoCsi: return "mia_nocsi";
    case MethodId::MiaCsi: return "mia_csi";
    case MethodId::AgenticNoRefine: return "agentic_norefine";
    case MethodId::Agentic: return "agentic";
    case MethodId::AgenticCsi: return "agentic_csi";
  }
  return "?";
}

inline MethodId method_from_string(const std::string& s) {
  for (MethodId m : all_methods())
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown method '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 20240601;
  std::string image_source = "synthetic";  // synthetic | directory
  std::string image_directory;
  int height = 16;
  int width = 16;
  EncoderKind encoder_kind = EncoderKind::Linear;
  std::uint64_t encoder_seed = 1;
  int encoder_hidden = 256;
  PowerNormalization normalization = PowerNormalization::Global;
  double bcr = 1.0 / 12.0;
  int n_tx = 2, n_rx = 2, n_eve = 2;
  std::vector<double> snr_db{0, 5, 10, 20};
  int trials = 20;
  std::vector<MethodId> methods = all_methods();
  AttackBudgets budgets;
  OrchestratorConfig orchestrator;
  int mia_steps = 4000;
  BobDecoderConfig bob;
  // Clients.
  std::string policy = "rule";  // rule | llm
  std::string policy_url;
  std::string judge = "heuristic";  // heuristic | remote
  std::string judge_url;
  HeuristicJudgeConfig heuristic;
  IqaCalibration iqa;
  FusionConfig fusion;
  std::string generator = "denoise";  // identity | denoise | adversarial | remote | none
  std::string generator_url;
  RetryPolicy retry;
  int max_inflight = 4;
  int workers = 1;
  bool record_wall_time = false;

  int input_dim() const { return 3 * height * width; }
  int channel_uses() const { return channel_uses_for_bcr(input_dim(), n_tx, bcr); }

  EncoderConfig encoder_config() const {
    EncoderConfig e;
    e.kind = encoder_kind;
    e.height = height;
    e.width = width;
    e.n_tx = n_tx;
    e.channel_uses = channel_uses();
    e.seed = encoder_seed;
    e.hidden = encoder_hidden;
    e.normalization = normalization;
    return e;
  }

  ChannelConfig channel_config(double snr) const {
    ChannelConfig c;
    c.n_tx = n_tx;
    c.n_rx = n_rx;
    c.n_eve = n_eve;
    c.snr_db = snr;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (image_source != "synthetic" && image_source != "directory") fail("image.source must be 'synthetic' or 'directory'");
    if (image_source == "directory" && image_directory.empty()) fail("image.directory is required for a directory source");
    if (height < 16 || width < 16) fail("image dimensions must be >= 16");
    try {
      (void)channel_uses();
      channel_config(0.0).validate();
      budgets.validate();
      orchestrator.validate();
      fusion.validate();
      iqa.validate();
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
    if (snr_db.empty()) fail("snr_db must not be empty");
    if (trials < 1) fail("trials must be >= 1");
    if (methods.empty()) fail("methods must not be empty");
    if (mia_steps < 1) fail("mia.steps must be >= 1");
    if (workers < 1 || workers > 256) fail("workers must be in [1, 256]");
    if (max_inflight < 1 || max_inflight > WireClient::kMaxInflight) fail("transport.max_inflight must be in [1, 64]");
    if (policy != "rule" && policy != "llm") fail("policy.kind must be 'rule' or 'llm'");
    if (judge != "heuristic" && judge != "remote") fail("perception.judge must be 'heuristic' or 'remote'");
    static const std::set<std::string> gens{"identity", "denoise", "adversarial", "remote", "none"};
    if (!gens.count(generator)) fail("refinement.generator must be one of identity|denoise|adversarial|remote|none");
  }
};

namespace detail {

/// Optional-member access on top of StrictReader.
struct Opt {
  StrictReader& rd;
  template <class T>
  void num(const std::string& k, T& out, double lo, double hi) {
    if (rd.has(k)) out = static_cast<T>(rd.number(k, lo, hi));
  }
  void integer(const std::string& k, int& out, std::int64_t lo, std::int64_t hi) {
    if (rd.has(k)) out = static_cast<int>(rd.integer(k, lo, hi));
  }
  void u64(const std::string& k, std::uint64_t& out) {
    if (!rd.has(k)) return;
    const json& v = rd.raw(k);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ProtocolError(rd.qualify(k), "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void boolean(const std::string& k, bool& out) {
    if (rd.has(k)) out = rd.boolean(k);
  }
  void str(const std::string& k, std::string& out) {
    if (rd.has(k)) out = rd.string(k);
  }
};

inline double parse_ratio(const json& v, const std::string& field) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return std::stod(s);
      return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    } catch (const std::exception&) {
    }
  }
  throw ProtocolError(field, "expected a number or a fraction string like \"1/12\"");
}

}  // namespace detail

/// Strict: unknown keys at any level are errors naming the key.
inline ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  try {
    StrictReader rd(doc);
    if (rd.has("schema_version")) rd.expect_version();
    detail::Opt o{rd};
    o.u64("master_seed", c.master_seed);
    if (rd.has("image")) {
      StrictReader r = rd.object("image");
      detail::Opt i{r};
      if (r.has("source")) c.image_source = r.one_of("source", {"synthetic", "directory"});
      i.str("directory", c.image_directory);
      i.integer("height", c.height, 16, 4096);
      i.integer("width", c.width, 16, 4096);
      r.finish();
    }
    if (rd.has("encoder")) {
      StrictReader r = rd.object("encoder");
      detail::Opt e{r};
      if (r.has("kind")) c.encoder_kind = encoder_kind_from_string(r.one_of("kind", {"linear", "mlp"}));
      e.u64("seed", c.encoder_seed);
      e.integer("hidden", c.encoder_hidden, 1, 1 << 16);
      if (r.has("normalization"))
        c.normalization = r.one_of("normalization", {"global", "per_stream"}) == "global" ? PowerNormalization::Global
                                                                                        : PowerNormalization::PerStream;
      r.finish();
    }
    if (rd.has("bcr")) c.bcr = detail::parse_ratio(rd.raw("bcr"), "bcr");
    if (rd.has("antennas")) {
      StrictReader r = rd.object("antennas");
      detail::Opt a{r};
      a.integer("n_tx", c.n_tx, 1, 64);
      a.integer("n_rx", c.n_rx, 1, 64);
      a.integer("n_eve", c.n_eve, 1, 64);
      r.finish();
    }
    if (rd.has("snr_db")) {
      const json& v = rd.raw("snr_db");
      if (!v.is_array()) throw ProtocolError("snr_db", "expected an array of numbers");
      c.snr_db.clear();
      for (const auto& e : v) {
        if (!e.is_number()) throw ProtocolError("snr_db", "expected an array of numbers");
        c.snr_db.push_back(e.get<double>());
      }
    }
    o.integer("trials", c.trials, 1, 1000000);
    if (rd.has("methods")) {
      c.methods.clear();
      for (const auto& m : rd.string_list("methods")) {
        try {
          c.methods.push_back(method_from_string(m));
        } catch (const InvalidArgument& e) {
          throw ProtocolError("methods", e.what());
        }
      }
    }
    if (rd.has("budgets")) {
      StrictReader r = rd.object("budgets");
      detail::Opt b{r};
      b.integer("max_steps", c.budgets.max_steps, 0, 10000000);
      b.integer("max_branches", c.budgets.max_branches, 0, 1000);
      b.integer("max_refinements", c.budgets.max_refinements, 0, 1000);
      r.finish();
    }
    auto& oc = c.orchestrator;
    if (rd.has("inversion")) {
      StrictReader r = rd.object("inversion");
      detail::Opt v{r};
      v.num("lambda_tv", oc.hyper.lambda_tv, 0.0, 1e6);
      v.num("lr_x", oc.hyper.lr_x, 0.0, 1e3);
      v.num("lr_g", oc.hyper.lr_g, 0.0, 1e3);
      v.num("beta1", oc.hyper.adam.beta1, 0.0, 0.999999);
      v.num("beta2", oc.hyper.adam.beta2, 0.0, 0.999999999);
      v.num("eps", oc.hyper.adam.eps, 1e-300, 1.0);
      v.num("branch_gray", oc.branch_init.gray, 0.0, 1.0);
      v.num("branch_jitter", oc.branch_init.jitter, 0.0, 1.0);
      r.finish();
    }
    if (rd.has("stagnation")) {
      StrictReader r = rd.object("stagnation");
      detail::Opt s{r};
      s.integer("window", oc.stagnation.window, 2, 1000);
      s.num("epsilon", oc.stagnation.epsilon, 1e-300, 1.0);
      r.finish();
    }
    if (rd.has("policy")) {
      StrictReader r = rd.object("policy");
      detail::Opt p{r};
      if (r.has("kind")) c.policy = r.one_of("kind", {"rule", "llm"});
      p.str("url", c.policy_url);
      p.integer("burst", oc.rules.burst, kMinPolicyBurst, kMaxPolicyBurst);
      p.integer("warmup_steps", oc.rules.warmup_steps, 0, 10000000);
      p.boolean("warmup", oc.warmup);
      p.num("score_drop", oc.rules.score_drop, 1e-12, 1.0);
      p.num("improvement", oc.rules.improvement, 1e-12, 1.0);
      p.integer("max_switches", oc.rules.max_switches, 0, 100);
      p.num("final_residual_ratio", oc.final_residual_ratio, 1.0, 1e6);
      r.finish();
    }
    if (rd.has("perception")) {
      StrictReader r = rd.object("perception");
      detail::Opt p{r};
      if (r.has("judge")) c.judge = r.one_of("judge", {"heuristic", "remote"});
      p.str("url", c.judge_url);
      p.num("w_q", c.fusion.w_q, 0.0, 1.0);
      p.num("w_e", c.fusion.w_e, 0.0, 1.0);
      p.num("tau_plausible", c.fusion.tau_plausible, 0.0, 1.0);
      p.num("face_threshold", c.heuristic.face_threshold, 0.0, 1.0);
      p.num("artifact_threshold", c.heuristic.artifact_threshold, 0.0, 1e6);
      if (r.has("iqa_calibration")) {
        StrictReader q = r.object("iqa_calibration");
        detail::Opt qq{q};
        qq.num("sharp_log_lo", c.iqa.sharp_log_lo, -1e6, 1e6);
        qq.num("sharp_log_hi", c.iqa.sharp_log_hi, -1e6, 1e6);
        qq.num("tv_band_lo", c.iqa.tv_band_lo, 0.0, 1e6);
        qq.num("tv_band_hi", c.iqa.tv_band_hi, 0.0, 1e6);
        q.finish();
      }
      r.finish();
    }
    if (rd.has("refinement")) {
      StrictReader r = rd.object("refinement");
      detail::Opt f{r};
      if (r.has("generator")) c.generator = r.one_of("generator", {"identity", "denoise", "adversarial", "remote", "none"});
      f.str("url", c.generator_url);
      f.num("rho_accept", oc.reanchor.rho_accept, 1e-12, 1e6);
      f.integer("steps", oc.reanchor.steps, 1, kMaxBurstSteps);
      f.boolean("inherit_moments", oc.reanchor.inherit_moments);
      r.finish();
    }
    if (rd.has("mia")) {
      StrictReader r = rd.object("mia");
      detail::Opt m{r};
      m.integer("steps", c.mia_steps, 1, 10000000);
      r.finish();
    }
    if (rd.has("bob")) {
      StrictReader r = rd.object("bob");
      detail::Opt b{r};
      b.integer("mlp_steps", c.bob.mlp_steps, 1, 10000000);
      b.num("mlp_learning_rate", c.bob.mlp_learning_rate, 1e-12, 1e3);
      b.num("mlp_tolerance", c.bob.mlp_tolerance, 0.0, 1.0);
      r.finish();
    }
    if (rd.has("transport")) {
      StrictReader r = rd.object("transport");
      detail::Opt t{r};
      t.integer("timeout_ms", c.retry.timeout_ms, 1, 3600000);
      t.integer("attempts", c.retry.attempts, 1, 100);
      t.integer("backoff_ms", c.retry.backoff_ms, 0, 60000);
      t.integer("max_inflight", c.max_inflight, 1, WireClient::kMaxInflight);
      r.finish();
    }
    o.integer("workers", c.workers, 1, 256);
    o.boolean("record_wall_time", c.record_wall_time);
    rd.finish();
  } catch (const ProtocolError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  // Environment overrides for client endpoints.
  if (auto u = endpoint_from_env(kJudgeUrlEnv)) c.judge_url = *u;
  if (auto u = endpoint_from_env(kGeneratorUrlEnv)) c.generator_url = *u;
  if (auto u = endpoint_from_env(kPolicyUrlEnv)) c.policy_url = *u;
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Trials

/// Seed for cell (snr, trial), independent of method and of scheduling.
inline std::uint64_t trial_seed(std::uint64_t master, double snr_db, int trial) {
  return Rng(master).child(std::bit_cast<std::uint64_t>(snr_db)).child(static_cast<std::uint64_t>(trial)).seed();
}

struct TrialSetup {
  std::uint64_t seed = 0;
  double snr_db = 0.0;
  int trial = 0;
  Image source;
  ChannelConfig channel;
  Codeword codeword;
  Transmission tx;
};

inline std::vector<std::string> list_ppm_files(const std::string& dir) {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && (e.path().extension() == ".ppm" || e.path().extension() == ".PPM")) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("config: no .ppm files in '" + dir + "'");
  return out;
}

/// Source image, Alice's codeword and one channel realisation. Rng streams:
/// child(1) source, child(2) channel, child(3) attack.
inline TrialSetup make_trial(const ExperimentConfig& cfg, const Encoder& enc, double snr_db, int trial,
                             const Image* source = nullptr) {
  TrialSetup t;
  t.seed = trial_seed(cfg.master_seed, snr_db, trial);
  t.snr_db = snr_db;
  t.trial = trial;
  Rng root(t.seed);
  if (source) {
    if (source->height() != cfg.height || source->width() != cfg.width)
      throw ConfigError("source image is " + std::to_string(source->height()) + "x" + std::to_string(source->width()) +
                        ", config expects " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    t.source = *source;
  } else if (cfg.image_source == "synthetic") {
    Rng img = root.child(1);
    t.source = synth_face(img, cfg.height, cfg.width).image;
  } else {
    const auto files = list_ppm_files(cfg.image_directory);
    t.source = read_image(files[static_cast<std::size_t>(trial) % files.size()]);
    if (t.source.height() != cfg.height || t.source.width() != cfg.width)
      throw ConfigError("image '" + files[static_cast<std::size_t>(trial) % files.size()] + "' does not match the configured size");
  }
  t.channel = cfg.channel_config(snr_db);
  t.codeword = enc.encode(t.source);
  Rng ch = root.child(2);
  t.tx = transmit(t.codeword.symbols, t.channel, ch);
  return t;
}

inline Rng attack_rng(const TrialSetup& t, MethodId m) {
  return Rng(t.seed).child(3).child(static_cast<std::uint64_t>(m));
}

inline std::shared_ptr<Transport> make_http(const std::string& url, const RetryPolicy& retry, const char* what) {
  if (url.empty()) throw ConfigError(std::string("config: ") + what + " is remote but no URL is configured");
  return std::make_shared<HttpTransport>(url, retry.timeout_ms);
}

/// Clients per trial; adversarial generators are seeded from the trial so
/// results stay order-independent.
inline AttackAgents make_agents(const ExperimentConfig& cfg, std::uint64_t seed) {
  AttackAgents a;
  std::shared_ptr<Judge> judge;
  if (cfg.judge == "remote")
    judge = std::make_shared<WireJudge>(make_http(cfg.judge_url, cfg.retry, "judge"), cfg.retry, cfg.max_inflight);
  else
    judge = std::make_shared<HeuristicJudge>(cfg.heuristic);
  a.perception = std::make_shared<PerceptionAgent>(judge, cfg.iqa, cfg.fusion);
  if (cfg.generator == "identity") a.generator = std::make_shared<IdentityGenerator>();
  else if (cfg.generator == "denoise") a.generator = std::make_shared<DenoiseGenerator>();
  else if (cfg.generator == "adversarial") a.generator = std::make_shared<AdversarialGenerator>(Rng(seed).child(4).seed());
  else if (cfg.generator == "remote")
    a.generator = std::make_shared<RemoteGenerator>(make_http(cfg.generator_url, cfg.retry, "generator"), cfg.retry, cfg.max_inflight);
  if (cfg.policy == "llm")
    a.policy = std::make_shared<LlmPolicy>(make_http(cfg.policy_url, cfg.retry, "policy"), cfg.orchestrator.rules, cfg.retry);
  else
    a.policy = std::make_shared<RulePolicy>(cfg.orchestrator.rules);
  return a;
}

struct MethodRun {
  TrialReport report;
  Image estimate;
  std::optional<AttackResult> attack;
};

namespace detail {

/// Single-session fixed-budget inversion (the MIA baselines).
inline std::pair<Image, std::uint64_t> plain_inversion(const Encoder& enc, const CMatrix& r, OptimState st, UpdateMode mode, int steps,
                                                       std::string* abort_reason) {
  int left = steps;
  std::uint64_t done = 0;
  while (left > 0) {
    const int n = std::min(left, kMaxBurstSteps);
    const BurstResult b = run_burst(st, mode, n, r, enc);
    done += b.trace.size();
    if (b.aborted) {
      *abort_reason = b.reason;
      break;
    }
    left -= n;
  }
  return {st.snapshot(), done};
}

}  // namespace detail

inline MethodRun run_method(MethodId method, const ExperimentConfig& cfg, const std::shared_ptr<const Encoder>& enc,
                            const TrialSetup& t, const EvalConfig& eval) {
  MethodRun out;
  TrialReport& rep = out.report;
  rep.method = to_string(method);
  rep.snr_db = t.snr_db;
  rep.trial = t.trial;
  rep.seed = t.seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Rng rng = attack_rng(t, method);
    const CMatrix& r = t.tx.r;
    switch (method) {
      case MethodId::Bob: {
        const CVector zhat = zf_receive(t.tx.y, t.tx.h);
        const DecodeResult d = bob_decode(*enc, zhat, t.codeword.gains, cfg.bob);
        out.estimate = d.image;
        if (d.flagged) rep.reason = d.warning;
        break;
      }
      case MethodId::MiaNoCsi:
      case MethodId::MiaCsi: {
        OptimState st = fresh_state(rng, cfg.height, cfg.width, cfg.n_eve, cfg.n_tx, cfg.orchestrator.hyper, cfg.orchestrator.branch_init);
        UpdateMode mode = UpdateMode::Joint;
        if (method == MethodId::MiaCsi) {
          st.g = t.tx.g;
          mode = UpdateMode::ImageOnly;
        }
        std::string reason;
        auto [img, steps] = detail::plain_inversion(*enc, r, std::move(st), mode, cfg.mia_steps, &reason);
        out.estimate = img;
        rep.steps = steps;
        if (!reason.empty()) {
          rep.status = "failed";
          rep.reason = reason;
        }
        break;
      }
      case MethodId::AgenticNoRefine:
      case MethodId::Agentic:
      case MethodId::AgenticCsi: {
        WiretapStatistics stats{1.0, cfg.n_eve, cfg.n_tx, t.channel.eve_noise_variance()};
        AttackContext ctx(r, enc, stats, cfg.budgets, cfg.policy);
        OrchestratorConfig oc = cfg.orchestrator;
        if (method == MethodId::AgenticNoRefine) oc.refinement = false;
        std::optional<ChannelOracle> oracle;
        if (method == MethodId::AgenticCsi) oracle = ChannelOracle{t.tx.g};
        AttackResult res = run_attack(ctx, make_agents(cfg, t.seed), oc, rng, oracle);
        rep.steps = res.steps_used;
        if (res.failed) {
          rep.status = "failed";
          rep.reason = res.diagnostics;
        } else {
          out.estimate = res.final_image;
        }
        out.attack = std::move(res);
        break;
      }
    }
    if (!out.estimate.empty()) rep.set(evaluate(t.source, out.estimate, eval));
  } catch (const std::exception& e) {
    rep.status = "failed";
    rep.reason = e.what();
  }
  if (cfg.record_wall_time)
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline json audit_log_json(const AttackResult& res) {
  json entries = json::array();
  for (const auto& e : res.audit) entries.push_back(audit_to_json(e));
  json refs = json::array();
  for (const auto& r : res.refinements)
    refs.push_back({{"source", r.source},
                    {"accepted", r.accepted()},
                    {"reason", r.reason},
                    {"residual_before", r.residual_before},
                    {"residual_after", r.residual_after},
                    {"steps", r.steps}});
  return json{{"failed", res.failed},
              {"diagnostics", res.diagnostics},
              {"final_index", res.final_index ? json(*res.final_index) : json(nullptr)},
              {"steps_used", res.steps_used},
              {"branches_used", res.branches_used},
              {"sessions", res.sessions},
              {"pool_size", res.pool.size()},
              {"refinements", refs},
              {"actions", entries}};
}

/// Tiny built-in configuration for `wiretap_cli demo`; configs/demo.json is
/// a copy.
inline const char* demo_config_text() {
  return R"({
  "schema_version": "1",
  "master_seed": 7,
  "image": {"source": "synthetic", "height": 16, "width": 16},
  "encoder": {"kind": "linear", "seed": 1},
  "bcr": "1/12",
  "antennas": {"n_tx": 2, "n_rx": 2, "n_eve": 2},
  "snr_db": [5, 20],
  "trials": 2,
  "methods": ["bob", "mia_nocsi", "mia_csi", "agentic_norefine", "agentic", "agentic_csi"],
  "budgets": {"max_steps": 2000, "max_branches": 2, "max_refinements": 2},
  "mia": {"steps": 2000},
  "refinement": {"generator": "denoise"}
}
)";
}

inline ExperimentConfig demo_config() { return config_from_json(json::parse(demo_config_text())); }

// ---------------------------------------------------------------------------
// Sweep

struct SweepTask {
  MethodId method;
  double snr_db;
  int trial;
};

inline std::string cell_key(const std::string& method, double snr, int trial) {
  return method + "|" + format_double(snr) + "|" + std::to_string(trial);
}

/// Completed (method, snr, trial) cells found in an existing row file.
inline std::set<std::string> completed_cells(const std::string& csv_path) {
  std::set<std::string> done;
  std::ifstream f(csv_path);
  if (!f) return done;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (header) {
      header = false;
      if (line != csv_header()) throw InvalidArgument("existing file '" + csv_path + "' has an unexpected header");
      continue;
    }
    if (line.empty()) continue;
    try {
      const TrialReport r = from_csv_row(line);
      done.insert(cell_key(r.method, r.snr_db, r.trial));
    } catch (const std::exception&) {
      // A torn final line from an interrupted run; that cell is redone.
    }
  }
  return done;
}

inline std::vector<TrialReport> read_reports(const std::string& csv_path) {
  std::vector<TrialReport> out;
  std::ifstream f(csv_path);
  if (!f) throw std::runtime_error("cannot open '" + csv_path + "'");
  std::string line;
  std::getline(f, line);
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(from_csv_row(line));
  return out;
}

struct SweepOptions {
  std::string rows_path;
  std::string aggregate_path;  // empty: rows_path with .agg.csv
  bool resume = true;
  std::ostream* progress = &std::cerr;
};

struct SweepSummary {
  std::size_t executed = 0;
  std::size_t skipped = 0;
  std::vector<CellSummary> cells;
  std::vector<std::string> warnings;
};

/// Full factorial methods x SNR x trials. Results are written in canonical
/// task order whatever the worker count, so the row file is deterministic.
inline SweepSummary sweep(const ExperimentConfig& cfg, const SweepOptions& opt) {
  cfg.validate();
  require(!opt.rows_path.empty(), "sweep: rows path required");
  const std::string agg_path = opt.aggregate_path.empty() ? opt.rows_path + ".agg.csv" : opt.aggregate_path;
  auto enc = std::make_shared<const Encoder>(cfg.encoder_config());
  const EvalConfig eval;

  std::set<std::string> done;
  if (opt.resume && std::filesystem::exists(opt.rows_path)) {
    // Cut a torn final line so appended rows start on a fresh line.
    std::string text;
    {
      std::ifstream f(opt.rows_path, std::ios::binary);
      text.assign(std::istreambuf_iterator<char>(f), {});
    }
    if (!text.empty() && text.back() != '\n') {
      const auto nl = text.rfind('\n');
      std::filesystem::resize_file(opt.rows_path, nl == std::string::npos ? 0 : nl + 1);
    }
    done = completed_cells(opt.rows_path);
  }
  const bool fresh = done.empty() && !(opt.resume && std::filesystem::exists(opt.rows_path) && std::filesystem::file_size(opt.rows_path) > 0);

  std::vector<SweepTask> tasks;
  SweepSummary summary;
  for (MethodId m : cfg.methods)
    for (double snr : cfg.snr_db)
      for (int k = 0; k < cfg.trials; ++k) {
        if (done.count(cell_key(to_string(m), snr, k))) {
          ++summary.skipped;
          continue;
        }
        tasks.push_back({m, snr, k});
      }

  std::ofstream out(opt.rows_path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw std::runtime_error("cannot open '" + opt.rows_path + "' for writing");
  if (fresh) out << csv_header() << "\n";
  out.flush();

  std::mutex mu;
  std::condition_variable cv;
  std::map<std::size_t, TrialReport> ready;
  std::size_t next_task = 0, next_write = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next_task >= tasks.size()) return;
        i = next_task++;
      }
      const SweepTask& task = tasks[i];
      TrialReport rep;
      try {
        const TrialSetup t = make_trial(cfg, *enc, task.snr_db, task.trial);
        rep = run_method(task.method, cfg, enc, t, eval).report;
      } catch (const std::exception& e) {
        rep.method = to_string(task.method);
        rep.snr_db = task.snr_db;
        rep.trial = task.trial;
        rep.seed = trial_seed(cfg.master_seed, task.snr_db, task.trial);
        rep.status = "failed";
        rep.reason = e.what();
      }
      std::lock_guard lock(mu);
      ready.emplace(i, std::move(rep));
      // Single writer: whoever holds the lock flushes the in-order prefix.
      while (!ready.empty() && ready.begin()->first == next_write) {
        const TrialReport& r = ready.begin()->second;
        out << to_csv_row(r) << "\n";
        out.flush();
        if (opt.progress)
          *opt.progress << "[" << (next_write + 1) << "/" << tasks.size() << "] " << r.method << " snr=" << format_double(r.snr_db)
                        << " trial=" << r.trial << " cosine=" << format_double(r.cosine) << " " << r.status << "\n";
        ready.erase(ready.begin());
        ++next_write;
      }
      cv.notify_all();
    }
  };
  const int n_workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(tasks.size())));
  if (!tasks.empty()) {
    std::vector<std::thread> pool;
    for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }
  out.close();
  summary.executed = tasks.size();

  const auto reports = read_reports(opt.rows_path);
  summary.cells = aggregate(reports, &summary.warnings);
  std::ofstream agg(agg_path, std::ios::trunc);
  if (!agg) throw std::runtime_error("cannot open '" + agg_path + "' for writing");
  agg << aggregate_header() << "\n";
  for (const auto& c : summary.cells) agg << to_aggregate_row(c) << "\n";
  if (opt.progress)
    for (const auto& w : summary.warnings) *opt.progress << "warning: " << w << "\n";
  return summary;
}

}  // namespace wiretap
