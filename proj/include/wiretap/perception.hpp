#pragma once
// Reference-free candidate assessment: surrogate NR-IQA metrics, judge
// clients returning structured visual evidence, and score fusion.

#include "wiretap/image.hpp"
#include "wiretap/wire.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace wiretap {

// ---------------------------------------------------------------------------
// NR-IQA surrogates

/// Normalisation bounds for the built-in metrics. Defaults were produced by
/// calibrate_iqa() with the default arguments (see `wiretap_cli calibrate`).
struct IqaCalibration {
  double sharp_log_lo = -2.6360878786048576;  // log Laplacian variance mapped to 0
  double sharp_log_hi = -1.9191584766757483;  // ... and to 1
  double tv_band_lo = 0.08902017473048035;    // natural TV-per-pixel band
  double tv_band_hi = 0.14076752224140507;

  void validate() const {
    require(std::isfinite(sharp_log_lo) && std::isfinite(sharp_log_hi) && sharp_log_hi > sharp_log_lo,
            "IqaCalibration: sharpness bounds invalid");
    require(tv_band_lo >= 0.0 && tv_band_hi > tv_band_lo, "IqaCalibration: TV band invalid");
  }
};

using IqaVector = std::vector<double>;

inline constexpr const char* kIqaMetricNames[] = {"sharpness", "saturation", "tv_naturalness"};

namespace detail {

/// Variance of the 3x3 Laplacian response on the interior of a plane.
inline double laplacian_variance(const std::vector<double>& g, int h, int w) {
  if (h < 3 || w < 3) return 0.0;
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      const auto at = [&](int yy, int xx) { return g[static_cast<std::size_t>(yy) * w + xx]; };
      const double l = at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x);
      sum += l;
      sq += l * l;
      ++n;
    }
  const double mean = sum / n;
  return std::max(0.0, sq / n - mean * mean);
}

inline double tv_per_pixel(const Image& x) { return total_variation(x) / static_cast<double>(x.size()); }

inline double band_score(double v, double lo, double hi) {
  const double width = hi - lo;
  if (v < lo) return std::max(0.0, 1.0 - (lo - v) / width);
  if (v > hi) return std::max(0.0, 1.0 - (v - hi) / width);
  return 1.0;
}

}  // namespace detail

/// m1 sharpness, m2 saturation sanity, m3 TV naturalness; each in [0, 1].
inline IqaVector iqa_score(const Image& img, const IqaCalibration& cal = {}) {
  const Image x = img.clipped();
  const auto g = x.grayscale();
  const double lv = detail::laplacian_variance(g, x.height(), x.width());
  double m1 = 0.0;
  if (lv > 0.0) m1 = std::clamp((std::log(lv) - cal.sharp_log_lo) / (cal.sharp_log_hi - cal.sharp_log_lo), 0.0, 1.0);
  std::size_t saturated = 0;
  for (double v : x.values())
    if (v == 0.0 || v == 1.0) ++saturated;
  const double m2 = 1.0 - static_cast<double>(saturated) / static_cast<double>(x.size());
  const double m3 = std::clamp(detail::band_score(detail::tv_per_pixel(x), cal.tv_band_lo, cal.tv_band_hi), 0.0, 1.0);
  return {m1, m2, m3};
}

inline double iqa_mean(const IqaVector& q) {
  require(!q.empty(), "iqa_mean: empty vector");
  return std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
}

/// Bounds from seeded clean faces and clipped Gaussian-noise images:
/// sharpness spans the faces' 5th..95th percentile of log Laplacian variance,
/// the TV band is the faces' 5th..95th percentile of TV per pixel.
inline IqaCalibration calibrate_iqa(std::uint64_t seed = 0xca11b8, int count = 200, int height = 16, int width = 16) {
  require(count >= 20, "calibrate_iqa: need at least 20 images per class");
  Rng rng(seed);
  Rng face_rng = rng.child(1), noise_rng = rng.child(2);
  std::vector<double> sharp, tv, noise_tv;
  for (int i = 0; i < count; ++i) {
    const Image f = synth_face(face_rng, height, width).image;
    const double lv = detail::laplacian_variance(f.grayscale(), height, width);
    sharp.push_back(std::log(std::max(lv, 1e-300)));
    tv.push_back(detail::tv_per_pixel(f));
    noise_tv.push_back(detail::tv_per_pixel(gaussian_noise_image(noise_rng, height, width)));
  }
  auto pct = [](std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * (static_cast<double>(v.size()) - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  IqaCalibration c;
  c.sharp_log_lo = pct(sharp, 0.05);
  c.sharp_log_hi = pct(sharp, 0.95);
  c.tv_band_lo = pct(tv, 0.05);
  c.tv_band_hi = pct(tv, 0.95);
  // The noise class must sit clearly outside the band for m3 to mean anything.
  require(pct(noise_tv, 0.05) > c.tv_band_hi, "calibrate_iqa: noise TV overlaps the natural band");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Visual evidence

enum class Pose { Frontal, Profile, Other, None };

inline std::string to_string(Pose p) {
  switch (p) {
    case Pose::Frontal: return "frontal";
    case Pose::Profile: return "profile";
    case Pose::Other: return "other";
    case Pose::None: return "none";
  }
  return "none";
}

inline Pose pose_from_string(const std::string& s) {
  if (s == "frontal") return Pose::Frontal;
  if (s == "profile") return Pose::Profile;
  if (s == "other") return Pose::Other;
  if (s == "none") return Pose::None;
  throw InvalidArgument("unknown pose '" + s + "'");
}

struct VisualEvidence {
  std::string schema_version = kSchemaVersion;
  bool face_visible = false;
  Pose pose = Pose::None;
  double components_complete = 0.0;
  bool artifacts_present = false;
  double artifact_severity = 0.0;
  std::vector<std::string> artifact_descriptions;
  double confidence = 0.0;
  // glasses, background, hairstyle, ... ; never scored.
  std::map<std::string, std::string> attributes;

  void validate() const {
    auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    require(schema_version == kSchemaVersion, "VisualEvidence: unsupported schema version");
    require(unit(components_complete) && unit(artifact_severity) && unit(confidence),
            "VisualEvidence: numeric field out of [0, 1]");
  }

  bool operator==(const VisualEvidence&) const = default;
};

inline json evidence_to_json(const VisualEvidence& v) {
  json attrs = json::object();
  for (const auto& [k, val] : v.attributes) attrs[k] = val;
  return json{{"schema_version", v.schema_version},
              {"face_visible", v.face_visible},
              {"pose", to_string(v.pose)},
              {"components_complete", v.components_complete},
              {"artifacts_present", v.artifacts_present},
              {"artifact_severity", v.artifact_severity},
              {"artifact_descriptions", v.artifact_descriptions},
              {"confidence", v.confidence},
              {"attributes", attrs}};
}

/// Strict parse of an assess response (request_id is checked by the client
/// and skipped here).
inline VisualEvidence evidence_from_json(const json& doc) {
  StrictReader rd(doc);
  if (rd.has("request_id")) rd.raw("request_id");
  rd.expect_version();
  VisualEvidence v;
  v.face_visible = rd.boolean("face_visible");
  v.pose = pose_from_string(rd.one_of("pose", {"frontal", "profile", "other", "none"}));
  v.components_complete = rd.number("components_complete", 0.0, 1.0);
  v.artifacts_present = rd.boolean("artifacts_present");
  v.artifact_severity = rd.number("artifact_severity", 0.0, 1.0);
  v.artifact_descriptions = rd.string_list("artifact_descriptions");
  v.confidence = rd.number("confidence", 0.0, 1.0);
  const json& attrs = rd.raw("attributes");
  if (!attrs.is_object()) throw ProtocolError("attributes", "expected an object");
  for (auto it = attrs.begin(); it != attrs.end(); ++it) {
    if (!it.value().is_string()) throw ProtocolError("attributes." + it.key(), "expected a string");
    v.attributes[it.key()] = it.value().get<std::string>();
  }
  rd.finish();
  return v;
}

/// Attribute caption used by the refinement agent; every field present,
/// "unknown" when the judge cannot tell.
struct AttributeDescription {
  std::string schema_version = kSchemaVersion;
  std::string identity_cues = "unknown";
  std::string appearance = "unknown";
  std::string pose = "unknown";
  std::string lighting = "unknown";
  std::string background = "unknown";
  std::string quality_issues = "unknown";

  bool operator==(const AttributeDescription&) const = default;
};

inline constexpr const char* kDescriptionFields[] = {"identity_cues", "appearance", "pose",
                                                     "lighting",      "background", "quality_issues"};

inline json description_to_json(const AttributeDescription& d) {
  return json{{"schema_version", d.schema_version}, {"identity_cues", d.identity_cues}, {"appearance", d.appearance},
              {"pose", d.pose},                     {"lighting", d.lighting},           {"background", d.background},
              {"quality_issues", d.quality_issues}};
}

inline AttributeDescription description_from_json(const json& doc) {
  StrictReader rd(doc);
  if (rd.has("request_id")) rd.raw("request_id");
  rd.expect_version();
  AttributeDescription d;
  d.identity_cues = rd.nonempty_string("identity_cues");
  d.appearance = rd.nonempty_string("appearance");
  d.pose = rd.nonempty_string("pose");
  d.lighting = rd.nonempty_string("lighting");
  d.background = rd.nonempty_string("background");
  d.quality_issues = rd.nonempty_string("quality_issues");
  rd.finish();
  return d;
}

struct AssessPrompt {
  std::string text =
      "Inspect this noisy face reconstruction. Report whether exactly one human face is visible, its pose, how "
      "complete the key facial components are, any artifacts with their severity, your confidence, and auxiliary "
      "attributes (glasses, background, hairstyle, hair color, age range).";
};

inline const std::string kDescribePrompt =
    "Describe the identity cues, appearance, pose, lighting, background and quality issues of this face image. "
    "Use 'unknown' for anything you cannot determine.";

class Judge {
 public:
  virtual ~Judge() = default;
  virtual VisualEvidence assess(const Image& x, const AssessPrompt& prompt) = 0;
  virtual AttributeDescription describe(const Image& x, const std::string& prompt = kDescribePrompt) = 0;
};

/// Judge over the wire protocol (remote service or scripted mock).
class WireJudge : public Judge {
 public:
  explicit WireJudge(std::shared_ptr<Transport> t, RetryPolicy retry = {}, int max_inflight = 4)
      : client_(std::move(t), "judge", retry, max_inflight) {}

  VisualEvidence assess(const Image& x, const AssessPrompt& prompt) override {
    return evidence_from_json(client_.call(request("assess", x, prompt.text)));
  }
  AttributeDescription describe(const Image& x, const std::string& prompt) override {
    return description_from_json(client_.call(request("describe", x, prompt)));
  }

  static json request(const std::string& task, const Image& x, const std::string& prompt) {
    return json{{"task", task}, {"image", image_to_base64(x.clipped())}, {"prompt", prompt}};
  }

 private:
  WireClient client_;
};

// ---------------------------------------------------------------------------
// Heuristic offline judge

struct HeuristicJudgeConfig {
  double face_threshold = 0.45;      // max |template correlation|
  double artifact_threshold = 2.0;   // high-frequency ratio
  double light_background = 0.5;     // border mean split
};

/// Offline stand-in for a multimodal judge: correlates the centred 16x16
/// luma plane against soft head-ellipse templates and measures
/// high-frequency energy relative to contrast.
class HeuristicJudge : public Judge {
 public:
  static constexpr int kGrid = 16;

  struct Analysis {
    double correlation = 0.0;
    double cx = 0.5, cy = 0.5;
    double symmetry = 0.0;
    double hf_ratio = 0.0;
    double border_mean = 0.0;
    double head_mean = 0.0;
    double gradient = 0.0;  // left/right luminance imbalance
  };

  explicit HeuristicJudge(HeuristicJudgeConfig cfg = {}) : cfg_(cfg) {
    for (double cx : {0.35, 0.5, 0.65})
      for (double cy : {0.4, 0.5, 0.6})
        for (auto [ax, ay] : {std::pair{0.26, 0.32}, std::pair{0.32, 0.38}}) templates_.push_back(make_template(cx, cy, ax, ay));
  }

  const HeuristicJudgeConfig& config() const noexcept { return cfg_; }

  Analysis analyse(const Image& img) const {
    const Image x = img.clipped();
    const auto g = area_resample(x.grayscale(), x.height(), x.width(), kGrid, kGrid);
    Analysis a;
    RVector v = Eigen::Map<const RVector>(g.data(), kGrid * kGrid);
    const double mean = v.mean();
    RVector c = v.array() - mean;
    const double cn = c.norm();
    double border = 0.0;
    int nb = 0;
    for (int y = 0; y < kGrid; ++y)
      for (int xx = 0; xx < kGrid; ++xx)
        if (y == 0 || xx == 0 || y == kGrid - 1 || xx == kGrid - 1) {
          border += g[static_cast<std::size_t>(y) * kGrid + xx];
          ++nb;
        }
    a.border_mean = border / nb;
    const Template* best = nullptr;
    if (cn > 1e-9) {
      for (const auto& t : templates_) {
        const double r = std::abs(t.centred.dot(c)) / cn;
        if (r > a.correlation) {
          a.correlation = r;
          best = &t;
        }
      }
    }
    if (best != nullptr) {
      a.cx = best->cx;
      a.cy = best->cy;
      double hm = 0.0, hw = 0.0;
      for (int i = 0; i < kGrid * kGrid; ++i) {
        hm += best->mask(i) * v(i);
        hw += best->mask(i);
      }
      a.head_mean = hm / hw;
    } else {
      a.head_mean = mean;
    }
    a.symmetry = mirror_correlation(g, a.cx);
    // High-frequency ratio on the native-resolution luma.
    const auto gn = x.grayscale();
    const int h = x.height(), w = x.width();
    double lap = 0.0, gm = 0.0, gs = 0.0;
    for (double e : gn) gm += e;
    gm /= static_cast<double>(gn.size());
    for (double e : gn) gs += (e - gm) * (e - gm);
    gs = std::sqrt(gs / static_cast<double>(gn.size()));
    int nl = 0;
    for (int y = 1; y + 1 < h; ++y)
      for (int xx = 1; xx + 1 < w; ++xx) {
        const auto at = [&](int yy, int x2) { return gn[static_cast<std::size_t>(yy) * w + x2]; };
        lap += std::abs(at(y - 1, xx) + at(y + 1, xx) + at(y, xx - 1) + at(y, xx + 1) - 4.0 * at(y, xx));
        ++nl;
      }
    a.hf_ratio = nl > 0 ? (lap / nl) / (gs + 0.02) : 0.0;
    double left = 0.0, right = 0.0;
    for (int y = 0; y < kGrid; ++y)
      for (int xx = 0; xx < kGrid / 2; ++xx) {
        left += g[static_cast<std::size_t>(y) * kGrid + xx];
        right += g[static_cast<std::size_t>(y) * kGrid + kGrid - 1 - xx];
      }
    a.gradient = (right - left) / (kGrid * kGrid / 2);
    return a;
  }

  VisualEvidence assess(const Image& x, const AssessPrompt&) override {
    const Analysis a = analyse(x);
    VisualEvidence v;
    v.face_visible = a.correlation >= cfg_.face_threshold;
    v.pose = !v.face_visible ? Pose::None : (a.symmetry >= 0.5 ? Pose::Frontal : Pose::Profile);
    v.components_complete = std::clamp((a.correlation - 0.3) / 0.5, 0.0, 1.0);
    v.artifacts_present = a.hf_ratio > cfg_.artifact_threshold;
    v.artifact_severity =
        v.artifacts_present ? std::clamp((a.hf_ratio - cfg_.artifact_threshold) / cfg_.artifact_threshold, 0.0, 1.0) : 0.0;
    if (v.artifacts_present) v.artifact_descriptions.push_back("high-frequency noise");
    v.confidence = std::clamp(0.5 + 1.5 * std::abs(a.correlation - cfg_.face_threshold), 0.5, 1.0);
    v.attributes["background"] = background_word(a);
    v.attributes["glasses"] = "unknown";
    v.attributes["hairstyle"] = "unknown";
    v.attributes["hair_color"] = "unknown";
    v.attributes["age_range"] = "unknown";
    return v;
  }

  AttributeDescription describe(const Image& x, const std::string&) override {
    const Analysis a = analyse(x);
    const bool visible = a.correlation >= cfg_.face_threshold;
    AttributeDescription d;
    if (visible) {
      d.identity_cues = "oval face, " + std::string(a.head_mean > a.border_mean ? "lighter" : "darker") +
                        " than the background, centred at " + position_word(a);
      d.appearance = std::string(a.head_mean > 0.5 ? "light" : "dark") + " skin tone";
      d.pose = a.symmetry >= 0.5 ? "frontal" : "turned";
    } else {
      d.identity_cues = "unknown";
      d.appearance = "unknown";
      d.pose = "unknown";
    }
    d.lighting = std::abs(a.gradient) < 0.05 ? "even" : (a.gradient > 0 ? "brighter on the right" : "brighter on the left");
    d.background = background_word(a);
    d.quality_issues = a.hf_ratio > cfg_.artifact_threshold ? "noise artifacts" : "none";
    return d;
  }

 private:
  struct Template {
    double cx, cy;
    RVector mask;
    RVector centred;  // zero-mean, unit-norm
  };

  static Template make_template(double cx, double cy, double ax, double ay) {
    Template t{cx, cy, RVector(kGrid * kGrid), RVector()};
    for (int y = 0; y < kGrid; ++y)
      for (int x = 0; x < kGrid; ++x) {
        const double u = ((x + 0.5) / kGrid - cx) / ax, w = ((y + 0.5) / kGrid - cy) / ay;
        const double r = std::sqrt(u * u + w * w);
        t.mask(y * kGrid + x) = 1.0 / (1.0 + std::exp((r - 1.0) / 0.08));
      }
    t.centred = t.mask.array() - t.mask.mean();
    t.centred /= t.centred.norm();
    return t;
  }

  /// Correlation between the plane and its mirror about column cx.
  static double mirror_correlation(const std::vector<double>& g, double cx) {
    std::vector<double> a, b;
    for (int y = 0; y < kGrid; ++y)
      for (int x = 0; x < kGrid; ++x) {
        const double xm = 2.0 * cx * kGrid - (x + 0.5);
        const int xi = static_cast<int>(std::floor(xm));
        if (xi < 0 || xi >= kGrid) continue;
        a.push_back(g[static_cast<std::size_t>(y) * kGrid + x]);
        b.push_back(g[static_cast<std::size_t>(y) * kGrid + xi]);
      }
    if (a.size() < 2) return 0.0;
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size(), mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += (a[i] - ma) * (b[i] - mb);
      da += (a[i] - ma) * (a[i] - ma);
      db += (b[i] - mb) * (b[i] - mb);
    }
    return (da > 0 && db > 0) ? num / std::sqrt(da * db) : 0.0;
  }

  std::string background_word(const Analysis& a) const { return a.border_mean > cfg_.light_background ? "light" : "dark"; }

  static std::string position_word(const Analysis& a) {
    const char* h = a.cx < 0.45 ? "left" : (a.cx > 0.55 ? "right" : "centre");
    const char* v = a.cy < 0.45 ? "upper" : (a.cy > 0.55 ? "lower" : "middle");
    return std::string(v) + " " + h;
  }

  HeuristicJudgeConfig cfg_;
  std::vector<Template> templates_;
};

/// Serves a judge over the wire protocol (for HTTP or in-process use).
inline FunctionTransport::Handler judge_handler(std::shared_ptr<Judge> judge) {
  return [judge](const std::string& body) {
    const json req = parse_document(body);
    StrictReader rd(req);
    rd.expect_version();
    const std::string id = rd.nonempty_string("request_id");
    const std::string task = rd.one_of("task", {"assess", "describe"});
    const std::string b64 = rd.string("image");
    const std::string prompt = rd.string("prompt");
    rd.finish();
    const Image img = decode_ppm(base64_decode(b64));
    json out = task == "assess" ? evidence_to_json(judge->assess(img, AssessPrompt{prompt}))
                                : description_to_json(judge->describe(img, prompt));
    out["request_id"] = id;
    return out.dump();
  };
}

// ---------------------------------------------------------------------------
// Scoring

/// e = confidence * 1[face] * completeness * (1 - 0.5 * severity * 1[artifacts])
inline double evidence_score(const VisualEvidence& v) {
  v.validate();
  if (!v.face_visible) return 0.0;
  const double art = v.artifacts_present ? 1.0 - 0.5 * v.artifact_severity : 1.0;
  return v.confidence * v.components_complete * art;
}

struct FusionConfig {
  double w_q = 0.4;
  double w_e = 0.6;
  double tau_plausible = 0.35;

  void validate() const {
    require(w_q >= 0.0 && w_e >= 0.0 && std::abs(w_q + w_e - 1.0) < 1e-12, "FusionConfig: weights must be >= 0 and sum to 1");
    require(tau_plausible >= 0.0 && tau_plausible <= 1.0, "FusionConfig: tau_plausible must be in [0, 1]");
  }
};

struct FusedFeedback {
  double iqa_mean = 0.0;
  double evidence = 0.0;
  double fused = 0.0;
  bool plausible = false;
  bool judge_scored = true;  // false: IQA-only fallback
  std::string note;

  bool operator==(const FusedFeedback&) const = default;
};

inline FusedFeedback fuse(const IqaVector& q, double e, bool face_visible, const FusionConfig& cfg = {}) {
  cfg.validate();
  require(e >= 0.0 && e <= 1.0, "fuse: evidence must be in [0, 1]");
  FusedFeedback f;
  f.iqa_mean = iqa_mean(q);
  f.evidence = e;
  f.fused = std::clamp(cfg.w_q * f.iqa_mean + cfg.w_e * e, 0.0, 1.0);
  f.plausible = f.fused >= cfg.tau_plausible && face_visible;
  return f;
}

/// Judge unavailable or its answer unusable: the evidence weight moves to
/// the IQA mean and the candidate cannot be called plausible.
inline FusedFeedback fuse_iqa_only(const IqaVector& q, std::string note) {
  FusedFeedback f;
  f.iqa_mean = iqa_mean(q);
  f.fused = std::clamp(f.iqa_mean, 0.0, 1.0);
  f.plausible = false;
  f.judge_scored = false;
  f.note = std::move(note);
  return f;
}

struct Perception {
  IqaVector iqa;
  std::optional<VisualEvidence> evidence;
  FusedFeedback feedback;
};

/// IQA + judge + fusion with graceful degradation on judge failure.
class PerceptionAgent {
 public:
  PerceptionAgent(std::shared_ptr<Judge> judge, IqaCalibration cal = {}, FusionConfig fusion = {}, AssessPrompt prompt = {})
      : judge_(std::move(judge)), cal_(cal), fusion_(fusion), prompt_(std::move(prompt)) {
    require(judge_ != nullptr, "PerceptionAgent: judge is null");
    cal_.validate();
    fusion_.validate();
  }

  Perception perceive(const Image& x) const {
    Perception p;
    p.iqa = iqa_score(x, cal_);
    try {
      p.evidence = judge_->assess(x, prompt_);
      p.feedback = fuse(p.iqa, evidence_score(*p.evidence), p.evidence->face_visible, fusion_);
    } catch (const ProtocolError& e) {
      p.evidence.reset();
      p.feedback = fuse_iqa_only(p.iqa, std::string("judge response rejected: ") + e.what());
    } catch (const ServiceUnavailable& e) {
      p.evidence.reset();
      p.feedback = fuse_iqa_only(p.iqa, e.what());
    } catch (const InvalidArgument& e) {
      p.evidence.reset();
      p.feedback = fuse_iqa_only(p.iqa, std::string("judge evidence invalid: ") + e.what());
    }
    return p;
  }

  Judge& judge() const { return *judge_; }
  const FusionConfig& fusion() const noexcept { return fusion_; }
  const IqaCalibration& calibration() const noexcept { return cal_; }

 private:
  std::shared_ptr<Judge> judge_;
  IqaCalibration cal_;
  FusionConfig fusion_;
  AssessPrompt prompt_;
};

}  // namespace wiretap
