#pragma once
// Resumable inversion sessions: checkpoints, rollback with an audit trail of
// discarded steps, stagnation detection, branching and the shared candidate
// pool.

#include "wiretap/inversion.hpp"
#include "wiretap/perception.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace wiretap {

using SessionId = std::uint32_t;
using CheckpointId = std::uint64_t;

struct StagnationConfig {
  int window = 5;
  double epsilon = 1e-3;

  void validate() const {
    require(window >= 2, "StagnationConfig: window must be >= 2");
    require(epsilon > 0.0, "StagnationConfig: epsilon must be > 0");
  }
};

/// True iff there are >= W records, the last W vary by less than eps
/// relative to their max, and the last record is not a clear improvement on
/// the best seen so far.
inline bool is_stagnant(const std::vector<double>& history, const StagnationConfig& cfg = {}) {
  cfg.validate();
  require(!history.empty(), "is_stagnant: empty history");
  const auto w = static_cast<std::size_t>(cfg.window);
  if (history.size() < w) return false;
  const auto first = history.end() - static_cast<std::ptrdiff_t>(w);
  const auto [lo, hi] = std::minmax_element(first, history.end());
  if (!(*hi > 0.0)) return true;  // all-zero window: nothing left to gain
  if ((*hi - *lo) / *hi >= cfg.epsilon) return false;
  const double best = *std::min_element(history.begin(), history.end());
  return history.back() >= best * (1.0 - cfg.epsilon);
}

struct Checkpoint {
  CheckpointId id = 0;
  std::uint64_t step = 0;  // steps in the session's live history
  double loss = 0.0;       // total loss of the unclipped state
  OptimState state;

  bool operator==(const Checkpoint& o) const { return id == o.id && step == o.step && loss == o.loss && state == o.state; }
};

/// Steps thrown away by a rollback, kept for step accounting.
struct DiscardRecord {
  SessionId session = 0;
  CheckpointId target = 0;
  std::uint64_t from_step = 0;  // first discarded step (1-based)
  std::uint64_t to_step = 0;    // last discarded step
  std::vector<double> losses;
};

enum class SessionStatus { Active, Terminated };

struct SessionTerminated : std::logic_error {
  using std::logic_error::logic_error;
};

struct UnknownCheckpoint : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class Session {
 public:
  Session(SessionId id, OptimState init, std::optional<SessionId> parent = std::nullopt)
      : id_(id), parent_(parent), state_(std::move(init)) {
    state_.validate();
  }

  SessionId id() const noexcept { return id_; }
  std::optional<SessionId> parent() const noexcept { return parent_; }
  SessionStatus status() const noexcept { return status_; }
  bool active() const noexcept { return status_ == SessionStatus::Active; }
  const OptimState& state() const noexcept { return state_; }
  const std::vector<double>& loss_history() const noexcept { return history_; }
  const std::vector<double>& burst_end_losses() const noexcept { return burst_ends_; }
  const std::vector<Checkpoint>& checkpoints() const noexcept { return checkpoints_; }
  const std::vector<DiscardRecord>& discards() const noexcept { return discards_; }
  std::uint64_t step_index() const noexcept { return history_.size(); }
  /// Every step ever executed here, including discarded segments.
  std::uint64_t steps_executed() const noexcept { return executed_; }

  BurstResult burst(UpdateMode mode, int n_steps, const CMatrix& r, const Encoder& enc) {
    require_active("burst");
    BurstResult res = run_burst(state_, mode, n_steps, r, enc);
    for (const auto& t : res.trace) history_.push_back(t.total);
    executed_ += res.trace.size();
    return res;
  }

  /// Deep snapshot of the optimizer state. `loss` is the caller-evaluated
  /// total loss at the snapshot and is recorded as a burst-end value.
  CheckpointId checkpoint(CheckpointId id, double loss) {
    require_active("checkpoint");
    if (!checkpoints_.empty() && checkpoints_.back().step > step_index())
      throw std::logic_error("checkpoint: step index went backwards");
    if (!checkpoints_.empty() && checkpoints_.back().step == step_index()) {
      // Same step: replace so ids stay strictly ordered by step.
      archive_.push_back(std::move(checkpoints_.back()));
      checkpoints_.pop_back();
      burst_ends_.pop_back();
    }
    checkpoints_.push_back({id, step_index(), loss, state_});
    burst_ends_.push_back(loss);
    return id;
  }

  bool has_checkpoint(CheckpointId id) const { return find(id) != nullptr; }

  /// Any snapshot ever taken here, including ones on discarded segments.
  const Checkpoint& checkpoint_by_id(CheckpointId id) const {
    const Checkpoint* c = find(id);
    if (c == nullptr)
      for (const auto& a : archive_)
        if (a.id == id) return a;
    if (c == nullptr) throw UnknownCheckpoint("session " + std::to_string(id_) + " has no checkpoint " + std::to_string(id));
    return *c;
  }

  /// Restores variables, moments and counters bitwise and truncates the
  /// history, recording the discarded segment.
  const DiscardRecord& rollback(CheckpointId id) {
    require_active("rollback");
    const Checkpoint* cp = find(id);
    if (cp == nullptr)
      throw UnknownCheckpoint("session " + std::to_string(id_) + " has no live checkpoint " + std::to_string(id));
    const Checkpoint c = *cp;
    DiscardRecord rec;
    rec.session = id_;
    rec.target = id;
    rec.from_step = c.step + 1;
    rec.to_step = step_index();
    rec.losses.assign(history_.begin() + static_cast<std::ptrdiff_t>(c.step), history_.end());
    state_ = c.state;
    history_.resize(c.step);
    // Later checkpoints describe a future that no longer exists.
    const auto keep = static_cast<std::size_t>(std::find_if(checkpoints_.begin(), checkpoints_.end(),
                                                            [&](const Checkpoint& k) { return k.id == id; }) -
                                               checkpoints_.begin()) + 1;
    for (std::size_t i = keep; i < checkpoints_.size(); ++i) archive_.push_back(std::move(checkpoints_[i]));
    checkpoints_.resize(keep);
    burst_ends_.resize(keep);
    discards_.push_back(std::move(rec));
    return discards_.back();
  }

  void terminate() { status_ = SessionStatus::Terminated; }

  /// Replaces the live state (refinement warm start). Only valid before any
  /// step has been taken.
  OptimState& mutable_state_before_start() {
    require_active("mutable_state_before_start");
    if (step_index() != 0) throw std::logic_error("session already started");
    return state_;
  }

 private:
  void require_active(const char* what) const {
    if (!active()) throw SessionTerminated(std::string(what) + ": session " + std::to_string(id_) + " is terminated");
  }

  const Checkpoint* find(CheckpointId id) const {
    for (const auto& c : checkpoints_)
      if (c.id == id) return &c;
    return nullptr;
  }

  SessionId id_;
  std::optional<SessionId> parent_;
  SessionStatus status_ = SessionStatus::Active;
  OptimState state_;
  std::vector<double> history_;
  std::vector<double> burst_ends_;
  std::vector<Checkpoint> checkpoints_;
  std::vector<Checkpoint> archive_;
  std::vector<DiscardRecord> discards_;
  std::uint64_t executed_ = 0;
};

// ---------------------------------------------------------------------------
// Candidate pool

enum class CandidateOrigin { Raw, Refined };

inline std::string to_string(CandidateOrigin o) { return o == CandidateOrigin::Raw ? "raw" : "refined"; }

struct Candidate {
  std::size_t index = 0;
  Image image;  // clipped snapshot
  double data_residual = 0.0;
  SessionId session = 0;
  std::uint64_t step = 0;
  CheckpointId checkpoint = 0;
  CandidateOrigin origin = CandidateOrigin::Raw;
  // Refined entries only.
  std::optional<std::size_t> refined_from;
  std::optional<double> residual_before;
  std::optional<double> residual_after;
  // Attached once, after insertion.
  std::optional<Perception> perception;
};

/// Append-only, insertion-ordered. Writers are serialised by a mutex.
class CandidatePool {
 public:
  std::size_t append(Candidate c) {
    std::lock_guard lock(mu_);
    c.index = entries_.size();
    c.perception.reset();
    entries_.push_back(std::move(c));
    return entries_.size() - 1;
  }

  void attach_perception(std::size_t index, Perception p) {
    std::lock_guard lock(mu_);
    require(index < entries_.size(), "attach_perception: index out of range");
    if (entries_[index].perception) throw std::logic_error("attach_perception: candidate " + std::to_string(index) + " already scored");
    entries_[index].perception = std::move(p);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }
  bool empty() const { return size() == 0; }

  /// Entries are never mutated after their perception is attached, so a
  /// copy is a faithful view.
  Candidate at(std::size_t i) const {
    std::lock_guard lock(mu_);
    require(i < entries_.size(), "CandidatePool: index out of range");
    return entries_[i];
  }

  std::vector<Candidate> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  double min_residual() const {
    std::lock_guard lock(mu_);
    require(!entries_.empty(), "min_residual: empty pool");
    double m = entries_.front().data_residual;
    for (const auto& e : entries_) m = std::min(m, e.data_residual);
    return m;
  }

 private:
  mutable std::mutex mu_;
  std::vector<Candidate> entries_;
};

/// Highest fused score among entries whose residual is within `ratio` of
/// the pool minimum; ties go to the earlier entry. Entries without
/// perception score as -1.
inline std::optional<std::size_t> select_candidate(const std::vector<Candidate>& entries, double ratio = 2.0,
                                                   const std::vector<bool>* excluded = nullptr) {
  if (entries.empty()) return std::nullopt;
  double mn = entries.front().data_residual;
  for (const auto& e : entries) mn = std::min(mn, e.data_residual);
  std::optional<std::size_t> best;
  double best_score = -2.0;
  for (const auto& e : entries) {
    if (e.data_residual > ratio * mn) continue;
    if (excluded != nullptr && e.index < excluded->size() && (*excluded)[e.index]) continue;
    const double s = e.perception ? e.perception->feedback.fused : -1.0;
    if (s > best_score) {
      best_score = s;
      best = e.index;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Manager

struct BranchInit {
  double gray = 0.5;
  double jitter = 0.05;
  bool warm = false;  // start from the best pool candidate instead of gray
};

struct BranchBudgetExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fresh x~: gray plus seeded jitter. Draw order: jitter (CHW) then G~.
inline OptimState fresh_state(Rng& rng, int height, int width, int n_eve, int n_tx, const InversionHyper& hyper,
                              const BranchInit& init = {}) {
  Image x(height, width, init.gray);
  for (double& v : x.values()) v += init.jitter * rng.normal();
  const CMatrix g = sample_complex_gaussian(rng, n_eve, n_tx, 1.0);
  return OptimState::create(x, g, hyper);
}

class SessionManager {
 public:
  explicit SessionManager(int max_branches = 5) : max_branches_(max_branches) {
    require(max_branches >= 0, "SessionManager: max_branches must be >= 0");
  }

  Session& create_root(OptimState init) { return add(std::move(init), std::nullopt); }

  int branches_used() const noexcept { return branches_; }
  int branches_remaining() const noexcept { return max_branches_ - branches_; }
  int max_branches() const noexcept { return max_branches_; }

  /// New session with fresh G~ ~ CN(0,1) and fresh x~ (or the supplied
  /// warm image). Refused once the budget is spent.
  Session& branch(SessionId parent, Rng& rng, int n_eve, int n_tx, const InversionHyper& hyper, const BranchInit& init = {},
                  const Image* warm_image = nullptr) {
    if (branches_ >= max_branches_) throw BranchBudgetExhausted("branch budget of " + std::to_string(max_branches_) + " exhausted");
    const Session& p = get(parent);
    OptimState st = fresh_state(rng, p.state().height, p.state().width, n_eve, n_tx, hyper, init);
    if (init.warm && warm_image != nullptr) st.x = warm_image->as_vector();
    ++branches_;
    return add(std::move(st), parent);
  }

  /// Session outside the branch budget (refinement re-anchoring).
  Session& spawn(OptimState init, SessionId parent) {
    get(parent);
    return add(std::move(init), parent);
  }

  Session& get(SessionId id) {
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw InvalidArgument("unknown session " + std::to_string(id));
    return *it->second;
  }
  const Session& get(SessionId id) const {
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw InvalidArgument("unknown session " + std::to_string(id));
    return *it->second;
  }

  std::vector<SessionId> ids() const {
    std::vector<SessionId> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
  }

  CandidatePool& pool() noexcept { return pool_; }
  const CandidatePool& pool() const noexcept { return pool_; }

  /// Checkpoints the session and emits its clipped snapshot into the pool.
  /// The pool residual is evaluated on the clipped image.
  std::pair<CheckpointId, std::size_t> checkpoint(SessionId sid, const CMatrix& r, const Encoder& enc,
                                                  const std::function<void(Candidate&)>& decorate = {}) {
    Session& s = get(sid);
    const double total = loss(s.state(), r, enc).total;
    const CheckpointId id = next_checkpoint_++;
    s.checkpoint(id, total);
    Candidate c;
    c.image = s.state().snapshot();
    c.data_residual = snapshot_residual(s.state(), r, enc);
    c.session = sid;
    c.step = s.step_index();
    c.checkpoint = id;
    if (decorate) decorate(c);
    return {id, pool_.append(std::move(c))};
  }

  /// Steps executed across all sessions, discarded segments included.
  std::uint64_t total_steps() const {
    std::uint64_t n = 0;
    for (const auto& [id, s] : sessions_) n += s->steps_executed();
    return n;
  }

  static double snapshot_residual(const OptimState& st, const CMatrix& r, const Encoder& enc) {
    OptimState probe = st;
    probe.x = st.snapshot().as_vector();
    return loss(probe, r, enc).data_residual;
  }

 private:
  Session& add(OptimState st, std::optional<SessionId> parent) {
    const SessionId id = next_session_++;
    auto s = std::make_unique<Session>(id, std::move(st), parent);
    Session& ref = *s;
    sessions_.emplace(id, std::move(s));
    return ref;
  }

  int max_branches_;
  int branches_ = 0;
  SessionId next_session_ = 0;
  CheckpointId next_checkpoint_ = 0;
  std::map<SessionId, std::unique_ptr<Session>> sessions_;
  CandidatePool pool_;
};

// ---------------------------------------------------------------------------
// Binary checkpoint layout (little-endian):
//   "WTCK" u32 version=1
//   u32 height, width, g_rows, g_cols
//   u64 id, step, t_x, t_g
//   f64 loss, lambda_tv, lr_x, lr_g, beta1, beta2, eps
//   f64[n] x, m_x, v_x          (n = 3*height*width, CHW)
//   f64[2k] g, m_g, v_g         (k = g_rows*g_cols, column-major, re/im pairs)

struct CheckpointFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double d) { put(std::bit_cast<std::uint64_t>(d), 8); }
  void raw(const char* s, std::size_t n) { out_.insert(out_.end(), s, s + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  void expect(const char* s, std::size_t n) {
    need(n);
    if (std::memcmp(b_.data() + pos_, s, n) != 0) throw CheckpointFormatError("checkpoint: bad magic");
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw CheckpointFormatError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  const OptimState& s = c.state;
  detail::ByteWriter w;
  w.raw("WTCK", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.u32(static_cast<std::uint32_t>(s.g.rows()));
  w.u32(static_cast<std::uint32_t>(s.g.cols()));
  w.u64(c.id);
  w.u64(c.step);
  w.u64(s.t_x);
  w.u64(s.t_g);
  for (double d : {c.loss, s.hyper.lambda_tv, s.hyper.lr_x, s.hyper.lr_g, s.hyper.adam.beta1, s.hyper.adam.beta2, s.hyper.adam.eps})
    w.f64(d);
  for (const RVector* v : {&s.x, &s.m_x, &s.v_x})
    for (Eigen::Index i = 0; i < v->size(); ++i) w.f64((*v)(i));
  for (const CMatrix* m : {&s.g, &s.m_g, &s.v_g})
    for (Eigen::Index k = 0; k < m->size(); ++k) {
      w.f64(m->data()[k].real());
      w.f64(m->data()[k].imag());
    }
  return w.take();
}

inline Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader rd(bytes);
  rd.expect("WTCK", 4);
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion) throw CheckpointFormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  OptimState& s = c.state;
  s.height = static_cast<int>(rd.u32());
  s.width = static_cast<int>(rd.u32());
  const auto gr = static_cast<Eigen::Index>(rd.u32()), gc = static_cast<Eigen::Index>(rd.u32());
  if (s.height <= 0 || s.width <= 0 || s.height > 4096 || s.width > 4096 || gr <= 0 || gc <= 0 || gr > 1024 || gc > 1024)
    throw CheckpointFormatError("checkpoint: implausible dimensions");
  c.id = rd.u64();
  c.step = rd.u64();
  s.t_x = rd.u64();
  s.t_g = rd.u64();
  c.loss = rd.f64();
  s.hyper.lambda_tv = rd.f64();
  s.hyper.lr_x = rd.f64();
  s.hyper.lr_g = rd.f64();
  s.hyper.adam.beta1 = rd.f64();
  s.hyper.adam.beta2 = rd.f64();
  s.hyper.adam.eps = rd.f64();
  const Eigen::Index n = 3 * static_cast<Eigen::Index>(s.height) * s.width;
  for (RVector* v : {&s.x, &s.m_x, &s.v_x}) {
    v->resize(n);
    for (Eigen::Index i = 0; i < n; ++i) (*v)(i) = rd.f64();
  }
  for (CMatrix* m : {&s.g, &s.m_g, &s.v_g}) {
    m->resize(gr, gc);
    for (Eigen::Index k = 0; k < m->size(); ++k) {
      const double re = rd.f64();
      const double im = rd.f64();
      m->data()[k] = cdouble(re, im);
    }
  }
  if (!rd.done()) throw CheckpointFormatError("checkpoint: trailing bytes");
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw CheckpointFormatError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto bytes = serialize_checkpoint(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace wiretap
