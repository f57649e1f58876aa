#pragma once
// Request/response plumbing shared by the judge, generator and policy
// clients: base64 image payloads, a strict JSON field reader, transports,
// retries and an in-flight request limiter.

#include "wiretap/image.hpp"

#include "json.hpp"

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <semaphore>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wiretap {

using json = nlohmann::json;

inline constexpr const char* kSchemaVersion = "1";

// --- base64 -----------------------------------------------------------------

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<const std::uint8_t*, 6, 8>>;
  std::string out(It(bytes.data()), It(bytes.data() + bytes.size()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

struct Base64Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  if (text.size() % 4 != 0) throw Base64Error("base64: length is not a multiple of 4");
  std::size_t pad = 0;
  while (pad < text.size() && pad < 2 && text[text.size() - 1 - pad] == '=') ++pad;
  std::string body = text.substr(0, text.size() - pad);
  for (char c : body)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/'))
      throw Base64Error("base64: invalid character");
  // Feed zero-valued 'A's in place of padding so the decoder stays aligned.
  body.append(pad, 'A');
  std::vector<std::uint8_t> out;
  try {
    out.assign(It(body.cbegin()), It(body.cend()));
  } catch (const std::exception& e) {
    throw Base64Error(std::string("base64: ") + e.what());
  }
  out.resize(out.size() - pad);
  return out;
}

inline std::string image_to_base64(const Image& x) { return base64_encode(encode_ppm(x)); }

// --- errors -----------------------------------------------------------------

/// Connection refused, timeout, HTTP error status.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A response that does not match its schema. `field` names the offending
/// member ("" when the document itself is unusable).
struct ProtocolError : std::runtime_error {
  ProtocolError(std::string field, const std::string& what)
      : std::runtime_error(field.empty() ? what : "field '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Raised once retries are spent; the caller degrades gracefully.
struct ServiceUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- strict reader ----------------------------------------------------------

/// Pulls typed members out of a JSON object and, on finish(), rejects any
/// member that was not consumed.
class StrictReader {
 public:
  StrictReader(const json& doc, std::string path = "") : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ProtocolError(path_, "expected an object");
  }

  bool has(const std::string& name) const { return doc_.contains(name); }

  const json& raw(const std::string& name) {
    const auto it = doc_.find(name);
    if (it == doc_.end()) throw ProtocolError(qualify(name), "missing");
    seen_.insert(name);
    return *it;
  }

  std::string string(const std::string& name) {
    const json& v = raw(name);
    if (!v.is_string()) throw ProtocolError(qualify(name), "expected a string");
    return v.get<std::string>();
  }

  std::string nonempty_string(const std::string& name) {
    std::string s = string(name);
    if (s.empty()) throw ProtocolError(qualify(name), "must not be empty");
    return s;
  }

  std::string one_of(const std::string& name, std::initializer_list<const char*> allowed) {
    std::string s = string(name);
    for (const char* a : allowed)
      if (s == a) return s;
    throw ProtocolError(qualify(name), "unexpected value '" + s + "'");
  }

  bool boolean(const std::string& name) {
    const json& v = raw(name);
    if (!v.is_boolean()) throw ProtocolError(qualify(name), "expected a boolean");
    return v.get<bool>();
  }

  double number(const std::string& name, double lo, double hi) {
    const json& v = raw(name);
    if (!v.is_number()) throw ProtocolError(qualify(name), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d) || d < lo || d > hi)
      throw ProtocolError(qualify(name), "out of range [" + fmt(lo) + ", " + fmt(hi) + "]");
    return d;
  }

  std::int64_t integer(const std::string& name, std::int64_t lo, std::int64_t hi) {
    const json& v = raw(name);
    if (!v.is_number_integer()) throw ProtocolError(qualify(name), "expected an integer");
    const auto i = v.get<std::int64_t>();
    if (i < lo || i > hi) throw ProtocolError(qualify(name), "out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return i;
  }

  std::vector<std::string> string_list(const std::string& name) {
    const json& v = raw(name);
    if (!v.is_array()) throw ProtocolError(qualify(name), "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ProtocolError(qualify(name), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  StrictReader object(const std::string& name) { return StrictReader(raw(name), qualify(name)); }

  void expect_version() {
    if (string("schema_version") != kSchemaVersion)
      throw ProtocolError(qualify("schema_version"), std::string("unsupported, expected \"") + kSchemaVersion + "\"");
  }

  void finish() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it)
      if (!seen_.count(it.key())) throw ProtocolError(qualify(it.key()), "unknown field");
  }

  std::string qualify(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

 private:
  static std::string fmt(double d) {
    std::ostringstream os;
    os << d;
    return os.str();
  }

  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json parse_document(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError("", std::string("malformed JSON: ") + e.what());
  }
}

// --- transports -------------------------------------------------------------

/// One request document in, one response document out.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string roundtrip(const std::string& request) = 0;
};

/// In-process transport backed by a handler; used by every mock.
class FunctionTransport : public Transport {
 public:
  using Handler = std::function<std::string(const std::string&)>;
  explicit FunctionTransport(Handler h) : handler_(std::move(h)) {}
  std::string roundtrip(const std::string& request) override { return handler_(request); }

 private:
  Handler handler_;
};

/// Replays canned responses in order. Each script entry is either a body to
/// return or a failure to raise. The request id placeholder "$id" in a body
/// is replaced by the id of the request being answered.
class ScriptedTransport : public Transport {
 public:
  struct Reply {
    std::string body;
    bool fail = false;
  };

  ScriptedTransport() = default;
  explicit ScriptedTransport(std::vector<Reply> script) : script_(script.begin(), script.end()) {}

  void push(std::string body) { push_reply({std::move(body), false}); }
  void push(const json& doc) { push(doc.dump()); }
  void push_failure() { push_reply({"", true}); }

  std::string roundtrip(const std::string& request) override {
    std::lock_guard lock(mu_);
    requests_.push_back(request);
    if (script_.empty()) throw TransportError("scripted transport: script exhausted");
    Reply r = std::move(script_.front());
    script_.pop_front();
    if (r.fail) throw TransportError("scripted transport: injected failure");
    std::string id;
    try {
      const json req = json::parse(request);
      if (req.contains("request_id") && req["request_id"].is_string()) id = req["request_id"].get<std::string>();
    } catch (const json::exception&) {
    }
    for (std::size_t p = r.body.find("$id"); p != std::string::npos; p = r.body.find("$id", p + id.size()))
      r.body.replace(p, 3, id);
    return r.body;
  }

  std::vector<std::string> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return script_.size();
  }

 private:
  void push_reply(Reply r) {
    std::lock_guard lock(mu_);
    script_.push_back(std::move(r));
  }

  mutable std::mutex mu_;
  std::deque<Reply> script_;
  std::vector<std::string> requests_;
};

// --- client core ------------------------------------------------------------

struct RetryPolicy {
  int attempts = 3;  // total tries
  int timeout_ms = 10000;
  int backoff_ms = 0;
};

/// Holds a transport, stamps request ids, caps concurrent requests and
/// retries transport failures. Protocol errors are not retried.
class WireClient {
 public:
  static constexpr std::ptrdiff_t kMaxInflight = 64;

  WireClient(std::shared_ptr<Transport> transport, std::string name, RetryPolicy retry = {}, int max_inflight = 4)
      : transport_(std::move(transport)), name_(std::move(name)), retry_(retry), slots_(max_inflight) {
    require(transport_ != nullptr, name_ + ": transport is null");
    require(max_inflight >= 1 && max_inflight <= kMaxInflight, name_ + ": max_inflight must be in [1, 64]");
    require(retry.attempts >= 1, name_ + ": retry attempts must be >= 1");
  }

  const std::string& name() const noexcept { return name_; }

  /// Sends `request` (request_id and schema_version are filled in) and
  /// returns the parsed response after checking the echoed id.
  json call(json request) {
    const std::string id = name_ + "-" + std::to_string(next_id_.fetch_add(1));
    request["schema_version"] = kSchemaVersion;
    request["request_id"] = id;
    const std::string body = request.dump();
    std::string last_error;
    for (int attempt = 0; attempt < retry_.attempts; ++attempt) {
      std::string reply;
      try {
        slots_.acquire();
        struct Release {
          std::counting_semaphore<kMaxInflight>& s;
          ~Release() { s.release(); }
        } release{slots_};
        reply = transport_->roundtrip(body);
      } catch (const TransportError& e) {
        last_error = e.what();
        if (retry_.backoff_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(retry_.backoff_ms));
        continue;
      }
      json doc = parse_document(reply);
      if (!doc.is_object()) throw ProtocolError("", "response is not an object");
      const auto it = doc.find("request_id");
      if (it == doc.end()) throw ProtocolError("request_id", "missing");
      if (!it->is_string() || it->get<std::string>() != id) throw ProtocolError("request_id", "does not match the request");
      return doc;
    }
    throw ServiceUnavailable(name_ + " unavailable after " + std::to_string(retry_.attempts) + " attempts: " + last_error);
  }

 private:
  std::shared_ptr<Transport> transport_;
  std::string name_;
  RetryPolicy retry_;
  std::counting_semaphore<kMaxInflight> slots_;
  std::atomic<std::uint64_t> next_id_{1};
};

/// Reads `image` as base64 PPM and checks the dimensions.
inline Image read_wire_image(StrictReader& rd, const std::string& name, int height, int width) {
  const std::string text = rd.string(name);
  Image img;
  try {
    const auto bytes = base64_decode(text);
    img = decode_ppm(bytes);
  } catch (const std::exception& e) {
    throw ProtocolError(rd.qualify(name), std::string("not a base64 PPM: ") + e.what());
  }
  if (img.height() != height || img.width() != width)
    throw ProtocolError(rd.qualify(name), "image is " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                               ", expected " + std::to_string(height) + "x" + std::to_string(width));
  return img;
}

}  // namespace wiretap
