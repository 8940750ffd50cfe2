#ifndef HARMICL_TRANSPORT_HPP
#define HARMICL_TRANSPORT_HPP

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace harmicl {

struct HttpResponse {
  int status = 0;
  std::string body;
};

// Connection-level failure: nothing came back from the peer.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GatewayError : public std::runtime_error {
 public:
  enum class Kind { RetriesExhausted, ClientError, BadResponse, Unavailable, Precondition };
  GatewayError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// JSON-over-HTTP POST. Implementations must be safe for concurrent calls.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& json_body) = 0;
  // Cheap connectivity probe; any HTTP response counts as reachable.
  virtual bool reachable() = 0;
};

struct HttpEndpointConfig {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::chrono::milliseconds timeout{30000};
  std::optional<std::string> bearer_token;
};

std::unique_ptr<Transport> make_http_transport(const HttpEndpointConfig& config);

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_base_ms = 500;

  // Delay before attempt `attempt` (2-based): base * 2^(attempt-2).
  std::chrono::milliseconds backoff_before(int attempt) const;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

struct TranscriptEntry {
  std::string request_id;
  std::string handle;
  int attempt = 1;
  std::int64_t latency_ms = 0;
  int status = 0;
  std::string response_text;
  std::string error;
  std::string timestamp;
};

/// Append-only JSON-lines log of outbound requests. Appends are serialized.
class TranscriptLog {
 public:
  TranscriptLog() = default;
  explicit TranscriptLog(std::ostream* sink) : sink_(sink) {}

  void append(TranscriptEntry entry);
  std::size_t size() const;
  std::vector<TranscriptEntry> entries() const;

 private:
  mutable std::mutex mu_;
  std::ostream* sink_ = nullptr;
  std::vector<TranscriptEntry> entries_;
};

/// Caps the number of concurrent requests.
class RateLimiter {
 public:
  explicit RateLimiter(int max_in_flight);

  class Permit {
   public:
    explicit Permit(RateLimiter& owner) : owner_(&owner) { owner_->acquire(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    ~Permit() { owner_->release(); }

   private:
    RateLimiter* owner_;
  };

  int max_in_flight() const noexcept { return max_; }

 private:
  void acquire();
  void release();

  std::mutex mu_;
  std::condition_variable cv_;
  int max_;
  int in_flight_ = 0;
};

struct RequestContext {
  std::string request_id;
  std::string handle;
  TranscriptLog* transcript = nullptr;
  RateLimiter* limiter = nullptr;
};

/// POSTs with retry on transport errors, 5xx and 429; other 4xx fail immediately.
/// Every attempt is logged to the transcript. Returns the 2xx response.
HttpResponse post_with_retry(Transport& transport, const std::string& path, const std::string& body,
                             const RetryPolicy& policy, const Sleeper& sleep,
                             const RequestContext& ctx);

std::string next_request_id(const std::string& prefix);

}  // namespace harmicl

#endif  // HARMICL_TRANSPORT_HPP
