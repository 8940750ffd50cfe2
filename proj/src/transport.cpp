#include "harmicl/transport.hpp"

#include <atomic>
#include <ostream>
#include <thread>

#include "harmicl/util.hpp"
#include "httplib.h"
#include "json.hpp"

namespace harmicl {
namespace {

class HttpLibTransport final : public Transport {
 public:
  explicit HttpLibTransport(const HttpEndpointConfig& config) : config_(config) {
    // Split "http://host:port/prefix" into client address and path prefix.
    if (config.base_url.rfind("http://", 0) != 0)
      throw TransportError("unsupported endpoint (plain http:// only): " + config.base_url);
    const auto host_begin = std::string_view("http://").size();
    const auto path_begin = config.base_url.find('/', host_begin);
    origin_ = config.base_url.substr(0, path_begin);
    if (path_begin != std::string::npos) prefix_ = config.base_url.substr(path_begin);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  HttpResponse post(const std::string& path, const std::string& json_body) override {
    auto client = make_client();
    auto result = client.Post(prefix_ + path, json_body, "application/json");
    if (!result) throw TransportError("request to " + origin_ + prefix_ + path + " failed: " +
                                      httplib::to_string(result.error()));
    return {result->status, result->body};
  }

  bool reachable() override {
    auto client = make_client();
    auto result = client.Get(prefix_.empty() ? "/" : prefix_);
    return static_cast<bool>(result);
  }

 private:
  httplib::Client make_client() const {
    httplib::Client client(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs =
        std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    if (config_.bearer_token) client.set_bearer_token_auth(*config_.bearer_token);
    return client;
  }

  HttpEndpointConfig config_;
  std::string origin_;
  std::string prefix_;
};

bool retryable(int status) { return status >= 500 || status == 429 || status == 408; }

}  // namespace

std::unique_ptr<Transport> make_http_transport(const HttpEndpointConfig& config) {
  return std::make_unique<HttpLibTransport>(config);
}

std::chrono::milliseconds RetryPolicy::backoff_before(int attempt) const {
  if (attempt <= 1) return std::chrono::milliseconds{0};
  return std::chrono::milliseconds{static_cast<std::int64_t>(backoff_base_ms) << (attempt - 2)};
}

Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

void TranscriptLog::append(TranscriptEntry entry) {
  std::lock_guard lock(mu_);
  if (entry.timestamp.empty()) entry.timestamp = utc_timestamp();
  if (sink_) {
    nlohmann::json j{{"request_id", entry.request_id}, {"handle", entry.handle},
                     {"attempt", entry.attempt},       {"latency_ms", entry.latency_ms},
                     {"status", entry.status},         {"response_text", entry.response_text},
                     {"timestamp", entry.timestamp}};
    if (!entry.error.empty()) j["error"] = entry.error;
    *sink_ << j.dump() << '\n';
    sink_->flush();
  }
  entries_.push_back(std::move(entry));
}

std::size_t TranscriptLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<TranscriptEntry> TranscriptLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

RateLimiter::RateLimiter(int max_in_flight) : max_(max_in_flight < 1 ? 1 : max_in_flight) {}

void RateLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < max_; });
  ++in_flight_;
}

void RateLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

HttpResponse post_with_retry(Transport& transport, const std::string& path, const std::string& body,
                             const RetryPolicy& policy, const Sleeper& sleep,
                             const RequestContext& ctx) {
  const int attempts = policy.max_attempts < 1 ? 1 : policy.max_attempts;
  std::string last_failure;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (attempt > 1 && sleep) sleep(policy.backoff_before(attempt));
    TranscriptEntry entry{ctx.request_id, ctx.handle, attempt, 0, 0, {}, {}, {}};
    const auto start = std::chrono::steady_clock::now();
    std::optional<HttpResponse> response;
    try {
      std::optional<RateLimiter::Permit> permit;
      if (ctx.limiter) permit.emplace(*ctx.limiter);
      response = transport.post(path, body);
    } catch (const TransportError& e) {
      entry.error = e.what();
    }
    entry.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    if (response) {
      entry.status = response->status;
      entry.response_text = response->body;
    }
    if (ctx.transcript) ctx.transcript->append(entry);

    if (response && response->status >= 200 && response->status < 300) return *response;
    if (response && !retryable(response->status))
      throw GatewayError(GatewayError::Kind::ClientError,
                         path + " returned HTTP " + std::to_string(response->status) + ": " +
                             response->body);
    last_failure = response ? "HTTP " + std::to_string(response->status) : entry.error;
  }
  throw GatewayError(GatewayError::Kind::RetriesExhausted,
                     path + " failed after " + std::to_string(attempts) +
                         " attempts (last: " + last_failure + ")");
}

std::string next_request_id(const std::string& prefix) {
  static std::atomic<std::uint64_t> counter{0};
  return prefix + "-" + std::to_string(++counter);
}

}  // namespace harmicl
