#ifndef HARMICL_GATEWAY_HPP
#define HARMICL_GATEWAY_HPP

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "harmicl/corpus.hpp"
#include "harmicl/prompting.hpp"
#include "harmicl/transport.hpp"
#include "json.hpp"

namespace harmicl {

using TransportFactory = std::function<std::shared_ptr<Transport>(const HttpEndpointConfig&)>;
TransportFactory http_transport_factory();

// Endpoint value that selects the in-process test double instead of HTTP.
inline constexpr std::string_view kMockEndpoint = "mock";

/// Deterministic stand-in for an LLM: answers Harmful iff the item being
/// classified contains one of the keywords (case-insensitive).
struct MockModelRule {
  std::vector<std::string> harmful_keywords;
  Label default_label = Label::Harmless;

  std::string respond(const RenderedPrompt& prompt) const;
};

struct DecodingParams {
  double temperature = 0.0;
  int max_output_tokens = 8;
};

struct ModelHandle {
  std::string name;
  PromptFamily family = PromptFamily::PlainCompletion;
  HttpEndpointConfig endpoint;
  DecodingParams params;
  RetryPolicy retry;
  int max_in_flight = 4;
  std::optional<MockModelRule> mock;

  bool is_mock() const { return endpoint.base_url == kMockEndpoint; }
  void validate() const;
};

/// Request body for the chat or completion service.
nlohmann::json completion_request(const ModelHandle& handle, const RenderedPrompt& prompt);

/// {"image_url": ...} for http(s) references, {"image_b64": ...} for local files.
nlohmann::json image_part(const std::string& image_ref);

class ModelGateway {
 public:
  explicit ModelGateway(TransportFactory factory = http_transport_factory());

  /// Sends the prompt to the handle's service (or mock) and returns the model text.
  std::string complete(const ModelHandle& handle, const RenderedPrompt& prompt);

  /// Connectivity probe; mock handles are always reachable.
  bool reachable(const ModelHandle& handle);

  void set_transcript(TranscriptLog* log) { transcript_ = log; }
  void set_sleeper(Sleeper s) { sleep_ = std::move(s); }
  std::size_t network_requests() const noexcept { return network_requests_.load(); }

 private:
  std::shared_ptr<Transport> transport_for(const ModelHandle& handle);
  RateLimiter& limiter_for(const ModelHandle& handle);

  TransportFactory factory_;
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<Transport>> transports_;
  std::unordered_map<std::string, std::unique_ptr<RateLimiter>> limiters_;
  TranscriptLog* transcript_ = nullptr;
  Sleeper sleep_ = real_sleeper();
  std::atomic<std::size_t> network_requests_{0};
};

struct ServiceConfig {
  HttpEndpointConfig endpoint;
  RetryPolicy retry;
  int max_in_flight = 4;

  bool is_mock() const { return endpoint.base_url == kMockEndpoint; }
};

/// Thumbnail captioning client with a per-image_ref cache.
class CaptionClient {
 public:
  explicit CaptionClient(ServiceConfig config, TransportFactory factory = http_transport_factory());

  // `sample_id` only feeds the mock ("an image of <id>").
  std::string caption(const std::string& image_ref, const std::string& sample_id = {});

  void set_transcript(TranscriptLog* log) { transcript_ = log; }
  void set_sleeper(Sleeper s) { sleep_ = std::move(s); }
  std::size_t network_requests() const noexcept { return network_requests_.load(); }

 private:
  ServiceConfig config_;
  std::shared_ptr<Transport> transport_;
  RateLimiter limiter_;
  std::mutex mu_;
  std::unordered_map<std::string, std::string> cache_;
  TranscriptLog* transcript_ = nullptr;
  Sleeper sleep_ = real_sleeper();
  std::atomic<std::size_t> network_requests_{0};
};

enum class ModerationProvider { PerspectiveLike, ModerationLike };
std::string_view to_string(ModerationProvider p);
std::optional<ModerationProvider> parse_moderation_provider(std::string_view s);

struct ModerationScorecard {
  ModerationProvider provider = ModerationProvider::PerspectiveLike;
  std::map<std::string, double> scores;
};

/// Throws GatewayError(BadResponse) unless there is at least one score and all lie in [0, 1].
void validate_scorecard(const ModerationScorecard& card);

/// Harmful iff the largest category score reaches the threshold (inclusive).
Label scorecard_decision(const ModerationScorecard& card, double threshold = 0.5);

class ModerationClient {
 public:
  ModerationClient(ServiceConfig config, ModerationProvider provider,
                   TransportFactory factory = http_transport_factory());

  ModerationScorecard moderation_scores(const std::string& text);

  // Mock scoring: "toxicity" 0.9 when a keyword occurs, else 0.1.
  void set_mock_keywords(std::vector<std::string> keywords) { mock_keywords_ = std::move(keywords); }
  void set_transcript(TranscriptLog* log) { transcript_ = log; }
  void set_sleeper(Sleeper s) { sleep_ = std::move(s); }
  ModerationProvider provider() const noexcept { return provider_; }
  std::size_t network_requests() const noexcept { return network_requests_.load(); }

 private:
  ServiceConfig config_;
  ModerationProvider provider_;
  std::shared_ptr<Transport> transport_;
  RateLimiter limiter_;
  std::vector<std::string> mock_keywords_;
  TranscriptLog* transcript_ = nullptr;
  Sleeper sleep_ = real_sleeper();
  std::atomic<std::size_t> network_requests_{0};
};

}  // namespace harmicl

#endif  // HARMICL_GATEWAY_HPP
