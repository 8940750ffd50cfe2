#include "harmicl/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>

#include "harmicl/util.hpp"

namespace harmicl {
namespace {

bool is_url(const std::string& ref) {
  return ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0 ||
         ref.rfind("data:", 0) == 0;
}

bool contains_keyword(const std::string& text, const std::vector<std::string>& keywords) {
  const auto lowered = to_lower(text);
  return std::any_of(keywords.begin(), keywords.end(), [&](const std::string& k) {
    return !k.empty() && lowered.find(to_lower(k)) != std::string::npos;
  });
}

nlohmann::json parse_body(const HttpResponse& response, const std::string& what) {
  try {
    return nlohmann::json::parse(response.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw GatewayError(GatewayError::Kind::BadResponse, what + " returned invalid JSON: " + e.what());
  }
}

void log_mock(TranscriptLog* transcript, const std::string& handle, const std::string& text) {
  if (!transcript) return;
  transcript->append({next_request_id("mock"), handle, 1, 0, 200, text, {}, {}});
}

}  // namespace

TransportFactory http_transport_factory() {
  return [](const HttpEndpointConfig& config) -> std::shared_ptr<Transport> {
    return make_http_transport(config);
  };
}

std::string MockModelRule::respond(const RenderedPrompt& prompt) const {
  const auto segment = query_segment(prompt);
  if (contains_keyword(segment, harmful_keywords)) return "Harmful";
  return std::string(to_string(default_label));
}

void ModelHandle::validate() const {
  if (name.empty()) throw GatewayError(GatewayError::Kind::Precondition, "model handle has no name");
  if (params.temperature < 0.0)
    throw GatewayError(GatewayError::Kind::Precondition, "temperature must be >= 0");
  if (retry.max_attempts < 1)
    throw GatewayError(GatewayError::Kind::Precondition, "max_attempts must be >= 1");
  if (max_in_flight < 1)
    throw GatewayError(GatewayError::Kind::Precondition, "max_in_flight must be >= 1");
  if (is_mock() && !mock)
    throw GatewayError(GatewayError::Kind::Precondition,
                       "mock model \"" + name + "\" has no keyword rule");
}

nlohmann::json image_part(const std::string& image_ref) {
  if (is_url(image_ref)) return {{"image_url", image_ref}};
  try {
    return {{"image_b64", base64_encode(read_file(image_ref))}};
  } catch (const std::runtime_error&) {
    throw GatewayError(GatewayError::Kind::Precondition, "unreadable image: " + image_ref);
  }
}

nlohmann::json completion_request(const ModelHandle& handle, const RenderedPrompt& prompt) {
  nlohmann::json body{{"model", handle.name},
                      {"temperature", handle.params.temperature},
                      {"max_tokens", handle.params.max_output_tokens}};
  if (prompt.messages) {
    auto& messages = body["messages"] = nlohmann::json::array();
    for (const auto& m : *prompt.messages) {
      nlohmann::json msg{{"role", to_string(m.role)}};
      if (m.image_ref) {
        msg["content"] = nlohmann::json::array(
            {nlohmann::json{{"type", "text"}, {"text", m.content}}, image_part(*m.image_ref)});
      } else {
        msg["content"] = m.content;
      }
      messages.push_back(std::move(msg));
    }
  } else {
    body["prompt"] = prompt.text.value_or("");
    if (!prompt.images.empty()) {
      auto& images = body["images"] = nlohmann::json::array();
      for (const auto& ref : prompt.images) images.push_back(image_part(ref));
    }
  }
  return body;
}

ModelGateway::ModelGateway(TransportFactory factory) : factory_(std::move(factory)) {}

std::shared_ptr<Transport> ModelGateway::transport_for(const ModelHandle& handle) {
  std::lock_guard lock(mu_);
  auto& slot = transports_[handle.name];
  if (!slot) slot = factory_(handle.endpoint);
  return slot;
}

RateLimiter& ModelGateway::limiter_for(const ModelHandle& handle) {
  std::lock_guard lock(mu_);
  auto& slot = limiters_[handle.name];
  if (!slot) slot = std::make_unique<RateLimiter>(handle.max_in_flight);
  return *slot;
}

std::string ModelGateway::complete(const ModelHandle& handle, const RenderedPrompt& prompt) {
  if (prompt.family != handle.family)
    throw GatewayError(GatewayError::Kind::Precondition,
                       "prompt family " + std::string(to_string(prompt.family)) +
                           " does not match model \"" + handle.name + "\" (" +
                           std::string(to_string(handle.family)) + ")");
  if (handle.is_mock()) {
    if (!handle.mock)
      throw GatewayError(GatewayError::Kind::Precondition, "mock model has no keyword rule");
    auto text = handle.mock->respond(prompt);
    log_mock(transcript_, handle.name, text);
    return text;
  }
  const auto body = completion_request(handle, prompt).dump();
  const std::string path = prompt.messages ? "/v1/chat" : "/v1/complete";
  auto transport = transport_for(handle);
  RequestContext ctx{next_request_id(handle.name), handle.name, transcript_, &limiter_for(handle)};
  ++network_requests_;
  const auto response = post_with_retry(*transport, path, body, handle.retry, sleep_, ctx);
  const auto j = parse_body(response, path);
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
    throw GatewayError(GatewayError::Kind::BadResponse, path + " response has no \"text\" field");
  return j["text"].get<std::string>();
}

bool ModelGateway::reachable(const ModelHandle& handle) {
  if (handle.is_mock()) return true;
  ++network_requests_;
  return transport_for(handle)->reachable();
}

CaptionClient::CaptionClient(ServiceConfig config, TransportFactory factory)
    : config_(std::move(config)), limiter_(config_.max_in_flight) {
  if (!config_.is_mock()) transport_ = factory(config_.endpoint);
}

std::string CaptionClient::caption(const std::string& image_ref, const std::string& sample_id) {
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(image_ref); it != cache_.end()) return it->second;
  }
  if (image_ref.empty()) throw GatewayError(GatewayError::Kind::Precondition, "empty image_ref");
  const bool url = is_url(image_ref);
  if (!url && !std::filesystem::is_regular_file(image_ref))
    throw GatewayError(GatewayError::Kind::Precondition, "unreadable image: " + image_ref);

  std::string text;
  if (config_.is_mock()) {
    text = "an image of " + (sample_id.empty() ? std::filesystem::path(image_ref).stem().string()
                                               : sample_id);
    log_mock(transcript_, "captioner", text);
  } else {
    nlohmann::json body = image_part(image_ref);
    RequestContext ctx{next_request_id("caption"), "captioner", transcript_, &limiter_};
    ++network_requests_;
    const auto response =
        post_with_retry(*transport_, "/v1/caption", body.dump(), config_.retry, sleep_, ctx);
    const auto j = parse_body(response, "/v1/caption");
    if (!j.is_object() || !j.contains("caption") || !j["caption"].is_string() ||
        j["caption"].get<std::string>().empty())
      throw GatewayError(GatewayError::Kind::BadResponse, "caption service returned no caption");
    text = j["caption"].get<std::string>();
  }
  std::lock_guard lock(mu_);
  cache_.emplace(image_ref, text);
  return text;
}

std::string_view to_string(ModerationProvider p) {
  return p == ModerationProvider::PerspectiveLike ? "PerspectiveLike" : "ModerationLike";
}

std::optional<ModerationProvider> parse_moderation_provider(std::string_view s) {
  if (s == "PerspectiveLike") return ModerationProvider::PerspectiveLike;
  if (s == "ModerationLike") return ModerationProvider::ModerationLike;
  return std::nullopt;
}

void validate_scorecard(const ModerationScorecard& card) {
  if (card.scores.empty())
    throw GatewayError(GatewayError::Kind::BadResponse, "scorecard has no categories");
  for (const auto& [name, score] : card.scores)
    if (!(score >= 0.0 && score <= 1.0))
      throw GatewayError(GatewayError::Kind::BadResponse,
                         "score for \"" + name + "\" is outside [0, 1]: " + std::to_string(score));
}

Label scorecard_decision(const ModerationScorecard& card, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw GatewayError(GatewayError::Kind::Precondition, "threshold must lie in [0, 1]");
  double top = 0.0;
  bool any = false;
  for (const auto& [_, score] : card.scores) {
    top = any ? std::max(top, score) : score;
    any = true;
  }
  return any && top >= threshold ? Label::Harmful : Label::Harmless;
}

ModerationClient::ModerationClient(ServiceConfig config, ModerationProvider provider,
                                   TransportFactory factory)
    : config_(std::move(config)), provider_(provider), limiter_(config_.max_in_flight) {
  if (!config_.is_mock()) transport_ = factory(config_.endpoint);
}

ModerationScorecard ModerationClient::moderation_scores(const std::string& text) {
  if (text.empty()) throw GatewayError(GatewayError::Kind::Precondition, "moderation text is empty");
  ModerationScorecard card{provider_, {}};
  if (config_.is_mock()) {
    card.scores["toxicity"] = contains_keyword(text, mock_keywords_) ? 0.9 : 0.1;
    log_mock(transcript_, "moderation", nlohmann::json(card.scores).dump());
    return card;
  }
  RequestContext ctx{next_request_id("moderate"), "moderation", transcript_, &limiter_};
  ++network_requests_;
  const auto response = post_with_retry(*transport_, "/v1/moderate",
                                        nlohmann::json{{"text", text}}.dump(), config_.retry,
                                        sleep_, ctx);
  const auto j = parse_body(response, "/v1/moderate");
  if (!j.is_object() || !j.contains("scores") || !j["scores"].is_object())
    throw GatewayError(GatewayError::Kind::BadResponse, "moderation response has no \"scores\"");
  for (const auto& [name, value] : j["scores"].items()) {
    if (!value.is_number())
      throw GatewayError(GatewayError::Kind::BadResponse, "non-numeric score for \"" + name + "\"");
    card.scores[name] = value.get<double>();
  }
  validate_scorecard(card);
  return card;
}

}  // namespace harmicl
