#include "harmicl/embedding.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>

#include "harmicl/util.hpp"

namespace harmicl {
namespace {

SentenceVector vector_from_json(const nlohmann::json& j, const std::string& id) {
  if (!j.is_array() || j.empty()) throw EmbeddingError("empty or non-array vector for id \"" + id + "\"");
  SentenceVector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw EmbeddingError("non-numeric component for id \"" + id + "\"");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  if (!v.allFinite()) throw EmbeddingError("non-finite component for id \"" + id + "\"");
  return v;
}

TokenMatrix matrix_from_json(const nlohmann::json& tokens, const nlohmann::json& vectors,
                             const std::string& id) {
  if (!tokens.is_array() || !vectors.is_array())
    throw EmbeddingError("token entry for id \"" + id + "\" needs \"tokens\" and \"vectors\" arrays");
  if (tokens.size() != vectors.size() || tokens.empty())
    throw EmbeddingError("token entry for id \"" + id + "\" has " + std::to_string(tokens.size()) +
                         " tokens and " + std::to_string(vectors.size()) + " vectors");
  TokenMatrix m;
  for (const auto& t : tokens) m.tokens.push_back(t.get<std::string>());
  const auto dim = vectors[0].size();
  m.vectors.resize(static_cast<Eigen::Index>(vectors.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < vectors.size(); ++r) {
    if (vectors[r].size() != dim)
      throw EmbeddingError("token vectors for id \"" + id + "\" do not share one dimension");
    m.vectors.row(static_cast<Eigen::Index>(r)) = vector_from_json(vectors[r], id).transpose();
  }
  return m;
}

nlohmann::json vector_to_json(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

template <typename Map>
std::vector<std::string> sorted_keys(const Map& m) {
  std::vector<std::string> keys;
  keys.reserve(m.size());
  for (const auto& [k, _] : m) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

}  // namespace

std::string text_of(const ContentSample& sample, TextField field) {
  switch (field) {
    case TextField::Title:
      return sample.title;
    case TextField::Caption:
      if (!sample.caption) throw EmbeddingError("sample \"" + sample.id + "\" has no caption");
      return *sample.caption;
    case TextField::TitleAndCaption:
      return sample.caption ? sample.title + " " + *sample.caption : sample.title;
  }
  return sample.title;
}

EmbeddingStore::EmbeddingStore(EmbeddingProviderConfig provider, std::shared_ptr<Transport> transport)
    : provider_(std::move(provider)), transport_(std::move(transport)) {
  if (!transport_) transport_ = make_http_transport(provider_->endpoint);
}

std::string EmbeddingStore::cache_key(const ContentSample& sample, TextField field) {
  switch (field) {
    case TextField::Title:
      return sample.id;
    case TextField::Caption:
      return sample.id + "#caption";
    case TextField::TitleAndCaption:
      return sample.id + "#title+caption";
  }
  return sample.id;
}

void EmbeddingStore::put_sentence(const std::string& key, SentenceVector v) {
  if (v.size() == 0) throw EmbeddingError("empty sentence vector for \"" + key + "\"");
  if (!v.allFinite()) throw EmbeddingError("non-finite sentence vector for \"" + key + "\"");
  if (v.squaredNorm() == 0.0) throw EmbeddingError("zero-norm sentence vector for \"" + key + "\"");
  std::unique_lock lock(mu_);
  if (sentence_dim_ != 0 && v.size() != sentence_dim_)
    throw EmbeddingError("sentence vector for \"" + key + "\" has dim " + std::to_string(v.size()) +
                         ", store uses " + std::to_string(sentence_dim_));
  sentence_dim_ = v.size();
  sentences_[key] = std::move(v);
}

void EmbeddingStore::put_tokens(const std::string& key, TokenMatrix m) {
  if (m.size() == 0 || static_cast<std::size_t>(m.size()) != m.tokens.size())
    throw EmbeddingError("token matrix for \"" + key + "\" must pair every token with one vector");
  if (!m.vectors.allFinite()) throw EmbeddingError("non-finite token vector for \"" + key + "\"");
  if ((m.vectors.rowwise().squaredNorm().array() == 0.0).any())
    throw EmbeddingError("zero-norm token vector for \"" + key + "\"");
  std::unique_lock lock(mu_);
  if (token_dim_ != 0 && m.dim() != token_dim_)
    throw EmbeddingError("token vectors for \"" + key + "\" have dim " + std::to_string(m.dim()) +
                         ", store uses " + std::to_string(token_dim_));
  token_dim_ = m.dim();
  tokens_[key] = std::make_shared<const TokenMatrix>(std::move(m));
}

void EmbeddingStore::load_sentence_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EmbeddingError("cannot open sentence cache: " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw EmbeddingError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    const auto id = j.at("id").get<std::string>();
    put_sentence(id, vector_from_json(j.at("vector"), id));
  }
}

void EmbeddingStore::load_token_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EmbeddingError("cannot open token cache: " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw EmbeddingError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    const auto id = j.at("id").get<std::string>();
    put_tokens(id, matrix_from_json(j.at("tokens"), j.at("vectors"), id));
  }
}

void EmbeddingStore::save_sentence_cache(const std::filesystem::path& path) const {
  std::shared_lock lock(mu_);
  std::string out;
  for (const auto& key : sorted_keys(sentences_)) {
    out += nlohmann::json{{"id", key}, {"vector", vector_to_json(sentences_.at(key).transpose())}}.dump();
    out += '\n';
  }
  write_file(path, out);
}

void EmbeddingStore::save_token_cache(const std::filesystem::path& path) const {
  std::shared_lock lock(mu_);
  std::string out;
  for (const auto& key : sorted_keys(tokens_)) {
    const auto& m = *tokens_.at(key);
    auto vectors = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.size(); ++r) vectors.push_back(vector_to_json(m.vectors.row(r)));
    out += nlohmann::json{{"id", key}, {"tokens", m.tokens}, {"vectors", vectors}}.dump();
    out += '\n';
  }
  write_file(path, out);
}

std::size_t EmbeddingStore::sentence_count() const {
  std::shared_lock lock(mu_);
  return sentences_.size();
}

std::size_t EmbeddingStore::token_count() const {
  std::shared_lock lock(mu_);
  return tokens_.size();
}

std::optional<SentenceVector> EmbeddingStore::find_sentence(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = sentences_.find(key);
  if (it == sentences_.end()) return std::nullopt;
  return it->second;
}

std::shared_ptr<const TokenMatrix> EmbeddingStore::find_tokens(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = tokens_.find(key);
  return it == tokens_.end() ? nullptr : it->second;
}

nlohmann::json EmbeddingStore::call_provider(const std::vector<std::string>& texts,
                                             const char* granularity) {
  nlohmann::json request{{"model", provider_->model}, {"texts", texts}, {"granularity", granularity}};
  RequestContext ctx{next_request_id("embed"), "embed:" + provider_->model, transcript_, nullptr};
  ++network_calls_;
  const auto response =
      post_with_retry(*transport_, "/embed", request.dump(), provider_->retry, sleep_, ctx);
  try {
    auto j = nlohmann::json::parse(response.body);
    if (!j.contains("vectors") || !j["vectors"].is_array() || j["vectors"].size() != texts.size())
      throw EmbeddingError("embedding service returned a malformed \"vectors\" field");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw EmbeddingError(std::string("embedding service returned invalid JSON: ") + e.what());
  }
}

void EmbeddingStore::fetch_sentences(const std::vector<const ContentSample*>& missing,
                                     TextField field) {
  const std::size_t batch = std::max<std::size_t>(1, provider_->batch_size);
  for (std::size_t from = 0; from < missing.size(); from += batch) {
    const std::size_t to = std::min(missing.size(), from + batch);
    std::vector<std::string> texts;
    for (std::size_t i = from; i < to; ++i) texts.push_back(text_of(*missing[i], field));
    const auto j = call_provider(texts, "sentence");
    for (std::size_t i = from; i < to; ++i)
      put_sentence(cache_key(*missing[i], field), vector_from_json(j["vectors"][i - from], missing[i]->id));
  }
}

void EmbeddingStore::fetch_tokens(const std::vector<const ContentSample*>& missing) {
  const std::size_t batch = std::max<std::size_t>(1, provider_->batch_size);
  for (std::size_t from = 0; from < missing.size(); from += batch) {
    const std::size_t to = std::min(missing.size(), from + batch);
    std::vector<std::string> texts;
    for (std::size_t i = from; i < to; ++i) texts.push_back(missing[i]->title);
    const auto j = call_provider(texts, "token");
    if (!j.contains("tokens") || !j["tokens"].is_array() || j["tokens"].size() != texts.size())
      throw EmbeddingError("embedding service returned a malformed \"tokens\" field");
    for (std::size_t i = from; i < to; ++i)
      put_tokens(missing[i]->id,
                 matrix_from_json(j["tokens"][i - from], j["vectors"][i - from], missing[i]->id));
  }
}

SentenceVector EmbeddingStore::sentence(const ContentSample& sample, TextField field) {
  const auto key = cache_key(sample, field);
  if (auto hit = find_sentence(key)) return *hit;
  if (!transport_) throw EmbeddingError("embedding unavailable for \"" + key + "\"");
  fetch_sentences({&sample}, field);
  return *find_sentence(key);
}

std::shared_ptr<const TokenMatrix> EmbeddingStore::token_matrix(const ContentSample& sample) {
  if (auto hit = find_tokens(sample.id)) return hit;
  if (!transport_) throw EmbeddingError("embedding unavailable for \"" + sample.id + "\"");
  fetch_tokens({&sample});
  return find_tokens(sample.id);
}

void EmbeddingStore::prefetch_sentences(std::span<const ContentSample> samples, TextField field) {
  std::vector<const ContentSample*> missing;
  for (const auto& s : samples)
    if (!find_sentence(cache_key(s, field))) missing.push_back(&s);
  if (missing.empty()) return;
  if (!transport_) throw EmbeddingError("embedding unavailable for \"" + missing.front()->id + "\"");
  fetch_sentences(missing, field);
}

void EmbeddingStore::prefetch_tokens(std::span<const ContentSample> samples) {
  std::vector<const ContentSample*> missing;
  for (const auto& s : samples)
    if (!find_tokens(s.id)) missing.push_back(&s);
  if (missing.empty()) return;
  if (!transport_) throw EmbeddingError("embedding unavailable for \"" + missing.front()->id + "\"");
  fetch_tokens(missing);
}

}  // namespace harmicl
