#include "harmicl/experiment_spec.hpp"

#include <cstdlib>
#include <unordered_set>

#include "harmicl/util.hpp"

namespace harmicl {
namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename T, typename Parse>
std::vector<T> enum_list(const nlohmann::json& j, const char* key, Parse parse, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_array() || j[key].empty())
    throw SpecError(std::string("grid.") + key + " must be a non-empty array");
  std::vector<T> out;
  for (const auto& v : j[key]) {
    auto parsed = parse(v.template get<std::string>());
    if (!parsed) throw SpecError(std::string("grid.") + key + ": unknown value \"" + v.template get<std::string>() + "\"");
    out.push_back(*parsed);
  }
  return out;
}

std::vector<bool> bool_list(const nlohmann::json& j, const char* key, std::vector<bool> fallback) {
  if (!j.contains(key)) return fallback;
  if (j[key].is_boolean()) return {j[key].get<bool>()};
  if (!j[key].is_array() || j[key].empty())
    throw SpecError(std::string("grid.") + key + " must be a boolean or non-empty array");
  std::vector<bool> out;
  for (const auto& v : j[key]) out.push_back(v.get<bool>());
  return out;
}

HttpEndpointConfig endpoint_from(const nlohmann::json& j, const char* where) {
  HttpEndpointConfig e;
  if (!j.contains("endpoint") || !j["endpoint"].is_string())
    throw SpecError(std::string(where) + ".endpoint is required");
  e.base_url = j["endpoint"].get<std::string>();
  if (e.base_url != kMockEndpoint && e.base_url.rfind("http://", 0) != 0)
    throw SpecError(std::string(where) + ".endpoint must be \"mock\" or an http:// URL, got \"" + e.base_url + "\"");
  e.timeout = std::chrono::milliseconds(j.value("timeout_ms", 30000));
  // Secrets come from the environment only.
  if (j.contains("token_env")) {
    const auto name = j["token_env"].get<std::string>();
    if (const char* v = std::getenv(name.c_str())) e.bearer_token = v;
  }
  return e;
}

RetryPolicy retry_from(const nlohmann::json& j) {
  RetryPolicy r;
  r.max_attempts = j.value("max_attempts", r.max_attempts);
  r.backoff_base_ms = j.value("backoff_base_ms", r.backoff_base_ms);
  return r;
}

ServiceConfig service_from(const nlohmann::json& j, const char* where) {
  ServiceConfig s;
  s.endpoint = endpoint_from(j, where);
  s.retry = retry_from(j);
  s.max_in_flight = j.value("max_in_flight", s.max_in_flight);
  return s;
}

ModelHandle model_from(const nlohmann::json& j) {
  ModelHandle h;
  if (!j.contains("name")) throw SpecError("models[].name is required");
  h.name = j["name"].get<std::string>();
  const auto family = parse_prompt_family(j.value("family", ""));
  if (!family) throw SpecError("model \"" + h.name + "\": unknown family \"" + j.value("family", "") + "\"");
  h.family = *family;
  h.endpoint = endpoint_from(j, ("models[" + h.name + "]").c_str());
  h.params.temperature = j.value("temperature", 0.0);
  h.params.max_output_tokens = j.value("max_output_tokens", 8);
  h.retry = retry_from(j);
  h.max_in_flight = j.value("max_in_flight", 4);
  if (j.contains("mock")) {
    MockModelRule rule;
    rule.harmful_keywords = j["mock"].value("harmful_keywords", std::vector<std::string>{});
    const auto def = parse_label_name(j["mock"].value("default", "Harmless"));
    if (!def) throw SpecError("model \"" + h.name + "\": mock.default must be Harmful or Harmless");
    rule.default_label = *def;
    h.mock = std::move(rule);
  }
  try {
    h.validate();
  } catch (const std::exception& e) {
    throw SpecError(e.what());
  }
  return h;
}

}  // namespace

ExperimentSpec ExperimentSpec::parse(const nlohmann::json& j, const std::filesystem::path& base) {
  if (!j.is_object()) throw SpecError("spec must be a JSON object");
  ExperimentSpec s;
  try {
    if (!j.contains("pool") || !j.contains("test")) throw SpecError("spec needs \"pool\" and \"test\" paths");
    s.pool_path = resolve(base, j["pool"].get<std::string>());
    s.test_path = resolve(base, j["test"].get<std::string>());
    if (j.contains("embeddings")) {
      const auto& e = j["embeddings"];
      if (e.contains("sentence_cache")) s.sentence_cache = resolve(base, e["sentence_cache"].get<std::string>());
      if (e.contains("token_cache")) s.token_cache = resolve(base, e["token_cache"].get<std::string>());
      if (e.contains("provider")) {
        const auto& p = e["provider"];
        EmbeddingProviderConfig cfg;
        cfg.endpoint = endpoint_from(p, "embeddings.provider");
        cfg.model = p.value("model", "");
        cfg.batch_size = p.value("batch_size", std::size_t{32});
        cfg.retry = retry_from(p);
        s.embedding_provider = cfg;
      }
    }
    for (const auto& m : j.value("models", nlohmann::json::array())) s.models.push_back(model_from(m));
    if (j.contains("captioner")) s.captioner = service_from(j["captioner"], "captioner");
    if (j.contains("moderation")) {
      const auto& m = j["moderation"];
      ModerationSpec ms;
      ms.service = service_from(m, "moderation");
      const auto provider = parse_moderation_provider(m.value("provider", "PerspectiveLike"));
      if (!provider) throw SpecError("moderation.provider must be PerspectiveLike or ModerationLike");
      ms.provider = *provider;
      ms.thresholds = m.value("thresholds", std::vector<double>{0.5});
      for (double t : ms.thresholds)
        if (!(t >= 0.0 && t <= 1.0)) throw SpecError("moderation thresholds must lie in [0, 1]");
      ms.mock_keywords = m.value("mock_keywords", std::vector<std::string>{});
      s.moderation = ms;
    }
    const auto grid = j.value("grid", nlohmann::json::object());
    s.grid.approaches = enum_list(grid, "approaches", parse_run_approach, s.grid.approaches);
    s.grid.selectors = enum_list(grid, "selectors", parse_selector_kind, s.grid.selectors);
    s.grid.modes = enum_list(grid, "modes", parse_selection_mode, s.grid.modes);
    if (grid.contains("shots")) s.grid.shots = grid["shots"].get<std::vector<int>>();
    if (s.grid.shots.empty()) throw SpecError("grid.shots must not be empty");
    for (int k : s.grid.shots)
      if (k < 0) throw SpecError("grid.shots values must be >= 0");
    s.grid.reorder = bool_list(grid, "reorder", s.grid.reorder);
    s.grid.balanced = bool_list(grid, "balanced", s.grid.balanced);
    s.grid.descriptive = bool_list(grid, "descriptive", s.grid.descriptive);

    s.ngram_size = j.value("ngram_size", 4);
    s.bm25_k1 = j.value("bm25_k1", 1.5);
    s.bm25_b = j.value("bm25_b", 0.75);
    const auto coverage = j.value("bm25_coverage", std::string("PerTerm"));
    if (coverage != "PerTerm" && coverage != "Binary")
      throw SpecError("bm25_coverage must be PerTerm or Binary");
    s.bm25_coverage = coverage == "Binary" ? Bm25Coverage::Binary : Bm25Coverage::PerTerm;
    if (j.contains("test_limit") && !j["test_limit"].is_null())
      s.test_limit = j["test_limit"].get<std::size_t>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.parallelism = j.value("parallelism", 1);
    if (s.parallelism < 1) throw SpecError("parallelism must be >= 1");
    s.out_dir = resolve(base, j.value("out_dir", std::string("runs")));
    if (j.contains("transcript")) s.transcript = resolve(base, j["transcript"].get<std::string>());

    bool needs_model = false;
    for (auto a : s.grid.approaches) needs_model |= a != RunApproach::ModerationBaseline;
    if (needs_model && s.models.empty()) throw SpecError("spec lists no models");
    for (auto a : s.grid.approaches)
      if (a == RunApproach::ModerationBaseline && !s.moderation)
        throw SpecError("ModerationBaseline requires a \"moderation\" section");
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed spec: ") + e.what());
  }
  return s;
}

ExperimentSpec ExperimentSpec::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception&) {
    throw SpecError("cannot read spec file: " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError("spec " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse(j, path.parent_path());
}

void ExperimentSpec::validate_paths() const {
  auto need = [](const std::filesystem::path& p, const char* what) {
    if (!std::filesystem::is_regular_file(p))
      throw SpecError(std::string(what) + " not found: " + p.string());
  };
  need(pool_path, "pool corpus");
  need(test_path, "test corpus");
  if (sentence_cache) need(*sentence_cache, "sentence embedding cache");
  if (token_cache) need(*token_cache, "token embedding cache");
}

std::vector<RunConfig> ExperimentSpec::expand_grid() const {
  std::vector<RunConfig> out;
  RunConfig base;
  base.selection.ngram_size = ngram_size;
  base.selection.bm25_k1 = bm25_k1;
  base.selection.bm25_b = bm25_b;
  base.selection.bm25_coverage = bm25_coverage;
  base.test_limit = test_limit;
  base.seed = seed;
  base.parallelism = parallelism;

  for (auto approach : grid.approaches) {
    if (approach == RunApproach::ModerationBaseline) {
      for (double t : moderation->thresholds) {
        RunConfig c = base;
        c.approach = approach;
        c.selection.k = 0;
        c.moderation_threshold = t;
        c.model.name = std::string(to_string(moderation->provider));
        out.push_back(c);
      }
      continue;
    }
    for (const auto& model : models) {
      if (approach == RunApproach::FS_ICL_DII && model.family != PromptFamily::MultimodalChat &&
          model.family != PromptFamily::PlainCompletion)
        continue;
      if (approach == RunApproach::ZSL) {
        for (bool descriptive : grid.descriptive) {
          RunConfig c = base;
          c.approach = approach;
          c.model = model;
          c.selection.k = 0;
          c.prompt.descriptive = descriptive;
          out.push_back(c);
        }
        continue;
      }
      for (auto selector : grid.selectors)
        for (int k : grid.shots)
          for (auto mode : grid.modes)
            for (bool reorder : grid.reorder)
              for (bool balanced : grid.balanced)
                for (bool descriptive : grid.descriptive) {
                  RunConfig c = base;
                  c.approach = approach;
                  c.model = model;
                  c.selection.selector = selector;
                  c.selection.k = k;
                  c.selection.mode = mode;
                  c.selection.reorder = reorder;
                  c.selection.balanced = balanced;
                  c.prompt.descriptive = descriptive;
                  out.push_back(c);
                }
    }
  }
  // Grid points differing only in axes a run ignores (Cosine mode, flags at k=0) collapse.
  std::vector<RunConfig> unique;
  std::unordered_set<std::string> names;
  for (auto& c : out)
    if (names.insert(c.name()).second) unique.push_back(std::move(c));
  return unique;
}

}  // namespace harmicl
