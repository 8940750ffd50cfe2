#include "harmicl/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "harmicl/util.hpp"
#include "harmicl/version.hpp"

namespace harmicl {
namespace {

constexpr std::array<std::pair<RunApproach, std::string_view>, 5> kApproachNames{{
    {RunApproach::ZSL, "ZSL"},
    {RunApproach::FS_ICL, "FS_ICL"},
    {RunApproach::FS_ICL_CG, "FS_ICL_CG"},
    {RunApproach::FS_ICL_DII, "FS_ICL_DII"},
    {RunApproach::ModerationBaseline, "ModerationBaseline"},
}};

Approach prompt_approach(RunApproach a) {
  switch (a) {
    case RunApproach::ZSL: return Approach::ZSL;
    case RunApproach::FS_ICL: return Approach::FS_ICL;
    case RunApproach::FS_ICL_CG: return Approach::FS_ICL_CG;
    case RunApproach::FS_ICL_DII: return Approach::FS_ICL_DII;
    case RunApproach::ModerationBaseline: break;
  }
  throw ConfigError("moderation baselines do not render prompts");
}

bool needs_captions(const RunConfig& cfg) {
  return cfg.approach == RunApproach::FS_ICL_CG ||
         (cfg.approach == RunApproach::FS_ICL_DII && cfg.model.family == PromptFamily::PlainCompletion);
}

// Deterministic subset of test indices, kept in corpus order.
std::vector<std::size_t> test_indices(std::size_t n, const RunConfig& cfg) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (!cfg.test_limit || *cfg.test_limit >= n) return idx;
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
  idx.resize(*cfg.test_limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

ContentSample with_caption(const ContentSample& s, CaptionClient* captioner) {
  if (s.caption && !s.caption->empty()) return s;
  if (!captioner) throw GatewayError(GatewayError::Kind::Precondition,
                                     "sample \"" + s.id + "\" has no caption and no captioner is configured");
  if (!s.image_ref) throw GatewayError(GatewayError::Kind::Precondition,
                                       "sample \"" + s.id + "\" has neither caption nor image_ref");
  ContentSample out = s;
  out.caption = captioner->caption(*s.image_ref, s.id);
  return out;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

struct TableRow {
  std::vector<std::string> cells;
};

std::vector<std::string> table_header() {
  return {"run", "approach", "model", "selector", "k", "n", "accuracy", "precision", "recall", "f1",
          "unparseable"};
}

std::vector<TableRow> table_rows(std::span<const RunReport> reports) {
  std::vector<TableRow> rows;
  for (const auto& r : reports) {
    const auto& c = r.config;
    const auto& sel = c.value("selection", nlohmann::json::object());
    rows.push_back({{r.run_name, c.value("approach", ""), c.value("/model/name"_json_pointer, ""),
                     sel.value("selector", ""), std::to_string(sel.value("k", 0)),
                     std::to_string(r.metrics.total()), fixed(r.metrics.accuracy),
                     fixed(r.metrics.precision), fixed(r.metrics.recall), fixed(r.metrics.f1),
                     std::to_string(r.metrics.unparseable)}});
  }
  return rows;
}

}  // namespace

std::string_view to_string(RunApproach a) {
  for (const auto& [v, name] : kApproachNames)
    if (v == a) return name;
  return "?";
}

std::optional<RunApproach> parse_run_approach(std::string_view s) {
  for (const auto& [v, name] : kApproachNames)
    if (name == s) return v;
  return std::nullopt;
}

RunConfig RunConfig::normalized() const {
  RunConfig out = *this;
  if (out.approach == RunApproach::ZSL) out.selection.k = 0;
  if (out.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (!(moderation_threshold >= 0.0 && moderation_threshold <= 1.0))
    throw ConfigError("moderation threshold must lie in [0, 1]");
  try {
    out.selection.validate();
    if (out.approach != RunApproach::ModerationBaseline) out.model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (out.approach == RunApproach::FS_ICL_DII && out.model.family != PromptFamily::MultimodalChat &&
      out.model.family != PromptFamily::PlainCompletion)
    throw ConfigError("model \"" + out.model.name + "\" (" + std::string(to_string(out.model.family)) +
                      ") cannot take direct image input");
  return out;
}

std::string RunConfig::name() const {
  std::string out(to_string(approach));
  if (approach == RunApproach::ModerationBaseline) return out + "-t" + fixed(moderation_threshold, 2);
  out += "-" + model.name;
  if (approach == RunApproach::ZSL) {
    out += "-k0";
  } else {
    // The selector stays in the name at k=0 so each grid point gets its own report.
    out += "-" + std::string(to_string(selection.selector)) + "-k" + std::to_string(selection.k);
    if (selection.k > 0) {
      if (selection.effective_mode() == SelectionMode::InstanceTopK) out += "-topk";
      if (!selection.reorder) out += "-raworder";
      if (selection.balanced) out += "-balanced";
      if (selection.bm25_coverage == Bm25Coverage::Binary && selection.selector == SelectorKind::BM25)
        out += "-binary";
    }
  }
  if (prompt.descriptive) out += "-descriptive";
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j{
      {"approach", to_string(approach)},
      {"model",
       {{"name", model.name},
        {"family", to_string(model.family)},
        {"endpoint", model.endpoint.base_url},
        {"temperature", model.params.temperature},
        {"max_output_tokens", model.params.max_output_tokens},
        {"max_attempts", model.retry.max_attempts},
        {"backoff_base_ms", model.retry.backoff_base_ms},
        {"max_in_flight", model.max_in_flight}}},
      {"selection",
       {{"selector", to_string(selection.selector)},
        {"k", selection.k},
        {"mode", to_string(selection.effective_mode())},
        {"ngram_size", selection.ngram_size},
        {"bm25_k1", selection.bm25_k1},
        {"bm25_b", selection.bm25_b},
        {"bm25_coverage", selection.bm25_coverage == Bm25Coverage::Binary ? "Binary" : "PerTerm"},
        {"reorder", selection.reorder},
        {"balanced", selection.balanced},
        {"tie_break", "ascending_id"}}},
      {"descriptive_prompt", prompt.descriptive},
      {"test_limit", test_limit ? nlohmann::json(*test_limit) : nlohmann::json(nullptr)},
      {"seed", seed},
      {"moderation_threshold", moderation_threshold}};
  if (model.mock) {
    j["model"]["mock"] = {{"harmful_keywords", model.mock->harmful_keywords},
                          {"default", to_string(model.mock->default_label)}};
  }
  return j;
}

Metrics compute_metrics(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw ConfigError("cannot compute metrics over zero predictions");
  Metrics m;
  for (const auto& p : predictions) {
    const auto label = p.predicted.label();
    if (!label) {
      ++m.unparseable;
    } else if (*label == Label::Harmful) {
      ++(p.gold == Label::Harmful ? m.tp : m.fp);
    } else {
      ++(p.gold == Label::Harmful ? m.fn : m.tn);
    }
  }
  const auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  m.accuracy = ratio(m.tp + m.tn, m.total());
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0
                                       : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  return {{"tp", m.tp},           {"fp", m.fp},         {"fn", m.fn},
          {"tn", m.tn},           {"unparseable", m.unparseable},
          {"total", m.total()},   {"accuracy", m.accuracy},
          {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

RunReport run_experiment(const Corpus& pool, const Corpus& test, const RunConfig& raw_cfg,
                         const RunDeps& deps) {
  const RunConfig cfg = raw_cfg.normalized();
  for (const auto& s : test.samples()) {
    if (pool.find(s.id)) throw ConfigError("split leakage: test id \"" + s.id + "\" is in the pool");
    if (!s.gold_label) throw ConfigError("test sample \"" + s.id + "\" has no gold label");
  }
  const bool moderation = cfg.approach == RunApproach::ModerationBaseline;
  if (moderation && !deps.moderation) throw ConfigError("moderation baseline needs a moderation client");
  if (!moderation && !deps.gateway) throw ConfigError("run needs a model gateway");
  const bool selecting = !moderation && cfg.selection.k > 0;
  if (selecting && cfg.selection.selector != SelectorKind::BM25 && !deps.store)
    throw ConfigError("selector " + std::string(to_string(cfg.selection.selector)) +
                      " needs an embedding store");

  std::optional<CorpusStats> own_stats;
  const CorpusStats* stats = deps.stats;
  if (selecting && cfg.selection.selector == SelectorKind::BM25 &&
      (!stats || stats->ngram_size != cfg.selection.ngram_size)) {
    own_stats = build_corpus_stats(pool, cfg.selection.ngram_size);
    stats = &*own_stats;
  }
  const SelectorDeps selector_deps{stats, deps.store};

  RunReport report;
  report.config = cfg.to_json();
  report.run_name = cfg.name();
  report.artifact_version = kArtifactVersion;
  report.template_version = template_version();
  report.started_at = utc_timestamp();

  const auto indices = test_indices(test.size(), cfg);
  std::vector<Prediction> predictions(indices.size());

  auto evaluate = [&](std::size_t slot) {
    const ContentSample& sample = test.samples()[indices[slot]];
    Prediction& p = predictions[slot];
    p.sample_id = sample.id;
    p.gold = *sample.gold_label;
    const auto start = std::chrono::steady_clock::now();
    try {
      if (moderation) {
        const auto card = deps.moderation->moderation_scores(sample.title);
        const auto decision = scorecard_decision(card, cfg.moderation_threshold);
        p.predicted = parse_label(to_string(decision));
        p.predicted.raw = nlohmann::json(card.scores).dump();
      } else {
        ExemplarSet exemplars;
        if (selecting) exemplars = select_exemplars(sample, pool, cfg.selection, selector_deps).exemplars;
        for (const auto& e : exemplars.items) p.exemplar_ids.push_back(e.sample.id);
        ContentSample query = sample;
        if (needs_captions(cfg)) {
          query = with_caption(sample, deps.captioner);
          for (auto& e : exemplars.items) e.sample = with_caption(e.sample, deps.captioner);
        }
        const auto prompt =
            render(prompt_approach(cfg.approach), query, exemplars, cfg.model.family, cfg.prompt);
        p.prompt_hash = prompt_hash(prompt);
        p.predicted = parse_label(deps.gateway->complete(cfg.model, prompt));
      }
    } catch (const std::exception& e) {
      p.predicted = ParsedLabel{ParsedValue::Unparseable, {}};
      p.error = e.what();
    }
    p.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  };

  const auto workers =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.parallelism), indices.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < indices.size(); ++i) evaluate(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool_threads;
    for (std::size_t w = 0; w < workers; ++w)
      pool_threads.emplace_back([&] {
        for (std::size_t i = next++; i < indices.size(); i = next++) evaluate(i);
      });
  }

  report.predictions = std::move(predictions);
  if (!report.predictions.empty()) report.metrics = compute_metrics(report.predictions);
  report.finished_at = utc_timestamp();
  return report;
}

nlohmann::json prediction_to_json(const Prediction& p) {
  nlohmann::json j{{"sample_id", p.sample_id},
                   {"predicted", to_string(p.predicted.value)},
                   {"raw", p.predicted.raw},
                   {"gold", to_string(p.gold)},
                   {"exemplar_ids", p.exemplar_ids},
                   {"prompt_hash", p.prompt_hash},
                   {"latency_ms", p.latency_ms}};
  if (!p.error.empty()) j["error"] = p.error;
  return j;
}

Prediction prediction_from_json(const nlohmann::json& j) {
  Prediction p;
  p.sample_id = j.at("sample_id").get<std::string>();
  p.predicted = parse_label(j.at("raw").get<std::string>());
  const auto predicted = j.at("predicted").get<std::string>();
  p.predicted.value = predicted == "Harmful"    ? ParsedValue::Harmful
                      : predicted == "Harmless" ? ParsedValue::Harmless
                                                : ParsedValue::Unparseable;
  const auto gold = parse_label_name(j.at("gold").get<std::string>());
  if (!gold) throw ConfigError("prediction for \"" + p.sample_id + "\" has an invalid gold label");
  p.gold = *gold;
  p.exemplar_ids = j.at("exemplar_ids").get<std::vector<std::string>>();
  p.prompt_hash = j.at("prompt_hash").get<std::string>();
  p.latency_ms = j.at("latency_ms").get<std::int64_t>();
  p.error = j.value("error", "");
  return p;
}

void emit_report(const RunReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<std::string> hashes;
  for (const auto& p : report.predictions) hashes.push_back(p.prompt_hash);
  nlohmann::json summary{{"run", report.run_name},
                         {"config", report.config},
                         {"metrics", metrics_to_json(report.metrics)},
                         {"template_version", report.template_version},
                         {"artifact_version", report.artifact_version},
                         {"prompts_digest", sha256_hex(nlohmann::json(hashes).dump())},
                         {"started_at", report.started_at},
                         {"finished_at", report.finished_at}};
  write_file(dir / "report.summary", summary.dump(2) + "\n");
  std::string preds;
  for (const auto& p : report.predictions) (preds += prediction_to_json(p).dump()) += '\n';
  write_file(dir / "report.preds", preds);
}

RunReport load_report(const std::filesystem::path& dir) {
  RunReport report;
  nlohmann::json summary;
  try {
    summary = nlohmann::json::parse(read_file(dir / "report.summary"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid report.summary in " + dir.string() + ": " + e.what());
  }
  report.run_name = summary.value("run", "");
  report.config = summary.at("config");
  report.template_version = summary.value("template_version", "");
  report.artifact_version = summary.value("artifact_version", "");
  report.started_at = summary.value("started_at", "");
  report.finished_at = summary.value("finished_at", "");
  std::istringstream preds(read_file(dir / "report.preds"));
  std::string line;
  while (std::getline(preds, line))
    if (!line.empty()) report.predictions.push_back(prediction_from_json(nlohmann::json::parse(line)));
  if (!report.predictions.empty()) report.metrics = compute_metrics(report.predictions);
  return report;
}

std::string comparison_table(std::span<const RunReport> reports) {
  const auto header = table_header();
  const auto rows = table_rows(reports);
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.cells.size(); ++c) width[c] = std::max(width[c], r.cells[c].size());
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out << "  ";
      out << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
    }
    out << '\n';
  };
  emit(header);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  emit(rule);
  for (const auto& r : rows) emit(r.cells);
  return out.str();
}

std::string comparison_tsv(std::span<const RunReport> reports) {
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) out << (c ? "\t" : "") << cells[c];
    out << '\n';
  };
  emit(table_header());
  for (const auto& r : table_rows(reports)) emit(r.cells);
  return out.str();
}

}  // namespace harmicl
