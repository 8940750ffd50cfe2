#include "harmicl/selectors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace harmicl {
namespace {

struct Bm25Doc {
  std::unordered_map<std::string, std::size_t> tf;
  std::size_t length = 0;
};

Bm25Doc bm25_doc(const ContentSample& sample, int n) {
  Bm25Doc doc;
  const auto grams = ngram_tokenize(sample.title, n);
  doc.length = grams.size();
  for (const auto& g : grams) ++doc.tf[g];
  return doc;
}

void check_stats(const CorpusStats& stats, const SelectionConfig& cfg) {
  if (stats.ngram_size != cfg.ngram_size)
    throw SelectionError("corpus statistics were built with n=" + std::to_string(stats.ngram_size) +
                         " but the selector uses n=" + std::to_string(cfg.ngram_size));
  if (stats.doc_count == 0 || !(stats.avg_doc_len > 0.0))
    throw SelectionError("corpus statistics are empty");
}

// Scores every candidate against one query, unit by unit.
class QueryScorer {
 public:
  QueryScorer(const ContentSample& query, const SelectionConfig& cfg, const SelectorDeps& deps)
      : cfg_(cfg), deps_(deps) {
    switch (cfg.selector) {
      case SelectorKind::BM25: {
        if (!deps.stats) throw SelectionError("BM25 selection needs corpus statistics");
        check_stats(*deps.stats, cfg);
        units_ = ngram_tokenize(query.title, cfg.ngram_size);
        idf_.resize(static_cast<Eigen::Index>(units_.size()));
        for (std::size_t u = 0; u < units_.size(); ++u)
          idf_[static_cast<Eigen::Index>(u)] = bm25_idf(*deps.stats, units_[u]);
        break;
      }
      case SelectorKind::BSR: {
        if (!deps.store) throw SelectionError("BSR selection needs token embeddings");
        query_tokens_ = deps.store->token_matrix(query);
        units_ = query_tokens_->tokens;
        break;
      }
      case SelectorKind::Cosine: {
        if (!deps.store) throw SelectionError("cosine selection needs sentence embeddings");
        query_vector_ = deps.store->sentence(query);
        break;
      }
    }
  }

  const std::vector<std::string>& units() const { return units_; }

  // Per-unit coverage scores and the instance score for one candidate.
  std::pair<Vector<double>, double> score(const ContentSample& candidate) const {
    switch (cfg_.selector) {
      case SelectorKind::BM25: {
        const auto doc = bm25_doc(candidate, cfg_.ngram_size);
        const double norm =
            cfg_.bm25_k1 * (1.0 - cfg_.bm25_b +
                            cfg_.bm25_b * static_cast<double>(doc.length) / deps_.stats->avg_doc_len);
        Vector<double> terms(static_cast<Eigen::Index>(units_.size()));
        Vector<double> cover(terms.size());
        for (std::size_t u = 0; u < units_.size(); ++u) {
          auto it = doc.tf.find(units_[u]);
          const double f = it == doc.tf.end() ? 0.0 : static_cast<double>(it->second);
          const auto i = static_cast<Eigen::Index>(u);
          terms[i] = idf_[i] * f * (cfg_.bm25_k1 + 1.0) / (f + norm);
          cover[i] = cfg_.bm25_coverage == Bm25Coverage::Binary ? (f > 0.0 ? 1.0 : 0.0) : terms[i];
        }
        return {cover, terms.sum()};
      }
      case SelectorKind::BSR: {
        const auto cand = deps_.store->token_matrix(candidate);
        Vector<double> best = token_cosines(query_tokens_->vectors, cand->vectors).rowwise().maxCoeff();
        const double total = best.sum();
        return {std::move(best), total};
      }
      case SelectorKind::Cosine: {
        const auto v = deps_.store->sentence(candidate);
        return {Vector<double>(), cosine(query_vector_, v)};
      }
    }
    return {};
  }

 private:
  const SelectionConfig& cfg_;
  const SelectorDeps& deps_;
  std::vector<std::string> units_;
  Vector<double> idf_;
  std::shared_ptr<const TokenMatrix> query_tokens_;
  SentenceVector query_vector_;
};

// Sum over units of max(0, score - best), with an empty set contributing the raw score.
double marginal_gain(const Vector<double>& scores, const Vector<double>& best, bool empty) {
  if (empty) return scores.sum();
  return (scores - best).cwiseMax(0.0).sum();
}

}  // namespace

std::string_view to_string(SelectorKind k) {
  switch (k) {
    case SelectorKind::Cosine: return "Cosine";
    case SelectorKind::BM25: return "BM25";
    case SelectorKind::BSR: return "BSR";
  }
  return "?";
}

std::string_view to_string(SelectionMode m) {
  return m == SelectionMode::InstanceTopK ? "InstanceTopK" : "GreedyCoverage";
}

std::optional<SelectorKind> parse_selector_kind(std::string_view s) {
  if (s == "Cosine") return SelectorKind::Cosine;
  if (s == "BM25") return SelectorKind::BM25;
  if (s == "BSR") return SelectorKind::BSR;
  return std::nullopt;
}

std::optional<SelectionMode> parse_selection_mode(std::string_view s) {
  if (s == "InstanceTopK") return SelectionMode::InstanceTopK;
  if (s == "GreedyCoverage") return SelectionMode::GreedyCoverage;
  return std::nullopt;
}

void SelectionConfig::validate() const {
  if (k < 0) throw SelectionError("shot count k must be >= 0");
  if (ngram_size < 1) throw SelectionError("ngram_size must be >= 1");
  if (!(bm25_k1 > 0.0)) throw SelectionError("bm25_k1 must be > 0");
  if (!(bm25_b >= 0.0 && bm25_b <= 1.0)) throw SelectionError("bm25_b must lie in [0, 1]");
}

std::vector<std::string> ExemplarSet::ids() const {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto& e : items) out.push_back(e.sample.id);
  return out;
}

double bm25_idf(const CorpusStats& stats, const std::string& ngram) {
  const double n = static_cast<double>(stats.df(ngram));
  const double total = static_cast<double>(stats.doc_count);
  return std::log((total - n + 0.5) / (n + 0.5) + 1.0);
}

double score_bm25(const ContentSample& query, const ContentSample& candidate,
                  const CorpusStats& stats, const SelectionConfig& cfg) {
  cfg.validate();
  SelectionConfig bm25 = cfg;
  bm25.selector = SelectorKind::BM25;
  SelectorDeps deps{&stats, nullptr};
  return QueryScorer(query, bm25, deps).score(candidate).second;
}

double score_cosine(const ContentSample& query, const ContentSample& candidate,
                    EmbeddingStore& store) {
  return cosine(store.sentence(query), store.sentence(candidate));
}

double instance_score(const ContentSample& query, const ContentSample& candidate,
                      const SelectionConfig& cfg, const SelectorDeps& deps) {
  return QueryScorer(query, cfg, deps).score(candidate).second;
}

std::vector<std::string> query_units(const ContentSample& query, const SelectionConfig& cfg,
                                     const SelectorDeps& deps) {
  if (cfg.selector == SelectorKind::Cosine) return {};
  return QueryScorer(query, cfg, deps).units();
}

Vector<double> unit_scores(const ContentSample& query, const ContentSample& candidate,
                           const SelectionConfig& cfg, const SelectorDeps& deps) {
  if (cfg.selector == SelectorKind::Cosine)
    throw SelectionError("the Cosine selector has no coverage units");
  return QueryScorer(query, cfg, deps).score(candidate).first;
}

double coverage(const ContentSample& query, std::span<const ContentSample> members,
                const SelectionConfig& cfg, const SelectorDeps& deps) {
  if (cfg.selector == SelectorKind::Cosine)
    throw SelectionError("coverage is undefined for the Cosine selector");
  if (members.empty()) return 0.0;
  QueryScorer scorer(query, cfg, deps);
  Vector<double> best = scorer.score(members.front()).first;
  for (std::size_t i = 1; i < members.size(); ++i) best = best.cwiseMax(scorer.score(members[i]).first);
  return best.sum();
}

double coverage_gain(const ContentSample& query, const ExemplarSet& selected,
                     const ContentSample& candidate, const SelectionConfig& cfg,
                     const SelectorDeps& deps) {
  if (cfg.selector == SelectorKind::Cosine)
    throw SelectionError("coverage gain is undefined for the Cosine selector");
  QueryScorer scorer(query, cfg, deps);
  const auto cand = scorer.score(candidate).first;
  if (selected.empty()) return cand.sum();
  Vector<double> best = scorer.score(selected.items.front().sample).first;
  for (std::size_t i = 1; i < selected.items.size(); ++i)
    best = best.cwiseMax(scorer.score(selected.items[i].sample).first);
  return marginal_gain(cand, best, false);
}

SelectionResult select_exemplars(const ContentSample& query, const Corpus& pool,
                                 const SelectionConfig& cfg, const SelectorDeps& deps) {
  cfg.validate();
  if (pool.split() != SplitTag::Pool) throw SelectionError("selection requires a Pool corpus");

  SelectionResult result;
  std::vector<const ContentSample*> candidates;
  candidates.reserve(pool.size());
  for (const auto& s : pool.samples())
    if (s.id != query.id) candidates.push_back(&s);
  std::sort(candidates.begin(), candidates.end(),
            [](const ContentSample* a, const ContentSample* b) { return a->id < b->id; });

  const auto k = static_cast<std::size_t>(cfg.k);
  result.short_set = candidates.size() < k;
  if (k == 0) return result;

  QueryScorer scorer(query, cfg, deps);
  result.query_units = scorer.units();
  const auto n_units = static_cast<Eigen::Index>(result.query_units.size());
  const auto n_cand = candidates.size();

  RowMatrix<double> unit(static_cast<Eigen::Index>(n_cand), n_units);
  std::vector<double> instance(n_cand);
  for (std::size_t c = 0; c < n_cand; ++c) {
    auto [scores, inst] = scorer.score(*candidates[c]);
    if (n_units > 0) unit.row(static_cast<Eigen::Index>(c)) = scores.transpose();
    instance[c] = inst;
  }

  // Class caps for balanced selection; a class may exceed its cap only once the
  // other class has no candidates left.
  const std::size_t cap = cfg.balanced ? (k + 1) / 2 : k;
  std::size_t remaining[2] = {0, 0};
  for (const auto* s : candidates) ++remaining[*s->gold_label == Label::Harmful ? 0 : 1];
  std::size_t taken[2] = {0, 0};
  std::vector<bool> used(n_cand, false);
  auto cls = [&](std::size_t c) { return *candidates[c]->gold_label == Label::Harmful ? 0 : 1; };
  auto eligible = [&](std::size_t c) {
    if (used[c]) return false;
    const int me = cls(c);
    return taken[me] < cap || remaining[1 - me] == 0;
  };

  std::vector<std::size_t> picks;
  const bool greedy = cfg.effective_mode() == SelectionMode::GreedyCoverage;
  Vector<double> best = Vector<double>::Zero(n_units);

  if (greedy) {
    while (picks.size() < k && picks.size() < n_cand) {
      std::size_t arg = n_cand;
      double arg_gain = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < n_cand; ++c) {
        if (!eligible(c)) continue;
        const double g =
            marginal_gain(unit.row(static_cast<Eigen::Index>(c)).transpose(), best, picks.empty());
        if (g > arg_gain) {  // candidates are in id order, so ties keep the smaller id
          arg_gain = g;
          arg = c;
        }
      }
      if (arg == n_cand) break;
      SelectionStep step{candidates[arg]->id, arg_gain, {}};
      const Vector<double> row = unit.row(static_cast<Eigen::Index>(arg)).transpose();
      for (Eigen::Index u = 0; u < n_units; ++u) {
        const bool improves = picks.empty() ? row[u] > 0.0 : row[u] > best[u] && row[u] > 0.0;
        if (improves) step.newly_covered.push_back(static_cast<std::size_t>(u));
      }
      best = picks.empty() ? row : best.cwiseMax(row);
      result.steps.push_back(std::move(step));
      picks.push_back(arg);
      used[arg] = true;
      const int c = cls(arg);
      ++taken[c];
      --remaining[c];
    }
  } else {
    std::vector<std::size_t> order(n_cand);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return instance[a] > instance[b]; });
    while (picks.size() < k && picks.size() < n_cand) {
      auto it = std::find_if(order.begin(), order.end(), eligible);
      if (it == order.end()) break;
      const std::size_t c = *it;
      SelectionStep step{candidates[c]->id, instance[c], {}};
      if (n_units > 0) {
        const Vector<double> row = unit.row(static_cast<Eigen::Index>(c)).transpose();
        for (Eigen::Index u = 0; u < n_units; ++u)
          if (row[u] > 0.0 && (picks.empty() || row[u] > best[u]))
            step.newly_covered.push_back(static_cast<std::size_t>(u));
        best = picks.empty() ? row : best.cwiseMax(row);
      }
      result.steps.push_back(std::move(step));
      picks.push_back(c);
      used[c] = true;
      const int cl = cls(c);
      ++taken[cl];
      --remaining[cl];
    }
  }

  for (auto c : picks)
    result.exemplars.items.push_back({*candidates[c], *candidates[c]->gold_label, instance[c]});
  if (cfg.balanced) {
    const auto diff = taken[0] > taken[1] ? taken[0] - taken[1] : taken[1] - taken[0];
    result.imbalanced = diff > 1;
  }

  // Top-k is emitted in ascending score order either way; greedy keeps pick order
  // unless reordering is requested.
  const auto strategy = (cfg.reorder || !greedy) ? OrderStrategy::ByInstanceScore
                                                 : OrderStrategy::SelectionOrder;
  result.exemplars = reorder_exemplars(std::move(result.exemplars), strategy);
  return result;
}

ExemplarSet reorder_exemplars(ExemplarSet set, OrderStrategy strategy) {
  if (strategy == OrderStrategy::ByInstanceScore)
    std::stable_sort(set.items.begin(), set.items.end(), [](const Exemplar& a, const Exemplar& b) {
      return a.instance_score < b.instance_score;
    });
  return set;
}

nlohmann::json selection_to_json(const ContentSample& query, const SelectionResult& result) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : result.steps) {
    nlohmann::json covered = nlohmann::json::array();
    for (auto u : s.newly_covered) covered.push_back(result.query_units[u]);
    steps.push_back({{"id", s.id}, {"gain", s.gain}, {"newly_covered", covered}});
  }
  nlohmann::json order = nlohmann::json::array();
  for (const auto& e : result.exemplars.items)
    order.push_back({{"id", e.sample.id},
                     {"label", to_string(e.label)},
                     {"instance_score", e.instance_score}});
  return {{"query_id", query.id},   {"query_units", result.query_units},
          {"steps", steps},         {"final_order", order},
          {"short_set", result.short_set}, {"imbalanced", result.imbalanced}};
}

}  // namespace harmicl
