#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "harness.hpp"
#include "harmicl/selectors.hpp"

using namespace harmicl;
using namespace harmicl::testing;

namespace {

SelectionConfig bm25_cfg(int k = 2, int n = 4) {
  SelectionConfig c;
  c.selector = SelectorKind::BM25;
  c.k = k;
  c.ngram_size = n;
  return c;
}

SelectionConfig bsr_cfg(int k) {
  SelectionConfig c;
  c.selector = SelectorKind::BSR;
  c.k = k;
  return c;
}

TokenMatrix matrix(std::vector<std::vector<double>> rows) {
  TokenMatrix m;
  m.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.tokens.push_back("t" + std::to_string(i));
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

TokenMatrix random_matrix(std::mt19937_64& rng, int rows, int dim, double lo, double hi) {
  TokenMatrix m;
  m.vectors.resize(rows, dim);
  for (int i = 0; i < rows; ++i) {
    m.tokens.push_back("u" + std::to_string(i));
    for (int j = 0; j < dim; ++j) m.vectors(i, j) = uniform(rng, lo, hi);
    if (m.vectors.row(i).squaredNorm() == 0.0) m.vectors(i, 0) = 1.0;
  }
  return m;
}

// Random BSR micro-instance: a query and a labelled pool with token matrices in `store`.
struct MicroPool {
  ContentSample query;
  std::vector<ContentSample> members;
  std::unique_ptr<EmbeddingStore> store = std::make_unique<EmbeddingStore>();
};

MicroPool micro_pool(std::mt19937_64& rng, int candidates, int units, double lo = 0.0) {
  MicroPool p;
  const int dim = 2 + static_cast<int>(rng() % 4);
  p.query = sample("q", "query", Label::Harmless);
  p.store->put_tokens("q", random_matrix(rng, units, dim, lo, 1.0));
  for (int c = 0; c < candidates; ++c) {
    auto s = sample("c" + std::to_string(c), "cand", rng() % 2 ? Label::Harmful : Label::Harmless);
    p.store->put_tokens(s.id, random_matrix(rng, 1 + static_cast<int>(rng() % 4), dim, lo, 1.0));
    p.members.push_back(s);
  }
  return p;
}

// Brute-force Cov over a subset given as a bitmask.
double brute_cov(const RowMatrix<double>& unit, unsigned mask) {
  if (mask == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index u = 0; u < unit.cols(); ++u) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < unit.rows(); ++c)
      if (mask & (1u << c)) best = std::max(best, unit(c, u));
    total += best;
  }
  return total;
}

}  // namespace

TEST_CASE("BM25 fixed cases") {
  SUBCASE("no shared n-gram scores zero") {
    Corpus pool({sample("a", "one two three four", Label::Harmless),
                 sample("b", "five six seven eight", Label::Harmful)},
                SplitTag::Pool);
    const auto stats = build_corpus_stats(pool, 4);
    CHECK(score_bm25(sample("q", "nine ten eleven twelve"), pool.samples()[0], stats, bm25_cfg()) == 0.0);
  }
  SUBCASE("N=2, df=1, f=1, |D|=avgdl gives ln 2") {
    Corpus pool({sample("a", "one two three four", Label::Harmless),
                 sample("b", "five six seven eight", Label::Harmful)},
                SplitTag::Pool);
    const auto stats = build_corpus_stats(pool, 4);
    const double s = score_bm25(sample("q", "one two three four"), pool.samples()[0], stats, bm25_cfg());
    CHECK(s == doctest::Approx(0.6931471805599453).epsilon(1e-12));
  }
  SUBCASE("a repeated query n-gram counts twice") {
    Corpus pool({sample("a", "x y", Label::Harmless), sample("b", "p q r", Label::Harmful)}, SplitTag::Pool);
    const auto stats = build_corpus_stats(pool, 2);
    const auto cfg = bm25_cfg(2, 2);
    const double once = score_bm25(sample("q1", "x y"), pool.samples()[0], stats, cfg);
    const double twice = score_bm25(sample("q2", "x y x y"), pool.samples()[0], stats, cfg);
    // "x y x y" yields grams [x y, y x, x y]; "y x" is absent from the candidate.
    CHECK(once > 0.0);
    CHECK(twice == doctest::Approx(2.0 * once).epsilon(1e-12));
  }
  SUBCASE("defaults") {
    SelectionConfig c;
    CHECK(c.bm25_k1 == 1.5);
    CHECK(c.bm25_b == 0.75);
    CHECK(c.ngram_size == 4);
  }
  SUBCASE("stats built with another n are rejected") {
    Corpus pool({sample("a", "x y z w", Label::Harmless)}, SplitTag::Pool);
    const auto stats = build_corpus_stats(pool, 3);
    CHECK_THROWS_AS(score_bm25(sample("q", "x y z w"), pool.samples()[0], stats, bm25_cfg()), SelectionError);
  }
}

TEST_CASE("BM25 idf is never negative") {
  CorpusStats s;
  s.doc_count = 10;
  s.avg_doc_len = 3;
  s.doc_freq["g"] = 10;
  CHECK(bm25_idf(s, "g") > 0.0);
  CHECK(bm25_idf(s, "g") == doctest::Approx(std::log(0.5 / 10.5 + 1.0)));
  CHECK(bm25_idf(s, "unseen") == doctest::Approx(std::log(10.5 / 0.5 + 1.0)));
}

// Appending an occurrence also lengthens the candidate, which lowers every other
// matched term through length normalization. The shared term itself never drops,
// and with the length held fixed the total never drops.
TEST_CASE("BM25 monotone in occurrences of a shared n-gram") {
  std::mt19937_64 rng(21);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f", "g"};
  for (int t = 0; t < 500; ++t) {
    std::vector<std::string> q, d;
    for (int i = 0; i < 4; ++i) q.push_back(words[rng() % 4]);
    for (int i = 0; i < 5; ++i) d.push_back(words[rng() % words.size()]);
    auto join = [](const std::vector<std::string>& ws) {
      std::string out;
      for (const auto& w : ws) out += w + " ";
      return out;
    };
    Corpus pool({sample("p1", join(d), Label::Harmless), sample("p2", join(q), Label::Harmful),
                 sample("p3", "g f e", Label::Harmless)},
                SplitTag::Pool);
    const auto stats = build_corpus_stats(pool, 1);
    const auto cfg = bm25_cfg(1, 1);
    const SelectorDeps deps{&stats, nullptr};
    const auto query = sample("q", join(q));
    const std::string g = q[rng() % q.size()];

    auto longer = d;
    longer.push_back(g);
    const auto before = unit_scores(query, sample("d", join(d)), cfg, deps);
    const auto after = unit_scores(query, sample("d", join(longer)), cfg, deps);
    for (std::size_t u = 0; u < q.size(); ++u)
      if (q[u] == g) CHECK(after[static_cast<Eigen::Index>(u)] >= before[static_cast<Eigen::Index>(u)] - 1e-12);

    for (auto& w : d) {
      if (std::find(q.begin(), q.end(), w) != q.end()) continue;
      auto swapped = d;
      std::replace(swapped.begin(), swapped.end(), w, g);
      CHECK(score_bm25(query, sample("d", join(swapped)), stats, cfg) >=
            score_bm25(query, sample("d", join(d)), stats, cfg) - 1e-12);
      break;
    }
  }
}

TEST_CASE("BSR fixed cases") {
  const auto q = matrix({{1, 0}});
  const auto d = matrix({{0.2, std::sqrt(1 - 0.04)}, {0.9, std::sqrt(1 - 0.81)}});
  CHECK(score_bsr(q, d) == doctest::Approx(0.9).epsilon(1e-12));
  const auto q2 = matrix({{1, 0}, {0, 1}});
  CHECK(score_bsr(q2, matrix({{1, 0}})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(score_bsr(q2, q2) == 2.0);
}

TEST_CASE("BSR identity, bounds and asymmetry") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 500; ++t) {
    const int dim = 2 + static_cast<int>(rng() % 15);
    auto q = random_matrix(rng, 1 + static_cast<int>(rng() % 12), dim, -1, 1);
    auto d = random_matrix(rng, 1 + static_cast<int>(rng() % 12), dim, -1, 1);
    q.vectors.rowwise().normalize();
    const double size = static_cast<double>(q.size());
    CHECK(score_bsr(q, q) == doctest::Approx(size).epsilon(1e-14));
    const double s = score_bsr(q, d);
    CHECK(s <= size + 1e-12);
    CHECK(s >= -size - 1e-12);
  }
}

TEST_CASE("coverage_gain") {
  std::mt19937_64 rng(17);
  SUBCASE("empty selection gives the instance score") {
    for (int t = 0; t < 50; ++t) {
      auto p = micro_pool(rng, 3, 4);
      const auto cfg = bsr_cfg(2);
      SelectorDeps deps{nullptr, p.store.get()};
      CHECK(coverage_gain(p.query, ExemplarSet{}, p.members[0], cfg, deps) ==
            doctest::Approx(instance_score(p.query, p.members[0], cfg, deps)).epsilon(1e-12));
    }
  }
  SUBCASE("a candidate already selected adds nothing") {
    auto p = micro_pool(rng, 3, 4);
    SelectorDeps deps{nullptr, p.store.get()};
    ExemplarSet sel{{{p.members[1], Label::Harmless, 0.0}}};
    CHECK(coverage_gain(p.query, sel, p.members[1], bsr_cfg(2), deps) == 0.0);
  }
  SUBCASE("disjoint halves add up to the pair's coverage") {
    EmbeddingStore store;
    store.put_tokens("q", matrix({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}));
    store.put_tokens("a", matrix({{1, 1, 0, 0}}));
    store.put_tokens("b", matrix({{0, 0, 1, 1}}));
    const auto q = sample("q", "q"), a = sample("a", "a", Label::Harmful), b = sample("b", "b", Label::Harmless);
    SelectorDeps deps{nullptr, &store};
    const auto cfg = bsr_cfg(2);
    const double ga = coverage_gain(q, ExemplarSet{}, a, cfg, deps);
    const double gb = coverage_gain(q, ExemplarSet{{{a, Label::Harmful, ga}}}, b, cfg, deps);
    const std::vector<ContentSample> both = {a, b};
    CHECK(ga + gb == doctest::Approx(coverage(q, both, cfg, deps)).epsilon(1e-12));
    CHECK(ga == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  }
  SUBCASE("Cosine has no coverage") {
    EmbeddingStore store;
    SelectionConfig cfg;
    cfg.selector = SelectorKind::Cosine;
    CHECK_THROWS_AS(coverage_gain(sample("q", "q"), ExemplarSet{}, sample("a", "a"), cfg,
                                  SelectorDeps{nullptr, &store}),
                    SelectionError);
  }
}

TEST_CASE("greedy selection properties on random micro-pools") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 300; ++t) {
    const int n_cand = 2 + static_cast<int>(rng() % 5);
    auto p = micro_pool(rng, n_cand, 1 + static_cast<int>(rng() % 5));
    Corpus pool(p.members, SplitTag::Pool);
    SelectorDeps deps{nullptr, p.store.get()};
    const int k = 1 + static_cast<int>(rng() % n_cand);
    auto cfg = bsr_cfg(k);
    cfg.reorder = false;
    const auto r = select_exemplars(p.query, pool, cfg, deps);
    REQUIRE(r.steps.size() == static_cast<std::size_t>(k));

    // Step gains are true marginal coverage gains, non-increasing, with Cov non-decreasing.
    std::vector<ContentSample> prefix;
    double prev_cov = 0.0, prev_gain = std::numeric_limits<double>::infinity();
    for (const auto& step : r.steps) {
      prefix.push_back(*pool.find(step.id));
      const double cov = coverage(p.query, prefix, cfg, deps);
      CHECK(step.gain == doctest::Approx(cov - prev_cov).epsilon(1e-9));
      CHECK(cov >= prev_cov - 1e-12);
      CHECK(step.gain <= prev_gain + 1e-12);
      prev_cov = cov;
      prev_gain = step.gain;
    }

    // Each greedy pick is the best available gain (brute force over unit scores).
    RowMatrix<double> unit(n_cand, static_cast<Eigen::Index>(r.query_units.size()));
    for (int c = 0; c < n_cand; ++c) unit.row(c) = unit_scores(p.query, p.members[c], cfg, deps).transpose();
    unsigned mask = 0;
    for (const auto& step : r.steps) {
      double best_gain = -std::numeric_limits<double>::infinity();
      int best_c = -1;
      for (int c = 0; c < n_cand; ++c) {
        if (mask & (1u << c)) continue;
        const double g = brute_cov(unit, mask | (1u << c)) - brute_cov(unit, mask);
        if (g > best_gain + 1e-12) {
          best_gain = g;
          best_c = c;
        }
      }
      CHECK(step.gain == doctest::Approx(best_gain).epsilon(1e-9));
      const int chosen = std::stoi(step.id.substr(1));
      mask |= 1u << chosen;
      (void)best_c;
    }

    // Pool order does not matter.
    auto shuffled = p.members;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto r2 = select_exemplars(p.query, Corpus(shuffled, SplitTag::Pool), cfg, deps);
    CHECK(r2.exemplars.ids() == r.exemplars.ids());
  }
}

TEST_CASE("selection basics") {
  std::mt19937_64 rng(29);
  auto p = micro_pool(rng, 5, 3);
  Corpus pool(p.members, SplitTag::Pool);
  SelectorDeps deps{nullptr, p.store.get()};

  SUBCASE("k=0 selects nothing") {
    CHECK(select_exemplars(p.query, pool, bsr_cfg(0), deps).exemplars.empty());
  }
  SUBCASE("k=1 greedy is the instance-score argmax") {
    const auto r = select_exemplars(p.query, pool, bsr_cfg(1), deps);
    double best = -1e300;
    std::string best_id;
    for (const auto& m : p.members) {
      const double s = instance_score(p.query, m, bsr_cfg(1), deps);
      if (s > best) {
        best = s;
        best_id = m.id;
      }
    }
    CHECK(r.exemplars.ids() == std::vector<std::string>{best_id});
  }
  SUBCASE("k beyond the pool returns everything and flags a short set") {
    const auto r = select_exemplars(p.query, pool, bsr_cfg(9), deps);
    CHECK(r.exemplars.size() == 5);
    CHECK(r.short_set);
  }
  SUBCASE("the query's own id is never selected") {
    auto members = p.members;
    members.push_back(sample("q", "query", Label::Harmful));
    const auto r = select_exemplars(p.query, Corpus(members, SplitTag::Pool), bsr_cfg(6), deps);
    const auto ids = r.exemplars.ids();
    CHECK(std::find(ids.begin(), ids.end(), "q") == ids.end());
    CHECK(ids.size() == 5);
  }
  SUBCASE("negative k is rejected") {
    CHECK_THROWS_AS(select_exemplars(p.query, pool, bsr_cfg(-1), deps), SelectionError);
  }
}

TEST_CASE("ties break by ascending id") {
  EmbeddingStore store;
  store.put_tokens("q", matrix({{1, 0}}));
  for (const char* id : {"z", "m", "a"}) store.put_tokens(id, matrix({{1, 1}}));
  Corpus pool({sample("z", "t", Label::Harmful), sample("m", "t", Label::Harmless), sample("a", "t", Label::Harmful)},
              SplitTag::Pool);
  SelectorDeps deps{nullptr, &store};
  auto cfg = bsr_cfg(1);
  CHECK(select_exemplars(sample("q", "q"), pool, cfg, deps).exemplars.ids() == std::vector<std::string>{"a"});
  cfg.mode = SelectionMode::InstanceTopK;
  cfg.k = 2;
  cfg.reorder = false;
  const auto r = select_exemplars(sample("q", "q"), pool, cfg, deps);
  CHECK(r.steps[0].id == "a");
  CHECK(r.steps[1].id == "m");
}

TEST_CASE("cosine selection is top-k by sentence similarity") {
  EmbeddingStore store;
  auto put = [&](const char* id, double x, double y) {
    SentenceVector v(2);
    v << x, y;
    store.put_sentence(id, v);
  };
  put("q", 1, 0);
  put("a", 0, 1);
  put("b", 1, 1);
  put("c", 1, 0.1);
  Corpus pool({sample("a", "t", Label::Harmful), sample("b", "t", Label::Harmless), sample("c", "t", Label::Harmful)},
              SplitTag::Pool);
  SelectionConfig cfg;
  cfg.selector = SelectorKind::Cosine;
  cfg.k = 2;
  CHECK(cfg.effective_mode() == SelectionMode::InstanceTopK);
  const auto r = select_exemplars(sample("q", "q"), pool, cfg, SelectorDeps{nullptr, &store});
  CHECK(r.exemplars.ids() == std::vector<std::string>{"b", "c"});  // ascending score, best last
  CHECK(score_cosine(sample("q", "q"), sample("b", "t"), store) == doctest::Approx(0.7071067811865475));
}

TEST_CASE("BM25 greedy coverage credits n-grams") {
  Corpus pool({sample("a", "red car fast road", Label::Harmful), sample("b", "red car fast road", Label::Harmless),
               sample("c", "blue sky open sea", Label::Harmless), sample("d", "quiet night long walk", Label::Harmful)},
              SplitTag::Pool);
  const auto stats = build_corpus_stats(pool, 2);
  auto cfg = bm25_cfg(2, 2);
  cfg.reorder = false;
  const auto q = sample("q", "red car blue sky");
  const auto r = select_exemplars(q, pool, cfg, SelectorDeps{&stats, nullptr});
  // "blue sky" is rarer than "red car", so "c" goes first. "a" beats its duplicate "b" on id.
  CHECK(r.exemplars.ids() == std::vector<std::string>{"c", "a"});
  CHECK(r.query_units == std::vector<std::string>{"red car", "car blue", "blue sky"});
  CHECK(r.steps[0].newly_covered == std::vector<std::size_t>{2});
  CHECK(r.steps[1].newly_covered == std::vector<std::size_t>{0});
  CHECK(r.steps[0].gain == doctest::Approx(std::log(3.5 / 1.5 + 1.0)).epsilon(1e-12));

  cfg.bm25_coverage = Bm25Coverage::Binary;
  const auto units = unit_scores(q, pool.samples()[2], cfg, SelectorDeps{&stats, nullptr});
  CHECK(units[0] == 0.0);
  CHECK(units[2] == 1.0);
}

TEST_CASE("reorder_exemplars") {
  auto ex = [](const char* id, double s) { return Exemplar{sample(id, "t"), Label::Harmless, s}; };
  ExemplarSet set{{ex("a", 0.2), ex("b", 0.9), ex("c", 0.5)}};
  const auto sorted = reorder_exemplars(set, OrderStrategy::ByInstanceScore);
  CHECK(sorted.ids() == std::vector<std::string>{"a", "c", "b"});
  CHECK(reorder_exemplars(set, OrderStrategy::SelectionOrder).ids() == set.ids());
  ExemplarSet ties{{ex("x", 0.5), ex("y", 0.1), ex("z", 0.5), ex("w", 0.5)}};
  CHECK(reorder_exemplars(ties, OrderStrategy::ByInstanceScore).ids() ==
        std::vector<std::string>{"y", "x", "z", "w"});
}

TEST_CASE("balanced selection keeps class counts within one") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 200; ++t) {
    auto p = micro_pool(rng, 6, 3);
    // Guarantee supply of at least ceil(k/2) per class.
    for (int c = 0; c < 6; ++c) p.members[c].gold_label = c % 2 ? Label::Harmful : Label::Harmless;
    const int k = 1 + static_cast<int>(rng() % 6);
    auto cfg = bsr_cfg(k);
    cfg.balanced = true;
    if (rng() % 2) cfg.mode = SelectionMode::InstanceTopK;
    const auto r = select_exemplars(p.query, Corpus(p.members, SplitTag::Pool), cfg,
                                    SelectorDeps{nullptr, p.store.get()});
    int harmful = 0, harmless = 0;
    for (const auto& e : r.exemplars.items) ++(e.label == Label::Harmful ? harmful : harmless);
    CHECK(harmful + harmless == k);
    CHECK(std::abs(harmful - harmless) <= 1);
    CHECK_FALSE(r.imbalanced);
  }
}

TEST_CASE("balanced selection relaxes when a class runs out") {
  std::mt19937_64 rng(37);
  auto p = micro_pool(rng, 5, 3);
  for (auto& m : p.members) m.gold_label = Label::Harmless;
  p.members[0].gold_label = Label::Harmful;
  auto cfg = bsr_cfg(4);
  cfg.balanced = true;
  const auto r = select_exemplars(p.query, Corpus(p.members, SplitTag::Pool), cfg,
                                  SelectorDeps{nullptr, p.store.get()});
  CHECK(r.exemplars.size() == 4);
  CHECK(r.imbalanced);
}

TEST_CASE("selection_to_json lists steps and order") {
  std::mt19937_64 rng(41);
  auto p = micro_pool(rng, 4, 3);
  const auto r = select_exemplars(p.query, Corpus(p.members, SplitTag::Pool), bsr_cfg(3),
                                  SelectorDeps{nullptr, p.store.get()});
  const auto j = selection_to_json(p.query, r);
  CHECK(j["query_id"] == "q");
  CHECK(j["steps"].size() == 3);
  CHECK(j["final_order"].size() == 3);
  CHECK(j["query_units"].size() == 3);
}
