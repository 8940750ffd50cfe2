#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>

#include "CLI11.hpp"
#include "harmicl/corpus.hpp"
#include "harmicl/embedding.hpp"
#include "harmicl/evaluator.hpp"
#include "harmicl/experiment_spec.hpp"
#include "harmicl/selectors.hpp"
#include "harmicl/util.hpp"
#include "harmicl/version.hpp"

namespace harmicl::cli {
namespace {

struct Globals {
  std::string spec;
  std::string out_dir;
  bool dry_run = false;
  std::string format = "table";
  int parallelism = 0;

  bool lines() const { return format == "lines"; }
};

// Error that maps onto a specific exit code.
struct Exit {
  int code;
  std::string message;
};

ExperimentSpec load_spec(const Globals& g) {
  if (g.spec.empty()) throw Exit{kInvalidInput, "--spec is required for this command"};
  try {
    auto spec = ExperimentSpec::load(g.spec);
    if (!g.out_dir.empty()) spec.out_dir = g.out_dir;
    if (g.parallelism > 0) spec.parallelism = g.parallelism;
    spec.validate_paths();
    return spec;
  } catch (const SpecError& e) {
    throw Exit{kInvalidInput, e.what()};
  }
}

Corpus load_split(const std::filesystem::path& path, SplitTag split) {
  try {
    return load_corpus(path, split);
  } catch (const CorpusError& e) {
    throw Exit{kInvalidInput, path.string() + ": " + e.what()};
  }
}

std::unique_ptr<EmbeddingStore> make_store(const ExperimentSpec& spec, const Hooks& hooks) {
  std::unique_ptr<EmbeddingStore> store;
  if (spec.embedding_provider) {
    store = std::make_unique<EmbeddingStore>(
        *spec.embedding_provider, hooks.transport_factory(spec.embedding_provider->endpoint));
  } else {
    store = std::make_unique<EmbeddingStore>();
  }
  try {
    if (spec.sentence_cache) store->load_sentence_cache(*spec.sentence_cache);
    if (spec.token_cache) store->load_token_cache(*spec.token_cache);
  } catch (const EmbeddingError& e) {
    throw Exit{kInvalidInput, e.what()};
  }
  return store;
}

void check_no_leakage(const Corpus& pool, const Corpus& test) {
  for (const auto& s : test.samples())
    if (pool.find(s.id)) throw Exit{kInvalidInput, "split leakage: test id \"" + s.id + "\" is in the pool"};
}

std::string label_counts(const Corpus& c) {
  std::size_t harmful = 0, harmless = 0, unlabeled = 0;
  for (const auto& s : c.samples()) {
    if (!s.gold_label) ++unlabeled;
    else if (*s.gold_label == Label::Harmful) ++harmful;
    else ++harmless;
  }
  return "samples=" + std::to_string(c.size()) + " harmful=" + std::to_string(harmful) +
         " harmless=" + std::to_string(harmless) + " unlabeled=" + std::to_string(unlabeled);
}

nlohmann::json corpus_summary(const Corpus& c, const std::string& path) {
  std::size_t harmful = 0, harmless = 0, unlabeled = 0;
  std::map<std::string, std::size_t> categories;
  for (const auto& s : c.samples()) {
    if (!s.gold_label) ++unlabeled;
    else if (*s.gold_label == Label::Harmful) ++harmful;
    else ++harmless;
    for (auto cat : s.categories) ++categories[std::string(to_string(cat))];
  }
  return {{"path", path},           {"split", c.split() == SplitTag::Pool ? "pool" : "test"},
          {"samples", c.size()},    {"harmful", harmful},
          {"harmless", harmless},   {"unlabeled", unlabeled},
          {"categories", categories}};
}

int cmd_ingest(const Globals& g, const std::string& input, const std::string& split_name,
               const std::string& output, std::ostream& out) {
  std::vector<std::pair<std::filesystem::path, SplitTag>> inputs;
  if (!input.empty()) {
    inputs.emplace_back(input, split_name == "pool" ? SplitTag::Pool : SplitTag::Test);
  } else {
    const auto spec = load_spec(g);
    inputs.emplace_back(spec.pool_path, SplitTag::Pool);
    inputs.emplace_back(spec.test_path, SplitTag::Test);
  }
  std::vector<Corpus> corpora;
  for (const auto& [path, split] : inputs) {
    corpora.push_back(load_split(path, split));
    const auto& c = corpora.back();
    if (g.lines()) out << corpus_summary(c, path.string()).dump() << '\n';
    else out << path.string() << ": " << label_counts(c) << '\n';
  }
  if (corpora.size() == 2) check_no_leakage(corpora[0], corpora[1]);
  if (!output.empty()) {
    if (corpora.size() != 1) throw Exit{kInvalidInput, "--output needs a single --input"};
    save_corpus(corpora.front(), output);
  }
  return kOk;
}

int cmd_stats(const Globals& g, const std::string& input, int ngram, std::size_t top,
              std::ostream& out) {
  std::filesystem::path path = input;
  int n = ngram;
  if (path.empty()) {
    const auto spec = load_spec(g);
    path = spec.pool_path;
    if (n <= 0) n = spec.ngram_size;
  }
  if (n <= 0) n = 4;
  const auto pool = load_split(path, SplitTag::Pool);
  const auto stats = build_corpus_stats(pool, n);
  std::vector<std::pair<std::string, std::size_t>> df(stats.doc_freq.begin(), stats.doc_freq.end());
  std::sort(df.begin(), df.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (df.size() > top) df.resize(top);
  if (g.lines()) {
    nlohmann::json top_json = nlohmann::json::array();
    for (const auto& [gram, count] : df) top_json.push_back({{"ngram", gram}, {"doc_freq", count}});
    out << nlohmann::json{{"doc_count", stats.doc_count},
                          {"avg_doc_len", stats.avg_doc_len},
                          {"ngram_size", stats.ngram_size},
                          {"vocabulary", stats.doc_freq.size()},
                          {"top", top_json}}
               .dump()
        << '\n';
  } else {
    out << "doc_count    " << stats.doc_count << '\n'
        << "avg_doc_len  " << stats.avg_doc_len << '\n'
        << "ngram_size   " << stats.ngram_size << '\n'
        << "vocabulary   " << stats.doc_freq.size() << '\n';
    for (const auto& [gram, count] : df) out << "  " << std::setw(6) << count << "  " << gram << '\n';
  }
  return kOk;
}

int cmd_embed(const Globals& g, const Hooks& hooks, std::ostream& out) {
  const auto spec = load_spec(g);
  const auto pool = load_split(spec.pool_path, SplitTag::Pool);
  const auto test = load_split(spec.test_path, SplitTag::Test);
  auto store = make_store(spec, hooks);
  std::vector<ContentSample> all(pool.samples());
  all.insert(all.end(), test.samples().begin(), test.samples().end());

  if (g.dry_run) {
    // Count what is missing without touching the provider.
    EmbeddingStore offline;
    if (spec.sentence_cache) offline.load_sentence_cache(*spec.sentence_cache);
    if (spec.token_cache) offline.load_token_cache(*spec.token_cache);
    std::size_t missing_sentence = 0, missing_tokens = 0;
    for (const auto& s : all) {
      try { offline.sentence(s); } catch (const EmbeddingError&) { ++missing_sentence; }
      try { offline.token_matrix(s); } catch (const EmbeddingError&) { ++missing_tokens; }
    }
    if (g.lines())
      out << nlohmann::json{{"samples", all.size()}, {"missing_sentence", missing_sentence},
                            {"missing_tokens", missing_tokens}}.dump() << '\n';
    else
      out << "samples " << all.size() << ", missing sentence vectors " << missing_sentence
          << ", missing token matrices " << missing_tokens << '\n';
    return kOk;
  }
  if (!store->has_provider()) throw Exit{kInvalidInput, "embed needs embeddings.provider in the spec"};
  try {
    store->prefetch_sentences(all);
    store->prefetch_tokens(all);
  } catch (const GatewayError& e) {
    throw Exit{kUnreachable, e.what()};
  }
  const auto sentence_path = spec.sentence_cache.value_or(spec.out_dir / "sentence_cache.jsonl");
  const auto token_path = spec.token_cache.value_or(spec.out_dir / "token_cache.jsonl");
  store->save_sentence_cache(sentence_path);
  store->save_token_cache(token_path);
  if (g.lines())
    out << nlohmann::json{{"sentence_cache", sentence_path.string()}, {"token_cache", token_path.string()},
                          {"sentence_vectors", store->sentence_count()}, {"token_matrices", store->token_count()},
                          {"network_calls", store->network_calls()}}.dump() << '\n';
  else
    out << "wrote " << store->sentence_count() << " sentence vectors to " << sentence_path.string()
        << " and " << store->token_count() << " token matrices to " << token_path.string() << '\n';
  return kOk;
}

struct SelectArgs {
  std::string sample_id;
  int k = 8;
  std::string selector = "BSR";
  std::string mode = "GreedyCoverage";
  bool balanced = false;
  bool raw_order = false;
};

int cmd_select(const Globals& g, const SelectArgs& a, const Hooks& hooks, std::ostream& out,
               std::ostream& err) {
  const auto spec = load_spec(g);
  const auto pool = load_split(spec.pool_path, SplitTag::Pool);
  const auto test = load_split(spec.test_path, SplitTag::Test);
  const ContentSample* query = test.find(a.sample_id);
  if (!query) throw Exit{kInvalidInput, "unknown sample id \"" + a.sample_id + "\""};

  SelectionConfig cfg;
  const auto selector = parse_selector_kind(a.selector);
  const auto mode = parse_selection_mode(a.mode);
  if (!selector) throw Exit{kInvalidInput, "unknown selector \"" + a.selector + "\""};
  if (!mode) throw Exit{kInvalidInput, "unknown mode \"" + a.mode + "\""};
  cfg.selector = *selector;
  cfg.mode = *mode;
  cfg.k = a.k;
  cfg.ngram_size = spec.ngram_size;
  cfg.bm25_k1 = spec.bm25_k1;
  cfg.bm25_b = spec.bm25_b;
  cfg.bm25_coverage = spec.bm25_coverage;
  cfg.balanced = a.balanced;
  cfg.reorder = !a.raw_order;
  try {
    cfg.validate();
  } catch (const SelectionError& e) {
    throw Exit{kInvalidInput, e.what()};
  }

  auto store = make_store(spec, hooks);
  std::optional<CorpusStats> stats;
  if (cfg.selector == SelectorKind::BM25) stats = build_corpus_stats(pool, cfg.ngram_size);
  const SelectorDeps deps{stats ? &*stats : nullptr, store.get()};
  SelectionResult result;
  try {
    result = select_exemplars(*query, pool, cfg, deps);
  } catch (const EmbeddingError& e) {
    throw Exit{kInvalidInput, e.what()};
  } catch (const GatewayError& e) {
    throw Exit{kUnreachable, e.what()};
  }

  if (result.short_set)
    err << "warning: pool has " << result.exemplars.size() << " eligible candidates, fewer than k=" << a.k << '\n';
  if (result.imbalanced) err << "warning: class supply too small for a balanced set\n";

  if (g.lines()) {
    out << selection_to_json(*query, result).dump() << '\n';
    return kOk;
  }
  std::map<std::string, const Exemplar*> by_id;
  for (const auto& e : result.exemplars.items) by_id[e.sample.id] = &e;
  out << "# query " << query->id << ": " << query->title << '\n';
  out << "# selector " << to_string(cfg.selector) << ", mode " << to_string(cfg.effective_mode())
      << ", k " << cfg.k << '\n';
  for (std::size_t i = 0; i < result.steps.size(); ++i) {
    const auto& step = result.steps[i];
    const auto* e = by_id.at(step.id);
    out << i + 1 << '\t' << step.id << '\t' << to_string(e->label) << "\tscore=" << std::fixed
        << std::setprecision(6) << e->instance_score << "\tgain=" << step.gain << "\tcovered=[";
    for (std::size_t u = 0; u < step.newly_covered.size(); ++u)
      out << (u ? ", " : "") << result.query_units[step.newly_covered[u]];
    out << "]\n";
  }
  out << "# prompt order:";
  for (const auto& e : result.exemplars.items) out << ' ' << e.sample.id;
  out << '\n';
  return kOk;
}

void print_reports(const Globals& g, const std::vector<RunReport>& reports, std::ostream& out) {
  if (g.lines()) {
    for (const auto& r : reports)
      out << nlohmann::json{{"run", r.run_name}, {"metrics", metrics_to_json(r.metrics)}}.dump() << '\n';
  } else {
    out << comparison_table(reports);
  }
}

int cmd_run(const Globals& g, const Hooks& hooks, std::ostream& out, std::ostream& err) {
  const auto spec = load_spec(g);
  const auto configs = spec.expand_grid();

  if (g.dry_run) {
    for (const auto& c : configs) {
      if (g.lines()) out << nlohmann::json{{"run", c.name()}, {"config", c.to_json()}}.dump() << '\n';
      else out << c.name() << '\n';
    }
    if (!g.lines()) out << configs.size() << " runs\n";
    return kOk;
  }

  const auto pool = load_split(spec.pool_path, SplitTag::Pool);
  const auto test = load_split(spec.test_path, SplitTag::Test);
  check_no_leakage(pool, test);
  auto store = make_store(spec, hooks);

  std::ofstream transcript_file;
  std::unique_ptr<TranscriptLog> transcript;
  if (spec.transcript) {
    std::filesystem::create_directories(spec.transcript->parent_path());
    transcript_file.open(*spec.transcript, std::ios::app);
    if (!transcript_file) throw Exit{kFailure, "cannot open transcript " + spec.transcript->string()};
    transcript = std::make_unique<TranscriptLog>(&transcript_file);
  }

  ModelGateway gateway(hooks.transport_factory);
  gateway.set_transcript(transcript.get());
  std::unique_ptr<CaptionClient> captioner;
  if (spec.captioner) {
    captioner = std::make_unique<CaptionClient>(*spec.captioner, hooks.transport_factory);
    captioner->set_transcript(transcript.get());
  }
  std::unique_ptr<ModerationClient> moderation;
  if (spec.moderation) {
    moderation = std::make_unique<ModerationClient>(spec.moderation->service, spec.moderation->provider,
                                                    hooks.transport_factory);
    moderation->set_mock_keywords(spec.moderation->mock_keywords);
    moderation->set_transcript(transcript.get());
  }

  // Required services must answer before any run starts.
  std::set<std::string> probed;
  for (const auto& c : configs) {
    if (c.approach == RunApproach::ModerationBaseline) {
      const auto& svc = spec.moderation->service;
      if (!svc.is_mock() && probed.insert("moderation").second &&
          !hooks.transport_factory(svc.endpoint)->reachable())
        throw Exit{kUnreachable, "moderation service unreachable: " + svc.endpoint.base_url};
      continue;
    }
    if (probed.insert("model:" + c.model.name).second && !gateway.reachable(c.model))
      throw Exit{kUnreachable, "model service unreachable: " + c.model.endpoint.base_url};
    if ((c.approach == RunApproach::FS_ICL_CG || c.approach == RunApproach::FS_ICL_DII) && spec.captioner &&
        !spec.captioner->is_mock() && probed.insert("captioner").second &&
        !hooks.transport_factory(spec.captioner->endpoint)->reachable())
      throw Exit{kUnreachable, "caption service unreachable: " + spec.captioner->endpoint.base_url};
  }
  if (store->has_provider()) {
    std::vector<ContentSample> all(pool.samples());
    all.insert(all.end(), test.samples().begin(), test.samples().end());
    try {
      bool sentences = false, tokens = false;
      for (const auto& c : configs) {
        if (c.selection.k == 0 || c.approach == RunApproach::ModerationBaseline) continue;
        sentences |= c.selection.selector == SelectorKind::Cosine;
        tokens |= c.selection.selector == SelectorKind::BSR;
      }
      if (sentences) store->prefetch_sentences(all);
      if (tokens) store->prefetch_tokens(all);
    } catch (const GatewayError& e) {
      throw Exit{kUnreachable, e.what()};
    }
  }

  std::map<int, CorpusStats> stats;
  std::vector<RunReport> reports;
  bool all_ok = true;
  for (const auto& c : configs) {
    auto [it, _] = stats.try_emplace(c.selection.ngram_size, build_corpus_stats(pool, c.selection.ngram_size));
    RunDeps deps{&gateway, store.get(), &it->second, captioner.get(), moderation.get()};
    try {
      auto report = run_experiment(pool, test, c, deps);
      emit_report(report, spec.out_dir / report.run_name);
      if (!g.lines()) err << "finished " << report.run_name << " accuracy=" << report.metrics.accuracy << '\n';
      reports.push_back(std::move(report));
    } catch (const std::exception& e) {
      all_ok = false;
      err << "run " << c.name() << " failed: " << e.what() << '\n';
    }
  }
  write_file(spec.out_dir / "comparison.txt", comparison_table(reports));
  write_file(spec.out_dir / "comparison.tsv", comparison_tsv(reports));
  print_reports(g, reports, out);
  return all_ok ? kOk : kFailure;
}

std::vector<RunReport> load_reports(const std::vector<std::string>& dirs) {
  std::vector<RunReport> reports;
  for (const auto& d : dirs) {
    try {
      reports.push_back(load_report(d));
    } catch (const std::exception& e) {
      throw Exit{kInvalidInput, "cannot load report " + d + ": " + e.what()};
    }
  }
  return reports;
}

int cmd_report(const Globals& g, const std::string& dir, std::ostream& out) {
  const auto reports = load_reports({dir});
  const auto& r = reports.front();
  if (g.lines()) {
    out << nlohmann::json{{"run", r.run_name}, {"metrics", metrics_to_json(r.metrics)},
                          {"template_version", r.template_version}}.dump() << '\n';
    for (const auto& p : r.predictions) out << prediction_to_json(p).dump() << '\n';
    return kOk;
  }
  out << comparison_table(reports);
  const auto& m = r.metrics;
  out << "\nconfusion (positive = Harmful): tp=" << m.tp << " fp=" << m.fp << " fn=" << m.fn
      << " tn=" << m.tn << " unparseable=" << m.unparseable << '\n';
  return kOk;
}

int cmd_compare(const Globals& g, const std::vector<std::string>& dirs, const std::string& tsv_out,
                std::ostream& out) {
  const auto reports = load_reports(dirs);
  print_reports(g, reports, out);
  if (!tsv_out.empty()) write_file(tsv_out, comparison_tsv(reports));
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const Hooks& hooks) {
  CLI::App app{"In-context harmful-content classification experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--spec", g.spec, "Experiment spec (JSON)");
  app.add_option("--out-dir", g.out_dir, "Override the spec's output directory");
  app.add_flag("--dry-run", g.dry_run, "Plan only; make no network calls");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"table", "lines"}));
  app.add_option("--parallelism", g.parallelism, "Concurrent test samples")->check(CLI::PositiveNumber);
  app.set_version_flag("--version", kArtifactVersion);

  std::string input, split = "pool", output;
  auto* ingest = app.add_subcommand("ingest", "Validate corpora");
  ingest->add_option("--input", input, "Single dataset file (default: spec pool and test)");
  ingest->add_option("--split", split, "Split of --input")->check(CLI::IsMember({"pool", "test"}));
  ingest->add_option("--output", output, "Write the validated corpus back out");

  int ngram = 0;
  std::size_t top = 10;
  auto* stats = app.add_subcommand("stats", "Pool n-gram statistics");
  stats->add_option("--input", input, "Pool file (default: spec pool)");
  stats->add_option("--ngram", ngram, "n-gram size (default: spec or 4)");
  stats->add_option("--top", top, "Most frequent n-grams to list");

  auto* embed = app.add_subcommand("embed", "Fill embedding caches from the provider");

  SelectArgs sel;
  auto* select = app.add_subcommand("select", "Show exemplar selection for one test sample");
  select->add_option("--sample-id", sel.sample_id, "Test sample id")->required();
  select->add_option("--k", sel.k, "Shot count")->required()->check(CLI::NonNegativeNumber);
  select->add_option("--selector", sel.selector, "Cosine, BM25 or BSR")->required();
  select->add_option("--mode", sel.mode, "GreedyCoverage or InstanceTopK");
  select->add_flag("--balanced", sel.balanced, "Cap each class at ceil(k/2)");
  select->add_flag("--raw-order", sel.raw_order, "Keep selection order instead of ascending score");

  auto* run = app.add_subcommand("run", "Run the experiment grid");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize one report directory");
  report->add_option("dir", report_dir, "Report directory")->required();

  std::vector<std::string> compare_dirs;
  std::string tsv_out;
  auto* compare = app.add_subcommand("compare", "Compare report directories");
  compare->add_option("dirs", compare_dirs, "Report directories")->required();
  compare->add_option("--tsv", tsv_out, "Also write the table as TSV");

  for (auto* sub : {ingest, stats, embed, select, run, report, compare}) sub->fallthrough();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalidInput;
  }

  try {
    if (*ingest) return cmd_ingest(g, input, split, output, out);
    if (*stats) return cmd_stats(g, input, ngram, top, out);
    if (*embed) return cmd_embed(g, hooks, out);
    if (*select) return cmd_select(g, sel, hooks, out, err);
    if (*run) return cmd_run(g, hooks, out, err);
    if (*report) return cmd_report(g, report_dir, out);
    if (*compare) return cmd_compare(g, compare_dirs, tsv_out, out);
  } catch (const Exit& e) {
    err << "error: " << e.message << '\n';
    return e.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kInvalidInput;
}

}  // namespace harmicl::cli
