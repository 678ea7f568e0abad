// Command-line front end: build-data, train, eval, nonce, report.

#include <cstdio>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "pasttense/run.hpp"

namespace pt = pasttense;

namespace {

// The tape allocates and frees many mid-sized buffers per step; keeping them
// on the heap instead of round-tripping through mmap is roughly 1.5x faster.
void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 0x7fffffff);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

void error_line(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

// Flat key=value files name train options directly.  CLI11 only reads config
// files on the root app, so every unsectioned key is routed to "train".
class TrainConfig : public CLI::ConfigBase {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigBase::from_config(input);
    for (auto& item : items)
      if (item.parents.empty()) item.parents = {"train"};
    return items;
  }
};

struct RunOptions {
  pt::RunConfig cfg;
  std::string dataset = "type_irr", scheme = "base", resample = "none";
  std::string out;
  bool reuse = false, quiet = false;

  void add_to(CLI::App* app) {
    app->add_option("--name", cfg.name, "Run name (default: derived from dataset/scheme/copy/resample)");
    app->add_option("--lexicon", cfg.lexicon, "Lexicon TSV")->capture_default_str();
    app->add_option("--test-set,--test_set", cfg.test_set, "Held-out test verb list")->capture_default_str();
    app->add_option("--nonce", cfg.nonce, "Nonce verb TSV")->capture_default_str();
    app->add_option("--dataset", dataset, "type_reg | type_irr | token_both | token_irr")->capture_default_str();
    app->add_option("--scheme", scheme, "base | label_reg | label_vc | label_2")->capture_default_str();
    app->add_flag("--copy,--use_copy", cfg.use_copy, "Enable the copy (pointer) head");
    app->add_option("--resample", resample, "none | balance | reg_ds | irreg_ds")->capture_default_str();
    app->add_option("--seeds", cfg.seeds, "Seeds")->capture_default_str();
    app->add_option("--epochs", cfg.epochs, "Epochs (0: 30, or 100 when resampling)");
    app->add_option("--batch-size,--batch_size", cfg.batch_size, "Batch size (0: by dataset)");
    app->add_option("--dev-fraction,--dev_fraction", cfg.dev_fraction, "Dev fraction (0: 0.1, or 0.2 when resampling)");
    app->add_option("--warmup-steps,--warmup_steps", cfg.warmup_steps, "Warmup steps (0: 400, or 4000 when resampling)");
    app->add_option("--beam-size,--beam_size", cfg.decode.beam_size)->capture_default_str();
    app->add_option("--top-k,--k", cfg.decode.k)->capture_default_str();
    app->add_option("--n-samples,--n_samples", cfg.decode.n_samples)->capture_default_str();
    app->add_option("--max-len,--max_len", cfg.decode.max_len, "Decode length cap (0: longest target + 6)");
    app->add_option("--layers-enc,--n_layers_enc", cfg.model.n_layers_enc)->capture_default_str();
    app->add_option("--layers-dec,--n_layers_dec", cfg.model.n_layers_dec)->capture_default_str();
    app->add_option("--heads,--n_heads", cfg.model.n_heads)->capture_default_str();
    app->add_option("--d-model,--d_model", cfg.model.d_model)->capture_default_str();
    app->add_option("--d-ff,--d_ff", cfg.model.d_ff)->capture_default_str();
    app->add_option("--dropout", cfg.model.dropout)->capture_default_str();
    app->add_option("--out", out, "Output root (default: $PASTTENSE_OUT or ./runs)");
    app->add_flag("--reuse", reuse, "Keep finished runs/seeds whose config and inputs match");
    app->add_flag("--quiet", quiet, "No progress output");
  }

  pt::RunConfig resolve() {
    cfg.dataset = pt::parse_enum<pt::DatasetKind>(dataset, "dataset");
    cfg.scheme = pt::parse_enum<pt::LabelScheme>(scheme, "scheme");
    cfg.resample = pt::parse_enum<pt::ResampleMethod>(resample, "resample method");
    return cfg.resolved();
  }
};

std::string pct(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.1f", v);
  return b;
}

void print_accuracy(const pt::AccuracyTable& t, const char* title) {
  std::cout << title << " (" << t.model_id << ")\n";
  for (auto& r : t.rows) {
    std::cout << "  " << r.group << " n=" << r.items << " mean=" << pct(r.mean()) << " per-seed=";
    for (std::size_t i = 0; i < r.per_seed.size(); ++i) std::cout << (i ? "," : "") << pct(r.per_seed[i]);
    std::cout << '\n';
  }
}

int cmd_build_data(const std::string& lexicon, const std::string& test_set, double dev_fraction, int seed, const std::string& out) {
  auto entries = pt::load_lexicon(lexicon);
  auto [test, rest] = pt::partition_test(entries, pt::load_test_set(test_set));
  const auto ls = pt::lexicon_stats(entries);
  std::ostringstream os;
  os << "section,name,total,regular,irregular,irregular_pct\n";
  os << "lexicon,all," << ls.entries << ',' << ls.regular << ',' << ls.irregular << ",\n";
  os << "lexicon,ambiguous," << ls.ambiguous << ",,,\n";
  for (auto& [c, n] : ls.classes) os << "class," << pt::class_token(c) << ',' << n << ",,,\n";
  os << "test,held_out," << test.size() << ",,,\n";
  for (auto& r : pt::dataset_stats(rest))
    os << "dataset," << r.name << ',' << r.total << ',' << r.regular << ',' << r.irregular << ',' << pct(r.irregular_pct()) << '\n';
  for (auto& r : pt::resample_stats(rest, dev_fraction, seed))
    os << "resample," << r.name << ',' << r.total << ',' << r.regular << ',' << r.irregular << ',' << pct(r.irregular_pct()) << '\n';
  std::cout << os.str();
  if (!out.empty()) pt::write_file(out, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Transformer past-tense inflection experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<TrainConfig>());
  app.set_config("--config", "", "key=value file of train options (train only)");

  auto* build = app.add_subcommand("build-data", "Lexicon, dataset and resampling statistics");
  std::string b_lexicon = "data/lexicon.tsv", b_test = "data/test_verbs.txt", b_out;
  double b_dev = 0.2;
  int b_seed = 1;
  build->add_option("--lexicon", b_lexicon)->capture_default_str();
  build->add_option("--test-set,--test_set", b_test)->capture_default_str();
  build->add_option("--dev-fraction,--dev_fraction", b_dev, "Dev fraction for the resampling split")->capture_default_str();
  build->add_option("--seed", b_seed, "Split/resampling seed")->capture_default_str();
  build->add_option("--out", b_out, "Also write the statistics CSV here");

  auto* train = app.add_subcommand("train", "Train every seed of one configuration");
  RunOptions ropt;
  ropt.add_to(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a trained run on the test verbs");
  std::string e_run;
  eval->add_option("--run", e_run, "Run directory")->required();

  auto* nonce = app.add_subcommand("nonce", "Nonce-verb production profiles and correlations");
  std::string n_run, n_file;
  nonce->add_option("--run", n_run, "Run directory")->required();
  nonce->add_option("--nonce", n_file, "Nonce TSV (default: the run's)");

  auto* report = app.add_subcommand("report", "Aggregate evaluated runs");
  std::vector<std::string> r_runs;
  std::string r_out;
  report->add_option("--run", r_runs, "Run directories")->required();
  report->add_option("--out", r_out, "Report directory (default: <output root>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("usage", e.what());
    return 2;
  }

  try {
    if (*build) return cmd_build_data(b_lexicon, b_test, b_dev, b_seed, b_out);
    if (*train) {
      const pt::RunConfig cfg = ropt.resolve();
      auto res = pt::run_train(cfg, ropt.out, ropt.reuse, ropt.quiet ? nullptr : &std::cerr);
      std::cout << nlohmann::json{{"run_dir", res.run_dir}, {"reused", res.reused}}.dump() << std::endl;
      return 0;
    }
    if (*eval) {
      auto r = pt::run_eval(e_run, &std::cerr);
      print_accuracy(r.by_regularity, "accuracy by regularity");
      if (r.forced_regularity) print_accuracy(*r.forced_regularity, "gold-label forced accuracy by regularity");
      return 0;
    }
    if (*nonce) {
      auto r = pt::run_nonce(n_run, n_file, &std::cerr);
      std::ostringstream os;
      pt::write_correlation_csv(os, {r.report});
      std::cout << os.str();
      return 0;
    }
    if (*report) {
      pt::run_report(r_runs, r_out.empty() ? pt::output_root() + "/report" : r_out);
      return 0;
    }
  } catch (const pt::Error& e) {
    error_line(e.kind(), e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    error_line("load", e.what());
    return 1;
  } catch (const std::exception& e) {
    error_line("internal", e.what());
    return 1;
  }
  return 0;
}
