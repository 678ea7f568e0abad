// End-to-end checks of the pasttense executable on a reduced lexicon and a
// tiny model.  PASTTENSE_CLI names the binary under test.

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"
#include "pasttense/run.hpp"

using namespace pasttense;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string cli() {
  const char* p = std::getenv("PASTTENSE_CLI");
  return p ? p : std::string(PASTTENSE_SOURCE_DIR) + "/build/pasttense";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("pasttense_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = "\"" + cli() + "\" " + args + " 2>\"" + err.string() + "\"";
  Result r;
  FILE* f = ::popen(cmd.c_str(), "r");
  if (!f) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) r.out.append(buf, n);
  const int status = ::pclose(f);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

nlohmann::json last_error(const Result& r) {
  std::istringstream in(r.err);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return nlohmann::json::parse(last);
}

std::string data_path(const std::string& rel) { return std::string(PASTTENSE_SOURCE_DIR) + "/" + rel; }

// The first ~300 lexicon lines (whole lemmas) plus every test verb.
const std::string& small_lexicon() {
  static const std::string path = [] {
    std::set<std::string> test;
    for (auto& l : load_test_set(data_path("data/test_verbs.txt"))) test.insert(l);
    std::ifstream in(data_path("data/lexicon.tsv"));
    std::string line, last;
    std::ostringstream out;
    std::getline(in, line);
    out << line << '\n';
    for (std::size_t i = 0; std::getline(in, line); ++i) {
      const std::string lemma = line.substr(0, line.find('\t'));
      if (i < 300 || lemma == last || test.count(lemma)) {
        out << line << '\n';
        if (i < 300) last = lemma;
      }
    }
    const fs::path p = scratch() / "lexicon_small.tsv";
    std::ofstream(p) << out.str();
    return p.string();
  }();
  return path;
}

std::string tiny_args(const std::string& scheme) {
  return "--lexicon " + small_lexicon() + " --test-set " + data_path("data/test_verbs.txt") + " --nonce " +
         data_path("data/nonce_standin.tsv") + " --dataset type_irr --scheme " + scheme +
         " --d-model 16 --d-ff 32 --heads 2 --layers-enc 1 --layers-dec 1 --epochs 2 --batch-size 32 --warmup-steps 20"
         " --seeds 1 2 --quiet";
}

// One label_2 run trained, evaluated, sampled and reported, shared by tests.
struct Trained {
  fs::path root, run_dir;
  Result train, eval, nonce, report;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained x;
    x.root = scratch() / "runs_a";
    x.train = run("train " + tiny_args("label_2") + " --name tiny --out " + x.root.string());
    x.run_dir = x.root / "tiny";
    x.eval = run("eval --run " + x.run_dir.string());
    x.nonce = run("nonce --run " + x.run_dir.string());
    x.report = run("report --run " + x.run_dir.string() + " --out " + (x.root / "report").string());
    return x;
  }();
  return t;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwoWithJsonLine) {
  for (const char* args : {"", "frobnicate", "train --epochs notanumber", "eval"}) {
    const Result r = run(args);
    EXPECT_EQ(r.code, 2) << args;
    const auto j = last_error(r);
    EXPECT_EQ(j.at("error"), "usage") << args;
    EXPECT_FALSE(j.at("message").get<std::string>().empty());
  }
}

TEST(Cli, RuntimeErrorsExitOneWithKind) {
  Result r = run("build-data --lexicon /nonexistent/lexicon.tsv");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(last_error(r).at("error"), "data");
  r = run("eval --run " + (scratch() / "no_such_run").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(last_error(r).at("error"), "load");
  r = run("train --scheme label_9 --quiet --out " + (scratch() / "bad").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(last_error(r).at("error"), "config");
  r = run("train --heads 3 --quiet --out " + (scratch() / "bad").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(last_error(r).at("error"), "config");
}

TEST(Cli, BuildDataStatistics) {
  const fs::path out = scratch() / "stats.csv";
  const Result r = run("build-data --lexicon " + data_path("data/lexicon.tsv") + " --test-set " + data_path("data/test_verbs.txt") +
                       " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(out), r.out);
  for (const char* want : {"lexicon,all,4039,", "lexicon,ambiguous,32", "test,held_out,80", "dataset,type_reg,3959,",
                           "dataset,type_irr,3959,", "dataset,token_irr,", "dataset,token_both,", "resample,balance,258,129,129,",
                           "resample,irreg_ds,412,283,129,", "resample,reg_ds,177,48,129,"})
    EXPECT_NE(r.out.find(want), std::string::npos) << want;
}

TEST(Cli, TrainWritesManifestAndCheckpoints) {
  const auto& t = trained();
  ASSERT_EQ(t.train.code, 0) << t.train.err;
  const auto out = nlohmann::json::parse(t.train.out);
  EXPECT_EQ(out.at("reused"), false);
  const auto m = nlohmann::json::parse(slurp(t.run_dir / "manifest.json"));
  EXPECT_EQ(m.at("format"), "pasttense-run");
  EXPECT_EQ(m.at("config").at("scheme"), "label_2");
  EXPECT_EQ(m.at("config").at("epochs"), 2);
  EXPECT_EQ(m.at("seeds").size(), 2u);
  ModelConfig mc = RunConfig::from_json(m.at("config")).model;
  mc.vocab_size = m.at("vocab_size");
  mc.use_copy = false;
  EXPECT_EQ(m.at("parameter_count"), parameter_count(mc));
  for (auto& s : m.at("seeds")) {
    const fs::path ck = t.run_dir / s.at("checkpoint").get<std::string>();
    ASSERT_TRUE(fs::exists(ck));
    EXPECT_EQ(sha256_file(ck.string()), s.at("checkpoint_sha256"));
    EXPECT_TRUE(fs::exists(t.run_dir / ("seed_" + std::to_string(s.at("seed").get<int>())) / "train_log.tsv"));
  }
  EXPECT_TRUE(m.at("timing").contains("seed_cpu_seconds"));
}

TEST(Cli, EvalWritesTables) {
  const auto& t = trained();
  ASSERT_EQ(t.eval.code, 0) << t.eval.err;
  for (const char* f : {"predictions_seed_1.tsv", "predictions_seed_2.tsv", "accuracy_regularity.csv", "accuracy_class.csv",
                        "errors.csv", "error_summary.csv", "label_accuracy.csv", "forced_accuracy_regularity.csv",
                        "forced_accuracy_class.csv"})
    EXPECT_TRUE(fs::exists(t.run_dir / "eval" / f)) << f;
  const auto acc = read_accuracy_csv((t.run_dir / "eval" / "accuracy_regularity.csv").string());
  ASSERT_EQ(acc.size(), 1u);
  EXPECT_EQ(acc[0].rows[0].group, "reg");
  EXPECT_EQ(acc[0].rows[0].items, 60u);
  EXPECT_EQ(acc[0].rows[1].items, 20u);
  EXPECT_EQ(acc[0].rows[0].per_seed.size(), 2u);
  // Beam and forced passes: one line per test verb and strategy.
  const std::string preds = slurp(t.run_dir / "eval" / "predictions_seed_1.tsv");
  EXPECT_EQ(std::count(preds.begin(), preds.end(), '\n'), 1 + 80 + 80);
  EXPECT_NE(preds.find("\tforced\t"), std::string::npos);
}

TEST(Cli, NonceProfilesAndCorrelations) {
  const auto& t = trained();
  ASSERT_EQ(t.nonce.code, 0) << t.nonce.err;
  const auto rows = read_csv((t.run_dir / "nonce" / "profiles.csv").string());
  ASSERT_EQ(rows.size(), 58u);
  for (auto& r : rows) EXPECT_EQ(r.at("n"), "10");  // 2 seeds x 5 samples
  const auto cors = read_correlation_csv((t.run_dir / "nonce" / "correlations.csv").string());
  ASSERT_EQ(cors.size(), 1u);
  EXPECT_EQ(cors[0].row("regular").n_r, 58u);
  EXPECT_EQ(cors[0].row("irregular2").n_r, 16u);
  EXPECT_EQ(read_csv((t.run_dir / "nonce" / "figure.csv").string()).size(), 58u);
}

TEST(Cli, ReportAggregates) {
  const auto& t = trained();
  ASSERT_EQ(t.report.code, 0) << t.report.err;
  for (const char* f : {"accuracy_regularity.csv", "accuracy_class.csv", "error_summary.csv", "correlation_summary.csv",
                        "frequency_effects.csv"})
    EXPECT_TRUE(fs::exists(t.root / "report" / f)) << f;
  EXPECT_EQ(read_csv((t.root / "report" / "correlation_summary.csv").string()).size(), 6u);
}

TEST(Cli, ReuseKeepsFinishedRun) {
  const auto& t = trained();
  ASSERT_EQ(t.train.code, 0);
  const std::string before = slurp(t.run_dir / "manifest.json");
  const Result r = run("train " + tiny_args("label_2") + " --name tiny --reuse --out " + t.root.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out).at("reused"), true);
  EXPECT_EQ(slurp(t.run_dir / "manifest.json"), before);
}

// Same configuration under a different output root: byte-identical
// checkpoints and predictions.
TEST(Cli, TrainingIsDeterministic) {
  const auto& t = trained();
  ASSERT_EQ(t.eval.code, 0);
  const fs::path root = scratch() / "runs_deeper_path_b";
  const Result tr = run("train " + tiny_args("label_2") + " --name tiny --out " + root.string());
  ASSERT_EQ(tr.code, 0) << tr.err;
  ASSERT_EQ(run("eval --run " + (root / "tiny").string()).code, 0);
  for (const char* f : {"seed_1/best.ckpt", "seed_2/best.ckpt", "seed_1/train_log.tsv", "eval/predictions_seed_1.tsv",
                        "eval/predictions_seed_2.tsv", "eval/accuracy_regularity.csv", "eval/errors.csv"})
    EXPECT_EQ(slurp(root / "tiny" / f), slurp(t.run_dir / f)) << f;
}

TEST(Cli, ConfigFile) {
  const fs::path cfg = scratch() / "run.ini";
  std::ofstream(cfg) << "lexicon=" << small_lexicon() << "\ntest-set=" << data_path("data/test_verbs.txt")
                     << "\ndataset=type_irr\nscheme=base\nepochs=1\nd-model=16\nd-ff=32\nheads=2\nlayers-enc=1\nlayers-dec=1\n"
                        "seeds=[3]\nbatch-size=64\n";
  const fs::path root = scratch() / "runs_cfg";
  const Result r = run("train --config " + cfg.string() + " --quiet --out " + root.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto dir = nlohmann::json::parse(r.out).at("run_dir").get<std::string>();
  EXPECT_EQ(fs::path(dir).filename(), "type_irr-base-van");
  const auto m = nlohmann::json::parse(slurp(fs::path(dir) / "manifest.json"));
  EXPECT_EQ(m.at("config").at("epochs"), 1);
  EXPECT_EQ(m.at("config").at("batch_size"), 64);
  EXPECT_EQ(m.at("config").at("seeds"), nlohmann::json::array({3}));
  EXPECT_EQ(m.at("config").at("model").at("d_model"), 16);
  EXPECT_EQ(m.at("config").at("warmup_steps"), 400);
}

TEST(RunConfig, ResampledRunsGetTheirOwnDefaults) {
  RunConfig c;
  const RunConfig plain = c.resolved();
  EXPECT_EQ(plain.epochs, 30);
  EXPECT_EQ(plain.batch_size, 32);
  EXPECT_DOUBLE_EQ(plain.dev_fraction, 0.1);
  EXPECT_EQ(plain.warmup_steps, 400);
  c.resample = ResampleMethod::balance;
  const RunConfig rs = c.resolved();
  EXPECT_EQ(rs.epochs, 100);
  EXPECT_EQ(rs.batch_size, 8);
  EXPECT_DOUBLE_EQ(rs.dev_fraction, 0.2);
  EXPECT_EQ(rs.warmup_steps, 4000);
  EXPECT_EQ(rs.name, "type_irr-base-van-balance");
  c.warmup_steps = 50;
  EXPECT_EQ(c.resolved().warmup_steps, 50);
}

// Gold predictions score 100 in every cell and produce no error records.
TEST(Eval, PerfectPredictionsScoreHundred) {
  const auto test = partition_test(load_lexicon(data_path("data/lexicon.tsv")), load_test_set(data_path("data/test_verbs.txt"))).first;
  std::map<int, std::vector<Prediction>> preds;
  for (int seed : {1, 2, 3})
    for (auto& v : test) {
      Prediction p;
      p.verb = &v;
      p.predicted = v.report_past().form;
      for (auto& l : label_tokens_for(v.report_past(), LabelScheme::label_2)) p.labels.push_back(l);
      p.seed = seed;
      preds[seed].push_back(p);
    }
  const EvalResult r = evaluate_predictions("gold", preds, test, LabelScheme::label_2);
  for (auto& row : r.by_regularity.rows) EXPECT_EQ(row.mean(), 100.0) << row.group;
  for (auto& row : r.by_class.rows) EXPECT_EQ(row.mean(), 100.0) << row.group;
  EXPECT_TRUE(r.errors.empty());
  EXPECT_TRUE(r.summary.empty());
  ASSERT_TRUE(r.labels.has_value());
  for (auto& row : *r.labels) EXPECT_EQ(row.mean(), 100.0);
  std::ostringstream os;
  write_errors_csv(os, r.errors);
  const std::string csv = os.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
}

TEST(Cli, Cleanup) {
  // Runs last: remove the scratch tree unless asked to keep it.
  if (!std::getenv("PASTTENSE_KEEP_SCRATCH")) fs::remove_all(scratch());
}
