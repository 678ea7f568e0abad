#pragma once

#include <chrono>
#include <ctime>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pasttense/checkpoint.hpp"
#include "pasttense/decode.hpp"
#include "pasttense/evalsuite.hpp"
#include "pasttense/io.hpp"
#include "pasttense/lexicon.hpp"
#include "pasttense/model.hpp"
#include "pasttense/noncelab.hpp"
#include "pasttense/optim.hpp"

namespace pasttense {

inline constexpr const char* kCodeVersion = "pasttense 1.0.0";
inline constexpr const char* kOutputRootEnv = "PASTTENSE_OUT";

inline std::string output_root(const std::string& explicit_dir = "") {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* e = std::getenv(kOutputRootEnv); e && *e) return e;
  return "runs";
}

// ---------------------------------------------------------------------------

struct RunConfig {
  std::string name;  // empty: derived from the experiment cell
  std::string lexicon = "data/lexicon.tsv";
  std::string test_set = "data/test_verbs.txt";
  std::string nonce = "data/nonce_standin.tsv";
  DatasetKind dataset = DatasetKind::type_irr;
  LabelScheme scheme = LabelScheme::base;
  bool use_copy = false;
  ResampleMethod resample = ResampleMethod::none;
  std::vector<int> seeds{1, 2, 3, 4, 5};
  int epochs = 0;             // 0: 30, or 100 when resampling
  int batch_size = 0;         // 0: 32 type-based, 64 token_irr, 128 token_both, 8 resampling
  double dev_fraction = 0.0;  // 0: 0.1, or 0.2 when resampling
  int warmup_steps = 0;       // 0: 400, or 4000 when resampling (batch 8 is unstable at the 400-step peak)
  DecodeConfig decode;
  ModelConfig model;  // vocab_size is filled from the data

  std::string cell_name() const {
    std::string n = to_string(dataset) + "-" + to_string(scheme) + "-" + (use_copy ? "copy" : "van");
    if (resample != ResampleMethod::none) n += "-" + to_string(resample);
    return n;
  }

  RunConfig resolved() const {
    RunConfig c = *this;
    if (c.name.empty()) c.name = cell_name();
    const bool rs = resample != ResampleMethod::none;
    if (c.epochs == 0) c.epochs = rs ? 100 : 30;
    if (c.batch_size == 0) {
      if (rs) c.batch_size = 8;
      else if (dataset == DatasetKind::token_irr) c.batch_size = 64;
      else if (dataset == DatasetKind::token_both) c.batch_size = 128;
      else c.batch_size = 32;
    }
    if (c.dev_fraction == 0.0) c.dev_fraction = rs ? 0.2 : 0.1;
    if (c.warmup_steps == 0) c.warmup_steps = rs ? 4000 : 400;
    c.model.use_copy = use_copy;
    return c;
  }

  void validate() const {
    if (seeds.empty()) throw ConfigError("config: at least one seed is required");
    if (std::set<int>(seeds.begin(), seeds.end()).size() != seeds.size()) throw ConfigError("config: duplicate seeds");
    if (epochs < 0 || batch_size < 0) throw ConfigError("config: epochs and batch_size must be positive");
    if (dev_fraction < 0.0 || dev_fraction >= 1.0) throw ConfigError("config: dev_fraction must lie in (0, 1)");
    if (warmup_steps < 0) throw ConfigError("config: warmup_steps must be positive");
    if (resample != ResampleMethod::none && dataset != DatasetKind::type_irr)
      throw ConfigError("config: resampling applies to the type_irr dataset");
    if (name.find('/') != std::string::npos) throw ConfigError("config: name must not contain '/'");
    decode.validate();
  }

  nlohmann::json to_json() const {
    return {{"name", name},
            {"lexicon", lexicon},
            {"test_set", test_set},
            {"nonce", nonce},
            {"dataset", to_string(dataset)},
            {"scheme", to_string(scheme)},
            {"use_copy", use_copy},
            {"resample", to_string(resample)},
            {"seeds", seeds},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"dev_fraction", dev_fraction},
            {"warmup_steps", warmup_steps},
            {"decode", {{"beam_size", decode.beam_size}, {"k", decode.k}, {"n_samples", decode.n_samples}, {"max_len", decode.max_len}}},
            {"model",
             {{"n_layers_enc", model.n_layers_enc},
              {"n_layers_dec", model.n_layers_dec},
              {"n_heads", model.n_heads},
              {"d_model", model.d_model},
              {"d_ff", model.d_ff},
              {"dropout", model.dropout},
              {"max_len", model.max_len}}}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      c.name = j.at("name");
      c.lexicon = j.at("lexicon");
      c.test_set = j.at("test_set");
      c.nonce = j.at("nonce");
      c.dataset = parse_enum<DatasetKind>(j.at("dataset"), "dataset");
      c.scheme = parse_enum<LabelScheme>(j.at("scheme"), "scheme");
      c.use_copy = j.at("use_copy");
      c.resample = parse_enum<ResampleMethod>(j.at("resample"), "resample method");
      c.seeds = j.at("seeds").get<std::vector<int>>();
      c.epochs = j.at("epochs");
      c.batch_size = j.at("batch_size");
      c.dev_fraction = j.at("dev_fraction");
      c.warmup_steps = j.at("warmup_steps");
      const auto& d = j.at("decode");
      c.decode.beam_size = d.at("beam_size");
      c.decode.k = d.at("k");
      c.decode.n_samples = d.at("n_samples");
      c.decode.max_len = d.at("max_len");
      const auto& m = j.at("model");
      c.model.n_layers_enc = m.at("n_layers_enc");
      c.model.n_layers_dec = m.at("n_layers_dec");
      c.model.n_heads = m.at("n_heads");
      c.model.d_model = m.at("d_model");
      c.model.d_ff = m.at("d_ff");
      c.model.dropout = m.at("dropout");
      c.model.max_len = m.at("max_len");
      c.model.use_copy = c.use_copy;
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: malformed run configuration: ") + e.what());
    }
    return c;
  }
};

// ---------------------------------------------------------------------------
// Data preparation shared by training, evaluation and the nonce harness.

struct RunData {
  std::vector<VerbEntry> lexicon, test, rest;
  Vocab vocab;
  TrainingSet set;
  int decode_max_len = 0;
  ModelConfig model;
  nlohmann::json digests;
};

inline RunData prepare_data(const RunConfig& cfg) {
  RunData d;
  d.lexicon = load_lexicon(cfg.lexicon);
  auto parts = partition_test(d.lexicon, load_test_set(cfg.test_set));
  d.test = std::move(parts.first);
  d.rest = std::move(parts.second);
  d.vocab = build_vocab(d.lexicon, {cfg.scheme}, {Inventory::standard().segments()});
  d.set = build_training_set(d.rest, cfg.dataset);
  std::size_t longest = 0;
  for (auto& e : d.lexicon)
    for (auto& p : e.pasts) longest = std::max(longest, p.form.size() + scheme_label_count(cfg.scheme));
  d.decode_max_len = cfg.decode.max_len > 0 ? cfg.decode.max_len : default_max_len(longest);
  d.model = cfg.model;
  d.model.vocab_size = static_cast<int>(d.vocab.size());
  d.model.use_copy = cfg.use_copy;
  if (d.model.max_len < d.decode_max_len) d.model.max_len = d.decode_max_len;
  d.model.validate();
  d.digests = {{"lexicon", sha256_file(cfg.lexicon)}, {"test_set", sha256_file(cfg.test_set)}};
  return d;
}

inline std::vector<int> label_ids_for(const PastForm& past, LabelScheme scheme, const Vocab& v) {
  std::vector<int> ids;
  for (auto& t : label_tokens_for(past, scheme)) ids.push_back(v.id(t));
  return ids;
}

// ---------------------------------------------------------------------------
// Dev-set scoring for model selection.

struct DevScore {
  double reg = 0.0, irr = 0.0, score = 0.0;
  std::size_t n_reg = 0, n_irr = 0;
};

// Exact-match accuracy of the top beam hypothesis on the distinct verbs of
// the dev set, per regularity stratum; score = mean of the stratum accuracies.
inline DevScore dev_score(const ModelParams& p, const Vocab& vocab, LabelScheme scheme, const std::vector<VerbEntry>& entries,
                          const TrainingSet& dev, const DecodeConfig& dc) {
  std::map<std::size_t, bool> irregular;
  for (auto& it : dev.items) {
    bool& irr = irregular[it.entry];
    irr = irr || entries[it.entry].pasts[it.past].regularity == Regularity::irreg;
  }
  std::vector<std::size_t> verbs;
  std::vector<std::vector<int>> srcs;
  for (auto& [e, irr] : irregular) {
    verbs.push_back(e);
    srcs.push_back(encode_source(entries[e].stem, vocab));
  }
  DevScore s;
  std::size_t ok_reg = 0, ok_irr = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < srcs.size(); start += kChunk) {
    const std::size_t end = std::min(srcs.size(), start + kChunk);
    std::vector<std::vector<int>> chunk(srcs.begin() + static_cast<std::ptrdiff_t>(start), srcs.begin() + static_cast<std::ptrdiff_t>(end));
    auto hyps = beam_search_batch(p, chunk, dc);
    for (std::size_t i = start; i < end; ++i) {
      const auto out = strip_labels(hyps[i - start].front().tokens, scheme, vocab);
      const bool ok = !out.malformed && is_correct(entries[verbs[i]], out.phonemes);
      if (irregular[verbs[i]]) {
        ++s.n_irr;
        ok_irr += ok;
      } else {
        ++s.n_reg;
        ok_reg += ok;
      }
    }
  }
  int parts = 0;
  if (s.n_reg) {
    s.reg = 100.0 * static_cast<double>(ok_reg) / static_cast<double>(s.n_reg);
    s.score += s.reg;
    ++parts;
  }
  if (s.n_irr) {
    s.irr = 100.0 * static_cast<double>(ok_irr) / static_cast<double>(s.n_irr);
    s.score += s.irr;
    ++parts;
  }
  if (parts) s.score /= parts;
  return s;
}

// Model selection: a later epoch replaces the incumbent only with a strictly
// higher dev score, so ties keep the earlier epoch.
inline bool improves(double candidate, std::optional<double> best) { return !best || candidate > *best; }

// ---------------------------------------------------------------------------
// Training.

struct EpochLog {
  int epoch = 0;
  std::size_t steps = 0, examples = 0;
  double loss = 0.0;
  DevScore dev;
};

struct SeedResult {
  int seed = 0;
  int best_epoch = 0;
  DevScore best;
  std::vector<EpochLog> log;
  std::string checkpoint;  // relative to the run directory
  std::string checkpoint_sha256;
  double seconds = 0.0;      // wall clock
  double cpu_seconds = 0.0;  // process CPU time
};

inline nlohmann::json to_json(const SeedResult& r) {
  nlohmann::json log = nlohmann::json::array();
  for (auto& e : r.log)
    log.push_back({{"epoch", e.epoch}, {"steps", e.steps}, {"examples", e.examples}, {"loss", e.loss},
                   {"dev_reg", e.dev.reg}, {"dev_irr", e.dev.irr}, {"dev_score", e.dev.score}});
  return {{"seed", r.seed},          {"best_epoch", r.best_epoch},   {"best_dev_reg", r.best.reg},
          {"best_dev_irr", r.best.irr}, {"best_dev_score", r.best.score}, {"epochs", log},
          {"checkpoint", r.checkpoint}, {"checkpoint_sha256", r.checkpoint_sha256}};
}

inline SeedResult seed_result_from_json(const nlohmann::json& j) {
  SeedResult r;
  r.seed = j.at("seed");
  r.best_epoch = j.at("best_epoch");
  r.best.reg = j.at("best_dev_reg");
  r.best.irr = j.at("best_dev_irr");
  r.best.score = j.at("best_dev_score");
  r.checkpoint = j.at("checkpoint");
  r.checkpoint_sha256 = j.at("checkpoint_sha256");
  for (auto& e : j.at("epochs")) {
    EpochLog l;
    l.epoch = e.at("epoch");
    l.steps = e.at("steps");
    l.examples = e.at("examples");
    l.loss = e.at("loss");
    l.dev.reg = e.at("dev_reg");
    l.dev.irr = e.at("dev_irr");
    l.dev.score = e.at("dev_score");
    r.log.push_back(l);
  }
  return r;
}

inline std::string seed_dir_name(int seed) { return "seed_" + std::to_string(seed); }

inline SeedResult train_seed(const RunConfig& cfg, const RunData& d, int seed, const std::string& run_dir, std::ostream* progress) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::clock_t c0 = std::clock();
  const Rng root(static_cast<std::uint64_t>(seed));
  auto [train, dev] = split_train_dev(d.set, d.rest, cfg.dev_fraction, root);
  ModelParams params = init_params(d.model, root);
  Adam opt(params.vars(), AdamConfig{});
  const ScheduleConfig sched{d.model.d_model, cfg.warmup_steps};
  DecodeConfig dc = cfg.decode;
  dc.max_len = d.decode_max_len;
  Rng drop = root.substream("dropout");

  std::map<std::pair<std::size_t, std::size_t>, Example> encoded;
  for (auto& it : train.items)
    if (!encoded.count({it.entry, it.past})) {
      auto [src, tgt] = encode_example(d.rest[it.entry], it.past, cfg.scheme, d.vocab);
      encoded[{it.entry, it.past}] = Example{src, tgt};
    }

  SeedResult res;
  res.seed = seed;
  res.checkpoint = seed_dir_name(seed) + "/best.ckpt";
  const std::string ckpt_path = run_dir + "/" + res.checkpoint;
  std::optional<double> best;
  std::size_t step = 0;
  std::ostringstream tsv;
  tsv << "epoch\tsteps\texamples\tloss\tdev_reg\tdev_irr\tdev_score\n";
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const Rng ep = root.substream("epoch", static_cast<std::uint64_t>(epoch));
    std::vector<TrainItem> items = resample_epoch(train, d.rest, cfg.resample, ep);
    Rng shuf = root.substream("shuffle", static_cast<std::uint64_t>(epoch));
    shuf.shuffle(items);
    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t s = 0; s < items.size(); s += B) {
      std::vector<Example> batch;
      for (std::size_t i = s; i < std::min(items.size(), s + B); ++i) batch.push_back(encoded.at({items[i].entry, items[i].past}));
      ++step;
      opt.zero_grad();
      Var loss = forward_loss(params, batch, &drop, true);
      const double lv = loss.item();
      const std::string where = "seed " + std::to_string(seed) + " epoch " + std::to_string(epoch) + " step " + std::to_string(step);
      if (!std::isfinite(lv)) throw DivergenceError("non-finite loss at " + where);
      backward(loss);
      try {
        opt.step(lr_at(step, sched));
      } catch (const NumericError& e) {
        throw DivergenceError(std::string(e.what()) + " at " + where);
      }
      loss_sum += lv * static_cast<double>(batch.size());
      ++log.steps;
      log.examples += batch.size();
    }
    log.loss = log.examples ? loss_sum / static_cast<double>(log.examples) : 0.0;
    log.dev = dev_score(params, d.vocab, cfg.scheme, d.rest, dev, dc);
    if (improves(log.dev.score, best)) {
      best = log.dev.score;
      res.best_epoch = epoch;
      res.best = log.dev;
      save_checkpoint(ckpt_path, params, d.vocab,
                      {{"run", cfg.name}, {"seed", seed}, {"epoch", epoch}, {"dev_score", log.dev.score}});
    }
    char line[256];
    std::snprintf(line, sizeof line, "%d\t%zu\t%zu\t%.10f\t%.6f\t%.6f\t%.6f\n", epoch, log.steps, log.examples, log.loss, log.dev.reg,
                  log.dev.irr, log.dev.score);
    tsv << line;
    if (progress) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *progress << cfg.name << " seed " << seed << " epoch " << epoch << "/" << cfg.epochs << " loss " << log.loss << " dev reg "
                << log.dev.reg << " irr " << log.dev.irr << " (" << static_cast<long>(el) << "s)" << std::endl;
    }
    res.log.push_back(log);
  }
  write_file(run_dir + "/" + seed_dir_name(seed) + "/train_log.tsv", tsv.str());
  res.checkpoint_sha256 = sha256_file(ckpt_path);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.cpu_seconds = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
  return res;
}

struct TrainOutcome {
  std::string run_dir;
  nlohmann::json manifest;
  bool reused = false;
};

inline std::string run_dir_for(const RunConfig& cfg, const std::string& out_root = "") {
  return output_root(out_root) + "/" + cfg.resolved().name;
}

// Trains every seed and writes <run_dir>/manifest.json.  With reuse, a
// complete manifest for the identical configuration and inputs is kept, and
// finished seeds of an interrupted run are not retrained.
inline TrainOutcome run_train(const RunConfig& raw, const std::string& out_root = "", bool reuse = false,
                              std::ostream* progress = nullptr) {
  const RunConfig cfg = raw.resolved();
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunData d = prepare_data(cfg);
  TrainOutcome out;
  out.run_dir = output_root(out_root) + "/" + cfg.name;
  const std::string manifest_path = out.run_dir + "/manifest.json";
  const nlohmann::json cfg_json = cfg.to_json();
  auto same_inputs = [&](const nlohmann::json& j) {
    return j.value("config", nlohmann::json()) == cfg_json && j.value("inputs", nlohmann::json()) == d.digests &&
           j.value("code_version", "") == kCodeVersion;
  };
  if (reuse && std::filesystem::exists(manifest_path)) {
    auto m = nlohmann::json::parse(read_file(manifest_path));
    bool ok = same_inputs(m);
    for (auto& s : m.value("seeds", nlohmann::json::array()))
      ok = ok && std::filesystem::exists(out.run_dir + "/" + s.at("checkpoint").get<std::string>()) &&
           sha256_file(out.run_dir + "/" + s.at("checkpoint").get<std::string>()) == s.at("checkpoint_sha256");
    if (ok) {
      out.manifest = m;
      out.reused = true;
      return out;
    }
  }
  nlohmann::json seeds = nlohmann::json::array(), timing = nlohmann::json::object(), cpu = nlohmann::json::object();
  for (int seed : cfg.seeds) {
    const std::string result_path = out.run_dir + "/" + seed_dir_name(seed) + "/result.json";
    std::optional<SeedResult> r;
    if (reuse && std::filesystem::exists(result_path)) {
      auto j = nlohmann::json::parse(read_file(result_path));
      if (same_inputs(j)) {
        SeedResult cached = seed_result_from_json(j.at("result"));
        const std::string ck = out.run_dir + "/" + cached.checkpoint;
        if (std::filesystem::exists(ck) && sha256_file(ck) == cached.checkpoint_sha256) {
          r = cached;
          r->seconds = j.value("seconds", 0.0);
          r->cpu_seconds = j.value("cpu_seconds", 0.0);
          if (progress) *progress << cfg.name << " seed " << seed << ": reusing finished result" << std::endl;
        }
      }
    }
    if (!r) {
      r = train_seed(cfg, d, seed, out.run_dir, progress);
      write_file(result_path, nlohmann::json{{"config", cfg_json}, {"inputs", d.digests}, {"code_version", kCodeVersion},
                                             {"result", to_json(*r)}, {"seconds", r->seconds},
                                             {"cpu_seconds", r->cpu_seconds}}
                                  .dump(2));
    }
    seeds.push_back(to_json(*r));
    timing[std::to_string(seed)] = r->seconds;
    cpu[std::to_string(seed)] = r->cpu_seconds;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.manifest = {{"format", "pasttense-run"},
                  {"code_version", kCodeVersion},
                  {"config", cfg_json},
                  {"inputs", d.digests},
                  {"vocab_size", d.vocab.size()},
                  {"parameter_count", parameter_count(d.model)},
                  {"model", to_json(d.model)},
                  {"decode_max_len", d.decode_max_len},
                  {"seeds", seeds},
                  {"timing", {{"wall_seconds", wall}, {"seed_seconds", timing}, {"seed_cpu_seconds", cpu}}}};
  write_file(manifest_path, out.manifest.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Loading a finished run.

struct LoadedRun {
  std::string run_dir;
  nlohmann::json manifest;
  RunConfig cfg;
  RunData data;
  std::vector<int> seeds;
  std::vector<Checkpoint> checkpoints;
};

inline LoadedRun load_run(const std::string& run_dir) {
  LoadedRun r;
  r.run_dir = run_dir;
  const std::string mp = run_dir + "/manifest.json";
  if (!std::filesystem::exists(mp)) throw LoadError("no manifest at " + mp);
  try {
    r.manifest = nlohmann::json::parse(read_file(mp));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("manifest " + mp + " is not JSON: " + e.what());
  }
  if (r.manifest.value("format", "") != "pasttense-run") throw LoadError(mp + " is not a run manifest");
  r.cfg = RunConfig::from_json(r.manifest.at("config"));
  r.data = prepare_data(r.cfg);
  if (r.manifest.at("inputs") != r.data.digests) throw LoadError("input files changed since training (digest mismatch) for " + run_dir);
  for (auto& s : r.manifest.at("seeds")) {
    const std::string ck = run_dir + "/" + s.at("checkpoint").get<std::string>();
    Checkpoint c = load_checkpoint(ck);
    if (!(c.params.cfg == r.data.model)) throw LoadError("checkpoint " + ck + " does not match the run configuration");
    if (!(c.vocab == r.data.vocab)) throw LoadError("checkpoint " + ck + " vocabulary does not match the data");
    r.seeds.push_back(s.at("seed"));
    r.checkpoints.push_back(std::move(c));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalResult {
  AccuracyTable by_regularity, by_class;
  std::optional<AccuracyTable> forced_regularity, forced_class;
  std::vector<ErrorRecord> errors;
  std::vector<ErrorSummaryRow> summary;
  std::optional<std::vector<LabelAccuracyRow>> labels;
};

inline std::vector<Prediction> predict_test(const ModelParams& p, const Vocab& vocab, LabelScheme scheme,
                                            const std::vector<VerbEntry>& test, const DecodeConfig& dc, int seed,
                                            const std::string& model_id, bool forced, std::vector<PredictionRecord>* dump) {
  std::vector<std::vector<int>> srcs;
  for (auto& v : test) srcs.push_back(encode_source(v.stem, vocab));
  std::vector<Hypothesis> top;
  if (forced) {
    std::vector<std::vector<int>> labels;
    for (auto& v : test) labels.push_back(label_ids_for(v.report_past(), scheme, vocab));
    top = force_label_decode_batch(p, srcs, labels, scheme, dc);
  } else {
    for (auto& h : beam_search_batch(p, srcs, dc)) top.push_back(h.front());
  }
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto s = strip_labels(top[i].tokens, scheme, vocab);
    preds.push_back({&test[i], s.phonemes, s.labels, s.malformed, seed, model_id});
    if (dump) dump->push_back({test[i].lemma, scheme, forced ? "forced" : "beam", 0, s.labels, s.phonemes, top[i].log_prob, s.malformed});
  }
  return preds;
}

inline EvalResult evaluate_predictions(const std::string& model_id, const std::map<int, std::vector<Prediction>>& preds,
                                       const std::vector<VerbEntry>& test, LabelScheme scheme) {
  EvalResult r;
  r.by_regularity = accuracy_table(model_id, preds, test, GroupBy::regularity);
  r.by_class = accuracy_table(model_id, preds, test, GroupBy::verb_class);
  std::vector<std::pair<Regularity, ErrorClass>> errs;
  for (auto& [seed, ps] : preds)
    for (auto& p : ps) {
      if (is_correct(p)) continue;
      const ErrorClass c = classify_error(*p.verb, p.predicted);
      r.errors.push_back({model_id, seed, p.verb->lemma, p.verb->report_regularity(), p.verb->report_past().verb_class, p.predicted,
                          p.malformed, c});
      errs.emplace_back(p.verb->report_regularity(), c);
    }
  r.summary = error_summary(errs);
  if (scheme_has_regularity(scheme)) r.labels = label_accuracy(preds, scheme);
  return r;
}

inline EvalResult run_eval(const std::string& run_dir, std::ostream* progress = nullptr) {
  LoadedRun run = load_run(run_dir);
  const auto& d = run.data;
  DecodeConfig dc = run.cfg.decode;
  dc.max_len = d.decode_max_len;
  const std::string id = run.cfg.name;
  std::map<int, std::vector<Prediction>> preds, forced;
  const bool do_forced = scheme_has_regularity(run.cfg.scheme);
  for (std::size_t i = 0; i < run.seeds.size(); ++i) {
    const int seed = run.seeds[i];
    std::vector<PredictionRecord> dump;
    preds[seed] = predict_test(run.checkpoints[i].params, d.vocab, run.cfg.scheme, d.test, dc, seed, id, false, &dump);
    if (do_forced) forced[seed] = predict_test(run.checkpoints[i].params, d.vocab, run.cfg.scheme, d.test, dc, seed, id, true, &dump);
    std::ostringstream os;
    write_predictions_tsv(os, dump);
    write_file(run_dir + "/eval/predictions_" + seed_dir_name(seed) + ".tsv", os.str());
    if (progress) *progress << id << " seed " << seed << ": evaluated " << d.test.size() << " test verbs" << std::endl;
  }
  EvalResult r = evaluate_predictions(id, preds, d.test, run.cfg.scheme);
  auto emit = [&](const std::string& name, auto&& fn) {
    std::ostringstream os;
    fn(os);
    write_file(run_dir + "/eval/" + name, os.str());
  };
  emit("accuracy_regularity.csv", [&](std::ostream& os) { write_accuracy_csv(os, {r.by_regularity}); });
  emit("accuracy_class.csv", [&](std::ostream& os) { write_accuracy_csv(os, {r.by_class}); });
  emit("errors.csv", [&](std::ostream& os) { write_errors_csv(os, r.errors); });
  emit("error_summary.csv", [&](std::ostream& os) { write_error_summary_csv(os, r.summary); });
  if (r.labels) emit("label_accuracy.csv", [&](std::ostream& os) { write_label_accuracy_csv(os, id, *r.labels); });
  if (do_forced) {
    r.forced_regularity = accuracy_table(id, forced, d.test, GroupBy::regularity);
    r.forced_class = accuracy_table(id, forced, d.test, GroupBy::verb_class);
    emit("forced_accuracy_regularity.csv", [&](std::ostream& os) { write_accuracy_csv(os, {*r.forced_regularity}); });
    emit("forced_accuracy_class.csv", [&](std::ostream& os) { write_accuracy_csv(os, {*r.forced_class}); });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Nonce-verb harness.

struct NonceResult {
  std::vector<NonceVerb> verbs;
  std::vector<ProductionProfile> profiles;
  CorrelationReport report;
};

// n_samples top-k samples per verb and seed; sample j of verb i under a seed
// draws from Rng(seed).substream("nonce", i * n_samples + j).
inline std::vector<std::vector<Phonemes>> sample_nonce(const ModelParams& p, const Vocab& vocab, LabelScheme scheme,
                                                       const std::vector<NonceVerb>& verbs, const DecodeConfig& dc, int seed) {
  std::vector<std::vector<int>> srcs;
  for (auto& v : verbs) srcs.push_back(encode_source(v.stem, vocab));
  std::vector<std::size_t> src_of;
  std::vector<Rng> rngs;
  const Rng root(static_cast<std::uint64_t>(seed));
  const auto n = static_cast<std::size_t>(dc.n_samples);
  for (std::size_t i = 0; i < verbs.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) {
      src_of.push_back(i);
      rngs.push_back(root.substream("nonce", i * n + j));
    }
  auto hyps = sample_topk_batch(p, srcs, src_of, dc, rngs);
  std::vector<std::vector<Phonemes>> out(verbs.size());
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    auto s = strip_labels(hyps[k].tokens, scheme, vocab);
    out[src_of[k]].push_back(s.malformed ? Phonemes{"<malformed>"} : s.phonemes);
  }
  return out;
}

inline NonceResult run_nonce(const std::string& run_dir, const std::string& nonce_path = "", std::ostream* progress = nullptr) {
  LoadedRun run = load_run(run_dir);
  NonceResult r;
  r.verbs = load_nonce(nonce_path.empty() ? run.cfg.nonce : nonce_path);
  DecodeConfig dc = run.cfg.decode;
  dc.max_len = run.data.decode_max_len;
  std::vector<std::vector<Phonemes>> all(r.verbs.size());
  for (std::size_t i = 0; i < run.seeds.size(); ++i) {
    auto s = sample_nonce(run.checkpoints[i].params, run.data.vocab, run.cfg.scheme, r.verbs, dc, run.seeds[i]);
    for (std::size_t v = 0; v < s.size(); ++v) all[v].insert(all[v].end(), s[v].begin(), s[v].end());
    if (progress) *progress << run.cfg.name << " seed " << run.seeds[i] << ": sampled " << r.verbs.size() << " nonce verbs" << std::endl;
  }
  const std::size_t expected = run.seeds.size() * static_cast<std::size_t>(dc.n_samples);
  for (std::size_t v = 0; v < r.verbs.size(); ++v) r.profiles.push_back(production_profile(all[v], r.verbs[v], expected));
  r.report = correlate_report(run.cfg.name, r.profiles, r.verbs);
  std::ostringstream p, c, f;
  write_profiles_csv(p, r.profiles, r.verbs);
  write_correlation_csv(c, {r.report});
  write_figure_csv(f, figure_export(r.profiles, r.verbs));
  write_file(run_dir + "/nonce/profiles.csv", p.str());
  write_file(run_dir + "/nonce/correlations.csv", c.str());
  write_file(run_dir + "/nonce/figure.csv", f.str());
  return r;
}

// ---------------------------------------------------------------------------
// Readers for emitted CSVs.

inline std::vector<double> parse_series(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ';'))
    if (!tok.empty()) out.push_back(tok == "NaN" ? std::nan("") : std::stod(tok));
  return out;
}

inline std::vector<AccuracyTable> read_accuracy_csv(const std::string& path) {
  std::vector<AccuracyTable> tables;
  for (auto& row : read_csv(path)) {
    if (tables.empty() || tables.back().model_id != row.at("model_id")) tables.push_back({row.at("model_id"), {}, {}});
    tables.back().rows.push_back({row.at("group"), parse_series(row.at("per_seed")), std::stoul(row.at("items"))});
  }
  return tables;
}

inline std::vector<CorrelationReport> read_correlation_csv(const std::string& path) {
  std::vector<CorrelationReport> reps;
  for (auto& row : read_csv(path)) {
    if (reps.empty() || reps.back().model_id != row.at("model_id")) reps.push_back({row.at("model_id"), {}});
    auto& rep = reps.back();
    if (rep.rows.empty() || rep.rows.back().row != row.at("row")) rep.rows.push_back({row.at("row")});
    auto& r = rep.rows.back();
    const std::string& v = row.at("value");
    const double val = v == "unavailable" || v == "NaN" ? std::nan("") : std::stod(v);
    if (v == "unavailable") r.available = false;
    if (row.at("statistic") == "r") {
      r.r = val;
      r.n_r = std::stoul(row.at("n"));
    } else {
      r.rho = val;
      r.n_rho = std::stoul(row.at("n"));
    }
  }
  return reps;
}

inline std::vector<std::pair<Regularity, ErrorClass>> read_error_classes(const std::string& path) {
  std::vector<std::pair<Regularity, ErrorClass>> out;
  for (auto& row : read_csv(path)) {
    ErrorClass c = ErrorClass::creative;
    bool found = false;
    for (auto e : all_error_classes())
      if (to_string(e) == row.at("error_class")) {
        c = e;
        found = true;
      }
    if (!found) throw DataError(path + ": unknown error class " + row.at("error_class"));
    out.emplace_back(parse_enum<Regularity>(row.at("regularity"), "regularity"), c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-run report: concatenated accuracy tables, summed error counts,
// correlation summary, and frequency-effect comparisons for every pair of
// runs that differ only in their dataset.

inline void run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  std::vector<AccuracyTable> reg, cls;
  std::vector<std::pair<Regularity, ErrorClass>> errs;
  std::vector<CorrelationReport> cors;
  std::map<std::string, std::map<DatasetKind, AccuracyTable>> cells;  // variant -> dataset -> table
  for (auto& dir : run_dirs) {
    auto m = nlohmann::json::parse(read_file(dir + "/manifest.json"));
    const RunConfig cfg = RunConfig::from_json(m.at("config"));
    if (std::filesystem::exists(dir + "/eval/accuracy_regularity.csv")) {
      auto t = read_accuracy_csv(dir + "/eval/accuracy_regularity.csv");
      reg.insert(reg.end(), t.begin(), t.end());
      auto c = read_accuracy_csv(dir + "/eval/accuracy_class.csv");
      cls.insert(cls.end(), c.begin(), c.end());
      auto e = read_error_classes(dir + "/eval/errors.csv");
      errs.insert(errs.end(), e.begin(), e.end());
      const std::string variant = to_string(cfg.scheme) + (cfg.use_copy ? "-copy" : "-van") + "-" + to_string(cfg.resample);
      if (!t.empty()) cells[variant][cfg.dataset] = t.front();
    }
    if (std::filesystem::exists(dir + "/nonce/correlations.csv")) {
      auto c = read_correlation_csv(dir + "/nonce/correlations.csv");
      cors.insert(cors.end(), c.begin(), c.end());
    }
  }
  std::ostringstream a, c, e, s, fx;
  write_accuracy_csv(a, reg);
  write_accuracy_csv(c, cls);
  write_error_summary_csv(e, error_summary(errs));
  write_summary_csv(s, summarize_runs(cors));
  fx << "comparison,group,cells,mean,std,max\n";
  auto effect = [&](DatasetKind A, DatasetKind B) {
    std::vector<AccuracyTable> ga, gb;
    for (auto& [variant, by] : cells)
      if (by.count(A) && by.count(B)) {
        ga.push_back(by.at(A));
        gb.push_back(by.at(B));
      }
    if (ga.empty()) return;
    std::ostringstream tmp;
    write_effect_csv(tmp, to_string(A) + "-" + to_string(B), frequency_effect(ga, gb));
    std::string body = tmp.str();
    fx << body.substr(body.find('\n') + 1);
  };
  effect(DatasetKind::type_reg, DatasetKind::type_irr);
  effect(DatasetKind::type_irr, DatasetKind::token_irr);
  effect(DatasetKind::type_irr, DatasetKind::type_reg);
  write_file(out_dir + "/accuracy_regularity.csv", a.str());
  write_file(out_dir + "/accuracy_class.csv", c.str());
  write_file(out_dir + "/error_summary.csv", e.str());
  write_file(out_dir + "/correlation_summary.csv", s.str());
  write_file(out_dir + "/frequency_effects.csv", fx.str());
}

// ---------------------------------------------------------------------------
// Dataset statistics (build-data).

struct DatasetStatsRow {
  std::string name;
  std::size_t total = 0, regular = 0, irregular = 0;
  double irregular_pct() const { return total ? 100.0 * static_cast<double>(irregular) / static_cast<double>(total) : 0.0; }
};

inline std::vector<DatasetStatsRow> dataset_stats(const std::vector<VerbEntry>& rest) {
  std::vector<DatasetStatsRow> rows;
  for (auto k : {DatasetKind::type_reg, DatasetKind::type_irr, DatasetKind::token_both, DatasetKind::token_irr}) {
    auto st = set_stats(build_training_set(rest, k), rest);
    rows.push_back({to_string(k), st.total, st.regular, st.irregular});
  }
  return rows;
}

// Per-epoch (regular, irregular) type counts of each resampler on the
// type_irr training split.
inline std::vector<DatasetStatsRow> resample_stats(const std::vector<VerbEntry>& rest, double dev_fraction, int seed) {
  const Rng root(static_cast<std::uint64_t>(seed));
  auto set = build_training_set(rest, DatasetKind::type_irr);
  auto train = split_train_dev(set, rest, dev_fraction, root).first;
  std::vector<DatasetStatsRow> rows;
  for (auto m : {ResampleMethod::balance, ResampleMethod::reg_ds, ResampleMethod::irreg_ds}) {
    TrainingSet ep{DatasetKind::type_irr, resample_epoch(train, rest, m, root.substream("epoch", 1))};
    auto st = set_stats(ep, rest);
    rows.push_back({to_string(m), st.total, st.regular, st.irregular});
  }
  return rows;
}

}  // namespace pasttense
