#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pasttense/checkpoint.hpp"
#include "pasttense/gradcheck.hpp"
#include "pasttense/model.hpp"
#include "pasttense/optim.hpp"

using namespace pasttense;

namespace {

ModelConfig tiny(int V = 10, bool copy = false, int d = 8, int layers = 1) {
  ModelConfig c;
  c.n_layers_enc = layers;
  c.n_layers_dec = layers;
  c.n_heads = 2;
  c.d_model = d;
  c.d_ff = 2 * d;
  c.dropout = 0.0;
  c.use_copy = copy;
  c.vocab_size = V;
  c.max_len = 16;
  return c;
}

// Start + random payload ids in [3, V) + End.
std::vector<int> random_seq(Rng& rng, int V, std::size_t len) {
  std::vector<int> s{kStart};
  for (std::size_t i = 0; i < len; ++i) s.push_back(3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(V - 3))));
  s.push_back(kEnd);
  return s;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(ModelConfig, HeadsMustDivideWidth) {
  ModelConfig c = tiny();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(init_params(c, Rng(1)), ConfigError);
}

TEST(ModelConfig, DropoutRange) {
  ModelConfig c = tiny();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InitParams, DeterministicUnderSeed) {
  const ModelParams a = init_params(tiny(), Rng(7)), b = init_params(tiny(), Rng(7)), c = init_params(tiny(), Rng(8));
  ASSERT_EQ(a.names(), b.names());
  bool differs = false;
  for (std::size_t i = 0; i < a.vars().size(); ++i) {
    EXPECT_EQ(a.vars()[i].value().values(), b.vars()[i].value().values()) << a.names()[i];
    differs = differs || a.vars()[i].value().values() != c.vars()[i].value().values();
  }
  EXPECT_TRUE(differs);
}

TEST(InitParams, NormGainsOneBiasesZero) {
  const ModelParams p = init_params(tiny(12, true, 8, 2), Rng(3));
  for (std::size_t i = 0; i < p.names().size(); ++i) {
    const std::string& n = p.names()[i];
    const auto& v = p.vars()[i].value().values();
    const std::string leaf = n.substr(n.rfind('.') + 1);
    if (leaf == "g") {
      for (double x : v) EXPECT_EQ(x, 1.0) << n;
    }
    if (leaf.front() == 'b') {  // every bias and norm offset: b, bq, bk, bv, bo, b1, b2
      for (double x : v) EXPECT_EQ(x, 0.0) << n;
    }
  }
}

TEST(InitParams, XavierBound) {
  const ModelParams p = init_params(tiny(10, false, 16), Rng(5));
  const auto& w = p["enc.0.ff.w1"].value();
  const double a = std::sqrt(6.0 / static_cast<double>(w.dim(0) + w.dim(1)));
  for (double x : w.values()) EXPECT_LE(std::abs(x), a);
}

// Counts by enumerating the shapes actually allocated, independently of the
// closed form.
TEST(ParameterCount, ClosedFormMatchesEnumeration) {
  for (bool copy : {false, true})
    for (int V : {10, 55})
      for (int layers : {1, 2}) {
        ModelConfig c = tiny(V, copy, 16, layers);
        const ModelParams p = init_params(c, Rng(1));
        std::size_t n = 0;
        for (auto& v : p.vars()) n += shape_size(v.shape());
        EXPECT_EQ(parameter_count(c), n);
      }
}

TEST(ParameterCount, DefaultArchitectureWithFiftyFiveTokens) {
  ModelConfig c;
  c.vocab_size = 55;
  const ModelParams p = init_params(c, Rng(1));
  std::size_t n = 0;
  for (auto& v : p.vars()) n += shape_size(v.shape());
  EXPECT_EQ(n, 947383u);
  EXPECT_EQ(parameter_count(c), n);
  c.use_copy = true;
  EXPECT_EQ(parameter_count(c), 947383u + 2 * 128 + 1);
}

TEST(Encode, ShapeAndDeterminism) {
  const ModelParams p = init_params(tiny(), Rng(2));
  const std::vector<int> src{kStart, 3, 4, 5, kEnd};
  const Tensor a = encode(p, src, false, nullptr), b = encode(p, src, false, nullptr);
  EXPECT_EQ(a.shape(), (Shape{5, 8}));
  EXPECT_EQ(a.values(), b.values());
}

TEST(Encode, PermutationChangesMemory) {
  const ModelParams p = init_params(tiny(), Rng(2));
  const Tensor a = encode(p, {kStart, 3, 4, kEnd}, false, nullptr);
  const Tensor b = encode(p, {kStart, 4, 3, kEnd}, false, nullptr);
  // Row of token 3 in each encoding: same token, different position.
  double diff = 0.0;
  for (std::size_t c = 0; c < 8; ++c) diff += std::abs(a.at(1, c) - b.at(2, c));
  EXPECT_GT(diff, 1e-6);
}

TEST(Encode, DropoutOnlyInTrainMode) {
  ModelConfig c = tiny();
  c.dropout = 0.3;
  const ModelParams p = init_params(c, Rng(2));
  const std::vector<int> src{kStart, 3, 4, 5, kEnd};
  Rng r1(1), r2(2);
  const Tensor e = encode(p, src, false, nullptr);
  EXPECT_EQ(e.values(), encode(p, src, false, nullptr).values());
  EXPECT_NE(encode(p, src, true, &r1).values(), encode(p, src, true, &r2).values());
  EXPECT_THROW(encode(p, src, true, nullptr), UsageError);
}

TEST(Encode, OutOfVocabularyIsDataError) {
  const ModelParams p = init_params(tiny(), Rng(2));
  EXPECT_THROW(encode(p, {kStart, 10, kEnd}, false, nullptr), DataError);
  EXPECT_THROW(encode(p, {kStart, -1, kEnd}, false, nullptr), DataError);
}

TEST(DecodeStep, DistributionsNormalised) {
  for (bool copy : {false, true}) {
    const ModelParams p = init_params(tiny(10, copy), Rng(4));
    const std::vector<int> src{kStart, 3, 4, 5, 6, kEnd};
    const Tensor mem = encode(p, src, false, nullptr);
    const auto s = decode_step(p, mem, src, {kStart, 7, 8}, false, nullptr);
    ASSERT_EQ(s.probs.size(), 10u);
    EXPECT_NEAR(sum(s.probs), 1.0, 1e-9);
    ASSERT_EQ(s.attention.size(), 2u);
    for (auto& row : s.attention) {
      EXPECT_EQ(row.size(), src.size());
      EXPECT_NEAR(sum(row), 1.0, 1e-9);
    }
    EXPECT_EQ(s.p_gen.has_value(), copy);
    if (copy) {
      EXPECT_GE(*s.p_gen, 0.0);
      EXPECT_LE(*s.p_gen, 1.0);
    }
  }
}

TEST(DecodeStep, EmptyPrefixIsUsageError) {
  const ModelParams p = init_params(tiny(), Rng(4));
  const std::vector<int> src{kStart, 3, kEnd};
  EXPECT_THROW(decode_step(p, encode(p, src, false, nullptr), src, {}, false, nullptr), UsageError);
}

// The distribution after prefix[0..t] must be the same whether computed on
// its own or as row t of a teacher-forced pass over a longer sequence.
TEST(DecodeStep, CausalMasking) {
  Rng rng(11);
  for (bool copy : {false, true})
    for (int trial = 0; trial < 5; ++trial) {
      const ModelParams p = init_params(tiny(10, copy, 8, 2), Rng(100 + static_cast<std::uint64_t>(trial)));
      const auto src = random_seq(rng, 10, 4);
      auto full = random_seq(rng, 10, 5);
      full.pop_back();
      NoGradGuard ng;
      Encoded enc = encode_batch(p, {src}, false, nullptr);
      DecoderOutput o = decode_batch(p, enc, {full}, {0}, false, false, nullptr);
      for (std::size_t t = 0; t < full.size(); ++t) {
        const auto whole = step_distribution(p, enc, o, t);
        const auto alone = decode_step(p, enc.memory.value(), src, std::vector<int>(full.begin(), full.begin() + static_cast<long>(t) + 1),
                                       false, nullptr);
        for (std::size_t w = 0; w < 10; ++w) EXPECT_NEAR(whole.probs[w], alone.probs[w], 1e-12);
        for (std::size_t h = 0; h < 2; ++h)
          for (std::size_t j = 0; j < src.size(); ++j) EXPECT_NEAR(whole.attention[h][j], alone.attention[h][j], 1e-12);
      }
    }
}

TEST(DecodeStep, CopyMixtureMatchesPointerMix) {
  const ModelParams p = init_params(tiny(10, true), Rng(9));
  const std::vector<int> src{kStart, 3, 3, 7, kEnd};
  const Tensor mem = encode(p, src, false, nullptr);
  const std::vector<int> prefix{kStart, 5};
  const auto s = decode_step(p, mem, src, prefix, false, nullptr);
  // Generation distribution from a copy-free clone of the same weights.
  ModelConfig c = p.cfg;
  c.use_copy = false;
  ModelParams g;
  g.cfg = c;
  g.positions = p.positions;
  for (std::size_t i = 0; i < p.names().size(); ++i)
    if (p.names()[i].rfind("copy.", 0) != 0) g.add(p.names()[i], p.vars()[i].value());
  const auto gen = decode_step(g, mem, src, prefix, false, nullptr);
  std::vector<double> avg(src.size(), 0.0);
  for (auto& row : s.attention)
    for (std::size_t j = 0; j < src.size(); ++j) avg[j] += row[j] / static_cast<double>(s.attention.size());
  const auto mixed = pointer_mix(gen.probs, avg, src, *s.p_gen);
  for (std::size_t w = 0; w < 10; ++w) EXPECT_NEAR(s.probs[w], mixed[w], 1e-12);
}

TEST(PointerMix, PureGeneration) {
  const std::vector<double> gen{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(pointer_mix(gen, {0.5, 0.5}, {1, 2}, 1.0), gen);
}

TEST(PointerMix, PureCopy) {
  const auto out = pointer_mix({0.25, 0.25, 0.25, 0.25}, {1.0}, {2}, 0.0);
  EXPECT_EQ(out, (std::vector<double>{0.0, 0.0, 1.0, 0.0}));
}

TEST(PointerMix, HandEvaluatedHalfGate) {
  const auto out = pointer_mix({0.25, 0.25, 0.25, 0.25}, {0.25, 0.75}, {0, 1}, 0.5);
  EXPECT_DOUBLE_EQ(out[0], 0.25);
  EXPECT_DOUBLE_EQ(out[1], 0.5);
  EXPECT_DOUBLE_EQ(out[2], 0.125);
  EXPECT_DOUBLE_EQ(out[3], 0.125);
  EXPECT_NEAR(sum(out), 1.0, 1e-15);
}

TEST(PointerMix, RepeatedSourceTokensAccumulate) {
  const auto out = pointer_mix({0.5, 0.5, 0.0}, {0.3, 0.3, 0.4}, {2, 2, 0}, 0.0);
  EXPECT_NEAR(out[2], 0.6, 1e-15);
  EXPECT_NEAR(out[0], 0.4, 1e-15);
}

TEST(PointerMix, Preconditions) {
  EXPECT_THROW(pointer_mix({1.0}, {1.0}, {0}, 1.5), UsageError);
  EXPECT_THROW(pointer_mix({1.0}, {1.0, 0.0}, {0}, 0.5), ShapeError);
  EXPECT_THROW(pointer_mix({1.0}, {1.0}, {3}, 0.5), DataError);
}

TEST(ForwardLoss, EmptyBatchIsUsageError) {
  const ModelParams p = init_params(tiny(), Rng(1));
  EXPECT_THROW(forward_loss(p, {}, nullptr, false), UsageError);
}

// Output layer rigged so that End has all the probability mass.
TEST(ForwardLoss, PerfectFitIsZero) {
  ModelParams p = init_params(tiny(), Rng(1));
  Var w = p["out.w"], b = p["out.b"];
  for (auto& x : w.mutable_value().values()) x = 0.0;
  for (auto& x : b.mutable_value().values()) x = 0.0;
  b.mutable_value()[kEnd] = 1000.0;
  const double l = forward_loss(p, {{{kStart, 3, kEnd}, {kStart, kEnd}}}, nullptr, false).item();
  EXPECT_NEAR(l, 0.0, 1e-12);
}

TEST(ForwardLoss, InvariantToPadExtension) {
  const ModelParams p = init_params(tiny(10, true), Rng(1));
  const std::vector<Example> a{{{kStart, 3, 4, kEnd}, {kStart, 5, kEnd}}, {{kStart, 6, kEnd}, {kStart, 7, 8, 9, kEnd}}};
  std::vector<Example> b = a;
  b[0].src.push_back(kPad);
  b[0].tgt.insert(b[0].tgt.end(), {kPad, kPad});
  EXPECT_NEAR(forward_loss(p, a, nullptr, false).item(), forward_loss(p, b, nullptr, false).item(), 1e-12);
}

// Token-weighted mean of independently computed per-example losses.
TEST(ForwardLoss, EqualsTokenWeightedPerExampleMean) {
  Rng rng(3);
  for (bool copy : {false, true}) {
    const ModelParams p = init_params(tiny(10, copy, 8, 2), Rng(21));
    std::vector<Example> batch;
    for (std::size_t i = 0; i < 6; ++i) batch.push_back({random_seq(rng, 10, 2 + i % 3), random_seq(rng, 10, 1 + i % 4)});
    double num = 0.0, den = 0.0;
    for (auto& e : batch) {
      const double n = static_cast<double>(e.tgt.size() - 1);
      num += n * forward_loss(p, {e}, nullptr, false).item();
      den += n;
    }
    EXPECT_NEAR(forward_loss(p, batch, nullptr, false).item(), num / den, 1e-12);
  }
}

TEST(ForwardLoss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (bool copy : {false, true}) {
    const ModelParams p = init_params(tiny(10, copy, 8, 1), Rng(31));
    std::vector<Example> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({random_seq(rng, 10, 3), random_seq(rng, 10, 3)});
    GradCheckOptions opt;
    opt.min_coords = 300;
    const auto rep = grad_check([&] { return forward_loss(p, batch, nullptr, false); }, p.vars(), opt);
    EXPECT_TRUE(rep.precondition_ok) << rep.message;
    EXPECT_LT(rep.max_rel_error, 1e-4) << "copy=" << copy;
  }
}

TEST(ForwardLoss, DropoutMakesGradCheckRefuse) {
  ModelConfig c = tiny();
  c.dropout = 0.5;
  const ModelParams p = init_params(c, Rng(1));
  Rng drop(1);
  const std::vector<Example> batch{{{kStart, 3, kEnd}, {kStart, 4, kEnd}}};
  const auto rep = grad_check([&] { return forward_loss(p, batch, &drop, true); }, p.vars());
  EXPECT_FALSE(rep.precondition_ok);
}

// Fifty Adam steps on a 20-example toy copy task halve the loss.
TEST(Training, FiftyStepsHalveTheLoss) {
  Rng rng(8);
  ModelConfig c = tiny(12, false, 32, 1);
  c.n_heads = 4;
  c.d_ff = 64;
  const ModelParams p = init_params(c, Rng(1));
  std::vector<Example> data;
  for (int i = 0; i < 20; ++i) {
    auto s = random_seq(rng, 12, 3);
    data.push_back({s, s});
  }
  Adam opt(p.vars());
  const double first = forward_loss(p, data, nullptr, false).item();
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    backward(forward_loss(p, data, nullptr, false));
    opt.step(3e-3);
  }
  const double last = forward_loss(p, data, nullptr, false).item();
  EXPECT_LE(last, 0.5 * first) << first << " -> " << last;
}

TEST(Checkpoint, RoundTripReproducesInference) {
  for (bool copy : {false, true}) {
    const ModelParams p = init_params(tiny(10, copy, 16, 2), Rng(13));
    std::vector<std::string> toks{"<pad>", "<s>", "</s>", "a", "b", "c", "d", "e", "f", "g"};
    const Vocab v(toks);
    const Checkpoint ck = parse_checkpoint(serialize_checkpoint(p, v, {{"note", "x"}}), "memory");
    EXPECT_EQ(ck.params.cfg, p.cfg);
    EXPECT_EQ(ck.vocab, v);
    EXPECT_EQ(ck.meta.at("note"), "x");
    EXPECT_EQ(ck.params.names(), p.names());
    const std::vector<int> src{kStart, 3, 4, 5, kEnd};
    const auto a = decode_step(p, encode(p, src, false, nullptr), src, {kStart, 6}, false, nullptr);
    const auto b = decode_step(ck.params, encode(ck.params, src, false, nullptr), src, {kStart, 6}, false, nullptr);
    for (std::size_t w = 0; w < 10; ++w) EXPECT_NEAR(a.probs[w], b.probs[w], 1e-6);
  }
}

TEST(Checkpoint, SerialisationIsDeterministic) {
  const ModelParams p = init_params(tiny(), Rng(13));
  const Vocab v(std::vector<std::string>{"<pad>", "<s>", "</s>", "a", "b", "c", "d", "e", "f", "g"});
  EXPECT_EQ(serialize_checkpoint(p, v), serialize_checkpoint(init_params(tiny(), Rng(13)), v));
}

TEST(Checkpoint, CorruptInputIsLoadError) {
  const ModelParams p = init_params(tiny(), Rng(13));
  const Vocab v(std::vector<std::string>{"<pad>", "<s>", "</s>", "a", "b", "c", "d", "e", "f", "g"});
  const std::string bytes = serialize_checkpoint(p, v);
  EXPECT_THROW(parse_checkpoint("XXXXXXX\n" + bytes.substr(8), "m"), LoadError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 4), "m"), LoadError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 20), "m"), LoadError);
  // A config that disagrees with the stored tensors.
  std::string tampered = bytes;
  const auto pos = tampered.find("\"d_ff\":16");
  ASSERT_NE(pos, std::string::npos);
  tampered.replace(pos, 9, "\"d_ff\":17");
  EXPECT_THROW(parse_checkpoint(tampered, "m"), LoadError);
  EXPECT_THROW(load_checkpoint("/nonexistent/file.ckpt"), LoadError);
}
