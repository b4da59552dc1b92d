#include <set>

#include "b3s/pipeline.hpp"
#include "doctest.h"

using namespace b3s;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.emb_dim = 12;
  c.hidden_dim = 16;
  c.cls_emb_dim = 12;
  c.cls_hidden_dim = 12;
  c.batch_size = 4;
  c.min_summary_len = 0;
  c.max_decode_len = 40;
  c.decode_mode = "greedy";
  c.seed = 5;
  return c;
}

struct Fixture {
  std::vector<NewsPair> pairs = synth_generate(SynthConfig{31, 60, 0.1, 0.6});
  Vocabulary vocab = build_vocab(pairs, VocabMode::min_count(2));
  std::vector<PreparedExample> examples = prepare_examples(pairs, vocab);
};

std::vector<double> smoothed(const std::vector<BatchResult>& h, double alpha = 0.1) {
  std::vector<double> out;
  double ema = h.front().loss;
  for (const auto& b : h) {
    ema = (1 - alpha) * ema + alpha * b.loss;
    out.push_back(ema);
  }
  return out;
}

}  // namespace

TEST_CASE("pretraining") {
  Fixture f;
  RunConfig c = small_config();
  SUBCASE("zero steps keeps the initialization") {
    c.pretrain_steps = 0;
    auto r = pretrain(f.examples, f.vocab.size(), c);
    CHECK(r.steps == 0);
    CHECK(r.model.params().values_equal(init_summarizer(c, f.vocab.size()).params()));
  }
  SUBCASE("same seed and config give bit-identical weights") {
    c.pretrain_steps = 3;
    auto a = pretrain(f.examples, f.vocab.size(), c);
    auto b = pretrain(f.examples, f.vocab.size(), c);
    CHECK(weights_id(a.model.params()) == weights_id(b.model.params()));
    c.seed = 6;
    auto other = pretrain(f.examples, f.vocab.size(), c);
    CHECK(weights_id(a.model.params()) != weights_id(other.model.params()));
  }
  SUBCASE("empty corpus rejected") {
    CHECK_THROWS_AS(pretrain({}, f.vocab.size(), c), std::invalid_argument);
  }
}

TEST_CASE("pretraining reduces the loss on a toy corpus") {
  auto pairs = synth_generate(SynthConfig{12, 200, 0.1, 0.8});
  const Vocabulary vocab = build_vocab(pairs, VocabMode::min_count(2));
  const auto examples = prepare_examples(pairs, vocab);
  RunConfig c = small_config();
  c.pretrain_steps = 300;
  c.batch_size = 8;
  c.lr = 1.0;  // 0.15 plateaus near the unigram loss at this size
  const auto r = pretrain(examples, vocab.size(), c);
  const auto s = smoothed(r.history);
  MESSAGE("smoothed loss at step 10: " << s[9] << ", at the end: " << s.back());
  CHECK(s.back() <= 0.7 * s[9]);
}

TEST_CASE("auto labelling") {
  Fixture f;
  RunConfig c = small_config();
  const Vocabulary cv = build_vocab(f.pairs, VocabMode::min_count(2), VocabSource::SummaryOnly);
  const Classifier cls = init_classifier(c, cv.size());

  auto all = auto_label_corpus(cls, cv, f.pairs, 0.0);
  CHECK(all.rest.empty());
  CHECK(all.parallel.size() + all.sequence.size() == f.pairs.size());
  CHECK(all.scores.size() == f.pairs.size());

  auto none = auto_label_corpus(cls, cv, f.pairs, 1.0 + 1e-9);
  CHECK(none.parallel.empty());
  CHECK(none.sequence.empty());
  CHECK(none.rest.size() == f.pairs.size());

  auto mid = auto_label_corpus(cls, cv, f.pairs, 0.5 + 1e-4);
  std::multiset<std::string> ids;
  for (const auto* part : {&mid.parallel, &mid.sequence, &mid.rest})
    for (const auto& p : *part) ids.insert(p.id);
  std::multiset<std::string> expected;
  for (const auto& p : f.pairs) expected.insert(p.id);
  CHECK(ids == expected);
  for (const auto& p : mid.parallel) CHECK(p.label == StructureLabel::Parallel);
  for (const auto& p : mid.sequence) CHECK(p.label == StructureLabel::Sequence);
}

TEST_CASE("fine-tuning") {
  Fixture f;
  RunConfig c = small_config();
  c.pretrain_steps = 4;
  auto base = pretrain(f.examples, f.vocab.size(), c);
  std::vector<PreparedExample> par, seq;
  for (std::size_t i = 0; i < f.pairs.size(); ++i)
    (project(*f.pairs[i].label) == Structure::Parallel ? par : seq).push_back(f.examples[i]);

  SUBCASE("zero steps keeps the base") {
    c.finetune_steps = 0;
    auto r = finetune(base.model, base.steps, par, Structure::Parallel, c);
    CHECK(r.stage.model.params().values_equal(base.model.params()));
    CHECK(r.provenance.base_weights == weights_id(base.model.params()));
    CHECK(r.provenance.base_steps == 4);
  }
  SUBCASE("the two structures diverge from a shared base") {
    c.finetune_steps = 2;
    auto p = finetune(base.model, base.steps, par, Structure::Parallel, c);
    auto s = finetune(base.model, base.steps, seq, Structure::Sequence, c);
    CHECK(p.provenance.base_weights == s.provenance.base_weights);
    CHECK(weights_id(p.stage.model.params()) != weights_id(s.stage.model.params()));
    CHECK(p.stage.steps == 6);
  }
  SUBCASE("optimizer state restarts") {
    c.finetune_steps = 1;
    auto p = finetune(base.model, base.steps, par, Structure::Parallel, c);
    // after one step every accumulator is 0.1 + g^2 for that single gradient
    const auto& acc = p.stage.model.params().get("pointer.b_g").adagrad_acc;
    const auto& base_acc = base.model.params().get("pointer.b_g").adagrad_acc;
    CHECK(acc[0] < base_acc[0]);
  }
  SUBCASE("empty subset asks for a lower tau") {
    CHECK_THROWS_WITH_AS(finetune(base.model, base.steps, {}, Structure::Sequence, c), doctest::Contains("tau"),
                         std::invalid_argument);
  }
}

TEST_CASE("structure-aware summarization") {
  Fixture f;
  RunConfig c = small_config();
  const Vocabulary cv = build_vocab(f.pairs, VocabMode::min_count(2), VocabSource::ArticleOnly);
  Summarizer par = init_summarizer(c, f.vocab.size());
  RunConfig c2 = c;
  c2.seed = 99;
  Summarizer seq = init_summarizer(c2, f.vocab.size());
  StructureAwareModel model{init_classifier(c, cv.size()), cv, c.max_src_len, f.vocab, par, seq};
  const DecodeConfig dc = decode_config(c);

  SUBCASE("routing agrees with the standalone classifier") {
    std::set<Structure> seen;
    // bias the heads a little so both routes occur
    model.article_classifier.params().get("head.W_s").value.data()[0] = 3.0f;
    for (const auto& p : f.pairs) {
      const auto r = structure_aware_summarize(model, p.article, dc);
      const auto direct = model.article_classifier.classify(
          classifier_ids(p, ClassifierInput::Article, cv, c.max_src_len));
      CHECK(r.chosen == direct.label);
      CHECK(r.scores.p_parallel == direct.p_parallel);
      CHECK(r.summary.size() == 3);
      const Summarizer& used = r.chosen == Structure::Parallel ? par : seq;
      const auto expected = decode(used, prepare_source(p.article, f.vocab), dc);
      CHECK(r.summary == expected.sentences);
      seen.insert(r.chosen);
    }
    CHECK(seen.size() == 2);
  }
  SUBCASE("zero classifier always routes to the parallel model") {
    for (Parameter* p : model.article_classifier.params().all()) p->value.fill(0.0f);
    for (std::size_t i = 0; i < 10; ++i) {
      const auto r = structure_aware_summarize(model, f.pairs[i].article, dc);
      CHECK(r.chosen == Structure::Parallel);
      CHECK(r.summary == decode(par, prepare_source(f.pairs[i].article, f.vocab), dc).sentences);
    }
  }
  CHECK_THROWS_AS(structure_aware_summarize(model, {}, dc), std::invalid_argument);
}

TEST_CASE("manifest") {
  Manifest m;
  Manifest::Stage s;
  s.name = "pretrain";
  s.checkpoint = "base.ckpt";
  s.config_hash = "ab";
  s.weights_id = "cd";
  s.steps = 10;
  m.record(s);
  Manifest::Stage ft = s;
  ft.name = "finetune-parallel";
  ft.base_weights = "cd";
  ft.counts["subset"] = 7;
  m.record(ft);
  s.steps = 20;
  m.record(s);
  const Manifest back = Manifest::from_json(m.to_json());
  REQUIRE(back.stages().size() == 2);
  CHECK(back.find("pretrain")->steps == 20);
  CHECK(back.find("finetune-parallel")->base_weights == "cd");
  CHECK(back.find("finetune-parallel")->counts.at("subset") == 7);
  CHECK(back.find("missing") == nullptr);
  CHECK_THROWS(Manifest::from_json("{}"));
}
