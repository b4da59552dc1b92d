#include "b3s/cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "b3s/checkpoint.hpp"
#include "b3s/classifier.hpp"
#include "b3s/config.hpp"
#include "b3s/eval.hpp"
#include "b3s/pipeline.hpp"
#include "json.hpp"

namespace b3s::cli {

using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Context {
  std::ostream& out;
  std::shared_ptr<spdlog::logger> log;
  RunConfig config;
  ConfigHash hash{};
};

spdlog::level::level_enum level_from_env() {
  const char* v = std::getenv("B3SUM_LOG");
  if (!v || !*v) return spdlog::level::info;
  auto level = spdlog::level::from_str(v);
  // from_str maps unknown names to off
  if (level == spdlog::level::off && std::string(v) != "off") return spdlog::level::info;
  return level;
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg = load_config(c.config_path);
  std::map<std::string, std::string> kv;
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + o + "'");
    kv[o.substr(0, eq)] = o.substr(eq + 1);
  }
  if (c.seed) kv["seed"] = std::to_string(*c.seed);
  return apply_overrides(cfg, kv);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path);
}

// JSON results go to --out when given, else to stdout.
void emit(Context& ctx, const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    ctx.out << text << '\n';
  } else {
    write_text_file(out_path, text + "\n");
  }
}

std::vector<NewsPair> read_corpus(const std::string& path, Context& ctx) {
  auto r = load_jsonl(path, false);
  for (const auto& e : r.errors) ctx.log->warn("{}: line {}: {}", path, e.line, e.message);
  if (!r.errors.empty())
    throw std::runtime_error(path + ": " + std::to_string(r.errors.size()) + " malformed line(s)");
  ctx.log->info("read {} pairs from {}", r.pairs.size(), path);
  return std::move(r.pairs);
}

Checkpoint read_checkpoint(const std::string& path, Context& ctx) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config_hash != ctx.hash)
    ctx.log->warn("checkpoint {} was written under a different config (hash {} vs current {})", path,
                  to_hex(ck.config_hash).substr(0, 12), to_hex(ctx.hash).substr(0, 12));
  return ck;
}

Structure parse_label_option(const std::string& s) {
  try {
    return parse_structure(s);
  } catch (const std::invalid_argument&) {
    throw UsageError("--label must be parallel or sequence, got '" + s + "'");
  }
}

ClassifierInput parse_input_kind(const std::string& s) {
  if (s == "summaries") return ClassifierInput::Summary;
  if (s == "articles") return ClassifierInput::Article;
  throw UsageError("--input must be summaries or articles, got '" + s + "'");
}

// System or reference summaries: any JSONL object with "id" and a
// three-string "summary"; "label" is kept when present. Empty sentences
// are allowed here since decoded output may be padded.
struct SummaryRecord {
  std::string id;
  eval::Sentences sentences;
  std::optional<StructureLabel> label;
};

std::vector<SummaryRecord> read_summaries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<SummaryRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) + ": " + why);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) fail("missing string field 'id'");
    if (!j.contains("summary") || !j["summary"].is_array() || j["summary"].size() != 3)
      fail("field 'summary' must be an array of 3 strings");
    SummaryRecord r;
    r.id = j["id"].get<std::string>();
    for (std::size_t k = 0; k < 3; ++k) {
      if (!j["summary"][k].is_string()) fail("summary sentence " + std::to_string(k + 1) + " is not a string");
      r.sentences[k] = tokenize(j["summary"][k].get<std::string>());
    }
    if (j.contains("label")) {
      try {
        r.label = parse_label(j["label"].get<std::string>());
      } catch (const std::exception& e) {
        fail(e.what());
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Pairs system and reference records by id, in reference order.
std::vector<std::pair<const SummaryRecord*, const SummaryRecord*>> match(const std::vector<SummaryRecord>& sys,
                                                                          const std::vector<SummaryRecord>& ref) {
  std::map<std::string, const SummaryRecord*> by_id;
  for (const auto& s : sys)
    if (!by_id.emplace(s.id, &s).second) throw std::runtime_error("duplicate system id '" + s.id + "'");
  std::vector<std::pair<const SummaryRecord*, const SummaryRecord*>> out;
  for (const auto& r : ref) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw std::runtime_error("no system summary for reference id '" + r.id + "'");
    out.emplace_back(it->second, &r);
  }
  if (out.size() != sys.size()) throw std::runtime_error("system file has ids missing from the reference file");
  if (out.empty()) throw std::runtime_error("no documents to score");
  return out;
}

json triple_json(const eval::RougeTriple& t) { return {{"rouge1", t.r1}, {"rouge2", t.r2}, {"rougeL", t.rl}}; }

json history_json(const std::vector<BatchResult>& h) {
  json j = json::object();
  if (h.empty()) return j;
  const std::size_t tail = std::min<std::size_t>(h.size(), 10);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < tail; ++i) {
    first += h[i].loss;
    last += h[h.size() - 1 - i].loss;
  }
  j["first_loss_mean"] = first / double(tail);
  j["last_loss_mean"] = last / double(tail);
  return j;
}

StepCallback progress_logger(Context& ctx, const char* stage) {
  return [&ctx, stage](const TrainProgress& p) {
    if (p.step % 50 == 0)
      ctx.log->info("{} step {} epoch {} loss {:.4f}{}", stage, p.step, p.epoch, p.batch.loss,
                    p.batch.coverage_active ? " (coverage)" : "");
    else
      ctx.log->debug("{} step {} loss {:.4f}", stage, p.step, p.batch.loss);
  };
}

json class_report_json(const eval::ClassificationReport& r) { return json::parse(r.to_json()); }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto log = std::make_shared<spdlog::logger>("b3sum", sink);
  log->set_pattern("[%l] %v");
  log->set_level(level_from_env());

  CLI::App app{"b3sum: structure-aware three-sentence summarization"};
  app.name("b3sum");
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "flat JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "config override key=value (repeatable)");
    sub->add_option("--seed", common.seed, "overrides config seed");
  };
  std::function<void(Context&)> action;

  // gen-synth
  std::size_t n = 100;
  double oov_rate = 0.0, mix = 0.8;
  std::string out_path;
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic labelled corpus (JSONL)");
  add_common(gen);
  gen->add_option("--n", n, "number of pairs")->check(CLI::PositiveNumber);
  gen->add_option("--oov-rate", oov_rate, "fraction of invented entity names")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--mix", mix, "fraction of parallel summaries")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--out", out_path, "corpus path (default stdout)");
  gen->callback([&] {
    action = [&](Context& ctx) {
      auto pairs = synth_generate(SynthConfig{ctx.config.seed, n, oov_rate, mix});
      std::ostringstream os;
      for (const auto& p : pairs) os << serialize_pair(p) << '\n';
      if (out_path.empty())
        ctx.out << os.str();
      else
        write_text_file(out_path, os.str());
      ctx.log->info("generated {} pairs", pairs.size());
    };
  });

  // build-vocab
  std::string corpus_path, source = "all";
  std::optional<std::size_t> min_count, cap;
  auto* bv = app.add_subcommand("build-vocab", "build a vocabulary file from a corpus");
  add_common(bv);
  bv->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  bv->add_option("--out", out_path, "vocabulary path")->required();
  auto* mc = bv->add_option("--min-count", min_count, "keep tokens seen at least k times");
  bv->add_option("--cap", cap, "keep the most frequent n tokens (default vocab_size)")->excludes(mc);
  bv->add_option("--source", source, "all, summary or article")->check(CLI::IsMember({"all", "summary", "article"}));
  bv->callback([&] {
    action = [&](Context& ctx) {
      const auto pairs = read_corpus(corpus_path, ctx);
      if (pairs.empty()) throw std::runtime_error("corpus is empty");
      const VocabMode mode = min_count ? VocabMode::min_count(*min_count) : VocabMode::cap(cap.value_or(ctx.config.vocab_size));
      const VocabSource src = source == "summary"   ? VocabSource::SummaryOnly
                              : source == "article" ? VocabSource::ArticleOnly
                                                    : VocabSource::ArticleAndSummary;
      const Vocabulary v = build_vocab(pairs, mode, src);
      v.save(out_path);
      ctx.out << json{{"vocab", out_path}, {"size", v.size()}}.dump() << '\n';
    };
  });

  // preprocess
  auto* pp = app.add_subcommand("preprocess", "truncate articles and drop short summaries");
  add_common(pp);
  pp->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  pp->add_option("--out", out_path, "output corpus path")->required();
  pp->callback([&] {
    action = [&](Context& ctx) {
      const auto r = preprocess(read_corpus(corpus_path, ctx), preprocess_config(ctx.config));
      write_jsonl(out_path, r.pairs);
      ctx.out << json{{"input", r.report.input},
                      {"truncated", r.report.truncated},
                      {"dropped", r.report.dropped},
                      {"kept", r.report.kept}}
                     .dump()
              << '\n';
    };
  });

  // pretrain
  std::string vocab_path, manifest_path;
  std::optional<std::size_t> steps;
  auto* pt = app.add_subcommand("pretrain", "train the shared base summarizer on all pairs");
  add_common(pt);
  pt->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  pt->add_option("--vocab", vocab_path)->required()->check(CLI::ExistingFile);
  pt->add_option("--out", out_path, "checkpoint path")->required();
  pt->add_option("--steps", steps, "overrides pretrain_steps");
  pt->add_option("--manifest", manifest_path, "pipeline manifest to update");
  pt->callback([&] {
    action = [&](Context& ctx) {
      if (steps) {
        ctx.config.pretrain_steps = *steps;
        ctx.hash = config_hash(ctx.config);
      }
      const Vocabulary vocab = Vocabulary::load(vocab_path);
      const auto pairs = read_corpus(corpus_path, ctx);
      const auto examples = prepare_examples(pairs, vocab);
      auto r = pretrain(examples, vocab.size(), ctx.config, progress_logger(ctx, "pretrain"));
      save_checkpoint(r.model.params(), ctx.hash, out_path);
      const std::string wid = weights_id(r.model.params());
      if (!manifest_path.empty()) {
        Manifest m = Manifest::load(manifest_path);
        m.record({"pretrain", out_path, to_hex(ctx.hash), wid, r.steps, std::nullopt, {{"pairs", pairs.size()}}});
        m.save(manifest_path);
      }
      json j{{"checkpoint", out_path}, {"steps", r.steps}, {"weights_id", wid}, {"config_hash", to_hex(ctx.hash)}};
      j["loss"] = history_json(r.history);
      ctx.out << j.dump() << '\n';
    };
  });

  // train-classifier
  std::string input_kind = "summaries", heldout_path, vocab_out;
  auto* tc = app.add_subcommand("train-classifier", "train the structure classifier");
  add_common(tc);
  tc->add_option("--corpus", corpus_path, "labelled training pairs")->required()->check(CLI::ExistingFile);
  tc->add_option("--input", input_kind, "summaries or articles")->check(CLI::IsMember({"summaries", "articles"}));
  tc->add_option("--heldout", heldout_path, "labelled held-out pairs")->check(CLI::ExistingFile);
  tc->add_option("--vocab", vocab_path, "existing classifier vocabulary")->check(CLI::ExistingFile);
  tc->add_option("--vocab-out", vocab_out, "where to save a vocabulary built from --corpus");
  tc->add_option("--out", out_path, "checkpoint path")->required();
  tc->callback([&] {
    action = [&](Context& ctx) {
      const ClassifierInput kind = parse_input_kind(input_kind);
      const auto pairs = read_corpus(corpus_path, ctx);
      Vocabulary vocab;
      if (!vocab_path.empty()) {
        vocab = Vocabulary::load(vocab_path);
      } else {
        if (vocab_out.empty()) throw UsageError("train-classifier needs --vocab or --vocab-out");
        vocab = build_vocab(pairs, VocabMode::min_count(ctx.config.cls_min_count),
                            kind == ClassifierInput::Summary ? VocabSource::SummaryOnly : VocabSource::ArticleOnly);
        vocab.save(vocab_out);
      }
      const auto train = labeled_examples(pairs, kind, vocab, ctx.config.max_src_len);
      std::vector<LabeledExample> held;
      if (!heldout_path.empty())
        held = labeled_examples(read_corpus(heldout_path, ctx), kind, vocab, ctx.config.max_src_len);
      Classifier model = init_classifier(ctx.config, vocab.size());
      json epochs = json::array();
      train_classifier(model, train, held, classifier_train_config(ctx.config), [&](const EpochReport& e) {
        ctx.log->info("epoch {} loss {:.4f}{}", e.epoch, e.train_loss,
                      e.has_heldout ? fmt::format(" held-out macro-F1 {:.3f}", e.heldout.macro_f1) : "");
        json je{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        if (e.has_heldout) je["heldout"] = class_report_json(e.heldout);
        epochs.push_back(je);
      });
      save_checkpoint(model.params(), ctx.hash, out_path);
      ctx.out << json{{"checkpoint", out_path}, {"input", input_kind}, {"vocab_size", vocab.size()}, {"epochs", epochs}}
                     .dump()
              << '\n';
    };
  });

  // tune-undersample
  auto* tu = app.add_subcommand("tune-undersample", "search majority-class sampling ratios for precision");
  add_common(tu);
  tu->add_option("--corpus", corpus_path, "labelled training pairs")->required()->check(CLI::ExistingFile);
  tu->add_option("--heldout", heldout_path, "labelled held-out pairs")->required()->check(CLI::ExistingFile);
  tu->add_option("--input", input_kind, "summaries or articles")->check(CLI::IsMember({"summaries", "articles"}));
  tu->add_option("--vocab", vocab_path, "existing classifier vocabulary")->check(CLI::ExistingFile);
  tu->add_option("--vocab-out", vocab_out, "where to save a vocabulary built from --corpus");
  tu->add_option("--out", out_path, "checkpoint path of the chosen model")->required();
  tu->callback([&] {
    action = [&](Context& ctx) {
      const ClassifierInput kind = parse_input_kind(input_kind);
      const auto pairs = read_corpus(corpus_path, ctx);
      Vocabulary vocab;
      if (!vocab_path.empty()) {
        vocab = Vocabulary::load(vocab_path);
      } else {
        if (vocab_out.empty()) throw UsageError("tune-undersample needs --vocab or --vocab-out");
        vocab = build_vocab(pairs, VocabMode::min_count(ctx.config.cls_min_count),
                            kind == ClassifierInput::Summary ? VocabSource::SummaryOnly : VocabSource::ArticleOnly);
        vocab.save(vocab_out);
      }
      const auto train = labeled_examples(pairs, kind, vocab, ctx.config.max_src_len);
      const auto held = labeled_examples(read_corpus(heldout_path, ctx), kind, vocab, ctx.config.max_src_len);
      UndersampleConfig uc;
      uc.target_precision = ctx.config.target_precision;
      uc.train = classifier_train_config(ctx.config);
      json trials = json::array();
      auto r = undersample_tune(ClassifierDims{vocab.size(), ctx.config.cls_emb_dim, ctx.config.cls_hidden_dim}, train,
                                held, uc, ctx.config.seed, [&](const UndersampleTrial& t) {
                                  ctx.log->info("ratio {:.1f}: precision {:.3f} / {:.3f}", t.ratio,
                                                t.heldout.parallel.precision, t.heldout.sequence.precision);
                                  trials.push_back({{"ratio", t.ratio},
                                                    {"majority_kept", t.majority_kept},
                                                    {"minority", t.minority},
                                                    {"qualifies", t.qualifies},
                                                    {"heldout", class_report_json(t.heldout)}});
                                });
      if (!r.qualified) ctx.log->warn("no ratio reached precision {} for both classes", uc.target_precision);
      save_checkpoint(r.model.params(), ctx.hash, out_path);
      ctx.out << json{{"checkpoint", out_path},
                      {"ratio", r.ratio},
                      {"qualified", r.qualified},
                      {"majority", std::string(to_string(r.majority))},
                      {"trials", trials}}
                     .dump()
              << '\n';
    };
  });

  // auto-label
  std::string classifier_path, out_parallel, out_sequence, out_rest;
  std::optional<double> tau;
  auto* al = app.add_subcommand("auto-label", "split pairs by the summary classifier's confident labels");
  add_common(al);
  al->add_option("--classifier", classifier_path, "summary classifier checkpoint")->required()->check(CLI::ExistingFile);
  al->add_option("--vocab", vocab_path, "classifier vocabulary")->required()->check(CLI::ExistingFile);
  al->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  al->add_option("--tau", tau, "confidence threshold (overrides config)");
  al->add_option("--out-parallel", out_parallel)->required();
  al->add_option("--out-sequence", out_sequence)->required();
  al->add_option("--out-rest", out_rest);
  al->add_option("--out", out_path, "JSON counts (default stdout)");
  al->callback([&] {
    action = [&](Context& ctx) {
      const double t = tau.value_or(ctx.config.tau);
      const Classifier cls(read_checkpoint(classifier_path, ctx).params);
      const Vocabulary vocab = Vocabulary::load(vocab_path);
      const auto pairs = read_corpus(corpus_path, ctx);
      const auto r = auto_label_corpus(cls, vocab, pairs, t);
      write_jsonl(out_parallel, r.parallel);
      write_jsonl(out_sequence, r.sequence);
      if (!out_rest.empty()) write_jsonl(out_rest, r.rest);
      ctx.log->info("labelled {} parallel, {} sequence, {} below tau", r.parallel.size(), r.sequence.size(),
                    r.rest.size());
      emit(ctx, out_path,
           json{{"tau", t},
                {"parallel", r.parallel.size()},
                {"sequence", r.sequence.size()},
                {"unlabelled", r.rest.size()},
                {"note", "pairs below tau are left unlabelled"}}
               .dump());
    };
  });

  // finetune
  std::string base_path, label_name;
  std::optional<std::size_t> base_steps;
  auto* ft = app.add_subcommand("finetune", "fine-tune a copy of the base model on one structure's subset");
  add_common(ft);
  ft->add_option("--base", base_path, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--vocab", vocab_path, "summarizer vocabulary")->required()->check(CLI::ExistingFile);
  ft->add_option("--corpus", corpus_path, "the structure's subset")->required()->check(CLI::ExistingFile);
  ft->add_option("--label", label_name, "parallel or sequence")->required();
  ft->add_option("--out", out_path, "checkpoint path")->required();
  ft->add_option("--steps", steps, "overrides finetune_steps");
  ft->add_option("--base-steps", base_steps, "steps behind the base (default: from --manifest, else 0)");
  ft->add_option("--manifest", manifest_path, "pipeline manifest to read and update");
  ft->callback([&] {
    action = [&](Context& ctx) {
      const Structure label = parse_label_option(label_name);
      if (steps) {
        ctx.config.finetune_steps = *steps;
        ctx.hash = config_hash(ctx.config);
      }
      Manifest m = manifest_path.empty() ? Manifest{} : Manifest::load(manifest_path);
      std::size_t bsteps = 0;
      if (base_steps)
        bsteps = *base_steps;
      else if (const auto* s = m.find("pretrain"))
        bsteps = s->steps;
      const Summarizer base(read_checkpoint(base_path, ctx).params);
      const Vocabulary vocab = Vocabulary::load(vocab_path);
      const auto pairs = read_corpus(corpus_path, ctx);
      const auto examples = prepare_examples(pairs, vocab);
      const std::string stage = std::string("finetune-") + std::string(to_string(label));
      auto r = finetune(base, bsteps, examples, label, ctx.config, progress_logger(ctx, stage.c_str()));
      save_checkpoint(r.stage.model.params(), ctx.hash, out_path);
      const std::string wid = weights_id(r.stage.model.params());
      if (!manifest_path.empty()) {
        m.record({stage, out_path, to_hex(ctx.hash), wid, r.stage.steps, r.provenance.base_weights,
                  {{"subset", pairs.size()}}});
        m.save(manifest_path);
      }
      json j{{"checkpoint", out_path},
             {"label", std::string(to_string(label))},
             {"weights_id", wid},
             {"base_weights", r.provenance.base_weights},
             {"base_steps", r.provenance.base_steps},
             {"finetune_steps", r.provenance.finetune_steps}};
      j["loss"] = history_json(r.stage.history);
      ctx.out << j.dump() << '\n';
    };
  });

  // summarize
  std::string model_path, article_cls, cls_vocab, par_path, seq_path;
  auto* sm = app.add_subcommand("summarize", "write three-sentence summaries (JSONL)");
  add_common(sm);
  sm->add_option("--corpus", corpus_path, "articles to summarize")->required()->check(CLI::ExistingFile);
  sm->add_option("--vocab", vocab_path, "summarizer vocabulary")->required()->check(CLI::ExistingFile);
  auto* single = sm->add_option("--model", model_path, "one summarizer, no routing")->check(CLI::ExistingFile);
  auto* routed = sm->add_option("--article-classifier", article_cls)->check(CLI::ExistingFile);
  sm->add_option("--classifier-vocab", cls_vocab)->check(CLI::ExistingFile);
  sm->add_option("--parallel", par_path, "parallel sub-model")->check(CLI::ExistingFile);
  sm->add_option("--sequence", seq_path, "sequence sub-model")->check(CLI::ExistingFile);
  sm->add_option("--out", out_path, "output JSONL (default stdout)");
  single->excludes(routed);
  sm->callback([&] {
    action = [&](Context& ctx) {
      const Vocabulary vocab = Vocabulary::load(vocab_path);
      const auto pairs = read_corpus(corpus_path, ctx);
      const DecodeConfig dc = decode_config(ctx.config);
      std::ostringstream os;
      std::size_t padded = 0;
      auto line = [&](const NewsPair& p, const std::array<Tokens, 3>& s, json extra) {
        extra["id"] = p.id;
        extra["summary"] = {join(s[0]), join(s[1]), join(s[2])};
        os << extra.dump() << '\n';
      };
      if (!model_path.empty()) {
        const Summarizer model(read_checkpoint(model_path, ctx).params);
        for (const auto& p : pairs) {
          const Tokens src(p.article.begin(),
                           p.article.begin() + static_cast<std::ptrdiff_t>(std::min(p.article.size(), ctx.config.max_src_len)));
          const auto d = decode(model, prepare_source(src, vocab), dc);
          padded += d.padded;
          line(p, d.sentences, json{{"padded", d.padded}});
        }
      } else {
        if (article_cls.empty() || cls_vocab.empty() || par_path.empty() || seq_path.empty())
          throw UsageError(
              "summarize needs --model, or all of --article-classifier, --classifier-vocab, --parallel, --sequence");
        const StructureAwareModel model{Classifier(read_checkpoint(article_cls, ctx).params),
                                        Vocabulary::load(cls_vocab),
                                        ctx.config.max_src_len,
                                        vocab,
                                        Summarizer(read_checkpoint(par_path, ctx).params),
                                        Summarizer(read_checkpoint(seq_path, ctx).params)};
        for (const auto& p : pairs) {
          const auto r = structure_aware_summarize(model, p.article, dc);
          padded += r.padded;
          line(p, r.summary,
               json{{"label", std::string(to_string(to_label(r.chosen)))},
                    {"scores", {{"parallel", r.scores.p_parallel}, {"sequence", r.scores.p_sequence}}},
                    {"padded", r.padded}});
        }
      }
      if (padded) ctx.log->warn("{} of {} outputs had fewer than three sentences and were padded", padded, pairs.size());
      if (out_path.empty())
        ctx.out << os.str();
      else
        write_text_file(out_path, os.str());
    };
  });

  // evaluate / align-eval / report
  std::string system_path, reference_path, format = "text", per_doc;
  auto add_pair_opts = [&](CLI::App* sub) {
    sub->add_option("--system", system_path, "system summaries JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--reference", reference_path, "reference summaries JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_path, "JSON output (default stdout)");
  };
  auto* ev = app.add_subcommand("evaluate", "ROUGE-1/2/L F1 of whole summaries");
  add_common(ev);
  add_pair_opts(ev);
  ev->add_option("--per-doc", per_doc, "write per-document scores as JSONL");
  ev->callback([&] {
    action = [&](Context& ctx) {
      const auto sys = read_summaries(system_path), ref = read_summaries(reference_path);
      const auto pairs = match(sys, ref);
      eval::RougeTriple mean{};
      std::ostringstream docs;
      for (const auto& [s, r] : pairs) {
        const auto d = eval::score_document(s->sentences, r->sentences);
        mean.r1 += d.overall.r1;
        mean.r2 += d.overall.r2;
        mean.rl += d.overall.rl;
        json row = triple_json(d.overall);
        row["id"] = r->id;
        row["pattern"] = d.alignment.pattern();
        docs << row.dump() << '\n';
      }
      const double k = static_cast<double>(pairs.size());
      mean = {mean.r1 / k, mean.r2 / k, mean.rl / k};
      if (!per_doc.empty()) write_text_file(per_doc, docs.str());
      json j = triple_json(mean);
      j["documents"] = pairs.size();
      emit(ctx, out_path, j.dump());
    };
  });

  auto* ae = app.add_subcommand("align-eval", "pairwise sentence alignment and pattern histogram");
  add_common(ae);
  add_pair_opts(ae);
  ae->callback([&] {
    action = [&](Context& ctx) {
      const auto sys = read_summaries(system_path), ref = read_summaries(reference_path);
      const auto pairs = match(sys, ref);
      json docs = json::array();
      std::map<std::string, std::size_t> hist = {{"123", 0}, {"132", 0}, {"213", 0}, {"231", 0}, {"312", 0}, {"321", 0}};
      for (const auto& [s, r] : pairs) {
        const auto a = eval::pairwise_align(s->sentences, r->sentences);
        ++hist[a.pattern()];
        docs.push_back({{"id", r->id},
                        {"pattern", a.pattern()},
                        {"slot_rougeL", a.slot_rouge_l},
                        {"mean_rougeL", a.mean_rouge_l}});
      }
      json h = json::array();
      for (const auto& [p, c] : hist)
        h.push_back({{"pattern", p}, {"count", c}, {"percent", 100.0 * double(c) / double(pairs.size())}});
      emit(ctx, out_path, json{{"documents", docs}, {"patterns", h}}.dump());
    };
  });

  auto* rp = app.add_subcommand("report", "per-position breakdown by gold structure");
  add_common(rp);
  add_pair_opts(rp);
  rp->add_option("--format", format, "text, tsv or json")->check(CLI::IsMember({"text", "tsv", "json"}));
  rp->callback([&] {
    action = [&](Context& ctx) {
      const auto sys = read_summaries(system_path), ref = read_summaries(reference_path);
      std::vector<eval::DocumentResult> results;
      for (const auto& [s, r] : match(sys, ref)) {
        if (!r->label) throw std::runtime_error("reference '" + r->id + "' has no gold structure label");
        results.push_back({r->id, project(*r->label), eval::score_document(s->sentences, r->sentences)});
      }
      const auto rep = eval::breakdown_report(results);
      const std::string text = format == "json" ? rep.to_json() : format == "tsv" ? rep.to_tsv() : rep.to_text();
      if (out_path.empty())
        ctx.out << text << (text.ends_with('\n') ? "" : "\n");
      else
        write_text_file(out_path, text);
    };
  });

  // stats
  std::vector<std::string> split_specs;
  auto* st = app.add_subcommand("stats", "annotation label counts per split");
  add_common(st);
  st->add_option("--split", split_specs, "name=path of a labelled JSONL file (repeatable)")->required();
  st->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));
  st->add_option("--out", out_path, "output (default stdout)");
  st->callback([&] {
    action = [&](Context& ctx) {
      std::vector<eval::LabeledSplit> splits;
      for (const auto& spec : split_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--split expects name=path, got '" + spec + "'");
        auto r = load_jsonl(spec.substr(eq + 1), true);
        splits.push_back(eval::labeled_split(spec.substr(0, eq), r.pairs));
      }
      const auto table = eval::annotation_stats(splits);
      emit(ctx, out_path, format == "json" ? table.to_json() : table.to_text());
    };
  });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    Context ctx{out, log, resolve_config(common), {}};
    ctx.hash = config_hash(ctx.config);
    log->info("resolved config {}", to_json(ctx.config));
    log->info("config hash {}", to_hex(ctx.hash).substr(0, 12));
    action(ctx);
    log->flush();
    return kExitOk;
  } catch (const UsageError& e) {
    log->error("{}", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    log->error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return kExitRuntime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace b3s::cli
