#include "b3s/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace b3s {

using nlohmann::json;

Summarizer init_summarizer(const RunConfig& config, std::size_t vocab_size) {
  Summarizer m(SummarizerDims{vocab_size, config.emb_dim, config.hidden_dim});
  std::mt19937_64 rng(config.seed);
  m.init(rng);
  return m;
}

Classifier init_classifier(const RunConfig& config, std::size_t vocab_size) {
  Classifier c(ClassifierDims{vocab_size, config.cls_emb_dim, config.cls_hidden_dim});
  std::mt19937_64 rng(config.seed);
  c.init(rng);
  return c;
}

StageResult pretrain(std::span<const PreparedExample> corpus, std::size_t vocab_size, const RunConfig& config,
                     const StepCallback& on_step) {
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  StageResult r{init_summarizer(config, vocab_size), config.pretrain_steps, {}};
  // the shuffle stream is separate from the initialization stream
  r.history = train_steps(r.model, corpus, train_config(config), config.pretrain_steps, config.seed + 1, 0, on_step);
  return r;
}

AutoLabelResult auto_label_corpus(const Classifier& summary_classifier, const Vocabulary& classifier_vocab,
                                  const std::vector<NewsPair>& pairs, double tau) {
  AutoLabelResult r;
  r.scores.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto c = summary_classifier.classify(classifier_ids(p, ClassifierInput::Summary, classifier_vocab));
    r.scores.push_back(c);
    if (c.confidence() < tau) {
      r.rest.push_back(p);
      continue;
    }
    NewsPair labeled = p;
    labeled.label = to_label(c.label);
    (c.label == Structure::Parallel ? r.parallel : r.sequence).push_back(std::move(labeled));
  }
  return r;
}

FinetuneResult finetune(const Summarizer& base, std::size_t base_steps, std::span<const PreparedExample> subset,
                        Structure label, const RunConfig& config, const StepCallback& on_step) {
  if (subset.empty())
    throw std::invalid_argument(std::string("finetune: the ") + std::string(to_string(label)) +
                                " subset is empty; lower tau so the classifier labels more pairs");
  FinetuneResult r{{base, base_steps + config.finetune_steps, {}}, {}};
  r.stage.model.params().reset_optimizer();
  r.provenance = Provenance{weights_id(base.params()), base_steps, config.finetune_steps, label};
  const std::uint64_t stream = config.seed + 2 + static_cast<std::uint64_t>(label);
  r.stage.history = train_steps(r.stage.model, subset, finetune_config(config), config.finetune_steps, stream,
                                base_steps, on_step);
  return r;
}

RoutedSummary structure_aware_summarize(const StructureAwareModel& model, const Tokens& article,
                                        const DecodeConfig& decode_cfg) {
  if (article.empty()) throw std::invalid_argument("structure_aware_summarize: empty article");
  NewsPair as_pair;
  as_pair.article = article;
  RoutedSummary out;
  out.scores = model.article_classifier.classify(
      classifier_ids(as_pair, ClassifierInput::Article, model.classifier_vocab, model.max_src_len));
  out.chosen = out.scores.label;
  const Summarizer& sub = out.chosen == Structure::Parallel ? model.parallel_model : model.sequence_model;
  const Tokens source(article.begin(), article.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(article.size(), model.max_src_len)));
  const PreparedExample ex = prepare_source(source, model.summarizer_vocab);
  DecodeResult d = decode(sub, ex, decode_cfg);
  out.summary = std::move(d.sentences);
  out.padded = d.padded;
  out.truncated = d.truncated;
  return out;
}

void Manifest::record(const Stage& stage) {
  for (auto& s : stages_) {
    if (s.name == stage.name) {
      s = stage;
      return;
    }
  }
  stages_.push_back(stage);
}

const Manifest::Stage* Manifest::find(const std::string& name) const {
  for (const auto& s : stages_)
    if (s.name == name) return &s;
  return nullptr;
}

std::string Manifest::to_json() const {
  json j;
  j["stages"] = json::array();
  for (const auto& s : stages_) {
    json e{{"stage", s.name},         {"checkpoint", s.checkpoint}, {"config_hash", s.config_hash},
           {"weights_id", s.weights_id}, {"steps", s.steps},       {"counts", s.counts}};
    if (s.base_weights) e["base_weights"] = *s.base_weights;
    j["stages"].push_back(e);
  }
  return j.dump(2);
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    for (const auto& e : j.at("stages")) {
      Stage s;
      s.name = e.at("stage").get<std::string>();
      s.checkpoint = e.value("checkpoint", "");
      s.config_hash = e.value("config_hash", "");
      s.weights_id = e.value("weights_id", "");
      s.steps = e.value("steps", std::size_t{0});
      if (e.contains("base_weights")) s.base_weights = e["base_weights"].get<std::string>();
      if (e.contains("counts")) s.counts = e["counts"].get<std::map<std::string, std::size_t>>();
      m.stages_.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed pipeline manifest: ") + e.what());
  }
  return m;
}

void Manifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << to_json() << '\n';
}

Manifest Manifest::load(const std::string& path) {
  if (!std::filesystem::exists(path)) return {};
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace b3s
