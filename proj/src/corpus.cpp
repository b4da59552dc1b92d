#include "b3s/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace b3s {

using nlohmann::json;

std::string_view to_string(StructureLabel label) {
  switch (label) {
    case StructureLabel::Parallel: return "parallel";
    case StructureLabel::ParallelEnumeration: return "parallel_enum";
    case StructureLabel::Sequence: return "sequence";
    case StructureLabel::SequenceSegmented: return "sequence_seg";
  }
  return "parallel";
}

std::string_view to_string(Structure s) { return s == Structure::Parallel ? "parallel" : "sequence"; }

StructureLabel parse_label(std::string_view text) {
  if (text == "parallel") return StructureLabel::Parallel;
  if (text == "parallel_enum") return StructureLabel::ParallelEnumeration;
  if (text == "sequence") return StructureLabel::Sequence;
  if (text == "sequence_seg") return StructureLabel::SequenceSegmented;
  throw std::invalid_argument("unknown structure label '" + std::string(text) + "'");
}

Structure parse_structure(std::string_view text) { return project(parse_label(text)); }

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

NewsPair parse_pair(std::string_view json_line) {
  json j;
  try {
    j = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");

  auto require_string = [&](const char* key) -> std::string {
    if (!j.contains(key)) throw std::invalid_argument(std::string("missing required field '") + key + "'");
    if (!j[key].is_string()) throw std::invalid_argument(std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
  };

  NewsPair p;
  p.id = require_string("id");
  p.article = tokenize(require_string("article"));
  if (p.article.empty()) throw std::invalid_argument("article is empty");

  if (!j.contains("summary")) throw std::invalid_argument("missing required field 'summary'");
  const auto& s = j["summary"];
  if (!s.is_array()) throw std::invalid_argument("field 'summary' must be an array of 3 strings");
  if (s.size() != 3)
    throw std::invalid_argument("summary has " + std::to_string(s.size()) + " sentences, expected 3");
  for (std::size_t k = 0; k < 3; ++k) {
    if (!s[k].is_string()) throw std::invalid_argument("summary sentence " + std::to_string(k + 1) + " is not a string");
    p.summary[k] = tokenize(s[k].get<std::string>());
    if (p.summary[k].empty())
      throw std::invalid_argument("summary sentence " + std::to_string(k + 1) + " is empty");
  }

  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_string()) throw std::invalid_argument("field 'label' must be a string");
    p.label = parse_label(j["label"].get<std::string>());
  }
  if (j.contains("category") && !j["category"].is_null()) {
    if (!j["category"].is_string()) throw std::invalid_argument("field 'category' must be a string");
    p.category = j["category"].get<std::string>();
  }
  return p;
}

std::string serialize_pair(const NewsPair& pair) {
  json j;
  j["id"] = pair.id;
  j["article"] = join(pair.article);
  j["summary"] = json::array({join(pair.summary[0]), join(pair.summary[1]), join(pair.summary[2])});
  if (pair.label) j["label"] = std::string(to_string(*pair.label));
  if (pair.category) j["category"] = *pair.category;
  return j.dump();
}

LoadResult load_jsonl(const std::string& path, bool strict) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  LoadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      result.pairs.push_back(parse_pair(line));
    } catch (const std::invalid_argument& e) {
      if (strict) throw CorpusError(lineno, e.what());
      result.errors.push_back({lineno, e.what()});
    }
  }
  return result;
}

void write_jsonl(const std::string& path, const std::vector<NewsPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& p : pairs) out << serialize_pair(p) << '\n';
}

PreprocessResult preprocess(const std::vector<NewsPair>& pairs, const PreprocessConfig& config) {
  PreprocessResult r;
  r.report.input = pairs.size();
  for (const auto& p : pairs) {
    if (p.summary_length() < config.min_summary_len) {
      ++r.report.dropped;
      continue;
    }
    NewsPair q = p;
    if (q.article.size() > config.max_src_len) {
      q.article.resize(config.max_src_len);
      ++r.report.truncated;
    }
    r.pairs.push_back(std::move(q));
  }
  r.report.kept = r.pairs.size();
  return r;
}

// ---------------------------------------------------------------------------
// Vocabulary

const std::array<std::string, Vocabulary::kNumSpecials>& Vocabulary::specials() {
  static const std::array<std::string, kNumSpecials> names = {"<pad>", "<unk>", "<s>", "</s>", "<sb>"};
  return names;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& content_tokens) {
  tokens_.assign(specials().begin(), specials().end());
  for (const auto& t : content_tokens) {
    if (t.empty() || std::any_of(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); }))
      throw std::invalid_argument("vocabulary token must be nonempty and whitespace-free");
    tokens_.push_back(t);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], i).second) throw std::invalid_argument("duplicate vocabulary token: " + tokens_[i]);
  }
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < kNumSpecials || !std::equal(specials().begin(), specials().end(), lines.begin()))
    throw std::runtime_error("vocabulary file " + path + " does not start with the special tokens");
  return Vocabulary(std::vector<std::string>(lines.begin() + kNumSpecials, lines.end()));
}

Vocabulary build_vocab(const std::vector<NewsPair>& pairs, VocabMode mode, VocabSource source) {
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> stats;  // count, first seen
  std::size_t order = 0;
  std::unordered_set<std::string> special_set(Vocabulary::specials().begin(), Vocabulary::specials().end());
  auto count = [&](const Tokens& toks) {
    for (const auto& t : toks) {
      if (special_set.count(t)) continue;
      auto [it, inserted] = stats.try_emplace(t, 0, order);
      if (inserted) ++order;
      ++it->second.first;
    }
  };
  for (const auto& p : pairs) {
    if (source != VocabSource::SummaryOnly) count(p.article);
    if (source != VocabSource::ArticleOnly)
      for (const auto& s : p.summary) count(s);
  }
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(stats.begin(), stats.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  std::vector<std::string> keep;
  for (const auto& [tok, st] : ranked) {
    if (mode.kind == VocabMode::Kind::Cap) {
      if (keep.size() >= mode.value) break;
    } else if (st.first < mode.value) {
      break;
    }
    keep.push_back(tok);
  }
  return Vocabulary(keep);
}

// ---------------------------------------------------------------------------
// Splits

SplitSizes default_split_sizes(std::size_t n) {
  auto part = [n](double ratio) {
    auto k = static_cast<std::size_t>(static_cast<double>(n) * ratio + 0.5);
    if (k == 0 && n >= 3) k = 1;
    return k;
  };
  constexpr double kHeldOutRatio = 1200.0 / 214120.0;
  SplitSizes s;
  s.dev = part(kHeldOutRatio);
  s.test = part(kHeldOutRatio);
  s.train = n - std::min(n, s.dev + s.test);
  return s;
}

Splits split(const std::vector<NewsPair>& pairs, SplitSizes sizes, std::uint64_t seed) {
  const std::size_t total = sizes.train + sizes.dev + sizes.test;
  if (total > pairs.size())
    throw std::invalid_argument("split sizes (" + std::to_string(total) + ") exceed corpus size (" +
                                std::to_string(pairs.size()) + ")");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Splits out;
  std::size_t k = 0;
  for (; k < sizes.train; ++k) out.train.push_back(pairs[order[k]]);
  for (; k < sizes.train + sizes.dev; ++k) out.dev.push_back(pairs[order[k]]);
  for (; k < total; ++k) out.test.push_back(pairs[order[k]]);
  return out;
}

Splits split_by_ids(const std::vector<NewsPair>& pairs, const std::vector<std::string>& train_ids,
                    const std::vector<std::string>& dev_ids, const std::vector<std::string>& test_ids) {
  std::unordered_map<std::string, const NewsPair*> by_id;
  for (const auto& p : pairs) by_id.emplace(p.id, &p);
  std::unordered_set<std::string> used;
  auto take = [&](const std::vector<std::string>& ids, std::vector<NewsPair>& dst) {
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw std::invalid_argument("split id not in corpus: " + id);
      if (!used.insert(id).second) throw std::invalid_argument("split id listed twice: " + id);
      dst.push_back(*it->second);
    }
  };
  Splits out;
  take(train_ids, out.train);
  take(dev_ids, out.dev);
  take(test_ids, out.test);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

const std::vector<std::string> kActors = {
    "tanaka", "suzuki", "sato",   "yamada",   "kobayashi", "ito",    "nakamura", "watanabe", "kato",  "yoshida",
    "yamamoto", "sasaki", "matsumoto", "inoue", "kimura",  "hayashi", "shimizu",  "yamaguchi", "mori", "abe"};
const std::vector<std::string> kVenues = {"stadium", "museum", "festival", "bridge",  "library", "airport", "station",
                                          "factory", "theater", "school",  "market",  "harbor",  "tower",   "park",
                                          "hotel",   "garden",  "temple",  "shrine",  "studio",  "arena"};
const std::vector<std::string> kCities = {"tokyo", "osaka", "kyoto", "nagoya", "sapporo", "fukuoka", "sendai", "kobe"};
const std::vector<std::string> kActorVerbs = {"announced", "unveiled", "proposed", "confirmed",
                                              "defended",  "launched", "revised",  "approved"};
const std::vector<std::string> kActorObjects = {"plan",    "budget",  "reform",   "policy",
                                                "merger",  "project", "strategy", "program"};
const std::vector<std::string> kTimes = {"monday", "tuesday", "wednesday", "thursday", "friday", "weekend"};
const std::vector<std::string> kVenueVerbs = {"reopen", "expand", "close", "open", "relocate", "renovate"};
const std::vector<std::string> kSpeechVerbs = {"said", "stressed", "explained", "noted", "argued"};
const std::vector<std::string> kQualities = {"necessary", "urgent", "popular", "costly", "controversial", "overdue"};
const std::vector<std::string> kVenueOutcomes = {"attract", "welcome", "draw", "host"};
const std::vector<std::string> kCounts = {"thousands", "millions", "hundreds", "dozens"};
const std::vector<std::string> kWeather = {"sunny", "rainy", "cloudy", "windy", "cold", "humid"};
const std::vector<std::string> kOutlets = {"newspaper", "broadcaster", "magazine", "website"};
const std::vector<std::string> kSyllables = {"ka", "ki", "ku", "ke", "ko", "sa", "shi", "su", "se", "so", "ta", "chi",
                                             "tsu", "te", "to", "na", "ni", "nu", "ne", "no", "ha", "hi", "fu", "he",
                                             "ho", "ma", "mi", "mu", "me", "mo", "ra", "ri", "ru", "re", "ro"};

class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : rng_(seed) {}
  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  const std::string& pick(const std::vector<std::string>& v) { return v[below(v.size())]; }

 private:
  std::mt19937_64 rng_;
};

bool in_lexicon(const std::string& t) {
  static const std::unordered_set<std::string> all = [] {
    std::unordered_set<std::string> s;
    for (const auto* v : {&kActors, &kVenues, &kCities, &kActorVerbs, &kActorObjects, &kTimes, &kVenueVerbs,
                          &kSpeechVerbs, &kQualities, &kVenueOutcomes, &kCounts, &kWeather, &kOutlets})
      s.insert(v->begin(), v->end());
    return s;
  }();
  return all.count(t) != 0;
}

std::string fresh_name(SynthRng& rng) {
  for (;;) {
    std::string name;
    for (int k = 0; k < 4; ++k) name += rng.pick(kSyllables);
    if (!in_lexicon(name)) return name;
  }
}

Tokens distractor(SynthRng& rng) {
  switch (rng.below(3)) {
    case 0: return {"meanwhile", "the", "weather", "in", rng.pick(kCities), "was", rng.pick(kWeather), "."};
    case 1: return {"officials", "declined", "to", "comment", "further", "."};
    default: return {"the", "story", "was", "first", "reported", "by", "a", "local", rng.pick(kOutlets), "."};
  }
}

void append(Tokens& dst, const Tokens& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

std::vector<NewsPair> synth_generate(const SynthConfig& config) {
  if (config.n == 0) throw std::invalid_argument("synth_generate: n must be at least 1");
  SynthRng rng(config.seed);
  std::vector<NewsPair> out;
  out.reserve(config.n);
  for (std::size_t k = 0; k < config.n; ++k) {
    const bool parallel = rng.unit() < config.structure_mix;
    const std::string actor = rng.unit() < config.oov_rate ? fresh_name(rng) : rng.pick(kActors);
    const std::string venue = rng.unit() < config.oov_rate ? fresh_name(rng) : rng.pick(kVenues);

    Tokens s1 = {actor, rng.pick(kActorVerbs), "a", "new", rng.pick(kActorObjects), "on", rng.pick(kTimes), "."};
    Tokens s2 = {"the", venue, "in", rng.pick(kCities), "will", rng.pick(kVenueVerbs), "next", "year", "."};
    Tokens s3;
    if (parallel) {
      s3 = {actor, "also", rng.pick(kSpeechVerbs), "that", "the", rng.pick(kActorObjects), "was", rng.pick(kQualities),
            "."};
    } else {
      s3 = {"the", venue, "is", "expected", "to", rng.pick(kVenueOutcomes), rng.pick(kCounts), "of", "visitors", "."};
    }

    NewsPair p;
    p.id = "synth-" + std::to_string(config.seed) + "-" + std::to_string(k);
    if (rng.below(2)) append(p.article, distractor(rng));
    append(p.article, s1);
    for (std::size_t d = 1 + rng.below(2); d > 0; --d) append(p.article, distractor(rng));
    append(p.article, s2);
    for (std::size_t d = 1 + rng.below(2); d > 0; --d) append(p.article, distractor(rng));
    append(p.article, s3);
    for (std::size_t d = rng.below(2); d > 0; --d) append(p.article, distractor(rng));
    p.summary = {std::move(s1), std::move(s2), std::move(s3)};
    p.label = parallel ? StructureLabel::Parallel : StructureLabel::Sequence;
    p.category = "synthetic";
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace b3s
