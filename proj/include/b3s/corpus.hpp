#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace b3s {

using Tokens = std::vector<std::string>;

/// Annotation taxonomy of three-sentence summaries.
enum class StructureLabel : std::uint8_t { Parallel, ParallelEnumeration, Sequence, SequenceSegmented };

/// The two classes the models distinguish.
enum class Structure : std::uint8_t { Parallel = 0, Sequence = 1 };

std::string_view to_string(StructureLabel label);
std::string_view to_string(Structure s);
/// Accepts "parallel", "parallel_enum", "sequence", "sequence_seg".
StructureLabel parse_label(std::string_view text);
Structure parse_structure(std::string_view text);
constexpr Structure project(StructureLabel l) {
  return (l == StructureLabel::Parallel || l == StructureLabel::ParallelEnumeration) ? Structure::Parallel
                                                                                    : Structure::Sequence;
}
constexpr StructureLabel to_label(Structure s) {
  return s == Structure::Parallel ? StructureLabel::Parallel : StructureLabel::Sequence;
}

struct NewsPair {
  std::string id;
  Tokens article;
  std::array<Tokens, 3> summary;
  std::optional<StructureLabel> label;
  std::optional<std::string> category;

  std::size_t summary_length() const { return summary[0].size() + summary[1].size() + summary[2].size(); }
  friend bool operator==(const NewsPair&, const NewsPair&) = default;
};

Tokens tokenize(std::string_view text);
std::string join(const Tokens& tokens);

class CorpusError : public std::runtime_error {
 public:
  CorpusError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct LineError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<NewsPair> pairs;
  std::vector<LineError> errors;
};

/// Parses one JSONL record; throws std::invalid_argument on schema violations.
NewsPair parse_pair(std::string_view json_line);
std::string serialize_pair(const NewsPair& pair);

/// Reads a JSONL corpus. In strict mode the first malformed line throws
/// CorpusError; otherwise malformed lines are collected with line numbers.
LoadResult load_jsonl(const std::string& path, bool strict = false);
void write_jsonl(const std::string& path, const std::vector<NewsPair>& pairs);

struct PreprocessConfig {
  std::size_t max_src_len = 400;
  std::size_t min_summary_len = 70;  // over all three sentences
};

struct PreprocessReport {
  std::size_t input = 0;
  std::size_t truncated = 0;
  std::size_t dropped = 0;
  std::size_t kept = 0;
};

struct PreprocessResult {
  std::vector<NewsPair> pairs;
  PreprocessReport report;
};

PreprocessResult preprocess(const std::vector<NewsPair>& pairs, const PreprocessConfig& config);

/// Token <-> id bijection with fixed special ids.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kStart = 2;
  static constexpr std::size_t kStop = 3;
  static constexpr std::size_t kSentenceBreak = 4;
  static constexpr std::size_t kNumSpecials = 5;
  static const std::array<std::string, kNumSpecials>& specials();

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& content_tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  /// Unknown tokens map to kUnk.
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  std::vector<std::size_t> encode(const Tokens& tokens) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct VocabMode {
  enum class Kind { Cap, MinCount } kind = Kind::Cap;
  std::size_t value = 50000;

  static VocabMode cap(std::size_t n) { return {Kind::Cap, n}; }
  static VocabMode min_count(std::size_t k) { return {Kind::MinCount, k}; }
};

enum class VocabSource { ArticleAndSummary, SummaryOnly, ArticleOnly };

/// Frequency-ranked vocabulary; ties keep first-occurrence order. Specials
/// are always present and never count against the cap.
Vocabulary build_vocab(const std::vector<NewsPair>& pairs, VocabMode mode,
                       VocabSource source = VocabSource::ArticleAndSummary);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
};

struct Splits {
  std::vector<NewsPair> train;
  std::vector<NewsPair> dev;
  std::vector<NewsPair> test;
};

/// Dev/test each get 1,200 / 214,120 of the corpus (at least one pair when
/// the corpus has three or more); train takes the rest.
SplitSizes default_split_sizes(std::size_t corpus_size);
/// Seeded shuffle, then consecutive slices of the requested sizes.
Splits split(const std::vector<NewsPair>& pairs, SplitSizes sizes, std::uint64_t seed);
Splits split_by_ids(const std::vector<NewsPair>& pairs, const std::vector<std::string>& train_ids,
                    const std::vector<std::string>& dev_ids, const std::vector<std::string>& test_ids);

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n = 100;
  double oov_rate = 0.0;
  double structure_mix = 0.8;  // fraction labelled parallel
};

/// Template-grammar news pairs with gold structure labels. Sentence 1 names
/// an actor, sentence 2 introduces a new venue; a parallel summary's third
/// sentence returns to the actor, a sequence summary's to the venue.
/// Entity slots are replaced by fresh invented names at `oov_rate`.
std::vector<NewsPair> synth_generate(const SynthConfig& config);

}  // namespace b3s
