#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "b3s/corpus.hpp"

namespace b3s::eval {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static RougeScore from_counts(std::size_t overlap, std::size_t sys_total, std::size_t ref_total);
  friend bool operator==(const RougeScore&, const RougeScore&) = default;
};

/// Clipped n-gram overlap. An empty n-gram set on either side scores 0.
RougeScore rouge_n(const Tokens& sys, const Tokens& ref, std::size_t n);
std::size_t lcs_length(const Tokens& a, const Tokens& b);
RougeScore rouge_l(const Tokens& sys, const Tokens& ref);

using Sentences = std::array<Tokens, 3>;

/// No-duplicate assignment of system sentences to oracle sentences.
/// oracle_index[k] is the (0-based) oracle sentence matched to system
/// sentence k; the pattern string writes these 1-based, e.g. "213".
struct AlignmentPattern {
  std::array<int, 3> oracle_index = {0, 1, 2};
  std::array<double, 3> slot_rouge_l = {0, 0, 0};  // ROUGE-L F1 per system slot
  double mean_rouge_l = 0.0;

  std::string pattern() const;
  friend bool operator==(const AlignmentPattern&, const AlignmentPattern&) = default;
};

/// Exhaustive search over the six bijections maximizing mean ROUGE-L F1.
/// Ties go to the lexicographically smallest pattern.
AlignmentPattern pairwise_align(std::span<const Tokens> sys, std::span<const Tokens> ref);

/// F1 of ROUGE-1, ROUGE-2 and ROUGE-L for one comparison.
struct RougeTriple {
  double r1 = 0.0;
  double r2 = 0.0;
  double rl = 0.0;
};

struct DocumentScores {
  RougeTriple overall;                 // concatenated three sentences
  AlignmentPattern alignment;
  std::array<RougeTriple, 3> per_slot;  // system sentence k vs its aligned oracle sentence
};

DocumentScores score_document(const Sentences& sys, const Sentences& ref);

struct DocumentResult {
  std::string id;
  Structure gold = Structure::Parallel;
  DocumentScores scores;
};

struct PatternRow {
  std::string pattern;
  std::size_t count = 0;
  double percent = 0.0;
  std::array<RougeTriple, 3> slot_means;
};

struct SubsetBreakdown {
  std::size_t documents = 0;
  RougeTriple overall;                 // whole-summary means
  std::array<RougeTriple, 3> position;  // 1st, 2nd, 3rd
  RougeTriple position_average;        // mean of the three positions
};

struct BreakdownReport {
  std::map<std::string, SubsetBreakdown> subsets;  // "all", "parallel", "sequence"
  std::vector<PatternRow> patterns;                // "123".."321", all six always present

  std::string to_tsv() const;
  std::string to_text() const;
  std::string to_json() const;
};

BreakdownReport breakdown_report(std::span<const DocumentResult> results);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ClassificationReport {
  ClassMetrics parallel;
  ClassMetrics sequence;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<std::array<std::size_t, 2>, 2> confusion{};  // [gold][pred]

  const ClassMetrics& of(Structure s) const { return s == Structure::Parallel ? parallel : sequence; }
  std::string to_json() const;
};

ClassificationReport classification_report(std::span<const Structure> preds, std::span<const Structure> golds);

struct AnnotationTable {
  std::vector<std::string> splits;
  /// counts[label][split index]
  std::array<std::vector<std::size_t>, 4> counts;

  std::size_t count(StructureLabel label, std::size_t split) const {
    return counts[static_cast<std::size_t>(label)][split];
  }
  std::size_t total(StructureLabel label) const;
  std::size_t split_total(std::size_t split) const;
  std::string to_text() const;
  std::string to_json() const;
};

struct LabeledSplit {
  std::string name;
  std::vector<StructureLabel> labels;
};

AnnotationTable annotation_stats(std::span<const LabeledSplit> splits);
/// Every pair must carry a label.
LabeledSplit labeled_split(const std::string& name, const std::vector<NewsPair>& pairs);

}  // namespace b3s::eval
