#include "b3s/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace b3s::eval {

using nlohmann::json;

RougeScore RougeScore::from_counts(std::size_t overlap, std::size_t sys_total, std::size_t ref_total) {
  RougeScore s;
  s.precision = sys_total ? static_cast<double>(overlap) / static_cast<double>(sys_total) : 0.0;
  s.recall = ref_total ? static_cast<double>(overlap) / static_cast<double>(ref_total) : 0.0;
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

namespace {

std::unordered_map<std::string, std::size_t> ngram_counts(const Tokens& toks, std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += toks[i + k];
    }
    ++counts[key];
  }
  return counts;
}

Tokens concat(const Sentences& s) {
  Tokens out;
  for (const auto& t : s) out.insert(out.end(), t.begin(), t.end());
  return out;
}

RougeTriple triple(const Tokens& sys, const Tokens& ref) {
  return {rouge_n(sys, ref, 1).f1, rouge_n(sys, ref, 2).f1, rouge_l(sys, ref).f1};
}

void add_into(RougeTriple& acc, const RougeTriple& x) {
  acc.r1 += x.r1;
  acc.r2 += x.r2;
  acc.rl += x.rl;
}

RougeTriple divided(RougeTriple t, double d) {
  if (d > 0) {
    t.r1 /= d;
    t.r2 /= d;
    t.rl /= d;
  }
  return t;
}

json triple_json(const RougeTriple& t) { return {{"r1", t.r1}, {"r2", t.r2}, {"rl", t.rl}}; }

std::string pct(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * x;
  return os.str();
}

}  // namespace

RougeScore rouge_n(const Tokens& sys, const Tokens& ref, std::size_t n) {
  if (n == 0) throw std::invalid_argument("rouge_n: n must be at least 1");
  const auto sys_counts = ngram_counts(sys, n);
  const auto ref_counts = ngram_counts(ref, n);
  std::size_t overlap = 0;
  for (const auto& [gram, c] : sys_counts) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) overlap += std::min(c, it->second);
  }
  const std::size_t sys_total = sys.size() >= n ? sys.size() - n + 1 : 0;
  const std::size_t ref_total = ref.size() >= n ? ref.size() - n + 1 : 0;
  return RougeScore::from_counts(overlap, sys_total, ref_total);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(const Tokens& sys, const Tokens& ref) {
  return RougeScore::from_counts(lcs_length(sys, ref), sys.size(), ref.size());
}

std::string AlignmentPattern::pattern() const {
  std::string s;
  for (int k : oracle_index) s += static_cast<char>('1' + k);
  return s;
}

AlignmentPattern pairwise_align(std::span<const Tokens> sys, std::span<const Tokens> ref) {
  if (sys.size() != 3 || ref.size() != 3)
    throw std::invalid_argument("pairwise_align: expected 3 system and 3 oracle sentences, got " +
                                std::to_string(sys.size()) + " and " + std::to_string(ref.size()));
  double table[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) table[i][j] = rouge_l(sys[i], ref[j]).f1;

  std::array<int, 3> perm = {0, 1, 2};
  AlignmentPattern best;
  bool first = true;
  do {
    const double mean = (table[0][perm[0]] + table[1][perm[1]] + table[2][perm[2]]) / 3.0;
    if (first || mean > best.mean_rouge_l) {
      best.oracle_index = perm;
      best.mean_rouge_l = mean;
      for (int k = 0; k < 3; ++k) best.slot_rouge_l[k] = table[k][perm[k]];
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

DocumentScores score_document(const Sentences& sys, const Sentences& ref) {
  DocumentScores d;
  d.overall = triple(concat(sys), concat(ref));
  d.alignment = pairwise_align(sys, ref);
  for (int k = 0; k < 3; ++k) d.per_slot[k] = triple(sys[k], ref[d.alignment.oracle_index[k]]);
  return d;
}

BreakdownReport breakdown_report(std::span<const DocumentResult> results) {
  BreakdownReport report;
  const char* names[] = {"all", "parallel", "sequence"};
  for (const char* name : names) {
    SubsetBreakdown sub;
    std::array<RougeTriple, 3> pos{};
    RougeTriple overall{};
    for (const auto& r : results) {
      if (std::string(name) == "parallel" && r.gold != Structure::Parallel) continue;
      if (std::string(name) == "sequence" && r.gold != Structure::Sequence) continue;
      ++sub.documents;
      add_into(overall, r.scores.overall);
      for (int k = 0; k < 3; ++k) add_into(pos[k], r.scores.per_slot[k]);
    }
    const auto n = static_cast<double>(sub.documents);
    sub.overall = divided(overall, n);
    RougeTriple avg{};
    for (int k = 0; k < 3; ++k) {
      sub.position[k] = divided(pos[k], n);
      add_into(avg, sub.position[k]);
    }
    sub.position_average = divided(avg, 3.0);
    report.subsets[name] = sub;
  }

  std::array<int, 3> perm = {0, 1, 2};
  do {
    PatternRow row;
    for (int k : perm) row.pattern += static_cast<char>('1' + k);
    std::array<RougeTriple, 3> sums{};
    for (const auto& r : results) {
      if (r.scores.alignment.oracle_index != perm) continue;
      ++row.count;
      for (int k = 0; k < 3; ++k) add_into(sums[k], r.scores.per_slot[k]);
    }
    row.percent = results.empty() ? 0.0 : 100.0 * static_cast<double>(row.count) / static_cast<double>(results.size());
    for (int k = 0; k < 3; ++k) row.slot_means[k] = divided(sums[k], static_cast<double>(row.count));
    report.patterns.push_back(row);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return report;
}

std::string BreakdownReport::to_tsv() const {
  std::ostringstream os;
  os << "table\tsubset\trow\tR-1\tR-2\tR-L\n";
  for (const auto& [name, sub] : subsets) {
    os << "summary\t" << name << "\tall\t" << pct(sub.overall.r1) << '\t' << pct(sub.overall.r2) << '\t'
       << pct(sub.overall.rl) << '\n';
    const char* rows[] = {"1st", "2nd", "3rd"};
    for (int k = 0; k < 3; ++k)
      os << "position\t" << name << '\t' << rows[k] << '\t' << pct(sub.position[k].r1) << '\t'
         << pct(sub.position[k].r2) << '\t' << pct(sub.position[k].rl) << '\n';
    os << "position\t" << name << "\tave\t" << pct(sub.position_average.r1) << '\t' << pct(sub.position_average.r2)
       << '\t' << pct(sub.position_average.rl) << '\n';
  }
  os << "\npattern\tcount\tpercent\t1st R-1\t1st R-2\t1st R-L\t2nd R-1\t2nd R-2\t2nd R-L\t3rd R-1\t3rd R-2\t3rd R-L\n";
  for (const auto& row : patterns) {
    os << row.pattern << '\t' << row.count << '\t' << std::fixed << std::setprecision(1) << row.percent;
    for (const auto& t : row.slot_means) os << '\t' << pct(t.r1) << '\t' << pct(t.r2) << '\t' << pct(t.rl);
    os << '\n';
  }
  return os.str();
}

std::string BreakdownReport::to_text() const {
  std::ostringstream os;
  os << std::left;
  os << "Whole-summary ROUGE F1 (x100)\n";
  os << std::setw(10) << "subset" << std::setw(6) << "docs" << std::setw(8) << "R-1" << std::setw(8) << "R-2"
     << std::setw(8) << "R-L" << '\n';
  for (const char* name : {"all", "parallel", "sequence"}) {
    const auto& sub = subsets.at(name);
    os << std::setw(10) << name << std::setw(6) << sub.documents << std::setw(8) << pct(sub.overall.r1)
       << std::setw(8) << pct(sub.overall.r2) << std::setw(8) << pct(sub.overall.rl) << '\n';
  }
  os << "\nPer-sentence breakdown (system sentence vs aligned oracle sentence)\n";
  for (const char* name : {"all", "parallel", "sequence"}) {
    const auto& sub = subsets.at(name);
    os << "[" << name << "]\n";
    const char* rows[] = {"1st", "2nd", "3rd"};
    for (int k = 0; k < 3; ++k)
      os << "  " << std::setw(5) << rows[k] << std::setw(8) << pct(sub.position[k].r1) << std::setw(8)
         << pct(sub.position[k].r2) << std::setw(8) << pct(sub.position[k].rl) << '\n';
    os << "  " << std::setw(5) << "ave" << std::setw(8) << pct(sub.position_average.r1) << std::setw(8)
       << pct(sub.position_average.r2) << std::setw(8) << pct(sub.position_average.rl) << '\n';
  }
  os << "\nAlignment patterns\n";
  os << std::setw(8) << "pair" << std::setw(7) << "count" << std::setw(9) << "share"
     << "1st R-1/R-2/R-L        2nd R-1/R-2/R-L        3rd R-1/R-2/R-L\n";
  for (const auto& row : patterns) {
    std::ostringstream share;
    share << '(' << std::fixed << std::setprecision(1) << row.percent << "%)";
    os << std::setw(8) << row.pattern << std::setw(7) << row.count << std::setw(9) << share.str();
    for (const auto& t : row.slot_means) {
      std::ostringstream cell;
      cell << pct(t.r1) << '/' << pct(t.r2) << '/' << pct(t.rl);
      os << std::setw(23) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

std::string BreakdownReport::to_json() const {
  json j;
  for (const auto& [name, sub] : subsets) {
    json s;
    s["documents"] = sub.documents;
    s["overall"] = triple_json(sub.overall);
    s["positions"] = json::array({triple_json(sub.position[0]), triple_json(sub.position[1]),
                                  triple_json(sub.position[2])});
    s["position_average"] = triple_json(sub.position_average);
    j["subsets"][name] = s;
  }
  j["patterns"] = json::array();
  for (const auto& row : patterns) {
    j["patterns"].push_back({{"pattern", row.pattern},
                             {"count", row.count},
                             {"percent", row.percent},
                             {"slots", json::array({triple_json(row.slot_means[0]), triple_json(row.slot_means[1]),
                                                    triple_json(row.slot_means[2])})}});
  }
  return j.dump(2);
}

ClassificationReport classification_report(std::span<const Structure> preds, std::span<const Structure> golds) {
  if (preds.size() != golds.size())
    throw std::invalid_argument("classification_report: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(golds.size()) + " gold labels");
  ClassificationReport r;
  for (std::size_t i = 0; i < preds.size(); ++i)
    ++r.confusion[static_cast<std::size_t>(golds[i])][static_cast<std::size_t>(preds[i])];

  auto metrics = [&](std::size_t c) {
    ClassMetrics m;
    const std::size_t tp = r.confusion[c][c];
    const std::size_t predicted = r.confusion[0][c] + r.confusion[1][c];
    m.support = r.confusion[c][0] + r.confusion[c][1];
    m.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    m.recall = m.support ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
  };
  r.parallel = metrics(0);
  r.sequence = metrics(1);
  r.accuracy = preds.empty() ? 0.0
                             : static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) /
                                   static_cast<double>(preds.size());
  r.macro_f1 = (r.parallel.f1 + r.sequence.f1) / 2.0;
  return r;
}

std::string ClassificationReport::to_json() const {
  auto m = [](const ClassMetrics& c) {
    return json{{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
  };
  json j{{"parallel", m(parallel)},
         {"sequence", m(sequence)},
         {"accuracy", accuracy},
         {"macro_f1", macro_f1},
         {"confusion", {{confusion[0][0], confusion[0][1]}, {confusion[1][0], confusion[1][1]}}}};
  return j.dump();
}

std::size_t AnnotationTable::total(StructureLabel label) const {
  std::size_t t = 0;
  for (auto c : counts[static_cast<std::size_t>(label)]) t += c;
  return t;
}

std::size_t AnnotationTable::split_total(std::size_t split) const {
  std::size_t t = 0;
  for (const auto& row : counts) t += row[split];
  return t;
}

namespace {

constexpr StructureLabel kAllLabels[] = {StructureLabel::Parallel, StructureLabel::ParallelEnumeration,
                                         StructureLabel::Sequence, StructureLabel::SequenceSegmented};

}  // namespace

std::string AnnotationTable::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(16) << "label";
  for (const auto& s : splits) os << std::right << std::setw(8) << s;
  os << std::right << std::setw(8) << "total" << '\n';
  for (auto label : kAllLabels) {
    os << std::left << std::setw(16) << to_string(label);
    for (std::size_t k = 0; k < splits.size(); ++k) os << std::right << std::setw(8) << count(label, k);
    os << std::right << std::setw(8) << total(label) << '\n';
  }
  return os.str();
}

std::string AnnotationTable::to_json() const {
  json j;
  j["splits"] = splits;
  for (auto label : kAllLabels) {
    json row;
    for (std::size_t k = 0; k < splits.size(); ++k) row[splits[k]] = count(label, k);
    row["total"] = total(label);
    j["counts"][std::string(to_string(label))] = row;
  }
  return j.dump();
}

AnnotationTable annotation_stats(std::span<const LabeledSplit> splits) {
  AnnotationTable t;
  for (const auto& s : splits) t.splits.push_back(s.name);
  for (auto& row : t.counts) row.assign(splits.size(), 0);
  for (std::size_t k = 0; k < splits.size(); ++k)
    for (auto label : splits[k].labels) ++t.counts[static_cast<std::size_t>(label)][k];
  return t;
}

LabeledSplit labeled_split(const std::string& name, const std::vector<NewsPair>& pairs) {
  LabeledSplit s;
  s.name = name;
  for (const auto& p : pairs) {
    if (!p.label) throw std::invalid_argument("annotation_stats: pair '" + p.id + "' has no label");
    s.labels.push_back(*p.label);
  }
  return s;
}

}  // namespace b3s::eval
